//! Security Manager Protocol PDU codec.

use super::profile::PairingMethod;
use super::ProtocolError;
use crate::crypto::Key128;

pub mod code {
    pub const PAIRING_REQUEST: u8 = 0x01;
    pub const PAIRING_RESPONSE: u8 = 0x02;
    pub const PAIRING_CONFIRM: u8 = 0x03;
    pub const PAIRING_RANDOM: u8 = 0x04;
    pub const PAIRING_FAILED: u8 = 0x05;
    pub const ENCRYPTION_INFORMATION: u8 = 0x06;
}

/// Reason carried by a pairing-failed PDU.
pub const REASON_PAIRING_NOT_SUPPORTED: u8 = 0x05;
pub const REASON_CONFIRM_MISMATCH: u8 = 0x04;

const BONDING: u8 = 0x01;
const ENCRYPTION: u8 = 0x02;

/// Pairing feature set exchanged in phase one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairingFeatures {
    pub method: PairingMethod,
    pub bonding: bool,
    /// Sender keeps the link encrypted after pairing.
    pub encryption: bool,
}

impl PairingFeatures {
    fn encode(&self) -> [u8; 2] {
        let mut flags = 0;
        if self.bonding {
            flags |= BONDING;
        }
        if self.encryption {
            flags |= ENCRYPTION;
        }
        [self.method.code(), flags]
    }

    fn decode(bytes: &[u8]) -> Option<Self> {
        let [method, flags] = bytes.try_into().ok()?;
        if flags & !(BONDING | ENCRYPTION) != 0 {
            return None;
        }
        Some(Self {
            method: PairingMethod::from_code(method)?,
            bonding: flags & BONDING != 0,
            encryption: flags & ENCRYPTION != 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmpPdu {
    PairingRequest(PairingFeatures),
    PairingResponse(PairingFeatures),
    PairingConfirm([u8; 16]),
    PairingRandom([u8; 16]),
    PairingFailed(u8),
    /// Long-term key; only ever sent over an encrypted link.
    EncryptionInformation(Key128),
}

impl SmpPdu {
    pub fn code(&self) -> u8 {
        match self {
            SmpPdu::PairingRequest(_) => code::PAIRING_REQUEST,
            SmpPdu::PairingResponse(_) => code::PAIRING_RESPONSE,
            SmpPdu::PairingConfirm(_) => code::PAIRING_CONFIRM,
            SmpPdu::PairingRandom(_) => code::PAIRING_RANDOM,
            SmpPdu::PairingFailed(_) => code::PAIRING_FAILED,
            SmpPdu::EncryptionInformation(_) => code::ENCRYPTION_INFORMATION,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SmpPdu::PairingRequest(_) => "pairing_request",
            SmpPdu::PairingResponse(_) => "pairing_response",
            SmpPdu::PairingConfirm(_) => "pairing_confirm",
            SmpPdu::PairingRandom(_) => "pairing_random",
            SmpPdu::PairingFailed(_) => "pairing_failed",
            SmpPdu::EncryptionInformation(_) => "encryption_information",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.code()];
        match self {
            SmpPdu::PairingRequest(f) | SmpPdu::PairingResponse(f) => out.extend_from_slice(&f.encode()),
            SmpPdu::PairingConfirm(v) | SmpPdu::PairingRandom(v) | SmpPdu::EncryptionInformation(v) => {
                out.extend_from_slice(v)
            }
            SmpPdu::PairingFailed(reason) => out.push(*reason),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let err = || ProtocolError::Codec { what: "SMP" };
        let (&op, body) = bytes.split_first().ok_or_else(err)?;
        let block = || -> Result<[u8; 16], ProtocolError> { body.try_into().map_err(|_| err()) };
        match op {
            code::PAIRING_REQUEST => PairingFeatures::decode(body).map(SmpPdu::PairingRequest).ok_or_else(err),
            code::PAIRING_RESPONSE => PairingFeatures::decode(body).map(SmpPdu::PairingResponse).ok_or_else(err),
            code::PAIRING_CONFIRM => Ok(SmpPdu::PairingConfirm(block()?)),
            code::PAIRING_RANDOM => Ok(SmpPdu::PairingRandom(block()?)),
            code::PAIRING_FAILED => match body {
                [reason] => Ok(SmpPdu::PairingFailed(*reason)),
                _ => Err(err()),
            },
            code::ENCRYPTION_INFORMATION => Ok(SmpPdu::EncryptionInformation(block()?)),
            _ => Err(err()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let features = PairingFeatures { method: PairingMethod::PasskeyEntry, bonding: true, encryption: false };
        for pdu in [
            SmpPdu::PairingRequest(features),
            SmpPdu::PairingResponse(PairingFeatures { encryption: true, ..features }),
            SmpPdu::PairingConfirm([9; 16]),
            SmpPdu::PairingRandom([8; 16]),
            SmpPdu::PairingFailed(REASON_CONFIRM_MISMATCH),
            SmpPdu::EncryptionInformation([7; 16]),
        ] {
            assert_eq!(SmpPdu::decode(&pdu.encode()), Ok(pdu));
        }
    }

    #[test]
    fn malformed() {
        assert!(SmpPdu::decode(&[]).is_err());
        assert!(SmpPdu::decode(&[code::PAIRING_CONFIRM, 1, 2]).is_err());
        assert!(SmpPdu::decode(&[code::PAIRING_REQUEST, 9, 0]).is_err());
        assert!(SmpPdu::decode(&[code::PAIRING_REQUEST, 0, 0x80]).is_err());
    }
}

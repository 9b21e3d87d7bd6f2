//! Link-layer control PDUs. These are never encrypted.

use super::ProtocolError;

pub mod opcode {
    pub const ENC_REQ: u8 = 0x03;
    pub const ENC_RSP: u8 = 0x04;
    pub const START_ENC: u8 = 0x05;
    pub const PAUSE_ENC: u8 = 0x0A;
    pub const REJECT: u8 = 0x0D;
}

/// Reason sent when the peer has no key for the requested encryption.
pub const REASON_PIN_OR_KEY_MISSING: u8 = 0x06;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlPdu {
    /// Central's session key diversifier.
    EncReq {
        skd: [u8; 8],
    },
    /// Peripheral's session key diversifier.
    EncRsp {
        skd: [u8; 8],
    },
    /// Every later PDU on the link is encrypted.
    StartEnc,
    /// Every later PDU on the link is cleartext.
    PauseEnc,
    Reject {
        reason: u8,
    },
}

impl ControlPdu {
    pub fn name(&self) -> &'static str {
        match self {
            ControlPdu::EncReq { .. } => "enc_req",
            ControlPdu::EncRsp { .. } => "enc_rsp",
            ControlPdu::StartEnc => "start_enc",
            ControlPdu::PauseEnc => "pause_enc",
            ControlPdu::Reject { .. } => "reject",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            ControlPdu::EncReq { skd } => [&[opcode::ENC_REQ][..], skd].concat(),
            ControlPdu::EncRsp { skd } => [&[opcode::ENC_RSP][..], skd].concat(),
            ControlPdu::StartEnc => vec![opcode::START_ENC],
            ControlPdu::PauseEnc => vec![opcode::PAUSE_ENC],
            ControlPdu::Reject { reason } => vec![opcode::REJECT, *reason],
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let err = || ProtocolError::Codec { what: "control" };
        let (&op, body) = bytes.split_first().ok_or_else(err)?;
        match (op, body) {
            (opcode::ENC_REQ, _) => Ok(ControlPdu::EncReq { skd: body.try_into().map_err(|_| err())? }),
            (opcode::ENC_RSP, _) => Ok(ControlPdu::EncRsp { skd: body.try_into().map_err(|_| err())? }),
            (opcode::START_ENC, []) => Ok(ControlPdu::StartEnc),
            (opcode::PAUSE_ENC, []) => Ok(ControlPdu::PauseEnc),
            (opcode::REJECT, [reason]) => Ok(ControlPdu::Reject { reason: *reason }),
            _ => Err(err()),
        }
    }
}

//! Over-the-air link-layer PDUs.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::ProtocolError;

/// Access address shared by every advertising-channel PDU.
pub const ADVERTISING_ACCESS_ADDRESS: u32 = 0x8E89_BED6;

/// Number of data channels; the hop sequence is computed modulo this value.
pub const DATA_CHANNELS: u8 = 37;

pub const ADVERTISING_CHANNELS: [u8; 3] = [37, 38, 39];

/// First byte of a data-channel payload, identifying what the rest carries.
/// It stays in cleartext when the link is encrypted.
pub mod header {
    pub const SIGNALING: u8 = 0x01;
    pub const ATT: u8 = 0x04;
    pub const CONTROL: u8 = 0x05;
    pub const SMP: u8 = 0x06;
}

pub fn is_advertising_channel(channel: u8) -> bool {
    (37..=39).contains(&channel)
}

pub fn is_data_channel(channel: u8) -> bool {
    channel < DATA_CHANNELS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PduType {
    AdvInd,
    ConnectReq,
    Smp,
    Data,
    L2capEchoReq,
    L2capEchoRsp,
    Terminate,
}

impl PduType {
    pub const ALL: [PduType; 7] = [
        PduType::AdvInd,
        PduType::ConnectReq,
        PduType::Smp,
        PduType::Data,
        PduType::L2capEchoReq,
        PduType::L2capEchoRsp,
        PduType::Terminate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PduType::AdvInd => "adv_ind",
            PduType::ConnectReq => "connect_req",
            PduType::Smp => "smp",
            PduType::Data => "data",
            PduType::L2capEchoReq => "l2cap_echo_req",
            PduType::L2capEchoRsp => "l2cap_echo_rsp",
            PduType::Terminate => "terminate",
        }
    }

    pub fn parse(text: &str) -> Option<PduType> {
        PduType::ALL.into_iter().find(|t| t.as_str() == text)
    }

    /// Advertising-channel types; everything else travels on data channels.
    pub fn is_advertising(self) -> bool {
        matches!(self, PduType::AdvInd | PduType::ConnectReq)
    }
}

impl fmt::Display for PduType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PduMeta {
    pub timestamp_us: u64,
    pub tx_power_dbm: i8,
    /// Transmitting radio's current address.
    pub sender: [u8; 6],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkLayerPdu {
    pub channel: u8,
    pub access_address: u32,
    pub pdu_type: PduType,
    pub payload: Vec<u8>,
    pub meta: PduMeta,
}

impl LinkLayerPdu {
    /// Builds a PDU, refusing channel/type combinations that cannot occur on air.
    pub fn new(
        channel: u8,
        access_address: u32,
        pdu_type: PduType,
        payload: Vec<u8>,
        meta: PduMeta,
    ) -> Result<Self, ProtocolError> {
        check_channel(pdu_type, channel)?;
        Ok(Self { channel, access_address, pdu_type, payload, meta })
    }

    /// Same PDU retuned to another channel.
    pub fn on_channel(&self, channel: u8) -> Result<Self, ProtocolError> {
        check_channel(self.pdu_type, channel)?;
        Ok(Self { channel, ..self.clone() })
    }

    /// Header byte of a data-channel payload, if present.
    pub fn header(&self) -> Option<u8> {
        if self.pdu_type.is_advertising() {
            None
        } else {
            self.payload.first().copied()
        }
    }

    /// Payload bytes after the header byte.
    pub fn body(&self) -> &[u8] {
        if self.pdu_type.is_advertising() || self.payload.is_empty() {
            &self.payload
        } else {
            &self.payload[1..]
        }
    }
}

pub fn check_channel(pdu_type: PduType, channel: u8) -> Result<(), ProtocolError> {
    let legal = if pdu_type.is_advertising() { is_advertising_channel(channel) } else { is_data_channel(channel) };
    if legal {
        Ok(())
    } else {
        Err(ProtocolError::IllegalChannel { pdu_type, channel })
    }
}

/// Lowercase hex rendering of an address, most significant byte first.
pub fn address_hex(address: &[u8; 6]) -> String {
    hex::encode(address)
}

/// Decoded connect request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectRequest {
    pub initiator: [u8; 6],
    pub advertiser: [u8; 6],
    pub access_address: u32,
    pub interval_ms: u16,
    pub hop_increment: u8,
}

impl ConnectRequest {
    pub const LEN: usize = 6 + 6 + 4 + 2 + 1;

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.initiator);
        out.extend_from_slice(&self.advertiser);
        out.extend_from_slice(&self.access_address.to_le_bytes());
        out.extend_from_slice(&self.interval_ms.to_le_bytes());
        out.push(self.hop_increment);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != Self::LEN {
            return None;
        }
        let mut initiator = [0u8; 6];
        let mut advertiser = [0u8; 6];
        initiator.copy_from_slice(&bytes[0..6]);
        advertiser.copy_from_slice(&bytes[6..12]);
        Some(Self {
            initiator,
            advertiser,
            access_address: u32::from_le_bytes(bytes[12..16].try_into().ok()?),
            interval_ms: u16::from_le_bytes(bytes[16..18].try_into().ok()?),
            hop_increment: bytes[18],
        })
    }
}

/// Decoded advertising payload: the advertiser address and its 128-bit
/// service UUID list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Advertisement {
    pub address: [u8; 6],
    pub service_uuids: Vec<u128>,
}

const AD_FLAGS: u8 = 0x01;
const AD_UUID128_COMPLETE: u8 = 0x07;

impl Advertisement {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 3 + 2 + 16 * self.service_uuids.len());
        out.extend_from_slice(&self.address);
        // LE General Discoverable, BR/EDR not supported
        out.extend_from_slice(&[0x02, AD_FLAGS, 0x06]);
        if !self.service_uuids.is_empty() {
            out.push((1 + 16 * self.service_uuids.len()) as u8);
            out.push(AD_UUID128_COMPLETE);
            for uuid in &self.service_uuids {
                out.extend_from_slice(&uuid.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < 6 {
            return None;
        }
        let mut address = [0u8; 6];
        address.copy_from_slice(&bytes[..6]);
        let mut service_uuids = Vec::new();
        let mut rest = &bytes[6..];
        while !rest.is_empty() {
            let len = rest[0] as usize;
            if len == 0 || rest.len() < 1 + len {
                return None;
            }
            let ad_type = rest[1];
            let data = &rest[2..1 + len];
            if ad_type == AD_UUID128_COMPLETE {
                if !data.len().is_multiple_of(16) {
                    return None;
                }
                for chunk in data.chunks(16) {
                    service_uuids.push(u128::from_le_bytes(chunk.try_into().ok()?));
                }
            }
            rest = &rest[1 + len..];
        }
        Some(Self { address, service_uuids })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> PduMeta {
        PduMeta { timestamp_us: 0, tx_power_dbm: 0, sender: [0xC0, 1, 2, 3, 4, 5] }
    }

    #[test]
    fn channel_legality() {
        for channel in 0..=39u8 {
            for pdu_type in PduType::ALL {
                let ok = LinkLayerPdu::new(channel, 1, pdu_type, vec![], meta()).is_ok();
                let expected = if pdu_type.is_advertising() { channel >= 37 } else { channel <= 36 };
                assert_eq!(ok, expected, "{pdu_type} on {channel}");
            }
        }
        assert!(LinkLayerPdu::new(40, 1, PduType::Data, vec![], meta()).is_err());
    }

    #[test]
    fn pdu_type_names_roundtrip() {
        for t in PduType::ALL {
            assert_eq!(PduType::parse(t.as_str()), Some(t));
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.as_str()));
        }
    }

    #[test]
    fn advertisement_codec() {
        let adv = Advertisement { address: [0xC1, 2, 3, 4, 5, 6], service_uuids: vec![1, u128::MAX - 5] };
        assert_eq!(Advertisement::decode(&adv.encode()), Some(adv));
        let bare = Advertisement { address: [0xC1, 2, 3, 4, 5, 6], service_uuids: vec![] };
        assert_eq!(Advertisement::decode(&bare.encode()), Some(bare));
        assert_eq!(Advertisement::decode(&[1, 2, 3]), None);
    }

    #[test]
    fn connect_request_codec() {
        let req = ConnectRequest {
            initiator: [1; 6],
            advertiser: [2; 6],
            access_address: 0xDEAD_BEEF,
            interval_ms: 30,
            hop_increment: 7,
        };
        assert_eq!(ConnectRequest::decode(&req.encode()), Some(req));
        assert_eq!(ConnectRequest::decode(&[0; 5]), None);
    }
}

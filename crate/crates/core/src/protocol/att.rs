//! Attribute protocol PDU codec.

use std::collections::BTreeSet;

use super::gatt::{
    CharacteristicSummary, Freshness, GattRequest, Property, RequestKind, SecurityLevel, ServiceSummary,
};
use super::ProtocolError;
use crate::crypto::TAG_LEN;

pub mod opcode {
    pub const ERROR_RSP: u8 = 0x01;
    pub const DISCOVER_REQ: u8 = 0x10;
    pub const DISCOVER_RSP: u8 = 0x11;
    pub const READ_REQ: u8 = 0x0A;
    pub const READ_RSP: u8 = 0x0B;
    pub const WRITE_REQ: u8 = 0x12;
    pub const WRITE_RSP: u8 = 0x13;
    pub const NOTIFICATION: u8 = 0x1B;
}

const HAS_FRESHNESS: u8 = 0x01;
const HAS_TAG: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttPdu {
    ErrorRsp { request_opcode: u8, handle: u16, code: u8 },
    DiscoverReq,
    DiscoverRsp(Vec<ServiceSummary>),
    ReadReq { handle: u16 },
    ReadRsp { value: Vec<u8> },
    WriteReq { handle: u16, value: Vec<u8>, freshness: Option<Freshness>, tag: Option<[u8; TAG_LEN]> },
    WriteRsp,
    Notification { handle: u16, value: Vec<u8> },
}

fn codec_error() -> ProtocolError {
    ProtocolError::Codec { what: "ATT" }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.bytes.len() < n {
            return Err(codec_error());
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u128(&mut self) -> Result<u128, ProtocolError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("sixteen bytes")))
    }

    fn finish(self) -> Result<(), ProtocolError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(codec_error())
        }
    }
}

impl AttPdu {
    pub fn opcode(&self) -> u8 {
        match self {
            AttPdu::ErrorRsp { .. } => opcode::ERROR_RSP,
            AttPdu::DiscoverReq => opcode::DISCOVER_REQ,
            AttPdu::DiscoverRsp(_) => opcode::DISCOVER_RSP,
            AttPdu::ReadReq { .. } => opcode::READ_REQ,
            AttPdu::ReadRsp { .. } => opcode::READ_RSP,
            AttPdu::WriteReq { .. } => opcode::WRITE_REQ,
            AttPdu::WriteRsp => opcode::WRITE_RSP,
            AttPdu::Notification { .. } => opcode::NOTIFICATION,
        }
    }

    pub fn from_request(request: &GattRequest) -> Self {
        match request.kind {
            RequestKind::Read => AttPdu::ReadReq { handle: request.handle },
            RequestKind::Write => AttPdu::WriteReq {
                handle: request.handle,
                value: request.value.clone().unwrap_or_default(),
                freshness: request.freshness,
                tag: request.auth_tag,
            },
        }
    }

    /// The GATT request a read or write PDU carries.
    pub fn to_request(&self) -> Option<GattRequest> {
        match self {
            AttPdu::ReadReq { handle } => Some(GattRequest::read(*handle)),
            AttPdu::WriteReq { handle, value, freshness, tag } => Some(GattRequest {
                kind: RequestKind::Write,
                handle: *handle,
                value: Some(value.clone()),
                freshness: *freshness,
                auth_tag: *tag,
            }),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.opcode()];
        match self {
            AttPdu::ErrorRsp { request_opcode, handle, code } => {
                out.push(*request_opcode);
                out.extend_from_slice(&handle.to_le_bytes());
                out.push(*code);
            }
            AttPdu::DiscoverReq | AttPdu::WriteRsp => {}
            AttPdu::DiscoverRsp(services) => {
                out.push(services.len() as u8);
                for service in services {
                    out.extend_from_slice(&service.uuid.to_le_bytes());
                    out.push(service.characteristics.len() as u8);
                    for c in &service.characteristics {
                        out.extend_from_slice(&c.handle.to_le_bytes());
                        out.push(Property::bits_of(&c.properties));
                        out.push(c.security.code());
                        out.extend_from_slice(&c.uuid.to_le_bytes());
                    }
                }
            }
            AttPdu::ReadReq { handle } => out.extend_from_slice(&handle.to_le_bytes()),
            AttPdu::ReadRsp { value } => out.extend_from_slice(value),
            AttPdu::WriteReq { handle, value, freshness, tag } => {
                out.extend_from_slice(&handle.to_le_bytes());
                out.extend_from_slice(&(value.len() as u16).to_le_bytes());
                out.extend_from_slice(value);
                let flags =
                    if freshness.is_some() { HAS_FRESHNESS } else { 0 } | if tag.is_some() { HAS_TAG } else { 0 };
                out.push(flags);
                if let Some(f) = freshness {
                    out.extend_from_slice(&f.encode());
                }
                if let Some(t) = tag {
                    out.extend_from_slice(t);
                }
            }
            AttPdu::Notification { handle, value } => {
                out.extend_from_slice(&handle.to_le_bytes());
                out.extend_from_slice(value);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader { bytes };
        let op = r.u8()?;
        let pdu = match op {
            opcode::ERROR_RSP => AttPdu::ErrorRsp { request_opcode: r.u8()?, handle: r.u16()?, code: r.u8()? },
            opcode::DISCOVER_REQ => AttPdu::DiscoverReq,
            opcode::WRITE_RSP => AttPdu::WriteRsp,
            opcode::DISCOVER_RSP => {
                let service_count = r.u8()?;
                let mut services = Vec::with_capacity(service_count as usize);
                for _ in 0..service_count {
                    let uuid = r.u128()?;
                    let char_count = r.u8()?;
                    let mut characteristics = Vec::with_capacity(char_count as usize);
                    for _ in 0..char_count {
                        let handle = r.u16()?;
                        let properties: BTreeSet<Property> = Property::set_from_bits(r.u8()?);
                        let security = SecurityLevel::from_code(r.u8()?).ok_or_else(codec_error)?;
                        let uuid = r.u128()?;
                        characteristics.push(CharacteristicSummary { uuid, handle, properties, security });
                    }
                    services.push(ServiceSummary { uuid, characteristics });
                }
                AttPdu::DiscoverRsp(services)
            }
            opcode::READ_REQ => AttPdu::ReadReq { handle: r.u16()? },
            opcode::READ_RSP => {
                let value = r.take(r.bytes.len())?.to_vec();
                AttPdu::ReadRsp { value }
            }
            opcode::WRITE_REQ => {
                let handle = r.u16()?;
                let len = r.u16()? as usize;
                let value = r.take(len)?.to_vec();
                let flags = r.u8()?;
                if flags & !(HAS_FRESHNESS | HAS_TAG) != 0 {
                    return Err(codec_error());
                }
                let freshness = if flags & HAS_FRESHNESS != 0 {
                    Some(Freshness::decode(r.take(9)?).ok_or_else(codec_error)?)
                } else {
                    None
                };
                let tag =
                    if flags & HAS_TAG != 0 { Some(r.take(TAG_LEN)?.try_into().expect("tag length")) } else { None };
                AttPdu::WriteReq { handle, value, freshness, tag }
            }
            opcode::NOTIFICATION => {
                let handle = r.u16()?;
                let value = r.take(r.bytes.len())?.to_vec();
                AttPdu::Notification { handle, value }
            }
            _ => return Err(codec_error()),
        };
        r.finish()?;
        Ok(pdu)
    }
}

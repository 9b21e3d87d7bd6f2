//! Human-readable capture view.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::protocol::att::AttPdu;
use crate::protocol::control::ControlPdu;
use crate::protocol::gatt::{format_uuid, Freshness};
use crate::protocol::pdu::{header, Advertisement, ConnectRequest, PduType};
use crate::protocol::smp::SmpPdu;

use super::capture::{parse_jsonl, CaptureRecord};
use super::LabError;

fn line(
    seq: &dyn std::fmt::Display,
    time: &dyn std::fmt::Display,
    ch: &dyn std::fmt::Display,
    ty: &str,
    sender: &str,
    detail: &str,
) -> String {
    format!("{seq:>9} {time:>14}  {ch:>2}  {ty:<12}  {sender:<12}  {detail}\n")
}

pub fn dissect_header() -> String {
    line(&"seq", &"time_us", &"ch", "type", "sender", "detail")
}

/// Printable ASCII as text, anything else as hex.
fn render_value(value: &[u8]) -> String {
    if !value.is_empty() && value.iter().all(|b| (0x20..0x7f).contains(b)) {
        format!("\"{}\"", String::from_utf8_lossy(value))
    } else {
        format!("0x{}", hex::encode(value))
    }
}

fn describe_att(att: &AttPdu) -> String {
    match att {
        AttPdu::ErrorRsp { request_opcode, handle, code } => {
            format!("ATT error_rsp opcode={request_opcode:#04x} handle={handle:#06x} code={code:#04x}")
        }
        AttPdu::DiscoverReq => "ATT discover_req".into(),
        AttPdu::DiscoverRsp(services) => {
            let list: Vec<String> =
                services.iter().map(|s| format!("{}({})", format_uuid(s.uuid), s.characteristics.len())).collect();
            format!("ATT discover_rsp services=[{}]", list.join(", "))
        }
        AttPdu::ReadReq { handle } => format!("ATT read_req handle={handle:#06x}"),
        AttPdu::ReadRsp { value } => format!("ATT read_rsp value={}", render_value(value)),
        AttPdu::WriteReq { handle, value, freshness, tag } => {
            let mut s = format!("ATT write_req handle={handle:#06x} value={}", render_value(value));
            match freshness {
                Some(Freshness::TimestampMs(ms)) => {
                    let _ = write!(s, " ts_ms={ms}");
                }
                Some(Freshness::Nonce(n)) => {
                    let _ = write!(s, " nonce={n:#x}");
                }
                None => {}
            }
            if let Some(tag) = tag {
                let _ = write!(s, " tag={}", hex::encode(tag));
            }
            s
        }
        AttPdu::WriteRsp => "ATT write_rsp".into(),
        AttPdu::Notification { handle, value } => {
            format!("ATT notify handle={handle:#06x} value={}", render_value(value))
        }
    }
}

fn describe_smp(smp: &SmpPdu) -> String {
    match smp {
        SmpPdu::PairingRequest(f) | SmpPdu::PairingResponse(f) => {
            format!("SMP {} method={} bonding={} encryption={}", smp.name(), f.method.as_str(), f.bonding, f.encryption)
        }
        SmpPdu::PairingConfirm(v) | SmpPdu::PairingRandom(v) => format!("SMP {} {}", smp.name(), hex::encode(v)),
        SmpPdu::PairingFailed(reason) => format!("SMP pairing_failed reason={reason:#04x}"),
        SmpPdu::EncryptionInformation(_) => "SMP encryption_information (cleartext LTK)".into(),
    }
}

fn describe_control(control: &ControlPdu) -> String {
    match control {
        ControlPdu::EncReq { skd } | ControlPdu::EncRsp { skd } => {
            format!("LL {} skd={}", control.name(), hex::encode(skd))
        }
        ControlPdu::Reject { reason } => format!("LL reject reason={reason:#04x}"),
        other => format!("LL {}", other.name()),
    }
}

/// Text for one record. `encrypted` is the link's state before this record.
fn describe(pdu_type: PduType, payload: &[u8], encrypted: bool) -> String {
    let hex_only = |what: &str| format!("{what} {}", hex::encode(payload));
    match pdu_type {
        PduType::AdvInd => match Advertisement::decode(payload) {
            Some(a) => {
                let uuids: Vec<String> = a.service_uuids.iter().map(|u| format_uuid(*u)).collect();
                format!("ADV uuids=[{}]", uuids.join(", "))
            }
            None => hex_only("ADV malformed"),
        },
        PduType::ConnectReq => match ConnectRequest::decode(payload) {
            Some(r) => format!(
                "CONNECT {} -> {} aa={:08x} interval_ms={} hop={}",
                hex::encode(r.initiator),
                hex::encode(r.advertiser),
                r.access_address,
                r.interval_ms,
                r.hop_increment
            ),
            None => hex_only("CONNECT malformed"),
        },
        PduType::Terminate => match payload.first() {
            Some(reason) => format!("LL terminate reason={reason:#04x}"),
            None => "LL terminate".into(),
        },
        PduType::L2capEchoReq | PduType::L2capEchoRsp => {
            let dir = if pdu_type == PduType::L2capEchoReq { "req" } else { "rsp" };
            format!("L2CAP echo_{dir} {} bytes", payload.len().saturating_sub(1))
        }
        PduType::Smp | PduType::Data => {
            let Some((&head, body)) = payload.split_first() else { return "empty".into() };
            if head == header::CONTROL {
                return ControlPdu::decode(body).map_or_else(|_| hex_only("LL malformed"), |c| describe_control(&c));
            }
            if encrypted {
                return format!("encrypted {}", hex::encode(body));
            }
            match head {
                header::ATT => AttPdu::decode(body).map_or_else(|_| hex_only("ATT malformed"), |a| describe_att(&a)),
                header::SMP => SmpPdu::decode(body).map_or_else(|_| hex_only("SMP malformed"), |s| describe_smp(&s)),
                _ => hex_only(&format!("header={head:#04x}")),
            }
        }
    }
}

/// Decoded detail of every record, tracking each link's encryption state.
pub fn describe_records(records: &[CaptureRecord]) -> Result<Vec<String>, LabError> {
    let mut encrypted: BTreeMap<&str, bool> = BTreeMap::new();
    let mut details = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let malformed = |message: &str| LabError::MalformedRecord { record: i + 1, message: message.to_string() };
        let pdu_type = PduType::parse(&r.pdu_type).ok_or_else(|| malformed("unknown pdu_type"))?;
        let payload = hex::decode(&r.payload_hex).map_err(|_| malformed("payload_hex is not hex"))?;
        let state = encrypted.get(r.access_address.as_str()).copied().unwrap_or(false);
        details.push(describe(pdu_type, &payload, state));
        if pdu_type.is_advertising() || payload.first() != Some(&header::CONTROL) {
            continue;
        }
        match ControlPdu::decode(&payload[1..]) {
            Ok(ControlPdu::StartEnc) => {
                encrypted.insert(&r.access_address, true);
            }
            Ok(ControlPdu::PauseEnc) => {
                encrypted.insert(&r.access_address, false);
            }
            _ => {}
        }
    }
    Ok(details)
}

/// Header line, then one line per record.
pub fn dissect_records(records: &[CaptureRecord]) -> Result<String, LabError> {
    let mut out = dissect_header();
    for (r, detail) in records.iter().zip(describe_records(records)?) {
        out.push_str(&line(&r.seq, &r.timestamp_us, &r.channel, &r.pdu_type, &r.sender, &detail));
    }
    Ok(out)
}

/// Dissects a capture file's text.
pub fn dissect(text: &str) -> Result<String, LabError> {
    dissect_records(&parse_jsonl(text)?)
}

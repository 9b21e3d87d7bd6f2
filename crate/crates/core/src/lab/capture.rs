//! Line-delimited capture export.

use serde::{Deserialize, Serialize};

use crate::protocol::pdu::address_hex;
use crate::world::CaptureEntry;

use super::LabError;

/// One transmission. Field order is the line format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureRecord {
    /// Index into the world capture; evidence cites this.
    pub seq: u64,
    pub timestamp_us: u64,
    pub channel: u8,
    pub access_address: String,
    pub pdu_type: String,
    pub sender: String,
    pub rssi_dbm: i32,
    pub payload_hex: String,
}

impl CaptureRecord {
    pub fn from_entry(seq: usize, entry: &CaptureEntry) -> Self {
        let pdu = &entry.pdu;
        Self {
            seq: seq as u64,
            timestamp_us: pdu.meta.timestamp_us,
            channel: pdu.channel,
            access_address: format!("{:08x}", pdu.access_address),
            pdu_type: pdu.pdu_type.as_str().to_string(),
            sender: address_hex(&pdu.meta.sender),
            rssi_dbm: entry.rssi_dbm,
            payload_hex: hex::encode(&pdu.payload),
        }
    }

    /// Field widths and hex spelling.
    pub fn check(&self) -> Result<(), String> {
        let lower_hex =
            |s: &str| s.len().is_multiple_of(2) && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if self.access_address.len() != 8 || !lower_hex(&self.access_address) {
            return Err("access_address must be 8 lowercase hex characters".into());
        }
        if self.sender.len() != 12 || !lower_hex(&self.sender) {
            return Err("sender must be 12 lowercase hex characters".into());
        }
        if !lower_hex(&self.payload_hex) {
            return Err("payload_hex must be even-length lowercase hex".into());
        }
        Ok(())
    }
}

pub fn capture_records(capture: &[CaptureEntry]) -> Vec<CaptureRecord> {
    capture.iter().enumerate().map(|(i, e)| CaptureRecord::from_entry(i, e)).collect()
}

pub fn to_jsonl(records: &[CaptureRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Parses and checks every line; `seq` must strictly increase.
pub fn parse_jsonl(text: &str) -> Result<Vec<CaptureRecord>, LabError> {
    let mut records: Vec<CaptureRecord> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let record_no = i + 1;
        let malformed = |message: String| LabError::MalformedRecord { record: record_no, message };
        let r: CaptureRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        r.check().map_err(malformed)?;
        if records.last().is_some_and(|prev| prev.seq >= r.seq) {
            return Err(malformed("seq does not increase".into()));
        }
        records.push(r);
    }
    Ok(records)
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::classify::Classification;
use super::rules::Threat;
use super::{StrideCategory, StrideError, StrideVerdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub device: String,
    pub profile: String,
    pub verdict: StrideVerdict,
    /// Capture indices behind each yes cell.
    pub evidence: BTreeMap<StrideCategory, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatReport {
    pub rows: Vec<ReportRow>,
    pub threat_count: usize,
    pub threats: Vec<Threat>,
}

const NAME_WIDTH: usize = 24;
const CELL_WIDTH: usize = 6;

/// One row per `(device, profile)` pair, in order.
pub fn build_report(
    profiles: &[(String, String)],
    classifications: &[Classification],
    threats: &[Threat],
) -> Result<ThreatReport, StrideError> {
    if profiles.len() != classifications.len() {
        return Err(StrideError::ArityMismatch { profiles: profiles.len(), verdicts: classifications.len() });
    }
    let rows = profiles
        .iter()
        .zip(classifications)
        .map(|((device, profile), c)| ReportRow {
            device: device.clone(),
            profile: profile.clone(),
            verdict: c.verdict,
            evidence: c.evidence.clone(),
        })
        .collect();
    Ok(ThreatReport { rows, threat_count: threats.len(), threats: threats.to_vec() })
}

impl ThreatReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// Fixed-width devices × categories table, then the evidence per yes cell.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<NAME_WIDTH$}", "Device");
        for c in StrideCategory::TABLE_ORDER {
            let _ = write!(out, "{:<CELL_WIDTH$}", c.letter());
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<NAME_WIDTH$}", row.device);
            for c in StrideCategory::TABLE_ORDER {
                let _ = write!(out, "{:<CELL_WIDTH$}", row.verdict.get(c).as_str());
            }
            out.truncate(out.trim_end().len());
            out.push('\n');
        }
        let cited: Vec<String> = self
            .rows
            .iter()
            .flat_map(|row| {
                StrideCategory::TABLE_ORDER.into_iter().filter_map(move |c| {
                    let indices = row.evidence.get(&c)?;
                    let list: Vec<String> = indices.iter().map(|i| format!("#{i}")).collect();
                    Some(format!("  {} {}: {}", row.device, c.letter(), list.join(" ")))
                })
            })
            .collect();
        if !cited.is_empty() {
            out.push_str("\nEvidence (capture seq):\n");
            for line in cited {
                out.push_str(&line);
                out.push('\n');
            }
        }
        let _ = writeln!(out, "\nDFD threats enumerated: {}", self.threat_count);
        out
    }
}

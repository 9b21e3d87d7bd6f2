//! Scenario files: TOML, unknown keys rejected.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::protocol::gatt::GattSpec;
use crate::protocol::{RadioClass, SecurityProfile};

use super::assets::{gatt_templates, shipped_profiles};
use super::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration_s: u64,
    /// Unattributed attacker writes count as repudiation only when set.
    #[serde(default)]
    pub repudiation_relevant: bool,
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub attackers: Vec<AttackerSpec>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Named(String),
    Inline(SecurityProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GattRef {
    Named(String),
    Inline(GattSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub name: String,
    pub profile: ProfileRef,
    pub gatt: GattRef,
    pub position: [f64; 2],
    #[serde(default)]
    pub audit_logging: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<OwnerSpec>,
}

/// The device's owner: a phone running the companion app.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OwnerSpec {
    pub position: [f64; 2],
    /// Value the app writes to the settings characteristic on every connect.
    pub settings: String,
    /// Pair and bond on first connect; otherwise stay on a plain link.
    #[serde(default = "yes")]
    pub pair: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    pub name: String,
    pub radio_class: RadioClass,
    pub position: [f64; 2],
    #[serde(default)]
    pub scripts: Vec<Script>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub attack: AttackKind,
    /// Device name; stumbling takes none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub at_s: f64,
    #[serde(default, skip_serializing_if = "AttackParams::is_empty")]
    pub params: AttackParams,
}

/// Per-attack knobs; each attack reads only its own and ignores the rest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackParams {
    /// sniff: how long to follow the recovered connection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follow_s: Option<f64>,
    /// dos: echo payload bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_per_s: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
    /// replay: minimum age of the replayed PDU.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_s: Option<u64>,
    /// replay: value the owner writes before the replay lands.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner_rewrite: Option<String>,
    /// mitm: value substituted into relayed writes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub takeover_probability: Option<f64>,
    /// fingerprint and stumble: sighting window length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_s: Option<f64>,
}

impl AttackParams {
    pub fn is_empty(&self) -> bool {
        self == &AttackParams::default()
    }
}

/// Artifact file names, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "Outputs::default_capture")]
    pub capture: String,
    #[serde(default = "Outputs::default_report")]
    pub report: String,
    #[serde(default = "Outputs::default_table")]
    pub table: String,
    #[serde(default = "Outputs::default_summary")]
    pub summary: String,
}

impl Outputs {
    fn default_capture() -> String {
        "capture.jsonl".into()
    }
    fn default_report() -> String {
        "report.json".into()
    }
    fn default_table() -> String {
        "report.txt".into()
    }
    fn default_summary() -> String {
        "outcomes.json".into()
    }
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            capture: Self::default_capture(),
            report: Self::default_report(),
            table: Self::default_table(),
            summary: Self::default_summary(),
        }
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, LabError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, LabError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(text, s.start));
        LabError::Parse { line, column, message: e.message().to_string() }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> LabError {
    LabError::Validation { field: field.into(), message: message.into() }
}

impl Scenario {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn duration_us(&self) -> u64 {
        self.duration_s.saturating_mul(1_000_000)
    }

    pub fn resolve_profile(&self, device: &DeviceSpec) -> Result<SecurityProfile, LabError> {
        match &device.profile {
            ProfileRef::Inline(p) => Ok(p.clone()),
            ProfileRef::Named(name) => shipped_profiles().remove(name).ok_or_else(|| {
                invalid(format!("devices.{}.profile", device.name), format!("unknown profile '{name}'"))
            }),
        }
    }

    pub fn resolve_gatt(&self, device: &DeviceSpec) -> Result<GattSpec, LabError> {
        match &device.gatt {
            GattRef::Inline(g) => Ok(g.clone()),
            GattRef::Named(name) => gatt_templates().remove(name).ok_or_else(|| {
                invalid(format!("devices.{}.gatt", device.name), format!("unknown GATT template '{name}'"))
            }),
        }
    }

    /// Names unique across devices and attackers, references resolvable,
    /// scripts inside the run and aimed at declared devices.
    pub fn validate(&self) -> Result<(), LabError> {
        if self.duration_s == 0 {
            return Err(invalid("duration_s", "must be > 0"));
        }
        let mut names = BTreeSet::new();
        for name in self.devices.iter().map(|d| &d.name).chain(self.attackers.iter().map(|a| &a.name)) {
            if name.is_empty() {
                return Err(invalid("name", "must not be empty"));
            }
            if !names.insert(name.as_str()) {
                return Err(invalid("name", format!("duplicate name '{name}'")));
            }
        }
        for d in &self.devices {
            let profile = self.resolve_profile(d)?;
            profile.validate().map_err(|e| invalid(format!("devices.{}.profile", d.name), e.to_string()))?;
            let gatt = self.resolve_gatt(d)?;
            crate::protocol::GattDatabase::from_spec(&gatt)
                .map_err(|e| invalid(format!("devices.{}.gatt", d.name), e.to_string()))?;
            let mut positions = vec![("position", d.position)];
            if let Some(o) = &d.owner {
                positions.push(("owner.position", o.position));
            }
            for (field, p) in positions {
                if !p.iter().all(|c| c.is_finite()) {
                    return Err(invalid(format!("devices.{}.{field}", d.name), "coordinates must be finite"));
                }
            }
        }
        let devices: BTreeSet<&str> = self.devices.iter().map(|d| d.name.as_str()).collect();
        for a in &self.attackers {
            if !a.position.iter().all(|c| c.is_finite()) {
                return Err(invalid(format!("attackers.{}.position", a.name), "coordinates must be finite"));
            }
            for (i, s) in a.scripts.iter().enumerate() {
                let field = |f: &str| format!("attackers.{}.scripts[{i}].{f}", a.name);
                if !(s.at_s.is_finite() && s.at_s >= 0.0 && s.at_s <= self.duration_s as f64) {
                    return Err(invalid(field("at_s"), "must lie within [0, duration_s]"));
                }
                match (&s.target, s.attack) {
                    (None, AttackKind::Stumble) => {}
                    (None, _) => return Err(invalid(field("target"), "required for this attack")),
                    (Some(t), _) if !devices.contains(t.as_str()) => {
                        return Err(invalid(field("target"), format!("unknown device '{t}'")))
                    }
                    (Some(_), _) => {}
                }
                if let Some(p) = s.params.takeover_probability {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(invalid(field("params.takeover_probability"), "must lie within [0, 1]"));
                    }
                }
                for (f, v) in [("params.follow_s", s.params.follow_s), ("params.window_s", s.params.window_s)] {
                    if v.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
                        return Err(invalid(field(f), "must be > 0"));
                    }
                }
                if s.params.rate_per_s == Some(0) {
                    return Err(invalid(field("params.rate_per_s"), "must be > 0"));
                }
            }
        }
        Ok(())
    }
}

//! Builds a world from a scenario, runs the attack scripts and classifies.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{
    blueprint, crack_pairing, echo_flood, mitm_proxy, probe_and_stumble, replay_write, sniff_and_follow,
    track_across_windows, AttackError, AttackKind, AttackOutcome, Fact, FloodConfig, MitmConfig, ReplayConfig,
};
use crate::protocol::{Device, GattDatabase, Role, SecurityProfile};
use crate::stride::{
    build_report, classify_with_context, enumerate_threats, shipped_dfd, Classification, RepudiationContext,
    ThreatReport,
};
use crate::world::{EntityId, Point, TapId, TapMode, World};

use super::capture::{capture_records, to_jsonl, CaptureRecord};
use super::scenario::{ProfileRef, Scenario, Script};
use super::LabError;

const DEFAULT_FOLLOW_S: f64 = 6.0;
const DEFAULT_FINGERPRINT_WINDOW_S: f64 = 60.0;
const DEFAULT_STUMBLE_WINDOW_S: f64 = 10.0;

fn seconds_to_us(s: f64) -> u64 {
    (s * 1_000_000.0).round() as u64
}

/// What one script did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptReport {
    pub attacker: String,
    pub attack: AttackKind,
    pub target: Option<String>,
    pub started_us: u64,
    pub facts: BTreeMap<Fact, Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Attack-specific findings (blueprint fields, stumble entries, RTTs).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

pub struct RunResult {
    pub world: World,
    pub records: Vec<CaptureRecord>,
    pub scripts: Vec<ScriptReport>,
    /// Per scenario device, in declaration order.
    pub outcomes: Vec<(String, Vec<AttackOutcome>)>,
    pub report: ThreatReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub capture: PathBuf,
    pub report: PathBuf,
    pub table: PathBuf,
    pub summary: PathBuf,
}

struct Cast {
    devices: Vec<EntityId>,
    attackers: Vec<(EntityId, TapId)>,
}

fn point(p: [f64; 2]) -> Point {
    Point::new(p[0], p[1])
}

fn build(scenario: &Scenario, world: &mut World) -> Result<Cast, LabError> {
    let mut devices = Vec::new();
    for d in &scenario.devices {
        let profile = scenario.resolve_profile(d)?;
        let gatt = GattDatabase::from_spec(&scenario.resolve_gatt(d)?)
            .map_err(|e| LabError::Validation { field: format!("devices.{}.gatt", d.name), message: e.to_string() })?;
        let mut device = Device::new(d.name.clone(), Role::Peripheral, profile, gatt, world.rng());
        device.audit_logging = d.audit_logging;
        devices.push(world.add_device(device, point(d.position)));
    }
    let mut owners = Vec::new();
    for (d, &entity) in scenario.devices.iter().zip(&devices) {
        if let Some(o) = &d.owner {
            let phone = Device::new(
                format!("{} phone", d.name),
                Role::Central,
                SecurityProfile::phone(),
                GattDatabase::empty(),
                world.rng(),
            );
            let phone = world.add_device(phone, point(o.position));
            owners.push((world.add_owner(phone, entity, o.settings.as_bytes())?, o.pair));
        }
    }
    let mut attackers = Vec::new();
    for a in &scenario.attackers {
        let id = world.add_attacker(a.name.clone(), a.radio_class, point(a.position));
        attackers.push((id, world.attach_tap(id, TapMode::monitor())?));
    }
    for (owner, pair) in owners {
        world.owner_connect(owner, pair)?;
    }
    Ok(Cast { devices, attackers })
}

fn run_script(
    world: &mut World,
    scenario: &Scenario,
    cast: &Cast,
    attacker: (EntityId, TapId),
    script: &Script,
) -> Result<(AttackOutcome, Option<serde_json::Value>), AttackError> {
    let (attacker, tap) = attacker;
    let heard = world.taps[tap].log.clone();
    let target = script.target.as_ref().map(|name| {
        let i = scenario.devices.iter().position(|d| &d.name == name).expect("validated target");
        cast.devices[i]
    });
    let p = &script.params;
    let now = world.clock_us();
    let json = |v: serde_json::Result<serde_json::Value>| v.ok();
    match (script.attack, target) {
        (AttackKind::Stumble, _) => {
            let window = seconds_to_us(p.window_s.unwrap_or(DEFAULT_STUMBLE_WINDOW_S));
            let (outcome, entries) = probe_and_stumble(world, attacker, &heard, (now.saturating_sub(window), now))?;
            Ok((outcome, json(serde_json::to_value(entries))))
        }
        (_, None) => unreachable!("validated: every other attack has a target"),
        (AttackKind::Sniff, Some(t)) => {
            let advertiser = world.entity(t)?.address();
            let follow = seconds_to_us(p.follow_s.unwrap_or(DEFAULT_FOLLOW_S));
            Ok((sniff_and_follow(world, attacker, advertiser, &heard, follow)?, None))
        }
        (AttackKind::CrackTk, Some(t)) => {
            let advertiser = world.entity(t)?.address();
            Ok((crack_pairing(world, advertiser, &heard)?, None))
        }
        (AttackKind::Replay, Some(t)) => {
            let defaults = ReplayConfig::default();
            let config = ReplayConfig {
                delay_s: p.delay_s.unwrap_or(defaults.delay_s),
                owner_rewrite: p.owner_rewrite.as_ref().map(|v| v.as_bytes().to_vec()),
            };
            Ok((replay_write(world, attacker, t, &heard, &config)?, None))
        }
        (AttackKind::Mitm, Some(t)) => {
            let defaults = MitmConfig::default();
            let config = MitmConfig {
                replacement: p.replacement.as_ref().map(|v| v.as_bytes().to_vec()).or(defaults.replacement),
                takeover_probability: p.takeover_probability.unwrap_or(defaults.takeover_probability),
            };
            Ok((mitm_proxy(world, attacker, t, &heard, &config)?, None))
        }
        (AttackKind::Dos, Some(t)) => {
            let defaults = FloodConfig::default();
            let config = FloodConfig {
                size: p.size.unwrap_or(defaults.size),
                rate_per_s: p.rate_per_s.unwrap_or(defaults.rate_per_s),
                duration_ms: p.duration_ms.unwrap_or(defaults.duration_ms),
            };
            let (outcome, report) = echo_flood(world, attacker, t, config)?;
            Ok((outcome, json(serde_json::to_value(report))))
        }
        (AttackKind::Fingerprint, Some(t)) => {
            let window = seconds_to_us(p.window_s.unwrap_or(DEFAULT_FINGERPRINT_WINDOW_S));
            let outcome = track_across_windows(world, t, &heard, (0, window), (now.saturating_sub(window), now));
            Ok((outcome, None))
        }
        (AttackKind::Blueprint, Some(t)) => {
            let (outcome, print) = blueprint(world, attacker, t)?;
            Ok((outcome, json(serde_json::to_value(print))))
        }
    }
}

/// Writes the device accepted that no scenario device or owner phone sent.
fn unattributed_changes(world: &World, device: EntityId, legitimate: &BTreeSet<EntityId>) -> Vec<usize> {
    let Ok(d) = world.device(device) else { return Vec::new() };
    if d.audit_logging {
        return Vec::new();
    }
    d.write_log
        .iter()
        .filter_map(|w| w.capture_index)
        .filter(|&i| !legitimate.contains(&world.capture[i].transmitter))
        .collect()
}

pub fn run(scenario: &Scenario) -> Result<RunResult, LabError> {
    scenario.validate()?;
    let mut world = World::new(scenario.seed);
    let cast = build(scenario, &mut world)?;

    let mut queue: Vec<(u64, usize, usize)> = Vec::new();
    for (a, spec) in scenario.attackers.iter().enumerate() {
        for (s, script) in spec.scripts.iter().enumerate() {
            queue.push((seconds_to_us(script.at_s), a, s));
        }
    }
    queue.sort_unstable();

    let mut scripts = Vec::new();
    let mut outcomes: Vec<Vec<AttackOutcome>> = vec![Vec::new(); scenario.devices.len()];
    for (at_us, a, s) in queue {
        if world.clock_us() < at_us {
            world.run_until(at_us);
        }
        let script = &scenario.attackers[a].scripts[s];
        let started_us = world.clock_us();
        let result = run_script(&mut world, scenario, &cast, cast.attackers[a], script);
        let (facts, error, detail) = match result {
            Ok((outcome, detail)) => {
                let facts = outcome.facts.clone();
                if let Some(i) = script.target.as_ref().and_then(|t| scenario.devices.iter().position(|d| &d.name == t))
                {
                    outcomes[i].push(outcome);
                }
                (facts, None, detail)
            }
            Err(e) => (BTreeMap::new(), Some(e.to_string()), None),
        };
        scripts.push(ScriptReport {
            attacker: scenario.attackers[a].name.clone(),
            attack: script.attack,
            target: script.target.clone(),
            started_us,
            facts,
            error,
            detail,
        });
    }
    if world.clock_us() < scenario.duration_us() {
        world.run_until(scenario.duration_us());
    }

    let legitimate: BTreeSet<EntityId> =
        cast.devices.iter().copied().chain(world.owners.iter().map(|o| o.phone)).collect();
    let classifications: Vec<Classification> = cast
        .devices
        .iter()
        .zip(&outcomes)
        .zip(&scenario.devices)
        .map(|((&entity, device_outcomes), spec)| {
            let context = RepudiationContext {
                relevant: scenario.repudiation_relevant,
                audit_logging: spec.audit_logging,
                unattributed_changes: unattributed_changes(&world, entity, &legitimate),
            };
            classify_with_context(device_outcomes, &context)
        })
        .collect();
    let rows: Vec<(String, String)> = scenario
        .devices
        .iter()
        .map(|d| {
            let profile = match &d.profile {
                ProfileRef::Named(n) => n.clone(),
                ProfileRef::Inline(_) => "inline".to_string(),
            };
            (d.name.clone(), profile)
        })
        .collect();
    let threats = enumerate_threats(&shipped_dfd())?;
    let report = build_report(&rows, &classifications, &threats)?;
    let records = capture_records(&world.capture);
    let outcomes = scenario.devices.iter().map(|d| d.name.clone()).zip(outcomes).collect();
    Ok(RunResult { world, records, scripts, outcomes, report })
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: u64,
    duration_s: u64,
    records: usize,
    scripts: &'a [ScriptReport],
}

impl RunResult {
    pub fn capture_jsonl(&self) -> String {
        to_jsonl(&self.records)
    }

    pub fn summary_json(&self, scenario: &Scenario) -> String {
        let summary = Summary {
            seed: scenario.seed,
            duration_s: scenario.duration_s,
            records: self.records.len(),
            scripts: &self.scripts,
        };
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        text
    }

    /// Writes capture, report, table and summary into `dir`.
    pub fn write_artifacts(&self, scenario: &Scenario, dir: &Path) -> Result<RunArtifacts, LabError> {
        let io =
            |path: &Path, e: std::io::Error| LabError::Io { path: path.display().to_string(), message: e.to_string() };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let outputs = &scenario.outputs;
        let artifacts = RunArtifacts {
            capture: dir.join(&outputs.capture),
            report: dir.join(&outputs.report),
            table: dir.join(&outputs.table),
            summary: dir.join(&outputs.summary),
        };
        for (path, text) in [
            (&artifacts.capture, self.capture_jsonl()),
            (&artifacts.report, self.report.to_json()),
            (&artifacts.table, self.report.render_table()),
            (&artifacts.summary, self.summary_json(scenario)),
        ] {
            std::fs::write(path, text).map_err(|e| io(path, e))?;
        }
        Ok(artifacts)
    }
}

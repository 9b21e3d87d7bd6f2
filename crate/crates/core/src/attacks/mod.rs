//! Attacker programs over taps and injection.
//!
//! Each attack reports an [`AttackOutcome`]: the facts it established about
//! the target, each backed by capture indices.

mod crack;
mod dos;
mod mitm;
mod recon;
mod replay;
mod sniff;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::WorldError;

pub use crack::{
    crack_pairing, crack_tk, crack_tk_with_budget, recover_ltk, CrackResult, KeyRecovery, PairingTranscript,
};
pub use dos::{echo_flood, FloodConfig, FloodReport};
pub use mitm::{mitm_proxy, MitmConfig, DEFAULT_REPLACEMENT};
pub use recon::{
    blueprint, fingerprint, link, probe_and_stumble, stumble, track_across_windows, DeviceBlueprint, Fingerprint,
    StumbleEntry, WeaknessFlags,
};
pub use replay::{replay_write, ReplayConfig};
pub use sniff::{
    connection_log, connections_to, follow_connection, latest_connection_to, plaintext_values, sniff_and_follow,
    sniff_connection, PlaintextValue,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Sniff,
    CrackTk,
    Replay,
    Mitm,
    Dos,
    Fingerprint,
    Blueprint,
    Stumble,
}

/// Where in the stack an attack operates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Physical,
    DataLink,
    Application,
}

impl AttackKind {
    pub const ALL: [AttackKind; 8] = [
        AttackKind::Sniff,
        AttackKind::CrackTk,
        AttackKind::Replay,
        AttackKind::Mitm,
        AttackKind::Dos,
        AttackKind::Fingerprint,
        AttackKind::Blueprint,
        AttackKind::Stumble,
    ];

    pub fn layer(self) -> Layer {
        match self {
            AttackKind::Sniff | AttackKind::Stumble => Layer::Physical,
            AttackKind::CrackTk | AttackKind::Replay | AttackKind::Mitm | AttackKind::Dos => Layer::DataLink,
            AttackKind::Fingerprint | AttackKind::Blueprint => Layer::Application,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Sniff => "sniff",
            AttackKind::CrackTk => "crack_tk",
            AttackKind::Replay => "replay",
            AttackKind::Mitm => "mitm",
            AttackKind::Dos => "dos",
            AttackKind::Fingerprint => "fingerprint",
            AttackKind::Blueprint => "blueprint",
            AttackKind::Stumble => "stumble",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fact {
    PlaintextRecovered,
    KeyRecovered,
    WriteAppliedTwice,
    ImpersonationAccepted,
    PayloadAlteredUndetected,
    RttDegraded,
    ConnectionTerminated,
    DeviceTrackedAcrossSessions,
    ModelIdentified,
    ProtectedWriteSucceeded,
}

impl Fact {
    pub const ALL: [Fact; 10] = [
        Fact::PlaintextRecovered,
        Fact::KeyRecovered,
        Fact::WriteAppliedTwice,
        Fact::ImpersonationAccepted,
        Fact::PayloadAlteredUndetected,
        Fact::RttDegraded,
        Fact::ConnectionTerminated,
        Fact::DeviceTrackedAcrossSessions,
        Fact::ModelIdentified,
        Fact::ProtectedWriteSucceeded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Fact::PlaintextRecovered => "plaintext_recovered",
            Fact::KeyRecovered => "key_recovered",
            Fact::WriteAppliedTwice => "write_applied_twice",
            Fact::ImpersonationAccepted => "impersonation_accepted",
            Fact::PayloadAlteredUndetected => "payload_altered_undetected",
            Fact::RttDegraded => "rtt_degraded",
            Fact::ConnectionTerminated => "connection_terminated",
            Fact::DeviceTrackedAcrossSessions => "device_tracked_across_sessions",
            Fact::ModelIdentified => "model_identified",
            Fact::ProtectedWriteSucceeded => "protected_write_succeeded",
        }
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Facts an attack established, each with the capture indices proving it.
///
/// A fact is only ever present with at least one evidence index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub attack: AttackKind,
    pub facts: BTreeMap<Fact, Vec<usize>>,
    /// Capture indices of everything the attack observed or sent.
    pub evidence: Vec<usize>,
}

impl AttackOutcome {
    pub fn new(attack: AttackKind) -> Self {
        Self { attack, facts: BTreeMap::new(), evidence: Vec::new() }
    }

    /// Records `fact` when `evidence` is non-empty; otherwise the fact stays absent.
    pub fn establish(&mut self, fact: Fact, evidence: impl IntoIterator<Item = usize>) {
        let mut evidence: Vec<usize> = evidence.into_iter().collect();
        if evidence.is_empty() {
            return;
        }
        self.note(evidence.iter().copied());
        let entry = self.facts.entry(fact).or_default();
        entry.append(&mut evidence);
        entry.sort_unstable();
        entry.dedup();
    }

    /// Adds observed or transmitted capture indices to the general evidence.
    pub fn note(&mut self, indices: impl IntoIterator<Item = usize>) {
        self.evidence.extend(indices);
        self.evidence.sort_unstable();
        self.evidence.dedup();
    }

    pub fn has(&self, fact: Fact) -> bool {
        self.facts.contains_key(&fact)
    }

    pub fn fact_set(&self) -> Vec<Fact> {
        self.facts.keys().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("not enough observations to recover connection parameters")]
    InsufficientObservations,
    #[error("no TK candidate within the search budget matches the captured confirm values")]
    NotCrackable,
    #[error("capture holds no complete legacy pairing exchange")]
    NoPairingCaptured,
    #[error("the central holds a bond with the target and ignored the impostor")]
    CloneRejected,
    #[error("target is out of the attacker's radio range")]
    OutOfRange,
    #[error("target is not discoverable")]
    NotDiscoverable,
    #[error("no connection to the target")]
    NotConnected,
    #[error("capture holds no write to replay")]
    NothingToReplay,
    #[error(transparent)]
    World(#[from] WorldError),
}

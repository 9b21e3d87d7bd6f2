//! Scenario loading, run orchestration, capture export and dissection.

mod assets;
mod capture;
mod dissect;
mod run;
mod scenario;

use thiserror::Error;

use crate::stride::StrideError;
use crate::world::WorldError;

pub use assets::{gatt_templates, shipped_profiles, DFD_THREATS_GOLDEN, GATT_TEMPLATES, PROFILES};
pub use capture::{capture_records, parse_jsonl, to_jsonl, CaptureRecord};
pub use dissect::{describe_records, dissect, dissect_header, dissect_records};
pub use run::{run, RunArtifacts, RunResult, ScriptReport};
pub use scenario::{
    load_scenario, parse_scenario, AttackParams, AttackerSpec, DeviceSpec, GattRef, Outputs, OwnerSpec, ProfileRef,
    Scenario, Script,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {field}: {message}")]
    Validation { field: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed capture record {record}: {message}")]
    MalformedRecord { record: usize, message: String },
    #[error("simulation failed: {0}")]
    World(#[from] WorldError),
    #[error(transparent)]
    Stride(#[from] StrideError),
}

impl LabError {
    /// Process exit status: 2 for scenario problems, 3 for everything at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Parse { .. } | LabError::Validation { .. } => 2,
            LabError::Io { .. } | LabError::MalformedRecord { .. } | LabError::World(_) | LabError::Stride(_) => 3,
        }
    }
}

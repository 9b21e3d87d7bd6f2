//! STRIDE threat enumeration over a data-flow diagram, and classification
//! of attack outcomes into a per-device verdict.

mod classify;
mod dfd;
mod report;
mod rules;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{category_of, classify_outcomes, classify_with_context, Classification, RepudiationContext};
pub use dfd::{shipped_dfd, DfdModel, Element, ElementKind, TrustBoundary, SHIPPED_DFD};
pub use report::{build_report, ReportRow, ThreatReport};
pub use rules::{enumerate_threats, in_rule, Threat, CROSSING_RULES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrideCategory {
    Spoofing,
    Tampering,
    Repudiation,
    InformationDisclosure,
    DenialOfService,
    ElevationOfPrivilege,
}

impl StrideCategory {
    pub const ALL: [StrideCategory; 6] = [
        StrideCategory::Spoofing,
        StrideCategory::Tampering,
        StrideCategory::Repudiation,
        StrideCategory::InformationDisclosure,
        StrideCategory::DenialOfService,
        StrideCategory::ElevationOfPrivilege,
    ];

    /// Column order of the verdict table.
    pub const TABLE_ORDER: [StrideCategory; 6] = [
        StrideCategory::DenialOfService,
        StrideCategory::ElevationOfPrivilege,
        StrideCategory::InformationDisclosure,
        StrideCategory::Repudiation,
        StrideCategory::Spoofing,
        StrideCategory::Tampering,
    ];

    pub fn letter(self) -> char {
        match self {
            StrideCategory::Spoofing => 'S',
            StrideCategory::Tampering => 'T',
            StrideCategory::Repudiation => 'R',
            StrideCategory::InformationDisclosure => 'I',
            StrideCategory::DenialOfService => 'D',
            StrideCategory::ElevationOfPrivilege => 'E',
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrideCategory::Spoofing => "spoofing",
            StrideCategory::Tampering => "tampering",
            StrideCategory::Repudiation => "repudiation",
            StrideCategory::InformationDisclosure => "information_disclosure",
            StrideCategory::DenialOfService => "denial_of_service",
            StrideCategory::ElevationOfPrivilege => "elevation_of_privilege",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            StrideCategory::Spoofing => "Spoofing",
            StrideCategory::Tampering => "Tampering",
            StrideCategory::Repudiation => "Repudiation",
            StrideCategory::InformationDisclosure => "Information Disclosure",
            StrideCategory::DenialOfService => "Denial of Service",
            StrideCategory::ElevationOfPrivilege => "Elevation of Privilege",
        }
    }
}

impl fmt::Display for StrideCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    #[default]
    No,
}

impl Verdict {
    pub fn from_bool(yes: bool) -> Self {
        if yes {
            Verdict::Yes
        } else {
            Verdict::No
        }
    }

    pub fn is_yes(self) -> bool {
        self == Verdict::Yes
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Yes => "Yes",
            Verdict::No => "No",
        }
    }
}

/// The six-category verdict for one device. Every field is always present.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrideVerdict {
    pub spoofing: Verdict,
    pub tampering: Verdict,
    pub repudiation: Verdict,
    pub information_disclosure: Verdict,
    pub denial_of_service: Verdict,
    pub elevation_of_privilege: Verdict,
}

impl StrideVerdict {
    pub fn get(&self, category: StrideCategory) -> Verdict {
        match category {
            StrideCategory::Spoofing => self.spoofing,
            StrideCategory::Tampering => self.tampering,
            StrideCategory::Repudiation => self.repudiation,
            StrideCategory::InformationDisclosure => self.information_disclosure,
            StrideCategory::DenialOfService => self.denial_of_service,
            StrideCategory::ElevationOfPrivilege => self.elevation_of_privilege,
        }
    }

    pub fn set(&mut self, category: StrideCategory, verdict: Verdict) {
        let slot = match category {
            StrideCategory::Spoofing => &mut self.spoofing,
            StrideCategory::Tampering => &mut self.tampering,
            StrideCategory::Repudiation => &mut self.repudiation,
            StrideCategory::InformationDisclosure => &mut self.information_disclosure,
            StrideCategory::DenialOfService => &mut self.denial_of_service,
            StrideCategory::ElevationOfPrivilege => &mut self.elevation_of_privilege,
        };
        *slot = verdict;
    }

    /// Builds a verdict from the letters marked yes, e.g. `"DIS"`.
    pub fn from_letters(letters: &str) -> Self {
        let mut v = StrideVerdict::default();
        for c in StrideCategory::ALL {
            v.set(c, Verdict::from_bool(letters.contains(c.letter())));
        }
        v
    }

    /// Letters of the yes categories in table order.
    pub fn letters(&self) -> String {
        StrideCategory::TABLE_ORDER.iter().filter(|c| self.get(**c).is_yes()).map(|c| c.letter()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrideError {
    #[error("invalid DFD: {0}")]
    InvalidDfd(String),
    #[error("{profiles} profiles but {verdicts} verdicts")]
    ArityMismatch { profiles: usize, verdicts: usize },
}

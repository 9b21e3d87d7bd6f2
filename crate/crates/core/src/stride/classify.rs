use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackOutcome, Fact};

use super::{StrideCategory, StrideVerdict, Verdict};

/// Which category a fact counts toward.
pub fn category_of(fact: Fact) -> StrideCategory {
    match fact {
        Fact::ImpersonationAccepted | Fact::KeyRecovered => StrideCategory::Spoofing,
        Fact::WriteAppliedTwice | Fact::PayloadAlteredUndetected => StrideCategory::Tampering,
        Fact::PlaintextRecovered | Fact::DeviceTrackedAcrossSessions | Fact::ModelIdentified => {
            StrideCategory::InformationDisclosure
        }
        Fact::RttDegraded | Fact::ConnectionTerminated => StrideCategory::DenialOfService,
        Fact::ProtectedWriteSucceeded => StrideCategory::ElevationOfPrivilege,
    }
}

/// What repudiation needs beyond the attack facts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepudiationContext {
    /// The scenario asserts that unattributed changes matter.
    pub relevant: bool,
    pub audit_logging: bool,
    /// Capture indices of attacker-caused state changes with no audit record.
    pub unattributed_changes: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: StrideVerdict,
    /// Present exactly for the yes categories, never empty.
    pub evidence: BTreeMap<StrideCategory, Vec<usize>>,
}

/// Facts to categories. Repudiation stays `No` without context.
pub fn classify_outcomes(outcomes: &[AttackOutcome]) -> StrideVerdict {
    classify_with_context(outcomes, &RepudiationContext::default()).verdict
}

pub fn classify_with_context(outcomes: &[AttackOutcome], repudiation: &RepudiationContext) -> Classification {
    let mut evidence: BTreeMap<StrideCategory, Vec<usize>> = BTreeMap::new();
    for outcome in outcomes {
        for (fact, indices) in &outcome.facts {
            if !indices.is_empty() {
                evidence.entry(category_of(*fact)).or_default().extend(indices);
            }
        }
    }
    if repudiation.relevant && !repudiation.audit_logging && !repudiation.unattributed_changes.is_empty() {
        evidence.entry(StrideCategory::Repudiation).or_default().extend(&repudiation.unattributed_changes);
    }
    let mut verdict = StrideVerdict::default();
    for (category, indices) in evidence.iter_mut() {
        indices.sort_unstable();
        indices.dedup();
        verdict.set(*category, Verdict::Yes);
    }
    Classification { verdict, evidence }
}

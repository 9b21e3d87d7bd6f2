use serde::{Deserialize, Serialize};

use super::dfd::{DfdModel, ElementKind};
use super::{StrideCategory, StrideError};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Threat {
    pub element_id: String,
    pub category: StrideCategory,
    pub rule_id: String,
    pub description: String,
}

/// Per-kind STRIDE rule table. Every pair is spelled out.
pub fn in_rule(kind: ElementKind, category: StrideCategory) -> bool {
    use ElementKind::*;
    use StrideCategory::*;
    match (kind, category) {
        (ExternalEntity, Spoofing) => true,
        (ExternalEntity, Tampering) => false,
        (ExternalEntity, Repudiation) => true,
        (ExternalEntity, InformationDisclosure) => false,
        (ExternalEntity, DenialOfService) => false,
        (ExternalEntity, ElevationOfPrivilege) => false,
        (Process, Spoofing) => true,
        (Process, Tampering) => true,
        (Process, Repudiation) => true,
        (Process, InformationDisclosure) => true,
        (Process, DenialOfService) => true,
        (Process, ElevationOfPrivilege) => true,
        (DataStore, Spoofing) => false,
        (DataStore, Tampering) => true,
        (DataStore, Repudiation) => true,
        (DataStore, InformationDisclosure) => true,
        (DataStore, DenialOfService) => true,
        (DataStore, ElevationOfPrivilege) => false,
        (DataFlow, Spoofing) => false,
        (DataFlow, Tampering) => true,
        (DataFlow, Repudiation) => false,
        (DataFlow, InformationDisclosure) => true,
        (DataFlow, DenialOfService) => true,
        (DataFlow, ElevationOfPrivilege) => false,
    }
}

/// Extra rules for a flow whose endpoints sit in different trust zones:
/// the receiver may be talking to an impersonated sender, and the crossing
/// itself is a privilege step.
pub const CROSSING_RULES: [(&str, StrideCategory); 2] =
    [("XB-S", StrideCategory::Spoofing), ("XB-E", StrideCategory::ElevationOfPrivilege)];

fn kind_prefix(kind: ElementKind) -> &'static str {
    match kind {
        ElementKind::ExternalEntity => "EE",
        ElementKind::Process => "P",
        ElementKind::DataStore => "DS",
        ElementKind::DataFlow => "DF",
    }
}

/// Applies the rule table to every element; sorted by element, category, rule.
pub fn enumerate_threats(dfd: &DfdModel) -> Result<Vec<Threat>, StrideError> {
    dfd.validate()?;
    let mut threats = Vec::new();
    for e in &dfd.elements {
        for category in StrideCategory::ALL.into_iter().filter(|&c| in_rule(e.kind, c)) {
            threats.push(Threat {
                element_id: e.id.clone(),
                category,
                rule_id: format!("{}-{}", kind_prefix(e.kind), category.letter()),
                description: format!("{} against {} '{}'", category.title(), e.kind.as_str(), e.label),
            });
        }
        if e.kind == ElementKind::DataFlow && dfd.crosses_boundary(e) {
            for (rule_id, category) in CROSSING_RULES {
                threats.push(Threat {
                    element_id: e.id.clone(),
                    category,
                    rule_id: rule_id.to_string(),
                    description: format!("{} across a trust boundary on '{}'", category.title(), e.label),
                });
            }
        }
    }
    threats.sort();
    Ok(threats)
}

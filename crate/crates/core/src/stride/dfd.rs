use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::StrideError;

/// Wearable, companion app and vendor cloud, one trust zone each.
pub const SHIPPED_DFD: &str = include_str!("../../assets/dfd.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    ExternalEntity,
    Process,
    DataStore,
    DataFlow,
}

impl ElementKind {
    pub const ALL: [ElementKind; 4] =
        [ElementKind::ExternalEntity, ElementKind::Process, ElementKind::DataStore, ElementKind::DataFlow];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::ExternalEntity => "external entity",
            ElementKind::Process => "process",
            ElementKind::DataStore => "data store",
            ElementKind::DataFlow => "data flow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Element {
    pub id: String,
    pub kind: ElementKind,
    pub label: String,
    /// Flows only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Flows only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustBoundary {
    pub id: String,
    pub label: String,
    pub members: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfdModel {
    #[serde(default)]
    pub elements: Vec<Element>,
    #[serde(default)]
    pub trust_boundaries: Vec<TrustBoundary>,
}

pub fn shipped_dfd() -> DfdModel {
    DfdModel::from_toml(SHIPPED_DFD).expect("shipped DFD is valid")
}

impl DfdModel {
    pub fn from_toml(text: &str) -> Result<Self, StrideError> {
        let model: DfdModel = toml::from_str(text).map_err(|e| StrideError::InvalidDfd(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Ids unique; flows join two existing non-flow elements; only flows
    /// have endpoints; boundary members exist, are not flows, and no element
    /// sits in two boundaries.
    pub fn validate(&self) -> Result<(), StrideError> {
        let invalid = |m: String| Err(StrideError::InvalidDfd(m));
        let mut kinds: BTreeMap<&str, ElementKind> = BTreeMap::new();
        for e in &self.elements {
            if kinds.insert(e.id.as_str(), e.kind).is_some() {
                return invalid(format!("duplicate element id '{}'", e.id));
            }
        }
        for e in &self.elements {
            match (e.kind, &e.source, &e.sink) {
                (ElementKind::DataFlow, Some(src), Some(dst)) => {
                    for end in [src, dst] {
                        match kinds.get(end.as_str()) {
                            None => return invalid(format!("flow '{}' references unknown element '{end}'", e.id)),
                            Some(ElementKind::DataFlow) => {
                                return invalid(format!("flow '{}' cannot end at flow '{end}'", e.id))
                            }
                            Some(_) => {}
                        }
                    }
                }
                (ElementKind::DataFlow, _, _) => return invalid(format!("flow '{}' needs a source and a sink", e.id)),
                (_, None, None) => {}
                (_, _, _) => return invalid(format!("element '{}' is not a flow but has endpoints", e.id)),
            }
        }
        let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
        for b in &self.trust_boundaries {
            for m in &b.members {
                match kinds.get(m.as_str()) {
                    None => return invalid(format!("boundary '{}' lists unknown element '{m}'", b.id)),
                    Some(ElementKind::DataFlow) => return invalid(format!("boundary '{}' lists flow '{m}'", b.id)),
                    Some(_) => {}
                }
                if let Some(other) = seen.insert(m.as_str(), b.id.as_str()) {
                    return invalid(format!("element '{m}' is in boundaries '{other}' and '{}'", b.id));
                }
            }
        }
        Ok(())
    }

    /// Boundary containing `id`; `None` outside every boundary.
    pub fn zone_of(&self, id: &str) -> Option<&str> {
        self.trust_boundaries.iter().find(|b| b.members.contains(id)).map(|b| b.id.as_str())
    }

    /// A flow crosses a boundary when its endpoints sit in different zones.
    pub fn crosses_boundary(&self, flow: &Element) -> bool {
        match (&flow.source, &flow.sink) {
            (Some(src), Some(dst)) => self.zone_of(src) != self.zone_of(dst),
            _ => false,
        }
    }
}

use std::collections::BTreeMap;

use crate::protocol::gatt::GattSpec;
use crate::protocol::SecurityProfile;

pub const PROFILES: &str = include_str!("../../assets/profiles.toml");
pub const GATT_TEMPLATES: &str = include_str!("../../assets/gatt.toml");
/// Sorted threat list for the shipped DFD.
pub const DFD_THREATS_GOLDEN: &str = include_str!("../../assets/dfd-threats.golden.json");

/// The four wearable profiles, by name.
pub fn shipped_profiles() -> BTreeMap<String, SecurityProfile> {
    toml::from_str(PROFILES).expect("shipped profiles parse")
}

pub fn gatt_templates() -> BTreeMap<String, GattSpec> {
    toml::from_str(GATT_TEMPLATES).expect("shipped GATT templates parse")
}

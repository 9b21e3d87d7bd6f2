#![allow(dead_code)]

use std::path::{Path, PathBuf};

use blelab_core::lab::{self, gatt_templates, shipped_profiles, Scenario};
use blelab_core::protocol::{Device, GattDatabase, RadioClass, Role, SecurityProfile};
use blelab_core::world::{EntityId, Point, TapId, TapMode, World};

pub fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Every `*.toml` under `scenarios/`, sorted by file name.
pub fn shipped_scenarios() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .expect("scenarios directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
}

pub fn scenario(name: &str) -> Scenario {
    lab::load_scenario(&scenario_dir().join(format!("{name}.toml"))).expect("shipped scenario loads")
}

pub fn profile(name: &str) -> SecurityProfile {
    shipped_profiles().remove(name).expect("shipped profile")
}

pub fn gatt(name: &str) -> GattDatabase {
    GattDatabase::from_spec(&gatt_templates().remove(name).expect("shipped template")).expect("template builds")
}

pub fn add_peripheral(
    world: &mut World,
    name: &str,
    profile: SecurityProfile,
    gatt: GattDatabase,
    at: (f64, f64),
) -> EntityId {
    let device = Device::new(name, Role::Peripheral, profile, gatt, world.rng());
    world.add_device(device, Point::new(at.0, at.1))
}

/// A phone owning `device`, returned as its owner index.
pub fn add_owner(world: &mut World, device: EntityId, at: (f64, f64), settings: &str) -> usize {
    let phone = Device::new("phone", Role::Central, SecurityProfile::phone(), GattDatabase::empty(), world.rng());
    let phone = world.add_device(phone, Point::new(at.0, at.1));
    world.add_owner(phone, device, settings.as_bytes()).expect("owner added")
}

pub fn add_listener(world: &mut World, class: RadioClass, at: (f64, f64)) -> (EntityId, TapId) {
    let attacker = world.add_attacker("attacker", class, Point::new(at.0, at.1));
    let tap = world.attach_tap(attacker, TapMode::monitor()).expect("tap attaches");
    (attacker, tap)
}

pub fn heard(world: &World, tap: TapId) -> Vec<usize> {
    world.taps[tap].log.clone()
}

/// Every PDU the attacker transmitted that reached anyone.
pub fn delivered_from(world: &World, attacker: EntityId) -> usize {
    world.capture.iter().filter(|e| e.transmitter == attacker && !e.delivered_to.is_empty()).count()
}

/// Band profile with every defense off.
pub fn open_profile() -> SecurityProfile {
    profile("firebolt-invincible")
}

//! Enabling the defense mapped to an attack removes the attack's fact, on the
//! same seed and otherwise identical scenario.

mod common;

use blelab_core::attacks::{AttackKind, Fact};
use blelab_core::lab::{
    self, AttackParams, AttackerSpec, DeviceSpec, GattRef, OwnerSpec, ProfileRef, Scenario, Script,
};
use blelab_core::protocol::{AddressPolicy, AntiReplay, RadioClass, SecurityProfile};

use common::open_profile;

fn scenario(profile: SecurityProfile, owner_pairs: bool, attack: AttackKind, at_s: f64, duration_s: u64) -> Scenario {
    Scenario {
        seed: 2024,
        duration_s,
        repudiation_relevant: false,
        devices: vec![DeviceSpec {
            name: "band".into(),
            profile: ProfileRef::Inline(profile),
            gatt: GattRef::Named("generic-band".into()),
            position: [0.0, 0.0],
            audit_logging: false,
            owner: Some(OwnerSpec { position: [0.8, 0.0], settings: "alarm=07:00".into(), pair: owner_pairs }),
        }],
        attackers: vec![AttackerSpec {
            name: "laptop".into(),
            radio_class: RadioClass::Laptop,
            position: [3.0, 0.0],
            scripts: vec![Script { attack, target: Some("band".into()), at_s, params: AttackParams::default() }],
        }],
        outputs: Default::default(),
    }
}

fn facts(s: &Scenario) -> Vec<Fact> {
    let result = lab::run(s).expect("scenario runs");
    let script = &result.scripts[0];
    assert_eq!(script.error, None, "{:?} errored", script.attack);
    script.facts.keys().copied().collect()
}

/// Fact present without the defense, absent with it.
fn check(
    attack: AttackKind,
    fact: Fact,
    owner_pairs: bool,
    at_s: f64,
    duration_s: u64,
    defend: impl Fn(&mut SecurityProfile),
) {
    let bare = open_profile();
    let mut defended = bare.clone();
    defend(&mut defended);
    assert_ne!(bare, defended);
    let without = facts(&scenario(bare, owner_pairs, attack, at_s, duration_s));
    let with = facts(&scenario(defended, owner_pairs, attack, at_s, duration_s));
    assert!(without.contains(&fact), "{attack} without defense: {without:?}");
    assert!(!with.contains(&fact), "{attack} with defense: {with:?}");
}

#[test]
fn freshness_defeats_replay() {
    check(AttackKind::Replay, Fact::WriteAppliedTwice, false, 10.0, 30, |p| {
        p.anti_replay = AntiReplay::Timestamp { window_ms: 5000 }
    });
    check(AttackKind::Replay, Fact::WriteAppliedTwice, false, 10.0, 30, |p| p.anti_replay = AntiReplay::Nonce);
}

#[test]
fn link_encryption_defeats_sniffing() {
    check(AttackKind::Sniff, Fact::PlaintextRecovered, true, 10.0, 30, |p| p.link_encryption = true);
}

#[test]
fn write_tag_exposes_relay_rewrites() {
    check(AttackKind::Mitm, Fact::PayloadAlteredUndetected, false, 10.0, 30, |p| p.write_auth_required = true);
}

#[test]
fn echo_rate_limit_defeats_flooding() {
    check(AttackKind::Dos, Fact::RttDegraded, false, 5.0, 20, |p| p.echo_rate_limit = Some(10));
    check(AttackKind::Dos, Fact::ConnectionTerminated, false, 5.0, 20, |p| p.echo_rate_limit = Some(10));
}

#[test]
fn address_rotation_defeats_tracking() {
    check(AttackKind::Fingerprint, Fact::DeviceTrackedAcrossSessions, false, 990.0, 1000, |p| {
        p.address_policy = AddressPolicy::Rotating { period_s: 900 }
    });
}

#[test]
fn write_authentication_defeats_unauthorized_writes() {
    check(AttackKind::Blueprint, Fact::ProtectedWriteSucceeded, false, 10.0, 30, |p| p.write_auth_required = true);
}

#[test]
fn outcomes_repeat_on_the_same_seed() {
    let s = common::scenario("table1");
    let a = lab::run(&s).unwrap();
    let b = lab::run(&s).unwrap();
    let sets = |r: &lab::RunResult| r.scripts.iter().map(|s| (s.facts.clone(), s.error.clone())).collect::<Vec<_>>();
    assert_eq!(sets(&a), sets(&b));
}

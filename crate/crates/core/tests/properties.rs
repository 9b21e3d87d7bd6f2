mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use blelab_core::attacks::{
    crack_tk_with_budget, sniff_connection, AttackError, AttackKind, AttackOutcome, Fact, PairingTranscript,
};
use blelab_core::crypto::{decrypt_pdu, encrypt_pdu};
use blelab_core::lab::{
    self, AttackParams, AttackerSpec, CaptureRecord, DeviceSpec, GattRef, OwnerSpec, ProfileRef, Scenario, Script,
};
use blelab_core::protocol::gatt::{process_request, Freshness, LinkSecurity, ReplayGuard};
use blelab_core::protocol::pairing::{confirm_value, ConfirmRole};
use blelab_core::protocol::pdu::{LinkLayerPdu, PduMeta, PduType, DATA_CHANNELS};
use blelab_core::protocol::{
    AntiReplay, ConnectionParameters, GattDatabase, GattRequest, PairingMethod, RadioClass, SecurityProfile,
};
use blelab_core::stride::{classify_outcomes, StrideVerdict};

/// Fact to verdict letter, written out independently of the classifier.
fn letter(f: Fact) -> char {
    match f {
        Fact::PlaintextRecovered => 'I',
        Fact::KeyRecovered => 'S',
        Fact::WriteAppliedTwice => 'T',
        Fact::PayloadAlteredUndetected => 'T',
        Fact::ImpersonationAccepted => 'S',
        Fact::RttDegraded => 'D',
        Fact::ConnectionTerminated => 'D',
        Fact::DeviceTrackedAcrossSessions => 'I',
        Fact::ModelIdentified => 'I',
        Fact::ProtectedWriteSucceeded => 'E',
    }
}

fn outcome_with(facts: &[Fact]) -> AttackOutcome {
    let mut o = AttackOutcome::new(AttackKind::Sniff);
    for (i, f) in facts.iter().enumerate() {
        o.facts.insert(*f, vec![i]);
    }
    o
}

/// Generic band database and its writable settings handle.
fn settings() -> (GattDatabase, u16) {
    let db = common::gatt("generic-band");
    let handle = db.characteristics().find(|c| c.value == b"alarm=off").unwrap().handle;
    (db, handle)
}

fn write_with(profile: &SecurityProfile, security: LinkSecurity, request: &GattRequest, now_ms: u64) -> bool {
    let (mut db, _) = settings();
    let mut guard = ReplayGuard::default();
    process_request(&mut db, profile, &mut guard, Some(&[7; 16]), security, now_ms, request).is_ok()
}

fn anti_replay() -> impl Strategy<Value = AntiReplay> {
    prop_oneof![
        Just(AntiReplay::None),
        (1u64..10_000).prop_map(|window_ms| AntiReplay::Timestamp { window_ms }),
        Just(AntiReplay::Nonce),
    ]
}

fn freshness() -> impl Strategy<Value = Option<Freshness>> {
    prop_oneof![
        Just(None),
        (0u64..100_000).prop_map(|t| Some(Freshness::TimestampMs(t))),
        any::<u64>().prop_map(|n| Some(Freshness::Nonce(n))),
    ]
}

fn hex_string(bytes: usize) -> impl Strategy<Value = String> {
    proptest::collection::vec(any::<u8>(), bytes).prop_map(hex::encode)
}

fn record() -> impl Strategy<Value = CaptureRecord> {
    (
        any::<u64>(),
        0u8..40,
        hex_string(4),
        prop::sample::select(vec!["adv_ind", "connect_req", "smp", "data", "terminate"]),
        hex_string(6),
        -100i32..10,
        proptest::collection::vec(any::<u8>(), 0..64).prop_map(hex::encode),
    )
        .prop_map(|(timestamp_us, channel, access_address, pdu_type, sender, rssi_dbm, payload_hex)| {
            CaptureRecord {
                seq: 0,
                timestamp_us,
                channel,
                access_address,
                pdu_type: pdu_type.to_string(),
                sender,
                rssi_dbm,
                payload_hex,
            }
        })
}

fn position() -> impl Strategy<Value = [f64; 2]> {
    [-50.0..50.0f64, -50.0..50.0f64]
}

fn scenario() -> impl Strategy<Value = Scenario> {
    let profiles: Vec<String> = lab::shipped_profiles().into_keys().collect();
    let templates: Vec<String> = lab::gatt_templates().into_keys().collect();
    let device = (
        prop::sample::select(profiles),
        prop::sample::select(templates),
        position(),
        any::<bool>(),
        proptest::option::of((position(), "[a-z]{1,8}=[0-9]{1,4}", any::<bool>())),
    );
    (
        1u64..10_000,
        1u64..600,
        proptest::collection::vec(device, 1..4),
        proptest::collection::vec(
            (
                any::<bool>(),
                position(),
                proptest::collection::vec(
                    (prop::sample::select(AttackKind::ALL.to_vec()), any::<prop::sample::Index>(), 0.0..1.0f64),
                    0..4,
                ),
            ),
            0..3,
        ),
    )
        .prop_map(|(seed, duration_s, devices, attackers)| {
            let devices: Vec<DeviceSpec> = devices
                .into_iter()
                .enumerate()
                .map(|(i, (profile, gatt, position, audit_logging, owner))| DeviceSpec {
                    name: format!("device {i}"),
                    profile: ProfileRef::Named(profile),
                    gatt: GattRef::Named(gatt),
                    position,
                    audit_logging,
                    owner: owner.map(|(position, settings, pair)| OwnerSpec { position, settings, pair }),
                })
                .collect();
            let attackers = attackers
                .into_iter()
                .enumerate()
                .map(|(i, (laptop, position, scripts))| AttackerSpec {
                    name: format!("attacker {i}"),
                    radio_class: if laptop { RadioClass::Laptop } else { RadioClass::Smartphone },
                    position,
                    scripts: scripts
                        .into_iter()
                        .map(|(attack, target, at)| Script {
                            attack,
                            target: (attack != AttackKind::Stumble)
                                .then(|| devices[target.index(devices.len())].name.clone()),
                            at_s: (at * duration_s as f64).floor(),
                            params: AttackParams::default(),
                        })
                        .collect(),
                })
                .collect();
            Scenario {
                seed,
                duration_s,
                repudiation_relevant: seed % 2 == 0,
                devices,
                attackers,
                outputs: Default::default(),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn classification_is_the_union_of_fact_letters(mask in 0u16..1024) {
        let facts: Vec<Fact> = Fact::ALL.into_iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, f)| f).collect();
        let expected: BTreeSet<char> = facts.iter().map(|&f| letter(f)).collect();
        let got: BTreeSet<char> = classify_outcomes(&[outcome_with(&facts)]).letters().chars().collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn more_facts_never_remove_a_yes(a in 0u16..1024, b in 0u16..1024) {
        let pick = |m: u16| Fact::ALL.into_iter().enumerate().filter(|(i, _)| m & (1 << i) != 0).map(|(_, f)| f).collect::<Vec<_>>();
        let small = classify_outcomes(&[outcome_with(&pick(a))]);
        let big = classify_outcomes(&[outcome_with(&pick(a | b))]);
        prop_assert!(small.letters().chars().all(|c| big.letters().contains(c)));
        prop_assert_eq!(StrideVerdict::from_letters(&big.letters()), big);
    }

    #[test]
    fn sealed_payloads_roundtrip_and_detect_tampering(
        key in any::<[u8; 16]>(),
        counter in any::<u64>(),
        plaintext in proptest::collection::vec(any::<u8>(), 0..512),
        bit in any::<prop::sample::Index>(),
    ) {
        let sealed = encrypt_pdu(&key, counter, &plaintext);
        prop_assert_eq!(sealed.len(), plaintext.len() + 4);
        prop_assert_eq!(decrypt_pdu(&key, counter, &sealed).unwrap(), plaintext);
        let mut flipped = sealed.clone();
        let i = bit.index(flipped.len() * 8);
        flipped[i / 8] ^= 1 << (i % 8);
        prop_assert!(decrypt_pdu(&key, counter, &flipped).is_err());
        prop_assert!(decrypt_pdu(&key, counter.wrapping_add(1), &sealed).is_err());
    }

    #[test]
    fn enabling_defenses_never_admits_a_rejected_write(
        base_link in any::<bool>(), base_auth in any::<bool>(), base_replay in anti_replay(),
        add_link in any::<bool>(), add_auth in any::<bool>(), add_replay in anti_replay(),
        encrypted in any::<bool>(), method in prop::sample::select(vec![None, Some(PairingMethod::JustWorks), Some(PairingMethod::PasskeyEntry)]),
        fresh in freshness(), tag in proptest::option::of(any::<[u8; 4]>()), now_ms in 0u64..100_000,
    ) {
        let mut base = SecurityProfile::permissive(RadioClass::Wearable);
        base.link_encryption = base_link;
        base.write_auth_required = base_auth;
        base.anti_replay = base_replay;
        let mut strong = base.clone();
        strong.link_encryption |= add_link;
        strong.write_auth_required |= add_auth;
        if strong.anti_replay == AntiReplay::None {
            strong.anti_replay = add_replay;
        }
        let (_, handle) = settings();
        let mut request = GattRequest::write(handle, b"alarm=03:00".to_vec());
        request.freshness = fresh;
        request.auth_tag = tag;
        let security = LinkSecurity { encrypted, pairing_method: method };
        if write_with(&strong, security, &request, now_ms) {
            prop_assert!(write_with(&base, security, &request, now_ms));
        }
    }

    #[test]
    fn an_identical_fresh_write_lands_once(window_ms in 1u64..10_000, age in 0u64..10_000, now_ms in 10_000u64..1_000_000, nonce in any::<u64>()) {
        let (mut db, handle) = settings();
        let ts = now_ms - age.min(window_ms);
        for (policy, fresh) in [
            (AntiReplay::Timestamp { window_ms }, Freshness::TimestampMs(ts)),
            (AntiReplay::Nonce, Freshness::Nonce(nonce)),
        ] {
            let mut profile = SecurityProfile::permissive(RadioClass::Wearable);
            profile.anti_replay = policy;
            let mut guard = ReplayGuard::default();
            let mut request = GattRequest::write(handle, b"alarm=05:00".to_vec());
            request.freshness = Some(fresh);
            let mut send = || process_request(&mut db, &profile, &mut guard, None, LinkSecurity::default(), now_ms, &request);
            prop_assert!(send().is_ok());
            prop_assert!(send().is_err());
        }
        let profile = SecurityProfile::permissive(RadioClass::Wearable);
        let mut guard = ReplayGuard::default();
        let request = GattRequest::write(handle, b"alarm=05:00".to_vec());
        for _ in 0..2 {
            prop_assert!(process_request(&mut db, &profile, &mut guard, None, LinkSecurity::default(), now_ms, &request).is_ok());
        }
    }

    #[test]
    fn crack_returns_only_the_true_key(tk in 0u128..3_000, mrand in any::<[u8; 16]>(), srand in any::<[u8; 16]>(), slack in 1u128..50) {
        let transcript = PairingTranscript {
            method: Some(PairingMethod::PasskeyEntry),
            mconfirm: Some(confirm_value(tk, ConfirmRole::Initiator, &mrand)),
            sconfirm: Some(confirm_value(tk, ConfirmRole::Responder, &srand)),
            mrand: Some(mrand),
            srand: Some(srand),
            ..Default::default()
        };
        let found = crack_tk_with_budget(&transcript, tk + slack).unwrap();
        prop_assert_eq!(found.tk, tk);
        prop_assert_eq!(found.evaluations, tk as u64 + 2);
        prop_assert_eq!(crack_tk_with_budget(&transcript, tk), Err(AttackError::NotCrackable));
    }

    #[test]
    fn sniffing_recovers_interval_and_hop(
        hop in 5u8..=16, interval_ms in 7u16..200, anchor_channel in 0u8..37,
        anchor_us in 0u64..10_000_000, access_address in any::<u32>(), events in 6i64..40,
    ) {
        let truth = ConnectionParameters { access_address, interval_ms, hop_increment: hop, anchor_us, anchor_channel };
        let log: Vec<LinkLayerPdu> = (0..events)
            .map(|k| {
                let t = anchor_us + k as u64 * truth.interval_us() + 150;
                let meta = PduMeta { timestamp_us: t, tx_power_dbm: 0, sender: [1; 6] };
                LinkLayerPdu::new(truth.channel_at(t), access_address, PduType::Data, vec![0x02, 0x01], meta).unwrap()
            })
            .collect();
        let got = sniff_connection(&log).unwrap();
        prop_assert_eq!((got.access_address, got.interval_ms, got.hop_increment), (access_address, interval_ms, hop));
        for k in events..events + 2 * i64::from(DATA_CHANNELS) {
            let t = anchor_us + k as u64 * truth.interval_us() + truth.interval_us() / 2;
            prop_assert_eq!(got.channel_at(t), truth.channel_at(t), "event {}", k);
        }
    }

    #[test]
    fn capture_records_roundtrip(mut records in proptest::collection::vec(record(), 0..20)) {
        for (i, r) in records.iter_mut().enumerate() {
            r.seq = i as u64 * 3;
        }
        prop_assert_eq!(lab::parse_jsonl(&lab::to_jsonl(&records)).unwrap(), records);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenarios_roundtrip_through_toml(s in scenario()) {
        s.validate().unwrap();
        prop_assert_eq!(lab::parse_scenario(&s.to_toml()).unwrap(), s);
    }
}

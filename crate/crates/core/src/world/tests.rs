use std::collections::BTreeSet;

use super::*;
use crate::protocol::att::AttPdu;
use crate::protocol::gatt::{uuid16, CharacteristicSpec, GattDatabase, GattSpec, Property, ServiceSpec};
use crate::protocol::pdu::{header, PduMeta, DATA_CHANNELS};
use crate::protocol::profile::{AddressPolicy, AntiReplay, SecurityProfile};
use handlers::att_payload;

fn band_profile() -> SecurityProfile {
    SecurityProfile {
        pairing_method: PairingMethod::JustWorks,
        link_encryption: false,
        address_policy: AddressPolicy::Static,
        write_auth_required: false,
        anti_replay: AntiReplay::None,
        echo_rate_limit: None,
        discoverable: true,
        radio_class: RadioClass::Wearable,
    }
}

fn band_gatt() -> GattDatabase {
    GattDatabase::from_spec(&GattSpec {
        device_info: None,
        device_info_security: Default::default(),
        services: vec![ServiceSpec {
            uuid: uuid16(0x180D),
            characteristics: vec![
                CharacteristicSpec {
                    uuid: uuid16(0x2A37),
                    properties: BTreeSet::from([Property::Read, Property::Notify]),
                    security: Default::default(),
                    value: "bpm:70".into(),
                },
                CharacteristicSpec {
                    uuid: uuid16(0x2A39),
                    properties: BTreeSet::from([Property::Write]),
                    security: Default::default(),
                    value: String::new(),
                },
            ],
        }],
    })
    .unwrap()
}

fn add_band(w: &mut World, at: Point) -> EntityId {
    let device = Device::new("band", Role::Peripheral, band_profile(), band_gatt(), w.rng());
    w.add_device(device, at)
}

fn add_phone(w: &mut World, at: Point) -> EntityId {
    let device = Device::new("phone", Role::Central, SecurityProfile::phone(), GattDatabase::empty(), w.rng());
    w.add_device(device, at)
}

/// Connects an attacker and returns the link; `None` when out of range.
fn attacker_link(class: RadioClass, distance: f64, seed: u64) -> (World, EntityId, Option<LinkId>) {
    let mut w = World::new(seed);
    let band = add_band(&mut w, Point::new(0.0, 0.0));
    let attacker = w.add_attacker("attacker", class, Point::new(distance, 0.0));
    let link = w.connect(attacker, band, ATTACKER_INTERVAL_MS).ok();
    (w, attacker, link)
}

fn echo_pdu(w: &World, link: LinkId, sender: [u8; 6], at_us: u64, channel: u8) -> LinkLayerPdu {
    let meta = PduMeta { timestamp_us: at_us, tx_power_dbm: 20, sender };
    let mut payload = vec![header::SIGNALING];
    payload.extend_from_slice(&[b'x'; 32]);
    LinkLayerPdu::new(channel, w.links[link].state.access_address, PduType::L2capEchoReq, payload, meta).unwrap()
}

#[test]
fn laptop_at_80m_reaches_victim() {
    let (w, _, link) = attacker_link(RadioClass::Laptop, 80.0, 1);
    let link = link.expect("laptop class reaches 100 m");
    assert!(w.links[link].is_connected());
}

#[test]
fn smartphone_at_12m_delivers_nothing() {
    let (w, attacker, link) = attacker_link(RadioClass::Smartphone, 12.0, 1);
    assert!(link.is_none());
    assert!(w.capture.iter().filter(|c| c.transmitter == attacker).all(|c| c.delivered_to.is_empty()));
}

#[test]
fn zero_distance_delivers_for_every_class() {
    for class in [RadioClass::Wearable, RadioClass::Smartphone, RadioClass::Laptop] {
        let (_, _, link) = attacker_link(class, 0.0, 3);
        assert!(link.is_some(), "{class:?}");
    }
}

#[test]
fn injected_echo_on_current_channel_is_queued() {
    let (mut w, attacker, link) = attacker_link(RadioClass::Laptop, 5.0, 7);
    let link = link.unwrap();
    let at = w.links[link].state.anchor_at_or_after(w.clock_us() + 100_000);
    let channel = w.links[link].state.channel_at(at);
    let sender = w.entity(attacker).unwrap().address();
    let pdu = echo_pdu(&w, link, sender, at, channel);
    w.inject(pdu, attacker, at).unwrap();
    w.run_until(at);
    assert_eq!(w.links[link].echo_log.len(), 1);
    assert_eq!(w.links[link].state.echo.depth(), 1);

    let at = w.links[link].state.anchor_at_or_after(w.clock_us() + 100_000);
    let wrong = (w.links[link].state.channel_at(at) + 1) % DATA_CHANNELS;
    let pdu = echo_pdu(&w, link, sender, at, wrong);
    w.inject(pdu, attacker, at).unwrap();
    w.run_until(at);
    assert_eq!(w.links[link].echo_log.len(), 1);
}

#[test]
fn inject_in_the_past_is_refused() {
    let (mut w, attacker, link) = attacker_link(RadioClass::Laptop, 5.0, 7);
    let pdu = echo_pdu(&w, link.unwrap(), [0; 6], 0, 3);
    let now = w.clock_us();
    assert_eq!(w.inject(pdu, attacker, now - 1), Err(WorldError::TimeInPast { at_us: now - 1, clock_us: now }));
}

#[test]
fn empty_queue_step_is_a_no_op() {
    let mut w = World::new(0);
    assert!(w.step().is_empty());
    assert_eq!(w.clock_us(), 0);
}

#[test]
fn equal_times_run_in_entity_order() {
    let mut w = World::new(0);
    let a = w.add_attacker("a", RadioClass::Laptop, Point::new(0.0, 0.0));
    let b = w.add_attacker("b", RadioClass::Laptop, Point::new(1.0, 0.0));
    let pdu = |sender| {
        let meta = PduMeta { timestamp_us: 0, tx_power_dbm: 0, sender };
        LinkLayerPdu::new(38, crate::protocol::pdu::ADVERTISING_ACCESS_ADDRESS, PduType::AdvInd, vec![0; 6], meta)
            .unwrap()
    };
    w.inject(pdu([2; 6]), b, 10).unwrap();
    w.inject(pdu([1; 6]), a, 10).unwrap();
    w.run_until(10);
    let order: Vec<EntityId> = w.capture.iter().map(|c| c.transmitter).collect();
    assert_eq!(order, vec![a, b]);
}

fn owner_session(seed: u64) -> World {
    let mut w = World::new(seed);
    let band = add_band(&mut w, Point::new(0.0, 0.0));
    let phone = add_phone(&mut w, Point::new(1.0, 0.0));
    let owner = w.add_owner(phone, band, "alarm=07:00").unwrap();
    w.owner_connect(owner, true).unwrap();
    w.run_until(30_000_000);
    w
}

#[test]
fn identical_seeds_give_identical_captures() {
    let a = owner_session(11);
    let b = owner_session(11);
    assert_eq!(a.capture, b.capture);
    assert_ne!(a.capture, owner_session(12).capture);
}

#[test]
fn capture_is_causal_and_range_sound() {
    let w = owner_session(5);
    assert!(w.capture.windows(2).all(|p| p[0].pdu.meta.timestamp_us <= p[1].pdu.meta.timestamp_us));
    for entry in &w.capture {
        let sender = &w.entities[entry.transmitter];
        for &r in &entry.delivered_to {
            assert!(sender.position.distance(&w.entities[r].position) <= sender.range_m());
        }
    }
}

#[test]
fn owner_pairs_and_writes() {
    let w = owner_session(5);
    let band = w.device(0).unwrap();
    assert_eq!(band.write_log.len(), 1);
    assert_eq!(band.write_log[0].value, b"alarm=07:00");
    let phone = w.device(1).unwrap();
    assert_eq!(phone.bond_for(&band.identity()).map(|b| b.ltk), band.bonds.first().map(|b| b.ltk));
    assert!(w.capture.iter().any(|c| c.pdu.pdu_type == PduType::Data && c.pdu.header() == Some(header::ATT)));
}

/// One peripheral PDU per connection event over `events` events.
fn busy_connection(events: u64) -> (World, LinkId, u64) {
    let mut w = World::new(21);
    let band = add_band(&mut w, Point::new(0.0, 0.0));
    let phone = add_phone(&mut w, Point::new(1.0, 0.0));
    let link = w.connect(phone, band, 30).unwrap();
    let first = w.links[link].state.first_anchor_us;
    for k in 0..events {
        let payload = att_payload(&AttPdu::Notification { handle: 0x10, value: vec![k as u8] });
        w.send_slotted(link, Role::Peripheral, first + k * 30_000, payload);
    }
    (w, link, first)
}

#[test]
fn single_channel_tap_hears_one_in_37() {
    let (mut w, link, first) = busy_connection(3700);
    let sniffer = w.add_attacker("sniffer", RadioClass::Laptop, Point::new(3.0, 0.0));
    let tap = w.attach_tap(sniffer, TapMode::Channels(BTreeSet::from([5]))).unwrap();
    w.run_until(first + 3700 * 30_000);
    let link_pdus = w.capture.iter().filter(|c| c.link == Some(link) && c.pdu.pdu_type == PduType::Data).count();
    assert_eq!(link_pdus, 3700);
    assert_eq!(w.tap_log(tap).len(), 100);
}

#[test]
fn data_channels_follow_the_hop_law() {
    let (mut w, link, first) = busy_connection(200);
    w.run_until(first + 200 * 30_000);
    let hop = w.links[link].state.hop_increment as u64;
    for entry in w.capture.iter().filter(|c| c.link == Some(link) && !c.pdu.pdu_type.is_advertising()) {
        let k = (entry.pdu.meta.timestamp_us - first) / 30_000;
        assert_eq!(entry.pdu.channel as u64, (k + 1) * hop % 37);
    }
}

#[test]
fn out_of_range_tap_hears_nothing() {
    let (mut w, _, first) = busy_connection(50);
    let far = w.add_attacker("far", RadioClass::Smartphone, Point::new(40.0, 0.0));
    let tap = w.attach_tap(far, TapMode::Channels((0..40).collect())).unwrap();
    w.run_until(first + 50 * 30_000);
    assert!(w.tap_log(tap).is_empty());
}

#[test]
fn advertising_tap_hears_adverts() {
    let mut w = World::new(2);
    add_band(&mut w, Point::new(0.0, 0.0));
    let sniffer = w.add_attacker("sniffer", RadioClass::Laptop, Point::new(3.0, 0.0));
    let tap = w.attach_tap(sniffer, TapMode::advertising()).unwrap();
    w.run_until(10_000_000);
    let log = w.tap_log(tap);
    assert!(log.len() >= 12);
    assert!(log.iter().all(|p| p.pdu_type == PduType::AdvInd));
}

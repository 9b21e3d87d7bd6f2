//! Fingerprinting, blueprinting and blue stumbling.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::protocol::address::looks_static;
use crate::protocol::att::AttPdu;
use crate::protocol::gatt::{
    DeviceInfo, GattError, Property, DEVICE_INFORMATION_SERVICE, FIRMWARE_REVISION, MANUFACTURER_NAME, MODEL_NUMBER,
    SERIAL_NUMBER,
};
use crate::protocol::pdu::{Advertisement, LinkLayerPdu, PduType};
use crate::protocol::profile::PairingMethod;
use crate::protocol::smp::{PairingFeatures, SmpPdu};
use crate::protocol::Role;
use crate::world::{EntityId, World, WorldError, ATTACKER_INTERVAL_MS};

use super::{AttackError, AttackKind, AttackOutcome, Fact};

/// What one sighting window reveals about a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    /// Advertised address, kept only when it looks static.
    pub address_component: Option<[u8; 6]>,
    /// Sorted, deduplicated.
    pub uuid_set: Vec<u128>,
    pub info_component: Option<DeviceInfo>,
}

/// Builds a fingerprint from one device's advertisements in one window.
pub fn fingerprint(observations: &[LinkLayerPdu], info: Option<DeviceInfo>) -> Fingerprint {
    let adverts: Vec<Advertisement> = observations
        .iter()
        .filter(|p| p.pdu_type == PduType::AdvInd)
        .filter_map(|p| Advertisement::decode(&p.payload))
        .collect();
    let address_component = adverts.first().map(|a| a.address).filter(looks_static);
    let uuid_set: BTreeSet<u128> = adverts.iter().flat_map(|a| a.service_uuids.iter().copied()).collect();
    Fingerprint { address_component, uuid_set: uuid_set.into_iter().collect(), info_component: info }
}

/// Same device? An address match decides on its own; a UUID-set match
/// counts only together with matching device information, since many
/// products share UUIDs.
pub fn link(a: &Fingerprint, b: &Fingerprint) -> bool {
    if let (Some(x), Some(y)) = (a.address_component, b.address_component) {
        return x == y;
    }
    !a.uuid_set.is_empty()
        && a.uuid_set == b.uuid_set
        && a.info_component.is_some()
        && a.info_component == b.info_component
}

fn adverts_in(world: &World, heard: &[usize], from_us: u64, to_us: u64) -> BTreeMap<[u8; 6], Vec<usize>> {
    let mut by_sender: BTreeMap<[u8; 6], Vec<usize>> = BTreeMap::new();
    for &i in heard {
        let pdu = &world.capture[i].pdu;
        let t = pdu.meta.timestamp_us;
        if pdu.pdu_type == PduType::AdvInd && (from_us..=to_us).contains(&t) {
            by_sender.entry(pdu.meta.sender).or_default().push(i);
        }
    }
    by_sender
}

/// Tracking across two sighting windows: the target's fingerprint from the
/// first window must link to exactly one sender in the second, and that
/// sender must be the target.
pub fn track_across_windows(
    world: &World,
    target: EntityId,
    heard: &[usize],
    first: (u64, u64),
    second: (u64, u64),
) -> AttackOutcome {
    let mut outcome = AttackOutcome::new(AttackKind::Fingerprint);
    let pdus = |indices: &[usize]| indices.iter().map(|&i| world.capture[i].pdu.clone()).collect::<Vec<_>>();
    let early = adverts_in(world, heard, first.0, first.1);
    let Some((_, subject)) = early.iter().find(|(_, idx)| world.capture[idx[0]].transmitter == target) else {
        return outcome;
    };
    let reference = fingerprint(&pdus(subject), None);
    let late = adverts_in(world, heard, second.0, second.1);
    let linked: Vec<&Vec<usize>> =
        late.values().filter(|idx| link(&reference, &fingerprint(&pdus(idx), None))).collect();
    outcome.note(subject.iter().copied());
    if let [only] = linked.as_slice() {
        if world.capture[only[0]].transmitter == target {
            outcome.establish(Fact::DeviceTrackedAcrossSessions, [subject[0], only[0]]);
        }
    }
    outcome
}

/// Identity a connection to the device gives away.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceBlueprint {
    pub model: Option<String>,
    pub manufacturer: Option<String>,
    pub firmware: Option<String>,
    pub unique_id: Option<String>,
    pub service_uuids: Vec<u128>,
}

/// Connects, enumerates services, and reads each Device Information
/// characteristic the gate allows. A read refused for lack of security
/// triggers one pairing attempt and a retry. Finally every writable
/// characteristic outside Device Information gets an unauthenticated write:
/// those are the settings only the owner's app should change.
pub fn blueprint(
    world: &mut World,
    attacker: EntityId,
    target: EntityId,
) -> Result<(AttackOutcome, DeviceBlueprint), AttackError> {
    let link = match world.connect(attacker, target, ATTACKER_INTERVAL_MS) {
        Ok(link) => link,
        Err(WorldError::ConnectionFailed) => return Err(AttackError::NotConnected),
        Err(e) => return Err(e.into()),
    };
    let mut outcome = AttackOutcome::new(AttackKind::Blueprint);
    outcome.note([world.link(link)?.connect_index]);
    let discovery = world.att_request(link, &AttPdu::DiscoverReq)?;
    outcome.note([discovery.request_index, discovery.response_index]);
    let AttPdu::DiscoverRsp(services) = discovery.response else {
        world.terminate(link, Role::Central)?;
        return Ok((outcome, DeviceBlueprint::default()));
    };
    let mut print = DeviceBlueprint { service_uuids: services.iter().map(|s| s.uuid).collect(), ..Default::default() };

    let info_handles: Vec<(u128, u16)> = services
        .iter()
        .filter(|s| s.uuid == DEVICE_INFORMATION_SERVICE)
        .flat_map(|s| s.characteristics.iter())
        .filter(|c| c.properties.contains(&Property::Read))
        .map(|c| (c.uuid, c.handle))
        .collect();
    let mut paired = false;
    let mut identifying = Vec::new();
    for (uuid, handle) in info_handles {
        let mut exchange = world.att_request(link, &AttPdu::ReadReq { handle })?;
        let refused = |e: &AttPdu| matches!(e, AttPdu::ErrorRsp { code, .. } if *code == GattError::InsufficientSecurity.att_code());
        if refused(&exchange.response) && !paired {
            paired = true;
            if world.pair(link).is_ok() {
                exchange = world.att_request(link, &AttPdu::ReadReq { handle })?;
            }
        }
        outcome.note([exchange.request_index, exchange.response_index]);
        let AttPdu::ReadRsp { value } = exchange.response else { continue };
        let text = String::from_utf8_lossy(&value).into_owned();
        let slot = match uuid {
            MODEL_NUMBER => &mut print.model,
            MANUFACTURER_NAME => &mut print.manufacturer,
            FIRMWARE_REVISION => &mut print.firmware,
            SERIAL_NUMBER => &mut print.unique_id,
            _ => continue,
        };
        *slot = Some(text);
        if matches!(uuid, MODEL_NUMBER | MANUFACTURER_NAME) {
            identifying.push(exchange.response_index);
        }
    }
    outcome.establish(Fact::ModelIdentified, identifying);

    let writable: Vec<u16> = services
        .iter()
        .filter(|s| s.uuid != DEVICE_INFORMATION_SERVICE)
        .flat_map(|s| s.characteristics.iter())
        .filter(|c| c.properties.contains(&Property::Write))
        .map(|c| c.handle)
        .collect();
    for handle in writable {
        let write = AttPdu::WriteReq { handle, value: b"attacker".to_vec(), freshness: None, tag: None };
        let exchange = world.att_request(link, &write)?;
        outcome.note([exchange.request_index, exchange.response_index]);
        if exchange.response == AttPdu::WriteRsp {
            outcome.establish(Fact::ProtectedWriteSucceeded, [exchange.request_index, exchange.response_index]);
        }
    }
    if world.link(link)?.is_connected() {
        world.terminate(link, Role::Central)?;
    }
    Ok((outcome, print))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeaknessFlags {
    pub no_encryption: bool,
    pub just_works_only: bool,
    pub static_address: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StumbleEntry {
    pub address: [u8; 6],
    pub flags: WeaknessFlags,
    pub evidence: Vec<usize>,
}

/// Every advertiser heard in the window, with weaknesses read from its
/// advertisements and from any pairing response it sent.
pub fn stumble(world: &World, heard: &[usize], window: (u64, u64)) -> Vec<StumbleEntry> {
    let adverts = adverts_in(world, heard, window.0, window.1);
    let responses: Vec<(usize, [u8; 6], PairingFeatures)> = heard
        .iter()
        .filter_map(|&i| {
            let pdu = &world.capture[i].pdu;
            match (pdu.pdu_type, SmpPdu::decode(pdu.body())) {
                (PduType::Smp, Ok(SmpPdu::PairingResponse(f))) => Some((i, pdu.meta.sender, f)),
                _ => None,
            }
        })
        .collect();
    adverts
        .into_iter()
        .map(|(address, indices)| {
            let mut evidence = vec![indices[0]];
            let mut flags = WeaknessFlags { static_address: looks_static(&address), ..Default::default() };
            for (i, _, features) in responses.iter().filter(|(_, sender, _)| *sender == address) {
                flags.no_encryption |= !features.encryption;
                flags.just_works_only |= features.method == PairingMethod::JustWorks;
                evidence.push(*i);
            }
            StumbleEntry { address, flags, evidence }
        })
        .collect()
}

/// Stumbling with an active probe: for each advertiser heard in the window,
/// connect, offer the strongest pairing method, note the response and hang up.
pub fn probe_and_stumble(
    world: &mut World,
    attacker: EntityId,
    heard: &[usize],
    window: (u64, u64),
) -> Result<(AttackOutcome, Vec<StumbleEntry>), AttackError> {
    let mut outcome = AttackOutcome::new(AttackKind::Stumble);
    let advertisers: Vec<[u8; 6]> = adverts_in(world, heard, window.0, window.1).into_keys().collect();
    let mut probes = Vec::new();
    for address in advertisers {
        let Some(entity) =
            world.entities.iter().find(|e| e.active && e.address() == address && !e.is_attacker()).map(|e| e.id)
        else {
            continue;
        };
        let Ok(link) = world.connect(attacker, entity, ATTACKER_INTERVAL_MS) else { continue };
        let request = SmpPdu::PairingRequest(PairingFeatures {
            method: PairingMethod::SecureConnections,
            bonding: false,
            encryption: true,
        });
        world.send_smp(link, Role::Central, &request)?;
        let deadline = world.clock_us() + 500_000;
        world.run_until_condition(deadline, |w| !w.links[link].central_inbox.is_empty());
        probes.extend(world.link(link)?.central_inbox.iter().map(|m| m.capture_index));
        probes.push(world.link(link)?.connect_index);
        if world.link(link)?.is_connected() {
            world.terminate(link, Role::Central)?;
        }
    }
    let observed: Vec<usize> = heard.iter().copied().chain(probes.iter().copied()).collect();
    let entries = stumble(world, &observed, window);
    outcome.note(entries.iter().flat_map(|e| e.evidence.iter().copied()));
    Ok((outcome, entries))
}

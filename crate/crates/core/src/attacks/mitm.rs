//! Impostor peripheral relaying between the owner's phone and the target.

use rand::Rng;

use crate::protocol::att::AttPdu;
use crate::protocol::gatt::{Characteristic, GattDatabase, SecurityLevel, Service};
use crate::protocol::pdu::{LinkLayerPdu, PduMeta, PduType};
use crate::protocol::{Device, Role, SecurityProfile};
use crate::world::{EntityId, Relay, World, WorldError, ATTACKER_INTERVAL_MS};

use super::sniff::{connection_log, latest_connection_to, sniff_connection};
use super::{AttackError, AttackKind, AttackOutcome, Fact};

pub const DEFAULT_REPLACEMENT: &[u8] = b"alarm=03:00";

#[derive(Debug, Clone, PartialEq)]
pub struct MitmConfig {
    /// Value substituted into every relayed write; `None` relays unchanged.
    pub replacement: Option<Vec<u8>>,
    /// Probability that the injected terminate takes the owner's link down.
    pub takeover_probability: f64,
}

impl Default for MitmConfig {
    fn default() -> Self {
        Self { replacement: Some(DEFAULT_REPLACEMENT.to_vec()), takeover_probability: 1.0 }
    }
}

const SETTLE_US: u64 = 200_000;
const TERMINATE_REASON_REMOTE_USER: u8 = 0x13;

/// Clones the target's layout from a discovery over the attacker's own
/// connection. Values are not copied; the impostor answers from its own.
fn clone_layout(world: &mut World, link: usize) -> Result<GattDatabase, AttackError> {
    let exchange = world.att_request(link, &AttPdu::DiscoverReq)?;
    let AttPdu::DiscoverRsp(summary) = exchange.response else {
        return Ok(GattDatabase::empty());
    };
    let services = summary
        .into_iter()
        .map(|s| Service {
            uuid: s.uuid,
            characteristics: s
                .characteristics
                .into_iter()
                .map(|c| Characteristic {
                    uuid: c.uuid,
                    handle: c.handle,
                    properties: c.properties,
                    security: SecurityLevel::Open,
                    value: Vec::new(),
                })
                .collect(),
        })
        .collect();
    Ok(GattDatabase { services, device_info: None })
}

/// Full proxy: the attacker connects to the target, stands up an impostor
/// with the target's address and layout, knocks the owner's phone off its
/// link with a spoofed terminate and lets the phone reconnect to the
/// impostor, which relays (and optionally rewrites) its writes upstream.
///
/// A phone holding a bond with the target asks for encryption under the
/// bonded key, which the impostor cannot supply: [`AttackError::CloneRejected`].
/// Either way the owner ends up reconnected to the real target.
pub fn mitm_proxy(
    world: &mut World,
    attacker: EntityId,
    target: EntityId,
    heard: &[usize],
    config: &MitmConfig,
) -> Result<AttackOutcome, AttackError> {
    if !world.device(target)?.profile.discoverable {
        return Err(AttackError::NotDiscoverable);
    }
    let owner =
        world.owners.iter().position(|o| o.device == target && o.link.is_some()).ok_or(AttackError::NotConnected)?;
    let advertiser = world.entity(target)?.address();
    let connect = latest_connection_to(world, heard, advertiser).ok_or(AttackError::InsufficientObservations)?;
    let observed: Vec<LinkLayerPdu> =
        connection_log(world, heard, connect).iter().map(|&i| world.capture[i].pdu.clone()).collect();
    let params = sniff_connection(&observed)?;

    let upstream = match world.connect(attacker, target, ATTACKER_INTERVAL_MS) {
        Ok(link) => link,
        Err(WorldError::ConnectionFailed) => return Err(AttackError::OutOfRange),
        Err(e) => return Err(e.into()),
    };
    let mut outcome = AttackOutcome::new(AttackKind::Mitm);
    outcome.note([connect, world.link(upstream)?.connect_index]);
    let layout = clone_layout(world, upstream)?;

    let attacker_entity = world.entity(attacker)?.clone();
    let target_address = world.device(target)?.address.clone();
    let mut impostor_device = Device::new(
        format!("{}-impostor", world.entity(target)?.name),
        Role::Peripheral,
        SecurityProfile::permissive(attacker_entity.radio_class()),
        layout,
        world.rng(),
    );
    impostor_device.address = target_address;
    let impostor = world.add_device(impostor_device, attacker_entity.position);
    world.relays.insert(impostor, Relay { upstream, replacement: config.replacement.clone(), forwarded: Vec::new() });

    let result = takeover_and_relay(world, attacker, owner, impostor, params, config, &mut outcome);

    let dangling: Vec<usize> =
        world.links.iter().filter(|l| l.peripheral == impostor && l.is_connected()).map(|l| l.id).collect();
    for link in dangling {
        world.terminate(link, Role::Peripheral)?;
    }
    world.relays.remove(&impostor);
    world.retire(impostor)?;
    if world.link(upstream)?.is_connected() {
        world.terminate(upstream, Role::Central)?;
    }
    if world.owners[owner].link.is_none() {
        world.owner_connect(owner, world.owners[owner].secure)?;
    }
    result.map(|_| outcome)
}

fn takeover_and_relay(
    world: &mut World,
    attacker: EntityId,
    owner: usize,
    impostor: EntityId,
    params: crate::protocol::ConnectionParameters,
    config: &MitmConfig,
    outcome: &mut AttackOutcome,
) -> Result<(), AttackError> {
    let phone = world.owners[owner].phone;
    let target = world.owners[owner].device;
    let owner_link = world.owners[owner].link.ok_or(AttackError::NotConnected)?;
    if !world.rng().random_bool(config.takeover_probability.clamp(0.0, 1.0)) {
        return Ok(());
    }
    let at = params.anchor_at_or_after(world.clock_us()) + 1_000;
    let meta = PduMeta {
        timestamp_us: at,
        tx_power_dbm: world.entity(attacker)?.radio_class().tx_power_dbm(),
        sender: world.entity(phone)?.address(),
    };
    let terminate = LinkLayerPdu::new(
        params.channel_at(at),
        params.access_address,
        PduType::Terminate,
        vec![TERMINATE_REASON_REMOTE_USER],
        meta,
    )
    .map_err(WorldError::from)?;
    world.inject(terminate, attacker, at)?;
    world.run_until(at);
    if world.link(owner_link)?.is_connected() {
        return Ok(());
    }
    outcome.note(world.link(owner_link)?.terminated_by);

    let reconnect = world.owner_connect_to(owner, impostor);
    let impostor_links: Vec<usize> = world.links.iter().filter(|l| l.peripheral == impostor).map(|l| l.id).collect();
    outcome.note(impostor_links.iter().map(|&l| world.links[l].connect_index));
    match reconnect {
        Err(WorldError::EncryptionRejected) => return Err(AttackError::CloneRejected),
        Err(e) => return Err(e.into()),
        Ok(link) => {
            let write = world.link(link)?.last_sent[0];
            outcome.establish(Fact::ImpersonationAccepted, [world.link(link)?.connect_index].into_iter().chain(write));
            let settle = world.clock_us() + SETTLE_US;
            world.run_until(settle);
        }
    }

    let forwarded = world.relays.get(&impostor).map(|r| r.forwarded.clone()).unwrap_or_default();
    outcome.note(forwarded.iter().copied());
    let altered: Vec<usize> = match &config.replacement {
        Some(replacement) => world
            .device(target)?
            .write_log
            .iter()
            .filter(|w| {
                w.capture_index.is_some_and(|i| forwarded.contains(&i))
                    && w.value != world.owners[owner].settings
                    && &w.value == replacement
            })
            .filter_map(|w| w.capture_index)
            .collect(),
        None => Vec::new(),
    };
    outcome.establish(Fact::PayloadAlteredUndetected, altered);
    Ok(())
}

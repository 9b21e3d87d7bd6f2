//! Deterministic discrete-event radio world.
//!
//! Every transmission is appended to the capture and delivered to the
//! entities that are in the sender's range and listening on its channel.
//! Events are ordered by `(time, entity id, insertion order)`; all
//! randomness comes from one seeded generator, so a run is a pure function
//! of the seed and the calls made on the world.

mod handlers;
mod procedures;
mod tap;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Key128;
use crate::protocol::connection::{ConnectionState, Direction};
use crate::protocol::echo::{EchoConfig, EchoResult};
use crate::protocol::pairing::PairingSession;
use crate::protocol::pdu::{is_advertising_channel, LinkLayerPdu, PduType, ADVERTISING_CHANNELS};
use crate::protocol::profile::{PairingMethod, RadioClass};
use crate::protocol::{Device, ProtocolError, Role};

pub use procedures::settings_handle;
pub use procedures::{
    AttExchange, ADV_INTERVAL_US, APP_INTERVAL_US, ATTACKER_INTERVAL_MS, OWNER_INTERVAL_MS, REPLY_DELAY_US,
};
pub use tap::{parameters_from_connect_request, Tap, TapId, TapMode};

pub type EntityId = usize;
pub type LinkId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Received signal strength for capture realism only.
pub fn path_loss_rssi(tx_power_dbm: i8, distance_m: f64) -> i32 {
    (f64::from(tx_power_dbm) - 40.0 - 20.0 * distance_m.max(1.0).log10()).round() as i32
}

#[derive(Debug, Clone)]
pub struct Attacker {
    pub radio_class: RadioClass,
    pub address: [u8; 6],
}

#[derive(Debug, Clone)]
pub enum EntityKind {
    Device(Box<Device>),
    Attacker(Attacker),
}

#[derive(Debug, Clone)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub position: Point,
    pub kind: EntityKind,
    /// Retired entities neither transmit nor receive.
    pub active: bool,
}

impl Entity {
    pub fn radio_class(&self) -> RadioClass {
        match &self.kind {
            EntityKind::Device(d) => d.profile.radio_class,
            EntityKind::Attacker(a) => a.radio_class,
        }
    }

    pub fn range_m(&self) -> f64 {
        self.radio_class().max_range_m()
    }

    /// Current over-the-air address.
    pub fn address(&self) -> [u8; 6] {
        match &self.kind {
            EntityKind::Device(d) => d.address.bytes,
            EntityKind::Attacker(a) => a.address,
        }
    }

    pub fn identity(&self) -> [u8; 6] {
        match &self.kind {
            EntityKind::Device(d) => d.identity(),
            EntityKind::Attacker(a) => a.address,
        }
    }

    pub fn device(&self) -> Option<&Device> {
        match &self.kind {
            EntityKind::Device(d) => Some(d),
            EntityKind::Attacker(_) => None,
        }
    }

    pub fn device_mut(&mut self) -> Option<&mut Device> {
        match &mut self.kind {
            EntityKind::Device(d) => Some(d),
            EntityKind::Attacker(_) => None,
        }
    }

    pub fn is_attacker(&self) -> bool {
        matches!(self.kind, EntityKind::Attacker(_))
    }
}

/// One transmission as the world saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureEntry {
    pub pdu: LinkLayerPdu,
    /// Entity that physically transmitted; may differ from `pdu.meta.sender` when spoofed.
    pub transmitter: EntityId,
    pub rssi_dbm: i32,
    pub delivered_to: Vec<EntityId>,
    /// Link whose endpoints received the PDU, if any.
    pub link: Option<LinkId>,
}

/// A data PDU as the central endpoint received it, after decryption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inbound {
    pub at_us: u64,
    pub capture_index: usize,
    pub pdu_type: PduType,
    pub header: u8,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EchoRecord {
    pub capture_index: usize,
    pub at_us: u64,
    pub result: EchoResult,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub id: LinkId,
    pub central: EntityId,
    pub peripheral: EntityId,
    pub state: ConnectionState,
    pub connect_index: usize,
    pub pairing: Option<PairingSession>,
    pub pairing_failed: Option<u8>,
    pub encryption_started: bool,
    pub encryption_rejected: bool,
    pub central_inbox: Vec<Inbound>,
    pub echo_log: Vec<EchoRecord>,
    /// Capture index of the PDU that ended the link.
    pub terminated_by: Option<usize>,
    /// Ciphertexts that failed verification at either endpoint.
    pub integrity_failures: Vec<usize>,
    /// Capture index of the latest PDU each role sent, central first.
    pub last_sent: [Option<usize>; 2],
    skd_central: Option<[u8; 8]>,
    pending_key: Option<(Key128, Option<PairingMethod>)>,
    busy_until: [u64; 2],
}

impl Link {
    pub fn is_connected(&self) -> bool {
        self.state.connected
    }

    pub fn role_of(&self, entity: EntityId) -> Option<Role> {
        if entity == self.central {
            Some(Role::Central)
        } else if entity == self.peripheral {
            Some(Role::Peripheral)
        } else {
            None
        }
    }
}

fn direction_from(sender: Role) -> Direction {
    match sender {
        Role::Central => Direction::CentralToPeripheral,
        Role::Peripheral => Direction::PeripheralToCentral,
    }
}

/// Owner's phone and the device it manages.
#[derive(Debug, Clone)]
pub struct Ownership {
    pub phone: EntityId,
    pub device: EntityId,
    pub app_key: Key128,
    pub link: Option<LinkId>,
    /// Value the owner's app keeps the settings characteristic at.
    pub settings: Vec<u8>,
    /// The app pairs (or uses its bond) before talking to the device.
    pub secure: bool,
}

/// Mutating relay installed on an impostor peripheral.
#[derive(Debug, Clone)]
pub struct Relay {
    pub upstream: LinkId,
    pub replacement: Option<Vec<u8>>,
    /// Capture indices of the writes forwarded upstream.
    pub forwarded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinkPayload {
    Framed { pdu_type: PduType, header: u8, body: Vec<u8> },
    Terminate { reason: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Transmit(LinkLayerPdu),
    LinkSend { link: LinkId, from: Role, payload: LinkPayload },
    AdvTick,
    AppTick,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("event time {at_us} µs is before the clock ({clock_us} µs)")]
    TimeInPast { at_us: u64, clock_us: u64 },
    #[error("no such entity {0}")]
    UnknownEntity(EntityId),
    #[error("entity {0} is not a device")]
    NotADevice(EntityId),
    #[error("no such link {0}")]
    UnknownLink(LinkId),
    #[error("link {0} is not connected")]
    NotConnected(LinkId),
    #[error("connection request was not accepted")]
    ConnectionFailed,
    #[error("peer did not respond")]
    NoResponse,
    #[error("pairing failed with reason {0:#04x}")]
    PairingFailed(u8),
    #[error("peer rejected link encryption")]
    EncryptionRejected,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

pub struct World {
    pub seed: u64,
    clock_us: u64,
    rng: ChaCha8Rng,
    pub entities: Vec<Entity>,
    pub links: Vec<Link>,
    pub taps: Vec<Tap>,
    pub owners: Vec<Ownership>,
    pub relays: BTreeMap<EntityId, Relay>,
    pub capture: Vec<CaptureEntry>,
    pub echo_config: EchoConfig,
    queue: BTreeMap<(u64, EntityId, u64), Action>,
    next_seq: u64,
    /// Last advertisement per (device, channel).
    adv_seen: BTreeMap<(EntityId, u8), u64>,
}

impl World {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            clock_us: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            entities: Vec::new(),
            links: Vec::new(),
            taps: Vec::new(),
            owners: Vec::new(),
            relays: BTreeMap::new(),
            capture: Vec::new(),
            echo_config: EchoConfig::default(),
            queue: BTreeMap::new(),
            next_seq: 0,
            adv_seen: BTreeMap::new(),
        }
    }

    pub fn clock_us(&self) -> u64 {
        self.clock_us
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn entity(&self, id: EntityId) -> Result<&Entity, WorldError> {
        self.entities.get(id).ok_or(WorldError::UnknownEntity(id))
    }

    pub fn device(&self, id: EntityId) -> Result<&Device, WorldError> {
        self.entity(id)?.device().ok_or(WorldError::NotADevice(id))
    }

    pub fn device_mut(&mut self, id: EntityId) -> Result<&mut Device, WorldError> {
        self.entities.get_mut(id).ok_or(WorldError::UnknownEntity(id))?.device_mut().ok_or(WorldError::NotADevice(id))
    }

    pub fn link(&self, id: LinkId) -> Result<&Link, WorldError> {
        self.links.get(id).ok_or(WorldError::UnknownLink(id))
    }

    pub fn find_entity(&self, name: &str) -> Option<EntityId> {
        self.entities.iter().find(|e| e.name == name).map(|e| e.id)
    }

    /// Adds a device. Peripherals start advertising and, when they have a
    /// notify characteristic, streaming sensor values to their owner.
    pub fn add_device(&mut self, device: Device, position: Point) -> EntityId {
        let id = self.entities.len();
        let name = device.name.clone();
        let peripheral = device.role == Role::Peripheral;
        self.entities.push(Entity { id, name, position, kind: EntityKind::Device(Box::new(device)), active: true });
        if peripheral {
            let jitter = self.rng.random_range(0..ADV_INTERVAL_US / 4);
            self.schedule_unchecked(self.clock_us + jitter, id, Action::AdvTick);
            let jitter = self.rng.random_range(0..APP_INTERVAL_US / 4);
            self.schedule_unchecked(self.clock_us + APP_INTERVAL_US + jitter, id, Action::AppTick);
        }
        id
    }

    pub fn add_attacker(&mut self, name: impl Into<String>, radio_class: RadioClass, position: Point) -> EntityId {
        let id = self.entities.len();
        let mut address: [u8; 6] = self.rng.random();
        address[0] |= 0b1100_0000;
        self.entities.push(Entity {
            id,
            name: name.into(),
            position,
            kind: EntityKind::Attacker(Attacker { radio_class, address }),
            active: true,
        });
        id
    }

    pub fn retire(&mut self, id: EntityId) -> Result<(), WorldError> {
        let entity = self.entities.get_mut(id).ok_or(WorldError::UnknownEntity(id))?;
        entity.active = false;
        self.queue.retain(|&(_, owner, _), _| owner != id);
        Ok(())
    }

    fn schedule_unchecked(&mut self, at_us: u64, entity: EntityId, action: Action) {
        self.queue.insert((at_us, entity, self.next_seq), action);
        self.next_seq += 1;
    }

    pub fn schedule(&mut self, at_us: u64, entity: EntityId, action: Action) -> Result<(), WorldError> {
        if at_us < self.clock_us {
            return Err(WorldError::TimeInPast { at_us, clock_us: self.clock_us });
        }
        self.entity(entity)?;
        self.schedule_unchecked(at_us, entity, action);
        Ok(())
    }

    /// Schedules `pdu` as if `attacker` transmitted it at `at_us`; the range
    /// and channel rules apply as for any transmission.
    pub fn inject(&mut self, pdu: LinkLayerPdu, attacker: EntityId, at_us: u64) -> Result<(), WorldError> {
        self.schedule(at_us, attacker, Action::Transmit(pdu))
    }

    pub fn next_event_time(&self) -> Option<u64> {
        self.queue.keys().next().map(|&(t, _, _)| t)
    }

    /// Processes the earliest event; returns the capture indices it appended.
    pub fn step(&mut self) -> Vec<usize> {
        let Some(((at_us, entity, _), action)) = self.queue.pop_first() else {
            return Vec::new();
        };
        self.clock_us = self.clock_us.max(at_us);
        if !self.entities[entity].active {
            return Vec::new();
        }
        let before = self.capture.len();
        self.execute(entity, action);
        (before..self.capture.len()).collect()
    }

    /// Processes every event up to and including `t_us`, then sets the clock to `t_us`.
    pub fn run_until(&mut self, t_us: u64) {
        while self.next_event_time().is_some_and(|t| t <= t_us) {
            self.step();
        }
        self.clock_us = self.clock_us.max(t_us);
    }

    /// Steps until `done` holds or the next event lies past `deadline_us`.
    pub fn run_until_condition(&mut self, deadline_us: u64, mut done: impl FnMut(&World) -> bool) -> bool {
        loop {
            if done(self) {
                return true;
            }
            match self.next_event_time() {
                Some(t) if t <= deadline_us => {
                    self.step();
                }
                _ => {
                    self.clock_us = self.clock_us.max(deadline_us);
                    return done(self);
                }
            }
        }
    }

    fn execute(&mut self, entity: EntityId, action: Action) {
        match action {
            Action::Transmit(pdu) => {
                self.transmit_now(entity, pdu, None);
            }
            Action::LinkSend { link, from, payload } => self.link_send_now(entity, link, from, payload),
            Action::AdvTick => {
                let now = self.clock_us;
                let device = self.entities[entity].device_mut().expect("adv ticks are scheduled for devices");
                device.rotate_address(now, &mut self.rng);
                let adverts: Vec<LinkLayerPdu> =
                    ADVERTISING_CHANNELS.iter().filter_map(|&c| device.advertise_on(now, c)).collect();
                for pdu in adverts {
                    self.transmit_now(entity, pdu, None);
                }
                self.schedule_unchecked(now + ADV_INTERVAL_US, entity, Action::AdvTick);
            }
            Action::AppTick => {
                self.app_tick(entity);
                self.schedule_unchecked(self.clock_us + APP_INTERVAL_US, entity, Action::AppTick);
            }
        }
    }

    /// Puts `pdu` on the air now and hands it to every receiver.
    pub(crate) fn transmit_now(
        &mut self,
        transmitter: EntityId,
        mut pdu: LinkLayerPdu,
        own_link: Option<LinkId>,
    ) -> usize {
        let now = self.clock_us;
        pdu.meta.timestamp_us = now;
        let origin = self.entities[transmitter].position;
        let range = self.entities[transmitter].range_m();
        let in_range = |e: &Entity| e.active && e.id != transmitter && origin.distance(&e.position) <= range;

        let mut receivers: Vec<(EntityId, Option<LinkId>)> = Vec::new();
        let mut link_hit = own_link;
        if is_advertising_channel(pdu.channel) {
            if pdu.pdu_type == PduType::AdvInd {
                self.adv_seen.insert((transmitter, pdu.channel), now);
            }
            for e in self.entities.iter().filter(|e| in_range(e) && e.device().is_some()) {
                receivers.push((e.id, None));
            }
        } else {
            for link in self.links.iter().filter(|l| {
                l.state.connected
                    && l.state.access_address == pdu.access_address
                    && l.state.channel_at(now) == pdu.channel
            }) {
                for endpoint in [link.central, link.peripheral] {
                    let e = &self.entities[endpoint];
                    if in_range(e) && e.address() != pdu.meta.sender {
                        receivers.push((endpoint, Some(link.id)));
                        link_hit = Some(link.id);
                    }
                }
            }
        }

        let hearing_taps: Vec<usize> = self
            .taps
            .iter()
            .enumerate()
            .filter(|(_, tap)| tap.active && tap.hears(&pdu, now, transmitter, &origin, &self.entities[tap.owner]))
            .map(|(i, _)| i)
            .collect();

        let nearest = receivers
            .iter()
            .map(|(id, _)| origin.distance(&self.entities[*id].position))
            .chain(hearing_taps.iter().map(|&i| origin.distance(&self.entities[self.taps[i].owner].position)))
            .fold(f64::INFINITY, f64::min);
        let distance = if nearest.is_finite() { nearest } else { 1.0 };
        let rssi_dbm = path_loss_rssi(pdu.meta.tx_power_dbm, distance);

        let index = self.capture.len();
        self.capture.push(CaptureEntry {
            pdu: pdu.clone(),
            transmitter,
            rssi_dbm,
            delivered_to: receivers.iter().map(|(id, _)| *id).collect(),
            link: link_hit,
        });
        for i in hearing_taps {
            self.taps[i].record(index, &pdu);
        }
        for (receiver, link) in receivers {
            self.receive(receiver, link, index);
        }
        index
    }
}

#[cfg(test)]
mod tests;

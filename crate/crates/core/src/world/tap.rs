use std::collections::BTreeSet;

use crate::protocol::connection::{ConnectionParameters, TRANSMIT_WINDOW_OFFSET_US};
use crate::protocol::pdu::{is_advertising_channel, ConnectRequest, LinkLayerPdu, PduType, DATA_CHANNELS};

use super::{Entity, EntityId, Point, World, WorldError};

pub type TapId = usize;

/// What a tap's receiver is tuned to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TapMode {
    /// Fixed channel set.
    Channels(BTreeSet<u8>),
    /// Retunes every connection event of one connection.
    Follow(ConnectionParameters),
    /// Advertising channels, plus every connection whose connect request it heard.
    Monitor { followed: Vec<ConnectionParameters> },
}

impl TapMode {
    pub fn advertising() -> Self {
        TapMode::Channels(BTreeSet::from([37, 38, 39]))
    }

    pub fn monitor() -> Self {
        TapMode::Monitor { followed: Vec::new() }
    }
}

/// Passive receiver owned by an attacker. Taps never transmit.
#[derive(Debug, Clone)]
pub struct Tap {
    pub id: TapId,
    pub owner: EntityId,
    pub mode: TapMode,
    /// Capture indices heard, in order.
    pub log: Vec<usize>,
    pub active: bool,
}

/// Parameters a sniffer reads from a connect request heard at `at_us`.
pub fn parameters_from_connect_request(req: &ConnectRequest, at_us: u64) -> ConnectionParameters {
    ConnectionParameters {
        access_address: req.access_address,
        interval_ms: req.interval_ms.max(1),
        hop_increment: req.hop_increment,
        anchor_us: at_us + TRANSMIT_WINDOW_OFFSET_US,
        anchor_channel: req.hop_increment % DATA_CHANNELS,
    }
}

impl Tap {
    fn tuned(&self, pdu: &LinkLayerPdu, now_us: u64) -> bool {
        let follows =
            |p: &ConnectionParameters| p.access_address == pdu.access_address && p.channel_at(now_us) == pdu.channel;
        match &self.mode {
            TapMode::Channels(channels) => channels.contains(&pdu.channel),
            TapMode::Follow(params) => follows(params),
            TapMode::Monitor { followed } => is_advertising_channel(pdu.channel) || followed.iter().any(follows),
        }
    }

    /// In range of the tap's own radio and tuned to the channel. A tap never
    /// hears its owner's transmissions.
    pub(super) fn hears(
        &self,
        pdu: &LinkLayerPdu,
        now_us: u64,
        transmitter: EntityId,
        origin: &Point,
        owner: &Entity,
    ) -> bool {
        owner.active
            && transmitter != owner.id
            && origin.distance(&owner.position) <= owner.range_m()
            && self.tuned(pdu, now_us)
    }

    pub(super) fn record(&mut self, index: usize, pdu: &LinkLayerPdu) {
        self.log.push(index);
        if let TapMode::Monitor { followed } = &mut self.mode {
            if pdu.pdu_type == PduType::ConnectReq {
                if let Some(req) = ConnectRequest::decode(&pdu.payload) {
                    followed.push(parameters_from_connect_request(&req, pdu.meta.timestamp_us));
                }
            }
        }
    }
}

impl World {
    pub fn attach_tap(&mut self, owner: EntityId, mode: TapMode) -> Result<TapId, WorldError> {
        self.entity(owner)?;
        let id = self.taps.len();
        self.taps.push(Tap { id, owner, mode, log: Vec::new(), active: true });
        Ok(id)
    }

    pub fn detach_tap(&mut self, tap: TapId) {
        if let Some(t) = self.taps.get_mut(tap) {
            t.active = false;
        }
    }

    pub fn tap_log(&self, tap: TapId) -> Vec<&LinkLayerPdu> {
        self.taps.get(tap).map(|t| t.log.iter().map(|&i| &self.capture[i].pdu).collect()).unwrap_or_default()
    }
}

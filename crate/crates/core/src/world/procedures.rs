//! Blocking procedures that drive endpoints through multi-PDU exchanges by
//! advancing the world until the exchange completes.

use rand::Rng;

use crate::protocol::att::{opcode, AttPdu};
use crate::protocol::control::ControlPdu;
use crate::protocol::gatt::{Freshness, GattRequest, Property, DEVICE_INFORMATION_SERVICE};
use crate::protocol::pairing::PairingPhase;
use crate::protocol::pdu::{
    header, ConnectRequest, LinkLayerPdu, PduMeta, PduType, ADVERTISING_ACCESS_ADDRESS, ADVERTISING_CHANNELS,
};
use crate::protocol::profile::{AntiReplay, PairingMethod};
use crate::protocol::smp::{PairingFeatures, SmpPdu};
use crate::protocol::{connection::HOP_RANGE, Role};

use super::handlers::{att_payload, control_payload, framed, smp_payload, REASON_USER_TERMINATED};
use super::{EntityId, LinkId, LinkPayload, World, WorldError};

pub const ADV_INTERVAL_US: u64 = 2_000_000;
pub const APP_INTERVAL_US: u64 = 5_000_000;
/// Inter-frame spacing between a PDU and its answer.
pub const REPLY_DELAY_US: u64 = 150;
/// Airtime reserved per PDU when one side sends several in one event.
pub(super) const SLOT_US: u64 = 300;
pub const OWNER_INTERVAL_MS: u16 = 50;
pub const ATTACKER_INTERVAL_MS: u16 = 30;
const RESPONSE_TIMEOUT_US: u64 = 1_000_000;
const PAIRING_TIMEOUT_US: u64 = 3_000_000;

/// One ATT request and the response the central received.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttExchange {
    pub request_index: usize,
    pub response_index: usize,
    pub response: AttPdu,
}

fn is_att_response(op: u8) -> bool {
    matches!(op, opcode::ERROR_RSP | opcode::READ_RSP | opcode::WRITE_RSP | opcode::DISCOVER_RSP)
}

/// Owner-app settings characteristic: the first writable one outside Device Information.
pub fn settings_handle(device: &crate::protocol::Device) -> Option<u16> {
    device
        .gatt
        .services
        .iter()
        .filter(|s| s.uuid != DEVICE_INFORMATION_SERVICE)
        .flat_map(|s| s.characteristics.iter())
        .find(|c| c.allows(Property::Write))
        .map(|c| c.handle)
}

impl World {
    /// Registers `phone` as the owner of `device`, sharing a fresh app key
    /// with the device. Returns the ownership index.
    pub fn add_owner(
        &mut self,
        phone: EntityId,
        device: EntityId,
        settings: impl Into<Vec<u8>>,
    ) -> Result<usize, WorldError> {
        self.device(phone)?;
        self.device(device)?;
        let app_key: crate::crypto::Key128 = self.rng.random();
        self.device_mut(device)?.app_key = Some(app_key);
        self.owners.push(super::Ownership {
            phone,
            device,
            app_key,
            link: None,
            settings: settings.into(),
            secure: false,
        });
        Ok(self.owners.len() - 1)
    }

    fn live_link(&self, link: LinkId) -> Result<(), WorldError> {
        if self.link(link)?.state.connected {
            Ok(())
        } else {
            Err(WorldError::NotConnected(link))
        }
    }

    /// Initiator answers an advertisement of `target` with a connect request.
    /// Non-discoverable targets are addressed directly without an advertisement.
    pub fn connect(&mut self, initiator: EntityId, target: EntityId, interval_ms: u16) -> Result<LinkId, WorldError> {
        let now = self.clock_us;
        let target_entity = self.entity(target)?;
        let advertiser = target_entity.address();
        let tx_power = self.entity(initiator)?.radio_class().tx_power_dbm();
        let initiator_address = self.entity(initiator)?.address();
        let channel = ADVERTISING_CHANNELS[0];
        if let Some(adv) = self.device(target)?.advertise_on(now, channel) {
            self.transmit_now(target, adv, None);
        }
        let mut access_address: u32 = self.rng.random();
        while access_address == ADVERTISING_ACCESS_ADDRESS {
            access_address = self.rng.random();
        }
        let hop_increment = self.rng.random_range(HOP_RANGE);
        let request =
            ConnectRequest { initiator: initiator_address, advertiser, access_address, interval_ms, hop_increment };
        self.run_until(now + REPLY_DELAY_US);
        let meta = PduMeta { timestamp_us: self.clock_us, tx_power_dbm: tx_power, sender: initiator_address };
        let pdu = LinkLayerPdu::new(channel, ADVERTISING_ACCESS_ADDRESS, PduType::ConnectReq, request.encode(), meta)?;
        let index = self.transmit_now(initiator, pdu, None);
        self.links
            .iter()
            .find(|l| l.connect_index == index && l.peripheral == target)
            .map(|l| l.id)
            .ok_or(WorldError::ConnectionFailed)
    }

    /// Sends `payload` from one endpoint at its next transmit opportunity.
    pub fn send(&mut self, link: LinkId, from: Role, payload: LinkPayload) -> Result<u64, WorldError> {
        self.live_link(link)?;
        let now = self.clock_us;
        Ok(self.send_slotted(link, from, now, payload))
    }

    /// Schedules an echo request carrying `size` bytes at or after `at_us`.
    pub fn queue_echo(&mut self, link: LinkId, size: usize, at_us: u64) -> Result<u64, WorldError> {
        self.live_link(link)?;
        if at_us < self.clock_us {
            return Err(WorldError::TimeInPast { at_us, clock_us: self.clock_us });
        }
        let body: Vec<u8> = (0..size).map(|i| b'a' + (i % 26) as u8).collect();
        Ok(self.send_slotted(link, Role::Central, at_us, framed(PduType::L2capEchoReq, header::SIGNALING, body)))
    }

    pub fn terminate(&mut self, link: LinkId, by: Role) -> Result<usize, WorldError> {
        self.send(link, by, LinkPayload::Terminate { reason: REASON_USER_TERMINATED })?;
        let deadline = self.clock_us + RESPONSE_TIMEOUT_US;
        self.run_until_condition(deadline, |w| w.links[link].terminated_by.is_some());
        self.links[link].terminated_by.ok_or(WorldError::NoResponse)
    }

    /// Central-driven legacy pairing; the peripheral answers on its own.
    /// Returns the negotiated method once both sides hold the bond.
    pub fn pair(&mut self, link: LinkId) -> Result<PairingMethod, WorldError> {
        self.live_link(link)?;
        let l = &self.links[link];
        let (central, peripheral) = (l.central, l.peripheral);
        let capability = self.entities[central]
            .device()
            .map(|d| d.profile.pairing_method)
            .unwrap_or(PairingMethod::SecureConnections);
        let keep_encrypted = self.entities[central].device().is_some_and(|d| d.profile.link_encryption);
        let peripheral_identity = self.entities[peripheral].identity();
        let peripheral_keeps_encryption = self.device(peripheral)?.profile.link_encryption;
        self.links[link].pairing = None;
        self.links[link].pairing_failed = None;
        let request =
            SmpPdu::PairingRequest(PairingFeatures { method: capability, bonding: true, encryption: keep_encrypted });
        self.send(link, Role::Central, smp_payload(&request))?;
        let deadline = self.clock_us + PAIRING_TIMEOUT_US;
        self.run_until_condition(deadline, |w| {
            let l = &w.links[link];
            if l.pairing_failed.is_some() || !l.state.connected {
                return true;
            }
            let Some(session) = l.pairing.as_ref().filter(|s| s.phase == PairingPhase::Complete) else { return false };
            let bonded = w.entities[central]
                .device()
                .and_then(|d| d.bond_for(&peripheral_identity))
                .is_some_and(|b| Some(b.ltk) == session.ltk);
            bonded && (peripheral_keeps_encryption || !l.state.is_encrypted())
        });
        let l = &self.links[link];
        if let Some(reason) = l.pairing_failed {
            return Err(WorldError::PairingFailed(reason));
        }
        match l.pairing.as_ref() {
            Some(s) if s.phase == PairingPhase::Complete => Ok(s.method),
            _ => Err(WorldError::NoResponse),
        }
    }

    /// Bonded reconnection: the central asks for encryption under the stored
    /// LTK without any pairing exchange.
    pub fn encrypt_bonded(&mut self, link: LinkId) -> Result<(), WorldError> {
        self.live_link(link)?;
        let peripheral = self.links[link].peripheral;
        let peripheral_keeps_encryption = self.device(peripheral)?.profile.link_encryption;
        self.links[link].encryption_started = false;
        self.links[link].encryption_rejected = false;
        let skd: [u8; 8] = self.rng.random();
        self.links[link].skd_central = Some(skd);
        self.send(link, Role::Central, control_payload(&ControlPdu::EncReq { skd }))?;
        let deadline = self.clock_us + RESPONSE_TIMEOUT_US;
        self.run_until_condition(deadline, |w| {
            let l = &w.links[link];
            l.encryption_rejected
                || !l.state.connected
                || (l.encryption_started && (peripheral_keeps_encryption || !l.state.is_encrypted()))
        });
        let l = &self.links[link];
        if l.encryption_rejected {
            Err(WorldError::EncryptionRejected)
        } else if l.encryption_started {
            Ok(())
        } else {
            Err(WorldError::NoResponse)
        }
    }

    /// Sends an ATT request from the central and waits for its response.
    pub fn att_request(&mut self, link: LinkId, request: &AttPdu) -> Result<AttExchange, WorldError> {
        self.live_link(link)?;
        let seen = self.links[link].central_inbox.len();
        self.send(link, Role::Central, att_payload(request))?;
        let deadline = self.clock_us + RESPONSE_TIMEOUT_US;
        let found = |w: &World| {
            w.links[link].central_inbox[seen..]
                .iter()
                .find(|m| m.header == header::ATT && m.body.first().copied().is_some_and(is_att_response))
                .cloned()
        };
        self.run_until_condition(deadline, |w| found(w).is_some() || !w.links[link].state.connected);
        let inbound = found(self).ok_or(WorldError::NoResponse)?;
        let response = AttPdu::decode(&inbound.body)?;
        let request_index =
            self.links[link].last_sent[0].filter(|&i| i < inbound.capture_index).ok_or(WorldError::NoResponse)?;
        Ok(AttExchange { request_index, response_index: inbound.capture_index, response })
    }

    /// The owner's app writes its settings value, attaching whatever
    /// freshness and authentication the device's profile demands.
    pub fn owner_write(&mut self, owner: usize, value: &[u8]) -> Result<AttExchange, WorldError> {
        let ownership = self.owners.get(owner).ok_or(WorldError::UnknownEntity(owner))?.clone();
        let link = ownership.link.ok_or(WorldError::NotConnected(usize::MAX))?;
        let device = self.device(ownership.device)?;
        let handle = settings_handle(device).ok_or(WorldError::NoResponse)?;
        let profile = device.profile.clone();
        let freshness = match profile.anti_replay {
            AntiReplay::None => None,
            AntiReplay::Timestamp { .. } => Some(Freshness::TimestampMs(self.clock_us / 1_000)),
            AntiReplay::Nonce => Some(Freshness::Nonce(self.rng.random())),
        };
        let mut request = GattRequest::write(handle, value.to_vec());
        request.freshness = freshness;
        if profile.write_auth_required {
            request = request.signed(&ownership.app_key);
        }
        self.owners[owner].settings = value.to_vec();
        self.att_request(link, &AttPdu::from_request(&request))
    }

    /// Owner's phone connects to its device, secures the link (pairing the
    /// first time, bonded encryption afterwards) and syncs its settings.
    pub fn owner_connect(&mut self, owner: usize, secure: bool) -> Result<LinkId, WorldError> {
        let device = self.owners.get(owner).ok_or(WorldError::UnknownEntity(owner))?.device;
        self.owners[owner].secure = secure;
        self.owner_connect_to(owner, device)
    }

    /// Like [`World::owner_connect`], but the phone answers whichever
    /// peripheral `answering` is; the app believes it is its own device.
    pub fn owner_connect_to(&mut self, owner: usize, answering: EntityId) -> Result<LinkId, WorldError> {
        let ownership = self.owners.get(owner).ok_or(WorldError::UnknownEntity(owner))?.clone();
        let link = self.connect(ownership.phone, answering, OWNER_INTERVAL_MS)?;
        if ownership.secure {
            let identity = self.entity(answering)?.identity();
            if self.device(ownership.phone)?.bond_for(&identity).is_some() {
                self.encrypt_bonded(link)?;
            } else {
                self.pair(link)?;
            }
        }
        self.owners[owner].link = Some(link);
        let settings = ownership.settings.clone();
        self.owner_write(owner, &settings)?;
        Ok(link)
    }

    pub fn send_att(&mut self, link: LinkId, from: Role, att: &AttPdu) -> Result<u64, WorldError> {
        self.send(link, from, att_payload(att))
    }

    pub fn send_smp(&mut self, link: LinkId, from: Role, smp: &SmpPdu) -> Result<u64, WorldError> {
        self.send(link, from, smp_payload(smp))
    }

    pub fn send_control(&mut self, link: LinkId, from: Role, control: &ControlPdu) -> Result<u64, WorldError> {
        self.send(link, from, control_payload(control))
    }
}

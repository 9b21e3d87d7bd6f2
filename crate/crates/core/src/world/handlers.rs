//! Receive path and autonomous endpoint behavior.

use rand::Rng;

use crate::protocol::att::AttPdu;
use crate::protocol::connection::ConnectionState;
use crate::protocol::control::{ControlPdu, REASON_PIN_OR_KEY_MISSING};
use crate::protocol::gatt::{GattError, GattResponse, LinkSecurity};
use crate::protocol::pairing::{confirm_value, session_key, ConfirmRole, PairingPhase, PairingSession};
use crate::protocol::pdu::{header, ConnectRequest, LinkLayerPdu, PduMeta, PduType};
use crate::protocol::smp::{PairingFeatures, SmpPdu, REASON_CONFIRM_MISMATCH, REASON_PAIRING_NOT_SUPPORTED};
use crate::protocol::{BondRecord, Role};

use super::procedures::{REPLY_DELAY_US, SLOT_US};
use super::{direction_from, Action, EchoRecord, EntityId, Inbound, Link, LinkId, LinkPayload, World};

/// Reason a victim gives when it drops a connection for lack of resources.
pub const REASON_LOW_RESOURCES: u8 = 0x14;
/// Reason used by a central ending a connection normally.
pub const REASON_USER_TERMINATED: u8 = 0x13;

/// Accepting device must have advertised on the request's channel this recently.
const ADV_ACCEPT_WINDOW_US: u64 = 1_000;

fn other(role: Role) -> Role {
    match role {
        Role::Central => Role::Peripheral,
        Role::Peripheral => Role::Central,
    }
}

fn role_index(role: Role) -> usize {
    match role {
        Role::Central => 0,
        Role::Peripheral => 1,
    }
}

pub(super) fn framed(pdu_type: PduType, header: u8, body: Vec<u8>) -> LinkPayload {
    LinkPayload::Framed { pdu_type, header, body }
}

pub(super) fn att_payload(att: &AttPdu) -> LinkPayload {
    framed(PduType::Data, header::ATT, att.encode())
}

pub(super) fn smp_payload(smp: &SmpPdu) -> LinkPayload {
    framed(PduType::Smp, header::SMP, smp.encode())
}

pub(super) fn control_payload(control: &ControlPdu) -> LinkPayload {
    framed(PduType::Data, header::CONTROL, control.encode())
}

impl World {
    fn endpoint(&self, link: LinkId, role: Role) -> EntityId {
        match role {
            Role::Central => self.links[link].central,
            Role::Peripheral => self.links[link].peripheral,
        }
    }

    /// Schedules a PDU `delay_us` after now, answering something just received.
    pub(super) fn reply(&mut self, link: LinkId, from: Role, delay_us: u64, payload: LinkPayload) {
        let entity = self.endpoint(link, from);
        self.schedule_unchecked(self.clock_us + delay_us, entity, Action::LinkSend { link, from, payload });
    }

    /// First transmit opportunity for `from` at or after `earliest_us`: the
    /// central speaks at the event anchor, the peripheral one reply delay
    /// later, and back-to-back PDUs stay inside one event.
    pub(super) fn slot(&mut self, link: LinkId, from: Role, earliest_us: u64) -> u64 {
        let l = &mut self.links[link];
        let params = l.state.parameters();
        let interval = params.interval_us();
        let busy = l.busy_until[role_index(from)];
        let offset = match from {
            Role::Central => 0,
            Role::Peripheral => REPLY_DELAY_US,
        };
        let mut t = if busy > earliest_us { busy } else { l.state.anchor_at_or_after(earliest_us) + offset };
        let event_start = l.state.anchor_at_or_after(t + 1) - interval;
        if t + SLOT_US > event_start + interval {
            t = event_start + interval + offset;
        }
        l.busy_until[role_index(from)] = t + SLOT_US;
        t
    }

    pub(super) fn send_slotted(&mut self, link: LinkId, from: Role, earliest_us: u64, payload: LinkPayload) -> u64 {
        let at = self.slot(link, from, earliest_us);
        let entity = self.endpoint(link, from);
        self.schedule_unchecked(at, entity, Action::LinkSend { link, from, payload });
        at
    }

    fn end_link(&mut self, link: LinkId, index: usize) {
        let l = &mut self.links[link];
        l.state.connected = false;
        l.terminated_by.get_or_insert(index);
        for owner in self.owners.iter_mut().filter(|o| o.link == Some(link)) {
            owner.link = None;
        }
    }

    pub(super) fn link_send_now(&mut self, entity: EntityId, link: LinkId, from: Role, payload: LinkPayload) {
        let now = self.clock_us;
        {
            let l = &self.links[link];
            let terminate = matches!(payload, LinkPayload::Terminate { .. });
            if l.terminated_by.is_some() || (!l.state.connected && !terminate) {
                return;
            }
        }
        let sender = &self.entities[entity];
        let meta =
            PduMeta { timestamp_us: now, tx_power_dbm: sender.radio_class().tx_power_dbm(), sender: sender.address() };
        let state = &mut self.links[link].state;
        let channel = state.channel_at(now);
        let access_address = state.access_address;
        let (pdu_type, bytes, control) = match &payload {
            LinkPayload::Terminate { reason } => (PduType::Terminate, vec![*reason], None),
            LinkPayload::Framed { pdu_type, header: h, body } => {
                let sealed = if *h == header::CONTROL { body.clone() } else { state.seal(direction_from(from), body) };
                let control = if *h == header::CONTROL { ControlPdu::decode(body).ok() } else { None };
                (*pdu_type, [&[*h][..], &sealed].concat(), control)
            }
        };
        let pdu = LinkLayerPdu::new(channel, access_address, pdu_type, bytes, meta)
            .expect("data channel from the hop sequence");
        let index = self.transmit_now(entity, pdu, Some(link));
        self.links[link].last_sent[role_index(from)] = Some(index);

        if let LinkPayload::Framed { header: header::ATT, .. } = payload {
            for relay in self.relays.values_mut().filter(|r| r.upstream == link && from == Role::Central) {
                relay.forwarded.push(index);
            }
        }
        match payload {
            LinkPayload::Terminate { .. } => self.end_link(link, index),
            LinkPayload::Framed { .. } => match control {
                Some(ControlPdu::StartEnc) => self.after_start_encryption(link),
                Some(ControlPdu::PauseEnc) => self.links[link].state.set_encryption(None),
                _ => {}
            },
        }
    }

    /// Encryption is live for every later PDU. During pairing the peripheral
    /// now distributes its LTK; a peripheral that does not keep links
    /// encrypted then pauses encryption.
    fn after_start_encryption(&mut self, link: LinkId) {
        let Some((key, method)) = self.links[link].pending_key.take() else { return };
        let l = &mut self.links[link];
        l.state.set_encryption(Some(key));
        l.state.pairing_method = method;
        l.encryption_started = true;
        let (central, peripheral) = (l.central, l.peripheral);
        let keep_encrypted = self.entities[peripheral].device().is_some_and(|d| d.profile.link_encryption);
        let mut delay = REPLY_DELAY_US;
        let distributing = self.links[link].pairing.as_ref().is_some_and(|s| s.phase == PairingPhase::KeyGeneration);
        if distributing {
            let ltk: [u8; 16] = self.rng.random();
            let central_identity = self.entities[central].identity();
            let peripheral_identity = self.entities[peripheral].identity();
            let session = self.links[link].pairing.as_mut().expect("checked above");
            session.start_encryption();
            if let Ok((_, for_peripheral)) = session.distribute_ltk(ltk, central_identity, peripheral_identity) {
                self.links[link].state.bond = Some(for_peripheral.clone());
                if let Some(device) = self.entities[peripheral].device_mut() {
                    device.store_bond(for_peripheral);
                }
                self.reply(link, Role::Peripheral, delay, smp_payload(&SmpPdu::EncryptionInformation(ltk)));
                delay += REPLY_DELAY_US;
            }
        }
        if !keep_encrypted {
            self.reply(link, Role::Peripheral, delay, control_payload(&ControlPdu::PauseEnc));
        }
    }

    pub(super) fn receive(&mut self, receiver: EntityId, link: Option<LinkId>, index: usize) {
        let pdu = self.capture[index].pdu.clone();
        match link {
            None if pdu.pdu_type == PduType::ConnectReq => self.on_connect_request(receiver, index, &pdu),
            None => {}
            Some(link) => self.on_link_pdu(receiver, link, index, &pdu),
        }
    }

    fn on_connect_request(&mut self, receiver: EntityId, index: usize, pdu: &LinkLayerPdu) {
        let Some(req) = ConnectRequest::decode(&pdu.payload) else { return };
        let now = self.clock_us;
        let transmitter = self.capture[index].transmitter;
        let initiator_identity = self.entities[transmitter].identity();
        let Some(device) = self.entities[receiver].device() else { return };
        if device.role != Role::Peripheral || device.address.bytes != req.advertiser {
            return;
        }
        if self.links.iter().any(|l| l.connect_index == index) {
            return;
        }
        let advertised =
            self.adv_seen.get(&(receiver, pdu.channel)).is_some_and(|&t| now.saturating_sub(t) <= ADV_ACCEPT_WINDOW_US);
        let known_peer = device.bond_for(&initiator_identity).is_some()
            || self.owners.iter().any(|o| o.device == receiver && o.phone == transmitter);
        if !(advertised || (!device.profile.discoverable && known_peer)) {
            return;
        }
        let Ok(state) =
            ConnectionState::new(req.access_address, req.interval_ms, req.hop_increment, now, self.echo_config)
        else {
            return;
        };
        let id = self.links.len();
        self.links.push(Link {
            id,
            central: transmitter,
            peripheral: receiver,
            state,
            connect_index: index,
            pairing: None,
            pairing_failed: None,
            encryption_started: false,
            encryption_rejected: false,
            central_inbox: Vec::new(),
            echo_log: Vec::new(),
            terminated_by: None,
            integrity_failures: Vec::new(),
            last_sent: [None; 2],
            skd_central: None,
            pending_key: None,
            busy_until: [0; 2],
        });
    }

    fn on_link_pdu(&mut self, receiver: EntityId, link: LinkId, index: usize, pdu: &LinkLayerPdu) {
        let Some(role) = self.links[link].role_of(receiver) else { return };
        if pdu.pdu_type == PduType::Terminate {
            self.end_link(link, index);
            return;
        }
        let Some((&h, body)) = pdu.payload.split_first() else { return };
        let body = if h == header::CONTROL {
            body.to_vec()
        } else {
            match self.links[link].state.open(direction_from(other(role)), body) {
                Ok(plain) => plain,
                Err(_) => {
                    self.links[link].integrity_failures.push(index);
                    return;
                }
            }
        };
        match role {
            Role::Central => {
                let now = self.clock_us;
                self.links[link].central_inbox.push(Inbound {
                    at_us: now,
                    capture_index: index,
                    pdu_type: pdu.pdu_type,
                    header: h,
                    body: body.clone(),
                });
                self.central_receive(link, receiver, h, &body);
            }
            Role::Peripheral => self.peripheral_receive(link, receiver, index, pdu.pdu_type, h, &body),
        }
    }

    fn central_receive(&mut self, link: LinkId, central: EntityId, h: u8, body: &[u8]) {
        match h {
            header::CONTROL => {
                if let Ok(ControlPdu::Reject { .. }) = ControlPdu::decode(body) {
                    self.links[link].encryption_rejected = true;
                }
            }
            header::SMP => {
                let Ok(smp) = SmpPdu::decode(body) else { return };
                if let SmpPdu::PairingFailed(reason) = smp {
                    self.links[link].pairing_failed = Some(reason);
                    return;
                }
                // Only real centrals carry the pairing forward on their own.
                if self.entities[central].device().is_none() {
                    return;
                }
                self.central_smp(link, central, smp);
            }
            _ => {}
        }
    }

    fn central_smp(&mut self, link: LinkId, central: EntityId, smp: SmpPdu) {
        let peer_identity = self.entities[self.links[link].peripheral].identity();
        let Some(session) = self.links[link].pairing.as_mut() else { return };
        let reply = match smp {
            SmpPdu::PairingResponse(_) if session.phase == PairingPhase::FeatureExchange => {
                match session.derive_stk() {
                    Ok(_) => smp_payload(&SmpPdu::PairingConfirm(session.mconfirm)),
                    Err(_) => return,
                }
            }
            SmpPdu::PairingConfirm(_) => smp_payload(&SmpPdu::PairingRandom(session.mrand)),
            SmpPdu::PairingRandom(srand) => {
                if confirm_value(session.tk, ConfirmRole::Responder, &srand) != session.sconfirm {
                    smp_payload(&SmpPdu::PairingFailed(REASON_CONFIRM_MISMATCH))
                } else {
                    let skd: [u8; 8] = self.rng.random();
                    self.links[link].skd_central = Some(skd);
                    control_payload(&ControlPdu::EncReq { skd })
                }
            }
            SmpPdu::EncryptionInformation(ltk) => {
                let record = BondRecord { peer_identity, ltk, method: session.method };
                if let Some(device) = self.entities[central].device_mut() {
                    device.store_bond(record);
                }
                return;
            }
            _ => return,
        };
        self.reply(link, Role::Central, REPLY_DELAY_US, reply);
    }

    fn peripheral_receive(
        &mut self,
        link: LinkId,
        peripheral: EntityId,
        index: usize,
        pdu_type: PduType,
        h: u8,
        body: &[u8],
    ) {
        match h {
            header::CONTROL => {
                if let Ok(ControlPdu::EncReq { skd }) = ControlPdu::decode(body) {
                    self.peripheral_enc_req(link, peripheral, skd);
                }
            }
            header::SMP => {
                if let Ok(smp) = SmpPdu::decode(body) {
                    self.peripheral_smp(link, peripheral, smp);
                }
            }
            header::ATT => {
                if let Ok(att) = AttPdu::decode(body) {
                    self.peripheral_att(link, peripheral, index, att);
                }
            }
            header::SIGNALING if pdu_type == PduType::L2capEchoReq => {
                self.peripheral_echo(link, peripheral, index, body)
            }
            _ => {}
        }
    }

    fn peripheral_enc_req(&mut self, link: LinkId, peripheral: EntityId, skd_central: [u8; 8]) {
        let central_identity = self.entities[self.links[link].central].identity();
        let l = &self.links[link];
        let key = match l.pairing.as_ref().filter(|s| s.phase == PairingPhase::KeyGeneration) {
            Some(session) => session.stk.map(|stk| (stk, session.method)),
            None => self.entities[peripheral]
                .device()
                .and_then(|d| d.bond_for(&central_identity))
                .map(|b| (b.ltk, b.method)),
        };
        let Some((key, method)) = key else {
            let reject = ControlPdu::Reject { reason: REASON_PIN_OR_KEY_MISSING };
            self.reply(link, Role::Peripheral, REPLY_DELAY_US, control_payload(&reject));
            return;
        };
        let skd: [u8; 8] = self.rng.random();
        self.links[link].pending_key = Some((session_key(&key, &skd_central, &skd), Some(method)));
        self.reply(link, Role::Peripheral, REPLY_DELAY_US, control_payload(&ControlPdu::EncRsp { skd }));
        self.reply(link, Role::Peripheral, 2 * REPLY_DELAY_US, control_payload(&ControlPdu::StartEnc));
    }

    fn peripheral_smp(&mut self, link: LinkId, peripheral: EntityId, smp: SmpPdu) {
        let Some(device) = self.entities[peripheral].device() else { return };
        let offered = device.profile.pairing_method;
        let keep_encrypted = device.profile.link_encryption;
        let response = match smp {
            SmpPdu::PairingRequest(features) => match PairingSession::initiate(features.method, offered, &mut self.rng)
            {
                Ok(session) => {
                    let method = session.method;
                    self.links[link].pairing = Some(session);
                    SmpPdu::PairingResponse(PairingFeatures { method, bonding: true, encryption: keep_encrypted })
                }
                Err(_) => {
                    self.links[link].pairing_failed = Some(REASON_PAIRING_NOT_SUPPORTED);
                    SmpPdu::PairingFailed(REASON_PAIRING_NOT_SUPPORTED)
                }
            },
            SmpPdu::PairingConfirm(_) => match &self.links[link].pairing {
                Some(s) if s.phase == PairingPhase::KeyGeneration => SmpPdu::PairingConfirm(s.sconfirm),
                _ => return,
            },
            SmpPdu::PairingRandom(mrand) => match &self.links[link].pairing {
                Some(s) if s.phase == PairingPhase::KeyGeneration => {
                    if confirm_value(s.tk, ConfirmRole::Initiator, &mrand) == s.mconfirm {
                        SmpPdu::PairingRandom(s.srand)
                    } else {
                        SmpPdu::PairingFailed(REASON_CONFIRM_MISMATCH)
                    }
                }
                _ => return,
            },
            _ => return,
        };
        self.reply(link, Role::Peripheral, REPLY_DELAY_US, smp_payload(&response));
    }

    fn peripheral_att(&mut self, link: LinkId, peripheral: EntityId, index: usize, att: AttPdu) {
        let now = self.clock_us;
        if let (Some(relay), AttPdu::WriteReq { handle, value, freshness, tag }) = (self.relays.get(&peripheral), &att)
        {
            let upstream = relay.upstream;
            let forwarded = AttPdu::WriteReq {
                handle: *handle,
                value: relay.replacement.clone().unwrap_or_else(|| value.clone()),
                freshness: *freshness,
                tag: *tag,
            };
            if self.links[upstream].state.connected {
                self.send_slotted(upstream, Role::Central, now, att_payload(&forwarded));
            }
        }
        let security = LinkSecurity {
            encrypted: self.links[link].state.is_encrypted(),
            pairing_method: self.links[link].state.pairing_method,
        };
        let Some(device) = self.entities[peripheral].device_mut() else { return };
        let response = match &att {
            AttPdu::DiscoverReq => AttPdu::DiscoverRsp(device.gatt.discover()),
            AttPdu::ReadReq { .. } | AttPdu::WriteReq { .. } => {
                let request = att.to_request().expect("read or write");
                match device.handle_request(security, now, &request, Some(index)) {
                    Ok(GattResponse::Value(value)) => AttPdu::ReadRsp { value },
                    Ok(GattResponse::Written) => AttPdu::WriteRsp,
                    Err(e) => error_response(&att, request.handle, e),
                }
            }
            _ => return,
        };
        self.reply(link, Role::Peripheral, REPLY_DELAY_US, att_payload(&response));
    }

    fn peripheral_echo(&mut self, link: LinkId, peripheral: EntityId, index: usize, body: &[u8]) {
        let now = self.clock_us;
        let rate_limit = self.entities[peripheral].device().and_then(|d| d.profile.echo_rate_limit);
        let Ok(result) = self.links[link].state.l2cap_echo(body.len(), now, rate_limit) else { return };
        self.links[link].echo_log.push(EchoRecord { capture_index: index, at_us: now, result });
        if let Some(rtt) = result.rtt_us {
            self.reply(link, Role::Peripheral, rtt, framed(PduType::L2capEchoRsp, header::SIGNALING, body.to_vec()));
        }
        if result.terminate {
            self.reply(link, Role::Peripheral, REPLY_DELAY_US, LinkPayload::Terminate { reason: REASON_LOW_RESOURCES });
        }
    }

    /// Periodic sensor notification from a peripheral to its owner.
    pub(super) fn app_tick(&mut self, device_id: EntityId) {
        let Some(link) = self.owners.iter().find(|o| o.device == device_id).and_then(|o| o.link) else { return };
        if !self.links[link].state.connected {
            return;
        }
        let increment: u64 = self.rng.random_range(1..40);
        let Some(device) = self.entities[device_id].device_mut() else { return };
        let Some(handle) = device.gatt.notify_handle() else { return };
        let characteristic = device.gatt.characteristic_mut(handle).expect("notify handle exists");
        characteristic.value = next_reading(&characteristic.value, increment);
        let value = characteristic.value.clone();
        let now = self.clock_us;
        self.send_slotted(link, Role::Peripheral, now, att_payload(&AttPdu::Notification { handle, value }));
    }
}

fn error_response(att: &AttPdu, handle: u16, error: GattError) -> AttPdu {
    AttPdu::ErrorRsp { request_opcode: att.opcode(), handle, code: error.att_code() }
}

/// Advances a `label:count` sensor reading; other values are left as they are.
fn next_reading(value: &[u8], increment: u64) -> Vec<u8> {
    let text = String::from_utf8_lossy(value);
    match text.rsplit_once(':') {
        Some((label, count)) => match count.parse::<u64>() {
            Ok(n) => format!("{label}:{}", n + increment).into_bytes(),
            Err(_) => value.to_vec(),
        },
        None => value.to_vec(),
    }
}

//! Passive connection recovery and following.

use std::collections::BTreeMap;

use crate::protocol::att::AttPdu;
use crate::protocol::connection::{ConnectionParameters, HOP_RANGE};
use crate::protocol::control::ControlPdu;
use crate::protocol::pdu::{header, is_data_channel, ConnectRequest, LinkLayerPdu, PduType, DATA_CHANNELS};
use crate::world::{parameters_from_connect_request, EntityId, TapMode, World};

use super::{AttackError, AttackKind, AttackOutcome, Fact};

/// Longest connection interval a central may choose.
const MAX_INTERVAL_MS: u64 = 4_000;
const MIN_OBSERVATIONS: usize = 3;
/// Timing slack when matching an observation to a connection event.
const MAX_TOLERANCE_US: u64 = 1_000;

/// Recovers a connection's hopping parameters from sniffed PDUs.
///
/// A captured connect request is read directly (the latest one wins).
/// Otherwise the most common data-channel access address is taken and the
/// interval and hop increment are searched for: every observed run of PDUs
/// on one channel must sit on an event boundary, and its channel must follow
/// `c0 + k·hop (mod 37)`. The largest consistent interval with a unique hop
/// wins, since every divisor of the true interval is also time-consistent.
pub fn sniff_connection(log: &[LinkLayerPdu]) -> Result<ConnectionParameters, AttackError> {
    if let Some((pdu, req)) = log
        .iter()
        .rev()
        .filter(|p| p.pdu_type == PduType::ConnectReq)
        .find_map(|p| ConnectRequest::decode(&p.payload).map(|r| (p, r)))
    {
        return Ok(parameters_from_connect_request(&req, pdu.meta.timestamp_us));
    }

    let mut per_address: BTreeMap<u32, Vec<&LinkLayerPdu>> = BTreeMap::new();
    for pdu in log.iter().filter(|p| is_data_channel(p.channel)) {
        per_address.entry(pdu.access_address).or_default().push(pdu);
    }
    let (&access_address, pdus) = per_address
        .iter()
        .max_by_key(|(aa, pdus)| (pdus.len(), std::cmp::Reverse(**aa)))
        .ok_or(AttackError::InsufficientObservations)?;
    if pdus.len() < MIN_OBSERVATIONS {
        return Err(AttackError::InsufficientObservations);
    }
    let mut sorted = pdus.clone();
    sorted.sort_by_key(|p| p.meta.timestamp_us);

    // First PDU of every run on one channel; consecutive events never share a channel.
    let mut runs: Vec<(u64, u8)> = Vec::new();
    for p in sorted {
        if runs.last().is_none_or(|&(_, c)| c != p.channel) {
            runs.push((p.meta.timestamp_us, p.channel));
        }
    }
    if runs.len() < 2 {
        return Err(AttackError::InsufficientObservations);
    }

    let (t0, c0) = runs[0];
    for interval_ms in (1..=MAX_INTERVAL_MS).rev() {
        let interval = interval_ms * 1_000;
        let tolerance = MAX_TOLERANCE_US.min(interval / 4);
        let mut events = Vec::with_capacity(runs.len());
        let timed = runs.iter().all(|&(t, _)| {
            let d = t - t0;
            let k = (d + interval / 2) / interval;
            let residual = (d as i64 - (k * interval) as i64).unsigned_abs();
            events.push(k);
            residual <= tolerance
        });
        if !timed || events.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        let hops: Vec<u8> = HOP_RANGE
            .filter(|&h| {
                runs.iter()
                    .zip(&events)
                    .all(|(&(_, c), &k)| (u64::from(c0) + k * u64::from(h)) % u64::from(DATA_CHANNELS) == u64::from(c))
            })
            .collect();
        match hops.as_slice() {
            [hop] => {
                let anchor = runs.iter().zip(&events).map(|(&(t, _), &k)| t - k * interval).min().unwrap_or(t0);
                return Ok(ConnectionParameters {
                    access_address,
                    interval_ms: interval_ms as u16,
                    hop_increment: *hop,
                    anchor_us: anchor.saturating_sub(tolerance),
                    anchor_channel: c0,
                });
            }
            [] => continue,
            _ => return Err(AttackError::InsufficientObservations),
        }
    }
    Err(AttackError::InsufficientObservations)
}

/// Retunes a tap with every hop of the connection for `duration_us`;
/// returns the capture indices heard. Out of range means an empty result.
pub fn follow_connection(
    world: &mut World,
    attacker: EntityId,
    params: ConnectionParameters,
    duration_us: u64,
) -> Result<Vec<usize>, AttackError> {
    let tap = world.attach_tap(attacker, TapMode::Follow(params))?;
    let end = world.clock_us() + duration_us;
    world.run_until(end);
    world.detach_tap(tap);
    Ok(world.taps[tap].log.clone())
}

/// An application value that crossed the air in the clear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaintextValue {
    pub capture_index: usize,
    pub handle: Option<u16>,
    pub value: Vec<u8>,
}

/// ATT values readable without any key. Encryption state is tracked per
/// access address from the cleartext control PDUs: START_ENC switches it on,
/// PAUSE_ENC off.
pub fn plaintext_values<'a>(entries: impl IntoIterator<Item = (usize, &'a LinkLayerPdu)>) -> Vec<PlaintextValue> {
    let mut encrypted: BTreeMap<u32, bool> = BTreeMap::new();
    let mut out = Vec::new();
    for (index, pdu) in entries {
        if pdu.pdu_type.is_advertising() {
            continue;
        }
        match pdu.header() {
            Some(header::CONTROL) => match ControlPdu::decode(pdu.body()) {
                Ok(ControlPdu::StartEnc) => {
                    encrypted.insert(pdu.access_address, true);
                }
                Ok(ControlPdu::PauseEnc) => {
                    encrypted.insert(pdu.access_address, false);
                }
                _ => {}
            },
            Some(header::ATT) if !encrypted.get(&pdu.access_address).copied().unwrap_or(false) => {
                let (handle, value) = match AttPdu::decode(pdu.body()) {
                    Ok(AttPdu::Notification { handle, value }) => (Some(handle), value),
                    Ok(AttPdu::WriteReq { handle, value, .. }) => (Some(handle), value),
                    Ok(AttPdu::ReadRsp { value }) => (None, value),
                    _ => continue,
                };
                if !value.is_empty() {
                    out.push(PlaintextValue { capture_index: index, handle, value });
                }
            }
            _ => {}
        }
    }
    out
}

/// Every connect request in `indices` addressed to `advertiser`, oldest
/// first, with the access address it assigned.
pub fn connections_to(world: &World, indices: &[usize], advertiser: [u8; 6]) -> Vec<(usize, u32)> {
    indices
        .iter()
        .filter_map(|&i| {
            let pdu = &world.capture[i].pdu;
            if pdu.pdu_type != PduType::ConnectReq {
                return None;
            }
            ConnectRequest::decode(&pdu.payload).filter(|r| r.advertiser == advertiser).map(|r| (i, r.access_address))
        })
        .collect()
}

/// The connect request at `connect` and everything heard after it on the
/// access address it assigned.
pub fn connection_log(world: &World, heard: &[usize], connect: usize) -> Vec<usize> {
    let Some(req) = ConnectRequest::decode(&world.capture[connect].pdu.payload) else { return Vec::new() };
    heard
        .iter()
        .copied()
        .filter(|&i| {
            let pdu = &world.capture[i].pdu;
            i == connect || (i > connect && !pdu.pdu_type.is_advertising() && pdu.access_address == req.access_address)
        })
        .collect()
}

/// Latest connect request in `indices` addressed to `advertiser`.
pub fn latest_connection_to(world: &World, indices: &[usize], advertiser: [u8; 6]) -> Option<usize> {
    indices.iter().rev().copied().find(|&i| {
        let pdu = &world.capture[i].pdu;
        pdu.pdu_type == PduType::ConnectReq
            && ConnectRequest::decode(&pdu.payload).is_some_and(|r| r.advertiser == advertiser)
    })
}

/// Recovers the target's current connection from what the attacker has
/// already heard, follows it for `follow_us`, and reports any cleartext
/// application data.
pub fn sniff_and_follow(
    world: &mut World,
    attacker: EntityId,
    advertiser: [u8; 6],
    heard: &[usize],
    follow_us: u64,
) -> Result<AttackOutcome, AttackError> {
    let connect = latest_connection_to(world, heard, advertiser).ok_or(AttackError::InsufficientObservations)?;
    let observed = connection_log(world, heard, connect);
    let log: Vec<LinkLayerPdu> = observed.iter().map(|&i| world.capture[i].pdu.clone()).collect();
    let params = sniff_connection(&log)?;
    let followed = follow_connection(world, attacker, params, follow_us)?;

    let mut outcome = AttackOutcome::new(AttackKind::Sniff);
    let on_link: Vec<usize> = observed
        .into_iter()
        .chain(followed)
        .filter(|&i| {
            let pdu = &world.capture[i].pdu;
            i == connect || (!pdu.pdu_type.is_advertising() && pdu.access_address == params.access_address)
        })
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    outcome.note(on_link.iter().copied());
    let values = plaintext_values(on_link.iter().map(|&i| (i, &world.capture[i].pdu)));
    outcome.establish(Fact::PlaintextRecovered, values.iter().map(|v| v.capture_index));
    Ok(outcome)
}

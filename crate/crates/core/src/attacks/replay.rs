//! Re-injection of a sniffed central ATT request.

use crate::protocol::att::AttPdu;
use crate::protocol::pdu::{header, ConnectRequest, LinkLayerPdu};
use crate::world::{parameters_from_connect_request, EntityId, World};

use super::sniff::latest_connection_to;
use super::{AttackError, AttackKind, AttackOutcome, Fact};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayConfig {
    /// Minimum delay between the original request and its replay.
    pub delay_s: u64,
    /// The owner's app writes this value before the replay, so a stored
    /// value equal to the replayed one proves the replay took effect.
    pub owner_rewrite: Option<Vec<u8>>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { delay_s: 6, owner_rewrite: None }
    }
}

/// Time after injection allowed for the victim to process the replay.
const SETTLE_US: u64 = 200_000;
/// Injection point inside a connection event, clear of the central's slot.
const INJECT_OFFSET_US: u64 = 1_000;

/// Finds the first ATT request the central sent on the target's latest
/// connection (a write if one decodes) and re-injects the identical PDU,
/// spoofing the central, on the channel in use at replay time.
pub fn replay_write(
    world: &mut World,
    attacker: EntityId,
    target: EntityId,
    heard: &[usize],
    config: &ReplayConfig,
) -> Result<AttackOutcome, AttackError> {
    let advertiser = world.entity(target)?.address();
    let connect = latest_connection_to(world, heard, advertiser).ok_or(AttackError::NothingToReplay)?;
    let connect_pdu = &world.capture[connect].pdu;
    let req = ConnectRequest::decode(&connect_pdu.payload).ok_or(AttackError::NothingToReplay)?;
    let params = parameters_from_connect_request(&req, connect_pdu.meta.timestamp_us);

    let requests: Vec<usize> = heard
        .iter()
        .copied()
        .filter(|&i| {
            let pdu = &world.capture[i].pdu;
            i > connect
                && pdu.access_address == req.access_address
                && pdu.meta.sender == req.initiator
                && pdu.header() == Some(header::ATT)
        })
        .collect();
    let is_write = |i: &usize| matches!(AttPdu::decode(world.capture[*i].pdu.body()), Ok(AttPdu::WriteReq { .. }));
    let original =
        requests.iter().copied().find(is_write).or(requests.first().copied()).ok_or(AttackError::NothingToReplay)?;

    if let Some(value) = &config.owner_rewrite {
        if let Some(owner) = world.owners.iter().position(|o| o.device == target && o.link.is_some()) {
            world.owner_write(owner, value)?;
        }
    }

    let captured: LinkLayerPdu = world.capture[original].pdu.clone();
    let earliest = world.clock_us().max(captured.meta.timestamp_us + config.delay_s * 1_000_000);
    let at = params.anchor_at_or_after(earliest) + INJECT_OFFSET_US;
    let replayed = captured.on_channel(params.channel_at(at)).map_err(crate::world::WorldError::from)?;
    let before = world.capture.len();
    world.inject(replayed, attacker, at)?;
    world.run_until(at + SETTLE_US);

    let mut outcome = AttackOutcome::new(AttackKind::Replay);
    outcome.note([connect, original]);
    let Some(injected) = (before..world.capture.len()).find(|&i| world.capture[i].transmitter == attacker) else {
        return Ok(outcome);
    };
    outcome.note([injected]);
    let applied = world.device(target)?.write_log.iter().any(|w| w.capture_index == Some(injected));
    if applied {
        outcome.establish(Fact::WriteAppliedTwice, [original, injected]);
    }
    Ok(outcome)
}

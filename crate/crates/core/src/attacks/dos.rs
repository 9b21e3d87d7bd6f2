//! L2CAP echo flood.

use serde::Serialize;

use crate::world::{EntityId, World, WorldError, ATTACKER_INTERVAL_MS};

use super::{AttackError, AttackKind, AttackOutcome, Fact};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FloodConfig {
    pub size: usize,
    pub rate_per_s: u32,
    pub duration_ms: u64,
}

impl Default for FloodConfig {
    fn default() -> Self {
        Self { size: 600, rate_per_s: 1000, duration_ms: 1000 }
    }
}

/// The RTT series as the victim's queue produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FloodReport {
    /// RTT of a single request against an idle queue.
    pub baseline_us: u64,
    /// `(capture index of request, rtt)` for every answered request, in order.
    pub rtts: Vec<(usize, u64)>,
    pub requests_sent: usize,
    /// Time the victim dropped the connection, relative to the first request.
    pub terminated_after_us: Option<u64>,
}

impl FloodReport {
    pub fn max_rtt(&self) -> Option<u64> {
        self.rtts.iter().map(|&(_, r)| r).max()
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.rtts.windows(2).all(|w| w[0].1 <= w[1].1)
    }
}

/// Opens a connection to the target and sends `rate_per_s` echo requests of
/// `size` bytes for `duration_ms`. RTT is degraded when any answer takes
/// more than twice the idle baseline.
pub fn echo_flood(
    world: &mut World,
    attacker: EntityId,
    target: EntityId,
    config: FloodConfig,
) -> Result<(AttackOutcome, FloodReport), AttackError> {
    let link = match world.connect(attacker, target, ATTACKER_INTERVAL_MS) {
        Ok(link) => link,
        Err(WorldError::ConnectionFailed) => return Err(AttackError::OutOfRange),
        Err(e) => return Err(e.into()),
    };
    let start = world.link(link)?.state.anchor_at_or_after(world.clock_us());
    let spacing = 1_000_000 / u64::from(config.rate_per_s.max(1));
    let count = (config.duration_ms * 1_000 / spacing) as usize;
    for i in 0..count {
        world.queue_echo(link, config.size, start + i as u64 * spacing)?;
    }
    let end = start + config.duration_ms * 1_000;
    let echo = world.echo_config;
    let baseline_us = echo.base_rtt_us + echo.per_item_cost_us(config.size);
    world.run_until_condition(end + baseline_us * 2, |w| !w.links[link].is_connected() && w.clock_us() >= end);

    let l = world.link(link)?;
    let rtts: Vec<(usize, u64)> =
        l.echo_log.iter().filter_map(|r| r.result.rtt_us.map(|rtt| (r.capture_index, rtt))).collect();
    let victim_dropped = l.terminated_by.filter(|&i| world.capture[i].transmitter == target);
    let terminated_after_us = victim_dropped.map(|i| world.capture[i].pdu.meta.timestamp_us.saturating_sub(start));

    let mut outcome = AttackOutcome::new(AttackKind::Dos);
    outcome.note([l.connect_index]);
    outcome.note(l.echo_log.iter().map(|r| r.capture_index));
    outcome.establish(Fact::RttDegraded, rtts.iter().filter(|&&(_, rtt)| rtt > 2 * baseline_us).map(|&(i, _)| i));
    outcome.establish(Fact::ConnectionTerminated, victim_dropped);
    let report = FloodReport { baseline_us, rtts, requests_sent: count, terminated_after_us };
    if world.link(link)?.is_connected() {
        world.terminate(link, crate::protocol::Role::Central)?;
    }
    Ok((outcome, report))
}

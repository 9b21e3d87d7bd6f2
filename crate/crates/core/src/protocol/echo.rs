//! L2CAP echo service queue of a victim device.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Largest echo payload an L2CAP length field can describe.
pub const MAX_ECHO_PAYLOAD: usize = 65_535;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EchoConfig {
    pub capacity: usize,
    pub base_rtt_us: u64,
    pub cost_base_us: u64,
    pub cost_per_byte_us: u64,
    /// Consecutive drops after which the victim tears the connection down.
    pub drop_threshold: u32,
    /// The queue retires one request per interval.
    pub service_interval_us: u64,
}

impl Default for EchoConfig {
    fn default() -> Self {
        Self {
            capacity: 32,
            base_rtt_us: 2_000,
            cost_base_us: 100,
            cost_per_byte_us: 1,
            drop_threshold: 64,
            service_interval_us: 100_000,
        }
    }
}

impl EchoConfig {
    pub fn per_item_cost_us(&self, payload_size: usize) -> u64 {
        self.cost_base_us + self.cost_per_byte_us * payload_size as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EchoResult {
    /// Present when the request was queued and will be answered.
    pub rtt_us: Option<u64>,
    pub dropped: bool,
    /// Refused by the rate limiter before reaching the queue.
    pub discarded: bool,
    /// This drop crossed the threshold; the connection must end.
    pub terminate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EchoQueue {
    pub config: EchoConfig,
    /// Completion times of queued requests, oldest first.
    completions: VecDeque<u64>,
    consecutive_drops: u32,
    /// Theoretical arrival time of the rate limiter (GCRA, burst of one).
    limiter_tat_us: Option<u64>,
}

impl EchoQueue {
    pub fn new(config: EchoConfig) -> Self {
        Self { config, ..Self::default() }
    }

    pub fn depth(&self) -> usize {
        self.completions.len()
    }

    pub fn consecutive_drops(&self) -> u32 {
        self.consecutive_drops
    }

    fn drain(&mut self, now_us: u64) {
        while self.completions.front().is_some_and(|&done| done <= now_us) {
            self.completions.pop_front();
        }
    }

    fn admit(&mut self, now_us: u64, rate_limit: Option<u32>) -> bool {
        let Some(rate) = rate_limit else { return true };
        let spacing = 1_000_000 / u64::from(rate.max(1));
        match self.limiter_tat_us {
            Some(tat) if now_us < tat => false,
            _ => {
                self.limiter_tat_us = Some(now_us + spacing);
                true
            }
        }
    }

    /// Offers one request arriving at `now_us`.
    pub fn offer(&mut self, payload_size: usize, now_us: u64, rate_limit: Option<u32>) -> EchoResult {
        self.drain(now_us);
        if !self.admit(now_us, rate_limit) {
            return EchoResult { rtt_us: None, dropped: false, discarded: true, terminate: false };
        }
        if self.completions.len() >= self.config.capacity {
            self.consecutive_drops += 1;
            let terminate = self.consecutive_drops >= self.config.drop_threshold;
            return EchoResult { rtt_us: None, dropped: true, discarded: false, terminate };
        }
        self.consecutive_drops = 0;
        let start = self.completions.back().copied().unwrap_or(now_us).max(now_us);
        self.completions.push_back(start + self.config.service_interval_us);
        let depth = self.completions.len() as u64;
        let rtt = self.config.base_rtt_us + depth * self.config.per_item_cost_us(payload_size);
        EchoResult { rtt_us: Some(rtt), dropped: false, discarded: false, terminate: false }
    }
}

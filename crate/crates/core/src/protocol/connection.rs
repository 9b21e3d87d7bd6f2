//! Per-connection link state: channel hopping, link encryption counters and
//! the echo service queue.

use serde::{Deserialize, Serialize};

use super::echo::{EchoConfig, EchoQueue, EchoResult, MAX_ECHO_PAYLOAD};
use super::pairing::BondRecord;
use super::pdu::DATA_CHANNELS;
use super::profile::PairingMethod;
use super::ProtocolError;
use crate::crypto::{decrypt_pdu, encrypt_pdu, IntegrityFailure, Key128};

pub const HOP_RANGE: std::ops::RangeInclusive<u8> = 5..=16;

/// Delay from the connect request to the first connection event.
pub const TRANSMIT_WINDOW_OFFSET_US: u64 = 1_250;

/// Hop sequence and timing of a connection, anchored at one known event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionParameters {
    pub access_address: u32,
    pub interval_ms: u16,
    pub hop_increment: u8,
    /// Start of a reference connection event.
    pub anchor_us: u64,
    /// Channel used by the reference event.
    pub anchor_channel: u8,
}

impl ConnectionParameters {
    pub fn interval_us(&self) -> u64 {
        u64::from(self.interval_ms) * 1_000
    }

    /// Index of the event containing `t_us`, relative to the reference event.
    pub fn event_offset(&self, t_us: u64) -> i64 {
        (t_us as i64 - self.anchor_us as i64).div_euclid(self.interval_us() as i64)
    }

    pub fn channel_at(&self, t_us: u64) -> u8 {
        let k = self.event_offset(t_us);
        let step = (k.rem_euclid(DATA_CHANNELS as i64) * self.hop_increment as i64) % DATA_CHANNELS as i64;
        ((self.anchor_channel as i64 + step) % DATA_CHANNELS as i64) as u8
    }

    /// Start of the first connection event at or after `t_us`.
    pub fn anchor_at_or_after(&self, t_us: u64) -> u64 {
        let k = self.event_offset(t_us);
        let start = (self.anchor_us as i64 + k * self.interval_us() as i64) as u64;
        if start == t_us {
            start
        } else {
            start + self.interval_us()
        }
    }
}

/// Which way a data PDU travels; each direction has its own packet counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    CentralToPeripheral,
    PeripheralToCentral,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::CentralToPeripheral => 0,
            Direction::PeripheralToCentral => 1,
        }
    }

    /// Nonce fed to the link cipher: direction bit above a 39-bit counter.
    pub fn nonce(self, counter: u64) -> u64 {
        ((self.index() as u64) << 39) | counter
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionState {
    pub access_address: u32,
    pub interval_ms: u16,
    pub hop_increment: u8,
    /// Channel of the most recent event advanced through; 0 before the first.
    pub channel_index: u8,
    pub event_counter: u64,
    pub first_anchor_us: u64,
    pub encryption_key: Option<Key128>,
    tx_counters: [u64; 2],
    rx_counters: [u64; 2],
    /// Method behind the keys in use, once pairing or bonded reconnection completed.
    pub pairing_method: Option<PairingMethod>,
    pub bond: Option<BondRecord>,
    pub connected: bool,
    pub echo: EchoQueue,
}

impl ConnectionState {
    pub fn new(
        access_address: u32,
        interval_ms: u16,
        hop_increment: u8,
        connect_time_us: u64,
        echo: EchoConfig,
    ) -> Result<Self, ProtocolError> {
        if !HOP_RANGE.contains(&hop_increment) {
            return Err(ProtocolError::InvalidHop(hop_increment));
        }
        Ok(Self {
            access_address,
            interval_ms: interval_ms.max(1),
            hop_increment,
            channel_index: 0,
            event_counter: 0,
            first_anchor_us: connect_time_us + TRANSMIT_WINDOW_OFFSET_US,
            encryption_key: None,
            tx_counters: [0; 2],
            rx_counters: [0; 2],
            pairing_method: None,
            bond: None,
            connected: true,
            echo: EchoQueue::new(echo),
        })
    }

    pub fn parameters(&self) -> ConnectionParameters {
        ConnectionParameters {
            access_address: self.access_address,
            interval_ms: self.interval_ms,
            hop_increment: self.hop_increment,
            anchor_us: self.first_anchor_us,
            anchor_channel: self.hop_increment % DATA_CHANNELS,
        }
    }

    /// Moves to the next connection event and returns its channel.
    pub fn next_channel(&mut self) -> u8 {
        self.channel_index = (self.channel_index + self.hop_increment) % DATA_CHANNELS;
        self.event_counter += 1;
        self.channel_index
    }

    /// Channel in use at `t_us`; instants before the first anchor belong to
    /// the first event.
    pub fn channel_at(&self, t_us: u64) -> u8 {
        self.parameters().channel_at(t_us.max(self.first_anchor_us))
    }

    pub fn anchor_at_or_after(&self, t_us: u64) -> u64 {
        self.parameters().anchor_at_or_after(t_us.max(self.first_anchor_us))
    }

    /// Advances the stateful hop counter through every event that has begun by `t_us`.
    pub fn advance_to(&mut self, t_us: u64) {
        if t_us < self.first_anchor_us {
            return;
        }
        let events = (t_us - self.first_anchor_us) / self.parameters().interval_us() + 1;
        while self.event_counter < events {
            self.next_channel();
        }
    }

    pub fn is_encrypted(&self) -> bool {
        self.encryption_key.is_some()
    }

    /// Installs or clears the link key; both packet counters restart.
    pub fn set_encryption(&mut self, key: Option<Key128>) {
        self.encryption_key = key;
        self.tx_counters = [0; 2];
        self.rx_counters = [0; 2];
    }

    /// Encrypted PDUs sent so far under the current key, both directions.
    pub fn packet_counter(&self) -> u64 {
        self.tx_counters[0] + self.tx_counters[1]
    }

    /// Encrypts an outgoing body when the link is encrypted.
    pub fn seal(&mut self, direction: Direction, body: &[u8]) -> Vec<u8> {
        match self.encryption_key {
            Some(key) => {
                let counter = &mut self.tx_counters[direction.index()];
                let sealed = encrypt_pdu(&key, direction.nonce(*counter), body);
                *counter += 1;
                sealed
            }
            None => body.to_vec(),
        }
    }

    /// Decrypts an incoming body. The receive counter advances only on
    /// success, so a replayed ciphertext never verifies twice.
    pub fn open(&mut self, direction: Direction, body: &[u8]) -> Result<Vec<u8>, IntegrityFailure> {
        match self.encryption_key {
            Some(key) => {
                let counter = &mut self.rx_counters[direction.index()];
                let plain = decrypt_pdu(&key, direction.nonce(*counter), body)?;
                *counter += 1;
                Ok(plain)
            }
            None => Ok(body.to_vec()),
        }
    }

    /// Offers an echo request to the queue. A result with `terminate` set
    /// obliges the caller to end the connection.
    pub fn l2cap_echo(
        &mut self,
        payload_size: usize,
        now_us: u64,
        rate_limit: Option<u32>,
    ) -> Result<EchoResult, ProtocolError> {
        if !self.connected {
            return Err(ProtocolError::NotConnected);
        }
        if payload_size > MAX_ECHO_PAYLOAD {
            return Err(ProtocolError::PayloadTooLarge(payload_size));
        }
        Ok(self.echo.offer(payload_size, now_us, rate_limit))
    }
}

//! Device-side BLE model: link-layer PDUs, addresses, pairing, link
//! encryption, GATT access control, channel hopping and L2CAP echo.

pub mod address;
pub mod att;
pub mod connection;
pub mod control;
pub mod device;
pub mod echo;
pub mod gatt;
pub mod pairing;
pub mod pdu;
pub mod profile;
pub mod smp;

use thiserror::Error;

pub use address::{AddressKind, DeviceAddress};
pub use connection::{ConnectionParameters, ConnectionState};
pub use device::{Device, Role};
pub use echo::{EchoConfig, EchoResult};
pub use gatt::{GattDatabase, GattError, GattRequest, GattResponse, GattResult};
pub use pairing::{BondRecord, PairingPhase, PairingSession};
pub use pdu::{LinkLayerPdu, PduMeta, PduType};
pub use profile::{AddressPolicy, AntiReplay, PairingMethod, RadioClass, SecurityProfile};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("{pdu_type} cannot be sent on channel {channel}")]
    IllegalChannel { pdu_type: PduType, channel: u8 },
    #[error("invalid security profile: {0}")]
    InvalidProfile(String),
    #[error("pairing rejected: peripheral requires {required:?}, negotiation yields {negotiated:?}")]
    PairingRejected { required: PairingMethod, negotiated: PairingMethod },
    #[error("pairing step out of order: expected phase {expected:?}, session is in {actual:?}")]
    PhaseOrder { expected: PairingPhase, actual: PairingPhase },
    #[error("link encryption was not started before key distribution")]
    NotEncrypted,
    #[error("connection is not established")]
    NotConnected,
    #[error("echo payload of {0} bytes exceeds 65535")]
    PayloadTooLarge(usize),
    #[error("hop increment {0} outside 5..=16")]
    InvalidHop(u8),
    #[error("malformed {what} PDU")]
    Codec { what: &'static str },
}

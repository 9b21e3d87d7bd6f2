use rand::Rng;
use serde::{Deserialize, Serialize};

use super::address::DeviceAddress;
use super::gatt::{process_request, GattDatabase, GattRequest, GattResult, LinkSecurity, ReplayGuard};
use super::pairing::BondRecord;
use super::pdu::{Advertisement, LinkLayerPdu, PduMeta, PduType, ADVERTISING_ACCESS_ADDRESS, ADVERTISING_CHANNELS};
use super::profile::{AddressPolicy, SecurityProfile};
use crate::crypto::Key128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Central,
    Peripheral,
}

/// A write the GATT server accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppliedWrite {
    pub handle: u16,
    pub value: Vec<u8>,
    pub at_us: u64,
    /// Capture index of the PDU that carried the write.
    pub capture_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Device {
    pub name: String,
    pub role: Role,
    pub profile: SecurityProfile,
    pub gatt: GattDatabase,
    pub address: DeviceAddress,
    pub bonds: Vec<BondRecord>,
    /// Write-authentication key shared out of band with the owner's app.
    pub app_key: Option<Key128>,
    pub replay_guard: ReplayGuard,
    pub write_log: Vec<AppliedWrite>,
    pub audit_logging: bool,
    rotation_period: u64,
}

impl Device {
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        role: Role,
        profile: SecurityProfile,
        gatt: GattDatabase,
        rng: &mut R,
    ) -> Self {
        let identity = DeviceAddress::random_static(rng);
        let address = match profile.address_policy {
            AddressPolicy::Static => identity,
            AddressPolicy::Rotating { .. } => DeviceAddress::resolvable(identity.identity, rng),
        };
        Self {
            name: name.into(),
            role,
            profile,
            gatt,
            address,
            bonds: Vec::new(),
            app_key: None,
            replay_guard: ReplayGuard::default(),
            write_log: Vec::new(),
            audit_logging: false,
            rotation_period: 0,
        }
    }

    pub fn identity(&self) -> [u8; 6] {
        self.address.identity
    }

    /// Advertisement on the first advertising channel.
    pub fn advertise(&self, now_us: u64) -> Option<LinkLayerPdu> {
        self.advertise_on(now_us, ADVERTISING_CHANNELS[0])
    }

    /// `adv_ind` carrying the current address and every service UUID, or
    /// nothing when the device is not discoverable.
    pub fn advertise_on(&self, now_us: u64, channel: u8) -> Option<LinkLayerPdu> {
        if !self.profile.discoverable || self.role != Role::Peripheral {
            return None;
        }
        let payload = Advertisement { address: self.address.bytes, service_uuids: self.gatt.service_uuids() }.encode();
        let meta = PduMeta {
            timestamp_us: now_us,
            tx_power_dbm: self.profile.radio_class.tx_power_dbm(),
            sender: self.address.bytes,
        };
        LinkLayerPdu::new(channel, ADVERTISING_ACCESS_ADDRESS, PduType::AdvInd, payload, meta).ok()
    }

    /// Draws a new private address when `now_us` has entered a later rotation
    /// period than the current address was drawn in.
    pub fn rotate_address<R: Rng + ?Sized>(&mut self, now_us: u64, rng: &mut R) -> &DeviceAddress {
        if let AddressPolicy::Rotating { period_s } = self.profile.address_policy {
            let period = now_us / (period_s * 1_000_000);
            if period > self.rotation_period {
                self.rotation_period = period;
                self.address.regenerate(rng);
            }
        }
        &self.address
    }

    pub fn bond_for(&self, identity: &[u8; 6]) -> Option<&BondRecord> {
        self.bonds.iter().find(|b| &b.peer_identity == identity)
    }

    pub fn store_bond(&mut self, record: BondRecord) {
        self.bonds.retain(|b| b.peer_identity != record.peer_identity);
        self.bonds.push(record);
    }

    /// Runs the GATT gate; accepted writes are appended to the write log.
    pub fn handle_request(
        &mut self,
        security: LinkSecurity,
        now_us: u64,
        request: &GattRequest,
        capture_index: Option<usize>,
    ) -> GattResult {
        let result = process_request(
            &mut self.gatt,
            &self.profile,
            &mut self.replay_guard,
            self.app_key.as_ref(),
            security,
            now_us / 1_000,
            request,
        );
        if result.is_ok() {
            if let Some(value) = &request.value {
                self.write_log.push(AppliedWrite {
                    handle: request.handle,
                    value: value.clone(),
                    at_us: now_us,
                    capture_index,
                });
            }
        }
        result
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::protocol::gatt::{uuid16, CharacteristicSpec, GattSpec, Property, SecurityLevel, ServiceSpec};
    use crate::protocol::pdu::Advertisement;
    use crate::protocol::profile::RadioClass;

    fn two_services() -> GattDatabase {
        let service = |short| ServiceSpec {
            uuid: uuid16(short),
            characteristics: vec![CharacteristicSpec {
                uuid: uuid16(short + 1),
                properties: BTreeSet::from([Property::Read]),
                security: SecurityLevel::Open,
                value: "v".into(),
            }],
        };
        GattDatabase::from_spec(&GattSpec {
            device_info: None,
            device_info_security: SecurityLevel::Open,
            services: vec![service(0xFE00), service(0xFD00)],
        })
        .unwrap()
    }

    #[test]
    fn advert_lists_both_services() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let device = Device::new(
            "band",
            Role::Peripheral,
            SecurityProfile::permissive(RadioClass::Wearable),
            two_services(),
            &mut rng,
        );
        let pdu = device.advertise(0).unwrap();
        assert_eq!(pdu.pdu_type, PduType::AdvInd);
        assert!(ADVERTISING_CHANNELS.contains(&pdu.channel));
        let adv = Advertisement::decode(&pdu.payload).unwrap();
        assert_eq!(adv.service_uuids, vec![uuid16(0xFE00), uuid16(0xFD00)]);
        assert_eq!(pdu.meta.sender, device.identity());
    }

    #[test]
    fn hidden_device_is_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut profile = SecurityProfile::permissive(RadioClass::Wearable);
        profile.discoverable = false;
        let device = Device::new("band", Role::Peripheral, profile, two_services(), &mut rng);
        assert!(device.advertise(0).is_none());
    }

    #[test]
    fn rotation_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut profile = SecurityProfile::permissive(RadioClass::Wearable);
        let mut fixed = Device::new("a", Role::Peripheral, profile.clone(), GattDatabase::empty(), &mut rng);
        let before = fixed.address.clone();
        assert_eq!(fixed.rotate_address(5_000_000_000, &mut rng), &before);

        profile.address_policy = AddressPolicy::Rotating { period_s: 900 };
        let mut rotating = Device::new("b", Role::Peripheral, profile, GattDatabase::empty(), &mut rng);
        let first = rotating.address.clone();
        assert_eq!(rotating.rotate_address(899_000_000, &mut rng), &first);
        let second = rotating.rotate_address(901_000_000, &mut rng).clone();
        assert_ne!(second.bytes, first.bytes);
        assert_eq!(second.identity, first.identity);
        assert_eq!(rotating.rotate_address(902_000_000, &mut rng), &second);
    }
}

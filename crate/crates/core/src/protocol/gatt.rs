//! GATT attribute database and the server-side request gate.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::profile::{AntiReplay, PairingMethod, SecurityProfile};
use crate::crypto::{tag4, Key128, TAG_LEN};

/// 128-bit UUID stored as an integer.
pub type Uuid128 = u128;

const BASE_UUID: u128 = 0x0000_0000_0000_1000_8000_0080_5F9B_34FB;

/// Expands a 16-bit SIG-assigned UUID onto the Bluetooth base UUID.
pub const fn uuid16(short: u16) -> Uuid128 {
    BASE_UUID | ((short as u128) << 96)
}

pub const DEVICE_INFORMATION_SERVICE: Uuid128 = uuid16(0x180A);
pub const MODEL_NUMBER: Uuid128 = uuid16(0x2A24);
pub const SERIAL_NUMBER: Uuid128 = uuid16(0x2A25);
pub const FIRMWARE_REVISION: Uuid128 = uuid16(0x2A26);
pub const MANUFACTURER_NAME: Uuid128 = uuid16(0x2A29);

pub fn format_uuid(uuid: Uuid128) -> String {
    let h = format!("{uuid:032x}");
    format!("{}-{}-{}-{}-{}", &h[0..8], &h[8..12], &h[12..16], &h[16..20], &h[20..32])
}

/// Accepts the dashed 128-bit form or a 4-digit SIG short form.
pub fn parse_uuid(text: &str) -> Option<Uuid128> {
    let compact: String = text.chars().filter(|c| *c != '-').collect();
    match compact.len() {
        4 => u16::from_str_radix(&compact, 16).ok().map(uuid16),
        32 => u128::from_str_radix(&compact, 16).ok(),
        _ => None,
    }
}

pub mod uuid_serde {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use super::{format_uuid, parse_uuid, Uuid128};

    pub fn serialize<S: Serializer>(uuid: &Uuid128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_uuid(*uuid))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Uuid128, D::Error> {
        let text = String::deserialize(d)?;
        parse_uuid(&text).ok_or_else(|| D::Error::custom(format!("invalid UUID `{text}`")))
    }
}

pub mod uuid_list_serde {
    use serde::{de::Error, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    use super::{format_uuid, parse_uuid, Uuid128};

    pub fn serialize<S: Serializer>(uuids: &[Uuid128], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(uuids.len()))?;
        for uuid in uuids {
            seq.serialize_element(&format_uuid(*uuid))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Uuid128>, D::Error> {
        Vec::<String>::deserialize(d)?
            .into_iter()
            .map(|text| parse_uuid(&text).ok_or_else(|| D::Error::custom(format!("invalid UUID `{text}`"))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Read,
    Write,
    Notify,
}

impl Property {
    pub fn bit(self) -> u8 {
        match self {
            Property::Read => 0x02,
            Property::Write => 0x08,
            Property::Notify => 0x10,
        }
    }

    pub fn set_from_bits(bits: u8) -> BTreeSet<Property> {
        [Property::Read, Property::Write, Property::Notify].into_iter().filter(|p| bits & p.bit() != 0).collect()
    }

    pub fn bits_of(set: &BTreeSet<Property>) -> u8 {
        set.iter().fold(0, |acc, p| acc | p.bit())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecurityLevel {
    #[default]
    Open,
    Encrypted,
    Authenticated,
}

impl SecurityLevel {
    pub fn code(self) -> u8 {
        match self {
            SecurityLevel::Open => 0,
            SecurityLevel::Encrypted => 1,
            SecurityLevel::Authenticated => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SecurityLevel::Open),
            1 => Some(SecurityLevel::Encrypted),
            2 => Some(SecurityLevel::Authenticated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Characteristic {
    #[serde(with = "uuid_serde")]
    pub uuid: Uuid128,
    pub handle: u16,
    pub properties: BTreeSet<Property>,
    pub security: SecurityLevel,
    pub value: Vec<u8>,
}

impl Characteristic {
    pub fn allows(&self, property: Property) -> bool {
        self.properties.contains(&property)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Service {
    #[serde(with = "uuid_serde")]
    pub uuid: Uuid128,
    pub characteristics: Vec<Characteristic>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceInfo {
    pub model: String,
    pub manufacturer: String,
    pub firmware: String,
    pub unique_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GattDatabase {
    pub services: Vec<Service>,
    pub device_info: Option<DeviceInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid GATT database: {0}")]
pub struct InvalidGatt(pub String);

const FIRST_HANDLE: u16 = 0x0010;
const HANDLE_STRIDE: u16 = 2;

impl GattDatabase {
    pub fn empty() -> Self {
        Self { services: Vec::new(), device_info: None }
    }

    /// Builds a database from a template, assigning strictly increasing handles.
    /// A Device Information service is placed first when `device_info` is set.
    pub fn from_spec(spec: &GattSpec) -> Result<Self, InvalidGatt> {
        let mut next_handle = FIRST_HANDLE;
        let mut take_handle = || {
            let handle = next_handle;
            next_handle =
                next_handle.checked_add(HANDLE_STRIDE).ok_or_else(|| InvalidGatt("handle space exhausted".into()))?;
            Ok::<u16, InvalidGatt>(handle)
        };
        let mut services = Vec::new();
        if let Some(info) = &spec.device_info {
            let mut characteristics = Vec::new();
            for (uuid, text) in [
                (MODEL_NUMBER, &info.model),
                (MANUFACTURER_NAME, &info.manufacturer),
                (FIRMWARE_REVISION, &info.firmware),
                (SERIAL_NUMBER, &info.unique_id),
            ] {
                characteristics.push(Characteristic {
                    uuid,
                    handle: take_handle()?,
                    properties: BTreeSet::from([Property::Read]),
                    security: spec.device_info_security,
                    value: text.as_bytes().to_vec(),
                });
            }
            services.push(Service { uuid: DEVICE_INFORMATION_SERVICE, characteristics });
        }
        for service in &spec.services {
            let mut characteristics = Vec::new();
            for c in &service.characteristics {
                characteristics.push(Characteristic {
                    uuid: c.uuid,
                    handle: take_handle()?,
                    properties: c.properties.clone(),
                    security: c.security,
                    value: c.value.as_bytes().to_vec(),
                });
            }
            services.push(Service { uuid: service.uuid, characteristics });
        }
        let db = Self { services, device_info: spec.device_info.clone() };
        db.validate()?;
        Ok(db)
    }

    pub fn validate(&self) -> Result<(), InvalidGatt> {
        let mut last: Option<u16> = None;
        for c in self.characteristics() {
            if let Some(prev) = last {
                if c.handle <= prev {
                    return Err(InvalidGatt(format!("handle {:#06x} does not increase after {:#06x}", c.handle, prev)));
                }
            }
            last = Some(c.handle);
        }
        Ok(())
    }

    pub fn characteristics(&self) -> impl Iterator<Item = &Characteristic> {
        self.services.iter().flat_map(|s| s.characteristics.iter())
    }

    pub fn characteristic(&self, handle: u16) -> Option<&Characteristic> {
        self.characteristics().find(|c| c.handle == handle)
    }

    pub fn characteristic_mut(&mut self, handle: u16) -> Option<&mut Characteristic> {
        self.services.iter_mut().flat_map(|s| s.characteristics.iter_mut()).find(|c| c.handle == handle)
    }

    pub fn find_uuid(&self, uuid: Uuid128) -> Option<&Characteristic> {
        self.characteristics().find(|c| c.uuid == uuid)
    }

    pub fn service_uuids(&self) -> Vec<Uuid128> {
        self.services.iter().map(|s| s.uuid).collect()
    }

    /// First characteristic that supports notifications (the sensor stream).
    pub fn notify_handle(&self) -> Option<u16> {
        self.characteristics().find(|c| c.allows(Property::Notify)).map(|c| c.handle)
    }

    /// Service layout as reported by discovery: no values.
    pub fn discover(&self) -> Vec<ServiceSummary> {
        self.services
            .iter()
            .map(|s| ServiceSummary {
                uuid: s.uuid,
                characteristics: s
                    .characteristics
                    .iter()
                    .map(|c| CharacteristicSummary {
                        uuid: c.uuid,
                        handle: c.handle,
                        properties: c.properties.clone(),
                        security: c.security,
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Template form of a GATT database, as written in asset and scenario files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GattSpec {
    #[serde(default)]
    pub device_info: Option<DeviceInfo>,
    #[serde(default)]
    pub device_info_security: SecurityLevel,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    #[serde(with = "uuid_serde")]
    pub uuid: Uuid128,
    #[serde(default)]
    pub characteristics: Vec<CharacteristicSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacteristicSpec {
    #[serde(with = "uuid_serde")]
    pub uuid: Uuid128,
    pub properties: BTreeSet<Property>,
    #[serde(default)]
    pub security: SecurityLevel,
    #[serde(default)]
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceSummary {
    pub uuid: Uuid128,
    pub characteristics: Vec<CharacteristicSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacteristicSummary {
    pub uuid: Uuid128,
    pub handle: u16,
    pub properties: BTreeSet<Property>,
    pub security: SecurityLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Read,
    Write,
}

/// Freshness proof attached to a write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Freshness {
    TimestampMs(u64),
    Nonce(u64),
}

impl Freshness {
    pub fn encode(&self) -> [u8; 9] {
        let (kind, value) = match *self {
            Freshness::TimestampMs(ms) => (1u8, ms),
            Freshness::Nonce(n) => (2u8, n),
        };
        let mut out = [0u8; 9];
        out[0] = kind;
        out[1..].copy_from_slice(&value.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let value = u64::from_le_bytes(bytes.get(1..9)?.try_into().ok()?);
        match bytes.first()? {
            1 => Some(Freshness::TimestampMs(value)),
            2 => Some(Freshness::Nonce(value)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GattRequest {
    pub kind: RequestKind,
    pub handle: u16,
    pub value: Option<Vec<u8>>,
    pub freshness: Option<Freshness>,
    pub auth_tag: Option<[u8; TAG_LEN]>,
}

impl GattRequest {
    pub fn read(handle: u16) -> Self {
        Self { kind: RequestKind::Read, handle, value: None, freshness: None, auth_tag: None }
    }

    pub fn write(handle: u16, value: impl Into<Vec<u8>>) -> Self {
        Self { kind: RequestKind::Write, handle, value: Some(value.into()), freshness: None, auth_tag: None }
    }

    pub fn with_freshness(mut self, freshness: Freshness) -> Self {
        self.freshness = Some(freshness);
        self
    }

    /// Signs the write with the owner app's key.
    pub fn signed(mut self, app_key: &Key128) -> Self {
        self.auth_tag =
            Some(write_auth_tag(app_key, self.handle, self.value.as_deref().unwrap_or(&[]), self.freshness));
        self
    }
}

/// Message authentication tag over a write's handle, value and freshness.
pub fn write_auth_tag(app_key: &Key128, handle: u16, value: &[u8], freshness: Option<Freshness>) -> [u8; TAG_LEN] {
    let freshness = freshness.map(|f| f.encode()).unwrap_or([0u8; 9]);
    tag4(app_key, &[b"write", &handle.to_le_bytes(), value, &freshness])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum GattError {
    #[error("unknown handle")]
    UnknownHandle,
    #[error("operation not permitted by characteristic properties")]
    PropertyViolation,
    #[error("insufficient security")]
    InsufficientSecurity,
    #[error("replayed request rejected")]
    ReplayRejected,
    #[error("stale or missing timestamp")]
    StaleTimestamp,
}

impl GattError {
    pub fn att_code(self) -> u8 {
        match self {
            GattError::UnknownHandle => 0x01,
            GattError::PropertyViolation => 0x03,
            GattError::InsufficientSecurity => 0x05,
            GattError::ReplayRejected => 0x80,
            GattError::StaleTimestamp => 0x81,
        }
    }

    pub fn from_att_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(GattError::UnknownHandle),
            0x03 => Some(GattError::PropertyViolation),
            0x05 => Some(GattError::InsufficientSecurity),
            0x80 => Some(GattError::ReplayRejected),
            0x81 => Some(GattError::StaleTimestamp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GattResponse {
    Value(Vec<u8>),
    Written,
}

pub type GattResult = Result<GattResponse, GattError>;

/// What the server knows about the link a request arrived on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LinkSecurity {
    pub encrypted: bool,
    /// Method of the pairing (or bond) this link's keys came from.
    pub pairing_method: Option<PairingMethod>,
}

/// Freshness state for one server.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayGuard {
    last_timestamp_ms: Option<u64>,
    seen_nonces: HashSet<u64>,
}

impl ReplayGuard {
    fn check(&self, policy: AntiReplay, freshness: Option<Freshness>, now_ms: u64) -> Result<(), GattError> {
        match policy {
            AntiReplay::None => Ok(()),
            AntiReplay::Timestamp { window_ms } => {
                let Some(Freshness::TimestampMs(ts)) = freshness else {
                    return Err(GattError::StaleTimestamp);
                };
                if now_ms.saturating_sub(ts) > window_ms || ts > now_ms.saturating_add(window_ms) {
                    return Err(GattError::StaleTimestamp);
                }
                if self.last_timestamp_ms.is_some_and(|last| ts <= last) {
                    return Err(GattError::ReplayRejected);
                }
                Ok(())
            }
            AntiReplay::Nonce => match freshness {
                Some(Freshness::Nonce(n)) if !self.seen_nonces.contains(&n) => Ok(()),
                _ => Err(GattError::ReplayRejected),
            },
        }
    }

    fn accept(&mut self, policy: AntiReplay, freshness: Option<Freshness>) {
        match (policy, freshness) {
            (AntiReplay::Timestamp { .. }, Some(Freshness::TimestampMs(ts))) => self.last_timestamp_ms = Some(ts),
            (AntiReplay::Nonce, Some(Freshness::Nonce(n))) => {
                self.seen_nonces.insert(n);
            }
            _ => {}
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RequestKind::Read => "read",
            RequestKind::Write => "write",
        })
    }
}

/// Server-side gate for one request. Checks run in order: handle, property,
/// profile-wide encryption, characteristic security, write authentication,
/// freshness. A successful write stores the value.
pub fn process_request(
    db: &mut GattDatabase,
    profile: &SecurityProfile,
    guard: &mut ReplayGuard,
    app_key: Option<&Key128>,
    security: LinkSecurity,
    now_ms: u64,
    request: &GattRequest,
) -> GattResult {
    let characteristic = db.characteristic(request.handle).ok_or(GattError::UnknownHandle)?;
    let property = match request.kind {
        RequestKind::Read => Property::Read,
        RequestKind::Write => Property::Write,
    };
    if !characteristic.allows(property) {
        return Err(GattError::PropertyViolation);
    }
    if profile.link_encryption && !security.encrypted {
        return Err(GattError::InsufficientSecurity);
    }
    let gate_ok = match characteristic.security {
        SecurityLevel::Open => true,
        SecurityLevel::Encrypted => security.encrypted,
        SecurityLevel::Authenticated => security.pairing_method.is_some_and(PairingMethod::is_authenticated),
    };
    if !gate_ok {
        return Err(GattError::InsufficientSecurity);
    }
    match request.kind {
        RequestKind::Read => Ok(GattResponse::Value(characteristic.value.clone())),
        RequestKind::Write => {
            let value = request.value.clone().unwrap_or_default();
            if profile.write_auth_required {
                let expected = app_key.map(|key| write_auth_tag(key, request.handle, &value, request.freshness));
                if expected.is_none() || request.auth_tag != expected {
                    return Err(GattError::InsufficientSecurity);
                }
            }
            guard.check(profile.anti_replay, request.freshness, now_ms)?;
            guard.accept(profile.anti_replay, request.freshness);
            db.characteristic_mut(request.handle).expect("handle resolved above").value = value;
            Ok(GattResponse::Written)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::profile::{AddressPolicy, RadioClass};

    pub(crate) const SETTINGS: Uuid128 = uuid16(0xFF01);
    const STEPS: Uuid128 = uuid16(0xFF02);
    const SECRET: Uuid128 = uuid16(0xFF03);

    fn spec() -> GattSpec {
        GattSpec {
            device_info: Some(DeviceInfo {
                model: "Band".into(),
                manufacturer: "Acme".into(),
                firmware: "1.0".into(),
                unique_id: "860000000000001".into(),
            }),
            device_info_security: SecurityLevel::Open,
            services: vec![ServiceSpec {
                uuid: uuid16(0xFEE0),
                characteristics: vec![
                    CharacteristicSpec {
                        uuid: SETTINGS,
                        properties: BTreeSet::from([Property::Read, Property::Write]),
                        security: SecurityLevel::Open,
                        value: "alarm=07:00".into(),
                    },
                    CharacteristicSpec {
                        uuid: STEPS,
                        properties: BTreeSet::from([Property::Read, Property::Notify]),
                        security: SecurityLevel::Open,
                        value: "steps:8042".into(),
                    },
                    CharacteristicSpec {
                        uuid: SECRET,
                        properties: BTreeSet::from([Property::Read, Property::Write]),
                        security: SecurityLevel::Authenticated,
                        value: "pin".into(),
                    },
                ],
            }],
        }
    }

    fn profile() -> SecurityProfile {
        SecurityProfile {
            pairing_method: PairingMethod::JustWorks,
            link_encryption: false,
            address_policy: AddressPolicy::Static,
            write_auth_required: false,
            anti_replay: AntiReplay::None,
            echo_rate_limit: None,
            discoverable: true,
            radio_class: RadioClass::Wearable,
        }
    }

    fn handle(db: &GattDatabase, uuid: Uuid128) -> u16 {
        db.find_uuid(uuid).unwrap().handle
    }

    #[test]
    fn uuid_text_forms() {
        assert_eq!(format_uuid(uuid16(0x180A)), "0000180a-0000-1000-8000-00805f9b34fb");
        assert_eq!(parse_uuid("180A"), Some(DEVICE_INFORMATION_SERVICE));
        assert_eq!(parse_uuid(&format_uuid(12345)), Some(12345));
        assert_eq!(parse_uuid("xyz"), None);
    }

    #[test]
    fn handles_strictly_increase() {
        let db = GattDatabase::from_spec(&spec()).unwrap();
        let handles: Vec<u16> = db.characteristics().map(|c| c.handle).collect();
        assert_eq!(handles.len(), 7);
        assert!(handles.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(db.service_uuids().len(), 2);
        let mut broken = db.clone();
        broken.services[1].characteristics[0].handle = 0x0010;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn open_read_on_plain_link() {
        let mut db = GattDatabase::from_spec(&spec()).unwrap();
        let h = handle(&db, STEPS);
        let got = process_request(
            &mut db,
            &profile(),
            &mut ReplayGuard::default(),
            None,
            LinkSecurity::default(),
            0,
            &GattRequest::read(h),
        );
        assert_eq!(got, Ok(GattResponse::Value(b"steps:8042".to_vec())));
    }

    #[test]
    fn authenticated_gate_refuses_just_works() {
        let mut db = GattDatabase::from_spec(&spec()).unwrap();
        let h = handle(&db, SECRET);
        let jw = LinkSecurity { encrypted: true, pairing_method: Some(PairingMethod::JustWorks) };
        let pk = LinkSecurity { encrypted: true, pairing_method: Some(PairingMethod::PasskeyEntry) };
        let req = GattRequest::write(h, b"x".to_vec());
        let mut guard = ReplayGuard::default();
        assert_eq!(
            process_request(&mut db, &profile(), &mut guard, None, jw, 0, &req),
            Err(GattError::InsufficientSecurity)
        );
        assert_eq!(process_request(&mut db, &profile(), &mut guard, None, pk, 0, &req), Ok(GattResponse::Written));
    }

    #[test]
    fn unknown_handle_and_property_violation() {
        let mut db = GattDatabase::from_spec(&spec()).unwrap();
        let mut guard = ReplayGuard::default();
        let sec = LinkSecurity::default();
        assert_eq!(
            process_request(&mut db, &profile(), &mut guard, None, sec, 0, &GattRequest::read(0x7777)),
            Err(GattError::UnknownHandle)
        );
        let h = handle(&db, STEPS);
        assert_eq!(
            process_request(&mut db, &profile(), &mut guard, None, sec, 0, &GattRequest::write(h, b"1".to_vec())),
            Err(GattError::PropertyViolation)
        );
    }

    #[test]
    fn profile_encryption_requirement() {
        let mut db = GattDatabase::from_spec(&spec()).unwrap();
        let mut p = profile();
        p.link_encryption = true;
        let h = handle(&db, STEPS);
        let mut guard = ReplayGuard::default();
        assert_eq!(
            process_request(&mut db, &p, &mut guard, None, LinkSecurity::default(), 0, &GattRequest::read(h)),
            Err(GattError::InsufficientSecurity)
        );
        let enc = LinkSecurity { encrypted: true, pairing_method: Some(PairingMethod::JustWorks) };
        assert!(process_request(&mut db, &p, &mut guard, None, enc, 0, &GattRequest::read(h)).is_ok());
    }

    #[test]
    fn nonce_replay_rejected() {
        let mut db = GattDatabase::from_spec(&spec()).unwrap();
        let mut p = profile();
        p.anti_replay = AntiReplay::Nonce;
        let h = handle(&db, SETTINGS);
        let req = GattRequest::write(h, b"alarm=06:00".to_vec()).with_freshness(Freshness::Nonce(42));
        let mut guard = ReplayGuard::default();
        let sec = LinkSecurity::default();
        assert_eq!(process_request(&mut db, &p, &mut guard, None, sec, 0, &req), Ok(GattResponse::Written));
        assert_eq!(process_request(&mut db, &p, &mut guard, None, sec, 10, &req), Err(GattError::ReplayRejected));
    }

    #[test]
    fn timestamp_window_and_ordering() {
        let mut db = GattDatabase::from_spec(&spec()).unwrap();
        let mut p = profile();
        p.anti_replay = AntiReplay::Timestamp { window_ms: 5000 };
        let h = handle(&db, SETTINGS);
        let sec = LinkSecurity::default();
        let mut guard = ReplayGuard::default();
        let first = GattRequest::write(h, b"a".to_vec()).with_freshness(Freshness::TimestampMs(1000));
        assert!(process_request(&mut db, &p, &mut guard, None, sec, 1000, &first).is_ok());
        // same timestamp again, inside the window
        assert_eq!(process_request(&mut db, &p, &mut guard, None, sec, 1500, &first), Err(GattError::ReplayRejected));
        // outside the window
        assert_eq!(process_request(&mut db, &p, &mut guard, None, sec, 7001, &first), Err(GattError::StaleTimestamp));
        // missing timestamp
        assert_eq!(
            process_request(&mut db, &p, &mut guard, None, sec, 2000, &GattRequest::write(h, b"b".to_vec())),
            Err(GattError::StaleTimestamp)
        );
    }

    #[test]
    fn write_authentication_tag() {
        let mut db = GattDatabase::from_spec(&spec()).unwrap();
        let mut p = profile();
        p.write_auth_required = true;
        let key = [3u8; 16];
        let h = handle(&db, SETTINGS);
        let sec = LinkSecurity::default();
        let mut guard = ReplayGuard::default();
        let signed = GattRequest::write(h, b"alarm=05:00".to_vec()).signed(&key);
        assert_eq!(process_request(&mut db, &p, &mut guard, Some(&key), sec, 0, &signed), Ok(GattResponse::Written));
        let mut altered = signed.clone();
        altered.value = Some(b"alarm=03:00".to_vec());
        assert_eq!(
            process_request(&mut db, &p, &mut guard, Some(&key), sec, 0, &altered),
            Err(GattError::InsufficientSecurity)
        );
        let unsigned = GattRequest::write(h, b"x".to_vec());
        assert_eq!(
            process_request(&mut db, &p, &mut guard, Some(&key), sec, 0, &unsigned),
            Err(GattError::InsufficientSecurity)
        );
        assert_eq!(db.characteristic(h).unwrap().value, b"alarm=05:00");
    }

    #[test]
    fn freshness_codec() {
        for f in [Freshness::TimestampMs(123), Freshness::Nonce(u64::MAX)] {
            assert_eq!(Freshness::decode(&f.encode()), Some(f));
        }
        assert_eq!(Freshness::decode(&[9; 9]), None);
    }
}

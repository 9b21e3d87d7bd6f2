use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{prf, Key128};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddressKind {
    Static,
    ResolvablePrivate,
}

/// A device's over-the-air address together with the identity behind it.
///
/// Bytes are stored most significant first. Static random addresses have the
/// top two bits set (`0b11`); resolvable private addresses carry `0b01`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceAddress {
    pub kind: AddressKind,
    pub bytes: [u8; 6],
    pub identity: [u8; 6],
    pub irk: Option<Key128>,
}

impl DeviceAddress {
    /// Fresh static random address; over-the-air bytes equal the identity.
    pub fn random_static<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes: [u8; 6] = rng.random();
        bytes[0] |= 0b1100_0000;
        Self { kind: AddressKind::Static, bytes, identity: bytes, irk: None }
    }

    /// Resolvable private address hiding `identity`, with a freshly drawn IRK.
    pub fn resolvable<R: Rng + ?Sized>(identity: [u8; 6], rng: &mut R) -> Self {
        let irk: Key128 = rng.random();
        let mut address = Self { kind: AddressKind::ResolvablePrivate, bytes: [0; 6], identity, irk: Some(irk) };
        address.regenerate(rng);
        address
    }

    /// Draws a new private address; no-op for static addresses.
    pub fn regenerate<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let Some(irk) = self.irk else { return };
        let mut prand: [u8; 3] = rng.random();
        prand[0] = (prand[0] & 0b0011_1111) | 0b0100_0000;
        let hash = private_address_hash(&irk, &prand);
        self.bytes = [prand[0], prand[1], prand[2], hash[0], hash[1], hash[2]];
    }

    pub fn is_static(&self) -> bool {
        self.kind == AddressKind::Static
    }
}

fn private_address_hash(irk: &Key128, prand: &[u8; 3]) -> [u8; 3] {
    let full = prf(irk, prand);
    [full[0], full[1], full[2]]
}

/// Whether an address has the static-random bit pattern.
pub fn looks_static(bytes: &[u8; 6]) -> bool {
    bytes[0] >> 6 == 0b11
}

/// Whether `bytes` is a private address generated from `irk`.
pub fn resolves_with(bytes: &[u8; 6], irk: &Key128) -> bool {
    if bytes[0] >> 6 != 0b01 {
        return false;
    }
    let prand = [bytes[0], bytes[1], bytes[2]];
    private_address_hash(irk, &prand) == [bytes[3], bytes[4], bytes[5]]
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn static_address_is_its_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let address = DeviceAddress::random_static(&mut rng);
        assert_eq!(address.bytes, address.identity);
        assert!(looks_static(&address.bytes));
        let mut regenerated = address.clone();
        regenerated.regenerate(&mut rng);
        assert_eq!(regenerated, address);
    }

    #[test]
    fn private_address_resolves_only_with_its_irk() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let identity = DeviceAddress::random_static(&mut rng).identity;
        let mut address = DeviceAddress::resolvable(identity, &mut rng);
        let irk = address.irk.unwrap();
        assert!(!looks_static(&address.bytes));
        assert!(resolves_with(&address.bytes, &irk));
        assert!(!resolves_with(&address.bytes, &[0u8; 16]));
        let before = address.bytes;
        address.regenerate(&mut rng);
        assert_ne!(before, address.bytes);
        assert_eq!(address.identity, identity);
        assert!(resolves_with(&address.bytes, &irk));
    }
}

//! Three-phase legacy pairing: feature exchange, STK generation, key
//! distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::profile::PairingMethod;
use super::ProtocolError;
use crate::crypto::{prf_parts, Key128};

/// Passkeys are six decimal digits.
pub const PASSKEY_SPACE: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingPhase {
    FeatureExchange,
    KeyGeneration,
    KeyDistribution,
    Complete,
}

/// Which side's random a confirm value commits to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfirmRole {
    Initiator,
    Responder,
}

impl ConfirmRole {
    fn label(self) -> &'static [u8] {
        match self {
            ConfirmRole::Initiator => b"M",
            ConfirmRole::Responder => b"S",
        }
    }
}

/// The TK as PRF key material.
pub fn tk_key(tk: u128) -> Key128 {
    tk.to_le_bytes()
}

pub fn confirm_value(tk: u128, role: ConfirmRole, rand: &[u8; 16]) -> [u8; 16] {
    prf_parts(&tk_key(tk), &[role.label(), rand])
}

/// `STK = PRF(TK, Srand ∥ Mrand)`.
pub fn short_term_key(tk: u128, mrand: &[u8; 16], srand: &[u8; 16]) -> Key128 {
    prf_parts(&tk_key(tk), &[srand, mrand])
}

/// Per-connection link key derived from the STK or LTK and both diversifiers.
pub fn session_key(key: &Key128, skd_central: &[u8; 8], skd_peripheral: &[u8; 8]) -> Key128 {
    prf_parts(key, &[b"sk", skd_central, skd_peripheral])
}

/// Weakest common method; a peripheral offering secure connections refuses
/// anything that would fall back to a TK-based method.
///
/// | central \ peripheral | JW | PK | NC | SC |
/// |---|---|---|---|---|
/// | JW | JW | JW | JW | rejected |
/// | PK | JW | PK | PK | rejected |
/// | NC | JW | PK | NC | NC |
/// | SC | JW | PK | NC | SC |
pub fn negotiate(central: PairingMethod, peripheral: PairingMethod) -> Result<PairingMethod, ProtocolError> {
    let negotiated = central.min(peripheral);
    if peripheral == PairingMethod::SecureConnections && !negotiated.is_secure_connections_based() {
        return Err(ProtocolError::PairingRejected { required: peripheral, negotiated });
    }
    Ok(negotiated)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BondRecord {
    pub peer_identity: [u8; 6],
    pub ltk: Key128,
    pub method: PairingMethod,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingSession {
    pub method: PairingMethod,
    /// Zero for just works, below 10^6 for passkey entry, a full-width random
    /// value for the secure-connections-based methods.
    pub tk: u128,
    pub mrand: [u8; 16],
    pub srand: [u8; 16],
    pub mconfirm: [u8; 16],
    pub sconfirm: [u8; 16],
    pub stk: Option<Key128>,
    pub ltk: Option<Key128>,
    pub phase: PairingPhase,
    pub encryption_started: bool,
}

impl PairingSession {
    /// Phase one: negotiates the method and draws the TK and both randoms.
    pub fn initiate<R: Rng + ?Sized>(
        central: PairingMethod,
        peripheral: PairingMethod,
        rng: &mut R,
    ) -> Result<Self, ProtocolError> {
        let method = negotiate(central, peripheral)?;
        let tk = match method {
            PairingMethod::JustWorks => 0,
            PairingMethod::PasskeyEntry => rng.random_range(0..PASSKEY_SPACE),
            PairingMethod::NumericComparison | PairingMethod::SecureConnections => rng.random(),
        };
        Ok(Self::with_values(method, tk, rng.random(), rng.random()))
    }

    pub fn with_values(method: PairingMethod, tk: u128, mrand: [u8; 16], srand: [u8; 16]) -> Self {
        Self {
            method,
            tk,
            mrand,
            srand,
            mconfirm: [0; 16],
            sconfirm: [0; 16],
            stk: None,
            ltk: None,
            phase: PairingPhase::FeatureExchange,
            encryption_started: false,
        }
    }

    fn expect_phase(&self, expected: PairingPhase) -> Result<(), ProtocolError> {
        if self.phase == expected {
            Ok(())
        } else {
            Err(ProtocolError::PhaseOrder { expected, actual: self.phase })
        }
    }

    /// Phase two: confirm values and the STK.
    pub fn derive_stk(&mut self) -> Result<Key128, ProtocolError> {
        self.expect_phase(PairingPhase::FeatureExchange)?;
        self.mconfirm = confirm_value(self.tk, ConfirmRole::Initiator, &self.mrand);
        self.sconfirm = confirm_value(self.tk, ConfirmRole::Responder, &self.srand);
        let stk = short_term_key(self.tk, &self.mrand, &self.srand);
        self.stk = Some(stk);
        self.phase = PairingPhase::KeyGeneration;
        Ok(stk)
    }

    pub fn start_encryption(&mut self) {
        self.encryption_started = true;
    }

    /// Phase three: records the LTK and returns the bond each side stores,
    /// in (central, peripheral) order.
    pub fn distribute_ltk(
        &mut self,
        ltk: Key128,
        central_identity: [u8; 6],
        peripheral_identity: [u8; 6],
    ) -> Result<(BondRecord, BondRecord), ProtocolError> {
        self.expect_phase(PairingPhase::KeyGeneration)?;
        if !self.encryption_started {
            return Err(ProtocolError::NotEncrypted);
        }
        self.phase = PairingPhase::KeyDistribution;
        self.ltk = Some(ltk);
        self.phase = PairingPhase::Complete;
        Ok((
            BondRecord { peer_identity: peripheral_identity, ltk, method: self.method },
            BondRecord { peer_identity: central_identity, ltk, method: self.method },
        ))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use PairingMethod::*;

    #[test]
    fn negotiation_table_is_exhaustive() {
        let expected = [
            [Ok(JustWorks), Ok(JustWorks), Ok(JustWorks), Err(())],
            [Ok(JustWorks), Ok(PasskeyEntry), Ok(PasskeyEntry), Err(())],
            [Ok(JustWorks), Ok(PasskeyEntry), Ok(NumericComparison), Ok(NumericComparison)],
            [Ok(JustWorks), Ok(PasskeyEntry), Ok(NumericComparison), Ok(SecureConnections)],
        ];
        for (i, central) in PairingMethod::ALL.into_iter().enumerate() {
            for (j, peripheral) in PairingMethod::ALL.into_iter().enumerate() {
                assert_eq!(
                    negotiate(central, peripheral).map_err(|_| ()),
                    expected[i][j],
                    "{central:?} vs {peripheral:?}"
                );
            }
        }
    }

    #[test]
    fn tk_by_method() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(PairingSession::initiate(JustWorks, JustWorks, &mut rng).unwrap().tk, 0);
        for _ in 0..50 {
            let s = PairingSession::initiate(PasskeyEntry, PasskeyEntry, &mut rng).unwrap();
            assert!(s.tk < PASSKEY_SPACE);
            assert_eq!(s.method, PasskeyEntry);
        }
        let downgraded = PairingSession::initiate(SecureConnections, JustWorks, &mut rng).unwrap();
        assert_eq!(downgraded.method, JustWorks);
        assert!(PairingSession::initiate(JustWorks, SecureConnections, &mut rng).is_err());
    }

    #[test]
    fn stk_is_symmetric_and_rand_sensitive() {
        let mut a = PairingSession::with_values(PasskeyEntry, 123_456, [1; 16], [2; 16]);
        let mut b = a.clone();
        assert_eq!(a.stk, None);
        assert_eq!(a.derive_stk().unwrap(), b.derive_stk().unwrap());
        let mut flipped = PairingSession::with_values(PasskeyEntry, 123_456, [1; 16], [2; 16]);
        flipped.mrand[0] ^= 1;
        assert_ne!(flipped.derive_stk().unwrap(), a.stk.unwrap());
        assert_eq!(a.phase, PairingPhase::KeyGeneration);
        assert!(a.derive_stk().is_err());
    }

    #[test]
    fn distribution_requires_encryption() {
        let mut s = PairingSession::with_values(JustWorks, 0, [1; 16], [2; 16]);
        assert!(matches!(s.distribute_ltk([9; 16], [1; 6], [2; 6]), Err(ProtocolError::PhaseOrder { .. })));
        s.derive_stk().unwrap();
        assert_eq!(s.distribute_ltk([9; 16], [1; 6], [2; 6]), Err(ProtocolError::NotEncrypted));
        s.start_encryption();
        let (central, peripheral) = s.distribute_ltk([9; 16], [1; 6], [2; 6]).unwrap();
        assert_eq!(central.ltk, peripheral.ltk);
        assert_eq!(central.peer_identity, [2; 6]);
        assert_eq!(peripheral.peer_identity, [1; 6]);
        assert_eq!(s.phase, PairingPhase::Complete);
        assert_eq!(s.ltk, Some([9; 16]));
    }
}

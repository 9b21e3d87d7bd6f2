//! Keyed pseudorandom function and the authenticated link cipher built on it.
//!
//! The PRF is HMAC-SHA256 truncated to 128 bits. Everything that needs key
//! material in the lab (confirm values, STK, session keys, resolvable private
//! addresses, write authentication tags, the link cipher) goes through [`prf`].

use hmac::{Hmac, Mac};
use sha2::Sha256;
use thiserror::Error;

/// A 128-bit key.
pub type Key128 = [u8; 16];

/// Length of the integrity tag appended to every encrypted PDU body.
pub const TAG_LEN: usize = 4;

const KEYSTREAM_LABEL: &[u8] = b"ks";
const TAG_LABEL: &[u8] = b"mic";

/// Tag verification failed: the ciphertext was altered, or the key or
/// counter differ from the sender's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("integrity check failed")]
pub struct IntegrityFailure;

/// `PRF(key, message)`: the first 16 bytes of HMAC-SHA256 keyed with `key`.
pub fn prf(key: &Key128, message: &[u8]) -> [u8; 16] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("HMAC takes keys of any length");
    mac.update(message);
    let digest = mac.finalize().into_bytes();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    out
}

/// PRF over the concatenation of `parts`, avoiding an intermediate allocation
/// at call sites.
pub fn prf_parts(key: &Key128, parts: &[&[u8]]) -> [u8; 16] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("HMAC takes keys of any length");
    for part in parts {
        mac.update(part);
    }
    let digest = mac.finalize().into_bytes();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    out
}

/// Four-byte tag: the PRF output truncated.
pub fn tag4(key: &Key128, parts: &[&[u8]]) -> [u8; TAG_LEN] {
    let full = prf_parts(key, parts);
    [full[0], full[1], full[2], full[3]]
}

fn apply_keystream(key: &Key128, counter: u64, data: &mut [u8]) {
    let counter = counter.to_le_bytes();
    for (block_index, chunk) in data.chunks_mut(16).enumerate() {
        let block = prf_parts(key, &[KEYSTREAM_LABEL, &counter, &(block_index as u32).to_le_bytes()]);
        for (byte, pad) in chunk.iter_mut().zip(block.iter()) {
            *byte ^= pad;
        }
    }
}

/// Encrypts `plaintext` under `key` with the sender's packet `counter`.
///
/// Output is the ciphertext followed by a [`TAG_LEN`]-byte integrity tag
/// computed over the counter and ciphertext.
pub fn encrypt_pdu(key: &Key128, counter: u64, plaintext: &[u8]) -> Vec<u8> {
    let mut out = plaintext.to_vec();
    apply_keystream(key, counter, &mut out);
    let tag = tag4(key, &[TAG_LABEL, &counter.to_le_bytes(), &out]);
    out.extend_from_slice(&tag);
    out
}

/// Inverse of [`encrypt_pdu`]; verifies the tag before decrypting.
pub fn decrypt_pdu(key: &Key128, counter: u64, ciphertext: &[u8]) -> Result<Vec<u8>, IntegrityFailure> {
    if ciphertext.len() < TAG_LEN {
        return Err(IntegrityFailure);
    }
    let (body, tag) = ciphertext.split_at(ciphertext.len() - TAG_LEN);
    let expected = tag4(key, &[TAG_LABEL, &counter.to_le_bytes(), body]);
    // Not constant time; nothing in the lab observes timing.
    if expected != tag {
        return Err(IntegrityFailure);
    }
    let mut out = body.to_vec();
    apply_keystream(key, counter, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEY: Key128 = [7u8; 16];

    #[test]
    fn prf_is_deterministic_and_key_sensitive() {
        assert_eq!(prf(&KEY, b"abc"), prf(&KEY, b"abc"));
        let mut other = KEY;
        other[15] ^= 1;
        assert_ne!(prf(&KEY, b"abc"), prf(&other, b"abc"));
        assert_eq!(prf(&KEY, b"abcdef"), prf_parts(&KEY, &[b"abc", b"def"]));
    }

    #[test]
    fn roundtrip_steps_payload() {
        let ct = encrypt_pdu(&KEY, 3, b"steps:8042");
        assert_eq!(ct.len(), 10 + TAG_LEN);
        assert_ne!(&ct[..10], b"steps:8042");
        assert_eq!(decrypt_pdu(&KEY, 3, &ct).unwrap(), b"steps:8042");
    }

    #[test]
    fn flipped_bit_is_rejected() {
        let mut ct = encrypt_pdu(&KEY, 0, b"steps:8042");
        ct[2] ^= 0x10;
        assert_eq!(decrypt_pdu(&KEY, 0, &ct), Err(IntegrityFailure));
    }

    #[test]
    fn wrong_key_or_counter_is_rejected() {
        let ct = encrypt_pdu(&KEY, 9, b"hello");
        assert_eq!(decrypt_pdu(&[8u8; 16], 9, &ct), Err(IntegrityFailure));
        assert_eq!(decrypt_pdu(&KEY, 10, &ct), Err(IntegrityFailure));
    }

    #[test]
    fn short_input_is_rejected() {
        assert_eq!(decrypt_pdu(&KEY, 0, &[1, 2, 3]), Err(IntegrityFailure));
        let empty = encrypt_pdu(&KEY, 0, b"");
        assert_eq!(decrypt_pdu(&KEY, 0, &empty).unwrap(), Vec::<u8>::new());
    }
}

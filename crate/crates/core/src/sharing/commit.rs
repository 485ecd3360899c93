//! Hash commitments: `SHA-256(domain || payload || nonce)` with a 16-byte
//! nonce. The digest travels in one frame, payload and nonce in a later one.

use rand::Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"privateyes/commit/v1";

pub const DIGEST_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Commitment(pub [u8; DIGEST_LEN]);

/// The opening of a [`Commitment`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decommitment {
    pub payload: Vec<u8>,
    pub nonce: [u8; NONCE_LEN],
}

fn digest(payload: &[u8], nonce: &[u8; NONCE_LEN]) -> [u8; DIGEST_LEN] {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update((payload.len() as u64).to_le_bytes());
    h.update(payload);
    h.update(nonce);
    h.finalize().into()
}

pub fn commit<R: Rng + ?Sized>(payload: Vec<u8>, rng: &mut R) -> (Commitment, Decommitment) {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill(&mut nonce[..]);
    let c = Commitment(digest(&payload, &nonce));
    (c, Decommitment { payload, nonce })
}

impl Commitment {
    pub fn verify(&self, opening: &Decommitment) -> bool {
        digest(&opening.payload, &opening.nonce) == self.0
    }
}

impl Decommitment {
    /// Wire form: payload followed by the nonce.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.payload.clone();
        out.extend_from_slice(&self.nonce);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < NONCE_LEN {
            return None;
        }
        let split = bytes.len() - NONCE_LEN;
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&bytes[split..]);
        Some(Decommitment {
            payload: bytes[..split].to_vec(),
            nonce,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn binds_payload_and_nonce() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (c, mut d) = commit(vec![1, 2, 3], &mut rng);
        assert!(c.verify(&d));
        d.payload[0] ^= 1;
        assert!(!c.verify(&d));
        d.payload[0] ^= 1;
        d.nonce[3] ^= 0x80;
        assert!(!c.verify(&d));
    }

    #[test]
    fn wire_form_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (_, d) = commit(vec![9; 40], &mut rng);
        assert_eq!(Decommitment::from_bytes(&d.to_bytes()).unwrap(), d);
        assert!(Decommitment::from_bytes(&[0u8; 4]).is_none());
    }
}

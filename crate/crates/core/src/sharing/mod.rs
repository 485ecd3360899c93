//! Additive secret sharing with SPDZ-style information-theoretic MACs.
//!
//! A value `x` is held as `n` additive shares together with shares of the
//! tag `kappa * x`, where the global MAC key `kappa` is itself additively
//! shared and never reconstructed. Linear maps act share-wise on both halves,
//! and every opening is followed by a MAC check that aborts on any
//! inconsistency.

pub mod commit;
mod opening;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldElement, FieldError};

pub use opening::{open_with_mac_check, run_opening, OpeningScript, OpeningSession};
pub use commit::{Commitment, Decommitment};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SharingError {
    #[error("invalid sharing parameter: {0}")]
    Parameter(String),
    #[error("incomplete sharing: {present} of {expected} shares present")]
    IncompleteSharing { present: usize, expected: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input mask {0} was already consumed")]
    Replay(MaskId),
    #[error("input mask {mask} belongs to client {owner}, not client {caller}")]
    Unauthorized { mask: MaskId, owner: u32, caller: u32 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Why an opening (and with it the whole training run) was aborted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbortReason {
    MacFailure,
    Equivocation,
    Timeout,
    Malformed,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AbortReason::MacFailure => "mac-failure",
            AbortReason::Equivocation => "equivocation",
            AbortReason::Timeout => "timeout",
            AbortReason::Malformed => "malformed",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("ABORT ({reason}): {detail}")]
pub struct Abort {
    pub reason: AbortReason,
    pub detail: String,
}

impl Abort {
    pub fn new(reason: AbortReason, detail: impl Into<String>) -> Self {
        Abort {
            reason,
            detail: detail.into(),
        }
    }
}

/// `n` additive shares of a secret, one per server. A sharing with fewer
/// than `n` shares models a server withholding its output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdditiveSharing {
    n: usize,
    shares: Vec<FieldElement>,
}

impl AdditiveSharing {
    pub fn new(n: usize, shares: Vec<FieldElement>) -> Self {
        AdditiveSharing { n, shares }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shares(&self) -> &[FieldElement] {
        &self.shares
    }
}

/// Splits `x` into `n` shares: `n - 1` uniform draws, the last one fixing the sum.
pub fn share<R: Rng + ?Sized>(
    x: FieldElement,
    n: usize,
    rng: &mut R,
) -> Result<AdditiveSharing, SharingError> {
    if n == 0 {
        return Err(SharingError::Parameter("n must be at least 1".into()));
    }
    let field = x.field();
    let mut shares = Vec::with_capacity(n);
    let mut acc = field.zero();
    for _ in 0..n - 1 {
        let s = field.random(rng);
        acc += s;
        shares.push(s);
    }
    shares.push(x - acc);
    Ok(AdditiveSharing { n, shares })
}

pub fn reconstruct(s: &AdditiveSharing) -> Result<FieldElement, SharingError> {
    if s.shares.len() != s.n || s.n == 0 {
        return Err(SharingError::IncompleteSharing {
            present: s.shares.len(),
            expected: s.n,
        });
    }
    let mut acc = s.shares[0];
    for &v in &s.shares[1..] {
        acc = acc.try_add(v)?;
    }
    Ok(acc)
}

/// Additive sharing of the global MAC key `kappa`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacKeySharing {
    key_shares: Vec<FieldElement>,
}

impl MacKeySharing {
    pub fn new(key_shares: Vec<FieldElement>) -> Self {
        MacKeySharing { key_shares }
    }

    pub fn key_shares(&self) -> &[FieldElement] {
        &self.key_shares
    }

    pub fn share_of(&self, server: usize) -> FieldElement {
        self.key_shares[server]
    }

    pub fn n(&self) -> usize {
        self.key_shares.len()
    }
}

/// One server's share of a value together with its share of the MAC tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuthShare {
    pub value: FieldElement,
    pub mac: FieldElement,
}

impl AuthShare {
    pub fn new(value: FieldElement, mac: FieldElement) -> Self {
        AuthShare { value, mac }
    }

    pub fn zero(field: Field) -> Self {
        AuthShare {
            value: field.zero(),
            mac: field.zero(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MaskId(pub u64);

impl fmt::Display for MaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A preprocessed input mask as issued by the dealer: the plaintext `r`
/// for its designated client and an authenticated sharing of `r` for the
/// servers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputMask {
    pub id: MaskId,
    pub client: u32,
    pub r: FieldElement,
    pub server_shares: Vec<AuthShare>,
}

impl InputMask {
    pub fn client_part(&self) -> ClientMask {
        ClientMask {
            id: self.id,
            client: self.client,
            r: self.r,
            consumed: false,
        }
    }
}

/// The client-side half of an [`InputMask`]. Single use.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientMask {
    pub id: MaskId,
    pub client: u32,
    pub r: FieldElement,
    consumed: bool,
}

impl ClientMask {
    pub fn new(id: MaskId, client: u32, r: FieldElement) -> Self {
        ClientMask {
            id,
            client,
            r,
            consumed: false,
        }
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}

/// Trusted stand-in for the offline phase: owns `kappa`, hands out its
/// sharing once and issues single-use authenticated input masks.
pub struct Dealer {
    field: Field,
    n: usize,
    kappa: FieldElement,
    key: MacKeySharing,
    rng: ChaCha20Rng,
    next_id: u64,
}

impl Dealer {
    pub fn new(field: Field, n: usize, seed: u64) -> Result<Self, SharingError> {
        if n == 0 {
            return Err(SharingError::Parameter("n must be at least 1".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let kappa = field.random(&mut rng);
        let key = MacKeySharing::new(share(kappa, n, &mut rng)?.shares);
        Ok(Dealer {
            field,
            n,
            kappa,
            key,
            rng,
            next_id: 0,
        })
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn key_sharing(&self) -> &MacKeySharing {
        &self.key
    }

    /// The plaintext MAC key. Only the dealer trace exposes it; no party does.
    pub fn mac_key(&self) -> FieldElement {
        self.kappa
    }

    pub fn issue_mask(&mut self, client: u32) -> InputMask {
        self.issue_mask_shifted(client, self.field.zero())
    }

    /// Issues a mask whose `r` is the sampled value plus a public `offset`.
    ///
    /// The randomness consumed is identical to [`Dealer::issue_mask`] and
    /// only the last server's shares absorb the offset. The simulator uses
    /// this to couple two runs whose inputs differ but whose views for
    /// servers `0..n-1` must coincide.
    pub fn issue_mask_shifted(&mut self, client: u32, offset: FieldElement) -> InputMask {
        let r = self.field.random(&mut self.rng) + offset;
        let values = share(r, self.n, &mut self.rng).expect("n >= 1");
        let macs = share(self.kappa * r, self.n, &mut self.rng).expect("n >= 1");
        let id = MaskId(self.next_id);
        self.next_id += 1;
        InputMask {
            id,
            client,
            r,
            server_shares: values
                .shares
                .into_iter()
                .zip(macs.shares)
                .map(|(value, mac)| AuthShare { value, mac })
                .collect(),
        }
    }
}

/// Offline phase in one call: a fresh key sharing and one mask per entry of
/// `designated` (the client each mask is addressed to).
pub fn dealer_setup(
    field: Field,
    n: usize,
    designated: &[u32],
    seed: u64,
) -> Result<(MacKeySharing, Vec<InputMask>, FieldElement), SharingError> {
    if n < 2 {
        return Err(SharingError::Parameter(
            "the offline phase needs at least two servers".into(),
        ));
    }
    let mut dealer = Dealer::new(field, n, seed)?;
    let masks = designated.iter().map(|&c| dealer.issue_mask(c)).collect();
    Ok((dealer.key.clone(), masks, dealer.kappa))
}

/// Client side of the input protocol: publishes `epsilon = x - r` and burns the mask.
pub fn client_input(
    client: u32,
    x: FieldElement,
    mask: &mut ClientMask,
) -> Result<FieldElement, SharingError> {
    if mask.client != client {
        return Err(SharingError::Unauthorized {
            mask: mask.id,
            owner: mask.client,
            caller: client,
        });
    }
    if mask.consumed {
        return Err(SharingError::Replay(mask.id));
    }
    let eps = x.try_sub(mask.r)?;
    mask.consumed = true;
    Ok(eps)
}

/// Server side of the input protocol: the authenticated share of `x` is the
/// mask share shifted by the public `epsilon` (value on server 0 only, MAC
/// on every server through its key share).
pub fn derive_input_share(
    server: usize,
    mask_share: AuthShare,
    epsilon: FieldElement,
    key_share: FieldElement,
) -> AuthShare {
    let value = if server == 0 {
        mask_share.value + epsilon
    } else {
        mask_share.value
    };
    AuthShare {
        value,
        mac: mask_share.mac + key_share * epsilon,
    }
}

/// `sum_k coeffs[k] * inputs[k]` on one server's shares. No communication.
pub fn linear_combine_local(
    inputs: &[AuthShare],
    coeffs: &[FieldElement],
) -> Result<AuthShare, SharingError> {
    if inputs.len() != coeffs.len() {
        return Err(SharingError::LengthMismatch {
            left: inputs.len(),
            right: coeffs.len(),
        });
    }
    let Some(first) = inputs.first() else {
        return Err(SharingError::Parameter("empty linear combination".into()));
    };
    let field = first.value.field();
    let mut out = AuthShare::zero(field);
    for (s, &c) in inputs.iter().zip(coeffs) {
        out.value = out.value.try_add(c.try_mul(s.value)?)?;
        out.mac = out.mac.try_add(c.try_mul(s.mac)?)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z23() -> Field {
        Field::new(23).unwrap()
    }

    #[test]
    fn worked_sharing_reconstructs() {
        let f = z23();
        let s = AdditiveSharing::new(3, vec![f.element(5), f.element(17), f.element(4)]);
        assert_eq!(reconstruct(&s).unwrap().value(), 3);
        let s = AdditiveSharing::new(3, vec![f.element(1), f.element(9), f.element(11)]);
        let sum = reconstruct(&s).unwrap();
        assert_eq!(sum.value(), 21);
        assert_eq!(sum.value() as f64 / 3.0, 7.0);
        let single = AdditiveSharing::new(1, vec![f.element(8)]);
        assert_eq!(reconstruct(&single).unwrap().value(), 8);
    }

    #[test]
    fn missing_share_is_an_error() {
        let f = z23();
        let s = AdditiveSharing::new(3, vec![f.element(5), f.element(17)]);
        assert_eq!(
            reconstruct(&s),
            Err(SharingError::IncompleteSharing {
                present: 2,
                expected: 3
            })
        );
    }

    #[test]
    fn zero_secret_two_shares_are_negatives() {
        let f = z23();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let s = share(f.zero(), 2, &mut rng).unwrap();
        let u = s.shares()[0];
        assert_eq!(s.shares()[1], -u);
    }

    #[test]
    fn zero_servers_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        assert!(share(z23().one(), 0, &mut rng).is_err());
    }

    #[test]
    fn share_reconstruct_random() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let f = Field::mersenne127();
        for i in 0..10_000 {
            let x = f.random(&mut rng);
            let n = 1 + (i % 7);
            let s = share(x, n, &mut rng).unwrap();
            // Oracle: direct modular summation in u128 (shares < 2^127).
            let direct = s
                .shares()
                .iter()
                .fold(0u128, |acc, v| (acc + v.value()) % f.modulus());
            assert_eq!(direct, x.value());
            assert_eq!(reconstruct(&s).unwrap(), x);
        }
    }

    #[test]
    fn dealer_masks_carry_valid_macs() {
        let f = Field::mersenne127();
        let (key, masks, kappa) = dealer_setup(f, 3, &[0, 1, 1, 2], 17).unwrap();
        let kappa_oracle = key.key_shares().iter().fold(f.zero(), |a, &b| a + b);
        assert_eq!(kappa_oracle, kappa);
        for m in &masks {
            let r = m.server_shares.iter().fold(f.zero(), |a, s| a + s.value);
            let tag = m.server_shares.iter().fold(f.zero(), |a, s| a + s.mac);
            assert_eq!(r, m.r);
            assert_eq!(tag, kappa * r);
        }
        let mut ids: Vec<_> = masks.iter().map(|m| m.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn dealer_without_masks() {
        let (key, masks, _) = dealer_setup(Field::mersenne127(), 3, &[], 1).unwrap();
        assert_eq!(key.n(), 3);
        assert!(masks.is_empty());
        assert!(dealer_setup(Field::mersenne127(), 1, &[], 1).is_err());
    }

    #[test]
    fn shifted_mask_changes_only_last_server() {
        let f = z23();
        let mut a = Dealer::new(f, 3, 4).unwrap();
        let mut b = Dealer::new(f, 3, 4).unwrap();
        let ma = a.issue_mask(0);
        let mb = b.issue_mask_shifted(0, f.element(5));
        assert_eq!(mb.r, ma.r + f.element(5));
        assert_eq!(ma.server_shares[..2], mb.server_shares[..2]);
        let kappa = a.mac_key();
        let tag = mb.server_shares.iter().fold(f.zero(), |acc, s| acc + s.mac);
        assert_eq!(tag, kappa * mb.r);
    }

    fn inputs_from_mask(
        mask: &InputMask,
        key: &MacKeySharing,
        eps: FieldElement,
    ) -> Vec<AuthShare> {
        (0..key.n())
            .map(|i| derive_input_share(i, mask.server_shares[i], eps, key.share_of(i)))
            .collect()
    }

    #[test]
    fn input_protocol_small_field() {
        let f = z23();
        // r = 20, x = 3 -> epsilon = 6.
        let mut cm = ClientMask::new(MaskId(0), 7, f.element(20));
        let eps = client_input(7, f.element(3), &mut cm).unwrap();
        assert_eq!(eps.value(), 6);
        assert!(cm.is_consumed());
        assert_eq!(
            client_input(7, f.element(3), &mut cm),
            Err(SharingError::Replay(MaskId(0)))
        );
        let mut foreign = ClientMask::new(MaskId(1), 8, f.element(2));
        assert!(matches!(
            client_input(7, f.element(3), &mut foreign),
            Err(SharingError::Unauthorized { .. })
        ));
        assert!(!foreign.is_consumed());
    }

    #[test]
    fn input_protocol_yields_authenticated_sharing() {
        let f = z23();
        let mut dealer = Dealer::new(f, 3, 99).unwrap();
        let kappa = dealer.mac_key();
        let key = dealer.key_sharing().clone();
        let mask = dealer.issue_mask(0);
        let mut cm = mask.client_part();
        let x = f.element(3);
        let eps = client_input(0, x, &mut cm).unwrap();
        let shares = inputs_from_mask(&mask, &key, eps);
        let v = shares.iter().fold(f.zero(), |a, s| a + s.value);
        let m = shares.iter().fold(f.zero(), |a, s| a + s.mac);
        assert_eq!(v, x);
        assert_eq!(m, kappa * x);

        // x = r gives epsilon = 0 and the mask sharing unchanged in value.
        let mask2 = dealer.issue_mask(0);
        let mut cm2 = mask2.client_part();
        let eps2 = client_input(0, mask2.r, &mut cm2).unwrap();
        assert!(eps2.is_zero());
        let shares2 = inputs_from_mask(&mask2, &key, eps2);
        for (s, m) in shares2.iter().zip(&mask2.server_shares) {
            assert_eq!(s.value, m.value);
        }
    }

    #[test]
    fn local_combination_worked_example() {
        let f = z23();
        let ins: Vec<_> = [5, 3, 16]
            .iter()
            .map(|&v| AuthShare::new(f.element(v), f.zero()))
            .collect();
        let out = linear_combine_local(&ins, &[f.one(); 3]).unwrap();
        assert_eq!(out.value.value(), 1);
        let single = linear_combine_local(&ins[..1], &[f.one()]).unwrap();
        assert_eq!(single, ins[0]);
        assert!(matches!(
            linear_combine_local(&ins, &[f.one()]),
            Err(SharingError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn local_combination_preserves_macs_and_commutes_with_reconstruct() {
        let f = Field::mersenne127();
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut dealer = Dealer::new(f, 4, 5).unwrap();
        let kappa = dealer.mac_key();
        let key = dealer.key_sharing().clone();
        for _ in 0..50 {
            let k = 5;
            let xs: Vec<_> = (0..k).map(|_| f.random(&mut rng)).collect();
            let coeffs: Vec<_> = (0..k).map(|_| f.random(&mut rng)).collect();
            let per_input: Vec<Vec<AuthShare>> = xs
                .iter()
                .map(|&x| {
                    let mask = dealer.issue_mask(0);
                    let mut cm = mask.client_part();
                    let eps = client_input(0, x, &mut cm).unwrap();
                    inputs_from_mask(&mask, &key, eps)
                })
                .collect();
            let mut value = f.zero();
            let mut mac = f.zero();
            for i in 0..4 {
                let column: Vec<_> = per_input.iter().map(|v| v[i]).collect();
                let out = linear_combine_local(&column, &coeffs).unwrap();
                value += out.value;
                mac += out.mac;
            }
            let expected = xs
                .iter()
                .zip(&coeffs)
                .fold(f.zero(), |a, (&x, &c)| a + c * x);
            assert_eq!(value, expected);
            assert_eq!(mac, kappa * expected);
        }
    }
}

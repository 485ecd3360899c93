use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::commit::{commit, Commitment, Decommitment};
use super::{Abort, AbortReason, AuthShare, MacKeySharing};
use crate::field::{Field, FieldElement};

const COIN_SEED_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Shares,
    Coin,
    Sigma,
    Reveal,
    Done,
}

/// One server's side of a batched, MAC-checked opening.
///
/// Steps, each separated by a message exchange:
/// 1. broadcast value shares; every server sums them into `y`;
/// 2. commit to a coin seed bound to a digest of `y`, then reveal;
/// 3. derive public coefficients `rho` (with `rho_0 = 1`) from all seeds;
/// 4. `sigma_i = sum_l rho_l * (mac_il - kappa_i * y_l)`, committed then revealed;
/// 5. output `y` iff `sum_i sigma_i = 0`.
pub struct OpeningSession {
    index: usize,
    n: usize,
    field: Field,
    key_share: FieldElement,
    shares: Vec<AuthShare>,
    phase: Phase,
    opened: Option<Vec<FieldElement>>,
    view_digest: [u8; 32],
    coin_opening: Option<Decommitment>,
    sigma: Option<FieldElement>,
    sigma_opening: Option<Decommitment>,
}

impl OpeningSession {
    pub fn new(index: usize, n: usize, key_share: FieldElement, shares: Vec<AuthShare>) -> Self {
        OpeningSession {
            index,
            n,
            field: key_share.field(),
            key_share,
            shares,
            phase: Phase::Shares,
            opened: None,
            view_digest: [0; 32],
            coin_opening: None,
            sigma: None,
            sigma_opening: None,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    fn expect_phase(&self, p: Phase) {
        assert_eq!(self.phase, p, "opening step called out of order");
    }

    pub fn broadcast_values(&self) -> Vec<FieldElement> {
        self.shares.iter().map(|s| s.value).collect()
    }

    /// `all[i]` is the value vector broadcast by server `i` (own included).
    pub fn receive_values(&mut self, all: &[Vec<FieldElement>]) -> Result<(), Abort> {
        self.expect_phase(Phase::Shares);
        if all.len() != self.n {
            return Err(Abort::new(
                AbortReason::Timeout,
                format!("{} of {} value broadcasts arrived", all.len(), self.n),
            ));
        }
        let len = self.shares.len();
        let mut y = vec![self.field.zero(); len];
        for (i, v) in all.iter().enumerate() {
            if v.len() != len {
                return Err(Abort::new(
                    AbortReason::Malformed,
                    format!("server {i} broadcast {} values, expected {len}", v.len()),
                ));
            }
            for (acc, &x) in y.iter_mut().zip(v) {
                *acc = acc.try_add(x).map_err(|e| {
                    Abort::new(AbortReason::Malformed, format!("server {i}: {e}"))
                })?;
            }
        }
        let mut h = Sha256::new();
        h.update(b"privateyes/opened-view");
        for e in &y {
            h.update(e.to_le_bytes());
        }
        self.view_digest = h.finalize().into();
        self.opened = Some(y);
        self.phase = Phase::Coin;
        Ok(())
    }

    pub fn opened(&self) -> Option<&[FieldElement]> {
        self.opened.as_deref()
    }

    pub fn commit_coin<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Commitment {
        self.expect_phase(Phase::Coin);
        let mut payload = vec![0u8; COIN_SEED_LEN];
        rng.fill(&mut payload[..]);
        payload.extend_from_slice(&self.view_digest);
        let (c, d) = commit(payload, rng);
        self.coin_opening = Some(d);
        c
    }

    pub fn reveal_coin(&self) -> Decommitment {
        self.coin_opening.clone().expect("coin committed")
    }

    pub fn receive_coin(
        &mut self,
        commitments: &[Commitment],
        reveals: &[Decommitment],
    ) -> Result<(), Abort> {
        self.expect_phase(Phase::Coin);
        check_openings(commitments, reveals, self.n)?;
        let mut h = Sha256::new();
        h.update(b"privateyes/coin");
        for (i, d) in reveals.iter().enumerate() {
            if d.payload.len() != COIN_SEED_LEN + 32 {
                return Err(Abort::new(
                    AbortReason::Malformed,
                    format!("server {i} coin payload has {} bytes", d.payload.len()),
                ));
            }
            if d.payload[COIN_SEED_LEN..] != self.view_digest {
                return Err(Abort::new(
                    AbortReason::Equivocation,
                    format!("server {i} opened a different vector"),
                ));
            }
            h.update(&d.payload[..COIN_SEED_LEN]);
        }
        let seed: [u8; 32] = h.finalize().into();
        let mut coin = ChaCha20Rng::from_seed(seed);
        let y = self.opened.as_ref().expect("values received");
        let mut sigma = self.field.zero();
        for (l, (s, &yl)) in self.shares.iter().zip(y).enumerate() {
            let rho = if l == 0 {
                self.field.one()
            } else {
                self.field.random(&mut coin)
            };
            sigma += rho * (s.mac - self.key_share * yl);
        }
        self.sigma = Some(sigma);
        self.phase = Phase::Sigma;
        Ok(())
    }

    pub fn sigma(&self) -> Option<FieldElement> {
        self.sigma
    }

    /// Shifts this server's `sigma` before it is committed. Honest servers
    /// never call this; scripted adversaries use it to attempt a MAC forgery.
    pub fn adjust_sigma(&mut self, delta: FieldElement) {
        self.expect_phase(Phase::Sigma);
        if let Some(s) = self.sigma.as_mut() {
            *s += delta;
        }
    }

    pub fn commit_sigma<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Commitment {
        self.expect_phase(Phase::Sigma);
        let sigma = self.sigma.expect("sigma computed");
        let (c, d) = commit(sigma.to_le_bytes().to_vec(), rng);
        self.sigma_opening = Some(d);
        self.phase = Phase::Reveal;
        c
    }

    pub fn reveal_sigma(&self) -> Decommitment {
        self.sigma_opening.clone().expect("sigma committed")
    }

    pub fn finish(
        &mut self,
        commitments: &[Commitment],
        reveals: &[Decommitment],
    ) -> Result<Vec<FieldElement>, Abort> {
        self.expect_phase(Phase::Reveal);
        check_openings(commitments, reveals, self.n)?;
        let mut total = self.field.zero();
        for (i, d) in reveals.iter().enumerate() {
            let bytes: [u8; 16] = d.payload.as_slice().try_into().map_err(|_| {
                Abort::new(AbortReason::Malformed, format!("server {i} sigma length"))
            })?;
            let s = self.field.from_le_bytes(bytes).map_err(|e| {
                Abort::new(AbortReason::Malformed, format!("server {i} sigma: {e}"))
            })?;
            total += s;
        }
        self.phase = Phase::Done;
        if !total.is_zero() {
            return Err(Abort::new(
                AbortReason::MacFailure,
                format!("sum of sigma is {total}, not 0"),
            ));
        }
        Ok(self.opened.clone().expect("values received"))
    }
}

fn check_openings(
    commitments: &[Commitment],
    reveals: &[Decommitment],
    n: usize,
) -> Result<(), Abort> {
    if commitments.len() != n || reveals.len() != n {
        return Err(Abort::new(
            AbortReason::Timeout,
            format!(
                "{} commitments and {} reveals for {n} servers",
                commitments.len(),
                reveals.len()
            ),
        ));
    }
    for (i, (c, d)) in commitments.iter().zip(reveals).enumerate() {
        if !c.verify(d) {
            return Err(Abort::new(
                AbortReason::Equivocation,
                format!("server {i} revealed a value that does not match its commitment"),
            ));
        }
    }
    Ok(())
}

/// Deviations one corrupted server applies during an in-memory opening.
#[derive(Clone, Debug, Default)]
pub struct OpeningScript {
    pub corrupted: Option<usize>,
    /// Added to the corrupted server's broadcast value at this coordinate.
    pub value_offset: Option<(usize, FieldElement)>,
    /// Added to the corrupted server's sigma before committing.
    pub sigma_offset: Option<FieldElement>,
    /// Reveal a sigma different from the committed one.
    pub equivocate: bool,
    /// Never send the value broadcast.
    pub withhold: bool,
}

impl OpeningScript {
    pub fn honest() -> Self {
        OpeningScript::default()
    }
}

/// Runs a full opening among `n` in-memory servers, applying `script`, and
/// returns the output as seen by the honest servers.
pub fn run_opening<R: Rng + ?Sized>(
    value_shares: &[Vec<FieldElement>],
    mac_shares: &[Vec<FieldElement>],
    key: &MacKeySharing,
    script: &OpeningScript,
    rng: &mut R,
) -> Result<Vec<FieldElement>, Abort> {
    let n = key.n();
    if value_shares.len() != n || mac_shares.len() != n {
        return Err(Abort::new(
            AbortReason::Timeout,
            "one value/mac share vector per server required",
        ));
    }
    let bad = script.corrupted;
    let mut sessions: Vec<OpeningSession> = (0..n)
        .map(|i| {
            let shares = value_shares[i]
                .iter()
                .zip(&mac_shares[i])
                .map(|(&v, &m)| AuthShare::new(v, m))
                .collect();
            OpeningSession::new(i, n, key.share_of(i), shares)
        })
        .collect();

    let mut broadcasts: Vec<Option<Vec<FieldElement>>> =
        sessions.iter().map(|s| Some(s.broadcast_values())).collect();
    if let Some(b) = bad {
        if let Some((coord, delta)) = script.value_offset {
            if let Some(v) = broadcasts[b].as_mut() {
                v[coord] += delta;
            }
        }
        if script.withhold {
            broadcasts[b] = None;
        }
    }
    let honest: Vec<usize> = (0..n).filter(|&i| Some(i) != bad).collect();
    for &i in &honest {
        // Each server keeps its own values even if it withholds them from others.
        let received: Vec<Vec<FieldElement>> = (0..n)
            .filter_map(|j| {
                if j == i {
                    Some(sessions[i].broadcast_values())
                } else {
                    broadcasts[j].clone()
                }
            })
            .collect();
        sessions[i].receive_values(&received)?;
    }
    if let Some(b) = bad {
        let view: Vec<Vec<FieldElement>> = (0..n)
            .map(|j| broadcasts[j].clone().unwrap_or_else(|| sessions[j].broadcast_values()))
            .collect();
        sessions[b].receive_values(&view)?;
    }

    let coin_commits: Vec<Commitment> = sessions.iter_mut().map(|s| s.commit_coin(rng)).collect();
    let coin_reveals: Vec<Decommitment> = sessions.iter().map(|s| s.reveal_coin()).collect();
    for s in sessions.iter_mut() {
        s.receive_coin(&coin_commits, &coin_reveals)?;
    }

    if let (Some(b), Some(delta)) = (bad, script.sigma_offset) {
        sessions[b].adjust_sigma(delta);
    }
    let sigma_commits: Vec<Commitment> =
        sessions.iter_mut().map(|s| s.commit_sigma(rng)).collect();
    let mut sigma_reveals: Vec<Decommitment> = sessions.iter().map(|s| s.reveal_sigma()).collect();
    if let (Some(b), true) = (bad, script.equivocate) {
        sigma_reveals[b].payload[0] ^= 1;
    }

    let mut out = None;
    for &i in &honest {
        out = Some(sessions[i].finish(&sigma_commits, &sigma_reveals)?);
    }
    Ok(out.expect("at least one honest server"))
}

/// Honest opening: every server follows the protocol.
pub fn open_with_mac_check<R: Rng + ?Sized>(
    value_shares: &[Vec<FieldElement>],
    mac_shares: &[Vec<FieldElement>],
    key: &MacKeySharing,
    rng: &mut R,
) -> Result<Vec<FieldElement>, Abort> {
    run_opening(value_shares, mac_shares, key, &OpeningScript::honest(), rng)
}

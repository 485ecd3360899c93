//! Gradient matching for the linear gaze model. A candidate client is
//! `theta = (mu, L, b)`: gaze mean, Cholesky factor of the gaze covariance
//! and appearance offset. Its expected local update is simulated from the
//! first and second moments of `(f, g)` that `theta` implies, then compared
//! with a leaked update.

use serde::{Deserialize, Serialize};

use crate::fedcore::PopulationPrior;

/// Attack hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Weight of the prior term.
    pub alpha: f64,
    /// Weight of the gaze (bias-coordinate) matching term.
    pub beta: f64,
    /// Weight of the appearance (weight-matrix) matching term.
    pub gamma: f64,
    /// Solver iterations per attacked update.
    pub steps: usize,
    /// Multiplies the prior term on top of `alpha`.
    pub prior_strength: f64,
    /// Per-coordinate scale of gradient mismatch treated as noise.
    pub data_scale: f64,
    /// Fit the gaze covariance; when off it stays at the prior centre.
    pub fit_covariance: bool,
    /// Feed each round's estimate into the next round as the prior centre.
    pub chain: bool,
    /// Attack only this round's leak.
    pub only_round: Option<u32>,
    /// Samples drawn from each estimated distribution for KL scoring.
    pub recon_samples: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            alpha: 10.0,
            beta: 6.0,
            gamma: 4.0,
            steps: 60,
            prior_strength: 1.0,
            data_scale: 0.02,
            fit_covariance: true,
            chain: true,
            only_round: None,
            recon_samples: 500,
            seed: 7,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), super::LeakError> {
        let weights = [self.alpha, self.beta, self.gamma, self.prior_strength, self.data_scale];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.data_scale == 0.0 {
            return Err(super::LeakError::Config(
                "attack weights must be finite and non-negative, data scale positive".into(),
            ));
        }
        Ok(())
    }
}

/// Parameters of one reconstructed client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub mu: [f64; 2],
    /// Lower-triangular `[l00, l10, l11]`.
    pub chol: [f64; 3],
    pub offset: Vec<f64>,
}

impl Theta {
    pub const GAZE_PARAMS: usize = 5;

    pub fn from_prior(prior: &PopulationPrior) -> Self {
        Theta {
            mu: prior.gaze_mean,
            chol: cholesky(prior.gaze_cov),
            offset: vec![0.0; prior.mixing.len()],
        }
    }

    pub fn cov(&self) -> [[f64; 2]; 2] {
        let [a, b, c] = self.chol;
        [[a * a, a * b], [a * b, b * b + c * c]]
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.mu[0], self.mu[1], self.chol[0], self.chol[1], self.chol[2]];
        v.extend_from_slice(&self.offset);
        v
    }

    fn from_slice(v: &[f64]) -> Self {
        Theta {
            mu: [v[0], v[1]],
            chol: [v[2], v[3], v[4]],
            offset: v[5..].to_vec(),
        }
    }
}

pub fn cholesky(c: [[f64; 2]; 2]) -> [f64; 3] {
    let l00 = c[0][0].max(0.0).sqrt();
    let l10 = if l00 > 0.0 { c[1][0] / l00 } else { 0.0 };
    let l11 = (c[1][1] - l10 * l10).max(0.0).sqrt();
    [l00, l10, l11]
}

/// First and second moments of `(f, g)` under `theta`.
pub(crate) struct Moments {
    m_f: Vec<f64>,
    m_g: [f64; 2],
    /// `E[f f^T]`, row-major `d x d`.
    m_ff: Vec<f64>,
    /// `E[f g^T]`, row-major `d x 2`.
    m_fg: Vec<f64>,
}

pub(crate) fn moments(theta: &Theta, mixing: &[[f64; 2]], noise_std: f64) -> Moments {
    let d = mixing.len();
    let mu = theta.mu;
    let s = theta.cov();
    let s_gg = [
        [s[0][0] + mu[0] * mu[0], s[0][1] + mu[0] * mu[1]],
        [s[1][0] + mu[1] * mu[0], s[1][1] + mu[1] * mu[1]],
    ];
    let b = &theta.offset;
    let a_mu: Vec<f64> = mixing.iter().map(|a| a[0] * mu[0] + a[1] * mu[1]).collect();
    let m_f: Vec<f64> = a_mu.iter().zip(b).map(|(x, y)| x + y).collect();
    // A S_gg, d x 2.
    let a_s: Vec<[f64; 2]> = mixing
        .iter()
        .map(|a| {
            [
                a[0] * s_gg[0][0] + a[1] * s_gg[1][0],
                a[0] * s_gg[0][1] + a[1] * s_gg[1][1],
            ]
        })
        .collect();
    let mut m_ff = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let asa = a_s[i][0] * mixing[j][0] + a_s[i][1] * mixing[j][1];
            let cross = a_mu[i] * b[j] + b[i] * a_mu[j];
            let noise = if i == j { noise_std * noise_std } else { 0.0 };
            m_ff[i * d + j] = asa + cross + b[i] * b[j] + noise;
        }
    }
    let mut m_fg = vec![0.0; d * 2];
    for i in 0..d {
        for k in 0..2 {
            m_fg[i * 2 + k] = a_s[i][k] + b[i] * mu[k];
        }
    }
    Moments {
        m_f,
        m_g: mu,
        m_ff,
        m_fg,
    }
}

/// Expected full-batch gradient of the mean squared loss at linear weights
/// `w` (`W` row-major `2 x d`, then `c`).
pub(crate) fn expected_gradient(w: &[f64], m: &Moments, grad: &mut [f64]) {
    let d = m.m_f.len();
    let c = [w[2 * d], w[2 * d + 1]];
    for r in 0..2 {
        let row = &w[r * d..(r + 1) * d];
        for j in 0..d {
            let mut acc = c[r] * m.m_f[j] - m.m_fg[j * 2 + r];
            for (i, &wi) in row.iter().enumerate() {
                acc += wi * m.m_ff[i * d + j];
            }
            grad[r * d + j] = acc;
        }
        let wm: f64 = row.iter().zip(&m.m_f).map(|(a, b)| a * b).sum();
        grad[2 * d + r] = wm + c[r] - m.m_g[r];
    }
}

/// Local training context the attacker assumes for one leaked update.
#[derive(Clone, Debug)]
pub struct UpdateContext<'a> {
    pub start: &'a [f64],
    pub lr: f64,
    pub steps: usize,
    pub mixing: &'a [[f64; 2]],
    pub noise_std: f64,
}

pub fn simulate_update(theta: &Theta, ctx: &UpdateContext) -> Vec<f64> {
    let m = moments(theta, ctx.mixing, ctx.noise_std);
    let mut w = ctx.start.to_vec();
    let mut g = vec![0.0; w.len()];
    for _ in 0..ctx.steps {
        expected_gradient(&w, &m, &mut g);
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= ctx.lr * gi;
        }
    }
    w
}

/// Prior the fit is pulled towards.
#[derive(Clone, Debug)]
pub struct PriorCentre {
    pub theta: Theta,
    pub mu_scale: f64,
    pub chol_scale: f64,
    pub offset_scale: f64,
}

impl PriorCentre {
    pub fn population(prior: &PopulationPrior) -> Self {
        let sd = (prior.gaze_cov[0][0].sqrt() + prior.gaze_cov[1][1].sqrt()) / 2.0;
        PriorCentre {
            theta: Theta::from_prior(prior),
            mu_scale: prior.gaze_mean_spread.max(1e-3),
            chol_scale: (0.5 * sd).max(1e-3),
            offset_scale: prior.offset_spread.max(1e-3),
        }
    }

    pub fn recentred(&self, theta: Theta) -> Self {
        PriorCentre { theta, ..self.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta: Theta,
    pub loss: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn residuals(
    v: &[f64],
    target: &[f64],
    ctx: &UpdateContext,
    prior: &PriorCentre,
    cfg: &AttackConfig,
    out: &mut Vec<f64>,
) {
    out.clear();
    let theta = Theta::from_slice(v);
    let d = ctx.mixing.len();
    let norm = ctx.lr * ctx.steps.max(1) as f64 * cfg.data_scale;
    if cfg.beta > 0.0 || cfg.gamma > 0.0 {
        let sim = simulate_update(&theta, ctx);
        let (wb, wg) = (cfg.beta.sqrt(), cfg.gamma.sqrt());
        for (i, (t, s)) in target.iter().zip(&sim).enumerate() {
            let r = (t - s) / norm;
            out.push(if i >= 2 * d { wb * r } else { wg * r });
        }
    }
    let wa = (cfg.alpha * cfg.prior_strength).sqrt();
    if wa > 0.0 {
        let c = prior.theta.to_vec();
        for (i, (x, x0)) in v.iter().zip(&c).enumerate() {
            let scale = match i {
                0 | 1 => prior.mu_scale,
                2..=4 => prior.chol_scale,
                _ => prior.offset_scale,
            };
            out.push(wa * (x - x0) / scale);
        }
    }
}

fn solve(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    // Gaussian elimination with partial pivoting on an n x n system.
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty");
        if a[piv * n + col].abs() < 1e-300 {
            return false;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
    b.iter().all(|x| x.is_finite())
}

/// Minimizes the weighted three-term loss for one leaked update, starting
/// from `init`, by Levenberg-Marquardt with a finite-difference Jacobian.
pub fn fit_update(
    target: &[f64],
    ctx: &UpdateContext,
    prior: &PriorCentre,
    init: &Theta,
    cfg: &AttackConfig,
) -> FitResult {
    let mut x = init.to_vec();
    let free: Vec<usize> = (0..x.len())
        .filter(|&k| cfg.fit_covariance || !(2..Theta::GAZE_PARAMS).contains(&k))
        .collect();
    let p = free.len();
    let mut r = Vec::new();
    residuals(&x, target, ctx, prior, cfg, &mut r);
    let mut loss: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    let mut converged = loss == 0.0;
    let mut iterations = 0;
    let mut rp = Vec::new();
    let mut rm = Vec::new();
    let mut trial_r = Vec::new();
    while iterations < cfg.steps && !converged {
        iterations += 1;
        let m = r.len();
        let mut jac = vec![0.0; m * p];
        for (k, &i) in free.iter().enumerate() {
            let h = 1e-6 * x[i].abs().max(1e-2);
            let mut xp = x.clone();
            xp[i] += h;
            residuals(&xp, target, ctx, prior, cfg, &mut rp);
            xp[i] -= 2.0 * h;
            residuals(&xp, target, ctx, prior, cfg, &mut rm);
            for i in 0..m {
                jac[i * p + k] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let mut jtj = vec![0.0; p * p];
        let mut jtr = vec![0.0; p];
        for i in 0..m {
            let row = &jac[i * p..(i + 1) * p];
            for a in 0..p {
                jtr[a] += row[a] * r[i];
                for b in a..p {
                    jtj[a * p + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                jtj[a * p + b] = jtj[b * p + a];
            }
        }
        let grad_norm = jtr.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < 1e-12 * (1.0 + loss) {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[k * p + k] += lambda * jtj[k * p + k].max(1e-12);
            }
            let mut step: Vec<f64> = jtr.iter().map(|g| -g).collect();
            if !solve(&mut a, &mut step, p) {
                lambda *= 10.0;
                continue;
            }
            let mut trial = x.clone();
            for (&i, s) in free.iter().zip(&step) {
                trial[i] += s;
            }
            residuals(&trial, target, ctx, prior, cfg, &mut trial_r);
            let trial_loss: f64 = trial_r.iter().map(|v| v * v).sum();
            if trial_loss.is_finite() && trial_loss < loss {
                let rel = (loss - trial_loss) / loss.max(1e-300);
                x = trial;
                std::mem::swap(&mut r, &mut trial_r);
                loss = trial_loss;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-12 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No descent direction left at any damping: a stationary point.
            converged = true;
        }
    }
    FitResult {
        theta: Theta::from_slice(&x),
        loss,
        converged,
        iterations,
    }
}

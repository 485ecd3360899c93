use serde::{Deserialize, Serialize};

use super::LeakError;

pub const MIN_SAMPLES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Bins per dimension.
    pub bins: usize,
    /// Density floor applied before normalizing.
    pub floor: f64,
    /// Padding around the joint bounding box, in bandwidths.
    pub pad: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            bins: 64,
            floor: 1e-9,
            pad: 3.0,
        }
    }
}

fn std_dev(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Scott's rule per dimension, with a floor for degenerate columns.
fn scott_bandwidths(samples: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = samples.len() as f64;
    let factor = n.powf(-1.0 / (dim as f64 + 4.0));
    (0..dim)
        .map(|d| {
            let s = std_dev(samples.iter().map(|x| x[d]));
            (s * factor).max(1e-6)
        })
        .collect()
}

struct Axis {
    lo: f64,
    width: f64,
    bins: usize,
}

impl Axis {
    fn centre(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width
    }

    /// Normalized Gaussian weights of one sample over the axis.
    fn weights(&self, x: f64, h: f64) -> Vec<f64> {
        let mut w: Vec<f64> = (0..self.bins)
            .map(|i| {
                let z = (self.centre(i) - x) / h;
                (-0.5 * z * z).exp()
            })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.iter_mut().for_each(|v| *v /= s);
        } else {
            // Kernel narrower than a bin: all mass on the nearest bin.
            let i = (((x - self.lo) / self.width).floor() as isize).clamp(0, self.bins as isize - 1);
            w[i as usize] = 1.0;
        }
        w
    }
}

fn histogram(samples: &[Vec<f64>], h: &[f64], axes: &[Axis], floor: f64) -> Vec<f64> {
    let cells: usize = axes.iter().map(|a| a.bins).product();
    let mut p = vec![0.0; cells];
    for x in samples {
        match axes {
            [a] => {
                for (pi, w) in p.iter_mut().zip(a.weights(x[0], h[0])) {
                    *pi += w;
                }
            }
            [a, b] => {
                let wa = a.weights(x[0], h[0]);
                let wb = b.weights(x[1], h[1]);
                for (i, &u) in wa.iter().enumerate() {
                    if u == 0.0 {
                        continue;
                    }
                    let row = &mut p[i * b.bins..(i + 1) * b.bins];
                    for (pj, &v) in row.iter_mut().zip(&wb) {
                        *pj += u * v;
                    }
                }
            }
            _ => unreachable!("dimension checked by caller"),
        }
    }
    for v in p.iter_mut() {
        *v = (*v / samples.len() as f64).max(floor);
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// `KL(p || q)` between Gaussian-kernel density estimates of two sample sets
/// (1-D or 2-D), evaluated on a shared grid.
pub fn kde_kl_divergence(samples_p: &[Vec<f64>], samples_q: &[Vec<f64>], grid: &GridSpec) -> Result<f64, LeakError> {
    if samples_p.len() < MIN_SAMPLES || samples_q.len() < MIN_SAMPLES {
        return Err(LeakError::TooFewSamples {
            got: samples_p.len().min(samples_q.len()),
            need: MIN_SAMPLES,
        });
    }
    let dim = samples_p[0].len();
    if !(1..=2).contains(&dim) || samples_p.iter().chain(samples_q).any(|x| x.len() != dim) {
        return Err(LeakError::Dimension(format!("KDE supports 1-D or 2-D samples of one width, got {dim}")));
    }
    if grid.bins < 2 {
        return Err(LeakError::Dimension("grid needs at least two bins".into()));
    }
    let hp = scott_bandwidths(samples_p, dim);
    let hq = scott_bandwidths(samples_q, dim);
    let axes: Vec<Axis> = (0..dim)
        .map(|d| {
            let (lo, hi) = samples_p
                .iter()
                .chain(samples_q)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[d]), hi.max(x[d])));
            let pad = grid.pad * hp[d].max(hq[d]);
            let (lo, hi) = (lo - pad, hi + pad);
            Axis {
                lo,
                width: (hi - lo) / grid.bins as f64,
                bins: grid.bins,
            }
        })
        .collect();
    let p = histogram(samples_p, &hp, &axes, grid.floor);
    let q = histogram(samples_q, &hq, &axes, grid.floor);
    let kl: f64 = p.iter().zip(&q).map(|(&a, &b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, Normal};

    fn normal_1d(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| vec![d.sample(&mut rng)]).collect()
    }

    #[test]
    fn identical_sets_have_zero_divergence() {
        let s = normal_1d(200, 0.0, 1.0, 1);
        assert!(kde_kl_divergence(&s, &s, &GridSpec::default()).unwrap() < 1e-6);
        let s2: Vec<Vec<f64>> = s.iter().zip(normal_1d(200, 2.0, 0.3, 2)).map(|(a, b)| vec![a[0], b[0]]).collect();
        assert!(kde_kl_divergence(&s2, &s2, &GridSpec::default()).unwrap() < 1e-6);
    }

    #[test]
    fn unit_shift_gaussians() {
        let p = normal_1d(10_000, 0.0, 1.0, 3);
        let q = normal_1d(10_000, 1.0, 1.0, 4);
        let kl = kde_kl_divergence(&p, &q, &GridSpec::default()).unwrap();
        assert!((kl - 0.5).abs() < 0.05, "{kl}");
    }

    #[test]
    fn divergence_grows_with_separation() {
        let p = normal_1d(300, 0.0, 0.05, 5);
        let mut last = 0.0;
        for shift in [0.1, 0.2, 0.4, 0.8] {
            let q = normal_1d(300, shift, 0.05, 6);
            let kl = kde_kl_divergence(&p, &q, &GridSpec::default()).unwrap();
            assert!(kl > last, "{shift}: {kl} <= {last}");
            last = kl;
        }
        assert!(last > 5.0);
    }

    #[test]
    fn too_few_samples() {
        let p = normal_1d(9, 0.0, 1.0, 7);
        let q = normal_1d(50, 0.0, 1.0, 8);
        assert!(matches!(
            kde_kl_divergence(&p, &q, &GridSpec::default()),
            Err(LeakError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn degenerate_samples_stay_finite() {
        let p = vec![vec![0.1, 0.2]; 20];
        let q = normal_1d(20, 0.0, 1.0, 9).into_iter().map(|x| vec![x[0], x[0]]).collect::<Vec<_>>();
        let kl = kde_kl_divergence(&p, &q, &GridSpec::default()).unwrap();
        assert!(kl.is_finite() && kl >= 0.0);
    }
}

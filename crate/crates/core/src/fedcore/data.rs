use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FedError;
use crate::seed::derive_seed;

/// Seed of the public feature mixing map. Fixed across experiments.
const MIXING_SEED: u64 = 0x6d69_7869_6e67;

/// One synthetic "eye appearance" feature vector with its gaze label
/// `(pitch, yaw)` in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub features: Vec<f64>,
    pub gaze: [f64; 2],
}

/// Generating parameters of one client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client: u32,
    pub gaze_mean: [f64; 2],
    pub gaze_cov: [[f64; 2]; 2],
    /// Appearance offset added to every feature vector of this client.
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client: u32,
    pub round: u32,
    pub samples: Vec<GazeSample>,
    /// Absent for datasets read back from CSV.
    pub profile: Option<ClientProfile>,
}

impl ClientDataset {
    pub fn mean_gaze(&self) -> [f64; 2] {
        let n = self.samples.len().max(1) as f64;
        let mut m = [0.0; 2];
        for s in &self.samples {
            m[0] += s.gaze[0];
            m[1] += s.gaze[1];
        }
        [m[0] / n, m[1] / n]
    }
}

/// Knobs of the synthetic population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub clients: u32,
    pub seed: u64,
    /// Scales the spread of client gaze means and appearance offsets; 0 is homogeneous.
    pub heterogeneity: f64,
    pub samples_per_round: usize,
    pub rounds: u32,
    pub test_samples: usize,
    pub d_in: usize,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            clients: 15,
            seed: 1,
            heterogeneity: 1.0,
            samples_per_round: 10,
            rounds: 10,
            test_samples: 20,
            d_in: 8,
        }
    }
}

/// Population-level facts an attacker is assumed to know: the law the
/// client parameters are drawn from, the mixing map and the noise level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationPrior {
    pub gaze_mean: [f64; 2],
    /// Standard deviation of each client gaze-mean coordinate around `gaze_mean`.
    pub gaze_mean_spread: f64,
    pub gaze_cov: [[f64; 2]; 2],
    /// Standard deviation of each appearance-offset coordinate.
    pub offset_spread: f64,
    pub noise_std: f64,
    /// `d_in x 2`, row-major.
    pub mixing: Vec<[f64; 2]>,
}

const BASE_GAZE_MEAN: [f64; 2] = [-0.05, 0.0];
const GAZE_MEAN_SPREAD: f64 = 0.15;
const GAZE_STD: [f64; 2] = [0.08, 0.12];
const OFFSET_SPREAD: f64 = 0.5;
const NOISE_STD: f64 = 0.05;
/// Offsets of the held-out test stream (round index space).
const TEST_ROUND: u32 = u32::MAX;

impl PopulationPrior {
    pub fn for_spec(spec: &PopulationSpec) -> Self {
        PopulationPrior {
            gaze_mean: BASE_GAZE_MEAN,
            gaze_mean_spread: GAZE_MEAN_SPREAD * spec.heterogeneity,
            gaze_cov: [[GAZE_STD[0] * GAZE_STD[0], 0.0], [0.0, GAZE_STD[1] * GAZE_STD[1]]],
            offset_spread: OFFSET_SPREAD * spec.heterogeneity,
            noise_std: NOISE_STD,
            mixing: mixing_map(spec.d_in),
        }
    }
}

fn mixing_map(d_in: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha20Rng::seed_from_u64(MIXING_SEED);
    (0..d_in)
        .map(|_| [rng.sample_normal(), rng.sample_normal()])
        .collect()
}

trait NormalExt {
    fn sample_normal(&mut self) -> f64;
}

impl NormalExt for ChaCha20Rng {
    fn sample_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub spec: PopulationSpec,
    pub prior: PopulationPrior,
    pub profiles: Vec<ClientProfile>,
    /// `rounds[k][j]`: data of client `j` in round `k + 1`.
    pub rounds: Vec<Vec<ClientDataset>>,
    /// Held-out test data, one dataset per client.
    pub test: Vec<ClientDataset>,
}

impl Population {
    /// All training data of every client and round, pooled.
    pub fn pooled(&self) -> Vec<GazeSample> {
        self.rounds
            .iter()
            .flatten()
            .flat_map(|ds| ds.samples.iter().cloned())
            .collect()
    }

    /// All training samples of one client across rounds.
    pub fn client_samples(&self, client: u32) -> Vec<GazeSample> {
        self.rounds
            .iter()
            .flat_map(|r| r[client as usize].samples.iter().cloned())
            .collect()
    }
}

/// Deterministic in `spec`. Client `j`'s data depends only on `(seed, j)`,
/// so growing the population leaves existing clients untouched.
pub fn gen_synthetic_population(spec: &PopulationSpec) -> Result<Population, FedError> {
    if spec.clients == 0 {
        return Err(FedError::Config("population needs at least one client".into()));
    }
    if spec.d_in == 0 {
        return Err(FedError::Config("d_in must be positive".into()));
    }
    let prior = PopulationPrior::for_spec(spec);
    let profiles: Vec<ClientProfile> = (0..spec.clients)
        .map(|j| {
            let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(spec.seed, &[0x70, j as u64]));
            let gaze_mean = [
                prior.gaze_mean[0] + prior.gaze_mean_spread * rng.sample_normal(),
                prior.gaze_mean[1] + prior.gaze_mean_spread * rng.sample_normal(),
            ];
            let offset = (0..spec.d_in)
                .map(|_| prior.offset_spread * rng.sample_normal())
                .collect();
            ClientProfile {
                client: j,
                gaze_mean,
                gaze_cov: prior.gaze_cov,
                offset,
            }
        })
        .collect();
    let draw = |p: &ClientProfile, round: u32, count: usize| -> ClientDataset {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
            spec.seed,
            &[0x64, p.client as u64, round as u64],
        ));
        let samples = (0..count)
            .map(|_| sample(p, &prior, &mut rng))
            .collect();
        ClientDataset {
            client: p.client,
            round,
            samples,
            profile: Some(p.clone()),
        }
    };
    let rounds = (1..=spec.rounds)
        .map(|k| {
            profiles
                .iter()
                .map(|p| draw(p, k, spec.samples_per_round))
                .collect()
        })
        .collect();
    let test = profiles
        .iter()
        .map(|p| draw(p, TEST_ROUND, spec.test_samples))
        .collect();
    Ok(Population {
        spec: spec.clone(),
        prior,
        profiles,
        rounds,
        test,
    })
}

fn sample(p: &ClientProfile, prior: &PopulationPrior, rng: &mut ChaCha20Rng) -> GazeSample {
    // Cholesky of the 2x2 covariance.
    let l00 = p.gaze_cov[0][0].sqrt();
    let l10 = p.gaze_cov[1][0] / l00;
    let l11 = (p.gaze_cov[1][1] - l10 * l10).max(0.0).sqrt();
    let z0 = rng.sample_normal();
    let z1 = rng.sample_normal();
    let pitch = (p.gaze_mean[0] + l00 * z0).clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    let yaw = (p.gaze_mean[1] + l10 * z0 + l11 * z1).clamp(-std::f64::consts::PI, std::f64::consts::PI);
    let features = prior
        .mixing
        .iter()
        .zip(&p.offset)
        .map(|(a, b)| a[0] * pitch + a[1] * yaw + b + prior.noise_std * rng.sample_normal())
        .collect();
    GazeSample {
        features,
        gaze: [pitch, yaw],
    }
}

/// Writes `client_id,round,f1..f_din,pitch,yaw` rows.
pub fn write_csv<W: Write>(datasets: &[ClientDataset], mut out: W) -> Result<(), FedError> {
    let d_in = datasets
        .iter()
        .find_map(|d| d.samples.first().map(|s| s.features.len()))
        .unwrap_or(0);
    let mut header = vec!["client_id".to_string(), "round".to_string()];
    header.extend((1..=d_in).map(|i| format!("f{i}")));
    header.push("pitch".into());
    header.push("yaw".into());
    writeln!(out, "{}", header.join(","))?;
    for ds in datasets {
        for s in &ds.samples {
            if s.features.len() != d_in {
                return Err(FedError::Shape(format!(
                    "sample with {} features in a {d_in}-feature export",
                    s.features.len()
                )));
            }
            let mut row = vec![ds.client.to_string(), ds.round.to_string()];
            row.extend(s.features.iter().map(|v| format!("{v:?}")));
            row.push(format!("{:?}", s.gaze[0]));
            row.push(format!("{:?}", s.gaze[1]));
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Reads the format of [`write_csv`], grouping rows by `(client_id, round)`
/// in order of first appearance.
pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<ClientDataset>, FedError> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| FedError::Csv("missing header".into()))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "client_id" || cols[1] != "round" {
        return Err(FedError::Csv(format!("unexpected header {header:?}")));
    }
    let d_in = cols.len() - 4;
    let mut out: Vec<ClientDataset> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(FedError::Csv(format!(
                "row {} has {} columns, expected {}",
                lineno + 2,
                fields.len(),
                cols.len()
            )));
        }
        let bad = |e: String| FedError::Csv(format!("row {}: {e}", lineno + 2));
        let client: u32 = fields[0].parse().map_err(|e| bad(format!("{e}")))?;
        let round: u32 = fields[1].parse().map_err(|e| bad(format!("{e}")))?;
        let nums: Vec<f64> = fields[2..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{e}"))))
            .collect::<Result<_, _>>()?;
        let sample = GazeSample {
            features: nums[..d_in].to_vec(),
            gaze: [nums[d_in], nums[d_in + 1]],
        };
        match out.iter_mut().find(|d| d.client == client && d.round == round) {
            Some(ds) => ds.samples.push(sample),
            None => out.push(ClientDataset {
                client,
                round,
                samples: vec![sample],
                profile: None,
            }),
        }
    }
    Ok(out)
}

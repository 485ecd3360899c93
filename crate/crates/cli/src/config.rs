//! INI experiment configuration. Every key is optional; environment
//! variables named `PRIVATEYES_<SECTION>_<KEY>` override the file.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use serde::Serialize;

use privateyes::aggregation::{OptimizerConfig, OptimizerMode};
use privateyes::fedcore::{ModelShape, PopulationSpec, TrainConfig};
use privateyes::field::{Codec, Field, FieldParams, FixedPointCodec};
use privateyes::leakprobe::AttackConfig;
use privateyes::protocol::{ProtocolConfig, Scheme};
use privateyes::simnet::{AdversarySpec, Behavior};

use crate::CliError;

pub const ENV_PREFIX: &str = "PRIVATEYES_";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub seed: u64,
    pub rounds: u32,
    pub clients: u32,
    pub cohort_fraction: f64,
    pub servers: usize,
    pub heterogeneity: f64,
    pub samples_per_round: usize,
    pub test_samples: usize,
    pub shape: ModelShape,
    /// Decimal string so the report stays valid JSON for any modulus.
    pub modulus: String,
    /// `None` selects integer mode.
    pub f_bits: Option<u32>,
    pub train: TrainConfig,
    pub optimizer: OptimizerConfig,
    pub adversary: AdversarySpec,
    pub attack: AttackConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        ExperimentConfig {
            scheme: Scheme::PrivatEyes,
            seed: 1,
            rounds: train.rounds,
            clients: 15,
            cohort_fraction: 1.0,
            servers: 3,
            heterogeneity: 1.0,
            samples_per_round: 10,
            test_samples: 20,
            shape: ModelShape::Linear { d_in: 8 },
            modulus: Field::mersenne127().modulus().to_string(),
            f_bits: Some(16),
            train,
            optimizer: OptimizerConfig::default(),
            adversary: AdversarySpec::honest(),
            attack: AttackConfig::default(),
        }
    }
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "experiment",
        &[
            "seed",
            "rounds",
            "clients",
            "cohort_fraction",
            "servers",
            "scheme",
            "heterogeneity",
            "samples_per_round",
            "test_samples",
        ],
    ),
    ("model", &["kind", "d_in", "hidden"]),
    ("field", &["modulus", "f_bits"]),
    ("train", &["epochs", "lr", "batch"]),
    ("optimizer", &["eta", "beta1", "beta2", "tau", "mode"]),
    (
        "adversary",
        &[
            "corrupted_servers",
            "corrupted_clients",
            "behavior",
            "round",
            "coordinate",
            "delta",
            "sigma_guess",
        ],
    ),
    (
        "attack",
        &[
            "alpha",
            "beta",
            "gamma",
            "steps",
            "prior_strength",
            "data_scale",
            "fit_covariance",
            "chain",
            "only_round",
            "recon_samples",
            "seed",
        ],
    ),
];

fn parse<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T, CliError> {
    v.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("[{section}] {key}: cannot parse {v:?}")))
}

fn id_list(section: &str, key: &str, v: &str) -> Result<BTreeSet<u32>, CliError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(section, key, s))
        .collect()
}

/// Applies `PRIVATEYES_SECTION_KEY=value` pairs on top of a parsed file.
pub fn apply_overrides(ini: &mut Ini, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), CliError> {
    for (name, value) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let rest = rest.to_ascii_lowercase();
        let Some((section, key)) = rest.split_once('_') else {
            return Err(CliError::Config(format!("override {name} names no key")));
        };
        ini.with_section(Some(section)).set(key, value);
    }
    Ok(())
}

impl ExperimentConfig {
    /// Reads `path` (if any) and the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut ini = match path {
            Some(p) => Ini::load_from_file(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => Ini::new(),
        };
        apply_overrides(&mut ini, std::env::vars())?;
        Self::from_ini(&ini)
    }

    pub fn from_ini_str(text: &str) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_ini(&ini)
    }

    pub fn from_ini(ini: &Ini) -> Result<Self, CliError> {
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(CliError::Config(format!("key {k:?} outside any section")));
                }
                continue;
            };
            let Some((_, known)) = KEYS.iter().find(|(s, _)| *s == section) else {
                return Err(CliError::Config(format!("unknown section [{section}]")));
            };
            if let Some((k, _)) = props.iter().find(|(k, _)| !known.contains(k)) {
                return Err(CliError::Config(format!("unknown key {k:?} in [{section}]")));
            }
        }
        let get = |s: &str, k: &str| ini.section(Some(s)).and_then(|p| p.get(k));
        let mut c = ExperimentConfig::default();

        let e = "experiment";
        if let Some(v) = get(e, "scheme") {
            c.scheme = v.parse().map_err(|_| CliError::Config(format!("[experiment] scheme: unknown {v:?}")))?;
            c.servers = ProtocolConfig::new(c.scheme).servers;
        }
        if let Some(v) = get(e, "seed") {
            c.seed = parse(e, "seed", v)?;
            c.attack.seed = c.seed;
        }
        if let Some(v) = get(e, "rounds") {
            c.rounds = parse(e, "rounds", v)?;
        }
        if let Some(v) = get(e, "clients") {
            c.clients = parse(e, "clients", v)?;
        }
        if let Some(v) = get(e, "cohort_fraction") {
            c.cohort_fraction = parse(e, "cohort_fraction", v)?;
        }
        if let Some(v) = get(e, "servers") {
            c.servers = parse(e, "servers", v)?;
        }
        if let Some(v) = get(e, "heterogeneity") {
            c.heterogeneity = parse(e, "heterogeneity", v)?;
        }
        if let Some(v) = get(e, "samples_per_round") {
            c.samples_per_round = parse(e, "samples_per_round", v)?;
        }
        if let Some(v) = get(e, "test_samples") {
            c.test_samples = parse(e, "test_samples", v)?;
        }

        let m = "model";
        let d_in: usize = get(m, "d_in").map(|v| parse(m, "d_in", v)).transpose()?.unwrap_or(8);
        let hidden: usize = get(m, "hidden").map(|v| parse(m, "hidden", v)).transpose()?.unwrap_or(16);
        c.shape = match get(m, "kind").unwrap_or("linear").trim() {
            "linear" => ModelShape::Linear { d_in },
            "hidden" | "mlp" => ModelShape::Hidden { d_in, width: hidden },
            other => return Err(CliError::Config(format!("[model] kind: unknown {other:?}"))),
        };

        let f = "field";
        if let Some(v) = get(f, "modulus") {
            let q: u128 = parse(f, "modulus", v)?;
            c.modulus = q.to_string();
        }
        if let Some(v) = get(f, "f_bits") {
            c.f_bits = match v.trim() {
                "none" | "integer" => None,
                s => Some(parse(f, "f_bits", s)?),
            };
        }

        let t = "train";
        if let Some(v) = get(t, "epochs") {
            c.train.epochs = parse(t, "epochs", v)?;
        }
        if let Some(v) = get(t, "lr") {
            c.train.lr = parse(t, "lr", v)?;
        }
        if let Some(v) = get(t, "batch") {
            c.train.batch_size = parse(t, "batch", v)?;
        }

        let o = "optimizer";
        if let Some(v) = get(o, "mode") {
            c.optimizer.mode = match v.trim() {
                "adaptive" => OptimizerMode::Adaptive,
                "fedavg" => OptimizerMode::FedAvg,
                other => return Err(CliError::Config(format!("[optimizer] mode: unknown {other:?}"))),
            };
        }
        for (k, slot) in [
            ("eta", &mut c.optimizer.eta),
            ("beta1", &mut c.optimizer.beta1),
            ("beta2", &mut c.optimizer.beta2),
            ("tau", &mut c.optimizer.tau),
        ] {
            if let Some(v) = get(o, k) {
                *slot = parse(o, k, v)?;
            }
        }

        let a = "adversary";
        let servers = get(a, "corrupted_servers").map(|v| id_list(a, "corrupted_servers", v)).transpose()?;
        let clients = get(a, "corrupted_clients").map(|v| id_list(a, "corrupted_clients", v)).transpose()?;
        let coordinate: usize = get(a, "coordinate").map(|v| parse(a, "coordinate", v)).transpose()?.unwrap_or(0);
        let delta: u128 = get(a, "delta").map(|v| parse(a, "delta", v)).transpose()?.unwrap_or(1);
        let sigma_guess: u128 = get(a, "sigma_guess").map(|v| parse(a, "sigma_guess", v)).transpose()?.unwrap_or(0);
        let behavior = match get(a, "behavior").map(str::trim) {
            None | Some("none") => None,
            Some("passive") => Some(Behavior::PassiveRecord),
            Some("tamper_share") => Some(Behavior::TamperShare { coordinate, delta }),
            Some("tamper_epsilon") => Some(Behavior::TamperEpsilon { coordinate, delta }),
            Some("forge_sigma") => Some(Behavior::ForgeSigma {
                coordinate,
                delta,
                sigma_guess,
            }),
            Some("equivocate") => Some(Behavior::EquivocateCommit),
            Some("withhold") => Some(Behavior::Withhold),
            Some(other) => return Err(CliError::Config(format!("[adversary] behavior: unknown {other:?}"))),
        };
        if let Some(b) = behavior {
            c.adversary = AdversarySpec {
                corrupted_servers: servers.unwrap_or_else(|| [0].into()),
                corrupted_clients: clients.unwrap_or_default(),
                behavior: b,
                active_round: get(a, "round").map(|v| parse(a, "round", v)).transpose()?,
            };
        } else if servers.is_some() || clients.is_some() {
            c.adversary = AdversarySpec::passive(servers.unwrap_or_default(), clients.unwrap_or_default());
        }

        let k = "attack";
        for (key, slot) in [
            ("alpha", &mut c.attack.alpha),
            ("beta", &mut c.attack.beta),
            ("gamma", &mut c.attack.gamma),
            ("prior_strength", &mut c.attack.prior_strength),
            ("data_scale", &mut c.attack.data_scale),
        ] {
            if let Some(v) = get(k, key) {
                *slot = parse(k, key, v)?;
            }
        }
        if let Some(v) = get(k, "steps") {
            c.attack.steps = parse(k, "steps", v)?;
        }
        if let Some(v) = get(k, "recon_samples") {
            c.attack.recon_samples = parse(k, "recon_samples", v)?;
        }
        if let Some(v) = get(k, "seed") {
            c.attack.seed = parse(k, "seed", v)?;
        }
        if let Some(v) = get(k, "chain") {
            c.attack.chain = parse(k, "chain", v)?;
        }
        if let Some(v) = get(k, "fit_covariance") {
            c.attack.fit_covariance = parse(k, "fit_covariance", v)?;
        }
        if let Some(v) = get(k, "only_round") {
            c.attack.only_round = Some(parse(k, "only_round", v)?);
        }

        c.train.rounds = c.rounds;
        c.train.cohort_fraction = c.cohort_fraction;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.clients == 0 {
            return Err(CliError::Config("[experiment] clients must be positive".into()));
        }
        if self.scheme == Scheme::PrivatEyes && self.servers < 2 {
            return Err(CliError::Config("[experiment] privateyes needs at least two servers".into()));
        }
        if self.adversary.behavior.is_active() && self.scheme != Scheme::PrivatEyes {
            return Err(CliError::Config("an active adversary needs the privateyes scheme".into()));
        }
        self.adversary
            .validate(self.servers)
            .map_err(|e| CliError::Config(format!("[adversary] {e}")))?;
        self.attack.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.codec()?;
        Ok(())
    }

    pub fn codec(&self) -> Result<Codec, CliError> {
        let q: u128 = self.modulus.parse().map_err(|_| CliError::Config("[field] modulus".into()))?;
        let field = Field::new(q).map_err(|e| CliError::Config(format!("[field] {e}")))?;
        Ok(match self.f_bits {
            Some(f) => Codec::FixedPoint(FixedPointCodec::new(
                FieldParams::new(field, f).map_err(|e| CliError::Config(format!("[field] {e}")))?,
            )),
            None => Codec::Integer(field),
        })
    }

    pub fn population_spec(&self) -> PopulationSpec {
        PopulationSpec {
            clients: self.clients,
            seed: self.seed,
            heterogeneity: self.heterogeneity,
            samples_per_round: self.samples_per_round,
            rounds: self.rounds,
            test_samples: self.test_samples,
            d_in: self.shape.d_in(),
        }
    }

    pub fn protocol(&self, scheme: Scheme) -> Result<ProtocolConfig, CliError> {
        let mut p = ProtocolConfig::new(scheme);
        if scheme == Scheme::PrivatEyes {
            p.servers = self.servers;
        }
        p.codec = self.codec()?;
        p.optimizer = self.optimizer;
        p.train = self.train.clone();
        p.seed = self.seed;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_ini_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn sections_are_read() {
        let c = ExperimentConfig::from_ini_str(
            "[experiment]\nscheme = adaptive_fl\nseed = 4\nrounds = 3\n[model]\nkind = hidden\nhidden = 4\n\
             [optimizer]\nmode = fedavg\neta = 1\n[field]\nf_bits = 12\n",
        )
        .unwrap();
        assert_eq!(c.scheme, Scheme::AdaptiveFl);
        assert_eq!(c.servers, 1);
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.rounds, 3);
        assert_eq!(c.shape, ModelShape::Hidden { d_in: 8, width: 4 });
        assert_eq!(c.optimizer.mode, OptimizerMode::FedAvg);
        assert_eq!(c.f_bits, Some(12));
    }

    #[test]
    fn adversary_section() {
        let c = ExperimentConfig::from_ini_str(
            "[adversary]\nbehavior = tamper_share\ncorrupted_servers = 1\nround = 5\ndelta = 7\n",
        )
        .unwrap();
        assert_eq!(c.adversary.active_round, Some(5));
        assert_eq!(c.adversary.behavior, Behavior::TamperShare { coordinate: 0, delta: 7 });
        assert!(ExperimentConfig::from_ini_str("[adversary]\nbehavior = withhold\ncorrupted_servers = 0,1,2\n").is_err());
    }

    #[test]
    fn environment_overrides_the_file() {
        let mut ini = Ini::load_from_str("[experiment]\nseed = 2\n").unwrap();
        apply_overrides(
            &mut ini,
            [
                ("PRIVATEYES_EXPERIMENT_SEED".to_string(), "9".to_string()),
                ("PRIVATEYES_TRAIN_LR".to_string(), "0.01".to_string()),
                ("HOME".to_string(), "/".to_string()),
            ],
        )
        .unwrap();
        let c = ExperimentConfig::from_ini(&ini).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.lr, 0.01);
    }

    #[test]
    fn bad_input_is_rejected() {
        for bad in [
            "[experiment]\nscheme = sgx\n",
            "[experiment]\nrounds = ten\n",
            "[nonsense]\na = 1\n",
            "[train]\nmomentum = 0.9\n",
            "[train]\nlr = -1\n",
            "[field]\nmodulus = 24\n",
            "[experiment]\nscheme = adaptive_fl\n[adversary]\nbehavior = withhold\n",
        ] {
            assert!(ExperimentConfig::from_ini_str(bad).is_err(), "{bad}");
        }
    }
}

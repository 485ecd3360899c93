use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use privateyes::fedcore::{evaluate_model, gen_synthetic_population, ModelVector, Population};
use privateyes::leakprobe::{
    build_leak_set, dualview_lite_reconstruct, estimate_generic_mpc_cost, reference_cnn, write_leakage_table,
    CostReport, GridSpec, Passes, PublicKnowledge, ReconstructionReport,
};
use privateyes::protocol::{run_training, RoundMetrics, RoundTranscript, Scheme, TrainingRun};
use privateyes::simnet::{account_bytes, AdversarySpec, EdgeBytes};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const METRICS_HEADER: &str = "round,test_error_deg,fairness_spread_deg,bytes_client_to_server,\
bytes_server_to_client,bytes_dealer,bytes_server_to_server,bytes_other,aborted";

fn fixed(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(rows: &[RoundMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        let b = r.bytes;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.round,
            fixed(r.test_error),
            fixed(r.fairness_spread),
            b.client_to_server,
            b.server_to_client,
            b.dealer,
            b.server_to_server,
            b.other,
            r.aborted as u8
        )?;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct AbortInfo {
    pub round: u32,
    pub reason: String,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub scheme: Scheme,
    pub rounds_requested: u32,
    pub rounds_completed: u32,
    pub abort: Option<AbortInfo>,
    pub final_test_error_deg: Option<f64>,
    pub final_fairness_spread_deg: Option<f64>,
    pub bytes_total: EdgeBytes,
    pub final_model: Vec<f64>,
    /// Generic-MPC runs only: the cost estimate that replaces training.
    pub generic_mpc_cost: Option<CostReport>,
    pub config: ExperimentConfig,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub population: Population,
    pub run: Option<TrainingRun>,
}

impl RunOutcome {
    pub fn aborted(&self) -> bool {
        self.report.abort.is_some()
    }
}

/// Trains with the configured scheme and adversary, without touching disk.
pub fn execute(cfg: &ExperimentConfig, scheme: Scheme, adversary: AdversarySpec) -> Result<RunOutcome, CliError> {
    let population = gen_synthetic_population(&cfg.population_spec())?;
    if scheme == Scheme::GenericMpc {
        let init = ModelVector::zeros(cfg.shape);
        let report = RunReport {
            scheme,
            rounds_requested: cfg.rounds,
            rounds_completed: 0,
            abort: None,
            final_test_error_deg: None,
            final_fairness_spread_deg: None,
            bytes_total: EdgeBytes::default(),
            final_model: init.into_weights(),
            generic_mpc_cost: Some(estimate_generic_mpc_cost(&reference_cnn(), Passes::TRAINING)?),
            config: cfg.clone(),
        };
        return Ok(RunOutcome {
            report,
            population,
            run: None,
        });
    }
    let run = run_training(&population, cfg.shape, cfg.protocol(scheme)?, adversary)?;
    let eval = evaluate_model(&run.final_model, &population.test)?;
    let report = RunReport {
        scheme,
        rounds_requested: cfg.rounds,
        rounds_completed: run.transcript.completed_rounds(),
        abort: run.abort.as_ref().map(|(round, a)| AbortInfo {
            round: *round,
            reason: a.reason.to_string(),
            detail: a.detail.clone(),
        }),
        final_test_error_deg: Some(eval.mean_error),
        final_fairness_spread_deg: Some(eval.fairness_spread()),
        bytes_total: run.comm.total(),
        final_model: run.final_model.weights().to_vec(),
        generic_mpc_cost: None,
        config: cfg.clone(),
    };
    Ok(RunOutcome {
        report,
        population,
        run: Some(run),
    })
}

/// `run`: metrics.csv, report.json and transcript.ndjson under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome, CliError> {
    let outcome = execute(cfg, cfg.scheme, cfg.adversary.clone())?;
    let rows = outcome.run.as_ref().map_or(&[][..], |r| &r.metrics[..]);
    let mut w = create(out, "metrics.csv")?;
    write_metrics_csv(rows, &mut w)?;
    w.flush()?;
    if let Some(run) = &outcome.run {
        let mut w = create(out, "transcript.ndjson")?;
        run.transcript.write_ndjson(&mut w)?;
        w.flush()?;
    }
    write_json(out, "report.json", &outcome.report)?;
    Ok(outcome)
}

pub fn read_transcript(path: &Path) -> Result<RoundTranscript, CliError> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(RoundTranscript::read_ndjson(BufReader::new(f))?)
}

/// Builds the leak set of `scheme` from a transcript, attacks it and scores
/// the result against the population the configuration generates.
pub fn attack(
    cfg: &ExperimentConfig,
    population: &Population,
    transcript: &RoundTranscript,
    scheme: Scheme,
) -> Result<ReconstructionReport, CliError> {
    let leak = build_leak_set(scheme, transcript, &PublicKnowledge::of(population))?;
    let mut r = dualview_lite_reconstruct(&leak, &cfg.attack)?;
    r.score(population, &cfg.attack, &GridSpec::default())?;
    Ok(r)
}

/// `attack`: reconstruction.json and leakage.csv under `out`.
pub fn attack_command(
    cfg: &ExperimentConfig,
    transcript_path: &Path,
    scheme: Option<Scheme>,
    out: &Path,
) -> Result<ReconstructionReport, CliError> {
    let t = read_transcript(transcript_path)?;
    let scheme = scheme.unwrap_or(t.header.scheme);
    let population = gen_synthetic_population(&cfg.population_spec())?;
    if t.header.clients != population.spec.clients {
        return Err(CliError::Config(format!(
            "transcript has {} clients, the configuration {}",
            t.header.clients, population.spec.clients
        )));
    }
    let r = attack(cfg, &population, &t, scheme)?;
    write_json(out, "reconstruction.json", &r)?;
    let mut w = create(out, "leakage.csv")?;
    write_leakage_table(std::slice::from_ref(&r), &mut w)?;
    w.flush()?;
    Ok(r)
}

#[derive(Clone, Debug, Serialize)]
pub struct AccuracyRow {
    pub scheme: Scheme,
    pub test_error_deg: f64,
    pub fairness_spread_deg: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CommRow {
    pub scheme: Scheme,
    pub bytes_total: u64,
    pub bytes_per_round: f64,
    pub ratio_to_adaptive_fl: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub accuracy: Vec<AccuracyRow>,
    pub leakage: Vec<ReconstructionReport>,
    pub communication: Vec<CommRow>,
    pub generic_mpc_cost: CostReport,
    pub warnings: Vec<String>,
}

pub const TRAINED: [Scheme; 3] = [Scheme::Datacentre, Scheme::AdaptiveFl, Scheme::PrivatEyes];

/// Every number is recomputed from the transcripts: accuracy from the last
/// output model, bytes from the frame log, leakage from the leak sets.
pub fn compare(
    cfg: &ExperimentConfig,
    population: &Population,
    transcripts: &[RoundTranscript],
) -> Result<ComparisonReport, CliError> {
    let mut warnings = Vec::new();
    let mut accuracy = Vec::new();
    let mut leakage = Vec::new();
    let mut communication = Vec::new();
    for &scheme in &TRAINED {
        let Some(t) = transcripts.iter().find(|t| t.header.scheme == scheme) else {
            warnings.push(format!("no {scheme} transcript; its columns are omitted"));
            continue;
        };
        if let Some((round, reason)) = t.abort() {
            warnings.push(format!("{scheme} aborted in round {round} ({reason}); its columns are omitted"));
            continue;
        }
        let eval = evaluate_model(&t.final_model()?, &population.test)?;
        accuracy.push(AccuracyRow {
            scheme,
            test_error_deg: eval.mean_error,
            fairness_spread_deg: eval.fairness_spread(),
        });
        let total = account_bytes(&t.frames).total().total();
        communication.push(CommRow {
            scheme,
            bytes_total: total,
            bytes_per_round: total as f64 / t.completed_rounds().max(1) as f64,
            ratio_to_adaptive_fl: None,
        });
        leakage.push(attack(cfg, population, t, scheme)?);
        if scheme == Scheme::PrivatEyes {
            leakage.push(attack(cfg, population, t, Scheme::GenericMpc)?);
        }
    }
    let base = communication
        .iter()
        .find(|r| r.scheme == Scheme::AdaptiveFl)
        .map(|r| r.bytes_total);
    for row in &mut communication {
        row.ratio_to_adaptive_fl = base.map(|b| row.bytes_total as f64 / b as f64);
    }
    Ok(ComparisonReport {
        accuracy,
        leakage,
        communication,
        generic_mpc_cost: estimate_generic_mpc_cost(&reference_cnn(), Passes::TRAINING)?,
        warnings,
    })
}

pub fn write_tables(report: &ComparisonReport, out: &Path) -> Result<(), CliError> {
    let mut w = create(out, "table1_accuracy.csv")?;
    writeln!(w, "scheme,test_error_deg,fairness_spread_deg")?;
    for r in &report.accuracy {
        writeln!(w, "{},{:.6},{:.6}", r.scheme, r.test_error_deg, r.fairness_spread_deg)?;
    }
    w.flush()?;
    let mut w = create(out, "table2_leakage.csv")?;
    write_leakage_table(&report.leakage, &mut w)?;
    w.flush()?;
    let mut w = create(out, "table3_communication.csv")?;
    writeln!(w, "scheme,bytes_total,bytes_per_round,ratio_to_adaptive_fl")?;
    for r in &report.communication {
        writeln!(w, "{},{},{:.6},{}", r.scheme, r.bytes_total, r.bytes_per_round, fixed(r.ratio_to_adaptive_fl))?;
    }
    w.flush()?;
    write_json(out, "report.json", report)
}

/// `report`: one honest run per trained scheme, transcripts kept next to
/// the three comparison tables.
pub fn report_command(cfg: &ExperimentConfig, out: &Path) -> Result<ComparisonReport, CliError> {
    let population = gen_synthetic_population(&cfg.population_spec())?;
    let mut transcripts = Vec::new();
    for scheme in TRAINED {
        let run = run_training(&population, cfg.shape, cfg.protocol(scheme)?, AdversarySpec::honest())?;
        let mut w = create(out, &format!("transcript_{scheme}.ndjson"))?;
        run.transcript.write_ndjson(&mut w)?;
        w.flush()?;
        transcripts.push(run.transcript);
    }
    let report = compare(cfg, &population, &transcripts)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_tables(&report, out)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub seed: u64,
    pub scheme: Scheme,
    pub test_error_deg: Option<f64>,
    pub mae_deg: f64,
    pub kl: f64,
    pub bytes_total: u64,
}

fn bench_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<BenchRow>, CliError> {
    let mut c = cfg.clone();
    c.seed = seed;
    c.attack.seed = seed;
    let population = gen_synthetic_population(&c.population_spec())?;
    let mut rows = Vec::new();
    for scheme in [Scheme::AdaptiveFl, Scheme::PrivatEyes] {
        let run = run_training(&population, c.shape, c.protocol(scheme)?, AdversarySpec::honest())?;
        let test_error = Some(evaluate_model(&run.final_model, &population.test)?.mean_error);
        let bytes = run.comm.total().total();
        let mut schemes = vec![(scheme, test_error, bytes)];
        if scheme == Scheme::PrivatEyes {
            schemes.push((Scheme::GenericMpc, None, 0));
        }
        for (s, err, b) in schemes {
            let r = attack(&c, &population, &run.transcript, s)?;
            rows.push(BenchRow {
                seed,
                scheme: s,
                test_error_deg: err,
                mae_deg: r.mean_mae.unwrap_or_default(),
                kl: r.mean_kl.unwrap_or_default(),
                bytes_total: b,
            });
        }
    }
    Ok(rows)
}

/// `bench`: `seeds` independent experiments starting at the configured
/// seed, spread over the available cores and merged in seed order.
pub fn bench_command(cfg: &ExperimentConfig, seeds: u64, out: &Path) -> Result<Vec<BenchRow>, CliError> {
    let all: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(all.len().max(1));
    let chunks: Vec<&[u64]> = all.chunks(all.len().div_ceil(workers).max(1)).collect();
    let results: Vec<Result<Vec<BenchRow>, CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                s.spawn(move || -> Result<Vec<BenchRow>, CliError> {
                    let mut rows = Vec::new();
                    for &seed in *chunk {
                        rows.extend(bench_seed(cfg, seed)?);
                    }
                    Ok(rows)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let mut w = create(out, "bench.csv")?;
    writeln!(w, "seed,scheme,test_error_deg,mae_deg,kl,bytes_total")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{}",
            r.seed,
            r.scheme,
            fixed(r.test_error_deg),
            r.mae_deg,
            r.kl,
            r.bytes_total
        )?;
    }
    w.flush()?;
    Ok(rows)
}

pub fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

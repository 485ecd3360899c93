//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
//! Runs without the libtest harness so the lines are never captured.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use privateyes::aggregation::{client_average, plaintext_adaptive_fl_oracle, OptimizerConfig};
use privateyes::fedcore::{
    evaluate_model, gen_synthetic_population, GazeSample, ModelShape, ModelVector, Population, PopulationSpec,
};
use privateyes::field::{Codec, Field, FieldElement};
use privateyes::leakprobe::{
    build_leak_set, dualview_lite_reconstruct, estimate_generic_mpc_cost, reference_cnn, AttackConfig, GridSpec,
    Passes, PublicKnowledge,
};
use privateyes::protocol::{
    default_codec, run_secure_sum, run_training, FixedUpdates, ProtocolConfig, RoundTranscript, Scheme, TrainingRun,
};
use privateyes::sharing::{dealer_setup, reconstruct, run_opening, share, AbortReason, AdditiveSharing, OpeningScript};
use privateyes::simnet::{AdversarySpec, Behavior};

const LINEAR: ModelShape = ModelShape::Linear { d_in: 8 };

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn train(pop: &Population, scheme: Scheme, seed: u64) -> TrainingRun {
    let mut cfg = ProtocolConfig::new(scheme);
    cfg.seed = seed;
    run_training(pop, LINEAR, cfg, AdversarySpec::honest()).unwrap()
}

fn population(clients: u32, seed: u64) -> Population {
    gen_synthetic_population(&PopulationSpec {
        clients,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn elements(field: Field, rows: &[&[u128]]) -> Vec<(u32, Vec<FieldElement>)> {
    rows.iter()
        .enumerate()
        .map(|(j, r)| (j as u32, r.iter().map(|&v| field.element(v)).collect()))
        .collect()
}

fn worked_example() -> Verdict {
    let start = Instant::now();
    let f = Field::new(23).unwrap();
    let x = elements(f, &[&[3], &[10], &[8]]);
    let (out, _) = run_secure_sum(f, 3, &x, AdversarySpec::honest(), 1, None).unwrap();
    let sum = out.unwrap();
    let avg = client_average(&sum, 3, &Codec::Integer(f)).unwrap();
    let took = start.elapsed();
    verdict(
        sum == vec![f.element(21)] && avg == vec![7.0] && took < Duration::from_secs(1),
        format!("sum {}, average {}, {:.3} s", sum[0].value(), avg[0], took.as_secs_f64()),
    )
}

fn oracle_parity() -> Verdict {
    let start = Instant::now();
    let pop = population(15, 1);
    let pe = train(&pop, Scheme::PrivatEyes, 1);
    let t = &pe.transcript;
    let ius: Vec<Vec<Vec<f64>>> = (1..=10)
        .map(|k| t.ground_truth.iter().filter(|u| u.round == k).map(|u| u.weights.clone()).collect())
        .collect();
    let oracle =
        plaintext_adaptive_fl_oracle(&t.initial().unwrap(), &ius, OptimizerConfig::default(), &default_codec()).unwrap();
    let bits = |w: &ModelVector| w.weights().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let identical = oracle.len() == 10
        && oracle
            .iter()
            .enumerate()
            .all(|(k, om)| bits(&t.output_model(k as u32 + 1).unwrap()) == bits(om));
    let e_pe = evaluate_model(&pe.final_model, &pop.test).unwrap().mean_error;
    let e_or = evaluate_model(oracle.last().unwrap(), &pop.test).unwrap().mean_error;
    let took = start.elapsed();
    verdict(
        pe.abort.is_none()
            && pe.final_model.dim() == 18
            && identical
            && e_pe.to_bits() == e_or.to_bits()
            && took < Duration::from_secs(60),
        format!("10 rounds bit-identical: {identical}, test error {e_pe:.6} vs {e_or:.6}, {:.2} s", took.as_secs_f64()),
    )
}

fn datacentre_vs_federated() -> Verdict {
    let mut medians = Vec::new();
    let mut worst = 20;
    for clients in [15, 150, 1500] {
        let mut gaps = Vec::new();
        let mut wins = 0;
        for seed in 1..=20 {
            let pop = population(clients, seed);
            let err = |s| train(&pop, s, seed).metrics.last().unwrap().test_error.unwrap();
            let (dc, fl) = (err(Scheme::Datacentre), err(Scheme::AdaptiveFl));
            wins += (dc <= fl) as usize;
            gaps.push(fl - dc);
        }
        worst = worst.min(wins);
        gaps.sort_by(f64::total_cmp);
        medians.push((gaps[9] + gaps[10]) / 2.0);
    }
    verdict(
        worst >= 18 && medians.windows(2).all(|w| w[1] < w[0]),
        format!("fewest wins {worst}/20, median gaps {medians:.3?} deg"),
    )
}

fn deviations_abort() -> Verdict {
    let f = Field::mersenne127();
    let cases = [
        (Behavior::TamperShare { coordinate: 1, delta: 5 }, AbortReason::MacFailure),
        (Behavior::TamperEpsilon { coordinate: 0, delta: 1 }, AbortReason::MacFailure),
        (
            Behavior::ForgeSigma {
                coordinate: 2,
                delta: 3,
                sigma_guess: 123_456_789,
            },
            AbortReason::MacFailure,
        ),
        (Behavior::EquivocateCommit, AbortReason::Equivocation),
        (Behavior::Withhold, AbortReason::Timeout),
    ];
    let x = elements(f, &[&[1, 2, 3], &[4, 5, 6], &[7, 8, 9]]);
    let trials = 1000u64;
    let mut caught = 0;
    for (behavior, reason) in &cases {
        for seed in 0..trials {
            let servers = 2 + (seed % 3) as usize;
            let spec = AdversarySpec::active([(seed % servers as u64) as u32], behavior.clone());
            let (out, _) = run_secure_sum(f, servers, &x, spec, seed, None).unwrap();
            caught += matches!(out, Err(a) if a.reason == *reason) as u64;
        }
    }
    let honest = 10_000u64;
    let mut false_aborts = 0;
    for seed in 0..honest {
        let y = elements(f, &[&[seed as u128, 2], &[3, 4]]);
        let (out, _) = run_secure_sum(f, 3, &y, AdversarySpec::passive([0], []), seed, None).unwrap();
        false_aborts += (out.ok() != Some(vec![f.element(seed as u128 + 3), f.element(6)])) as u64;
    }
    let total = trials * cases.len() as u64;
    verdict(
        caught == total && false_aborts == 0,
        format!("{caught}/{total} deviations aborted, {false_aborts}/{honest} honest runs failed"),
    )
}

fn forge_once(field: Field, rng: &mut ChaCha20Rng, seed: u64) -> bool {
    let (key, masks, _) = dealer_setup(field, 3, &[0], seed).unwrap();
    let values: Vec<Vec<FieldElement>> = (0..3).map(|i| vec![masks[0].server_shares[i].value]).collect();
    let macs: Vec<Vec<FieldElement>> = (0..3).map(|i| vec![masks[0].server_shares[i].mac]).collect();
    let q = field.modulus();
    let script = OpeningScript {
        corrupted: Some(0),
        value_offset: Some((0, field.element(rng.gen_range(1..q)))),
        sigma_offset: Some(field.element(rng.gen_range(0..q))),
        ..Default::default()
    };
    run_opening(&values, &macs, &key, &script, rng).is_ok()
}

fn forgery_rate() -> Verdict {
    let trials = 100_000u64;
    let small = Field::new(23).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    let wins = (0..trials).filter(|&t| forge_once(small, &mut rng, t)).count();
    let rate = wins as f64 / trials as f64;
    let large = Field::mersenne127();
    let mut rng = ChaCha20Rng::seed_from_u64(127);
    let big_wins = (0..trials).filter(|&t| forge_once(large, &mut rng, t)).count();
    verdict(
        (0.035..=0.052).contains(&rate) && big_wins == 0,
        format!("Z_23 rate {rate:.5}, large field {big_wins}/{trials}"),
    )
}

fn share_uniformity() -> Verdict {
    let f = Field::new(23).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let samples = 100_000;
    let mut counts = vec![0u64; 23 * 23];
    for _ in 0..samples {
        let s = share(f.element(5), 3, &mut rng).unwrap();
        let v = s.shares();
        counts[(v[0].value() * 23 + v[1].value()) as usize] += 1;
    }
    let expected = samples as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat);
    let s = share(f.element(11), 3, &mut rng).unwrap();
    let mut secrets: Vec<u128> = (0..23)
        .map(|last| {
            let mut all = s.shares()[..2].to_vec();
            all.push(f.element(last));
            reconstruct(&AdditiveSharing::new(3, all)).unwrap().value()
        })
        .collect();
    secrets.sort_unstable();
    secrets.dedup();
    verdict(
        p > 0.01 && secrets.len() == 23,
        format!("chi-square p = {p:.4}, {} possible secrets", secrets.len()),
    )
}

fn leakage(pop: &Population, scheme: Scheme, t: &RoundTranscript, cfg: &AttackConfig) -> (f64, f64) {
    let leak = build_leak_set(scheme, t, &PublicKnowledge::of(pop)).unwrap();
    let mut r = dualview_lite_reconstruct(&leak, cfg).unwrap();
    r.score(pop, cfg, &GridSpec::default()).unwrap();
    (r.mean_mae.unwrap(), r.mean_kl.unwrap())
}

/// P(X >= k) for X ~ Binomial(n, 1/2).
fn sign_test(k: u32, n: u32) -> f64 {
    let choose = |n: u32, r: u32| (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (k..=n).map(|r| choose(n, r)).sum::<f64>() / 2f64.powi(n as i32)
}

fn leakage_ordering() -> Verdict {
    let cfg = AttackConfig::default();
    let seeds = 20;
    let (mut kl_wins, mut mae_wins) = (0, 0);
    let (mut pe_sum, mut mpc_sum) = (0.0, 0.0);
    for seed in 1..=seeds {
        let pop = population(15, seed);
        let afl = leakage(&pop, Scheme::AdaptiveFl, &train(&pop, Scheme::AdaptiveFl, seed).transcript, &cfg);
        let pe_t = train(&pop, Scheme::PrivatEyes, seed).transcript;
        let pe = leakage(&pop, Scheme::PrivatEyes, &pe_t, &cfg);
        let mpc = leakage(&pop, Scheme::GenericMpc, &pe_t, &cfg);
        kl_wins += (afl.1 < pe.1) as u32;
        mae_wins += (afl.0 < pe.0) as u32;
        pe_sum += pe.1;
        mpc_sum += mpc.1;
    }
    let p = sign_test(kl_wins, seeds as u32);
    let rel = (pe_sum - mpc_sum).abs() / pe_sum;
    verdict(
        p < 0.05 && rel <= 0.1 && mae_wins >= 18,
        format!("KL sign test {kl_wins}/{seeds} p = {p:.2e}, |PE-MPC| {:.1}% of PE, MAE wins {mae_wins}/{seeds}", rel * 100.0),
    )
}

fn round_dependence() -> Verdict {
    let base = AttackConfig::default();
    let single = |round| AttackConfig {
        only_round: Some(round),
        chain: false,
        ..base.clone()
    };
    let seeds = 20;
    let (mut late_worse, mut chain_better) = (0, 0);
    for seed in 1..=seeds {
        let pop = population(15, seed);
        let t = train(&pop, Scheme::AdaptiveFl, seed).transcript;
        let first = leakage(&pop, Scheme::AdaptiveFl, &t, &single(1)).1;
        let last = leakage(&pop, Scheme::AdaptiveFl, &t, &single(10)).1;
        let chained = leakage(&pop, Scheme::AdaptiveFl, &t, &base).1;
        late_worse += (last >= first) as u32;
        chain_better += (chained < last) as u32;
    }
    verdict(
        late_worse >= 14 && chain_better >= 14,
        format!("final-round-only no better on {late_worse}/{seeds}, chaining better on {chain_better}/{seeds}"),
    )
}

fn total_bytes(scheme: Scheme, servers: usize, d_in: usize) -> u64 {
    let shape = ModelShape::Linear { d_in };
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut updates = BTreeMap::new();
    for k in 1..=10 {
        for j in 0..15 {
            updates.insert((k, j), (0..shape.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
    }
    let src = FixedUpdates { clients: 15, updates };
    let mut cfg = ProtocolConfig::new(scheme);
    cfg.servers = servers;
    cfg.keep_frames = false;
    run_training(&src, shape, cfg, AdversarySpec::honest()).unwrap().comm.total().total()
}

fn communication() -> Verdict {
    let ratio = total_bytes(Scheme::PrivatEyes, 3, 499) as f64 / total_bytes(Scheme::AdaptiveFl, 1, 499) as f64;
    let xs = [2.0, 3.0, 5.0];
    let ys = [2, 3, 5].map(|n| total_bytes(Scheme::PrivatEyes, n, 499) as f64);
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    verdict(
        (6.0..=8.0).contains(&ratio) && r2 > 0.99,
        format!("ratio {ratio:.3} at d = 1000, R^2 {r2:.5} over n = 2, 3, 5"),
    )
}

fn mpc_cost() -> Verdict {
    let cnn = reference_cnn();
    let conv1 = estimate_generic_mpc_cost(&cnn[..1], Passes::FORWARD).unwrap().total;
    let total = estimate_generic_mpc_cost(&cnn, Passes::TRAINING).unwrap().total;
    verdict(
        conv1 == 896_000 && (2.5e7..=3.5e7).contains(&(total as f64)),
        format!("conv1 forward {conv1}, network total {total}"),
    )
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let shape = if i % 2 == 0 {
            LINEAR
        } else {
            ModelShape::Hidden { d_in: 8, width: 16 }
        };
        let w = ModelVector::random(shape, i, 0.5);
        let batch: Vec<GazeSample> = (0..4)
            .map(|_| GazeSample {
                features: (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                gaze: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
            })
            .collect();
        let refs: Vec<&GazeSample> = batch.iter().collect();
        let mut g = vec![0.0; w.dim()];
        w.loss_and_grad(&refs, &mut g).unwrap();
        let k = rng.gen_range(0..w.dim());
        let h = 1e-5;
        let at = |delta: f64| {
            let mut v = w.weights().to_vec();
            v[k] += delta;
            ModelVector::new(shape, v).unwrap().loss(&batch).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1e-8));
    }
    verdict(worst < 1e-5, format!("worst relative error {worst:.2e} over 100 points"))
}

fn cli_run(out: &Path) -> Vec<(String, Vec<u8>)> {
    let status = Command::new(env!("CARGO_BIN_EXE_privateyes"))
        .args(["run", "--out"])
        .arg(out)
        .env("PRIVATEYES_EXPERIMENT_SEED", "4")
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    ["metrics.csv", "report.json", "transcript.ndjson"]
        .iter()
        .map(|n| (n.to_string(), std::fs::read(out.join(n)).unwrap()))
        .collect()
}

fn reproducible_artifacts() -> Verdict {
    let dir = std::env::temp_dir().join(format!("privateyes-acceptance-{}", std::process::id()));
    let a = cli_run(&dir.join("a"));
    let b = cli_run(&dir.join("b"));
    let _ = std::fs::remove_dir_all(&dir);
    let same = a == b && a.iter().all(|(_, bytes)| !bytes.is_empty());
    let sizes: Vec<String> = a.iter().map(|(n, b)| format!("{n} {} B", b.len())).collect();
    verdict(same, format!("two runs byte-identical: {same} ({})", sizes.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 12] = [
        ("worked example in Z_23", worked_example),
        ("privateyes matches the plaintext oracle", oracle_parity),
        ("data centre at least as accurate, gap shrinks", datacentre_vs_federated),
        ("scripted deviations abort, honest runs do not", deviations_abort),
        ("random MAC forgery rate", forgery_rate),
        ("coalition shares are uniform", share_uniformity),
        ("leakage ordering", leakage_ordering),
        ("late rounds leak less, chaining helps", round_dependence),
        ("communication ratio and linearity", communication),
        ("generic MPC cost", mpc_cost),
        ("gradient check", gradient_check),
        ("reproducible artifacts", reproducible_artifacts),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        println!("{} criterion {:>2}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
        if !v.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("all 12 criteria pass");
    } else {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

use privateyes::field::{Codec, Field, FieldElement};
use privateyes::aggregation::client_average;
use privateyes::protocol::run_secure_sum;
use privateyes::sharing::AbortReason;
use privateyes::simnet::{AdversarySpec, Behavior, MsgType, Party};

fn z23() -> Field {
    Field::new(23).unwrap()
}

fn inputs(field: Field, rows: &[&[u128]]) -> Vec<(u32, Vec<FieldElement>)> {
    rows.iter()
        .enumerate()
        .map(|(j, r)| (j as u32, r.iter().map(|&v| field.element(v)).collect()))
        .collect()
}

#[test]
fn worked_example_sums_to_21_and_averages_to_7() {
    let f = z23();
    let (out, _) = run_secure_sum(f, 3, &inputs(f, &[&[3], &[10], &[8]]), AdversarySpec::honest(), 1, None).unwrap();
    let sum = out.unwrap();
    assert_eq!(sum, vec![f.element(21)]);
    assert_eq!(client_average(&sum, 3, &Codec::Integer(f)).unwrap(), vec![7.0]);
}

fn big() -> Field {
    Field::mersenne127()
}

fn expect_abort(behavior: Behavior, reason: AbortReason, trials: u64) {
    let f = big();
    for seed in 0..trials {
        let servers = 2 + (seed % 3) as usize;
        let x = inputs(f, &[&[1, 2, 3], &[4, 5, 6], &[7, 8, 9]]);
        let spec = AdversarySpec::active([(seed % servers as u64) as u32], behavior.clone());
        let (out, _) = run_secure_sum(f, servers, &x, spec, seed, None).unwrap();
        let a = out.expect_err("deviation went unnoticed");
        assert_eq!(a.reason, reason, "seed {seed}: {a:?}");
    }
}

#[test]
fn tampered_opening_shares_abort() {
    expect_abort(Behavior::TamperShare { coordinate: 1, delta: 5 }, AbortReason::MacFailure, 200);
}

#[test]
fn tampered_masked_inputs_abort() {
    expect_abort(Behavior::TamperEpsilon { coordinate: 0, delta: 1 }, AbortReason::MacFailure, 200);
}

#[test]
fn forged_check_values_abort() {
    expect_abort(
        Behavior::ForgeSigma {
            coordinate: 2,
            delta: 3,
            sigma_guess: 123_456_789,
        },
        AbortReason::MacFailure,
        200,
    );
}

#[test]
fn equivocation_aborts() {
    expect_abort(Behavior::EquivocateCommit, AbortReason::Equivocation, 200);
}

#[test]
fn withholding_times_out() {
    expect_abort(Behavior::Withhold, AbortReason::Timeout, 200);
}

#[test]
fn honest_runs_never_abort() {
    let f = big();
    for seed in 0..500 {
        let x = inputs(f, &[&[seed as u128, 2], &[3, 4]]);
        let spec = AdversarySpec::passive([0], []);
        let (out, _) = run_secure_sum(f, 3, &x, spec, seed, None).unwrap();
        assert_eq!(out.unwrap(), vec![f.element(seed as u128 + 3), f.element(6)]);
    }
}

#[test]
fn abort_reaches_every_client() {
    let f = big();
    let x = inputs(f, &[&[1], &[2]]);
    let spec = AdversarySpec::active([1], Behavior::EquivocateCommit);
    let (out, net) = run_secure_sum(f, 3, &x, spec, 9, None).unwrap();
    assert!(out.is_err());
    for j in 0..2 {
        assert!(net
            .log()
            .iter()
            .any(|r| r.msg_type == MsgType::Abort && r.receiver == Party::Client(j) && r.delivered));
    }
}

/// Inputs that differ but have the same sum, run with dealer masks shifted
/// by the difference, give the coalition of all servers but the last a
/// byte-identical view.
#[test]
fn coalition_view_is_independent_of_inputs() {
    let f = big();
    for servers in [2usize, 3, 5] {
        let coalition: Vec<u32> = (0..servers as u32 - 1).collect();
        let x = inputs(f, &[&[10, 20], &[30, 40], &[50, 60]]);
        let y = inputs(f, &[&[17, 1], &[23, 59], &[50, 60]]);
        let diff: Vec<Vec<FieldElement>> = x
            .iter()
            .zip(&y)
            .map(|((_, a), (_, b))| a.iter().zip(b).map(|(&p, &q)| q - p).collect())
            .collect();
        let shift = |j: u32, c: usize| diff[j as usize][c];
        let (ox, nx) = run_secure_sum(f, servers, &x, AdversarySpec::passive(coalition.clone(), []), 4, None).unwrap();
        let (oy, ny) =
            run_secure_sum(f, servers, &y, AdversarySpec::passive(coalition.clone(), []), 4, Some(&shift)).unwrap();
        assert_eq!(ox.unwrap(), oy.unwrap());
        let bytes = |n: &privateyes::simnet::Network| -> Vec<Vec<u8>> {
            n.adversary_view().into_iter().map(|r| r.bytes.clone()).collect()
        };
        assert!(!bytes(&nx).is_empty());
        assert_eq!(bytes(&nx), bytes(&ny), "{servers} servers");
        // The honest server's own material does differ.
        let last = Party::Server(servers as u32 - 1);
        let honest = |n: &privateyes::simnet::Network| -> Vec<Vec<u8>> {
            n.view_of(last).into_iter().map(|r| r.bytes.clone()).collect()
        };
        assert_ne!(honest(&nx), honest(&ny));
    }
}

#[test]
fn no_honest_server_is_rejected() {
    let f = big();
    let x = inputs(f, &[&[1]]);
    assert!(run_secure_sum(f, 2, &x, AdversarySpec::passive([0, 1], []), 1, None).is_err());
}

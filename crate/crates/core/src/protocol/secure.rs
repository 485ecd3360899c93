//! One secure summation over the simulated network: dealer masks, masked
//! client inputs, local aggregation on every server, the MAC-checked
//! opening among servers and delivery of the opened sum to clients.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::aggregation::server_aggregate_shares;
use crate::field::{Field, FieldElement};
use crate::seed::derive_seed;
use crate::sharing::{
    client_input, derive_input_share, Abort, AbortReason, AuthShare, ClientMask, Commitment,
    Dealer, Decommitment, MaskId, OpeningSession,
};
use crate::simnet::{AdversarySpec, Behavior, MsgType, Network, Party, WireMessage};

use super::ProtocolError;

pub struct SecureSumParams<'a> {
    pub round: u32,
    /// Seeds every server's commitment and coin randomness.
    pub session_seed: u64,
    pub timeout_steps: u32,
    /// Clients that receive the opened sum.
    pub recipients: &'a [u32],
    /// Public offset added to the dealer's mask for (client, coordinate).
    /// Only used to couple two executions in simulation proofs.
    pub mask_shift: Option<&'a dyn Fn(u32, usize) -> FieldElement>,
}

fn abort_code(r: AbortReason) -> u8 {
    match r {
        AbortReason::MacFailure => 0,
        AbortReason::Equivocation => 1,
        AbortReason::Timeout => 2,
        AbortReason::Malformed => 3,
    }
}

pub(crate) fn abort_payload(a: &Abort) -> Vec<u8> {
    let mut p = vec![abort_code(a.reason)];
    p.extend_from_slice(a.detail.as_bytes());
    p
}

/// Every server sends its MAC key share's frame from the dealer; called once
/// before the first round.
pub fn distribute_keys(net: &mut Network, dealer: &Dealer, round: u32) {
    for (i, &k) in dealer.key_sharing().key_shares().iter().enumerate() {
        net.send(WireMessage::with_elements(
            MsgType::MaskDelivery,
            round,
            Party::Dealer.wire_id(),
            Party::Server(i as u32).wire_id(),
            &[k],
        ));
    }
}

/// Each server reads its key share from the dealer frame.
pub fn receive_keys(net: &mut Network, servers: usize, budget: u32) -> Result<Vec<FieldElement>, Abort> {
    let field = net.field();
    (0..servers)
        .map(|i| {
            let d = net
                .wait_for(Party::Server(i as u32), MsgType::MaskDelivery, Some(Party::Dealer), budget)
                .ok_or_else(|| Abort::new(AbortReason::Timeout, format!("server {i} got no key share")))?;
            let e = d
                .msg
                .elements(field)
                .map_err(|e| Abort::new(AbortReason::Malformed, e.to_string()))?;
            match e.as_slice() {
                [k] => Ok(*k),
                _ => Err(Abort::new(AbortReason::Malformed, "key frame length")),
            }
        })
        .collect()
}

/// Honest servers that detected `abort` tell everybody, then the run stops.
fn broadcast_abort(net: &mut Network, from: u32, servers: usize, recipients: &[u32], round: u32, abort: &Abort) {
    let payload = abort_payload(abort);
    let me = Party::Server(from).wire_id();
    for i in 0..servers as u32 {
        if i != from {
            net.send(WireMessage::new(MsgType::Abort, round, me, Party::Server(i).wire_id(), payload.clone()));
        }
    }
    for &c in recipients {
        net.send(WireMessage::new(MsgType::Abort, round, me, Party::Client(c).wire_id(), payload.clone()));
    }
}

fn malformed(who: &str, e: impl std::fmt::Display) -> Abort {
    Abort::new(AbortReason::Malformed, format!("{who}: {e}"))
}

/// Picks the abort an honest server saw; falls back to any abort.
fn first_abort(aborts: Vec<(u32, Abort)>, net: &Network) -> Option<(u32, Abort)> {
    let spec = net.adversary();
    let honest = aborts
        .iter()
        .position(|(i, _)| !spec.is_corrupted(Party::Server(*i)));
    match honest {
        Some(p) => aborts.into_iter().nth(p),
        None => aborts.into_iter().next(),
    }
}

/// A standalone single-round summation on a fresh network: dealer setup,
/// key distribution and [`secure_sum`]. The network is returned for
/// inspection of views and byte counts.
pub fn run_secure_sum(
    field: Field,
    servers: usize,
    inputs: &[(u32, Vec<FieldElement>)],
    adversary: AdversarySpec,
    seed: u64,
    mask_shift: Option<&dyn Fn(u32, usize) -> FieldElement>,
) -> Result<(Result<Vec<FieldElement>, Abort>, Network), ProtocolError> {
    adversary.validate(servers)?;
    let mut net = Network::new(field, adversary);
    let mut dealer = Dealer::new(field, servers, derive_seed(seed, &[0x6465_616c]))?;
    const BUDGET: u32 = 4;
    distribute_keys(&mut net, &dealer, 1);
    net.run(BUDGET);
    let keys = match receive_keys(&mut net, servers, BUDGET) {
        Ok(k) => k,
        Err(a) => return Ok((Err(a), net)),
    };
    let recipients: Vec<u32> = inputs.iter().map(|(j, _)| *j).collect();
    let params = SecureSumParams {
        round: 1,
        session_seed: derive_seed(seed, &[0x7365_7373]),
        timeout_steps: BUDGET,
        recipients: &recipients,
        mask_shift,
    };
    let out = secure_sum(&mut net, &mut dealer, &keys, inputs, &params);
    Ok((out, net))
}

/// Runs one secure summation of `inputs` (one encoded vector per cohort
/// client, in client-id order). Returns the sum every recipient accepted.
pub fn secure_sum(
    net: &mut Network,
    dealer: &mut Dealer,
    key_shares: &[FieldElement],
    inputs: &[(u32, Vec<FieldElement>)],
    p: &SecureSumParams,
) -> Result<Vec<FieldElement>, Abort> {
    let n = key_shares.len();
    let field = net.field();
    let budget = p.timeout_steps;
    let dim = inputs.first().map_or(0, |(_, x)| x.len());
    let round = p.round;

    // Offline material: one mask per client coordinate.
    let mut server_payloads: Vec<Vec<FieldElement>> = vec![Vec::new(); n];
    for (client, x) in inputs {
        let masks: Vec<_> = (0..x.len())
            .map(|c| {
                let offset = p.mask_shift.map_or(field.zero(), |f| f(*client, c));
                dealer.issue_mask_shifted(*client, offset)
            })
            .collect();
        let r: Vec<FieldElement> = masks.iter().map(|m| m.r).collect();
        net.send(WireMessage::with_elements(
            MsgType::MaskDelivery,
            round,
            Party::Dealer.wire_id(),
            Party::Client(*client).wire_id(),
            &r,
        ));
        for (i, payload) in server_payloads.iter_mut().enumerate() {
            payload.extend(masks.iter().map(|m| m.server_shares[i].value));
            payload.extend(masks.iter().map(|m| m.server_shares[i].mac));
        }
    }
    for (i, payload) in server_payloads.iter().enumerate() {
        net.send(WireMessage::with_elements(
            MsgType::MaskDelivery,
            round,
            Party::Dealer.wire_id(),
            Party::Server(i as u32).wire_id(),
            payload,
        ));
    }
    net.run(budget);

    // Clients publish epsilon = x - r to every server.
    for (client, x) in inputs {
        let me = Party::Client(*client);
        let frame = net
            .wait_for(me, MsgType::MaskDelivery, Some(Party::Dealer), budget)
            .ok_or_else(|| Abort::new(AbortReason::Timeout, format!("client {client} got no masks")))?;
        let r = frame.msg.elements(field).map_err(|e| malformed("mask frame", e))?;
        if r.len() != x.len() {
            return Err(malformed("mask frame", "wrong length"));
        }
        let eps = x
            .iter()
            .zip(r)
            .enumerate()
            .map(|(c, (&xc, rc))| {
                let mut mask = ClientMask::new(MaskId(c as u64), *client, rc);
                client_input(*client, xc, &mut mask).map_err(|e| malformed("input", e))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for i in 0..n as u32 {
            net.send(WireMessage::with_elements(
                MsgType::InputEpsilon,
                round,
                me.wire_id(),
                Party::Server(i).wire_id(),
                &eps,
            ));
        }
    }
    net.run(budget);

    // Servers derive authenticated input shares and sum them locally.
    let mut aggregates: Vec<Vec<AuthShare>> = Vec::with_capacity(n);
    let mut aborts = Vec::new();
    for i in 0..n {
        match server_input_phase(net, i, key_shares[i], inputs, dim, budget, field) {
            Ok(a) => aggregates.push(a),
            Err(a) => {
                aborts.push((i as u32, a));
                aggregates.push(Vec::new());
            }
        }
    }
    if let Some((i, a)) = first_abort(aborts, net) {
        broadcast_abort(net, i, n, p.recipients, round, &a);
        net.run(budget);
        return Err(a);
    }

    let opened = open_among_servers(net, key_shares, aggregates, p)?;

    // Every server hands the opened sum to the clients; clients insist on
    // unanimity.
    for i in 0..n as u32 {
        for &c in p.recipients {
            net.send(WireMessage::with_elements(
                MsgType::OpenShare,
                round,
                Party::Server(i).wire_id(),
                Party::Client(c).wire_id(),
                &opened[i as usize],
            ));
        }
    }
    net.run(budget);
    let mut accepted: Option<Vec<FieldElement>> = None;
    for &c in p.recipients {
        let mut copies = Vec::with_capacity(n);
        for i in 0..n as u32 {
            let d = net
                .wait_for(Party::Client(c), MsgType::OpenShare, Some(Party::Server(i)), budget)
                .ok_or_else(|| {
                    Abort::new(AbortReason::Timeout, format!("client {c} missing output from server {i}"))
                })?;
            copies.push(d.msg.elements(field).map_err(|e| malformed("output frame", e))?);
        }
        if copies.iter().any(|y| y != &copies[0]) {
            return Err(Abort::new(
                AbortReason::Equivocation,
                format!("client {c} received different outputs"),
            ));
        }
        if let Some(prev) = &accepted {
            if prev != &copies[0] {
                return Err(Abort::new(AbortReason::Equivocation, "clients disagree on output"));
            }
        }
        accepted = Some(copies.swap_remove(0));
    }
    Ok(accepted.unwrap_or_else(|| opened[0].clone()))
}

fn server_input_phase(
    net: &mut Network,
    i: usize,
    key_share: FieldElement,
    inputs: &[(u32, Vec<FieldElement>)],
    dim: usize,
    budget: u32,
    field: Field,
) -> Result<Vec<AuthShare>, Abort> {
    let me = Party::Server(i as u32);
    let frame = net
        .wait_for(me, MsgType::MaskDelivery, Some(Party::Dealer), budget)
        .ok_or_else(|| Abort::new(AbortReason::Timeout, format!("server {i} got no masks")))?;
    let material = frame.msg.elements(field).map_err(|e| malformed("mask frame", e))?;
    if material.len() != 2 * dim * inputs.len() {
        return Err(malformed("mask frame", "wrong length"));
    }
    let mut per_client = Vec::with_capacity(inputs.len());
    for (k, (client, _)) in inputs.iter().enumerate() {
        let block = &material[2 * dim * k..2 * dim * (k + 1)];
        let eps_frame = net
            .wait_for(me, MsgType::InputEpsilon, Some(Party::Client(*client)), budget)
            .ok_or_else(|| {
                Abort::new(AbortReason::Timeout, format!("server {i} missing input of client {client}"))
            })?;
        let eps = eps_frame.msg.elements(field).map_err(|e| malformed("input frame", e))?;
        if eps.len() != dim {
            return Err(malformed("input frame", "wrong length"));
        }
        per_client.push(
            (0..dim)
                .map(|c| derive_input_share(i, AuthShare::new(block[c], block[dim + c]), eps[c], key_share))
                .collect::<Vec<_>>(),
        );
    }
    server_aggregate_shares(&per_client).map_err(|e| malformed("aggregate", e))
}

/// MAC-checked opening of the servers' aggregate shares. Returns the value
/// each server will forward to clients.
fn open_among_servers(
    net: &mut Network,
    key_shares: &[FieldElement],
    aggregates: Vec<Vec<AuthShare>>,
    p: &SecureSumParams,
) -> Result<Vec<Vec<FieldElement>>, Abort> {
    let n = key_shares.len();
    let field = net.field();
    let round = p.round;
    let budget = p.timeout_steps;
    let spec = net.adversary().clone();
    let acting = spec.acts_in(round);
    let mut sessions: Vec<OpeningSession> = aggregates
        .into_iter()
        .enumerate()
        .map(|(i, shares)| OpeningSession::new(i, n, key_shares[i], shares))
        .collect();
    let mut rngs: Vec<ChaCha20Rng> = (0..n)
        .map(|i| ChaCha20Rng::seed_from_u64(derive_seed(p.session_seed, &[round as u64, i as u64])))
        .collect();

    let fail = |net: &mut Network, aborts: Vec<(u32, Abort)>| -> Result<(), Abort> {
        match first_abort(aborts, net) {
            Some((i, a)) => {
                broadcast_abort(net, i, n, p.recipients, round, &a);
                net.run(budget);
                Err(a)
            }
            None => Ok(()),
        }
    };

    // Value broadcast.
    for (i, s) in sessions.iter().enumerate() {
        let values = s.broadcast_values();
        for j in (0..n).filter(|&j| j != i) {
            net.send(WireMessage::with_elements(
                MsgType::OpenShare,
                round,
                Party::Server(i as u32).wire_id(),
                Party::Server(j as u32).wire_id(),
                &values,
            ));
        }
    }
    net.run(budget);
    let mut aborts = Vec::new();
    for i in 0..n {
        let me = Party::Server(i as u32);
        let mut all = Vec::with_capacity(n);
        let mut missing = None;
        for j in 0..n {
            if j == i {
                let own = if spec.is_corrupted(me) {
                    // The coalition works with what its frames carried.
                    net.delivered_payload(me, MsgType::OpenShare, round)
                        .and_then(|b| crate::simnet::elements_from_bytes(&b, field).ok())
                        .unwrap_or_else(|| sessions[i].broadcast_values())
                } else {
                    sessions[i].broadcast_values()
                };
                all.push(own);
                continue;
            }
            match net.wait_for(me, MsgType::OpenShare, Some(Party::Server(j as u32)), budget) {
                Some(d) => match d.msg.elements(field) {
                    Ok(v) => all.push(v),
                    Err(e) => {
                        missing = Some(malformed(&format!("share of server {j}"), e));
                        break;
                    }
                },
                None => {
                    missing = Some(Abort::new(
                        AbortReason::Timeout,
                        format!("server {i} never received the share of server {j}"),
                    ));
                    break;
                }
            }
        }
        let result = match missing {
            Some(a) => Err(a),
            None => sessions[i].receive_values(&all),
        };
        if let Err(a) = result {
            aborts.push((i as u32, a));
        }
    }
    fail(net, aborts)?;

    // Joint coin, then sigma; each as commit-then-reveal.
    let coin_commits: Vec<Commitment> = sessions
        .iter_mut()
        .zip(rngs.iter_mut())
        .map(|(s, r)| s.commit_coin(r))
        .collect();
    let coin_reveals: Vec<Decommitment> = sessions.iter().map(|s| s.reveal_coin()).collect();
    let (commits, reveals) = exchange_commitments(net, &coin_commits, &coin_reveals, p)?;
    let mut aborts = Vec::new();
    for (i, s) in sessions.iter_mut().enumerate() {
        if let Err(a) = s.receive_coin(&commits[i], &reveals[i]) {
            aborts.push((i as u32, a));
        }
    }
    fail(net, aborts)?;

    if acting {
        if let Behavior::ForgeSigma { sigma_guess, .. } = spec.behavior {
            if let Some(&c) = spec.corrupted_servers.iter().next() {
                sessions[c as usize].adjust_sigma(field.element(sigma_guess % field.modulus()));
            }
        }
    }
    let sigma_commits: Vec<Commitment> = sessions
        .iter_mut()
        .zip(rngs.iter_mut())
        .map(|(s, r)| s.commit_sigma(r))
        .collect();
    let sigma_reveals: Vec<Decommitment> = sessions.iter().map(|s| s.reveal_sigma()).collect();
    let (commits, reveals) = exchange_commitments(net, &sigma_commits, &sigma_reveals, p)?;
    let mut outputs = Vec::with_capacity(n);
    let mut aborts = Vec::new();
    for (i, s) in sessions.iter_mut().enumerate() {
        match s.finish(&commits[i], &reveals[i]) {
            Ok(y) => outputs.push(y),
            Err(a) => {
                aborts.push((i as u32, a));
                outputs.push(Vec::new());
            }
        }
    }
    fail(net, aborts)?;
    Ok(outputs)
}

type Received = (Vec<Vec<Commitment>>, Vec<Vec<Decommitment>>);

/// Commit frames, then reveal frames. Entry `[i][j]` is what server `i`
/// holds for server `j`.
fn exchange_commitments(
    net: &mut Network,
    commits: &[Commitment],
    reveals: &[Decommitment],
    p: &SecureSumParams,
) -> Result<Received, Abort> {
    let n = commits.len();
    let round = p.round;
    let budget = p.timeout_steps;
    let phase = |net: &mut Network, msg_type: MsgType, payloads: Vec<Vec<u8>>| -> Vec<Vec<Option<Vec<u8>>>> {
        for (i, payload) in payloads.iter().enumerate() {
            for j in (0..n).filter(|&j| j != i) {
                net.send(WireMessage::new(
                    msg_type,
                    round,
                    Party::Server(i as u32).wire_id(),
                    Party::Server(j as u32).wire_id(),
                    payload.clone(),
                ));
            }
        }
        net.run(budget);
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            Some(payloads[i].clone())
                        } else {
                            net.wait_for(Party::Server(i as u32), msg_type, Some(Party::Server(j as u32)), budget)
                                .map(|d| d.msg.payload)
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let got_commits = phase(net, MsgType::Commit, commits.iter().map(|c| c.0.to_vec()).collect());
    let got_reveals = phase(net, MsgType::Reveal, reveals.iter().map(|d| d.to_bytes()).collect());

    let mut out_c = Vec::with_capacity(n);
    let mut out_r = Vec::with_capacity(n);
    let mut aborts = Vec::new();
    for i in 0..n {
        let parsed: Result<(Vec<Commitment>, Vec<Decommitment>), Abort> = (|| {
            let mut cs = Vec::with_capacity(n);
            let mut rs = Vec::with_capacity(n);
            for j in 0..n {
                let c = got_commits[i][j].as_ref().ok_or_else(|| {
                    Abort::new(AbortReason::Timeout, format!("server {i} missing commitment of server {j}"))
                })?;
                let digest: [u8; 32] = c
                    .as_slice()
                    .try_into()
                    .map_err(|_| malformed("commitment", "length"))?;
                cs.push(Commitment(digest));
                let r = got_reveals[i][j].as_ref().ok_or_else(|| {
                    Abort::new(AbortReason::Timeout, format!("server {i} missing reveal of server {j}"))
                })?;
                rs.push(Decommitment::from_bytes(r).ok_or_else(|| malformed("reveal", "length"))?);
            }
            Ok((cs, rs))
        })();
        match parsed {
            Ok((c, r)) => {
                out_c.push(c);
                out_r.push(r);
            }
            Err(a) => {
                aborts.push((i as u32, a));
                out_c.push(Vec::new());
                out_r.push(Vec::new());
            }
        }
    }
    if let Some((i, a)) = first_abort(aborts, net) {
        broadcast_abort(net, i, n, p.recipients, round, &a);
        net.run(budget);
        return Err(a);
    }
    Ok((out_c, out_r))
}

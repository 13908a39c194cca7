//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always reach the console.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rust_decimal::Decimal;
use v2g_core::consensus::{verify_ledger_bytes, Ledger, LedgerVerdict};
use v2g_core::crypto::OpCounters;
use v2g_core::entities::messages::{field_count, MessageTag};
use v2g_core::scenario::{CurveChoice, Scenario};
use v2g_core::simnet::{run_scenario, Channel, RoleKind, RunOutcome, SessionOutcome, Verdict};
use v2g_core::{ToyCurve, ToyPoint};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> Scenario {
    let text = fs::read_to_string(scenarios_dir().join(name)).expect("scenario file");
    Scenario::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn with_seed(mut sc: Scenario, seed: u64) -> Scenario {
    sc.seed = seed;
    sc
}

fn run(sc: &Scenario) -> RunOutcome {
    run_scenario(sc).expect("scenario runs")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// The message must have been delivered to `dst` and accepted there.
fn accepted(out: &RunOutcome, tag: MessageTag, dst: RoleKind) -> bool {
    out.trace.iter().any(|e| e.tag == tag && e.dst.role() == dst && e.verdict == Verdict::Accepted)
}

fn criterion_1() -> Check {
    let start = Instant::now();
    for seed in 0..100u64 {
        let out = run(&Scenario::honest(seed, CurveChoice::Production));
        let s = &out.sessions[0];
        ensure(s.outcome == SessionOutcome::MutuallyAuthenticated, || format!("seed {seed}: {}", s.outcome))?;
        // Step 4 at the CS, Step 6 at the CAG, Steps 8 and 9 at the CS and EV.
        for (tag, at) in [
            (MessageTag::M2, RoleKind::Cs),
            (MessageTag::M3, RoleKind::Cag),
            (MessageTag::M4, RoleKind::Cs),
            (MessageTag::M5, RoleKind::Ev),
        ] {
            ensure(accepted(&out, tag, at), || format!("seed {seed}: {} not accepted at {at}", tag.name()))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("100 runs took {secs:.2} s"))?;
    Ok(format!("100/100 P-256 runs mutually authenticated in {secs:.2} s"))
}

/// Textbook affine arithmetic over F_17 for y^2 = x^3 + 2x + 2.
mod toy_oracle {
    pub const P: i64 = 17;
    pub const A: i64 = 2;
    pub type Pt = Option<(i64, i64)>;

    fn inv(v: i64) -> i64 {
        (1..P).find(|c| (v.rem_euclid(P) * c) % P == 1).expect("invertible")
    }

    pub fn add(p: Pt, q: Pt) -> Pt {
        let (Some((x1, y1)), Some((x2, y2))) = (p, q) else { return p.or(q) };
        if x1 == x2 && (y1 + y2) % P == 0 {
            return None;
        }
        let lambda = if (x1, y1) == (x2, y2) {
            (3 * x1 * x1 + A) * inv(2 * y1)
        } else {
            (y2 - y1) * inv(x2 - x1)
        }
        .rem_euclid(P);
        let x3 = (lambda * lambda - x1 - x2).rem_euclid(P);
        let y3 = (lambda * (x1 - x3) - y1).rem_euclid(P);
        Some((x3, y3))
    }

    pub fn repeated(k: u64, p: Pt) -> Pt {
        (0..k).fold(None, |acc, _| add(acc, p))
    }
}

fn criterion_2() -> Check {
    use toy_oracle::{repeated, Pt};
    let curve = ToyCurve::toy();
    let to_oracle = |p: &ToyPoint| -> Pt {
        match p {
            ToyPoint::Infinity => None,
            ToyPoint::Affine { x, y } => Some((*x as i64, *y as i64)),
        }
    };
    let g: Pt = Some((5, 1));
    ensure(to_oracle(curve.generator()) == g, || "generator is not (5, 1)".into())?;
    ensure(repeated(2, g) == Some((6, 3)), || "oracle 2G != (6, 3)".into())?;
    ensure(repeated(19, g).is_none(), || "oracle: G does not have order 19".into())?;
    let mut meter = OpCounters::new();
    let mut checked = 0;
    for j in 1..19u64 {
        let base = curve.scalar_mult(&j, curve.generator(), &mut meter).map_err(|e| e.to_string())?;
        ensure(to_oracle(&base) == repeated(j, g), || format!("{j}G differs from oracle"))?;
        for k in 1..=19u64 {
            let got = curve.scalar_mult(&k, &base, &mut meter).map_err(|e| e.to_string())?;
            let want = repeated(k, repeated(j, g));
            ensure(to_oracle(&got) == want, || format!("{k} * ({j}G): got {got:?}, oracle {want:?}"))?;
            checked += 1;
        }
    }
    let two_g = curve.scalar_mult(&2, curve.generator(), &mut meter).map_err(|e| e.to_string())?;
    ensure(two_g == ToyPoint::affine(6, 3), || format!("2G = {two_g:?}"))?;
    Ok(format!("{checked} products match repeated addition; 2G = (6, 3)"))
}

/// Cryptographic work per protocol step, read off the step descriptions.
/// `E` is one elliptic-curve multiplication, `H` one hash.
const STEP_OPS: &[(RoleKind, &str, &str)] = &[
    (RoleKind::Cs, "1: R1 = r1.P", "E"),
    (RoleKind::Ev, "2: R2 = SK_EV.R1, Auth_EV-CS, Auth_EV-CAG", "EHH"),
    (RoleKind::Cs, "4: r1.PK_EV, Auth*_EV-CS", "EH"),
    (RoleKind::Cs, "5: R3 = r2.P, R4 = SK_CS.R3, Auth_CS-CAG", "EEH"),
    (RoleKind::Cag, "6: r1.PK_EV, Auth*_EV-CAG, r2.PK_CS, Auth*_CS-CAG", "EHEH"),
    (RoleKind::Cag, "7: R5 = SK_CAG.R1, Auth_CAG", "EH"),
    (RoleKind::Cs, "8: r1.PK_CAG, Auth*_CAG", "EH"),
    (RoleKind::Ev, "9: r1.PK_CAG, Auth*_CAG", "EH"),
];

/// Message contents and receivers as defined for M1..M5.
const MESSAGES: &[(MessageTag, RoleKind, &[&str])] = &[
    (MessageTag::M1, RoleKind::Ev, &["R1", "PTD_CS", "T_CS"]),
    (MessageTag::M2, RoleKind::Cs, &["Auth_EV-CS", "Auth_EV-CAG", "T_EV", "PTD_EV"]),
    (MessageTag::M3, RoleKind::Cag, &["Auth_CS-CAG", "T_CS", "T_EV", "r1", "r2", "R1", "PTD_EV", "PTD_CS"]),
    (MessageTag::M4, RoleKind::Cs, &["Auth_CAG", "T_CAG"]),
    (MessageTag::M5, RoleKind::Ev, &["Auth_CAG", "T_CAG", "r1"]),
];

fn criterion_3() -> Check {
    let mut want_ops: BTreeMap<RoleKind, (u64, u64)> = BTreeMap::new();
    for (role, _, ops) in STEP_OPS {
        let e = want_ops.entry(*role).or_default();
        e.0 += ops.matches('E').count() as u64;
        e.1 += ops.matches('H').count() as u64;
    }
    let mut want_tokens: BTreeMap<RoleKind, u64> = BTreeMap::new();
    for (_, to, fields) in MESSAGES {
        *want_tokens.entry(*to).or_default() += fields.len() as u64;
    }

    for curve in [CurveChoice::Production, CurveChoice::Toy] {
        let out = run(&Scenario::honest(42, curve));
        ensure(out.completed_runs() == 1, || format!("{curve}: run did not complete"))?;
        for role in RoleKind::ALL {
            let got = out.ops[&role];
            let (ecm, hash) = want_ops[&role];
            ensure(got.ecm == ecm && got.hash == hash, || {
                format!("{curve} {role}: {} ECM / {} Hash, expected {ecm} / {hash}", got.ecm, got.hash)
            })?;
            let tokens = out.comm.role(role).tokens;
            ensure(tokens == want_tokens[&role], || {
                format!("{curve} {role}: {tokens} tokens, expected {}", want_tokens[&role])
            })?;
        }
        // The wire carries exactly the defined fields.
        for e in out.trace.iter().filter(|e| e.channel == Channel::Open) {
            let (_, _, fields) = MESSAGES.iter().find(|(t, _, _)| *t == e.tag).expect("auth message");
            ensure(field_count(&e.payload) == Some(fields.len()), || {
                format!("{} carries {:?} fields", e.tag.name(), field_count(&e.payload))
            })?;
        }
        let ecm = |r| out.ops[&r].ecm;
        let tok = |r| out.comm.role(r).tokens;
        ensure(ecm(RoleKind::Ev) <= ecm(RoleKind::Cag) && ecm(RoleKind::Cag) < ecm(RoleKind::Cs), || {
            "ECM ordering EV <= CAG < CS violated".into()
        })?;
        ensure(tok(RoleKind::Ev) <= tok(RoleKind::Cs) && tok(RoleKind::Cs) < tok(RoleKind::Cag), || {
            "token ordering EV <= CS < CAG violated".into()
        })?;
    }
    let show = |r: RoleKind| format!("{r} {}/{} tok {}", want_ops[&r].0, want_ops[&r].1, want_tokens[&r]);
    Ok(format!(
        "{}, {}, {} (ECM/Hash); orderings hold",
        show(RoleKind::Ev),
        show(RoleKind::Cs),
        show(RoleKind::Cag)
    ))
}

fn criterion_4() -> Check {
    let mut names: Vec<String> = fs::read_dir(scenarios_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("attack_") && n.ends_with(".toml"))
        .collect();
    names.sort();
    ensure(names.len() >= 12, || format!("only {} attack scenarios", names.len()))?;
    for required in [
        "replay_m1", "replay_m2", "replay_m3", "replay_m4", "replay_m5",
        "tamper_m2_auth_ev_cs", "tamper_m2_auth_ev_cag", "tamper_m3_auth_cs_cag", "tamper_m4_auth_cag",
        "tamper_m5_auth_cag", "spoof_m2", "spoof_m3", "splice_m5",
    ] {
        ensure(names.iter().any(|n| n.contains(required)), || format!("no {required} scenario"))?;
    }
    for name in &names {
        let sc = load(name);
        let out = run(&sc);
        let targets: Vec<_> =
            out.sessions.iter().filter(|s| sc.expect.session.is_none_or(|id| id == s.id)).collect();
        ensure(!targets.is_empty(), || format!("{name}: no attacked session"))?;
        for s in targets {
            ensure(matches!(s.outcome, SessionOutcome::Terminated(_)), || format!("{name}: session {} {}", s.id, s.outcome))?;
            ensure(!s.transaction_created, || format!("{name}: session {} produced a reward", s.id))?;
        }
        let failures = out.check(&sc.expect);
        ensure(failures.is_empty(), || format!("{name}: {failures:?}"))?;
    }
    Ok(format!("{}/{} attack scenarios defeated", names.len(), names.len()))
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

fn criterion_5() -> Check {
    let mut scanned = 0;
    for curve in [CurveChoice::Production, CurveChoice::Toy] {
        for seed in 0..10 {
            let out = run(&Scenario::honest(seed, curve));
            ensure(out.completed_runs() == 1, || "honest run incomplete".into())?;
            for (id, true_id) in &out.true_ids {
                // Not vacuous: registration does carry the identity, on the secure channel.
                ensure(
                    out.trace.iter().any(|e| e.channel == Channel::Secure && contains(&e.payload, true_id)),
                    || format!("{id}'s identity never appears on the secure channel"),
                )?;
                for payload in out.open_channel_payloads() {
                    ensure(!contains(payload, true_id), || format!("{id}'s TrueId on the open channel"))?;
                    scanned += 1;
                }
            }
        }
    }
    Ok(format!("0 occurrences in {scanned} identity/message scans"))
}

fn prefix_consistent(ledgers: &[&Ledger]) -> bool {
    ledgers.iter().all(|a| ledgers.iter().all(|b| a.blocks().iter().zip(b.blocks()).all(|(x, y)| x == y)))
}

fn criterion_6() -> Check {
    let seeds = 1..=8u64;
    let mut worst = 0;
    for file in ["consensus_byzantine_1_reject.toml", "consensus_byzantine_1_withhold.toml"] {
        for seed in seeds.clone() {
            let out = run(&with_seed(load(file), seed));
            let c = out.consensus.as_ref().expect("consensus");
            let bound = 2 * c.config.block_interval_ms;
            ensure(out.transactions_accepted > 0, || format!("{file} seed {seed}: nothing to commit"))?;
            ensure(c.uncommitted == 0, || format!("{file} seed {seed}: {} uncommitted", c.uncommitted))?;
            for ms in c.commit_latency_ms.values() {
                worst = worst.max(*ms);
                ensure(*ms <= bound, || format!("{file} seed {seed}: commit took {ms} ms > {bound} ms"))?;
            }
            let honest: Vec<&Ledger> = c.honest().map(|i| &c.ledgers[i]).collect();
            ensure(prefix_consistent(&honest), || format!("{file} seed {seed}: honest ledgers diverge"))?;
        }
    }
    for seed in seeds.clone() {
        let out = run(&with_seed(load("consensus_byzantine_2.toml"), seed));
        let c = out.consensus.as_ref().expect("consensus");
        ensure(c.ledgers.iter().all(Ledger::is_empty), || format!("byzantine-2 seed {seed}: a block committed"))?;
        let all: Vec<&Ledger> = c.ledgers.iter().collect();
        ensure(prefix_consistent(&all), || format!("byzantine-2 seed {seed}: ledgers diverge"))?;
    }
    Ok(format!("f=1: all txs committed within 2T (worst {worst} ms); f=2: no block, no divergence; seeds 1-8"))
}

fn criterion_7() -> Check {
    let mut detail = Vec::new();
    for (file, m) in [("consensus_honest.toml", 1u64), ("consensus_rotation_m3.toml", 3)] {
        let sc = load(file);
        ensure(sc.consensus.as_ref().map(|c| c.config.speaker_term) == Some(m), || format!("{file}: m != {m}"))?;
        let out = run(&sc);
        let c = out.consensus.as_ref().expect("consensus");
        let blocks = c.reference_ledger().blocks();
        let window = 4 * m as usize;
        ensure(blocks.len() >= window, || format!("{file}: only {} heights", blocks.len()))?;
        for (start, w) in blocks.windows(window).enumerate() {
            let mut counts = [0u64; 4];
            for b in w {
                counts[b.proposer as usize - 1] += 1;
            }
            ensure(counts.iter().all(|&n| n == m), || {
                format!("{file}: heights {}..{} speakers {counts:?}", start + 1, start + window)
            })?;
        }
        detail.push(format!("m={m} over {} heights", blocks.len()));
    }
    Ok(format!("every window of 4m heights has each CS speaking m times ({})", detail.join(", ")))
}

/// Byte ranges of each block record, walked from the length prefixes.
/// Heights count from 0.
fn block_spans(bytes: &[u8]) -> Vec<(u64, std::ops::Range<usize>)> {
    let mut spans = Vec::new();
    let mut at = 0;
    let mut height = 0;
    while at + 4 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        spans.push((height, at..at + 4 + len));
        at += 4 + len;
        height += 1;
    }
    spans
}

fn criterion_8() -> Check {
    let mut flips = 0;
    let mut files = 0;
    for file in [
        "consensus_honest.toml",
        "consensus_byzantine_1_reject.toml",
        "consensus_byzantine_1_withhold.toml",
        "consensus_partition.toml",
        "consensus_rotation_m3.toml",
    ] {
        let sc = load(file);
        let a = run(&sc);
        let b = run(&sc);
        let bytes = a.ledger_bytes();
        ensure(bytes == b.ledger_bytes(), || format!("{file}: ledger differs between identical runs"))?;
        ensure(a.trace_text() == b.trace_text(), || format!("{file}: trace differs between identical runs"))?;
        let blocks = a.consensus.as_ref().unwrap().reference_ledger().len();
        ensure(verify_ledger_bytes(&bytes) == LedgerVerdict::Ok { blocks }, || format!("{file}: rejected"))?;
        for (height, span) in block_spans(&bytes) {
            for i in span {
                let mut bad = bytes.clone();
                bad[i] ^= 0x01;
                match verify_ledger_bytes(&bad) {
                    LedgerVerdict::Divergence { height: h, .. } if h == height => flips += 1,
                    other => return Err(format!("{file}: flip at byte {i} (block {height}) gave {other:?}")),
                }
            }
        }
        files += 1;
    }
    ensure(verify_ledger_bytes(&[]) == LedgerVerdict::Ok { blocks: 0 }, || "empty ledger rejected".into())?;
    Ok(format!("{files} ledgers verified and reproducible; {flips}/{flips} single-bit flips localized"))
}

fn criterion_9() -> Check {
    let mut names: Vec<String> = fs::read_dir(scenarios_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".toml"))
        .collect();
    names.sort();
    let (mut ledgers, mut paths) = (0, BTreeMap::<&str, u64>::new());
    for name in &names {
        let out = run(&load(name));
        let Some(c) = &out.consensus else { continue };
        *paths.entry("abort").or_default() += c.aborts;
        *paths.entry("retry").or_default() += c.view_changes;
        for ledger in &c.ledgers {
            let committed: Decimal = ledger
                .blocks()
                .iter()
                .flat_map(|b| &b.txs)
                .map(|tx| tx.energy_kwh * tx.price_per_kwh)
                .sum();
            let balances: Decimal = ledger.balances().values().copied().sum();
            ensure(balances == committed, || format!("{name}: balances {balances} != rewards {committed}"))?;
            *paths.entry("commit").or_default() += ledger.len();
            ledgers += 1;
        }
    }
    ensure(paths.values().all(|&n| n > 0), || format!("paths not all exercised: {paths:?}"))?;
    Ok(format!("{ledgers} replica ledgers balance exactly ({paths:?})"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("honest-run completeness", criterion_1),
        ("toy-curve oracle equivalence", criterion_2),
        ("overhead reproduction", criterion_3),
        ("attack-defeat suite", criterion_4),
        ("anonymity at the wire", criterion_5),
        ("consensus safety and liveness", criterion_6),
        ("speaker rotation", criterion_7),
        ("ledger integrity", criterion_8),
        ("reward conservation", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {}/9 criteria pass", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

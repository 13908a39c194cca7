use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_bigint::BigUint;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::consensus::{
    Behavior, ConsensusConfig, ConsensusMsg, Effects, Ledger, LedgerError, Replica, Target, Transaction,
    TxBroadcast,
};
use crate::crypto::{CurveParams, Digest, FieldInt, OpCounters};
use crate::entities::cag::TxRejection;
use crate::entities::messages::{
    MessageTag, RegistrationRequest, RegistrationResponse, ServiceRequest, M1, M2, M3, M4, M5,
};
use crate::entities::{
    Aggregator, AuthError, CsPhase, EvPhase, FreshnessWindow, PseudoId, Role, SessionId, Station,
    Timestamp, TokenCheck, TrueId, Vehicle,
};
use crate::scenario::{CurveChoice, ExpectedOutcome, Expectations, Scenario, SessionPlan};

use super::adversary::{AdversaryContext, AdversaryError};
use super::{Channel, CommMeter, EntityId, EventQueue, NetworkEvent, TraceEntry, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RoleKind {
    Ev,
    Cs,
    Cag,
}

impl RoleKind {
    pub const ALL: [RoleKind; 3] = [RoleKind::Ev, RoleKind::Cs, RoleKind::Cag];
}

impl fmt::Display for RoleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoleKind::Ev => "EV",
            RoleKind::Cs => "CS",
            RoleKind::Cag => "CAG",
        })
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("adversary rule failed at tick {tick}: {source}")]
    Adversary { tick: u64, source: AdversaryError },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionOutcome {
    MutuallyAuthenticated,
    Terminated(String),
}

impl fmt::Display for SessionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionOutcome::MutuallyAuthenticated => f.write_str("mutually-authenticated"),
            SessionOutcome::Terminated(why) => write!(f, "terminated({why})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionReport {
    pub id: SessionId,
    pub ev: u32,
    pub cs: u32,
    pub outcome: SessionOutcome,
    pub ev_phase: String,
    pub cs_phase: String,
    pub transaction_created: bool,
    pub committed: bool,
}

#[derive(Debug, Clone)]
pub struct ConsensusReport {
    pub config: ConsensusConfig,
    /// Indexed by station number minus one.
    pub behaviors: Vec<Behavior>,
    pub ledgers: Vec<Ledger>,
    pub halted: Vec<Option<LedgerError>>,
    pub aborts: u64,
    /// Extra attempts spent on heights that eventually committed.
    pub view_changes: u64,
    /// Accepted-to-last-honest-commit time per transaction.
    pub commit_latency_ms: BTreeMap<Digest, u64>,
    /// Accepted transactions missing from some honest ledger at the end.
    pub uncommitted: u64,
}

impl ConsensusReport {
    pub fn honest(&self) -> impl Iterator<Item = usize> + '_ {
        self.behaviors.iter().enumerate().filter(|(_, b)| **b == Behavior::Honest).map(|(i, _)| i)
    }

    /// Ledger of the first honest station, or station 1 if none is honest.
    pub fn reference_ledger(&self) -> &Ledger {
        let i = self.honest().next().unwrap_or(0);
        &self.ledgers[i]
    }

    /// No two honest replicas hold different blocks at the same height.
    pub fn prefix_consistent(&self) -> bool {
        let honest: Vec<usize> = self.honest().collect();
        honest.iter().all(|&a| {
            honest.iter().all(|&b| {
                self.ledgers[a].blocks().iter().zip(self.ledgers[b].blocks()).all(|(x, y)| x == y)
            })
        })
    }

    /// Committed blocks per proposer, from the reference ledger.
    pub fn proposer_counts(&self) -> BTreeMap<u32, u64> {
        let mut counts = BTreeMap::new();
        for block in self.reference_ledger().blocks() {
            *counts.entry(block.proposer).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: String,
    pub seed: u64,
    pub curve: CurveChoice,
    pub clock: u64,
    pub trace: Vec<TraceEntry>,
    pub sessions: Vec<SessionReport>,
    /// Authentication-phase operations per role (CAG setup excluded).
    pub ops: BTreeMap<RoleKind, OpCounters>,
    pub cag_setup_ops: OpCounters,
    pub comm: CommMeter,
    pub transactions_created: u64,
    pub transactions_accepted: u64,
    pub transactions_rejected: u64,
    pub true_ids: Vec<(EntityId, Vec<u8>)>,
    pub consensus: Option<ConsensusReport>,
}

impl RunOutcome {
    pub fn completed_runs(&self) -> u64 {
        self.sessions.iter().filter(|s| s.outcome == SessionOutcome::MutuallyAuthenticated).count() as u64
    }

    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|e| e.to_line() + "\n").collect()
    }

    /// Ledger file contents for the reference replica; empty without consensus.
    pub fn ledger_bytes(&self) -> Vec<u8> {
        self.consensus.as_ref().map(|c| c.reference_ledger().to_bytes()).unwrap_or_default()
    }

    pub fn open_channel_payloads(&self) -> impl Iterator<Item = &[u8]> {
        self.trace.iter().filter(|e| e.channel == Channel::Open).map(|e| e.payload.as_slice())
    }

    /// Scenario expectations plus the invariants every run must keep.
    pub fn check(&self, expect: &Expectations) -> Vec<String> {
        let mut failures = Vec::new();
        let targeted = || self.sessions.iter().filter(|s| expect.session.is_none_or(|id| id == s.id));
        match expect.outcome {
            Some(ExpectedOutcome::Authenticated) => {
                for s in targeted() {
                    if s.outcome != SessionOutcome::MutuallyAuthenticated {
                        failures.push(format!("session {} ended {}", s.id, s.outcome));
                    }
                }
            }
            Some(ExpectedOutcome::Terminated) => {
                for s in targeted() {
                    if s.outcome == SessionOutcome::MutuallyAuthenticated {
                        failures.push(format!("session {} was mutually authenticated", s.id));
                    }
                    if s.transaction_created {
                        failures.push(format!("session {} produced a reward transaction", s.id));
                    }
                }
            }
            None => {}
        }
        if let Some(n) = expect.transactions_created {
            if self.transactions_created != n {
                failures.push(format!("{} transactions created, expected {n}", self.transactions_created));
            }
        }
        let ledger = self.consensus.as_ref().map(|c| c.reference_ledger());
        let committed = ledger.map_or(0, |l| l.blocks().iter().map(|b| b.txs.len() as u64).sum());
        let blocks = ledger.map_or(0, |l| l.len());
        if let Some(n) = expect.committed_txs {
            if committed != n {
                failures.push(format!("{committed} transactions committed, expected {n}"));
            }
        }
        if let Some(n) = expect.blocks {
            if blocks != n {
                failures.push(format!("{blocks} blocks committed, expected {n}"));
            }
        }
        if let Some(c) = &self.consensus {
            if let Some(k) = expect.max_commit_intervals {
                let bound = k * c.config.block_interval_ms;
                if c.uncommitted > 0 {
                    failures.push(format!("{} accepted transactions never committed", c.uncommitted));
                }
                if let Some((tx, ms)) = c.commit_latency_ms.iter().find(|(_, ms)| **ms > bound) {
                    failures.push(format!("transaction {} took {ms} ms to commit (bound {bound} ms)", tx.to_hex()));
                }
            }
            if !c.prefix_consistent() {
                failures.push("honest ledgers diverge".into());
            }
            for i in c.honest() {
                if let Some(err) = &c.halted[i] {
                    failures.push(format!("CS{} halted: {err}", i + 1));
                }
                let l = &c.ledgers[i];
                if l.total_balance() != l.total_committed_rewards() {
                    failures.push(format!("CS{} balances do not match committed rewards", i + 1));
                }
            }
        }
        failures
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunOutcome, SimError> {
    match scenario.curve {
        CurveChoice::Toy => World::<u64>::new(scenario, CurveParams::toy()).run(),
        CurveChoice::Production => World::<BigUint>::new(scenario, CurveParams::p256()).run(),
    }
}

enum Event {
    Deliver(NetworkEvent),
    StartSession(SessionId),
    SessionTimeout(SessionId),
    ConsensusTick,
    VoteDeadline { cs: u32, height: u64, view: u64 },
}

fn true_id_for(id: EntityId) -> TrueId {
    let (role, text) = match id {
        EntityId::Ev(i) => (Role::Ev, format!("VIN-EV-{i:06}")),
        EntityId::Cs(i) => (Role::Cs, format!("SITE-CS-{i:06}")),
        EntityId::Cag => unreachable!("the aggregator does not register"),
    };
    TrueId::new(role, text).expect("non-empty identity")
}

fn auth_code(err: &AuthError) -> String {
    match err {
        AuthError::Stale { .. } => "stale".into(),
        AuthError::TokenMismatch(check) => format!(
            "token-mismatch-{}",
            match check {
                TokenCheck::EvAtCs => "ev-at-cs",
                TokenCheck::CsAndEvAtCag => "cs-ev-at-cag",
                TokenCheck::CagAtCs => "cag-at-cs",
                TokenCheck::CagAtEv => "cag-at-ev",
            }
        ),
        AuthError::UnknownPseudoId(_) => "unknown-pseudo-id".into(),
        AuthError::NoSession(_) => "no-session".into(),
        AuthError::WrongPhase(_) => "wrong-phase".into(),
        AuthError::DuplicateSession(_) => "duplicate-session".into(),
        AuthError::ReplayedNonce => "replayed-nonce".into(),
        AuthError::NonceExhausted => "nonce-exhausted".into(),
        AuthError::NotRegistered => "not-registered".into(),
        AuthError::Codec(_) => "malformed".into(),
        AuthError::Curve(_) => "invalid-point".into(),
    }
}

fn ev_phase_text(phase: Option<&EvPhase>) -> String {
    match phase {
        None => "none".into(),
        Some(EvPhase::AwaitM5) => "await-m5".into(),
        Some(EvPhase::Authenticated { .. }) => "authenticated".into(),
        Some(EvPhase::Terminated(e)) => format!("terminated:{}", auth_code(e)),
    }
}

fn cs_phase_text(phase: Option<&CsPhase>) -> String {
    match phase {
        None => "none".into(),
        Some(CsPhase::AwaitM2) => "await-m2".into(),
        Some(CsPhase::AwaitM4) => "await-m4".into(),
        Some(CsPhase::AwaitService { .. }) => "authenticated".into(),
        Some(CsPhase::Served { .. }) => "served".into(),
        Some(CsPhase::Terminated(e)) => format!("terminated:{}", auth_code(e)),
    }
}

struct AdvCtx<'b> {
    pseudo_ids: &'b BTreeMap<EntityId, PseudoId>,
    captured: &'b HashMap<(SessionId, MessageTag), Vec<u8>>,
    rng: &'b mut ChaCha20Rng,
}

impl AdversaryContext for AdvCtx<'_> {
    fn pseudo_id_of(&self, id: EntityId) -> Option<PseudoId> {
        self.pseudo_ids.get(&id).copied()
    }

    fn captured(&self, session: SessionId, tag: MessageTag) -> Option<Vec<u8>> {
        self.captured.get(&(session, tag)).cloned()
    }

    fn random_digest(&mut self) -> Digest {
        let mut d = [0u8; 32];
        self.rng.fill_bytes(&mut d);
        Digest(d)
    }
}

struct World<'a, T: FieldInt> {
    sc: &'a Scenario,
    clock: u64,
    queue: EventQueue<Event>,
    rng: ChaCha20Rng,
    net_rng: ChaCha20Rng,
    cag: Aggregator<T>,
    css: Vec<Station<T>>,
    evs: Vec<Vehicle<T>>,
    replicas: Vec<Replica>,
    plans: BTreeMap<SessionId, SessionPlan>,
    captured: HashMap<(SessionId, MessageTag), Vec<u8>>,
    link_last: HashMap<(EntityId, EntityId), u64>,
    pseudo_ids: BTreeMap<EntityId, PseudoId>,
    trace: Vec<TraceEntry>,
    /// Drops recorded while handling a delivery, flushed after its entry.
    dropped: Vec<TraceEntry>,
    comm: CommMeter,
    created: BTreeMap<SessionId, Digest>,
    accepted: BTreeMap<Digest, u64>,
    rejected: u64,
    commit_seen: BTreeMap<Digest, BTreeMap<u32, u64>>,
    view_changes: u64,
}

impl<'a, T: FieldInt> World<'a, T> {
    fn new(sc: &'a Scenario, curve: CurveParams<T>) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(sc.seed);
        let mut net_rng = ChaCha20Rng::seed_from_u64(sc.seed);
        net_rng.set_stream(1);
        let cag = Aggregator::setup(curve, FreshnessWindow(sc.window_ms), &mut rng);
        let css = (1..=sc.num_css)
            .map(|i| Station::new(true_id_for(EntityId::Cs(i)), cag.params().clone(), cag.registry()))
            .collect();
        let evs = (1..=sc.num_evs)
            .map(|i| Vehicle::new(true_id_for(EntityId::Ev(i)), cag.params().clone()))
            .collect();
        let replicas = match &sc.consensus {
            None => Vec::new(),
            Some(c) => (1..=sc.num_css)
                .map(|i| Replica::new(i, c.config, c.eligibility_delay_ms, c.behavior(i)))
                .collect(),
        };
        Self {
            sc,
            clock: 0,
            queue: EventQueue::new(),
            rng,
            net_rng,
            cag,
            css,
            evs,
            replicas,
            plans: sc.sessions.iter().map(|p| (p.id, p.clone())).collect(),
            captured: HashMap::new(),
            link_last: HashMap::new(),
            pseudo_ids: BTreeMap::new(),
            trace: Vec::new(),
            dropped: Vec::new(),
            comm: CommMeter::default(),
            created: BTreeMap::new(),
            accepted: BTreeMap::new(),
            rejected: 0,
            commit_seen: BTreeMap::new(),
            view_changes: 0,
        }
    }

    fn run(mut self) -> Result<RunOutcome, SimError> {
        for id in (1..=self.sc.num_css).map(EntityId::Cs).chain((1..=self.sc.num_evs).map(EntityId::Ev)) {
            let req = RegistrationRequest { true_id: true_id_for(id), timestamp: Timestamp(0) };
            let bytes = req.encode().expect("identity fits a field");
            self.send(id, EntityId::Cag, MessageTag::RegistrationRequest, bytes, Channel::Secure, None)?;
        }
        self.trace.append(&mut self.dropped);
        for plan in &self.sc.sessions {
            self.queue.schedule(plan.start_ms, Event::StartSession(plan.id));
            self.queue.schedule(plan.start_ms + 2 * self.sc.window_ms, Event::SessionTimeout(plan.id));
        }
        if let Some(c) = &self.sc.consensus {
            self.queue.schedule(c.config.slot_ms(), Event::ConsensusTick);
        }
        while let Some(at) = self.queue.peek_time() {
            if at > self.sc.stop_ms {
                break;
            }
            let (at, event) = self.queue.pop().expect("peeked");
            self.clock = at;
            self.dispatch(event)?;
            self.trace.append(&mut self.dropped);
        }
        self.clock = self.clock.max(self.sc.stop_ms);
        Ok(self.finish())
    }

    fn now(&self) -> Timestamp {
        Timestamp(self.clock)
    }

    fn send(
        &mut self,
        src: EntityId,
        dst: EntityId,
        tag: MessageTag,
        payload: Vec<u8>,
        channel: Channel,
        session: Option<SessionId>,
    ) -> Result<(), SimError> {
        let now = self.clock;
        if let (Some(s), true) = (session, tag.is_auth()) {
            self.captured.entry((s, tag)).or_insert_with(|| payload.clone());
        }
        let dropped = |why: &str, payload: Vec<u8>| TraceEntry {
            tick: now,
            src,
            dst,
            tag,
            channel,
            session,
            injected: None,
            verdict: Verdict::Dropped(why.into()),
            payload,
        };
        let faulty = self.sc.network.faults.iter().any(|f| {
            f.src.is_none_or(|s| s == src) && f.dst.is_none_or(|d| d == dst) && f.tag.is_none_or(|t| t == tag)
        });
        if faulty {
            self.dropped.push(dropped("link-fault", payload));
            return Ok(());
        }
        let net = &self.sc.network;
        let jitter = if net.jitter_ms > 0 { self.net_rng.gen_range(0..=net.jitter_ms) } else { 0 };
        let last = self.link_last.entry((src, dst)).or_insert(0);
        let deliver_at = (now + net.delay_ms + jitter).max(*last);
        *last = deliver_at;
        let event = NetworkEvent { sent_at: now, deliver_at, src, dst, tag, payload, channel, session, injected: None };
        let events = if channel == Channel::Open && !self.sc.adversary.is_empty() {
            let original = event.payload.clone();
            let mut ctx = AdvCtx { pseudo_ids: &self.pseudo_ids, captured: &self.captured, rng: &mut self.net_rng };
            let out = self
                .sc
                .adversary
                .apply(event, &mut ctx)
                .map_err(|source| SimError::Adversary { tick: now, source })?;
            if out.iter().all(|e| e.injected == Some("replay")) {
                self.dropped.push(dropped("adversary", original));
            }
            out
        } else {
            vec![event]
        };
        for e in events {
            self.queue.schedule(e.deliver_at, Event::Deliver(e));
        }
        Ok(())
    }

    fn dispatch(&mut self, event: Event) -> Result<(), SimError> {
        match event {
            Event::Deliver(ev) => {
                self.comm.record(ev.dst, ev.tag, ev.payload.len());
                let verdict = self.deliver(&ev)?;
                self.trace.push(TraceEntry {
                    tick: self.clock,
                    src: ev.src,
                    dst: ev.dst,
                    tag: ev.tag,
                    channel: ev.channel,
                    session: ev.session,
                    injected: ev.injected,
                    verdict,
                    payload: ev.payload,
                });
            }
            Event::StartSession(sid) => {
                let plan = self.plans[&sid].clone();
                let now = self.now();
                let Some(cs) = self.css.get_mut(plan.cs as usize - 1) else { return Ok(()) };
                if let Ok(m1) = cs.auth_init(sid, &mut self.rng, now) {
                    let bytes = m1.encode(&self.cag.params().curve);
                    self.send(EntityId::Cs(plan.cs), EntityId::Ev(plan.ev), MessageTag::M1, bytes, Channel::Open, Some(sid))?;
                }
            }
            Event::SessionTimeout(sid) => {
                // Anything still pending has outlived every timestamp it could accept.
                let plan = &self.plans[&sid];
                let stale = || AuthError::Stale { ts: Timestamp(plan.start_ms), now: Timestamp(self.clock) };
                let ev = &mut self.evs[plan.ev as usize - 1];
                if matches!(ev.phase(sid), Some(EvPhase::AwaitM5)) {
                    ev.abort(sid, stale());
                }
                let cs = &mut self.css[plan.cs as usize - 1];
                if matches!(cs.phase(sid), Some(CsPhase::AwaitM2 | CsPhase::AwaitM4)) {
                    cs.abort(sid, stale());
                }
            }
            Event::ConsensusTick => {
                let now = self.now();
                for i in 0..self.replicas.len() {
                    let fx = self.replicas[i].on_tick(now);
                    self.apply_effects(i as u32 + 1, fx)?;
                }
                let slot = self.sc.consensus.as_ref().map_or(1, |c| c.config.slot_ms());
                self.queue.schedule(self.clock + slot, Event::ConsensusTick);
            }
            Event::VoteDeadline { cs, height, view } => {
                let fx = self.replicas[cs as usize - 1].on_vote_deadline(height, view);
                self.apply_effects(cs, fx)?;
            }
        }
        Ok(())
    }

    fn apply_effects(&mut self, from: u32, fx: Effects) -> Result<(), SimError> {
        for (target, msg) in fx.messages {
            if let ConsensusMsg::Commit { view, .. } = &msg {
                self.view_changes += view;
            }
            let tag = msg.tag();
            let bytes = msg.encode().expect("blocks stay under the field size limit");
            let targets: Vec<u32> = match target {
                Target::All => (1..=self.sc.num_css).filter(|j| *j != from).collect(),
                Target::One(j) => vec![j],
            };
            for j in targets {
                self.send(EntityId::Cs(from), EntityId::Cs(j), tag, bytes.clone(), Channel::Secure, None)?;
            }
        }
        for (at, height, view) in fx.deadlines {
            self.queue.schedule(at.0, Event::VoteDeadline { cs: from, height, view });
        }
        for receipt in fx.receipts {
            self.commit_seen.entry(receipt.tx_hash).or_default().insert(from, self.clock);
        }
        Ok(())
    }

    fn deliver(&mut self, ev: &NetworkEvent) -> Result<Verdict, SimError> {
        let now = self.now();
        let curve = self.cag.params().curve.clone();
        let rejected = |e: &AuthError| Verdict::Rejected(auth_code(e));
        let plan = ev.session.and_then(|s| self.plans.get(&s).cloned());
        match (ev.dst, ev.tag) {
            (EntityId::Cag, MessageTag::RegistrationRequest) => {
                let Ok(req) = RegistrationRequest::decode(&ev.payload) else {
                    return Ok(Verdict::Rejected("malformed".into()));
                };
                match self.cag.register(&req, now, &mut self.rng) {
                    Ok(resp) => {
                        let bytes = resp.encode(&curve);
                        self.send(EntityId::Cag, ev.src, MessageTag::RegistrationResponse, bytes, Channel::Secure, None)?;
                        Ok(Verdict::Accepted)
                    }
                    Err(e) => Ok(Verdict::Rejected(e.to_string().replace(' ', "-"))),
                }
            }
            (dst @ (EntityId::Cs(_) | EntityId::Ev(_)), MessageTag::RegistrationResponse) => {
                let Ok(resp) = RegistrationResponse::decode(&ev.payload, &curve) else {
                    return Ok(Verdict::Rejected("malformed".into()));
                };
                self.pseudo_ids.insert(dst, resp.pseudo_id);
                match dst {
                    EntityId::Cs(i) => self.css[i as usize - 1].complete_registration(resp),
                    EntityId::Ev(i) => self.evs[i as usize - 1].complete_registration(resp),
                    EntityId::Cag => unreachable!(),
                }
                Ok(Verdict::Accepted)
            }
            (EntityId::Ev(i), MessageTag::M1) => {
                let (Some(sid), Some(plan)) = (ev.session, plan) else { return Ok(Verdict::Rejected("no-session".into())) };
                let ev_ent = &mut self.evs[i as usize - 1];
                let result = M1::decode(&ev.payload, &curve)
                    .map_err(AuthError::from)
                    .and_then(|m1| ev_ent.handle_m1(sid, &m1, now));
                match result {
                    Ok(m2) => {
                        self.send(ev.dst, EntityId::Cs(plan.cs), MessageTag::M2, m2.encode(), Channel::Open, Some(sid))?;
                        Ok(Verdict::Accepted)
                    }
                    Err(e @ AuthError::Codec(_)) => Ok(rejected(&ev_ent.abort(sid, e))),
                    Err(e) => Ok(rejected(&e)),
                }
            }
            (EntityId::Cs(i), MessageTag::M2) => {
                let (Some(sid), Some(plan)) = (ev.session, plan) else { return Ok(Verdict::Rejected("no-session".into())) };
                let cs = &mut self.css[i as usize - 1];
                let result = M2::decode(&ev.payload)
                    .map_err(AuthError::from)
                    .and_then(|m2| cs.handle_m2(sid, &m2, &mut self.rng, now));
                match result {
                    Ok(m3) => {
                        let bytes = m3.encode(&curve);
                        self.send(ev.dst, EntityId::Cag, MessageTag::M3, bytes, Channel::Open, Some(sid))?;
                        let _ = plan;
                        Ok(Verdict::Accepted)
                    }
                    Err(e @ AuthError::Codec(_)) => Ok(rejected(&cs.abort(sid, e))),
                    Err(e) => Ok(rejected(&e)),
                }
            }
            (EntityId::Cag, MessageTag::M3) => {
                let (Some(sid), Some(plan)) = (ev.session, plan) else { return Ok(Verdict::Rejected("no-session".into())) };
                let result = M3::decode(&ev.payload, &curve)
                    .map_err(AuthError::from)
                    .and_then(|m3| self.cag.handle_m3(&m3, now));
                match result {
                    Ok(m4) => {
                        self.send(EntityId::Cag, EntityId::Cs(plan.cs), MessageTag::M4, m4.encode(), Channel::Open, Some(sid))?;
                        Ok(Verdict::Accepted)
                    }
                    Err(e) => Ok(rejected(&e)),
                }
            }
            (EntityId::Cs(i), MessageTag::M4) => {
                let (Some(sid), Some(plan)) = (ev.session, plan) else { return Ok(Verdict::Rejected("no-session".into())) };
                let cs = &mut self.css[i as usize - 1];
                let result = M4::decode(&ev.payload).map_err(AuthError::from).and_then(|m4| cs.handle_m4(sid, &m4, now));
                match result {
                    Ok(m5) => {
                        let bytes = m5.encode(&curve);
                        self.send(ev.dst, EntityId::Ev(plan.ev), MessageTag::M5, bytes, Channel::Open, Some(sid))?;
                        Ok(Verdict::Accepted)
                    }
                    Err(e @ AuthError::Codec(_)) => Ok(rejected(&cs.abort(sid, e))),
                    Err(e) => Ok(rejected(&e)),
                }
            }
            (EntityId::Ev(i), MessageTag::M5) => {
                let (Some(sid), Some(plan)) = (ev.session, plan) else { return Ok(Verdict::Rejected("no-session".into())) };
                let ev_ent = &mut self.evs[i as usize - 1];
                let result = M5::decode(&ev.payload, &curve)
                    .map_err(AuthError::from)
                    .and_then(|m5| ev_ent.handle_m5(sid, &m5, now));
                match result {
                    Ok(session_ref) => {
                        let req = ServiceRequest { session_ref, energy_kwh: plan.energy_kwh };
                        self.send(ev.dst, EntityId::Cs(plan.cs), MessageTag::ServiceRequest, req.encode(), Channel::Secure, Some(sid))?;
                        Ok(Verdict::Accepted)
                    }
                    Err(e @ AuthError::Codec(_)) => Ok(rejected(&ev_ent.abort(sid, e))),
                    Err(e) => Ok(rejected(&e)),
                }
            }
            (EntityId::Cs(i), MessageTag::ServiceRequest) => {
                let Some(sid) = ev.session else { return Ok(Verdict::Rejected("no-session".into())) };
                let Ok(req) = ServiceRequest::decode(&ev.payload) else {
                    return Ok(Verdict::Rejected("malformed".into()));
                };
                match self.css[i as usize - 1].handle_service(sid, &req, self.sc.price_per_kwh, now) {
                    Ok(tx) => {
                        self.created.insert(sid, tx.hash());
                        let bytes = tx.encode(MessageTag::TxSubmit);
                        self.send(ev.dst, EntityId::Cag, MessageTag::TxSubmit, bytes, Channel::Secure, Some(sid))?;
                        Ok(Verdict::Accepted)
                    }
                    Err(e) => Ok(Verdict::Rejected(e.to_string().replace(' ', "-"))),
                }
            }
            (EntityId::Cag, MessageTag::TxSubmit) => {
                let Ok(tx) = Transaction::decode(&ev.payload, MessageTag::TxSubmit) else {
                    return Ok(Verdict::Rejected("malformed".into()));
                };
                match self.cag.accept_transaction(&tx) {
                    Ok(()) => {
                        self.accepted.insert(tx.hash(), self.clock);
                        let bytes = TxBroadcast { tx, broadcast_at: now }.encode();
                        for j in 1..=self.sc.num_css {
                            self.send(EntityId::Cag, EntityId::Cs(j), MessageTag::TxBroadcast, bytes.clone(), Channel::Secure, None)?;
                        }
                        Ok(Verdict::Accepted)
                    }
                    Err(e) => {
                        self.rejected += 1;
                        Ok(Verdict::Rejected(match e {
                            TxRejection::UnknownSession => "unknown-session".into(),
                            TxRejection::AlreadyRewarded => "already-rewarded".into(),
                            TxRejection::PartyMismatch => "party-mismatch".into(),
                            TxRejection::Invalid(_) => "invalid".into(),
                        }))
                    }
                }
            }
            (EntityId::Cs(i), MessageTag::TxBroadcast) => {
                let Some(replica) = self.replicas.get_mut(i as usize - 1) else { return Ok(Verdict::Delivered) };
                match TxBroadcast::decode(&ev.payload) {
                    Ok(relay) if replica.add_transaction(&relay) => Ok(Verdict::Accepted),
                    Ok(_) => Ok(Verdict::Rejected("duplicate".into())),
                    Err(_) => Ok(Verdict::Rejected("malformed".into())),
                }
            }
            (EntityId::Cs(i), MessageTag::Proposal | MessageTag::VoteRequest | MessageTag::Vote | MessageTag::Commit) => {
                let EntityId::Cs(from) = ev.src else { return Ok(Verdict::Rejected("not-a-station".into())) };
                let Ok(msg) = ConsensusMsg::decode(&ev.payload) else {
                    return Ok(Verdict::Rejected("malformed".into()));
                };
                let Some(replica) = self.replicas.get_mut(i as usize - 1) else { return Ok(Verdict::Delivered) };
                let fx = match msg {
                    ConsensusMsg::Proposal { view, block } => {
                        replica.on_proposal(from, view, block);
                        Effects::default()
                    }
                    ConsensusMsg::VoteRequest { height, view, block_hash, .. } => {
                        replica.on_vote_request(from, height, view, block_hash, now)
                    }
                    ConsensusMsg::Vote(vote) => replica.on_vote(&vote),
                    ConsensusMsg::Commit { view, block } => replica.on_commit(from, view, block),
                };
                self.apply_effects(i, fx)?;
                Ok(Verdict::Delivered)
            }
            _ => Ok(Verdict::Rejected("unexpected".into())),
        }
    }

    fn finish(self) -> RunOutcome {
        let mut ops = BTreeMap::new();
        ops.insert(RoleKind::Ev, self.evs.iter().map(Vehicle::meter).fold(OpCounters::new(), |mut a, b| { a += b; a }));
        ops.insert(RoleKind::Cs, self.css.iter().map(Station::meter).fold(OpCounters::new(), |mut a, b| { a += b; a }));
        ops.insert(RoleKind::Cag, self.cag.meter());

        let consensus = self.sc.consensus.as_ref().map(|c| {
            let behaviors: Vec<Behavior> = self.replicas.iter().map(Replica::behavior).collect();
            let honest: Vec<u32> =
                (1..=self.sc.num_css).filter(|i| behaviors[*i as usize - 1] == Behavior::Honest).collect();
            let mut commit_latency_ms = BTreeMap::new();
            let mut uncommitted = 0;
            for (tx, accepted_at) in &self.accepted {
                let seen = self.commit_seen.get(tx);
                let times: Option<Vec<u64>> =
                    honest.iter().map(|i| seen.and_then(|s| s.get(i)).copied()).collect();
                match times {
                    Some(times) if !times.is_empty() => {
                        commit_latency_ms.insert(*tx, times.into_iter().max().unwrap_or(0) - accepted_at);
                    }
                    _ => uncommitted += 1,
                }
            }
            ConsensusReport {
                config: c.config,
                behaviors,
                ledgers: self.replicas.iter().map(|r| r.ledger().clone()).collect(),
                halted: self.replicas.iter().map(|r| r.halted().cloned()).collect(),
                aborts: self.replicas.iter().map(|r| r.stats().aborts).sum(),
                view_changes: self.view_changes,
                commit_latency_ms,
                uncommitted,
            }
        });

        let committed_hashes: Vec<Digest> = consensus
            .as_ref()
            .map(|c| c.reference_ledger().blocks().iter().flat_map(|b| b.txs.iter().map(Transaction::hash)).collect())
            .unwrap_or_default();
        let sessions = self
            .plans
            .values()
            .map(|plan| {
                let ev_phase = self.evs[plan.ev as usize - 1].phase(plan.id);
                let cs_phase = self.css[plan.cs as usize - 1].phase(plan.id);
                let cs_ref = match cs_phase {
                    Some(CsPhase::AwaitService { session_ref } | CsPhase::Served { session_ref }) => Some(*session_ref),
                    _ => None,
                };
                let outcome = match (ev_phase, cs_ref) {
                    (Some(EvPhase::Authenticated { session_ref }), Some(r)) if *session_ref == r => {
                        SessionOutcome::MutuallyAuthenticated
                    }
                    (ev_phase, _) => match cs_phase {
                        Some(CsPhase::Terminated(e)) => SessionOutcome::Terminated(format!("cs:{}", auth_code(e))),
                        _ if matches!(ev_phase, Some(EvPhase::Terminated(_))) => {
                            let Some(EvPhase::Terminated(e)) = ev_phase else { unreachable!() };
                            SessionOutcome::Terminated(format!("ev:{}", auth_code(e)))
                        }
                        Some(CsPhase::AwaitM2 | CsPhase::AwaitM4) | None => {
                            SessionOutcome::Terminated("incomplete".into())
                        }
                        _ => SessionOutcome::Terminated("reference-mismatch".into()),
                    },
                };
                let tx = self.created.get(&plan.id);
                SessionReport {
                    id: plan.id,
                    ev: plan.ev,
                    cs: plan.cs,
                    outcome,
                    ev_phase: ev_phase_text(ev_phase),
                    cs_phase: cs_phase_text(cs_phase),
                    transaction_created: tx.is_some(),
                    committed: tx.is_some_and(|h| committed_hashes.contains(h)),
                }
            })
            .collect();

        let true_ids = (1..=self.sc.num_css)
            .map(EntityId::Cs)
            .chain((1..=self.sc.num_evs).map(EntityId::Ev))
            .map(|id| (id, true_id_for(id).as_bytes().to_vec()))
            .collect();

        RunOutcome {
            scenario: self.sc.name.clone(),
            seed: self.sc.seed,
            curve: self.sc.curve,
            clock: self.clock,
            trace: self.trace,
            sessions,
            ops,
            cag_setup_ops: self.cag.setup_meter(),
            comm: self.comm,
            transactions_created: self.created.len() as u64,
            transactions_accepted: self.accepted.len() as u64,
            transactions_rejected: self.rejected,
            true_ids,
            consensus,
        }
    }
}

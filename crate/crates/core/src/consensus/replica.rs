//! Per-station consensus state: mempool, speaker duties and congressman votes.

use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::tlv::{expect_kind, read_flag, read_u64};
use crate::crypto::{sha256, CodecError, Digest, Field, FieldKind};
use crate::entities::messages::{frame, read_digest, unframe, MessageTag};
use crate::entities::{PseudoId, Timestamp};

use super::config::{speaker_for, tally_votes, ConsensusConfig, TallyOutcome};
use super::ledger::{Block, Ledger, LedgerError, Receipt};
use super::tx::{Transaction, TxBroadcast};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    Honest,
    /// Never proposes or votes.
    Withhold,
    /// Votes reject on everything; as speaker proposes a fabricated transaction.
    RejectAll,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub voter: u32,
    pub height: u64,
    pub view: u64,
    pub block_hash: Digest,
    pub approve: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsensusMsg {
    Proposal { view: u64, block: Block },
    VoteRequest { height: u64, view: u64, block_hash: Digest, speaker: u32 },
    Vote(Vote),
    Commit { view: u64, block: Block },
}

fn read_u32(fields: &[Field], index: usize) -> Result<u32, CodecError> {
    u32::try_from(read_u64(fields, index, FieldKind::Integer)?)
        .map_err(|_| CodecError::FieldValue { index, reason: "index out of range".into() })
}

fn block_after_view(fields: &[Field]) -> Result<(u64, Block), CodecError> {
    let view = read_u64(fields, 0, FieldKind::Integer)?;
    let block = Block::decode(expect_kind(fields, 1, FieldKind::Nested)?.payload())?;
    if fields.len() != 2 {
        return Err(CodecError::FieldCount { expected: 2, found: fields.len() });
    }
    Ok((view, block))
}

impl ConsensusMsg {
    pub fn tag(&self) -> MessageTag {
        match self {
            ConsensusMsg::Proposal { .. } => MessageTag::Proposal,
            ConsensusMsg::VoteRequest { .. } => MessageTag::VoteRequest,
            ConsensusMsg::Vote(_) => MessageTag::Vote,
            ConsensusMsg::Commit { .. } => MessageTag::Commit,
        }
    }

    /// Blocks travel as one nested field, which caps a block at 64 KiB.
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let fields = match self {
            ConsensusMsg::Proposal { view, block } | ConsensusMsg::Commit { view, block } => {
                vec![Field::integer(*view), Field::nested(&block.fields())?]
            }
            ConsensusMsg::VoteRequest { height, view, block_hash, speaker } => vec![
                Field::integer(*height),
                Field::integer(*view),
                block_hash.to_field(),
                Field::integer(u64::from(*speaker)),
            ],
            ConsensusMsg::Vote(v) => vec![
                Field::integer(u64::from(v.voter)),
                Field::integer(v.height),
                Field::integer(v.view),
                v.block_hash.to_field(),
                Field::flag(v.approve),
            ],
        };
        Ok(frame(self.tag(), &fields))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let (tag, fields) = unframe(bytes)?;
        let count = |n: usize| {
            if fields.len() == n {
                Ok(())
            } else {
                Err(CodecError::FieldCount { expected: n, found: fields.len() })
            }
        };
        match tag {
            MessageTag::Proposal => {
                let (view, block) = block_after_view(&fields)?;
                Ok(ConsensusMsg::Proposal { view, block })
            }
            MessageTag::Commit => {
                let (view, block) = block_after_view(&fields)?;
                Ok(ConsensusMsg::Commit { view, block })
            }
            MessageTag::VoteRequest => {
                count(4)?;
                Ok(ConsensusMsg::VoteRequest {
                    height: read_u64(&fields, 0, FieldKind::Integer)?,
                    view: read_u64(&fields, 1, FieldKind::Integer)?,
                    block_hash: read_digest(&fields, 2)?,
                    speaker: read_u32(&fields, 3)?,
                })
            }
            MessageTag::Vote => {
                count(5)?;
                Ok(ConsensusMsg::Vote(Vote {
                    voter: read_u32(&fields, 0)?,
                    height: read_u64(&fields, 1, FieldKind::Integer)?,
                    view: read_u64(&fields, 2, FieldKind::Integer)?,
                    block_hash: read_digest(&fields, 3)?,
                    approve: read_flag(&fields, 4)?,
                }))
            }
            other => Err(CodecError::WrongTag { expected: MessageTag::Proposal as u8, found: other as u8 }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    All,
    One(u32),
}

/// What a replica wants the network to do after handling an event.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Effects {
    pub messages: Vec<(Target, ConsensusMsg)>,
    /// `(at, height, view)` vote deadlines for the speaker.
    pub deadlines: Vec<(Timestamp, u64, u64)>,
    pub receipts: Vec<Receipt>,
    pub committed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplicaStats {
    pub proposals: u64,
    pub commits_led: u64,
    pub aborts: u64,
    pub approvals_cast: u64,
    pub rejections_cast: u64,
}

#[derive(Debug, Clone)]
struct MempoolEntry {
    tx: Transaction,
    broadcast_at: Timestamp,
}

#[derive(Debug, Clone)]
struct Pending {
    view: u64,
    block: Block,
    approvals: BTreeSet<u32>,
    rejections: BTreeSet<u32>,
}

#[derive(Debug, Clone)]
pub struct Replica {
    index: u32,
    cfg: ConsensusConfig,
    eligibility_delay_ms: u64,
    behavior: Behavior,
    ledger: Ledger,
    mempool: BTreeMap<Digest, MempoolEntry>,
    height_start: Option<u64>,
    last_block_ts: Option<u64>,
    proposals: BTreeMap<u64, Block>,
    pending: Option<Pending>,
    halted: Option<LedgerError>,
    stats: ReplicaStats,
}

impl Replica {
    /// `index` is 1-based; `eligibility_delay_ms` is the assumed maximum
    /// broadcast delay before a relayed transaction may enter a block.
    pub fn new(index: u32, cfg: ConsensusConfig, eligibility_delay_ms: u64, behavior: Behavior) -> Self {
        Self {
            index,
            cfg,
            eligibility_delay_ms,
            behavior,
            ledger: Ledger::new(),
            mempool: BTreeMap::new(),
            height_start: None,
            last_block_ts: None,
            proposals: BTreeMap::new(),
            pending: None,
            halted: None,
            stats: ReplicaStats::default(),
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn behavior(&self) -> Behavior {
        self.behavior
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn in_mempool(&self, tx_hash: &Digest) -> bool {
        self.mempool.contains_key(tx_hash)
    }

    pub fn halted(&self) -> Option<&LedgerError> {
        self.halted.as_ref()
    }

    pub fn stats(&self) -> ReplicaStats {
        self.stats
    }

    /// Adds a relayed transaction; duplicates and already-committed ones are dropped.
    pub fn add_transaction(&mut self, relay: &TxBroadcast) -> bool {
        let hash = relay.tx.hash();
        if self.mempool.contains_key(&hash) || self.ledger.contains_tx(&hash) {
            return false;
        }
        self.mempool.insert(hash, MempoolEntry { tx: relay.tx.clone(), broadcast_at: relay.broadcast_at });
        true
    }

    fn eligible(&self, now: u64) -> Vec<Transaction> {
        // BTreeMap order gives the deterministic by-hash ordering.
        self.mempool
            .values()
            .filter(|e| e.broadcast_at.0 + self.eligibility_delay_ms <= now)
            .map(|e| e.tx.clone())
            .collect()
    }

    fn view_at(&self, now: u64) -> Option<u64> {
        self.height_start.filter(|hs| now >= *hs).map(|hs| (now - hs) / self.cfg.slot_ms())
    }

    /// Slot boundary. The world calls this at every multiple of `t / 2`.
    pub fn on_tick(&mut self, now: Timestamp) -> Effects {
        let now = now.0;
        if self.halted.is_some() {
            return Effects::default();
        }
        if self.height_start.is_none() {
            let block_tick = now.is_multiple_of(self.cfg.block_interval_ms);
            let after_last = self.last_block_ts.is_none_or(|ts| now > ts);
            if !block_tick || !after_last || self.eligible(now).is_empty() {
                return Effects::default();
            }
            self.height_start = Some(now);
        }
        let Some(view) = self.view_at(now) else { return Effects::default() };
        let height = self.ledger.len();
        if self.behavior == Behavior::Withhold
            || speaker_for(height, view, &self.cfg) != self.index
            || self.pending.is_some()
        {
            return Effects::default();
        }
        let mut txs = self.eligible(now);
        if self.behavior == Behavior::RejectAll {
            txs.push(fabricated_tx(height, now));
        }
        if txs.is_empty() {
            return Effects::default();
        }
        let block = Block::new(height, self.ledger.head_hash(), txs, self.index, Timestamp(now));
        self.stats.proposals += 1;
        let block_hash = block.block_hash;
        self.pending = Some(Pending {
            view,
            block: block.clone(),
            approvals: BTreeSet::new(),
            rejections: BTreeSet::new(),
        });
        let mut fx = Effects {
            messages: vec![
                (Target::All, ConsensusMsg::Proposal { view, block }),
                (Target::All, ConsensusMsg::VoteRequest { height, view, block_hash, speaker: self.index }),
            ],
            deadlines: vec![(Timestamp(now + self.cfg.vote_timeout_ms()), height, view)],
            ..Effects::default()
        };
        self.check_early(&mut fx);
        fx
    }

    pub fn on_proposal(&mut self, from: u32, view: u64, block: Block) {
        if block.height == self.ledger.len() && block.proposer == from {
            self.proposals.insert(view, block);
        }
    }

    /// Congressman check: right speaker for this height and view, block
    /// extends our head, and every transaction is one we hold.
    pub fn cast_vote(&self, from: u32, height: u64, view: u64, block_hash: &Digest, now: Timestamp) -> Vote {
        let reject = Vote { voter: self.index, height, view, block_hash: *block_hash, approve: false };
        if self.behavior != Behavior::Honest || self.halted.is_some() {
            return reject;
        }
        let (Some(hs), Some(local_view)) = (self.height_start, self.view_at(now.0)) else {
            return reject;
        };
        let Some(block) = self.proposals.get(&view) else { return reject };
        let expected = speaker_for(height, local_view, &self.cfg);
        let approve = view == local_view
            && from == expected
            && block.proposer == expected
            && &block.block_hash == block_hash
            && block.hash_is_valid()
            && block.height == self.ledger.len()
            && block.height == height
            && block.prev_hash == self.ledger.head_hash()
            && block.timestamp.0 == hs + view * self.cfg.slot_ms()
            && !block.txs.is_empty()
            && block.txs.iter().all(|tx| self.mempool.contains_key(&tx.hash()));
        Vote { approve, ..reject }
    }

    pub fn on_vote_request(
        &mut self,
        from: u32,
        height: u64,
        view: u64,
        block_hash: Digest,
        now: Timestamp,
    ) -> Effects {
        if self.behavior == Behavior::Withhold || from == self.index {
            return Effects::default();
        }
        let vote = self.cast_vote(from, height, view, &block_hash, now);
        if vote.approve {
            self.stats.approvals_cast += 1;
        } else {
            self.stats.rejections_cast += 1;
        }
        Effects { messages: vec![(Target::One(from), ConsensusMsg::Vote(vote))], ..Effects::default() }
    }

    pub fn on_vote(&mut self, vote: &Vote) -> Effects {
        let mut fx = Effects::default();
        let Some(p) = self.pending.as_mut() else { return fx };
        if vote.voter == self.index
            || vote.voter == 0
            || vote.voter > self.cfg.committee_size
            || vote.height != p.block.height
            || vote.view != p.view
            || vote.block_hash != p.block.block_hash
            || p.approvals.contains(&vote.voter)
            || p.rejections.contains(&vote.voter)
        {
            return fx;
        }
        if vote.approve {
            p.approvals.insert(vote.voter);
        } else {
            p.rejections.insert(vote.voter);
        }
        self.check_early(&mut fx);
        fx
    }

    /// Commits as soon as quorum is reached; aborts as soon as it cannot be.
    fn check_early(&mut self, fx: &mut Effects) {
        let Some(p) = self.pending.as_ref() else { return };
        let quorum = self.cfg.quorum();
        let approvals = p.approvals.len() as u32;
        let undecided = self.cfg.committee_size - 1 - approvals - p.rejections.len() as u32;
        if approvals + 1 >= quorum {
            self.finish(TallyOutcome::Commit, fx);
        } else if approvals + 1 + undecided < quorum {
            self.finish(TallyOutcome::Abort, fx);
        }
    }

    pub fn on_vote_deadline(&mut self, height: u64, view: u64) -> Effects {
        let mut fx = Effects::default();
        let Some(p) = self.pending.as_ref() else { return fx };
        if p.block.height != height || p.view != view {
            return fx;
        }
        let outcome = tally_votes(p.approvals.len() as u32, &self.cfg);
        self.finish(outcome, &mut fx);
        fx
    }

    fn finish(&mut self, outcome: TallyOutcome, fx: &mut Effects) {
        let Some(p) = self.pending.take() else { return };
        match outcome {
            TallyOutcome::Abort => self.stats.aborts += 1,
            TallyOutcome::Commit => {
                self.stats.commits_led += 1;
                fx.messages.push((Target::All, ConsensusMsg::Commit { view: p.view, block: p.block.clone() }));
                self.apply(p.block, fx);
            }
        }
    }

    pub fn on_commit(&mut self, from: u32, view: u64, block: Block) -> Effects {
        let mut fx = Effects::default();
        if self.halted.is_some()
            || block.proposer != from
            || speaker_for(block.height, view, &self.cfg) != from
            || block.height < self.ledger.len()
        {
            return fx;
        }
        self.apply(block, &mut fx);
        fx
    }

    fn apply(&mut self, block: Block, fx: &mut Effects) {
        let height = block.height;
        let ts = block.timestamp.0;
        let hashes: Vec<Digest> = block.txs.iter().map(Transaction::hash).collect();
        match self.ledger.append_block(block) {
            Ok(receipts) => {
                for h in &hashes {
                    self.mempool.remove(h);
                }
                fx.receipts.extend(receipts);
                fx.committed = Some(height);
                self.height_start = None;
                self.last_block_ts = Some(ts);
                self.proposals.clear();
                self.pending = None;
            }
            Err(err) => self.halted = Some(err),
        }
    }
}

/// Reward for a session nobody authenticated; honest congressmen never hold it.
fn fabricated_tx(height: u64, now: u64) -> Transaction {
    let tag = [height.to_be_bytes(), now.to_be_bytes()].concat();
    Transaction::new(
        PseudoId(sha256(&[b"forged-ev".as_slice(), &tag].concat())),
        PseudoId(sha256(b"forged-cs")),
        rust_decimal::Decimal::from(1_000),
        rust_decimal::Decimal::ONE,
        sha256(&tag),
        Timestamp(now),
    )
    .expect("constant amounts are valid")
}

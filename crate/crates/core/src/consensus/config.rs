/// Committee and timing parameters for the speaker/congressmen protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsensusConfig {
    /// Number of registered charging stations taking part.
    pub committee_size: u32,
    /// Consecutive heights served by one speaker (`m`).
    pub speaker_term: u64,
    /// Virtual ms between block opportunities (`t`).
    pub block_interval_ms: u64,
    /// Use `x = (h mod m) + 1` instead of the rotating-term formula.
    pub literal_speaker_formula: bool,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            committee_size: 4,
            speaker_term: 1,
            block_interval_ms: 1_000,
            literal_speaker_formula: false,
        }
    }
}

impl ConsensusConfig {
    /// `f = floor((n - 1) / 3)`
    pub fn fault_bound(&self) -> u32 {
        self.committee_size.saturating_sub(1) / 3
    }

    /// Approvals (speaker included) needed to commit: `n - f`.
    pub fn quorum(&self) -> u32 {
        self.committee_size - self.fault_bound()
    }

    /// Retry spacing within one height; also the speaker's patience.
    pub fn slot_ms(&self) -> u64 {
        (self.block_interval_ms / 2).max(1)
    }

    pub fn vote_timeout_ms(&self) -> u64 {
        (self.block_interval_ms / 4).max(1)
    }
}

/// 1-based speaker for height `h` on the first attempt.
///
/// Default: `(floor(h / m) mod n) + 1`, so each speaker holds `m` consecutive
/// heights. Literal: `(h mod m) + 1`, folded into the committee.
pub fn speaker_index(height: u64, cfg: &ConsensusConfig) -> u32 {
    let n = u64::from(cfg.committee_size.max(1));
    let m = cfg.speaker_term.max(1);
    let x = if cfg.literal_speaker_formula { height % m } else { height / m };
    (x % n) as u32 + 1
}

/// Speaker after `view` failed attempts at the same height: the rotation
/// advances one committee member per retry.
pub fn speaker_for(height: u64, view: u64, cfg: &ConsensusConfig) -> u32 {
    let n = u64::from(cfg.committee_size.max(1));
    let base = u64::from(speaker_index(height, cfg) - 1);
    ((base + view) % n) as u32 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TallyOutcome {
    Commit,
    Abort,
}

/// Final decision once voting closes. The speaker's proposal counts as one
/// implicit approval.
pub fn tally_votes(approvals: u32, cfg: &ConsensusConfig) -> TallyOutcome {
    if approvals + 1 >= cfg.quorum() {
        TallyOutcome::Commit
    } else {
        TallyOutcome::Abort
    }
}

//! Speaker-rotation PBFT over reward transactions.

pub mod config;
pub mod ledger;
pub mod replica;
pub mod tx;

pub use config::{speaker_for, speaker_index, tally_votes, ConsensusConfig, TallyOutcome};
pub use ledger::{verify_ledger_bytes, Block, Ledger, LedgerError, LedgerVerdict, Receipt};
pub use replica::{Behavior, ConsensusMsg, Effects, Replica, ReplicaStats, Target, Vote};
pub use tx::{Transaction, TxBroadcast, TxInvalid};

//! Blocks, the hash-chained ledger, and its on-disk form.

use std::collections::BTreeMap;

use rust_decimal::Decimal;
use thiserror::Error;

use crate::crypto::tlv::{expect_kind, read_u64};
use crate::crypto::{decode_fields, encode_fields, sha256, CodecError, Digest, Field, FieldKind};
use crate::entities::messages::{read_digest, read_timestamp};
use crate::entities::{PseudoId, Timestamp};

use super::tx::Transaction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub txs: Vec<Transaction>,
    pub proposer: u32,
    pub timestamp: Timestamp,
    pub block_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("expected height {expected}, block claims {found}")]
    HeightConflict { expected: u64, found: u64 },
    #[error("block {height}: prev_hash does not match the chain head")]
    PrevHashMismatch { height: u64 },
    #[error("block {height}: stored hash does not match contents")]
    BadBlockHash { height: u64 },
    #[error("block {height}: non-canonical encoding")]
    NonCanonical { height: u64 },
    #[error("block {height}: file truncated")]
    Truncated { height: u64 },
    #[error("block {height}: {source}")]
    Codec { height: u64, source: CodecError },
}

impl LedgerError {
    /// Position in the chain where the problem was found.
    pub fn height(&self) -> u64 {
        match self {
            LedgerError::HeightConflict { expected, .. } => *expected,
            LedgerError::PrevHashMismatch { height }
            | LedgerError::BadBlockHash { height }
            | LedgerError::NonCanonical { height }
            | LedgerError::Truncated { height }
            | LedgerError::Codec { height, .. } => *height,
        }
    }
}

impl Block {
    pub fn new(
        height: u64,
        prev_hash: Digest,
        txs: Vec<Transaction>,
        proposer: u32,
        timestamp: Timestamp,
    ) -> Self {
        let mut block =
            Block { height, prev_hash, txs, proposer, timestamp, block_hash: Digest::ZERO };
        block.block_hash = block.compute_hash();
        block
    }

    fn content_fields(&self) -> Vec<Field> {
        let mut fields = vec![
            Field::integer(self.height),
            self.prev_hash.to_field(),
            Field::integer(u64::from(self.proposer)),
            self.timestamp.to_field(),
            Field::integer(self.txs.len() as u64),
        ];
        fields.extend(self.txs.iter().map(Transaction::to_nested));
        fields
    }

    pub fn compute_hash(&self) -> Digest {
        sha256(&encode_fields(&self.content_fields()))
    }

    pub fn hash_is_valid(&self) -> bool {
        self.compute_hash() == self.block_hash
    }

    pub fn fields(&self) -> Vec<Field> {
        let mut fields = self.content_fields();
        fields.push(self.block_hash.to_field());
        fields
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_fields(&self.fields())
    }

    pub fn from_fields(fields: &[Field]) -> Result<Self, CodecError> {
        let height = read_u64(fields, 0, FieldKind::Integer)?;
        let prev_hash = read_digest(fields, 1)?;
        let proposer = read_u64(fields, 2, FieldKind::Integer)?;
        let proposer = u32::try_from(proposer)
            .map_err(|_| CodecError::FieldValue { index: 2, reason: "proposer out of range".into() })?;
        let timestamp = read_timestamp(fields, 3)?;
        let count = read_u64(fields, 4, FieldKind::Integer)? as usize;
        let expected = 5 + count + 1;
        if fields.len() != expected {
            return Err(CodecError::FieldCount { expected, found: fields.len() });
        }
        let txs = (0..count)
            .map(|i| {
                let index = 5 + i;
                Transaction::from_nested(expect_kind(fields, index, FieldKind::Nested)?, index)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let block_hash = read_digest(fields, 5 + count)?;
        Ok(Block { height, prev_hash, txs, proposer, timestamp, block_hash })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        Self::from_fields(&decode_fields(bytes)?)
    }
}

/// Delivery note for an EV whose reward was committed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub tx_hash: Digest,
    pub height: u64,
    pub ev: PseudoId,
    pub cs: PseudoId,
    pub amount: Decimal,
}

/// Append-only chain of committed blocks plus the per-EV balances it implies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    blocks: Vec<Block>,
    balances: BTreeMap<PseudoId, Decimal>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Number of committed blocks, which is also the next height.
    pub fn len(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Hash of the last block; all-zero before genesis.
    pub fn head_hash(&self) -> Digest {
        self.blocks.last().map_or(Digest::ZERO, |b| b.block_hash)
    }

    pub fn balance(&self, ev: &PseudoId) -> Decimal {
        self.balances.get(ev).copied().unwrap_or_default()
    }

    pub fn balances(&self) -> &BTreeMap<PseudoId, Decimal> {
        &self.balances
    }

    pub fn total_balance(&self) -> Decimal {
        self.balances.values().copied().sum()
    }

    pub fn total_committed_rewards(&self) -> Decimal {
        self.blocks.iter().flat_map(|b| &b.txs).map(|tx| tx.reward_amount).sum()
    }

    pub fn contains_tx(&self, tx_hash: &Digest) -> bool {
        self.blocks.iter().flat_map(|b| &b.txs).any(|tx| &tx.hash() == tx_hash)
    }

    /// Extends the chain and credits every transaction's EV.
    pub fn append_block(&mut self, block: Block) -> Result<Vec<Receipt>, LedgerError> {
        let expected = self.len();
        if block.height != expected {
            return Err(LedgerError::HeightConflict { expected, found: block.height });
        }
        if block.prev_hash != self.head_hash() {
            return Err(LedgerError::PrevHashMismatch { height: block.height });
        }
        if !block.hash_is_valid() {
            return Err(LedgerError::BadBlockHash { height: block.height });
        }
        let receipts = block
            .txs
            .iter()
            .map(|tx| {
                *self.balances.entry(tx.ev_pseudo_id).or_default() += tx.reward_amount;
                Receipt {
                    tx_hash: tx.hash(),
                    height: block.height,
                    ev: tx.ev_pseudo_id,
                    cs: tx.cs_pseudo_id,
                    amount: tx.reward_amount,
                }
            })
            .collect();
        self.blocks.push(block);
        Ok(receipts)
    }

    /// `len (u32 BE) || block` for each block, in order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for block in &self.blocks {
            let encoded = block.encode();
            out.extend_from_slice(&(encoded.len() as u32).to_be_bytes());
            out.extend_from_slice(&encoded);
        }
        out
    }

    /// Parses and re-verifies every block hash and chain link.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LedgerError> {
        let mut ledger = Ledger::new();
        let mut offset = 0usize;
        while offset < bytes.len() {
            let height = ledger.len();
            let len_bytes: [u8; 4] = bytes
                .get(offset..offset + 4)
                .and_then(|s| s.try_into().ok())
                .ok_or(LedgerError::Truncated { height })?;
            let len = u32::from_be_bytes(len_bytes) as usize;
            let start = offset + 4;
            let body = bytes.get(start..start + len).ok_or(LedgerError::Truncated { height })?;
            let block =
                Block::decode(body).map_err(|source| LedgerError::Codec { height, source })?;
            if block.encode() != body {
                return Err(LedgerError::NonCanonical { height });
            }
            ledger.append_block(block)?;
            offset = start + len;
        }
        Ok(ledger)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerVerdict {
    Ok { blocks: u64 },
    Divergence { height: u64, error: LedgerError },
}

pub fn verify_ledger_bytes(bytes: &[u8]) -> LedgerVerdict {
    match Ledger::from_bytes(bytes) {
        Ok(ledger) => LedgerVerdict::Ok { blocks: ledger.len() },
        Err(error) => LedgerVerdict::Divergence { height: error.height(), error },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    fn tx(n: u8, energy: &str, price: &str) -> Transaction {
        Transaction::new(
            PseudoId(sha256(&[b'e', n])),
            PseudoId(sha256(b"cs")),
            Decimal::from_str(energy).unwrap(),
            Decimal::from_str(price).unwrap(),
            sha256(&[b's', n]),
            Timestamp(u64::from(n)),
        )
        .unwrap()
    }

    fn chain(len: u64) -> Ledger {
        let mut ledger = Ledger::new();
        for h in 0..len {
            let block = Block::new(
                h,
                ledger.head_hash(),
                vec![tx(h as u8, "7.5", "0.2")],
                1,
                Timestamp(1_000 * (h + 1)),
            );
            ledger.append_block(block).unwrap();
        }
        ledger
    }

    #[test]
    fn genesis_and_balance() {
        let mut ledger = Ledger::new();
        let t = tx(1, "7.5", "0.2");
        let genesis = Block::new(0, Digest::ZERO, vec![t.clone()], 1, Timestamp(5));
        let receipts = ledger.append_block(genesis.clone()).unwrap();
        assert_eq!(ledger.len(), 1);
        assert_eq!(ledger.blocks()[0].prev_hash, Digest::ZERO);
        assert_eq!(ledger.balance(&t.ev_pseudo_id), Decimal::from_str("1.5").unwrap());
        assert_eq!(receipts.len(), 1);
        assert_eq!(receipts[0].height, 0);
        assert_eq!(
            ledger.append_block(genesis),
            Err(LedgerError::HeightConflict { expected: 1, found: 0 })
        );
    }

    #[test]
    fn broken_links_rejected() {
        let mut ledger = chain(2);
        let bad_prev = Block::new(2, Digest([1; 32]), vec![], 1, Timestamp(9));
        assert_eq!(ledger.append_block(bad_prev), Err(LedgerError::PrevHashMismatch { height: 2 }));
        let mut bad_hash = Block::new(2, ledger.head_hash(), vec![], 1, Timestamp(9));
        bad_hash.proposer = 3;
        assert_eq!(ledger.append_block(bad_hash), Err(LedgerError::BadBlockHash { height: 2 }));
    }

    #[test]
    fn file_round_trip() {
        let ledger = chain(4);
        let bytes = ledger.to_bytes();
        assert_eq!(Ledger::from_bytes(&bytes).unwrap(), ledger);
        assert_eq!(verify_ledger_bytes(&bytes), LedgerVerdict::Ok { blocks: 4 });
        assert_eq!(verify_ledger_bytes(&[]), LedgerVerdict::Ok { blocks: 0 });
    }

    #[test]
    fn any_flipped_byte_is_localized() {
        let ledger = chain(4);
        let bytes = ledger.to_bytes();
        let mut starts = Vec::new();
        let mut offset = 0;
        for block in ledger.blocks() {
            starts.push(offset);
            offset += 4 + block.encode().len();
        }
        starts.push(offset);
        for height in 0..4usize {
            for pos in starts[height]..starts[height + 1] {
                let mut corrupt = bytes.clone();
                corrupt[pos] ^= 0x01;
                match verify_ledger_bytes(&corrupt) {
                    LedgerVerdict::Divergence { height: h, .. } => {
                        assert_eq!(h, height as u64, "byte {pos}")
                    }
                    LedgerVerdict::Ok { .. } => panic!("flip at {pos} undetected"),
                }
            }
        }
    }

    #[test]
    fn truncation_detected() {
        let bytes = chain(2).to_bytes();
        let verdict = verify_ledger_bytes(&bytes[..bytes.len() - 1]);
        assert!(matches!(verdict, LedgerVerdict::Divergence { height: 1, .. }));
    }

    #[test]
    fn conservation_on_chain() {
        let ledger = chain(5);
        assert_eq!(ledger.total_balance(), ledger.total_committed_rewards());
        assert_eq!(ledger.total_balance(), Decimal::from_str("7.5").unwrap());
    }
}

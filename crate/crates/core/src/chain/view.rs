use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::digest::{AccountId, Hash32};
use crate::finality::FinalityMode;
use crate::gas::GasSchedule;

use super::exec::{apply_transaction, TxError};
use super::state::WorldState;
use super::types::{tx_commitment, Block, BlockContext, BlockHeader, Transaction};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("parent {0} is not known")]
    UnknownParent(String),
    #[error("block {0} is not known")]
    UnknownBlock(String),
    #[error("block is not on the canonical chain")]
    NotCanonical,
    #[error("instant-finality chain cannot fork below its head")]
    FinalityViolation,
    #[error("block is malformed: {0}")]
    InvalidBlock(&'static str),
    #[error("fork point lies below the retained history")]
    BelowCheckpoint,
}

/// Result of a head switch to a block that does not descend from the old head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReorgReport {
    pub fork_point: Hash32,
    /// Old canonical blocks above the fork point, lowest first.
    pub reverted: Vec<Hash32>,
    /// New canonical blocks above the fork point, lowest first.
    pub adopted: Vec<Hash32>,
    /// Transactions in `reverted` that are not in `adopted`, in chain order.
    pub dropped_txs: Vec<Transaction>,
}

/// A block together with the post-state it produces.
#[derive(Debug, Clone)]
pub struct BuiltBlock {
    pub block: Arc<Block>,
    pub state: Arc<WorldState>,
}

impl BuiltBlock {
    pub fn hash(&self) -> Hash32 {
        self.block.header.hash
    }
}

/// Block tree with canonical-head tracking. Each stored block keeps its
/// post-state; blocks without transactions share their parent's state.
#[derive(Debug, Clone)]
pub struct ChainView {
    blocks: HashMap<Hash32, BuiltBlock>,
    canonical: Vec<Hash32>,
    base_number: u64,
    mode: FinalityMode,
}

impl ChainView {
    pub fn new(genesis_state: WorldState, mode: FinalityMode, genesis_time: u64) -> Self {
        let header = BlockHeader::seal(
            Hash32::ZERO,
            0,
            0,
            AccountId::default(),
            genesis_time,
            tx_commitment(&[]),
            genesis_state.commitment(),
            0,
        );
        Self::from_checkpoint(header, genesis_state, mode)
    }

    /// Starts a view whose oldest known block is `header` with post-state `state`.
    pub fn from_checkpoint(header: BlockHeader, state: WorldState, mode: FinalityMode) -> Self {
        let hash = header.hash;
        let base_number = header.number;
        let built = BuiltBlock {
            block: Arc::new(Block {
                header,
                txs: Vec::new(),
                receipts: Vec::new(),
            }),
            state: Arc::new(state),
        };
        ChainView {
            blocks: HashMap::from([(hash, built)]),
            canonical: vec![hash],
            base_number,
            mode,
        }
    }

    pub fn mode(&self) -> FinalityMode {
        self.mode
    }

    pub fn head(&self) -> &BlockHeader {
        &self.blocks[self.canonical.last().expect("non-empty")].block.header
    }

    pub fn head_hash(&self) -> Hash32 {
        *self.canonical.last().expect("non-empty")
    }

    pub fn head_state(&self) -> &Arc<WorldState> {
        &self.blocks[&self.head_hash()].state
    }

    pub fn base_number(&self) -> u64 {
        self.base_number
    }

    /// Highest block number that can no longer change, for instant-finality chains.
    pub fn finalized_marker(&self) -> Option<u64> {
        match self.mode {
            FinalityMode::Instant => Some(self.head().number),
            FinalityMode::Probabilistic => None,
        }
    }

    pub fn contains(&self, hash: &Hash32) -> bool {
        self.blocks.contains_key(hash)
    }

    pub fn block(&self, hash: &Hash32) -> Option<&Arc<Block>> {
        self.blocks.get(hash).map(|b| &b.block)
    }

    pub fn header(&self, hash: &Hash32) -> Option<&BlockHeader> {
        self.blocks.get(hash).map(|b| &b.block.header)
    }

    pub fn state_at(&self, hash: &Hash32) -> Option<&Arc<WorldState>> {
        self.blocks.get(hash).map(|b| &b.state)
    }

    /// Canonical block hash at `number`, if retained.
    pub fn canonical_at(&self, number: u64) -> Option<Hash32> {
        let idx = number.checked_sub(self.base_number)?;
        self.canonical.get(idx as usize).copied()
    }

    /// Canonical blocks from the retained base to the head.
    pub fn canonical_hashes(&self) -> &[Hash32] {
        &self.canonical
    }

    pub fn is_canonical(&self, hash: &Hash32) -> bool {
        self.header(hash)
            .is_some_and(|h| self.canonical_at(h.number) == Some(*hash))
    }

    pub fn confirmations(&self, hash: &Hash32) -> Result<u64, ChainError> {
        let h = self
            .header(hash)
            .ok_or_else(|| ChainError::UnknownBlock(hash.short()))?;
        if !self.is_canonical(hash) {
            return Err(ChainError::NotCanonical);
        }
        Ok(self.head().number - h.number)
    }

    /// Builds (but does not store) a child of `parent`, selecting from
    /// `candidates` (arrival order) by descending gas price. A sender's
    /// transactions are taken in nonce order; a nonce gap or an oversize
    /// transaction ends that sender's run for this block.
    pub fn build_block(
        &self,
        parent: &Hash32,
        miner: AccountId,
        timestamp: u64,
        candidates: &[&Transaction],
        schedule: &GasSchedule,
    ) -> Result<BuiltBlock, ChainError> {
        let parent_block = self
            .blocks
            .get(parent)
            .ok_or_else(|| ChainError::UnknownParent(parent.short()))?;
        let ph = &parent_block.block.header;
        let ctx = BlockContext {
            number: ph.number + 1,
            timestamp,
            miner,
        };

        let mut queues: BTreeMap<AccountId, Vec<(usize, &Transaction)>> = BTreeMap::new();
        for (seq, tx) in candidates.iter().enumerate() {
            queues.entry(tx.sender).or_default().push((seq, tx));
        }
        for q in queues.values_mut() {
            q.sort_by_key(|(seq, tx)| (tx.nonce, *seq));
            q.reverse();
        }

        let mut heap = BinaryHeap::new();
        for (sender, q) in &queues {
            if let Some((seq, tx)) = q.last() {
                heap.push(Ready::new(tx.gas_price, *seq, *sender));
            }
        }

        let mut state: Option<WorldState> = None;
        let mut txs = Vec::new();
        let mut receipts = Vec::new();
        let mut budget = schedule.block_gas_limit;
        while budget >= schedule.intrinsic_tx_gas {
            let Some(ready) = heap.pop() else { break };
            let queue = queues.get_mut(&ready.sender).expect("queued sender");
            let (_, tx) = queue.pop().expect("non-empty queue");
            let st = state.get_or_insert_with(|| (*parent_block.state).clone());
            match apply_transaction(st, tx, &ctx, budget, schedule) {
                Ok(receipt) => {
                    budget -= receipt.gas_used;
                    txs.push(tx.clone());
                    receipts.push(receipt);
                }
                // already included further down the chain; try the next one
                Err(TxError::BadNonce { expected, got }) if got < expected => {}
                Err(_) => {
                    queue.clear();
                    continue;
                }
            }
            if let Some((seq, next)) = queue.last() {
                heap.push(Ready::new(next.gas_price, *seq, ready.sender));
            }
        }

        let state = match state {
            Some(s) if !txs.is_empty() => Arc::new(s),
            _ => Arc::clone(&parent_block.state),
        };
        let header = BlockHeader::seal(
            ph.hash,
            ctx.number,
            ph.weight + 1,
            miner,
            timestamp,
            tx_commitment(&txs),
            state.commitment(),
            0,
        );
        Ok(BuiltBlock {
            block: Arc::new(Block {
                header,
                txs,
                receipts,
            }),
            state,
        })
    }

    /// Stores a block without changing the head.
    pub fn insert(&mut self, built: BuiltBlock) -> Result<Hash32, ChainError> {
        let h = &built.block.header;
        if !h.verify_hash() {
            return Err(ChainError::InvalidBlock("hash does not match header"));
        }
        let parent = self
            .header(&h.parent_hash)
            .ok_or_else(|| ChainError::UnknownParent(h.parent_hash.short()))?;
        if h.number != parent.number + 1 {
            return Err(ChainError::InvalidBlock("number is not parent + 1"));
        }
        if h.weight != parent.weight + 1 + h.uncle_count {
            return Err(ChainError::InvalidBlock("weight is not parent + 1 + uncles"));
        }
        if h.state_commitment != built.state.commitment() {
            return Err(ChainError::InvalidBlock("state commitment mismatch"));
        }
        if self.mode == FinalityMode::Instant && h.parent_hash != self.head_hash() {
            return Err(ChainError::FinalityViolation);
        }
        let hash = h.hash;
        self.blocks.entry(hash).or_insert(built);
        Ok(hash)
    }

    /// Re-evaluates the head against a known tip. The head switches only to a
    /// strictly heavier tip; a report is produced when canonical blocks leave.
    pub fn fork_choice(&mut self, tip: &Hash32) -> Result<(Hash32, Option<ReorgReport>), ChainError> {
        let cand = self
            .header(tip)
            .ok_or_else(|| ChainError::UnknownParent(tip.short()))?
            .clone();
        if cand.weight <= self.head().weight {
            return Ok((self.head_hash(), None));
        }

        let mut path = Vec::new();
        let mut cursor = cand.hash;
        while !self.is_canonical(&cursor) {
            let h = self
                .header(&cursor)
                .ok_or_else(|| ChainError::UnknownParent(cursor.short()))?;
            if h.number <= self.base_number {
                return Err(ChainError::BelowCheckpoint);
            }
            path.push(cursor);
            cursor = h.parent_hash;
        }
        path.reverse();
        let fork_number = self.header(&cursor).expect("canonical").number;
        let keep = (fork_number - self.base_number + 1) as usize;
        if self.mode == FinalityMode::Instant && keep != self.canonical.len() {
            return Err(ChainError::FinalityViolation);
        }
        let reverted = self.canonical.split_off(keep);
        self.canonical.extend_from_slice(&path);

        if reverted.is_empty() {
            return Ok((cand.hash, None));
        }
        let adopted_txs: HashSet<Hash32> = path
            .iter()
            .flat_map(|h| self.blocks[h].block.txs.iter().map(Transaction::hash))
            .collect();
        let dropped_txs = reverted
            .iter()
            .flat_map(|h| self.blocks[h].block.txs.iter())
            .filter(|tx| !adopted_txs.contains(&tx.hash()))
            .cloned()
            .collect();
        Ok((
            cand.hash,
            Some(ReorgReport {
                fork_point: cursor,
                reverted,
                adopted: path,
                dropped_txs,
            }),
        ))
    }

    /// Stores `built` and runs fork choice on it.
    pub fn import(&mut self, built: BuiltBlock) -> Result<(Hash32, Option<ReorgReport>), ChainError> {
        let hash = self.insert(built)?;
        self.fork_choice(&hash)
    }

    /// Builds on the head, stores, and adopts the new block.
    pub fn mint_block(
        &mut self,
        miner: AccountId,
        timestamp: u64,
        candidates: &[&Transaction],
        schedule: &GasSchedule,
    ) -> Result<BuiltBlock, ChainError> {
        let built = self.build_block(&self.head_hash(), miner, timestamp, candidates, schedule)?;
        self.import(built.clone())?;
        Ok(built)
    }
}

#[derive(Debug, PartialEq, Eq)]
struct Ready {
    price: u128,
    seq: Reverse<usize>,
    sender: AccountId,
}

impl Ready {
    fn new(price: u128, seq: usize, sender: AccountId) -> Self {
        Ready {
            price,
            seq: Reverse(seq),
            sender,
        }
    }
}

impl Ord for Ready {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.price, self.seq, self.sender).cmp(&(other.price, other.seq, other.sender))
    }
}

impl PartialOrd for Ready {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Payload;

    fn genesis() -> ChainView {
        let mut s = WorldState::new(Hash32::ZERO);
        for name in ["a", "b"] {
            s.fund(AccountId::derive(name), u128::MAX / 4);
        }
        ChainView::new(s, FinalityMode::Probabilistic, 0)
    }

    fn transfer(sender: &str, nonce: u64, price: u128) -> Transaction {
        Transaction {
            sender: AccountId::derive(sender),
            nonce,
            gas_limit: 21_000,
            gas_price: price,
            payload: Payload::Transfer {
                to: AccountId::derive("sink"),
                amount: 1,
            },
            authorized: true,
        }
    }

    fn miner() -> AccountId {
        AccountId::derive("miner")
    }

    #[test]
    fn empty_block_extends_head() {
        let mut v = genesis();
        let b = v.mint_block(miner(), 14, &[], &GasSchedule::default()).unwrap();
        assert_eq!(b.block.header.weight, 1);
        assert_eq!(b.block.header.number, 1);
        assert_eq!(v.head_hash(), b.hash());
        assert!(Arc::ptr_eq(&b.state, v.state_at(&b.block.header.parent_hash).unwrap()));
    }

    #[test]
    fn higher_price_first() {
        let mut v = genesis();
        let lo = transfer("a", 0, 5);
        let hi = transfer("b", 0, 50);
        let b = v.mint_block(miner(), 14, &[&lo, &hi], &GasSchedule::default()).unwrap();
        assert_eq!(b.block.txs[0].gas_price, 50);
        assert_eq!(b.block.txs[1].gas_price, 5);
    }

    #[test]
    fn confirmations_count_from_head() {
        let mut v = genesis();
        let first = v.mint_block(miner(), 14, &[], &GasSchedule::default()).unwrap().hash();
        assert_eq!(v.confirmations(&first), Ok(0));
        for t in 2..=13 {
            v.mint_block(miner(), 14 * t, &[], &GasSchedule::default()).unwrap();
        }
        assert_eq!(v.confirmations(&first), Ok(12));
    }

    #[test]
    fn ties_keep_incumbent_and_heavier_reorgs() {
        let mut v = genesis();
        let s = GasSchedule::default();
        let g = v.head_hash();
        let tx = transfer("a", 0, 1);
        let a1 = v.mint_block(miner(), 14, &[&tx], &s).unwrap();
        // competing branch of equal weight
        let b1 = v.build_block(&g, AccountId::derive("x"), 15, &[], &s).unwrap();
        let (head, reorg) = v.import(b1.clone()).unwrap();
        assert_eq!(head, a1.hash());
        assert!(reorg.is_none());
        let b2 = v.build_block(&b1.hash(), AccountId::derive("x"), 16, &[], &s).unwrap();
        let (head, reorg) = v.import(b2.clone()).unwrap();
        assert_eq!(head, b2.hash());
        let r = reorg.unwrap();
        assert_eq!(r.fork_point, g);
        assert_eq!(r.reverted, vec![a1.hash()]);
        assert_eq!(r.adopted, vec![b1.hash(), b2.hash()]);
        assert_eq!(r.dropped_txs, vec![tx]);
        assert_eq!(v.confirmations(&a1.hash()), Err(ChainError::NotCanonical));
    }

    #[test]
    fn instant_mode_refuses_forks() {
        let mut v = ChainView::new(WorldState::new(Hash32::ZERO), FinalityMode::Instant, 0);
        let s = GasSchedule::default();
        let g = v.head_hash();
        v.mint_block(miner(), 1, &[], &s).unwrap();
        let side = v.build_block(&g, AccountId::derive("x"), 2, &[], &s).unwrap();
        assert_eq!(v.insert(side), Err(ChainError::FinalityViolation));
        assert_eq!(v.finalized_marker(), Some(1));
    }

    #[test]
    fn unknown_parent() {
        let v = genesis();
        assert!(matches!(
            v.build_block(&Hash32([9; 32]), miner(), 1, &[], &GasSchedule::default()),
            Err(ChainError::UnknownParent(_))
        ));
    }

    #[test]
    fn nonce_gap_stops_sender_only() {
        let mut v = genesis();
        let a0 = transfer("a", 0, 1);
        let a2 = transfer("a", 2, 100);
        let b0 = transfer("b", 0, 1);
        let blk = v.mint_block(miner(), 14, &[&a0, &a2, &b0], &GasSchedule::default()).unwrap();
        assert_eq!(blk.block.txs, vec![a0, b0]);
    }
}

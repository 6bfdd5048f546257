use std::collections::HashMap;
use std::sync::Arc;

use crate::digest::{AccountId, Hash32};
use crate::finality::{is_final, FinalityMode, FinalityPolicy};
use crate::gas::{update_price, GasSchedule, PriceState};

use super::mempool::Mempool;
use super::state::WorldState;
use super::types::Transaction;
use super::view::{BuiltBlock, ChainError, ChainView, ReorgReport};

/// What a head change did to pending work.
#[derive(Debug, Clone, Default)]
pub struct HeadChange {
    pub reorg: Option<ReorgReport>,
    /// Pending transactions stranded behind a nonce gap and removed.
    pub evicted: Vec<Transaction>,
}

/// A chain plus its mempool, gas schedule, price model and finality policy.
#[derive(Debug, Clone)]
pub struct ChainNode {
    pub view: ChainView,
    pub mempool: Mempool,
    pub schedule: GasSchedule,
    pub price: PriceState,
    pub policy: FinalityPolicy,
    /// Whether block utilization feeds back into `price`.
    pub dynamic_price: bool,
}

impl ChainNode {
    pub fn new(
        genesis: WorldState,
        mode: FinalityMode,
        schedule: GasSchedule,
        policy: FinalityPolicy,
        price: PriceState,
    ) -> Self {
        ChainNode {
            view: ChainView::new(genesis, mode, 0),
            mempool: Mempool::new(),
            schedule,
            price,
            policy,
            dynamic_price: mode == FinalityMode::Probabilistic,
        }
    }

    pub fn mode(&self) -> FinalityMode {
        self.view.mode()
    }

    pub fn submit(&mut self, tx: Transaction) -> bool {
        self.mempool.submit(tx)
    }

    pub fn next_nonce(&self, account: &AccountId) -> u64 {
        self.mempool.next_nonce(self.view.head_state(), account)
    }

    /// Mints the next block on the head from the mempool.
    pub fn mint(&mut self, miner: AccountId, timestamp: u64) -> Result<(BuiltBlock, HeadChange), ChainError> {
        let built = {
            let candidates = self.mempool.ordered();
            self.view
                .mint_block(miner, timestamp, &candidates, &self.schedule)?
        };
        let evicted = self.mempool.reconcile(&built.state);
        if self.dynamic_price {
            let used: u64 = built.block.receipts.iter().map(|r| r.gas_used).sum();
            let utilization = used as f64 / self.schedule.block_gas_limit as f64;
            self.price = update_price(&self.price, utilization);
        }
        Ok((
            built,
            HeadChange {
                reorg: None,
                evicted,
            },
        ))
    }

    /// Imports an externally built block (for example a published attacker
    /// branch tip) and reconciles the mempool if the head moved.
    pub fn adopt(&mut self, built: BuiltBlock) -> Result<HeadChange, ChainError> {
        let before = self.view.head_hash();
        let (head, reorg) = self.view.import(built)?;
        let evicted = if head != before {
            let state = Arc::clone(self.view.head_state());
            self.mempool.reconcile(&state)
        } else {
            Vec::new()
        };
        Ok(HeadChange { reorg, evicted })
    }

    pub fn is_final(&self, block: &Hash32) -> Result<bool, ChainError> {
        is_final(&self.view, block, &self.policy, self.mode())
    }

    /// Number of the newest block that currently counts as final.
    pub fn final_number(&self) -> Option<u64> {
        let head = self.view.head().number;
        match self.mode() {
            FinalityMode::Instant => Some(head),
            FinalityMode::Probabilistic => head.checked_sub(self.policy.confirmations_required),
        }
    }

    /// Hash of the newest final canonical block.
    pub fn final_hash(&self) -> Option<Hash32> {
        self.final_number()
            .and_then(|n| self.view.canonical_at(n.max(self.view.base_number())))
    }

    /// State at the newest final block, for view calls that must not be reverted.
    pub fn final_state(&self) -> Option<&Arc<WorldState>> {
        self.final_hash().and_then(|h| self.view.state_at(&h))
    }
}

/// Client-side bookkeeping for transactions a party wants on chain. After a
/// reorg drops them or the pool evicts them, they are resubmitted with fresh
/// nonces.
#[derive(Debug, Clone, Default)]
pub struct TxTracker {
    tracked: HashMap<Hash32, Transaction>,
}

impl TxTracker {
    pub fn submit(&mut self, node: &mut ChainNode, tx: Transaction) -> Hash32 {
        let h = tx.hash();
        node.submit(tx.clone());
        self.tracked.insert(h, tx);
        h
    }

    pub fn is_tracked(&self, hash: &Hash32) -> bool {
        self.tracked.contains_key(hash)
    }

    /// Resubmits every tracked transaction that `change` dropped or evicted.
    /// Returns (old hash, new hash) pairs.
    pub fn on_head_change(&mut self, node: &mut ChainNode, change: &HeadChange) -> Vec<(Hash32, Hash32)> {
        let lost = change
            .reorg
            .iter()
            .flat_map(|r| r.dropped_txs.iter())
            .chain(change.evicted.iter());
        let mut out = Vec::new();
        for tx in lost {
            let old = tx.hash();
            if self.tracked.remove(&old).is_none() {
                continue;
            }
            let mut fresh = tx.clone();
            fresh.nonce = node.next_nonce(&tx.sender);
            out.push((old, self.submit(node, fresh)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Payload;

    #[test]
    fn final_number_tracks_policy() {
        let mut n = ChainNode::new(
            WorldState::new(Hash32::ZERO),
            FinalityMode::Probabilistic,
            GasSchedule::default(),
            FinalityPolicy::default(),
            PriceState::default(),
        );
        assert_eq!(n.final_number(), None);
        for t in 1..=13 {
            n.mint(AccountId::derive("m"), t * 14).unwrap();
        }
        assert_eq!(n.final_number(), Some(1));
        let one = n.view.canonical_at(1).unwrap();
        assert_eq!(n.is_final(&one), Ok(true));
        let two = n.view.canonical_at(2).unwrap();
        assert_eq!(n.is_final(&two), Ok(false));
    }

    #[test]
    fn full_blocks_raise_price() {
        let a = AccountId::derive("a");
        let mut g = WorldState::new(Hash32::ZERO);
        g.fund(a, u128::MAX / 4);
        let mut n = ChainNode::new(
            g,
            FinalityMode::Probabilistic,
            GasSchedule::default(),
            FinalityPolicy::default(),
            PriceState::default(),
        );
        for nonce in 0..1000 {
            n.submit(Transaction {
                sender: a,
                nonce,
                gas_limit: 21_000,
                gas_price: 10,
                payload: Payload::Transfer { to: a, amount: 0 },
                authorized: true,
            });
        }
        let p0 = n.price.gas_price;
        let (b, _) = n.mint(AccountId::derive("m"), 14).unwrap();
        assert_eq!(b.block.txs.len(), 380);
        assert!(n.price.gas_price > p0);
        assert_eq!(n.next_nonce(&a), 1000);
    }
}

use std::collections::BTreeMap;

use crate::digest::AccountId;

use super::state::WorldState;
use super::types::Transaction;

#[derive(Debug, Clone)]
struct Pending {
    seq: u64,
    tx: Transaction,
}

/// Pending transactions keyed by sender and nonce. Arrival order is kept as a
/// sequence number so block building can break price ties first-come.
#[derive(Debug, Clone, Default)]
pub struct Mempool {
    by_sender: BTreeMap<AccountId, BTreeMap<u64, Pending>>,
    next_seq: u64,
    len: usize,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Adds `tx`. A transaction with the same sender and nonce is replaced
    /// only by a strictly higher gas price. Returns whether `tx` was kept.
    pub fn submit(&mut self, tx: Transaction) -> bool {
        let seq = self.next_seq;
        self.next_seq += 1;
        let queue = self.by_sender.entry(tx.sender).or_default();
        match queue.get_mut(&tx.nonce) {
            Some(p) if p.tx.gas_price >= tx.gas_price => false,
            Some(p) => {
                *p = Pending { seq, tx };
                true
            }
            None => {
                queue.insert(tx.nonce, Pending { seq, tx });
                self.len += 1;
                true
            }
        }
    }

    /// Number of pending transactions from `sender` that directly extend
    /// `state_nonce` without a gap.
    pub fn contiguous_from(&self, sender: &AccountId, state_nonce: u64) -> u64 {
        let Some(queue) = self.by_sender.get(sender) else {
            return 0;
        };
        let mut n = 0;
        while queue.contains_key(&(state_nonce + n)) {
            n += 1;
        }
        n
    }

    /// Next nonce a client should use for `sender` given the head state.
    pub fn next_nonce(&self, state: &WorldState, sender: &AccountId) -> u64 {
        let base = state.account(sender).map_or(0, |a| a.nonce);
        base + self.contiguous_from(sender, base)
    }

    /// All pending transactions in arrival order.
    pub fn ordered(&self) -> Vec<&Transaction> {
        let mut all: Vec<(u64, &Transaction)> = self
            .by_sender
            .values()
            .flat_map(|q| q.values().map(|p| (p.seq, &p.tx)))
            .collect();
        all.sort_unstable_by_key(|(seq, _)| *seq);
        all.into_iter().map(|(_, tx)| tx).collect()
    }

    /// Brings the pool in line with a new head state: drops transactions
    /// whose nonce is already used and evicts those stranded behind a nonce
    /// gap. Evicted transactions are returned so their owners can resubmit.
    pub fn reconcile(&mut self, state: &WorldState) -> Vec<Transaction> {
        let mut evicted = Vec::new();
        let mut removed = 0;
        self.by_sender.retain(|sender, queue| {
            let base = state.account(sender).map_or(0, |a| a.nonce);
            let before = queue.len();
            queue.retain(|nonce, _| *nonce >= base);
            let gap_at = (base..).zip(queue.keys()).find(|(expect, nonce)| *nonce != expect).map(|(e, _)| e);
            if let Some(gap) = gap_at {
                let stranded = queue.split_off(&gap);
                let mut stranded: Vec<_> = stranded.into_values().collect();
                stranded.sort_by_key(|p| p.seq);
                evicted.extend(stranded.into_iter().map(|p| p.tx));
            }
            removed += before - queue.len();
            !queue.is_empty()
        });
        self.len -= removed;
        evicted
    }
}

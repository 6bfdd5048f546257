//! Instant-finality sidechains: pinning clients, pin finality across a
//! pinning hierarchy, and the archive/restore lifecycle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    BlockHeader, BuiltBlock, ChainError, ChainNode, ChainView, Payload, Transaction, WorldState,
};
use crate::codec::{Decode, DecodeError, Reader, Writer};
use crate::contracts::{ContractInit, ContractOp, KvOp, PinRecord, PinningOp};
use crate::digest::{digest, sidechain_id, AccountId, Address, Hash32, SidechainId};
use crate::finality::{FinalityMode, FinalityPolicy};
use crate::gas::{GasSchedule, PriceState};

pub const ARCHIVE_MAGIC: &[u8; 5] = b"EPSA1";

/// Balance given to each validator at sidechain genesis.
const VALIDATOR_FUNDS: u128 = 1 << 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PinStrategy {
    Direct,
    Hierarchical,
}

impl PinStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            PinStrategy::Direct => "direct",
            PinStrategy::Hierarchical => "hierarchical",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SidechainError {
    #[error("sidechain has no pin target")]
    NoPinTarget,
    #[error("pin is not recorded in the block it claims")]
    UnknownPin,
    #[error("final-state pin is not final yet")]
    FinalPinNotFinal,
    #[error("pinned block does not match the archive")]
    PinMismatch,
    #[error("archive blob is corrupt: {0}")]
    CorruptBlob(String),
    #[error("no pin found for this sidechain")]
    NoPinFound,
    #[error("sidechain is archived")]
    Archived,
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Which chain in a world a pin goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ChainRef {
    Root,
    Intermediate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PinTarget {
    pub chain: ChainRef,
    pub contract: Address,
}

/// Address of the business key-value contract on every sidechain.
pub fn kv_address() -> Address {
    AccountId::derive("sidechain-kv")
}

/// Address of the pinning contract hosted by an intermediate chain.
pub fn hosted_pinning_address() -> Address {
    AccountId::derive("intermediate-pinning")
}

/// Genesis state of a sidechain: funded validators plus a key-value contract.
pub fn sidechain_genesis(id: SidechainId, validators: &[AccountId]) -> WorldState {
    let mut s = WorldState::new(id);
    for v in validators {
        s.fund(*v, VALIDATOR_FUNDS);
    }
    s.deploy_at(kv_address(), &ContractInit::Kv);
    s
}

/// A permissioned chain with instant finality. Intermediate chains in a
/// pinning hierarchy are sidechains that also host a pinning contract.
#[derive(Debug, Clone)]
pub struct Sidechain {
    pub name: String,
    pub id: SidechainId,
    pub validators: Vec<AccountId>,
    pub node: ChainNode,
    pub keyset_version: u64,
    pub pin_target: Option<PinTarget>,
    archived: bool,
    next_poster: usize,
    next_minter: usize,
    /// Provisional crosschain updates, keyed by crosschain transaction id.
    overlay: BTreeMap<Hash32, KvOp>,
}

impl Sidechain {
    pub fn new(name: &str, validators: Vec<AccountId>, schedule: GasSchedule) -> Self {
        let id = sidechain_id(name);
        let genesis = sidechain_genesis(id, &validators);
        Self::from_genesis(name, validators, genesis, schedule)
    }

    pub fn from_genesis(name: &str, validators: Vec<AccountId>, genesis: WorldState, schedule: GasSchedule) -> Self {
        let node = ChainNode::new(
            genesis,
            FinalityMode::Instant,
            schedule,
            FinalityPolicy {
                confirmations_required: 1,
                block_time_target: schedule.block_time as f64,
            },
            PriceState::default(),
        );
        Self::from_node(name, validators, node)
    }

    fn from_node(name: &str, validators: Vec<AccountId>, node: ChainNode) -> Self {
        Sidechain {
            name: name.to_string(),
            id: node.view.head_state().chain_id,
            validators,
            node,
            keyset_version: 0,
            pin_target: None,
            archived: false,
            next_poster: 0,
            next_minter: 0,
            overlay: BTreeMap::new(),
        }
    }

    pub fn is_archived(&self) -> bool {
        self.archived
    }

    pub fn head(&self) -> &BlockHeader {
        self.node.view.head()
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<(), SidechainError> {
        if self.archived {
            return Err(SidechainError::Archived);
        }
        self.node.submit(tx);
        Ok(())
    }

    /// Mints a block with the next validator in rotation.
    pub fn mint(&mut self, timestamp: u64) -> Result<BuiltBlock, SidechainError> {
        if self.archived {
            return Err(SidechainError::Archived);
        }
        let miner = self.validators[self.next_minter % self.validators.len()];
        self.next_minter += 1;
        let (built, change) = self.node.mint(miner, timestamp)?;
        debug_assert!(change.reorg.is_none());
        Ok(built)
    }

    /// Submits a key-value write signed by the first validator.
    pub fn submit_kv(&mut self, key: &str, value: Vec<u8>) -> Result<Transaction, SidechainError> {
        let sender = self.validators[0];
        let op = ContractOp::Kv(KvOp::Put {
            key: key.to_string(),
            value,
        });
        let gas = op.gas_cost(&self.node.schedule);
        let tx = Transaction::call(sender, self.node.next_nonce(&sender), 0, kv_address(), op)
            .with_gas_limit(gas);
        self.submit(tx.clone())?;
        Ok(tx)
    }

    pub fn kv_get(&self, key: &str) -> Option<Vec<u8>> {
        self.node
            .view
            .head_state()
            .kv(&kv_address())
            .and_then(|kv| kv.get(key).map(<[u8]>::to_vec))
    }

    pub fn state_commitment(&self) -> Hash32 {
        self.head().state_commitment
    }

    /// Stages a provisional update for a crosschain transaction.
    pub fn stage(&mut self, tx_id: Hash32, op: KvOp) {
        self.overlay.insert(tx_id, op);
    }

    pub fn staged(&self, tx_id: &Hash32) -> Option<&KvOp> {
        self.overlay.get(tx_id)
    }

    /// Drops a provisional update without touching chain state.
    pub fn discard(&mut self, tx_id: &Hash32) -> bool {
        self.overlay.remove(tx_id).is_some()
    }

    /// Turns a provisional update into a key-value transaction.
    pub fn apply_staged(&mut self, tx_id: &Hash32) -> Result<bool, SidechainError> {
        match self.overlay.remove(tx_id) {
            Some(KvOp::Put { key, value }) => {
                self.submit_kv(&key, value)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Builds and submits a pin of the current head to `target`, posted by
    /// the next validator in rotation.
    pub fn pin_now(&mut self, target: &mut ChainNode, gas_price: u128) -> Result<Transaction, SidechainError> {
        let pt = self.pin_target.ok_or(SidechainError::NoPinTarget)?;
        let head = self.head();
        let op = ContractOp::Pinning(PinningOp::PinAdd {
            sidechain: self.id,
            block_number: head.number,
            block_hash: head.hash,
        });
        let poster = self.validators[self.next_poster % self.validators.len()];
        self.next_poster += 1;
        let tx = pin_tx(target, poster, op, gas_price, pt.contract);
        target.submit(tx.clone());
        Ok(tx)
    }

    /// Final state for archiving: requires a final pin of the current head.
    pub fn archive(&mut self, stack: &[StackLevel<'_>]) -> Result<ArchiveBlob, SidechainError> {
        let level = stack.first().ok_or(SidechainError::NoPinTarget)?;
        let head = self.head().clone();
        let pin = level
            .node
            .view
            .head_state()
            .pinning(&level.pinning)
            .and_then(|p| p.pin_latest(&self.id).ok().copied())
            .filter(|p| p.block_number == head.number && p.block_hash == head.hash)
            .ok_or(SidechainError::FinalPinNotFinal)?;
        if pin_finality(&pin, stack)? != PinStatus::Final {
            return Err(SidechainError::FinalPinNotFinal);
        }
        let state = self.node.view.head_state();
        let blob = ArchiveBlob {
            header_bytes: head.header_bytes(),
            state_bytes: crate::codec::Encode::to_bytes(state.as_ref()),
            final_hash: head.hash,
        };
        self.archived = true;
        Ok(blob)
    }
}

/// A pin transaction for `op`, with a gas limit that exactly covers it.
pub fn pin_tx(target: &ChainNode, poster: AccountId, op: ContractOp, gas_price: u128, contract: Address) -> Transaction {
    let gas = op.gas_cost(&target.schedule);
    Transaction::call(poster, target.next_nonce(&poster), gas_price, contract, op).with_gas_limit(gas)
}

/// One chain in a pinning hierarchy: the chain that holds pins and the
/// address of its pinning contract. Stacks are ordered from the chain a pin
/// is first posted to, down to the root coordination chain.
#[derive(Debug, Clone, Copy)]
pub struct StackLevel<'a> {
    pub node: &'a ChainNode,
    pub pinning: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PinStatus {
    Final,
    Pending,
}

/// A pin is final when its block is final on its chain and, if that chain is
/// itself pinned, a final pin on the next level covers that block.
pub fn pin_finality(pin: &PinRecord, stack: &[StackLevel<'_>]) -> Result<PinStatus, SidechainError> {
    let level = stack.first().ok_or(SidechainError::NoPinTarget)?;
    let view = &level.node.view;
    let block_hash = view
        .canonical_at(pin.posted_at_block)
        .ok_or(SidechainError::UnknownPin)?;
    let block = view.block(&block_hash).ok_or(SidechainError::UnknownPin)?;
    let recorded = block.txs.iter().zip(&block.receipts).any(|(tx, r)| {
        r.status.is_success()
            && tx.sender == pin.poster
            && matches!(
                &tx.payload,
                Payload::Call { contract, op: ContractOp::Pinning(PinningOp::PinAdd { sidechain, block_number, block_hash }) }
                    if *contract == level.pinning
                        && *sidechain == pin.sidechain_id
                        && *block_number == pin.block_number
                        && *block_hash == pin.block_hash
            )
    });
    if !recorded {
        return Err(SidechainError::UnknownPin);
    }
    if !level.node.is_final(&block_hash)? {
        return Ok(PinStatus::Pending);
    }
    let Some(next) = stack.get(1) else {
        return Ok(PinStatus::Final);
    };
    let chain_id = view.head_state().chain_id;
    let Some(cover) = next
        .node
        .final_state()
        .and_then(|s| s.pinning(&next.pinning).and_then(|p| p.pin_latest(&chain_id).ok().copied()))
    else {
        return Ok(PinStatus::Pending);
    };
    if cover.block_number < pin.posted_at_block || view.canonical_at(cover.block_number) != Some(cover.block_hash) {
        return Ok(PinStatus::Pending);
    }
    pin_finality(&cover, &stack[1..])
}

/// Offline copy of a sidechain's final block header and state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveBlob {
    pub header_bytes: Vec<u8>,
    pub state_bytes: Vec<u8>,
    pub final_hash: Hash32,
}

impl ArchiveBlob {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(ARCHIVE_MAGIC)
            .bytes(&self.header_bytes)
            .bytes(&self.state_bytes)
            .bytes(&self.final_hash.0);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SidechainError> {
        let corrupt = |e: DecodeError| SidechainError::CorruptBlob(e.to_string());
        let mut r = Reader::new(bytes);
        if r.take(ARCHIVE_MAGIC.len()).map_err(corrupt)? != ARCHIVE_MAGIC {
            return Err(SidechainError::CorruptBlob("bad magic".into()));
        }
        let header_bytes = r.bytes().map_err(corrupt)?.to_vec();
        let state_bytes = r.bytes().map_err(corrupt)?.to_vec();
        let hash = r.bytes().map_err(corrupt)?;
        r.finish().map_err(corrupt)?;
        let final_hash = Hash32(
            hash.try_into()
                .map_err(|_| SidechainError::CorruptBlob("final hash must be 32 bytes".into()))?,
        );
        Ok(ArchiveBlob {
            header_bytes,
            state_bytes,
            final_hash,
        })
    }
}

/// Restores a sidechain from its serialized archive, checking it against the
/// final-state pin held by `stack[0]`. Validators are the funded accounts.
pub fn restore(
    bytes: &[u8],
    stack: &[StackLevel<'_>],
    schedule: GasSchedule,
) -> Result<Sidechain, SidechainError> {
    let blob = ArchiveBlob::from_bytes(bytes)?;
    let header = BlockHeader::from_header_bytes(&blob.header_bytes)
        .map_err(|e| SidechainError::CorruptBlob(format!("header: {e}")))?;
    if digest(&blob.state_bytes) != header.state_commitment {
        return Err(SidechainError::CorruptBlob("state does not match header commitment".into()));
    }
    if digest(&blob.header_bytes) != blob.final_hash {
        return Err(SidechainError::CorruptBlob("header does not match final hash".into()));
    }
    let state = WorldState::from_bytes(&blob.state_bytes)
        .map_err(|e| SidechainError::CorruptBlob(format!("state: {e}")))?;

    let level = stack.first().ok_or(SidechainError::NoPinTarget)?;
    let pin = level
        .node
        .final_state()
        .and_then(|s| s.pinning(&level.pinning).and_then(|p| p.pin_latest(&state.chain_id).ok().copied()))
        .ok_or(SidechainError::NoPinFound)?;
    if pin.block_number != header.number || pin.block_hash != blob.final_hash {
        return Err(SidechainError::PinMismatch);
    }
    if pin_finality(&pin, stack)? != PinStatus::Final {
        return Err(SidechainError::FinalPinNotFinal);
    }

    let validators: Vec<AccountId> = state.accounts().map(|a| a.id).collect();
    let name = state.chain_id.short();
    let view = ChainView::from_checkpoint(header, state, FinalityMode::Instant);
    let mut node = ChainNode::new(
        WorldState::new(Hash32::ZERO),
        FinalityMode::Instant,
        schedule,
        FinalityPolicy {
            confirmations_required: 1,
            block_time_target: schedule.block_time as f64,
        },
        PriceState::default(),
    );
    node.view = view;
    Ok(Sidechain::from_node(&name, validators, node))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::ContractError;

    fn root_with_pinning(sc: &Sidechain) -> (ChainNode, Address) {
        let pin_addr = AccountId::derive("root-pinning");
        let mut g = WorldState::new(Hash32::ZERO);
        for v in &sc.validators {
            g.fund(*v, 1 << 100);
        }
        g.deploy_at(pin_addr, &ContractInit::Pinning);
        g.pinning_mut(&pin_addr)
            .unwrap()
            .insert_sidechain(sc.id, sc.validators[0], &sc.validators);
        let node = ChainNode::new(
            g,
            FinalityMode::Probabilistic,
            GasSchedule::default(),
            FinalityPolicy::default(),
            PriceState::default(),
        );
        (node, pin_addr)
    }

    fn validators() -> Vec<AccountId> {
        (0..3).map(|i| AccountId::derive(&format!("v{i}"))).collect()
    }

    #[test]
    fn pin_lands_and_finalizes_after_z_blocks() {
        let mut sc = Sidechain::new("alpha", validators(), GasSchedule::default());
        let (mut root, pin_addr) = root_with_pinning(&sc);
        sc.pin_target = Some(PinTarget {
            chain: ChainRef::Root,
            contract: pin_addr,
        });
        sc.submit_kv("k", vec![1]).unwrap();
        sc.mint(1).unwrap();
        sc.pin_now(&mut root, 1).unwrap();
        root.mint(AccountId::derive("m"), 14).unwrap();
        let pin = *root.view.head_state().pinning(&pin_addr).unwrap().pin_latest(&sc.id).unwrap();
        assert_eq!(pin.block_number, 1);
        let stack = [StackLevel {
            node: &root,
            pinning: pin_addr,
        }];
        assert_eq!(pin_finality(&pin, &stack), Ok(PinStatus::Pending));
        assert_eq!(sc.archive(&stack), Err(SidechainError::FinalPinNotFinal));
        for t in 2..=13 {
            root.mint(AccountId::derive("m"), 14 * t).unwrap();
        }
        let stack = [StackLevel {
            node: &root,
            pinning: pin_addr,
        }];
        assert_eq!(pin_finality(&pin, &stack), Ok(PinStatus::Final));

        let blob = sc.archive(&stack).unwrap();
        assert_eq!(blob.final_hash, pin.block_hash);
        assert_eq!(sc.submit_kv("k", vec![2]), Err(SidechainError::Archived));
        let bytes = blob.to_bytes();
        assert_eq!(&bytes[..5], b"EPSA1");
        assert_eq!(ArchiveBlob::from_bytes(&bytes).unwrap(), blob);
        let back = restore(&bytes, &stack, GasSchedule::default()).unwrap();
        assert_eq!(back.head().hash, sc.head().hash);
        assert_eq!(back.state_commitment(), sc.state_commitment());
        assert_eq!(back.kv_get("k"), Some(vec![1]));
        assert_eq!(back.id, sc.id);
    }

    #[test]
    fn second_pin_at_same_number_is_stale() {
        let mut sc = Sidechain::new("beta", validators(), GasSchedule::default());
        let (mut root, pin_addr) = root_with_pinning(&sc);
        sc.pin_target = Some(PinTarget {
            chain: ChainRef::Root,
            contract: pin_addr,
        });
        sc.mint(1).unwrap();
        sc.pin_now(&mut root, 1).unwrap();
        sc.pin_now(&mut root, 1).unwrap();
        let (b, _) = root.mint(AccountId::derive("m"), 14).unwrap();
        assert!(b.block.receipts[0].status.is_success());
        assert_eq!(
            b.block.receipts[1].status,
            crate::chain::ReceiptStatus::Reverted(ContractError::StalePin)
        );
    }

    #[test]
    fn no_target() {
        let mut sc = Sidechain::new("gamma", validators(), GasSchedule::default());
        let (mut root, _) = root_with_pinning(&sc);
        assert_eq!(sc.pin_now(&mut root, 1), Err(SidechainError::NoPinTarget));
    }

    #[test]
    fn overlay_discard_leaves_state() {
        let mut sc = Sidechain::new("delta", validators(), GasSchedule::default());
        let before = sc.state_commitment();
        let id = Hash32([5; 32]);
        sc.stage(
            id,
            KvOp::Put {
                key: "x".into(),
                value: vec![1],
            },
        );
        assert!(sc.discard(&id));
        sc.mint(1).unwrap();
        assert_eq!(sc.state_commitment(), before);
    }
}

//! Crosschain coordination contract: started / committed / ignored, with a
//! block-number timeout shared by every sidechain reading the chain.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{CallContext, ContractError};
use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::digest::{AccountId, Address, Hash32, SidechainId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum XtxState {
    Started,
    Committed,
    Ignored,
}

impl XtxState {
    fn tag(self) -> u8 {
        match self {
            XtxState::Started => 0,
            XtxState::Committed => 1,
            XtxState::Ignored => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CrosschainTxRecord {
    pub tx_id: Hash32,
    pub state: XtxState,
    pub timeout_block: u64,
    pub sidechains: BTreeSet<SidechainId>,
    pub initiator: AccountId,
    pub started_at_block: u64,
}

impl Encode for CrosschainTxRecord {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.tx_id)
            .u8(self.state.tag())
            .u64(self.timeout_block)
            .put(&self.sidechains)
            .put(&self.initiator)
            .u64(self.started_at_block);
    }
}

impl Decode for CrosschainTxRecord {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tx_id = r.get()?;
        let state = match r.u8()? {
            0 => XtxState::Started,
            1 => XtxState::Committed,
            2 => XtxState::Ignored,
            tag => return Err(DecodeError::BadTag { what: "xtx state", tag }),
        };
        Ok(CrosschainTxRecord {
            tx_id,
            state,
            timeout_block: r.u64()?,
            sidechains: r.get()?,
            initiator: r.get()?,
            started_at_block: r.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum XtxOp {
    Start {
        tx_id: Hash32,
        sidechains: BTreeSet<SidechainId>,
        timeout_blocks: u64,
    },
    /// `attested` carries the keyset version each leg signed with.
    Commit {
        tx_id: Hash32,
        attested: Vec<(SidechainId, u64)>,
    },
    Ignore {
        tx_id: Hash32,
    },
}

impl XtxOp {
    pub(super) fn op_name(&self) -> &'static str {
        match self {
            XtxOp::Start { .. } => "xtx_start",
            XtxOp::Commit { .. } => "xtx_commit",
            XtxOp::Ignore { .. } => "xtx_ignore",
        }
    }

    pub(super) fn encode_args(&self, w: &mut Writer) {
        match self {
            XtxOp::Start {
                tx_id,
                sidechains,
                timeout_blocks,
            } => {
                w.put(tx_id).put(sidechains).u64(*timeout_blocks);
            }
            XtxOp::Commit { tx_id, attested } => {
                w.put(tx_id).u32(attested.len() as u32);
                for (id, v) in attested {
                    w.put(id).u64(*v);
                }
            }
            XtxOp::Ignore { tx_id } => {
                w.put(tx_id);
            }
        }
    }

    pub(super) fn decode_args(name: &str, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tx_id = r.get()?;
        Ok(match name {
            "xtx_start" => XtxOp::Start {
                tx_id,
                sidechains: r.get()?,
                timeout_blocks: r.u64()?,
            },
            "xtx_commit" => {
                let n = r.u32()?;
                let mut attested = Vec::new();
                for _ in 0..n {
                    attested.push((r.get()?, r.u64()?));
                }
                XtxOp::Commit { tx_id, attested }
            }
            _ => XtxOp::Ignore { tx_id },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrosschainContract {
    keyset_registry: Address,
    txs: BTreeMap<Hash32, CrosschainTxRecord>,
}

impl CrosschainContract {
    pub fn new(keyset_registry: Address) -> Self {
        CrosschainContract {
            keyset_registry,
            txs: BTreeMap::new(),
        }
    }

    pub fn keyset_registry(&self) -> Address {
        self.keyset_registry
    }

    pub fn record(&self, tx_id: &Hash32) -> Result<&CrosschainTxRecord, ContractError> {
        self.txs.get(tx_id).ok_or(ContractError::NotStarted)
    }

    /// Status as seen by a reader at `at_block`. An undecided transaction
    /// past its timeout reads as `Ignored` without any further transaction.
    pub fn status(&self, tx_id: &Hash32, at_block: u64) -> Result<XtxState, ContractError> {
        let rec = self.record(tx_id)?;
        Ok(match rec.state {
            XtxState::Started if at_block > rec.timeout_block => XtxState::Ignored,
            s => s,
        })
    }

    /// `active_version` resolves a sidechain's active keyset version in the
    /// keyset registry at execution time.
    pub(crate) fn execute(
        &mut self,
        ctx: &CallContext,
        op: &XtxOp,
        active_version: impl Fn(&SidechainId) -> Option<u64>,
    ) -> Result<(), ContractError> {
        match op {
            XtxOp::Start {
                tx_id,
                sidechains,
                timeout_blocks,
            } => {
                if self.txs.contains_key(tx_id) {
                    return Err(ContractError::DuplicateTxId);
                }
                if sidechains.len() < 2 {
                    return Err(ContractError::TooFewSidechains);
                }
                self.txs.insert(
                    *tx_id,
                    CrosschainTxRecord {
                        tx_id: *tx_id,
                        state: XtxState::Started,
                        timeout_block: ctx.block.number.saturating_add(*timeout_blocks),
                        sidechains: sidechains.clone(),
                        initiator: ctx.sender,
                        started_at_block: ctx.block.number,
                    },
                );
                Ok(())
            }
            XtxOp::Commit { tx_id, attested } => {
                let rec = self.txs.get_mut(tx_id).ok_or(ContractError::NotStarted)?;
                if rec.initiator != ctx.sender {
                    return Err(ContractError::NotInitiator);
                }
                if rec.state != XtxState::Started {
                    return Err(ContractError::AlreadyDecided);
                }
                if ctx.block.number > rec.timeout_block {
                    return Err(ContractError::TimeoutExpired);
                }
                for sc in &rec.sidechains {
                    let signed = attested.iter().find(|(id, _)| id == sc).map(|(_, v)| *v);
                    match (signed, active_version(sc)) {
                        (Some(v), Some(active)) if v == active => {}
                        _ => return Err(ContractError::StaleAttestation),
                    }
                }
                rec.state = XtxState::Committed;
                Ok(())
            }
            XtxOp::Ignore { tx_id } => {
                let rec = self.txs.get_mut(tx_id).ok_or(ContractError::NotStarted)?;
                if rec.initiator != ctx.sender {
                    return Err(ContractError::NotInitiator);
                }
                if rec.state != XtxState::Started {
                    return Err(ContractError::AlreadyDecided);
                }
                rec.state = XtxState::Ignored;
                Ok(())
            }
        }
    }
}

impl Encode for CrosschainContract {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.keyset_registry).put(&self.txs);
    }
}

impl Decode for CrosschainContract {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(CrosschainContract {
            keyset_registry: r.get()?,
            txs: r.get()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::BlockContext;
    use crate::digest::sidechain_id;

    fn at(n: u64) -> CallContext {
        CallContext {
            sender: AccountId::derive("init"),
            block: BlockContext {
                number: n,
                timestamp: 0,
                miner: AccountId::default(),
            },
        }
    }

    fn legs() -> BTreeSet<SidechainId> {
        [sidechain_id("a"), sidechain_id("b")].into_iter().collect()
    }

    fn attested() -> Vec<(SidechainId, u64)> {
        legs().into_iter().map(|s| (s, 1)).collect()
    }

    fn started(timeout_block: u64) -> (CrosschainContract, Hash32) {
        let mut c = CrosschainContract::new(AccountId::default());
        let id = Hash32([1; 32]);
        // started at block 0, so timeout_block == timeout_blocks
        c.execute(
            &at(0),
            &XtxOp::Start {
                tx_id: id,
                sidechains: legs(),
                timeout_blocks: timeout_block,
            },
            |_| Some(1),
        )
        .unwrap();
        (c, id)
    }

    #[test]
    fn commit_before_timeout() {
        let (mut c, id) = started(100);
        c.execute(&at(90), &XtxOp::Commit { tx_id: id, attested: attested() }, |_| Some(1))
            .unwrap();
        assert_eq!(c.status(&id, 90), Ok(XtxState::Committed));
        assert_eq!(c.status(&id, 500), Ok(XtxState::Committed));
    }

    #[test]
    fn undecided_reads_ignored_after_timeout() {
        let (c, id) = started(100);
        assert_eq!(c.status(&id, 100), Ok(XtxState::Started));
        assert_eq!(c.status(&id, 101), Ok(XtxState::Ignored));
    }

    #[test]
    fn commit_after_timeout_rejected() {
        let (mut c, id) = started(100);
        assert_eq!(
            c.execute(&at(101), &XtxOp::Commit { tx_id: id, attested: attested() }, |_| Some(1)),
            Err(ContractError::TimeoutExpired)
        );
        // ignore is still accepted while Started
        c.execute(&at(102), &XtxOp::Ignore { tx_id: id }, |_| Some(1)).unwrap();
        assert_eq!(c.status(&id, 102), Ok(XtxState::Ignored));
    }

    #[test]
    fn decisions_are_final() {
        let (mut c, id) = started(100);
        c.execute(&at(5), &XtxOp::Ignore { tx_id: id }, |_| Some(1)).unwrap();
        assert_eq!(
            c.execute(&at(6), &XtxOp::Commit { tx_id: id, attested: attested() }, |_| Some(1)),
            Err(ContractError::AlreadyDecided)
        );
        assert_eq!(
            c.execute(&at(6), &XtxOp::Ignore { tx_id: id }, |_| Some(1)),
            Err(ContractError::AlreadyDecided)
        );
    }

    #[test]
    fn stale_attestation_rejected() {
        let (mut c, id) = started(100);
        assert_eq!(
            c.execute(&at(5), &XtxOp::Commit { tx_id: id, attested: attested() }, |_| Some(2)),
            Err(ContractError::StaleAttestation)
        );
        let partial = vec![attested()[0]];
        assert_eq!(
            c.execute(&at(5), &XtxOp::Commit { tx_id: id, attested: partial }, |_| Some(1)),
            Err(ContractError::StaleAttestation)
        );
    }

    #[test]
    fn start_errors() {
        let (mut c, id) = started(10);
        assert_eq!(
            c.execute(
                &at(1),
                &XtxOp::Start {
                    tx_id: id,
                    sidechains: legs(),
                    timeout_blocks: 5
                },
                |_| None
            ),
            Err(ContractError::DuplicateTxId)
        );
        let one: BTreeSet<_> = [sidechain_id("a")].into_iter().collect();
        assert_eq!(
            c.execute(
                &at(1),
                &XtxOp::Start {
                    tx_id: Hash32([2; 32]),
                    sidechains: one,
                    timeout_blocks: 5
                },
                |_| None
            ),
            Err(ContractError::TooFewSidechains)
        );
        assert_eq!(c.status(&Hash32([3; 32]), 0), Err(ContractError::NotStarted));
        let mut other = at(2);
        other.sender = AccountId::derive("x");
        assert_eq!(
            c.execute(&other, &XtxOp::Ignore { tx_id: id }, |_| None),
            Err(ContractError::NotInitiator)
        );
    }
}

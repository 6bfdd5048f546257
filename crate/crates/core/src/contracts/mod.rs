//! Coordination contracts as deterministic state machines.
//!
//! Every mutation arrives as a [`ContractOp`] inside a transaction and is
//! executed by `chain::exec`. Reads are view calls against the state of a
//! chosen block and cost nothing.

mod crosschain;
mod kv;
mod pinning;
mod registry;

pub use crosschain::{CrosschainContract, CrosschainTxRecord, XtxOp, XtxState};
pub use kv::{KvOp, KvStore};
pub use pinning::{
    majority_reached, KeysetRecord, KeysetStatus, ParticipantRecord, ParticipantStatus, PinRecord,
    PinningContract, PinningOp, SidechainEntry, KEYSET_KEY_LEN,
};
pub use registry::{Endpoint, Registry, RegistryEntry, RegistryOp, RegistryRecord};

use serde::Serialize;
use thiserror::Error;

use crate::chain::BlockContext;
use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::digest::{AccountId, Address};
use crate::gas::GasSchedule;

/// Gas charged per stored 32-byte word for operations without a fixed cost.
pub const GAS_PER_WORD: u64 = 20_000;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum ContractError {
    #[error("domain already registered")]
    DomainTaken,
    #[error("caller is not the owner")]
    NotOwner,
    #[error("not found")]
    NotFound,
    #[error("malformed domain name")]
    InvalidDomain,
    #[error("caller is not an unmasked participant")]
    NotParticipant,
    #[error("pin does not advance the latest pinned block")]
    StalePin,
    #[error("unknown sidechain")]
    UnknownSidechain,
    #[error("sidechain already registered")]
    SidechainExists,
    #[error("reveal does not match any masked commitment")]
    BadReveal,
    #[error("keyset version must be active version + 1")]
    BadVersion,
    #[error("public key must be 48 bytes")]
    BadKey,
    #[error("voter already voted")]
    AlreadyVoted,
    #[error("nothing proposed or active")]
    NothingProposed,
    #[error("crosschain transaction id already used")]
    DuplicateTxId,
    #[error("crosschain transaction not started")]
    NotStarted,
    #[error("crosschain transaction already decided")]
    AlreadyDecided,
    #[error("commit after timeout block")]
    TimeoutExpired,
    #[error("attestation keyset version is not the active version")]
    StaleAttestation,
    #[error("caller is not the initiator")]
    NotInitiator,
    #[error("crosschain transaction needs at least two sidechains")]
    TooFewSidechains,
    #[error("no contract at address")]
    NoSuchContract,
    #[error("operation not supported by this contract")]
    WrongContract,
}

/// Constructor arguments for a contract-creation transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContractInit {
    Registry,
    Pinning,
    /// The crosschain contract checks attestations against this pinning contract.
    Crosschain { keyset_registry: Address },
    Kv,
}

impl ContractInit {
    pub fn instantiate(&self) -> Contract {
        match self {
            ContractInit::Registry => Contract::Registry(Registry::default()),
            ContractInit::Pinning => Contract::Pinning(PinningContract::default()),
            ContractInit::Crosschain { keyset_registry } => {
                Contract::Crosschain(CrosschainContract::new(*keyset_registry))
            }
            ContractInit::Kv => Contract::Kv(KvStore::default()),
        }
    }
}

impl Encode for ContractInit {
    fn encode(&self, w: &mut Writer) {
        match self {
            ContractInit::Registry => {
                w.u8(0);
            }
            ContractInit::Pinning => {
                w.u8(1);
            }
            ContractInit::Crosschain { keyset_registry } => {
                w.u8(2).put(keyset_registry);
            }
            ContractInit::Kv => {
                w.u8(3);
            }
        }
    }
}

impl Decode for ContractInit {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(ContractInit::Registry),
            1 => Ok(ContractInit::Pinning),
            2 => Ok(ContractInit::Crosschain {
                keyset_registry: r.get()?,
            }),
            3 => Ok(ContractInit::Kv),
            tag => Err(DecodeError::BadTag {
                what: "contract init",
                tag,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Contract {
    Registry(Registry),
    Pinning(PinningContract),
    Crosschain(CrosschainContract),
    Kv(KvStore),
}

impl Contract {
    pub fn as_registry(&self) -> Option<&Registry> {
        match self {
            Contract::Registry(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_pinning(&self) -> Option<&PinningContract> {
        match self {
            Contract::Pinning(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_crosschain(&self) -> Option<&CrosschainContract> {
        match self {
            Contract::Crosschain(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_kv(&self) -> Option<&KvStore> {
        match self {
            Contract::Kv(c) => Some(c),
            _ => None,
        }
    }
}

impl Encode for Contract {
    fn encode(&self, w: &mut Writer) {
        match self {
            Contract::Registry(c) => {
                w.u8(0).put(c);
            }
            Contract::Pinning(c) => {
                w.u8(1).put(c);
            }
            Contract::Crosschain(c) => {
                w.u8(2).put(c);
            }
            Contract::Kv(c) => {
                w.u8(3).put(c);
            }
        }
    }
}

impl Decode for Contract {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(Contract::Registry(r.get()?)),
            1 => Ok(Contract::Pinning(r.get()?)),
            2 => Ok(Contract::Crosschain(r.get()?)),
            3 => Ok(Contract::Kv(r.get()?)),
            tag => Err(DecodeError::BadTag {
                what: "contract",
                tag,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContractOp {
    Registry(RegistryOp),
    Pinning(PinningOp),
    Crosschain(XtxOp),
    Kv(KvOp),
}

impl ContractOp {
    pub fn op_name(&self) -> &'static str {
        match self {
            ContractOp::Registry(op) => op.op_name(),
            ContractOp::Pinning(op) => op.op_name(),
            ContractOp::Crosschain(op) => op.op_name(),
            ContractOp::Kv(op) => op.op_name(),
        }
    }

    pub fn args_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            ContractOp::Registry(op) => op.encode_args(&mut w),
            ContractOp::Pinning(op) => op.encode_args(&mut w),
            ContractOp::Crosschain(op) => op.encode_args(&mut w),
            ContractOp::Kv(op) => op.encode_args(&mut w),
        }
        w.into_bytes()
    }

    /// Wire form of a call: contract address, op name, length-prefixed args.
    pub fn to_call_bytes(&self, contract: &Address) -> Vec<u8> {
        let mut w = Writer::new();
        w.put(contract).put(self.op_name()).bytes(&self.args_bytes());
        w.into_bytes()
    }

    pub fn from_call_bytes(bytes: &[u8]) -> Result<(Address, ContractOp), DecodeError> {
        let mut r = Reader::new(bytes);
        let contract: AccountId = r.get()?;
        let name: String = r.get()?;
        let args = r.bytes()?;
        r.finish()?;
        let mut ar = Reader::new(args);
        let op = match name.as_str() {
            "register" | "update" => ContractOp::Registry(RegistryOp::decode_args(&name, &mut ar)?),
            "create_sidechain" | "add_masked" | "unmask" | "pin_add" | "keyset_propose"
            | "keyset_vote" => ContractOp::Pinning(PinningOp::decode_args(&name, &mut ar)?),
            "xtx_start" | "xtx_commit" | "xtx_ignore" => {
                ContractOp::Crosschain(XtxOp::decode_args(&name, &mut ar)?)
            }
            "kv_put" => ContractOp::Kv(KvOp::decode_args(&name, &mut ar)?),
            _ => return Err(DecodeError::NonCanonical("unknown op name")),
        };
        ar.finish()?;
        Ok((contract, op))
    }

    /// Fixed gas cost of the operation, intrinsic cost included.
    pub fn gas_cost(&self, schedule: &GasSchedule) -> u64 {
        match self {
            ContractOp::Pinning(PinningOp::PinAdd { .. }) => schedule.pin_tx_gas,
            ContractOp::Pinning(PinningOp::KeysetPropose { .. }) => {
                schedule.intrinsic_tx_gas + schedule.keyset_store_gas
            }
            _ => {
                let words = self.args_bytes().len().div_ceil(32) as u64;
                schedule.intrinsic_tx_gas + GAS_PER_WORD * words
            }
        }
    }
}

/// Execution context handed to a contract for one call.
#[derive(Debug, Clone, Copy)]
pub struct CallContext {
    pub sender: AccountId,
    pub block: BlockContext,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::{sidechain_id, Hash32};

    #[test]
    fn call_bytes_roundtrip_every_op() {
        let id = sidechain_id("alpha");
        let ops = vec![
            ContractOp::Registry(RegistryOp::Register(RegistryRecord {
                domain: "example.com".into(),
                node_endpoints: vec![Endpoint {
                    host: "10.0.0.1".into(),
                    port: 30303,
                }],
                key_fingerprints: vec![Hash32([3; 32])],
            })),
            ContractOp::Pinning(PinningOp::PinAdd {
                sidechain: id,
                block_number: 9,
                block_hash: Hash32([1; 32]),
            }),
            ContractOp::Pinning(PinningOp::Unmask {
                sidechain: id,
                salt: vec![1, 2, 3],
                account: AccountId::derive("a"),
            }),
            ContractOp::Crosschain(XtxOp::Commit {
                tx_id: Hash32([4; 32]),
                attested: vec![(id, 2)],
            }),
            ContractOp::Kv(KvOp::Put {
                key: "x".into(),
                value: vec![9],
            }),
        ];
        let addr = AccountId::derive("c");
        for op in ops {
            let bytes = op.to_call_bytes(&addr);
            let (a, back) = ContractOp::from_call_bytes(&bytes).unwrap();
            assert_eq!(a, addr);
            assert_eq!(back, op);
        }
    }

    #[test]
    fn fixed_gas_costs() {
        let s = GasSchedule::default();
        let pin = ContractOp::Pinning(PinningOp::PinAdd {
            sidechain: Hash32::ZERO,
            block_number: 1,
            block_hash: Hash32::ZERO,
        });
        assert_eq!(pin.gas_cost(&s), 64_972);
        let key = ContractOp::Pinning(PinningOp::KeysetPropose {
            sidechain: Hash32::ZERO,
            version: 1,
            public_key: vec![0; 48],
        });
        assert_eq!(key.gas_cost(&s), 21_000 + 60_000);
        // "k" and an empty value encode to 9 bytes: one word
        let kv = ContractOp::Kv(KvOp::Put {
            key: "k".into(),
            value: vec![],
        });
        assert_eq!(kv.gas_cost(&s), 41_000);
    }
}

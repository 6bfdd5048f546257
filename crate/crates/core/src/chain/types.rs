use serde::Serialize;

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::contracts::{ContractError, ContractInit, ContractOp};
use crate::digest::{digest, Address, AccountId, Hash32};

/// Largest nonce representable by a 64-bit signed counter.
pub const MAX_NONCE: u64 = (1u64 << 63) - 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockHeader {
    pub hash: Hash32,
    pub parent_hash: Hash32,
    pub number: u64,
    pub weight: u64,
    pub miner: AccountId,
    pub timestamp: u64,
    pub tx_commitment: Hash32,
    pub state_commitment: Hash32,
    pub uncle_count: u64,
}

impl BlockHeader {
    /// Builds a header and computes its hash from the other fields.
    #[allow(clippy::too_many_arguments)]
    pub fn seal(
        parent_hash: Hash32,
        number: u64,
        weight: u64,
        miner: AccountId,
        timestamp: u64,
        tx_commitment: Hash32,
        state_commitment: Hash32,
        uncle_count: u64,
    ) -> BlockHeader {
        let mut h = BlockHeader {
            hash: Hash32::ZERO,
            parent_hash,
            number,
            weight,
            miner,
            timestamp,
            tx_commitment,
            state_commitment,
            uncle_count,
        };
        h.hash = digest(&h.header_bytes());
        h
    }

    /// Canonical serialization of every field except `hash`; `hash` is its digest.
    pub fn header_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.put(&self.parent_hash)
            .u64(self.number)
            .u64(self.weight)
            .put(&self.miner)
            .u64(self.timestamp)
            .put(&self.tx_commitment)
            .put(&self.state_commitment)
            .u64(self.uncle_count);
        w.into_bytes()
    }

    /// Inverse of [`BlockHeader::header_bytes`]; the hash is recomputed.
    pub fn from_header_bytes(bytes: &[u8]) -> Result<BlockHeader, DecodeError> {
        let mut r = Reader::new(bytes);
        let parent_hash = r.get()?;
        let number = r.u64()?;
        let weight = r.u64()?;
        let miner = r.get()?;
        let timestamp = r.u64()?;
        let tx_commitment = r.get()?;
        let state_commitment = r.get()?;
        let uncle_count = r.u64()?;
        r.finish()?;
        Ok(BlockHeader::seal(
            parent_hash,
            number,
            weight,
            miner,
            timestamp,
            tx_commitment,
            state_commitment,
            uncle_count,
        ))
    }

    pub fn verify_hash(&self) -> bool {
        digest(&self.header_bytes()) == self.hash
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Transfer { to: AccountId, amount: u128 },
    Create(ContractInit),
    Call { contract: Address, op: ContractOp },
}

impl Encode for Payload {
    fn encode(&self, w: &mut Writer) {
        match self {
            Payload::Transfer { to, amount } => {
                w.u8(0).put(to).u128(*amount);
            }
            Payload::Create(init) => {
                w.u8(1).put(init);
            }
            Payload::Call { contract, op } => {
                w.u8(2).bytes(&op.to_call_bytes(contract));
            }
        }
    }
}

impl Decode for Payload {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(Payload::Transfer {
                to: r.get()?,
                amount: r.u128()?,
            }),
            1 => Ok(Payload::Create(r.get()?)),
            2 => {
                let (contract, op) = ContractOp::from_call_bytes(r.bytes()?)?;
                Ok(Payload::Call { contract, op })
            }
            tag => Err(DecodeError::BadTag {
                what: "payload",
                tag,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub sender: AccountId,
    pub nonce: u64,
    pub gas_limit: u64,
    /// Wei per gas.
    pub gas_price: u128,
    pub payload: Payload,
    /// Stands in for a valid signature over the other fields.
    pub authorized: bool,
}

impl Transaction {
    pub fn call(sender: AccountId, nonce: u64, gas_price: u128, contract: Address, op: ContractOp) -> Self {
        Transaction {
            sender,
            nonce,
            gas_limit: 0,
            gas_price,
            payload: Payload::Call { contract, op },
            authorized: true,
        }
    }

    pub fn with_gas_limit(mut self, gas_limit: u64) -> Self {
        self.gas_limit = gas_limit;
        self
    }

    pub fn hash(&self) -> Hash32 {
        digest(&self.to_bytes())
    }
}

impl Encode for Transaction {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.sender)
            .u64(self.nonce)
            .u64(self.gas_limit)
            .u128(self.gas_price)
            .put(&self.payload)
            .put(&self.authorized);
    }
}

impl Decode for Transaction {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            sender: r.get()?,
            nonce: r.u64()?,
            gas_limit: r.u64()?,
            gas_price: r.u128()?,
            payload: r.get()?,
            authorized: r.get()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Account {
    pub id: AccountId,
    pub nonce: u64,
    /// Wei.
    pub balance: u128,
}

impl Encode for Account {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.id).u64(self.nonce).u128(self.balance);
    }
}

impl Decode for Account {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Account {
            id: r.get()?,
            nonce: r.u64()?,
            balance: r.u128()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReceiptStatus {
    Success,
    /// Gas limit below the operation cost; the whole limit is consumed.
    OutOfGas,
    /// The contract rejected the call; gas is charged, state is untouched.
    Reverted(ContractError),
}

impl ReceiptStatus {
    pub fn is_success(&self) -> bool {
        matches!(self, ReceiptStatus::Success)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub tx_hash: Hash32,
    pub sender: AccountId,
    pub status: ReceiptStatus,
    pub gas_used: u64,
    /// gas_used * gas_price, in wei.
    pub fee: u128,
}

/// Block execution context visible to contracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockContext {
    pub number: u64,
    pub timestamp: u64,
    pub miner: AccountId,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub header: BlockHeader,
    pub txs: Vec<Transaction>,
    pub receipts: Vec<Receipt>,
}

/// Digest over the ordered list of transaction hashes.
pub fn tx_commitment(txs: &[Transaction]) -> Hash32 {
    let mut w = Writer::new();
    w.u32(txs.len() as u32);
    for tx in txs {
        w.put(&tx.hash());
    }
    digest(&w.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::KvOp;

    fn sample_header() -> BlockHeader {
        BlockHeader::seal(
            Hash32([7; 32]),
            3,
            4,
            AccountId::derive("m"),
            42,
            Hash32([1; 32]),
            Hash32([2; 32]),
            1,
        )
    }

    #[test]
    fn header_hash_covers_every_field() {
        let h = sample_header();
        assert!(h.verify_hash());
        let mut t = h.clone();
        t.timestamp += 1;
        assert!(!t.verify_hash());
        let mut u = h.clone();
        u.uncle_count = 0;
        assert!(!u.verify_hash());
    }

    #[test]
    fn header_bytes_layout_is_fixed() {
        let h = sample_header();
        let b = h.header_bytes();
        assert_eq!(b.len(), 32 + 8 + 8 + 20 + 8 + 32 + 32 + 8);
        assert_eq!(&b[32..40], &3u64.to_be_bytes());
        assert_eq!(BlockHeader::from_header_bytes(&b).unwrap(), h);
    }

    #[test]
    fn transaction_roundtrip() {
        let tx = Transaction::call(
            AccountId::derive("a"),
            5,
            9,
            AccountId::derive("kv"),
            ContractOp::Kv(KvOp::Put {
                key: "k".into(),
                value: vec![1, 2],
            }),
        )
        .with_gas_limit(100_000);
        let bytes = tx.to_bytes();
        assert_eq!(Transaction::from_bytes(&bytes).unwrap(), tx);
    }
}

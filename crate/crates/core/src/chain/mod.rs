//! Blocks, transactions, accounts, fork choice and reorgs.

mod exec;
mod mempool;
mod node;
mod state;
mod types;
mod view;

pub use exec::{apply_transaction, create_tx, payload_gas, TxError, CREATE_GAS};
pub use mempool::Mempool;
pub use node::{ChainNode, HeadChange, TxTracker};
pub use state::{contract_address, WorldState};
pub use types::{
    tx_commitment, Account, Block, BlockContext, BlockHeader, Payload, Receipt, ReceiptStatus,
    Transaction, MAX_NONCE,
};
pub use view::{BuiltBlock, ChainError, ChainView, ReorgReport};

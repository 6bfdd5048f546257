use thiserror::Error;

use crate::contracts::{CallContext, Contract, ContractError, ContractInit, ContractOp};
use crate::digest::{Address, SidechainId};
use crate::gas::GasSchedule;

use super::state::{contract_address, WorldState};
use super::types::{BlockContext, Payload, Receipt, ReceiptStatus, Transaction, MAX_NONCE};

/// Gas for deploying a contract on top of the intrinsic cost.
pub const CREATE_GAS: u64 = 32_000;

/// Reasons a transaction cannot be included at all. Included-but-failed
/// transactions produce a receipt with a non-success status instead.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("transaction not authorized by the sender")]
    Unauthorized,
    #[error("bad nonce: expected {expected}, got {got}")]
    BadNonce { expected: u64, got: u64 },
    #[error("insufficient balance: need {need}, have {have}")]
    InsufficientBalance { need: u128, have: u128 },
    #[error("gas limit {gas_limit} exceeds remaining block gas {budget}")]
    BlockGasExceeded { gas_limit: u64, budget: u64 },
    #[error("nonce counter would overflow")]
    NonceOverflow,
    #[error("unknown sender account")]
    UnknownSender,
}

pub fn payload_gas(payload: &Payload, schedule: &GasSchedule) -> u64 {
    match payload {
        Payload::Transfer { .. } => schedule.intrinsic_tx_gas,
        Payload::Create(_) => schedule.intrinsic_tx_gas + CREATE_GAS,
        Payload::Call { op, .. } => op.gas_cost(schedule),
    }
}

/// Applies one transaction. On `Err` the state is untouched. On `Ok` the
/// sender's nonce advanced and its balance paid `gas_used * gas_price`; the
/// receipt status says whether the payload itself took effect.
pub fn apply_transaction(
    state: &mut WorldState,
    tx: &Transaction,
    ctx: &BlockContext,
    gas_budget_left: u64,
    schedule: &GasSchedule,
) -> Result<Receipt, TxError> {
    if !tx.authorized {
        return Err(TxError::Unauthorized);
    }
    if tx.gas_limit > gas_budget_left {
        return Err(TxError::BlockGasExceeded {
            gas_limit: tx.gas_limit,
            budget: gas_budget_left,
        });
    }
    let acct = *state.account(&tx.sender).ok_or(TxError::UnknownSender)?;
    if tx.nonce != acct.nonce {
        return Err(TxError::BadNonce {
            expected: acct.nonce,
            got: tx.nonce,
        });
    }
    if acct.nonce >= MAX_NONCE {
        return Err(TxError::NonceOverflow);
    }
    let value = match &tx.payload {
        Payload::Transfer { amount, .. } => *amount,
        _ => 0,
    };
    let max_fee = (tx.gas_limit as u128).saturating_mul(tx.gas_price);
    let need = max_fee.saturating_add(value);
    if acct.balance < need {
        return Err(TxError::InsufficientBalance {
            need,
            have: acct.balance,
        });
    }

    let cost = payload_gas(&tx.payload, schedule);
    let (status, gas_used) = if tx.gas_limit < cost {
        (ReceiptStatus::OutOfGas, tx.gas_limit)
    } else {
        let call = CallContext {
            sender: tx.sender,
            block: *ctx,
        };
        match execute_payload(state, &call, tx) {
            Ok(()) => (ReceiptStatus::Success, cost),
            Err(e) => (ReceiptStatus::Reverted(e), cost),
        }
    };

    let fee = (gas_used as u128).saturating_mul(tx.gas_price);
    let sender = state
        .account_mut(&tx.sender)
        .expect("sender checked above");
    sender.nonce += 1;
    sender.balance -= fee;
    if status.is_success() {
        sender.balance -= value;
    }
    state.credit(ctx.miner, fee);

    Ok(Receipt {
        tx_hash: tx.hash(),
        sender: tx.sender,
        status,
        gas_used,
        fee,
    })
}

fn execute_payload(state: &mut WorldState, call: &CallContext, tx: &Transaction) -> Result<(), ContractError> {
    match &tx.payload {
        Payload::Transfer { to, amount } => {
            state.credit(*to, *amount);
            Ok(())
        }
        Payload::Create(init) => {
            let addr = contract_address(&tx.sender, tx.nonce);
            state.deploy_at(addr, init);
            Ok(())
        }
        Payload::Call { contract, op } => execute_call(state, call, contract, op),
    }
}

/// Runs `op` against a copy of the target contract and commits the copy on success.
fn execute_call(
    state: &mut WorldState,
    call: &CallContext,
    address: &Address,
    op: &ContractOp,
) -> Result<(), ContractError> {
    let mut target = state
        .contract(address)
        .cloned()
        .ok_or(ContractError::NoSuchContract)?;
    match (&mut target, op) {
        (Contract::Registry(c), ContractOp::Registry(op)) => c.execute(call, op)?,
        (Contract::Pinning(c), ContractOp::Pinning(op)) => c.execute(call, op)?,
        (Contract::Kv(c), ContractOp::Kv(op)) => c.execute(op)?,
        (Contract::Crosschain(c), ContractOp::Crosschain(op)) => {
            let registry = c.keyset_registry();
            let pinning = state.pinning(&registry);
            let active = |id: &SidechainId| -> Option<u64> {
                pinning.and_then(|p| p.keyset_active(id).ok()).map(|k| k.version)
            };
            c.execute(call, op, active)?
        }
        _ => return Err(ContractError::WrongContract),
    }
    state.contracts_mut().insert(*address, target);
    Ok(())
}

/// Convenience constructor for a contract-creation transaction.
pub fn create_tx(sender: crate::digest::AccountId, nonce: u64, init: ContractInit, gas_price: u128) -> Transaction {
    Transaction {
        sender,
        nonce,
        gas_limit: 21_000 + CREATE_GAS,
        gas_price,
        payload: Payload::Create(init),
        authorized: true,
    }
}

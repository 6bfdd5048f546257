use std::collections::BTreeMap;

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::contracts::{
    Contract, ContractInit, CrosschainContract, KvStore, PinningContract, Registry,
};
use crate::digest::{digest, digest_parts, AccountId, Address, Hash32};

use super::types::Account;

/// Accounts plus deployed contracts for one chain. The chain id is part of
/// the state so an archived state identifies the chain it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub chain_id: Hash32,
    accounts: BTreeMap<AccountId, Account>,
    contracts: BTreeMap<Address, Contract>,
}

impl WorldState {
    pub fn new(chain_id: Hash32) -> Self {
        WorldState {
            chain_id,
            accounts: BTreeMap::new(),
            contracts: BTreeMap::new(),
        }
    }

    /// Creates or tops up an account (genesis funding).
    pub fn fund(&mut self, id: AccountId, balance: u128) {
        let acct = self.accounts.entry(id).or_insert(Account {
            id,
            nonce: 0,
            balance: 0,
        });
        acct.balance = acct.balance.saturating_add(balance);
    }

    pub fn deploy_at(&mut self, address: Address, init: &ContractInit) {
        self.contracts.insert(address, init.instantiate());
    }

    pub fn account(&self, id: &AccountId) -> Option<&Account> {
        self.accounts.get(id)
    }

    pub(crate) fn account_mut(&mut self, id: &AccountId) -> Option<&mut Account> {
        self.accounts.get_mut(id)
    }

    pub(crate) fn credit(&mut self, id: AccountId, amount: u128) {
        self.fund(id, amount);
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn contract(&self, address: &Address) -> Option<&Contract> {
        self.contracts.get(address)
    }

    pub(crate) fn contracts_mut(&mut self) -> &mut BTreeMap<Address, Contract> {
        &mut self.contracts
    }

    pub fn registry(&self, address: &Address) -> Option<&Registry> {
        self.contract(address).and_then(Contract::as_registry)
    }

    pub fn pinning(&self, address: &Address) -> Option<&PinningContract> {
        self.contract(address).and_then(Contract::as_pinning)
    }

    /// Mutable access for genesis setup only.
    pub fn pinning_mut(&mut self, address: &Address) -> Option<&mut PinningContract> {
        match self.contracts.get_mut(address) {
            Some(Contract::Pinning(c)) => Some(c),
            _ => None,
        }
    }

    pub fn crosschain(&self, address: &Address) -> Option<&CrosschainContract> {
        self.contract(address).and_then(Contract::as_crosschain)
    }

    pub fn kv(&self, address: &Address) -> Option<&KvStore> {
        self.contract(address).and_then(Contract::as_kv)
    }

    /// Digest of the canonical serialization.
    pub fn commitment(&self) -> Hash32 {
        digest(&self.to_bytes())
    }
}

/// Address of a contract created by `sender` at `nonce`.
pub fn contract_address(sender: &AccountId, nonce: u64) -> Address {
    let d = digest_parts(&[&sender.0, &nonce.to_be_bytes()]);
    let mut a = [0u8; 20];
    a.copy_from_slice(&d.0[12..]);
    AccountId(a)
}

impl Encode for WorldState {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.chain_id).u32(self.accounts.len() as u32);
        for acct in self.accounts.values() {
            w.put(acct);
        }
        w.put(&self.contracts);
    }
}

impl Decode for WorldState {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let chain_id = r.get()?;
        let n = r.u32()?;
        let mut accounts = BTreeMap::new();
        let mut last: Option<AccountId> = None;
        for _ in 0..n {
            let a: Account = r.get()?;
            if last.is_some_and(|p| p >= a.id) {
                return Err(DecodeError::NonCanonical("accounts out of order"));
            }
            last = Some(a.id);
            accounts.insert(a.id, a);
        }
        Ok(WorldState {
            chain_id,
            accounts,
            contracts: r.get()?,
        })
    }
}

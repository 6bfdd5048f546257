//! Registration authority: domain name -> node endpoints and key fingerprints.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{CallContext, ContractError};
use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::digest::{AccountId, Hash32};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

impl Encode for Endpoint {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.host).u32(self.port as u32);
    }
}

impl Decode for Endpoint {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let host = r.get()?;
        let port = r.u32()?;
        let port = u16::try_from(port).map_err(|_| DecodeError::NonCanonical("port"))?;
        Ok(Endpoint { host, port })
    }
}

/// Caller-supplied part of an entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryRecord {
    pub domain: String,
    pub node_endpoints: Vec<Endpoint>,
    pub key_fingerprints: Vec<Hash32>,
}

impl Encode for RegistryRecord {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.domain)
            .put(&self.node_endpoints)
            .put(&self.key_fingerprints);
    }
}

impl Decode for RegistryRecord {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(RegistryRecord {
            domain: r.get()?,
            node_endpoints: r.get()?,
            key_fingerprints: r.get()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistryEntry {
    pub domain: String,
    pub owner: AccountId,
    pub node_endpoints: Vec<Endpoint>,
    pub key_fingerprints: Vec<Hash32>,
    pub updated_at_block: u64,
}

impl Encode for RegistryEntry {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.domain)
            .put(&self.owner)
            .put(&self.node_endpoints)
            .put(&self.key_fingerprints)
            .u64(self.updated_at_block);
    }
}

impl Decode for RegistryEntry {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(RegistryEntry {
            domain: r.get()?,
            owner: r.get()?,
            node_endpoints: r.get()?,
            key_fingerprints: r.get()?,
            updated_at_block: r.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegistryOp {
    Register(RegistryRecord),
    Update(RegistryRecord),
}

impl RegistryOp {
    pub(super) fn op_name(&self) -> &'static str {
        match self {
            RegistryOp::Register(_) => "register",
            RegistryOp::Update(_) => "update",
        }
    }

    pub(super) fn encode_args(&self, w: &mut Writer) {
        match self {
            RegistryOp::Register(r) | RegistryOp::Update(r) => r.encode(w),
        }
    }

    pub(super) fn decode_args(name: &str, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let rec = r.get()?;
        Ok(match name {
            "register" => RegistryOp::Register(rec),
            _ => RegistryOp::Update(rec),
        })
    }
}

/// Dot-separated labels of `[a-z0-9-]`, none empty.
pub fn valid_domain(domain: &str) -> bool {
    !domain.is_empty()
        && domain.len() <= 253
        && domain.split('.').all(|label| {
            !label.is_empty()
                && label.len() <= 63
                && label
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    entries: BTreeMap<String, RegistryEntry>,
}

impl Registry {
    pub fn lookup(&self, domain: &str) -> Result<&RegistryEntry, ContractError> {
        self.entries.get(domain).ok_or(ContractError::NotFound)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn execute(&mut self, ctx: &CallContext, op: &RegistryOp) -> Result<(), ContractError> {
        match op {
            RegistryOp::Register(rec) => {
                if !valid_domain(&rec.domain) {
                    return Err(ContractError::InvalidDomain);
                }
                if self.entries.contains_key(&rec.domain) {
                    return Err(ContractError::DomainTaken);
                }
                self.entries.insert(
                    rec.domain.clone(),
                    RegistryEntry {
                        domain: rec.domain.clone(),
                        owner: ctx.sender,
                        node_endpoints: rec.node_endpoints.clone(),
                        key_fingerprints: rec.key_fingerprints.clone(),
                        updated_at_block: ctx.block.number,
                    },
                );
                Ok(())
            }
            RegistryOp::Update(rec) => {
                let entry = self.entries.get_mut(&rec.domain).ok_or(ContractError::NotFound)?;
                if entry.owner != ctx.sender {
                    return Err(ContractError::NotOwner);
                }
                entry.node_endpoints = rec.node_endpoints.clone();
                entry.key_fingerprints = rec.key_fingerprints.clone();
                entry.updated_at_block = ctx.block.number;
                Ok(())
            }
        }
    }
}

impl Encode for Registry {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.entries);
    }
}

impl Decode for Registry {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Registry { entries: r.get()? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::BlockContext;

    fn ctx(sender: &str, number: u64) -> CallContext {
        CallContext {
            sender: AccountId::derive(sender),
            block: BlockContext {
                number,
                timestamp: number * 14,
                miner: AccountId::default(),
            },
        }
    }

    fn record(domain: &str) -> RegistryRecord {
        RegistryRecord {
            domain: domain.into(),
            node_endpoints: vec![Endpoint {
                host: "192.0.2.10".into(),
                port: 30303,
            }],
            key_fingerprints: vec![Hash32([5; 32])],
        }
    }

    #[test]
    fn register_then_lookup() {
        let mut reg = Registry::default();
        reg.execute(&ctx("acme", 3), &RegistryOp::Register(record("example.com")))
            .unwrap();
        let e = reg.lookup("example.com").unwrap();
        assert_eq!(e.owner, AccountId::derive("acme"));
        assert_eq!(e.node_endpoints, record("example.com").node_endpoints);
        assert_eq!(e.updated_at_block, 3);
    }

    #[test]
    fn domain_is_unique() {
        let mut reg = Registry::default();
        let op = RegistryOp::Register(record("example.com"));
        reg.execute(&ctx("acme", 1), &op).unwrap();
        assert_eq!(reg.execute(&ctx("other", 2), &op), Err(ContractError::DomainTaken));
    }

    #[test]
    fn only_owner_updates() {
        let mut reg = Registry::default();
        reg.execute(&ctx("acme", 1), &RegistryOp::Register(record("example.com")))
            .unwrap();
        let mut rec = record("example.com");
        rec.node_endpoints[0].port = 1;
        assert_eq!(
            reg.execute(&ctx("mallory", 2), &RegistryOp::Update(rec.clone())),
            Err(ContractError::NotOwner)
        );
        reg.execute(&ctx("acme", 5), &RegistryOp::Update(rec)).unwrap();
        assert_eq!(reg.lookup("example.com").unwrap().node_endpoints[0].port, 1);
        assert_eq!(reg.lookup("example.com").unwrap().updated_at_block, 5);
    }

    #[test]
    fn missing_lookup_and_update() {
        let mut reg = Registry::default();
        assert_eq!(reg.lookup("nope.org"), Err(ContractError::NotFound));
        assert_eq!(
            reg.execute(&ctx("a", 1), &RegistryOp::Update(record("nope.org"))),
            Err(ContractError::NotFound)
        );
    }

    #[test]
    fn domain_syntax() {
        assert!(valid_domain("example.com"));
        assert!(valid_domain("a-b.c1"));
        assert!(!valid_domain(""));
        assert!(!valid_domain("bad..com"));
        assert!(!valid_domain("Upper.com"));
    }
}

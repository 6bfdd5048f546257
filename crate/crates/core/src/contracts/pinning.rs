//! Pinning contract.
//!
//! One contract holds, per sidechain, its participant set (masked or
//! unmasked), the latest accepted pin and the sidechain public key versions.
//! Participants and keys share a contract so membership changes happen in
//! one place.
//!
//! Only the latest pin is kept in state; earlier pins are recoverable by
//! reading the state at earlier blocks.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{CallContext, ContractError};
use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::digest::{participant_commitment, AccountId, Hash32, SidechainId};

/// Length of a sidechain public key (BLS12-381 G1 compressed).
pub const KEYSET_KEY_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PinRecord {
    pub sidechain_id: SidechainId,
    pub block_number: u64,
    pub block_hash: Hash32,
    pub poster: AccountId,
    pub posted_at_block: u64,
}

impl Encode for PinRecord {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.sidechain_id)
            .u64(self.block_number)
            .put(&self.block_hash)
            .put(&self.poster)
            .u64(self.posted_at_block);
    }
}

impl Decode for PinRecord {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PinRecord {
            sidechain_id: r.get()?,
            block_number: r.u64()?,
            block_hash: r.get()?,
            poster: r.get()?,
            posted_at_block: r.u64()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParticipantStatus {
    Masked,
    Unmasked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParticipantRecord {
    pub account: Option<AccountId>,
    pub commitment: Option<Hash32>,
    pub status: ParticipantStatus,
}

impl ParticipantRecord {
    pub fn unmasked(account: AccountId) -> Self {
        ParticipantRecord {
            account: Some(account),
            commitment: None,
            status: ParticipantStatus::Unmasked,
        }
    }

    pub fn masked(commitment: Hash32) -> Self {
        ParticipantRecord {
            account: None,
            commitment: Some(commitment),
            status: ParticipantStatus::Masked,
        }
    }
}

impl Encode for ParticipantRecord {
    fn encode(&self, w: &mut Writer) {
        match (self.status, self.account, self.commitment) {
            (ParticipantStatus::Unmasked, Some(a), _) => {
                w.u8(1).put(&a);
            }
            (ParticipantStatus::Masked, _, Some(c)) => {
                w.u8(0).put(&c);
            }
            _ => unreachable!("participant record violates its status invariant"),
        }
    }
}

impl Decode for ParticipantRecord {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(ParticipantRecord::masked(r.get()?)),
            1 => Ok(ParticipantRecord::unmasked(r.get()?)),
            tag => Err(DecodeError::BadTag {
                what: "participant",
                tag,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KeysetStatus {
    Proposed,
    Active,
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeysetRecord {
    pub sidechain_id: SidechainId,
    pub version: u64,
    #[serde(serialize_with = "hex_bytes")]
    pub public_key: Vec<u8>,
    pub status: KeysetStatus,
    pub votes: BTreeSet<AccountId>,
}

fn hex_bytes<S: serde::Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(b))
}

impl Encode for KeysetRecord {
    fn encode(&self, w: &mut Writer) {
        let status = match self.status {
            KeysetStatus::Proposed => 0u8,
            KeysetStatus::Active => 1,
            KeysetStatus::Superseded => 2,
        };
        w.put(&self.sidechain_id)
            .u64(self.version)
            .bytes(&self.public_key)
            .u8(status)
            .put(&self.votes);
    }
}

impl Decode for KeysetRecord {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let sidechain_id = r.get()?;
        let version = r.u64()?;
        let public_key = r.bytes()?.to_vec();
        let status = match r.u8()? {
            0 => KeysetStatus::Proposed,
            1 => KeysetStatus::Active,
            2 => KeysetStatus::Superseded,
            tag => {
                return Err(DecodeError::BadTag {
                    what: "keyset status",
                    tag,
                })
            }
        };
        Ok(KeysetRecord {
            sidechain_id,
            version,
            public_key,
            status,
            votes: r.get()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SidechainEntry {
    pub admin: AccountId,
    pub participants: Vec<ParticipantRecord>,
    pub latest_pin: Option<PinRecord>,
    pub pin_count: u64,
    pub keysets: Vec<KeysetRecord>,
}

impl SidechainEntry {
    pub fn is_unmasked(&self, account: &AccountId) -> bool {
        self.participants
            .iter()
            .any(|p| p.status == ParticipantStatus::Unmasked && p.account.as_ref() == Some(account))
    }

    pub fn unmasked_count(&self) -> usize {
        self.participants
            .iter()
            .filter(|p| p.status == ParticipantStatus::Unmasked)
            .count()
    }

    pub fn active_keyset(&self) -> Option<&KeysetRecord> {
        self.keysets.iter().find(|k| k.status == KeysetStatus::Active)
    }

    pub fn active_version(&self) -> u64 {
        self.active_keyset().map_or(0, |k| k.version)
    }
}

impl Encode for SidechainEntry {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.admin)
            .put(&self.participants)
            .put(&self.latest_pin)
            .u64(self.pin_count)
            .put(&self.keysets);
    }
}

impl Decode for SidechainEntry {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(SidechainEntry {
            admin: r.get()?,
            participants: r.get()?,
            latest_pin: r.get()?,
            pin_count: r.u64()?,
            keysets: r.get()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PinningOp {
    CreateSidechain {
        sidechain: SidechainId,
        participants: Vec<AccountId>,
    },
    AddMasked {
        sidechain: SidechainId,
        commitment: Hash32,
    },
    Unmask {
        sidechain: SidechainId,
        salt: Vec<u8>,
        account: AccountId,
    },
    PinAdd {
        sidechain: SidechainId,
        block_number: u64,
        block_hash: Hash32,
    },
    KeysetPropose {
        sidechain: SidechainId,
        version: u64,
        public_key: Vec<u8>,
    },
    KeysetVote {
        sidechain: SidechainId,
        version: u64,
    },
}

impl PinningOp {
    pub(super) fn op_name(&self) -> &'static str {
        match self {
            PinningOp::CreateSidechain { .. } => "create_sidechain",
            PinningOp::AddMasked { .. } => "add_masked",
            PinningOp::Unmask { .. } => "unmask",
            PinningOp::PinAdd { .. } => "pin_add",
            PinningOp::KeysetPropose { .. } => "keyset_propose",
            PinningOp::KeysetVote { .. } => "keyset_vote",
        }
    }

    pub(super) fn encode_args(&self, w: &mut Writer) {
        match self {
            PinningOp::CreateSidechain {
                sidechain,
                participants,
            } => {
                w.put(sidechain).put(participants);
            }
            PinningOp::AddMasked {
                sidechain,
                commitment,
            } => {
                w.put(sidechain).put(commitment);
            }
            PinningOp::Unmask {
                sidechain,
                salt,
                account,
            } => {
                w.put(sidechain).bytes(salt).put(account);
            }
            PinningOp::PinAdd {
                sidechain,
                block_number,
                block_hash,
            } => {
                w.put(sidechain).u64(*block_number).put(block_hash);
            }
            PinningOp::KeysetPropose {
                sidechain,
                version,
                public_key,
            } => {
                w.put(sidechain).u64(*version).bytes(public_key);
            }
            PinningOp::KeysetVote { sidechain, version } => {
                w.put(sidechain).u64(*version);
            }
        }
    }

    pub(super) fn decode_args(name: &str, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let sidechain = r.get()?;
        Ok(match name {
            "create_sidechain" => PinningOp::CreateSidechain {
                sidechain,
                participants: r.get()?,
            },
            "add_masked" => PinningOp::AddMasked {
                sidechain,
                commitment: r.get()?,
            },
            "unmask" => PinningOp::Unmask {
                sidechain,
                salt: r.bytes()?.to_vec(),
                account: r.get()?,
            },
            "pin_add" => PinningOp::PinAdd {
                sidechain,
                block_number: r.u64()?,
                block_hash: r.get()?,
            },
            "keyset_propose" => PinningOp::KeysetPropose {
                sidechain,
                version: r.u64()?,
                public_key: r.bytes()?.to_vec(),
            },
            _ => PinningOp::KeysetVote {
                sidechain,
                version: r.u64()?,
            },
        })
    }
}

/// Activation threshold: strictly more than half of the unmasked participants.
pub fn majority_reached(votes: usize, unmasked: usize) -> bool {
    2 * votes > unmasked
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PinningContract {
    sidechains: BTreeMap<SidechainId, SidechainEntry>,
}

impl PinningContract {
    pub fn sidechain(&self, id: &SidechainId) -> Result<&SidechainEntry, ContractError> {
        self.sidechains.get(id).ok_or(ContractError::UnknownSidechain)
    }

    pub fn sidechain_ids(&self) -> impl Iterator<Item = &SidechainId> {
        self.sidechains.keys()
    }

    pub fn pin_latest(&self, id: &SidechainId) -> Result<&PinRecord, ContractError> {
        self.sidechain(id)?.latest_pin.as_ref().ok_or(ContractError::NotFound)
    }

    pub fn keyset_active(&self, id: &SidechainId) -> Result<&KeysetRecord, ContractError> {
        self.sidechain(id)?
            .active_keyset()
            .ok_or(ContractError::NothingProposed)
    }

    /// Registers a sidechain outside of transaction execution (genesis setup).
    pub fn insert_sidechain(&mut self, id: SidechainId, admin: AccountId, participants: &[AccountId]) {
        self.sidechains.insert(
            id,
            SidechainEntry {
                admin,
                participants: participants.iter().copied().map(ParticipantRecord::unmasked).collect(),
                latest_pin: None,
                pin_count: 0,
                keysets: Vec::new(),
            },
        );
    }

    fn entry_mut(&mut self, id: &SidechainId) -> Result<&mut SidechainEntry, ContractError> {
        self.sidechains.get_mut(id).ok_or(ContractError::UnknownSidechain)
    }

    pub(crate) fn execute(&mut self, ctx: &CallContext, op: &PinningOp) -> Result<(), ContractError> {
        match op {
            PinningOp::CreateSidechain {
                sidechain,
                participants,
            } => {
                if self.sidechains.contains_key(sidechain) {
                    return Err(ContractError::SidechainExists);
                }
                self.insert_sidechain(*sidechain, ctx.sender, participants);
                Ok(())
            }
            PinningOp::AddMasked {
                sidechain,
                commitment,
            } => {
                let entry = self.entry_mut(sidechain)?;
                if entry.admin != ctx.sender && !entry.is_unmasked(&ctx.sender) {
                    return Err(ContractError::NotParticipant);
                }
                entry.participants.push(ParticipantRecord::masked(*commitment));
                Ok(())
            }
            PinningOp::Unmask {
                sidechain,
                salt,
                account,
            } => {
                let entry = self.entry_mut(sidechain)?;
                let c = participant_commitment(salt, account);
                let rec = entry
                    .participants
                    .iter_mut()
                    .find(|p| p.status == ParticipantStatus::Masked && p.commitment == Some(c))
                    .ok_or(ContractError::BadReveal)?;
                *rec = ParticipantRecord::unmasked(*account);
                Ok(())
            }
            PinningOp::PinAdd {
                sidechain,
                block_number,
                block_hash,
            } => {
                let entry = self.entry_mut(sidechain)?;
                if !entry.is_unmasked(&ctx.sender) {
                    return Err(ContractError::NotParticipant);
                }
                if entry
                    .latest_pin
                    .is_some_and(|p| *block_number <= p.block_number)
                {
                    return Err(ContractError::StalePin);
                }
                entry.latest_pin = Some(PinRecord {
                    sidechain_id: *sidechain,
                    block_number: *block_number,
                    block_hash: *block_hash,
                    poster: ctx.sender,
                    posted_at_block: ctx.block.number,
                });
                entry.pin_count += 1;
                Ok(())
            }
            PinningOp::KeysetPropose {
                sidechain,
                version,
                public_key,
            } => {
                let entry = self.entry_mut(sidechain)?;
                if !entry.is_unmasked(&ctx.sender) {
                    return Err(ContractError::NotParticipant);
                }
                if public_key.len() != KEYSET_KEY_LEN {
                    return Err(ContractError::BadKey);
                }
                let pending = entry
                    .keysets
                    .iter()
                    .any(|k| k.status == KeysetStatus::Proposed && k.version == *version);
                if *version != entry.active_version() + 1 || pending {
                    return Err(ContractError::BadVersion);
                }
                // a stale proposal for an older version can no longer activate
                entry
                    .keysets
                    .retain(|k| k.status != KeysetStatus::Proposed);
                entry.keysets.push(KeysetRecord {
                    sidechain_id: *sidechain,
                    version: *version,
                    public_key: public_key.clone(),
                    status: KeysetStatus::Proposed,
                    votes: BTreeSet::new(),
                });
                Ok(())
            }
            PinningOp::KeysetVote { sidechain, version } => {
                let entry = self.entry_mut(sidechain)?;
                if !entry.is_unmasked(&ctx.sender) {
                    return Err(ContractError::NotParticipant);
                }
                let unmasked = entry.unmasked_count();
                let idx = entry
                    .keysets
                    .iter()
                    .position(|k| k.status == KeysetStatus::Proposed && k.version == *version)
                    .ok_or(ContractError::NothingProposed)?;
                if !entry.keysets[idx].votes.insert(ctx.sender) {
                    return Err(ContractError::AlreadyVoted);
                }
                if majority_reached(entry.keysets[idx].votes.len(), unmasked) {
                    for k in entry.keysets.iter_mut() {
                        if k.status == KeysetStatus::Active {
                            k.status = KeysetStatus::Superseded;
                        }
                    }
                    entry.keysets[idx].status = KeysetStatus::Active;
                }
                Ok(())
            }
        }
    }
}

impl Encode for PinningContract {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.sidechains);
    }
}

impl Decode for PinningContract {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PinningContract {
            sidechains: r.get()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::BlockContext;
    use crate::digest::sidechain_id;

    fn ctx_at(sender: AccountId, number: u64) -> CallContext {
        CallContext {
            sender,
            block: BlockContext {
                number,
                timestamp: 0,
                miner: AccountId::default(),
            },
        }
    }

    fn acct(i: usize) -> AccountId {
        AccountId::derive(&format!("p{i}"))
    }

    fn contract_with(n: usize) -> (PinningContract, SidechainId) {
        let mut c = PinningContract::default();
        let id = sidechain_id("alpha");
        let parts: Vec<_> = (0..n).map(acct).collect();
        c.execute(
            &ctx_at(acct(0), 1),
            &PinningOp::CreateSidechain {
                sidechain: id,
                participants: parts,
            },
        )
        .unwrap();
        (c, id)
    }

    fn pin(id: SidechainId, n: u64) -> PinningOp {
        PinningOp::PinAdd {
            sidechain: id,
            block_number: n,
            block_hash: Hash32([n as u8; 32]),
        }
    }

    #[test]
    fn first_pin_accepted_second_same_number_stale() {
        let (mut c, id) = contract_with(2);
        c.execute(&ctx_at(acct(1), 5), &pin(id, 100)).unwrap();
        let p = c.pin_latest(&id).unwrap();
        assert_eq!((p.block_number, p.posted_at_block, p.poster), (100, 5, acct(1)));
        assert_eq!(c.execute(&ctx_at(acct(1), 6), &pin(id, 100)), Err(ContractError::StalePin));
        assert_eq!(c.execute(&ctx_at(acct(1), 6), &pin(id, 99)), Err(ContractError::StalePin));
        c.execute(&ctx_at(acct(0), 7), &pin(id, 101)).unwrap();
        assert_eq!(c.sidechain(&id).unwrap().pin_count, 2);
    }

    #[test]
    fn pin_from_outsider_rejected() {
        let (mut c, id) = contract_with(2);
        assert_eq!(
            c.execute(&ctx_at(AccountId::derive("outsider"), 2), &pin(id, 1)),
            Err(ContractError::NotParticipant)
        );
        assert_eq!(
            c.execute(&ctx_at(acct(0), 2), &pin(sidechain_id("nope"), 1)),
            Err(ContractError::UnknownSidechain)
        );
        assert_eq!(c.pin_latest(&id), Err(ContractError::NotFound));
    }

    #[test]
    fn mask_unmask_roundtrip() {
        let (mut c, id) = contract_with(1);
        let hidden = AccountId::derive("hidden");
        let salt = b"pepper".to_vec();
        let commitment = participant_commitment(&salt, &hidden);
        c.execute(&ctx_at(acct(0), 2), &PinningOp::AddMasked { sidechain: id, commitment })
            .unwrap();
        // masked participants cannot act
        assert_eq!(c.execute(&ctx_at(hidden, 3), &pin(id, 1)), Err(ContractError::NotParticipant));
        assert_eq!(
            c.execute(
                &ctx_at(hidden, 3),
                &PinningOp::Unmask {
                    sidechain: id,
                    salt: b"salt".to_vec(),
                    account: hidden
                }
            ),
            Err(ContractError::BadReveal)
        );
        c.execute(
            &ctx_at(hidden, 4),
            &PinningOp::Unmask {
                sidechain: id,
                salt: salt.clone(),
                account: hidden,
            },
        )
        .unwrap();
        let e = c.sidechain(&id).unwrap();
        assert!(e.is_unmasked(&hidden));
        assert_eq!(e.participants[1], ParticipantRecord::unmasked(hidden));
        // unmasking is irreversible: the same reveal no longer matches a masked record
        assert_eq!(
            c.execute(
                &ctx_at(hidden, 5),
                &PinningOp::Unmask {
                    sidechain: id,
                    salt,
                    account: hidden
                }
            ),
            Err(ContractError::BadReveal)
        );
        c.execute(&ctx_at(hidden, 6), &pin(id, 1)).unwrap();
    }

    fn propose(c: &mut PinningContract, id: SidechainId, by: AccountId, version: u64) -> Result<(), ContractError> {
        c.execute(
            &ctx_at(by, 10),
            &PinningOp::KeysetPropose {
                sidechain: id,
                version,
                public_key: vec![version as u8; KEYSET_KEY_LEN],
            },
        )
    }

    fn vote(c: &mut PinningContract, id: SidechainId, by: AccountId, version: u64) -> Result<(), ContractError> {
        c.execute(&ctx_at(by, 11), &PinningOp::KeysetVote { sidechain: id, version })
    }

    #[test]
    fn keyset_activation_needs_strict_majority() {
        let (mut c, id) = contract_with(3);
        assert_eq!(c.keyset_active(&id), Err(ContractError::NothingProposed));
        propose(&mut c, id, acct(0), 1).unwrap();
        vote(&mut c, id, acct(0), 1).unwrap();
        assert_eq!(c.keyset_active(&id), Err(ContractError::NothingProposed));
        assert_eq!(vote(&mut c, id, acct(0), 1), Err(ContractError::AlreadyVoted));
        vote(&mut c, id, acct(1), 1).unwrap();
        assert_eq!(c.keyset_active(&id).unwrap().version, 1);
    }

    #[test]
    fn keyset_versions_and_supersede() {
        let (mut c, id) = contract_with(2);
        assert_eq!(propose(&mut c, id, acct(0), 2), Err(ContractError::BadVersion));
        assert_eq!(vote(&mut c, id, acct(0), 1), Err(ContractError::NothingProposed));
        propose(&mut c, id, acct(0), 1).unwrap();
        assert_eq!(propose(&mut c, id, acct(1), 1), Err(ContractError::BadVersion));
        vote(&mut c, id, acct(0), 1).unwrap();
        vote(&mut c, id, acct(1), 1).unwrap();
        propose(&mut c, id, acct(1), 2).unwrap();
        vote(&mut c, id, acct(0), 2).unwrap();
        vote(&mut c, id, acct(1), 2).unwrap();
        let e = c.sidechain(&id).unwrap();
        let statuses: Vec<_> = e.keysets.iter().map(|k| (k.version, k.status)).collect();
        assert_eq!(
            statuses,
            vec![(1, KeysetStatus::Superseded), (2, KeysetStatus::Active)]
        );
        assert_eq!(
            c.execute(
                &ctx_at(acct(0), 12),
                &PinningOp::KeysetPropose {
                    sidechain: id,
                    version: 3,
                    public_key: vec![0; 47]
                }
            ),
            Err(ContractError::BadKey)
        );
    }

    /// Independent oracle: enumerate every vote subset for n <= 5 and compare
    /// activation against a direct count of "more than half".
    #[test]
    fn majority_rule_exhaustive() {
        for n in 1..=5usize {
            for mask in 0u32..(1 << n) {
                let (mut c, id) = contract_with(n);
                propose(&mut c, id, acct(0), 1).unwrap();
                for i in 0..n {
                    if mask & (1 << i) != 0 {
                        let already_active = c.keyset_active(&id).is_ok();
                        let r = vote(&mut c, id, acct(i), 1);
                        if already_active {
                            assert_eq!(r, Err(ContractError::NothingProposed));
                        } else {
                            r.unwrap();
                        }
                    }
                }
                let voters = mask.count_ones() as usize;
                let expect_active = voters > n / 2 && voters * 2 != n;
                assert_eq!(
                    c.keyset_active(&id).is_ok(),
                    expect_active,
                    "n={n} mask={mask:b}"
                );
            }
        }
    }

    #[test]
    fn encode_roundtrip() {
        let (mut c, id) = contract_with(3);
        c.execute(&ctx_at(acct(1), 5), &pin(id, 7)).unwrap();
        propose(&mut c, id, acct(0), 1).unwrap();
        vote(&mut c, id, acct(2), 1).unwrap();
        c.execute(
            &ctx_at(acct(0), 6),
            &PinningOp::AddMasked {
                sidechain: id,
                commitment: Hash32([9; 32]),
            },
        )
        .unwrap();
        assert_eq!(PinningContract::from_bytes(&c.to_bytes()).unwrap(), c);
    }
}

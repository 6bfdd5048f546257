//! Atomic crosschain transactions driven through the crosschain coordination
//! contract, with keyset-checked attestations from each leg.
//!
//! A leg stages its update in a per-transaction overlay, attests, and later
//! applies or discards the overlay according to the status it reads at a
//! final block of the coordination chain. Reads at final blocks cannot be
//! reverted by reorgs shallower than the finality depth, so every leg reads
//! the same decision.

mod enumerate;

pub use enumerate::{
    distinct_permutations, events_for, exhaustive_suite, randomized_suite, run_schedule, SuiteReport,
    Variant, XtxEvent, XtxFixture,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    apply_transaction, ChainNode, HeadChange, Payload, Transaction, TxTracker, WorldState,
};
use crate::contracts::{ContractOp, KvOp, PinningOp, XtxOp, XtxState};
use crate::digest::{digest_parts, AccountId, Address, Hash32, SidechainId};
use crate::finality::FinalityMode;
use crate::sidechain::Sidechain;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XtxError {
    #[error("sidechain {0} has no active keyset")]
    NoActiveKeyset(String),
    #[error("crosschain transaction id already used")]
    DuplicateTxId,
    #[error("a crosschain transaction needs at least two distinct sidechains")]
    TooFewLegs,
}

/// Injected misbehaviour. `SilentLeg` silences the last leg; `StaleKeyset`
/// rotates the first leg's keyset after it has attested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    None,
    SilentLeg,
    StaleKeyset,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LegSpec {
    /// Index of the leg's sidechain in the caller's sidechain slice.
    pub sidechain: usize,
    pub key: String,
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrosschainTxSpec {
    pub tx_id: Hash32,
    pub legs: Vec<LegSpec>,
    pub timeout_blocks: u64,
}

/// A leg's signed statement that it staged its update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Attestation {
    pub sidechain_id: SidechainId,
    pub keyset_version: u64,
    pub value: Vec<u8>,
    /// Whether the version was the active one when the attestation was made.
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LegOutcome {
    Pending,
    Committed,
    Ignored,
}

/// When the initiator submits its decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecidePolicy {
    /// Commit once every leg has attested; otherwise let the timeout decide.
    WhenComplete,
    /// Decide at an external signal with whatever attestations are in hand.
    OnSignal,
}

/// What the coordinator and legs may touch during one step.
pub struct XtxEnv<'a> {
    pub root: &'a mut ChainNode,
    pub sidechains: &'a mut [Sidechain],
    pub now: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Decision {
    Commit,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct XtxOutcome {
    pub tx_id: Hash32,
    pub legs: Vec<LegOutcome>,
    pub final_status: Option<XtxState>,
    pub mixed: bool,
    /// Seconds from submitting the start transaction until its block was final.
    pub start_delay: Option<u64>,
    pub violations: Vec<String>,
}

impl XtxOutcome {
    pub fn resolved(&self) -> Option<LegOutcome> {
        let first = *self.legs.first()?;
        (first != LegOutcome::Pending && self.legs.iter().all(|l| *l == first)).then_some(first)
    }
}

/// Coordinator plus leg clients for one crosschain transaction.
#[derive(Debug, Clone)]
pub struct XtxRun {
    pub spec: CrosschainTxSpec,
    pub initiator: AccountId,
    pub xtx_contract: Address,
    pub keyset_registry: Address,
    pub wait_for_finality: bool,
    pub fault: Fault,
    pub decide: DecidePolicy,
    tracker: TxTracker,
    submitted_at: Option<u64>,
    willing: Vec<bool>,
    attestations: Vec<Option<Attestation>>,
    attested_before_final_start: Vec<bool>,
    decide_signal: bool,
    decision: Option<Decision>,
    rotated: bool,
    outcomes: Vec<LegOutcome>,
    pre_values: Vec<Option<Vec<u8>>>,
    pre_commitments: Vec<Hash32>,
    violations: Vec<String>,
}

impl XtxRun {
    pub fn new(
        spec: CrosschainTxSpec,
        initiator: AccountId,
        xtx_contract: Address,
        keyset_registry: Address,
        fault: Fault,
        decide: DecidePolicy,
    ) -> Self {
        let n = spec.legs.len();
        XtxRun {
            spec,
            initiator,
            xtx_contract,
            keyset_registry,
            wait_for_finality: true,
            fault,
            decide,
            tracker: TxTracker::default(),
            submitted_at: None,
            willing: vec![false; n],
            attestations: vec![None; n],
            attested_before_final_start: vec![false; n],
            decide_signal: false,
            decision: None,
            rotated: false,
            outcomes: vec![LegOutcome::Pending; n],
            pre_values: vec![None; n],
            pre_commitments: vec![Hash32::ZERO; n],
            violations: Vec::new(),
        }
    }

    fn silent(&self, leg: usize) -> bool {
        self.fault == Fault::SilentLeg && leg + 1 == self.spec.legs.len()
    }

    fn leg_ids(&self, sidechains: &[Sidechain]) -> Vec<SidechainId> {
        self.spec.legs.iter().map(|l| sidechains[l.sidechain].id).collect()
    }

    /// Submits the start transaction. With `DecidePolicy::WhenComplete` every
    /// non-silent leg is immediately willing to attest.
    pub fn start(&mut self, env: &mut XtxEnv<'_>) -> Result<Hash32, XtxError> {
        let ids = self.leg_ids(env.sidechains);
        let set: BTreeSet<SidechainId> = ids.iter().copied().collect();
        if set.len() < 2 || set.len() != ids.len() {
            return Err(XtxError::TooFewLegs);
        }
        let head = env.root.view.head_state();
        let registry = head.pinning(&self.keyset_registry);
        for id in &ids {
            if registry.is_none_or(|r| r.keyset_active(id).is_err()) {
                return Err(XtxError::NoActiveKeyset(id.short()));
            }
        }
        if head
            .crosschain(&self.xtx_contract)
            .is_some_and(|c| c.record(&self.spec.tx_id).is_ok())
        {
            return Err(XtxError::DuplicateTxId);
        }
        for (i, leg) in self.spec.legs.iter().enumerate() {
            let sc = &env.sidechains[leg.sidechain];
            self.pre_values[i] = sc.kv_get(&leg.key);
            self.pre_commitments[i] = sc.state_commitment();
        }
        if self.decide == DecidePolicy::WhenComplete {
            for i in 0..self.spec.legs.len() {
                self.willing[i] = !self.silent(i);
            }
        }
        self.submitted_at = Some(env.now);
        let op = XtxOp::Start {
            tx_id: self.spec.tx_id,
            sidechains: set,
            timeout_blocks: self.spec.timeout_blocks,
        };
        Ok(self.submit_call(env.root, op))
    }

    fn submit_call(&mut self, root: &mut ChainNode, op: XtxOp) -> Hash32 {
        let op = ContractOp::Crosschain(op);
        let gas = op.gas_cost(&root.schedule);
        let tx = Transaction::call(
            self.initiator,
            root.next_nonce(&self.initiator),
            root.price.bid(),
            self.xtx_contract,
            op,
        )
        .with_gas_limit(gas);
        self.tracker.submit(root, tx)
    }

    pub fn signal_attest(&mut self, leg: usize) {
        if !self.silent(leg) {
            self.willing[leg] = true;
        }
    }

    pub fn signal_decide(&mut self) {
        self.decide_signal = true;
    }

    /// Rotates the keyset of leg `leg`'s sidechain: the first validator
    /// proposes the next version and a bare majority votes for it.
    pub fn rotate(&mut self, env: &mut XtxEnv<'_>, leg: usize) {
        let sc = &mut env.sidechains[self.spec.legs[leg].sidechain];
        sc.keyset_version += 1;
        let version = sc.keyset_version;
        let id = sc.id;
        let validators = sc.validators.clone();
        let propose = keyset_propose_tx(env.root, self.keyset_registry, validators[0], id, version);
        self.tracker.submit(env.root, propose);
        for v in validators.iter().take(validators.len() / 2 + 1) {
            let vote = keyset_vote_tx(env.root, self.keyset_registry, *v, id, version);
            self.tracker.submit(env.root, vote);
        }
        self.rotated = true;
    }

    /// Resubmits this run's transactions lost to a reorg or eviction.
    pub fn on_head_change(&mut self, root: &mut ChainNode, change: &HeadChange) {
        self.tracker.on_head_change(root, change);
    }

    fn start_visible(&self, state: Option<&WorldState>) -> bool {
        state
            .and_then(|s| s.crosschain(&self.xtx_contract))
            .is_some_and(|c| c.record(&self.spec.tx_id).is_ok())
    }

    /// Advances every party by one observation of the coordination chain.
    pub fn step(&mut self, env: &mut XtxEnv<'_>) {
        let head_state = env.root.view.head_state().clone();
        let final_state = env.root.final_state().cloned();
        let start_final = self.start_visible(final_state.as_deref());
        let start_seen = self.start_visible(Some(&head_state));

        for i in 0..self.spec.legs.len() {
            if !self.willing[i] || self.attestations[i].is_some() || self.outcomes[i] != LegOutcome::Pending {
                continue;
            }
            let enabled = if self.wait_for_finality { start_final } else { start_seen };
            if !enabled {
                continue;
            }
            let leg = &self.spec.legs[i];
            let sc = &mut env.sidechains[leg.sidechain];
            sc.stage(
                self.spec.tx_id,
                KvOp::Put {
                    key: leg.key.clone(),
                    value: leg.value.clone(),
                },
            );
            let active = head_state
                .pinning(&self.keyset_registry)
                .map_or(0, |r| r.sidechain(&sc.id).map_or(0, |e| e.active_version()));
            self.attestations[i] = Some(Attestation {
                sidechain_id: sc.id,
                keyset_version: sc.keyset_version,
                value: leg.value.clone(),
                valid: sc.keyset_version == active,
            });
            self.attested_before_final_start[i] = !start_final;
            if self.fault == Fault::StaleKeyset && i == 0 && self.decide == DecidePolicy::WhenComplete && !self.rotated {
                self.rotate(env, 0);
            }
        }

        if self.decision.is_none() {
            let complete = self.attestations.iter().all(Option::is_some);
            let ready = match self.decide {
                DecidePolicy::WhenComplete => complete,
                DecidePolicy::OnSignal => self.decide_signal,
            };
            if ready {
                let registry = head_state.pinning(&self.keyset_registry);
                let all_valid = complete
                    && self.attestations.iter().flatten().all(|a| {
                        registry.is_some_and(|r| {
                            r.sidechain(&a.sidechain_id)
                                .is_ok_and(|e| e.active_version() == a.keyset_version)
                        })
                    });
                if all_valid {
                    let attested = self
                        .attestations
                        .iter()
                        .flatten()
                        .map(|a| (a.sidechain_id, a.keyset_version))
                        .collect();
                    self.submit_call(
                        env.root,
                        XtxOp::Commit {
                            tx_id: self.spec.tx_id,
                            attested,
                        },
                    );
                    self.decision = Some(Decision::Commit);
                } else {
                    self.submit_call(env.root, XtxOp::Ignore { tx_id: self.spec.tx_id });
                    self.decision = Some(Decision::Ignore);
                }
            }
        }

        let Some(fs) = final_state else { return };
        let final_number = env.root.final_number().unwrap_or(0);
        let Some(status) = fs
            .crosschain(&self.xtx_contract)
            .and_then(|c| c.status(&self.spec.tx_id, final_number).ok())
        else {
            return;
        };
        for i in 0..self.spec.legs.len() {
            if self.outcomes[i] != LegOutcome::Pending {
                continue;
            }
            let sc = &mut env.sidechains[self.spec.legs[i].sidechain];
            match status {
                XtxState::Started => {}
                XtxState::Committed => {
                    match sc.apply_staged(&self.spec.tx_id) {
                        Ok(true) => {}
                        Ok(false) => self
                            .violations
                            .push(format!("leg {i} read Committed without a staged update")),
                        Err(e) => self.violations.push(format!("leg {i} could not apply: {e}")),
                    }
                    self.outcomes[i] = LegOutcome::Committed;
                }
                XtxState::Ignored => {
                    sc.discard(&self.spec.tx_id);
                    self.outcomes[i] = LegOutcome::Ignored;
                }
            }
        }
    }

    /// Simulated time at which the start transaction was submitted.
    pub fn submitted_at(&self) -> Option<u64> {
        self.submitted_at
    }

    pub fn is_resolved(&self) -> bool {
        self.outcomes.iter().all(|o| *o != LegOutcome::Pending)
    }

    pub fn leg_outcomes(&self) -> &[LegOutcome] {
        &self.outcomes
    }

    pub fn pre_commitment(&self, leg: usize) -> Hash32 {
        self.pre_commitments[leg]
    }

    /// Checks the protocol invariants against the current chains.
    pub fn outcome(&self, root: &ChainNode, sidechains: &[Sidechain]) -> XtxOutcome {
        let mut violations = self.violations.clone();
        let committed = self.outcomes.contains(&LegOutcome::Committed);
        let ignored = self.outcomes.contains(&LegOutcome::Ignored);
        let mixed = committed && ignored;
        if mixed {
            violations.push("legs disagree".into());
        }

        let final_status = root.final_state().and_then(|s| {
            s.crosschain(&self.xtx_contract)
                .and_then(|c| c.status(&self.spec.tx_id, root.final_number().unwrap_or(0)).ok())
        });
        for (i, o) in self.outcomes.iter().enumerate() {
            let expected = match final_status {
                Some(XtxState::Committed) => LegOutcome::Committed,
                Some(XtxState::Ignored) => LegOutcome::Ignored,
                _ => LegOutcome::Pending,
            };
            if *o != LegOutcome::Pending && *o != expected {
                violations.push(format!("leg {i} outcome {o:?} differs from final status {final_status:?}"));
            }
        }

        if self.wait_for_finality && self.attested_before_final_start.iter().any(|b| *b) {
            violations.push("a leg attested before the start was final".into());
        }

        for (i, leg) in self.spec.legs.iter().enumerate() {
            if self.outcomes[i] == LegOutcome::Ignored {
                let sc = &sidechains[leg.sidechain];
                if sc.kv_get(&leg.key) != self.pre_values[i] || sc.staged(&self.spec.tx_id).is_some() {
                    violations.push(format!("ignored leg {i} changed state"));
                }
            }
        }

        if final_status == Some(XtxState::Committed) {
            match commit_versions(root, self.xtx_contract, self.keyset_registry, &self.spec.tx_id) {
                Some(pairs) => {
                    for (id, attested, active) in pairs {
                        if attested != active {
                            violations.push(format!(
                                "commit carried version {attested} for {} but {active} was active",
                                id.short()
                            ));
                        }
                    }
                }
                None => violations.push("committed but no commit transaction on the canonical chain".into()),
            }
        }

        let start_delay = self
            .submitted_at
            .and_then(|t| effective_start_delay(root, self.xtx_contract, &self.spec.tx_id, t));
        XtxOutcome {
            tx_id: self.spec.tx_id,
            legs: self.outcomes.clone(),
            final_status,
            mixed,
            start_delay,
            violations,
        }
    }
}

fn keyset_key(id: &SidechainId, version: u64) -> Vec<u8> {
    let d = digest_parts(&[&id.0, &version.to_be_bytes()]);
    let mut key = d.0.to_vec();
    key.extend_from_slice(&d.0[..16]);
    key
}

pub fn keyset_propose_tx(
    root: &ChainNode,
    registry: Address,
    proposer: AccountId,
    sidechain: SidechainId,
    version: u64,
) -> Transaction {
    let op = ContractOp::Pinning(PinningOp::KeysetPropose {
        sidechain,
        version,
        public_key: keyset_key(&sidechain, version),
    });
    let gas = op.gas_cost(&root.schedule);
    Transaction::call(proposer, root.next_nonce(&proposer), root.price.bid(), registry, op).with_gas_limit(gas)
}

pub fn keyset_vote_tx(
    root: &ChainNode,
    registry: Address,
    voter: AccountId,
    sidechain: SidechainId,
    version: u64,
) -> Transaction {
    let op = ContractOp::Pinning(PinningOp::KeysetVote { sidechain, version });
    let gas = op.gas_cost(&root.schedule);
    Transaction::call(voter, root.next_nonce(&voter), root.price.bid(), registry, op).with_gas_limit(gas)
}

fn finality_depth(root: &ChainNode) -> u64 {
    match root.mode() {
        FinalityMode::Instant => 0,
        FinalityMode::Probabilistic => root.policy.confirmations_required,
    }
}

/// First canonical block at or after `from` whose post-state satisfies `pred`.
fn first_canonical(root: &ChainNode, from: u64, pred: impl Fn(&WorldState) -> bool) -> Option<u64> {
    let view = &root.view;
    (from.max(view.base_number())..=view.head().number).find(|n| {
        view.canonical_at(*n)
            .and_then(|h| view.state_at(&h))
            .is_some_and(|s| pred(s))
    })
}

/// Seconds from `inclusion_block` to the block that made it final, if any yet.
fn time_to_final(root: &ChainNode, inclusion_block: u64) -> Option<(u64, u64)> {
    let view = &root.view;
    let done = inclusion_block + finality_depth(root);
    let at = |n| view.canonical_at(n).and_then(|h| view.header(&h)).map(|h| h.timestamp);
    Some((at(inclusion_block)?, at(done)?))
}

/// Seconds from submitting the start transaction until its block is final.
pub fn effective_start_delay(root: &ChainNode, xtx_contract: Address, tx_id: &Hash32, submitted_at: u64) -> Option<u64> {
    let b = first_canonical(root, 0, |s| {
        s.crosschain(&xtx_contract).is_some_and(|c| c.record(tx_id).is_ok())
    })?;
    let (_, done) = time_to_final(root, b)?;
    Some(done - submitted_at)
}

/// Seconds from inclusion of the block that activated `version` of the
/// sidechain's keyset until that block is final: the earliest point a first
/// crosschain transaction can rely on the key.
pub fn first_transaction_readiness(
    root: &ChainNode,
    keyset_registry: Address,
    sidechain: &SidechainId,
    version: u64,
) -> Option<u64> {
    let b = first_canonical(root, 0, |s| {
        s.pinning(&keyset_registry)
            .is_some_and(|r| r.sidechain(sidechain).is_ok_and(|e| e.active_version() >= version))
    })?;
    let (included, done) = time_to_final(root, b)?;
    Some(done - included)
}

/// For the canonical commit of `tx_id`: (sidechain, attested version,
/// version active when the commit executed), replaying its block up to it.
fn commit_versions(
    root: &ChainNode,
    xtx_contract: Address,
    registry: Address,
    tx_id: &Hash32,
) -> Option<Vec<(SidechainId, u64, u64)>> {
    let view = &root.view;
    for hash in view.canonical_hashes().iter().skip(1) {
        let block = view.block(hash)?;
        let Some(pos) = block.txs.iter().zip(&block.receipts).position(|(tx, r)| {
            r.status.is_success()
                && matches!(&tx.payload, Payload::Call { contract, op: ContractOp::Crosschain(XtxOp::Commit { tx_id: t, .. }) }
                    if *contract == xtx_contract && t == tx_id)
        }) else {
            continue;
        };
        let mut state = (**view.state_at(&block.header.parent_hash)?).clone();
        let ctx = crate::chain::BlockContext {
            number: block.header.number,
            timestamp: block.header.timestamp,
            miner: block.header.miner,
        };
        for tx in &block.txs[..pos] {
            let _ = apply_transaction(&mut state, tx, &ctx, u64::MAX, &root.schedule);
        }
        let Payload::Call { op: ContractOp::Crosschain(XtxOp::Commit { attested, .. }), .. } = &block.txs[pos].payload else {
            unreachable!()
        };
        let reg = state.pinning(&registry)?;
        return Some(
            attested
                .iter()
                .map(|(id, v)| (*id, *v, reg.sidechain(id).map_or(0, |e| e.active_version())))
                .collect(),
        );
    }
    None
}

//! Schedule enumeration for the atomicity suite.
//!
//! A schedule is an ordering of protocol events. After every event one
//! coordination-chain block is mined and every party observes it; `Mine`
//! events only add an extra block. Attestation signals that arrive before a
//! leg may attest are remembered and acted on once allowed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    keyset_propose_tx, keyset_vote_tx, CrosschainTxSpec, DecidePolicy, Fault, LegOutcome, LegSpec,
    XtxEnv, XtxOutcome, XtxRun,
};
use crate::chain::{ChainNode, HeadChange, WorldState};
use crate::contracts::{ContractInit, XtxState};
use crate::digest::{digest, AccountId, Address};
use crate::finality::{FinalityMode, FinalityPolicy};
use crate::gas::{GasSchedule, PriceState};
use crate::par::{map_items, Exec};
use crate::sidechain::Sidechain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum XtxEvent {
    Attest(usize),
    Decide,
    Rotate(usize),
    Reorg,
    Mine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub legs: usize,
    pub fault: Fault,
    pub reorg: bool,
    pub wait_for_finality: bool,
}

/// Coordination chain with `legs` sidechains whose keysets are active and final.
#[derive(Debug, Clone)]
pub struct XtxFixture {
    pub root: ChainNode,
    pub sidechains: Vec<Sidechain>,
    pub initiator: AccountId,
    pub miner: AccountId,
    pub xtx: Address,
    pub registry: Address,
    pub now: u64,
    pub block_time: u64,
    pub timeout_blocks: u64,
}

impl XtxFixture {
    pub fn new(legs: usize, z: u64, timeout_blocks: u64) -> Self {
        let schedule = GasSchedule::default();
        let registry = AccountId::derive("keyset-registry");
        let xtx = AccountId::derive("xtx-contract");
        let initiator = AccountId::derive("xtx-initiator");
        let sidechains: Vec<Sidechain> = (0..legs)
            .map(|i| {
                let validators = (0..3).map(|j| AccountId::derive(&format!("leg{i}-v{j}"))).collect();
                Sidechain::new(&format!("leg{i}"), validators, schedule)
            })
            .collect();

        let mut g = WorldState::new(digest(b"coordination"));
        g.fund(initiator, 1 << 100);
        g.deploy_at(registry, &ContractInit::Pinning);
        g.deploy_at(xtx, &ContractInit::Crosschain { keyset_registry: registry });
        for sc in &sidechains {
            for v in &sc.validators {
                g.fund(*v, 1 << 100);
            }
            g.pinning_mut(&registry)
                .expect("deployed")
                .insert_sidechain(sc.id, sc.validators[0], &sc.validators);
        }
        let mut root = ChainNode::new(
            g,
            FinalityMode::Probabilistic,
            schedule,
            FinalityPolicy {
                confirmations_required: z,
                block_time_target: schedule.block_time as f64,
            },
            PriceState::default(),
        );

        let mut fixture = XtxFixture {
            root,
            sidechains,
            initiator,
            miner: AccountId::derive("honest-miner"),
            xtx,
            registry,
            now: 0,
            block_time: schedule.block_time,
            timeout_blocks,
        };
        root = fixture.root.clone();
        for sc in fixture.sidechains.iter_mut() {
            sc.keyset_version = 1;
            let propose = keyset_propose_tx(&root, registry, sc.validators[0], sc.id, 1);
            root.submit(propose);
            for v in sc.validators.iter().take(2) {
                let vote = keyset_vote_tx(&root, registry, *v, sc.id, 1);
                root.submit(vote);
            }
        }
        for _ in 0..=z {
            fixture.now += fixture.block_time;
            root.mint(fixture.miner, fixture.now).expect("mint");
        }
        fixture.root = root;
        fixture
    }
}

/// Events of one schedule for `variant`, plus `extra_mines` idle blocks.
pub fn events_for(variant: &Variant, extra_mines: usize) -> Vec<XtxEvent> {
    let mut ev = Vec::new();
    let attesting = match variant.fault {
        Fault::SilentLeg => variant.legs - 1,
        _ => variant.legs,
    };
    ev.extend((0..attesting).map(XtxEvent::Attest));
    ev.push(XtxEvent::Decide);
    if variant.fault == Fault::StaleKeyset {
        ev.push(XtxEvent::Rotate(0));
    }
    if variant.reorg {
        ev.push(XtxEvent::Reorg);
    }
    ev.extend(std::iter::repeat_n(XtxEvent::Mine, extra_mines));
    ev
}

/// All distinct orderings of a multiset, in lexicographic order.
pub fn distinct_permutations(mut items: Vec<XtxEvent>) -> Vec<Vec<XtxEvent>> {
    items.sort();
    let mut out = vec![items.clone()];
    loop {
        let Some(i) = (1..items.len()).rev().find(|&i| items[i - 1] < items[i]) else {
            return out;
        };
        let j = (i..items.len()).rev().find(|&j| items[i - 1] < items[j]).expect("exists");
        items.swap(i - 1, j);
        items[i..].reverse();
        out.push(items.clone());
    }
}

fn inject_reorg(root: &mut ChainNode, depth: u64, now: u64) -> HeadChange {
    let head = root.view.head().number;
    let d = depth.min(head - root.view.base_number());
    let mut parent = root.view.canonical_at(head - d).expect("canonical");
    let attacker = AccountId::derive("reorg-miner");
    for k in 0..=d {
        let b = root
            .view
            .build_block(&parent, attacker, now, &[], &root.schedule)
            .expect("known parent");
        parent = b.hash();
        if k < d {
            root.view.insert(b).expect("valid block");
        } else {
            return root.adopt(b).expect("valid block");
        }
    }
    unreachable!()
}

/// Plays one schedule against a copy of `fixture` and checks every protocol
/// invariant. The returned outcome lists any violation found.
pub fn run_schedule(fixture: &XtxFixture, variant: &Variant, schedule: &[XtxEvent]) -> XtxOutcome {
    let mut root = fixture.root.clone();
    let mut sidechains = fixture.sidechains[..variant.legs].to_vec();
    let mut now = fixture.now;
    let spec = CrosschainTxSpec {
        tx_id: digest(b"enumerated-xtx"),
        legs: (0..variant.legs)
            .map(|i| LegSpec {
                sidechain: i,
                key: format!("xtx-{i}"),
                value: vec![i as u8 + 1],
            })
            .collect(),
        timeout_blocks: fixture.timeout_blocks,
    };
    let mut run = XtxRun::new(
        spec,
        fixture.initiator,
        fixture.xtx,
        fixture.registry,
        variant.fault,
        DecidePolicy::OnSignal,
    );
    run.wait_for_finality = variant.wait_for_finality;
    let z = root.policy.confirmations_required;

    let mut violations = Vec::new();
    if let Err(e) = run.start(&mut XtxEnv {
        root: &mut root,
        sidechains: &mut sidechains,
        now,
    }) {
        violations.push(format!("start failed: {e}"));
    }

    let observe = |root: &mut ChainNode, sidechains: &mut [Sidechain], run: &mut XtxRun, change: HeadChange, now: u64| {
        run.on_head_change(root, &change);
        run.step(&mut XtxEnv { root, sidechains, now });
        for sc in sidechains.iter_mut() {
            sc.mint(now).expect("sidechain mint");
        }
    };
    let mine = |root: &mut ChainNode, now: &mut u64| {
        *now += fixture.block_time;
        root.mint(fixture.miner, *now).expect("mint").1
    };

    let change = mine(&mut root, &mut now);
    observe(&mut root, &mut sidechains, &mut run, change, now);
    for ev in schedule {
        match *ev {
            XtxEvent::Attest(i) => run.signal_attest(i),
            XtxEvent::Decide => run.signal_decide(),
            XtxEvent::Rotate(leg) => run.rotate(
                &mut XtxEnv {
                    root: &mut root,
                    sidechains: &mut sidechains,
                    now,
                },
                leg,
            ),
            XtxEvent::Reorg => {
                let change = inject_reorg(&mut root, z.saturating_sub(1), now);
                observe(&mut root, &mut sidechains, &mut run, change, now);
            }
            XtxEvent::Mine => {}
        }
        let change = mine(&mut root, &mut now);
        observe(&mut root, &mut sidechains, &mut run, change, now);
    }
    for _ in 0..fixture.timeout_blocks + 2 * z + 8 {
        if run.is_resolved() {
            break;
        }
        let change = mine(&mut root, &mut now);
        observe(&mut root, &mut sidechains, &mut run, change, now);
    }

    let mut outcome = run.outcome(&root, &sidechains);
    outcome.violations.splice(0..0, violations);
    if !run.is_resolved() {
        outcome.violations.push("unresolved after settle window".into());
    }
    for (i, o) in run.leg_outcomes().iter().enumerate() {
        if *o == LegOutcome::Ignored && sidechains[i].state_commitment() != run.pre_commitment(i) {
            outcome.violations.push(format!("ignored leg {i} state commitment changed"));
        }
    }
    outcome
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SuiteReport {
    pub schedules: u64,
    pub committed: u64,
    pub ignored: u64,
    pub mixed: u64,
    pub unresolved: u64,
    pub violation_count: u64,
    /// Counts by (legs, fault) so coverage of each fault is visible.
    pub by_fault: BTreeMap<String, u64>,
    pub sample_violations: Vec<String>,
}

impl SuiteReport {
    fn add(&mut self, variant: &Variant, schedule: &[XtxEvent], o: &XtxOutcome) {
        self.schedules += 1;
        match o.resolved() {
            Some(LegOutcome::Committed) => self.committed += 1,
            Some(LegOutcome::Ignored) => self.ignored += 1,
            _ if o.mixed => self.mixed += 1,
            _ => self.unresolved += 1,
        }
        if o.final_status == Some(XtxState::Committed) && variant.fault == Fault::SilentLeg {
            self.violation_count += 1;
            self.sample(format!("{variant:?} {schedule:?}: silent leg committed"));
        }
        if !o.violations.is_empty() {
            self.violation_count += 1;
            self.sample(format!("{variant:?} {schedule:?}: {:?}", o.violations));
        }
        *self
            .by_fault
            .entry(format!("{}-legs/{:?}", variant.legs, variant.fault))
            .or_default() += 1;
    }

    fn sample(&mut self, s: String) {
        if self.sample_violations.len() < 5 {
            self.sample_violations.push(s);
        }
    }

    pub fn merge(&mut self, other: SuiteReport) {
        self.schedules += other.schedules;
        self.committed += other.committed;
        self.ignored += other.ignored;
        self.mixed += other.mixed;
        self.unresolved += other.unresolved;
        self.violation_count += other.violation_count;
        for (k, v) in other.by_fault {
            *self.by_fault.entry(k).or_default() += v;
        }
        for s in other.sample_violations {
            self.sample(s);
        }
    }

    pub fn clean(&self) -> bool {
        self.mixed == 0 && self.unresolved == 0 && self.violation_count == 0
    }
}

const FAULTS: [Fault; 3] = [Fault::None, Fault::SilentLeg, Fault::StaleKeyset];

/// Finality depth and timeout used by the atomicity suites.
pub const SUITE_Z: u64 = 3;
pub const SUITE_TIMEOUT_BLOCKS: u64 = 10;

/// Every distinct ordering of every variant (fault, optional reorg,
/// wait-for-finality on or off) for `legs` legs.
pub fn exhaustive_suite(legs: usize, extra_mines: usize, exec: Exec) -> SuiteReport {
    let fixture = XtxFixture::new(legs, SUITE_Z, SUITE_TIMEOUT_BLOCKS);
    let mut jobs = Vec::new();
    for fault in FAULTS {
        for reorg in [false, true] {
            for wait_for_finality in [true, false] {
                let v = Variant {
                    legs,
                    fault,
                    reorg,
                    wait_for_finality,
                };
                for s in distinct_permutations(events_for(&v, extra_mines)) {
                    jobs.push((v, s));
                }
            }
        }
    }
    tally(&fixture_map(&[(legs, fixture)]), &jobs, exec)
}

fn fixture_map(f: &[(usize, XtxFixture)]) -> BTreeMap<usize, XtxFixture> {
    f.iter().cloned().collect()
}

fn tally(fixtures: &BTreeMap<usize, XtxFixture>, jobs: &[(Variant, Vec<XtxEvent>)], exec: Exec) -> SuiteReport {
    let outcomes = map_items(exec, jobs, |(v, s)| run_schedule(&fixtures[&v.legs], v, s));
    let mut report = SuiteReport::default();
    for ((v, s), o) in jobs.iter().zip(&outcomes) {
        report.add(v, s, o);
    }
    report
}

/// `count` random schedules with 4 to 6 legs, random variant, and up to three
/// idle blocks, each drawn from its own seed stream.
pub fn randomized_suite(count: u64, seed: u64, exec: Exec) -> SuiteReport {
    let fixtures: BTreeMap<usize, XtxFixture> = (4..=6)
        .map(|n| (n, XtxFixture::new(n, SUITE_Z, SUITE_TIMEOUT_BLOCKS)))
        .collect();
    let jobs: Vec<(Variant, Vec<XtxEvent>)> = (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let v = Variant {
                legs: rng.random_range(4..=6),
                fault: FAULTS[rng.random_range(0..FAULTS.len())],
                reorg: rng.random_bool(0.5),
                wait_for_finality: rng.random_bool(0.5),
            };
            let mut events = events_for(&v, rng.random_range(0..=3));
            events.shuffle(&mut rng);
            (v, events)
        })
        .collect();
    tally(&fixtures, &jobs, exec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_of_multiset() {
        let p = distinct_permutations(vec![XtxEvent::Mine, XtxEvent::Decide, XtxEvent::Mine]);
        assert_eq!(p.len(), 3);
        let p = distinct_permutations(vec![XtxEvent::Attest(0), XtxEvent::Attest(1), XtxEvent::Decide]);
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn happy_path_commits_everywhere() {
        let f = XtxFixture::new(3, SUITE_Z, SUITE_TIMEOUT_BLOCKS);
        let v = Variant {
            legs: 3,
            fault: Fault::None,
            reorg: false,
            wait_for_finality: true,
        };
        let s = [XtxEvent::Attest(0), XtxEvent::Attest(1), XtxEvent::Attest(2), XtxEvent::Mine, XtxEvent::Mine, XtxEvent::Mine, XtxEvent::Decide];
        let o = run_schedule(&f, &v, &s);
        assert_eq!(o.violations, Vec::<String>::new());
        assert_eq!(o.resolved(), Some(LegOutcome::Committed));
    }

    #[test]
    fn silent_leg_times_out_to_ignored() {
        let f = XtxFixture::new(3, SUITE_Z, SUITE_TIMEOUT_BLOCKS);
        let v = Variant {
            legs: 3,
            fault: Fault::SilentLeg,
            reorg: false,
            wait_for_finality: true,
        };
        let o = run_schedule(&f, &v, &[XtxEvent::Attest(0), XtxEvent::Attest(1)]);
        assert_eq!(o.violations, Vec::<String>::new());
        assert_eq!(o.resolved(), Some(LegOutcome::Ignored));
        assert_eq!(o.final_status, Some(XtxState::Ignored));
    }

    #[test]
    fn stale_keyset_ignored() {
        let f = XtxFixture::new(2, SUITE_Z, SUITE_TIMEOUT_BLOCKS);
        let v = Variant {
            legs: 2,
            fault: Fault::StaleKeyset,
            reorg: false,
            wait_for_finality: true,
        };
        let s = [
            XtxEvent::Attest(0),
            XtxEvent::Attest(1),
            XtxEvent::Mine,
            XtxEvent::Mine,
            XtxEvent::Mine,
            XtxEvent::Rotate(0),
            XtxEvent::Mine,
            XtxEvent::Decide,
        ];
        let o = run_schedule(&f, &v, &s);
        assert_eq!(o.violations, Vec::<String>::new());
        assert_eq!(o.resolved(), Some(LegOutcome::Ignored));
    }
}

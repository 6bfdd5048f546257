//! The deterministic event loop behind [`run`].
//!
//! Simulated time advances one second per tick. Within a tick, scheduled
//! submissions happen first, then sidechain blocks, then a coordination-chain
//! block if one is due.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::config::{AdversaryConfig, ScenarioConfig};
use super::report::{
    ArchiveMetrics, BlockSample, ChainMetrics, CrosschainReport, CrosschainSummary, ReversionMetrics,
    RootMetrics, RunReport, SpamMetrics, Stats,
};
use crate::chain::{Block, BuiltBlock, ChainNode, HeadChange, Payload, Transaction, TxTracker, WorldState};
use crate::contracts::{ContractInit, ContractOp, PinRecord, PinningOp, XtxState};
use crate::crosschain::{
    effective_start_delay, first_transaction_readiness, keyset_propose_tx, keyset_vote_tx, CrosschainTxSpec,
    DecidePolicy, LegSpec, XtxEnv, XtxError, XtxRun,
};
use crate::digest::{digest, sidechain_id, AccountId, Address, Hash32, SidechainId};
use crate::finality::{catchup_probability, FinalityMode};
use crate::gas::{GasSchedule, WEI_PER_ETH, WEI_PER_GWEI};
use crate::sidechain::{
    hosted_pinning_address, pin_finality, restore, sidechain_genesis, ChainRef, PinStatus, PinStrategy, PinTarget,
    Sidechain, StackLevel,
};

const FUNDS: u128 = 1 << 100;

pub fn root_pinning_address() -> Address {
    AccountId::derive("root-pinning")
}

pub fn keyset_registry_address() -> Address {
    AccountId::derive("keyset-registry")
}

pub fn crosschain_address() -> Address {
    AccountId::derive("crosschain-coordination")
}

fn validators(chain: &str, n: usize) -> Vec<AccountId> {
    (0..n).map(|j| AccountId::derive(&format!("{chain}/v{j}"))).collect()
}

struct PinWatch {
    number: u64,
    hash: Hash32,
    due: u64,
    included_at: Option<u64>,
    final_at: Option<u64>,
}

/// Pinning client state for one sidechain or intermediate chain.
struct Client {
    id: SidechainId,
    /// Intermediate chain index for hierarchical pinning.
    hub: Option<usize>,
    interval: u64,
    offset: u64,
    block_time: u64,
    activity_interval: Option<u64>,
    lifetime: Option<u64>,
    closing: bool,
    pins: Vec<PinWatch>,
    archive: Option<ArchiveMetrics>,
}

/// A private fork racing to replace `target` and the blocks above it.
struct Branch {
    target: u64,
    tip: Hash32,
    tip_number: u64,
    last: Option<BuiltBlock>,
}

struct PrivateMiner {
    q: f64,
    max_deficit: u64,
    account: AccountId,
    branch: Option<Branch>,
    attempts: u64,
    final_reversions: u64,
}

struct Spammer {
    accounts: Vec<AccountId>,
    next: usize,
    carry: f64,
    rate: f64,
    pin_payload: bool,
    /// Fixed bid in wei, or the current market price when unset.
    bid: Option<u128>,
    start: u64,
    stop: u64,
    submitted: u64,
    chain: SidechainId,
}

struct XtxSlot {
    id: String,
    spec: CrosschainTxSpec,
    fault: crate::crosschain::Fault,
    submit_time: u64,
    run: Option<XtxRun>,
    error: Option<String>,
}

type Inclusions = BTreeMap<(SidechainId, u64, Hash32), Vec<(PinRecord, u64)>>;

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    rng: ChaCha8Rng,
    t: u64,
    root: ChainNode,
    tracker: TxTracker,
    hubs: Vec<Sidechain>,
    hub_clients: Vec<Client>,
    sidechains: Vec<Sidechain>,
    clients: Vec<Client>,
    watched: BTreeSet<SidechainId>,
    inclusions: Inclusions,
    honest: AccountId,
    miner: Option<PrivateMiner>,
    spammer: Option<Spammer>,
    initiator: AccountId,
    xtx: Vec<XtxSlot>,
    names: BTreeMap<AccountId, String>,
    samples: HashMap<Hash32, (f64, u64)>,
    max_price: f64,
    reversions: ReversionMetrics,
    violations: Vec<String>,
}

/// Runs a scenario. The same configuration and seed always give the same report.
pub fn run(config: &ScenarioConfig, seed_override: Option<u64>) -> RunReport {
    let seed = seed_override.unwrap_or(config.seed);
    if let Err(e) = config.validate() {
        return invalid_report(config, seed, e.0);
    }
    let mut engine = Engine::new(config, seed);
    engine.run();
    engine.report(seed)
}

fn invalid_report(config: &ScenarioConfig, seed: u64, errors: Vec<String>) -> RunReport {
    RunReport {
        seed,
        duration: config.duration,
        root: RootMetrics {
            blocks: 0,
            tx_count: 0,
            pin_txs: 0,
            gas_used: 0,
            mean_utilization: 0.0,
            final_gas_price_gwei: 0.0,
            max_gas_price_gwei: 0.0,
            mempool_backlog_end: 0,
        },
        sidechains: BTreeMap::new(),
        intermediates: BTreeMap::new(),
        fiat_spend_usd: BTreeMap::new(),
        crosschain: CrosschainSummary::default(),
        reversions: ReversionMetrics::default(),
        spam: None,
        series: None,
        invariant_violations: errors.into_iter().map(|e| format!("invalid config: {e}")).collect(),
    }
}

fn stack<'a>(root: &'a ChainNode, hubs: &'a [Sidechain], hub: Option<usize>) -> Vec<StackLevel<'a>> {
    let root_level = StackLevel {
        node: root,
        pinning: root_pinning_address(),
    };
    match hub {
        None => vec![root_level],
        Some(h) => vec![
            StackLevel {
                node: &hubs[h].node,
                pinning: hosted_pinning_address(),
            },
            root_level,
        ],
    }
}

fn block_gas(block: &Block) -> u64 {
    block.receipts.iter().map(|r| r.gas_used).sum()
}

fn record_pins(inclusions: &mut Inclusions, watched: &BTreeSet<SidechainId>, block: &Block, t: u64) {
    for (tx, r) in block.txs.iter().zip(&block.receipts) {
        let Payload::Call {
            op:
                ContractOp::Pinning(PinningOp::PinAdd {
                    sidechain,
                    block_number,
                    block_hash,
                }),
            ..
        } = &tx.payload
        else {
            continue;
        };
        if r.status.is_success() && watched.contains(sidechain) {
            let rec = PinRecord {
                sidechain_id: *sidechain,
                block_number: *block_number,
                block_hash: *block_hash,
                poster: tx.sender,
                posted_at_block: block.header.number,
            };
            inclusions
                .entry((*sidechain, *block_number, *block_hash))
                .or_default()
                .push((rec, t));
        }
    }
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64) -> Self {
        let mut names = BTreeMap::new();
        let mut root_genesis = WorldState::new(digest(b"coordination-chain"));
        let initiator = AccountId::derive("crosschain/initiator");
        names.insert(initiator, "crosschain-initiator".to_string());
        root_genesis.fund(initiator, FUNDS);
        root_genesis.deploy_at(root_pinning_address(), &ContractInit::Pinning);
        root_genesis.deploy_at(keyset_registry_address(), &ContractInit::Pinning);
        root_genesis.deploy_at(
            crosschain_address(),
            &ContractInit::Crosschain {
                keyset_registry: keyset_registry_address(),
            },
        );

        let hub_validators: Vec<Vec<AccountId>> = cfg
            .intermediates
            .iter()
            .map(|h| validators(&h.name, h.validators))
            .collect();
        let mut hub_genesis: Vec<WorldState> = cfg
            .intermediates
            .iter()
            .zip(&hub_validators)
            .map(|(h, v)| {
                let mut g = sidechain_genesis(sidechain_id(&h.name), v);
                g.deploy_at(hosted_pinning_address(), &ContractInit::Pinning);
                g
            })
            .collect();

        let mut watched = BTreeSet::new();
        let mut sidechains = Vec::new();
        let mut clients = Vec::new();
        for sc in &cfg.sidechains {
            let v = validators(&sc.name, sc.validators);
            for (j, a) in v.iter().enumerate() {
                names.insert(*a, format!("{}/v{j}", sc.name));
                root_genesis.fund(*a, FUNDS);
            }
            let id = sidechain_id(&sc.name);
            watched.insert(id);
            root_genesis
                .pinning_mut(&keyset_registry_address())
                .expect("deployed")
                .insert_sidechain(id, v[0], &v);
            let hub = match sc.strategy {
                PinStrategy::Direct => {
                    root_genesis
                        .pinning_mut(&root_pinning_address())
                        .expect("deployed")
                        .insert_sidechain(id, v[0], &v);
                    None
                }
                PinStrategy::Hierarchical => {
                    let h = cfg.via_index(sc).expect("validated");
                    let g = &mut hub_genesis[h];
                    for a in &v {
                        g.fund(*a, FUNDS);
                    }
                    g.pinning_mut(&hosted_pinning_address())
                        .expect("deployed")
                        .insert_sidechain(id, v[0], &v);
                    Some(h)
                }
            };
            let schedule = GasSchedule {
                block_time: sc.block_time,
                ..cfg.coordination.gas
            };
            let mut chain = Sidechain::new(&sc.name, v, schedule);
            chain.pin_target = Some(match hub {
                None => PinTarget {
                    chain: ChainRef::Root,
                    contract: root_pinning_address(),
                },
                Some(h) => PinTarget {
                    chain: ChainRef::Intermediate(h),
                    contract: hosted_pinning_address(),
                },
            });
            sidechains.push(chain);
            clients.push(Client {
                id,
                hub,
                interval: sc.pin_interval,
                offset: 0,
                block_time: sc.block_time,
                activity_interval: Some(sc.activity_interval),
                lifetime: sc.lifetime,
                closing: false,
                pins: Vec::new(),
                archive: None,
            });
        }

        let mut hubs = Vec::new();
        let mut hub_clients = Vec::new();
        for ((h, v), g) in cfg.intermediates.iter().zip(hub_validators).zip(hub_genesis) {
            let id = sidechain_id(&h.name);
            watched.insert(id);
            for (j, a) in v.iter().enumerate() {
                names.insert(*a, format!("{}/v{j}", h.name));
                root_genesis.fund(*a, FUNDS);
            }
            root_genesis
                .pinning_mut(&root_pinning_address())
                .expect("deployed")
                .insert_sidechain(id, v[0], &v);
            let schedule = GasSchedule {
                block_time: h.block_time,
                ..cfg.coordination.gas
            };
            let mut chain = Sidechain::from_genesis(&h.name, v, g, schedule);
            chain.pin_target = Some(PinTarget {
                chain: ChainRef::Root,
                contract: root_pinning_address(),
            });
            hubs.push(chain);
            hub_clients.push(Client {
                id,
                hub: None,
                interval: h.pin_interval,
                offset: h.pin_offset,
                block_time: h.block_time,
                activity_interval: None,
                lifetime: None,
                closing: false,
                pins: Vec::new(),
                archive: None,
            });
        }

        let mut miner = None;
        let mut spammer = None;
        for a in &cfg.adversaries {
            match *a {
                AdversaryConfig::PrivateMiner { q, max_deficit } => {
                    let account = AccountId::derive("miner/private");
                    names.insert(account, "private-miner".into());
                    miner = Some(PrivateMiner {
                        q,
                        max_deficit,
                        account,
                        branch: None,
                        attempts: 0,
                        final_reversions: 0,
                    });
                }
                AdversaryConfig::Spammer {
                    rate,
                    tx_gas,
                    accounts,
                    gas_price_gwei,
                    start,
                    stop,
                } => {
                    let accts: Vec<AccountId> =
                        (0..accounts).map(|k| AccountId::derive(&format!("spammer/{k}"))).collect();
                    let chain = sidechain_id("spam");
                    for a in &accts {
                        names.insert(*a, "spammer".into());
                        root_genesis.fund(*a, FUNDS);
                    }
                    let pin_payload = tx_gas == cfg.coordination.gas.pin_tx_gas;
                    if pin_payload {
                        root_genesis
                            .pinning_mut(&root_pinning_address())
                            .expect("deployed")
                            .insert_sidechain(chain, accts[0], &accts);
                    }
                    spammer = Some(Spammer {
                        accounts: accts,
                        next: 0,
                        carry: 0.0,
                        rate,
                        pin_payload,
                        bid: gas_price_gwei.map(|g| (g * WEI_PER_GWEI).ceil() as u128),
                        start,
                        stop: stop.unwrap_or(cfg.duration).min(cfg.duration),
                        submitted: 0,
                        chain,
                    });
                }
            }
        }

        let mut root = ChainNode::new(
            root_genesis,
            FinalityMode::Probabilistic,
            cfg.coordination.gas,
            cfg.policy(),
            cfg.price_state(),
        );
        root.dynamic_price = cfg.coordination.dynamic_price;
        let honest = AccountId::derive("miner/honest");
        names.insert(honest, "honest-miner".into());

        let xtx = cfg
            .crosschain
            .iter()
            .map(|x| XtxSlot {
                id: x.id.clone(),
                spec: CrosschainTxSpec {
                    tx_id: digest(format!("crosschain/{}", x.id).as_bytes()),
                    legs: x
                        .legs
                        .iter()
                        .map(|l| LegSpec {
                            sidechain: cfg.sidechains.iter().position(|s| &s.name == l).expect("validated"),
                            key: format!("xtx/{}", x.id),
                            value: x.id.as_bytes().to_vec(),
                        })
                        .collect(),
                    timeout_blocks: x.timeout_blocks,
                },
                fault: x.fault,
                submit_time: x.submit_time,
                run: None,
                error: None,
            })
            .collect();

        Engine {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            t: 0,
            max_price: root.price.gas_price,
            root,
            tracker: TxTracker::default(),
            hubs,
            hub_clients,
            sidechains,
            clients,
            watched,
            inclusions: BTreeMap::new(),
            honest,
            miner,
            spammer,
            initiator,
            xtx,
            names,
            samples: HashMap::new(),
            reversions: ReversionMetrics::default(),
            violations: Vec::new(),
        }
    }

    fn settle_window(&self) -> u64 {
        let bt = self.cfg.coordination.gas.block_time;
        let z = self.cfg.coordination.confirmations;
        let timeout = self.cfg.crosschain.iter().map(|x| x.timeout_blocks).max().unwrap_or(0);
        let offset = self.cfg.intermediates.iter().map(|h| h.pin_offset + h.block_time).max().unwrap_or(0);
        let blocks = z + timeout + 10;
        let factor = if self.cfg.stochastic_blocks { 3 } else { 1 };
        bt * blocks * factor + offset + 60
    }

    fn next_block_gap(&mut self) -> u64 {
        let bt = self.cfg.coordination.gas.block_time;
        if self.cfg.stochastic_blocks {
            let exp = Exp::new(1.0 / bt as f64).expect("positive rate");
            (exp.sample(&mut self.rng).round() as u64).max(1)
        } else {
            bt
        }
    }

    fn run(&mut self) {
        let end = self.cfg.duration + self.settle_window();
        self.activate_keysets();
        let mut next_root = self.next_block_gap();
        for t in 0..=end {
            self.t = t;
            self.submissions();
            let mut changed = self.mint_sidechains();
            if t == next_root {
                self.root_block();
                next_root = t + self.next_block_gap();
                changed = true;
            }
            if changed {
                self.after_blocks();
            }
        }
        self.t = end;
    }

    fn activate_keysets(&mut self) {
        let registry = keyset_registry_address();
        for sc in &mut self.sidechains {
            sc.keyset_version = 1;
            let propose = keyset_propose_tx(&self.root, registry, sc.validators[0], sc.id, 1);
            self.tracker.submit(&mut self.root, propose);
            for v in sc.validators.iter().take(sc.validators.len() / 2 + 1) {
                let vote = keyset_vote_tx(&self.root, registry, *v, sc.id, 1);
                self.tracker.submit(&mut self.root, vote);
            }
        }
    }

    fn submissions(&mut self) {
        let t = self.t;
        let duration = self.cfg.duration;

        for (i, c) in self.clients.iter_mut().enumerate() {
            let sc = &mut self.sidechains[i];
            if c.closing || sc.is_archived() {
                continue;
            }
            if c.lifetime == Some(t) {
                if !sc.node.mempool.is_empty() {
                    if let Ok(b) = sc.mint(t) {
                        check_block(&mut self.violations, &sc.name, &b, &sc.node.schedule);
                    }
                }
                c.closing = true;
            } else if c.activity_interval.is_some_and(|a| t > 0 && t.is_multiple_of(a) && t < duration) {
                let _ = sc.submit_kv("tick", t.to_be_bytes().to_vec());
            }
            let due = t % c.interval == c.offset % c.interval && t >= c.offset && t - c.offset < duration;
            let head = sc.head().clone();
            // An unchanged head is already anchored by the previous pin.
            if (c.closing || due) && c.pins.last().is_none_or(|w| w.hash != head.hash) {
                let tx = match c.hub {
                    None => {
                        let bid = self.root.price.bid();
                        sc.pin_now(&mut self.root, bid).map(|tx| {
                            self.tracker.submit(&mut self.root, tx);
                        })
                    }
                    Some(h) => {
                        let hub = &mut self.hubs[h].node;
                        let bid = hub.price.bid();
                        sc.pin_now(hub, bid).map(|_| ())
                    }
                };
                if tx.is_ok() {
                    c.pins.push(PinWatch {
                        number: head.number,
                        hash: head.hash,
                        due: t,
                        included_at: None,
                        final_at: None,
                    });
                }
            }
        }

        for (h, c) in self.hub_clients.iter_mut().enumerate() {
            let due = t >= c.offset && (t - c.offset).is_multiple_of(c.interval) && t - c.offset < duration;
            let hub = &mut self.hubs[h];
            let head = hub.head().clone();
            if due && c.pins.last().is_none_or(|w| w.hash != head.hash) {
                let bid = self.root.price.bid();
                if let Ok(tx) = hub.pin_now(&mut self.root, bid) {
                    self.tracker.submit(&mut self.root, tx);
                    c.pins.push(PinWatch {
                        number: head.number,
                        hash: head.hash,
                        due: t,
                        included_at: None,
                        final_at: None,
                    });
                }
            }
        }

        if let Some(s) = &mut self.spammer {
            if t >= s.start && t < s.stop {
                let bid = s.bid.unwrap_or_else(|| self.root.price.bid());
                s.carry += s.rate;
                while s.carry >= 1.0 {
                    s.carry -= 1.0;
                    let sender = s.accounts[s.next % s.accounts.len()];
                    s.next += 1;
                    let nonce = self.root.next_nonce(&sender);
                    let tx = if s.pin_payload {
                        let n = s.submitted;
                        Transaction::call(
                            sender,
                            nonce,
                            bid,
                            root_pinning_address(),
                            ContractOp::Pinning(PinningOp::PinAdd {
                                sidechain: s.chain,
                                block_number: n,
                                block_hash: digest(&n.to_be_bytes()),
                            }),
                        )
                        .with_gas_limit(self.cfg.coordination.gas.pin_tx_gas)
                    } else {
                        Transaction {
                            sender,
                            nonce,
                            gas_limit: self.cfg.coordination.gas.intrinsic_tx_gas,
                            gas_price: bid,
                            payload: Payload::Transfer { to: sender, amount: 0 },
                            authorized: true,
                        }
                    };
                    self.root.submit(tx);
                    s.submitted += 1;
                }
            }
        }

        for slot in &mut self.xtx {
            if slot.submit_time == t {
                let run = XtxRun::new(
                    slot.spec.clone(),
                    self.initiator,
                    crosschain_address(),
                    keyset_registry_address(),
                    slot.fault,
                    DecidePolicy::WhenComplete,
                );
                slot.run = Some(run);
                try_start(slot, &mut self.root, &mut self.sidechains, t);
            }
        }
    }

    fn mint_sidechains(&mut self) -> bool {
        let t = self.t;
        if t == 0 {
            return false;
        }
        let mut minted = false;
        for (i, c) in self.clients.iter().enumerate() {
            let sc = &mut self.sidechains[i];
            if c.closing || sc.is_archived() || !t.is_multiple_of(c.block_time) || sc.node.mempool.is_empty() {
                continue;
            }
            if let Ok(b) = sc.mint(t) {
                check_block(&mut self.violations, &sc.name, &b, &sc.node.schedule);
            }
        }
        for (h, c) in self.hub_clients.iter().enumerate() {
            let hub = &mut self.hubs[h];
            if !t.is_multiple_of(c.block_time) || hub.node.mempool.is_empty() {
                continue;
            }
            if let Ok(b) = hub.mint(t) {
                check_block(&mut self.violations, &hub.name, &b, &hub.node.schedule);
                record_pins(&mut self.inclusions, &self.watched, &b.block, t);
                minted = true;
            }
        }
        minted
    }

    fn root_block(&mut self) {
        let attack = match &self.miner {
            Some(m) => self.rng.random::<f64>() < m.q,
            None => false,
        };
        if attack {
            self.attacker_block();
        } else {
            self.honest_block();
        }
        self.max_price = self.max_price.max(self.root.price.gas_price);
        let t = self.t;
        for slot in &mut self.xtx {
            if slot.error.is_none() && slot.run.as_ref().is_some_and(|r| r.submitted_at().is_none()) {
                try_start(slot, &mut self.root, &mut self.sidechains, t);
            }
            if let Some(run) = slot.run.as_mut().filter(|r| r.submitted_at().is_some()) {
                run.step(&mut XtxEnv {
                    root: &mut self.root,
                    sidechains: &mut self.sidechains,
                    now: t,
                });
            }
        }
    }

    fn honest_block(&mut self) {
        let t = self.t;
        let parent = self.root.view.head().clone();
        match self.root.mint(self.honest, t) {
            Ok((built, change)) => {
                let h = &built.block.header;
                if h.number != parent.number + 1 || h.timestamp < parent.timestamp {
                    self.violations
                        .push(format!("root block {} breaks number or time ordering", h.number));
                }
                check_block(&mut self.violations, "root", &built, &self.root.schedule);
                record_pins(&mut self.inclusions, &self.watched, &built.block, t);
                self.samples
                    .insert(built.hash(), (self.root.price.gas_price, self.root.mempool.len() as u64));
                self.head_changed(change);
            }
            Err(e) => self.violations.push(format!("root mint failed: {e}")),
        }
        let Some(m) = &mut self.miner else { return };
        let head = self.root.view.head().number;
        if m.branch.as_ref().is_some_and(|b| head >= b.tip_number + m.max_deficit) {
            m.branch = None;
        }
        if m.branch.is_none() {
            m.branch = Some(start_attempt(&self.root, m));
        }
    }

    fn attacker_block(&mut self) {
        let t = self.t;
        let m = self.miner.as_mut().expect("attacker present");
        if m.branch.is_none() {
            m.branch = Some(start_attempt(&self.root, m));
        }
        let b = m.branch.as_mut().expect("just set");
        let built = match self.root.view.build_block(&b.tip, m.account, t, &[], &self.root.schedule) {
            Ok(b) => b,
            Err(e) => {
                self.violations.push(format!("private block failed: {e}"));
                return;
            }
        };
        if let Err(e) = self.root.view.insert(built.clone()) {
            self.violations.push(format!("private block rejected: {e}"));
            return;
        }
        b.tip = built.hash();
        b.tip_number += 1;
        b.last = Some(built);
        let head = self.root.view.head().number;
        let z = self.root.policy.confirmations_required;
        // Publishing only pays once the target block is final and the fork is longer.
        if b.tip_number <= head || head < b.target + z {
            return;
        }
        let old_head = self.root.view.head().number;
        let z = self.root.policy.confirmations_required;
        let last = m.branch.take().expect("just set").last.expect("branch has a block");
        match self.root.adopt(last) {
            Ok(change) => {
                if let Some(r) = &change.reorg {
                    let fork = self.root.view.header(&r.fork_point).map_or(0, |h| h.number);
                    if old_head >= fork + 1 + z {
                        m.final_reversions += 1;
                    }
                    for h in &r.adopted {
                        self.samples
                            .insert(*h, (self.root.price.gas_price, self.root.mempool.len() as u64));
                    }
                }
                let tip = self.root.view.head_hash();
                self.samples
                    .entry(tip)
                    .or_insert((self.root.price.gas_price, self.root.mempool.len() as u64));
                self.head_changed(change);
            }
            Err(e) => self.violations.push(format!("publishing private branch failed: {e}")),
        }
    }

    fn head_changed(&mut self, change: HeadChange) {
        if let Some(r) = &change.reorg {
            let depth = r.reverted.len() as u64;
            self.reversions.reorgs += 1;
            self.reversions.blocks_reverted += depth;
            self.reversions.max_depth = self.reversions.max_depth.max(depth);
        }
        self.tracker.on_head_change(&mut self.root, &change);
        for slot in &mut self.xtx {
            if let Some(run) = &mut slot.run {
                run.on_head_change(&mut self.root, &change);
            }
        }
    }

    /// Refreshes pin inclusion and finality, and archives closing sidechains.
    fn after_blocks(&mut self) {
        let t = self.t;
        for c in self.clients.iter_mut().chain(self.hub_clients.iter_mut()) {
            let levels = stack(&self.root, &self.hubs, c.hub);
            for w in c.pins.iter_mut().filter(|w| w.final_at.is_none()) {
                let Some(recs) = self.inclusions.get(&(c.id, w.number, w.hash)) else {
                    continue;
                };
                if w.included_at.is_none() {
                    w.included_at = recs.iter().map(|(_, at)| *at).min();
                }
                if recs
                    .iter()
                    .any(|(r, _)| pin_finality(r, &levels) == Ok(PinStatus::Final))
                {
                    w.final_at = Some(t);
                }
            }
        }

        for (i, c) in self.clients.iter_mut().enumerate() {
            let sc = &mut self.sidechains[i];
            if !c.closing || c.archive.is_some() {
                continue;
            }
            let levels = stack(&self.root, &self.hubs, c.hub);
            let Ok(blob) = sc.archive(&levels) else {
                continue;
            };
            let bytes = blob.to_bytes();
            let restore_ok = match restore(&bytes, &levels, sc.node.schedule) {
                Ok(r) => r.state_commitment() == sc.state_commitment() && r.head().hash == sc.head().hash,
                Err(_) => false,
            };
            if !restore_ok {
                self.violations
                    .push(format!("sidechain {} did not restore from its archive", sc.name));
            }
            c.archive = Some(ArchiveMetrics {
                archived_at: t,
                blob_bytes: bytes.len() as u64,
                restore_ok,
            });
        }
    }

    fn chain_metrics(&self, c: &Client, strategy: PinStrategy, duty: u64, root_pins: &BTreeMap<SidechainId, (u64, f64)>) -> ChainMetrics {
        let latency: Vec<f64> = c
            .pins
            .iter()
            .filter_map(|w| w.included_at.map(|at| (at - w.due) as f64))
            .collect();
        let delay: Vec<f64> = c
            .pins
            .iter()
            .filter_map(|w| w.final_at.map(|at| (at - w.due) as f64))
            .collect();
        ChainMetrics {
            strategy,
            pins_scheduled: c.pins.len() as u64,
            pins_included: latency.len() as u64,
            pins_final: delay.len() as u64,
            root_pin_txs: root_pins.get(&c.id).map_or(0, |p| p.0),
            root_pin_spend_usd: root_pins.get(&c.id).map_or(0.0, |p| p.1),
            pin_latency: Stats::of(&latency),
            finality_delay: Stats::of(&delay),
            observation_duty: duty,
            membership_exposed: c.hub.is_none(),
            keyset_readiness: None,
            archive: c.archive.clone(),
        }
    }

    fn report(self, seed: u64) -> RunReport {
        let cfg = self.cfg;
        let view = &self.root.view;
        let eth = cfg.prices.eth_price_usd;
        let usd = |wei: u128| wei as f64 / WEI_PER_ETH * eth;
        let mut violations = self.violations.clone();

        let mut blocks = 0u64;
        let mut tx_count = 0u64;
        let mut gas_used = 0u64;
        let mut pin_txs = 0u64;
        let mut root_pins: BTreeMap<SidechainId, (u64, u128)> = BTreeMap::new();
        let mut spend: BTreeMap<String, u128> = BTreeMap::new();
        let mut spam_included = 0u64;
        let mut spam_wei = 0u128;
        let mut series = Vec::new();
        let mut prev: Option<(u64, u64)> = None;
        let spam_chain = self.spammer.as_ref().map(|s| s.chain);
        for h in view.canonical_hashes() {
            let block = view.block(h).expect("canonical block stored");
            let hd = &block.header;
            if let Some((n, ts)) = prev {
                if hd.number != n + 1 || hd.timestamp < ts {
                    violations.push(format!("canonical root block {} breaks ordering", hd.number));
                }
            }
            prev = Some((hd.number, hd.timestamp));
            if hd.number == 0 {
                continue;
            }
            blocks += 1;
            tx_count += block.txs.len() as u64;
            let g = block_gas(block);
            gas_used += g;
            for (tx, r) in block.txs.iter().zip(&block.receipts) {
                let name = self.names.get(&tx.sender).cloned().unwrap_or_else(|| tx.sender.to_string());
                *spend.entry(name.clone()).or_default() += r.fee;
                if name == "spammer" {
                    spam_included += 1;
                    spam_wei += r.fee;
                    continue;
                }
                if let Payload::Call {
                    contract,
                    op: ContractOp::Pinning(PinningOp::PinAdd { sidechain, .. }),
                } = &tx.payload
                {
                    if r.status.is_success() && *contract == root_pinning_address() && Some(*sidechain) != spam_chain {
                        pin_txs += 1;
                        let e = root_pins.entry(*sidechain).or_default();
                        e.0 += 1;
                        e.1 += r.fee;
                    }
                }
            }
            if cfg.record_series {
                let (price, backlog) = self.samples.get(h).copied().unwrap_or((0.0, 0));
                series.push(BlockSample {
                    number: hd.number,
                    timestamp: hd.timestamp,
                    gas_used: g,
                    gas_price_gwei: price / WEI_PER_GWEI,
                    backlog,
                    spam_spend_usd: usd(spam_wei),
                });
            }
        }
        let limit = cfg.coordination.gas.block_gas_limit as f64;

        let root_pins: BTreeMap<SidechainId, (u64, f64)> =
            root_pins.into_iter().map(|(k, (n, wei))| (k, (n, usd(wei)))).collect();
        let xtx_members: BTreeSet<usize> = self
            .xtx
            .iter()
            .flat_map(|s| s.spec.legs.iter().map(|l| l.sidechain))
            .collect();
        let mut sidechains = BTreeMap::new();
        for (i, (c, sc)) in self.clients.iter().zip(&self.sidechains).enumerate() {
            let strategy = cfg.sidechains[i].strategy;
            let duty = match strategy {
                PinStrategy::Direct => 1,
                PinStrategy::Hierarchical => 2,
            } + u64::from(xtx_members.contains(&i));
            let mut m = self.chain_metrics(c, strategy, duty, &root_pins);
            m.keyset_readiness = first_transaction_readiness(&self.root, keyset_registry_address(), &sc.id, 1);
            sidechains.insert(sc.name.clone(), m);
        }
        let mut intermediates = BTreeMap::new();
        for (c, hub) in self.hub_clients.iter().zip(&self.hubs) {
            intermediates.insert(hub.name.clone(), self.chain_metrics(c, PinStrategy::Direct, 1, &root_pins));
        }

        let mut crosschain = CrosschainSummary::default();
        for slot in &self.xtx {
            let legs: Vec<String> = slot
                .spec
                .legs
                .iter()
                .map(|l| cfg.sidechains[l.sidechain].name.clone())
                .collect();
            let entry = match &slot.run {
                Some(run) if slot.error.is_none() && run.submitted_at().is_some() => {
                    let o = run.outcome(&self.root, &self.sidechains);
                    let status = if o.mixed {
                        crosschain.mixed += 1;
                        "mixed"
                    } else {
                        match o.final_status {
                            Some(XtxState::Committed) if run.is_resolved() => {
                                crosschain.committed += 1;
                                "committed"
                            }
                            Some(XtxState::Ignored) if run.is_resolved() => {
                                crosschain.ignored += 1;
                                "ignored"
                            }
                            _ => {
                                crosschain.unresolved += 1;
                                "unresolved"
                            }
                        }
                    };
                    for v in &o.violations {
                        violations.push(format!("crosschain {}: {v}", slot.id));
                    }
                    CrosschainReport {
                        status: status.into(),
                        legs,
                        start_delay: effective_start_delay(
                            &self.root,
                            crosschain_address(),
                            &slot.spec.tx_id,
                            slot.submit_time,
                        ),
                        violations: o.violations,
                    }
                }
                _ => {
                    crosschain.unresolved += 1;
                    CrosschainReport {
                        status: "not-started".into(),
                        legs,
                        start_delay: None,
                        violations: slot.error.iter().cloned().collect(),
                    }
                }
            };
            crosschain.transactions.insert(slot.id.clone(), entry);
        }
        if crosschain.mixed > 0 {
            violations.push(format!("{} crosschain transactions ended mixed", crosschain.mixed));
        }

        let mut reversions = self.reversions.clone();
        if let Some(m) = &self.miner {
            let z = cfg.coordination.confirmations;
            reversions.attack_attempts = m.attempts;
            reversions.final_reversions = m.final_reversions;
            let bound = catchup_probability(m.q, z).ok();
            reversions.analytic_bound = bound;
            if m.attempts > 0 {
                let rate = m.final_reversions as f64 / m.attempts as f64;
                reversions.final_reversion_rate = Some(rate);
                reversions.within_bound = bound.map(|p| {
                    let sigma = (p * (1.0 - p) / m.attempts as f64).sqrt();
                    rate <= p + 3.0 * sigma
                });
            }
        }

        RunReport {
            seed,
            duration: cfg.duration,
            root: RootMetrics {
                blocks,
                tx_count,
                pin_txs,
                gas_used,
                mean_utilization: if blocks == 0 { 0.0 } else { gas_used as f64 / (blocks as f64 * limit) },
                final_gas_price_gwei: self.root.price.gas_price / WEI_PER_GWEI,
                max_gas_price_gwei: self.max_price / WEI_PER_GWEI,
                mempool_backlog_end: self.root.mempool.len() as u64,
            },
            sidechains,
            intermediates,
            fiat_spend_usd: spend.into_iter().map(|(k, v)| (k, usd(v))).collect(),
            crosschain,
            reversions,
            spam: self.spammer.as_ref().map(|s| SpamMetrics {
                submitted: s.submitted,
                included: spam_included,
                spend_usd: usd(spam_wei),
            }),
            series: cfg.record_series.then_some(series),
            invariant_violations: violations,
        }
    }
}

/// Forks from the parent of the current head, so the head is the target.
fn start_attempt(root: &ChainNode, m: &mut PrivateMiner) -> Branch {
    m.attempts += 1;
    let head = root.view.head();
    if head.number == 0 {
        return Branch {
            target: 1,
            tip: root.view.head_hash(),
            tip_number: 0,
            last: None,
        };
    }
    Branch {
        target: head.number,
        tip: head.parent_hash,
        tip_number: head.number - 1,
        last: None,
    }
}

fn check_block(violations: &mut Vec<String>, chain: &str, built: &BuiltBlock, schedule: &GasSchedule) {
    let used = block_gas(&built.block);
    if used > schedule.block_gas_limit {
        violations.push(format!(
            "{chain} block {} used {used} gas over the limit {}",
            built.block.header.number, schedule.block_gas_limit
        ));
    }
}

fn try_start(slot: &mut XtxSlot, root: &mut ChainNode, sidechains: &mut [Sidechain], now: u64) {
    let Some(run) = slot.run.as_mut() else { return };
    match run.start(&mut XtxEnv { root, sidechains, now }) {
        Ok(_) => {}
        Err(XtxError::NoActiveKeyset(_)) => {}
        Err(e) => slot.error = Some(e.to_string()),
    }
}

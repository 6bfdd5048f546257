//! Scenario configuration and its line-oriented file format.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::crosschain::Fault;
use crate::finality::{FinalityPolicy, DEFAULT_MAX_DEFICIT};
use crate::gas::{GasSchedule, PriceState, REFERENCE_ETH_USD, REFERENCE_GAS_PRICE_WEI, WEI_PER_GWEI};
use crate::sidechain::PinStrategy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {field}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

/// Every violation found in an otherwise well-formed scenario.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scenario: {}", .0.join("; "))]
pub struct ValidationError(pub Vec<String>);

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinationConfig {
    pub gas: GasSchedule,
    pub confirmations: u64,
    pub dynamic_price: bool,
    pub target_utilization: f64,
    pub sensitivity: f64,
    /// Defaults to the configured gas price.
    pub price_floor_gwei: Option<f64>,
    pub price_ceiling_gwei: f64,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        let p = PriceState::default();
        CoordinationConfig {
            gas: GasSchedule::default(),
            confirmations: FinalityPolicy::default().confirmations_required,
            dynamic_price: true,
            target_utilization: p.target_utilization,
            sensitivity: p.sensitivity,
            price_floor_gwei: None,
            price_ceiling_gwei: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prices {
    pub gas_price_gwei: f64,
    pub eth_price_usd: f64,
}

impl Default for Prices {
    fn default() -> Self {
        Prices {
            gas_price_gwei: REFERENCE_GAS_PRICE_WEI / WEI_PER_GWEI,
            eth_price_usd: REFERENCE_ETH_USD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntermediateConfig {
    pub name: String,
    pub validators: usize,
    pub pin_interval: u64,
    /// Seconds after each pin slot at which the intermediate chain pins itself.
    pub pin_offset: u64,
    pub block_time: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SidechainConfig {
    pub name: String,
    pub validators: usize,
    pub strategy: PinStrategy,
    /// Intermediate chain for hierarchical pinning.
    pub via: Option<String>,
    pub pin_interval: u64,
    /// Seconds after which the sidechain takes a final pin and is archived.
    pub lifetime: Option<u64>,
    pub block_time: u64,
    /// Seconds between background key-value writes.
    pub activity_interval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AdversaryConfig {
    PrivateMiner {
        q: f64,
        max_deficit: u64,
    },
    Spammer {
        /// Transactions per second.
        rate: f64,
        tx_gas: u64,
        accounts: usize,
        /// Fixed bid; defaults to the current market price.
        gas_price_gwei: Option<f64>,
        start: u64,
        stop: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrosschainConfig {
    pub id: String,
    pub legs: Vec<String>,
    pub timeout_blocks: u64,
    pub submit_time: u64,
    pub fault: Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Simulated seconds during which new work is scheduled.
    pub duration: u64,
    pub stochastic_blocks: bool,
    /// Include a per-block series in the report.
    pub record_series: bool,
    pub coordination: CoordinationConfig,
    pub prices: Prices,
    pub intermediates: Vec<IntermediateConfig>,
    pub sidechains: Vec<SidechainConfig>,
    pub adversaries: Vec<AdversaryConfig>,
    pub crosschain: Vec<CrosschainConfig>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            duration: 86_400,
            stochastic_blocks: false,
            record_series: false,
            coordination: CoordinationConfig::default(),
            prices: Prices::default(),
            intermediates: Vec::new(),
            sidechains: Vec::new(),
            adversaries: Vec::new(),
            crosschain: Vec::new(),
        }
    }
}

impl SidechainConfig {
    pub fn named(name: &str) -> Self {
        SidechainConfig {
            name: name.to_string(),
            validators: 3,
            strategy: PinStrategy::Direct,
            via: None,
            pin_interval: 3600,
            lifetime: None,
            block_time: 5,
            activity_interval: 60,
        }
    }
}

impl IntermediateConfig {
    pub fn named(name: &str) -> Self {
        IntermediateConfig {
            name: name.to_string(),
            validators: 3,
            pin_interval: 3600,
            pin_offset: 30,
            block_time: 5,
        }
    }
}

impl ScenarioConfig {
    pub fn policy(&self) -> FinalityPolicy {
        FinalityPolicy {
            confirmations_required: self.coordination.confirmations,
            block_time_target: self.coordination.gas.block_time as f64,
        }
    }

    pub fn price_state(&self) -> PriceState {
        let c = &self.coordination;
        PriceState {
            gas_price: self.prices.gas_price_gwei * WEI_PER_GWEI,
            target_utilization: c.target_utilization,
            sensitivity: c.sensitivity,
            floor: c.price_floor_gwei.unwrap_or(self.prices.gas_price_gwei) * WEI_PER_GWEI,
            ceiling: c.price_ceiling_gwei * WEI_PER_GWEI,
        }
    }

    /// Intermediate chain a hierarchical sidechain pins to.
    pub fn via_index(&self, sc: &SidechainConfig) -> Option<usize> {
        match &sc.via {
            Some(name) => self.intermediates.iter().position(|i| &i.name == name),
            None if self.intermediates.len() == 1 => Some(0),
            None => None,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut errs = Vec::new();
        if self.duration == 0 {
            errs.push("duration must be positive".to_string());
        }
        let c = &self.coordination;
        if let Err(e) = c.gas.validate() {
            errs.push(format!("coordination: {e}"));
        }
        if c.confirmations == 0 {
            errs.push("coordination.confirmations must be at least 1".into());
        }
        if !(c.target_utilization > 0.0 && c.target_utilization <= 1.0) {
            errs.push("coordination.target_utilization must be in (0, 1]".into());
        }
        if !(c.sensitivity >= 0.0 && c.sensitivity.is_finite()) {
            errs.push("coordination.sensitivity must be non-negative".into());
        }
        let floor = c.price_floor_gwei.unwrap_or(self.prices.gas_price_gwei);
        if !(floor > 0.0 && floor <= c.price_ceiling_gwei && c.price_ceiling_gwei.is_finite()) {
            errs.push("coordination price floor must be positive and not above the ceiling".into());
        }
        if !(self.prices.gas_price_gwei > 0.0 && self.prices.gas_price_gwei.is_finite()) {
            errs.push("prices.gas_price_gwei must be positive".into());
        }
        if !(self.prices.eth_price_usd > 0.0 && self.prices.eth_price_usd.is_finite()) {
            errs.push("prices.eth_price_usd must be positive".into());
        }

        let mut names = BTreeSet::new();
        for i in &self.intermediates {
            if !names.insert(i.name.as_str()) {
                errs.push(format!("duplicate chain name {:?}", i.name));
            }
            if i.validators == 0 || i.pin_interval == 0 || i.block_time == 0 {
                errs.push(format!("intermediate {:?}: validators, pin_interval and block_time must be positive", i.name));
            }
        }
        for s in &self.sidechains {
            if !names.insert(s.name.as_str()) {
                errs.push(format!("duplicate chain name {:?}", s.name));
            }
            if s.validators == 0 || s.pin_interval == 0 || s.block_time == 0 || s.activity_interval == 0 {
                errs.push(format!(
                    "sidechain {:?}: validators, pin_interval, block_time and activity_interval must be positive",
                    s.name
                ));
            }
            if let Some(l) = s.lifetime {
                if l == 0 || l > self.duration {
                    errs.push(format!("sidechain {:?}: lifetime must be in 1..=duration", s.name));
                }
            }
            match (s.strategy, &s.via) {
                (PinStrategy::Direct, Some(_)) => {
                    errs.push(format!("sidechain {:?}: via is only valid for hierarchical pinning", s.name))
                }
                (PinStrategy::Hierarchical, _) if self.via_index(s).is_none() => errs.push(format!(
                    "sidechain {:?}: hierarchical pinning needs an existing intermediate chain (via)",
                    s.name
                )),
                _ => {}
            }
        }

        let mut miners = 0;
        for a in &self.adversaries {
            match a {
                AdversaryConfig::PrivateMiner { q, max_deficit } => {
                    miners += 1;
                    if !(0.0..1.0).contains(q) {
                        errs.push(format!("private-miner q = {q} is outside [0, 1)"));
                    }
                    if *max_deficit == 0 {
                        errs.push("private-miner max_deficit must be positive".into());
                    }
                }
                AdversaryConfig::Spammer {
                    rate,
                    tx_gas,
                    accounts,
                    gas_price_gwei,
                    start,
                    stop,
                } => {
                    if !(*rate > 0.0 && rate.is_finite()) {
                        errs.push(format!("spammer rate {rate} must be positive"));
                    }
                    if *tx_gas != c.gas.intrinsic_tx_gas && *tx_gas != c.gas.pin_tx_gas {
                        errs.push(format!(
                            "spammer tx_gas {tx_gas} must equal intrinsic_tx_gas ({}) or pin_tx_gas ({})",
                            c.gas.intrinsic_tx_gas, c.gas.pin_tx_gas
                        ));
                    }
                    if *accounts == 0 {
                        errs.push("spammer accounts must be positive".into());
                    }
                    if gas_price_gwei.is_some_and(|g| !(g > 0.0 && g.is_finite())) {
                        errs.push("spammer gas_price_gwei must be positive".into());
                    }
                    if stop.is_some_and(|s| s <= *start) {
                        errs.push("spammer stop must be after start".into());
                    }
                }
            }
        }
        if miners > 1 {
            errs.push("at most one private-miner adversary is supported".into());
        }
        let spammers = self
            .adversaries
            .iter()
            .filter(|a| matches!(a, AdversaryConfig::Spammer { .. }))
            .count();
        if spammers > 1 {
            errs.push("at most one spammer adversary is supported".into());
        }

        let sidechain_names: BTreeSet<&str> = self.sidechains.iter().map(|s| s.name.as_str()).collect();
        let mut ids = BTreeSet::new();
        for x in &self.crosschain {
            if !ids.insert(x.id.as_str()) {
                errs.push(format!("duplicate crosschain id {:?}", x.id));
            }
            let legs: BTreeSet<&str> = x.legs.iter().map(String::as_str).collect();
            if legs.len() != x.legs.len() || legs.len() < 2 {
                errs.push(format!("crosschain {:?}: needs at least two distinct legs", x.id));
            }
            for l in &x.legs {
                if !sidechain_names.contains(l.as_str()) {
                    errs.push(format!("crosschain {:?}: unknown sidechain {l:?}", x.id));
                }
            }
            if x.timeout_blocks == 0 {
                errs.push(format!("crosschain {:?}: timeout_blocks must be positive", x.id));
            }
            if x.submit_time >= self.duration {
                errs.push(format!("crosschain {:?}: submit_time must be before duration", x.id));
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ValidationError(errs))
        }
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, LoadError> {
    let config = parse_unvalidated(text)?;
    config.validate()?;
    Ok(config)
}

struct Section {
    name: String,
    line: usize,
    fields: BTreeMap<String, (String, usize)>,
}

impl Section {
    fn path(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ParseError>
    where
        T::Err: std::fmt::Display,
    {
        let Some((raw, line)) = self.fields.remove(key) else {
            return Ok(None);
        };
        raw.parse::<T>().map(Some).map_err(|e| ParseError {
            line,
            field: self.path(key),
            message: format!("cannot parse {raw:?}: {e}"),
        })
    }

    fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ParseError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T, ParseError>
    where
        T::Err: std::fmt::Display,
    {
        self.take(key)?.ok_or_else(|| ParseError {
            line: self.line,
            field: self.path(key),
            message: "required field is missing".into(),
        })
    }

    fn finish(self) -> Result<(), ParseError> {
        match self.fields.iter().min_by_key(|(_, (_, line))| *line) {
            Some((key, (_, line))) => Err(ParseError {
                line: *line,
                field: self.path(key),
                message: "unknown field".into(),
            }),
            None => Ok(()),
        }
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>, ParseError> {
    let mut sections = vec![Section {
        name: String::new(),
        line: 0,
        fields: BTreeMap::new(),
    }];
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ParseError {
                line,
                field: content.to_string(),
                message: "section header must end with ']'".into(),
            })?;
            sections.push(Section {
                name: name.trim().to_string(),
                line,
                fields: BTreeMap::new(),
            });
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ParseError {
            line,
            field: content.to_string(),
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim().to_string();
        let section = sections.last_mut().expect("top-level section");
        if key.is_empty() {
            return Err(ParseError {
                line,
                field: section.path(""),
                message: "empty key".into(),
            });
        }
        if section.fields.contains_key(&key) {
            return Err(ParseError {
                line,
                field: section.path(&key),
                message: "duplicate field".into(),
            });
        }
        section.fields.insert(key, (value.trim().to_string(), line));
    }
    Ok(sections)
}

struct Strategy(PinStrategy);

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Strategy(PinStrategy::Direct)),
            "hierarchical" => Ok(Strategy(PinStrategy::Hierarchical)),
            _ => Err("expected direct or hierarchical".into()),
        }
    }
}

struct FaultName(Fault);

impl FromStr for FaultName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(FaultName(Fault::None)),
            "silent-leg" => Ok(FaultName(Fault::SilentLeg)),
            "stale-keyset" => Ok(FaultName(Fault::StaleKeyset)),
            _ => Err("expected none, silent-leg or stale-keyset".into()),
        }
    }
}

fn parse_unvalidated(text: &str) -> Result<ScenarioConfig, ParseError> {
    let mut cfg = ScenarioConfig::default();
    let mut seen_coordination = false;
    let mut seen_prices = false;
    for mut s in split_sections(text)? {
        let once = match s.name.as_str() {
            "coordination" => Some(&mut seen_coordination),
            "prices" => Some(&mut seen_prices),
            _ => None,
        };
        if let Some(seen) = once {
            if std::mem::replace(seen, true) {
                return Err(ParseError {
                    line: s.line,
                    field: s.name.clone(),
                    message: "section may appear only once".into(),
                });
            }
        }
        match s.name.as_str() {
            "" => {
                cfg.seed = s.take_or("seed", cfg.seed)?;
                cfg.duration = s.take_or("duration", cfg.duration)?;
                cfg.stochastic_blocks = s.take_or("stochastic_blocks", cfg.stochastic_blocks)?;
                cfg.record_series = s.take_or("record_series", cfg.record_series)?;
            }
            "coordination" => {
                let c = &mut cfg.coordination;
                c.gas.block_time = s.take_or("block_time", c.gas.block_time)?;
                c.gas.block_gas_limit = s.take_or("block_gas_limit", c.gas.block_gas_limit)?;
                c.gas.intrinsic_tx_gas = s.take_or("intrinsic_tx_gas", c.gas.intrinsic_tx_gas)?;
                c.gas.pin_tx_gas = s.take_or("pin_tx_gas", c.gas.pin_tx_gas)?;
                c.gas.keyset_store_gas = s.take_or("keyset_store_gas", c.gas.keyset_store_gas)?;
                c.confirmations = s.take_or("confirmations", c.confirmations)?;
                c.dynamic_price = s.take_or("dynamic_price", c.dynamic_price)?;
                c.target_utilization = s.take_or("target_utilization", c.target_utilization)?;
                c.sensitivity = s.take_or("sensitivity", c.sensitivity)?;
                c.price_floor_gwei = s.take("price_floor_gwei")?.or(c.price_floor_gwei);
                c.price_ceiling_gwei = s.take_or("price_ceiling_gwei", c.price_ceiling_gwei)?;
            }
            "prices" => {
                cfg.prices.gas_price_gwei = s.take_or("gas_price_gwei", cfg.prices.gas_price_gwei)?;
                cfg.prices.eth_price_usd = s.take_or("eth_price_usd", cfg.prices.eth_price_usd)?;
            }
            "intermediate" => {
                let d = IntermediateConfig::named(&s.require::<String>("name")?);
                cfg.intermediates.push(IntermediateConfig {
                    validators: s.take_or("validators", d.validators)?,
                    pin_interval: s.take_or("pin_interval", d.pin_interval)?,
                    pin_offset: s.take_or("pin_offset", d.pin_offset)?,
                    block_time: s.take_or("block_time", d.block_time)?,
                    ..d
                });
            }
            "sidechain" => {
                let d = SidechainConfig::named(&s.require::<String>("name")?);
                cfg.sidechains.push(SidechainConfig {
                    validators: s.take_or("validators", d.validators)?,
                    strategy: s.take::<Strategy>("strategy")?.map_or(d.strategy, |x| x.0),
                    via: s.take("via")?,
                    pin_interval: s.take_or("pin_interval", d.pin_interval)?,
                    lifetime: s.take("lifetime")?,
                    block_time: s.take_or("block_time", d.block_time)?,
                    activity_interval: s.take_or("activity_interval", d.activity_interval)?,
                    ..d
                });
            }
            "adversary" => {
                let kind: String = s.require("kind")?;
                let a = match kind.as_str() {
                    "private-miner" => AdversaryConfig::PrivateMiner {
                        q: s.require("q")?,
                        max_deficit: s.take_or("max_deficit", DEFAULT_MAX_DEFICIT)?,
                    },
                    "spammer" => AdversaryConfig::Spammer {
                        rate: s.require("rate")?,
                        tx_gas: s.take_or("tx_gas", cfg.coordination.gas.pin_tx_gas)?,
                        accounts: s.take_or("accounts", 64)?,
                        gas_price_gwei: s.take("gas_price_gwei")?,
                        start: s.take_or("start", 0)?,
                        stop: s.take("stop")?,
                    },
                    _ => {
                        return Err(ParseError {
                            line: s.line,
                            field: s.path("kind"),
                            message: format!("unknown adversary kind {kind:?} (private-miner or spammer)"),
                        })
                    }
                };
                cfg.adversaries.push(a);
            }
            "crosschain" => {
                let legs: String = s.require("legs")?;
                cfg.crosschain.push(CrosschainConfig {
                    id: s.require("id")?,
                    legs: legs
                        .split(',')
                        .map(|l| l.trim().to_string())
                        .filter(|l| !l.is_empty())
                        .collect(),
                    timeout_blocks: s.take_or("timeout_blocks", 20)?,
                    submit_time: s.take_or("submit_time", 600)?,
                    fault: s.take::<FaultName>("fault")?.map_or(Fault::None, |f| f.0),
                });
            }
            other => {
                return Err(ParseError {
                    line: s.line,
                    field: other.to_string(),
                    message: "unknown section".into(),
                })
            }
        }
        s.finish()?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_scenario("[sidechain]\nname = alpha\n").unwrap();
        assert_eq!(cfg.coordination.gas, GasSchedule::default());
        assert_eq!(cfg.coordination.confirmations, 12);
        assert_eq!(cfg.sidechains, vec![SidechainConfig::named("alpha")]);
        assert_eq!(cfg.price_state().gas_price, 5.95e9);
    }

    #[test]
    fn parse_errors_carry_line_and_field() {
        let e = parse_unvalidated("seed = 1\n[sidechain]\nname = a\npin_interval = soon\n").unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (4, "sidechain.pin_interval"));
        let e = parse_unvalidated("\n[sidechain]\nname = a\ncolour = red\n").unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (4, "sidechain.colour"));
        let e = parse_unvalidated("[weather]\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = parse_unvalidated("[sidechain]\nvalidators = 2\n").unwrap_err();
        assert_eq!((e.line, e.field.as_str()), (1, "sidechain.name"));
        let e = parse_unvalidated("[prices]\n[prices]\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_unvalidated("seed 4\n").unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn validation_lists_every_violation() {
        let text = "duration = 3600\n[sidechain]\nname = a\n[adversary]\nkind = private-miner\nq = 1.2\n\
                    [crosschain]\nid = x\nlegs = a, ghost\n";
        let Err(LoadError::Validation(ValidationError(errs))) = parse_scenario(text) else {
            panic!("expected validation error");
        };
        assert_eq!(errs.len(), 2, "{errs:?}");
        assert!(errs[0].contains("q = 1.2"));
        assert!(errs[1].contains("ghost"));
    }

    #[test]
    fn hierarchical_needs_intermediate() {
        let e = parse_scenario("[sidechain]\nname = a\nstrategy = hierarchical\n").unwrap_err();
        assert!(matches!(e, LoadError::Validation(_)));
        let cfg = parse_scenario("[intermediate]\nname = hub\n[sidechain]\nname = a\nstrategy = hierarchical\n").unwrap();
        assert_eq!(cfg.via_index(&cfg.sidechains[0]), Some(0));
    }
}

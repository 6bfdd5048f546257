//! Side-by-side runs of one scenario under direct and hierarchical pinning.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use super::config::{ScenarioConfig, SidechainConfig};
use super::engine::run;
use super::report::{flat_csv, RunReport};
use crate::gas::SECONDS_PER_YEAR;
use crate::par::{join, Exec};
use crate::sidechain::PinStrategy;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompareError {
    #[error("scenario cannot express both variants: {0}")]
    MissingVariant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyRow {
    pub strategy: PinStrategy,
    pub root_pin_txs: u64,
    pub root_pin_gas: u64,
    pub root_tx_per_day: f64,
    pub usd_per_year: f64,
    pub mean_pin_finality_delay: Option<f64>,
    pub observation_duty: u64,
    pub exposure: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub sidechains: u64,
    pub rows: Vec<StrategyRow>,
    pub invariant_violations: Vec<String>,
}

impl Comparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "strategy,root_pin_txs,root_pin_gas,root_tx_per_day,usd_per_year,mean_pin_finality_delay,observation_duty,exposure\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.strategy.as_str(),
                r.root_pin_txs,
                r.root_pin_gas,
                r.root_tx_per_day,
                r.usd_per_year,
                r.mean_pin_finality_delay.map_or(String::new(), |d| d.to_string()),
                r.observation_duty,
                r.exposure
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<13} {:>10} {:>12} {:>12} {:>14} {:>5} {:>8}\n",
            "strategy", "root-pins", "root-tx/day", "usd/year", "mean-final-s", "duty", "exposure"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<13} {:>10} {:>12.1} {:>12.2} {:>14} {:>5} {:>8}",
                r.strategy.as_str(),
                r.root_pin_txs,
                r.root_tx_per_day,
                r.usd_per_year,
                r.mean_pin_finality_delay.map_or("-".into(), |d| format!("{d:.1}")),
                r.observation_duty,
                r.exposure
            );
        }
        for v in &self.invariant_violations {
            let _ = writeln!(out, "INVARIANT VIOLATION: {v}");
        }
        out
    }

    /// The same data as `metric,value` rows, matching the run report CSV shape.
    pub fn to_flat_csv(&self) -> String {
        flat_csv(&serde_json::to_value(self).expect("comparison serializes"))
    }
}

/// Every sidechain pinned the same way. Direct drops the intermediate chains.
pub fn variant(config: &ScenarioConfig, strategy: PinStrategy) -> Result<ScenarioConfig, CompareError> {
    if config.sidechains.is_empty() {
        return Err(CompareError::MissingVariant("no sidechains".into()));
    }
    let mut c = config.clone();
    match strategy {
        PinStrategy::Direct => {
            c.intermediates.clear();
            for s in &mut c.sidechains {
                s.strategy = PinStrategy::Direct;
                s.via = None;
            }
        }
        PinStrategy::Hierarchical => {
            let Some(first) = config.intermediates.first() else {
                return Err(CompareError::MissingVariant(
                    "hierarchical pinning needs an [intermediate] chain".into(),
                ));
            };
            for s in &mut c.sidechains {
                if s.strategy == PinStrategy::Direct || s.via.is_none() {
                    *s = SidechainConfig {
                        strategy: PinStrategy::Hierarchical,
                        via: Some(s.via.clone().unwrap_or_else(|| first.name.clone())),
                        ..s.clone()
                    };
                }
            }
        }
    }
    Ok(c)
}

fn row(strategy: PinStrategy, report: &RunReport, config: &ScenarioConfig) -> StrategyRow {
    let pin_gas = config.coordination.gas.pin_tx_gas;
    let root_pin_txs = report.root.pin_txs;
    let pin_usd: f64 = report
        .sidechains
        .values()
        .chain(report.intermediates.values())
        .map(|c| c.root_pin_spend_usd)
        .sum();
    let delays: Vec<(f64, u64)> = report
        .sidechains
        .values()
        .filter_map(|c| c.finality_delay.as_ref().map(|s| (s.mean * s.count as f64, s.count)))
        .collect();
    let n: u64 = delays.iter().map(|d| d.1).sum();
    let scale = |x: f64, period: u64| x * period as f64 / config.duration as f64;
    StrategyRow {
        strategy,
        root_pin_txs,
        root_pin_gas: root_pin_txs * pin_gas,
        root_tx_per_day: scale(root_pin_txs as f64, 86_400),
        usd_per_year: scale(pin_usd, SECONDS_PER_YEAR),
        mean_pin_finality_delay: (n > 0).then(|| delays.iter().map(|d| d.0).sum::<f64>() / n as f64),
        observation_duty: report.sidechains.values().map(|c| c.observation_duty).max().unwrap_or(0),
        exposure: if report.sidechains.values().any(|c| c.membership_exposed) {
            "public"
        } else {
            "private"
        },
    }
}

/// Runs the direct and hierarchical variants of `config` and tabulates
/// root-chain load, cost, pin finality delay, observation duty and exposure.
///
/// Spend counts only fees of pin transactions on the root chain, annualised
/// from the scenario duration.
pub fn compare_strategies(config: &ScenarioConfig, exec: Exec) -> Result<Comparison, CompareError> {
    let direct = variant(config, PinStrategy::Direct)?;
    let hier = variant(config, PinStrategy::Hierarchical)?;
    let (rd, rh) = join(exec, || run(&direct, None), || run(&hier, None));
    let mut violations = Vec::new();
    for (name, r) in [("direct", &rd), ("hierarchical", &rh)] {
        violations.extend(r.invariant_violations.iter().map(|v| format!("{name}: {v}")));
    }
    Ok(Comparison {
        sidechains: config.sidechains.len() as u64,
        rows: vec![
            row(PinStrategy::Direct, &rd, &direct),
            row(PinStrategy::Hierarchical, &rh, &hier),
        ],
        invariant_violations: violations,
    })
}

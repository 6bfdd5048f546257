//! Run reports and their JSON, CSV and table renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

use crate::sidechain::PinStrategy;

/// Summary statistics of a sample, in seconds unless stated otherwise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub count: u64,
    pub mean: f64,
    pub min: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Stats {
            count: v.len() as u64,
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            p50: rank(0.5),
            p95: rank(0.95),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootMetrics {
    pub blocks: u64,
    pub tx_count: u64,
    pub pin_txs: u64,
    pub gas_used: u64,
    pub mean_utilization: f64,
    pub final_gas_price_gwei: f64,
    pub max_gas_price_gwei: f64,
    pub mempool_backlog_end: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchiveMetrics {
    pub archived_at: u64,
    pub blob_bytes: u64,
    pub restore_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainMetrics {
    pub strategy: PinStrategy,
    pub pins_scheduled: u64,
    pub pins_included: u64,
    pub pins_final: u64,
    /// Successful pin transactions for this chain in the canonical root chain.
    pub root_pin_txs: u64,
    /// Fees paid for those pin transactions.
    pub root_pin_spend_usd: f64,
    /// Submission to first inclusion on the target chain.
    pub pin_latency: Option<Stats>,
    /// Submission to the moment the pin is final across the whole hierarchy.
    pub finality_delay: Option<Stats>,
    /// Contracts each participant must watch.
    pub observation_duty: u64,
    /// Whether membership and pins are visible on the root chain.
    pub membership_exposed: bool,
    /// Seconds from keyset activation inclusion until it is final.
    pub keyset_readiness: Option<u64>,
    pub archive: Option<ArchiveMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrosschainReport {
    pub status: String,
    pub legs: Vec<String>,
    pub start_delay: Option<u64>,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CrosschainSummary {
    pub committed: u64,
    pub ignored: u64,
    pub mixed: u64,
    pub unresolved: u64,
    pub transactions: BTreeMap<String, CrosschainReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReversionMetrics {
    pub reorgs: u64,
    pub max_depth: u64,
    pub blocks_reverted: u64,
    pub attack_attempts: u64,
    /// Attempts that reverted a block that was already final.
    pub final_reversions: u64,
    pub final_reversion_rate: Option<f64>,
    pub analytic_bound: Option<f64>,
    /// Rate at most bound + 3 standard errors.
    pub within_bound: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpamMetrics {
    pub submitted: u64,
    pub included: u64,
    pub spend_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSample {
    pub number: u64,
    pub timestamp: u64,
    pub gas_used: u64,
    pub gas_price_gwei: f64,
    pub backlog: u64,
    pub spam_spend_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub duration: u64,
    pub root: RootMetrics,
    pub sidechains: BTreeMap<String, ChainMetrics>,
    pub intermediates: BTreeMap<String, ChainMetrics>,
    pub fiat_spend_usd: BTreeMap<String, f64>,
    pub crosschain: CrosschainSummary,
    pub reversions: ReversionMetrics,
    pub spam: Option<SpamMetrics>,
    pub series: Option<Vec<BlockSample>>,
    pub invariant_violations: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `metric,value` rows, one per leaf of the JSON form.
    pub fn to_csv(&self) -> String {
        flat_csv(&serde_json::to_value(self).expect("report serializes"))
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let r = &self.root;
        let _ = writeln!(out, "seed {}  duration {} s", self.seed, self.duration);
        let _ = writeln!(
            out,
            "root: {} blocks, {} txs ({} pins), utilization {:.3}, gas price {:.3} gwei (max {:.3}), backlog {}",
            r.blocks, r.tx_count, r.pin_txs, r.mean_utilization, r.final_gas_price_gwei, r.max_gas_price_gwei, r.mempool_backlog_end
        );
        let _ = writeln!(
            out,
            "{:<16} {:<13} {:>6} {:>6} {:>9} {:>12} {:>5} {:>8}",
            "chain", "strategy", "pins", "final", "root-txs", "mean-final-s", "duty", "exposed"
        );
        for (name, c) in self.intermediates.iter().chain(&self.sidechains) {
            let _ = writeln!(
                out,
                "{:<16} {:<13} {:>6} {:>6} {:>9} {:>12} {:>5} {:>8}",
                name,
                c.strategy.as_str(),
                c.pins_scheduled,
                c.pins_final,
                c.root_pin_txs,
                c.finality_delay.as_ref().map_or("-".into(), |s| format!("{:.1}", s.mean)),
                c.observation_duty,
                if c.membership_exposed { "public" } else { "private" }
            );
        }
        for (who, usd) in &self.fiat_spend_usd {
            let _ = writeln!(out, "spend {who:<24} ${usd:.4}");
        }
        let x = &self.crosschain;
        let _ = writeln!(
            out,
            "crosschain: {} committed, {} ignored, {} mixed, {} unresolved",
            x.committed, x.ignored, x.mixed, x.unresolved
        );
        let v = &self.reversions;
        let _ = writeln!(
            out,
            "reorgs: {} (max depth {}), final reversions {}/{} attempts",
            v.reorgs, v.max_depth, v.final_reversions, v.attack_attempts
        );
        for msg in &self.invariant_violations {
            let _ = writeln!(out, "INVARIANT VIOLATION: {msg}");
        }
        out
    }
}

/// Flattens a JSON value to `path,value` lines with dotted paths.
pub fn flat_csv(value: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut String) {
        match v {
            Value::Object(m) => {
                for (k, v) in m {
                    walk(&join(prefix, k), v, out);
                }
            }
            Value::Array(a) => {
                for (i, v) in a.iter().enumerate() {
                    walk(&join(prefix, &i.to_string()), v, out);
                }
            }
            Value::String(s) => {
                let _ = writeln!(out, "{},{}", quote(prefix), quote(s));
            }
            other => {
                let _ = writeln!(out, "{},{}", quote(prefix), other);
            }
        }
    }
    fn join(prefix: &str, k: &str) -> String {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    }
    fn quote(s: &str) -> String {
        if s.contains([',', '"', '\n']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    }
    let mut out = String::from("metric,value\n");
    walk("", value, &mut out);
    out
}

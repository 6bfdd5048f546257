//! Declarative scenarios: loading, the deterministic event loop, and reports.

mod compare;
mod config;
mod engine;
mod report;

pub use compare::{compare_strategies, variant, CompareError, Comparison, StrategyRow};
pub use config::{
    load_scenario, parse_scenario, AdversaryConfig, CoordinationConfig, CrosschainConfig, IntermediateConfig,
    LoadError, ParseError, Prices, ScenarioConfig, SidechainConfig, ValidationError,
};
pub use engine::{crosschain_address, keyset_registry_address, root_pinning_address, run};
pub use report::{
    flat_csv, ArchiveMetrics, BlockSample, ChainMetrics, CrosschainReport, CrosschainSummary, ReversionMetrics,
    RootMetrics, RunReport, SpamMetrics, Stats,
};

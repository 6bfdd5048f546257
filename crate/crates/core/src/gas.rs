//! Gas accounting, throughput ceilings, utilisation-driven pricing and fiat
//! cost projections.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sidechain::PinStrategy;

pub const WEI_PER_ETH: f64 = 1e18;
pub const WEI_PER_GWEI: f64 = 1e9;
/// 8760 hours.
pub const SECONDS_PER_YEAR: u64 = 8760 * 3600;
/// Julian year, used for the nonce horizon.
pub const SECONDS_PER_JULIAN_YEAR: u64 = 31_557_600;

/// Reference gas price, back-solved so that hourly pinning for a year costs
/// about US$508 at [`REFERENCE_ETH_USD`]. Not an observed market value.
pub const REFERENCE_GAS_PRICE_WEI: f64 = 5.95e9;
/// Reference ether price paired with [`REFERENCE_GAS_PRICE_WEI`].
pub const REFERENCE_ETH_USD: f64 = 150.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GasError {
    #[error("transaction gas {gas} outside [{min}, {max}]")]
    GasOutOfRange { gas: u64, min: u64, max: u64 },
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasSchedule {
    pub block_gas_limit: u64,
    pub intrinsic_tx_gas: u64,
    pub pin_tx_gas: u64,
    pub keyset_store_gas: u64,
    /// Seconds.
    pub block_time: u64,
}

impl Default for GasSchedule {
    fn default() -> Self {
        GasSchedule {
            block_gas_limit: 8_000_000,
            intrinsic_tx_gas: 21_000,
            pin_tx_gas: 64_972,
            keyset_store_gas: 60_000,
            block_time: 14,
        }
    }
}

impl GasSchedule {
    pub fn validate(&self) -> Result<(), GasError> {
        let min = self.intrinsic_tx_gas;
        let max = self.block_gas_limit;
        for gas in [self.pin_tx_gas, self.intrinsic_tx_gas + self.keyset_store_gas] {
            if gas < min || gas > max {
                return Err(GasError::GasOutOfRange { gas, min, max });
            }
        }
        if self.block_time == 0 {
            return Err(GasError::Domain("block_time must be positive".into()));
        }
        Ok(())
    }
}

/// Transactions per second when every block is filled with `tx_gas` transactions.
pub fn block_throughput(tx_gas: u64, schedule: &GasSchedule) -> Result<f64, GasError> {
    if tx_gas < schedule.intrinsic_tx_gas || tx_gas > schedule.block_gas_limit {
        return Err(GasError::GasOutOfRange {
            gas: tx_gas,
            min: schedule.intrinsic_tx_gas,
            max: schedule.block_gas_limit,
        });
    }
    let per_block = schedule.block_gas_limit / tx_gas;
    Ok(per_block as f64 / schedule.block_time as f64)
}

/// Multiplicative price response to block utilisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceState {
    /// Wei per gas.
    pub gas_price: f64,
    pub target_utilization: f64,
    pub sensitivity: f64,
    pub floor: f64,
    /// Upper clamp so prices stay representable as integer bids.
    pub ceiling: f64,
}

impl Default for PriceState {
    fn default() -> Self {
        PriceState {
            gas_price: REFERENCE_GAS_PRICE_WEI,
            target_utilization: 0.5,
            sensitivity: 0.25,
            floor: 1.0,
            ceiling: 1e30,
        }
    }
}

impl PriceState {
    /// Integer bid at the current price, rounded up.
    pub fn bid(&self) -> u128 {
        self.gas_price.ceil() as u128
    }
}

pub fn update_price(state: &PriceState, last_block_utilization: f64) -> PriceState {
    let u = last_block_utilization.clamp(0.0, 1.0);
    let next = state.gas_price * (1.0 + state.sensitivity * (u - state.target_utilization));
    PriceState {
        gas_price: next.max(state.floor).min(state.ceiling),
        ..*state
    }
}

/// US dollars for `gas` units at `gas_price` wei/gas and `eth_price` USD/ETH.
pub fn fiat_cost(gas: u64, gas_price: f64, eth_price: f64) -> f64 {
    gas as f64 * gas_price * eth_price / WEI_PER_ETH
}

/// Yearly cost of pinning one chain every `pin_interval` seconds.
pub fn annual_pin_cost(
    schedule: &GasSchedule,
    pin_interval: u64,
    gas_price: f64,
    eth_price: f64,
) -> Result<f64, GasError> {
    if pin_interval == 0 {
        return Err(GasError::Domain("pin_interval must be positive".into()));
    }
    let pins = SECONDS_PER_YEAR as f64 / pin_interval as f64;
    Ok(pins * fiat_cost(schedule.pin_tx_gas, gas_price, eth_price))
}

/// Root-chain pin cost per year for `sidechains` chains. Hierarchical pinning
/// puts a single intermediate chain's pins on the root regardless of count.
pub fn annual_root_pin_cost(
    strategy: PinStrategy,
    sidechains: u64,
    schedule: &GasSchedule,
    pin_interval: u64,
    gas_price: f64,
    eth_price: f64,
) -> Result<f64, GasError> {
    let one = annual_pin_cost(schedule, pin_interval, gas_price, eth_price)?;
    Ok(match strategy {
        PinStrategy::Direct => sidechains as f64 * one,
        PinStrategy::Hierarchical => one,
    })
}

/// Years until a nonce counter of `nonce_bits` bits wraps at `tx_rate` tx/s.
pub fn nonce_wraparound_years(nonce_bits: u32, tx_rate: f64) -> Result<f64, GasError> {
    if nonce_bits != 63 && nonce_bits != 64 {
        return Err(GasError::Domain(format!("nonce_bits must be 63 or 64, got {nonce_bits}")));
    }
    if tx_rate <= 0.0 || !tx_rate.is_finite() {
        return Err(GasError::Domain(format!("tx_rate must be positive, got {tx_rate}")));
    }
    Ok(2f64.powi(nonce_bits as i32) / (tx_rate * SECONDS_PER_JULIAN_YEAR as f64))
}

/// One row of a pin cost table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub strategy: PinStrategy,
    pub pin_interval: u64,
    pub sidechains: u64,
    pub mainnet_gas_year: u64,
    pub usd_year: f64,
}

pub const COST_CSV_HEADER: &str = "strategy,pin_interval,sidechains,mainnet_gas_year,usd_year";

impl CostRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.2}",
            self.strategy.as_str(),
            self.pin_interval,
            self.sidechains,
            self.mainnet_gas_year,
            self.usd_year
        )
    }
}

/// Analytic cost table for the given strategy/interval/count grid.
pub fn pin_cost_table(
    schedule: &GasSchedule,
    intervals: &[u64],
    sidechain_counts: &[u64],
    gas_price: f64,
    eth_price: f64,
) -> Result<Vec<CostRow>, GasError> {
    let mut rows = Vec::new();
    for strategy in [PinStrategy::Direct, PinStrategy::Hierarchical] {
        for &pin_interval in intervals {
            for &n in sidechain_counts {
                let usd_year =
                    annual_root_pin_cost(strategy, n, schedule, pin_interval, gas_price, eth_price)?;
                let root_chains = match strategy {
                    PinStrategy::Direct => n,
                    PinStrategy::Hierarchical => 1,
                };
                let pins_per_year = SECONDS_PER_YEAR / pin_interval;
                rows.push(CostRow {
                    strategy,
                    pin_interval,
                    sidechains: n,
                    mainnet_gas_year: root_chains * pins_per_year * schedule.pin_tx_gas,
                    usd_year,
                });
            }
        }
    }
    Ok(rows)
}

pub fn cost_table_csv(rows: &[CostRow]) -> String {
    let mut out = String::from(COST_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round1(x: f64) -> f64 {
        (x * 10.0).round() / 10.0
    }

    #[test]
    fn throughput_matches_reported_figures() {
        let s = GasSchedule::default();
        let pin = block_throughput(64_972, &s).unwrap();
        assert_eq!(8_000_000 / 64_972, 123);
        assert!((pin - 123.0 / 14.0).abs() < 1e-12);
        assert_eq!(round1(pin), 8.8);
        let min = block_throughput(21_000, &s).unwrap();
        assert!((min - 380.0 / 14.0).abs() < 1e-12);
        assert_eq!(min.floor(), 27.0);
        let max = block_throughput(8_000_000, &s).unwrap();
        assert_eq!(round1(max * 60.0), 4.3);
    }

    #[test]
    fn throughput_range_checked() {
        let s = GasSchedule::default();
        assert!(matches!(block_throughput(20_999, &s), Err(GasError::GasOutOfRange { .. })));
        assert!(matches!(block_throughput(8_000_001, &s), Err(GasError::GasOutOfRange { .. })));
    }

    #[test]
    fn price_update_rule() {
        let p = PriceState {
            gas_price: 100.0,
            ..PriceState::default()
        };
        assert_eq!(update_price(&p, 0.5).gas_price, 100.0);
        assert!((update_price(&p, 1.0).gas_price - 112.5).abs() < 1e-9);
        assert!(update_price(&p, 0.2).gas_price < 100.0);
        let floor = PriceState {
            gas_price: 1.0,
            ..PriceState::default()
        };
        assert_eq!(update_price(&floor, 0.0).gas_price, 1.0);
    }

    #[test]
    fn sustained_full_blocks_grow_geometrically() {
        let mut p = PriceState {
            gas_price: 1000.0,
            ..PriceState::default()
        };
        for k in 1..=40 {
            p = update_price(&p, 1.0);
            let closed = 1000.0 * 1.125f64.powi(k);
            assert!((p.gas_price - closed).abs() / closed < 1e-12, "k={k}");
        }
    }

    #[test]
    fn fiat_costs() {
        assert_eq!(fiat_cost(0, 5.95e9, 150.0), 0.0);
        let pin = fiat_cost(64_972, REFERENCE_GAS_PRICE_WEI, REFERENCE_ETH_USD);
        assert!((pin - 0.057_988).abs() < 1e-5, "{pin}");
        let year = annual_pin_cost(&GasSchedule::default(), 3600, 5.95e9, 150.0).unwrap();
        assert!((year - 507.97).abs() < 0.01, "{year}");
        let once = annual_pin_cost(&GasSchedule::default(), SECONDS_PER_YEAR, 5.95e9, 150.0).unwrap();
        assert!((once - pin).abs() < 1e-12);
    }

    #[test]
    fn hierarchical_root_cost_is_one_chain() {
        let s = GasSchedule::default();
        let d = annual_root_pin_cost(PinStrategy::Direct, 50, &s, 3600, 5.95e9, 150.0).unwrap();
        let h = annual_root_pin_cost(PinStrategy::Hierarchical, 50, &s, 3600, 5.95e9, 150.0).unwrap();
        assert!((d - 50.0 * h).abs() < 1e-9);
    }

    #[test]
    fn nonce_horizon() {
        let y64 = nonce_wraparound_years(64, 1000.0).unwrap();
        assert!((y64 / 1e8 - 5.845).abs() < 0.001, "{y64}");
        let y63 = nonce_wraparound_years(63, 1000.0).unwrap();
        assert!((y63 / 1e8 - 2.923).abs() < 0.001, "{y63}");
        let slow = nonce_wraparound_years(63, 1.0).unwrap();
        assert!((slow / y63 - 1000.0).abs() < 1e-9);
        assert!(nonce_wraparound_years(32, 1.0).is_err());
        assert!(nonce_wraparound_years(64, 0.0).is_err());
    }

    #[test]
    fn cost_table_csv_shape() {
        let rows = pin_cost_table(&GasSchedule::default(), &[3600], &[1, 50], 5.95e9, 150.0).unwrap();
        let csv = cost_table_csv(&rows);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], COST_CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "direct,3600,1,569154720,507.97");
        assert_eq!(lines[4], "hierarchical,3600,50,569154720,507.97");
    }

    proptest::proptest! {
        #[test]
        fn throughput_conserves_gas(tx_gas in 21_000u64..=8_000_000) {
            let s = GasSchedule::default();
            let tps = block_throughput(tx_gas, &s).unwrap();
            proptest::prop_assert!(tps * tx_gas as f64 <= s.block_gas_limit as f64 / s.block_time as f64 + 1e-6);
        }

        #[test]
        fn fiat_cost_is_linear(g in 0u64..10_000_000, p in 0.0f64..1e12, e in 0.0f64..1e4, k in 1u64..5) {
            let a = fiat_cost(g * k, p, e);
            let b = k as f64 * fiat_cost(g, p, e);
            proptest::prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }
}

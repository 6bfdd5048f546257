//! Probabilistic finality: the analytic catch-up probability, a Monte Carlo race
//! oracle for it, and confirmation policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;
use thiserror::Error;

use crate::chain::{ChainError, ChainView};
use crate::digest::Hash32;
use crate::par::{map_indexed, Exec};

/// Default truncation depth of the Monte Carlo random walk.
pub const DEFAULT_MAX_DEFICIT: u64 = 50;

/// Ethereum confirmations commonly quoted as equivalent to six Bitcoin ones.
/// Taken as a preset; no derivation is attempted.
pub const ETH_CONFIRMATIONS_PRESET: u64 = 8;

const TRIALS_PER_CHUNK: u64 = 8192;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FinalityError {
    #[error("domain error: {0}")]
    Domain(String),
}

fn domain(msg: impl Into<String>) -> FinalityError {
    FinalityError::Domain(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FinalityMode {
    Probabilistic,
    Instant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttackStrategy {
    PrivateChainRace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackerModel {
    pub q: f64,
    pub strategy: AttackStrategy,
}

impl AttackerModel {
    pub fn new(q: f64) -> Result<Self, FinalityError> {
        check_q(q)?;
        Ok(AttackerModel {
            q,
            strategy: AttackStrategy::PrivateChainRace,
        })
    }

    /// At or above half the hashpower the attacker eventually wins every race.
    pub fn certain_success(&self) -> bool {
        self.q >= 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalityPolicy {
    pub confirmations_required: u64,
    /// Seconds.
    pub block_time_target: f64,
}

impl Default for FinalityPolicy {
    fn default() -> Self {
        FinalityPolicy {
            confirmations_required: 12,
            block_time_target: 14.0,
        }
    }
}

impl FinalityPolicy {
    pub fn new(confirmations_required: u64, block_time_target: f64) -> Result<Self, FinalityError> {
        let p = FinalityPolicy {
            confirmations_required,
            block_time_target,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FinalityError> {
        if self.confirmations_required == 0 {
            return Err(domain("confirmations_required must be at least 1"));
        }
        if !(self.block_time_target > 0.0 && self.block_time_target.is_finite()) {
            return Err(domain("block_time_target must be positive"));
        }
        Ok(())
    }
}

fn check_q(q: f64) -> Result<(), FinalityError> {
    if q.is_nan() || !(0.0..1.0).contains(&q) {
        return Err(domain(format!("q = {q} outside [0, 1)")));
    }
    Ok(())
}

/// Probability that an attacker with hashpower share `q` ever overtakes an
/// honest chain `z` blocks ahead, with a Poisson head start of mean `zq/p`.
pub fn catchup_probability(q: f64, z: u64) -> Result<f64, FinalityError> {
    check_q(q)?;
    if q >= 0.5 {
        return Ok(1.0);
    }
    if z == 0 {
        return Ok(1.0);
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    let p = 1.0 - q;
    let r = q / p;
    let lambda = z as f64 * q / p;
    let ln_lambda = lambda.ln();

    // P = sum_{k<=z} pois(k) r^(z-k) + sum_{k>z} pois(k); written this way
    // there is no 1 - sum cancellation for small P.
    let mut ln_pois = -lambda;
    let mut inside = 0.0;
    for k in 0..=z {
        if k > 0 {
            ln_pois += ln_lambda - (k as f64).ln();
        }
        inside += (ln_pois + (z - k) as f64 * r.ln()).exp();
    }
    let mut tail = 0.0;
    let mut k = z + 1;
    loop {
        ln_pois += ln_lambda - (k as f64).ln();
        let term = ln_pois.exp();
        tail += term;
        if k as f64 > lambda && term <= tail * 1e-17 {
            break;
        }
        if term == 0.0 && k as f64 > lambda {
            break;
        }
        k += 1;
    }
    Ok((inside + tail).min(1.0))
}

/// Smallest `z` whose catch-up probability is at most `target_risk`.
pub fn required_confirmations(q: f64, target_risk: f64) -> Result<u64, FinalityError> {
    check_q(q)?;
    if q >= 0.5 {
        return Err(domain("no confirmation count protects against q >= 0.5"));
    }
    if !(target_risk > 0.0 && target_risk < 1.0) {
        return Err(domain(format!("target risk {target_risk} outside (0, 1)")));
    }
    let mut z = 1;
    while catchup_probability(q, z)? > target_risk {
        z += 1;
    }
    Ok(z)
}

/// Seconds until a block has the required confirmations at the target rate.
pub fn finality_time(policy: &FinalityPolicy) -> f64 {
    policy.confirmations_required as f64 * policy.block_time_target
}

/// Upper bound on how far truncating the race at `max_deficit` can pull a
/// single trial's success probability below the untruncated value: `(q/p)^M`.
pub fn truncation_bias_bound(q: f64, max_deficit: u64) -> f64 {
    if q >= 0.5 {
        return 1.0;
    }
    (q / (1.0 - q)).powf(max_deficit as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub successes: u64,
    pub trials: u64,
    pub p: f64,
    /// Binomial standard error of `p`.
    pub stderr: f64,
}

impl McEstimate {
    /// Whether `expected` is within `k` binomial standard errors, using the
    /// standard error implied by `expected` itself.
    pub fn agrees_with(&self, expected: f64, k: f64) -> bool {
        let sigma = (expected * (1.0 - expected) / self.trials as f64).sqrt();
        (self.p - expected).abs() <= k * sigma + 1e-15
    }
}

pub fn monte_carlo_reversion(
    q: f64,
    z: u64,
    trials: u64,
    seed: u64,
    max_deficit: u64,
) -> Result<McEstimate, FinalityError> {
    monte_carlo_reversion_with(Exec::default(), q, z, trials, seed, max_deficit)
}

/// Trials are split into fixed-size chunks, each with its own ChaCha stream,
/// so the estimate depends only on `seed` and not on the thread count.
pub fn monte_carlo_reversion_with(
    exec: Exec,
    q: f64,
    z: u64,
    trials: u64,
    seed: u64,
    max_deficit: u64,
) -> Result<McEstimate, FinalityError> {
    check_q(q)?;
    if trials == 0 {
        return Err(domain("trials must be at least 1"));
    }
    if max_deficit < 20 {
        return Err(domain("max_deficit must be at least 20"));
    }
    let successes: u64 = if q == 0.0 && z > 0 {
        0
    } else {
        let p = 1.0 - q;
        let lambda = z as f64 * q / p;
        let poisson = (lambda > 0.0).then(|| Poisson::new(lambda).expect("lambda > 0"));
        let chunks = trials.div_ceil(TRIALS_PER_CHUNK);
        map_indexed(exec, chunks as usize, |c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = TRIALS_PER_CHUNK.min(trials - c as u64 * TRIALS_PER_CHUNK);
            let mut wins = 0;
            for _ in 0..n {
                let head_start = poisson.as_ref().map_or(0, |d| d.sample(&mut rng) as u64);
                if race(&mut rng, q, z.saturating_sub(head_start), max_deficit) {
                    wins += 1;
                }
            }
            wins
        })
        .into_iter()
        .sum()
    };
    let p_hat = successes as f64 / trials as f64;
    Ok(McEstimate {
        successes,
        trials,
        p: p_hat,
        stderr: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
    })
}

/// Gambler's-ruin walk from `deficit`: attacker closes one block with
/// probability `q`, falls one further behind otherwise.
fn race(rng: &mut ChaCha8Rng, q: f64, mut deficit: u64, max_deficit: u64) -> bool {
    while deficit > 0 {
        if deficit >= max_deficit {
            return false;
        }
        if rng.random::<f64>() < q {
            deficit -= 1;
        } else {
            deficit += 1;
        }
    }
    true
}

/// Instant mode: canonical means final. Probabilistic mode: enough confirmations.
pub fn is_final(
    chain: &ChainView,
    block: &Hash32,
    policy: &FinalityPolicy,
    mode: FinalityMode,
) -> Result<bool, ChainError> {
    let confirmations = chain.confirmations(block)?;
    Ok(match mode {
        FinalityMode::Instant => true,
        FinalityMode::Probabilistic => confirmations >= policy.confirmations_required,
    })
}

/// One row of the analytic-vs-empirical table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalityRow {
    pub q: f64,
    pub z: u64,
    pub analytic_p: f64,
    pub empirical_p: f64,
    pub trials: u64,
    pub stderr: f64,
}

impl FinalityRow {
    pub fn compute(exec: Exec, q: f64, z: u64, trials: u64, seed: u64) -> Result<Self, FinalityError> {
        let analytic_p = catchup_probability(q, z)?;
        let mc = monte_carlo_reversion_with(exec, q, z, trials, seed, DEFAULT_MAX_DEFICIT)?;
        Ok(FinalityRow {
            q,
            z,
            analytic_p,
            empirical_p: mc.p,
            trials,
            stderr: mc.stderr,
        })
    }

    pub const HEADER: &'static str = "q,z,analytic_p,empirical_p,trials,stderr";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.9},{:.9},{},{:.9}",
            self.q, self.z, self.analytic_p, self.empirical_p, self.trials, self.stderr
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catchup_table_values() {
        // q = 0.1 reference column
        let expected = [
            (0, 1.0),
            (1, 0.2045873),
            (2, 0.0509779),
            (3, 0.0131722),
            (4, 0.0034552),
            (5, 0.0009137),
            (6, 0.0002428),
            (7, 0.0000647),
            (8, 0.0000173),
            (9, 0.0000046),
            (10, 0.0000012),
        ];
        for (z, p) in expected {
            let got = catchup_probability(0.1, z).unwrap();
            assert!((got - p).abs() < 5e-8, "z={z}: {got} vs {p}");
        }
        // q = 0.3 column
        for (z, p) in [(5, 0.1773523), (10, 0.0416605), (15, 0.0101008), (20, 0.0024804)] {
            let got = catchup_probability(0.3, z).unwrap();
            assert!((got - p).abs() < 5e-8, "z={z}: {got} vs {p}");
        }
    }

    #[test]
    fn boundaries_and_errors() {
        assert_eq!(catchup_probability(0.0, 3), Ok(0.0));
        assert_eq!(catchup_probability(0.2, 0), Ok(1.0));
        assert_eq!(catchup_probability(0.5, 10), Ok(1.0));
        assert_eq!(catchup_probability(0.99, 10), Ok(1.0));
        assert!(catchup_probability(-0.1, 1).is_err());
        assert!(catchup_probability(1.0, 1).is_err());
        assert!(catchup_probability(f64::NAN, 1).is_err());
        assert!(AttackerModel::new(0.6).unwrap().certain_success());
    }

    #[test]
    fn required_confirmation_examples() {
        assert_eq!(required_confirmations(0.1, 0.0003), Ok(6));
        assert_eq!(required_confirmations(0.1, 0.001), Ok(5));
        assert_eq!(required_confirmations(0.0, 0.5), Ok(1));
        assert!(required_confirmations(0.1, 0.0).is_err());
        assert!(required_confirmations(0.1, 1.0).is_err());
    }

    #[test]
    fn finality_times() {
        let t = |z| finality_time(&FinalityPolicy::new(z, 14.0).unwrap());
        assert_eq!(t(12), 168.0);
        assert_eq!(t(1), 14.0);
        assert_eq!(t(37), 518.0);
        assert!(FinalityPolicy::new(0, 14.0).is_err());
        assert!(FinalityPolicy::new(1, 0.0).is_err());
    }

    #[test]
    fn monte_carlo_trivial_and_deterministic() {
        let zero = monte_carlo_reversion(0.0, 3, 1000, 1, 50).unwrap();
        assert_eq!(zero.p, 0.0);
        let a = monte_carlo_reversion_with(Exec::Parallel, 0.3, 4, 50_000, 9, 50).unwrap();
        let b = monte_carlo_reversion_with(Exec::Sequential, 0.3, 4, 50_000, 9, 50).unwrap();
        assert_eq!(a, b);
        assert!(monte_carlo_reversion(0.1, 1, 0, 1, 50).is_err());
        assert!(monte_carlo_reversion(0.1, 1, 10, 1, 19).is_err());
    }

    #[test]
    fn truncation_bias_bound_values() {
        assert!(truncation_bias_bound(0.3, 50) < 1e-12);
        // 0.45 at depth 50 is far from negligible
        let b = truncation_bias_bound(0.45, 50);
        assert!(b > 4e-5 && b < 5e-5, "{b}");
    }
}

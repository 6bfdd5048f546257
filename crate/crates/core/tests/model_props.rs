use chaincoord::finality::{
    catchup_probability, monte_carlo_reversion_with, required_confirmations, truncation_bias_bound,
};
use chaincoord::gas::{annual_pin_cost, block_throughput, fiat_cost, update_price, GasSchedule, PriceState};
use chaincoord::par::Exec;
use chaincoord::strength::{phaseout_check, strength_bits, Model, Phaseout, Property, StrengthQuery};
use proptest::prelude::*;

proptest! {
    #[test]
    fn catchup_is_a_probability_falling_in_z(q in 0.0f64..0.5, z in 0u64..40) {
        let p = catchup_probability(q, z).unwrap();
        let next = catchup_probability(q, z + 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(next <= p + 1e-15, "z={z}: {next} > {p}");
    }

    #[test]
    fn catchup_rises_with_q(q in 0.0f64..0.49, dq in 0.0f64..0.01, z in 1u64..30) {
        let a = catchup_probability(q, z).unwrap();
        let b = catchup_probability(q + dq, z).unwrap();
        prop_assert!(b + 1e-15 >= a);
    }

    #[test]
    fn majority_attacker_always_wins(q in 0.5f64..1.0, z in 0u64..100) {
        prop_assert_eq!(catchup_probability(q, z).unwrap(), 1.0);
    }

    #[test]
    fn required_confirmations_meets_target(q in 0.01f64..0.45, exp in 1i32..8) {
        let risk = 10f64.powi(-exp);
        let z = required_confirmations(q, risk).unwrap();
        prop_assert!(catchup_probability(q, z).unwrap() <= risk);
        if z > 0 {
            prop_assert!(catchup_probability(q, z - 1).unwrap() > risk);
        }
    }

    #[test]
    fn monte_carlo_is_seeded_and_thread_independent(q in 0.05f64..0.45, z in 1u64..6, seed in any::<u64>()) {
        let a = monte_carlo_reversion_with(Exec::Parallel, q, z, 3000, seed, 50).unwrap();
        let b = monte_carlo_reversion_with(Exec::Sequential, q, z, 3000, seed, 50).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn truncation_never_adds_strength(bits in 1u32..=512, cut in 1u32..=512, prop_ix in 0usize..3) {
        prop_assume!(cut <= bits);
        let property = [Property::Preimage, Property::SecondPreimage, Property::Collision][prop_ix];
        let full = strength_bits(&StrengthQuery::digest(bits, bits, property, Model::Classical)).unwrap();
        let short = strength_bits(&StrengthQuery::digest(bits, cut, property, Model::Classical)).unwrap();
        prop_assert!(short <= full);
    }

    #[test]
    fn quantum_never_exceeds_classical(bits in 1u32..=512) {
        let classical = strength_bits(&StrengthQuery::digest(bits, bits, Property::Preimage, Model::Classical)).unwrap();
        let grover = strength_bits(&StrengthQuery::digest(bits, bits, Property::Preimage, Model::QuantumGrover)).unwrap();
        let coll = strength_bits(&StrengthQuery::digest(bits, bits, Property::Collision, Model::Classical)).unwrap();
        let qcoll = strength_bits(&StrengthQuery::digest(bits, bits, Property::Collision, Model::QuantumCollisionBound)).unwrap();
        prop_assert_eq!(grover * 2.0, classical);
        prop_assert_eq!(coll * 2.0, classical);
        prop_assert!(qcoll <= coll);
    }

    #[test]
    fn phaseout_verdict_is_monotone(a in 0.0f64..300.0, b in 0.0f64..300.0) {
        let rank = |p: Phaseout| match p {
            Phaseout::Disallowed => 0,
            Phaseout::PhaseOutBy2030 => 1,
            Phaseout::Acceptable => 2,
        };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rank(phaseout_check(lo)) <= rank(phaseout_check(hi)));
    }

    /// Above-target utilisation never lowers the price; below-target never raises it.
    #[test]
    fn price_moves_with_utilization(u in 0.0f64..=1.0, start in 1.0f64..1e12, sens in 0.0f64..1.0) {
        let s = PriceState { gas_price: start, sensitivity: sens, ..PriceState::default() };
        let next = update_price(&s, u).gas_price;
        prop_assert!(next >= s.floor && next <= s.ceiling);
        if u >= s.target_utilization {
            prop_assert!(next >= start);
        } else {
            prop_assert!(next <= start);
        }
    }

    #[test]
    fn throughput_falls_with_tx_size(a in 21_000u64..=8_000_000, b in 21_000u64..=8_000_000) {
        let s = GasSchedule::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(block_throughput(hi, &s).unwrap() <= block_throughput(lo, &s).unwrap());
    }

    #[test]
    fn annual_cost_scales_inversely_with_interval(interval in 1u64..100_000) {
        let s = GasSchedule::default();
        let once = annual_pin_cost(&s, interval, 5.95e9, 150.0).unwrap();
        let twice = annual_pin_cost(&s, interval * 2, 5.95e9, 150.0).unwrap();
        prop_assert!((once - 2.0 * twice).abs() <= once * 1e-12);
    }
}

#[test]
fn truncation_bias_is_negligible_at_default_deficit() {
    assert!(truncation_bias_bound(0.45, 50) < 5e-5);
    assert_eq!(truncation_bias_bound(0.5, 50), 1.0);
}

#[test]
fn fiat_cost_of_one_pin() {
    let usd = fiat_cost(64_972, 5.95e9, 150.0);
    assert!((usd - 0.057_987_51).abs() < 1e-8, "{usd}");
}

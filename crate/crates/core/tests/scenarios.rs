use std::path::PathBuf;

use chaincoord::gas::{annual_pin_cost, GasSchedule, REFERENCE_ETH_USD, REFERENCE_GAS_PRICE_WEI};
use chaincoord::par::Exec;
use chaincoord::scenario::{
    compare_strategies, load_scenario, parse_scenario, run, CompareError, LoadError, ScenarioConfig,
};
use chaincoord::sidechain::PinStrategy;

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.scenario"));
    load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn reports_are_byte_identical_across_runs() {
    for name in ["quiet", "hierarchy", "spam"] {
        let cfg = scenario(name);
        assert_eq!(run(&cfg, None).to_json(), run(&cfg, None).to_json(), "{name}");
        assert_eq!(run(&cfg, None).to_csv(), run(&cfg, None).to_csv(), "{name}");
    }
}

#[test]
fn seed_drives_stochastic_runs() {
    let mut cfg = scenario("attack");
    cfg.duration = 6 * 3600;
    let a = run(&cfg, Some(1));
    assert_eq!(a.to_json(), run(&cfg, Some(1)).to_json());
    assert_eq!(a.seed, 1);
    assert_ne!(a.to_json(), run(&cfg, Some(2)).to_json());
}

#[test]
fn quiet_chain_pins_at_reference_cost() {
    let r = run(&scenario("quiet"), None);
    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    let alpha = &r.sidechains["alpha"];
    assert_eq!(alpha.keyset_readiness, Some(168));
    assert_eq!((alpha.pins_scheduled, alpha.pins_final, alpha.root_pin_txs), (24, 24, 24));
    let delay = alpha.finality_delay.as_ref().unwrap();
    assert!(delay.min >= 168.0 && delay.max <= 168.0 + 14.0 * 2.0, "{delay:?}");
    assert_eq!(r.root.max_gas_price_gwei, 5.95);
    let yearly = alpha.root_pin_spend_usd * 365.0;
    let analytic = annual_pin_cost(&GasSchedule::default(), 3600, REFERENCE_GAS_PRICE_WEI, REFERENCE_ETH_USD).unwrap();
    assert!((yearly - analytic).abs() < 1e-6, "{yearly} vs {analytic}");
    assert!((analytic - 508.0).abs() < 1.0);
}

#[test]
fn hierarchy_trades_delay_for_privacy() {
    let r = run(&scenario("hierarchy"), None);
    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    let (alpha, gamma) = (&r.sidechains["alpha"], &r.sidechains["gamma"]);
    assert_eq!(alpha.strategy, PinStrategy::Hierarchical);
    assert_eq!(alpha.root_pin_txs, 0);
    assert!(!alpha.membership_exposed && gamma.membership_exposed);
    assert!(alpha.observation_duty > gamma.observation_duty);
    assert!(alpha.finality_delay.as_ref().unwrap().mean > gamma.finality_delay.as_ref().unwrap().mean);
    assert_eq!(alpha.pins_final, alpha.pins_scheduled);

    let archive = gamma.archive.as_ref().expect("gamma closes within the run");
    assert!(archive.restore_ok);
    assert!(archive.archived_at >= 14_400);

    let x = &r.crosschain;
    assert_eq!((x.committed, x.ignored, x.mixed, x.unresolved), (1, 2, 0, 0));
    assert_eq!(x.transactions["swap-1"].status, "committed");
    assert_eq!(x.transactions["swap-2"].status, "ignored");
    assert_eq!(x.transactions["swap-3"].status, "ignored");
    for t in x.transactions.values() {
        assert!(t.start_delay.unwrap() >= 168);
    }
}

#[test]
fn spam_raises_price_and_spammer_cost() {
    let r = run(&scenario("spam"), None);
    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    assert!(r.root.mean_utilization > 0.99, "{}", r.root.mean_utilization);
    let series = r.series.as_ref().expect("series recorded");
    let spam_blocks: Vec<_> = series.iter().filter(|b| b.timestamp < 3600).collect();
    assert!(spam_blocks.windows(2).all(|w| w[1].gas_price_gwei >= w[0].gas_price_gwei));
    assert!(spam_blocks.windows(2).all(|w| w[1].spam_spend_usd > w[0].spam_spend_usd));
    assert!(spam_blocks.last().unwrap().backlog > spam_blocks[10].backlog);
    assert!(r.root.final_gas_price_gwei > 10.0 * 5.95);
    let spam = r.spam.as_ref().unwrap();
    assert!(spam.included < spam.submitted);
    for c in r.sidechains.values() {
        assert_eq!(c.pins_final, c.pins_scheduled);
        assert!(c.finality_delay.as_ref().unwrap().min > 168.0);
    }
}

#[test]
fn private_miner_stays_within_bound() {
    let r = run(&scenario("attack"), None);
    assert!(r.invariant_violations.is_empty(), "{:?}", r.invariant_violations);
    let v = &r.reversions;
    assert!(v.attack_attempts > 1000, "{v:?}");
    assert!(v.final_reversions > 0);
    assert!(v.max_depth > 3);
    assert_eq!(v.within_bound, Some(true), "{v:?}");
    let alpha = &r.sidechains["alpha"];
    assert_eq!(alpha.pins_final, alpha.pins_scheduled);
}

#[test]
fn fifty_sidechains_compare() {
    let cfg = scenario("fifty");
    let c = compare_strategies(&cfg, Exec::default()).unwrap();
    assert!(c.invariant_violations.is_empty(), "{:?}", c.invariant_violations);
    assert_eq!(c.sidechains, 50);
    let (d, h) = (&c.rows[0], &c.rows[1]);
    assert_eq!((d.strategy, h.strategy), (PinStrategy::Direct, PinStrategy::Hierarchical));
    assert_eq!(d.root_pin_txs, 50 * h.root_pin_txs);
    assert_eq!((d.root_tx_per_day, h.root_tx_per_day), (1200.0, 24.0));
    assert!((d.usd_per_year / 50.0 - 508.0).abs() < 1.0, "{}", d.usd_per_year);
    assert!(h.usd_per_year < d.usd_per_year / 40.0);
    assert!(h.mean_pin_finality_delay > d.mean_pin_finality_delay);
    assert!(h.observation_duty > d.observation_duty);
    assert_eq!((d.exposure, h.exposure), ("public", "private"));
    assert_eq!(c, compare_strategies(&cfg, Exec::Sequential).unwrap());
}

#[test]
fn compare_needs_an_intermediate() {
    let cfg = parse_scenario("[sidechain]\nname = a\n").unwrap();
    assert!(matches!(
        compare_strategies(&cfg, Exec::Sequential),
        Err(CompareError::MissingVariant(_))
    ));
}

#[test]
fn grammar_comments_sections_and_errors() {
    let cfg = parse_scenario(
        "# header\nseed = 9\n\n[prices]\neth_price_usd = 300 # trailing\n[sidechain]\nname = a\npin_interval = 600\n[sidechain]\nname = b\n",
    )
    .unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.prices.eth_price_usd, 300.0);
    assert_eq!(cfg.sidechains.len(), 2);
    assert_eq!(cfg.sidechains[0].pin_interval, 600);

    match parse_scenario("[sidechain]\nname = a\npin_interval = -5\n") {
        Err(LoadError::Parse(e)) => assert_eq!((e.line, e.field.as_str()), (3, "sidechain.pin_interval")),
        other => panic!("{other:?}"),
    }
    match parse_scenario("[sidechain]\nname = a\n[sidechain]\nname = a\n") {
        Err(LoadError::Validation(v)) => assert!(v.0.iter().any(|m| m.contains("a"))),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        load_scenario(std::path::Path::new("/nonexistent/x.scenario")),
        Err(LoadError::Io { .. })
    ));
}

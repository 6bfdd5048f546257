use chaincoord::chain::{ChainNode, TxTracker, WorldState};
use chaincoord::contracts::{ContractInit, ContractOp, PinningOp};
use chaincoord::digest::{digest, sidechain_id, AccountId, Hash32};
use chaincoord::finality::{FinalityMode, FinalityPolicy};
use chaincoord::gas::{GasSchedule, PriceState};
use chaincoord::sidechain::pin_tx;

fn pin_op(n: u64) -> ContractOp {
    ContractOp::Pinning(PinningOp::PinAdd {
        sidechain: sidechain_id("alpha"),
        block_number: n,
        block_hash: digest(&n.to_be_bytes()),
    })
}

#[test]
fn reverted_pin_disappears_and_is_resubmitted() {
    let poster = AccountId::derive("poster");
    let pinning = AccountId::derive("pinning");
    let mut g = WorldState::new(Hash32::ZERO);
    g.fund(poster, 1 << 100);
    g.deploy_at(pinning, &ContractInit::Pinning);
    g.pinning_mut(&pinning)
        .unwrap()
        .insert_sidechain(sidechain_id("alpha"), poster, &[poster]);
    let mut root = ChainNode::new(
        g,
        FinalityMode::Probabilistic,
        GasSchedule::default(),
        FinalityPolicy::default(),
        PriceState::default(),
    );
    let honest = AccountId::derive("honest");
    for t in 1..=3 {
        root.mint(honest, 14 * t).unwrap();
    }
    let fork = root.view.head_hash();
    let fork_number = root.view.head().number;

    let mut tracker = TxTracker::default();
    let tx = pin_tx(&root, poster, pin_op(7), 1, pinning);
    let first = tracker.submit(&mut root, tx);
    let (with_pin, _) = root.mint(honest, 56).unwrap();
    assert_eq!(with_pin.block.txs[0].hash(), first);
    let pinned = |root: &ChainNode| {
        root.view
            .head_state()
            .pinning(&pinning)
            .and_then(|p| p.pin_latest(&sidechain_id("alpha")).ok().copied())
    };
    assert_eq!(pinned(&root).unwrap().block_number, 7);

    // A two-block private branch from the fork point outweighs the pin block.
    let attacker = AccountId::derive("attacker");
    let b1 = root.view.build_block(&fork, attacker, 57, &[], &root.schedule).unwrap();
    root.view.insert(b1.clone()).unwrap();
    let b2 = root.view.build_block(&b1.hash(), attacker, 58, &[], &root.schedule).unwrap();
    let change = root.adopt(b2).unwrap();
    let reorg = change.reorg.as_ref().expect("branch is heavier");
    assert_eq!(reorg.reverted, vec![with_pin.hash()]);
    assert_eq!(reorg.dropped_txs.len(), 1);
    assert_eq!(root.view.head().number, fork_number + 2);
    assert!(pinned(&root).is_none());
    assert_eq!(root.view.head_state().account(&poster).unwrap().nonce, 0);

    let resubmitted = tracker.on_head_change(&mut root, &change);
    assert_eq!(resubmitted.len(), 1);
    assert_eq!(resubmitted[0].0, first);
    assert!(tracker.is_tracked(&resubmitted[0].1));
    let (again, _) = root.mint(honest, 70).unwrap();
    assert!(again.block.receipts[0].status.is_success());
    assert_eq!(pinned(&root).unwrap().block_number, 7);
}

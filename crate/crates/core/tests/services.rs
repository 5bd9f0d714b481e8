use std::collections::{BTreeMap, BTreeSet};

use pbl_core::crypto::Digest;
use pbl_core::harness::{FaultProgram, SimConfig, Simulation};
use pbl_core::identity::SeedPhrase;
use pbl_core::ledger::{encode_ledger_file, validate_ledger, KeyDirectory, Ledger};
use pbl_core::services::{
    ApiError, CuttingCondition, Message, ProviderOutcome, Query, QueryResponse, RefusalCode, Transport, TxSpec,
};
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

fn world(seed: u64, m: usize, cutting: CuttingCondition) -> Simulation {
    let mut c = SimConfig::uniform(seed, m);
    c.cutting = cutting;
    Simulation::new(c).unwrap()
}

fn stored(sim: &mut Simulation, storage: &str, index: u64) -> Option<Ledger> {
    let addr = sim.address(index).unwrap();
    match sim.net.request(storage, &Message::Query(Query::GetLedger(addr))) {
        Ok(r) => match r.message {
            Message::QueryResponse(QueryResponse::Ledger(l)) => Some(l),
            _ => None,
        },
        Err(_) => None,
    }
}

fn keys_of(sim: &Simulation, index: u64) -> KeyDirectory {
    let addr = sim.address(index).unwrap();
    sim.agent.key_directory(&addr).unwrap().clone()
}

#[test]
fn new_ledger_is_on_every_storage_provider() {
    let mut sim = world(1, 3, CuttingCondition::Count(3));
    let report = sim.create_ledger(0).unwrap();
    assert!(report.storage.iter().all(|(_, o)| *o == ProviderOutcome::Stored));
    assert!(report.ledger.blocks.is_empty());
    for s in ["storage-1", "storage-2", "storage-3"] {
        let l = stored(&mut sim, s, 0).unwrap();
        assert_eq!(l, report.ledger);
        assert!(validate_ledger(&l, &keys_of(&sim, 0)).is_valid());
    }
}

#[test]
fn second_create_is_a_duplicate() {
    let mut sim = world(2, 2, CuttingCondition::Count(3));
    sim.create_ledger(0).unwrap();
    let addr = sim.address(0).unwrap();
    assert!(matches!(sim.create_ledger(0), Err(ApiError::Duplicate(a)) if a == addr));

    let mut fresh = sim.clone();
    fresh.agent = pbl_core::services::UserAgent::new(sim.net.pool(2)).unwrap();
    assert!(matches!(fresh.create_ledger(0), Err(ApiError::Duplicate(_))));
}

#[test]
fn create_without_storage_leaves_nothing_behind() {
    let mut sim = world(3, 2, CuttingCondition::Count(3));
    for s in ["storage-1", "storage-2"] {
        sim.net.inject(s, FaultProgram::silent()).unwrap();
    }
    let err = sim.create_ledger(0).unwrap_err();
    assert!(err.is_fault(), "{err}");
    assert!(sim.agent.local_ledger(&sim.address(0).unwrap()).is_none());
    for s in ["storage-1", "storage-2"] {
        sim.net.heal(s).unwrap();
        assert!(stored(&mut sim, s, 0).is_none());
    }
    sim.create_ledger(0).unwrap();
}

#[test]
fn transactions_spread_over_executing_providers() {
    let mut sim = world(4, 3, CuttingCondition::Count(3));
    sim.create_ledger(0).unwrap();
    let mut seen: BTreeMap<String, BTreeSet<Digest>> = BTreeMap::new();
    for i in 0..300u32 {
        let r = sim.submit(0, TxSpec::raw(i.to_be_bytes())).unwrap();
        seen.entry(r.esp).or_default().insert(r.tx_id);
    }
    assert_eq!(seen.len(), 3);
    for (esp, txs) in &seen {
        assert!((60..=140).contains(&txs.len()), "{esp}: {}", txs.len());
    }
    let l = sim.agent.local_ledger(&sim.address(0).unwrap()).unwrap();
    assert_eq!(l.blocks.len(), 100);
}

#[test]
fn wrong_phrase_is_refused_by_the_executing_provider() {
    let mut sim = world(5, 2, CuttingCondition::Count(1));
    sim.create_ledger(0).unwrap();
    let addr = sim.address(0).unwrap();
    let other: SeedPhrase = "legal winner thank year wave sausage worth useful legal winner thank yellow"
        .parse()
        .unwrap();
    let err = sim
        .agent
        .submit(&mut sim.net, &other, &addr, TxSpec::raw(b"x".to_vec()))
        .unwrap_err();
    assert!(
        matches!(err, ApiError::Refused { code: RefusalCode::BadUserSignature, .. }),
        "{err}"
    );
    assert_eq!(sim.agent.local_ledger(&addr).unwrap().blocks.len(), 0);
}

#[test]
fn survives_two_of_three_executing_providers_down() {
    let mut sim = world(6, 3, CuttingCondition::Count(1));
    sim.create_ledger(0).unwrap();
    sim.net.inject("esp-1", FaultProgram::silent()).unwrap();
    sim.net.inject("esp-3", FaultProgram::delayed(10_000)).unwrap();
    for i in 0..5u8 {
        let r = sim.submit(0, TxSpec::raw(vec![i])).unwrap();
        assert_eq!(r.esp, "esp-2");
        assert_eq!(r.committed_at, Some(i as u64 + 1));
    }
}

#[test]
fn normal_flow_grows_a_valid_ledger() {
    let mut sim = world(7, 2, CuttingCondition::Count(2));
    sim.create_ledger(0).unwrap();
    let addr = sim.address(0).unwrap();
    let r1 = sim.submit(0, TxSpec::raw(b"a".to_vec())).unwrap();
    assert_eq!(r1.committed_at, None);
    let r2 = sim.submit(0, TxSpec::raw(b"b".to_vec())).unwrap();
    assert_eq!(r2.committed, vec![1]);
    let local = sim.agent.local_ledger(&addr).unwrap().clone();
    assert_eq!(local.tip_height(), 1);
    assert!(validate_ledger(&local, &keys_of(&sim, 0)).is_valid());
    let read = sim.read(0).unwrap();
    assert_eq!(encode_ledger_file(&read.ledger), encode_ledger_file(&local));
}

#[test]
fn rounds_keep_one_orderer_and_validator_then_redraw() {
    let mut sim = world(8, 3, CuttingCondition::Count(3));
    sim.create_ledger(0).unwrap();
    let addr = sim.address(0).unwrap();
    let mut rounds = Vec::new();
    let mut current: Vec<(String, String)> = Vec::new();
    for i in 0..60u8 {
        let r = sim.submit(0, TxSpec::raw(vec![i])).unwrap();
        current.push((r.osp.clone(), r.vsp.clone()));
        if r.committed_at.is_some() {
            rounds.push(std::mem::take(&mut current));
        }
    }
    let ledger = sim.agent.local_ledger(&addr).unwrap().clone();
    let keys = keys_of(&sim, 0);
    let vsp_key = |id: &str| sim.agent.pool().find(id).unwrap().public_key;
    let mut pairs = BTreeSet::new();
    for (round, block) in rounds.iter().zip(&ledger.blocks) {
        assert!(round.iter().all(|p| *p == round[0]));
        assert_eq!(block.validation_signature.signer, vsp_key(&round[0].1).key_id());
        pairs.insert(round[0].clone());
    }
    assert!(pairs.len() > 1, "providers never redrawn");
    assert!(validate_ledger(&ledger, &keys).is_valid());
}

#[test]
fn corrupt_executing_provider_never_reaches_the_ledger() {
    let mut sim = world(9, 3, CuttingCondition::Count(2));
    sim.create_ledger(0).unwrap();
    sim.net.inject("esp-2", FaultProgram::corrupt()).unwrap();
    for i in 0..20u8 {
        sim.submit(0, TxSpec::raw(vec![i])).unwrap();
    }
    let addr = sim.address(0).unwrap();
    let ledger = sim.agent.local_ledger(&addr).unwrap();
    let esp2 = sim.agent.pool().find("esp-2").unwrap().public_key.key_id();
    assert!(validate_ledger(ledger, &keys_of(&sim, 0)).is_valid());
    assert!(ledger
        .blocks
        .iter()
        .flat_map(|b| &b.transactions)
        .all(|ct| ct.executing_signature.signer != esp2));
    assert_eq!(ledger.blocks.iter().map(|b| b.transactions.len()).sum::<usize>(), 20);
}

#[test]
fn corrupt_validator_is_caught_by_the_user() {
    let mut sim = world(10, 2, CuttingCondition::Count(1));
    sim.create_ledger(0).unwrap();
    sim.net.inject("vsp-1", FaultProgram::corrupt()).unwrap();
    for i in 0..8u8 {
        sim.submit(0, TxSpec::raw(vec![i])).unwrap();
    }
    let ledger = sim.agent.local_ledger(&sim.address(0).unwrap()).unwrap();
    assert_eq!(ledger.tip_height(), 8);
    assert!(validate_ledger(ledger, &keys_of(&sim, 0)).is_valid());
}

#[test]
fn dependent_transactions_commit_in_order() {
    let mut sim = world(11, 2, CuttingCondition::Count(3));
    sim.create_ledger(0).unwrap();
    let a = sim.submit(0, TxSpec::raw(b"a".to_vec())).unwrap();
    let b = sim
        .submit(0, TxSpec::raw(b"b".to_vec()).consuming(vec![a.tx_id]))
        .unwrap();
    sim.submit(0, TxSpec::raw(b"c".to_vec()).consuming(vec![b.tx_id, a.tx_id]))
        .unwrap();
    let ledger = sim.agent.local_ledger(&sim.address(0).unwrap()).unwrap();
    assert_dependencies_sound(ledger);
    assert_eq!(ledger.tip_height(), 1);
}

#[test]
fn storage_rejects_a_block_off_the_tip() {
    let mut sim = world(12, 1, CuttingCondition::Count(1));
    sim.create_ledger(0).unwrap();
    sim.submit(0, TxSpec::raw(b"a".to_vec())).unwrap();
    sim.submit(0, TxSpec::raw(b"b".to_vec())).unwrap();
    let addr = sim.address(0).unwrap();
    let ledger = sim.agent.local_ledger(&addr).unwrap().clone();
    let reply = sim
        .net
        .request(
            "storage-1",
            &Message::CommitBlock {
                ledger: addr,
                block: ledger.blocks[0].clone(),
            },
        )
        .unwrap();
    assert!(matches!(reply.message, Message::Refusal { .. }), "{:?}", reply.message);
    assert_eq!(stored(&mut sim, "storage-1", 0).unwrap(), ledger);
}

#[test]
fn memory_and_file_storage_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut mem = world(13, 2, CuttingCondition::Count(2));
    let mut c = SimConfig::uniform(13, 2);
    c.cutting = CuttingCondition::Count(2);
    c.storage_dir = Some(dir.path().to_owned());
    let mut file = Simulation::new(c).unwrap();
    for sim in [&mut mem, &mut file] {
        sim.create_ledger(0).unwrap();
        for i in 0..9u8 {
            sim.submit(0, TxSpec::raw(vec![i; 3])).unwrap();
        }
    }
    for s in ["storage-1", "storage-2"] {
        let a = stored(&mut mem, s, 0).unwrap();
        let b = stored(&mut file, s, 0).unwrap();
        assert_eq!(encode_ledger_file(&a), encode_ledger_file(&b));
        assert_eq!(a.tip_height(), 4);
    }
}

fn assert_dependencies_sound(l: &Ledger) {
    let mut earlier = BTreeSet::new();
    for b in &l.blocks {
        for ct in &b.transactions {
            for input in &ct.inner.inputs {
                assert!(earlier.contains(input), "input {input} not earlier");
            }
            earlier.insert(ct.id());
        }
    }
}

fn assert_single_chain(l: &Ledger) {
    for (i, b) in l.blocks.iter().enumerate() {
        assert_eq!(b.core.height, i as u64 + 1);
    }
}

fn cutting() -> impl Strategy<Value = CuttingCondition> {
    prop_oneof![
        (1usize..6).prop_map(CuttingCondition::Count),
        (1u64..4).prop_map(|s| CuttingCondition::Interval(s * 1000)),
        (200usize..1200).prop_map(CuttingCondition::Size),
    ]
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn pipeline_ledgers_always_validate(
        seed in 0u64..1000,
        cut in cutting(),
        n in 1usize..200,
        chain_every in 0usize..6,
    ) {
        let mut sim = world(seed, 2, cut);
        sim.create_ledger(0).unwrap();
        let mut ids: Vec<Digest> = Vec::new();
        for i in 0..n {
            let mut spec = TxSpec::raw(format!("tx {i}").into_bytes());
            if chain_every > 0 && i % chain_every == 0 {
                if let Some(prev) = ids.last() {
                    spec = spec.consuming(vec![*prev]);
                }
            }
            let r = sim.submit(0, spec).unwrap();
            ids.push(r.tx_id);
            if i % 7 == 6 {
                sim.net.advance(900);
                sim.tick(0).unwrap();
            }
        }
        let keys = keys_of(&sim, 0);
        let addr = sim.address(0).unwrap();
        let local = sim.agent.local_ledger(&addr).unwrap().clone();
        prop_assert!(validate_ledger(&local, &keys).is_valid());
        assert_dependencies_sound(&local);
        assert_single_chain(&local);
        for s in ["storage-1", "storage-2"] {
            let l = stored(&mut sim, s, 0).unwrap();
            prop_assert!(validate_ledger(&l, &keys).is_valid());
            assert_single_chain(&l);
            prop_assert_eq!(&l, &local);
        }
        let committed: usize = local.blocks.iter().map(|b| b.transactions.len()).sum();
        prop_assert_eq!(committed + sim.agent.pending(&addr).len(), n);
    }
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::with_cases(n)
    }
}

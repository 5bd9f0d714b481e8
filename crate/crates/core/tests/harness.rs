//! Fault tolerance and determinism of the simulated provider network.

use pbl_core::harness::{FaultProgram, Scenario, SimConfig, Simulation};
use pbl_core::identity::ServiceKind;
use pbl_core::ledger::encode_ledger_file;
use pbl_core::services::{CuttingCondition, TxSpec};
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

fn world(seed: u64) -> Simulation {
    let mut c = SimConfig::uniform(seed, 3);
    c.cutting = CuttingCondition::Count(2);
    Simulation::new(c).unwrap()
}

/// Runs a fixed workload under a fault schedule and returns every copy of
/// the ledger as file bytes: the agent's, then each storage provider's.
fn run(seed: u64) -> Vec<Vec<u8>> {
    let mut sim = world(seed);
    let start = sim.net.clock().now();
    sim.net.inject("esp-1", FaultProgram::silent().between(start, start + 5_000)).unwrap();
    sim.net.inject("storage-2", FaultProgram::delayed(200)).unwrap();
    sim.net.inject("osp-3", FaultProgram::silent()).unwrap();
    sim.create_ledger(0).unwrap();
    for i in 0..15u32 {
        sim.submit(0, TxSpec::raw(i.to_be_bytes().to_vec())).unwrap();
        sim.net.advance(400);
    }
    let addr = sim.address(0).unwrap();
    let mut copies = vec![encode_ledger_file(sim.agent.local_ledger(&addr).unwrap())];
    for s in ["storage-1", "storage-2", "storage-3"] {
        let mut only = sim.clone();
        for other in ["storage-1", "storage-2", "storage-3"].iter().filter(|o| **o != s) {
            only.net.inject(other, FaultProgram::silent()).unwrap();
        }
        copies.push(encode_ledger_file(&only.read(0).unwrap().ledger));
    }
    copies
}

#[test]
fn identical_inputs_give_identical_ledgers() {
    let a = run(31);
    assert_eq!(a, run(31));
    assert!(a.iter().all(|c| c == &a[0]));
    assert_ne!(a[0], run(32)[0]);
}

#[test]
fn scenario_runs_are_reproducible() {
    let text = "seed 9\nproviders gba 1\nproviders esp 2\nproviders osp 2\nproviders vsp 2\nproviders storage 2\n\
                cutting count 2\ncreate-ledger 0\nfault esp-1 silent from 0 to 1000\nsubmit 0 a\nsubmit 0 b\n\
                advance 2000\nsubmit 0 c\nsubmit 0 d\nread 0\n";
    let s = Scenario::parse(text).unwrap();
    let a = s.run().unwrap();
    assert_eq!(a.lines, s.run().unwrap().lines);
    assert!(a.is_clean());
}

#[test]
fn healed_storage_serves_again() {
    let mut sim = world(4);
    sim.create_ledger(0).unwrap();
    let now = sim.net.clock().now();
    for s in ["storage-1", "storage-2", "storage-3"] {
        sim.net.inject(s, FaultProgram::silent().between(now, now + 10_000)).unwrap();
    }
    assert!(sim.read(0).unwrap_err().is_fault());
    sim.net.advance(10_000);
    assert!(sim.read_probe(0));
}

fn kinds_silenced(mask: u32) -> Vec<String> {
    let ids: Vec<String> = ServiceKind::ALL
        .iter()
        .flat_map(|k| (1..=3).map(move |i| format!("{}-{i}", k.as_str())))
        .collect();
    ids.into_iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, id)| id)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::with_cases(64)
    })]

    #[test]
    fn availability_follows_healthy_providers(seed in 0u64..8, mask in 0u32..(1 << 15)) {
        let mut base = world(seed);
        base.create_ledger(0).unwrap();
        let silent = kinds_silenced(mask);
        let mut sim = base.clone();
        for id in &silent {
            sim.net.inject(id, FaultProgram::silent()).unwrap();
        }
        let healthy = |k: ServiceKind| (1..=3).any(|i| !silent.contains(&format!("{}-{i}", k.as_str())));
        prop_assert_eq!(sim.read_probe(0), healthy(ServiceKind::Storage));
        let write = sim.write_probe(1);
        prop_assert_eq!(write.is_ok(), ServiceKind::ALL.iter().all(|&k| healthy(k)));
        if let Err(e) = &write {
            prop_assert!(e.is_fault(), "{}", e);
        }
        prop_assert!(sim.local_valid(1));
    }
}

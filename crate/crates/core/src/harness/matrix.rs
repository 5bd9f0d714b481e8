use std::collections::BTreeMap;

use crate::identity::ServiceKind;

use super::faults::FaultProgram;
use super::sim::Simulation;

/// One fault subset and what happened under it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixRun {
    pub silent: Vec<String>,
    pub read_ok: bool,
    pub write_ok: bool,
    /// The write failed with a fault rather than a refusal or invalid data.
    pub write_faulted: bool,
    pub invalid_commit: bool,
    pub expected_read: bool,
    pub expected_write: bool,
}

impl MatrixRun {
    pub fn matches(&self) -> bool {
        self.read_ok == self.expected_read
            && self.write_ok == self.expected_write
            && (self.write_ok || self.write_faulted)
            && !self.invalid_commit
    }
}

/// Outcome of running every fault subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixReport {
    pub providers: Vec<(ServiceKind, String)>,
    pub runs: Vec<MatrixRun>,
}

impl MatrixReport {
    pub fn mismatches(&self) -> impl Iterator<Item = &MatrixRun> {
        self.runs.iter().filter(|r| !r.matches())
    }

    pub fn invalid_commits(&self) -> usize {
        self.runs.iter().filter(|r| r.invalid_commit).count()
    }

    pub fn is_clean(&self) -> bool {
        self.mismatches().next().is_none()
    }

    /// Per kind and number of healthy providers of that kind: runs, reads
    /// that succeeded and writes that succeeded.
    pub fn by_kind(&self) -> BTreeMap<(ServiceKind, usize), (usize, usize, usize)> {
        let mut out = BTreeMap::new();
        for run in &self.runs {
            for kind in ServiceKind::ALL {
                let healthy = self.healthy(kind, &run.silent);
                let e = out.entry((kind, healthy)).or_insert((0, 0, 0));
                e.0 += 1;
                e.1 += run.read_ok as usize;
                e.2 += run.write_ok as usize;
            }
        }
        out
    }

    fn healthy(&self, kind: ServiceKind, silent: &[String]) -> usize {
        self.providers
            .iter()
            .filter(|(k, id)| *k == kind && !silent.contains(id))
            .count()
    }

    /// Summary lines in key=value form.
    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        for ((kind, healthy), (runs, reads, writes)) in self.by_kind() {
            out.push(format!(
                "matrix kind={kind} healthy={healthy} runs={runs} read-ok={reads} write-ok={writes}"
            ));
        }
        for run in self.mismatches().take(10) {
            out.push(format!(
                "mismatch silent={} read-ok={} expected-read={} write-ok={} expected-write={} invalid-commit={}",
                run.silent.join(","),
                run.read_ok,
                run.expected_read,
                run.write_ok,
                run.expected_write,
                run.invalid_commit
            ));
        }
        out.push(format!(
            "matrix runs={} mismatches={} invalid-commits={}",
            self.runs.len(),
            self.mismatches().count(),
            self.invalid_commits()
        ));
        out
    }
}

/// Runs a read probe on ledger `read_index` and a write probe on
/// `write_index` under every subset of `varying` held silent, each on a
/// fresh copy of `base`. An empty `varying` means every provider.
pub fn fault_matrix(base: &Simulation, read_index: u64, write_index: u64, varying: &[String]) -> MatrixReport {
    let providers: Vec<(ServiceKind, String)> = base
        .net
        .records()
        .map(|r| (r.kind, r.provider_id.clone()))
        .collect();
    let varying: Vec<String> = if varying.is_empty() {
        providers.iter().map(|(_, id)| id.clone()).collect()
    } else {
        varying.to_vec()
    };
    assert!(varying.len() < 32, "too many providers for an exhaustive matrix");

    let mut report = MatrixReport {
        providers,
        runs: Vec::with_capacity(1 << varying.len()),
    };
    for mask in 0u32..(1 << varying.len()) {
        let silent: Vec<String> = varying
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, id)| id.clone())
            .collect();
        let mut sim = base.clone();
        for id in &silent {
            sim.net
                .inject(id, FaultProgram::silent())
                .expect("matrix ids are registered");
        }
        let read_ok = sim.read_probe(read_index);
        let write = sim.write_probe(write_index);
        let invalid_commit = !sim.local_valid(write_index)
            || (write.is_ok() && sim.read(write_index).is_ok_and(|r| !r.report.is_valid()));
        let expected_read = report.healthy(ServiceKind::Storage, &silent) > 0;
        let expected_write = ServiceKind::ALL
            .iter()
            .all(|k| report.healthy(*k, &silent) > 0);
        report.runs.push(MatrixRun {
            read_ok,
            write_ok: write.is_ok(),
            write_faulted: write.as_ref().err().is_some_and(|e| e.is_fault()),
            invalid_commit,
            expected_read,
            expected_write,
            silent,
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SimConfig;
    use crate::services::CuttingCondition;

    #[test]
    fn single_provider_world_matches_expectations() {
        let mut config = SimConfig::uniform(8, 1);
        config.cutting = CuttingCondition::Count(1);
        let mut base = Simulation::new(config).unwrap();
        base.create_ledger(0).unwrap();
        let report = fault_matrix(&base, 0, 1, &[]);
        assert_eq!(report.runs.len(), 32);
        assert!(report.is_clean(), "{:#?}", report.mismatches().collect::<Vec<_>>());
        assert_eq!(report.runs.iter().filter(|r| r.write_ok).count(), 1);
        assert_eq!(report.runs.iter().filter(|r| r.read_ok).count(), 16);
    }
}

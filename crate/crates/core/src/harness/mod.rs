//! Benchmark plumbing: suite runs, CSV records, summaries, solved-vs-time
//! curves, the brute-force oracle and the random suite generator.

mod generate;
mod oracle;
mod suite;

pub use generate::{gen_random_suite, generate_instances, GenSpec, GeneratedSuite};
pub use oracle::{brute_force_verify, ORACLE_MAX_RELUS};
pub use suite::{Instance, InstanceEntry, LoadedInstance, SuiteConfig, SuiteFile};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentBrancher, Checkpoint, QNet};
use crate::error::{Error, Result};
use crate::heuristics::{StaticBrancher, Strategy};
use crate::search::{verify_with, Budget, SearchConfig, SearchReport};

/// Column order of the results CSV.
pub const CSV_COLUMNS: [&str; 8] = [
    "query_id",
    "strategy",
    "verdict",
    "wall_time_ms",
    "iterations",
    "splits",
    "seed",
    "checkpoint",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query_id: String,
    pub strategy: String,
    /// `SAT`, `UNSAT`, `TIMEOUT` or `ERROR`.
    pub verdict: String,
    pub wall_time_ms: f64,
    pub iterations: u64,
    pub splits: u64,
    pub seed: u64,
    pub checkpoint: String,
}

impl RunRecord {
    pub fn is_solved(&self) -> bool {
        self.verdict == "SAT" || self.verdict == "UNSAT"
    }
}

/// A trained policy ready for evaluation.
#[derive(Debug, Clone)]
pub struct AgentPolicy {
    pub id: String,
    pub qnet: QNet,
    pub split_scale: f64,
}

impl AgentPolicy {
    pub fn from_checkpoint(c: &Checkpoint, id: impl Into<String>) -> Result<Self> {
        Ok(AgentPolicy {
            id: id.into(),
            qnet: c.qnet()?,
            split_scale: c.split_scale,
        })
    }
}

/// One verify run of `strategy` on `inst`.
pub fn run_one(
    inst: &Instance,
    strategy: Strategy,
    budget: &Budget,
    search: &SearchConfig,
    agent: Option<&AgentPolicy>,
) -> Result<SearchReport> {
    match strategy {
        Strategy::Agent => {
            let policy = agent.ok_or_else(|| {
                Error::InvalidArgument("the agent strategy needs a checkpoint".into())
            })?;
            let mut featurizer = crate::agent::Featurizer::frozen(policy.split_scale);
            let mut b = AgentBrancher::greedy(&policy.qnet, &mut featurizer);
            verify_with(&inst.net, &inst.query, &mut b, budget, search)
        }
        s => verify_with(
            &inst.net,
            &inst.query,
            &mut StaticBrancher(s),
            budget,
            search,
        ),
    }
}

/// Everything one suite run needs.
pub struct SuiteRun<'a> {
    pub instances: &'a [LoadedInstance],
    pub strategies: &'a [Strategy],
    pub budget: Budget,
    pub search: SearchConfig,
    pub workers: usize,
    pub agent: Option<&'a AgentPolicy>,
}

fn record_for(
    id: &str,
    strategy: Strategy,
    run: &SuiteRun<'_>,
    result: std::result::Result<SearchReport, String>,
) -> RunRecord {
    let checkpoint = match (strategy, run.agent) {
        (Strategy::Agent, Some(a)) => a.id.clone(),
        _ => String::new(),
    };
    let base = RunRecord {
        query_id: id.to_string(),
        strategy: strategy.to_string(),
        verdict: "ERROR".into(),
        wall_time_ms: 0.0,
        iterations: 0,
        splits: 0,
        seed: run.budget.seed,
        checkpoint,
    };
    match result {
        Ok(r) => RunRecord {
            verdict: r.verdict.outcome.kind().to_string(),
            wall_time_ms: r.verdict.wall_time.as_secs_f64() * 1e3,
            iterations: r.verdict.iterations,
            splits: r.verdict.splits,
            ..base
        },
        Err(e) => {
            tracing::warn!(query = id, %strategy, error = %e, "run failed");
            base
        }
    }
}

fn execute(run: &SuiteRun<'_>, job: usize) -> RunRecord {
    let inst = &run.instances[job / run.strategies.len()];
    let strategy = run.strategies[job % run.strategies.len()];
    let result = match &inst.instance {
        Err(e) => Err(e.clone()),
        Ok(i) => catch_unwind(AssertUnwindSafe(|| {
            run_one(i, strategy, &run.budget, &run.search, run.agent)
        }))
        .map_err(|p| {
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into())
        })
        .and_then(|r| r.map_err(|e| e.to_string())),
    };
    record_for(&inst.id, strategy, run, result)
}

/// Runs every (instance, strategy) pair on a pool of `workers` threads.
/// Records come back instance-major; if `csv` is given, each record is
/// appended to it (in that same order) as soon as its predecessors are done.
pub fn run_suite(run: &SuiteRun<'_>, csv: Option<&Path>) -> Result<Vec<RunRecord>> {
    let jobs = run.instances.len() * run.strategies.len();
    let mut writer = match csv {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            Some(csv::Writer::from_path(p)?)
        }
        None => None,
    };
    let next = AtomicUsize::new(0);
    let mut out: Vec<Option<RunRecord>> = vec![None; jobs];
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();
        for _ in 0..run.workers.max(1).min(jobs.max(1)) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let job = next.fetch_add(1, Ordering::Relaxed);
                if job >= jobs {
                    break;
                }
                if tx.send((job, execute(run, job))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut written = 0;
        for (job, rec) in rx {
            out[job] = Some(rec);
            while written < jobs {
                let Some(r) = &out[written] else { break };
                if let Some(w) = writer.as_mut() {
                    w.serialize(r)?;
                    w.flush()?;
                }
                written += 1;
            }
        }
        Ok(())
    })?;
    Ok(out
        .into_iter()
        .map(|r| r.expect("every job reports"))
        .collect())
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::InvalidArgument(format!(
            "unexpected CSV columns {headers:?}"
        )));
    }
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<RunRecord>, _>>()?)
}

/// Per-strategy summary row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub strategy: String,
    pub sat: usize,
    pub unsat: usize,
    pub timeout: usize,
    pub error: usize,
    /// Queries attempted by every strategy.
    pub common: usize,
    /// Over the common queries; unsolved runs count at the full budget.
    pub avg_time_ms: f64,
    pub avg_iterations: f64,
    /// Queries solved by every strategy.
    pub common_solved: usize,
    pub avg_iterations_common_solved: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Counts per strategy plus averages over the queries every strategy
/// attempted, with timed-out and failed runs charged `budget_ms`.
pub fn aggregate(records: &[RunRecord], budget_ms: f64) -> Vec<Summary> {
    let mut by: BTreeMap<&str, BTreeMap<&str, &RunRecord>> = BTreeMap::new();
    for r in records {
        by.entry(r.strategy.as_str())
            .or_default()
            .insert(r.query_id.as_str(), r);
    }
    let mut common: Option<BTreeSet<&str>> = None;
    let mut solved: Option<BTreeSet<&str>> = None;
    for runs in by.values() {
        let ids: BTreeSet<&str> = runs.keys().copied().collect();
        let ok: BTreeSet<&str> = runs
            .values()
            .filter(|r| r.is_solved())
            .map(|r| r.query_id.as_str())
            .collect();
        common = Some(match common {
            None => ids,
            Some(c) => c.intersection(&ids).copied().collect(),
        });
        solved = Some(match solved {
            None => ok,
            Some(c) => c.intersection(&ok).copied().collect(),
        });
    }
    let common = common.unwrap_or_default();
    let solved = solved.unwrap_or_default();
    by.iter()
        .map(|(&strategy, runs)| {
            let count = |v: &str| runs.values().filter(|r| r.verdict == v).count();
            let charged = |r: &RunRecord| {
                if r.is_solved() {
                    r.wall_time_ms
                } else {
                    budget_ms
                }
            };
            Summary {
                strategy: strategy.to_string(),
                sat: count("SAT"),
                unsat: count("UNSAT"),
                timeout: count("TIMEOUT"),
                error: count("ERROR"),
                common: common.len(),
                avg_time_ms: mean(common.iter().map(|q| charged(runs[q]))),
                avg_iterations: mean(common.iter().map(|q| runs[q].iterations as f64)),
                common_solved: solved.len(),
                avg_iterations_common_solved: mean(
                    solved.iter().map(|q| runs[q].iterations as f64),
                ),
            }
        })
        .collect()
}

/// Step points `(t_i, i)` of solved runs sorted by time.
pub fn cumulative_curve(records: &[RunRecord], strategy: &str) -> Vec<(f64, usize)> {
    let mut times: Vec<f64> = records
        .iter()
        .filter(|r| r.strategy == strategy && r.is_solved())
        .map(|r| r.wall_time_ms)
        .collect();
    times.sort_by(f64::total_cmp);
    times
        .into_iter()
        .enumerate()
        .map(|(i, t)| (t, i + 1))
        .collect()
}

pub fn write_curve(path: &Path, curve: &[(f64, usize)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "time_ms,solved")?;
    for (t, n) in curve {
        writeln!(f, "{t},{n}")?;
    }
    f.flush()?;
    Ok(())
}

/// Plain-text table of [`aggregate`] output.
pub fn format_summary(rows: &[Summary]) -> String {
    let mut s = format!(
        "{:<14} {:>6} {:>6} {:>8} {:>6} {:>14} {:>14} {:>18}\n",
        "strategy",
        "SAT",
        "UNSAT",
        "TIMEOUT",
        "ERROR",
        "avg_time_ms",
        "avg_iters",
        "avg_iters_solved"
    );
    for r in rows {
        s += &format!(
            "{:<14} {:>6} {:>6} {:>8} {:>6} {:>14.2} {:>14.2} {:>18.2}\n",
            r.strategy,
            r.sat,
            r.unsat,
            r.timeout,
            r.error,
            r.avg_time_ms,
            r.avg_iterations,
            r.avg_iterations_common_solved
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q: &str, s: &str, verdict: &str, ms: f64, iters: u64) -> RunRecord {
        RunRecord {
            query_id: q.into(),
            strategy: s.into(),
            verdict: verdict.into(),
            wall_time_ms: ms,
            iterations: iters,
            splits: 0,
            seed: 0,
            checkpoint: String::new(),
        }
    }

    #[test]
    fn timeouts_count_at_full_budget() {
        let r = vec![
            rec("a", "soi", "SAT", 10.0, 1),
            rec("b", "soi", "UNSAT", 20.0, 2),
            rec("c", "soi", "SAT", 30.0, 3),
            rec("d", "soi", "TIMEOUT", 60000.0, 9),
        ];
        let s = aggregate(&r, 60000.0);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].sat, s[0].unsat, s[0].timeout), (2, 1, 1));
        assert_eq!(s[0].avg_time_ms, (10.0 + 20.0 + 30.0 + 60000.0) / 4.0);
        assert!(aggregate(&[], 1.0).is_empty());
    }

    #[test]
    fn averages_use_the_common_set() {
        let r = vec![
            rec("a", "soi", "SAT", 10.0, 1),
            rec("b", "soi", "SAT", 20.0, 2),
            rec("b", "babsr", "TIMEOUT", 100.0, 5),
            rec("c", "babsr", "SAT", 30.0, 3),
        ];
        let s = aggregate(&r, 100.0);
        let soi = s.iter().find(|x| x.strategy == "soi").unwrap();
        let babsr = s.iter().find(|x| x.strategy == "babsr").unwrap();
        assert_eq!(soi.common, 1);
        assert_eq!(soi.avg_time_ms, 20.0);
        assert_eq!(babsr.avg_time_ms, 100.0);
        assert_eq!(babsr.common_solved, 0);
    }

    #[test]
    fn curve_examples() {
        let r = vec![
            rec("a", "soi", "SAT", 5.0, 1),
            rec("b", "soi", "SAT", 1.0, 1),
            rec("c", "soi", "UNSAT", 3.0, 1),
            rec("d", "soi", "TIMEOUT", 9.0, 1),
        ];
        assert_eq!(
            cumulative_curve(&r, "soi"),
            vec![(1.0, 1), (3.0, 2), (5.0, 3)]
        );
        assert!(cumulative_curve(&r[3..], "soi").is_empty());
        let same = vec![
            rec("a", "soi", "SAT", 2.0, 1),
            rec("b", "soi", "SAT", 2.0, 1),
        ];
        assert_eq!(cumulative_curve(&same, "soi"), vec![(2.0, 1), (2.0, 2)]);
    }
}

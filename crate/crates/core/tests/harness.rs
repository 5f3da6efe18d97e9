//! End-to-end harness behaviour: suite files, CSV records, summaries,
//! checkpoints and replay sampling.

use std::time::Duration;

use phasebranch::agent::{
    Checkpoint, Featurizer, QNet, ReplayBuffer, StateFeatures, TrainerConfig, Transition,
};
use phasebranch::harness::{
    aggregate, cumulative_curve, gen_random_suite, read_records, run_suite, GenSpec, SuiteFile,
    SuiteRun,
};
use phasebranch::search::EventLog;
use phasebranch::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn small_suite(dir: &std::path::Path) -> phasebranch::harness::SuiteConfig {
    gen_random_suite(21, 12, &GenSpec::default(), dir).unwrap();
    SuiteFile::load(&dir.join("suite.toml")).unwrap()
}

#[test]
fn suite_run_writes_consistent_records() {
    let dir = tempfile::tempdir().unwrap();
    let suite = small_suite(dir.path());
    assert_eq!(suite.instances.len(), 12);
    let strategies = Strategy::STATIC.to_vec();
    let budget = Budget::new(Duration::from_secs(30), 5000, 3).unwrap();
    let csv = dir.path().join("results.csv");
    let run = |workers, csv: Option<&std::path::Path>| {
        run_suite(
            &SuiteRun {
                instances: &suite.instances,
                strategies: &strategies,
                budget,
                search: SearchConfig::default(),
                workers,
                agent: None,
            },
            csv,
        )
        .unwrap()
    };
    let records = run(3, Some(&csv));
    assert_eq!(records.len(), 48);
    let back = read_records(&csv).unwrap();
    assert_eq!(back.len(), records.len());
    for (a, b) in records.iter().zip(&back) {
        assert_eq!(
            (&a.query_id, &a.strategy, &a.verdict, a.iterations),
            (&b.query_id, &b.strategy, &b.verdict, b.iterations)
        );
    }

    // One worker or three: same verdicts and counts in the same order.
    let serial = run(1, None);
    let key = |r: &phasebranch::harness::RunRecord| {
        (
            r.query_id.clone(),
            r.strategy.clone(),
            r.verdict.clone(),
            r.iterations,
            r.splits,
        )
    };
    assert_eq!(
        records.iter().map(key).collect::<Vec<_>>(),
        serial.iter().map(key).collect::<Vec<_>>()
    );

    for s in aggregate(&records, 30_000.0) {
        assert_eq!(s.sat + s.unsat + s.timeout + s.error, 12, "{}", s.strategy);
        let curve = cumulative_curve(&records, &s.strategy);
        assert_eq!(curve.len(), s.sat + s.unsat);
        assert!(curve
            .windows(2)
            .all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
    }
}

#[test]
fn unreadable_inputs_become_error_rows() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.nnet"), "not a network\n").unwrap();
    std::fs::write(dir.path().join("p.prop"), "out 1 <= 0\n").unwrap();
    let file = SuiteFile::parse(
        "strategies = [\"soi\"]\n[[instances]]\nnet = \"bad.nnet\"\nprop = \"p.prop\"\n",
    )
    .unwrap();
    let suite = file.resolve(dir.path()).unwrap();
    let records = run_suite(
        &SuiteRun {
            instances: &suite.instances,
            strategies: &suite.strategies,
            budget: suite.budget,
            search: SearchConfig::default(),
            workers: 1,
            agent: None,
        },
        None,
    )
    .unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].verdict, "ERROR");
}

#[test]
fn robustness_manifest_expands_per_label() {
    let dir = tempfile::tempdir().unwrap();
    let hidden = Layer::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0], true).unwrap();
    let out = Layer::new(
        vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]],
        vec![0.0, 0.0, 0.1],
        false,
    )
    .unwrap();
    let net = Network::new(vec![hidden, out], vec![-1.0, -1.0], vec![1.0, 1.0], None).unwrap();
    std::fs::write(dir.path().join("n.nnet"), emit_nnet(&net)).unwrap();
    std::fs::write(
        dir.path().join("m.txt"),
        "# x0 ; delta\n0.9, 0.1 ; 0.05\n0.9 0.1 ; 0.5\n",
    )
    .unwrap();
    let text = "strategies = [\"babsr\"]\nnetworks = [\"n.nnet\"]\nrobust_manifest = \"m.txt\"\n";
    let suite = SuiteFile::parse(text).unwrap().resolve(dir.path()).unwrap();
    // Two points, two adversarial labels each.
    assert_eq!(suite.instances.len(), 4);
    let records = run_suite(
        &SuiteRun {
            instances: &suite.instances,
            strategies: &suite.strategies,
            budget: suite.budget,
            search: SearchConfig::default(),
            workers: 1,
            agent: None,
        },
        None,
    )
    .unwrap();
    let verdicts: Vec<&str> = records.iter().map(|r| r.verdict.as_str()).collect();
    // Small radius: label 0 stays on top; large radius: label 1 can win.
    assert_eq!(&verdicts[..2], ["UNSAT", "UNSAT"]);
    assert!(verdicts[2..].contains(&"SAT"));
}

#[test]
fn checkpoints_reload_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let qnet = QNet::new(&[phasebranch::agent::FEATURE_WIDTH, 64, 64, 1], &mut rng).unwrap();
    let c = Checkpoint::new(
        &qnet,
        &Featurizer::frozen(17.0),
        &TrainerConfig::default(),
        123,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    c.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.qnet().unwrap(), qnet);
    assert_eq!(back.featurizer(), Featurizer::frozen(17.0));
    let tampered = c
        .to_text()
        .unwrap()
        .replace("phasebranch-qnet", "something-else");
    assert!(Checkpoint::from_text(&tampered).is_err());
}

#[test]
fn event_logs_round_trip_through_text() {
    let net = toy_network();
    let q = Query::new(
        "example-1",
        vec![-1.0, 0.0],
        vec![1.0, 1.0],
        vec![OutputConstraint::new(vec![1.0], -0.5)],
    )
    .unwrap();
    let cfg = SearchConfig {
        tightening: Tightening::Interval,
        relaxation_sat: false,
        exhaustive: true,
        ..SearchConfig::default()
    };
    let r = verify_with(
        &net,
        &q,
        &mut StaticBrancher(Strategy::Polarity),
        &Budget::default(),
        &cfg,
    )
    .unwrap();
    let text = r.log.to_text();
    assert_eq!(EventLog::parse(&text).unwrap(), r.log);
    assert!(text.ends_with("end sat\n"));
}

fn dummy(k: usize) -> Transition {
    Transition {
        state: Arc::new(StateFeatures {
            actions: Vec::new(),
            rows: vec![vec![k as f64]],
        }),
        action: 0,
        reward: -0.5,
        next: None,
        is_demo: false,
    }
}

fn frequencies(buffer: &ReplayBuffer, draws: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut counts = vec![0.0; buffer.len()];
    for i in buffer.sample(draws, 0.4, &mut rng).unwrap().indices {
        counts[i] += 1.0;
    }
    counts
}

#[test]
fn equal_priorities_sample_uniformly() {
    let mut b = ReplayBuffer::new(8, 0.6);
    for k in 0..4 {
        b.push_self(dummy(k));
    }
    let counts = frequencies(&b, 10_000);
    let chi2: f64 = counts.iter().map(|c| (c - 2500.0).powi(2) / 2500.0).sum();
    assert!(chi2 < 11.345, "{counts:?}");
}

#[test]
fn zero_alpha_ignores_priorities() {
    let mut b = ReplayBuffer::new(4, 0.0);
    for k in 0..4 {
        b.push_self(dummy(k));
    }
    b.update_priorities(&[0, 1, 2, 3], &[100.0, 1.0, 0.01, 5.0], 1e-6);
    let counts = frequencies(&b, 10_000);
    let chi2: f64 = counts.iter().map(|c| (c - 2500.0).powi(2) / 2500.0).sum();
    assert!(chi2 < 11.345, "{counts:?}");
}

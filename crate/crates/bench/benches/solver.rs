use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use phasebranch::agent::{q_forward, Featurizer, QNet, FEATURE_WIDTH};
use phasebranch::harness::{brute_force_verify, generate_instances, GenSpec};
use phasebranch::numeric::{
    build_relaxation, propagate_intervals, solve_lp, tighten_bounds_lp, Objective,
};
use phasebranch::search::{root_node, verify_with, Deduced, SplitContext};
use phasebranch::{Budget, Phases, SearchConfig, StaticBrancher, Strategy, Tightening};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec() -> GenSpec {
    GenSpec {
        min_relus: 12,
        max_relus: 20,
        max_hidden_layers: 3,
        ..GenSpec::default()
    }
}

fn bounds(c: &mut Criterion) {
    let suite = generate_instances(1, 1, &spec()).unwrap();
    let inst = &suite.instances[0];
    let net = inst.net.as_ref();
    let q = &inst.query;
    let phases = Phases::unfixed(net);
    c.bench_function("propagate_intervals", |b| {
        b.iter(|| propagate_intervals(net, &q.input_lower, &q.input_upper, black_box(&phases)))
    });
    let root = propagate_intervals(net, &q.input_lower, &q.input_upper, &phases)
        .bounds()
        .cloned()
        .unwrap();
    c.bench_function("relaxation_lp", |b| {
        b.iter(|| {
            let mut r = build_relaxation(net, &root, &phases, &q.constraints);
            let out = r.vars.outputs()[0];
            r.problem.objective = Some(Objective::minimize(vec![(out, 1.0)]));
            solve_lp(&r.problem).unwrap()
        })
    });
    c.bench_function("tighten_bounds_lp", |b| {
        b.iter(|| tighten_bounds_lp(net, black_box(&root), &phases, &q.constraints).unwrap())
    });
}

fn search(c: &mut Criterion) {
    let suite = generate_instances(2, 8, &spec()).unwrap();
    let budget = Budget::new(std::time::Duration::from_secs(30), 5000, 0).unwrap();
    let mut group = c.benchmark_group("verify_8_queries");
    group.sample_size(10);
    for (name, tightening) in [("lp", Tightening::Lp), ("interval", Tightening::Interval)] {
        let cfg = SearchConfig {
            tightening,
            ..SearchConfig::default()
        };
        for s in Strategy::STATIC {
            group.bench_function(format!("{name}/{s}"), |b| {
                b.iter(|| {
                    for inst in &suite.instances {
                        verify_with(
                            &inst.net,
                            &inst.query,
                            &mut StaticBrancher(s),
                            &budget,
                            &cfg,
                        )
                        .unwrap();
                    }
                })
            });
        }
    }
    group.finish();

    let small = generate_instances(3, 4, &GenSpec::default()).unwrap();
    c.bench_function("oracle_4_queries", |b| {
        b.iter(|| {
            for inst in &small.instances {
                brute_force_verify(&inst.net, &inst.query).unwrap();
            }
        })
    });
}

fn agent(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let qnet = QNet::new(&[FEATURE_WIDTH, 64, 64, 1], &mut rng).unwrap();
    let row: Vec<f64> = (0..FEATURE_WIDTH)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    c.bench_function("qnet_forward", |b| b.iter(|| qnet.forward(black_box(&row))));

    let suite = generate_instances(5, 1, &spec()).unwrap();
    let inst = &suite.instances[0];
    let cfg = SearchConfig::default();
    let Deduced::Open(node) = root_node(&inst.net, &inst.query, &cfg).unwrap() else {
        return;
    };
    if node.unfixed_count() == 0 {
        return;
    }
    let pi = vec![0.0; inst.net.relu_count()];
    let ctx = SplitContext {
        net: &inst.net,
        query: &inst.query,
        node: &node,
        node_id: 0,
        pseudo_impact: &pi,
        root: &node.bounds,
    };
    c.bench_function("featurize_and_score", |b| {
        b.iter_batched(
            Featurizer::default,
            |mut f| {
                let s = f.featurize(&ctx).unwrap();
                q_forward(&qnet, &s).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bounds, search, agent);
criterion_main!(benches);

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use phasebranch::agent::{collect_demonstrations, train, Checkpoint, TrainerConfig};
use phasebranch::harness::{
    aggregate, brute_force_verify, cumulative_curve, format_summary, gen_random_suite,
    read_records, run_one, run_suite, write_curve, AgentPolicy, GenSpec, Instance, LoadedInstance,
    SuiteFile, SuiteRun,
};
use phasebranch::query::Comparator;
use phasebranch::{load_nnet, parse_property, Budget, Outcome, SearchConfig, Strategy, Tightening};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "phasebranch",
    version,
    about = "Branch-and-bound verification of ReLU networks"
)]
struct Cli {
    /// Log level filter, e.g. `info` or `phasebranch=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify a single query.
    Verify(VerifyArgs),
    /// Run a suite of queries under one or more strategies.
    Bench(BenchArgs),
    /// Train a splitting agent.
    Train(TrainArgs),
    /// Decide a small query by enumerating activation patterns.
    Oracle(OracleArgs),
    /// Summarize a results CSV and emit cumulative-solved curves.
    Report(ReportArgs),
    /// Write a random suite of small networks and queries.
    GenSuite(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TighteningArg {
    Lp,
    Interval,
}

#[derive(Args, Clone)]
struct SearchArgs {
    #[arg(long, default_value_t = 60.0)]
    timeout_s: f64,
    #[arg(long)]
    max_iterations: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bound tightening at each node.
    #[arg(long, value_enum, default_value = "lp")]
    tightening: TighteningArg,
}

impl SearchArgs {
    fn budget(&self) -> Result<Budget> {
        Ok(Budget::new(
            Duration::from_secs_f64(self.timeout_s),
            self.max_iterations.unwrap_or(u64::MAX),
            self.seed,
        )?)
    }

    fn config(&self) -> SearchConfig {
        SearchConfig {
            tightening: match self.tightening {
                TighteningArg::Lp => Tightening::Lp,
                TighteningArg::Interval => Tightening::Interval,
            },
            ..SearchConfig::default()
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    prop: PathBuf,
    #[arg(long, default_value = "soi")]
    strategy: Strategy,
    /// Agent checkpoint, required for `--strategy agent`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the search event log here.
    #[arg(long)]
    events: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite file; otherwise the queries come from `--net` with `--prop`
    /// and/or `--robust-manifest`.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    net: Vec<PathBuf>,
    #[arg(long)]
    prop: Vec<PathBuf>,
    #[arg(long)]
    robust_manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "argmax")]
    comparator: ComparatorArg,
    /// Strategies to compare; overrides the suite file.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<Strategy>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for `results.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ComparatorArg {
    Argmax,
    Argmin,
}

#[derive(Args)]
struct TrainArgs {
    /// Suite file listing the benchmark queries.
    #[arg(long)]
    suite: PathBuf,
    /// Output directory for checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Trainer settings as TOML; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fraction of the queries used for demonstrations and self-play.
    #[arg(long, default_value_t = 0.05)]
    demo_fraction: f64,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    prop: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Results CSV written by `bench`.
    #[arg(long)]
    results: PathBuf,
    /// Directory for `curve_<strategy>.csv` files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Time charged to unsolved runs.
    #[arg(long, default_value_t = 60.0)]
    timeout_s: f64,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    min_inputs: usize,
    #[arg(long, default_value_t = 5)]
    max_inputs: usize,
    #[arg(long, default_value_t = 6)]
    min_relus: usize,
    #[arg(long, default_value_t = 12)]
    max_relus: usize,
    #[arg(long, default_value_t = 2)]
    max_hidden_layers: usize,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::new(&cli.log))
        .with_writer(std::io::stderr)
        .init();
    match cli.command {
        Command::Verify(a) => verify_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::Report(a) => report_cmd(a),
        Command::GenSuite(a) => gen_cmd(a),
    }
}

fn load_instance(net: &Path, prop: &Path) -> Result<Instance> {
    let n = load_nnet(
        &std::fs::read_to_string(net).with_context(|| format!("reading {}", net.display()))?,
    )
    .with_context(|| format!("parsing {}", net.display()))?;
    let text =
        std::fs::read_to_string(prop).with_context(|| format!("reading {}", prop.display()))?;
    let query = parse_property(&text, &n).with_context(|| format!("parsing {}", prop.display()))?;
    Ok(Instance {
        id: prop
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
        net: Arc::new(n),
        query,
    })
}

fn load_policy(path: &Path) -> Result<AgentPolicy> {
    let c = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(AgentPolicy::from_checkpoint(
        &c,
        path.display().to_string(),
    )?)
}

fn verify_cmd(a: VerifyArgs) -> Result<()> {
    let inst = load_instance(&a.net, &a.prop)?;
    let policy = a.checkpoint.as_deref().map(load_policy).transpose()?;
    let report = run_one(
        &inst,
        a.strategy,
        &a.search.budget()?,
        &a.search.config(),
        policy.as_ref(),
    )?;
    let v = &report.verdict;
    println!("verdict {}", v.outcome.kind());
    if let Outcome::Sat(w) = &v.outcome {
        let y = inst.net.evaluate(w)?;
        println!("witness {w:?}");
        println!("output {y:?}");
    }
    println!("iterations {}", v.iterations);
    println!("splits {}", v.splits);
    println!("wall_time_ms {:.3}", v.wall_time.as_secs_f64() * 1e3);
    if let Some(path) = a.events {
        std::fs::write(&path, report.log.to_text())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let budget = a.search.budget()?;
    let (instances, mut strategies, mut workers, mut out, mut checkpoint, budget) = match &a.suite {
        Some(path) => {
            let s = SuiteFile::load(path).with_context(|| format!("loading {}", path.display()))?;
            // Command-line budget flags override the file only when given.
            let budget = if a.search.max_iterations.is_some() || a.search.timeout_s != 60.0 {
                budget
            } else {
                s.budget
            };
            (
                s.instances,
                s.strategies,
                s.workers,
                s.out_dir,
                s.checkpoint,
                budget,
            )
        }
        None => {
            if a.net.is_empty() {
                bail!("give either --suite or at least one --net");
            }
            let file = SuiteFile {
                networks: a.net.iter().map(|p| p.display().to_string()).collect(),
                properties: a.prop.iter().map(|p| p.display().to_string()).collect(),
                robust_manifest: a.robust_manifest.as_ref().map(|p| p.display().to_string()),
                comparator: match a.comparator {
                    ComparatorArg::Argmax => Comparator::Argmax,
                    ComparatorArg::Argmin => Comparator::Argmin,
                },
                ..SuiteFile::default()
            };
            let instances = file.instances(Path::new(""))?;
            (
                instances,
                Strategy::STATIC.to_vec(),
                1,
                PathBuf::from("results"),
                None,
                budget,
            )
        }
    };
    if !a.strategy.is_empty() {
        strategies = a.strategy.clone();
    }
    if let Some(w) = a.workers {
        workers = w.max(1);
    }
    if let Some(o) = a.out {
        out = o;
    }
    if a.checkpoint.is_some() {
        checkpoint = a.checkpoint;
    }
    if instances.is_empty() {
        bail!("the suite has no queries");
    }
    let policy = match (&checkpoint, strategies.contains(&Strategy::Agent)) {
        (Some(c), _) => Some(load_policy(c)?),
        (None, true) => bail!("--strategy agent needs --checkpoint"),
        (None, false) => None,
    };
    std::fs::create_dir_all(&out)?;
    let csv = out.join("results.csv");
    let run = SuiteRun {
        instances: &instances,
        strategies: &strategies,
        budget,
        search: a.search.config(),
        workers,
        agent: policy.as_ref(),
    };
    let records = run_suite(&run, Some(&csv))?;
    print!(
        "{}",
        format_summary(&aggregate(&records, budget.timeout.as_secs_f64() * 1e3))
    );
    println!("results written to {}", csv.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config: TrainerConfig = match &a.config {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainerConfig {
            seed: a.search.seed,
            ..TrainerConfig::default()
        },
    };
    if !(a.demo_fraction > 0.0 && a.demo_fraction <= 1.0) {
        bail!("--demo-fraction must lie in (0, 1]");
    }
    let suite =
        SuiteFile::load(&a.suite).with_context(|| format!("loading {}", a.suite.display()))?;
    let loaded: Vec<Instance> = suite
        .instances
        .into_iter()
        .filter_map(|l: LoadedInstance| l.instance.ok())
        .collect();
    if loaded.is_empty() {
        bail!("no readable queries in {}", a.suite.display());
    }
    let mut order: Vec<usize> = (0..loaded.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let take = ((loaded.len() as f64 * a.demo_fraction).ceil() as usize).clamp(1, loaded.len());
    let chosen: Vec<(&phasebranch::Network, &phasebranch::Query)> = order[..take]
        .iter()
        .map(|&k| (loaded[k].net.as_ref(), &loaded[k].query))
        .collect();
    let search = a.search.config();
    let demos = collect_demonstrations(&chosen, &a.search.budget()?, &search)?;
    println!(
        "{} demonstration transitions from {} of {} queries",
        demos.transition_count(),
        take,
        loaded.len()
    );
    std::fs::create_dir_all(&a.out)?;
    let out = a.out.clone();
    let report = train(&config, &demos, &chosen, &search, |epoch, c| {
        c.save(&out.join(format!("epoch_{epoch:03}.json")))
    })?;
    let last = a.out.join("final.json");
    report.checkpoint.save(&last)?;
    let tail = report.losses.last().map_or(f64::NAN, |l| l.total);
    println!(
        "{} steps over {} self-play runs, last loss {tail:.6}; checkpoint {}",
        report.losses.len(),
        report.episodes,
        last.display()
    );
    Ok(())
}

fn oracle_cmd(a: OracleArgs) -> Result<()> {
    let inst = load_instance(&a.net, &a.prop)?;
    let v = brute_force_verify(&inst.net, &inst.query)?;
    println!("verdict {}", v.outcome.kind());
    if let Outcome::Sat(w) = &v.outcome {
        println!("witness {w:?}");
    }
    println!("patterns_checked {}", v.iterations);
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let records =
        read_records(&a.results).with_context(|| format!("reading {}", a.results.display()))?;
    let summary = aggregate(&records, a.timeout_s * 1e3);
    print!("{}", format_summary(&summary));
    if let Some(out) = a.out {
        std::fs::create_dir_all(&out)?;
        for s in &summary {
            let path = out.join(format!("curve_{}.csv", s.strategy));
            write_curve(&path, &cumulative_curve(&records, &s.strategy))?;
        }
        println!("curves written to {}", out.display());
    }
    Ok(())
}

fn gen_cmd(a: GenArgs) -> Result<()> {
    let spec = GenSpec {
        min_inputs: a.min_inputs,
        max_inputs: a.max_inputs,
        min_relus: a.min_relus,
        max_relus: a.max_relus,
        max_hidden_layers: a.max_hidden_layers,
        ..GenSpec::default()
    };
    let suite = gen_random_suite(a.seed, a.count, &spec, &a.out)?;
    println!(
        "{} queries written to {} (sampled SAT fraction {:.2})",
        suite.instances.len(),
        a.out.display(),
        suite.sampled_sat_fraction
    );
    Ok(())
}

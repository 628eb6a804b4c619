use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use fairshield::defense;
use fairshield::fairness::FairnessMetric;
use fairshield::harness::{self, ExperimentConfig, Method, ScenarioMode};
use fairshield::{proxy, synth};

#[derive(Parser)]
#[command(name = "fairshield", version, about = "Fairness-aware client reweighting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment grid and write all outputs.
    Run(Overrides),
    /// Rank the clients of each scenario by the unfairness of a locally trained model.
    RankClients(Overrides),
    /// Run the defense on the first configured scenario and print its weights.
    Defend(Overrides),
    /// Project a comma-separated vector onto the probability simplex.
    Project {
        #[arg(allow_hyphen_values = true, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Rebuild tables from the run records in an output directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write the synthetic datasets as CSV files.
    GenFixtures {
        #[arg(long, default_value = "fixtures")]
        dir: PathBuf,
        #[arg(long, default_value_t = 20798)]
        law_rows: usize,
        #[arg(long, default_value_t = 12000)]
        dutch_rows: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset name: law_school, dutch, law_like or dutch_like.
    #[arg(long)]
    dataset: Option<String>,
    /// CSV file for the dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    metric: Option<FairnessMetric>,
    #[arg(long)]
    unreliable_frac: Option<f64>,
    #[arg(long)]
    mode: Option<ScenarioMode>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(name) = &self.dataset {
            if name != &cfg.dataset.name {
                cfg.dataset.columns = None;
                cfg.dataset.path = None;
            }
            cfg.dataset.name = name.clone();
        }
        if let Some(p) = &self.data {
            cfg.dataset.path = Some(p.clone());
        }
        if let Some(m) = self.metric {
            cfg.scenario.metrics = Some(vec![m]);
        }
        if let Some(f) = self.unreliable_frac {
            cfg.scenario.unreliable_fracs = vec![f];
        }
        if let Some(m) = self.mode {
            cfg.scenario.modes = vec![m];
        }
        if let Some(s) = &self.seeds {
            cfg.scenario.seeds = s.clone();
        }
        if let Some(m) = &self.methods {
            cfg.comparators.methods = m.clone();
        }
        if let Some(t) = self.t_max {
            cfg.penalty.t_max = t;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        cfg.output.trace |= self.trace;
        Ok(cfg)
    }
}

fn load(cfg: &ExperimentConfig) -> Result<Vec<fairshield::data::DataPoint>> {
    let data = cfg.load_data().context("loading dataset")?;
    info!("loaded {} rows of {}", data.len(), cfg.dataset.name);
    Ok(data)
}

fn run(o: &Overrides) -> Result<bool> {
    let cfg = o.resolve()?;
    let data = load(&cfg)?;
    let specs = cfg.scenario_specs()?;
    info!("running {} scenarios x {} methods", specs.len(), cfg.comparators.methods.len());
    let res = harness::run_experiment(&specs, &cfg.comparators.methods, &data, &cfg.comparator_config(), cfg.output.trace);
    let out = &cfg.output.dir;
    harness::emit_report(&res, out)?;
    harness::write_tables(&res.reports, out)?;
    print_aggregate(&res.reports);
    for f in &res.failures {
        warn!("{} {}: {}", f.cell, f.method.as_deref().unwrap_or("-"), f.error);
    }
    println!("wrote {} run records to {}", res.reports.len(), out.display());
    Ok(res.failures.is_empty())
}

fn rank_clients(o: &Overrides) -> Result<bool> {
    let cfg = o.resolve()?;
    let data = load(&cfg)?;
    println!("scenario,rank,client,unfairness");
    for spec in cfg.scenario_specs()? {
        let clients = harness::prepare_clients(&spec, &data)?;
        let scores = proxy::client_unfairness(&clients, spec.metric, &spec.penalty.inner)?;
        let order = proxy::rank_clients_by_unfairness(&clients, spec.metric, &spec.penalty.inner)?;
        for (rank, c) in order.iter().enumerate() {
            println!("{},{},{},{:.6}", spec.key(), rank + 1, c, scores[*c]);
        }
    }
    Ok(true)
}

fn defend(o: &Overrides) -> Result<bool> {
    let cfg = o.resolve()?;
    let data = load(&cfg)?;
    let Some(spec) = cfg.scenario_specs()?.into_iter().next() else {
        bail!("configuration yields no scenarios");
    };
    let instance = harness::build_scenario(&spec, &data)?;
    let outcome = harness::run_method(&instance, Method::Defense, &cfg.comparator_config())?;
    let mut report = harness::evaluate(&outcome.model, &instance)?;
    report.method = Method::Defense.name().to_string();
    println!("scenario {}", spec.key());
    for (c, w) in outcome.weights.iter().enumerate() {
        let tag = if instance.unreliable[c] { "unreliable" } else { "reliable" };
        println!("  client {c} {tag:>10}  w = {w:.4}");
    }
    println!(
        "accuracy {:.2}%  |SPD| {:.4}  |EOD| {:.4}",
        report.accuracy_pct, report.spd_abs, report.eod_abs
    );
    if cfg.output.trace {
        if let Some(trace) = &outcome.trace {
            let dir = cfg.output.dir.join("trace");
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{}.jsonl", report.key()));
            trace.save(&path)?;
            println!("trace written to {}", path.display());
        }
    }
    Ok(true)
}

fn report(out: &Path) -> Result<bool> {
    let reports = harness::load_runs(out).with_context(|| format!("reading runs in {}", out.display()))?;
    if reports.is_empty() {
        bail!("no run records under {}", out.join("runs").display());
    }
    harness::write_tables(&reports, out)?;
    print_aggregate(&reports);
    Ok(true)
}

fn print_aggregate(reports: &[harness::EvalReport]) {
    println!(
        "{:<12} {:<3} {:<10} {:>5} {:<13} {:>4} {:>8} {:>8} {:>8}",
        "dataset", "m", "mode", "frac", "method", "runs", "acc%", "|SPD|", "|EOD|"
    );
    for r in harness::aggregate(reports) {
        println!(
            "{:<12} {:<3} {:<10} {:>5.2} {:<13} {:>4} {:>8.2} {:>8.4} {:>8.4}",
            r.dataset,
            r.metric.name(),
            r.mode.name(),
            r.unreliable_frac,
            r.method,
            r.n_runs,
            r.accuracy_pct,
            r.spd_abs,
            r.eod_abs
        );
    }
}

fn gen_fixtures(dir: &Path, law_rows: usize, dutch_rows: usize, seed: u64) -> Result<bool> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, table) in [
        ("law_like.csv", synth::law_like(law_rows, seed)),
        ("dutch_like.csv", synth::dutch_like(dutch_rows, seed)),
    ] {
        let path = dir.join(name);
        table.save(&path)?;
        println!("wrote {} ({} rows)", path.display(), table.rows.len());
    }
    Ok(true)
}

/// The error chain, skipping causes already quoted by the message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(o) => run(o),
        Command::RankClients(o) => rank_clients(o),
        Command::Defend(o) => defend(o),
        Command::Project { values } => defense::project_simplex(values).map_err(Into::into).map(|w| {
            println!("{}", w.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
            true
        }),
        Command::Report { out } => report(out),
        Command::GenFixtures {
            dir,
            law_rows,
            dutch_rows,
            seed,
        } => gen_fixtures(dir, *law_rows, *dutch_rows, *seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

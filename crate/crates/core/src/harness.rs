//! Scenario construction, method runs, evaluation, sweeps and reports.
//!
//! A scenario partitions a dataset among `K` clients, splits each shard into
//! train and test parts, samples root data, ranks clients by how unfair a
//! locally trained model is, and marks the most unfair ones unreliable.
//! Unreliable clients send their raw training data; reliable clients send a
//! fair proxy (their own in realistic mode, a shared replica in ideal mode).
//! Every method then runs on the same built scenario and is evaluated on the
//! pooled test data of reliable clients.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::comparators::{self, LossSource};
use crate::data::{self, ClientDataset, DataPoint, DatasetSpec};
use crate::defense::{self, DefenseTrace, PenaltyConfig, RhoSchedule, RootWeighting, SimplexWeights};
use crate::fairness::{self, FairnessBudget, FairnessMetric};
use crate::logit::{self, InnerSolveConfig, ModelParams};
use crate::proxy::{self, FairProxyParams};
use crate::{par, rng, synth};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioMode {
    Ideal,
    Realistic,
}

impl ScenarioMode {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioMode::Ideal => "ideal",
            ScenarioMode::Realistic => "realistic",
        }
    }
}

impl std::str::FromStr for ScenarioMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ideal" => Ok(Self::Ideal),
            "realistic" => Ok(Self::Realistic),
            other => Err(Error::Config(format!("unknown scenario mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for ScenarioMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Defense,
    /// The defense with the fairness penalty switched off.
    DefenseRho0,
    Fedasl,
    Fednolowe,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Baseline,
        Method::Defense,
        Method::DefenseRho0,
        Method::Fedasl,
        Method::Fednolowe,
    ];

    pub fn defaults() -> Vec<Method> {
        vec![Method::Baseline, Method::Defense, Method::Fedasl, Method::Fednolowe]
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Defense => "defense",
            Method::DefenseRho0 => "defense_rho0",
            Method::Fedasl => "fedasl",
            Method::Fednolowe => "fednolowe",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings of the loss-based comparators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparatorConfig {
    pub fedasl_alpha: f64,
    pub fedasl_beta: f64,
    pub loss_source: LossSource,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        Self {
            fedasl_alpha: 0.9,
            fedasl_beta: 0.2,
            loss_source: LossSource::OwnProxy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub dataset: String,
    pub metric: FairnessMetric,
    pub unreliable_frac: f64,
    pub mode: ScenarioMode,
    pub num_clients: usize,
    pub seed: u64,
    pub root_frac: f64,
    pub train_frac: f64,
    pub budget: FairnessBudget,
    /// Teacher penalty weights of the fair-proxy generator.
    pub proxy_rho_schedule: Vec<f64>,
    pub max_relabel_frac: f64,
    pub penalty: PenaltyConfig,
}

impl ScenarioSpec {
    pub fn new(dataset: &str, metric: FairnessMetric, unreliable_frac: f64, mode: ScenarioMode, seed: u64) -> Self {
        let generator = FairProxyParams::default();
        Self {
            dataset: dataset.to_string(),
            metric,
            unreliable_frac,
            mode,
            num_clients: 5,
            seed,
            root_frac: 0.005,
            train_frac: 0.8,
            budget: FairnessBudget {
                metric,
                ..Default::default()
            },
            proxy_rho_schedule: generator.rho_schedule,
            max_relabel_frac: generator.max_relabel_frac,
            penalty: PenaltyConfig::for_metric(metric),
        }
    }

    pub fn num_unreliable(&self) -> usize {
        data::round_half_up(self.unreliable_frac * self.num_clients as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.unreliable_frac) {
            return Err(Error::Config(format!(
                "unreliable fraction {} outside [0,1)",
                self.unreliable_frac
            )));
        }
        if self.num_clients == 0 {
            return Err(Error::Config("at least one client is required".into()));
        }
        if self.num_unreliable() >= self.num_clients {
            return Err(Error::Config(format!(
                "{} of {} clients unreliable leaves none reliable",
                self.num_unreliable(),
                self.num_clients
            )));
        }
        if self.budget.metric != self.metric {
            return Err(Error::Config("budget metric differs from scenario metric".into()));
        }
        self.budget.validate()?;
        self.penalty.validate()
    }

    /// Stable identifier of the (spec, seed) cell.
    pub fn key(&self) -> String {
        format!(
            "{}_{}_{}_f{:.2}_s{}",
            self.dataset, self.metric, self.mode, self.unreliable_frac, self.seed
        )
    }

    fn generator(&self) -> FairProxyParams {
        FairProxyParams {
            budget: self.budget,
            max_relabel_frac: self.max_relabel_frac,
            rho_schedule: self.proxy_rho_schedule.clone(),
            relabel_draws: FairProxyParams::default().relabel_draws,
            inner: self.penalty.inner,
        }
    }
}

/// A fully built scenario shared by all methods of one cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioInstance {
    pub spec: ScenarioSpec,
    pub clients: Vec<ClientDataset>,
    pub unreliable: Vec<bool>,
    /// Client ids from most to least unfair.
    pub ranking: Vec<usize>,
    /// |SPD| or |EOD| of each client's local model on its test split.
    pub client_unfairness: Vec<f64>,
    pub content_hash: String,
}

impl ScenarioInstance {
    pub fn proxies(&self) -> Vec<&[DataPoint]> {
        self.clients.iter().map(|c| c.proxy.as_slice()).collect()
    }

    pub fn roots(&self) -> Vec<&[DataPoint]> {
        self.clients.iter().map(|c| c.root.as_slice()).collect()
    }

    pub fn reliable_test(&self) -> Vec<DataPoint> {
        self.clients
            .iter()
            .zip(&self.unreliable)
            .filter(|(_, u)| !**u)
            .flat_map(|(c, _)| c.test.iter().cloned())
            .collect()
    }

    fn compute_hash(clients: &[ClientDataset], unreliable: &[bool]) -> Result<String> {
        let mut h = Sha256::new();
        for c in clients {
            for part in [&c.proxy, &c.root, &c.test] {
                h.update(serde_json::to_vec(part)?);
            }
        }
        h.update(serde_json::to_vec(unreliable)?);
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Partitions the data, splits each shard and samples its root set.
pub fn prepare_clients(spec: &ScenarioSpec, data: &[DataPoint]) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    let seed = spec.seed;
    let shards = data::partition_clients(data, spec.num_clients, &mut rng::stream(seed, "partition", 0))?;
    let mut clients = Vec::with_capacity(shards.len());
    for shard in &shards {
        let id = shard.client_id as u64;
        let mut c = data::split_train_test(shard, spec.train_frac, &mut rng::stream(seed, "split", id))?;
        data::sample_root(&mut c, spec.root_frac, &mut rng::stream(seed, "root", id))?;
        clients.push(c);
    }
    Ok(clients)
}

/// Prepares clients, ranks them and builds proxies.
pub fn build_scenario(spec: &ScenarioSpec, data: &[DataPoint]) -> Result<ScenarioInstance> {
    let seed = spec.seed;
    let mut clients = prepare_clients(spec, data)?;

    let scores = proxy::client_unfairness(&clients, spec.metric, &spec.penalty.inner)?;
    let ranking = proxy::order_by_score(clients.iter().map(|c| c.client_id).zip(scores.iter().copied()));
    let mut unreliable = vec![false; clients.len()];
    for &c in &ranking[..spec.num_unreliable()] {
        unreliable[c] = true;
    }

    let generator = spec.generator();
    let make = |c: &ClientDataset| -> Result<Vec<DataPoint>> {
        proxy::generate_fair_proxy_with(c, &generator, &mut rng::stream(seed, "proxy", c.client_id as u64))
            .map(|(p, _)| p)
            .map_err(|e| Error::Scenario {
                client: c.client_id,
                source: Box::new(e),
            })
    };
    match spec.mode {
        ScenarioMode::Realistic => {
            let proxies = par::map(&clients, |c| {
                if unreliable[c.client_id] {
                    proxy::passthrough_proxy(c)
                } else {
                    make(c)
                }
            });
            for (c, p) in clients.iter_mut().zip(proxies) {
                c.proxy = p?;
            }
        }
        ScenarioMode::Ideal => {
            let most_reliable = *ranking.last().expect("at least one client");
            let shared = make(&clients[most_reliable])?;
            for c in clients.iter_mut() {
                c.proxy = if unreliable[c.client_id] {
                    proxy::passthrough_proxy(c)?
                } else {
                    shared.clone()
                };
            }
        }
    }
    let content_hash = ScenarioInstance::compute_hash(&clients, &unreliable)?;
    Ok(ScenarioInstance {
        spec: spec.clone(),
        clients,
        unreliable,
        ranking,
        client_unfairness: scores,
        content_hash,
    })
}

/// Metrics of one model on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    pub metric: FairnessMetric,
    pub mode: ScenarioMode,
    pub unreliable_frac: f64,
    pub seed: u64,
    pub accuracy_pct: f64,
    pub spd_abs: f64,
    pub eod_abs: f64,
    pub weights: Vec<f64>,
    pub unreliable: Vec<bool>,
    /// Fairness of a model trained on each client's proxy, measured on that
    /// client's test split.
    pub per_client_proxy_fairness: Vec<f64>,
    pub model: ModelParams,
    pub scenario_hash: String,
    /// Wall-clock time; kept out of the JSON records.
    #[serde(skip)]
    pub runtime_sec: f64,
}

impl EvalReport {
    /// |SPD| or |EOD| according to the scenario metric.
    pub fn fairness(&self) -> f64 {
        match self.metric {
            FairnessMetric::Sp => self.spd_abs,
            FairnessMetric::Eo => self.eod_abs,
        }
    }

    pub fn key(&self) -> String {
        format!(
            "{}_{}_{}_f{:.2}_s{}_{}",
            self.dataset, self.metric, self.mode, self.unreliable_frac, self.seed, self.method
        )
    }

    pub fn group(&self) -> GroupKey {
        GroupKey {
            dataset: self.dataset.clone(),
            metric: self.metric,
            mode: self.mode,
            frac_milli: (self.unreliable_frac * 1000.0).round() as i64,
            method: self.method.clone(),
        }
    }
}

/// Per-client proxy fairness for the heatmap.
pub fn proxy_fairness(instance: &ScenarioInstance) -> Result<Vec<f64>> {
    let metric = instance.spec.metric;
    let inner = instance.spec.penalty.inner;
    par::map(&instance.clients, |c| {
        let sol = logit::fit_single(&c.proxy, &inner)?;
        fairness::gap(metric, &c.test, &sol.theta).map(f64::abs)
    })
    .into_iter()
    .collect()
}

/// Accuracy and fairness on the pooled reliable test data.
pub fn evaluate(theta: &ModelParams, instance: &ScenarioInstance) -> Result<EvalReport> {
    let test = instance.reliable_test();
    if test.is_empty() {
        return Err(Error::Evaluation("no reliable client test data".into()));
    }
    let wrap = |e: Error| Error::Evaluation(e.to_string());
    let spec = &instance.spec;
    Ok(EvalReport {
        method: String::new(),
        dataset: spec.dataset.clone(),
        metric: spec.metric,
        mode: spec.mode,
        unreliable_frac: spec.unreliable_frac,
        seed: spec.seed,
        accuracy_pct: fairness::accuracy_pct(&test, theta).map_err(wrap)?,
        spd_abs: fairness::spd(&test, theta).map_err(wrap)?.abs(),
        eod_abs: fairness::eod(&test, theta).map_err(wrap)?.abs(),
        weights: vec![],
        unreliable: instance.unreliable.clone(),
        per_client_proxy_fairness: proxy_fairness(instance)?,
        model: theta.clone(),
        scenario_hash: instance.content_hash.clone(),
        runtime_sec: 0.0,
    })
}

/// Model and weights produced by one method.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub model: ModelParams,
    pub weights: SimplexWeights,
    pub trace: Option<DefenseTrace>,
}

pub fn run_method(instance: &ScenarioInstance, method: Method, comp: &ComparatorConfig) -> Result<MethodOutcome> {
    let spec = &instance.spec;
    let proxies = instance.proxies();
    let k = proxies.len();
    match method {
        Method::Baseline => Ok(MethodOutcome {
            model: comparators::baseline_global(&proxies, &spec.penalty.inner)?,
            weights: SimplexWeights::uniform(k),
            trace: None,
        }),
        Method::Defense | Method::DefenseRho0 => {
            let mut cfg = spec.penalty.clone();
            if method == Method::DefenseRho0 {
                cfg.rho_schedule = RhoSchedule::constant(0.0);
            }
            let out = defense::run_defense(&proxies, &instance.roots(), &cfg)?;
            Ok(MethodOutcome {
                model: out.model,
                weights: out.weights,
                trace: Some(out.trace),
            })
        }
        Method::Fedasl | Method::Fednolowe => {
            let local = comparators::train_local_models(&proxies, &spec.penalty.inner)?;
            let losses = match comp.loss_source {
                LossSource::OwnProxy => local.losses.clone(),
                LossSource::PooledRoot => comparators::pooled_root_losses(&local, &instance.roots())?,
            };
            let weights = if method == Method::Fedasl {
                comparators::fedasl_weights(&losses, comp.fedasl_alpha, comp.fedasl_beta)?
            } else {
                comparators::fednolowe_weights(&losses)?
            };
            Ok(MethodOutcome {
                model: comparators::aggregate_models(&local, &weights)?,
                weights,
                trace: None,
            })
        }
    }
}

/// A cell that failed, recorded without aborting the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub method: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    pub reports: Vec<EvalReport>,
    pub failures: Vec<CellFailure>,
    /// Defense traces keyed by run key, kept when requested.
    pub traces: BTreeMap<String, DefenseTrace>,
}

/// Runs every method on every (spec, seed) cell. `specs` carry their seed.
pub fn run_experiment(
    specs: &[ScenarioSpec],
    methods: &[Method],
    data: &[DataPoint],
    comp: &ComparatorConfig,
    keep_traces: bool,
) -> ExperimentResult {
    let cells = par::map(specs, |spec| -> std::result::Result<Vec<(Method, Result<(EvalReport, Option<DefenseTrace>)>)>, CellFailure> {
        let instance = build_scenario(spec, data).map_err(|e| CellFailure {
            cell: spec.key(),
            method: None,
            error: e.to_string(),
        })?;
        let heat = proxy_fairness(&instance);
        Ok(par::map(methods, |&m| {
            let started = Instant::now();
            let out = run_method(&instance, m, comp)?;
            let mut rep = evaluate(&out.model, &instance)?;
            rep.method = m.name().to_string();
            rep.weights = out.weights.into_inner();
            if let Ok(h) = &heat {
                rep.per_client_proxy_fairness = h.clone();
            }
            rep.runtime_sec = started.elapsed().as_secs_f64();
            Ok((rep, out.trace.filter(|_| keep_traces)))
        })
        .into_iter()
        .zip(methods.iter().copied())
        .map(|(r, m)| (m, r))
        .collect())
    });
    let mut result = ExperimentResult::default();
    for (spec, cell) in specs.iter().zip(cells) {
        match cell {
            Err(f) => result.failures.push(f),
            Ok(runs) => {
                for (m, r) in runs {
                    match r {
                        Ok((rep, trace)) => {
                            if let Some(t) = trace {
                                result.traces.insert(rep.key(), t);
                            }
                            result.reports.push(rep);
                        }
                        Err(e) => result.failures.push(CellFailure {
                            cell: spec.key(),
                            method: Some(m.name().to_string()),
                            error: e.to_string(),
                        }),
                    }
                }
            }
        }
    }
    result
}

/// Grouping of runs that differ only by seed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub dataset: String,
    pub metric: FairnessMetric,
    pub mode: ScenarioMode,
    pub frac_milli: i64,
    pub method: String,
}

impl GroupKey {
    pub fn frac(&self) -> f64 {
        self.frac_milli as f64 / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub metric: FairnessMetric,
    pub mode: ScenarioMode,
    pub unreliable_frac: f64,
    pub method: String,
    pub n_runs: usize,
    pub accuracy_pct: f64,
    pub spd_abs: f64,
    pub eod_abs: f64,
    /// Mean of the scenario metric's gap.
    pub fairness: f64,
    pub weights: Vec<f64>,
    pub mean_reliable_weight: f64,
    pub max_unreliable_weight: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Arithmetic means over seeds, grouped and sorted by [`GroupKey`].
pub fn aggregate(reports: &[EvalReport]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.group()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, runs)| {
            let k = runs.iter().map(|r| r.weights.len()).max().unwrap_or(0);
            let weights = (0..k)
                .map(|c| mean(runs.iter().filter_map(|r| r.weights.get(c).copied())))
                .collect();
            let split = |want: bool| {
                runs.iter().flat_map(move |r| {
                    r.weights
                        .iter()
                        .zip(&r.unreliable)
                        .filter(move |(_, u)| **u == want)
                        .map(|(w, _)| *w)
                })
            };
            AggregateRow {
                dataset: key.dataset.clone(),
                metric: key.metric,
                mode: key.mode,
                unreliable_frac: key.frac(),
                method: key.method.clone(),
                n_runs: runs.len(),
                accuracy_pct: mean(runs.iter().map(|r| r.accuracy_pct)),
                spd_abs: mean(runs.iter().map(|r| r.spd_abs)),
                eod_abs: mean(runs.iter().map(|r| r.eod_abs)),
                fairness: mean(runs.iter().map(|r| r.fairness())),
                weights,
                mean_reliable_weight: mean(split(false)),
                max_unreliable_weight: split(true).fold(f64::NAN, f64::max),
            }
        })
        .collect()
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

/// Aggregate tables, heatmap and bi-criteria points from run records.
pub fn write_tables(reports: &[EvalReport], out_dir: &Path) -> Result<()> {
    let rows = aggregate(reports);
    let tables = out_dir.join("tables");

    write_csv(
        &tables.join("aggregate.csv"),
        &[
            "dataset", "metric", "mode", "unreliable_frac", "method", "n_runs", "accuracy_pct", "spd_abs",
            "eod_abs", "fairness",
        ],
        rows.iter().map(|r| {
            vec![
                r.dataset.clone(),
                r.metric.to_string(),
                r.mode.to_string(),
                format!("{:.2}", r.unreliable_frac),
                r.method.clone(),
                r.n_runs.to_string(),
                fmt(r.accuracy_pct),
                fmt(r.spd_abs),
                fmt(r.eod_abs),
                fmt(r.fairness),
            ]
        }),
    )?;

    // Wide tables: one row per scenario group, two columns per method.
    let wide = |name: &str, methods: &[&str]| -> Result<()> {
        let mut header: Vec<String> = ["dataset", "metric", "mode", "unreliable_frac"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for m in methods {
            header.push(format!("{m}_accuracy_pct"));
            header.push(format!("{m}_fairness"));
        }
        let mut grid: BTreeMap<(String, FairnessMetric, ScenarioMode, i64), BTreeMap<String, &AggregateRow>> =
            BTreeMap::new();
        for r in &rows {
            let key = (r.dataset.clone(), r.metric, r.mode, (r.unreliable_frac * 1000.0).round() as i64);
            grid.entry(key).or_default().insert(r.method.clone(), r);
        }
        let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(
            &tables.join(name),
            &header_ref,
            grid.into_iter().map(|((d, m, mode, f), by)| {
                let mut line = vec![d, m.to_string(), mode.to_string(), format!("{:.2}", f as f64 / 1000.0)];
                for meth in methods {
                    match by.get(*meth) {
                        Some(r) => {
                            line.push(fmt(r.accuracy_pct));
                            line.push(fmt(r.fairness));
                        }
                        None => line.extend([String::new(), String::new()]),
                    }
                }
                line
            }),
        )
    };
    wide("baseline_vs_defense.csv", &["baseline", "defense"])?;
    wide("comparators.csv", &["defense", "fedasl", "fednolowe"])?;

    let k = rows.iter().map(|r| r.weights.len()).max().unwrap_or(0);
    let mut header: Vec<String> = [
        "dataset", "metric", "mode", "unreliable_frac", "method", "n_runs", "mean_reliable_weight",
        "max_unreliable_weight",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..k).map(|c| format!("w{c}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        &tables.join("weights.csv"),
        &header_ref,
        rows.iter().map(|r| {
            let mut line = vec![
                r.dataset.clone(),
                r.metric.to_string(),
                r.mode.to_string(),
                format!("{:.2}", r.unreliable_frac),
                r.method.clone(),
                r.n_runs.to_string(),
                fmt(r.mean_reliable_weight),
                fmt(r.max_unreliable_weight),
            ];
            line.extend((0..k).map(|c| r.weights.get(c).map_or(String::new(), |w| fmt(*w))));
            line
        }),
    )?;

    write_csv(
        &out_dir.join("bicriteria.csv"),
        &["dataset", "metric", "mode", "unreliable_frac", "method", "accuracy_pct", "fairness"],
        rows.iter().map(|r| {
            vec![
                r.dataset.clone(),
                r.metric.to_string(),
                r.mode.to_string(),
                format!("{:.2}", r.unreliable_frac),
                r.method.clone(),
                fmt(r.accuracy_pct),
                fmt(r.fairness),
            ]
        }),
    )?;

    // One heatmap row per (scenario cell, client); methods share the values.
    let mut seen = std::collections::BTreeSet::new();
    let mut heat = Vec::new();
    for r in reports {
        let cell = (r.dataset.clone(), r.metric, r.mode, (r.unreliable_frac * 1000.0).round() as i64, r.seed);
        if !seen.insert(cell) {
            continue;
        }
        for (c, v) in r.per_client_proxy_fairness.iter().enumerate() {
            heat.push(vec![
                r.dataset.clone(),
                r.metric.to_string(),
                r.mode.to_string(),
                format!("{:.2}", r.unreliable_frac),
                r.seed.to_string(),
                c.to_string(),
                r.unreliable.get(c).copied().unwrap_or(false).to_string(),
                fmt(*v),
            ]);
        }
    }
    heat.sort();
    write_csv(
        &out_dir.join("heatmap.csv"),
        &["dataset", "metric", "mode", "unreliable_frac", "seed", "client", "unreliable", "proxy_fairness"],
        heat,
    )
}

/// Writes per-run JSON records, tables, traces, timings and failures.
pub fn emit_report(result: &ExperimentResult, out_dir: &Path) -> Result<()> {
    let runs = out_dir.join("runs");
    std::fs::create_dir_all(&runs).map_err(|e| Error::io(&runs, e))?;
    for r in &result.reports {
        let path = runs.join(format!("{}.json", r.key()));
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    write_tables(&result.reports, out_dir)?;
    for (key, trace) in &result.traces {
        let path = out_dir.join("trace").join(format!("{key}.jsonl"));
        let w = create(&path)?;
        trace.write_jsonl(w).map_err(|e| Error::io(&path, e))?;
    }
    write_csv(
        &out_dir.join("timings.csv"),
        &["run", "runtime_sec"],
        result.reports.iter().map(|r| vec![r.key(), format!("{:.3}", r.runtime_sec)]),
    )?;
    if !result.failures.is_empty() {
        write_csv(
            &out_dir.join("failures.csv"),
            &["cell", "method", "error"],
            result
                .failures
                .iter()
                .map(|f| vec![f.cell.clone(), f.method.clone().unwrap_or_default(), f.error.clone()]),
        )?;
    }
    Ok(())
}

/// Reads every `runs/*.json` record under `out_dir`, sorted by file name.
pub fn load_runs(out_dir: &Path) -> Result<Vec<EvalReport>> {
    let dir = out_dir.join("runs");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Configuration file

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// `law_school`, `dutch`, `law_like`, `dutch_like` or a custom name.
    pub name: String,
    pub path: Option<PathBuf>,
    /// Rows generated for the synthetic datasets.
    pub synthetic_rows: usize,
    pub synthetic_seed: u64,
    /// Column layout; defaults to the preset matching `name`.
    pub columns: Option<DatasetSpec>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            name: "law_like".into(),
            path: None,
            synthetic_rows: 20_798,
            synthetic_seed: 2024,
            columns: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Defaults to `["sp", "eo"]`, or `["sp"]` for Dutch data.
    pub metrics: Option<Vec<FairnessMetric>>,
    pub unreliable_fracs: Vec<f64>,
    pub modes: Vec<ScenarioMode>,
    pub num_clients: usize,
    pub seeds: Vec<u64>,
    pub root_frac: f64,
    pub train_frac: f64,
    pub eps_sp: f64,
    pub eps_eo: f64,
    pub proxy_rho_schedule: Vec<f64>,
    pub max_relabel_frac: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let g = FairProxyParams::default();
        Self {
            metrics: None,
            unreliable_fracs: vec![0.2, 0.4, 0.6],
            modes: vec![ScenarioMode::Realistic],
            num_clients: 5,
            seeds: vec![0, 1, 2, 3, 4],
            root_frac: 0.005,
            train_frac: 0.8,
            eps_sp: g.budget.eps_sp,
            eps_eo: g.budget.eps_eo,
            proxy_rho_schedule: g.rho_schedule,
            max_relabel_frac: g.max_relabel_frac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySection {
    pub rho_start: f64,
    pub rho_factor: f64,
    /// Iterations between increases; defaults to `t_max / 5`, at most 400.
    pub rho_every: Option<usize>,
    pub rho_cap: f64,
    /// Explicit `[start_iter, rho]` pairs; overrides the geometric schedule.
    pub rho_schedule: Option<Vec<(usize, f64)>>,
    /// Overrides the metric-derived mix (0 for SP, 1 for EO).
    pub nu: Option<f64>,
    pub t_max: usize,
    pub outer_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub root_weighting: RootWeighting,
    pub lambda_theta: f64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub lbfgs_memory: usize,
}

impl Default for PenaltySection {
    fn default() -> Self {
        let p = PenaltyConfig::default();
        Self {
            rho_start: 10.0,
            rho_factor: 10.0,
            rho_every: None,
            rho_cap: 1e4,
            rho_schedule: None,
            nu: None,
            t_max: p.t_max,
            outer_lr: p.outer_lr,
            adam_beta1: p.adam_beta1,
            adam_beta2: p.adam_beta2,
            adam_eps: p.adam_eps,
            root_weighting: p.root_weighting,
            lambda_theta: p.inner.lambda_theta,
            inner_tol: p.inner.tol,
            inner_max_iter: p.inner.max_iter,
            lbfgs_memory: p.inner.memory,
        }
    }
}

impl PenaltySection {
    pub fn to_config(&self, metric: FairnessMetric) -> PenaltyConfig {
        let mut cfg = PenaltyConfig::for_metric(metric);
        cfg.rho_schedule = match &self.rho_schedule {
            Some(v) => RhoSchedule(v.clone()),
            None => RhoSchedule::geometric(
                self.rho_start,
                self.rho_factor,
                self.rho_every.unwrap_or_else(|| defense::adaptive_interval(self.t_max)),
                self.rho_cap,
            ),
        };
        if let Some(nu) = self.nu {
            cfg.nu = nu;
        }
        cfg.t_max = self.t_max;
        cfg.outer_lr = self.outer_lr;
        cfg.adam_beta1 = self.adam_beta1;
        cfg.adam_beta2 = self.adam_beta2;
        cfg.adam_eps = self.adam_eps;
        cfg.root_weighting = self.root_weighting;
        cfg.inner = InnerSolveConfig {
            lambda_theta: self.lambda_theta,
            tol: self.inner_tol,
            max_iter: self.inner_max_iter,
            memory: self.lbfgs_memory,
        };
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparatorSection {
    pub methods: Vec<Method>,
    pub fedasl_alpha: f64,
    pub fedasl_beta: f64,
    pub loss_source: LossSource,
}

impl Default for ComparatorSection {
    fn default() -> Self {
        let c = ComparatorConfig::default();
        Self {
            methods: Method::defaults(),
            fedasl_alpha: c.fedasl_alpha,
            fedasl_beta: c.fedasl_beta,
            loss_source: c.loss_source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub trace: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trace: false,
        }
    }
}

/// The full experiment configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub scenario: ScenarioSection,
    pub penalty: PenaltySection,
    pub comparators: ComparatorSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Relative dataset paths are resolved against the config file's folder.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.dataset.path, path.parent()) {
            if p.is_relative() {
                cfg.dataset.path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn comparator_config(&self) -> ComparatorConfig {
        ComparatorConfig {
            fedasl_alpha: self.comparators.fedasl_alpha,
            fedasl_beta: self.comparators.fedasl_beta,
            loss_source: self.comparators.loss_source,
        }
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        if let Some(c) = &self.dataset.columns {
            return Ok(c.clone());
        }
        let preset = match self.dataset.name.as_str() {
            "law_like" => "law_school",
            "dutch_like" => "dutch",
            other => other,
        };
        DatasetSpec::preset(preset)
            .ok_or_else(|| Error::Config(format!("dataset {:?} needs a [dataset.columns] table", self.dataset.name)))
    }

    pub fn metrics(&self) -> Vec<FairnessMetric> {
        self.scenario.metrics.clone().unwrap_or_else(|| {
            if self.dataset.name.starts_with("dutch") {
                vec![FairnessMetric::Sp]
            } else {
                vec![FairnessMetric::Sp, FairnessMetric::Eo]
            }
        })
    }

    /// Reads the configured file, or generates the synthetic dataset.
    pub fn load_data(&self) -> Result<Vec<DataPoint>> {
        let spec = self.dataset_spec()?;
        if let Some(p) = &self.dataset.path {
            return data::load_dataset(p, &spec);
        }
        let (n, seed) = (self.dataset.synthetic_rows, self.dataset.synthetic_seed);
        match self.dataset.name.as_str() {
            "law_like" => synth::law_like(n, seed).to_points(&spec),
            "dutch_like" => synth::dutch_like(n, seed).to_points(&spec),
            other => Err(Error::Config(format!("dataset {other:?} requires a path"))),
        }
    }

    /// One spec per (metric, mode, fraction, seed), in that nesting order.
    pub fn scenario_specs(&self) -> Result<Vec<ScenarioSpec>> {
        let sc = &self.scenario;
        let mut out = Vec::new();
        for metric in self.metrics() {
            for &mode in &sc.modes {
                for &frac in &sc.unreliable_fracs {
                    for &seed in &sc.seeds {
                        let spec = ScenarioSpec {
                            dataset: self.dataset.name.clone(),
                            metric,
                            unreliable_frac: frac,
                            mode,
                            num_clients: sc.num_clients,
                            seed,
                            root_frac: sc.root_frac,
                            train_frac: sc.train_frac,
                            budget: FairnessBudget::new(sc.eps_sp, sc.eps_eo, metric)?,
                            proxy_rho_schedule: sc.proxy_rho_schedule.clone(),
                            max_relabel_frac: sc.max_relabel_frac,
                            penalty: self.penalty.to_config(metric),
                        };
                        spec.validate()?;
                        out.push(spec);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report(method: &str, seed: u64, acc: f64) -> EvalReport {
        EvalReport {
            method: method.into(),
            dataset: "d".into(),
            metric: FairnessMetric::Sp,
            mode: ScenarioMode::Realistic,
            unreliable_frac: 0.4,
            seed,
            accuracy_pct: acc,
            spd_abs: 0.1 * seed as f64,
            eod_abs: 0.0,
            weights: vec![0.5, 0.5],
            unreliable: vec![false, true],
            per_client_proxy_fairness: vec![0.01, 0.2],
            model: ModelParams(vec![0.0]),
            scenario_hash: String::new(),
            runtime_sec: 1.0,
        }
    }

    #[test]
    fn unreliable_count_rounds_half_up() {
        let mut s = ScenarioSpec::new("d", FairnessMetric::Sp, 0.2, ScenarioMode::Realistic, 0);
        for (f, want) in [(0.0, 0), (0.2, 1), (0.4, 2), (0.6, 3), (0.1, 1), (0.3, 2)] {
            s.unreliable_frac = f;
            assert_eq!(s.num_unreliable(), want, "{f}");
        }
    }

    #[test]
    fn aggregate_is_mean_over_seeds() {
        let reps = vec![sample_report("a", 1, 80.0), sample_report("a", 2, 90.0), sample_report("b", 1, 70.0)];
        let rows = aggregate(&reps);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].n_runs, 2);
        assert_eq!(rows[0].accuracy_pct, 85.0);
        assert!((rows[0].spd_abs - 0.15).abs() < 1e-15);
        assert_eq!(rows[0].mean_reliable_weight, 0.5);
        assert_eq!(rows[1].accuracy_pct, 70.0);
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("krum".parse::<Method>().is_err());
    }

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.penalty.t_max, 2000);
        assert_eq!(cfg.metrics(), vec![FairnessMetric::Sp, FairnessMetric::Eo]);
        let p = cfg.penalty.to_config(FairnessMetric::Eo);
        assert_eq!(p.nu, 1.0);
        assert_eq!(p.rho_schedule, RhoSchedule::adaptive());

        let cfg = ExperimentConfig::from_toml_str(
            "[dataset]\nname = \"dutch_like\"\n[penalty]\nt_max = 5\n[scenario]\nseeds = [3]\nunreliable_fracs = [0.6]\n",
        )
        .unwrap();
        assert_eq!(cfg.metrics(), vec![FairnessMetric::Sp]);
        let specs = cfg.scenario_specs().unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].penalty.t_max, 5);
        assert!(ExperimentConfig::from_toml_str("[penalty]\nbogus = 1\n").is_err());
    }
}

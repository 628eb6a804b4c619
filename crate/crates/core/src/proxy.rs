//! Client-side proxy generation and unfairness ranking.
//!
//! Reliable clients build a fair proxy by relabeling their training data. A
//! "teacher" logistic model is fit with a squared-DBC penalty whose weight is
//! raised until the teacher's DBC on the client's data is within half the
//! budget. Labels are then resampled through the maximal coupling between the
//! plain model's label distribution `p_i` and the teacher's `q_i`. The
//! expected fraction of changed labels is the mean of `|p_i - q_i|`, so a
//! client that is already fair keeps nearly all of its labels, while the
//! relabeled set is distributed like data drawn from the teacher. Features
//! and sensitive attributes are never touched.
//!
//! Unreliable clients pass their original training data through unchanged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, DataPoint};
use crate::fairness::{self, FairProxyReport, FairnessBudget, FairnessMetric};
use crate::logit::{self, GroupedSamples, InnerSolveConfig};
use crate::optim::{self, LbfgsOptions};
use crate::par;
use crate::rng::StreamRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    ReliableFairProxy,
    UnreliablePassthrough,
}

/// Settings of the fair relabeling generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairProxyParams {
    pub budget: FairnessBudget,
    /// Reject a proxy that changes more than this fraction of labels.
    pub max_relabel_frac: f64,
    /// Penalty weights tried in order for the teacher model.
    pub rho_schedule: Vec<f64>,
    /// Independent relabel draws tried per accepted teacher.
    pub relabel_draws: usize,
    pub inner: InnerSolveConfig,
}

impl Default for FairProxyParams {
    fn default() -> Self {
        Self {
            budget: FairnessBudget::default(),
            max_relabel_frac: 1.0,
            rho_schedule: vec![0.0, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5],
            relabel_draws: 4,
            inner: InnerSolveConfig::default(),
        }
    }
}

/// A pluggable proxy construction method.
pub trait ProxyGenerator: Sync {
    fn generate(&self, client: &ClientDataset, rng: &mut StreamRng) -> Result<Vec<DataPoint>>;
}

/// Sends the original training split as-is.
#[derive(Debug, Clone, Copy, Default)]
pub struct Passthrough;

impl ProxyGenerator for Passthrough {
    fn generate(&self, client: &ClientDataset, _rng: &mut StreamRng) -> Result<Vec<DataPoint>> {
        passthrough_proxy(client)
    }
}

impl ProxyGenerator for FairProxyParams {
    fn generate(&self, client: &ClientDataset, rng: &mut StreamRng) -> Result<Vec<DataPoint>> {
        generate_fair_proxy_with(client, self, rng).map(|(p, _)| p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientBehavior {
    pub kind: BehaviorKind,
    pub generator_params: FairProxyParams,
}

impl ClientBehavior {
    pub fn generator(&self) -> &dyn ProxyGenerator {
        match self.kind {
            BehaviorKind::ReliableFairProxy => &self.generator_params,
            BehaviorKind::UnreliablePassthrough => &Passthrough,
        }
    }
}

pub fn passthrough_proxy(client: &ClientDataset) -> Result<Vec<DataPoint>> {
    if client.original_train.is_empty() {
        return Err(Error::EmptyInput(format!(
            "client {} has no training data",
            client.client_id
        )));
    }
    Ok(client.original_train.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub rho: f64,
    pub teacher_dbc: f64,
    pub relabel_frac: f64,
    pub check: FairProxyReport,
}

/// Fair proxy with the default generator settings at the given budget.
pub fn generate_fair_proxy(
    client: &ClientDataset,
    budget: &FairnessBudget,
    cfg: &InnerSolveConfig,
    rng: &mut StreamRng,
) -> Result<Vec<DataPoint>> {
    let params = FairProxyParams {
        budget: *budget,
        inner: *cfg,
        ..Default::default()
    };
    generate_fair_proxy_with(client, &params, rng).map(|(p, _)| p)
}

/// Fits `reg_loss + ρ·DBC²` on a single client.
fn fit_teacher(
    train: &GroupedSamples,
    dbc_dir: &[f64],
    rho: f64,
    cfg: &InnerSolveConfig,
    start: &[f64],
) -> Result<Vec<f64>> {
    let opts = LbfgsOptions {
        memory: cfg.memory,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    let out = optim::minimize(
        |theta, g| match logit::value_and_grad(train, &[1.0], theta, cfg.lambda_theta) {
            Ok((f, grad)) => {
                let d = logit::dot(dbc_dir, theta);
                for ((gj, gr), vj) in g.iter_mut().zip(grad).zip(dbc_dir) {
                    *gj = gr + 2.0 * rho * d * vj;
                }
                f + rho * d * d
            }
            Err(_) => f64::NAN,
        },
        start,
        &opts,
    )?;
    Ok(out.x)
}

/// Maximal-coupling resample: returns a label distributed as Bernoulli(q)
/// when `y` is distributed as Bernoulli(p), changing it as rarely as possible.
fn coupled_label(y: i8, p: f64, q: f64, u: f64) -> i8 {
    if y == 1 {
        if q >= p || u < q / p {
            1
        } else {
            -1
        }
    } else if q <= p || u < (1.0 - q) / (1.0 - p) {
        -1
    } else {
        1
    }
}

pub fn generate_fair_proxy_with(
    client: &ClientDataset,
    params: &FairProxyParams,
    rng: &mut StreamRng,
) -> Result<(Vec<DataPoint>, GenerationReport)> {
    let train = &client.original_train;
    if train.is_empty() {
        return Err(Error::EmptyInput(format!(
            "client {} has no training data",
            client.client_id
        )));
    }
    let has = |f: &dyn Fn(&DataPoint) -> bool| train.iter().any(f);
    if !(has(&|p| p.s == 0) && has(&|p| p.s == 1)) {
        return Err(Error::DegenerateInput(format!(
            "client {}: training data lacks a sensitive group",
            client.client_id
        )));
    }
    if !(has(&|p| p.y == 1) && has(&|p| p.y == -1)) {
        return Err(Error::DegenerateInput(format!(
            "client {}: training data has a single class",
            client.client_id
        )));
    }
    let metric = params.budget.metric;
    let eps = params.budget.eps();
    let samples = GroupedSamples::from_points(&[train])?;
    let dbc_dir: Vec<f64> = fairness::dbc_matrix(metric, &samples)?.column(0).iter().copied().collect();
    let original = client.original();

    let plain = logit::solve_inner(&samples, &[1.0], &params.inner, None)?;
    let p: Vec<f64> = train.iter().map(|d| logit::sigmoid(logit::margin(&plain.theta, d))).collect();
    let mut draws: Vec<Vec<f64>> = Vec::new();

    let mut best = f64::INFINITY;
    let mut teacher = plain.theta.0.clone();
    for &rho in &params.rho_schedule {
        if rho > 0.0 {
            teacher = fit_teacher(&samples, &dbc_dir, rho, &params.inner, &teacher)?;
        }
        let d = logit::dot(&dbc_dir, &teacher);
        if !(d.abs() <= eps / 2.0 || eps.is_infinite()) {
            continue;
        }
        let q: Vec<f64> = train.iter().map(|pt| logit::sigmoid(logit::margin(&teacher, pt))).collect();
        for attempt in 0..params.relabel_draws.max(1) {
            if draws.len() <= attempt {
                draws.push(train.iter().map(|_| rng.random::<f64>()).collect());
            }
            let mut changed = 0usize;
            let proxy: Vec<DataPoint> = train
                .iter()
                .zip(p.iter().zip(&q))
                .zip(&draws[attempt])
                .map(|((pt, (&pi, &qi)), &u)| {
                    let y = coupled_label(pt.y, pi, qi, u);
                    changed += usize::from(y != pt.y);
                    DataPoint { y, ..pt.clone() }
                })
                .collect();
            let relabel_frac = changed as f64 / train.len() as f64;
            let check = fairness::check_fair_proxy(&proxy, &original, &params.budget, &params.inner)?;
            best = best.min(check.dbc.abs());
            if !check.fair {
                log::debug!(
                    "client {}: proxy at rho={rho}, draw {attempt} fails the check (DBC {:.3e})",
                    client.client_id,
                    check.dbc
                );
                continue;
            }
            if relabel_frac > params.max_relabel_frac {
                return Err(Error::Generation {
                    msg: format!(
                        "client {}: relabel fraction {relabel_frac:.3} exceeds {}",
                        client.client_id, params.max_relabel_frac
                    ),
                    best_dbc: check.dbc.abs(),
                });
            }
            return Ok((
                proxy,
                GenerationReport {
                    rho,
                    teacher_dbc: d,
                    relabel_frac,
                    check,
                },
            ));
        }
    }
    Err(Error::Generation {
        msg: format!("client {}: budget {eps} unreachable", client.client_id),
        best_dbc: best,
    })
}

/// |SPD| or |EOD| on each client's test split of a plain model trained on
/// its own training split.
pub fn client_unfairness(
    clients: &[ClientDataset],
    metric: FairnessMetric,
    cfg: &InnerSolveConfig,
) -> Result<Vec<f64>> {
    par::map(clients, |c| {
        let sol = logit::fit_single(&c.original_train, cfg)?;
        fairness::gap(metric, &c.test, &sol.theta).map(f64::abs)
    })
    .into_iter()
    .zip(clients)
    .map(|(r, c)| {
        r.map_err(|e| Error::Ranking {
            client: c.client_id,
            source: Box::new(e),
        })
    })
    .collect()
}

/// Client ids ordered from most to least unfair; ties go to the lower id.
pub fn rank_clients_by_unfairness(
    clients: &[ClientDataset],
    metric: FairnessMetric,
    cfg: &InnerSolveConfig,
) -> Result<Vec<usize>> {
    let scores = client_unfairness(clients, metric, cfg)?;
    Ok(order_by_score(clients.iter().map(|c| c.client_id).zip(scores)))
}

pub(crate) fn order_by_score(scored: impl Iterator<Item = (usize, f64)>) -> Vec<usize> {
    let mut v: Vec<(usize, f64)> = scored.collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().map(|(id, _)| id).collect()
}

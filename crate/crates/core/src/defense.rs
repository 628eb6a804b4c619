//! The server-side bilevel defense.
//!
//! Outer variable: client weights `w` on the probability simplex. Inner
//! solution: `θ_w = argmin_θ reg_loss(proxies; w, θ)`. Outer objective
//!
//! ```text
//! P(w) = reg_loss(roots; w, θ_w) + (1-ν)·ρ/2·DBC_SP(w, θ_w)² + ν·ρ/2·DBC_EO(w, θ_w)²
//! ```
//!
//! The root terms either pool all root samples with unit weight (default) or
//! scale client `c`'s root samples by `w_c`; see [`RootWeighting`].
//!
//! The gradient is `J_wᵀ ∂P/∂θ + ∂P/∂w`, where `H·J_w = -∂²ℓ/∂θ∂w` comes from
//! differentiating the inner optimality condition. The outer loop takes an
//! Adam step on `∇P` and projects back onto the simplex.

use std::io::Write;
use std::ops::Deref;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DataPoint;
use crate::fairness::{self, FairnessMetric};
use crate::logit::{self, GroupedSamples, InnerSolution, InnerSolveConfig, ModelParams};
use crate::{Error, Result};

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Shape { expected: 1, found: 0 });
        }
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input("simplex weights must be finite and nonnegative".into()));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::Input(format!("simplex weights sum to {s}")));
        }
        Ok(Self(w))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, c: usize) -> Self {
        let mut w = vec![0.0; k];
        w[c] = 1.0;
        Self(w)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SimplexWeights {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Euclidean projection onto `{w : Σw = 1, w ≥ 0}` by sorting.
pub fn project_simplex(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(Error::Shape { expected: 1, found: 0 });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("cannot project a non-finite vector".into()));
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            tau = t;
        }
    }
    Ok(SimplexWeights(v.iter().map(|x| (x - tau).max(0.0)).collect()))
}

/// Step interval of the default schedule for a run of `t_max` iterations.
pub fn adaptive_interval(t_max: usize) -> usize {
    (t_max / 5).clamp(1, 400)
}

/// Piecewise-constant penalty weight over outer iterations (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSchedule(pub Vec<(usize, f64)>);

impl RhoSchedule {
    /// 10 at iteration 1, ×10 every 400 iterations, capped at 1e4.
    pub fn adaptive() -> Self {
        Self::geometric(10.0, 10.0, 400, 1e4)
    }

    /// [`adaptive`](Self::adaptive) with the step interval shortened to
    /// `t_max / 5` for runs shorter than 2000 iterations, so the cap is
    /// still reached.
    pub fn adaptive_for(t_max: usize) -> Self {
        Self::geometric(10.0, 10.0, adaptive_interval(t_max), 1e4)
    }

    pub fn geometric(start: f64, factor: f64, every: usize, cap: f64) -> Self {
        let mut v = vec![(1, start)];
        let mut rho = start;
        let mut it = 1;
        while rho * factor <= cap * (1.0 + 1e-12) && factor > 1.0 && every > 0 {
            rho *= factor;
            it += every;
            v.push((it, rho));
        }
        Self(v)
    }

    pub fn constant(rho: f64) -> Self {
        Self(vec![(1, rho)])
    }

    pub fn rho_at(&self, t: usize) -> f64 {
        self.0
            .iter()
            .take_while(|(start, _)| *start <= t)
            .last()
            .or(self.0.first())
            .map_or(0.0, |(_, r)| *r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Config("empty penalty schedule".into()));
        }
        for win in self.0.windows(2) {
            if win[1].0 <= win[0].0 || win[1].1 < win[0].1 {
                return Err(Error::Config("penalty schedule must be increasing".into()));
            }
        }
        if self.0.iter().any(|(_, r)| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config("penalty weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// How root samples enter the outer objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootWeighting {
    /// Every root sample counts once: `w` acts on the outer objective only
    /// through `θ_w`.
    #[default]
    Pooled,
    /// Client `c`'s root samples are scaled by `w_c`, adding an explicit
    /// `∂P/∂w` term.
    ClientWeights,
}

impl std::str::FromStr for RootWeighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "pooled" => Ok(Self::Pooled),
            "client_weights" => Ok(Self::ClientWeights),
            other => Err(Error::Config(format!("unknown root weighting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub rho_schedule: RhoSchedule,
    /// 0 = statistical parity only, 1 = equal opportunity only.
    pub nu: f64,
    pub t_max: usize,
    pub outer_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub root_weighting: RootWeighting,
    pub inner: InnerSolveConfig,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            rho_schedule: RhoSchedule::adaptive(),
            nu: 0.0,
            t_max: 2000,
            outer_lr: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            root_weighting: RootWeighting::Pooled,
            inner: InnerSolveConfig::default(),
        }
    }
}

impl PenaltyConfig {
    pub fn for_metric(metric: FairnessMetric) -> Self {
        Self {
            nu: match metric {
                FairnessMetric::Sp => 0.0,
                FairnessMetric::Eo => 1.0,
            },
            ..Default::default()
        }
    }

    /// Sets `t_max` together with the matching default schedule.
    pub fn with_t_max(mut self, t_max: usize) -> Self {
        self.t_max = t_max;
        self.rho_schedule = RhoSchedule::adaptive_for(t_max);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.rho_schedule.validate()?;
        self.inner.validate()?;
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(Error::Config(format!("nu = {} outside [0,1]", self.nu)));
        }
        if !(self.outer_lr > 0.0) {
            return Err(Error::Config("outer learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0,1)".into()));
        }
        Ok(())
    }
}

/// Value of `P(w)` and the quantities it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyEval {
    pub value: f64,
    pub root_loss: f64,
    pub dbc_sp: f64,
    pub dbc_eo: f64,
    pub inner: InnerSolution,
}

/// Proxy and root samples with the DBC bilinear forms precomputed.
#[derive(Debug, Clone)]
pub struct DefenseProblem {
    pub proxies: GroupedSamples,
    pub roots: GroupedSamples,
    v_sp: DMatrix<f64>,
    v_eo: DMatrix<f64>,
}

impl DefenseProblem {
    pub fn new(proxies: GroupedSamples, roots: GroupedSamples) -> Result<Self> {
        if proxies.num_clients() != roots.num_clients() {
            return Err(Error::Shape {
                expected: proxies.num_clients(),
                found: roots.num_clients(),
            });
        }
        if proxies.dim() != roots.dim() {
            return Err(Error::Shape {
                expected: proxies.dim(),
                found: roots.dim(),
            });
        }
        if proxies.is_empty() {
            return Err(Error::EmptyInput("no proxy samples".into()));
        }
        let v_sp = fairness::dbc_matrix(FairnessMetric::Sp, &roots)?;
        let v_eo = fairness::dbc_matrix(FairnessMetric::Eo, &roots)?;
        Ok(Self {
            proxies,
            roots,
            v_sp,
            v_eo,
        })
    }

    pub fn from_points<P: AsRef<[DataPoint]>>(proxies: &[P], roots: &[P]) -> Result<Self> {
        if let Some(c) = roots.iter().position(|r| r.as_ref().is_empty()) {
            return Err(Error::EmptyInput(format!("client {c} has no root data")));
        }
        let roots = GroupedSamples::from_points(roots)?;
        let proxies = if proxies.iter().all(|p| p.as_ref().is_empty()) {
            return Err(Error::EmptyInput("no proxy samples".into()));
        } else {
            GroupedSamples::from_points(proxies)?
        };
        Self::new(proxies, roots)
    }

    pub fn num_clients(&self) -> usize {
        self.proxies.num_clients()
    }

    fn dbc_values(&self, w: &[f64], theta: &[f64]) -> (f64, f64) {
        let wv = DVector::from_column_slice(w);
        let tv = DVector::from_column_slice(theta);
        (tv.dot(&(&self.v_sp * &wv)), tv.dot(&(&self.v_eo * &wv)))
    }

    fn root_weights(&self, w: &[f64], cfg: &PenaltyConfig) -> Vec<f64> {
        match cfg.root_weighting {
            RootWeighting::Pooled => vec![1.0; w.len()],
            RootWeighting::ClientWeights => w.to_vec(),
        }
    }

    /// Solves the inner problem at `w` and evaluates `P(w)`.
    pub fn evaluate(
        &self,
        w: &[f64],
        cfg: &PenaltyConfig,
        rho: f64,
        warm: Option<&[f64]>,
    ) -> Result<PenaltyEval> {
        let inner = logit::solve_inner(&self.proxies, w, &cfg.inner, warm)?;
        let theta = &inner.theta;
        let rw = self.root_weights(w, cfg);
        let root_loss = logit::regularized_loss(&self.roots, &rw, theta, &cfg.inner)?;
        let (dbc_sp, dbc_eo) = self.dbc_values(&rw, theta);
        let value = root_loss
            + (1.0 - cfg.nu) * 0.5 * rho * dbc_sp * dbc_sp
            + cfg.nu * 0.5 * rho * dbc_eo * dbc_eo;
        Ok(PenaltyEval {
            value,
            root_loss,
            dbc_sp,
            dbc_eo,
            inner,
        })
    }

    /// `∇P(w)` at an already evaluated point.
    pub fn gradient(&self, w: &[f64], cfg: &PenaltyConfig, rho: f64, at: &PenaltyEval) -> Result<Vec<f64>> {
        let theta = &at.inner.theta;
        let k = self.num_clients();
        let rw = self.root_weights(w, cfg);
        let rv = DVector::from_column_slice(&rw);
        let tv = DVector::from_column_slice(theta);
        let c_sp = (1.0 - cfg.nu) * rho * at.dbc_sp;
        let c_eo = cfg.nu * rho * at.dbc_eo;

        let mut dp_dtheta = DVector::from_vec(logit::grad_theta(&self.roots, &rw, theta, &cfg.inner)?);
        dp_dtheta += (&self.v_sp * &rv) * c_sp + (&self.v_eo * &rv) * c_eo;

        let dp_dw_explicit = match cfg.root_weighting {
            RootWeighting::Pooled => DVector::zeros(k),
            RootWeighting::ClientWeights => {
                let n_roots = self.roots.total() as f64;
                let loss_sums = logit::client_loss_sums(&self.roots, theta);
                DVector::from_iterator(k, loss_sums.iter().map(|s| s / n_roots))
                    + self.v_sp.tr_mul(&tv) * c_sp
                    + self.v_eo.tr_mul(&tv) * c_eo
            }
        };

        let h = logit::hess_theta(&self.proxies, w, theta, &cfg.inner)?;
        let chol = h
            .cholesky()
            .ok_or_else(|| Error::Numerical("inner Hessian is not positive definite".into()))?;
        let mixed = logit::mixed_partial(&self.proxies, theta)?;
        let dtheta_dw = -chol.solve(&mixed);
        let grad = dtheta_dw.tr_mul(&dp_dtheta) + dp_dw_explicit;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite hypergradient".into()));
        }
        Ok(grad.iter().copied().collect())
    }
}

pub fn penalty_objective(
    w: &[f64],
    proxies: &GroupedSamples,
    roots: &GroupedSamples,
    cfg: &PenaltyConfig,
    rho: f64,
) -> Result<PenaltyEval> {
    DefenseProblem::new(proxies.clone(), roots.clone())?.evaluate(w, cfg, rho, None)
}

pub fn hypergradient(
    w: &[f64],
    proxies: &GroupedSamples,
    roots: &GroupedSamples,
    cfg: &PenaltyConfig,
    rho: f64,
) -> Result<Vec<f64>> {
    let problem = DefenseProblem::new(proxies.clone(), roots.clone())?;
    let at = problem.evaluate(w, cfg, rho, None)?;
    problem.gradient(w, cfg, rho, &at)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub weights: Vec<f64>,
    pub objective: f64,
    pub rho: f64,
    pub dbc_sp: f64,
    pub dbc_eo: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DefenseTrace {
    pub records: Vec<TraceRecord>,
}

impl DefenseTrace {
    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_jsonl(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct DefenseOutcome {
    pub weights: SimplexWeights,
    pub model: ModelParams,
    pub trace: DefenseTrace,
    pub final_inner: InnerSolution,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(k: usize) -> Self {
        Self {
            m: vec![0.0; k],
            v: vec![0.0; k],
            t: 0,
        }
    }

    fn step(&mut self, w: &[f64], g: &[f64], cfg: &PenaltyConfig) -> Vec<f64> {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        w.iter()
            .zip(g)
            .enumerate()
            .map(|(i, (wi, gi))| {
                self.m[i] = b1 * self.m[i] + (1.0 - b1) * gi;
                self.v[i] = b2 * self.v[i] + (1.0 - b2) * gi * gi;
                let mh = self.m[i] / c1;
                let vh = self.v[i] / c2;
                wi - cfg.outer_lr * mh / (vh.sqrt() + cfg.adam_eps)
            })
            .collect()
    }
}

/// Runs the projected-Adam outer loop from uniform weights, then trains the
/// global model on the proxies with the final weights.
pub fn run_defense<P: AsRef<[DataPoint]>>(
    proxies: &[P],
    roots: &[P],
    cfg: &PenaltyConfig,
) -> Result<DefenseOutcome> {
    cfg.validate()?;
    let problem = DefenseProblem::from_points(proxies, roots)?;
    run_defense_on(&problem, cfg)
}

pub fn run_defense_on(problem: &DefenseProblem, cfg: &PenaltyConfig) -> Result<DefenseOutcome> {
    cfg.validate()?;
    let k = problem.num_clients();
    let mut w = SimplexWeights::uniform(k);
    let mut adam = Adam::new(k);
    let mut trace = DefenseTrace::default();
    let mut warm: Option<Vec<f64>> = None;
    for t in 1..=cfg.t_max {
        let rho = cfg.rho_schedule.rho_at(t);
        let at = problem.evaluate(&w, cfg, rho, warm.as_deref())?;
        trace.records.push(TraceRecord {
            iter: t,
            weights: w.to_vec(),
            objective: at.value,
            rho,
            dbc_sp: at.dbc_sp,
            dbc_eo: at.dbc_eo,
            inner_iterations: at.inner.iterations,
            inner_converged: at.inner.converged,
        });
        if !at.value.is_finite() {
            return Err(Error::DefenseDiverged {
                iter: t,
                trace: Box::new(trace),
            });
        }
        let grad = problem.gradient(&w, cfg, rho, &at)?;
        let tentative = adam.step(&w, &grad, cfg);
        w = project_simplex(&tentative)?;
        warm = Some(at.inner.theta.0);
    }
    let final_inner = logit::solve_inner(&problem.proxies, &w, &cfg.inner, warm.as_deref())?;
    Ok(DefenseOutcome {
        weights: w,
        model: final_inner.theta.clone(),
        trace,
        final_inner,
    })
}

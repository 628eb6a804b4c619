//! Client-weighted, ridge-regularized logistic regression.
//!
//! With `N` samples in total across `K` clients, weights `w` and model
//! dimension `n`:
//!
//! ```text
//! loss(w, θ)     = (1/N) Σ_c w_c Σ_{i∈c} log(1 + exp(-y_i a_iᵀθ))
//! reg_loss(w, θ) = loss(w, θ) + λ/(2n²) ‖θ‖²
//! ```
//!
//! The inner problem `θ_w(w) = argmin_θ reg_loss(w, θ)` is solved by L-BFGS.

use std::ops::{Deref, Range};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::DataPoint;
use crate::optim::{self, LbfgsOptions};
use crate::par;
use crate::{Error, Result};

/// Coefficients of the linear decision function `aᵀθ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite model coefficient".into()));
        }
        Ok(Self(theta))
    }
}

impl Deref for ModelParams {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A model input `a = (x, s)` with its label and owning client.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSample {
    pub a: Vec<f64>,
    pub y: f64,
    pub client_id: usize,
}

impl WeightedSample {
    pub fn from_point(p: &DataPoint, client_id: usize) -> Self {
        Self {
            a: p.a(),
            y: p.label(),
            client_id,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Block {
    rows: Vec<f64>,
    y: Vec<f64>,
}

/// Samples grouped by client, stored as one dense row-major block each.
/// The last column of every row is the sensitive attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSamples {
    dim: usize,
    blocks: Vec<Block>,
}

impl GroupedSamples {
    /// `k` empty clients of model dimension `dim`.
    pub fn empty(k: usize, dim: usize) -> Self {
        Self {
            dim,
            blocks: vec![Block::default(); k],
        }
    }

    pub fn from_points<P: AsRef<[DataPoint]>>(groups: &[P]) -> Result<Self> {
        let dim = groups
            .iter()
            .flat_map(|g| g.as_ref().first())
            .map(DataPoint::model_dim)
            .next()
            .ok_or_else(|| Error::EmptyInput("no samples in any client".into()))?;
        let mut out = Self::empty(groups.len(), dim);
        for (c, g) in groups.iter().enumerate() {
            for p in g.as_ref() {
                out.push_row(c, &p.x, Some(p.s as f64), p.label())?;
            }
        }
        Ok(out)
    }

    pub fn from_weighted(samples: &[WeightedSample], k: usize, dim: usize) -> Result<Self> {
        let mut out = Self::empty(k, dim);
        for s in samples {
            if s.client_id >= k {
                return Err(Error::Input(format!("client id {} >= K = {k}", s.client_id)));
            }
            out.push_row(s.client_id, &s.a, None, s.y)?;
        }
        Ok(out)
    }

    fn push_row(&mut self, c: usize, head: &[f64], tail: Option<f64>, y: f64) -> Result<()> {
        let len = head.len() + usize::from(tail.is_some());
        if len != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                found: len,
            });
        }
        let b = &mut self.blocks[c];
        b.rows.extend_from_slice(head);
        if let Some(t) = tail {
            b.rows.push(t);
        }
        b.y.push(y);
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self, c: usize) -> usize {
        self.blocks[c].y.len()
    }

    pub fn total(&self) -> usize {
        self.blocks.iter().map(|b| b.y.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn lens(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.y.len()).collect()
    }

    pub fn row(&self, c: usize, i: usize) -> &[f64] {
        &self.blocks[c].rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, c: usize, i: usize) -> f64 {
        self.blocks[c].y[i]
    }

    pub fn sensitive(&self, c: usize, i: usize) -> f64 {
        self.row(c, i)[self.dim - 1]
    }

    /// Keeps only the clients in `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> Self {
        Self {
            dim: self.dim,
            blocks: keep.iter().map(|&c| self.blocks[c].clone()).collect(),
        }
    }

    pub(crate) fn check(&self, w: &[f64], theta: &[f64]) -> Result<()> {
        if w.len() != self.num_clients() {
            return Err(Error::Shape {
                expected: self.num_clients(),
                found: w.len(),
            });
        }
        if theta.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                found: theta.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerSolveConfig {
    pub lambda_theta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for InnerSolveConfig {
    fn default() -> Self {
        Self {
            lambda_theta: 1e-4,
            tol: 1e-7,
            max_iter: 1000,
            memory: 10,
        }
    }
}

impl InnerSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_theta > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 || self.memory == 0 {
            return Err(Error::Config(format!("invalid inner solver settings {self:?}")));
        }
        Ok(())
    }

    /// Coefficient `λ/n²` of the ridge gradient.
    pub fn ridge(&self, n: usize) -> f64 {
        self.lambda_theta / (n * n) as f64
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// λ/(2n²)‖θ‖².
pub fn reg(theta: &[f64], lambda: f64) -> f64 {
    let n = theta.len() as f64;
    lambda / (2.0 * n * n) * dot(theta, theta)
}

fn chunk_loss(s: &GroupedSamples, c: usize, r: Range<usize>, theta: &[f64]) -> f64 {
    r.map(|i| softplus(-s.label(c, i) * dot(s.row(c, i), theta))).sum()
}

/// Per-client unweighted loss sums `Σ_{i∈c} log(1+exp(-y aᵀθ))`.
pub fn client_loss_sums(samples: &GroupedSamples, theta: &[f64]) -> Vec<f64> {
    let k = samples.num_clients();
    par::chunked_fold(
        &samples.lens(),
        vec![0.0; k],
        |c, r| {
            let mut v = vec![0.0; k];
            v[c] = chunk_loss(samples, c, r, theta);
            v
        },
        |acc, p| acc.iter_mut().zip(p).for_each(|(a, b)| *a += b),
    )
}

/// Unregularized client-weighted logistic loss.
pub fn weighted_loss(samples: &GroupedSamples, w: &[f64], theta: &[f64]) -> Result<f64> {
    samples.check(w, theta)?;
    let n_total = samples.total();
    if n_total == 0 {
        return Err(Error::EmptyInput("weighted loss over zero samples".into()));
    }
    let sums = client_loss_sums(samples, theta);
    Ok(sums.iter().zip(w).map(|(s, wc)| s * wc).sum::<f64>() / n_total as f64)
}

pub fn regularized_loss(
    samples: &GroupedSamples,
    w: &[f64],
    theta: &[f64],
    cfg: &InnerSolveConfig,
) -> Result<f64> {
    Ok(weighted_loss(samples, w, theta)? + reg(theta, cfg.lambda_theta))
}

/// Regularized loss and its θ-gradient in one pass.
pub fn value_and_grad(
    samples: &GroupedSamples,
    w: &[f64],
    theta: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    samples.check(w, theta)?;
    let n = samples.dim();
    let n_total = samples.total();
    let (mut f, mut g) = if n_total == 0 {
        (0.0, vec![0.0; n])
    } else {
        let inv = 1.0 / n_total as f64;
        let (f, g) = par::chunked_fold(
            &samples.lens(),
            (0.0, vec![0.0; n]),
            |c, r| {
                let mut f = 0.0;
                let mut g = vec![0.0; n];
                if w[c] != 0.0 {
                    for i in r {
                        let a = samples.row(c, i);
                        let y = samples.label(c, i);
                        let z = -y * dot(a, theta);
                        f += softplus(z);
                        let coef = -y * sigmoid(z);
                        g.iter_mut().zip(a).for_each(|(gj, aj)| *gj += coef * aj);
                    }
                    f *= w[c];
                    g.iter_mut().for_each(|v| *v *= w[c]);
                }
                (f, g)
            },
            |acc, p| {
                acc.0 += p.0;
                acc.1.iter_mut().zip(p.1).for_each(|(a, b)| *a += b);
            },
        );
        (f * inv, g.into_iter().map(|v| v * inv).collect::<Vec<_>>())
    };
    let ridge = lambda / (n * n) as f64;
    f += reg(theta, lambda);
    g.iter_mut().zip(theta).for_each(|(gj, tj)| *gj += ridge * tj);
    Ok((f, g))
}

/// Gradient of [`regularized_loss`] with respect to θ.
pub fn grad_theta(
    samples: &GroupedSamples,
    w: &[f64],
    theta: &[f64],
    cfg: &InnerSolveConfig,
) -> Result<Vec<f64>> {
    value_and_grad(samples, w, theta, cfg.lambda_theta).map(|(_, g)| g)
}

/// Hessian of [`regularized_loss`] in θ: `(1/N) Σ w_c σ(1-σ) a aᵀ + (λ/n²) I`.
pub fn hess_theta(
    samples: &GroupedSamples,
    w: &[f64],
    theta: &[f64],
    cfg: &InnerSolveConfig,
) -> Result<DMatrix<f64>> {
    samples.check(w, theta)?;
    let n = samples.dim();
    let n_total = samples.total();
    let mut h = if n_total == 0 {
        DMatrix::zeros(n, n)
    } else {
        let upper = par::chunked_fold(
            &samples.lens(),
            vec![0.0; n * n],
            |c, r| {
                let mut h = vec![0.0; n * n];
                if w[c] != 0.0 {
                    for i in r {
                        let a = samples.row(c, i);
                        let p = sigmoid(dot(a, theta));
                        let d = w[c] * p * (1.0 - p);
                        for j in 0..n {
                            let dj = d * a[j];
                            for l in j..n {
                                h[j * n + l] += dj * a[l];
                            }
                        }
                    }
                }
                h
            },
            |acc, p| acc.iter_mut().zip(p).for_each(|(a, b)| *a += b),
        );
        let inv = 1.0 / n_total as f64;
        DMatrix::from_fn(n, n, |j, l| {
            let (lo, hi) = if j <= l { (j, l) } else { (l, j) };
            upper[lo * n + hi] * inv
        })
    };
    let ridge = cfg.ridge(n);
    for j in 0..n {
        h[(j, j)] += ridge;
    }
    Ok(h)
}

/// `∂²reg_loss/∂θ∂w` as an n×K matrix: column `c` is `(1/N) Σ_{i∈c} ∇_θ loss_i`.
pub fn mixed_partial(samples: &GroupedSamples, theta: &[f64]) -> Result<DMatrix<f64>> {
    let k = samples.num_clients();
    samples.check(&vec![0.0; k], theta)?;
    let n = samples.dim();
    let n_total = samples.total();
    let mut m = DMatrix::zeros(n, k);
    if n_total == 0 {
        return Ok(m);
    }
    let cols = par::chunked_fold(
        &samples.lens(),
        vec![0.0; n * k],
        |c, r| {
            let mut v = vec![0.0; n * k];
            let col = &mut v[c * n..(c + 1) * n];
            for i in r {
                let a = samples.row(c, i);
                let y = samples.label(c, i);
                let coef = -y * sigmoid(-y * dot(a, theta));
                col.iter_mut().zip(a).for_each(|(g, aj)| *g += coef * aj);
            }
            v
        },
        |acc, p| acc.iter_mut().zip(p).for_each(|(a, b)| *a += b),
    );
    let inv = 1.0 / n_total as f64;
    for c in 0..k {
        for j in 0..n {
            m[(j, c)] = cols[c * n + j] * inv;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub theta: ModelParams,
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf: f64,
}

/// Solves `argmin_θ reg_loss(w, θ)` from `warm_start` (or zero).
pub fn solve_inner(
    samples: &GroupedSamples,
    w: &[f64],
    cfg: &InnerSolveConfig,
    warm_start: Option<&[f64]>,
) -> Result<InnerSolution> {
    cfg.validate()?;
    let n = samples.dim();
    let x0 = warm_start.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    samples.check(w, &x0)?;
    if !(0..samples.num_clients()).any(|c| w[c] > 0.0 && samples.len(c) > 0) {
        return Err(Error::Underdetermined);
    }
    let opts = LbfgsOptions {
        memory: cfg.memory,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..LbfgsOptions::default()
    };
    let out = optim::minimize(
        |theta, g| match value_and_grad(samples, w, theta, cfg.lambda_theta) {
            Ok((f, grad)) => {
                g.copy_from_slice(&grad);
                f
            }
            Err(_) => f64::NAN,
        },
        &x0,
        &opts,
    )?;
    if !out.converged {
        log::debug!(
            "inner solve stopped after {} iterations at |g|_inf = {:.3e}",
            out.iterations,
            out.grad_inf
        );
    }
    Ok(InnerSolution {
        theta: ModelParams(out.x),
        iterations: out.iterations,
        converged: out.converged,
        grad_inf: out.grad_inf,
    })
}

/// Trains on a single dataset with unit weight.
pub fn fit_single(points: &[DataPoint], cfg: &InnerSolveConfig) -> Result<InnerSolution> {
    let s = GroupedSamples::from_points(&[points])?;
    solve_inner(&s, &[1.0], cfg, None)
}

/// `+1` iff `aᵀθ ≥ 0`.
pub fn predict(theta: &[f64], a: &[f64]) -> Result<i8> {
    if a.len() != theta.len() {
        return Err(Error::Shape {
            expected: theta.len(),
            found: a.len(),
        });
    }
    Ok(if dot(a, theta) >= 0.0 { 1 } else { -1 })
}

/// [`predict`] on a data point without materializing `a`.
pub fn predict_point(theta: &[f64], p: &DataPoint) -> i8 {
    debug_assert_eq!(theta.len(), p.model_dim());
    let n = theta.len();
    let z = dot(&p.x, &theta[..n - 1]) + p.s as f64 * theta[n - 1];
    if z >= 0.0 {
        1
    } else {
        -1
    }
}

/// Decision value `aᵀθ` of a data point.
pub fn margin(theta: &[f64], p: &DataPoint) -> f64 {
    let n = theta.len();
    dot(&p.x, &theta[..n - 1]) + p.s as f64 * theta[n - 1]
}

//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The objective is a closure writing the gradient into its second argument
//! and returning the value. Termination is on the gradient sup-norm.

use std::collections::VecDeque;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            tol: 1e-7,
            max_iter: 1000,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone)]
struct Probe {
    alpha: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x0: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    opts: &'a LbfgsOptions,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> LineSearch<'_, F> {
    fn probe(&mut self, alpha: f64) -> Probe {
        let x: Vec<f64> = self.x0.iter().zip(self.dir).map(|(a, d)| a + alpha * d).collect();
        let mut grad = vec![0.0; x.len()];
        let value = (self.f)(&x, &mut grad);
        self.evals += 1;
        let slope = dot(&grad, self.dir);
        Probe {
            alpha,
            value,
            slope,
            x,
            grad,
        }
    }

    fn armijo(&self, p: &Probe) -> bool {
        if !p.value.is_finite() {
            return false;
        }
        if p.value <= self.f0 + self.opts.c1 * p.alpha * self.slope0 {
            return true;
        }
        // Approximate Wolfe: once decreases drop below roundoff in the value,
        // judge progress by the directional derivative alone.
        let noise = 1e-14 * self.f0.abs().max(1e-300);
        p.value <= self.f0 + noise && p.slope <= (2.0 * self.opts.c1 - 1.0) * self.slope0
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.slope.is_finite() && p.slope.abs() <= -self.opts.c2 * self.slope0
    }

    fn run(&mut self, alpha_init: f64) -> Option<Probe> {
        let mut prev = Probe {
            alpha: 0.0,
            value: self.f0,
            slope: self.slope0,
            x: self.x0.to_vec(),
            grad: vec![],
        };
        let mut alpha = alpha_init;
        for i in 0..self.opts.max_line_search {
            let p = self.probe(alpha);
            if !self.armijo(&p) || (i > 0 && p.value >= prev.value) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.slope >= 0.0 {
                return self.zoom(p, prev);
            }
            alpha *= 2.0;
            prev = p;
        }
        (prev.alpha > 0.0).then_some(prev)
    }

    fn zoom(&mut self, mut lo: Probe, mut hi: Probe) -> Option<Probe> {
        for _ in 0..self.opts.max_line_search {
            let (a, b) = (lo.alpha, hi.alpha);
            let width = (b - a).abs();
            if width <= 1e-16 * a.abs().max(b.abs()).max(1e-300) {
                break;
            }
            let alpha = cubic_min(&lo, &hi)
                .filter(|t| {
                    let (l, h) = (a.min(b), a.max(b));
                    *t > l + 0.1 * width && *t < h - 0.1 * width
                })
                .unwrap_or(0.5 * (a + b));
            let p = self.probe(alpha);
            if !self.armijo(&p) || p.value >= lo.value {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        (lo.alpha > 0.0).then_some(lo)
    }
}

/// Minimizer of the cubic interpolating value and slope at both ends.
fn cubic_min(p: &Probe, q: &Probe) -> Option<f64> {
    if !(p.value.is_finite() && q.value.is_finite() && p.slope.is_finite() && q.slope.is_finite()) {
        return None;
    }
    let d1 = p.slope + q.slope - 3.0 * (p.value - q.value) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
    let denom = q.slope - p.slope + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let t = q.alpha - (q.alpha - p.alpha) * (q.slope + d2 - d1) / denom;
    t.is_finite().then_some(t)
}

/// Minimizes `f` from `x0`. Reaching `max_iter` or a stalled line search is
/// not an error: the last iterate comes back with `converged = false`.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite objective at starting point".into()));
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut stalled = false;

    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.tol {
            break;
        }
        let mut dir = two_loop(&g, &hist);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        let alpha0 = if hist.is_empty() {
            (1.0 / dot(&g, &g).sqrt()).min(1.0)
        } else {
            1.0
        };
        let step = {
            let mut ls = LineSearch {
                f: &mut f,
                x0: &x,
                dir: &dir,
                f0: fx,
                slope0: slope,
                opts,
                evals: 0,
            };
            ls.run(alpha0)
        };
        iterations += 1;
        let Some(p) = step else {
            if hist.is_empty() {
                stalled = true;
                break;
            }
            hist.clear();
            continue;
        };
        if !p.value.is_finite() || p.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite iterate at iteration {iterations}")));
        }
        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = p.x;
        g = p.grad;
        fx = p.value;
    }
    let grad_inf = inf_norm(&g);
    let converged = grad_inf <= opts.tol;
    if stalled && !converged {
        log::debug!("lbfgs: line search stalled at |g|_inf = {grad_inf:.3e}");
    }
    Ok(LbfgsOutcome {
        x,
        value: fx,
        grad_inf,
        iterations,
        converged,
    })
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

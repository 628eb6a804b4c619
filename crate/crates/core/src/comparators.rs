//! One-shot versions of the fairness-blind baseline and of two loss-based
//! robust weighting schemes (FedASL and FedNolowe), plus model averaging.

use serde::{Deserialize, Serialize};

use crate::data::DataPoint;
use crate::defense::SimplexWeights;
use crate::logit::{self, GroupedSamples, InnerSolveConfig, ModelParams};
use crate::par;
use crate::{Error, Result};

/// Small constant keeping the FedASL decay finite when σ is tiny.
const EPS_NUM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModelSet {
    pub models: Vec<ModelParams>,
    pub losses: Vec<f64>,
}

impl LocalModelSet {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Which data the per-client loss signal is computed on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSource {
    #[default]
    OwnProxy,
    PooledRoot,
}

impl std::str::FromStr for LossSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "own_proxy" | "own-proxy" => Ok(Self::OwnProxy),
            "pooled_root" | "pooled-root" => Ok(Self::PooledRoot),
            _ => Err(Error::Config(format!("unknown loss source {s:?}"))),
        }
    }
}

/// Fits one model per proxy and records its mean loss on that proxy.
pub fn train_local_models<P: AsRef<[DataPoint]> + Sync>(
    proxies: &[P],
    cfg: &InnerSolveConfig,
) -> Result<LocalModelSet> {
    let fits = par::map(proxies, |p| -> Result<(ModelParams, f64)> {
        let p = p.as_ref();
        let sol = logit::fit_single(p, cfg)?;
        let loss = logit::weighted_loss(&GroupedSamples::from_points(&[p])?, &[1.0], &sol.theta)?;
        Ok((sol.theta, loss))
    });
    let mut out = LocalModelSet {
        models: Vec::with_capacity(fits.len()),
        losses: Vec::with_capacity(fits.len()),
    };
    for (c, r) in fits.into_iter().enumerate() {
        let (m, l) = r.map_err(|e| Error::Scenario {
            client: c,
            source: Box::new(e),
        })?;
        out.models.push(m);
        out.losses.push(l);
    }
    Ok(out)
}

/// Replaces the loss signal by each local model's mean loss on the union of
/// all root samples.
pub fn pooled_root_losses<P: AsRef<[DataPoint]>>(models: &LocalModelSet, roots: &[P]) -> Result<Vec<f64>> {
    let pooled: Vec<DataPoint> = roots.iter().flat_map(|r| r.as_ref().iter().cloned()).collect();
    let samples = GroupedSamples::from_points(&[pooled])?;
    models
        .models
        .iter()
        .map(|m| logit::weighted_loss(&samples, &[1.0], m))
        .collect()
}

fn check_losses(losses: &[f64]) -> Result<()> {
    if losses.is_empty() {
        return Err(Error::Input("no client losses".into()));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Input("non-finite client loss".into()));
    }
    Ok(())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn normalize(u: Vec<f64>) -> Result<SimplexWeights> {
    let total: f64 = u.iter().sum();
    let mut w: Vec<f64> = u.iter().map(|x| x / total).collect();
    // absorb the last-bit rounding error so the sum is 1 to machine precision
    let drift: f64 = 1.0 - w.iter().sum::<f64>();
    if let Some(i) = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])) {
        w[i] += drift;
    }
    SimplexWeights::new(w)
}

/// Full weight inside the median-centered good region, exponential decay
/// outside it.
pub fn fedasl_weights(losses: &[f64], alpha: f64, beta: f64) -> Result<SimplexWeights> {
    check_losses(losses)?;
    let k = losses.len();
    let med = median(losses);
    let mean = losses.iter().sum::<f64>() / k as f64;
    let sigma = (losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
    if sigma == 0.0 {
        return Ok(SimplexWeights::uniform(k));
    }
    let radius = alpha * sigma;
    let u = losses
        .iter()
        .map(|l| {
            let d = (l - med).abs();
            if d <= radius {
                1.0
            } else {
                (-(d - radius) / (beta * sigma + EPS_NUM)).exp()
            }
        })
        .collect();
    normalize(u)
}

/// `w_c = (1 - L_c/ΣL) / (K - 1)`.
pub fn fednolowe_weights(losses: &[f64]) -> Result<SimplexWeights> {
    check_losses(losses)?;
    let k = losses.len();
    if k < 2 {
        return Err(Error::Input("FedNolowe needs at least two clients".into()));
    }
    if losses.iter().any(|l| *l < 0.0) {
        return Err(Error::Input("negative client loss".into()));
    }
    let total: f64 = losses.iter().sum();
    if total == 0.0 {
        return Ok(SimplexWeights::uniform(k));
    }
    normalize(losses.iter().map(|l| (1.0 - l / total) / (k - 1) as f64).collect())
}

/// `Σ_c w_c θ_c`.
pub fn aggregate_models(models: &LocalModelSet, w: &[f64]) -> Result<ModelParams> {
    if models.len() != w.len() {
        return Err(Error::Shape {
            expected: models.len(),
            found: w.len(),
        });
    }
    let dim = models.models.first().map_or(0, |m| m.len());
    let mut out = vec![0.0; dim];
    for (m, wc) in models.models.iter().zip(w) {
        if m.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                found: m.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(m.iter()) {
            *o += wc * v;
        }
    }
    Ok(ModelParams(out))
}

/// All proxies pooled with uniform client weights.
pub fn baseline_global<P: AsRef<[DataPoint]>>(proxies: &[P], cfg: &InnerSolveConfig) -> Result<ModelParams> {
    let samples = GroupedSamples::from_points(proxies)?;
    let k = samples.num_clients();
    Ok(logit::solve_inner(&samples, &vec![1.0 / k as f64; k], cfg, None)?.theta)
}

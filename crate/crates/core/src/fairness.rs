//! Group-fairness surrogates and metrics.
//!
//! The decision boundary covariance (DBC) over root samples is
//!
//! ```text
//! DBC_SP(w, θ) = (1/N) Σ_c w_c Σ_{i∈c} (s_i - s̄) a_iᵀθ
//! DBC_EO(w, θ) = (1/N) Σ_c w_c Σ_{i∈c} (s_i - s̄) m_i a_iᵀθ,   m_i = (1 + y_i)/2
//! ```
//!
//! with `s̄` the mean sensitive value over all roots. Both are returned signed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::DataPoint;
use crate::logit::{self, GroupedSamples, InnerSolveConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FairnessMetric {
    Sp,
    Eo,
}

impl FairnessMetric {
    pub fn name(self) -> &'static str {
        match self {
            FairnessMetric::Sp => "sp",
            FairnessMetric::Eo => "eo",
        }
    }
}

impl std::str::FromStr for FairnessMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sp" => Ok(Self::Sp),
            "eo" => Ok(Self::Eo),
            other => Err(Error::Config(format!("unknown fairness metric {other:?}"))),
        }
    }
}

impl std::fmt::Display for FairnessMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessBudget {
    pub eps_sp: f64,
    pub eps_eo: f64,
    pub metric: FairnessMetric,
}

impl Default for FairnessBudget {
    fn default() -> Self {
        Self {
            eps_sp: 0.05,
            eps_eo: 0.05,
            metric: FairnessMetric::Sp,
        }
    }
}

impl FairnessBudget {
    pub fn new(eps_sp: f64, eps_eo: f64, metric: FairnessMetric) -> Result<Self> {
        let b = Self { eps_sp, eps_eo, metric };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_sp >= 0.0) || !(self.eps_eo >= 0.0) {
            return Err(Error::Config("fairness budgets must be nonnegative".into()));
        }
        Ok(())
    }

    /// Budget of the selected metric.
    pub fn eps(&self) -> f64 {
        match self.metric {
            FairnessMetric::Sp => self.eps_sp,
            FairnessMetric::Eo => self.eps_eo,
        }
    }
}

fn mean_sensitive(roots: &GroupedSamples) -> Result<(usize, f64)> {
    let total = roots.total();
    if total == 0 {
        return Err(Error::Metric("DBC over empty root set".into()));
    }
    let mut sum = 0.0;
    for c in 0..roots.num_clients() {
        for i in 0..roots.len(c) {
            sum += roots.sensitive(c, i);
        }
    }
    Ok((total, sum / total as f64))
}

fn dbc_direct(roots: &GroupedSamples, w: &[f64], theta: &[f64], eo: bool) -> Result<f64> {
    roots.check(w, theta)?;
    let (total, s_avg) = mean_sensitive(roots)?;
    let mut acc = 0.0;
    for c in 0..roots.num_clients() {
        let mut inner = 0.0;
        for i in 0..roots.len(c) {
            let m = if eo { (1.0 + roots.label(c, i)) / 2.0 } else { 1.0 };
            inner += (roots.sensitive(c, i) - s_avg) * m * logit::dot(roots.row(c, i), theta);
        }
        acc += w[c] * inner;
    }
    Ok(acc / total as f64)
}

/// Signed statistical-parity DBC.
pub fn dbc_sp(roots: &GroupedSamples, w: &[f64], theta: &[f64]) -> Result<f64> {
    dbc_direct(roots, w, theta, false)
}

/// Signed equal-opportunity DBC; only `y = +1` roots contribute, `s̄` stays
/// the mean over all roots.
pub fn dbc_eo(roots: &GroupedSamples, w: &[f64], theta: &[f64]) -> Result<f64> {
    dbc_direct(roots, w, theta, true)
}

pub fn dbc(metric: FairnessMetric, roots: &GroupedSamples, w: &[f64], theta: &[f64]) -> Result<f64> {
    match metric {
        FairnessMetric::Sp => dbc_sp(roots, w, theta),
        FairnessMetric::Eo => dbc_eo(roots, w, theta),
    }
}

/// The bilinear form behind the DBC: an n×K matrix `V` with
/// `DBC(w, θ) = θᵀ V w`. Column `c` is the θ-gradient of client `c`'s share.
pub fn dbc_matrix(metric: FairnessMetric, roots: &GroupedSamples) -> Result<DMatrix<f64>> {
    let (total, s_avg) = mean_sensitive(roots)?;
    let n = roots.dim();
    let k = roots.num_clients();
    let mut v = DMatrix::zeros(n, k);
    for c in 0..k {
        for i in 0..roots.len(c) {
            let m = match metric {
                FairnessMetric::Sp => 1.0,
                FairnessMetric::Eo => (1.0 + roots.label(c, i)) / 2.0,
            };
            let coef = (roots.sensitive(c, i) - s_avg) * m / total as f64;
            if coef != 0.0 {
                for (j, aj) in roots.row(c, i).iter().enumerate() {
                    v[(j, c)] += coef * aj;
                }
            }
        }
    }
    Ok(v)
}

fn positive_rate<'a>(points: impl Iterator<Item = &'a DataPoint>, theta: &[f64]) -> Option<f64> {
    let (mut hits, mut n) = (0usize, 0usize);
    for p in points {
        n += 1;
        if logit::predict_point(theta, p) == 1 {
            hits += 1;
        }
    }
    (n > 0).then(|| hits as f64 / n as f64)
}

fn check_dim(points: &[DataPoint], theta: &[f64]) -> Result<()> {
    match points.iter().find(|p| p.model_dim() != theta.len()) {
        Some(p) => Err(Error::Shape {
            expected: theta.len(),
            found: p.model_dim(),
        }),
        None => Ok(()),
    }
}

/// Statistical parity difference `P(ŷ=1 | s=1) - P(ŷ=1 | s=0)`.
pub fn spd(points: &[DataPoint], theta: &[f64]) -> Result<f64> {
    check_dim(points, theta)?;
    let r1 = positive_rate(points.iter().filter(|p| p.s == 1), theta);
    let r0 = positive_rate(points.iter().filter(|p| p.s == 0), theta);
    match (r1, r0) {
        (Some(a), Some(b)) => Ok(a - b),
        _ => Err(Error::Metric("SPD undefined: a sensitive group is empty".into())),
    }
}

/// Equal opportunity difference `TPR(s=1) - TPR(s=0)`.
pub fn eod(points: &[DataPoint], theta: &[f64]) -> Result<f64> {
    check_dim(points, theta)?;
    let r1 = positive_rate(points.iter().filter(|p| p.s == 1 && p.y == 1), theta);
    let r0 = positive_rate(points.iter().filter(|p| p.s == 0 && p.y == 1), theta);
    match (r1, r0) {
        (Some(a), Some(b)) => Ok(a - b),
        _ => Err(Error::Metric("EOD undefined: a sensitive group has no positives".into())),
    }
}

pub fn gap(metric: FairnessMetric, points: &[DataPoint], theta: &[f64]) -> Result<f64> {
    match metric {
        FairnessMetric::Sp => spd(points, theta),
        FairnessMetric::Eo => eod(points, theta),
    }
}

/// Percentage of points whose predicted label equals the true one.
pub fn accuracy_pct(points: &[DataPoint], theta: &[f64]) -> Result<f64> {
    check_dim(points, theta)?;
    if points.is_empty() {
        return Err(Error::Metric("accuracy over zero points".into()));
    }
    let hits = points.iter().filter(|p| logit::predict_point(theta, p) == p.y).count();
    Ok(100.0 * hits as f64 / points.len() as f64)
}

/// Ridge used when training the reference model of the fair-proxy check.
pub const CHECK_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairProxyReport {
    pub fair: bool,
    /// Signed DBC of the proxy-trained model on the original data.
    pub dbc: f64,
    pub eps: f64,
    pub metric: FairnessMetric,
    pub ridge: f64,
    pub converged: bool,
}

/// Trains a model on `proxy` alone and tests whether its DBC on `original`
/// stays within the budget.
pub fn check_fair_proxy(
    proxy: &[DataPoint],
    original: &[DataPoint],
    budget: &FairnessBudget,
    cfg: &InnerSolveConfig,
) -> Result<FairProxyReport> {
    if proxy.is_empty() || original.is_empty() {
        return Err(Error::Check("proxy and original data must be nonempty".into()));
    }
    if proxy[0].model_dim() != original[0].model_dim() {
        return Err(Error::Shape {
            expected: original[0].model_dim(),
            found: proxy[0].model_dim(),
        });
    }
    let ridge_cfg = InnerSolveConfig {
        lambda_theta: CHECK_RIDGE,
        ..*cfg
    };
    let sol = logit::fit_single(proxy, &ridge_cfg).map_err(|e| Error::Check(e.to_string()))?;
    let roots = GroupedSamples::from_points(&[original])?;
    let value = dbc(budget.metric, &roots, &[1.0], &sol.theta)?;
    let eps = budget.eps();
    Ok(FairProxyReport {
        fair: value.abs() <= eps,
        dbc: value,
        eps,
        metric: budget.metric,
        ridge: CHECK_RIDGE,
        converged: sol.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logit::WeightedSample;

    fn two_point_roots(y: [f64; 2]) -> GroupedSamples {
        GroupedSamples::from_weighted(
            &[
                WeightedSample { a: vec![1.0, 0.0], y: y[0], client_id: 0 },
                WeightedSample { a: vec![3.0, 1.0], y: y[1], client_id: 0 },
            ],
            1,
            2,
        )
        .unwrap()
    }

    #[test]
    fn dbc_hand_values() {
        let r = two_point_roots([1.0, 1.0]);
        assert_eq!(dbc_sp(&r, &[1.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((dbc_sp(&r, &[1.0], &[2.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        let r = two_point_roots([-1.0, 1.0]);
        assert!((dbc_eo(&r, &[1.0], &[2.0, 0.0]).unwrap() - 1.5).abs() < 1e-15);
        let r = two_point_roots([-1.0, -1.0]);
        assert_eq!(dbc_eo(&r, &[1.0], &[2.0, 0.0]).unwrap(), 0.0);
        let r = two_point_roots([1.0, 1.0]);
        assert_eq!(
            dbc_eo(&r, &[1.0], &[2.0, 0.5]).unwrap(),
            dbc_sp(&r, &[1.0], &[2.0, 0.5]).unwrap()
        );
    }

    #[test]
    fn dbc_zero_when_sensitive_constant() {
        let r = GroupedSamples::from_weighted(
            &[
                WeightedSample { a: vec![1.0, 1.0], y: 1.0, client_id: 0 },
                WeightedSample { a: vec![5.0, 1.0], y: -1.0, client_id: 1 },
            ],
            2,
            2,
        )
        .unwrap();
        assert_eq!(dbc_sp(&r, &[0.5, 0.5], &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn dbc_empty_roots_is_metric_error() {
        let r = GroupedSamples::empty(1, 2);
        assert!(matches!(dbc_sp(&r, &[1.0], &[0.0, 0.0]), Err(Error::Metric(_))));
    }

    #[test]
    fn dbc_matrix_matches_direct() {
        let r = GroupedSamples::from_weighted(
            &[
                WeightedSample { a: vec![1.0, 2.0, 0.0], y: 1.0, client_id: 0 },
                WeightedSample { a: vec![0.5, -1.0, 1.0], y: -1.0, client_id: 1 },
                WeightedSample { a: vec![2.0, 0.3, 1.0], y: 1.0, client_id: 1 },
                WeightedSample { a: vec![-1.0, 0.7, 0.0], y: 1.0, client_id: 2 },
            ],
            3,
            3,
        )
        .unwrap();
        let w = [0.2, 0.3, 0.5];
        let t = [0.4, -0.6, 1.1];
        for m in [FairnessMetric::Sp, FairnessMetric::Eo] {
            let v = dbc_matrix(m, &r).unwrap();
            let via = (nalgebra::DVector::from_column_slice(&t).transpose()
                * &v
                * nalgebra::DVector::from_column_slice(&w))[(0, 0)];
            assert!((via - dbc(m, &r, &w, &t).unwrap()).abs() < 1e-15);
        }
    }

    fn pt(s: u8, y: i8, x0: f64) -> DataPoint {
        DataPoint::new(vec![x0, 1.0], s, y).unwrap()
    }

    #[test]
    fn spd_counts() {
        // theta = (1, 0, 0): predict +1 iff x0 >= 0
        let theta = [1.0, 0.0, 0.0];
        let pts = vec![pt(1, 1, 1.0), pt(1, -1, 2.0), pt(0, 1, 1.0), pt(0, -1, -1.0)];
        assert_eq!(spd(&pts, &theta).unwrap(), 0.5);
        assert_eq!(spd(&pts, &[0.0; 3]).unwrap(), 0.0);
        let flipped: Vec<DataPoint> = pts.iter().map(|p| DataPoint { s: 1 - p.s, ..p.clone() }).collect();
        assert_eq!(spd(&flipped, &theta).unwrap(), -0.5);
    }

    #[test]
    fn eod_counts() {
        let theta = [1.0, 0.0, 0.0];
        let pts = vec![pt(1, 1, 1.0), pt(1, 1, -1.0), pt(0, 1, 1.0), pt(0, 1, 3.0), pt(0, -1, -9.0)];
        assert_eq!(eod(&pts, &theta).unwrap(), -0.5);
        assert_eq!(eod(&pts, &[0.0; 3]).unwrap(), 0.0);
        let flipped: Vec<DataPoint> = pts.iter().map(|p| DataPoint { s: 1 - p.s, ..p.clone() }).collect();
        assert_eq!(eod(&flipped, &theta).unwrap(), 0.5);
    }

    #[test]
    fn metrics_undefined_on_missing_group() {
        let pts = vec![pt(1, 1, 1.0), pt(1, -1, 2.0)];
        assert!(matches!(spd(&pts, &[0.0; 3]), Err(Error::Metric(_))));
        let pts = vec![pt(1, 1, 1.0), pt(0, -1, 2.0)];
        assert!(matches!(eod(&pts, &[0.0; 3]), Err(Error::Metric(_))));
    }

    #[test]
    fn infinite_budget_always_passes() {
        let pts: Vec<DataPoint> = (0..40)
            .map(|i| pt((i % 2) as u8, if i % 2 == 0 { 1 } else { -1 }, (i % 7) as f64 - 3.0))
            .collect();
        let b = FairnessBudget { eps_sp: f64::INFINITY, ..Default::default() };
        assert!(check_fair_proxy(&pts, &pts, &b, &InnerSolveConfig::default()).unwrap().fair);
    }

    #[test]
    fn proxy_with_constant_sensitive_checks_against_constant_original() {
        let pts: Vec<DataPoint> = (0..30)
            .map(|i| pt(1, if i % 3 == 0 { 1 } else { -1 }, (i % 5) as f64 - 2.0))
            .collect();
        let r = check_fair_proxy(&pts, &pts, &FairnessBudget::default(), &InnerSolveConfig::default())
            .unwrap();
        assert_eq!(r.dbc, 0.0);
        assert!(r.fair);
    }
}

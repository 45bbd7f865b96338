//! Cross-level structure of fitted levels.
//!
//! - mean-variance law of moves left, `σ² ≈ ψ μ` (least squares through the
//!   origin, uncentered R²);
//! - log-linear relation `ln n = a p + b` over the central cluster;
//! - linear trend between observed and fitted completion, `c ≈ α ĉ + β`;
//! - cluster labels and the single-parameter reparameterisation from the scale.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::distributions::NegBinParams;
use crate::error::{Error, Result};
use crate::fitting::{BoundaryHit, FitResult};
use crate::ingestion::EmpiricalLevelData;

/// Moves-left summary over the successful attempts of a level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovesLeftStats {
    pub level_id: String,
    pub mean_left: f64,
    /// Population variance.
    pub var_left: f64,
    pub sample_size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    MeanVariance,
    LoglinearNp,
    CompletionCorrection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub kind: RegressionKind,
    /// `[ψ]`, `[a, b]` or `[α, β]`.
    pub coefficients: Vec<f64>,
    /// Uncentered for [`RegressionKind::MeanVariance`], centered otherwise.
    pub r_squared: f64,
    pub adjusted_r_squared: Option<f64>,
    pub p_value: Option<f64>,
    pub sample_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterLabel {
    Central,
    PBoundary,
    HighN,
    Unclassified,
}

impl ClusterLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClusterLabel::Central => "central",
            ClusterLabel::PBoundary => "p_boundary",
            ClusterLabel::HighN => "high_n",
            ClusterLabel::Unclassified => "unclassified",
        }
    }
}

/// Shape above which a fit belongs to the high-`n` cluster.
pub const HIGH_N_THRESHOLD: f64 = 200.0;

/// Mean and population variance of `M - m` over the completions.
pub fn moves_left_stats(level: &EmpiricalLevelData) -> Result<MovesLeftStats> {
    moment_stats(level, |m| f64::from(level.move_limit() - m))
}

/// Mean and population variance of the moves used `m` over the completions.
///
/// The same summary as [`moves_left_stats`] without the reflection about `M`;
/// under light censoring this is the quantity that follows the negative
/// binomial mean-variance identity `σ² = μ / (1 - p)`.
pub fn moves_used_stats(level: &EmpiricalLevelData) -> Result<MovesLeftStats> {
    moment_stats(level, f64::from)
}

fn moment_stats(level: &EmpiricalLevelData, value: impl Fn(u32) -> f64) -> Result<MovesLeftStats> {
    if level.is_empty() {
        return Err(Error::Unfittable(level.level_id().to_string()));
    }
    let count = level.completions();
    let total = count as f64;
    let mean = level
        .histogram()
        .iter()
        .map(|(&m, &c)| value(m) * c as f64)
        .sum::<f64>()
        / total;
    let var = level
        .histogram()
        .iter()
        .map(|(&m, &c)| (value(m) - mean).powi(2) * c as f64)
        .sum::<f64>()
        / total;
    Ok(MovesLeftStats {
        level_id: level.level_id().to_string(),
        mean_left: mean,
        var_left: var,
        sample_size: count,
    })
}

/// `σ² ≈ ψ μ` through the origin over levels with positive mean.
///
/// `ψ = Σμσ² / Σμ²`; R² is uncentered, `1 - SS_res / Σσ⁴`; the p-value is the
/// two-sided t-test of `ψ = 0` with `k - 1` degrees of freedom.
pub fn mean_variance_regression(stats: &[MovesLeftStats]) -> Result<RegressionResult> {
    let mut points: Vec<(f64, f64)> = stats
        .iter()
        .filter(|s| s.mean_left > 0.0 && s.mean_left.is_finite() && s.var_left.is_finite())
        .map(|s| (s.mean_left, s.var_left))
        .collect();
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "mean-variance regression needs at least 2 levels with positive mean, got {}",
            points.len()
        )));
    }
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let syy: f64 = points.iter().map(|(_, y)| y * y).sum();
    let psi = sxy / sxx;
    let ss_res: f64 = points.iter().map(|(x, y)| (y - psi * x).powi(2)).sum();
    let k = points.len();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let dof = (k - 1) as f64;
    let p_value = if ss_res <= 0.0 {
        0.0
    } else {
        let se = (ss_res / dof / sxx).sqrt();
        two_sided_t(psi / se, dof)
    };
    Ok(RegressionResult {
        kind: RegressionKind::MeanVariance,
        coefficients: vec![psi],
        r_squared,
        adjusted_r_squared: None,
        p_value: Some(p_value),
        sample_size: k,
    })
}

fn two_sided_t(t: f64, dof: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    match StudentsT::new(0.0, 1.0, dof) {
        Ok(dist) => 2.0 * dist.sf(t.abs()),
        Err(_) => f64::NAN,
    }
}

/// Ordinary least squares `y = slope x + intercept`. Points are sorted first
/// so the result does not depend on input order.
fn ols(kind: RegressionKind, mut points: Vec<(f64, f64)>) -> Result<RegressionResult> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{kind:?} needs at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Numeric(format!("{kind:?}: non-finite regression input")));
    }
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let k = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let syy: f64 = points.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    if sxx <= f64::EPSILON * points.iter().map(|p| p.0 * p.0).sum::<f64>().max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateRegressor(format!("{kind:?}: regressor has no spread")));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points.iter().map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let adjusted = (points.len() > 2).then(|| 1.0 - (1.0 - r_squared) * (k - 1.0) / (k - 2.0));
    let p_value = (points.len() > 2).then(|| {
        if ss_res <= 0.0 {
            0.0
        } else {
            two_sided_t(slope / (ss_res / (k - 2.0) / sxx).sqrt(), k - 2.0)
        }
    });
    Ok(RegressionResult {
        kind,
        coefficients: vec![slope, intercept],
        r_squared,
        adjusted_r_squared: adjusted,
        p_value,
        sample_size: points.len(),
    })
}

/// `ln n = a p + b` over converged fits, optionally only the central cluster.
pub fn loglinear_np_regression(fits: &[FitResult], central_only: bool) -> Result<RegressionResult> {
    let points = fits
        .iter()
        .filter(|f| f.converged)
        .filter(|f| !central_only || classify_cluster(f) == ClusterLabel::Central)
        .map(|f| (f.params.p(), f.params.n().ln()))
        .collect();
    ols(RegressionKind::LoglinearNp, points)
}

/// `c = α ĉ + β` over `(ĉ, c)` pairs.
pub fn completion_correction_fit(pairs: &[(f64, f64)]) -> Result<RegressionResult> {
    ols(RegressionKind::CompletionCorrection, pairs.to_vec())
}

/// Boundary fits first, then `n > 200`, then central.
pub fn classify_cluster(fit: &FitResult) -> ClusterLabel {
    if fit.boundary_hit.contains(&BoundaryHit::PHigh) || fit.boundary_hit.contains(&BoundaryHit::PLow) {
        ClusterLabel::PBoundary
    } else if !fit.params.n().is_finite() || !fit.params.p().is_finite() {
        ClusterLabel::Unclassified
    } else if fit.params.n() > HIGH_N_THRESHOLD {
        ClusterLabel::HighN
    } else {
        ClusterLabel::Central
    }
}

/// Shape and probability from a scale `θ` and log-linear constants `(a, b)`:
///
/// ```text
/// p = 1 / (1 + θ),   n = exp(a / (1 + θ) + b)
/// ```
///
/// Here `θ = (1 - p) / p`, the scale of the swapped convention, so the
/// returned `p` multiplies the `(1 - p)^n` factor of this crate's pmf rather
/// than the `p^m` factor. Pass the result through
/// [`NegBinParams::complementary_p`] (or feed `1 / θ` from
/// [`crate::Moments::scale`]) to move between the two.
pub fn reparameterize_from_scale(theta: f64, a: f64, b: f64) -> Result<NegBinParams> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::Domain(format!("scale must be positive, got {theta}")));
    }
    let p = 1.0 / (1.0 + theta);
    let n = (a * p + b).exp();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Domain(format!("derived n = {n} is not a positive finite real")));
    }
    NegBinParams::new(n, p)
}

/// Counts per cluster label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCounts {
    pub central: usize,
    pub p_boundary: usize,
    pub high_n: usize,
    pub unclassified: usize,
}

pub fn cluster_counts(fits: &[FitResult]) -> ClusterCounts {
    let mut counts = ClusterCounts::default();
    for fit in fits {
        match classify_cluster(fit) {
            ClusterLabel::Central => counts.central += 1,
            ClusterLabel::PBoundary => counts.p_boundary += 1,
            ClusterLabel::HighN => counts.high_n += 1,
            ClusterLabel::Unclassified => counts.unclassified += 1,
        }
    }
    counts
}

//! Fit quality: KS distance, the two acceptance conditions, completion-rate
//! errors and the linear completion correction.

use serde::{Deserialize, Serialize};

use crate::distributions::{NegBinParams, NeumaierSum};
use crate::error::{Error, Result};
use crate::fitting::FitResult;
use crate::ingestion::EmpiricalLevelData;

/// Linear map between observed and fitted completion, `c ≈ alpha · ĉ + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub alpha: f64,
    pub beta: f64,
}

impl Correction {
    /// Trend reported for a large commercial level catalogue. Useful for
    /// annotating reports when no corpus-specific trend has been fitted.
    pub const REFERENCE: Correction = Correction {
        alpha: 1.035,
        beta: -0.104,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha == 0.0 || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::DegenerateCoefficients);
        }
        Ok(Self { alpha, beta })
    }

    /// Observed completion → fitted-scale completion.
    pub fn forward(&self, observed: f64) -> f64 {
        self.alpha * observed + self.beta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub level_id: String,
    pub ks_distance: f64,
    pub condition1_pass: bool,
    pub observed_completion: f64,
    pub fitted_completion: f64,
    /// `(c - ĉ) / ĉ`; `None` when ĉ = 0.
    pub relative_difference: Option<f64>,
    /// `|c / ĉ - 1|`; `None` when ĉ = 0.
    pub absolute_percentage_error: Option<f64>,
    pub corrected_completion: Option<f64>,
}

/// Completion-rate comparison for one level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletionCheck {
    pub observed: f64,
    pub fitted: f64,
    pub relative_difference: Option<f64>,
    pub absolute_percentage_error: Option<f64>,
}

/// `max_{m=1..M} |F̂(m) - sum_{k=1..m} f(k)|`.
pub fn ks_distance(level: &EmpiricalLevelData, params: &NegBinParams) -> Result<f64> {
    if level.is_empty() {
        return Err(Error::Unfittable(level.level_id().to_string()));
    }
    Ok(ks_from_cumulative(&level.cumulative(), params))
}

pub(crate) fn ks_from_cumulative(cumulative: &[f64], params: &NegBinParams) -> f64 {
    let model = params.pmf_range(1, cumulative.len() as u64);
    let mut partial = NeumaierSum::default();
    let mut d = 0.0f64;
    for (observed, f) in cumulative.iter().zip(model) {
        partial.add(f);
        d = d.max((observed - partial.total()).abs());
    }
    d
}

/// Condition 1: `D < delta` (strict).
pub fn check_condition1(d: f64, delta: f64) -> bool {
    d < delta
}

pub fn completion_check(level: &EmpiricalLevelData, params: &NegBinParams) -> CompletionCheck {
    let observed = level.completion_rate();
    let fitted = params.mass_in_moves(u64::from(level.move_limit()));
    completion_errors(observed, fitted)
}

pub fn completion_errors(observed: f64, fitted: f64) -> CompletionCheck {
    let relative_difference = (observed > 0.0).then(|| (fitted - observed) / observed);
    CompletionCheck {
        observed,
        fitted,
        relative_difference,
        absolute_percentage_error: relative_difference.map(f64::abs),
    }
}

/// Maps a fitted completion back to the observed scale: `(c - beta) / alpha`,
/// clamped to `[0, 1]`.
pub fn apply_correction(fitted: f64, correction: &Correction) -> Result<f64> {
    if correction.alpha == 0.0 {
        return Err(Error::DegenerateCoefficients);
    }
    Ok(((fitted - correction.beta) / correction.alpha).clamp(0.0, 1.0))
}

/// Full report for a level and its fit.
pub fn validate_level(
    level: &EmpiricalLevelData,
    fit: &FitResult,
    delta: f64,
    correction: Option<&Correction>,
) -> Result<ValidationReport> {
    let d = ks_distance(level, &fit.params)?;
    let check = completion_check(level, &fit.params);
    Ok(ValidationReport {
        level_id: level.level_id().to_string(),
        ks_distance: d,
        condition1_pass: check_condition1(d, delta),
        observed_completion: check.observed,
        fitted_completion: check.fitted,
        relative_difference: check.relative_difference,
        absolute_percentage_error: check.absolute_percentage_error,
        corrected_completion: correction.map(|c| apply_correction(check.fitted, c)).transpose()?,
    })
}

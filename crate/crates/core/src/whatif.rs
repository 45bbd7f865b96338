//! Completion-rate predictions under move-limit edits.
//!
//! Predictions keep the fitted `(n, p)` fixed and move the limit:
//! `c(M + Δ) = sum_{m=1..M+Δ} f(m)`. Players may well change behaviour when
//! the limit changes, so every response carries `assumes_fixed_params`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::FitResult;
use crate::validation::{apply_correction, Correction};

/// Width of the baseline-completion bins of the sensitivity grid.
pub const BIN_WIDTH: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfQuery {
    pub level_id: String,
    pub delta: i64,
    #[serde(default)]
    pub apply_correction: bool,
    #[serde(default)]
    pub correction: Option<Correction>,
}

/// What-if response, as served and printed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub level_id: String,
    pub delta: i64,
    pub baseline: f64,
    pub predicted: f64,
    pub change: f64,
    pub corrected: bool,
    pub assumes_fixed_params: bool,
}

/// Predicted completion at `M + delta`, optionally mapped to the observed scale.
pub fn predict_completion(fit: &FitResult, delta: i64, correction: Option<&Correction>) -> Result<f64> {
    if !fit.converged {
        return Err(Error::UnusableFit(fit.level_id.clone()));
    }
    let limit = i64::from(fit.move_limit) + delta;
    if limit < 1 {
        return Err(Error::Domain(format!(
            "move limit {} + {delta} falls below 1 for level {}",
            fit.move_limit, fit.level_id
        )));
    }
    let raw = fit.params.mass_in_moves(limit as u64);
    match correction {
        Some(c) => apply_correction(raw, c),
        None => Ok(raw),
    }
}

pub fn answer(fit: &FitResult, query: &WhatIfQuery) -> Result<WhatIfResponse> {
    let correction = if query.apply_correction {
        Some(query.correction.unwrap_or(Correction::REFERENCE))
    } else {
        None
    };
    let baseline = predict_completion(fit, 0, correction.as_ref())?;
    let predicted = predict_completion(fit, query.delta, correction.as_ref())?;
    Ok(WhatIfResponse {
        level_id: fit.level_id.clone(),
        delta: query.delta,
        baseline,
        predicted,
        change: predicted - baseline,
        corrected: correction.is_some(),
        assumes_fixed_params: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub bin: usize,
    pub delta: i64,
    pub mean_change: f64,
    pub levels: usize,
}

/// Mean predicted change per (baseline bin, Δ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    pub bin_width: f64,
    pub deltas: Vec<i64>,
    pub corrected: bool,
    pub cells: Vec<GridCell>,
}

impl SensitivityGrid {
    /// `[lower, upper)` of bin `bin`; the top bin also holds 1.0.
    pub fn bin_range(&self, bin: usize) -> (f64, f64) {
        (bin as f64 * self.bin_width, (bin + 1) as f64 * self.bin_width)
    }

    pub fn cell(&self, bin: usize, delta: i64) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.bin == bin && c.delta == delta)
    }
}

pub fn bin_of(completion: f64) -> usize {
    let bins = (1.0 / BIN_WIDTH).round() as usize;
    ((completion / BIN_WIDTH).floor().max(0.0) as usize).min(bins - 1)
}

/// Bins converged fits by (corrected) baseline completion and averages the
/// change `predict(Δ) - predict(0)` in each bin. Deltas that would push a
/// level's limit below 1 are skipped for that level.
pub fn sensitivity_grid(
    fits: &[FitResult],
    deltas: &[i64],
    correction: Option<&Correction>,
) -> Result<SensitivityGrid> {
    let usable: Vec<&FitResult> = fits.iter().filter(|f| f.converged).collect();
    if usable.is_empty() {
        return Err(Error::InsufficientData(
            "sensitivity grid needs at least one converged fit".into(),
        ));
    }
    let mut sums: BTreeMap<(usize, i64), (f64, usize)> = BTreeMap::new();
    for fit in usable {
        let baseline = predict_completion(fit, 0, correction)?;
        let bin = bin_of(baseline);
        for &delta in deltas {
            if i64::from(fit.move_limit) + delta < 1 {
                continue;
            }
            let change = predict_completion(fit, delta, correction)? - baseline;
            let entry = sums.entry((bin, delta)).or_insert((0.0, 0));
            entry.0 += change;
            entry.1 += 1;
        }
    }
    Ok(SensitivityGrid {
        bin_width: BIN_WIDTH,
        deltas: deltas.to_vec(),
        corrected: correction.is_some(),
        cells: sums
            .into_iter()
            .map(|((bin, delta), (sum, levels))| GridCell {
                bin,
                delta,
                mean_change: sum / levels as f64,
                levels,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Asymmetry {
    /// Completion lost by removing one move, `f(M)`.
    pub drop_one: f64,
    /// Completion gained by adding one move, `f(M + 1)`.
    pub gain_one: f64,
    pub asymmetric: bool,
    /// `M` at or past the pmf mode, where `asymmetric` is guaranteed.
    pub beyond_mode: bool,
}

pub fn asymmetry_report(fit: &FitResult) -> Result<Asymmetry> {
    if !fit.converged {
        return Err(Error::UnusableFit(fit.level_id.clone()));
    }
    if fit.move_limit < 2 {
        return Err(Error::Domain(format!(
            "level {} needs a move limit of at least 2",
            fit.level_id
        )));
    }
    let m = u64::from(fit.move_limit);
    let drop_one = fit.params.pmf(m);
    let gain_one = fit.params.pmf(m + 1);
    Ok(Asymmetry {
        drop_one,
        gain_one,
        asymmetric: drop_one >= gain_one,
        beyond_mode: m >= fit.params.mode(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::NegBinParams;
    use crate::fitting::BoundaryHit;

    fn fit(n: f64, p: f64, move_limit: u32) -> FitResult {
        let params = NegBinParams::new(n, p).unwrap();
        FitResult {
            level_id: "L1".into(),
            move_limit,
            fit_range: move_limit,
            params,
            initial_guess: params,
            ks_distance: 0.0,
            objective: 0.0,
            fitted_completion: params.mass_in_moves(u64::from(move_limit)),
            converged: true,
            boundary_hit: vec![],
            moments: params.moments(),
            grid_starts_evaluated: 1,
        }
    }

    #[test]
    fn geometric_predictions() {
        let f = fit(1.0, 0.5, 2);
        assert!((predict_completion(&f, 1, None).unwrap() - 0.4375).abs() < 1e-15);
        assert_eq!(predict_completion(&f, 0, None).unwrap(), f.fitted_completion);
        assert!(predict_completion(&f, -2, None).is_err());
    }

    #[test]
    fn non_converged_is_unusable() {
        let mut f = fit(1.0, 0.5, 2);
        f.converged = false;
        f.boundary_hit = vec![BoundaryHit::PHigh];
        assert!(matches!(predict_completion(&f, 1, None), Err(Error::UnusableFit(_))));
        assert!(matches!(asymmetry_report(&f), Err(Error::UnusableFit(_))));
    }

    #[test]
    fn asymmetry_geometric() {
        let a = asymmetry_report(&fit(1.0, 0.5, 2)).unwrap();
        assert!((a.drop_one - 0.125).abs() < 1e-15);
        assert!((a.gain_one - 0.0625).abs() < 1e-15);
        assert!(a.asymmetric && a.beyond_mode);
    }

    #[test]
    fn asymmetry_below_mode_reported() {
        // mode = floor(29 · 0.8 / 0.2) = 116, far above M.
        let a = asymmetry_report(&fit(30.0, 0.8, 20)).unwrap();
        assert!(!a.beyond_mode);
        assert!(!a.asymmetric);
    }

    #[test]
    fn single_level_grid() {
        let f = fit(10.0, 0.6, 15);
        let grid = sensitivity_grid(std::slice::from_ref(&f), &[-1, 1], None).unwrap();
        assert_eq!(grid.cells.len(), 2);
        let bin = bin_of(f.fitted_completion);
        let down = grid.cell(bin, -1).unwrap().mean_change;
        let up = grid.cell(bin, 1).unwrap().mean_change;
        assert!((down + f.params.pmf(15)).abs() < 1e-12);
        assert!((up - f.params.pmf(16)).abs() < 1e-12);

        let grid = sensitivity_grid(&[f.clone(), f.clone(), f.clone()], &[-1, 1], None).unwrap();
        assert_eq!(grid.cells.len(), 2);
        assert!((grid.cell(bin, 1).unwrap().mean_change - up).abs() < 1e-15);
        assert_eq!(grid.cell(bin, 1).unwrap().levels, 3);
    }

    #[test]
    fn grid_needs_converged_fit() {
        let mut f = fit(10.0, 0.6, 15);
        f.converged = false;
        assert!(matches!(
            sensitivity_grid(&[f], &[1], None),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn bins() {
        assert_eq!(bin_of(0.0), 0);
        assert_eq!(bin_of(0.031), 1);
        assert_eq!(bin_of(1.0), 49);
    }

    #[test]
    fn answer_carries_flags() {
        let f = fit(1.0, 0.5, 2);
        let q = WhatIfQuery {
            level_id: "L1".into(),
            delta: 1,
            apply_correction: false,
            correction: None,
        };
        let r = answer(&f, &q).unwrap();
        assert!(r.assumes_fixed_params && !r.corrected);
        assert!((r.change - 0.0625).abs() < 1e-15);
    }
}

//! Calibration of [`NegBinParams`] against a truncated empirical distribution.
//!
//! A single fit minimises the unweighted squared error
//!
//! ```text
//! S(n, p) = sum_{m=1..M} (f̂(m) - f(m; n, p))^2
//! ```
//!
//! inside the box `[1, 10 M] × [0.001, 0.999]`. The optimiser is a projected
//! Levenberg-Marquardt in `(ln n, p)`: variables pinned at a bound with the
//! gradient pushing outwards are frozen for that step, and trial points are
//! clamped to the box.
//!
//! Because the least-squares surface has long flat valleys, the start matters.
//! [`initial_guess_search`] runs a full fit from every point of a grid over
//! the box (log-spaced in `n`, linear in `p`) and keeps the fit with the
//! smallest Kolmogorov-Smirnov distance to the data. A fit that ends on any
//! face of the box is reported as not converged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distributions::{Moments, NegBinParams};
use crate::error::{Error, Result};
use crate::ingestion::EmpiricalLevelData;
use crate::validation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryHit {
    PLow,
    PHigh,
    NLow,
    NHigh,
}

impl BoundaryHit {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryHit::PLow => "p_low",
            BoundaryHit::PHigh => "p_high",
            BoundaryHit::NLow => "n_low",
            BoundaryHit::NHigh => "n_high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitterConfig {
    /// Lower bound on `n`.
    pub n_lower: f64,
    /// Upper bound on `n` as a multiple of the move limit.
    pub n_upper_factor: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    pub grid_n_points: usize,
    pub grid_p_points: usize,
    pub nlls_max_iterations: usize,
    /// Relative objective decrease below which an undamped step ends the fit.
    pub nlls_tolerance: f64,
    /// Distance from a bound at which it counts as active. Absolute for `p`,
    /// relative to the bound for `n`.
    pub boundary_epsilon: f64,
    /// Condition 1 threshold on the KS distance.
    pub delta_condition1: f64,
}

impl Default for FitterConfig {
    fn default() -> Self {
        Self {
            n_lower: 1.0,
            n_upper_factor: 10.0,
            p_lower: 0.001,
            p_upper: 0.999,
            grid_n_points: 16,
            grid_p_points: 16,
            nlls_max_iterations: 200,
            nlls_tolerance: 1e-10,
            boundary_epsilon: 1e-6,
            delta_condition1: 0.05,
        }
    }
}

/// Box constraints for one fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub n: (f64, f64),
    pub p: (f64, f64),
}

impl Bounds {
    pub fn contains(&self, params: &NegBinParams) -> bool {
        (self.n.0..=self.n.1).contains(&params.n()) && (self.p.0..=self.p.1).contains(&params.p())
    }

    pub fn active(&self, params: &NegBinParams, epsilon: f64) -> Vec<BoundaryHit> {
        let mut hits = Vec::new();
        if params.p() - self.p.0 <= epsilon {
            hits.push(BoundaryHit::PLow);
        }
        if self.p.1 - params.p() <= epsilon {
            hits.push(BoundaryHit::PHigh);
        }
        if params.n() - self.n.0 <= epsilon * self.n.0 {
            hits.push(BoundaryHit::NLow);
        }
        if self.n.1 - params.n() <= epsilon * self.n.1 {
            hits.push(BoundaryHit::NHigh);
        }
        hits
    }
}

impl FitterConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_lower > 0.0
            && self.n_upper_factor > 0.0
            && 0.0 < self.p_lower
            && self.p_lower < self.p_upper
            && self.p_upper < 1.0
            && self.grid_n_points >= 2
            && self.grid_p_points >= 2
            && self.nlls_max_iterations >= 1
            && self.nlls_tolerance > 0.0
            && self.boundary_epsilon > 0.0
            && self.delta_condition1 > 0.0
            && self.delta_condition1 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid fitter configuration: {self:?}")))
        }
    }

    /// `[n_lower, n_upper_factor · M] × [p_lower, p_upper]`.
    pub fn bounds(&self, move_limit: u32) -> Result<Bounds> {
        let upper = self.n_upper_factor * f64::from(move_limit);
        if upper <= self.n_lower {
            return Err(Error::Domain(format!(
                "degenerate n bounds [{}, {upper}] for move limit {move_limit}",
                self.n_lower
            )));
        }
        Ok(Bounds {
            n: (self.n_lower, upper),
            p: (self.p_lower, self.p_upper),
        })
    }

    /// Grid of starting points, `n` outer and `p` inner.
    pub fn grid(&self, bounds: &Bounds) -> Vec<NegBinParams> {
        let (ln_lo, ln_hi) = (bounds.n.0.ln(), bounds.n.1.ln());
        let mut starts = Vec::with_capacity(self.grid_n_points * self.grid_p_points);
        for i in 0..self.grid_n_points {
            let t = i as f64 / (self.grid_n_points - 1) as f64;
            let n = if i + 1 == self.grid_n_points {
                bounds.n.1
            } else {
                (ln_lo + t * (ln_hi - ln_lo)).exp()
            };
            for j in 0..self.grid_p_points {
                let s = j as f64 / (self.grid_p_points - 1) as f64;
                let p = bounds.p.0 + s * (bounds.p.1 - bounds.p.0);
                starts.push(NegBinParams::new(n, p).expect("bounds lie inside the parameter domain"));
            }
        }
        starts
    }
}

/// Outcome of one bounded least-squares run.
#[derive(Debug, Clone, PartialEq)]
pub struct NllsCandidate {
    pub params: NegBinParams,
    pub objective: f64,
    pub boundary_hit: Vec<BoundaryHit>,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

/// Calibrated model for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub level_id: String,
    /// Nominal move limit `M` the completion figures refer to.
    pub move_limit: u32,
    /// Upper end of the fitted range; equals `move_limit` unless fitted untruncated.
    pub fit_range: u32,
    pub params: NegBinParams,
    pub initial_guess: NegBinParams,
    pub ks_distance: f64,
    pub objective: f64,
    /// `sum_{m=1..M} f(m)` under the fitted parameters.
    pub fitted_completion: f64,
    pub converged: bool,
    pub boundary_hit: Vec<BoundaryHit>,
    pub moments: Moments,
    pub grid_starts_evaluated: usize,
}

impl FitResult {
    pub fn condition1(&self, delta: f64) -> bool {
        validation::check_condition1(self.ks_distance, delta)
    }
}

/// Fit target: `f̂(1..=R)` and `F̂(1..=R)`.
struct Target<'a> {
    level_id: &'a str,
    densities: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<'a> Target<'a> {
    fn from_level(level: &'a EmpiricalLevelData) -> Result<Self> {
        if level.is_empty() {
            return Err(Error::Unfittable(level.level_id().to_string()));
        }
        Ok(Self {
            level_id: level.level_id(),
            densities: level.densities(),
            cumulative: level.cumulative(),
        })
    }
}

/// Model values and Jacobian columns over `m = 1..=R`.
struct Evaluation {
    values: Vec<f64>,
    d_ln_n: Vec<f64>,
    d_p: Vec<f64>,
}

fn evaluate(n: f64, p: f64, range: usize) -> Evaluation {
    let mut values = Vec::with_capacity(range);
    let mut d_ln_n = Vec::with_capacity(range);
    let mut d_p = Vec::with_capacity(range);
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    // ln f(1) = ln n + n ln(1 - p) + ln p
    let mut ln_f = n.ln() + n * ln_q + ln_p;
    // sum_{j < m} 1 / (n + j) = digamma(n + m) - digamma(n)
    let mut harmonic = 1.0 / n;
    for m in 1..=range {
        let mf = m as f64;
        let f = ln_f.exp();
        values.push(f);
        d_ln_n.push(f * n * (harmonic + ln_q));
        d_p.push(f * (mf / p - n / (1.0 - p)));
        ln_f += ((n - 1.0) / (mf + 1.0)).ln_1p() + ln_p;
        harmonic += 1.0 / (n + mf);
    }
    Evaluation { values, d_ln_n, d_p }
}

fn objective(target: &[f64], values: &[f64]) -> f64 {
    target.iter().zip(values).map(|(t, f)| (f - t) * (f - t)).sum()
}

/// Bounded NLLS from one starting point.
pub fn nlls_fit(
    level: &EmpiricalLevelData,
    initial_guess: NegBinParams,
    config: &FitterConfig,
) -> Result<NllsCandidate> {
    config.validate()?;
    let target = Target::from_level(level)?;
    let bounds = config.bounds(level.move_limit())?;
    if !bounds.contains(&initial_guess) {
        return Err(Error::Domain(format!(
            "initial guess {initial_guess:?} lies outside the search box"
        )));
    }
    run_lm(&target, &bounds, initial_guess, config)
}

fn run_lm(target: &Target<'_>, bounds: &Bounds, start: NegBinParams, config: &FitterConfig) -> Result<NllsCandidate> {
    let range = target.densities.len();
    let lo = [bounds.n.0.ln(), bounds.p.0];
    let hi = [bounds.n.1.ln(), bounds.p.1];
    let clamp = |x: [f64; 2]| [x[0].clamp(lo[0], hi[0]), x[1].clamp(lo[1], hi[1])];

    let mut x = clamp([start.n().ln(), start.p()]);
    let mut eval = evaluate(x[0].exp(), x[1], range);
    let mut obj = objective(&target.densities, &eval.values);
    if !obj.is_finite() {
        return Err(Error::Numeric(format!(
            "level {}: non-finite objective at start n={}, p={}",
            target.level_id,
            x[0].exp(),
            x[1]
        )));
    }
    let mut trace = vec![obj];
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut small_steps = 0;

    while iterations < config.nlls_max_iterations && obj > 0.0 {
        iterations += 1;
        // Normal equations for the 2-parameter problem.
        let mut jtj = [[0.0f64; 2]; 2];
        let mut grad = [0.0f64; 2];
        for i in 0..range {
            let r = eval.values[i] - target.densities[i];
            let j = [eval.d_ln_n[i], eval.d_p[i]];
            for a in 0..2 {
                grad[a] += j[a] * r;
                for b in 0..2 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let free: [bool; 2] = std::array::from_fn(|a| {
            let at_lo = x[a] <= lo[a] && grad[a] > 0.0;
            let at_hi = x[a] >= hi[a] && grad[a] < 0.0;
            !(at_lo || at_hi)
        });
        if !free[0] && !free[1] {
            break;
        }

        let mut accepted = None;
        let mut first_try = true;
        while lambda < 1e20 {
            let step = damped_step(&jtj, &grad, free, lambda);
            let trial = clamp([x[0] + step[0], x[1] + step[1]]);
            if trial == x {
                break;
            }
            let trial_eval = evaluate(trial[0].exp(), trial[1], range);
            let trial_obj = objective(&target.densities, &trial_eval.values);
            if trial_obj.is_finite() && trial_obj < obj {
                accepted = Some((trial, trial_eval, trial_obj));
                lambda = (lambda / 3.0).max(1e-12);
                break;
            }
            lambda *= 4.0;
            first_try = false;
        }
        let Some((trial, trial_eval, trial_obj)) = accepted else {
            break;
        };
        let decrease = obj - trial_obj;
        x = trial;
        eval = trial_eval;
        let previous = obj;
        obj = trial_obj;
        trace.push(obj);
        if decrease <= config.nlls_tolerance * previous {
            small_steps += 1;
            if first_try || small_steps >= 3 {
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    let params = NegBinParams::new(x[0].exp(), x[1])
        .map_err(|e| Error::Numeric(format!("level {}: optimiser left the domain: {e}", target.level_id)))?;
    Ok(NllsCandidate {
        boundary_hit: bounds.active(&params, config.boundary_epsilon),
        params,
        objective: obj,
        iterations,
        objective_trace: trace,
    })
}

/// Solves `(JᵀJ + λ diag(JᵀJ)) δ = -g` over the free variables.
fn damped_step(jtj: &[[f64; 2]; 2], grad: &[f64; 2], free: [bool; 2], lambda: f64) -> [f64; 2] {
    let diag = |a: usize| jtj[a][a].max(1e-300);
    match free {
        [true, true] => {
            let a = jtj[0][0] + lambda * diag(0);
            let d = jtj[1][1] + lambda * diag(1);
            let b = jtj[0][1];
            let det = a * d - b * b;
            if det.abs() < 1e-300 || !det.is_finite() {
                return [-grad[0] / a, -grad[1] / d];
            }
            [(-grad[0] * d + grad[1] * b) / det, (-grad[1] * a + grad[0] * b) / det]
        }
        [true, false] => [-grad[0] / (jtj[0][0] + lambda * diag(0)), 0.0],
        [false, true] => [0.0, -grad[1] / (jtj[1][1] + lambda * diag(1))],
        [false, false] => [0.0, 0.0],
    }
}

/// Multi-start calibration over the configured grid, selecting by KS distance.
pub fn initial_guess_search(level: &EmpiricalLevelData, config: &FitterConfig) -> Result<FitResult> {
    config.validate()?;
    let target = Target::from_level(level)?;
    let bounds = config.bounds(level.move_limit())?;
    search(&target, &bounds, level.move_limit(), config)
}

fn search(target: &Target<'_>, bounds: &Bounds, nominal_limit: u32, config: &FitterConfig) -> Result<FitResult> {
    let starts = config.grid(bounds);
    let mut best: Option<(f64, NllsCandidate, NegBinParams)> = None;
    let mut last_error = None;
    for start in &starts {
        let candidate = match run_lm(target, bounds, *start, config) {
            Ok(candidate) => candidate,
            Err(e) => {
                last_error = Some(e);
                continue;
            }
        };
        let d = validation::ks_from_cumulative(&target.cumulative, &candidate.params);
        if !d.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some((best_d, best_c, _)) => {
                (d, candidate.objective, candidate.params.n()) < (*best_d, best_c.objective, best_c.params.n())
            }
        };
        if better {
            best = Some((d, candidate, *start));
        }
    }
    let Some((ks_distance, candidate, initial_guess)) = best else {
        return Err(Error::FitFailed {
            level: target.level_id.to_string(),
            last_error: last_error.map_or_else(|| "no finite KS distance".into(), |e| e.to_string()),
        });
    };
    let params = candidate.params;
    Ok(FitResult {
        level_id: target.level_id.to_string(),
        move_limit: nominal_limit,
        fit_range: target.densities.len() as u32,
        params,
        initial_guess,
        ks_distance,
        objective: candidate.objective,
        fitted_completion: params.mass_in_moves(u64::from(nominal_limit)),
        converged: candidate.boundary_hit.is_empty(),
        boundary_hit: candidate.boundary_hit,
        moments: params.moments(),
        grid_starts_evaluated: starts.len(),
    })
}

/// Fits complete (uncensored) move counts over `(0, 10 M]`.
///
/// Densities are normalised by the histogram's own total. The box is the
/// same as for a truncated fit at `M`, and `fitted_completion` is reported at `M`.
pub fn fit_untruncated(
    level_id: &str,
    full_histogram: &BTreeMap<u32, u64>,
    move_limit: u32,
    config: &FitterConfig,
) -> Result<FitResult> {
    config.validate()?;
    if move_limit == 0 {
        return Err(Error::Data(format!("level {level_id}: move limit must be at least 1")));
    }
    let range = move_limit
        .checked_mul(10)
        .ok_or_else(|| Error::Data(format!("level {level_id}: move limit {move_limit} too large")))?;
    let total: u64 = full_histogram.values().sum();
    if total == 0 {
        return Err(Error::Unfittable(level_id.to_string()));
    }
    let level = EmpiricalLevelData::new(level_id, range, full_histogram.clone(), total)?;
    let target = Target::from_level(&level)?;
    let bounds = config.bounds(move_limit)?;
    search(&target, &bounds, move_limit, config)
}

//! File schemas: fit results, analytics summary, plot-ready CSV tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analytics::{self, ClusterCounts, RegressionResult};
use crate::distributions::NegBinParams;
use crate::error::{Error, Result};
use crate::fitting::{BoundaryHit, FitResult};
use crate::ingestion::EmpiricalLevelData;
use crate::validation::{self, ValidationReport};
use crate::whatif::SensitivityGrid;

/// One entry of the fit results JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub level_id: String,
    pub n: f64,
    pub p: f64,
    #[serde(rename = "D")]
    pub ks_distance: f64,
    pub fitted_completion: f64,
    pub converged: bool,
    pub boundary_hit: Vec<BoundaryHit>,
    pub mean: f64,
    pub variance: f64,
    pub scale: f64,
    pub move_limit: u32,
    pub fit_range: u32,
    pub initial_n: f64,
    pub initial_p: f64,
    pub objective: f64,
    pub grid_starts_evaluated: usize,
}

impl From<&FitResult> for FitRecord {
    fn from(fit: &FitResult) -> Self {
        Self {
            level_id: fit.level_id.clone(),
            n: fit.params.n(),
            p: fit.params.p(),
            ks_distance: fit.ks_distance,
            fitted_completion: fit.fitted_completion,
            converged: fit.converged,
            boundary_hit: fit.boundary_hit.clone(),
            mean: fit.moments.mean,
            variance: fit.moments.variance,
            scale: fit.moments.scale,
            move_limit: fit.move_limit,
            fit_range: fit.fit_range,
            initial_n: fit.initial_guess.n(),
            initial_p: fit.initial_guess.p(),
            objective: fit.objective,
            grid_starts_evaluated: fit.grid_starts_evaluated,
        }
    }
}

impl TryFrom<FitRecord> for FitResult {
    type Error = Error;

    fn try_from(record: FitRecord) -> Result<Self> {
        let params = NegBinParams::new(record.n, record.p)?;
        if record.converged && !record.boundary_hit.is_empty() {
            return Err(Error::Schema(format!(
                "level {}: converged fit lists active bounds",
                record.level_id
            )));
        }
        Ok(FitResult {
            level_id: record.level_id,
            move_limit: record.move_limit,
            fit_range: record.fit_range,
            params,
            initial_guess: NegBinParams::new(record.initial_n, record.initial_p)?,
            ks_distance: record.ks_distance,
            objective: record.objective,
            fitted_completion: record.fitted_completion,
            converged: record.converged,
            boundary_hit: record.boundary_hit,
            moments: params.moments(),
            grid_starts_evaluated: record.grid_starts_evaluated,
        })
    }
}

pub fn write_fits<W: Write>(sink: W, fits: &[FitResult]) -> Result<()> {
    let records: Vec<FitRecord> = fits.iter().map(FitRecord::from).collect();
    serde_json::to_writer_pretty(sink, &records)?;
    Ok(())
}

pub fn read_fits(text: &str) -> Result<Vec<FitResult>> {
    let records: Vec<FitRecord> = serde_json::from_str(text)?;
    records.into_iter().map(FitResult::try_from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanVarianceSummary {
    pub psi: f64,
    pub r2: f64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoglinearSummary {
    pub a: f64,
    pub b: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSummary {
    pub alpha: f64,
    pub beta: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub central: usize,
    pub p_boundary: usize,
    pub high_n: usize,
}

impl From<ClusterCounts> for ClusterSummary {
    fn from(c: ClusterCounts) -> Self {
        Self {
            central: c.central,
            p_boundary: c.p_boundary,
            high_n: c.high_n,
        }
    }
}

/// Analytics JSON. A section is `null` when its regression had too little data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsReport {
    pub mean_variance: Option<MeanVarianceSummary>,
    pub loglinear: Option<LoglinearSummary>,
    pub correction: Option<CorrectionSummary>,
    pub clusters: ClusterSummary,
}

/// Runs every cross-level analysis over matched levels and fits.
pub fn analyze(levels: &[EmpiricalLevelData], fits: &[FitResult]) -> AnalyticsReport {
    let stats: Vec<_> = levels
        .iter()
        .filter_map(|l| analytics::moves_left_stats(l).ok())
        .collect();
    let mean_variance = analytics::mean_variance_regression(&stats)
        .ok()
        .map(|r| MeanVarianceSummary {
            psi: r.coefficients[0],
            r2: r.r_squared,
            p_value: r.p_value,
        });
    let loglinear = analytics::loglinear_np_regression(fits, true)
        .ok()
        .map(|r| LoglinearSummary {
            a: r.coefficients[0],
            b: r.coefficients[1],
            r2: r.r_squared,
        });
    let correction = analytics::completion_correction_fit(&completion_pairs(levels, fits))
        .ok()
        .map(|r: RegressionResult| CorrectionSummary {
            alpha: r.coefficients[0],
            beta: r.coefficients[1],
            r2: r.r_squared,
        });
    AnalyticsReport {
        mean_variance,
        loglinear,
        correction,
        clusters: analytics::cluster_counts(fits).into(),
    }
}

/// `(ĉ, c)` for converged fits with a matching level.
pub fn completion_pairs(levels: &[EmpiricalLevelData], fits: &[FitResult]) -> Vec<(f64, f64)> {
    fits.iter()
        .filter(|f| f.converged)
        .filter_map(|f| {
            let level = levels.iter().find(|l| l.level_id() == f.level_id)?;
            Some((level.completion_rate(), f.fitted_completion))
        })
        .collect()
}

/// Validation reports for every fit with a matching level, in fit order.
pub fn validate_all(
    levels: &[EmpiricalLevelData],
    fits: &[FitResult],
    delta: f64,
    correction: Option<&validation::Correction>,
) -> Result<Vec<ValidationReport>> {
    fits.iter()
        .filter_map(|f| levels.iter().find(|l| l.level_id() == f.level_id).map(|l| (l, f)))
        .map(|(l, f)| validation::validate_level(l, f, delta, correction))
        .collect()
}

fn csv_writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink)
}

/// Observed density and fitted pmf per move, extending `extra` moves past the limit.
pub fn write_overlay_table<W: Write>(
    sink: W,
    levels: &[EmpiricalLevelData],
    fits: &[FitResult],
    extra: u32,
) -> Result<()> {
    let mut out = csv_writer(sink);
    out.write_record(["level_id", "m", "observed", "fitted"])?;
    for fit in fits {
        let level = levels.iter().find(|l| l.level_id() == fit.level_id);
        let upper = fit.move_limit + extra;
        for (i, f) in fit.params.pmf_range(1, u64::from(upper)).into_iter().enumerate() {
            let m = i as u32 + 1;
            let observed = match level {
                Some(l) if m <= l.move_limit() => l.density(m).to_string(),
                _ => String::new(),
            };
            out.write_record([fit.level_id.clone(), m.to_string(), observed, f.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// KS distance against fitted mean, with the completion-rate relative difference.
pub fn write_d_vs_mean_table<W: Write>(sink: W, levels: &[EmpiricalLevelData], fits: &[FitResult]) -> Result<()> {
    let mut out = csv_writer(sink);
    out.write_record(["level_id", "mean", "D", "relative_difference", "converged"])?;
    for fit in fits {
        let rel = levels
            .iter()
            .find(|l| l.level_id() == fit.level_id)
            .and_then(|l| validation::completion_errors(l.completion_rate(), fit.fitted_completion).relative_difference)
            .map_or_else(String::new, |r| r.to_string());
        out.write_record([
            fit.level_id.clone(),
            fit.moments.mean.to_string(),
            fit.ks_distance.to_string(),
            rel,
            fit.converged.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Fitted `(n, p)` with cluster labels.
pub fn write_np_scatter_table<W: Write>(sink: W, fits: &[FitResult]) -> Result<()> {
    let mut out = csv_writer(sink);
    out.write_record(["level_id", "n", "p", "cluster"])?;
    for fit in fits {
        out.write_record([
            fit.level_id.clone(),
            fit.params.n().to_string(),
            fit.params.p().to_string(),
            analytics::classify_cluster(fit).as_str().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sensitivity_table<W: Write>(sink: W, grid: &SensitivityGrid) -> Result<()> {
    let mut out = csv_writer(sink);
    out.write_record(["bin_lower", "bin_upper", "delta", "mean_change", "levels"])?;
    for cell in &grid.cells {
        let (lo, hi) = grid.bin_range(cell.bin);
        out.write_record([
            lo.to_string(),
            hi.to_string(),
            cell.delta.to_string(),
            cell.mean_change.to_string(),
            cell.levels.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::{initial_guess_search, FitterConfig};
    use std::collections::BTreeMap;

    fn sample_level() -> EmpiricalLevelData {
        let histogram = BTreeMap::from([(3, 40), (4, 90), (5, 120), (6, 110), (7, 80), (8, 50)]);
        EmpiricalLevelData::new("L1", 8, histogram, 700).unwrap()
    }

    #[test]
    fn fit_record_round_trip_is_exact() {
        let level = sample_level();
        let fit = initial_guess_search(&level, &FitterConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_fits(&mut buf, std::slice::from_ref(&fit)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"D\""));
        let back = read_fits(&text).unwrap();
        assert_eq!(back[0].params, fit.params);
        assert_eq!(back[0].fitted_completion, fit.fitted_completion);
        assert_eq!(back[0].ks_distance, fit.ks_distance);
    }

    #[test]
    fn tables_parse_as_csv() {
        let level = sample_level();
        let fit = initial_guess_search(&level, &FitterConfig::default()).unwrap();
        let levels = [level];
        let fits = [fit];
        let mut tables = Vec::new();
        let mut buf = Vec::new();
        write_overlay_table(&mut buf, &levels, &fits, 5).unwrap();
        tables.push((buf, 13));
        let mut buf = Vec::new();
        write_d_vs_mean_table(&mut buf, &levels, &fits).unwrap();
        tables.push((buf, 1));
        let mut buf = Vec::new();
        write_np_scatter_table(&mut buf, &fits).unwrap();
        tables.push((buf, 1));
        for (bytes, rows) in tables {
            let mut reader = csv::Reader::from_reader(bytes.as_slice());
            let parsed: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>().unwrap();
            assert_eq!(parsed.len(), rows);
        }
    }

    #[test]
    fn analytics_json_shape() {
        let level = sample_level();
        let fit = initial_guess_search(&level, &FitterConfig::default()).unwrap();
        let report = analyze(&[level], &[fit]);
        let value = serde_json::to_value(&report).unwrap();
        for key in ["mean_variance", "loglinear", "correction", "clusters"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        // One level is not enough for any regression.
        assert!(report.mean_variance.is_none());
        assert_eq!(
            report.clusters.central + report.clusters.p_boundary + report.clusters.high_n,
            1
        );
    }
}

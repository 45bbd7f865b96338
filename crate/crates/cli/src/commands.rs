use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use rayon::prelude::*;
use serde_json::json;

use movefit_core::fitting::{fit_untruncated, initial_guess_search, FitResult, FitterConfig};
use movefit_core::ingestion::{AttemptsCsvWriter, EmpiricalLevelData, IngestionConfig, LevelAccumulator};
use movefit_core::report::{self, FitRecord};
use movefit_core::synthgen::{self, CorpusSpec, LevelSpec};
use movefit_core::validation::{Correction, ValidationReport};
use movefit_core::whatif::{self, WhatIfQuery, WhatIfResponse};
use movefit_server::AppState;

use crate::inputs::{self, ensure_parent, read_json, write_json};
use crate::manifest::{self, ManifestBuilder};
use crate::{Cli, Command, CorrectionArgs, Format, InputArgs, Preset, Shared};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input files: exit 2.
    Usage(String),
    /// Anything that failed after the inputs were accepted: exit 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(message) => f.write_str(message),
            CliError::Runtime(err) => write!(f, "{err:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        CliError::Runtime(err)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Outcome {
    pub partial: bool,
}

impl Outcome {
    pub fn code(&self) -> u8 {
        u8::from(self.partial)
    }
}

const OK: Outcome = Outcome { partial: false };

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    let shared = cli.shared;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(shared.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::usage(format!("worker pool: {e}")))?;
    match cli.command {
        Command::Simulate {
            spec,
            preset,
            levels,
            contamination,
            out,
            histograms,
            truth,
        } => {
            let corpus = match (spec, preset) {
                (Some(path), _) => read_json::<CorpusSpec>(&path)?,
                (None, Some(preset)) => corpus_preset(preset, levels, shared.seed.unwrap_or(1), contamination)?,
                (None, None) => return Err(CliError::usage("either --spec or --preset is required")),
            };
            simulate(&shared, &pool, corpus, out, histograms, truth)
        }
        Command::Fit {
            input,
            out,
            tables,
            untruncated,
        } => fit(&shared, &pool, &input, &out, tables.as_deref(), untruncated),
        Command::Validate {
            input,
            fits,
            out,
            correction,
        } => validate(&shared, &input, &fits, out.as_deref(), correction),
        Command::Analyze {
            input,
            fits,
            out,
            tables,
            deltas,
            correction,
        } => analyze(&shared, &input, &fits, &out, tables.as_deref(), &deltas, &correction),
        Command::Whatif {
            fits,
            level,
            delta,
            correction,
        } => whatif_command(&shared, &fits, level.as_deref(), delta, &correction),
        Command::Serve {
            input,
            fits,
            port,
            host,
            cors,
            correction,
        } => serve(
            &shared,
            &pool,
            &input,
            fits.as_deref(),
            (host, port).into(),
            cors,
            correction,
        ),
    }
}

fn corpus_preset(preset: Preset, levels: Option<usize>, seed: u64, contamination: f64) -> Result<CorpusSpec, CliError> {
    let corpus = match preset {
        Preset::Recovery => synthgen::recovery_corpus(levels.unwrap_or(200), seed, contamination),
        Preset::Ramp => synthgen::ramp_corpus(levels.unwrap_or(50), seed),
    };
    corpus.map_err(|e| CliError::usage(e.to_string()))
}

pub fn fitter_config(shared: &Shared) -> Result<FitterConfig, CliError> {
    let config = FitterConfig {
        grid_n_points: shared.grid.0,
        grid_p_points: shared.grid.1,
        delta_condition1: shared.delta_threshold,
        ..FitterConfig::default()
    };
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    if !(shared.delta_threshold > 0.0 && shared.delta_threshold < 1.0) {
        return Err(CliError::usage("--delta-threshold must lie in (0, 1)"));
    }
    Ok(config)
}

fn correction_from(pair: Option<(f64, f64)>) -> Result<Option<Correction>, CliError> {
    pair.map(|(a, b)| Correction::new(a, b).map_err(|e| CliError::usage(format!("--correction: {e}"))))
        .transpose()
}

fn selected_correction(args: &CorrectionArgs) -> Result<Option<Correction>, CliError> {
    if args.apply_correction {
        Ok(Some(correction_from(args.correction)?.unwrap_or(Correction::REFERENCE)))
    } else {
        Ok(None)
    }
}

fn input_config(input: &InputArgs) -> serde_json::Value {
    json!({
        "input_format": format!("{:?}", input.input_format),
        "move_limit": input.move_limit,
        "ingestion": inputs::ingestion_config(input),
    })
}

fn finish_manifest(builder: ManifestBuilder, shared: &Shared, main_output: Option<&Path>) -> Result<Outcome, CliError> {
    let partial = !builder.failures.is_empty();
    for failure in &builder.failures {
        eprintln!("level {}: {}", failure.level_id, failure.error);
    }
    let path = shared
        .run_manifest
        .clone()
        .or_else(|| main_output.map(manifest::default_path));
    if let Some(path) = path {
        let manifest = builder.finish()?;
        write_json(&path, &manifest)?;
    }
    Ok(Outcome { partial })
}

fn simulate(
    shared: &Shared,
    pool: &rayon::ThreadPool,
    corpus: CorpusSpec,
    out: Option<PathBuf>,
    histograms: Option<PathBuf>,
    truth: Option<PathBuf>,
) -> Result<Outcome, CliError> {
    let levels = corpus.resolved_levels().map_err(|e| CliError::usage(e.to_string()))?;
    let truth_manifest = synthgen::manifest_for(&levels).map_err(|e| CliError::usage(e.to_string()))?;
    let main = out
        .clone()
        .or_else(|| histograms.clone())
        .expect("clap requires an output");
    let truth_path = truth.unwrap_or_else(|| main.with_extension("truth.json"));
    let mut builder = ManifestBuilder::new("simulate", serde_json::to_value(&corpus).map_err(anyhow::Error::from)?);
    let cleaning = IngestionConfig::default();

    let level_data = match &out {
        Some(path) => write_attempts(path, &levels, histograms.is_some().then_some(cleaning))?,
        None => pool.install(|| {
            levels
                .par_iter()
                .map(|spec| synthgen::level_data(spec, Some(cleaning)).map_err(|e| (spec.level_id.clone(), e)))
                .collect::<Vec<_>>()
        }),
    };
    if let Some(path) = &out {
        builder.output(path);
    }
    if let Some(path) = &histograms {
        let mut built = Vec::new();
        for item in level_data {
            match item {
                Ok(level) => built.push(level),
                Err((id, e)) => builder.fail(&id, e),
            }
        }
        write_json(path, &built)?;
        builder.output(path);
    }
    write_json(&truth_path, &truth_manifest)?;
    builder.output(&truth_path);
    finish_manifest(builder, shared, Some(&main))
}

type LevelBuild = Result<EmpiricalLevelData, (String, movefit_core::Error)>;

/// Streams telemetry to `path` (CSV, or JSON lines for `.jsonl`), building
/// cleaned histograms alongside when `cleaning` is set.
fn write_attempts(
    path: &Path,
    levels: &[LevelSpec],
    cleaning: Option<IngestionConfig>,
) -> anyhow::Result<Vec<LevelBuild>> {
    enum Sink {
        Csv(Box<AttemptsCsvWriter<BufWriter<File>>>),
        Lines(BufWriter<File>),
    }
    let file = create(path)?;
    let mut sink = if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        Sink::Lines(file)
    } else {
        Sink::Csv(Box::new(AttemptsCsvWriter::new(file)?))
    };
    let mut built = Vec::new();
    for spec in levels {
        let mut acc = match cleaning {
            Some(c) => Some(LevelAccumulator::new(&spec.level_id, spec.move_limit, Some(c))?),
            None => None,
        };
        let mut failure: Option<anyhow::Error> = None;
        synthgen::for_each_attempt(spec, |record| {
            if failure.is_some() {
                return;
            }
            let written = match &mut sink {
                Sink::Csv(w) => w.write(&record).map_err(anyhow::Error::from),
                Sink::Lines(w) => serde_json::to_writer(&mut *w, &record)
                    .map_err(anyhow::Error::from)
                    .and_then(|_| w.write_all(b"\n").map_err(anyhow::Error::from)),
            };
            let pushed = acc
                .as_mut()
                .map_or(Ok(()), |a| a.push(&record).map_err(anyhow::Error::from));
            failure = written.and(pushed).err();
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        if let Some(acc) = acc {
            built.push(acc.finish().map_err(|e| (spec.level_id.clone(), e)));
        }
    }
    match sink {
        Sink::Csv(w) => w.finish()?,
        Sink::Lines(mut w) => w.flush()?,
    }
    Ok(built)
}

fn fit(
    shared: &Shared,
    pool: &rayon::ThreadPool,
    input: &InputArgs,
    out: &Path,
    tables: Option<&Path>,
    untruncated: bool,
) -> Result<Outcome, CliError> {
    let config = fitter_config(shared)?;
    let mut builder = ManifestBuilder::new(
        "fit",
        json!({"fitter": config, "input": input_config(input), "untruncated": untruncated}),
    );
    let mut levels = Vec::new();
    let results: Vec<(String, movefit_core::Result<FitResult>)> = if untruncated {
        let raw = inputs::load_raw_histograms(input, &mut builder)?;
        pool.install(|| {
            raw.par_iter()
                .map(|h| {
                    let fit = h
                        .counts_by_move()
                        .and_then(|counts| fit_untruncated(&h.level_id, &counts, h.move_limit, &config));
                    (h.level_id.clone(), fit)
                })
                .collect()
        })
    } else {
        levels = inputs::load_levels(input, &mut builder)?;
        pool.install(|| {
            levels
                .par_iter()
                .map(|l| (l.level_id().to_string(), initial_guess_search(l, &config)))
                .collect()
        })
    };
    let mut fits = Vec::new();
    for (id, result) in results {
        match result {
            Ok(fit) => fits.push(fit),
            Err(e) => builder.fail(&id, e),
        }
    }
    fits.sort_by(|a, b| a.level_id.cmp(&b.level_id));

    ensure_parent(out)?;
    let sink = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    match shared.format {
        Format::Json => report::write_fits(sink, &fits).map_err(anyhow::Error::from)?,
        Format::Csv => write_fits_csv(sink, &fits)?,
    }
    builder.output(out);
    if let Some(dir) = tables {
        write_tables(dir, &levels, &fits, None, &mut builder)?;
    }
    finish_manifest(builder, shared, Some(out))
}

fn write_fits_csv<W: Write>(sink: W, fits: &[FitResult]) -> anyhow::Result<()> {
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    out.write_record([
        "level_id",
        "n",
        "p",
        "D",
        "fitted_completion",
        "converged",
        "boundary_hit",
        "mean",
        "variance",
        "scale",
        "move_limit",
        "fit_range",
        "initial_n",
        "initial_p",
        "objective",
        "grid_starts_evaluated",
    ])?;
    for fit in fits {
        let r = FitRecord::from(fit);
        let hits: Vec<&str> = r.boundary_hit.iter().map(|h| h.as_str()).collect();
        out.write_record([
            r.level_id,
            r.n.to_string(),
            r.p.to_string(),
            r.ks_distance.to_string(),
            r.fitted_completion.to_string(),
            r.converged.to_string(),
            hits.join(";"),
            r.mean.to_string(),
            r.variance.to_string(),
            r.scale.to_string(),
            r.move_limit.to_string(),
            r.fit_range.to_string(),
            r.initial_n.to_string(),
            r.initial_p.to_string(),
            r.objective.to_string(),
            r.grid_starts_evaluated.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    ensure_parent(path)?;
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_tables(
    dir: &Path,
    levels: &[EmpiricalLevelData],
    fits: &[FitResult],
    grid: Option<&whatif::SensitivityGrid>,
    builder: &mut ManifestBuilder,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("np_scatter.csv");
    report::write_np_scatter_table(create(&path)?, fits)?;
    builder.output(&path);
    if !levels.is_empty() {
        let path = dir.join("overlay.csv");
        report::write_overlay_table(create(&path)?, levels, fits, 10)?;
        builder.output(&path);
        let path = dir.join("d_vs_mean.csv");
        report::write_d_vs_mean_table(create(&path)?, levels, fits)?;
        builder.output(&path);
    }
    if let Some(grid) = grid {
        let path = dir.join("sensitivity.csv");
        report::write_sensitivity_table(create(&path)?, grid)?;
        builder.output(&path);
    }
    Ok(())
}

fn load_fits(path: &Path, builder: &mut ManifestBuilder) -> Result<Vec<FitResult>, CliError> {
    inputs::require_file(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    builder.input(path);
    report::read_fits(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Levels and fits matched by id; unmatched fits become failures.
fn matched(
    levels: Vec<EmpiricalLevelData>,
    fits: Vec<FitResult>,
    builder: &mut ManifestBuilder,
) -> (Vec<EmpiricalLevelData>, Vec<FitResult>) {
    let mut kept_fits = Vec::new();
    for fit in fits {
        match levels.iter().find(|l| l.level_id() == fit.level_id) {
            Some(level) if level.move_limit() == fit.move_limit => kept_fits.push(fit),
            Some(level) => builder.fail(
                &fit.level_id,
                format!(
                    "fit move limit {} differs from data move limit {}",
                    fit.move_limit,
                    level.move_limit()
                ),
            ),
            None => builder.fail(&fit.level_id, "no data for this fit"),
        }
    }
    kept_fits.sort_by(|a, b| a.level_id.cmp(&b.level_id));
    let kept_levels = levels
        .into_iter()
        .filter(|l| kept_fits.iter().any(|f| f.level_id == l.level_id()))
        .collect();
    (kept_levels, kept_fits)
}

fn validate(
    shared: &Shared,
    input: &InputArgs,
    fits_path: &Path,
    out: Option<&Path>,
    correction: Option<(f64, f64)>,
) -> Result<Outcome, CliError> {
    fitter_config(shared)?;
    let correction = correction_from(correction)?;
    let mut builder = ManifestBuilder::new(
        "validate",
        json!({"delta_threshold": shared.delta_threshold, "correction": correction, "input": input_config(input)}),
    );
    let fits = load_fits(fits_path, &mut builder)?;
    let levels = inputs::load_levels(input, &mut builder)?;
    let (levels, fits) = matched(levels, fits, &mut builder);
    let reports = report::validate_all(&levels, &fits, shared.delta_threshold, correction.as_ref())
        .map_err(anyhow::Error::from)?;
    let passed = reports.iter().filter(|r| r.condition1_pass).count();
    eprintln!("condition1_pass {passed}/{}", reports.len());
    match out {
        Some(path) => {
            let sink = create(path)?;
            write_validation(sink, &reports, shared.format)?;
            builder.output(path);
        }
        None => write_validation(std::io::stdout().lock(), &reports, shared.format)?,
    }
    finish_manifest(builder, shared, out)
}

fn write_validation<W: Write>(mut sink: W, reports: &[ValidationReport], format: Format) -> anyhow::Result<()> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut sink, reports)?;
            sink.write_all(b"\n")?;
        }
        Format::Csv => {
            let mut out = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut sink);
            out.write_record([
                "level_id",
                "ks_distance",
                "condition1_pass",
                "observed_completion",
                "fitted_completion",
                "relative_difference",
                "absolute_percentage_error",
                "corrected_completion",
            ])?;
            let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
            for r in reports {
                out.write_record([
                    r.level_id.clone(),
                    r.ks_distance.to_string(),
                    r.condition1_pass.to_string(),
                    r.observed_completion.to_string(),
                    r.fitted_completion.to_string(),
                    opt(r.relative_difference),
                    opt(r.absolute_percentage_error),
                    opt(r.corrected_completion),
                ])?;
            }
            out.flush()?;
        }
    }
    sink.flush()?;
    Ok(())
}

fn analyze(
    shared: &Shared,
    input: &InputArgs,
    fits_path: &Path,
    out: &Path,
    tables: Option<&Path>,
    deltas: &[i64],
    correction: &CorrectionArgs,
) -> Result<Outcome, CliError> {
    let correction = selected_correction(correction)?;
    let mut builder = ManifestBuilder::new(
        "analyze",
        json!({"deltas": deltas, "correction": correction, "input": input_config(input)}),
    );
    let fits = load_fits(fits_path, &mut builder)?;
    let levels = inputs::load_levels(input, &mut builder)?;
    let (levels, fits) = matched(levels, fits, &mut builder);
    let analytics = report::analyze(&levels, &fits);
    write_json(out, &analytics)?;
    builder.output(out);
    if let Some(dir) = tables {
        let grid = match whatif::sensitivity_grid(&fits, deltas, correction.as_ref()) {
            Ok(grid) => Some(grid),
            Err(e) => {
                eprintln!("sensitivity grid skipped: {e}");
                None
            }
        };
        write_tables(dir, &levels, &fits, grid.as_ref(), &mut builder)?;
    }
    finish_manifest(builder, shared, Some(out))
}

fn whatif_command(
    shared: &Shared,
    fits_path: &Path,
    level: Option<&str>,
    delta: i64,
    correction: &CorrectionArgs,
) -> Result<Outcome, CliError> {
    let correction_pair = correction_from(correction.correction)?;
    let mut builder = ManifestBuilder::new(
        "whatif",
        json!({"level": level, "delta": delta, "apply_correction": correction.apply_correction, "correction": correction_pair}),
    );
    let fits = load_fits(fits_path, &mut builder)?;
    let query = |fit: &FitResult| WhatIfQuery {
        level_id: fit.level_id.clone(),
        delta,
        apply_correction: correction.apply_correction,
        correction: correction_pair,
    };
    let selected: Vec<&FitResult> = match level {
        Some(id) => vec![fits
            .iter()
            .find(|f| f.level_id == id)
            .ok_or_else(|| CliError::usage(format!("unknown level {id}")))?],
        None => fits.iter().collect(),
    };
    let mut responses: Vec<WhatIfResponse> = Vec::new();
    for fit in selected {
        match whatif::answer(fit, &query(fit)) {
            Ok(r) => responses.push(r),
            Err(e) => builder.fail(&fit.level_id, e),
        }
    }
    if level.is_some() && responses.is_empty() {
        let failure = builder.failures.pop().expect("one failure");
        return Err(CliError::Runtime(anyhow::anyhow!(
            "level {}: {}",
            failure.level_id,
            failure.error
        )));
    }
    let mut stdout = std::io::stdout().lock();
    match shared.format {
        Format::Json => {
            match level {
                Some(_) => serde_json::to_writer_pretty(&mut stdout, &responses[0]),
                None => serde_json::to_writer_pretty(&mut stdout, &responses),
            }
            .map_err(anyhow::Error::from)?;
            stdout.write_all(b"\n").map_err(anyhow::Error::from)?;
        }
        Format::Csv => {
            let mut out = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut stdout);
            out.write_record([
                "level_id",
                "delta",
                "baseline",
                "predicted",
                "change",
                "corrected",
                "assumes_fixed_params",
            ])
            .map_err(anyhow::Error::from)?;
            for r in &responses {
                out.write_record([
                    r.level_id.clone(),
                    r.delta.to_string(),
                    r.baseline.to_string(),
                    r.predicted.to_string(),
                    r.change.to_string(),
                    r.corrected.to_string(),
                    r.assumes_fixed_params.to_string(),
                ])
                .map_err(anyhow::Error::from)?;
            }
            out.flush().map_err(anyhow::Error::from)?;
        }
    }
    finish_manifest(builder, shared, None)
}

fn serve(
    shared: &Shared,
    pool: &rayon::ThreadPool,
    input: &InputArgs,
    fits_path: Option<&Path>,
    addr: std::net::SocketAddr,
    cors: bool,
    correction: Option<(f64, f64)>,
) -> Result<Outcome, CliError> {
    let config = fitter_config(shared)?;
    let correction = correction_from(correction)?;
    let mut builder = ManifestBuilder::new("serve", json!({"fitter": config, "input": input_config(input)}));
    let levels = inputs::load_levels(input, &mut builder)?;
    let fits = match fits_path {
        Some(path) => {
            let fits = load_fits(path, &mut builder)?;
            let (_, fits) = matched(levels.clone(), fits, &mut builder);
            fits
        }
        None => {
            let results: Vec<_> = pool.install(|| {
                levels
                    .par_iter()
                    .map(|l| (l.level_id().to_string(), initial_guess_search(l, &config)))
                    .collect()
            });
            let mut fits = Vec::new();
            for (id, result) in results {
                match result {
                    Ok(fit) => fits.push(fit),
                    Err(e) => builder.fail(&id, e),
                }
            }
            fits
        }
    };
    for failure in &builder.failures {
        eprintln!("level {} not served: {}", failure.level_id, failure.error);
    }
    let levels: Vec<_> = levels
        .into_iter()
        .filter(|l| fits.iter().any(|f| f.level_id == l.level_id()))
        .collect();
    let state = AppState::new(levels, fits, config, correction).map_err(|e| CliError::usage(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(anyhow::Error::from)?;
    eprintln!("listening on http://{addr}");
    runtime
        .block_on(movefit_server::serve(Arc::new(state), addr, cors))
        .map_err(|e| CliError::usage(format!("cannot serve on {addr}: {e}")))?;
    Ok(OK)
}

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::Context;

use movefit_core::ingestion::{self, AttemptFormat, EmpiricalLevelData, HistogramJson, IngestionConfig};
use movefit_core::synthgen::TruthManifest;

use crate::commands::CliError;
use crate::manifest::ManifestBuilder;
use crate::{InputArgs, InputFormat};

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("input file not found: {}", path.display())))
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    require_file(path)?;
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn resolved_format(args: &InputArgs) -> InputFormat {
    if args.input_format != InputFormat::Auto {
        return args.input_format;
    }
    match args
        .input
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("csv") => InputFormat::AttemptsCsv,
        Some("jsonl" | "ndjson") => InputFormat::AttemptsJsonl,
        _ => InputFormat::Histograms,
    }
}

pub fn ingestion_config(args: &InputArgs) -> Option<IngestionConfig> {
    (!args.no_filter).then_some(IngestionConfig {
        booster_window_k: args.booster_window,
        restrict_attempt_index: args.attempt_index,
        drop_extra_move_attempts: !args.keep_extra_moves,
    })
}

/// Loads per-level histograms, sorted by level id. Levels that cannot be
/// built are recorded as failures in `manifest`.
pub fn load_levels(args: &InputArgs, manifest: &mut ManifestBuilder) -> Result<Vec<EmpiricalLevelData>, CliError> {
    let reader = open(&args.input)?;
    manifest.input(&args.input);
    let attempt_format = match resolved_format(args) {
        InputFormat::Histograms => {
            let mut levels = ingestion::parse_histograms(reader)
                .map_err(|e| CliError::usage(format!("{}: {e}", args.input.display())))?;
            levels.sort_by(|a, b| a.level_id().cmp(b.level_id()));
            check_unique(&levels)?;
            return Ok(levels);
        }
        InputFormat::AttemptsCsv => AttemptFormat::Csv,
        InputFormat::AttemptsJsonl => AttemptFormat::JsonLines,
        InputFormat::Auto => unreachable!("resolved above"),
    };
    let limits: Option<TruthManifest> = match &args.limits {
        Some(path) => {
            manifest.input(path);
            Some(read_json(path)?)
        }
        None => None,
    };
    let records = ingestion::parse_attempts(reader, attempt_format)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.input.display())))?;
    let config = ingestion_config(args);
    let mut levels = Vec::new();
    for (level_id, records) in ingestion::group_by_level(records) {
        let limit = match (&limits, args.move_limit) {
            (Some(truth), _) => truth.get(&level_id).map(|e| e.move_limit),
            (None, Some(m)) => Some(m),
            (None, None) => ingestion::infer_move_limit(&records),
        };
        let Some(limit) = limit else {
            manifest.fail(&level_id, "no move limit available");
            continue;
        };
        let built = match &config {
            Some(config) => ingestion::filter_attempts(&records, config, limit)
                .and_then(|out| ingestion::build_level_data(&level_id, &out.retained, limit)),
            None => ingestion::build_level_data(&level_id, &records, limit),
        };
        match built {
            Ok(level) => levels.push(level),
            Err(e) => manifest.fail(&level_id, e),
        }
    }
    Ok(levels)
}

fn check_unique(levels: &[EmpiricalLevelData]) -> Result<(), CliError> {
    for pair in levels.windows(2) {
        if pair[0].level_id() == pair[1].level_id() {
            return Err(CliError::usage(format!("duplicate level {}", pair[0].level_id())));
        }
    }
    Ok(())
}

/// Full-range histograms for untruncated fitting, keyed by level id.
pub fn load_raw_histograms(args: &InputArgs, manifest: &mut ManifestBuilder) -> Result<Vec<HistogramJson>, CliError> {
    if resolved_format(args) != InputFormat::Histograms {
        return Err(CliError::usage("untruncated fitting needs histogram input".to_string()));
    }
    let reader = open(&args.input)?;
    manifest.input(&args.input);
    let raw = ingestion::parse_raw_histograms(reader)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.input.display())))?;
    let mut by_id = BTreeMap::new();
    for h in raw {
        let id = h.level_id.clone();
        if by_id.insert(id.clone(), h).is_some() {
            return Err(CliError::usage(format!("duplicate level {id}")));
        }
    }
    Ok(by_id.into_values().collect())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value)?;
    use std::io::Write;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

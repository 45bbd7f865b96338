//! Attempt telemetry: parsing, cleaning and per-level histograms.
//!
//! Cleaning drops aborted attempts, booster attempts and (by default) attempts
//! that bought extra moves. What remains is binned into the histogram of
//! moves used by successful attempts on `(0, M]`; failures only count towards
//! the attempt total. The empirical density is normalised by the total number
//! of cleaned attempts, so its cumulative sum at `M` is the completion rate.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = [
    "level_id",
    "player_id",
    "attempt_index",
    "moves_used",
    "success",
    "aborted",
    "used_booster",
    "used_extra_moves",
];

/// One player attempt at a level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub level_id: String,
    pub player_id: String,
    /// 1-based, per player per level.
    pub attempt_index: u32,
    pub moves_used: u32,
    pub success: bool,
    /// Premature quit or technical issue.
    pub aborted: bool,
    pub used_booster: bool,
    pub used_extra_moves: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptFormat {
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestionConfig {
    /// Booster attempts ending within this many moves of the limit are counted
    /// as near-limit inflation in the drop report. All booster attempts are dropped.
    pub booster_window_k: u32,
    /// Keep only this attempt index (e.g. `Some(2)` for second attempts).
    pub restrict_attempt_index: Option<u32>,
    pub drop_extra_move_attempts: bool,
}

impl Default for IngestionConfig {
    fn default() -> Self {
        Self {
            booster_window_k: 2,
            restrict_attempt_index: None,
            drop_extra_move_attempts: true,
        }
    }
}

/// Per-reason drop counts from [`filter_attempts`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub aborted: usize,
    pub booster_near_limit: usize,
    pub booster_other: usize,
    pub extra_moves: usize,
    pub other_attempt_index: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.aborted + self.booster_near_limit + self.booster_other + self.extra_moves + self.other_attempt_index
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub retained: Vec<AttemptRecord>,
    pub dropped: DropCounts,
}

/// Truncated histogram of moves-to-complete for one level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HistogramJson", into = "HistogramJson")]
pub struct EmpiricalLevelData {
    level_id: String,
    move_limit: u32,
    histogram: BTreeMap<u32, u64>,
    total_attempts: u64,
}

/// Wire form of the aggregated histogram input.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramJson {
    pub level_id: String,
    pub move_limit: u32,
    pub counts: BTreeMap<String, u64>,
    pub total_attempts: u64,
}

impl TryFrom<HistogramJson> for EmpiricalLevelData {
    type Error = Error;

    fn try_from(raw: HistogramJson) -> Result<Self> {
        let histogram = raw.counts_by_move()?;
        EmpiricalLevelData::new(raw.level_id, raw.move_limit, histogram, raw.total_attempts)
    }
}

impl From<EmpiricalLevelData> for HistogramJson {
    fn from(level: EmpiricalLevelData) -> Self {
        HistogramJson {
            counts: level.histogram.iter().map(|(m, c)| (m.to_string(), *c)).collect(),
            level_id: level.level_id,
            move_limit: level.move_limit,
            total_attempts: level.total_attempts,
        }
    }
}

impl EmpiricalLevelData {
    /// Validates and builds a level. Zero counts are discarded.
    pub fn new(
        level_id: impl Into<String>,
        move_limit: u32,
        histogram: BTreeMap<u32, u64>,
        total_attempts: u64,
    ) -> Result<Self> {
        let level_id = level_id.into();
        if move_limit == 0 {
            return Err(Error::Data(format!("level {level_id}: move limit must be at least 1")));
        }
        if total_attempts == 0 {
            return Err(Error::EmptyLevel(level_id));
        }
        let histogram: BTreeMap<u32, u64> = histogram.into_iter().filter(|&(_, c)| c > 0).collect();
        if let Some((&m, _)) = histogram.iter().find(|&(&m, _)| m == 0 || m > move_limit) {
            return Err(Error::Data(format!(
                "level {level_id}: completion at {m} moves lies outside (0, {move_limit}]"
            )));
        }
        let completions: u64 = histogram.values().sum();
        if completions > total_attempts {
            return Err(Error::Data(format!(
                "level {level_id}: {completions} completions exceed {total_attempts} attempts"
            )));
        }
        Ok(Self {
            level_id,
            move_limit,
            histogram,
            total_attempts,
        })
    }

    pub fn level_id(&self) -> &str {
        &self.level_id
    }

    pub fn move_limit(&self) -> u32 {
        self.move_limit
    }

    pub fn histogram(&self) -> &BTreeMap<u32, u64> {
        &self.histogram
    }

    pub fn total_attempts(&self) -> u64 {
        self.total_attempts
    }

    pub fn completions(&self) -> u64 {
        self.histogram.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.histogram.is_empty()
    }

    /// Observed completion rate ĉ.
    pub fn completion_rate(&self) -> f64 {
        self.completions() as f64 / self.total_attempts as f64
    }

    /// `f̂(m) = count(m) / total_attempts`.
    pub fn density(&self, m: u32) -> f64 {
        self.histogram.get(&m).copied().unwrap_or(0) as f64 / self.total_attempts as f64
    }

    /// `f̂(1..=M)`, index `m - 1`.
    pub fn densities(&self) -> Vec<f64> {
        (1..=self.move_limit).map(|m| self.density(m)).collect()
    }

    /// `F̂(1..=M)`, index `m - 1`, from cumulative counts so that `F̂(M) = ĉ` exactly.
    pub fn cumulative(&self) -> Vec<f64> {
        let total = self.total_attempts as f64;
        let mut running = 0u64;
        (1..=self.move_limit)
            .map(|m| {
                running += self.histogram.get(&m).copied().unwrap_or(0);
                running as f64 / total
            })
            .collect()
    }

    /// Same level with every count multiplied by `factor`.
    pub fn rescaled(&self, factor: u64) -> Result<Self> {
        Self::new(
            self.level_id.clone(),
            self.move_limit,
            self.histogram.iter().map(|(&m, &c)| (m, c * factor)).collect(),
            self.total_attempts * factor,
        )
    }
}

/// Reads attempt records, preserving row order.
///
/// CSV must carry exactly the [`CSV_HEADER`] columns. JSON lines carry one
/// object per line with the same keys. Rows are numbered from 1 (the first
/// data row) in errors.
pub fn parse_attempts<R: Read>(source: R, format: AttemptFormat) -> Result<Vec<AttemptRecord>> {
    match format {
        AttemptFormat::Csv => parse_csv(source),
        AttemptFormat::JsonLines => parse_json_lines(source),
    }
}

fn check_columns<'a>(columns: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = Vec::new();
    for column in columns {
        if !CSV_HEADER.contains(&column) {
            return Err(Error::Schema(format!("unknown column {column:?}")));
        }
        if seen.contains(&column) {
            return Err(Error::Schema(format!("duplicate column {column:?}")));
        }
        seen.push(column);
    }
    if let Some(missing) = CSV_HEADER.iter().find(|c| !seen.contains(c)) {
        return Err(Error::Schema(format!("missing column {missing:?}")));
    }
    Ok(())
}

fn parse_csv<R: Read>(source: R) -> Result<Vec<AttemptRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    check_columns(headers.iter())?;
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<AttemptRecord>().enumerate() {
        let record = row.map_err(|e| Error::Parse {
            row: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

fn parse_json_lines<R: Read>(source: R) -> Result<Vec<AttemptRecord>> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: i + 1,
            message: e.to_string(),
        })?;
        let object = value.as_object().ok_or_else(|| Error::Parse {
            row: i + 1,
            message: "expected a JSON object".into(),
        })?;
        check_columns(object.keys().map(String::as_str))?;
        let record = serde_json::from_value(value).map_err(|e| Error::Parse {
            row: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes records in the attempts CSV layout.
pub fn write_attempts_csv<W: Write>(sink: W, records: &[AttemptRecord]) -> Result<()> {
    let mut writer = AttemptsCsvWriter::new(sink)?;
    for record in records {
        writer.write(record)?;
    }
    writer.finish()
}

/// Streaming form of [`write_attempts_csv`].
pub struct AttemptsCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> AttemptsCsvWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(sink);
        inner.write_record(CSV_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, record: &AttemptRecord) -> Result<()> {
        self.inner.serialize(record)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

/// Applies the cleaning rules to one level's attempts.
pub fn filter_attempts(records: &[AttemptRecord], config: &IngestionConfig, move_limit: u32) -> Result<FilterOutcome> {
    if let Some(first) = records.first() {
        if let Some(other) = records.iter().find(|r| r.level_id != first.level_id) {
            return Err(Error::InputContract(format!(
                "filter_attempts expects one level, saw {} and {}",
                first.level_id, other.level_id
            )));
        }
    }
    if config.booster_window_k > move_limit {
        return Err(Error::InputContract(format!(
            "booster window {} exceeds move limit {move_limit}",
            config.booster_window_k
        )));
    }
    let mut dropped = DropCounts::default();
    let mut retained = Vec::with_capacity(records.len());
    for record in records {
        if dropped.record(record, config, move_limit) {
            retained.push(record.clone());
        }
    }
    Ok(FilterOutcome { retained, dropped })
}

impl DropCounts {
    /// Applies the cleaning rules to one record, counting it if dropped.
    /// Returns whether the record is kept.
    fn record(&mut self, record: &AttemptRecord, config: &IngestionConfig, move_limit: u32) -> bool {
        if record.aborted {
            self.aborted += 1;
        } else if record.used_booster {
            if record.moves_used + config.booster_window_k >= move_limit {
                self.booster_near_limit += 1;
            } else {
                self.booster_other += 1;
            }
        } else if config.drop_extra_move_attempts && record.used_extra_moves {
            self.extra_moves += 1;
        } else if config.restrict_attempt_index.is_some_and(|i| record.attempt_index != i) {
            self.other_attempt_index += 1;
        } else {
            return true;
        }
        false
    }
}

/// Streaming filter and binner for one level, equivalent to
/// [`filter_attempts`] followed by [`build_level_data`] without holding the
/// records.
#[derive(Debug, Clone)]
pub struct LevelAccumulator {
    level_id: String,
    move_limit: u32,
    config: Option<IngestionConfig>,
    histogram: BTreeMap<u32, u64>,
    attempts: u64,
    dropped: DropCounts,
}

impl LevelAccumulator {
    /// `config = None` keeps every record, as an unfiltered pipeline would.
    pub fn new(level_id: &str, move_limit: u32, config: Option<IngestionConfig>) -> Result<Self> {
        if move_limit == 0 {
            return Err(Error::Data(format!("level {level_id}: move limit must be at least 1")));
        }
        if let Some(c) = &config {
            if c.booster_window_k > move_limit {
                return Err(Error::InputContract(format!(
                    "booster window {} exceeds move limit {move_limit}",
                    c.booster_window_k
                )));
            }
        }
        Ok(Self {
            level_id: level_id.to_string(),
            move_limit,
            config,
            histogram: BTreeMap::new(),
            attempts: 0,
            dropped: DropCounts::default(),
        })
    }

    pub fn push(&mut self, record: &AttemptRecord) -> Result<()> {
        if record.level_id != self.level_id {
            return Err(Error::InputContract(format!(
                "accumulator for {} received a record of {}",
                self.level_id, record.level_id
            )));
        }
        if let Some(config) = &self.config {
            if !self.dropped.record(record, config, self.move_limit) {
                return Ok(());
            }
        }
        if record.success {
            if record.moves_used == 0 || record.moves_used > self.move_limit {
                return Err(Error::Data(format!(
                    "level {}: success with {} moves outside (0, {}] (player {}, attempt {})",
                    self.level_id, record.moves_used, self.move_limit, record.player_id, record.attempt_index
                )));
            }
            *self.histogram.entry(record.moves_used).or_insert(0) += 1;
        }
        self.attempts += 1;
        Ok(())
    }

    pub fn dropped(&self) -> &DropCounts {
        &self.dropped
    }

    pub fn finish(self) -> Result<EmpiricalLevelData> {
        if self.attempts == 0 {
            return Err(Error::EmptyLevel(self.level_id));
        }
        EmpiricalLevelData::new(&self.level_id, self.move_limit, self.histogram, self.attempts)
    }
}

/// Bins cleaned attempts into an [`EmpiricalLevelData`].
pub fn build_level_data(level_id: &str, records: &[AttemptRecord], move_limit: u32) -> Result<EmpiricalLevelData> {
    if move_limit == 0 {
        return Err(Error::Data(format!("level {level_id}: move limit must be at least 1")));
    }
    if records.is_empty() {
        return Err(Error::EmptyLevel(level_id.to_string()));
    }
    let mut histogram = BTreeMap::new();
    for record in records.iter().filter(|r| r.success) {
        if record.moves_used == 0 || record.moves_used > move_limit {
            return Err(Error::Data(format!(
                "level {level_id}: success with {} moves outside (0, {move_limit}] (player {}, attempt {})",
                record.moves_used, record.player_id, record.attempt_index
            )));
        }
        *histogram.entry(record.moves_used).or_insert(0u64) += 1;
    }
    EmpiricalLevelData::new(level_id, move_limit, histogram, records.len() as u64)
}

/// Groups records by level, keeping per-level row order.
pub fn group_by_level(records: Vec<AttemptRecord>) -> BTreeMap<String, Vec<AttemptRecord>> {
    let mut levels: BTreeMap<String, Vec<AttemptRecord>> = BTreeMap::new();
    for record in records {
        levels.entry(record.level_id.clone()).or_default().push(record);
    }
    levels
}

/// Move limit implied by the telemetry when none is supplied.
///
/// Plain failures always run to the limit, so it is their largest move count.
/// Without any, the largest clean success is used as a lower bound.
pub fn infer_move_limit(records: &[AttemptRecord]) -> Option<u32> {
    let clean = || {
        records
            .iter()
            .filter(|r| !r.aborted && !r.used_extra_moves && !r.used_booster)
    };
    clean()
        .filter(|r| !r.success)
        .map(|r| r.moves_used)
        .max()
        .or_else(|| clean().map(|r| r.moves_used).max())
        .filter(|&m| m > 0)
}

/// Reads aggregated histograms: one object, an array, or one object per line.
pub fn parse_histograms<R: Read>(source: R) -> Result<Vec<EmpiricalLevelData>> {
    parse_json_objects(source)
}

/// As [`parse_histograms`] but without the truncation check, for full-range
/// counts that extend past the move limit.
pub fn parse_raw_histograms<R: Read>(source: R) -> Result<Vec<HistogramJson>> {
    parse_json_objects(source)
}

fn parse_json_objects<T: serde::de::DeserializeOwned, R: Read>(mut source: R) -> Result<Vec<T>> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return Ok(serde_json::from_str(trimmed)?);
    }
    let mut items = Vec::new();
    for value in serde_json::Deserializer::from_str(trimmed).into_iter::<T>() {
        items.push(value?);
    }
    Ok(items)
}

impl HistogramJson {
    pub fn counts_by_move(&self) -> Result<BTreeMap<u32, u64>> {
        let mut histogram = BTreeMap::new();
        for (key, &count) in &self.counts {
            let m: u32 = key
                .trim()
                .parse()
                .map_err(|_| Error::Schema(format!("histogram key {key:?} is not a move count")))?;
            *histogram.entry(m).or_insert(0) += count;
        }
        Ok(histogram)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attempt(moves: u32, success: bool) -> AttemptRecord {
        AttemptRecord {
            level_id: "L1".into(),
            player_id: "P".into(),
            attempt_index: 1,
            moves_used: moves,
            success,
            aborted: false,
            used_booster: false,
            used_extra_moves: false,
        }
    }

    const CSV: &str = "level_id,player_id,attempt_index,moves_used,success,aborted,used_booster,used_extra_moves\n\
L1,a,1,10,false,false,false,false\n\
L1,a,2,7,true,false,false,false\n\
L2,b,1,3,true,false,true,false\n";

    #[test]
    fn parses_csv_rows_in_order() {
        let records = parse_attempts(CSV.as_bytes(), AttemptFormat::Csv).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[1].moves_used, 7);
        assert!(records[1].success);
        assert_eq!(records[2].level_id, "L2");
        assert!(records[2].used_booster);
    }

    #[test]
    fn csv_bad_value_reports_row() {
        let text = CSV.replace("L1,a,2,7,", "L1,a,2,abc,");
        match parse_attempts(text.as_bytes(), AttemptFormat::Csv) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_unknown_column() {
        let text = "level_id,player_id,attempt_index,moves_used,success,aborted,used_booster,used_extra_moves,score\n";
        assert!(matches!(
            parse_attempts(text.as_bytes(), AttemptFormat::Csv),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn csv_header_only_is_empty() {
        let text = format!("{}\n", CSV_HEADER.join(","));
        assert!(parse_attempts(text.as_bytes(), AttemptFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn json_lines_round_trip() {
        let records = parse_attempts(CSV.as_bytes(), AttemptFormat::Csv).unwrap();
        let text: String = records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        assert_eq!(
            parse_attempts(text.as_bytes(), AttemptFormat::JsonLines).unwrap(),
            records
        );
        let bad = text.replace("\"aborted\"", "\"quit\"");
        assert!(matches!(
            parse_attempts(bad.as_bytes(), AttemptFormat::JsonLines),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn csv_writer_matches_parser() {
        let records = parse_attempts(CSV.as_bytes(), AttemptFormat::Csv).unwrap();
        let mut buf = Vec::new();
        write_attempts_csv(&mut buf, &records).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV);
    }

    #[test]
    fn accumulator_matches_filter_then_build() {
        let mut records: Vec<AttemptRecord> = (1..=30).map(|i| attempt(i % 11, i % 11 != 0 && i % 3 != 0)).collect();
        records
            .iter_mut()
            .filter(|r| !r.success)
            .for_each(|r| r.moves_used = 10);
        records[4].used_booster = true;
        records[7].aborted = true;
        records[9].used_extra_moves = true;
        let config = IngestionConfig::default();
        let filtered = filter_attempts(&records, &config, 10).unwrap();
        let expected = build_level_data("L1", &filtered.retained, 10).unwrap();
        let mut acc = LevelAccumulator::new("L1", 10, Some(config)).unwrap();
        records.iter().for_each(|r| acc.push(r).unwrap());
        assert_eq!(acc.dropped(), &filtered.dropped);
        assert_eq!(acc.finish().unwrap(), expected);

        let mut raw = LevelAccumulator::new("L1", 10, None).unwrap();
        records.iter().for_each(|r| raw.push(r).unwrap());
        assert_eq!(raw.finish().unwrap(), build_level_data("L1", &records, 10).unwrap());

        let mut other = LevelAccumulator::new("L2", 10, None).unwrap();
        assert!(matches!(other.push(&records[0]), Err(Error::InputContract(_))));
    }

    #[test]
    fn filter_drops_by_reason() {
        let mut aborted = attempt(4, false);
        aborted.aborted = true;
        let mut booster = attempt(9, true);
        booster.used_booster = true;
        let mut extra = attempt(12, true);
        extra.used_extra_moves = true;
        let clean = attempt(6, true);
        let records = vec![aborted, booster, extra, clean.clone()];
        let out = filter_attempts(&records, &IngestionConfig::default(), 10).unwrap();
        assert_eq!(out.retained, vec![clean]);
        assert_eq!(out.dropped.aborted, 1);
        assert_eq!(out.dropped.booster_near_limit, 1);
        assert_eq!(out.dropped.extra_moves, 1);
        assert_eq!(out.retained.len() + out.dropped.total(), records.len());

        let keep_extra = IngestionConfig {
            drop_extra_move_attempts: false,
            ..Default::default()
        };
        assert_eq!(filter_attempts(&records, &keep_extra, 10).unwrap().retained.len(), 2);
    }

    #[test]
    fn filter_restricts_attempt_index() {
        let mut second = attempt(5, true);
        second.attempt_index = 2;
        let records = vec![attempt(10, false), second.clone()];
        let config = IngestionConfig {
            restrict_attempt_index: Some(2),
            ..Default::default()
        };
        let out = filter_attempts(&records, &config, 10).unwrap();
        assert_eq!(out.retained, vec![second]);
        assert_eq!(out.dropped.other_attempt_index, 1);
    }

    #[test]
    fn filter_rejects_mixed_levels() {
        let mut other = attempt(3, true);
        other.level_id = "L2".into();
        let err = filter_attempts(&[attempt(3, true), other], &IngestionConfig::default(), 10);
        assert!(matches!(err, Err(Error::InputContract(_))));
    }

    #[test]
    fn builds_histogram_and_rate() {
        let mut records: Vec<_> = [5, 6, 6, 8].iter().map(|&m| attempt(m, true)).collect();
        records.extend((0..6).map(|_| attempt(10, false)));
        let level = build_level_data("L1", &records, 10).unwrap();
        assert_eq!(level.density(5), 0.1);
        assert_eq!(level.density(6), 0.2);
        assert_eq!(level.density(8), 0.1);
        assert_eq!(level.completion_rate(), 0.4);
        assert_eq!(*level.cumulative().last().unwrap(), level.completion_rate());
    }

    #[test]
    fn all_failures_give_empty_histogram() {
        let records: Vec<_> = (0..10).map(|_| attempt(10, false)).collect();
        let level = build_level_data("L1", &records, 10).unwrap();
        assert!(level.is_empty());
        assert_eq!(level.completion_rate(), 0.0);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(matches!(build_level_data("L1", &[], 10), Err(Error::EmptyLevel(_))));
        assert!(matches!(
            build_level_data("L1", &[attempt(11, true)], 10),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            build_level_data("L1", &[attempt(0, true)], 10),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn infers_limit_from_failures() {
        let records = vec![attempt(4, true), attempt(15, false), attempt(9, true)];
        assert_eq!(infer_move_limit(&records), Some(15));
        assert_eq!(infer_move_limit(&records[..1]), Some(4));
        assert_eq!(infer_move_limit(&[]), None);
    }

    #[test]
    fn histogram_json_forms() {
        let one = r#"{"level_id":"A","move_limit":5,"counts":{"1":2,"5":3},"total_attempts":10}"#;
        let levels = parse_histograms(one.as_bytes()).unwrap();
        assert_eq!(levels.len(), 1);
        assert_eq!(levels[0].completion_rate(), 0.5);

        let array = format!("[{one},{}]", one.replace("\"A\"", "\"B\""));
        assert_eq!(parse_histograms(array.as_bytes()).unwrap().len(), 2);
        let lines = format!("{one}\n{}\n", one.replace("\"A\"", "\"B\""));
        assert_eq!(parse_histograms(lines.as_bytes()).unwrap()[1].level_id(), "B");

        let out_of_range = one.replace("\"5\":3", "\"6\":3");
        assert!(parse_histograms(out_of_range.as_bytes()).is_err());
    }
}

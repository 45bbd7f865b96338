//! Synthetic telemetry from known parameters.
//!
//! Each player draws a number of moves `m*` from the true distribution per
//! attempt (zeros are redrawn). `m* <= M` is a success that ends the player's
//! run; otherwise the attempt fails at `M` moves and the player retries, up to
//! a cap. With the contamination rate an attempt instead becomes a booster
//! success ending within two moves of the limit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distributions::{NegBinParams, NeumaierSum};
use crate::error::{Error, Result};
use crate::fitting::FitterConfig;
use crate::ingestion::{AttemptRecord, EmpiricalLevelData, IngestionConfig, LevelAccumulator};

/// Largest admissible `f(0)`.
pub const MAX_ZERO_MASS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub level_id: String,
    pub params: NegBinParams,
    pub move_limit: u32,
    pub num_players: u32,
    pub max_attempts_per_player: u32,
    #[serde(default)]
    pub booster_contamination_rate: f64,
    pub seed: u64,
}

impl LevelSpec {
    pub fn validate(&self) -> Result<()> {
        let id = &self.level_id;
        if self.move_limit == 0 {
            return Err(Error::Spec(format!("{id}: move limit must be at least 1")));
        }
        if self.num_players == 0 || self.max_attempts_per_player == 0 {
            return Err(Error::Spec(format!("{id}: players and attempt cap must be positive")));
        }
        if !(0.0..1.0).contains(&self.booster_contamination_rate) {
            return Err(Error::Spec(format!(
                "{id}: contamination rate {} outside [0, 1)",
                self.booster_contamination_rate
            )));
        }
        let zero = self.params.pmf(0);
        if zero > MAX_ZERO_MASS {
            return Err(Error::Spec(format!(
                "{id}: f(0) = {zero:.3e} exceeds {MAX_ZERO_MASS:e}"
            )));
        }
        Ok(())
    }
}

/// Per-attempt success probability under the zero-redraw rule,
/// `(F(M) - f(0)) / (1 - f(0))`.
pub fn oracle_completion_rate(spec: &LevelSpec) -> Result<f64> {
    spec.validate()?;
    let zero = spec.params.pmf(0);
    Ok(spec.params.mass_in_moves(u64::from(spec.move_limit)) / (1.0 - zero))
}

/// Inverse-cdf sampler for `m*` conditioned on `m* >= 1`, returning `None`
/// beyond the move limit.
struct CensoredSampler {
    /// `P(1 <= m* <= k)` for `k = 1..=M`, conditioned on `m* >= 1`.
    cumulative: Vec<f64>,
}

impl CensoredSampler {
    fn new(params: &NegBinParams, move_limit: u32) -> Self {
        let zero = params.pmf(0);
        let mut acc = NeumaierSum::default();
        let cumulative = params
            .pmf_range(1, u64::from(move_limit))
            .into_iter()
            .map(|f| {
                acc.add(f);
                acc.total() / (1.0 - zero)
            })
            .collect();
        Self { cumulative }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<u32> {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        (idx < self.cumulative.len()).then_some(idx as u32 + 1)
    }
}

/// Generates one level's attempts. Output is a pure function of `spec`.
pub fn generate_level(spec: &LevelSpec) -> Result<Vec<AttemptRecord>> {
    let mut records = Vec::new();
    for_each_attempt(spec, |record| records.push(record))?;
    Ok(records)
}

/// Streaming form of [`generate_level`].
pub fn for_each_attempt(spec: &LevelSpec, mut emit: impl FnMut(AttemptRecord)) -> Result<()> {
    spec.validate()?;
    let sampler = CensoredSampler::new(&spec.params, spec.move_limit);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let limit = spec.move_limit;
    let contaminate = spec.booster_contamination_rate;
    for player in 0..spec.num_players {
        let player_id = format!("P{player}");
        for attempt in 1..=spec.max_attempts_per_player {
            let mut record = AttemptRecord {
                level_id: spec.level_id.clone(),
                player_id: player_id.clone(),
                attempt_index: attempt,
                moves_used: limit,
                success: false,
                aborted: false,
                used_booster: false,
                used_extra_moves: false,
            };
            if contaminate > 0.0 && rng.random::<f64>() < contaminate {
                let back = rng.random_range(0..=2u32);
                record.moves_used = limit.saturating_sub(back).max(1);
                record.success = true;
                record.used_booster = true;
            } else if let Some(m) = sampler.draw(&mut rng) {
                record.moves_used = m;
                record.success = true;
            }
            let done = record.success;
            emit(record);
            if done {
                break;
            }
        }
    }
    Ok(())
}

/// Generates a level straight into its histogram. `config = None` skips the
/// cleaning rules.
pub fn level_data(spec: &LevelSpec, config: Option<IngestionConfig>) -> Result<EmpiricalLevelData> {
    let mut acc = LevelAccumulator::new(&spec.level_id, spec.move_limit, config)?;
    let mut failure = None;
    for_each_attempt(spec, |record| {
        if failure.is_none() {
            if let Err(e) = acc.push(&record) {
                failure = Some(e);
            }
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => acc.finish(),
    }
}

/// Recovery design: `ln n ~ U[ln 5, ln 60]`, `p ~ U[0.2, 0.8]` (redrawn while
/// `f(0) > MAX_ZERO_MASS`), `M` at a truth quantile drawn from `U[0.4, 0.9]`,
/// 100 000 players retrying up to 1000 times, so every level logs at least
/// 10^5 attempts.
pub fn recovery_corpus(count: usize, seed: u64, booster_contamination_rate: f64) -> Result<CorpusSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels = Vec::with_capacity(count);
    while levels.len() < count {
        let n = rng.random_range(5f64.ln()..60f64.ln()).exp();
        let p = rng.random_range(0.2..0.8);
        let params = NegBinParams::new(n, p)?;
        if params.pmf(0) > MAX_ZERO_MASS {
            continue;
        }
        let q = rng.random_range(0.4..0.9);
        let index = levels.len();
        levels.push(LevelSpec {
            level_id: format!("L{index:03}"),
            params,
            move_limit: params.quantile(q)?.max(1) as u32,
            num_players: 100_000,
            max_attempts_per_player: 1000,
            booster_contamination_rate,
            seed: rng.random(),
        });
    }
    Ok(CorpusSpec {
        levels,
        shared_p: None,
        planted_loglinear: None,
        seed,
    })
}

/// Ramp-only design: `M ~ U{10..40}`, `n ~ U[2, 6]`, truth mean drawn from
/// `U[5M, 10M]` (so the pmf still rises at `M`), 1000 players with 100
/// attempts each.
pub fn ramp_corpus(count: usize, seed: u64) -> Result<CorpusSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels = Vec::with_capacity(count);
    while levels.len() < count {
        let move_limit: u32 = rng.random_range(10..=40);
        let n = rng.random_range(2.0..6.0);
        let mean = rng.random_range(5.0..10.0) * f64::from(move_limit);
        let params = NegBinParams::new(n, mean / (n + mean))?;
        if params.pmf(0) > MAX_ZERO_MASS {
            continue;
        }
        let index = levels.len();
        levels.push(LevelSpec {
            level_id: format!("R{index:03}"),
            params,
            move_limit,
            num_players: 1000,
            max_attempts_per_player: 100,
            booster_contamination_rate: 0.0,
            seed: rng.random(),
        });
    }
    Ok(CorpusSpec {
        levels,
        shared_p: None,
        planted_loglinear: None,
        seed,
    })
}

/// Log-linear law `ln n = a p + b + N(0, σ²)` planted into a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedLoglinear {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub levels: Vec<LevelSpec>,
    /// Overrides every level's `p`.
    #[serde(default)]
    pub shared_p: Option<f64>,
    /// Overrides every level's `n` from its (possibly shared) `p`.
    #[serde(default)]
    pub planted_loglinear: Option<PlantedLoglinear>,
    /// Seed for corpus-level noise such as the planted log-linear scatter.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub level_id: String,
    pub n: f64,
    pub p: f64,
    pub move_limit: u32,
    pub oracle_completion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub levels: Vec<TruthEntry>,
}

impl TruthManifest {
    pub fn get(&self, level_id: &str) -> Option<&TruthEntry> {
        self.levels.iter().find(|e| e.level_id == level_id)
    }
}

impl CorpusSpec {
    /// Level specs with `shared_p` and `planted_loglinear` applied. Planted
    /// parameters are checked against the default fitter box.
    pub fn resolved_levels(&self) -> Result<Vec<LevelSpec>> {
        let box_config = FitterConfig::default();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.levels.len());
        for level in &self.levels {
            let mut level = level.clone();
            let mut p = level.params.p();
            let mut n = level.params.n();
            if let Some(shared) = self.shared_p {
                p = shared;
            }
            if let Some(plant) = self.planted_loglinear {
                let noise = if plant.noise_sigma > 0.0 {
                    Normal::new(0.0, plant.noise_sigma)
                        .map_err(|e| Error::Spec(format!("bad noise sigma: {e}")))?
                        .sample(&mut noise_rng)
                } else {
                    0.0
                };
                n = (plant.a * p + plant.b + noise).exp();
            }
            level.params = NegBinParams::new(n, p).map_err(|e| Error::Spec(format!("{}: {e}", level.level_id)))?;
            let planted = self.shared_p.is_some() || self.planted_loglinear.is_some();
            let bounds = box_config.bounds(level.move_limit)?;
            if planted && !bounds.contains(&level.params) {
                return Err(Error::Spec(format!(
                    "{}: planted parameters n={n}, p={p} fall outside the fitter box",
                    level.level_id
                )));
            }
            level.validate()?;
            out.push(level);
        }
        Ok(out)
    }

    pub fn manifest(&self) -> Result<TruthManifest> {
        manifest_for(&self.resolved_levels()?)
    }
}

pub fn manifest_for(levels: &[LevelSpec]) -> Result<TruthManifest> {
    let levels = levels
        .iter()
        .map(|spec| {
            Ok(TruthEntry {
                level_id: spec.level_id.clone(),
                n: spec.params.n(),
                p: spec.params.p(),
                move_limit: spec.move_limit,
                oracle_completion: oracle_completion_rate(spec)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TruthManifest { levels })
}

/// Telemetry plus the truth manifest of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub attempts: Vec<AttemptRecord>,
    pub manifest: TruthManifest,
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let levels = spec.resolved_levels()?;
    let mut attempts = Vec::new();
    for level in &levels {
        for_each_attempt(level, |r| attempts.push(r))?;
    }
    Ok(Corpus {
        attempts,
        manifest: manifest_for(&levels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: f64, p: f64, move_limit: u32) -> LevelSpec {
        LevelSpec {
            level_id: "S1".into(),
            params: NegBinParams::new(n, p).unwrap(),
            move_limit,
            num_players: 2000,
            max_attempts_per_player: 1000,
            booster_contamination_rate: 0.0,
            seed: 9,
        }
    }

    #[test]
    fn streaming_level_data_matches_records() {
        let mut s = spec(12.0, 0.6, 14);
        s.booster_contamination_rate = 0.05;
        let records = generate_level(&s).unwrap();
        let config = IngestionConfig::default();
        let kept = crate::ingestion::filter_attempts(&records, &config, 14)
            .unwrap()
            .retained;
        let expected = crate::ingestion::build_level_data("S1", &kept, 14).unwrap();
        assert_eq!(level_data(&s, Some(config)).unwrap(), expected);
        let raw = crate::ingestion::build_level_data("S1", &records, 14).unwrap();
        assert_eq!(level_data(&s, None).unwrap(), raw);
    }

    #[test]
    fn recovery_design_ranges() {
        let corpus = recovery_corpus(60, 3, 0.0).unwrap();
        let levels = corpus.resolved_levels().unwrap();
        assert_eq!(levels.len(), 60);
        for l in &levels {
            let (n, p) = (l.params.n(), l.params.p());
            assert!((5.0..60.0).contains(&n) && (0.2..0.8).contains(&p));
            assert!(l.params.pmf(0) <= MAX_ZERO_MASS);
            let q = l.params.cdf(u64::from(l.move_limit));
            assert!(q >= 0.4 && l.params.cdf(u64::from(l.move_limit) - 1) < 0.9, "{q}");
        }
        assert_eq!(recovery_corpus(60, 3, 0.0).unwrap(), corpus);
    }

    #[test]
    fn ramp_design_rises_at_limit() {
        for l in ramp_corpus(40, 5).unwrap().resolved_levels().unwrap() {
            let m = u64::from(l.move_limit);
            assert!(l.params.moments().mean >= 5.0 * m as f64);
            assert!(l.params.mode() >= m);
            assert!(l.params.pmf(0) <= MAX_ZERO_MASS);
        }
    }

    #[test]
    fn oracle_closed_form() {
        // f(0) = 0.5 violates the spec invariant, so evaluate the formula directly.
        let params = NegBinParams::new(1.0, 0.5).unwrap();
        let rate = params.mass_in_moves(2) / (1.0 - params.pmf(0));
        assert!((rate - 0.75).abs() < 1e-15);

        let wide = spec(30.0, 0.5, 100_000);
        assert!((oracle_completion_rate(&wide).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_large_zero_mass() {
        assert!(matches!(spec(1.0, 0.5, 5).validate(), Err(Error::Spec(_))));
        let mut s = spec(30.0, 0.5, 40);
        s.booster_contamination_rate = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn every_player_finishes_once() {
        let s = spec(20.0, 0.6, 25);
        let records = generate_level(&s).unwrap();
        let successes = records.iter().filter(|r| r.success).count();
        assert_eq!(successes, s.num_players as usize);
        for r in &records {
            if r.success {
                assert!(r.moves_used >= 1 && r.moves_used <= s.move_limit);
            } else {
                assert_eq!(r.moves_used, s.move_limit);
            }
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let s = spec(20.0, 0.6, 25);
        assert_eq!(generate_level(&s).unwrap(), generate_level(&s).unwrap());
        let mut other = s.clone();
        other.seed += 1;
        assert_ne!(generate_level(&s).unwrap(), generate_level(&other).unwrap());
    }

    #[test]
    fn contamination_near_limit() {
        let mut s = spec(20.0, 0.6, 25);
        s.booster_contamination_rate = 0.2;
        let records = generate_level(&s).unwrap();
        let boosted: Vec<_> = records.iter().filter(|r| r.used_booster).collect();
        assert!(!boosted.is_empty());
        assert!(boosted.iter().all(|r| r.success && r.moves_used >= 23));
    }

    #[test]
    fn shared_p_and_planted_law() {
        let levels: Vec<_> = (0..50)
            .map(|i| LevelSpec {
                level_id: format!("L{i}"),
                ..spec(20.0 + i as f64, 0.7, 30)
            })
            .collect();
        let corpus = CorpusSpec {
            levels: levels.clone(),
            shared_p: Some(0.5),
            planted_loglinear: None,
            seed: 0,
        };
        assert!(corpus.manifest().unwrap().levels.iter().all(|e| e.p == 0.5));

        let planted = CorpusSpec {
            levels,
            shared_p: None,
            planted_loglinear: Some(PlantedLoglinear {
                a: 3.0,
                b: 1.0,
                noise_sigma: 0.0,
            }),
            seed: 0,
        };
        for e in planted.manifest().unwrap().levels {
            assert!((e.n.ln() - (3.0 * e.p + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn planted_outside_box_rejected() {
        // n = 20 exceeds the box ceiling 10 M = 10.
        let mut corpus = CorpusSpec {
            levels: vec![spec(20.0, 0.6, 1)],
            shared_p: Some(0.6),
            planted_loglinear: None,
            seed: 0,
        };
        assert!(matches!(corpus.resolved_levels(), Err(Error::Spec(_))));
        corpus.shared_p = None;
        assert!(corpus.resolved_levels().is_ok());
    }
}

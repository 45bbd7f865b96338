use std::collections::BTreeMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use movefit_core::distributions::NegBinParams;
use movefit_core::ingestion::IngestionConfig;
use movefit_core::synthgen::{self, LevelSpec};

/// `C(m+n-1, m) (1-p)^n p^m` through log-gamma, written out independently.
fn pmf_oracle(n: f64, p: f64, m: u64) -> f64 {
    let mf = m as f64;
    (ln_gamma(mf + n) - ln_gamma(n) - ln_gamma(mf + 1.0) + n * (1.0 - p).ln() + mf * p.ln()).exp()
}

#[test]
fn pmf_matches_log_gamma_form() {
    for &(n, p) in &[(1.0, 0.5), (3.7, 0.2), (25.0, 0.75), (400.0, 0.1), (2.0, 0.999)] {
        let params = NegBinParams::new(n, p).unwrap();
        for m in [0u64, 1, 2, 7, 30, 150] {
            let want = pmf_oracle(n, p, m);
            let got = params.pmf(m);
            assert!(
                (got - want).abs() <= 1e-12 * want.max(1e-300),
                "n={n} p={p} m={m}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn integer_n_matches_binomial_coefficient() {
    // n = 3: C(m+2, m) = (m+1)(m+2)/2.
    let params = NegBinParams::new(3.0, 0.4).unwrap();
    for m in 0..20u64 {
        let c = ((m + 1) * (m + 2) / 2) as f64;
        let want = c * 0.6f64.powi(3) * 0.4f64.powi(m as i32);
        assert!((params.pmf(m) - want).abs() <= 1e-14);
    }
}

#[test]
fn sampler_passes_chi_squared() {
    let params = NegBinParams::new(5.0, 0.6).unwrap();
    let count = 100_000usize;
    let draws = params.sample(42, count);
    let mut observed: BTreeMap<u64, f64> = BTreeMap::new();
    for d in draws {
        *observed.entry(d).or_default() += 1.0;
    }
    // Bins 0..=k with expected count >= 5, the tail pooled into the last bin.
    let mut k = 0u64;
    while (1.0 - params.cdf(k + 1)) * count as f64 >= 5.0 {
        k += 1;
    }
    let mut stat = 0.0;
    for m in 0..=k {
        let expected = params.pmf(m) * count as f64;
        let o = observed.get(&m).copied().unwrap_or(0.0);
        stat += (o - expected).powi(2) / expected;
    }
    let tail_expected = (1.0 - params.cdf(k)) * count as f64;
    let tail_observed: f64 = observed.range(k + 1..).map(|(_, c)| c).sum();
    stat += (tail_observed - tail_expected).powi(2) / tail_expected;
    let dof = (k + 1) as f64;
    let critical = ChiSquared::new(dof).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi2 {stat} vs {critical} on {dof} dof");
}

#[test]
fn quantile_brackets_cdf() {
    let params = NegBinParams::new(9.0, 0.55).unwrap();
    for q in [0.01, 0.25, 0.5, 0.9, 0.999] {
        let m = params.quantile(q).unwrap();
        assert!(params.cdf(m) >= q);
        if m > 0 {
            assert!(params.cdf(m - 1) < q);
        }
    }
}

fn spec(contamination: f64) -> LevelSpec {
    LevelSpec {
        level_id: "S".into(),
        params: NegBinParams::new(14.0, 0.55).unwrap(),
        move_limit: 18,
        num_players: 40_000,
        max_attempts_per_player: 50,
        booster_contamination_rate: contamination,
        seed: 77,
    }
}

#[test]
fn simulated_completion_matches_oracle() {
    let spec = spec(0.0);
    let level = synthgen::level_data(&spec, Some(IngestionConfig::default())).unwrap();
    let oracle = synthgen::oracle_completion_rate(&spec).unwrap();
    // Oracle written out: mass on 1..=M renormalised after redrawing zeros.
    let zero = pmf_oracle(14.0, 0.55, 0);
    let direct: f64 = (1..=18).map(|m| pmf_oracle(14.0, 0.55, m)).sum::<f64>() / (1.0 - zero);
    assert!((oracle - direct).abs() < 1e-12);

    let attempts = level.total_attempts() as f64;
    let se = (oracle * (1.0 - oracle) / attempts).sqrt();
    assert!((level.completion_rate() - oracle).abs() < 4.0 * se);
    for m in [5u32, 10, 15, 18] {
        let f = pmf_oracle(14.0, 0.55, u64::from(m)) / (1.0 - zero);
        let se = (f * (1.0 - f) / attempts).sqrt();
        assert!((level.density(m) - f).abs() < 4.0 * se, "m={m}");
    }
}

#[test]
fn contamination_rate_is_respected() {
    let spec = spec(0.1);
    let records = synthgen::generate_level(&spec).unwrap();
    let boosted = records.iter().filter(|r| r.used_booster).count() as f64;
    let total = records.len() as f64;
    let se = (0.1 * 0.9 / total).sqrt();
    assert!((boosted / total - 0.1).abs() < 4.0 * se);
    // Booster wins land within two moves of the limit.
    assert!(records
        .iter()
        .filter(|r| r.used_booster)
        .all(|r| r.success && r.moves_used + 2 >= spec.move_limit));
    // Every player stops at the first success or the attempt cap.
    let mut per_player: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for r in &records {
        per_player.entry(&r.player_id).or_default().push(r.success);
    }
    for attempts in per_player.values() {
        let (last, before) = attempts.split_last().unwrap();
        assert!(before.iter().all(|s| !s));
        assert!(*last || attempts.len() == spec.max_attempts_per_player as usize);
    }
}

#[test]
fn generation_is_a_function_of_the_spec() {
    let mut small = spec(0.05);
    small.num_players = 500;
    assert_eq!(
        synthgen::generate_level(&small).unwrap(),
        synthgen::generate_level(&small).unwrap()
    );
    let mut other = small.clone();
    other.seed += 1;
    assert_ne!(
        synthgen::generate_level(&small).unwrap(),
        synthgen::generate_level(&other).unwrap()
    );
}

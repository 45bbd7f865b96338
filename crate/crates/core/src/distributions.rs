//! Negative binomial probability kernel.
//!
//! The pmf is
//!
//! ```text
//! f(m) = C(m + n - 1, m) (1 - p)^n p^m,   m = 0, 1, 2, ...
//! ```
//!
//! so `p` is the base of the `p^m` factor and larger `p` means a longer right
//! tail. Everything else here (moments, scale, mode) is derived from that form:
//!
//! ```text
//! mean  = n p / (1 - p)
//! var   = n p / (1 - p)^2 = mean / (1 - p)
//! scale = p / (1 - p)
//! ```
//!
//! Some references write the same family with `p` and `1 - p` swapped, which
//! gives `mean = n (1 - p) / p` and `scale = (1 - p) / p`. Converting between
//! the two is a matter of replacing `p` by `1 - p`; see
//! [`NegBinParams::complementary_p`].
//!
//! `n` may be any positive real. Evaluation happens in log space, using
//! log-gamma for single points and a log-space recurrence for contiguous
//! ranges, so large `n` and `m` do not overflow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Shape `n > 0` and tail probability `0 < p < 1` of a negative binomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct NegBinParams {
    n: f64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    n: f64,
    p: f64,
}

impl TryFrom<RawParams> for NegBinParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        NegBinParams::new(raw.n, raw.p)
    }
}

impl From<NegBinParams> for RawParams {
    fn from(params: NegBinParams) -> Self {
        RawParams {
            n: params.n,
            p: params.p,
        }
    }
}

/// Mean, variance and scale of a [`NegBinParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub scale: f64,
}

impl NegBinParams {
    pub fn new(n: f64, p: f64) -> Result<Self> {
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Domain(format!("n must be a positive finite real, got {n}")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("p must lie in (0, 1), got {p}")));
        }
        Ok(Self { n, p })
    }

    /// Builds parameters from a shape and a scale `p / (1 - p)`.
    pub fn from_scale(n: f64, scale: f64) -> Result<Self> {
        Self::new(n, scale_to_p(scale)?)
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `1 - p`, i.e. the `p` of the swapped convention.
    pub fn complementary_p(&self) -> f64 {
        1.0 - self.p
    }

    /// `ln f(m)` via log-gamma.
    pub fn ln_pmf(&self, m: u64) -> f64 {
        let m = m as f64;
        let ln_binom = ln_gamma(m + self.n) - ln_gamma(self.n) - ln_gamma(m + 1.0);
        ln_binom + self.n * (-self.p).ln_1p() + m * self.p.ln()
    }

    pub fn pmf(&self, m: u64) -> f64 {
        self.ln_pmf(m).exp()
    }

    /// `f(m)` for every `m` in `from..=to`.
    ///
    /// Anchored with one log-gamma evaluation at `from`, then advanced with
    /// `ln f(m+1) = ln f(m) + ln((m + n) / (m + 1)) + ln p`.
    pub fn pmf_range(&self, from: u64, to: u64) -> Vec<f64> {
        if to < from {
            return Vec::new();
        }
        let mut out = Vec::with_capacity((to - from + 1) as usize);
        let ln_p = self.p.ln();
        let mut ln_f = self.ln_pmf(from);
        out.push(ln_f.exp());
        for m in from..to {
            let m = m as f64;
            ln_f += ((self.n - 1.0) / (m + 1.0)).ln_1p() + ln_p;
            out.push(ln_f.exp());
        }
        out
    }

    /// `F(m) = sum_{k <= m} f(k)`.
    pub fn cdf(&self, m: u64) -> f64 {
        let mode = self.mode();
        let ln_p = self.p.ln();
        let mut ln_f = self.ln_pmf(0);
        let mut acc = NeumaierSum::default();
        for k in 0..=m {
            let term = ln_f.exp();
            acc.add(term);
            if k >= mode {
                // Past the mode successive ratios are at most max(ratio, p) < 1,
                // so the rest of the series is bounded geometrically.
                let ratio = ((k as f64 + self.n) / (k as f64 + 1.0)) * self.p;
                let bound = ratio.max(self.p);
                if bound < 1.0 && term * bound / (1.0 - bound) < 1e-17 * acc.total() {
                    break;
                }
            }
            ln_f += ((self.n - 1.0) / (k as f64 + 1.0)).ln_1p() + ln_p;
        }
        acc.total().min(1.0)
    }

    /// Sum of `f(m)` over `1..=upper`, the model's completion rate at move limit `upper`.
    pub fn mass_in_moves(&self, upper: u64) -> f64 {
        if upper == 0 {
            return 0.0;
        }
        let mut acc = NeumaierSum::default();
        for f in self.pmf_range(1, upper) {
            acc.add(f);
        }
        acc.total()
    }

    pub fn moments(&self) -> Moments {
        let q = 1.0 - self.p;
        let mean = self.n * self.p / q;
        Moments {
            mean,
            variance: mean / q,
            scale: self.p / q,
        }
    }

    /// Largest `m` maximising the pmf. The pmf is non-increasing from here on.
    pub fn mode(&self) -> u64 {
        if self.n <= 1.0 {
            0
        } else {
            ((self.n - 1.0) * self.p / (1.0 - self.p)).floor() as u64
        }
    }

    /// Smallest `m` with `F(m) >= q`.
    pub fn quantile(&self, q: f64) -> Result<u64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {q}")));
        }
        let ln_p = self.p.ln();
        let mut ln_f = self.ln_pmf(0);
        let mut acc = NeumaierSum::default();
        let mut m = 0u64;
        loop {
            acc.add(ln_f.exp());
            if acc.total() >= q {
                return Ok(m);
            }
            ln_f += ((self.n - 1.0) / (m as f64 + 1.0)).ln_1p() + ln_p;
            m += 1;
            if ln_f == f64::NEG_INFINITY && m > self.mode() {
                // Remaining mass underflows; rounding kept the sum just short of q.
                return Ok(m);
            }
        }
    }

    /// `count` independent draws, deterministic in `seed`.
    ///
    /// Draws use the gamma-Poisson mixture: `lambda ~ Gamma(n, p / (1 - p))`,
    /// then `X ~ Poisson(lambda)`.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, count)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<u64> {
        let gamma = Gamma::new(self.n, self.p / (1.0 - self.p)).expect("validated parameters");
        (0..count)
            .map(|_| {
                let lambda: f64 = gamma.sample(rng);
                if lambda <= 0.0 {
                    return 0;
                }
                match Poisson::new(lambda) {
                    Ok(poisson) => {
                        let draw: f64 = poisson.sample(rng);
                        draw as u64
                    }
                    Err(_) => lambda.round() as u64,
                }
            })
            .collect()
    }
}

/// `p = scale / (1 + scale)`, the inverse of [`Moments::scale`].
pub fn scale_to_p(scale: f64) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Domain(format!("scale must be positive and finite, got {scale}")));
    }
    Ok(scale / (1.0 + scale))
}

/// Compensated summation; partial sums of many small pmf terms stay accurate.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

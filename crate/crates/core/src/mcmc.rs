//! Small pieces shared by both samplers: run lengths, step-size adaptation,
//! conjugate draws.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration counts. `iterations` includes the burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
}

fn one() -> usize {
    1
}

impl McmcSettings {
    pub fn new(iterations: usize, burn_in: usize, thin: usize) -> Result<Self> {
        let s = Self {
            iterations,
            burn_in,
            thin,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether iteration `t` (0-based) is stored.
    pub fn keep(&self, t: usize) -> bool {
        t >= self.burn_in && (t - self.burn_in) % self.thin == 0
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Robbins-Monro update of a log step size toward a target acceptance rate.
#[derive(Debug, Clone, Copy)]
pub struct StepAdapter {
    pub target: f64,
    pub decay: f64,
}

impl Default for StepAdapter {
    fn default() -> Self {
        Self {
            target: 0.35,
            decay: 0.6,
        }
    }
}

impl StepAdapter {
    /// New step after observing acceptance probability `alpha` at iteration `t`.
    pub fn adapt(&self, step: f64, alpha: f64, t: usize) -> f64 {
        let gain = (t as f64 + 1.0).powf(-self.decay);
        (step.ln() + gain * (alpha - self.target)).exp()
    }
}

/// `log N(x; mean, var)`.
pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw from InvGamma(shape, rate), i.e. `1 / Gamma(shape, scale = 1/rate)`.
pub fn inv_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("inverse-gamma parameters must be positive");
    1.0 / g.sample(rng)
}

/// Accept/reject on the log scale; returns `(accepted, acceptance probability)`.
pub fn metropolis<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> (bool, f64) {
    let alpha = if log_ratio.is_nan() {
        0.0
    } else {
        log_ratio.min(0.0).exp()
    };
    let accept = alpha >= 1.0 || rng.random::<f64>() < alpha;
    (accept, alpha)
}

/// `splitmix64` mixing, used to derive per-replicate seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = (seed ^ index).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Equal-tailed interval from an unsorted sample (type-7 quantiles).
pub fn equal_tailed(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    (sorted_quantile(&v, a), sorted_quantile(&v, 1.0 - a))
}

/// Type-7 quantile of sorted data.
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

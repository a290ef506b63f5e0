//! Pólya-Gamma random variates `PG(b, c)`.
//!
//! `PG(1, c)` uses Devroye's alternating-series rejection sampler (the
//! `J*(1, c/2) / 4` construction). Integer `b` sums independent `PG(1, c)`
//! draws. Non-integer `b` uses the truncated gamma-series representation
//!
//! ```text
//! w = 1/(2 pi^2) sum_{k=1}^{K} g_k / ((k - 1/2)^2 + c^2 / (4 pi^2)),  g_k ~ Gamma(b, 1)
//! ```
//!
//! plus the deterministic mean of the omitted tail, so `E[w]` is exact.

use std::f64::consts::{FRAC_2_PI, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Default number of gamma terms kept in the series sampler.
pub const DEFAULT_TRUNCATION: usize = 200;
const MIN_TRUNCATION: usize = 50;
// switch point between the truncated exponential and inverse-Gaussian proposals
const TRUNC: f64 = 0.64;

/// `E[PG(b, c)] = b / (2c) tanh(c / 2)`, with the limit `b / 4` at `c = 0`.
pub fn pg_mean(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-8 {
        b / 4.0
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}

/// `Var[PG(b, c)]`.
pub fn pg_variance(b: f64, c: f64) -> f64 {
    let c = c.abs();
    if c < 1e-3 {
        // series in c^2 around the b/24 limit
        b * (1.0 / 24.0 - c * c / 240.0)
    } else {
        let sech = 1.0 / (0.5 * c).cosh();
        b / (4.0 * c.powi(3)) * (c.sinh() - c) * sech * sech
    }
}

/// Pólya-Gamma sampler. The generator is passed per call so a chain can share
/// one stream across all of its updates.
#[derive(Debug, Clone, Copy)]
pub struct PgSampler {
    truncation: usize,
}

impl Default for PgSampler {
    fn default() -> Self {
        Self {
            truncation: DEFAULT_TRUNCATION,
        }
    }
}

impl PgSampler {
    pub fn new(truncation: usize) -> Result<Self> {
        if truncation < MIN_TRUNCATION {
            return Err(Error::InvalidArgument(format!(
                "series truncation {truncation} is below the minimum {MIN_TRUNCATION}"
            )));
        }
        Ok(Self { truncation })
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// One draw from `PG(b, c)`.
    pub fn draw<R: Rng + ?Sized>(&self, b: f64, c: f64, rng: &mut R) -> Result<f64> {
        if !b.is_finite() || b <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "PG shape b must be finite and positive, got {b}"
            )));
        }
        if !c.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "PG tilt c must be finite, got {c}"
            )));
        }
        let c = c.abs();
        if b.fract() == 0.0 && b <= u32::MAX as f64 {
            let n = b as u64;
            Ok((0..n).map(|_| draw_pg1(c, rng)).sum())
        } else {
            self.draw_series(b, c, rng)
        }
    }

    /// Truncated gamma-series draw, valid for any real `b > 0`.
    pub fn draw_series<R: Rng + ?Sized>(&self, b: f64, c: f64, rng: &mut R) -> Result<f64> {
        let gamma =
            Gamma::new(b, 1.0).map_err(|e| Error::InvalidArgument(format!("PG shape {b}: {e}")))?;
        let shift = c * c / (4.0 * PI * PI);
        let mut sum = 0.0;
        let mut partial_mean = 0.0;
        for k in 1..=self.truncation {
            let h = k as f64 - 0.5;
            let d = h * h + shift;
            sum += gamma.sample(rng) / d;
            partial_mean += 1.0 / d;
        }
        let scale = 1.0 / (2.0 * PI * PI);
        let tail = (pg_mean(b, c) - scale * b * partial_mean).max(0.0);
        Ok(scale * sum + tail)
    }
}

/// Convenience wrapper using the default truncation.
pub fn pg_draw<R: Rng + ?Sized>(b: f64, c: f64, rng: &mut R) -> Result<f64> {
    PgSampler::default().draw(b, c, rng)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Term `a_n(x)` of the alternating series for the `J*(1, z)` density.
fn series_term(n: u32, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

/// Probability of drawing from the right (exponential) proposal region.
fn right_mass(z: f64) -> f64 {
    let t = TRUNC;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + std_normal_cdf(b).ln();
    let xa = x0 + z + std_normal_cdf(a).ln();
    let qdivp = 2.0 * FRAC_2_PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + qdivp)
}

/// Inverse-Gaussian(1/z, 1) truncated to `(0, TRUNC)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let r = TRUNC;
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > r {
        loop {
            let (mut e1, mut e2): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
            while e1 * e1 > 2.0 * e2 / r {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            let x = r / ((1.0 + r * e1) * (1.0 + r * e1));
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        loop {
            let y: f64 = StandardNormal.sample(rng);
            let y = y * y;
            let mut x =
                mu + 0.5 * mu * mu * y - 0.5 * mu * (4.0 * mu * y + (mu * y).powi(2)).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= r {
                return x;
            }
        }
    }
}

/// Exact `PG(1, c)` draw, `c >= 0`.
fn draw_pg1<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    let z = 0.5 * c;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let mass = right_mass(z);
    loop {
        let x = if rng.random::<f64>() < mass {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_term(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_term(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_term(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

//! Base distributions whose quantile functions generate the piecewise basis.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Distribution family `F` used by the piecewise quantile basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum BaseFamily {
    /// Standard normal.
    Gaussian,
    /// Gamma with the given shape and scale.
    Gamma { shape: f64, scale: f64 },
}

impl Default for BaseFamily {
    fn default() -> Self {
        BaseFamily::Gamma {
            shape: 5.0,
            scale: 1.0,
        }
    }
}

impl BaseFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaseFamily::Gaussian => Ok(()),
            BaseFamily::Gamma { shape, scale } => {
                if !(shape > 0.0 && shape.is_finite()) {
                    return Err(Error::Domain {
                        what: "gamma shape",
                        value: shape,
                        domain: "(0, inf)",
                    });
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::Domain {
                        what: "gamma scale",
                        value: scale,
                        domain: "(0, inf)",
                    });
                }
                Ok(())
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            BaseFamily::Gaussian => 0.5 * erfc(-x / std::f64::consts::SQRT_2),
            BaseFamily::Gamma { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else if x.is_infinite() {
                    1.0
                } else {
                    gamma_lr(shape, x / scale)
                }
            }
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            BaseFamily::Gaussian => -0.5 * x * x - LN_SQRT_2PI,
            BaseFamily::Gamma { shape, scale } => {
                if x < 0.0 || x.is_infinite() {
                    return f64::NEG_INFINITY;
                }
                if x == 0.0 {
                    return if shape < 1.0 {
                        f64::INFINITY
                    } else if shape == 1.0 {
                        -scale.ln()
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                let z = x / scale;
                (shape - 1.0) * z.ln() - z - ln_gamma(shape) - scale.ln()
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Quantile function `F^{-1}(p)`; returns the support endpoints at 0 and 1.
    pub fn quantile(&self, p: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&p), "probability {p} outside [0,1]");
        match *self {
            BaseFamily::Gaussian => standard_normal_quantile(p),
            BaseFamily::Gamma { shape, scale } => scale * gamma_quantile(shape, p),
        }
    }
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Quantile of the unit-scale Gamma(`shape`, 1) distribution.
///
/// Safeguarded Halley iteration on the regularized incomplete gamma
/// function. The upper tail is solved against `Q(a, x) = 1 - p` so that
/// probabilities like `1 - 1e-9` keep full relative accuracy.
pub fn gamma_quantile(shape: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let upper = p > 0.5;
    let target = if upper { 1.0 - p } else { p };
    let ln_norm = ln_gamma(shape);

    // residual r(x) = P(a,x) - p, expressed in whichever tail is accurate
    let residual = |x: f64| -> f64 {
        if upper {
            target - gamma_ur(shape, x)
        } else {
            gamma_lr(shape, x) - target
        }
    };

    let mut x = initial_gamma_guess(shape, p, ln_norm);

    // bracket
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    for _ in 0..200 {
        let r = residual(x);
        if r == 0.0 {
            return x;
        }
        if r < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let ln_pdf = (shape - 1.0) * x.ln() - x - ln_norm;
        let pdf = ln_pdf.exp();
        let mut next = if pdf > 0.0 && pdf.is_finite() {
            let newton = r / pdf;
            // Halley correction for the gamma density: f'/f = (a-1)/x - 1
            let curv = (shape - 1.0) / x - 1.0;
            let denom = 1.0 - 0.5 * newton * curv;
            let step = if denom > 0.5 { newton / denom } else { newton };
            x - step
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * x.max(1e-300)
            };
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs() {
            return next;
        }
        x = next;
    }
    x
}

fn initial_gamma_guess(shape: f64, p: f64, ln_norm: f64) -> f64 {
    // Wilson-Hilferty, falling back to the small-x series P(a,x) ~ x^a / Gamma(a+1)
    let z = standard_normal_quantile(p);
    let c = 1.0 / (9.0 * shape);
    let wh = shape * (1.0 - c + z * c.sqrt()).powi(3);
    let series = ((p.ln() + ln_norm + shape.ln()) / shape).exp();
    if wh > 0.0 && (p > 0.05 || wh < series) {
        wh
    } else {
        series.max(f64::MIN_POSITIVE)
    }
}

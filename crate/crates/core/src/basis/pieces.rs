//! Piecewise Gaussian / Gamma quantile bases and the quantile functions they span.
//!
//! On knot interval `[k_l, k_{l+1})` only `B_l` varies, so every quantile
//! function `Q = theta_0 + sum_l B_l theta_l` is, piece by piece, an affine
//! image of the base quantile `F^{-1}`. Inversion and density evaluation use
//! that structure directly.

use serde::{Deserialize, Serialize};

use crate::basis::family::BaseFamily;
use crate::error::{Error, Result};

/// Lower clip on quantile levels used for inversion and simulation.
pub const LOWER_CLIP: f64 = 1e-8;
/// Upper clip; the base quantile is never evaluated at exactly 1.
pub const UPPER_CLIP: f64 = 1e-9;
/// Default floor `nu` on the shape coefficients.
pub const DEFAULT_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PieceKind {
    /// Anchored at the upper knot, constant below the interval.
    Left,
    /// Anchored at the lower knot, constant above the interval.
    Right,
    /// Single piece covering `[0, 1]`: `B_1 = F^{-1}`.
    Full,
}

/// Piecewise basis `B_1, ..., B_L` built from a base family on equally spaced knots.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PieceBasisSpec", into = "PieceBasisSpec")]
pub struct QuantilePieceBasis {
    family: BaseFamily,
    knots: Vec<f64>,
    knot_quantiles: Vec<f64>,
    kinds: Vec<PieceKind>,
    lower_clip_quantile: f64,
    upper_clip_quantile: f64,
}

/// Serialized form of a [`QuantilePieceBasis`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PieceBasisSpec {
    #[serde(flatten)]
    pub family: BaseFamily,
    pub pieces: usize,
}

impl TryFrom<PieceBasisSpec> for QuantilePieceBasis {
    type Error = Error;
    fn try_from(spec: PieceBasisSpec) -> Result<Self> {
        QuantilePieceBasis::new(spec.family, spec.pieces)
    }
}

impl From<QuantilePieceBasis> for PieceBasisSpec {
    fn from(b: QuantilePieceBasis) -> Self {
        PieceBasisSpec {
            family: b.family,
            pieces: b.len(),
        }
    }
}

impl QuantilePieceBasis {
    /// `pieces` basis functions on the knots `0, 1/L, ..., 1`.
    pub fn new(family: BaseFamily, pieces: usize) -> Result<Self> {
        family.validate()?;
        if pieces == 0 {
            return Err(Error::InvalidArgument(
                "quantile basis needs at least one piece".into(),
            ));
        }
        let knots: Vec<f64> = (0..=pieces).map(|k| k as f64 / pieces as f64).collect();
        let knot_quantiles = knots.iter().map(|&k| family.quantile(k)).collect();
        let kinds = if pieces == 1 {
            vec![PieceKind::Full]
        } else {
            knots[..pieces]
                .iter()
                .map(|&k| {
                    if k < 0.5 {
                        PieceKind::Left
                    } else {
                        PieceKind::Right
                    }
                })
                .collect()
        };
        Ok(Self {
            family,
            knots,
            knot_quantiles,
            kinds,
            lower_clip_quantile: family.quantile(LOWER_CLIP),
            upper_clip_quantile: family.quantile(1.0 - UPPER_CLIP),
        })
    }

    /// Piecewise Gamma(5, 1) basis.
    pub fn gamma(pieces: usize) -> Result<Self> {
        Self::new(BaseFamily::default(), pieces)
    }

    pub fn family(&self) -> BaseFamily {
        self.family
    }

    /// Number of non-intercept basis functions `L`.
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn check_piece(&self, l: usize) -> Result<usize> {
        if l == 0 || l > self.len() {
            return Err(Error::InvalidArgument(format!(
                "basis index {l} outside 1..={}",
                self.len()
            )));
        }
        Ok(l - 1)
    }

    /// Index `j` (0-based) of the knot interval containing `t`; `t = 1` maps to the last.
    pub(crate) fn interval_of(&self, t: f64) -> usize {
        let l = self.len();
        let j = (t * l as f64).floor() as usize;
        let mut j = j.min(l - 1);
        // guard against rounding at the knots
        while j > 0 && t < self.knots[j] {
            j -= 1;
        }
        while j + 1 < l && t >= self.knots[j + 1] {
            j += 1;
        }
        j
    }

    /// `B_l` evaluated at knot index `i` using tabulated base quantiles.
    fn piece_at_knot(&self, j: usize, i: usize) -> f64 {
        let q = &self.knot_quantiles;
        match self.kinds[j] {
            PieceKind::Full => q[i],
            PieceKind::Left => {
                if i <= j {
                    q[j] - q[j + 1]
                } else {
                    0.0
                }
            }
            PieceKind::Right => {
                if i <= j {
                    0.0
                } else {
                    q[j + 1] - q[j]
                }
            }
        }
    }

    fn piece_value(&self, j: usize, t: f64) -> f64 {
        let (lo, hi) = (self.knots[j], self.knots[j + 1]);
        let q = &self.knot_quantiles;
        match self.kinds[j] {
            PieceKind::Full => self.family.quantile(t),
            PieceKind::Left => {
                if t < lo {
                    q[j] - q[j + 1]
                } else if t < hi {
                    self.family.quantile(t) - q[j + 1]
                } else {
                    0.0
                }
            }
            PieceKind::Right => {
                if t < lo {
                    0.0
                } else if t < hi {
                    self.family.quantile(t) - q[j]
                } else {
                    q[j + 1] - q[j]
                }
            }
        }
    }

    /// `B_l(t)` for `l` in `1..=L`. Returns `+inf` for the last piece at `t = 1`.
    pub fn eval(&self, l: usize, t: f64) -> Result<f64> {
        let j = self.check_piece(l)?;
        check_level(t)?;
        Ok(self.piece_value(j, t))
    }

    /// `dB_l/dt`, which is `1 / f(F^{-1}(t))` on the active interval and 0 elsewhere.
    pub fn derivative(&self, l: usize, t: f64) -> Result<f64> {
        let j = self.check_piece(l)?;
        check_level(t)?;
        let active =
            self.kinds[j] == PieceKind::Full || (t >= self.knots[j] && t < self.knots[j + 1]);
        if !active {
            return Ok(0.0);
        }
        let u = self.family.quantile(t);
        Ok((-self.family.ln_pdf(u)).exp())
    }

    /// The augmented vector `(1, B_1(t), ..., B_L(t))`.
    pub fn eval_augmented(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() + 1);
        out.push(1.0);
        let j = self.interval_of(t);
        let base = self.family.quantile(t);
        for (k, kind) in self.kinds.iter().enumerate() {
            let v = match kind {
                PieceKind::Full => base,
                _ if k == j => match kind {
                    PieceKind::Left => base - self.knot_quantiles[k + 1],
                    _ => base - self.knot_quantiles[k],
                },
                _ => self.piece_at_knot(k, if k < j { k + 1 } else { k }),
            };
            out.push(v);
        }
        out
    }
}

fn check_level(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain {
            what: "quantile level",
            value: t,
            domain: "[0, 1]",
        });
    }
    Ok(())
}

/// Coefficients `(theta_0, theta_1, ..., theta_L)` of one quantile function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    /// `theta_0`, the group median for symmetric knot grids.
    pub median: f64,
    /// Shape coefficients `theta_1..theta_L`, each at least the floor.
    pub shape: Vec<f64>,
}

impl ThetaVector {
    /// Validated constructor; every shape coefficient must be `>= floor > 0`.
    pub fn new(median: f64, shape: Vec<f64>, floor: f64) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::Domain {
                what: "coefficient floor",
                value: floor,
                domain: "(0, inf)",
            });
        }
        if !median.is_finite() {
            return Err(Error::InvalidArgument("theta_0 must be finite".into()));
        }
        if let Some(&bad) = shape.iter().find(|&&s| !(s >= floor) || !s.is_finite()) {
            return Err(Error::Domain {
                what: "shape coefficient",
                value: bad,
                domain: "[floor, inf)",
            });
        }
        Ok(Self { median, shape })
    }

    /// Applies `theta_l = max(theta*_l, floor)` to latent coefficients.
    pub fn from_latent(median: f64, latent: &[f64], floor: f64) -> Self {
        Self {
            median,
            shape: latent.iter().map(|&s| s.max(floor)).collect(),
        }
    }

    /// `(theta_0, theta_1, ..., theta_L)` as one vector.
    pub fn to_augmented(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.shape.len() + 1);
        v.push(self.median);
        v.extend_from_slice(&self.shape);
        v
    }

    pub fn from_augmented(v: &[f64]) -> Self {
        Self {
            median: v[0],
            shape: v[1..].to_vec(),
        }
    }
}

/// A quantile function `Q(t) = theta_0 + sum_l B_l(t) theta_l` prepared for fast
/// evaluation, inversion and density computation.
///
/// On piece `j`, `Q(t) = anchor_j + theta_j (F^{-1}(t) - base_anchor_j)`.
#[derive(Debug, Clone)]
pub struct QuantileCurve<'a> {
    basis: &'a QuantilePieceBasis,
    coefs: Vec<f64>,
    ln_coefs: Vec<f64>,
    anchor: Vec<f64>,
    base_anchor: Vec<f64>,
    // Q at interior knots 1..L-1
    breaks: Vec<f64>,
    support: (f64, f64),
}

impl<'a> QuantileCurve<'a> {
    pub fn new(basis: &'a QuantilePieceBasis, theta: &ThetaVector) -> Result<Self> {
        if theta.shape.len() != basis.len() {
            return Err(Error::InvalidArgument(format!(
                "theta has {} shape coefficients, basis has {}",
                theta.shape.len(),
                basis.len()
            )));
        }
        if let Some(&bad) = theta.shape.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::Domain {
                what: "shape coefficient",
                value: bad,
                domain: "(0, inf)",
            });
        }
        Ok(Self::build(basis, theta.median, &theta.shape))
    }

    /// No validation; `shape` must be positive and of length `L`.
    pub(crate) fn build(basis: &'a QuantilePieceBasis, median: f64, shape: &[f64]) -> Self {
        let l = basis.len();
        let q = &basis.knot_quantiles;
        let value_at_knot = |i: usize| -> f64 {
            median
                + shape
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| c * basis.piece_at_knot(k, i))
                    .sum::<f64>()
        };
        let mut anchor = Vec::with_capacity(l);
        let mut base_anchor = Vec::with_capacity(l);
        for (j, kind) in basis.kinds.iter().enumerate() {
            match kind {
                PieceKind::Full => {
                    anchor.push(median);
                    base_anchor.push(0.0);
                }
                PieceKind::Left => {
                    anchor.push(value_at_knot(j + 1));
                    base_anchor.push(q[j + 1]);
                }
                PieceKind::Right => {
                    anchor.push(value_at_knot(j));
                    base_anchor.push(q[j]);
                }
            }
        }
        let breaks: Vec<f64> = (1..l).map(value_at_knot).collect();
        let lo = anchor[0] + shape[0] * (basis.lower_clip_quantile - base_anchor[0]);
        let hi = anchor[l - 1] + shape[l - 1] * (basis.upper_clip_quantile - base_anchor[l - 1]);
        Self {
            basis,
            coefs: shape.to_vec(),
            ln_coefs: shape.iter().map(|c| c.ln()).collect(),
            anchor,
            base_anchor,
            breaks,
            support: (lo, hi),
        }
    }

    /// `[Q(LOWER_CLIP), Q(1 - UPPER_CLIP)]`.
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        check_level(t)?;
        let j = self.basis.interval_of(t);
        let u = self.basis.family.quantile(t);
        Ok(self.anchor[j] + self.coefs[j] * (u - self.base_anchor[j]))
    }

    fn piece_of_value(&self, x: f64) -> usize {
        self.breaks.iter().take_while(|&&b| b <= x).count()
    }

    /// Base-distribution value `u = F^{-1}(t*)` where `Q(t*) = x`.
    fn base_value(&self, x: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.support;
        if !(x >= lo && x <= hi) {
            return Err(Error::OutOfSupport(x));
        }
        let j = self.piece_of_value(x);
        Ok((
            j,
            self.base_anchor[j] + (x - self.anchor[j]) / self.coefs[j],
        ))
    }

    /// Solves `Q(t*) = x` in closed form on the active piece.
    pub fn invert(&self, x: f64) -> Result<f64> {
        let (_, u) = self.base_value(x)?;
        Ok(self.basis.family.cdf(u))
    }

    /// `log f(x) = log f_F(u) - log theta_j`, `-inf` outside the support.
    pub fn ln_density(&self, x: f64) -> f64 {
        match self.base_value(x) {
            Ok((j, u)) => self.basis.family.ln_pdf(u) - self.ln_coefs[j],
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.ln_density(x).exp()
    }

    /// `dQ/dt` at level `t`.
    pub fn slope(&self, t: f64) -> Result<f64> {
        check_level(t)?;
        let j = self.basis.interval_of(t);
        let u = self.basis.family.quantile(t);
        Ok(self.coefs[j] * (-self.basis.family.ln_pdf(u)).exp())
    }
}

/// `Q(t)` for the given coefficients.
pub fn quantile_eval(theta: &ThetaVector, basis: &QuantilePieceBasis, t: f64) -> Result<f64> {
    QuantileCurve::new(basis, theta)?.eval(t)
}

/// `t*` with `Q(t*) = x`.
pub fn quantile_invert(theta: &ThetaVector, basis: &QuantilePieceBasis, x: f64) -> Result<f64> {
    QuantileCurve::new(basis, theta)?.invert(x)
}

/// Density of the distribution with quantile function `Q`, 0 outside the support.
pub fn quantile_density(theta: &ThetaVector, basis: &QuantilePieceBasis, x: f64) -> Result<f64> {
    Ok(QuantileCurve::new(basis, theta)?.density(x))
}

//! Cross-integral matrix `M = int_0^1 K(t) B~(t)^T dt` linking the Bernstein
//! coefficient basis to the augmented quantile basis `B~ = (1, B_1, ..., B_L)`.

use nalgebra::{DMatrix, DVector};

use crate::basis::bernstein::BernsteinBasis;
use crate::basis::pieces::{QuantilePieceBasis, UPPER_CLIP};
use crate::basis::quadrature::{GaussLegendre, NODES_PER_INTERVAL};

/// Quadrature nodes over `[0, 1 - UPPER_CLIP]`: one Gauss-Legendre panel per
/// knot interval, with geometrically graded panels toward `t = 0` and `t = 1`
/// where the base quantile is unbounded (`t = 1`) or has an unbounded
/// derivative (`t = 0`; Gamma quantiles grow like `t^{1/shape}`).
#[derive(Debug, Clone)]
pub struct LevelQuadrature {
    pub levels: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Ratio between consecutive graded panel widths.
const GRADING_RATIO: f64 = 0.1;

impl LevelQuadrature {
    pub fn new(basis: &QuantilePieceBasis, nodes_per_interval: usize) -> Self {
        let rule = GaussLegendre::new(nodes_per_interval);
        let knots = basis.knots();
        let last = knots.len() - 2;
        let mut quad = Self {
            levels: Vec::new(),
            weights: Vec::new(),
        };
        for (j, w) in knots.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let low = j == 0;
            let high = j == last;
            let breaks = match (low, high) {
                (false, false) => vec![a, b],
                (false, true) => graded_breaks(b, a, UPPER_CLIP),
                (true, false) => reversed(graded_breaks(a, b, UPPER_CLIP)),
                (true, true) => {
                    let mid = 0.5 * (a + b);
                    let mut v = reversed(graded_breaks(a, mid, UPPER_CLIP));
                    v.pop();
                    v.extend(graded_breaks(b, mid, UPPER_CLIP));
                    v
                }
            };
            for p in breaks.windows(2) {
                quad.push_panel(&rule, p[0], p[1]);
            }
        }
        quad
    }

    fn push_panel(&mut self, rule: &GaussLegendre, a: f64, b: f64) {
        for (t, wt) in rule.mapped(a, b) {
            self.levels.push(t);
            self.weights.push(wt);
        }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.levels
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

fn reversed(mut v: Vec<f64>) -> Vec<f64> {
    v.reverse();
    v
}

/// Break points from `regular` to `singular` (in that order), shrinking the
/// distance to `singular` by `GRADING_RATIO` per panel and stopping at `clip`.
fn graded_breaks(singular: f64, regular: f64, clip: f64) -> Vec<f64> {
    let dir = (regular - singular).signum();
    let mut dist = (regular - singular).abs();
    let mut out = vec![regular];
    while dist * GRADING_RATIO > clip {
        dist *= GRADING_RATIO;
        out.push(singular + dir * dist);
    }
    out.push(singular + dir * clip);
    out
}

/// `(p+1) x (L+1)` matrix with entries `int K_{j,p}(t) B~_l(t) dt`.
#[derive(Debug, Clone)]
pub struct CrossIntegralMatrix {
    matrix: DMatrix<f64>,
    nodes_per_interval: usize,
    upper_clip: f64,
}

impl CrossIntegralMatrix {
    pub fn new(bernstein: &BernsteinBasis, basis: &QuantilePieceBasis) -> Self {
        Self::with_nodes(bernstein, basis, NODES_PER_INTERVAL)
    }

    pub fn with_nodes(
        bernstein: &BernsteinBasis,
        basis: &QuantilePieceBasis,
        nodes_per_interval: usize,
    ) -> Self {
        let quad = LevelQuadrature::new(basis, nodes_per_interval);
        let mut matrix = DMatrix::zeros(bernstein.len(), basis.len() + 1);
        for (&t, &w) in quad.levels.iter().zip(&quad.weights) {
            let k = bernstein.eval_all(t);
            let b = basis.eval_augmented(t);
            for (j, kj) in k.iter().enumerate() {
                for (l, bl) in b.iter().enumerate() {
                    matrix[(j, l)] += w * kj * bl;
                }
            }
        }
        Self {
            matrix,
            nodes_per_interval,
            upper_clip: UPPER_CLIP,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn nodes_per_interval(&self) -> usize {
        self.nodes_per_interval
    }

    pub fn upper_clip(&self) -> f64 {
        self.upper_clip
    }

    /// Number of Bernstein coefficients `p + 1`.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of quantile coefficients `L + 1`.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Exposure features `X* = M theta` for augmented coefficients `theta`.
    pub fn features(&self, theta: &[f64]) -> Vec<f64> {
        let t = DVector::from_column_slice(theta);
        (&self.matrix * t).as_slice().to_vec()
    }

    /// `M^T beta`, the linear functional mapping `theta` to `int beta(t) Q(t) dt`.
    pub fn loading(&self, beta: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(beta);
        (self.matrix.transpose() * b).as_slice().to_vec()
    }
}

/// Builds the cross-integral matrix for degree `p`.
pub fn cross_integral(
    degree: usize,
    basis: &QuantilePieceBasis,
) -> crate::Result<CrossIntegralMatrix> {
    Ok(CrossIntegralMatrix::new(
        &BernsteinBasis::new(degree)?,
        basis,
    ))
}

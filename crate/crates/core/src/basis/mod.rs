//! Quantile-function bases (piecewise Gaussian / Gamma) and the orthonormal
//! Bernstein basis for the coefficient function, plus the integral coupling them.

pub mod bernstein;
pub mod cross;
pub mod family;
pub mod pieces;
pub mod quadrature;

pub use bernstein::{bernstein_eval, BernsteinBasis};
pub use cross::{cross_integral, CrossIntegralMatrix, LevelQuadrature};
pub use family::BaseFamily;
pub use pieces::{
    quantile_density, quantile_eval, quantile_invert, PieceBasisSpec, QuantileCurve,
    QuantilePieceBasis, ThetaVector, DEFAULT_FLOOR, LOWER_CLIP, UPPER_CLIP,
};

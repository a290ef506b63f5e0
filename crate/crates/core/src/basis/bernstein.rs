//! Orthonormal Bernstein polynomials on `[0, 1]`.
//!
//! `K_{j,p}(t) = sqrt(2(p-j)+1) (1-t)^{p-j} sum_{k=0}^{j} (-1)^k C(2p+1-k, j-k) C(j,k) t^{j-k}`

use crate::basis::quadrature::GaussLegendre;
use crate::error::{Error, Result};

/// Degree-`p` orthonormal Bernstein system `K_{0,p}, ..., K_{p,p}`.
#[derive(Debug, Clone)]
pub struct BernsteinBasis {
    degree: usize,
    scale: Vec<f64>,
    // inner polynomial coefficients of t^{j-k}, indexed [j][k]
    inner: Vec<Vec<f64>>,
    integrals: Vec<f64>,
}

fn binomial_table(n: usize) -> Vec<Vec<u128>> {
    let mut table = vec![vec![0u128; n + 1]; n + 1];
    for i in 0..=n {
        table[i][0] = 1;
        for k in 1..=i {
            table[i][k] = table[i - 1][k - 1] + if k < i { table[i - 1][k] } else { 0 };
        }
    }
    table
}

impl BernsteinBasis {
    pub fn new(degree: usize) -> Result<Self> {
        if degree > 30 {
            return Err(Error::InvalidArgument(format!(
                "Bernstein degree {degree} is too large (max 30)"
            )));
        }
        let binom = binomial_table(2 * degree + 1);
        let mut scale = Vec::with_capacity(degree + 1);
        let mut inner = Vec::with_capacity(degree + 1);
        for j in 0..=degree {
            scale.push(((2 * (degree - j) + 1) as f64).sqrt());
            let coefs = (0..=j)
                .map(|k| {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * binom[2 * degree + 1 - k][j - k] as f64 * binom[j][k] as f64
                })
                .collect();
            inner.push(coefs);
        }
        let mut basis = Self {
            degree,
            scale,
            inner,
            integrals: Vec::new(),
        };
        // polynomial of degree p: exact for p <= 40
        let rule = GaussLegendre::new(degree + 1);
        basis.integrals = (0..=degree)
            .map(|j| rule.integrate(0.0, 1.0, |t| basis.eval_unchecked(j, t)))
            .collect();
        Ok(basis)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions, `p + 1`.
    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub(crate) fn eval_unchecked(&self, j: usize, t: f64) -> f64 {
        let coefs = &self.inner[j];
        // Horner in t over powers t^{j-k}, k = 0..j
        let mut acc = 0.0;
        for &c in coefs {
            acc = acc * t + c;
        }
        self.scale[j] * (1.0 - t).powi((self.degree - j) as i32) * acc
    }

    /// `K_{j,p}(t)`.
    pub fn eval(&self, j: usize, t: f64) -> Result<f64> {
        if j > self.degree {
            return Err(Error::InvalidArgument(format!(
                "Bernstein index {j} exceeds degree {}",
                self.degree
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain {
                what: "quantile level",
                value: t,
                domain: "[0, 1]",
            });
        }
        Ok(self.eval_unchecked(j, t))
    }

    /// The full vector `K(t)` (no domain check).
    pub fn eval_all(&self, t: f64) -> Vec<f64> {
        (0..=self.degree)
            .map(|j| self.eval_unchecked(j, t))
            .collect()
    }

    /// `beta(t) = sum_j coef_j K_{j,p}(t)`.
    pub fn curve(&self, coef: &[f64], t: f64) -> f64 {
        debug_assert_eq!(coef.len(), self.len());
        coef.iter()
            .enumerate()
            .map(|(j, &b)| b * self.eval_unchecked(j, t))
            .sum()
    }

    /// `m_j = int_0^1 K_{j,p}(t) dt`.
    pub fn integrals(&self) -> &[f64] {
        &self.integrals
    }

    /// `int_0^1 beta(t) dt` for coefficient vector `coef`.
    pub fn integral_beta(&self, coef: &[f64]) -> f64 {
        debug_assert_eq!(coef.len(), self.len());
        coef.iter().zip(&self.integrals).map(|(b, m)| b * m).sum()
    }
}

/// Evaluates `K_{j,p}(t)` without keeping a basis around.
pub fn bernstein_eval(degree: usize, j: usize, t: f64) -> Result<f64> {
    BernsteinBasis::new(degree)?.eval(j, t)
}

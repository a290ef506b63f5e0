//! Group-level data: ragged individual exposures, counts and covariates.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExposurePanel {
    x: Vec<Vec<f64>>,
    y: Option<Vec<u64>>,
    covariates: Option<DMatrix<f64>>,
}

impl ExposurePanel {
    /// Exposures for groups `0..n`; every group needs at least one finite value.
    pub fn new(x: Vec<Vec<f64>>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Validation("exposure panel has no groups".into()));
        }
        for (i, xi) in x.iter().enumerate() {
            if xi.is_empty() {
                return Err(Error::Validation(format!("group {i} has no exposures")));
            }
            if let Some(v) = xi.iter().find(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "group {i} has non-finite exposure {v}"
                )));
            }
        }
        Ok(Self {
            x,
            y: None,
            covariates: None,
        })
    }

    pub fn with_counts(mut self, y: Vec<u64>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::Validation(format!(
                "{} counts for {} groups",
                y.len(),
                self.len()
            )));
        }
        self.y = Some(y);
        Ok(self)
    }

    pub fn with_covariates(mut self, z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() != self.len() {
            return Err(Error::Validation(format!(
                "covariate matrix has {} rows for {} groups",
                z.nrows(),
                self.len()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite covariate value".into()));
        }
        self.covariates = Some(z);
        Ok(self)
    }

    /// Number of groups `n`.
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn group(&self, i: usize) -> &[f64] {
        &self.x[i]
    }

    pub fn exposures(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.y.as_deref()
    }

    pub fn covariates(&self) -> Option<&DMatrix<f64>> {
        self.covariates.as_ref()
    }

    /// Sample mean of each group's exposures.
    pub fn group_means(&self) -> Vec<f64> {
        self.x
            .iter()
            .map(|xi| xi.iter().sum::<f64>() / xi.len() as f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ExposurePanel::new(vec![]).is_err());
        assert!(ExposurePanel::new(vec![vec![1.0], vec![]]).is_err());
        assert!(ExposurePanel::new(vec![vec![f64::NAN]]).is_err());
        let p = ExposurePanel::new(vec![vec![1.0, 3.0], vec![2.0]]).unwrap();
        assert_eq!(p.group_means(), vec![2.0, 2.0]);
        assert!(p.clone().with_counts(vec![1]).is_err());
        let p = p.with_counts(vec![1, 0]).unwrap();
        assert_eq!(p.counts(), Some(&[1u64, 0][..]));
        assert!(p.with_covariates(DMatrix::zeros(3, 1)).is_err());
    }
}

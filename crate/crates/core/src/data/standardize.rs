use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column z-scoring with statistics taken from a reference (training) matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Columns with (near) zero spread get `sd = 1` so they pass through centered.
    pub fn fit(y: &DMatrix<f64>) -> Self {
        let n = y.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(y.ncols());
        let mut sd = Vec::with_capacity(y.ncols());
        for col in y.column_iter() {
            let m = col.sum() / n;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            sd.push(if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 });
        }
        Self { mean, sd }
    }

    pub fn apply(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.ncols() != self.mean.len() {
            return Err(Error::dims("standardize: columns", self.mean.len(), y.ncols()));
        }
        Ok(DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| {
            (y[(i, j)] - self.mean[j]) / self.sd[j]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_columns_have_zero_mean_unit_variance() {
        let y = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 10.0, 3.0, 10.0, 6.0, 10.0]);
        let s = Standardizer::fit(&y);
        let z = s.apply(&y).unwrap();
        let c0 = z.column(0);
        assert!(c0.sum().abs() < 1e-12);
        assert!((c0.norm_squared() / 4.0 - 1.0).abs() < 1e-12);
        assert!(z.column(1).iter().all(|v| *v == 0.0));
        assert!(s.apply(&DMatrix::zeros(1, 3)).is_err());
    }
}

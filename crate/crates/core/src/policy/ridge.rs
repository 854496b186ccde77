//! Multi-output ridge regression for continuous actions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    /// L2 penalty on the coefficients; the intercept is not penalized.
    pub lambda: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig { lambda: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// `weights[o]` holds `d` coefficients followed by the intercept.
    pub weights: Vec<Vec<f64>>,
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| {
                let d = x.len();
                w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[d]
            })
            .collect()
    }

    /// Solves `(X'X + lambda I) W = X'Y` with an appended intercept column.
    pub fn fit(xs: &[&[f64]], ys: &[&[f64]], config: &RidgeConfig) -> Result<RidgeModel> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs for {} targets",
                xs.len(),
                ys.len()
            )));
        }
        let d = xs[0].len();
        let outs = ys[0].len();
        let p = d + 1;
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DMatrix::<f64>::zeros(p, outs);
        let mut row = DVector::<f64>::zeros(p);
        for (x, y) in xs.iter().zip(ys) {
            if x.len() != d || y.len() != outs {
                return Err(Error::DimensionMismatch("ragged regression data".into()));
            }
            row.as_mut_slice()[..d].copy_from_slice(x);
            row[d] = 1.0;
            gram.ger(1.0, &row, &row, 1.0);
            for (o, &yo) in y.iter().enumerate() {
                for j in 0..p {
                    rhs[(j, o)] += row[j] * yo;
                }
            }
        }
        for j in 0..d {
            gram[(j, j)] += config.lambda;
        }
        // A tiny ridge on the intercept keeps degenerate designs solvable.
        gram[(d, d)] += 1e-12;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::param("lambda", "normal equations are not positive definite"))?;
        let sol = chol.solve(&rhs);
        let weights = (0..outs)
            .map(|o| (0..p).map(|j| sol[(j, o)]).collect())
            .collect();
        Ok(RidgeModel { weights })
    }
}

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{param, validation, Result};

/// Fitted projection: `(x - mean) · componentsᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d0` rows of length `d_in`, unit norm, ordered by descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    #[serde(skip)]
    pub explained_variance: Vec<f64>,
    /// Set when the input had zero total variance; projections are all zero.
    #[serde(skip)]
    pub zero_variance: bool,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// Projects rows of `x`. Narrower inputs are zero-padded to the fitted width.
    pub fn project(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let d_in = self.input_dim();
        if x.ncols() > d_in {
            return Err(validation(format!(
                "PCA model expects at most {d_in} columns, got {}",
                x.ncols()
            )));
        }
        let mut out = Array2::zeros((x.nrows(), self.output_dim()));
        for (i, row) in x.rows().into_iter().enumerate() {
            for (k, comp) in self.components.iter().enumerate() {
                let mut acc = 0.0;
                for j in 0..d_in {
                    let v = if j < row.len() { row[j] } else { 0.0 };
                    acc += (v - self.mean[j]) * comp[j];
                }
                out[[i, k]] = acc;
            }
        }
        Ok(out)
    }

    /// Maps projected rows back to the input space (plus the mean).
    pub fn reconstruct(&self, y: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((y.nrows(), self.input_dim()));
        for (i, row) in y.rows().into_iter().enumerate() {
            for j in 0..self.input_dim() {
                out[[i, j]] = self.mean[j]
                    + self
                        .components
                        .iter()
                        .zip(row.iter())
                        .map(|(c, v)| c[j] * v)
                        .sum::<f64>();
            }
        }
        out
    }
}

/// Covariance-eigendecomposition PCA onto the top `d0` components. Each
/// component is signed so its largest-magnitude coordinate is positive.
pub fn pca_align(x: &Array2<f64>, d0: usize) -> Result<(Array2<f64>, PcaModel)> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(param(format!("PCA needs at least 2 rows, got {n}")));
    }
    if d0 == 0 || d0 > n.min(d) {
        return Err(param(format!("PCA target dim {d0} must be in [1, min({n}, {d})]")));
    }
    let mean: Array1<f64> = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let total: f64 = cov.diag().sum();

    if total <= 0.0 {
        log::warn!("PCA input has zero variance; projecting to zeros");
        let mut components = vec![vec![0.0; d]; d0];
        for (k, c) in components.iter_mut().enumerate() {
            c[k] = 1.0;
        }
        let model = PcaModel {
            mean: mean.to_vec(),
            components,
            explained_variance: vec![0.0; d0],
            zero_variance: true,
        };
        return Ok((Array2::zeros((n, d0)), model));
    }

    let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(d0);
    let mut explained = Vec::with_capacity(d0);
    for &k in order.iter().take(d0) {
        let mut c: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = c
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > c[best].abs() { i } else { best });
        if c[lead] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        explained.push(eig.eigenvalues[k].max(0.0));
    }
    let model = PcaModel {
        mean: mean.to_vec(),
        components,
        explained_variance: explained,
        zero_variance: false,
    };
    let projected = model.project(x)?;
    Ok((projected, model))
}

//! RBF-kernel Gaussian process mean regression.
//!
//! Each output dimension is regressed independently against one shared Gram
//! matrix, so a single Cholesky factorization serves every column of the
//! targets. Only the posterior mean is provided; the prior mean is zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of times the diagonal jitter is multiplied by ten after a failed
/// factorization before giving up.
pub const DEFAULT_MAX_JITTER_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub length_scale: f64,
    pub noise_jitter: f64,
}

impl KernelParams {
    pub fn new(length_scale: f64, noise_jitter: f64) -> Result<Self> {
        let params = KernelParams {
            length_scale,
            noise_jitter,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::invalid(format!(
                "length_scale must be positive and finite, got {}",
                self.length_scale
            )));
        }
        if !(self.noise_jitter >= 0.0 && self.noise_jitter.is_finite()) {
            return Err(Error::invalid(format!(
                "noise_jitter must be non-negative and finite, got {}",
                self.noise_jitter
            )));
        }
        Ok(())
    }
}

/// `exp(-|a - b|^2 / (2 l^2))`.
pub fn rbf_kernel(a: &[f64], b: &[f64], params: &KernelParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "kernel arguments differ in dimension ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    params.validate()?;
    Ok(rbf_unchecked(squared_distance(a.iter().copied(), b.iter().copied()), params.length_scale))
}

#[inline]
fn rbf_unchecked(sq_dist: f64, length_scale: f64) -> f64 {
    (-sq_dist / (2.0 * length_scale * length_scale)).exp()
}

#[inline]
fn squared_distance(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A fitted GP mean predictor. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    /// One training input per row.
    inputs: DMatrix<f64>,
    /// One training target per row.
    targets: DMatrix<f64>,
    /// Parameters actually used, including any escalated jitter.
    params: KernelParams,
    /// `(K + jitter I)^-1 Y`, one row per training point.
    dual_weights: DMatrix<f64>,
    /// Lower Cholesky factor of `K + jitter I`.
    factor: DMatrix<f64>,
}

impl GpModel {
    /// Fits with the default jitter escalation budget.
    pub fn fit(inputs: DMatrix<f64>, targets: DMatrix<f64>, params: KernelParams) -> Result<Self> {
        Self::fit_with_retries(inputs, targets, params, DEFAULT_MAX_JITTER_RETRIES)
    }

    pub fn fit_with_retries(
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        params: KernelParams,
        max_retries: usize,
    ) -> Result<Self> {
        params.validate()?;
        let n = inputs.nrows();
        if n == 0 {
            return Err(Error::invalid("cannot fit a GP to an empty training set"));
        }
        if targets.nrows() != n {
            return Err(Error::invalid(format!(
                "{} inputs but {} targets",
                n,
                targets.nrows()
            )));
        }
        if inputs.ncols() == 0 || targets.ncols() == 0 {
            return Err(Error::invalid("input and target dimensions must be positive"));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("training data contains non-finite values"));
        }

        let gram = gram_matrix(&inputs, params.length_scale);
        let mut jitter = params.noise_jitter;
        for attempt in 0..=max_retries {
            let mut regularized = gram.clone();
            for i in 0..n {
                regularized[(i, i)] += jitter;
            }
            if let Some(chol) = regularized.cholesky() {
                let dual_weights = chol.solve(&targets);
                if dual_weights.iter().all(|w| w.is_finite()) {
                    return Ok(GpModel {
                        inputs,
                        targets,
                        params: KernelParams {
                            length_scale: params.length_scale,
                            noise_jitter: jitter,
                        },
                        dual_weights,
                        factor: chol.l(),
                    });
                }
            }
            if attempt < max_retries {
                jitter *= 10.0;
            }
        }
        Err(Error::IllConditioned { jitter })
    }

    /// The model refitted with `inputs`/`targets` appended to the training
    /// set, at the same kernel parameters. Extends the stored factor by a
    /// block update instead of refactorising, so the cost is quadratic in
    /// the existing size. `None` when the new rows are malformed or the
    /// extended Gram matrix is not positive definite at the current jitter.
    pub fn extended(&self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Option<Self> {
        let (n, m) = (self.len(), inputs.nrows());
        if m == 0
            || targets.nrows() != m
            || inputs.ncols() != self.input_dim()
            || targets.ncols() != self.output_dim()
            || inputs.iter().chain(targets.iter()).any(|v| !v.is_finite())
        {
            return None;
        }
        let l = self.params.length_scale;
        let cross = DMatrix::from_fn(n, m, |i, j| {
            rbf_unchecked(
                squared_distance(self.inputs.row(i).iter().copied(), inputs.row(j).iter().copied()),
                l,
            )
        });
        // [[L, 0], [S^T, M]] with L S = cross and M M^T = corner - S^T S.
        let s = self.factor.solve_lower_triangular(&cross)?;
        let mut corner = gram_matrix(inputs, l);
        for i in 0..m {
            corner[(i, i)] += self.params.noise_jitter;
        }
        corner -= s.transpose() * &s;
        let corner = corner.cholesky()?.l();

        let mut factor = DMatrix::zeros(n + m, n + m);
        factor.view_mut((0, 0), (n, n)).copy_from(&self.factor);
        factor.view_mut((n, 0), (m, n)).copy_from(&s.transpose());
        factor.view_mut((n, n), (m, m)).copy_from(&corner);

        let all_inputs = stack(&self.inputs, inputs);
        let all_targets = stack(&self.targets, targets);
        let half = factor.solve_lower_triangular(&all_targets)?;
        let dual_weights = factor.tr_solve_lower_triangular(&half)?;
        if !dual_weights.iter().all(|w| w.is_finite()) {
            return None;
        }
        Some(GpModel {
            inputs: all_inputs,
            targets: all_targets,
            params: self.params,
            dual_weights,
            factor,
        })
    }

    /// Convenience constructor from row lists.
    pub fn fit_rows(inputs: &[Vec<f64>], targets: &[Vec<f64>], params: KernelParams) -> Result<Self> {
        Self::fit(rows_to_matrix(inputs)?, rows_to_matrix(targets)?, params)
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn dual_weights(&self) -> &DMatrix<f64> {
        &self.dual_weights
    }

    /// Posterior mean `sum_i k(x, x_i) w_i`.
    pub fn predict_mean(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "query has dimension {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.output_dim());
        for i in 0..self.len() {
            let row = self.inputs.row(i);
            let k = rbf_unchecked(
                squared_distance(x.iter().copied(), row.iter().copied()),
                self.params.length_scale,
            );
            for (o, w) in out.iter_mut().zip(self.dual_weights.row(i).iter()) {
                *o += k * w;
            }
        }
        out
    }
}

fn gram_matrix(inputs: &DMatrix<f64>, length_scale: f64) -> DMatrix<f64> {
    let n = inputs.nrows();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        gram[(i, i)] = 1.0;
        for j in 0..i {
            let k = rbf_unchecked(
                squared_distance(inputs.row(i).iter().copied(), inputs.row(j).iter().copied()),
                length_scale,
            );
            gram[(i, j)] = k;
            gram[(j, i)] = k;
        }
    }
    gram
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let n = top.nrows();
    DMatrix::from_fn(n + bottom.nrows(), top.ncols(), |i, j| {
        if i < n {
            top[(i, j)]
        } else {
            bottom[(i - n, j)]
        }
    })
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid("rows have inconsistent dimensions"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

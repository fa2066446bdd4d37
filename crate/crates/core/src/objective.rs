//! The discriminative clustering cost
//!
//! ```text
//! h(Y) = min_W 1/(2M) ‖XW − Y‖²_F + λ/2 ‖W‖²_F = 1/(2M) Tr(Yᵀ B Y)
//! B    = I_M − X (XᵀX + MλI_d)⁻¹ Xᵀ
//! ```
//!
//! `B` is M×M and never formed. Everything goes through the d×d matrix
//! `A = XᵀX + MλI_d`, its Cholesky factor and the precomputed rows of
//! `X A⁻¹`.

use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, tmatmul_acc, Cholesky, Matrix};

/// Per-tracklet descriptors, one row per tracklet.
pub type FeatureMatrix = Matrix;

/// Factorized ridge system for a fixed feature matrix and regularizer.
#[derive(Debug, Clone)]
pub struct RidgeCache {
    features: Matrix,
    lambda: f64,
    chol: Cholesky,
    // X A⁻¹, row-major M×d
    projected: Matrix,
}

impl RidgeCache {
    pub fn build(features: FeatureMatrix, lambda: f64) -> Result<Self> {
        let (m, d) = (features.rows(), features.cols());
        if m == 0 || d == 0 {
            return Err(Error::invalid("feature matrix must have at least one row and column"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("features"));
        }
        let shift = m as f64 * lambda;
        let mut a = features.gram();
        for i in 0..d {
            a.set(i, i, a.get(i, i) + shift);
        }
        let chol = match Cholesky::factor(&a) {
            Ok(c) => c,
            Err(_) => {
                for i in 0..d {
                    a.set(i, i, a.get(i, i) + 1e-10 * shift);
                }
                Cholesky::factor(&a)?
            }
        };
        let mut projected = features.clone();
        for r in 0..m {
            chol.solve_vec(projected.row_mut(r));
        }
        Ok(RidgeCache {
            features,
            lambda,
            chol,
            projected,
        })
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn factor(&self) -> &Cholesky {
        &self.chol
    }

    /// `A = XᵀX + MλI`, rebuilt from the features.
    pub fn system_matrix(&self) -> Matrix {
        let mut a = self.features.gram();
        let shift = self.rows() as f64 * self.lambda;
        for i in 0..self.dim() {
            a.set(i, i, a.get(i, i) + shift);
        }
        a
    }

    fn check_rows(&self, y: &Matrix) -> Result<()> {
        if y.rows() != self.rows() {
            return Err(Error::DimensionMismatch {
                what: "assignment rows",
                expected: self.rows(),
                got: y.rows(),
            });
        }
        Ok(())
    }

    /// `Xᵀ Y`
    pub fn xt(&self, y: &Matrix) -> Result<Matrix> {
        self.check_rows(y)?;
        self.features.tmatmul(y)
    }

    /// `A⁻¹ C` for a d×K matrix `C`.
    pub fn solve(&self, c: &Matrix) -> Result<Matrix> {
        let mut p = c.clone();
        self.chol.solve_mat(&mut p)?;
        Ok(p)
    }

    /// `X_vᵀ D` and `(X_v A⁻¹)ᵀ D = A⁻¹ X_vᵀ D` for a block of rows, with
    /// `D` given row-major (`rows.len() × k`).
    pub fn block_products(&self, rows: Range<usize>, d: &[f64], k: usize) -> (Matrix, Matrix) {
        let dim = self.dim();
        let n = rows.len();
        let mut e = Matrix::zeros(dim, k);
        let mut f = Matrix::zeros(dim, k);
        tmatmul_acc(
            self.features.row_block(rows.start, rows.end),
            dim,
            d,
            k,
            n,
            1.0,
            e.as_mut_slice(),
        );
        tmatmul_acc(
            self.projected.row_block(rows.start, rows.end),
            dim,
            d,
            k,
            n,
            1.0,
            f.as_mut_slice(),
        );
        (e, f)
    }

    /// Gradient rows for a block given `P = A⁻¹ XᵀY`:
    /// `(Y_v − X_v P) / M`, written into `out` (row-major, `rows.len() × K`).
    pub fn block_gradient(&self, rows: Range<usize>, y_block: &[f64], p: &Matrix, out: &mut [f64]) {
        let k = p.cols();
        let inv_m = 1.0 / self.rows() as f64;
        for (i, r) in rows.enumerate() {
            let dst = &mut out[i * k..(i + 1) * k];
            dst.copy_from_slice(&y_block[i * k..(i + 1) * k]);
            for (j, &x) in self.features.row(r).iter().enumerate() {
                if x != 0.0 {
                    axpy(dst, -x, p.row(j));
                }
            }
            for v in dst.iter_mut() {
                *v *= inv_m;
            }
        }
    }
}

/// Builds the factorized cache for `features` and `lambda`.
pub fn build_cache(features: FeatureMatrix, lambda: f64) -> Result<RidgeCache> {
    RidgeCache::build(features, lambda)
}

/// `h(Y) = (‖Y‖² − ⟨XᵀY, A⁻¹XᵀY⟩) / 2M`
pub fn h_value(cache: &RidgeCache, y: &Matrix) -> Result<f64> {
    let c = cache.xt(y)?;
    let p = cache.solve(&c)?;
    Ok((y.frobenius_sq() - c.dot(&p)) / (2.0 * cache.rows() as f64))
}

/// `∇h(Y) = B Y / M = (Y − X A⁻¹ XᵀY) / M`
pub fn gradient(cache: &RidgeCache, y: &Matrix) -> Result<Matrix> {
    let p = cache.solve(&cache.xt(y)?)?;
    let mut g = Matrix::zeros(y.rows(), y.cols());
    cache.block_gradient(0..y.rows(), y.as_slice(), &p, g.as_mut_slice());
    Ok(g)
}

/// Second derivative of `γ ↦ h(Y + γD)`: `⟨D, B D⟩ / M`.
pub fn curvature(cache: &RidgeCache, d: &Matrix) -> Result<f64> {
    let c = cache.xt(d)?;
    let p = cache.solve(&c)?;
    let v = (d.frobenius_sq() - c.dot(&p)) / cache.rows() as f64;
    Ok(v.max(0.0))
}

/// Linear classifier `W` (d×K) recovered from an assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub weights: Matrix,
    pub lambda: f64,
}

impl Classifier {
    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn classes(&self) -> usize {
        self.weights.cols()
    }

    /// `xᵀ W`
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "descriptor",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut out = alloc::vec![0.0; self.classes()];
        for (j, &v) in x.iter().enumerate() {
            if v != 0.0 {
                axpy(&mut out, v, self.weights.row(j));
            }
        }
        Ok(out)
    }

    /// Score of a single class column.
    pub fn score_class(&self, x: &[f64], class: usize) -> f64 {
        x.iter()
            .enumerate()
            .map(|(j, v)| v * self.weights.get(j, class))
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Classifier {
        let mut w = self.weights.clone();
        w.scale(c);
        Classifier {
            weights: w,
            lambda: self.lambda,
        }
    }
}

/// The ridge minimizer `W = A⁻¹ XᵀY`.
pub fn recover_classifier(cache: &RidgeCache, y: &Matrix) -> Result<Classifier> {
    let w = cache.solve(&cache.xt(y)?)?;
    Ok(Classifier {
        weights: w,
        lambda: cache.lambda(),
    })
}

pub fn score(classifier: &Classifier, x: &[f64]) -> Result<Vec<f64>> {
    classifier.score(x)
}

/// Row-stochastic tracklet-to-class responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    values: Matrix,
    integer: bool,
}

impl AssignmentMatrix {
    /// One-hot rows from class labels.
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        let mut m = Matrix::zeros(labels.len(), classes);
        for (r, &k) in labels.iter().enumerate() {
            if k >= classes {
                return Err(Error::UnknownClass(k));
            }
            m.set(r, k, 1.0);
        }
        Ok(AssignmentMatrix {
            values: m,
            integer: true,
        })
    }

    /// Validates a relaxed assignment: entries in `[0, 1]` and unit row sums,
    /// both up to `1e-9`.
    pub fn relaxed(values: Matrix) -> Result<Self> {
        for r in 0..values.rows() {
            let row = values.row(r);
            if row.iter().any(|v| !v.is_finite() || *v < -1e-9 || *v > 1.0 + 1e-9) {
                return Err(Error::invalid(alloc::format!("assignment row {r} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(alloc::format!("assignment row {r} sums to {s}")));
            }
        }
        let integer = values.as_slice().iter().all(|v| *v == 0.0 || *v == 1.0);
        Ok(AssignmentMatrix { values, integer })
    }

    pub fn is_integer(&self) -> bool {
        self.integer
    }

    pub fn matrix(&self) -> &Matrix {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix {
        self.values
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn classes(&self) -> usize {
        self.values.cols()
    }

    /// Arg-max label per row, ties to the lowest class.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|r| {
                let row = self.values.row(r);
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

/// `(1/2M)‖XW − Y‖² + (λ/2)‖W‖²`
pub fn ridge_objective(x: &Matrix, y: &Matrix, w: &Matrix, lambda: f64) -> Result<f64> {
    let mut r = x.matmul(w)?;
    r.axpy(-1.0, y);
    Ok(r.frobenius_sq() / (2.0 * x.rows() as f64) + 0.5 * lambda * w.frobenius_sq())
}

/// `⟨a, b⟩` over equally shaped row-major blocks.
pub fn block_dot(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}

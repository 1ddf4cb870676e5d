//! Hard-negative-weighted contrastive loss (HN-NCE) over an in-batch
//! similarity matrix.
//!
//! For an `n x n` cosine matrix `S` (row `i` = composed query `i`, column `j` =
//! target `j`):
//!
//! ```text
//! S'          = S / tau
//! w_i2t[i][j] = alpha                                             (j == i)
//!             = (n-1) * exp(beta*S[i][j]) / sum_{k!=i} exp(beta*S[i][k])
//! w_t2i[j][i] = alpha                                             (j == i)
//!             = (n-1) * exp(beta*S[j][i]) / sum_{k!=i} exp(beta*S[k][i])
//! L = 1/n * sum_i [ log sum_j exp(S'[i][j]) w_i2t[i][j]
//!                 + log sum_j exp(S'[j][i]) w_t2i[j][i] - 2 S'[i][i] ]
//! ```
//!
//! With `alpha = 1` and `beta = 0` every weight is 1 and `L` is the symmetric
//! InfoNCE loss. All sums run in log space.

use serde::{Deserialize, Serialize};

use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, softmax, Matrix};

pub type SimilarityMatrix = Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Differentiate through the negative weights instead of treating them
    /// as constants within a step.
    #[serde(default)]
    pub differentiate_weights: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.07,
            alpha: 1.0,
            beta: 0.0,
            differentiate_weights: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// `S[i][j] = cos(zqm[i], zt[j])`.
pub fn similarity_matrix(zqm: &Matrix, zt: &Matrix) -> Result<SimilarityMatrix> {
    if zqm.rows() != zt.rows() || zqm.cols() != zt.cols() {
        return Err(Error::Shape(format!(
            "similarity of {}x{} queries against {}x{} targets",
            zqm.rows(),
            zqm.cols(),
            zt.rows(),
            zt.cols()
        )));
    }
    let n = zqm.rows();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = cosine(zqm.row(i), zt.row(j))?;
        }
    }
    Ok(s)
}

fn check_square(s: &Matrix) -> Result<usize> {
    if s.rows() != s.cols() {
        return Err(Error::Shape(format!("similarity matrix is {}x{}", s.rows(), s.cols())));
    }
    if !s.is_finite() {
        return Err(Error::Numeric("similarity matrix has non-finite entries".into()));
    }
    Ok(s.rows())
}

/// Log-weights `(ln w_i2t, ln w_t2i)`, both indexed `[row][col]` like `S`.
fn log_weights(s: &Matrix, cfg: &LossConfig) -> (Matrix, Matrix) {
    let n = s.rows();
    let ln_alpha = cfg.alpha.ln();
    let ln_neg = ((n.max(2) - 1) as f64).ln();
    let mut i2t = Matrix::zeros(n, n);
    let mut t2i = Matrix::zeros(n, n);
    let mut buf = Vec::with_capacity(n);
    for i in 0..n {
        buf.clear();
        buf.extend((0..n).filter(|&k| k != i).map(|k| cfg.beta * s[(i, k)]));
        let row_norm = log_sum_exp(&buf);
        buf.clear();
        buf.extend((0..n).filter(|&k| k != i).map(|k| cfg.beta * s[(k, i)]));
        let col_norm = log_sum_exp(&buf);
        for j in 0..n {
            if j == i {
                i2t[(i, i)] = ln_alpha;
                t2i[(i, i)] = ln_alpha;
            } else {
                i2t[(i, j)] = ln_neg + cfg.beta * s[(i, j)] - row_norm;
                t2i[(j, i)] = ln_neg + cfg.beta * s[(j, i)] - col_norm;
            }
        }
    }
    (i2t, t2i)
}

/// Negative weights `(w_i2t, w_t2i)`. With `n = 1` only the diagonal exists.
pub fn hn_weights(s: &SimilarityMatrix, cfg: &LossConfig) -> Result<(Matrix, Matrix)> {
    cfg.validate()?;
    let n = check_square(s)?;
    let (mut a, mut b) = log_weights(s, cfg);
    for v in a.as_mut_slice() {
        *v = v.exp();
    }
    for v in b.as_mut_slice() {
        *v = v.exp();
    }
    debug_assert_eq!(a.rows(), n);
    Ok((a, b))
}

struct Terms {
    /// Row-wise softmax of `S'[i][j] + ln w_i2t[i][j]`.
    row_soft: Matrix,
    /// Column-wise softmax of `S'[j][i] + ln w_t2i[j][i]`, indexed `[j][i]`.
    col_soft: Matrix,
    loss: f64,
}

fn terms(s: &Matrix, cfg: &LossConfig) -> Terms {
    let n = s.rows();
    let inv_tau = 1.0 / cfg.tau;
    let (lw_i2t, lw_t2i) = log_weights(s, cfg);
    let mut row_soft = Matrix::zeros(n, n);
    let mut col_soft = Matrix::zeros(n, n);
    let mut total = 0.0;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            a[j] = s[(i, j)] * inv_tau + lw_i2t[(i, j)];
            b[j] = s[(j, i)] * inv_tau + lw_t2i[(j, i)];
        }
        total += log_sum_exp(&a) + log_sum_exp(&b) - 2.0 * s[(i, i)] * inv_tau;
        for (j, p) in softmax(&a).into_iter().enumerate() {
            row_soft[(i, j)] = p;
        }
        for (j, p) in softmax(&b).into_iter().enumerate() {
            col_soft[(j, i)] = p;
        }
    }
    Terms {
        row_soft,
        col_soft,
        loss: total / n as f64,
    }
}

pub fn hn_nce_loss(s: &SimilarityMatrix, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let n = check_square(s)?;
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(terms(s, cfg).loss)
}

/// `dL/dS`. Weights are constants unless `cfg.differentiate_weights`.
pub fn loss_grad(s: &SimilarityMatrix, cfg: &LossConfig) -> Result<Matrix> {
    Ok(loss_and_grad(s, cfg)?.1)
}

pub fn loss_and_grad(s: &SimilarityMatrix, cfg: &LossConfig) -> Result<(f64, Matrix)> {
    cfg.validate()?;
    let n = check_square(s)?;
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let t = terms(s, cfg);
    let scale = 1.0 / (n as f64 * cfg.tau);
    let mut g = Matrix::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            g[(p, q)] = scale * (t.row_soft[(p, q)] + t.col_soft[(p, q)]);
        }
        g[(p, p)] -= 2.0 * scale;
    }

    if cfg.differentiate_weights && n > 1 && cfg.beta != 0.0 {
        let k = cfg.beta / n as f64;
        let mut buf = Vec::with_capacity(n - 1);
        for i in 0..n {
            // row i of w_i2t depends on S[i][m], m != i
            buf.clear();
            buf.extend((0..n).filter(|&m| m != i).map(|m| cfg.beta * s[(i, m)]));
            let q_row = softmax(&buf);
            let mass: f64 = (0..n).filter(|&j| j != i).map(|j| t.row_soft[(i, j)]).sum();
            for (m, qm) in (0..n).filter(|&m| m != i).zip(&q_row) {
                g[(i, m)] += k * (t.row_soft[(i, m)] - qm * mass);
            }
            // column i of w_t2i depends on S[m][i], m != i
            buf.clear();
            buf.extend((0..n).filter(|&m| m != i).map(|m| cfg.beta * s[(m, i)]));
            let q_col = softmax(&buf);
            let mass: f64 = (0..n).filter(|&j| j != i).map(|j| t.col_soft[(j, i)]).sum();
            for (m, qm) in (0..n).filter(|&m| m != i).zip(&q_col) {
                g[(m, i)] += k * (t.col_soft[(m, i)] - qm * mass);
            }
        }
    }
    Ok((t.loss, g))
}

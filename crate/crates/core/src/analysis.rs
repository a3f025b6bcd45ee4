//! Partial correlation of label steps given the history: OLS residuals
//! against `[1, X]`, then pairwise Pearson correlation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, PivotedQr};

/// `y − [1, X]·β̂` with `β̂` a least-squares fit tolerant of rank deficiency.
pub fn ols_residuals(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let qr = control_factor(x)?;
    if y.len() != x.rows() {
        return Err(Error::dim("ols_residuals", x.rows(), y.len()));
    }
    qr.residual(y)
}

fn control_factor(x: &Matrix) -> Result<PivotedQr> {
    let (n, h) = x.shape();
    if n <= h {
        return Err(Error::InsufficientSamples {
            context: "ols_residuals (need N > H)",
            required: h + 1,
            found: n,
        });
    }
    let design = Matrix::from_fn(n, h + 1, |r, c| if c == 0 { 1.0 } else { x[(r, c - 1)] });
    Ok(PivotedQr::new(&design))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialCorrelationMatrix {
    /// `T×T`, unit diagonal.
    pub matrix: Matrix,
    pub controlled_dim: usize,
    pub sample_count: usize,
    /// Label steps whose residual vanished; their off-diagonal entries are 0.
    pub degenerate: Vec<usize>,
}

impl PartialCorrelationMatrix {
    pub fn horizon(&self) -> usize {
        self.matrix.rows()
    }

    /// Header `t1..tT`, one row per step, 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let t = self.horizon();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let to_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        w.write_record((1..=t).map(|i| format!("t{i}"))).map_err(to_err)?;
        for r in 0..t {
            w.write_record(self.matrix.row(r).iter().map(|v| format!("{v:.16e}")))
                .map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Correlations between OLS residuals of every pair of label columns given
/// `X` (plus intercept).
pub fn partial_correlation(x: &Matrix, y: &Matrix) -> Result<PartialCorrelationMatrix> {
    let (n, h) = x.shape();
    if y.rows() != n {
        return Err(Error::dim("partial_correlation", n, y.rows()));
    }
    if n <= h + 2 {
        return Err(Error::InsufficientSamples {
            context: "partial_correlation (need N > H + 2)",
            required: h + 3,
            found: n,
        });
    }
    let qr = control_factor(x)?;
    let t = y.cols();
    let mut residuals = Vec::with_capacity(t);
    let mut norms = Vec::with_capacity(t);
    let mut degenerate = Vec::new();
    for c in 0..t {
        let col = y.col(c);
        let r = qr.residual(&col)?;
        let norm = dot(&r, &r).sqrt();
        let scale = dot(&col, &col).sqrt();
        if norm <= 1e-10 * scale || norm == 0.0 {
            log::warn!("label step {} is fully explained by the history", c + 1);
            degenerate.push(c);
        }
        residuals.push(r);
        norms.push(norm);
    }
    let mut m = Matrix::identity(t);
    for i in 0..t {
        for j in (i + 1)..t {
            let v = if degenerate.contains(&i) || degenerate.contains(&j) {
                0.0
            } else {
                (dot(&residuals[i], &residuals[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(PartialCorrelationMatrix {
        matrix: m,
        controlled_dim: h,
        sample_count: n,
        degenerate,
    })
}

/// Fraction of off-diagonal entries with `|value| > threshold`.
pub fn offdiag_exceedance(m: &PartialCorrelationMatrix, threshold: f64) -> f64 {
    let t = m.horizon();
    if t < 2 {
        return 0.0;
    }
    let mut hits = 0usize;
    for i in 0..t {
        for j in 0..t {
            if i != j && m.matrix[(i, j)].abs() > threshold {
                hits += 1;
            }
        }
    }
    hits as f64 / (t * (t - 1)) as f64
}

//! Bures–Wasserstein between the empirical Gaussians of two `B×L` samples,
//! computed in the `B×B` sample space.
//!
//! Matches `bures_wasserstein` on the batch summaries (same clamping), but
//! costs `O(B²L)` instead of `O(L³)`, which matters once `L` is in the
//! hundreds and batches are small.

use crate::error::{Error, Result};
use crate::linalg::{center_rows, clamp_floor, column_means, sym_eig, Matrix, SpectralDecomposition};

/// Forward pass; [`SampleBures::grad`] is the backward pass with respect to
/// the rows of the second (forecast) sample.
#[derive(Debug, Clone)]
pub struct SampleBures {
    mean_term: f64,
    cov_term: f64,
    mean_grad: Vec<f64>,
    centered_hat: Matrix,
    // kept label eigenvectors (L×k) and γ_k − f1
    basis: Matrix,
    gaps: Vec<f64>,
    // Ẑc · basis
    projected: Matrix,
    label_floor: f64,
    inner: SpectralDecomposition,
    inner_floor: f64,
}

impl SampleBures {
    pub fn new(label: &Matrix, forecast: &Matrix, clamp_eps: f64) -> Result<Self> {
        if label.shape() != forecast.shape() {
            return Err(Error::dim(
                "SampleBures",
                format!("{}x{}", label.rows(), label.cols()),
                format!("{}x{}", forecast.rows(), forecast.cols()),
            ));
        }
        let b = label.rows();
        if b < 2 {
            return Err(Error::InsufficientSamples {
                context: "SampleBures",
                required: 2,
                found: b,
            });
        }
        let bf = b as f64;
        let mu = column_means(label);
        let mu_hat = column_means(forecast);
        let zc = center_rows(label, &mu);
        let zhc = center_rows(forecast, &mu_hat);

        let gram = zc.mul_transposed(&zc).scaled(1.0 / bf);
        let gram_eig = sym_eig(&gram)?;
        let label_floor = clamp_floor(gram_eig.max_eigenvalue(), clamp_eps);
        let kept: Vec<usize> = (0..b)
            .filter(|&i| gram_eig.eigenvalues[i] > label_floor)
            .collect();
        let l = label.cols();
        let mut basis = Matrix::zeros(l, kept.len());
        let mut gaps = Vec::with_capacity(kept.len());
        for (col, &i) in kept.iter().enumerate() {
            let gamma = gram_eig.eigenvalues[i];
            let scale = 1.0 / (bf * gamma).sqrt();
            for r in 0..b {
                let u = gram_eig.eigenvectors[(r, i)] * scale;
                if u == 0.0 {
                    continue;
                }
                for (c, &z) in zc.row(r).iter().enumerate() {
                    basis[(c, col)] += u * z;
                }
            }
            gaps.push(gamma - label_floor);
        }
        let projected = zhc.mul(&basis);

        let weighted = Matrix::from_fn(b, kept.len(), |r, c| projected[(r, c)] * gaps[c]);
        let inner_mat = weighted
            .mul_transposed(&projected)
            .add(&zhc.mul_transposed(&zhc).scaled(label_floor))?
            .scaled(1.0 / bf);
        let inner = sym_eig(&inner_mat)?;
        let inner_floor = inner.floor(clamp_eps);
        let cross = super::trace_sqrt(&inner.eigenvalues, clamp_eps);
        let trace_a = zc.as_slice().iter().map(|x| x * x).sum::<f64>() / bf;
        let trace_b = zhc.as_slice().iter().map(|x| x * x).sum::<f64>() / bf;
        let cov_term = (trace_a + trace_b - 2.0 * cross).max(0.0);

        let mean_term = mu.iter().zip(&mu_hat).map(|(a, h)| (a - h) * (a - h)).sum();
        let mean_grad = mu.iter().zip(&mu_hat).map(|(a, h)| 2.0 * (h - a)).collect();

        Ok(SampleBures {
            mean_term,
            cov_term,
            mean_grad,
            centered_hat: zhc,
            basis,
            gaps,
            projected,
            label_floor,
            inner,
            inner_floor,
        })
    }

    pub fn value(&self) -> f64 {
        self.mean_term + self.cov_term
    }

    /// `‖μ − μ̂‖²`.
    pub fn mean_term(&self) -> f64 {
        self.mean_term
    }

    /// The Bures covariance term.
    pub fn cov_term(&self) -> f64 {
        self.cov_term
    }

    /// Gradient with respect to the forecast rows of the selected terms.
    pub fn grad(&self, with_mean: bool, with_cov: bool) -> Matrix {
        let zhc = &self.centered_hat;
        let (b, l) = zhc.shape();
        let bf = b as f64;
        let mut out = if with_cov {
            // Ẑc Σ_c with Σ_c the clamped label covariance
            let scaled =
                Matrix::from_fn(b, self.gaps.len(), |r, c| self.projected[(r, c)] * self.gaps[c]);
            let zs = scaled
                .mul_transposed(&self.basis)
                .add(&zhc.scaled(self.label_floor))
                .expect("shapes agree");
            let floor = self.inner_floor;
            let inv_root = self.inner.map(|k| 1.0 / k.max(floor).sqrt());
            let transported = inv_root.mul(&zs);
            zhc.sub(&transported).expect("shapes agree").scaled(2.0 / bf)
        } else {
            Matrix::zeros(b, l)
        };
        if with_mean {
            for r in 0..b {
                for (o, g) in out.row_mut(r).iter_mut().zip(&self.mean_grad) {
                    *o += g / bf;
                }
            }
        }
        out
    }
}

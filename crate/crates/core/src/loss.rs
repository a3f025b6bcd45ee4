//! The DistDF objective `L_α = α·L_dist + (1−α)·L_mse` on one variable's
//! batch, plus the MSE bias diagnostic under label autocorrelation.
//!
//! `L_dist` compares the joint sequences `Z = [X, Y]` and `Ẑ = [X, Ŷ]`.

use serde::{Deserialize, Serialize};

use crate::discrepancy::{
    bures, bures_wasserstein_grad_with, empirical_wasserstein_grad_b, kl_gaussian_grad_with,
    median_bandwidth, mmd_linear, mmd_linear_grad_b, mmd_rbf, mmd_rbf_grad_b, summary_pullback,
    GaussianSummary, SampleBures,
};
use crate::error::{Error, Result};
use crate::linalg::{column_means, mahalanobis_sq, norm_sq, Matrix, DEFAULT_CLAMP_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyKind {
    BuresWasserstein,
    MeanOnly,
    CovOnly,
    MmdLinear,
    MmdRbf,
    Kl,
    Emd,
}

impl DiscrepancyKind {
    pub const ALL: [DiscrepancyKind; 7] = [
        DiscrepancyKind::BuresWasserstein,
        DiscrepancyKind::MeanOnly,
        DiscrepancyKind::CovOnly,
        DiscrepancyKind::MmdLinear,
        DiscrepancyKind::MmdRbf,
        DiscrepancyKind::Kl,
        DiscrepancyKind::Emd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DiscrepancyKind::BuresWasserstein => "bures_wasserstein",
            DiscrepancyKind::MeanOnly => "mean_only",
            DiscrepancyKind::CovOnly => "cov_only",
            DiscrepancyKind::MmdLinear => "mmd_linear",
            DiscrepancyKind::MmdRbf => "mmd_rbf",
            DiscrepancyKind::Kl => "kl",
            DiscrepancyKind::Emd => "emd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    #[serde(rename = "kind")]
    pub discrepancy_kind: DiscrepancyKind,
    pub clamp_eps: f64,
    /// RBF bandwidth; the median pairwise distance of each batch when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rbf_bandwidth: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.01,
            discrepancy_kind: DiscrepancyKind::BuresWasserstein,
            clamp_eps: DEFAULT_CLAMP_EPS,
            rbf_bandwidth: None,
        }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, kind: DiscrepancyKind) -> Self {
        LossConfig {
            alpha,
            discrepancy_kind: kind,
            ..LossConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.clamp_eps >= 0.0) || !self.clamp_eps.is_finite() {
            return Err(Error::InvalidInput(format!(
                "clamp_eps must be finite and >= 0, got {}",
                self.clamp_eps
            )));
        }
        if let Some(bw) = self.rbf_bandwidth {
            if !(bw > 0.0) || !bw.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "rbf_bandwidth must be positive, got {bw}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    pub dist_term: f64,
    pub mse_term: f64,
    pub grad_forecast: Matrix,
}

/// `[history | block]`, row by row.
pub fn concat_joint(history: &Matrix, block: &Matrix) -> Result<Matrix> {
    if history.rows() != block.rows() {
        return Err(Error::dim("concat_joint", history.rows(), block.rows()));
    }
    history.hcat(block)
}

fn check_same_shape(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            context,
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    Ok(())
}

/// Mean squared error over all entries and its gradient in the forecast.
pub fn mse_loss(label: &Matrix, forecast: &Matrix) -> Result<(f64, Matrix)> {
    check_same_shape("mse_loss", label, forecast)?;
    let n = label.as_slice().len() as f64;
    let mut sum = 0.0;
    let mut grad = Matrix::zeros(label.rows(), label.cols());
    for ((g, &y), &yh) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(label.as_slice())
        .zip(forecast.as_slice())
    {
        let e = yh - y;
        sum += e * e;
        *g = 2.0 * e / n;
    }
    Ok((sum / n, grad))
}

pub fn mae_metric(label: &Matrix, forecast: &Matrix) -> Result<f64> {
    check_same_shape("mae_metric", label, forecast)?;
    let n = label.as_slice().len() as f64;
    let sum: f64 = label
        .as_slice()
        .iter()
        .zip(forecast.as_slice())
        .map(|(y, yh)| (y - yh).abs())
        .sum();
    Ok(sum / n)
}

enum DistState {
    Sample(Box<SampleBures>, DiscrepancyKind),
    Dense {
        label: GaussianSummary,
        forecast: GaussianSummary,
    },
    Kl {
        grad_mean: Vec<f64>,
        grad_cov: Matrix,
    },
    Rbf(f64),
    Plain,
}

/// Forward pass of [`distdf_loss`]: values are final, the gradient is
/// assembled by [`LossForward::backward`].
pub struct LossForward {
    alpha: f64,
    kind: DiscrepancyKind,
    clamp_eps: f64,
    horizon: usize,
    label_joint: Matrix,
    forecast_joint: Matrix,
    dist_term: f64,
    mse_term: f64,
    mse_grad: Matrix,
    state: DistState,
}

impl LossForward {
    pub fn new(
        history: &Matrix,
        label: &Matrix,
        forecast: &Matrix,
        cfg: &LossConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        check_same_shape("distdf_loss", label, forecast)?;
        if history.rows() != label.rows() {
            return Err(Error::dim("distdf_loss", history.rows(), label.rows()));
        }
        let b = label.rows();
        if b < 2 {
            return Err(Error::InsufficientSamples {
                context: "distdf_loss",
                required: 2,
                found: b,
            });
        }
        let (mse_term, mse_grad) = mse_loss(label, forecast)?;
        let label_joint = concat_joint(history, label)?;
        let forecast_joint = concat_joint(history, forecast)?;
        let eps = cfg.clamp_eps;
        let kind = cfg.discrepancy_kind;
        let l = label_joint.cols();

        let (dist_term, state) = match kind {
            DiscrepancyKind::MeanOnly => {
                let d = sq_distance(&column_means(&label_joint), &column_means(&forecast_joint));
                (d, DistState::Plain)
            }
            DiscrepancyKind::BuresWasserstein | DiscrepancyKind::CovOnly if b <= l => {
                let sb = SampleBures::new(&label_joint, &forecast_joint, eps)?;
                let v = if kind == DiscrepancyKind::CovOnly {
                    sb.cov_term()
                } else {
                    sb.value()
                };
                (v, DistState::Sample(Box::new(sb), kind))
            }
            DiscrepancyKind::BuresWasserstein | DiscrepancyKind::CovOnly => {
                let a = GaussianSummary::from_samples(&label_joint)?;
                let f = GaussianSummary::from_samples(&forecast_joint)?;
                let mut v = bures(&a.cov, &f.cov, eps)?;
                if kind == DiscrepancyKind::BuresWasserstein {
                    v += sq_distance(&a.mean, &f.mean);
                }
                (v, DistState::Dense { label: a, forecast: f })
            }
            DiscrepancyKind::MmdLinear => (mmd_linear(&label_joint, &forecast_joint)?, DistState::Plain),
            DiscrepancyKind::MmdRbf => {
                let bw = cfg
                    .rbf_bandwidth
                    .unwrap_or_else(|| median_bandwidth(&label_joint, &forecast_joint));
                (mmd_rbf(&label_joint, &forecast_joint, bw)?, DistState::Rbf(bw))
            }
            DiscrepancyKind::Kl => {
                let a = GaussianSummary::from_samples(&label_joint)?;
                let f = GaussianSummary::from_samples(&forecast_joint)?;
                let (v, grad_mean, grad_cov) = kl_gaussian_grad_with(&a, &f, eps)?;
                (v, DistState::Kl { grad_mean, grad_cov })
            }
            DiscrepancyKind::Emd => {
                let v = crate::discrepancy::empirical_wasserstein(&label_joint, &forecast_joint, 1)?;
                (v, DistState::Plain)
            }
        };
        Ok(LossForward {
            alpha: cfg.alpha,
            kind,
            clamp_eps: eps,
            horizon: label.cols(),
            label_joint,
            forecast_joint,
            dist_term,
            mse_term,
            mse_grad,
            state,
        })
    }

    pub fn dist_term(&self) -> f64 {
        self.dist_term
    }

    pub fn mse_term(&self) -> f64 {
        self.mse_term
    }

    pub fn total(&self) -> f64 {
        self.alpha * self.dist_term + (1.0 - self.alpha) * self.mse_term
    }

    /// Gradient of `L_dist` with respect to the joint `Ẑ`.
    fn dist_joint_grad(&self) -> Result<Matrix> {
        let z = &self.label_joint;
        let zh = &self.forecast_joint;
        let b = zh.rows() as f64;
        Ok(match (&self.state, self.kind) {
            (DistState::Sample(sb, kind), _) => {
                sb.grad(*kind == DiscrepancyKind::BuresWasserstein, true)
            }
            (DistState::Dense { label, forecast }, kind) => {
                let (mut gm, gc) = bures_wasserstein_grad_with(label, forecast, self.clamp_eps)?;
                if kind == DiscrepancyKind::CovOnly {
                    gm.iter_mut().for_each(|g| *g = 0.0);
                }
                summary_pullback(zh, &gm, &gc)
            }
            (DistState::Kl { grad_mean, grad_cov }, _) => summary_pullback(zh, grad_mean, grad_cov),
            (DistState::Rbf(bw), _) => mmd_rbf_grad_b(z, zh, *bw)?,
            (_, DiscrepancyKind::MeanOnly) => {
                let mu = column_means(z);
                let mh = column_means(zh);
                let g: Vec<f64> = mu.iter().zip(&mh).map(|(a, h)| 2.0 * (h - a) / b).collect();
                Matrix::from_fn(zh.rows(), zh.cols(), |_, c| g[c])
            }
            (_, DiscrepancyKind::MmdLinear) => mmd_linear_grad_b(z, zh)?,
            (_, DiscrepancyKind::Emd) => empirical_wasserstein_grad_b(z, zh, 1)?.1,
            _ => unreachable!("state matches kind"),
        })
    }

    pub fn backward(self) -> Result<LossReport> {
        let total = self.total();
        let alpha = self.alpha;
        let grad_forecast = if alpha == 0.0 {
            self.mse_grad
        } else {
            let joint = self.dist_joint_grad()?;
            let start = joint.cols() - self.horizon;
            let dist = joint.columns(start, joint.cols());
            if alpha == 1.0 {
                dist
            } else {
                let w = 1.0 - alpha;
                Matrix::from_fn(dist.rows(), dist.cols(), |r, c| {
                    alpha * dist[(r, c)] + w * self.mse_grad[(r, c)]
                })
            }
        };
        if !grad_forecast.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite {} gradient",
                self.kind.name()
            )));
        }
        Ok(LossReport {
            total,
            dist_term: self.dist_term,
            mse_term: self.mse_term,
            grad_forecast,
        })
    }
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `L_α` on one variable's batch, with its gradient in the forecast block.
pub fn distdf_loss(
    history: &Matrix,
    label: &Matrix,
    forecast: &Matrix,
    cfg: &LossConfig,
) -> Result<LossReport> {
    LossForward::new(history, label, forecast, cfg)?.backward()
}

/// Per-variable blocks of a multivariate batch.
#[derive(Debug, Clone)]
pub struct VariableBlock<'a> {
    pub history: &'a Matrix,
    pub label: &'a Matrix,
    pub forecast: &'a Matrix,
}

#[derive(Debug, Clone)]
pub struct MultivariateLossReport {
    pub total: f64,
    pub dist_term: f64,
    pub mse_term: f64,
    /// One gradient per variable, already divided by `D`.
    pub grad_forecast: Vec<Matrix>,
}

/// Channel-independent loss: [`distdf_loss`] per variable, averaged over the
/// variables in index order.
pub fn distdf_loss_multivariate(
    blocks: &[VariableBlock<'_>],
    cfg: &LossConfig,
) -> Result<MultivariateLossReport> {
    if blocks.is_empty() {
        return Err(Error::InvalidInput("no variables in batch".into()));
    }
    let d = blocks.len() as f64;
    let mut out = MultivariateLossReport {
        total: 0.0,
        dist_term: 0.0,
        mse_term: 0.0,
        grad_forecast: Vec::with_capacity(blocks.len()),
    };
    for blk in blocks {
        let r = distdf_loss(blk.history, blk.label, blk.forecast, cfg)?;
        out.total += r.total;
        out.dist_term += r.dist_term;
        out.mse_term += r.mse_term;
        out.grad_forecast.push(if blocks.len() == 1 {
            r.grad_forecast
        } else {
            r.grad_forecast.scaled(1.0 / d)
        });
    }
    out.total /= d;
    out.dist_term /= d;
    out.mse_term /= d;
    Ok(out)
}

/// `‖e‖²_{Σ⁻¹} − ‖e‖²`: how far MSE is from the conditional Gaussian
/// likelihood when the label steps are correlated given the history.
pub fn autocorrelation_bias(residual: &[f64], sigma_cond: &Matrix) -> Result<f64> {
    Ok(mahalanobis_sq(residual, sigma_cond)? - norm_sq(residual))
}

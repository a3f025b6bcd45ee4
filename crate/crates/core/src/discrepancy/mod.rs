//! Distribution discrepancies: Bures–Wasserstein between Gaussian summaries
//! (value and analytic gradient), exact discrete optimal transport, MMD and
//! Gaussian KL.

mod ot;
mod sample_bures;

pub use ot::{
    cost_matrix, discrete_ot, ground_cost, solve_assignment, MAX_ASSIGNMENT_SUPPORT,
    MAX_GENERAL_SUPPORT,
};
pub use sample_bures::SampleBures;

use crate::error::{Error, Result};
use crate::linalg::{
    clamp_floor, column_means, dot, mean_and_cov, psd_sqrt_decomposed, sym_eig, sym_eigenvalues,
    Matrix, SpectralDecomposition, DEFAULT_CLAMP_EPS,
};

/// Mean vector and covariance of a (presumed Gaussian) joint sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl GaussianSummary {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        if !cov.is_square() || cov.rows() != mean.len() {
            return Err(Error::dim(
                "GaussianSummary",
                format!("{0}x{0} covariance", mean.len()),
                format!("{}x{}", cov.rows(), cov.cols()),
            ));
        }
        let n = mean.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-10 * (1.0 + cov.max_abs()) {
                    return Err(Error::InvalidInput(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(GaussianSummary { mean, cov })
    }

    /// Batch mean and ML covariance of a `B×L` sample.
    pub fn from_samples(samples: &Matrix) -> Result<Self> {
        let (mean, cov) = mean_and_cov(samples)?;
        Ok(GaussianSummary { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Weighted point cloud.
#[derive(Debug, Clone)]
pub struct DiscreteDistribution {
    pub points: Matrix,
    pub weights: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(points: Matrix, weights: Vec<f64>) -> Result<Self> {
        if points.rows() != weights.len() {
            return Err(Error::dim(
                "DiscreteDistribution",
                points.rows(),
                weights.len(),
            ));
        }
        if points.rows() == 0 {
            return Err(Error::InvalidInput("empty support".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(DiscreteDistribution { points, weights })
    }

    pub fn uniform(points: Matrix) -> Result<Self> {
        let n = points.rows();
        if n == 0 {
            return Err(Error::InvalidInput("empty support".into()));
        }
        Ok(DiscreteDistribution {
            points,
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub(crate) fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| x == w)
    }
}

/// Optimal coupling and its cost `⟨D, P⟩`.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub value: f64,
}

fn check_square_pair(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return Err(Error::dim(
            context,
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    Ok(())
}

/// Bures term `Tr(Σa) + Tr(Σb) − 2·Tr((Σa^{1/2} Σb Σa^{1/2})^{1/2})`, floored at 0.
/// Eigenvalues of `Σa` are clamped at `clamp_eps · max(λ_max, 1)` before the
/// square root.
pub fn bures(sigma_a: &Matrix, sigma_b: &Matrix, clamp_eps: f64) -> Result<f64> {
    check_square_pair("bures", sigma_a, sigma_b)?;
    let root_a = psd_sqrt_decomposed(&sym_eig(sigma_a)?, clamp_eps);
    let inner = root_a.mul(sigma_b).mul(&root_a);
    let cross = trace_sqrt(&sym_eigenvalues(&inner)?, clamp_eps);
    Ok((sigma_a.trace() + sigma_b.trace() - 2.0 * cross).max(0.0))
}

/// `Σ φ(λ)` with `φ = sqrt` above the clamp floor `f` and its tangent at
/// `f`, `λ/(2√f) + √f/2`, below it, so the value's derivative is exactly the
/// floored `½·max(λ, f)^{-1/2}` used by the gradients. Eigenvalues within
/// the solver's resolution of zero (`n·ε·λ_max`) count as exactly zero.
pub(crate) fn trace_sqrt(eigenvalues: &[f64], clamp_eps: f64) -> f64 {
    let top = eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let cutoff = eigenvalues.len() as f64 * f64::EPSILON * top;
    let floor = clamp_floor(eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l)), clamp_eps);
    let root_floor = floor.sqrt();
    eigenvalues
        .iter()
        .filter(|&&l| l > cutoff)
        .map(|&l| {
            if l >= floor || root_floor == 0.0 {
                l.sqrt()
            } else {
                l / (2.0 * root_floor) + 0.5 * root_floor
            }
        })
        .sum()
}

/// Squared 2-Wasserstein distance between two Gaussians.
pub fn bures_wasserstein(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    bures_wasserstein_with(a, b, DEFAULT_CLAMP_EPS)
}

pub fn bures_wasserstein_with(
    a: &GaussianSummary,
    b: &GaussianSummary,
    clamp_eps: f64,
) -> Result<f64> {
    check_dims("bures_wasserstein", a, b)?;
    let mean_term = squared_distance(&a.mean, &b.mean);
    Ok(mean_term + bures(&a.cov, &b.cov, clamp_eps)?)
}

fn check_dims(context: &'static str, a: &GaussianSummary, b: &GaussianSummary) -> Result<()> {
    if a.dim() != b.dim() || a.cov.rows() != b.cov.rows() {
        return Err(Error::dim(context, a.dim(), b.dim()));
    }
    Ok(())
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Gradient of [`bures_wasserstein`] with respect to `(μ_b, Σ_b)`.
///
/// The covariance part is `I − T`, with `T = Σa^{1/2} (Σa^{1/2} Σb Σa^{1/2})^{-1/2} Σa^{1/2}`
/// the optimal transport map from `N(0, Σb)` to `N(0, Σa)`; both inner
/// spectra use clamped eigenvalues.
pub fn bures_wasserstein_grad(
    a: &GaussianSummary,
    b: &GaussianSummary,
) -> Result<(Vec<f64>, Matrix)> {
    bures_wasserstein_grad_with(a, b, DEFAULT_CLAMP_EPS)
}

pub fn bures_wasserstein_grad_with(
    a: &GaussianSummary,
    b: &GaussianSummary,
    clamp_eps: f64,
) -> Result<(Vec<f64>, Matrix)> {
    check_dims("bures_wasserstein_grad", a, b)?;
    let grad_mean: Vec<f64> = a.mean.iter().zip(&b.mean).map(|(x, y)| 2.0 * (y - x)).collect();
    let grad_cov = bures_cov_grad(&a.cov, &b.cov, clamp_eps)?;
    Ok((grad_mean, grad_cov))
}

pub(crate) fn bures_cov_grad(sigma_a: &Matrix, sigma_b: &Matrix, clamp_eps: f64) -> Result<Matrix> {
    check_square_pair("bures_cov_grad", sigma_a, sigma_b)?;
    let root_a = psd_sqrt_decomposed(&sym_eig(sigma_a)?, clamp_eps);
    let inner = root_a.mul(sigma_b).mul(&root_a);
    let inner_eig = sym_eig(&inner)?;
    let floor = inner_eig.floor(clamp_eps);
    let inv_root = inner_eig.map(|l| 1.0 / l.max(floor).sqrt());
    let transport = root_a.mul(&inv_root).mul(&root_a);
    Matrix::identity(sigma_a.rows()).sub(&transport)
}

/// Biased linear-kernel MMD²: `‖mean(a) − mean(b)‖²`.
pub fn mmd_linear(samples_a: &Matrix, samples_b: &Matrix) -> Result<f64> {
    check_sample_pair("mmd_linear", samples_a, samples_b)?;
    Ok(squared_distance(
        &column_means(samples_a),
        &column_means(samples_b),
    ))
}

/// Gradient of [`mmd_linear`] with respect to the rows of `samples_b`.
pub fn mmd_linear_grad_b(samples_a: &Matrix, samples_b: &Matrix) -> Result<Matrix> {
    check_sample_pair("mmd_linear_grad_b", samples_a, samples_b)?;
    let ma = column_means(samples_a);
    let mb = column_means(samples_b);
    let m = samples_b.rows() as f64;
    let g: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| 2.0 * (y - x) / m).collect();
    Ok(Matrix::from_fn(samples_b.rows(), samples_b.cols(), |_, c| g[c]))
}

fn check_sample_pair(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::dim(context, a.cols(), b.cols()));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::InsufficientSamples {
            context,
            required: 1,
            found: 0,
        });
    }
    Ok(())
}

fn rbf(x: &[f64], y: &[f64], inv_two_sigma_sq: f64) -> f64 {
    (-squared_distance(x, y) * inv_two_sigma_sq).exp()
}

fn kernel_mean(a: &Matrix, b: &Matrix, inv: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            total += rbf(a.row(i), b.row(j), inv);
        }
    }
    total / (a.rows() * b.rows()) as f64
}

/// Biased (V-statistic) MMD² with kernel `exp(−‖x−y‖² / (2·bandwidth²))`.
pub fn mmd_rbf(samples_a: &Matrix, samples_b: &Matrix, bandwidth: f64) -> Result<f64> {
    check_sample_pair("mmd_rbf", samples_a, samples_b)?;
    check_bandwidth(bandwidth)?;
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    Ok(kernel_mean(samples_a, samples_a, inv) + kernel_mean(samples_b, samples_b, inv)
        - 2.0 * kernel_mean(samples_a, samples_b, inv))
}

fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidInput(format!(
            "rbf bandwidth must be positive, got {bandwidth}"
        )));
    }
    Ok(())
}

/// Gradient of [`mmd_rbf`] with respect to the rows of `samples_b`, holding
/// the bandwidth fixed.
pub fn mmd_rbf_grad_b(samples_a: &Matrix, samples_b: &Matrix, bandwidth: f64) -> Result<Matrix> {
    check_sample_pair("mmd_rbf_grad_b", samples_a, samples_b)?;
    check_bandwidth(bandwidth)?;
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let s2 = bandwidth * bandwidth;
    let n = samples_a.rows() as f64;
    let m = samples_b.rows() as f64;
    let mut grad = Matrix::zeros(samples_b.rows(), samples_b.cols());
    for j in 0..samples_b.rows() {
        let bj = samples_b.row(j);
        let mut g = vec![0.0; bj.len()];
        for i in 0..samples_b.rows() {
            let bi = samples_b.row(i);
            let k = rbf(bi, bj, inv) * 2.0 / (m * m * s2);
            for (gc, (x, y)) in g.iter_mut().zip(bi.iter().zip(bj)) {
                *gc += k * (x - y);
            }
        }
        for i in 0..samples_a.rows() {
            let ai = samples_a.row(i);
            let k = rbf(ai, bj, inv) * 2.0 / (n * m * s2);
            for (gc, (x, y)) in g.iter_mut().zip(ai.iter().zip(bj)) {
                *gc -= k * (x - y);
            }
        }
        grad.row_mut(j).copy_from_slice(&g);
    }
    Ok(grad)
}

/// Median pairwise Euclidean distance over the pooled rows of both samples;
/// falls back to 1 when every pair coincides.
pub fn median_bandwidth(samples_a: &Matrix, samples_b: &Matrix) -> f64 {
    let rows: Vec<&[f64]> = (0..samples_a.rows())
        .map(|r| samples_a.row(r))
        .chain((0..samples_b.rows()).map(|r| samples_b.row(r)))
        .collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            d.push(squared_distance(rows[i], rows[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Empirical p-Wasserstein cost between two uniform point clouds.
pub fn empirical_wasserstein(samples_a: &Matrix, samples_b: &Matrix, p: u32) -> Result<f64> {
    let a = DiscreteDistribution::uniform(samples_a.clone())?;
    let b = DiscreteDistribution::uniform(samples_b.clone())?;
    Ok(discrete_ot(&a, &b, p)?.value)
}

/// Subgradient of [`empirical_wasserstein`] with respect to the rows of
/// `samples_b`, read off an optimal plan.
pub fn empirical_wasserstein_grad_b(samples_a: &Matrix, samples_b: &Matrix, p: u32) -> Result<(f64, Matrix)> {
    let a = DiscreteDistribution::uniform(samples_a.clone())?;
    let b = DiscreteDistribution::uniform(samples_b.clone())?;
    let plan = discrete_ot(&a, &b, p)?;
    let mut grad = Matrix::zeros(samples_b.rows(), samples_b.cols());
    for i in 0..samples_a.rows() {
        for j in 0..samples_b.rows() {
            let w = plan.plan[(i, j)];
            if w == 0.0 {
                continue;
            }
            let ai = samples_a.row(i);
            let row = grad.row_mut(j);
            for (g, (&y, &x)) in row.iter_mut().zip(samples_b.row(j).iter().zip(ai)) {
                let diff = y - x;
                let d = match p {
                    1 => diff.signum() * (diff != 0.0) as u8 as f64,
                    _ => p as f64 * diff.abs().powi(p as i32 - 1) * diff.signum(),
                };
                *g += w * d;
            }
        }
    }
    Ok((plan.value, grad))
}

struct ClampedSpectrum {
    eig: SpectralDecomposition,
    floor: f64,
}

impl ClampedSpectrum {
    fn new(cov: &Matrix, clamp_eps: f64) -> Result<Self> {
        let eig = sym_eig(cov)?;
        let floor = eig.floor(clamp_eps);
        if !(floor > 0.0) {
            return Err(Error::Singular("kl_gaussian (clamp_eps must be > 0)"));
        }
        Ok(ClampedSpectrum { eig, floor })
    }

    fn clamped(&self) -> impl Iterator<Item = f64> + '_ {
        self.eig.eigenvalues.iter().map(move |&l| l.max(self.floor))
    }

    fn log_det(&self) -> f64 {
        self.clamped().map(f64::ln).sum()
    }

    fn inverse(&self) -> Matrix {
        self.eig.map(|l| 1.0 / l.max(self.floor))
    }

    fn matrix(&self) -> Matrix {
        self.eig.map(|l| l.max(self.floor))
    }
}

struct KlParts {
    value: f64,
    spec_b: ClampedSpectrum,
    cov_a: Matrix,
    diff: Vec<f64>,
}

fn kl_parts(a: &GaussianSummary, b: &GaussianSummary, clamp_eps: f64) -> Result<KlParts> {
    check_dims("kl_gaussian", a, b)?;
    let spec_a = ClampedSpectrum::new(&a.cov, clamp_eps)?;
    let spec_b = ClampedSpectrum::new(&b.cov, clamp_eps)?;
    let inv_b = spec_b.inverse();
    let cov_a = spec_a.matrix();
    let diff: Vec<f64> = b.mean.iter().zip(&a.mean).map(|(x, y)| x - y).collect();
    let trace_term = inv_b.mul(&cov_a).trace();
    let maha = dot(&diff, &inv_b.mul_vec(&diff)?);
    let l = a.dim() as f64;
    let value = 0.5 * (trace_term + maha - l + spec_b.log_det() - spec_a.log_det());
    Ok(KlParts {
        value,
        spec_b,
        cov_a,
        diff,
    })
}

/// `KL(N(μa, Σa) ‖ N(μb, Σb))`, with both covariances' eigenvalues clamped at
/// `clamp_eps · max(λ_max, 1)`.
pub fn kl_gaussian(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    kl_gaussian_with(a, b, DEFAULT_CLAMP_EPS)
}

pub fn kl_gaussian_with(a: &GaussianSummary, b: &GaussianSummary, clamp_eps: f64) -> Result<f64> {
    Ok(kl_parts(a, b, clamp_eps)?.value)
}

/// Gradient of [`kl_gaussian_with`] with respect to `(μ_b, Σ_b)`.
///
/// The covariance part is exact for the clamped objective, including the
/// dependence of the clamp floor on the largest eigenvalue of `Σ_b`.
pub fn kl_gaussian_grad_with(
    a: &GaussianSummary,
    b: &GaussianSummary,
    clamp_eps: f64,
) -> Result<(f64, Vec<f64>, Matrix)> {
    let KlParts {
        value,
        spec_b,
        cov_a,
        diff,
    } = kl_parts(a, b, clamp_eps)?;
    let floor = spec_b.floor;
    let inv_b = spec_b.inverse();
    let grad_mean = inv_b.mul_vec(&diff)?;

    // ½ Tr(g(Σb)·C) with g(λ) = 1/max(λ, f) and C = Σa + d·dᵀ
    let n = a.dim();
    let cotangent = Matrix::from_fn(n, n, |i, j| cov_a[(i, j)] + diff[i] * diff[j]);
    let inv_dd = |x: f64, y: f64| {
        let (xa, ya) = (x > floor, y > floor);
        match (xa, ya) {
            (true, true) => -1.0 / (x * y),
            (false, false) => 0.0,
            _ => (1.0 / x.max(floor) - 1.0 / y.max(floor)) / (x - y),
        }
    };
    let trace_part = spec_b.eig.spectral_pullback(&cotangent, inv_dd);
    let log_part = spec_b
        .eig
        .map(|l| if l > floor { 1.0 / l } else { 0.0 });
    let mut grad_cov = trace_part.add(&log_part)?.scaled(0.5);

    // The floor is clamp_eps·λ_max when λ_max > 1: clamped eigenvalues move
    // with the top eigenvalue.
    let lam = &spec_b.eig.eigenvalues;
    if lam[0] > 1.0 {
        let v = &spec_b.eig.eigenvectors;
        let rotated = v.transposed_mul(&cotangent.mul(v));
        let mut d_floor = 0.0;
        for (i, &l) in lam.iter().enumerate() {
            if l <= floor {
                d_floor += 0.5 * (-rotated[(i, i)] / (floor * floor) + 1.0 / floor);
            }
        }
        if d_floor != 0.0 {
            let scale = d_floor * clamp_eps;
            for r in 0..n {
                for c in 0..n {
                    grad_cov[(r, c)] += scale * v[(r, 0)] * v[(c, 0)];
                }
            }
        }
    }
    Ok((value, grad_mean, grad_cov))
}

/// Chains a gradient with respect to a batch mean and ML covariance back to
/// the rows of the `B×L` sample they were computed from.
pub fn summary_pullback(samples: &Matrix, grad_mean: &[f64], grad_cov: &Matrix) -> Matrix {
    let b = samples.rows() as f64;
    let mean = column_means(samples);
    let centered = crate::linalg::center_rows(samples, &mean);
    let sym = grad_cov.symmetrized();
    let mut out = centered.mul(&sym).scaled(2.0 / b);
    for r in 0..out.rows() {
        for (o, g) in out.row_mut(r).iter_mut().zip(grad_mean) {
            *o += g / b;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_sq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, ridge: f64) -> Matrix {
        let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        m.transposed_mul(&m).add(&Matrix::identity(n).scaled(ridge)).unwrap()
    }

    fn random_summary(rng: &mut ChaCha8Rng, n: usize) -> GaussianSummary {
        let mean = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        GaussianSummary::new(mean, random_psd(rng, n, 0.2)).unwrap()
    }

    fn gauss1(mu: f64, var: f64) -> GaussianSummary {
        GaussianSummary::new(vec![mu], Matrix::from_diag(&[var])).unwrap()
    }

    #[test]
    fn bures_of_identical_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 3, 8] {
            let s = random_psd(&mut rng, n, 0.0);
            assert!(bures(&s, &s, DEFAULT_CLAMP_EPS).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn gradient_matches_value_below_clamp_floor() {
        // one eigenvalue of Σa^{1/2} Σb Σa^{1/2} sits between the noise
        // cutoff and the floor
        let a = Matrix::identity(3);
        let b = Matrix::from_diag(&[1.0, 2.0, 3e-9]);
        let g = bures_cov_grad(&a, &b, DEFAULT_CLAMP_EPS).unwrap();
        let h = 1e-10;
        let mut up = b.clone();
        up[(2, 2)] += h;
        let mut dn = b.clone();
        dn[(2, 2)] -= h;
        let fd = (bures(&a, &up, DEFAULT_CLAMP_EPS).unwrap() - bures(&a, &dn, DEFAULT_CLAMP_EPS).unwrap()) / (2.0 * h);
        assert!((fd - g[(2, 2)]).abs() < 1e-4 * g[(2, 2)].abs(), "{fd} vs {}", g[(2, 2)]);
    }

    #[test]
    fn bures_diagonal_closed_form() {
        let a = [1.0, 2.0, 0.5];
        let b = [3.0, 0.25, 0.5];
        let sa = Matrix::from_diag(&a.map(|x| x * x));
        let sb = Matrix::from_diag(&b.map(|x| x * x));
        let expected: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        let got = bures(&sa, &sb, DEFAULT_CLAMP_EPS).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn bures_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = random_psd(&mut rng, 4, 0.0);
            let b = random_psd(&mut rng, 4, 0.0);
            let ab = bures(&a, &b, DEFAULT_CLAMP_EPS).unwrap();
            let ba = bures(&b, &a, DEFAULT_CLAMP_EPS).unwrap();
            assert!((ab - ba).abs() < 1e-8);
        }
    }

    #[test]
    fn bures_rejects_mismatched_dims() {
        assert!(matches!(
            bures(&Matrix::identity(2), &Matrix::identity(3), 0.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn bures_wasserstein_one_dimensional() {
        let v = bures_wasserstein(&gauss1(0.0, 1.0), &gauss1(3.0, 4.0)).unwrap();
        assert!((v - 10.0).abs() < 1e-12);
        let same = gauss1(1.5, 2.0);
        assert!(bures_wasserstein(&same, &same).unwrap() <= 1e-12);
    }

    #[test]
    fn grad_one_dimensional_by_hand() {
        let (gm, gc) = bures_wasserstein_grad(&gauss1(1.0, 4.0), &gauss1(-0.5, 9.0)).unwrap();
        assert!((gm[0] - 2.0 * (-0.5 - 1.0)).abs() < 1e-12);
        assert!((gc[(0, 0)] - (1.0 - 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn grad_vanishes_at_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_summary(&mut rng, 5);
        let (gm, gc) = bures_wasserstein_grad(&a, &a).unwrap();
        assert!(gm.iter().all(|&x| x == 0.0));
        assert!(gc.max_abs() < 1e-6, "{}", gc.max_abs());
    }

    #[test]
    fn grad_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_summary(&mut rng, 5);
        let b = random_summary(&mut rng, 5);
        let (gm, gc) = bures_wasserstein_grad(&a, &b).unwrap();
        let h = 1e-5;
        let f = |bb: &GaussianSummary| bures_wasserstein(&a, bb).unwrap();
        for i in 0..5 {
            let mut up = b.clone();
            up.mean[i] += h;
            let mut dn = b.clone();
            dn.mean[i] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((fd - gm[i]).abs() <= 1e-4 * fd.abs().max(1.0));
            for j in 0..5 {
                // symmetric perturbation of (i, j) and (j, i)
                let mut up = b.clone();
                let mut dn = b.clone();
                up.cov[(i, j)] += h;
                dn.cov[(i, j)] -= h;
                if i != j {
                    up.cov[(j, i)] += h;
                    dn.cov[(j, i)] -= h;
                }
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                let analytic = if i == j { gc[(i, j)] } else { 2.0 * gc[(i, j)] };
                assert!(
                    (fd - analytic).abs() <= 1e-4 * fd.abs().max(1.0),
                    "({i},{j}) fd={fd} analytic={analytic}"
                );
            }
        }
    }

    #[test]
    fn discrete_ot_small_examples() {
        let pts = |v: &[f64]| Matrix::from_fn(v.len(), 1, |r, _| v[r]);
        let u = |v: &[f64]| DiscreteDistribution::uniform(pts(v)).unwrap();
        assert_eq!(discrete_ot(&u(&[0.0, 1.0]), &u(&[0.0, 1.0]), 2).unwrap().value, 0.0);
        let far = discrete_ot(&u(&[0.0, 1.0]), &u(&[2.0, 3.0]), 2).unwrap();
        assert!((far.value - 4.0).abs() < 1e-15);
        // general-weight path
        let a = DiscreteDistribution::new(pts(&[0.0, 1.0]), vec![0.25, 0.75]).unwrap();
        let b = DiscreteDistribution::new(pts(&[0.0, 1.0, 5.0]), vec![0.25, 0.5, 0.25]).unwrap();
        let plan = discrete_ot(&a, &b, 1).unwrap();
        assert!((plan.value - 0.25 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_ot_rejects_unnormalized_weights() {
        let pts = Matrix::from_fn(2, 1, |r, _| r as f64);
        assert!(DiscreteDistribution::new(pts.clone(), vec![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::new(pts, vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn empirical_wasserstein_1d_sorting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 12;
            let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..4.0)).collect();
            let ma = Matrix::column(&a);
            let mb = Matrix::column(&b);
            let got = empirical_wasserstein(&ma, &mb, 1).unwrap();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            let expected: f64 =
                a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
            assert!((got - expected).abs() < 1e-12);
            let sym = empirical_wasserstein(&mb, &ma, 1).unwrap();
            assert!((got - sym).abs() < 1e-12);
        }
    }

    #[test]
    fn mmd_examples() {
        let a = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, -1.0]]).unwrap();
        assert_eq!(mmd_linear(&a, &a).unwrap(), 0.0);
        let z = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let o = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(mmd_linear(&z, &o).unwrap(), 2.0);
        assert!(mmd_rbf(&a, &a, 0.7).unwrap().abs() < 1e-12);
        let d2: f64 = 2.0;
        let sigma: f64 = 1.3;
        let expected = 2.0 - 2.0 * (-d2 / (2.0 * sigma * sigma)).exp();
        assert!((mmd_rbf(&z, &o, sigma).unwrap() - expected).abs() < 1e-15);
        assert!(mmd_rbf(&z, &o, 0.0).is_err());
        assert!(mmd_linear(&z, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn mmd_rbf_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Matrix::from_fn(7, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = Matrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..2.0));
        let sigma = median_bandwidth(&a, &b);
        let k = |x: &[f64], y: &[f64]| {
            let d: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            (-d / (2.0 * sigma * sigma)).exp()
        };
        let mut xx = 0.0;
        let mut yy = 0.0;
        let mut xy = 0.0;
        for i in 0..7 {
            for j in 0..7 {
                xx += k(a.row(i), a.row(j));
            }
            for j in 0..5 {
                xy += k(a.row(i), b.row(j));
            }
        }
        for i in 0..5 {
            for j in 0..5 {
                yy += k(b.row(i), b.row(j));
            }
        }
        let naive = xx / 49.0 + yy / 25.0 - 2.0 * xy / 35.0;
        assert!((mmd_rbf(&a, &b, sigma).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn mmd_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Matrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..2.0));
        let gl = mmd_linear_grad_b(&a, &b).unwrap();
        let gr = mmd_rbf_grad_b(&a, &b, 0.9).unwrap();
        let h = 1e-6;
        for r in 0..4 {
            for c in 0..3 {
                let mut up = b.clone();
                up[(r, c)] += h;
                let mut dn = b.clone();
                dn[(r, c)] -= h;
                let fl = (mmd_linear(&a, &up).unwrap() - mmd_linear(&a, &dn).unwrap()) / (2.0 * h);
                let fr =
                    (mmd_rbf(&a, &up, 0.9).unwrap() - mmd_rbf(&a, &dn, 0.9).unwrap()) / (2.0 * h);
                assert!((fl - gl[(r, c)]).abs() < 1e-7);
                assert!((fr - gr[(r, c)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn kl_examples() {
        assert!(kl_gaussian(&gauss1(0.0, 1.0), &gauss1(0.0, 1.0)).unwrap().abs() < 1e-15);
        assert!((kl_gaussian(&gauss1(0.0, 1.0), &gauss1(1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_summary(&mut rng, 4);
        let b = random_summary(&mut rng, 4);
        let ab = kl_gaussian(&a, &b).unwrap();
        let ba = kl_gaussian(&b, &a).unwrap();
        assert!(ab > 0.0 && ba > 0.0);
        assert!((ab - ba).abs() > 1e-6, "KL should be asymmetric");
    }

    #[test]
    fn kl_matches_joint_diagonalisation() {
        // eigenvalues γ of Σb^{-1/2} Σa Σb^{-1/2}:
        // KL = ½(Σ(γ − 1 − ln γ) + dᵀ Σb⁻¹ d)
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = random_summary(&mut rng, 4);
            let b = random_summary(&mut rng, 4);
            let eb = sym_eig(&b.cov).unwrap();
            let inv_root = eb.map(|l| 1.0 / l.sqrt());
            let whitened = inv_root.mul(&a.cov).mul(&inv_root);
            let gammas = sym_eigenvalues(&whitened).unwrap();
            let d: Vec<f64> = a.mean.iter().zip(&b.mean).map(|(x, y)| x - y).collect();
            let wd = inv_root.mul_vec(&d).unwrap();
            let expected = 0.5
                * (gammas.iter().map(|g| g - 1.0 - g.ln()).sum::<f64>() + norm_sq(&wd));
            let got = kl_gaussian(&a, &b).unwrap();
            assert!((got - expected).abs() <= 1e-8 * expected.abs().max(1e-12), "{got} vs {expected}");
        }
    }

    #[test]
    fn kl_grad_matches_finite_differences_including_singular_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_summary(&mut rng, 4);
        // rank-2 Σb with λ_max > 1 so clamped eigenvalues depend on λ_max
        let m = Matrix::from_fn(2, 4, |_, _| rng.random_range(-1.5..1.5));
        let cov_b = m.transposed_mul(&m);
        let b = GaussianSummary::new(vec![0.3, -0.2, 0.1, 0.4], cov_b).unwrap();
        for summary in [b, random_summary(&mut rng, 4)] {
            let (_, gm, gc) = kl_gaussian_grad_with(&a, &summary, 1e-3).unwrap();
            let f = |s: &GaussianSummary| kl_gaussian_with(&a, s, 1e-3).unwrap();
            let h = 1e-7;
            for i in 0..4 {
                let mut up = summary.clone();
                up.mean[i] += h;
                let mut dn = summary.clone();
                dn.mean[i] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - gm[i]).abs() <= 1e-4 * fd.abs().max(1.0));
                for j in 0..4 {
                    let mut up = summary.clone();
                    let mut dn = summary.clone();
                    up.cov[(i, j)] += h;
                    dn.cov[(i, j)] -= h;
                    let fd = (f(&up) - f(&dn)) / (2.0 * h);
                    assert!(
                        (fd - gc[(i, j)]).abs() <= 1e-4 * fd.abs().max(1.0),
                        "({i},{j}) fd={fd} analytic={}",
                        gc[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn summary_pullback_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = Matrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let gm = vec![0.3, -0.1, 0.7];
        let gc = random_psd(&mut rng, 3, 0.0);
        let f = |zz: &Matrix| {
            let (m, c) = mean_and_cov(zz).unwrap();
            dot(&m, &gm) + c.as_slice().iter().zip(gc.as_slice()).map(|(x, y)| x * y).sum::<f64>()
        };
        let g = summary_pullback(&z, &gm, &gc);
        let h = 1e-6;
        for r in 0..6 {
            for c in 0..3 {
                let mut up = z.clone();
                up[(r, c)] += h;
                let mut dn = z.clone();
                dn[(r, c)] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - g[(r, c)]).abs() < 1e-7);
            }
        }
    }
}

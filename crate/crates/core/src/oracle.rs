//! Property suites run by `distdf oracle`: the joint-vs-conditional bound,
//! its p=1 equality, alignment at zero joint discrepancy, Gaussian vs
//! empirical convergence, gradient checks and the assignment solver.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::GaussianStream;
use crate::discrepancy::{
    bures_wasserstein, bures_wasserstein_grad, cost_matrix, discrete_ot, empirical_wasserstein,
    DiscreteDistribution, GaussianSummary,
};
use crate::error::Result;
use crate::linalg::{psd_sqrt, Matrix};
use crate::loss::{distdf_loss, DiscrepancyKind, LossConfig};
use crate::output::sig17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Bound,
    Equality,
    Alignment,
    Convergence,
    Gradient,
    Assignment,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Bound,
        Suite::Equality,
        Suite::Alignment,
        Suite::Convergence,
        Suite::Gradient,
        Suite::Assignment,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Worst observed slack (bound checks) or error (equality checks).
    #[serde(serialize_with = "sig17")]
    pub worst: f64,
    #[serde(serialize_with = "sig17")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Discrete joints over `(X, Y)` and `(X, Y')` sharing the X marginal.
#[derive(Debug, Clone)]
pub struct JointPair {
    pub x_values: Vec<f64>,
    pub marginal: Vec<f64>,
    pub cond_a: Vec<DiscreteDistribution>,
    pub cond_b: Vec<DiscreteDistribution>,
}

/// Spacing between X support points; larger than any within-slice cost, so
/// every optimal joint plan keeps mass within its X slice.
pub const X_SPACING: f64 = 10.0;

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let head: f64 = w[..n - 1].iter().sum();
    w[n - 1] = 1.0 - head;
    w
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Result<DiscreteDistribution> {
    let pts = Matrix::from_fn(n, dim, |_, _| rng.random_range(0.0..1.0));
    let w = random_simplex(rng, n);
    DiscreteDistribution::new(pts, w)
}

impl JointPair {
    /// `k ≤ 4` X values, each slice with up to five Y atoms in `[0,1]^dim`.
    pub fn random(rng: &mut ChaCha8Rng, dim: usize) -> Result<Self> {
        let k = rng.random_range(1..=4);
        let x_values = (0..k).map(|i| i as f64 * X_SPACING).collect();
        let marginal = random_simplex(rng, k);
        let mut cond_a = Vec::with_capacity(k);
        let mut cond_b = Vec::with_capacity(k);
        for _ in 0..k {
            let na = rng.random_range(1..=5);
            let nb = rng.random_range(1..=5);
            cond_a.push(random_cloud(rng, na, dim)?);
            cond_b.push(random_cloud(rng, nb, dim)?);
        }
        Ok(JointPair {
            x_values,
            marginal,
            cond_a,
            cond_b,
        })
    }

    pub fn joint(&self, which_b: bool) -> Result<DiscreteDistribution> {
        let conds = if which_b { &self.cond_b } else { &self.cond_a };
        joint_from_slices(&self.x_values, &self.marginal, conds)
    }
}

/// Stacks `(x, y)` atoms with weights `P(x)·q_x(y)`.
pub fn joint_from_slices(
    x_values: &[f64],
    marginal: &[f64],
    conds: &[DiscreteDistribution],
) -> Result<DiscreteDistribution> {
    let dim = conds[0].points.cols();
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    for ((&x, &px), c) in x_values.iter().zip(marginal).zip(conds) {
        for i in 0..c.len() {
            let mut row = Vec::with_capacity(dim + 1);
            row.push(x);
            row.extend_from_slice(c.points.row(i));
            rows.push(row);
            weights.push(px * c.weights[i]);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    DiscreteDistribution::new(Matrix::from_rows(&rows)?, weights)
}

/// `(Σ_x P(x)·W_p(cond), W_p(joint))` with `W_p = (OT cost)^{1/p}`.
pub fn bound_sides(pair: &JointPair, p: u32) -> Result<(f64, f64)> {
    let root = |v: f64| v.max(0.0).powf(1.0 / p as f64);
    let mut lhs = 0.0;
    for ((w, a), b) in pair.marginal.iter().zip(&pair.cond_a).zip(&pair.cond_b) {
        lhs += w * root(discrete_ot(a, b, p)?.value);
    }
    let rhs = root(discrete_ot(&pair.joint(false)?, &pair.joint(true)?, p)?.value);
    Ok((lhs, rhs))
}

/// A joint and a relabelled copy at zero transport cost: atoms permuted and
/// some split in two at the same location.
pub fn aligned_pair(rng: &mut ChaCha8Rng, dim: usize) -> Result<JointPair> {
    let base = JointPair::random(rng, dim)?;
    let mut cond_b = Vec::with_capacity(base.cond_a.len());
    for c in &base.cond_a {
        let mut rows = Vec::new();
        let mut w = Vec::new();
        for i in 0..c.len() {
            if rng.random_bool(0.4) {
                let f = rng.random_range(0.2..0.8);
                rows.push(c.points.row(i).to_vec());
                w.push(c.weights[i] * f);
                rows.push(c.points.row(i).to_vec());
                w.push(c.weights[i] * (1.0 - f));
            } else {
                rows.push(c.points.row(i).to_vec());
                w.push(c.weights[i]);
            }
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(rng);
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
        let w: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        let total: f64 = w.iter().sum();
        cond_b.push(DiscreteDistribution::new(
            Matrix::from_rows(&rows)?,
            w.iter().map(|x| x / total).collect(),
        )?);
    }
    Ok(JointPair { cond_b, ..base })
}

fn draw_gaussian(g: &mut GaussianStream, mean: &[f64], root: &Matrix, n: usize) -> Matrix {
    let d = mean.len();
    let z = Matrix::from_fn(n, d, |_, _| g.next_standard());
    let mut x = z.mul(root);
    for r in 0..n {
        for (v, m) in x.row_mut(r).iter_mut().zip(mean) {
            *v += m;
        }
    }
    x
}

/// A random Gaussian pair in dimension `d`: means in `[−3, 3]^d`,
/// covariances `AAᵀ + 0.1·I` with `A` uniform in `[−1, 1]`.
pub fn random_gaussian_pair(rng: &mut ChaCha8Rng, d: usize) -> Result<(GaussianSummary, GaussianSummary)> {
    let mut one = || -> Result<GaussianSummary> {
        let mean = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let cov = a.mul(&a.transpose()).add(&Matrix::identity(d).scaled(0.1))?;
        GaussianSummary::new(mean, cov.symmetrized())
    };
    Ok((one()?, one()?))
}

/// Relative gap between empirical W₂² on `n` samples per side and the
/// closed form.
pub fn convergence_gap(a: &GaussianSummary, b: &GaussianSummary, n: usize, seed: u64) -> Result<(f64, f64)> {
    let mut g = GaussianStream::new(seed);
    let sa = draw_gaussian(&mut g, &a.mean, &psd_sqrt(&a.cov, 0.0)?, n);
    let sb = draw_gaussian(&mut g, &b.mean, &psd_sqrt(&b.cov, 0.0)?, n);
    let emp = empirical_wasserstein(&sa, &sb, 2)?;
    let exact = bures_wasserstein(a, b)?;
    Ok((emp, exact))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

struct Tally {
    name: String,
    cases: usize,
    worst: f64,
    tolerance: f64,
    passed: bool,
}

impl Tally {
    fn new(name: &str, tolerance: f64) -> Self {
        Tally {
            name: name.into(),
            cases: 0,
            worst: 0.0,
            tolerance,
            passed: true,
        }
    }

    /// Records an error-type quantity that must stay `≤ tolerance`.
    fn error(&mut self, e: f64) {
        self.cases += 1;
        self.worst = self.worst.max(e);
        if !(e <= self.tolerance) {
            self.passed = false;
        }
    }

    fn finish(self) -> Check {
        Check {
            name: self.name,
            passed: self.passed,
            cases: self.cases,
            worst: self.worst,
            tolerance: self.tolerance,
        }
    }
}

fn bound_checks(rng: &mut ChaCha8Rng, equality: bool) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let ps: &[u32] = if equality { &[1] } else { &[1, 2] };
    for &p in ps {
        let name = if equality {
            format!("equality_p{p}")
        } else {
            format!("bound_p{p}")
        };
        let mut t = Tally::new(&name, 1e-9);
        for _ in 0..100 {
            let dim = rng.random_range(1..=2);
            let pair = JointPair::random(rng, dim)?;
            let (lhs, rhs) = bound_sides(&pair, p)?;
            // bound: excess of LHS over RHS; equality: absolute gap
            t.error(if equality { (lhs - rhs).abs() } else { lhs - rhs });
        }
        out.push(t.finish());
    }
    Ok(out)
}

fn alignment_check(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut joint = Tally::new("alignment_joint_zero", 1e-12);
    let mut slices = Tally::new("alignment_conditionals", 1e-9);
    for case in 0..100 {
        let p = if case % 2 == 0 { 1 } else { 2 };
        let dim = rng.random_range(1..=2);
        let pair = aligned_pair(rng, dim)?;
        let j = discrete_ot(&pair.joint(false)?, &pair.joint(true)?, p)?.value;
        joint.error(j);
        let worst = pair
            .cond_a
            .iter()
            .zip(&pair.cond_b)
            .map(|(a, b)| discrete_ot(a, b, p).map(|t| t.value))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        slices.error(worst);
    }
    Ok(vec![joint.finish(), slices.finish()])
}

fn convergence_check(rng: &mut ChaCha8Rng, seed: u64, n: usize) -> Result<Vec<Check>> {
    let mut t = Tally::new(&format!("gaussian_vs_empirical_n{n}"), 0.10);
    for d in 1..=3 {
        let (a, b) = random_gaussian_pair(rng, d)?;
        let (emp, exact) = convergence_gap(&a, &b, n, seed.wrapping_add(d as u64))?;
        t.error((emp - exact).abs() / exact.max(1e-12));
    }
    Ok(vec![t.finish()])
}

fn gradient_check(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut bw = Tally::new("bures_wasserstein_grad_fd", 1e-4);
    let h = 1e-5;
    for case in 0..100 {
        let d = 2 + case % 15;
        let (a, b) = random_gaussian_pair(rng, d)?;
        let (gm, gc) = bures_wasserstein_grad(&a, &b)?;
        let f = |s: &GaussianSummary| bures_wasserstein(&a, s);
        let mut worst: f64 = 0.0;
        // one mean and one covariance coordinate per case keeps the suite fast
        let i = rng.random_range(0..d);
        let j = rng.random_range(0..d);
        let mut up = b.clone();
        up.mean[i] += h;
        let mut dn = b.clone();
        dn.mean[i] -= h;
        let fd = (f(&up)? - f(&dn)?) / (2.0 * h);
        worst = worst.max((fd - gm[i]).abs() / fd.abs().max(1.0));
        let mut up = b.clone();
        let mut dn = b.clone();
        up.cov[(i, j)] += h;
        dn.cov[(i, j)] -= h;
        if i != j {
            up.cov[(j, i)] += h;
            dn.cov[(j, i)] -= h;
        }
        let fd = (f(&up)? - f(&dn)?) / (2.0 * h);
        let analytic = if i == j { gc[(i, j)] } else { 2.0 * gc[(i, j)] };
        worst = worst.max((fd - analytic).abs() / fd.abs().max(1.0));
        bw.error(worst);
    }
    let mut out = vec![bw.finish()];
    for kind in [
        DiscrepancyKind::BuresWasserstein,
        DiscrepancyKind::MeanOnly,
        DiscrepancyKind::CovOnly,
        DiscrepancyKind::MmdLinear,
        DiscrepancyKind::Kl,
    ] {
        let mut t = Tally::new(&format!("loss_grad_fd_{}", kind.name()), 1e-4);
        for _ in 0..10 {
            let b = [4, 16][rng.random_range(0..2)];
            let hd = [4, 8][rng.random_range(0..2)];
            let td = [2, 8][rng.random_range(0..2)];
            let m = |rng: &mut ChaCha8Rng, c: usize| Matrix::from_fn(b, c, |_, _| rng.random_range(-1.0..1.0));
            let (x, y, yh) = (m(rng, hd), m(rng, td), m(rng, td));
            let cfg = LossConfig::new(0.5, kind);
            let g = distdf_loss(&x, &y, &yh, &cfg)?.grad_forecast;
            let mut worst: f64 = 0.0;
            for r in 0..b {
                for c in 0..td {
                    let mut up = yh.clone();
                    up[(r, c)] += h;
                    let mut dn = yh.clone();
                    dn[(r, c)] -= h;
                    let fd = (distdf_loss(&x, &y, &up, &cfg)?.total - distdf_loss(&x, &y, &dn, &cfg)?.total)
                        / (2.0 * h);
                    worst = worst.max((fd - g[(r, c)]).abs() / fd.abs().max(1e-2));
                }
            }
            t.error(worst);
        }
        out.push(t.finish());
    }
    Ok(out)
}

fn assignment_check(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut t = Tally::new("assignment_vs_permutations", 1e-10);
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let d = rng.random_range(1..=3);
        let a = Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let b = Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let p = rng.random_range(1..=2);
        let cost = cost_matrix(&a, &b, p);
        let brute = permutations(n)
            .iter()
            .map(|perm| perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        let got = discrete_ot(
            &DiscreteDistribution::uniform(a)?,
            &DiscreteDistribution::uniform(b)?,
            p,
        )?
        .value;
        t.error((got - brute).abs());
    }
    Ok(vec![t.finish()])
}

/// Runs the selected suites; each suite draws from its own seeded stream.
pub fn run_oracle(suites: &[Suite], seed: u64, convergence_samples: usize) -> Result<OracleReport> {
    let mut checks = Vec::new();
    for &s in suites {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64 + 1);
        let mut c = match s {
            Suite::Bound => bound_checks(&mut rng, false)?,
            Suite::Equality => bound_checks(&mut rng, true)?,
            Suite::Alignment => alignment_check(&mut rng)?,
            Suite::Convergence => convergence_check(&mut rng, seed, convergence_samples)?,
            Suite::Gradient => gradient_check(&mut rng)?,
            Suite::Assignment => assignment_check(&mut rng)?,
        };
        checks.append(&mut c);
    }
    Ok(OracleReport {
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

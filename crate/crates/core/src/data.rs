//! Series containers, synthetic AR generation, chronological splits,
//! sliding windows, train-split standardization and CSV I/O.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// `T_total × D` observations with variable names and optional timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub values: Matrix,
    pub names: Vec<String>,
    pub timestamps: Option<Vec<String>>,
}

impl Series {
    pub fn new(values: Matrix, names: Vec<String>, timestamps: Option<Vec<String>>) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(Error::dim("Series names", values.cols(), names.len()));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != values.rows() {
                return Err(Error::dim("Series timestamps", values.rows(), ts.len()));
            }
        }
        if !values.all_finite() {
            return Err(Error::InvalidInput("series contains non-finite values".into()));
        }
        Ok(Series {
            values,
            names,
            timestamps,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn num_variables(&self) -> usize {
        self.values.cols()
    }

    pub fn variable(&self, v: usize) -> Vec<f64> {
        self.values.col(v)
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Series {
        let idx: Vec<usize> = (start..end).collect();
        Series {
            values: self.values.select_rows(&idx),
            names: self.names.clone(),
            timestamps: self.timestamps.as_ref().map(|t| t[start..end].to_vec()),
        }
    }

    /// Stacks segments in time order.
    pub fn concat(parts: &[Series]) -> Result<Series> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("nothing to concatenate".into()))?;
        let cols = first.num_variables();
        let mut data = Vec::new();
        let mut stamps = first.timestamps.as_ref().map(|_| Vec::new());
        for p in parts {
            if p.num_variables() != cols {
                return Err(Error::dim("Series::concat", cols, p.num_variables()));
            }
            data.extend_from_slice(p.values.as_slice());
            match (&mut stamps, &p.timestamps) {
                (Some(acc), Some(t)) => acc.extend(t.iter().cloned()),
                (None, None) => {}
                _ => return Err(Error::InvalidInput("mixed timestamped segments".into())),
            }
        }
        let rows = data.len() / cols.max(1);
        Series::new(Matrix::from_vec(rows, cols, data)?, first.names.clone(), stamps)
    }
}

/// AR(p) process `s_t = Σ φ_k s_{t−k} + ε_t`, `ε_t ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArSpec {
    pub coefficients: Vec<f64>,
    pub noise_std: f64,
    pub length: usize,
    pub seed: u64,
}

impl ArSpec {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidInput(format!(
                "noise_std must be positive, got {}",
                self.noise_std
            )));
        }
        if self.length == 0 {
            return Err(Error::InvalidInput("length must be >= 1".into()));
        }
        check_stationary(&self.coefficients)
    }
}

/// Rejects AR coefficients whose companion matrix has spectral radius ≥ 1,
/// via the step-down recursion: stationary iff every reflection coefficient
/// has magnitude < 1.
pub fn check_stationary(coefficients: &[f64]) -> Result<()> {
    if let Some(c) = coefficients.iter().find(|c| !c.is_finite()) {
        return Err(Error::NonStationary(format!("coefficient {c} is not finite")));
    }
    let mut a = coefficients.to_vec();
    while let Some(&k) = a.last() {
        if k.abs() >= 1.0 {
            return Err(Error::NonStationary(format!(
                "coefficients {coefficients:?} have a characteristic root on or inside the unit circle (reflection coefficient {k})"
            )));
        }
        let p = a.len();
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..p - 1).map(|i| (a[i] + k * a[p - 2 - i]) / denom).collect();
        a = next;
    }
    Ok(())
}

/// Standard normal draws by Box–Muller over a ChaCha8 stream, both outputs
/// of each pair used in order.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        GaussianStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

fn simulate_ar(spec: &ArSpec) -> Vec<f64> {
    let p = spec.order();
    let burn = 10 * p;
    let mut noise = GaussianStream::new(spec.seed);
    let mut s = vec![0.0; burn + spec.length];
    for t in 0..s.len() {
        let mut v = spec.noise_std * noise.next_standard();
        for (k, &phi) in spec.coefficients.iter().enumerate() {
            if t > k {
                v += phi * s[t - k - 1];
            }
        }
        s[t] = v;
    }
    s.split_off(burn)
}

/// One AR path as a single-variable series named `x0`.
pub fn generate_ar(spec: &ArSpec) -> Result<Series> {
    generate_ar_variables(spec, 1)
}

/// `variables` independent AR paths sharing coefficients; variable `v` uses
/// seed `spec.seed + v`.
pub fn generate_ar_variables(spec: &ArSpec, variables: usize) -> Result<Series> {
    spec.validate()?;
    if variables == 0 {
        return Err(Error::InvalidInput("variables must be >= 1".into()));
    }
    let cols: Vec<Vec<f64>> = (0..variables)
        .map(|v| {
            simulate_ar(&ArSpec {
                seed: spec.seed.wrapping_add(v as u64),
                ..spec.clone()
            })
        })
        .collect();
    let values = Matrix::from_fn(spec.length, variables, |r, c| cols[c][r]);
    Series::new(values, (0..variables).map(|v| format!("x{v}")).collect(), None)
}

/// Covariance of the next `horizon` AR(1) values given the last observed
/// one: entry `(s, t)` (1-based) is `σ² φ^{|s−t|} (1 − φ^{2 min(s,t)}) / (1 − φ²)`.
pub fn ar1_conditional_cov(phi: f64, sigma: f64, horizon: usize) -> Result<Matrix> {
    if !(phi.abs() < 1.0) {
        return Err(Error::NonStationary(format!("|phi| must be < 1, got {phi}")));
    }
    let s2 = sigma * sigma;
    let denom = 1.0 - phi * phi;
    Ok(Matrix::from_fn(horizon, horizon, |i, j| {
        let (s, t) = (i + 1, j + 1);
        let lag = s.abs_diff(t) as i32;
        let m = s.min(t) as i32;
        s2 * phi.powi(lag) * (1.0 - phi.powi(2 * m)) / denom
    }))
}

/// Sliding windows over one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `B×H`.
    pub history: Matrix,
    /// `B×T`.
    pub label: Matrix,
    pub variable_index: usize,
    /// Start offset of each window within the source series.
    pub offsets: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.history.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.history.rows() == 0
    }

    pub fn rows(&self, idx: &[usize]) -> (Matrix, Matrix) {
        (self.history.select_rows(idx), self.label.select_rows(idx))
    }
}

/// Number of windows `⌊(N − H − T)/stride⌋ + 1`, or an error if the series
/// cannot hold one.
pub fn window_count(len: usize, history: usize, horizon: usize, stride: usize) -> Result<usize> {
    if history == 0 || horizon == 0 || stride == 0 {
        return Err(Error::InvalidInput(
            "history, horizon and stride must be >= 1".into(),
        ));
    }
    if len < history + horizon {
        return Err(Error::SeriesTooShort(format!(
            "{len} steps cannot hold a window of {history}+{horizon}"
        )));
    }
    Ok((len - history - horizon) / stride + 1)
}

/// One [`WindowBatch`] per variable, windows at offsets `0, stride, …`.
pub fn make_windows(series: &Series, history: usize, horizon: usize, stride: usize) -> Result<Vec<WindowBatch>> {
    let n = window_count(series.len(), history, horizon, stride)?;
    let offsets: Vec<usize> = (0..n).map(|i| i * stride).collect();
    Ok((0..series.num_variables())
        .map(|v| {
            let x = &series.values;
            WindowBatch {
                history: Matrix::from_fn(n, history, |r, c| x[(offsets[r] + c, v)]),
                label: Matrix::from_fn(n, horizon, |r, c| x[(offsets[r] + history + c, v)]),
                variable_index: v,
                offsets: offsets.clone(),
            }
        })
        .collect())
}

/// Fixed-length ETT splits of 12/4/4 months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPreset {
    /// Hourly files: 8640/2880/2880 steps.
    EttHourly,
    /// 15-minute files: 34560/11520/11520 steps.
    EttMinutely,
}

impl SplitPreset {
    pub fn lengths(self) -> [usize; 3] {
        let per_month = match self {
            SplitPreset::EttHourly => 30 * 24,
            SplitPreset::EttMinutely => 30 * 24 * 4,
        };
        [12 * per_month, 4 * per_month, 4 * per_month]
    }

    /// Sample counts under the benchmark convention that val/test windows may
    /// start in the preceding `history` steps: `(train − H + 1, val + 1, test + 1)`.
    pub fn sample_counts(self, history: usize) -> [usize; 3] {
        let [tr, va, te] = self.lengths();
        [tr + 1 - history, va + 1, te + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Split {
    Ratios { train: f64, val: f64, test: f64 },
    Preset(SplitPreset),
}

impl Default for Split {
    fn default() -> Self {
        Split::Ratios {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl Split {
    /// Segment lengths for a series of `len` steps.
    pub fn lengths(&self, len: usize) -> Result<[usize; 3]> {
        match *self {
            Split::Ratios { train, val, test } => {
                let r = [train, val, test];
                if r.iter().any(|x| !(*x > 0.0)) || ((train + val + test) - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "split ratios must be positive and sum to 1, got {r:?}"
                    )));
                }
                let n = len as f64;
                let tr = (n * train).round() as usize;
                let va = ((n * val).round() as usize).min(len - tr.min(len));
                Ok([tr.min(len), va, len - tr.min(len) - va])
            }
            Split::Preset(p) => {
                let l = p.lengths();
                let need: usize = l.iter().sum();
                if len < need {
                    return Err(Error::SeriesTooShort(format!(
                        "preset {p:?} needs {need} steps, series has {len}"
                    )));
                }
                Ok(l)
            }
        }
    }
}

/// Contiguous train/val/test segments; each must hold at least `min_len`
/// steps. Steps past a preset's total are dropped.
pub fn chronological_split(series: &Series, split: &Split, min_len: usize) -> Result<[Series; 3]> {
    let [tr, va, te] = split.lengths(series.len())?;
    for (name, l) in [("train", tr), ("val", va), ("test", te)] {
        if l < min_len {
            return Err(Error::SeriesTooShort(format!(
                "{name} segment has {l} steps, need at least {min_len}"
            )));
        }
    }
    Ok([
        series.slice(0, tr),
        series.slice(tr, tr + va),
        series.slice(tr + va, tr + va + te),
    ])
}

/// Per-variable affine map fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation per variable; a constant
    /// variable gets scale 1.
    pub fn fit(train: &Series) -> Result<Self> {
        let n = train.len();
        if n == 0 {
            return Err(Error::InsufficientSamples {
                context: "Scaler::fit",
                required: 1,
                found: 0,
            });
        }
        let mut mean = Vec::with_capacity(train.num_variables());
        let mut scale = Vec::with_capacity(train.num_variables());
        for v in 0..train.num_variables() {
            let col = train.variable(v);
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            mean.push(m);
            if sd > 0.0 {
                scale.push(sd);
            } else {
                log::warn!("variable `{}` is constant on the train split; scale set to 1", train.names[v]);
                scale.push(1.0);
            }
        }
        Ok(Scaler { mean, scale })
    }

    fn check(&self, s: &Series) -> Result<()> {
        if s.num_variables() != self.mean.len() {
            return Err(Error::dim("Scaler", self.mean.len(), s.num_variables()));
        }
        Ok(())
    }

    pub fn transform(&self, s: &Series) -> Result<Series> {
        self.check(s)?;
        let values = Matrix::from_fn(s.len(), s.num_variables(), |r, c| {
            (s.values[(r, c)] - self.mean[c]) / self.scale[c]
        });
        Ok(Series { values, ..s.clone() })
    }

    pub fn inverse_transform(&self, s: &Series) -> Result<Series> {
        self.check(s)?;
        let values = Matrix::from_fn(s.len(), s.num_variables(), |r, c| {
            s.values[(r, c)] * self.scale[c] + self.mean[c]
        });
        Ok(Series { values, ..s.clone() })
    }
}

/// Fits a [`Scaler`] on `train` and applies it to `train` and every other
/// segment.
pub fn standardize(train: &Series, others: &[Series]) -> Result<(Scaler, Series, Vec<Series>)> {
    let scaler = Scaler::fit(train)?;
    let t = scaler.transform(train)?;
    let rest = others.iter().map(|s| scaler.transform(s)).collect::<Result<Vec<_>>>()?;
    Ok((scaler, t, rest))
}

fn csv_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads a headed CSV; a first column named `date` (any case) is kept as
/// timestamps, every other column must be numeric.
pub fn load_csv(path: &Path) -> Result<Series> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| csv_error(path, e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(csv_error(path, "missing header row"));
    }
    let has_date = header[0].trim().eq_ignore_ascii_case("date");
    let first = usize::from(has_date);
    let names: Vec<String> = header.iter().skip(first).map(|h| h.trim().to_owned()).collect();
    if names.is_empty() {
        return Err(csv_error(path, "no numeric columns"));
    }
    let mut data = Vec::new();
    let mut stamps = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        if rec.len() != header.len() {
            return Err(csv_error(
                path,
                format!("row at line {line} has {} fields, header has {}", rec.len(), header.len()),
            ));
        }
        if has_date {
            stamps.push(rec[0].to_owned());
        }
        for (j, cell) in rec.iter().enumerate().skip(first) {
            let v: f64 = cell.trim().parse().map_err(|_| {
                csv_error(
                    path,
                    format!("line {line}, column `{}`: `{cell}` is not a number", header[j].trim()),
                )
            })?;
            if !v.is_finite() {
                return Err(csv_error(
                    path,
                    format!("line {line}, column `{}`: non-finite value", header[j].trim()),
                ));
            }
            data.push(v);
        }
    }
    let rows = data.len() / names.len();
    Series::new(
        Matrix::from_vec(rows, names.len(), data)?,
        names,
        has_date.then_some(stamps),
    )
}

/// Writes the [`load_csv`] format with 17 significant digits.
pub fn write_csv(path: &Path, series: &Series) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e.to_string()))?;
    let mut header: Vec<&str> = Vec::new();
    if series.timestamps.is_some() {
        header.push("date");
    }
    header.extend(series.names.iter().map(String::as_str));
    w.write_record(&header).map_err(|e| csv_error(path, e.to_string()))?;
    for r in 0..series.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ts) = &series.timestamps {
            rec.push(ts[r].clone());
        }
        rec.extend(series.values.row(r).iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec).map_err(|e| csv_error(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar(coefficients: Vec<f64>, length: usize, seed: u64) -> ArSpec {
        ArSpec {
            coefficients,
            noise_std: 1.0,
            length,
            seed,
        }
    }

    fn autocorr(x: &[f64], lag: usize) -> f64 {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let var: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        let cov: f64 = (0..n - lag).map(|t| (x[t] - m) * (x[t + lag] - m)).sum();
        cov / var
    }

    #[test]
    fn stationarity_check() {
        assert!(check_stationary(&[]).is_ok());
        assert!(check_stationary(&[0.8]).is_ok());
        assert!(check_stationary(&[1.2, -0.5]).is_ok());
        assert!(check_stationary(&[0.0, 0.5]).is_ok());
        assert!(matches!(check_stationary(&[1.2]), Err(Error::NonStationary(_))));
        assert!(check_stationary(&[0.5, 0.6]).is_err());
        assert!(check_stationary(&[1.0]).is_err());
    }

    #[test]
    fn stationarity_agrees_with_companion_eigenvalues_for_ar2() {
        // roots of z² − φ1 z − φ2 inside the unit disc
        for i in -20..=20 {
            for j in -10..=10 {
                let (p1, p2) = (i as f64 * 0.1, j as f64 * 0.1);
                let disc = p1 * p1 + 4.0 * p2;
                let radius = if disc >= 0.0 {
                    let s = disc.sqrt();
                    ((p1 + s) / 2.0).abs().max(((p1 - s) / 2.0).abs())
                } else {
                    (-p2).sqrt()
                };
                if (radius - 1.0).abs() < 1e-9 {
                    continue;
                }
                assert_eq!(check_stationary(&[p1, p2]).is_ok(), radius < 1.0, "({p1}, {p2})");
            }
        }
    }

    #[test]
    fn white_noise_and_ar1_autocorrelation() {
        let wn = generate_ar(&ar(vec![0.0], 20000, 3)).unwrap().variable(0);
        assert!(autocorr(&wn, 1).abs() < 3.0 / (20000f64).sqrt());
        let x = generate_ar(&ar(vec![0.8], 50000, 4)).unwrap().variable(0);
        for k in 1..=3 {
            assert!((autocorr(&x, k) - 0.8f64.powi(k as i32)).abs() < 0.03);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = ar(vec![0.5, -0.2], 100, 9);
        assert_eq!(generate_ar(&s).unwrap(), generate_ar(&s).unwrap());
        assert!(generate_ar(&ar(vec![1.2], 10, 0)).is_err());
        let multi = generate_ar_variables(&s, 3).unwrap();
        assert_eq!(multi.variable(0), generate_ar(&s).unwrap().variable(0));
        assert_ne!(multi.variable(0), multi.variable(1));
    }

    #[test]
    fn conditional_cov_examples() {
        assert_eq!(ar1_conditional_cov(0.0, 2.0, 3).unwrap(), Matrix::identity(3).scaled(4.0));
        let c = ar1_conditional_cov(0.5, 1.0, 2).unwrap();
        let expected = [1.0, 0.5, 0.5, 1.25];
        for (a, b) in c.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(ar1_conditional_cov(1.0, 1.0, 2).is_err());
    }

    #[test]
    fn conditional_cov_is_pd() {
        for phi in [-0.99, -0.5, 0.3, 0.9, 0.99] {
            let c = ar1_conditional_cov(phi, 1.3, 64).unwrap();
            let min = *crate::linalg::sym_eigenvalues(&c).unwrap().last().unwrap();
            assert!(min > 0.0, "phi {phi}: {min}");
        }
    }

    #[test]
    fn conditional_cov_matches_monte_carlo() {
        let (phi, sigma, t) = (0.7, 0.8, 4);
        let mut g = GaussianStream::new(11);
        let n = 200_000;
        let x0 = 1.5;
        let mut draws = Matrix::zeros(n, t);
        for r in 0..n {
            let mut prev = x0;
            for c in 0..t {
                prev = phi * prev + sigma * g.next_standard();
                draws[(r, c)] = prev;
            }
        }
        let (_, cov) = crate::linalg::mean_and_cov(&draws).unwrap();
        let exact = ar1_conditional_cov(phi, sigma, t).unwrap();
        for i in 0..t {
            for j in 0..t {
                assert!((cov[(i, j)] - exact[(i, j)]).abs() <= 0.05 * exact[(i, j)].abs());
            }
        }
    }

    #[test]
    fn window_examples() {
        let s = Series::new(Matrix::column(&[0.0, 1.0, 2.0, 3.0, 4.0]), vec!["a".into()], None).unwrap();
        let w = make_windows(&s, 2, 1, 1).unwrap();
        assert_eq!(w[0].len(), 3);
        for (i, &off) in w[0].offsets.iter().enumerate() {
            assert_eq!(w[0].label[(i, 0)], s.values[(off + 2, 0)]);
            assert_eq!(w[0].history.row(i), &[off as f64, off as f64 + 1.0]);
        }
        assert_eq!(make_windows(&s, 2, 1, 5).unwrap()[0].len(), 1);
        assert!(matches!(make_windows(&s, 4, 2, 1), Err(Error::SeriesTooShort(_))));
    }

    #[test]
    fn split_examples() {
        let s = generate_ar(&ar(vec![0.3], 100, 1)).unwrap();
        let parts = chronological_split(&s, &Split::default(), 5).unwrap();
        assert_eq!(parts.iter().map(Series::len).collect::<Vec<_>>(), vec![70, 10, 20]);
        assert_eq!(Series::concat(&parts).unwrap(), s);
        assert!(chronological_split(&s, &Split::default(), 15).is_err());
        let bad = Split::Ratios { train: 0.7, val: 0.1, test: 0.3 };
        assert!(chronological_split(&s, &bad, 1).is_err());
    }

    #[test]
    fn ett_preset_counts() {
        assert_eq!(SplitPreset::EttHourly.lengths(), [8640, 2880, 2880]);
        assert_eq!(SplitPreset::EttHourly.sample_counts(96), [8545, 2881, 2881]);
        let s = generate_ar(&ar(vec![0.3], 14400, 1)).unwrap();
        let parts = chronological_split(&s, &Split::Preset(SplitPreset::EttHourly), 192).unwrap();
        assert_eq!(parts[2].len(), 2880);
    }

    #[test]
    fn standardize_round_trip() {
        let s = generate_ar_variables(&ar(vec![0.6], 200, 2), 2).unwrap();
        let mut values = s.values.clone();
        for r in 0..values.rows() {
            values[(r, 1)] = 3.0;
        }
        let s = Series::new(values, s.names.clone(), None).unwrap();
        let [tr, va, te] = chronological_split(&s, &Split::default(), 1).unwrap();
        let (scaler, t, rest) = standardize(&tr, &[va, te.clone()]).unwrap();
        let col = t.variable(0);
        let m = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64).sqrt();
        assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        assert_eq!(scaler.scale[1], 1.0);
        assert!(t.variable(1).iter().all(|&v| v == 0.0));
        let back = scaler.inverse_transform(&rest[1]).unwrap();
        assert!(back.values.sub(&te.values).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy.csv");
        std::fs::write(&p, "Date,a,b\n2020-01-01,1,2\n2020-01-02,3.5,-4\n2020-01-03,0,1e-3\n").unwrap();
        let s = load_csv(&p).unwrap();
        assert_eq!(s.values.shape(), (3, 2));
        assert_eq!(s.timestamps.as_ref().unwrap()[1], "2020-01-02");

        let g = generate_ar_variables(&ar(vec![0.8], 50, 5), 2).unwrap();
        let q = dir.path().join("g.csv");
        write_csv(&q, &g).unwrap();
        let back = load_csv(&q).unwrap();
        assert_eq!(back.values, g.values);

        std::fs::write(&p, "date,a,b\nx,1,2\ny,3\n").unwrap();
        let err = load_csv(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        std::fs::write(&p, "date,a,b\nx,1,2\ny,3,abc\n").unwrap();
        let err = load_csv(&p).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("`b`"), "{err}");
        assert!(matches!(load_csv(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }
}

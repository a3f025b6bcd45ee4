//! Channel-independent direct forecasters: a linear map `H → T` and a
//! one-hidden-layer tanh MLP, with hand-written backward passes and a
//! text checkpoint format.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    #[default]
    Linear,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearForecaster {
    /// `H×T`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpForecaster {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Forecaster {
    Linear(LinearForecaster),
    Mlp(MlpForecaster),
}

/// Default initialization half-width `1/√H`.
pub fn default_init_scale(history: usize) -> f64 {
    1.0 / (history.max(1) as f64).sqrt()
}

fn add_bias(m: &mut Matrix, bias: &[f64]) {
    for r in 0..m.rows() {
        for (x, b) in m.row_mut(r).iter_mut().zip(bias) {
            *x += b;
        }
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, x) in out.iter_mut().zip(m.row(r)) {
            *o += x;
        }
    }
    out
}

impl Forecaster {
    /// Parameters drawn from `uniform(−scale, scale)` in flat-parameter order.
    pub fn init(kind: ModelKind, history: usize, horizon: usize, seed: u64, scale: f64) -> Result<Self> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidInput(format!("init scale must be >= 0, got {scale}")));
        }
        if history == 0 || horizon == 0 {
            return Err(Error::InvalidInput("history and horizon must be >= 1".into()));
        }
        let mut model = match kind {
            ModelKind::Linear => Forecaster::Linear(LinearForecaster {
                weights: Matrix::zeros(history, horizon),
                bias: vec![0.0; horizon],
            }),
            ModelKind::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidInput("mlp hidden width must be >= 1".into()));
                }
                Forecaster::Mlp(MlpForecaster {
                    w1: Matrix::zeros(history, hidden),
                    b1: vec![0.0; hidden],
                    w2: Matrix::zeros(hidden, horizon),
                    b2: vec![0.0; horizon],
                })
            }
        };
        if scale > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params: Vec<f64> = (0..model.num_params())
                .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            model.set_params(&params)?;
        }
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Forecaster::Linear(_) => ModelKind::Linear,
            Forecaster::Mlp(m) => ModelKind::Mlp { hidden: m.b1.len() },
        }
    }

    pub fn history(&self) -> usize {
        match self {
            Forecaster::Linear(m) => m.weights.rows(),
            Forecaster::Mlp(m) => m.w1.rows(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Forecaster::Linear(m) => m.bias.len(),
            Forecaster::Mlp(m) => m.b2.len(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Forecaster::Linear(m) => m.weights.as_slice().len() + m.bias.len(),
            Forecaster::Mlp(m) => {
                m.w1.as_slice().len() + m.b1.len() + m.w2.as_slice().len() + m.b2.len()
            }
        }
    }

    /// Linear: `W` row-major then `b`. MLP: `W1, b1, W2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        match self {
            Forecaster::Linear(m) => {
                out.extend_from_slice(m.weights.as_slice());
                out.extend_from_slice(&m.bias);
            }
            Forecaster::Mlp(m) => {
                out.extend_from_slice(m.w1.as_slice());
                out.extend_from_slice(&m.b1);
                out.extend_from_slice(m.w2.as_slice());
                out.extend_from_slice(&m.b2);
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::dim("set_params", self.num_params(), params.len()));
        }
        if let Some(p) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!("non-finite parameter {p}")));
        }
        let mut rest = params;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        match self {
            Forecaster::Linear(m) => {
                take(m.weights.as_mut_slice());
                take(&mut m.bias);
            }
            Forecaster::Mlp(m) => {
                take(m.w1.as_mut_slice());
                take(&mut m.b1);
                take(m.w2.as_mut_slice());
                take(&mut m.b2);
            }
        }
        Ok(())
    }

    fn check_history(&self, history: &Matrix) -> Result<()> {
        if history.cols() != self.history() {
            return Err(Error::dim("forecaster input width", self.history(), history.cols()));
        }
        Ok(())
    }

    /// `B×H` history to `B×T` forecast.
    pub fn forward(&self, history: &Matrix) -> Result<Matrix> {
        self.check_history(history)?;
        Ok(match self {
            Forecaster::Linear(m) => {
                let mut y = history.mul(&m.weights);
                add_bias(&mut y, &m.bias);
                y
            }
            Forecaster::Mlp(m) => {
                let hidden = m.hidden_activations(history);
                let mut y = hidden.mul(&m.w2);
                add_bias(&mut y, &m.b2);
                y
            }
        })
    }

    /// Flat parameter gradient (same order as [`Forecaster::params`]) given
    /// the upstream gradient of the loss in the forecast.
    pub fn backward(&self, history: &Matrix, grad_forecast: &Matrix) -> Result<Vec<f64>> {
        self.check_history(history)?;
        if grad_forecast.rows() != history.rows() || grad_forecast.cols() != self.horizon() {
            return Err(Error::dim(
                "forecaster backward",
                format!("{}x{}", history.rows(), self.horizon()),
                format!("{}x{}", grad_forecast.rows(), grad_forecast.cols()),
            ));
        }
        let mut out = Vec::with_capacity(self.num_params());
        match self {
            Forecaster::Linear(_) => {
                out.extend_from_slice(history.transposed_mul(grad_forecast).as_slice());
                out.extend(column_sums(grad_forecast));
            }
            Forecaster::Mlp(m) => {
                let hidden = m.hidden_activations(history);
                let g_w2 = hidden.transposed_mul(grad_forecast);
                let g_b2 = column_sums(grad_forecast);
                let mut g_hidden = grad_forecast.mul_transposed(&m.w2);
                for (g, a) in g_hidden.as_mut_slice().iter_mut().zip(hidden.as_slice()) {
                    *g *= 1.0 - a * a;
                }
                out.extend_from_slice(history.transposed_mul(&g_hidden).as_slice());
                out.extend(column_sums(&g_hidden));
                out.extend_from_slice(g_w2.as_slice());
                out.extend(g_b2);
            }
        }
        Ok(out)
    }
}

impl MlpForecaster {
    fn hidden_activations(&self, history: &Matrix) -> Matrix {
        let mut pre = history.mul(&self.w1);
        add_bias(&mut pre, &self.b1);
        for x in pre.as_mut_slice() {
            *x = x.tanh();
        }
        pre
    }
}

const CHECKPOINT_MAGIC: &str = "distdf-checkpoint v1";

/// A model plus the seed it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Forecaster,
    pub seed: u64,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let hidden = match m.kind() {
            ModelKind::Linear => 0,
            ModelKind::Mlp { hidden } => hidden,
        };
        let kind = match m.kind() {
            ModelKind::Linear => "linear",
            ModelKind::Mlp { .. } => "mlp",
        };
        let mut s = String::new();
        let params = m.params();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "kind {kind}");
        let _ = writeln!(s, "history {}", m.history());
        let _ = writeln!(s, "horizon {}", m.horizon());
        let _ = writeln!(s, "hidden {hidden}");
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "params {}", params.len());
        for p in params {
            let _ = writeln!(s, "{p:.16e}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |msg: String| Error::Checkpoint(msg);
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(format!("missing header `{CHECKPOINT_MAGIC}`")));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("missing `{name}` line")))?;
            line.strip_prefix(name)
                .and_then(|rest| rest.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| bad(format!("expected `{name} <value>`, found `{line}`")))
        };
        let parse_count = |name: &str, v: String| -> Result<usize> {
            v.parse().map_err(|_| bad(format!("invalid {name} `{v}`")))
        };
        let kind = field("kind")?;
        let history = parse_count("history", field("history")?)?;
        let horizon = parse_count("horizon", field("horizon")?)?;
        let hidden = parse_count("hidden", field("hidden")?)?;
        let seed_s = field("seed")?;
        let seed: u64 = seed_s.parse().map_err(|_| bad(format!("invalid seed `{seed_s}`")))?;
        let count = parse_count("params", field("params")?)?;
        let kind = match kind.as_str() {
            "linear" => ModelKind::Linear,
            "mlp" => ModelKind::Mlp { hidden },
            other => return Err(bad(format!("unknown model kind `{other}`"))),
        };
        let mut model = Forecaster::init(kind, history, horizon, seed, 0.0)
            .map_err(|e| bad(e.to_string()))?;
        if count != model.num_params() {
            return Err(bad(format!(
                "expected {} parameters for this shape, header says {count}",
                model.num_params()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for (i, line) in lines.by_ref().take(count).enumerate() {
            let v: f64 = line
                .trim()
                .parse()
                .map_err(|_| bad(format!("parameter {i}: invalid number `{line}`")))?;
            params.push(v);
        }
        if params.len() != count {
            return Err(bad(format!("expected {count} parameters, found {}", params.len())));
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing content after parameters".into()));
        }
        model.set_params(&params).map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint { model, seed })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_model_forecasts_zero() {
        let m = Forecaster::init(ModelKind::Linear, 3, 2, 0, 0.0).unwrap();
        let x = Matrix::from_fn(4, 3, |r, c| (r + c) as f64);
        assert_eq!(m.forward(&x).unwrap(), Matrix::zeros(4, 2));
        assert!(m.params().iter().all(|p| p.to_bits() == 0));
    }

    #[test]
    fn identity_linear_map_copies_history() {
        let mut m = Forecaster::init(ModelKind::Linear, 3, 3, 0, 0.0).unwrap();
        if let Forecaster::Linear(l) = &mut m {
            l.weights = Matrix::identity(3);
        }
        let x = Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn linear_forward_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Forecaster::init(ModelKind::Linear, 5, 3, 9, 0.5).unwrap();
        let x = random(&mut rng, 4, 5);
        let y = m.forward(&x).unwrap();
        let Forecaster::Linear(l) = &m else { unreachable!() };
        for b in 0..4 {
            for t in 0..3 {
                let mut acc = l.bias[t];
                for h in 0..5 {
                    acc += x[(b, h)] * l.weights[(h, t)];
                }
                assert!((acc - y[(b, t)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let kind = ModelKind::Mlp { hidden: 4 };
        let a = Forecaster::init(kind, 3, 2, 5, 0.3).unwrap();
        let b = Forecaster::init(kind, 3, 2, 5, 0.3).unwrap();
        let c = Forecaster::init(kind, 3, 2, 6, 0.3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        assert!(a.params().iter().all(|p| p.abs() <= 0.3));
    }

    #[test]
    fn linear_backward_by_hand() {
        let m = Forecaster::init(ModelKind::Linear, 2, 2, 1, 0.5).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let g = Matrix::from_rows(&[vec![0.5, 3.0]]).unwrap();
        let grads = m.backward(&x, &g).unwrap();
        assert_eq!(grads, vec![0.5, 3.0, -1.0, -6.0, 0.5, 3.0]);
        let zero = m.backward(&x, &Matrix::zeros(1, 2)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [ModelKind::Linear, ModelKind::Mlp { hidden: 5 }] {
            let m = Forecaster::init(kind, 4, 3, 11, 0.6).unwrap();
            let x = random(&mut rng, 6, 4);
            let w = random(&mut rng, 6, 3);
            // loss = Σ w ∘ forecast
            let f = |mm: &Forecaster| {
                let y = mm.forward(&x).unwrap();
                y.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum::<f64>()
            };
            let g = m.backward(&x, &w).unwrap();
            let p = m.params();
            let h = 1e-6;
            for i in 0..p.len() {
                let mut up = m.clone();
                let mut pu = p.clone();
                pu[i] += h;
                up.set_params(&pu).unwrap();
                let mut dn = m.clone();
                let mut pd = p.clone();
                pd[i] -= h;
                dn.set_params(&pd).unwrap();
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0), "{kind:?} param {i}");
            }
        }
    }

    #[test]
    fn linear_forward_is_homogeneous_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Forecaster::init(ModelKind::Linear, 3, 2, 4, 1.0).unwrap();
        let mut p = m.params();
        let n = p.len();
        p[n - 2..].iter_mut().for_each(|b| *b = 0.0);
        m.set_params(&p).unwrap();
        let mut scaled = m.clone();
        scaled.set_params(&p.iter().map(|v| 2.5 * v).collect::<Vec<_>>()).unwrap();
        let x = random(&mut rng, 3, 3);
        let a = m.forward(&x).unwrap().scaled(2.5);
        let b = scaled.forward(&x).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn shape_errors() {
        let m = Forecaster::init(ModelKind::Linear, 3, 2, 0, 0.1).unwrap();
        assert!(m.forward(&Matrix::zeros(2, 4)).is_err());
        assert!(m.backward(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        for kind in [ModelKind::Linear, ModelKind::Mlp { hidden: 3 }] {
            let m = Forecaster::init(kind, 4, 2, 17, 0.7).unwrap();
            let ck = Checkpoint { model: m, seed: 17 };
            let text = ck.to_text();
            let back = Checkpoint::from_text(&text).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let ck = Checkpoint {
            model: Forecaster::init(ModelKind::Linear, 2, 1, 0, 0.5).unwrap(),
            seed: 0,
        };
        let text = ck.to_text();
        assert!(Checkpoint::from_text(&text.replace("v1", "v9")).is_err());
        assert!(Checkpoint::from_text(&text.replace("params 3", "params 4")).is_err());
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(Checkpoint::from_text(&truncated).is_err());
    }
}

//! Adam training under `L_α`, early stopping, evaluation, α sweeps and the
//! loss timing harness.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_windows, GaussianStream, Series, WindowBatch};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::loss::{distdf_loss_multivariate, LossConfig, LossForward, VariableBlock};
use crate::model::{default_init_scale, Forecaster, ModelKind};
use crate::output::{sig17, sig17_opt};

/// Adam moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim("adam_step", params.len(), grads.len()));
    }
    let (b1, b2) = betas;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Validation quantity monitored by early stopping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Total,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub model: ModelKind,
    /// Half-width of the uniform initialization; `1/√H` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub select_on: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            seed: 2024,
            model: ModelKind::Linear,
            init_scale: None,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            select_on: Selection::Total,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be >= 2 (batch covariances need two rows), got {}",
                self.batch_size
            ));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        let (b1, b2) = self.adam_betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return bad(format!("adam_betas must lie in (0, 1), got ({b1}, {b2})"));
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if let Some(s) = self.init_scale {
            if !(s >= 0.0) || !s.is_finite() {
                return bad(format!("init_scale must be >= 0, got {s}"));
            }
        }
        if let ModelKind::Mlp { hidden: 0 } = self.model {
            return bad("mlp hidden width must be >= 1".into());
        }
        Ok(())
    }
}

/// Shuffled batch indices for one epoch. A trailing batch of one row is
/// folded into the previous batch.
pub fn batch_plan(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    idx.shuffle(&mut rng);
    chunk(idx, batch_size)
}

/// In-order batches with the same trailing-row rule.
pub fn sequential_plan(n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    chunk((0..n).collect(), batch_size)
}

fn chunk(idx: Vec<usize>, batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(last);
    }
    out
}

/// Stopping rule: stop once `patience` epochs pass without a strict
/// improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    waited: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Wait,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            waited: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, value: f64) -> StopDecision {
        if value < self.best {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.waited = 0;
            StopDecision::Improved
        } else {
            self.waited += 1;
            if self.waited >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Wait
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTotals {
    #[serde(serialize_with = "sig17")]
    pub total: f64,
    #[serde(serialize_with = "sig17")]
    pub dist: f64,
    #[serde(serialize_with = "sig17")]
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossTotals,
    pub validation: LossTotals,
    pub improved: bool,
    #[serde(serialize_with = "sig17")]
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    #[serde(serialize_with = "sig17")]
    pub best_validation: f64,
    pub stopped_epoch: usize,
    pub stopped_early: bool,
    pub checkpoint: Option<String>,
}

/// Training, validation and test segments, already standardized.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Series,
    pub val: Series,
    pub test: Series,
}

/// Stateful epoch loop; [`fit`] wraps it with early stopping.
pub struct Trainer {
    cfg: TrainConfig,
    train: Vec<WindowBatch>,
    val: Vec<WindowBatch>,
    model: Forecaster,
    params: Vec<f64>,
    adam: AdamState,
    epoch: u64,
}

impl Trainer {
    pub fn new(train: &Series, val: &Series, history: usize, horizon: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let train_w = make_windows(train, history, horizon, 1)?;
        let val_w = make_windows(val, history, horizon, 1)?;
        if train_w[0].len() < 2 || val_w[0].len() < 2 {
            return Err(Error::InsufficientSamples {
                context: "training windows (train and validation)",
                required: 2,
                found: train_w[0].len().min(val_w[0].len()),
            });
        }
        let scale = cfg.init_scale.unwrap_or_else(|| default_init_scale(history));
        let model = Forecaster::init(cfg.model, history, horizon, cfg.seed, scale)?;
        let params = model.params();
        Ok(Trainer {
            cfg: cfg.clone(),
            adam: AdamState::new(params.len()),
            train: train_w,
            val: val_w,
            model,
            params,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Forecaster {
        &self.model
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// One shuffled pass over the training windows; returns row-weighted
    /// average losses.
    pub fn run_epoch(&mut self) -> Result<LossTotals> {
        let plan = batch_plan(self.train[0].len(), self.cfg.batch_size, self.cfg.seed, self.epoch);
        self.epoch += 1;
        let mut acc = Accumulator::default();
        for idx in &plan {
            let (totals, grads) = batch_loss(&self.model, &self.train, idx, &self.cfg.loss, true)?;
            acc.add(totals, idx.len());
            adam_step(
                &mut self.params,
                &grads.expect("requested"),
                &mut self.adam,
                self.cfg.learning_rate,
                self.cfg.adam_betas,
                self.cfg.adam_eps,
            )?;
            self.model.set_params(&self.params)?;
        }
        Ok(acc.mean())
    }

    /// Losses on the validation windows, batched in order.
    pub fn validate(&self) -> Result<LossTotals> {
        let mut acc = Accumulator::default();
        for idx in sequential_plan(self.val[0].len(), self.cfg.batch_size) {
            let (totals, _) = batch_loss(&self.model, &self.val, &idx, &self.cfg.loss, false)?;
            acc.add(totals, idx.len());
        }
        Ok(acc.mean())
    }
}

#[derive(Default)]
struct Accumulator {
    total: f64,
    dist: f64,
    mse: f64,
    rows: usize,
}

impl Accumulator {
    fn add(&mut self, t: LossTotals, rows: usize) {
        let w = rows as f64;
        self.total += w * t.total;
        self.dist += w * t.dist;
        self.mse += w * t.mse;
        self.rows += rows;
    }

    fn mean(&self) -> LossTotals {
        let n = self.rows as f64;
        LossTotals {
            total: self.total / n,
            dist: self.dist / n,
            mse: self.mse / n,
        }
    }
}

fn batch_loss(
    model: &Forecaster,
    windows: &[WindowBatch],
    idx: &[usize],
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<(LossTotals, Option<Vec<f64>>)> {
    let parts: Vec<(Matrix, Matrix)> = windows.iter().map(|w| w.rows(idx)).collect();
    let forecasts: Vec<Matrix> = parts
        .iter()
        .map(|(x, _)| model.forward(x))
        .collect::<Result<_>>()?;
    let blocks: Vec<VariableBlock> = parts
        .iter()
        .zip(&forecasts)
        .map(|((x, y), f)| VariableBlock {
            history: x,
            label: y,
            forecast: f,
        })
        .collect();
    let report = distdf_loss_multivariate(&blocks, cfg)?;
    let totals = LossTotals {
        total: report.total,
        dist: report.dist_term,
        mse: report.mse_term,
    };
    if !with_grad {
        return Ok((totals, None));
    }
    let mut grads = vec![0.0; model.num_params()];
    for ((x, _), g) in parts.iter().zip(&report.grad_forecast) {
        let gv = model.backward(x, g)?;
        for (a, b) in grads.iter_mut().zip(gv) {
            *a += b;
        }
    }
    Ok((totals, Some(grads)))
}

/// Trains until early stopping or `max_epochs`; returns the
/// best-validation model.
pub fn fit(data: &SplitData, history: usize, horizon: usize, cfg: &TrainConfig) -> Result<(Forecaster, TrainRecord)> {
    let mut trainer = Trainer::new(&data.train, &data.val, history, horizon, cfg)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = trainer.model().clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let train = trainer.run_epoch()?;
        let validation = trainer.validate()?;
        let monitored = match cfg.select_on {
            Selection::Total => validation.total,
            Selection::Mse => validation.mse,
        };
        if !monitored.is_finite() {
            return Err(Error::Numerical(format!("validation loss is {monitored} at epoch {epoch}")));
        }
        let decision = stopper.update(epoch, monitored);
        if decision == StopDecision::Improved {
            best = trainer.model().clone();
        }
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6}{}",
            train.total,
            validation.total,
            if decision == StopDecision::Improved { " *" } else { "" }
        );
        epochs.push(EpochRecord {
            epoch,
            train,
            validation,
            improved: decision == StopDecision::Improved,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, best_validation) = stopper.best().expect("at least one finite epoch");
    let record = TrainRecord {
        stopped_epoch: epochs.len(),
        epochs,
        best_epoch,
        best_validation,
        stopped_early,
        checkpoint: None,
    };
    Ok((best, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    #[serde(serialize_with = "sig17")]
    pub mse: f64,
    #[serde(serialize_with = "sig17")]
    pub mae: f64,
    pub windows: usize,
}

/// MSE and MAE over every stride-1 window of every variable.
pub fn evaluate(model: &Forecaster, series: &Series, history: usize, horizon: usize) -> Result<Metrics> {
    evaluate_batched(model, series, history, horizon, 256)
}

/// [`evaluate`] with an explicit batch size; every window is included.
pub fn evaluate_batched(
    model: &Forecaster,
    series: &Series,
    history: usize,
    horizon: usize,
    batch_size: usize,
) -> Result<Metrics> {
    if model.history() != history || model.horizon() != horizon {
        return Err(Error::dim(
            "evaluate (model H, T)",
            format!("({}, {})", model.history(), model.horizon()),
            format!("({history}, {horizon})"),
        ));
    }
    let windows = make_windows(series, history, horizon, 1)?;
    let n = windows[0].len();
    let mut sse = 0.0;
    let mut sae = 0.0;
    for w in &windows {
        for idx in (0..n).collect::<Vec<_>>().chunks(batch_size.max(1)) {
            let (x, y) = w.rows(idx);
            let f = model.forward(&x)?;
            for (a, b) in y.as_slice().iter().zip(f.as_slice()) {
                let e = b - a;
                sse += e * e;
                sae += e.abs();
            }
        }
    }
    let count = (n * horizon * windows.len()) as f64;
    Ok(Metrics {
        mse: sse / count,
        mae: sae / count,
        windows: n,
    })
}

/// The α grid of the sensitivity study.
pub const DEFAULT_ALPHA_GRID: [f64; 11] = [0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(serialize_with = "sig17")]
    pub alpha: f64,
    #[serde(serialize_with = "sig17")]
    pub mse: f64,
    #[serde(serialize_with = "sig17")]
    pub mae: f64,
    pub best_epoch: usize,
}

/// One fit and test evaluation per α, all else fixed; rows sorted by α.
pub fn alpha_sweep(
    data: &SplitData,
    history: usize,
    horizon: usize,
    base: &TrainConfig,
    alphas: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut grid = alphas.to_vec();
    if let Some(a) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidInput(format!("alpha {a} outside [0, 1]")));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.iter()
        .map(|&alpha| {
            let mut cfg = base.clone();
            cfg.loss.alpha = alpha;
            let (model, record) = fit(data, history, horizon, &cfg)?;
            let m = evaluate(&model, &data.test, history, horizon)?;
            log::info!("alpha {alpha}: test mse {:.6} mae {:.6}", m.mse, m.mae);
            Ok(SweepRow {
                alpha,
                mse: m.mse,
                mae: m.mae,
                best_epoch: record.best_epoch,
            })
        })
        .collect()
}

/// Plain-text table `α | MSE | MAE`.
pub fn format_sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("| alpha | MSE | MAE |\n|---|---|---|\n");
    for r in rows {
        s.push_str(&format!("| {} | {:.4} | {:.4} |\n", r.alpha, r.mse, r.mae));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub horizon: usize,
    #[serde(serialize_with = "sig17")]
    pub forward_ms: f64,
    #[serde(serialize_with = "sig17")]
    pub backward_ms: f64,
    #[serde(serialize_with = "sig17_opt")]
    pub dist_term: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall-clock of the loss value (forward) and its gradient
/// (backward) over `D` variables of random `B×H`/`B×T` blocks. One warm-up
/// run is discarded.
pub fn time_loss(
    batch: usize,
    history: usize,
    horizon: usize,
    variables: usize,
    repeats: usize,
    cfg: &LossConfig,
    seed: u64,
) -> Result<Timing> {
    if repeats < 3 {
        return Err(Error::InvalidInput(format!("repeats must be >= 3, got {repeats}")));
    }
    if variables == 0 {
        return Err(Error::InvalidInput("variables must be >= 1".into()));
    }
    let mut g = GaussianStream::new(seed);
    let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| g.next_standard());
    let inputs: Vec<(Matrix, Matrix, Matrix)> = (0..variables)
        .map(|_| (draw(batch, history), draw(batch, horizon), draw(batch, horizon)))
        .collect();
    let mut fwd = Vec::with_capacity(repeats);
    let mut bwd = Vec::with_capacity(repeats);
    let mut dist = None;
    for rep in 0..=repeats {
        let mut f_ms = 0.0;
        let mut b_ms = 0.0;
        let mut d = 0.0;
        for (x, y, yh) in &inputs {
            let t0 = Instant::now();
            let forward = LossForward::new(x, y, yh, cfg)?;
            f_ms += t0.elapsed().as_secs_f64() * 1e3;
            d += forward.dist_term();
            let t1 = Instant::now();
            let report = forward.backward()?;
            b_ms += t1.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(report);
        }
        if rep > 0 {
            fwd.push(f_ms);
            bwd.push(b_ms);
            dist = Some(d / variables as f64);
        }
    }
    Ok(Timing {
        horizon,
        forward_ms: median(fwd),
        backward_ms: median(bwd),
        dist_term: dist,
    })
}

//! Adam training loop with per-epoch learning-rate decay, deterministic
//! shuffling and an ordered batch reduction, plus grid search.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bptt::{self, GradientSet, LossSpec};
use crate::cells::{
    sample_log_spectrum, Activation, Arch, Cell, FruParams, LstmParams, RnnParams, SruParams, SRU_DEFAULT_ALPHAS,
};
use crate::datagen::SequenceDataset;
use crate::error::{shape_err, Error, Result};
use crate::linalg::Vector;
use crate::rng;

pub const LR_GRID: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.1];
pub const DECAY_GRID: [f64; 5] = [0.8, 0.85, 0.9, 0.95, 0.99];
pub const DEFAULT_SYNTHETIC_BATCH: usize = 32;
pub const DEFAULT_MNIST_BATCH: usize = 256;

const SEED_PARAMS: u64 = 1;
const SEED_SPECTRUM: u64 = 2;
const SEED_PHASES: u64 = 3;
const SEED_SHUFFLE: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(cell: &Cell) -> Self {
        let shapes: Vec<Vec<f64>> = cell.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        AdamState {
            m: shapes.clone(),
            v: shapes,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor of `cell`.
pub fn adam_step(state: &mut AdamState, cell: &mut Cell, grads: &GradientSet, lr: f64) -> Result<()> {
    let mut params = cell.tensors_mut();
    if params.len() != grads.tensors.len() || params.len() != state.m.len() {
        return Err(shape_err("adam_step", params.len(), grads.tensors.len()));
    }
    for ((p, g), m) in params.iter().zip(&grads.tensors).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(shape_err("adam_step tensor", p.len(), g.len()));
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (ti, p) in params.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[ti], &mut state.v[ti], &grads.tensors[ti]);
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            p[k] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    Zero,
    Random,
}

impl std::str::FromStr for PhaseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PhaseMode::Zero),
            "random" => Ok(PhaseMode::Random),
            other => Err(Error::Config(format!("unknown phase mode '{other}'"))),
        }
    }
}

/// Architecture and sizes. `units` is `n_h`; `inner` is `n_g` (SRU, FRU).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub units: usize,
    pub inner: usize,
    pub fru_k: usize,
    pub fru_d: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub phases: PhaseMode,
    pub alphas: Vec<f64>,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn new(arch: Arch) -> Self {
        ModelSpec {
            arch,
            units: 200,
            inner: 60,
            fru_k: 60,
            fru_d: 10,
            fmin: 0.25,
            fmax: 25.0,
            phases: PhaseMode::Zero,
            alphas: SRU_DEFAULT_ALPHAS.to_vec(),
            activation: match arch {
                Arch::Rnn => Activation::Tanh,
                _ => Activation::Relu,
            },
        }
    }

    pub fn build(&self, n_i: usize, n_y: usize, horizon: usize, seed: u64) -> Result<Cell> {
        if self.units == 0 {
            return Err(Error::Config("units must be ≥ 1".into()));
        }
        let ps = rng::derive(seed, SEED_PARAMS);
        let cell = match self.arch {
            Arch::Rnn => Cell::Rnn(RnnParams::init(self.units, n_i, n_y, self.activation, ps)),
            Arch::Lstm => Cell::Lstm(LstmParams::init(self.units, n_i, n_y, ps)),
            Arch::Sru => Cell::Sru(SruParams::init(self.units, self.inner, n_i, n_y, &self.alphas, self.activation, ps)?),
            Arch::Fru => {
                let mut spectrum = sample_log_spectrum(
                    self.fru_k,
                    self.fmin,
                    self.fmax,
                    self.fru_d,
                    horizon,
                    rng::derive(seed, SEED_SPECTRUM),
                )?;
                if self.phases == PhaseMode::Random {
                    spectrum = spectrum.with_random_phases(rng::derive(seed, SEED_PHASES));
                }
                Cell::Fru(FruParams::init(self.units, self.inner, n_i, n_y, spectrum, self.activation, ps)?)
            }
        };
        cell.validate()?;
        Ok(cell)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean over steps of the next-step squared error.
    PerStepMse,
    /// Squared error of the last output only.
    FinalMse,
    /// Softmax cross-entropy on the last output.
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" | "per-step-mse" => Ok(LossKind::PerStepMse),
            "final-mse" => Ok(LossKind::FinalMse),
            "xent" | "cross-entropy" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Config(format!("unknown loss '{other}'"))),
        }
    }
}

impl LossKind {
    pub fn for_dataset(data: &SequenceDataset) -> Self {
        if data.is_regression() {
            LossKind::PerStepMse
        } else {
            LossKind::CrossEntropy
        }
    }

    fn spec(self, data: &SequenceDataset, l: usize) -> Result<LossSpec> {
        match self {
            LossKind::PerStepMse => Ok(LossSpec::PerStepMse {
                targets: data
                    .step_targets(l)
                    .ok_or_else(|| Error::Config("MSE loss needs a regression dataset".into()))?,
            }),
            LossKind::FinalMse => {
                let t = data
                    .step_targets(l)
                    .ok_or_else(|| Error::Config("MSE loss needs a regression dataset".into()))?;
                Ok(LossSpec::FinalMse {
                    target: t.last().cloned().unwrap_or_default(),
                })
            }
            LossKind::CrossEntropy => Ok(LossSpec::FinalCrossEntropy {
                label: data
                    .label(l)
                    .ok_or_else(|| Error::Config("cross-entropy needs a labelled dataset".into()))?,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub model: ModelSpec,
    pub loss: LossKind,
    /// Cap on the number of training sequences used per epoch (0 = all).
    pub max_train: usize,
}

impl TrainConfig {
    pub fn new(model: ModelSpec, loss: LossKind) -> Self {
        TrainConfig {
            lr: 0.01,
            lr_decay: 0.9,
            epochs: 10,
            batch_size: DEFAULT_SYNTHETIC_BATCH,
            seed: 0,
            model,
            loss,
            max_train: 0,
        }
    }

    /// `lr₀ · decayᵉ`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }

    pub fn build_cell(&self, data: &SequenceDataset) -> Result<Cell> {
        let n_y = match self.loss {
            LossKind::CrossEntropy => data
                .num_classes()
                .ok_or_else(|| Error::Config("cross-entropy needs a labelled dataset".into()))?,
            _ => 1,
        };
        self.model.build(data.n_i, n_y, data.t, self.seed)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr decay {} not in (0, 1]", self.lr_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub split: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,split,metric,value";

pub fn format_history_row(r: &HistoryRow) -> String {
    format!("{},{},{},{:e}", r.epoch, r.split, r.metric, r.value)
}

pub fn write_history_csv<W: Write>(rows: &[HistoryRow], mut w: W) -> Result<()> {
    writeln!(w, "{HISTORY_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", format_history_row(r))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Argmax accuracy for labelled data.
    pub accuracy: Option<f64>,
}

impl Evaluation {
    /// The selection metric and whether larger is better.
    pub fn headline(&self) -> (&'static str, f64) {
        match self.accuracy {
            Some(a) => ("accuracy", a),
            None => ("mse", self.loss),
        }
    }
}

fn argmax(y: &[f64]) -> usize {
    y.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Mean loss (and accuracy for labelled data) over `indices`.
pub fn evaluate(cell: &Cell, data: &SequenceDataset, indices: &[usize], loss: LossKind) -> Result<Evaluation> {
    if indices.is_empty() {
        return Ok(Evaluation {
            loss: f64::NAN,
            accuracy: None,
        });
    }
    let per: Vec<(f64, bool)> = indices
        .par_iter()
        .map(|&l| -> Result<(f64, bool)> {
            let xs = data.sequence(l);
            let spec = loss.spec(data, l)?;
            let state = cell.state_from(Vector::zeros(cell.state_dim()))?;
            let (_, ys) = cell.unroll(&state, &xs)?;
            let correct = match data.label(l) {
                Some(label) => ys.last().map(|y| argmax(y) == label).unwrap_or(false),
                None => false,
            };
            Ok((spec.value(&ys)?, correct))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let loss_sum: f64 = per.iter().map(|p| p.0).sum();
    let accuracy = (!data.is_regression()).then(|| per.iter().filter(|p| p.1).count() as f64 / n);
    Ok(Evaluation {
        loss: loss_sum / n,
        accuracy,
    })
}

/// Mean loss and gradient over a batch; per-sequence work runs in parallel
/// and is summed in batch order.
pub fn batch_gradient(cell: &Cell, data: &SequenceDataset, batch: &[usize], loss: LossKind) -> Result<(f64, GradientSet)> {
    let per: Vec<(f64, GradientSet)> = batch
        .par_iter()
        .map(|&l| {
            let xs = data.sequence(l);
            let spec = loss.spec(data, l)?;
            let u0 = vec![0.0; cell.state_dim()];
            bptt::loss_and_grad(cell, &u0, &xs, &spec)
        })
        .collect::<Result<_>>()?;
    let mut total = GradientSet::zeros_like(cell);
    let mut loss_sum = 0.0;
    for (l, g) in &per {
        loss_sum += l;
        total.add_assign(g);
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    total.scale(scale);
    Ok((loss_sum * scale, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub epoch: usize,
    pub config: TrainConfig,
    pub cell: Cell,
}

pub const CHECKPOINT_FORMAT: &str = "frulab-checkpoint/1";

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                field: "checkpoint format",
                detail: c.format,
            });
        }
        c.cell.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<HistoryRow>,
    pub checkpoint: Checkpoint,
    /// Test-split evaluation after the last epoch (or at init for 0 epochs).
    pub final_test: Evaluation,
}

/// Hooks invoked during [`train_with`]. `on_model` sees the model before
/// the first epoch (`0`) and after every epoch `e` (`e = 1..=epochs`).
pub struct Hooks<'a> {
    pub on_row: &'a mut dyn FnMut(&HistoryRow) -> Result<()>,
    pub on_model: &'a mut dyn FnMut(usize, &Cell) -> Result<()>,
}

pub fn train(config: &TrainConfig, data: &SequenceDataset) -> Result<TrainOutcome> {
    train_with(
        config,
        data,
        Hooks {
            on_row: &mut |_| Ok(()),
            on_model: &mut |_, _| Ok(()),
        },
    )
}

pub fn train_with(config: &TrainConfig, data: &SequenceDataset, hooks: Hooks<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate()?;
    let mut cell = config.build_cell(data)?;
    let mut adam = AdamState::new(&cell);
    let mut train_idx: Vec<usize> = data.train_indices().collect();
    if config.max_train > 0 {
        train_idx.truncate(config.max_train);
    }
    let test_idx: Vec<usize> = data.test_indices().collect();
    if train_idx.is_empty() && config.epochs > 0 {
        return Err(Error::Config("training split is empty".into()));
    }
    let shuffle_seed = rng::derive(config.seed, SEED_SHUFFLE);
    let mut history = Vec::new();
    (hooks.on_model)(0, &cell)?;
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng::stream(shuffle_seed, epoch as u64));
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grads) = batch_gradient(&cell, data, batch, config.loss)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    max_grad: grads.max_abs(),
                });
            }
            adam_step(&mut adam, &mut cell, &grads, lr)?;
            loss_sum += loss * batch.len() as f64;
        }
        let rows = [
            HistoryRow {
                epoch: epoch + 1,
                split: "train",
                metric: "loss",
                value: loss_sum / order.len() as f64,
            },
            {
                let ev = evaluate(&cell, data, &test_idx, config.loss)?;
                let (metric, value) = ev.headline();
                HistoryRow {
                    epoch: epoch + 1,
                    split: "test",
                    metric,
                    value,
                }
            },
        ];
        for r in rows {
            (hooks.on_row)(&r)?;
            history.push(r);
        }
        (hooks.on_model)(epoch + 1, &cell)?;
    }
    let final_test = evaluate(&cell, data, &test_idx, config.loss)?;
    Ok(TrainOutcome {
        history,
        checkpoint: Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            epoch: config.epochs,
            config: config.clone(),
            cell,
        },
        final_test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub lr: f64,
    pub lr_decay: f64,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    pub best: usize,
    pub best_config: TrainConfig,
}

pub const GRID_CSV_HEADER: &str = "lr,lr_decay,metric,value";

pub fn write_grid_csv<W: Write>(rows: &[GridRow], mut w: W) -> Result<()> {
    writeln!(w, "{GRID_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{:e}", r.lr, r.lr_decay, r.metric, r.value)?;
    }
    Ok(())
}

/// Train every `(lr, decay)` cell and keep the best final test metric
/// (lowest MSE or highest accuracy; ties keep the earlier cell).
pub fn grid_search(base: &TrainConfig, data: &SequenceDataset, lrs: &[f64], decays: &[f64]) -> Result<GridOutcome> {
    if lrs.is_empty() || decays.is_empty() {
        return Err(Error::Config("grid search needs at least one lr and one decay".into()));
    }
    let mut rows = Vec::with_capacity(lrs.len() * decays.len());
    let mut best: Option<(usize, f64)> = None;
    for &lr in lrs {
        for &decay in decays {
            let cfg = TrainConfig {
                lr,
                lr_decay: decay,
                ..base.clone()
            };
            let out = train(&cfg, data)?;
            let (metric, value) = out.final_test.headline();
            let better = match best {
                None => true,
                Some((_, b)) if metric == "accuracy" => value > b,
                Some((_, b)) => value < b || (b.is_nan() && !value.is_nan()),
            };
            if better {
                best = Some((rows.len(), value));
            }
            rows.push(GridRow {
                lr,
                lr_decay: decay,
                metric,
                value,
            });
        }
    }
    let best = best.map(|b| b.0).unwrap_or(0);
    let best_config = TrainConfig {
        lr: rows[best].lr,
        lr_decay: rows[best].lr_decay,
        ..base.clone()
    };
    Ok(GridOutcome { rows, best, best_config })
}

//! Forward dynamics of the recurrent cells: RNN, LSTM, SRU and FRU.
//!
//! Every cell exposes a summary state `u`: for RNN it is `h`, for LSTM the
//! concatenation `[h; c]`, for SRU the stacked moving averages and for FRU
//! the cosine-weighted accumulators. The readout is always `y = Y·s + yb`
//! where `s` is `h` (RNN, LSTM) or `u` (SRU, FRU).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative from the pre-activation and the activation output. ReLU
    /// takes 0 at the kink.
    #[inline]
    pub fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }

    pub fn is_identity(self) -> bool {
        self == Activation::Identity
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Rnn,
    Lstm,
    Sru,
    Fru,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Rnn => "rnn",
            Arch::Lstm => "lstm",
            Arch::Sru => "sru",
            Arch::Fru => "fru",
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(Arch::Rnn),
            "lstm" => Ok(Arch::Lstm),
            "sru" => Ok(Arch::Sru),
            "fru" => Ok(Arch::Fru),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Weight init scale `1/√fan_in`.
fn init_scale(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vector,
    pub y: Matrix,
    pub yb: Vector,
    pub phi: Activation,
}

impl RnnParams {
    pub fn init(n_h: usize, n_i: usize, n_y: usize, phi: Activation, seed: u64) -> Self {
        let mut r = rng::shared(seed);
        RnnParams {
            w: Matrix::random_uniform(n_h, n_h, init_scale(n_h), &mut r),
            u: Matrix::random_uniform(n_h, n_i, init_scale(n_i), &mut r),
            b: Vector::zeros(n_h),
            y: Matrix::random_uniform(n_y, n_h, init_scale(n_h), &mut r),
            yb: Vector::zeros(n_y),
            phi,
        }
    }

    pub fn zeros(n_h: usize, n_i: usize, n_y: usize, phi: Activation) -> Self {
        RnnParams {
            w: Matrix::zeros(n_h, n_h),
            u: Matrix::zeros(n_h, n_i),
            b: Vector::zeros(n_h),
            y: Matrix::zeros(n_y, n_h),
            yb: Vector::zeros(n_y),
            phi,
        }
    }
}

/// Four-gate LSTM with gate order `[input, forget, candidate, output]`
/// stacked along the rows of `wx`, `wh` and `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub wx: Matrix,
    pub wh: Matrix,
    pub b: Vector,
    pub y: Matrix,
    pub yb: Vector,
}

impl LstmParams {
    pub fn init(n_h: usize, n_i: usize, n_y: usize, seed: u64) -> Self {
        let mut r = rng::shared(seed);
        let mut b = Vector::zeros(4 * n_h);
        b[n_h..2 * n_h].iter_mut().for_each(|v| *v = 1.0);
        LstmParams {
            wx: Matrix::random_uniform(4 * n_h, n_i, init_scale(n_i), &mut r),
            wh: Matrix::random_uniform(4 * n_h, n_h, init_scale(n_h), &mut r),
            b,
            y: Matrix::random_uniform(n_y, n_h, init_scale(n_h), &mut r),
            yb: Vector::zeros(n_y),
        }
    }

    pub fn zeros(n_h: usize, n_i: usize, n_y: usize) -> Self {
        LstmParams {
            wx: Matrix::zeros(4 * n_h, n_i),
            wh: Matrix::zeros(4 * n_h, n_h),
            b: Vector::zeros(4 * n_h),
            y: Matrix::zeros(n_y, n_h),
            yb: Vector::zeros(n_y),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.cols()
    }
}

/// Default SRU decay factors.
pub const SRU_DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.9, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SruParams {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub u: Matrix,
    pub b2: Vector,
    pub y: Matrix,
    pub yb: Vector,
    pub alphas: Vec<f64>,
    pub phi: Activation,
}

impl SruParams {
    pub fn init(
        n_h: usize,
        n_g: usize,
        n_i: usize,
        n_y: usize,
        alphas: &[f64],
        phi: Activation,
        seed: u64,
    ) -> Result<Self> {
        validate_alphas(alphas)?;
        let n_u = alphas.len() * n_h;
        let mut r = rng::shared(seed);
        Ok(SruParams {
            w1: Matrix::random_uniform(n_g, n_u, init_scale(n_u), &mut r),
            b1: Vector::zeros(n_g),
            w2: Matrix::random_uniform(n_h, n_g, init_scale(n_g), &mut r),
            u: Matrix::random_uniform(n_h, n_i, init_scale(n_i), &mut r),
            b2: Vector::zeros(n_h),
            y: Matrix::random_uniform(n_y, n_u, init_scale(n_u), &mut r),
            yb: Vector::zeros(n_y),
            alphas: alphas.to_vec(),
            phi,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w2.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.alphas.len() * self.hidden()
    }
}

fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Config("SRU needs at least one decay factor".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..1.0).contains(*a)) {
        return Err(Error::Range {
            what: "SRU decay factor",
            detail: format!("{a} not in [0, 1)"),
        });
    }
    Ok(())
}

/// Time basis multiplying the FRU residual. `Cosine` is the Fourier basis
/// `cos(2π f_k t / T + θ_k)`; `Sampled` holds arbitrary values
/// `values[t * K + k]` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Basis {
    Cosine,
    Sampled { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FruSpectrum {
    pub freqs: Vec<f64>,
    pub phases: Vec<f64>,
    /// Coordinates of `u` per frequency.
    pub d: usize,
    /// Sequence length `T` the cosines are normalised by.
    pub horizon: usize,
    pub basis: Basis,
}

impl FruSpectrum {
    pub fn new(freqs: Vec<f64>, phases: Vec<f64>, d: usize, horizon: usize) -> Result<Self> {
        let s = FruSpectrum {
            freqs,
            phases,
            d,
            horizon,
            basis: Basis::Cosine,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs.is_empty() || self.freqs.len() != self.phases.len() {
            return Err(Error::Config(format!(
                "spectrum needs K ≥ 1 frequencies with matching phases (got {} / {})",
                self.freqs.len(),
                self.phases.len()
            )));
        }
        if self.freqs.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(Error::Range {
                what: "frequency",
                detail: "frequencies must be finite and ≥ 0".into(),
            });
        }
        if self.horizon == 0 || self.d == 0 {
            return Err(Error::Config("spectrum needs T ≥ 1 and d ≥ 1".into()));
        }
        if let Basis::Sampled { values } = &self.basis {
            if values.len() != (self.horizon + 1) * self.freqs.len() {
                return Err(shape_err(
                    "FruSpectrum basis",
                    (self.horizon + 1) * self.freqs.len(),
                    values.len(),
                ));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.freqs.len()
    }

    pub fn state_dim(&self) -> usize {
        self.k() * self.d
    }

    /// Basis value of frequency `k` at step `t`.
    #[inline]
    pub fn factor(&self, k: usize, t: usize) -> f64 {
        match &self.basis {
            Basis::Cosine => cosine_factor(self.freqs[k], self.phases[k], t, self.horizon),
            Basis::Sampled { values } => values[t * self.k() + k],
        }
    }

    pub fn factors(&self, t: usize) -> Vec<f64> {
        (0..self.k()).map(|k| self.factor(k, t)).collect()
    }

    /// Replace the phases with uniform draws from `[0, 2π)`.
    pub fn with_random_phases(mut self, seed: u64) -> Self {
        use rand::Rng;
        let mut r = rng::stream(seed, 1);
        for p in &mut self.phases {
            *p = r.random_range(0.0..2.0 * PI);
        }
        self
    }
}

#[inline]
pub fn cosine_factor(freq: f64, phase: f64, t: usize, horizon: usize) -> f64 {
    (2.0 * PI * freq * t as f64 / horizon as f64 + phase).cos()
}

/// `K` frequencies log-uniform on `[f_min, f_max]`, sorted, zero phases.
pub fn sample_log_spectrum(
    k: usize,
    f_min: f64,
    f_max: f64,
    d: usize,
    horizon: usize,
    seed: u64,
) -> Result<FruSpectrum> {
    use rand::Rng;
    if k == 0 {
        return Err(Error::Config("K must be ≥ 1".into()));
    }
    if !(f_min > 0.0 && f_min < f_max && f_max.is_finite()) {
        return Err(Error::Range {
            what: "frequency range",
            detail: format!("need 0 < f_min < f_max, got [{f_min}, {f_max}]"),
        });
    }
    let mut r = rng::shared(seed);
    let (lo, hi) = (f_min.ln(), f_max.ln());
    let mut freqs: Vec<f64> = (0..k)
        .map(|_| (lo + (hi - lo) * r.random::<f64>()).exp().clamp(f_min, f_max))
        .collect();
    freqs.sort_by(f64::total_cmp);
    FruSpectrum::new(freqs, vec![0.0; k], d, horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FruParams {
    pub w1: Matrix,
    pub b1: Vector,
    pub w2: Matrix,
    pub u: Matrix,
    pub b2: Vector,
    pub y: Matrix,
    pub yb: Vector,
    pub spectrum: FruSpectrum,
    pub phi: Activation,
}

impl FruParams {
    pub fn init(
        n_h: usize,
        n_g: usize,
        n_i: usize,
        n_y: usize,
        spectrum: FruSpectrum,
        phi: Activation,
        seed: u64,
    ) -> Result<Self> {
        spectrum.validate()?;
        let n_u = spectrum.state_dim();
        let mut r = rng::shared(seed);
        Ok(FruParams {
            w1: Matrix::random_uniform(n_g, n_u, init_scale(n_u), &mut r),
            b1: Vector::zeros(n_g),
            w2: Matrix::random_uniform(n_h, n_g, init_scale(n_g), &mut r),
            u: Matrix::random_uniform(n_h, n_i, init_scale(n_i), &mut r),
            b2: Vector::zeros(n_h),
            y: Matrix::random_uniform(n_y, n_u, init_scale(n_u), &mut r),
            yb: Vector::zeros(n_y),
            spectrum,
            phi,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w2.rows()
    }

    pub fn state_dim(&self) -> usize {
        self.spectrum.state_dim()
    }

    /// Hidden coordinate feeding state coordinate `i`: `ρ(i) = i mod n_h`
    /// (the 1-based `(k−1)·d + j − 1` index, cyclic when `K·d > n_h`).
    #[inline]
    pub fn coord(&self, i: usize) -> usize {
        i % self.hidden()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum Cell {
    Rnn(RnnParams),
    Lstm(LstmParams),
    Sru(SruParams),
    Fru(FruParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub u: Vector,
    pub h_last: Vector,
    pub t: usize,
}

/// Everything computed during one step, kept for the reverse pass.
///
/// `pre_g`/`g` hold the SRU/FRU inner layer or the four LSTM gates (pre- and
/// post-nonlinearity). `pre_h`/`h` hold the hidden pre-activation and
/// activation; for LSTM `pre_h` is `tanh(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub pre_g: Vec<f64>,
    pub g: Vec<f64>,
    pub pre_h: Vec<f64>,
    pub h: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub factors: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One named trainable tensor.
#[derive(Debug, Clone, Copy)]
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

fn mat<'a>(name: &'static str, m: &'a Matrix) -> TensorRef<'a> {
    TensorRef {
        name,
        rows: m.rows(),
        cols: m.cols(),
        data: m.as_slice(),
    }
}

fn vecref<'a>(name: &'static str, v: &'a Vector) -> TensorRef<'a> {
    TensorRef {
        name,
        rows: v.len(),
        cols: 1,
        data: v,
    }
}

impl Cell {
    pub fn arch(&self) -> Arch {
        match self {
            Cell::Rnn(_) => Arch::Rnn,
            Cell::Lstm(_) => Arch::Lstm,
            Cell::Sru(_) => Arch::Sru,
            Cell::Fru(_) => Arch::Fru,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Cell::Rnn(p) => p.u.cols(),
            Cell::Lstm(p) => p.wx.cols(),
            Cell::Sru(p) => p.u.cols(),
            Cell::Fru(p) => p.u.cols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Cell::Rnn(p) => p.y.rows(),
            Cell::Lstm(p) => p.y.rows(),
            Cell::Sru(p) => p.y.rows(),
            Cell::Fru(p) => p.y.rows(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Cell::Rnn(p) => p.w.rows(),
            Cell::Lstm(p) => p.hidden(),
            Cell::Sru(p) => p.hidden(),
            Cell::Fru(p) => p.hidden(),
        }
    }

    /// Length of the summary state `u`.
    pub fn state_dim(&self) -> usize {
        match self {
            Cell::Rnn(p) => p.w.rows(),
            Cell::Lstm(p) => 2 * p.hidden(),
            Cell::Sru(p) => p.state_dim(),
            Cell::Fru(p) => p.state_dim(),
        }
    }

    /// Activation of the recurrent path; LSTM is never linear.
    pub fn activation(&self) -> Option<Activation> {
        match self {
            Cell::Rnn(p) => Some(p.phi),
            Cell::Lstm(_) => None,
            Cell::Sru(p) => Some(p.phi),
            Cell::Fru(p) => Some(p.phi),
        }
    }

    pub fn is_linear(&self) -> bool {
        self.activation() == Some(Activation::Identity)
    }

    pub fn zero_state(&self) -> CellState {
        CellState {
            u: Vector::zeros(self.state_dim()),
            h_last: Vector::zeros(self.hidden_dim()),
            t: 0,
        }
    }

    pub fn state_from(&self, u0: Vector) -> Result<CellState> {
        if u0.len() != self.state_dim() {
            return Err(shape_err("initial state", self.state_dim(), u0.len()));
        }
        let h_last = match self {
            Cell::Rnn(_) => u0.clone(),
            Cell::Lstm(p) => Vector::from_vec(u0[..p.hidden()].to_vec()),
            _ => Vector::zeros(self.hidden_dim()),
        };
        Ok(CellState { u: u0, h_last, t: 0 })
    }

    /// Trainable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        match self {
            Cell::Rnn(p) => vec![
                mat("W", &p.w),
                mat("U", &p.u),
                vecref("b", &p.b),
                mat("Y", &p.y),
                vecref("yb", &p.yb),
            ],
            Cell::Lstm(p) => vec![
                mat("Wx", &p.wx),
                mat("Wh", &p.wh),
                vecref("b", &p.b),
                mat("Y", &p.y),
                vecref("yb", &p.yb),
            ],
            Cell::Sru(p) => vec![
                mat("W1", &p.w1),
                vecref("b1", &p.b1),
                mat("W2", &p.w2),
                mat("U", &p.u),
                vecref("b2", &p.b2),
                mat("Y", &p.y),
                vecref("yb", &p.yb),
            ],
            Cell::Fru(p) => vec![
                mat("W1", &p.w1),
                vecref("b1", &p.b1),
                mat("W2", &p.w2),
                mat("U", &p.u),
                vecref("b2", &p.b2),
                mat("Y", &p.y),
                vecref("yb", &p.yb),
            ],
        }
    }

    /// Mutable views in the same order as [`Cell::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Cell::Rnn(p) => vec![
                p.w.as_mut_slice(),
                p.u.as_mut_slice(),
                &mut p.b,
                p.y.as_mut_slice(),
                &mut p.yb,
            ],
            Cell::Lstm(p) => vec![
                p.wx.as_mut_slice(),
                p.wh.as_mut_slice(),
                &mut p.b,
                p.y.as_mut_slice(),
                &mut p.yb,
            ],
            Cell::Sru(p) => vec![
                p.w1.as_mut_slice(),
                &mut p.b1,
                p.w2.as_mut_slice(),
                p.u.as_mut_slice(),
                &mut p.b2,
                p.y.as_mut_slice(),
                &mut p.yb,
            ],
            Cell::Fru(p) => vec![
                p.w1.as_mut_slice(),
                &mut p.b1,
                p.w2.as_mut_slice(),
                p.u.as_mut_slice(),
                &mut p.b2,
                p.y.as_mut_slice(),
                &mut p.yb,
            ],
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Largest step index this cell accepts (FRU is tied to its horizon).
    pub fn max_steps(&self) -> Option<usize> {
        match self {
            Cell::Fru(p) => Some(p.spectrum.horizon),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(shape_err("cell parameters", "consistent shapes", what))
            }
        };
        match self {
            Cell::Rnn(p) => {
                let n = p.w.rows();
                check(p.w.is_square(), "W not square")?;
                check(p.u.rows() == n && p.b.len() == n, "U/b rows")?;
                check(p.y.cols() == n && p.yb.len() == p.y.rows(), "Y shape")
            }
            Cell::Lstm(p) => {
                let n = p.hidden();
                check(p.wh.rows() == 4 * n && p.wx.rows() == 4 * n && p.b.len() == 4 * n, "gates")?;
                check(p.y.cols() == n && p.yb.len() == p.y.rows(), "Y shape")
            }
            Cell::Sru(p) => {
                validate_alphas(&p.alphas)?;
                let (n_h, n_g, n_u) = (p.w2.rows(), p.w1.rows(), p.state_dim());
                check(p.w1.cols() == n_u && p.b1.len() == n_g, "W1/b1")?;
                check(p.w2.cols() == n_g && p.u.rows() == n_h && p.b2.len() == n_h, "W2/U/b2")?;
                check(p.y.cols() == n_u && p.yb.len() == p.y.rows(), "Y shape")
            }
            Cell::Fru(p) => {
                p.spectrum.validate()?;
                let (n_h, n_g, n_u) = (p.w2.rows(), p.w1.rows(), p.state_dim());
                check(n_h > 0, "n_h = 0")?;
                check(p.w1.cols() == n_u && p.b1.len() == n_g, "W1/b1")?;
                check(p.w2.cols() == n_g && p.u.rows() == n_h && p.b2.len() == n_h, "W2/U/b2")?;
                check(p.y.cols() == n_u && p.yb.len() == p.y.rows(), "Y shape")
            }
        }
    }

    /// Compute step `t` (1-based) from `u_prev` and input `x`.
    pub fn advance(&self, u_prev: &[f64], x: &[f64], t: usize) -> Result<StepRecord> {
        if x.len() != self.input_dim() {
            return Err(shape_err("step input", self.input_dim(), x.len()));
        }
        if u_prev.len() != self.state_dim() {
            return Err(shape_err("step state", self.state_dim(), u_prev.len()));
        }
        if let Some(max) = self.max_steps() {
            if t > max || t == 0 {
                return Err(Error::Range {
                    what: "FRU step",
                    detail: format!("step {t} outside 1..={max}"),
                });
            }
        }
        Ok(match self {
            Cell::Rnn(p) => rnn_advance(p, u_prev, x, t),
            Cell::Lstm(p) => lstm_advance(p, u_prev, x, t),
            Cell::Sru(p) => sru_advance(p, u_prev, x, t),
            Cell::Fru(p) => fru_advance(p, u_prev, x, t),
        })
    }

    /// One step: returns the new state and the readout `y`.
    pub fn step(&self, state: &CellState, x: &[f64]) -> Result<(CellState, Vector)> {
        let rec = self.advance(&state.u, x, state.t + 1)?;
        let h_last = match self {
            Cell::Lstm(p) => rec.u[..p.hidden()].to_vec(),
            _ => rec.h.clone(),
        };
        Ok((
            CellState {
                u: Vector::from_vec(rec.u),
                h_last: Vector::from_vec(h_last),
                t: rec.t,
            },
            Vector::from_vec(rec.y),
        ))
    }

    /// Apply [`Cell::step`] over `xs`. Returns all states (including `u0`)
    /// and all outputs.
    pub fn unroll(&self, u0: &CellState, xs: &[Vector]) -> Result<(Vec<CellState>, Vec<Vector>)> {
        let mut states = Vec::with_capacity(xs.len() + 1);
        let mut ys = Vec::with_capacity(xs.len());
        states.push(u0.clone());
        for x in xs {
            let (next, y) = self.step(states.last().expect("non-empty"), x)?;
            states.push(next);
            ys.push(y);
        }
        Ok((states, ys))
    }
}

fn readout(y: &Matrix, yb: &[f64], s: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.rows()];
    y.matvec_into(s, &mut out);
    for (o, b) in out.iter_mut().zip(yb) {
        *o += b;
    }
    out
}

fn rnn_advance(p: &RnnParams, u_prev: &[f64], x: &[f64], t: usize) -> StepRecord {
    let n = p.w.rows();
    let mut pre = vec![0.0; n];
    p.w.matvec_into(u_prev, &mut pre);
    let mut ux = vec![0.0; n];
    p.u.matvec_into(x, &mut ux);
    for i in 0..n {
        pre[i] += ux[i] + p.b[i];
    }
    let h: Vec<f64> = pre.iter().map(|&a| p.phi.apply(a)).collect();
    let y = readout(&p.y, &p.yb, &h);
    StepRecord {
        t,
        x: x.to_vec(),
        u_prev: u_prev.to_vec(),
        pre_g: Vec::new(),
        g: Vec::new(),
        pre_h: pre,
        u: h.clone(),
        h,
        y,
        factors: Vec::new(),
    }
}

fn lstm_advance(p: &LstmParams, u_prev: &[f64], x: &[f64], t: usize) -> StepRecord {
    let n = p.hidden();
    let (h_prev, c_prev) = u_prev.split_at(n);
    let mut z = vec![0.0; 4 * n];
    p.wh.matvec_into(h_prev, &mut z);
    let mut zx = vec![0.0; 4 * n];
    p.wx.matvec_into(x, &mut zx);
    for k in 0..4 * n {
        z[k] += zx[k] + p.b[k];
    }
    let mut gates = vec![0.0; 4 * n];
    for k in 0..4 * n {
        gates[k] = if (2 * n..3 * n).contains(&k) {
            z[k].tanh()
        } else {
            sigmoid(z[k])
        };
    }
    let mut u = vec![0.0; 2 * n];
    let mut tanh_c = vec![0.0; n];
    for j in 0..n {
        let (i_g, f_g, c_g, o_g) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
        let c = f_g * c_prev[j] + i_g * c_g;
        tanh_c[j] = c.tanh();
        u[n + j] = c;
        u[j] = o_g * tanh_c[j];
    }
    let h = u[..n].to_vec();
    let y = readout(&p.y, &p.yb, &h);
    StepRecord {
        t,
        x: x.to_vec(),
        u_prev: u_prev.to_vec(),
        pre_g: z,
        g: gates,
        pre_h: tanh_c,
        h,
        u,
        y,
        factors: Vec::new(),
    }
}

/// Shared inner layers of SRU and FRU: `g = φ(W1 u + b1)`,
/// `h = φ(W2 g + U x + b2)`.
#[allow(clippy::too_many_arguments)]
fn summary_hidden(
    w1: &Matrix,
    b1: &[f64],
    w2: &Matrix,
    u: &Matrix,
    b2: &[f64],
    phi: Activation,
    u_prev: &[f64],
    x: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_g = w1.rows();
    let n_h = w2.rows();
    let mut pre_g = vec![0.0; n_g];
    w1.matvec_into(u_prev, &mut pre_g);
    for (a, b) in pre_g.iter_mut().zip(b1) {
        *a += b;
    }
    let g: Vec<f64> = pre_g.iter().map(|&a| phi.apply(a)).collect();
    let mut pre_h = vec![0.0; n_h];
    w2.matvec_into(&g, &mut pre_h);
    let mut ux = vec![0.0; n_h];
    u.matvec_into(x, &mut ux);
    for i in 0..n_h {
        pre_h[i] += ux[i] + b2[i];
    }
    let h: Vec<f64> = pre_h.iter().map(|&a| phi.apply(a)).collect();
    (pre_g, g, pre_h, h)
}

fn sru_advance(p: &SruParams, u_prev: &[f64], x: &[f64], t: usize) -> StepRecord {
    let (pre_g, g, pre_h, h) = summary_hidden(&p.w1, &p.b1, &p.w2, &p.u, &p.b2, p.phi, u_prev, x);
    let n_h = h.len();
    let mut u = vec![0.0; u_prev.len()];
    for (k, &alpha) in p.alphas.iter().enumerate() {
        for j in 0..n_h {
            let i = k * n_h + j;
            u[i] = alpha * u_prev[i] + (1.0 - alpha) * h[j];
        }
    }
    let y = readout(&p.y, &p.yb, &u);
    StepRecord {
        t,
        x: x.to_vec(),
        u_prev: u_prev.to_vec(),
        pre_g,
        g,
        pre_h,
        h,
        u,
        y,
        factors: Vec::new(),
    }
}

fn fru_advance(p: &FruParams, u_prev: &[f64], x: &[f64], t: usize) -> StepRecord {
    let (pre_g, g, pre_h, h) = summary_hidden(&p.w1, &p.b1, &p.w2, &p.u, &p.b2, p.phi, u_prev, x);
    let spec = &p.spectrum;
    let inv_t = 1.0 / spec.horizon as f64;
    let factors = spec.factors(t);
    let mut u = vec![0.0; u_prev.len()];
    for (i, slot) in u.iter_mut().enumerate() {
        let k = i / spec.d;
        *slot = u_prev[i] + inv_t * factors[k] * h[p.coord(i)];
    }
    let y = readout(&p.y, &p.yb, &u);
    StepRecord {
        t,
        x: x.to_vec(),
        u_prev: u_prev.to_vec(),
        pre_g,
        g,
        pre_h,
        h,
        u,
        y,
        factors,
    }
}

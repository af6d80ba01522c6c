//! Analytic gradient-ratio bounds for linear RNN, SRU and FRU cells, their
//! empirical certification through exact BPTT, and the time-resolved
//! gradient probe.
//!
//! The certified quantity is `‖∂L/∂u⁽ᵀ⁰⁾‖₂ / ‖∂L/∂u⁽ᵀ⁾‖₂` for a final-step
//! squared error against a random Gaussian target.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bptt::{self, LossSpec};
use crate::cells::{Activation, Arch, Basis, Cell, FruParams, FruSpectrum, RnnParams, SruParams};
use crate::datagen::SequenceDataset;
use crate::error::{shape_err, Error, Result};
use crate::linalg::{matmul, matrix_power, norm2, sigma_extremal, Matrix, Vector};
use crate::rng;

/// Slack allowed on either side of the analytic interval.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Preconditions of the bound not met; excluded from pass statistics.
    OutOfDomain,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::OutOfDomain => "out_of_domain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCertificate {
    pub arch: Arch,
    pub trial: usize,
    pub t: usize,
    pub t0: usize,
    pub n_h: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub analytic_low: f64,
    pub analytic_high: f64,
    pub measured_ratio: f64,
    pub verdict: Verdict,
    pub note: String,
}

impl BoundCertificate {
    pub fn within(&self) -> bool {
        self.analytic_low - BOUND_SLACK <= self.measured_ratio && self.measured_ratio <= self.analytic_high + BOUND_SLACK
    }
}

pub const CERTIFICATE_CSV_HEADER: &str =
    "arch,trial,t,t0,n_h,sigma_min,sigma_max,analytic_low,analytic_high,measured_ratio,verdict,note";

pub fn write_certificates_csv<W: Write>(certs: &[BoundCertificate], mut w: W) -> Result<()> {
    writeln!(w, "{CERTIFICATE_CSV_HEADER}")?;
    for c in certs {
        writeln!(
            w,
            "{},{},{},{},{},{:e},{:e},{:e},{:e},{:e},{},{}",
            c.arch,
            c.trial,
            c.t,
            c.t0,
            c.n_h,
            c.sigma_min,
            c.sigma_max,
            c.analytic_low,
            c.analytic_high,
            c.measured_ratio,
            c.verdict.as_str(),
            c.note.replace(',', ";")
        )?;
    }
    Ok(())
}

pub fn write_certificates_jsonl<W: Write>(certs: &[BoundCertificate], mut w: W) -> Result<()> {
    for c in certs {
        serde_json::to_writer(&mut w, c)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Pass/fail counts over in-domain certificates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub pass: usize,
    pub fail: usize,
    pub out_of_domain: usize,
}

pub fn tally(certs: &[BoundCertificate]) -> Tally {
    let mut t = Tally::default();
    for c in certs {
        match c.verdict {
            Verdict::Pass => t.pass += 1,
            Verdict::Fail => t.fail += 1,
            Verdict::OutOfDomain => t.out_of_domain += 1,
        }
    }
    t
}

fn check_horizon(t: usize, t0: usize) -> Result<()> {
    if t0 > t {
        return Err(Error::Range {
            what: "T0",
            detail: format!("{t0} > T = {t}"),
        });
    }
    Ok(())
}

/// `(σ_min(W^{T−T0}), σ_max(W^{T−T0}))`.
pub fn rnn_bounds(w: &Matrix, t: usize, t0: usize) -> Result<(f64, f64)> {
    if !w.is_square() {
        return Err(shape_err("rnn_bounds", "square W", format!("{:?}", w.shape())));
    }
    check_horizon(t, t0)?;
    sigma_extremal(&matrix_power(w, t - t0)?)
}

/// `((α+(1−α)σ_min(W))^{T−T0}, (α+(1−α)σ_max(W))^{T−T0})`. Valid for
/// symmetric positive semidefinite `W`; see [`sru_domain`].
pub fn sru_bounds(w: &Matrix, alpha: f64, t: usize, t0: usize) -> Result<(f64, f64)> {
    if !w.is_square() {
        return Err(shape_err("sru_bounds", "square W", format!("{:?}", w.shape())));
    }
    check_horizon(t, t0)?;
    let (lo, hi) = sigma_extremal(w)?;
    let k = (t - t0) as i32;
    Ok(((alpha + (1.0 - alpha) * lo).powi(k), (alpha + (1.0 - alpha) * hi).powi(k)))
}

/// `None` when the SRU bound applies to `(W, α)`, otherwise the reason.
pub fn sru_domain(w: &Matrix, alpha: f64) -> Option<String> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Some(format!("alpha {alpha} outside (0, 1)"));
    }
    let tol = 1e-12 * w.max_abs().max(1.0);
    if !w.is_symmetric(tol) {
        return Some("W not symmetric".into());
    }
    if !is_psd(w) {
        return Some("W not positive semidefinite".into());
    }
    None
}

/// Cholesky on `W + εI` with `ε = 1e-12·max|W|`.
fn is_psd(w: &Matrix) -> bool {
    let n = w.rows();
    let shift = 1e-12 * w.max_abs().max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = w[(j, j)] + shift;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < 0.0 {
            return false;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = w[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = if d > 0.0 { s / d } else { 0.0 };
        }
    }
    true
}

/// `(e^{−2σ_max(W)}, e^{σ_max(W)})`, independent of `T` and `T0`.
pub fn fru_bounds(w: &Matrix) -> Result<(f64, f64)> {
    let (_, s) = sigma_extremal(w)?;
    Ok(((-2.0 * s).exp(), s.exp()))
}

/// The matrix the bound is stated for: `W` (RNN) or `W2·W1` (SRU, FRU).
pub fn recurrent_matrix(cell: &Cell) -> Result<Matrix> {
    match cell {
        Cell::Rnn(p) => Ok(p.w.clone()),
        Cell::Sru(p) => matmul(&p.w2, &p.w1),
        Cell::Fru(p) => matmul(&p.w2, &p.w1),
        Cell::Lstm(_) => Err(Error::Precondition("no analytic bound for LSTM".into())),
    }
}

/// Analytic interval and the domain note for a cell at `(T, T0)`.
fn analytic(cell: &Cell, w: &Matrix, t: usize, t0: usize) -> Result<((f64, f64), Option<String>)> {
    match cell {
        Cell::Rnn(_) => Ok((rnn_bounds(w, t, t0)?, None)),
        Cell::Sru(p) => {
            if p.alphas.len() != 1 {
                let b = sru_bounds(w, p.alphas[0], t, t0)?;
                return Ok((b, Some(format!("{} decay blocks; bound stated for one", p.alphas.len()))));
            }
            let alpha = p.alphas[0];
            Ok((sru_bounds(w, alpha, t, t0)?, sru_domain(w, alpha)))
        }
        Cell::Fru(p) => {
            let (_, s) = sigma_extremal(w)?;
            let mut note = None;
            if s >= t as f64 {
                note = Some(format!("sigma_max {s} ≥ T"));
            }
            if p.state_dim() > p.hidden() {
                note = Some(format!(
                    "K·d = {} exceeds n_h = {}; basis operator norm may exceed 1",
                    p.state_dim(),
                    p.hidden()
                ));
            }
            if let Basis::Sampled { values } = &p.spectrum.basis {
                if values.iter().any(|v| v.abs() > 1.0) {
                    note = Some("sampled basis exceeds 1 in magnitude".into());
                }
            }
            Ok((fru_bounds(w)?, note))
        }
        Cell::Lstm(_) => Err(Error::Precondition("no analytic bound for LSTM".into())),
    }
}

fn gaussian_vec<R: Rng + ?Sized>(n: usize, r: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng::normal(r, 0.0, 1.0)).collect()
}

/// One certificate for `cell` over horizon `t` with split point `t0`, using
/// random inputs, initial state and target drawn from `r`.
pub fn certify_once<R: Rng + ?Sized>(cell: &Cell, t: usize, t0: usize, trial: usize, r: &mut R) -> Result<BoundCertificate> {
    if !cell.is_linear() {
        return Err(Error::Precondition(format!(
            "certification needs an identity-activation cell, got {}",
            cell.arch()
        )));
    }
    if t == 0 {
        return Err(Error::Precondition("certification needs T ≥ 1".into()));
    }
    check_horizon(t, t0)?;
    let w = recurrent_matrix(cell)?;
    let (sigma_min, sigma_max) = sigma_extremal(&w)?;
    let ((low, high), note) = analytic(cell, &w, t, t0)?;

    let xs: Vec<Vector> = (0..t).map(|_| Vector::from_vec(gaussian_vec(cell.input_dim(), r))).collect();
    let u0 = gaussian_vec(cell.state_dim(), r);
    let loss = LossSpec::FinalMse {
        target: Vector::from_vec(gaussian_vec(cell.output_dim(), r)),
    };
    let (_, tape) = bptt::forward_with_tape(cell, &u0, &xs, &loss)?;
    let dys = loss.output_grads(&tape.outputs())?;
    let g_t = bptt::state_adjoint(cell, &tape, &dys, t)?;
    let g_t0 = bptt::state_adjoint(cell, &tape, &dys, t0)?;
    let denom = norm2(&g_t);
    let measured_ratio = if denom > 0.0 { norm2(&g_t0) / denom } else { f64::NAN };

    let mut cert = BoundCertificate {
        arch: cell.arch(),
        trial,
        t,
        t0,
        n_h: cell.hidden_dim(),
        sigma_min,
        sigma_max,
        analytic_low: low,
        analytic_high: high,
        measured_ratio,
        verdict: Verdict::Pass,
        note: String::new(),
    };
    cert.verdict = match note {
        Some(n) => {
            cert.note = n;
            Verdict::OutOfDomain
        }
        None if denom == 0.0 => {
            cert.note = "zero output gradient".into();
            Verdict::OutOfDomain
        }
        None if cert.within() => Verdict::Pass,
        None => Verdict::Fail,
    };
    Ok(cert)
}

/// `trials` certificates of a fixed linear cell. `t0 = None` draws a fresh
/// split point per trial. Trials run in parallel on independent streams and
/// are returned in trial order.
pub fn certify(cell: &Cell, horizon: usize, t0: Option<usize>, trials: usize, seed: u64) -> Result<Vec<BoundCertificate>> {
    if let Some(max) = cell.max_steps() {
        if horizon > max {
            return Err(Error::Range {
                what: "certification horizon",
                detail: format!("T = {horizon} beyond the FRU horizon {max}"),
            });
        }
    }
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut r = rng::item(seed, trial);
            let t0 = match t0 {
                Some(v) => v,
                None => r.random_range(0..=horizon),
            };
            certify_once(cell, horizon, t0, trial, &mut r)
        })
        .collect()
}

/// Sample `basis_fn(k, t)` on `t = 0..=T` into a FRU spectrum basis.
pub fn sampled_basis(spectrum: &FruSpectrum, basis_fn: &(dyn Fn(usize, usize) -> f64 + Sync)) -> Result<Basis> {
    let k = spectrum.k();
    let mut values = Vec::with_capacity((spectrum.horizon + 1) * k);
    for t in 0..=spectrum.horizon {
        for kk in 0..k {
            let v = basis_fn(kk, t);
            if !(v.abs() <= 1.0) {
                return Err(Error::Precondition(format!("basis value {v} at k = {kk}, t = {t} exceeds 1 in magnitude")));
            }
            values.push(v);
        }
    }
    Ok(Basis::Sampled { values })
}

/// [`certify`] for a FRU whose cosine factors are replaced by an arbitrary
/// basis bounded by 1.
pub fn certify_bounded_basis(
    template: &FruParams,
    basis_fn: &(dyn Fn(usize, usize) -> f64 + Sync),
    t0: Option<usize>,
    trials: usize,
    seed: u64,
) -> Result<Vec<BoundCertificate>> {
    let mut p = template.clone();
    p.spectrum.basis = sampled_basis(&p.spectrum, basis_fn)?;
    let horizon = p.spectrum.horizon;
    certify(&Cell::Fru(p), horizon, t0, trials, seed)
}

/// `±1` square wave in `t` with `k + 1` full periods over the horizon.
pub fn square_wave(horizon: usize) -> impl Fn(usize, usize) -> f64 + Sync {
    move |k, t| {
        let half = (horizon as f64 / (2.0 * (k + 1) as f64)).max(1.0);
        if ((t as f64 / half).floor() as u64) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Rescale `w1`, `w2` (both by `√(s/σ)`) so that `σ_max(w2·w1) = s`.
fn rescale_composite(w1: &mut Matrix, w2: &mut Matrix, s: f64) -> Result<()> {
    let (_, cur) = sigma_extremal(&matmul(w2, w1)?)?;
    if cur > 0.0 {
        let f = (s / cur).sqrt();
        *w1 = w1.scaled(f);
        *w2 = w2.scaled(f);
    }
    Ok(())
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, r: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng::normal(r, 0.0, 1.0))
}

const CERT_INPUTS: usize = 2;
const CERT_OUTPUTS: usize = 3;

pub fn linear_rnn(w: Matrix, seed: u64) -> Cell {
    let n = w.rows();
    let mut r = rng::shared(seed);
    Cell::Rnn(RnnParams {
        u: gaussian_matrix(n, CERT_INPUTS, &mut r),
        b: Vector::from_vec(gaussian_vec(n, &mut r)),
        y: gaussian_matrix(CERT_OUTPUTS, n, &mut r),
        yb: Vector::zeros(CERT_OUTPUTS),
        w,
        phi: Activation::Identity,
    })
}

/// Single-block linear SRU with `W1 = I` and `W2 = w`.
pub fn linear_sru(w: Matrix, alpha: f64, seed: u64) -> Cell {
    let n = w.rows();
    let mut r = rng::shared(seed);
    Cell::Sru(SruParams {
        w1: Matrix::identity(n),
        b1: Vector::zeros(n),
        u: gaussian_matrix(n, CERT_INPUTS, &mut r),
        b2: Vector::from_vec(gaussian_vec(n, &mut r)),
        y: gaussian_matrix(CERT_OUTPUTS, n, &mut r),
        yb: Vector::zeros(CERT_OUTPUTS),
        w2: w,
        alphas: vec![alpha],
        phi: Activation::Identity,
    })
}

/// Linear FRU with `W1 = I`, `W2 = w` (so `W2·W1 = w`), one state
/// coordinate per hidden unit and the given spectrum (`K·d = n_h`).
pub fn linear_fru(w: Matrix, spectrum: FruSpectrum, seed: u64) -> Result<Cell> {
    let n = w.rows();
    if spectrum.state_dim() != n || !w.is_square() {
        return Err(shape_err("linear_fru", format!("square W with K·d = n_h = {n}"), spectrum.state_dim()));
    }
    let mut r = rng::shared(seed);
    Ok(Cell::Fru(FruParams {
        w1: Matrix::identity(n),
        b1: Vector::zeros(n),
        u: gaussian_matrix(n, CERT_INPUTS, &mut r),
        b2: Vector::from_vec(gaussian_vec(n, &mut r)),
        y: gaussian_matrix(CERT_OUTPUTS, n, &mut r),
        yb: Vector::zeros(CERT_OUTPUTS),
        w2: w,
        spectrum,
        phi: Activation::Identity,
    }))
}

/// Random linear cell for certification: `n_h ≤ max_hidden`, recurrent
/// matrix scaled to `σ_max` uniform on `[0, σ_cap']` with
/// `σ_cap' = min(σ_cap, T/10)`.
pub fn random_linear_cell<R: Rng + ?Sized>(arch: Arch, horizon: usize, max_hidden: usize, sigma_cap: f64, r: &mut R) -> Result<Cell> {
    if max_hidden == 0 || horizon == 0 {
        return Err(Error::Config("random certification cell needs n_h ≥ 1 and T ≥ 1".into()));
    }
    let n_h = r.random_range(1..=max_hidden);
    let cap = sigma_cap.min(horizon as f64 / 10.0).max(0.0);
    let sigma = r.random_range(0.0..=1.0) * cap;
    let mut bias = || Vector::from_vec(gaussian_vec(n_h, r));
    let b1 = bias();
    let b2 = bias();
    match arch {
        Arch::Rnn => {
            let w = gaussian_matrix(n_h, n_h, r);
            let (_, s) = sigma_extremal(&w)?;
            let w = if s > 0.0 { w.scaled(sigma / s) } else { w };
            Ok(Cell::Rnn(RnnParams {
                w,
                u: gaussian_matrix(n_h, CERT_INPUTS, r),
                b: b1,
                y: gaussian_matrix(CERT_OUTPUTS, n_h, r),
                yb: Vector::zeros(CERT_OUTPUTS),
                phi: Activation::Identity,
            }))
        }
        Arch::Sru => {
            // Symmetric PSD W2 = A·Aᵀ, W1 = I.
            let a = gaussian_matrix(n_h, n_h, r);
            let w2 = matmul(&a, &a.transpose())?;
            let (_, s) = sigma_extremal(&w2)?;
            let w2 = if s > 0.0 { w2.scaled(sigma / s) } else { w2 };
            let alpha = r.random_range(0.01..0.99);
            Ok(Cell::Sru(SruParams {
                w1: Matrix::identity(n_h),
                b1,
                w2,
                u: gaussian_matrix(n_h, CERT_INPUTS, r),
                b2,
                y: gaussian_matrix(CERT_OUTPUTS, n_h, r),
                yb: Vector::zeros(CERT_OUTPUTS),
                alphas: vec![alpha],
                phi: Activation::Identity,
            }))
        }
        Arch::Fru => {
            let divisors: Vec<usize> = (1..=n_h).filter(|d| n_h % d == 0).collect();
            let d = divisors[r.random_range(0..divisors.len())];
            let k = n_h / d;
            let n_g = r.random_range(1..=max_hidden);
            let freqs: Vec<f64> = (0..k).map(|_| r.random_range(0.0..(horizon as f64 / 2.0))).collect();
            let phases: Vec<f64> = (0..k).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
            let spectrum = FruSpectrum::new(freqs, phases, d, horizon)?;
            let mut w1 = gaussian_matrix(n_g, n_h, r);
            let mut w2 = gaussian_matrix(n_h, n_g, r);
            rescale_composite(&mut w1, &mut w2, sigma)?;
            let b1 = Vector::from_vec(gaussian_vec(n_g, r));
            Ok(Cell::Fru(FruParams {
                w1,
                b1,
                w2,
                u: gaussian_matrix(n_h, CERT_INPUTS, r),
                b2,
                y: gaussian_matrix(CERT_OUTPUTS, n_h, r),
                yb: Vector::zeros(CERT_OUTPUTS),
                spectrum,
                phi: Activation::Identity,
            }))
        }
        Arch::Lstm => Err(Error::Precondition("no analytic bound for LSTM".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomSuite {
    pub arch: Arch,
    pub trials: usize,
    /// Each trial picks `T` uniformly from this list.
    pub horizons: Vec<usize>,
    pub max_hidden: usize,
    pub sigma_cap: f64,
    /// Fixed split point; `None` draws `T0` uniformly from `0..=T`.
    pub t0: Option<usize>,
    /// Replace the FRU cosines by a `±1` square wave.
    pub square_wave: bool,
}

impl RandomSuite {
    pub fn fru(trials: usize) -> Self {
        RandomSuite {
            arch: Arch::Fru,
            trials,
            horizons: vec![32, 128, 784],
            max_hidden: 8,
            sigma_cap: 5.0,
            t0: None,
            square_wave: false,
        }
    }
}

/// Fresh random cell per trial, one certificate each.
pub fn run_random_suite(suite: &RandomSuite, seed: u64) -> Result<Vec<BoundCertificate>> {
    if suite.horizons.is_empty() {
        return Err(Error::Config("certification suite needs at least one horizon".into()));
    }
    (0..suite.trials)
        .into_par_iter()
        .map(|trial| {
            let mut r = rng::item(seed, trial);
            let t = suite.horizons[r.random_range(0..suite.horizons.len())];
            let mut cell = random_linear_cell(suite.arch, t, suite.max_hidden, suite.sigma_cap, &mut r)?;
            if suite.square_wave {
                if let Cell::Fru(p) = &mut cell {
                    p.spectrum.basis = sampled_basis(&p.spectrum, &square_wave(t))?;
                }
            }
            let t0 = match suite.t0 {
                Some(v) => v.min(t),
                None => r.random_range(0..=t),
            };
            certify_once(&cell, t, t0, trial, &mut r)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeRow {
    pub epoch: usize,
    pub bucket: usize,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

pub const PROBE_CSV_HEADER: &str = "epoch,bucket,l1,l2,linf";

pub fn write_probe_csv<W: Write>(rows: &[ProbeRow], mut w: W) -> Result<()> {
    writeln!(w, "{PROBE_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{:e},{:e},{:e}", r.epoch, r.bucket, r.l1, r.l2, r.linf)?;
    }
    Ok(())
}

/// Step ranges `[start, end)` (0-based) of each probe bucket.
pub fn buckets(t: usize, bucket: usize) -> Vec<std::ops::Range<usize>> {
    let b = bucket.max(1);
    (0..t.div_ceil(b)).map(|i| i * b..((i + 1) * b).min(t)).collect()
}

/// Norms of `∂(ŷ⁽ᵗ⁾ − y⁽ᵗ⁾)²/∂h⁽¹⁾` (the first hidden activation) for every
/// step `t`, averaged over `sequences` and then within buckets of `bucket`
/// consecutive steps. Rows are labelled with `epoch`.
pub fn gradient_probe(cell: &Cell, data: &SequenceDataset, sequences: &[usize], bucket: usize, epoch: usize) -> Result<Vec<ProbeRow>> {
    if !data.is_regression() {
        return Err(Error::Precondition("gradient probe needs a regression dataset".into()));
    }
    if bucket == 0 {
        return Err(Error::Config("probe bucket must be ≥ 1".into()));
    }
    let t_len = data.t;
    let per_seq: Vec<Vec<[f64; 3]>> = sequences
        .par_iter()
        .map(|&l| -> Result<Vec<[f64; 3]>> {
            let xs = data.sequence(l);
            let targets = data.step_targets(l).expect("regression");
            let loss = LossSpec::PerStepMse { targets: targets.clone() };
            let u0 = vec![0.0; cell.state_dim()];
            let (_, tape) = bptt::forward_with_tape(cell, &u0, &xs, &loss)?;
            let mut out = Vec::with_capacity(t_len);
            for t in 1..=t_len {
                let y = &tape.steps[t - 1].y;
                let dy: Vec<f64> = y.iter().zip(targets[t - 1].iter()).map(|(a, b)| 2.0 * (a - b)).collect();
                let du1 = bptt::single_output_adjoint(cell, &tape, t, &dy, 1)?;
                let dh = bptt::hidden_adjoint(cell, &tape.steps[0], &du1);
                let l1 = dh.iter().map(|v| v.abs()).sum();
                let l2 = norm2(&dh);
                let linf = dh.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                out.push([l1, l2, linf]);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut mean = vec![[0.0; 3]; t_len];
    for seq in &per_seq {
        for (m, v) in mean.iter_mut().zip(seq) {
            for c in 0..3 {
                m[c] += v[c];
            }
        }
    }
    let n = sequences.len().max(1) as f64;
    Ok(buckets(t_len, bucket)
        .into_iter()
        .enumerate()
        .map(|(b, range)| {
            let len = range.len() as f64;
            let mut acc = [0.0; 3];
            for m in &mean[range] {
                for c in 0..3 {
                    acc[c] += m[c] / n;
                }
            }
            ProbeRow {
                epoch,
                bucket: b,
                l1: acc[0] / len,
                l2: acc[1] / len,
                linf: acc[2] / len,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::sample_log_spectrum;
    use crate::datagen;

    fn scaled_identity(n: usize, s: f64) -> Matrix {
        Matrix::identity(n).scaled(s)
    }

    #[test]
    fn rnn_bounds_identity_and_diagonal() {
        assert_eq!(rnn_bounds(&Matrix::identity(3), 50, 7).unwrap(), (1.0, 1.0));
        let (lo, hi) = rnn_bounds(&scaled_identity(4, 0.9), 200, 0).unwrap();
        let want = 0.9f64.powi(200);
        assert!((lo - want).abs() <= 1e-12 * want && (hi - want).abs() <= 1e-12 * want);
        assert!((want - 7.06e-10).abs() < 1e-11);
    }

    #[test]
    fn rnn_bounds_match_sequential_product() {
        let mut r = rng::shared(3);
        let w = gaussian_matrix(4, 4, &mut r).scaled(0.4);
        let mut p = Matrix::identity(4);
        for _ in 0..9 {
            p = matmul(&p, &w).unwrap();
        }
        let (lo, hi) = rnn_bounds(&w, 12, 3).unwrap();
        let (plo, phi) = sigma_extremal(&p).unwrap();
        assert!((lo - plo).abs() <= 1e-10 * phi && (hi - phi).abs() <= 1e-12 * phi);
    }

    #[test]
    fn sru_bounds_examples() {
        assert_eq!(sru_bounds(&Matrix::identity(2), 0.3, 10, 0).unwrap(), (1.0, 1.0));
        let (lo, hi) = sru_bounds(&Matrix::zeros(3, 3), 0.5, 10, 0).unwrap();
        assert_eq!((lo, hi), (0.5f64.powi(10), 0.5f64.powi(10)));
    }

    #[test]
    fn sru_domain_detects_asymmetry_and_indefiniteness() {
        assert!(sru_domain(&scaled_identity(3, 0.5), 0.5).is_none());
        let asym = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(sru_domain(&asym, 0.5).is_some());
        let indef = Matrix::from_diag(&[1.0, -0.5]);
        assert!(sru_domain(&indef, 0.5).is_some());
        assert!(sru_domain(&Matrix::zeros(2, 2), 0.5).is_none());
    }

    #[test]
    fn fru_bounds_formula_and_t_invariance() {
        assert_eq!(fru_bounds(&Matrix::zeros(3, 4)).unwrap(), (1.0, 1.0));
        let (lo, hi) = fru_bounds(&Matrix::from_diag(&[1.0, 0.5])).unwrap();
        assert!((lo - (-2.0f64).exp()).abs() < 1e-15 && (hi - 1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn fru_zero_w_ratio_is_one() {
        let spec = sample_log_spectrum(2, 0.5, 4.0, 2, 8, 1).unwrap();
        let cell = linear_fru(Matrix::zeros(4, 4), spec, 2).unwrap();
        for c in certify(&cell, 8, None, 5, 9).unwrap() {
            assert_eq!(c.verdict, Verdict::Pass);
            assert!((c.measured_ratio - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rnn_diagonal_ratio_is_exact_power() {
        let cell = linear_rnn(scaled_identity(3, 0.9), 4);
        let c = &certify(&cell, 200, Some(0), 1, 5).unwrap()[0];
        let want = 0.9f64.powi(200);
        assert!((c.measured_ratio - want).abs() <= 1e-9 * want);
        assert_eq!(c.verdict, Verdict::Pass);
    }

    #[test]
    fn sru_out_of_domain_is_flagged() {
        let w = Matrix::from_rows(&[vec![0.2, 0.5], vec![-0.3, 0.1]]).unwrap();
        let cell = linear_sru(w, 0.5, 1);
        let c = certify(&cell, 20, Some(3), 2, 1).unwrap();
        assert!(c.iter().all(|c| c.verdict == Verdict::OutOfDomain && !c.note.is_empty()));
    }

    #[test]
    fn nonlinear_cells_are_rejected() {
        let cell = Cell::Rnn(RnnParams::init(3, 1, 1, Activation::Tanh, 0));
        assert!(matches!(certify(&cell, 5, None, 1, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn bounded_basis_rejects_large_values() {
        let spec = sample_log_spectrum(1, 0.5, 4.0, 3, 10, 1).unwrap();
        let Cell::Fru(p) = linear_fru(scaled_identity(3, 0.5), spec, 0).unwrap() else {
            unreachable!()
        };
        assert!(certify_bounded_basis(&p, &|_, _| 1.5, None, 1, 0).is_err());
        let zero = certify_bounded_basis(&p, &|_, _| 0.0, None, 4, 0).unwrap();
        assert!(zero.iter().all(|c| (c.measured_ratio - 1.0).abs() < 1e-15));
    }

    #[test]
    fn cosine_basis_reproduces_certify() {
        let spec = sample_log_spectrum(2, 0.5, 4.0, 2, 16, 3).unwrap();
        let spec_c = spec.clone();
        let Cell::Fru(p) = linear_fru(scaled_identity(4, 0.7), spec, 0).unwrap() else {
            unreachable!()
        };
        let a = certify(&Cell::Fru(p.clone()), 16, None, 6, 2).unwrap();
        let b = certify_bounded_basis(&p, &|k, t| spec_c.factor(k, t), None, 6, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.t0, y.t0);
            assert!((x.measured_ratio - y.measured_ratio).abs() <= 1e-14 * x.measured_ratio.max(1.0));
        }
    }

    #[test]
    fn square_wave_is_pm_one() {
        let f = square_wave(32);
        assert!((0..=32).all(|t| (0..4).all(|k| f(k, t).abs() == 1.0)));
        assert!((0..=32).any(|t| f(0, t) < 0.0));
    }

    #[test]
    fn random_suites_pass_small() {
        for arch in [Arch::Rnn, Arch::Sru, Arch::Fru] {
            let suite = RandomSuite {
                arch,
                trials: 20,
                horizons: vec![16, 40],
                max_hidden: 5,
                sigma_cap: 3.0,
                t0: None,
                square_wave: false,
            };
            let certs = run_random_suite(&suite, 7).unwrap();
            let t = tally(&certs);
            assert_eq!(t.fail, 0, "{arch}: {certs:?}");
            assert_eq!(t.out_of_domain, 0);
        }
    }

    #[test]
    fn buckets_cover_every_step_once() {
        for (t, b) in [(176, 20), (10, 3), (5, 5), (7, 100)] {
            let cover: Vec<usize> = buckets(t, b).into_iter().flatten().collect();
            assert_eq!(cover, (0..t).collect::<Vec<_>>());
        }
    }

    #[test]
    fn probe_zero_model_zero_targets() {
        let mut ds = datagen::gen_mix_poly(3, 12, 2, 1).unwrap();
        ds.inputs.iter_mut().for_each(|v| *v = 0.0);
        if let datagen::Targets::NextStep(v) = &mut ds.targets {
            v.iter_mut().for_each(|v| *v = 0.0);
        }
        let cell = Cell::Rnn(RnnParams::zeros(3, 1, 1, Activation::Tanh));
        let rows = gradient_probe(&cell, &ds, &[0, 1, 2], 5, 0).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.l1 == 0.0 && r.l2 == 0.0 && r.linf == 0.0));
    }

    #[test]
    fn probe_linear_fru_zero_w_is_flat() {
        // Zero recurrent weights: every Jacobian is I, so the gradient at h⁽¹⁾
        // only depends on the output error. Use zero inputs and constant
        // targets so the error is the same at every step.
        let t = 12;
        let spec = FruSpectrum::new(vec![0.0], vec![0.0], 3, t).unwrap();
        let mut cell = linear_fru(Matrix::zeros(3, 3), spec, 0).unwrap();
        if let Cell::Fru(p) = &mut cell {
            p.u = Matrix::zeros(3, 1);
            p.b2 = Vector::zeros(3);
            p.y = Matrix::from_fn(1, 3, |_, j| j as f64 + 1.0);
        }
        let mut ds = datagen::gen_mix_poly(1, t, 1, 0).unwrap();
        ds.inputs.iter_mut().for_each(|v| *v = 0.0);
        if let datagen::Targets::NextStep(v) = &mut ds.targets {
            v.iter_mut().for_each(|v| *v = 1.0);
        }
        let rows = gradient_probe(&cell, &ds, &[0], 1, 0).unwrap();
        for r in &rows {
            assert!((r.l2 - rows[0].l2).abs() < 1e-15 && r.l2 > 0.0);
        }
    }
}

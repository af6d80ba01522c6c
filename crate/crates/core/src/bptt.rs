//! Exact reverse-mode gradients through an unrolled cell, plus a central
//! finite-difference oracle.
//!
//! The adjoints are written out per architecture. The state adjoint carried
//! backwards is always `∂L/∂u⁽ᵗ⁾` for the cell's summary state, so the
//! per-step Jacobian structure (e.g. `I + (1/T)·C⁽ᵗ⁾·W` for linear FRU) is
//! exactly what the reverse loop applies.

use crate::cells::{Cell, StepRecord};
use crate::error::{shape_err, Error, Result};
use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// `‖ŷ⁽ᵀ⁾ − y‖²`.
    FinalMse { target: Vector },
    /// `(1/T) Σₜ ‖ŷ⁽ᵗ⁾ − y⁽ᵗ⁾‖²`.
    PerStepMse { targets: Vec<Vector> },
    /// Softmax cross-entropy of `ŷ⁽ᵀ⁾` against a class label.
    FinalCrossEntropy { label: usize },
}

impl LossSpec {
    pub fn value(&self, ys: &[Vector]) -> Result<f64> {
        match self {
            LossSpec::FinalMse { target } => {
                let y = ys.last().ok_or_else(|| Error::Precondition("final-step loss needs T ≥ 1".into()))?;
                check_len("FinalMse target", y.len(), target.len())?;
                Ok(sq_dist(y, target))
            }
            LossSpec::PerStepMse { targets } => {
                check_len("PerStepMse targets", ys.len(), targets.len())?;
                if ys.is_empty() {
                    return Ok(0.0);
                }
                let mut total = 0.0;
                for (y, tgt) in ys.iter().zip(targets) {
                    check_len("PerStepMse target", y.len(), tgt.len())?;
                    total += sq_dist(y, tgt);
                }
                Ok(total / ys.len() as f64)
            }
            LossSpec::FinalCrossEntropy { label } => {
                let y = ys.last().ok_or_else(|| Error::Precondition("final-step loss needs T ≥ 1".into()))?;
                if *label >= y.len() {
                    return Err(Error::Range {
                        what: "class label",
                        detail: format!("{label} ≥ {}", y.len()),
                    });
                }
                let m = y.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + y.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                Ok(lse - y[*label])
            }
        }
    }

    /// `∂L/∂ŷ⁽ᵗ⁾` for every step (zeros where the loss does not look).
    pub fn output_grads(&self, ys: &[Vector]) -> Result<Vec<Vec<f64>>> {
        let mut out: Vec<Vec<f64>> = ys.iter().map(|y| vec![0.0; y.len()]).collect();
        match self {
            LossSpec::FinalMse { target } => {
                let last = out.last_mut().ok_or_else(|| Error::Precondition("final-step loss needs T ≥ 1".into()))?;
                let y = ys.last().expect("non-empty");
                check_len("FinalMse target", y.len(), target.len())?;
                for ((g, a), b) in last.iter_mut().zip(y.iter()).zip(target.iter()) {
                    *g = 2.0 * (a - b);
                }
            }
            LossSpec::PerStepMse { targets } => {
                check_len("PerStepMse targets", ys.len(), targets.len())?;
                let scale = 2.0 / ys.len().max(1) as f64;
                for ((g, y), tgt) in out.iter_mut().zip(ys).zip(targets) {
                    check_len("PerStepMse target", y.len(), tgt.len())?;
                    for ((gi, a), b) in g.iter_mut().zip(y.iter()).zip(tgt.iter()) {
                        *gi = scale * (a - b);
                    }
                }
            }
            LossSpec::FinalCrossEntropy { label } => {
                let last = out.last_mut().ok_or_else(|| Error::Precondition("final-step loss needs T ≥ 1".into()))?;
                let y = ys.last().expect("non-empty");
                if *label >= y.len() {
                    return Err(Error::Range {
                        what: "class label",
                        detail: format!("{label} ≥ {}", y.len()),
                    });
                }
                let m = y.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let z: f64 = y.iter().map(|v| (v - m).exp()).sum();
                for (i, g) in last.iter_mut().enumerate() {
                    *g = (y[i] - m).exp() / z - if i == *label { 1.0 } else { 0.0 };
                }
            }
        }
        Ok(out)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_len(what: &'static str, want: usize, got: usize) -> Result<()> {
    if want == got {
        Ok(())
    } else {
        Err(shape_err(what, want, got))
    }
}

/// Forward activations of one unrolled sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollTape {
    pub u0: Vector,
    pub steps: Vec<StepRecord>,
}

impl UnrollTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn outputs(&self) -> Vec<Vector> {
        self.steps.iter().map(|s| Vector::from_vec(s.y.clone())).collect()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.u0
        } else {
            &self.steps[t - 1].u
        }
    }

    /// Re-run the forward pass from the recorded inputs.
    pub fn replay(&self, cell: &Cell) -> Result<UnrollTape> {
        let xs: Vec<Vector> = self.steps.iter().map(|s| Vector::from_vec(s.x.clone())).collect();
        record(cell, &self.u0, &xs)
    }

    /// Smallest |pre-activation| over ReLU layers; used to steer finite
    /// difference checks away from the kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.steps
            .iter()
            .flat_map(|s| s.pre_g.iter().chain(s.pre_h.iter()))
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn record(cell: &Cell, u0: &[f64], xs: &[Vector]) -> Result<UnrollTape> {
    let mut steps: Vec<StepRecord> = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let prev: &[f64] = if i == 0 { u0 } else { &steps[i - 1].u };
        let rec = cell.advance(prev, x, i + 1)?;
        steps.push(rec);
    }
    Ok(UnrollTape {
        u0: Vector::from_vec(u0.to_vec()),
        steps,
    })
}

/// Gradients for every trainable tensor (in [`Cell::tensors`] order) and for
/// the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub names: Vec<&'static str>,
    pub shapes: Vec<(usize, usize)>,
    pub tensors: Vec<Vec<f64>>,
    pub initial_state: Vector,
}

impl GradientSet {
    pub fn zeros_like(cell: &Cell) -> Self {
        let t = cell.tensors();
        GradientSet {
            names: t.iter().map(|t| t.name).collect(),
            shapes: t.iter().map(|t| (t.rows, t.cols)).collect(),
            tensors: t.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            initial_state: Vector::zeros(cell.state_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (x, y) in self.initial_state.iter_mut().zip(other.initial_state.iter()) {
            *x += y;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|v| *v *= s);
        }
        self.initial_state.iter_mut().for_each(|v| *v *= s);
    }

    /// Every scalar: parameters first, then the initial state.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flatten().copied().chain(self.initial_state.iter().copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| *n == name).map(|i| self.tensors[i].as_slice())
    }
}

/// Loss of a plain unroll (no tape).
pub fn loss_of(cell: &Cell, u0: &[f64], xs: &[Vector], loss: &LossSpec) -> Result<f64> {
    let state = cell.state_from(Vector::from_vec(u0.to_vec()))?;
    let (_, ys) = cell.unroll(&state, xs)?;
    loss.value(&ys)
}

pub fn forward_with_tape(cell: &Cell, u0: &[f64], xs: &[Vector], loss: &LossSpec) -> Result<(f64, UnrollTape)> {
    if u0.len() != cell.state_dim() {
        return Err(shape_err("initial state", cell.state_dim(), u0.len()));
    }
    let tape = record(cell, u0, xs)?;
    let value = loss.value(&tape.outputs())?;
    Ok((value, tape))
}

pub fn backward(cell: &Cell, tape: &UnrollTape, loss: &LossSpec) -> Result<GradientSet> {
    let dys = loss.output_grads(&tape.outputs())?;
    let mut grads = GradientSet::zeros_like(cell);
    let du0 = reverse(cell, tape, &dys, 0, Some(&mut grads.tensors))?;
    grads.initial_state = Vector::from_vec(du0);
    Ok(grads)
}

/// Forward and backward in one call.
pub fn loss_and_grad(cell: &Cell, u0: &[f64], xs: &[Vector], loss: &LossSpec) -> Result<(f64, GradientSet)> {
    let (value, tape) = forward_with_tape(cell, u0, xs, loss)?;
    let grads = backward(cell, &tape, loss)?;
    Ok((value, grads))
}

/// `∂L/∂u⁽ᵀ⁰⁾`, the reverse pass truncated at step `t0`.
pub fn grad_wrt_initial_state(cell: &Cell, tape: &UnrollTape, loss: &LossSpec, t0: usize) -> Result<Vector> {
    let dys = loss.output_grads(&tape.outputs())?;
    state_adjoint(cell, tape, &dys, t0)
}

/// Same as [`grad_wrt_initial_state`] with explicit per-step output
/// gradients.
pub fn state_adjoint(cell: &Cell, tape: &UnrollTape, dys: &[Vec<f64>], t0: usize) -> Result<Vector> {
    if t0 > tape.len() {
        return Err(Error::Range {
            what: "T0",
            detail: format!("{t0} > T = {}", tape.len()),
        });
    }
    Ok(Vector::from_vec(reverse(cell, tape, dys, t0, None)?))
}

/// `∂ℓₜ/∂u⁽ᵗ⁰⁾` where `ℓₜ` only looks at the output of step `t` with
/// upstream gradient `dy`. Walks `t → t0` without touching later steps.
pub fn single_output_adjoint(cell: &Cell, tape: &UnrollTape, t: usize, dy: &[f64], t0: usize) -> Result<Vector> {
    if t == 0 || t > tape.len() || t0 > t {
        return Err(Error::Range {
            what: "probe step",
            detail: format!("need 1 ≤ t ≤ T and t0 ≤ t, got t = {t}, t0 = {t0}, T = {}", tape.len()),
        });
    }
    check_len("probe output gradient", cell.output_dim(), dy.len())?;
    let mut du = vec![0.0; cell.state_dim()];
    readout_adjoint(cell, &tape.steps[t - 1], dy, &mut du, None);
    for s in (t0 + 1..=t).rev() {
        du = step_adjoint(cell, &tape.steps[s - 1], &du, None);
    }
    Ok(Vector::from_vec(du))
}

/// Pull `∂L/∂u⁽ᵗ⁾` back onto the hidden activation `h⁽ᵗ⁾` of the same step
/// through the direct write `h⁽ᵗ⁾ → u⁽ᵗ⁾` only.
pub fn hidden_adjoint(cell: &Cell, rec: &StepRecord, du: &[f64]) -> Vec<f64> {
    match cell {
        Cell::Rnn(_) => du.to_vec(),
        Cell::Lstm(p) => du[..p.hidden()].to_vec(),
        Cell::Sru(p) => {
            let n_h = p.hidden();
            let mut dh = vec![0.0; n_h];
            for (k, &alpha) in p.alphas.iter().enumerate() {
                for j in 0..n_h {
                    dh[j] += (1.0 - alpha) * du[k * n_h + j];
                }
            }
            dh
        }
        Cell::Fru(p) => {
            let n_h = p.hidden();
            let d = p.spectrum.d;
            let inv_t = 1.0 / p.spectrum.horizon as f64;
            let mut dh = vec![0.0; n_h];
            for (i, &dui) in du.iter().enumerate() {
                dh[i % n_h] += inv_t * rec.factors[i / d] * dui;
            }
            dh
        }
    }
}

fn reverse(
    cell: &Cell,
    tape: &UnrollTape,
    dys: &[Vec<f64>],
    stop: usize,
    mut grads: Option<&mut Vec<Vec<f64>>>,
) -> Result<Vec<f64>> {
    if dys.len() != tape.len() {
        return Err(shape_err("output gradients", tape.len(), dys.len()));
    }
    if let Some(g) = grads.as_deref() {
        let want = cell.tensors();
        if g.len() != want.len() || g.iter().zip(&want).any(|(a, b)| a.len() != b.data.len()) {
            return Err(shape_err("gradient buffers", "cell tensor shapes", "mismatched buffers"));
        }
    }
    let mut du = vec![0.0; cell.state_dim()];
    for t in (stop + 1..=tape.len()).rev() {
        let rec = &tape.steps[t - 1];
        if rec.u.len() != du.len() {
            return Err(shape_err("tape state", du.len(), rec.u.len()));
        }
        readout_adjoint(cell, rec, &dys[t - 1], &mut du, grads.as_deref_mut());
        du = step_adjoint(cell, rec, &du, grads.as_deref_mut());
    }
    if stop >= 1 {
        readout_adjoint(cell, &tape.steps[stop - 1], &dys[stop - 1], &mut du, None);
    }
    Ok(du)
}

/// Indices of the readout tensors `Y`, `yb` in [`Cell::tensors`] order.
fn readout_slots(cell: &Cell) -> (usize, usize) {
    match cell {
        Cell::Rnn(_) | Cell::Lstm(_) => (3, 4),
        Cell::Sru(_) | Cell::Fru(_) => (5, 6),
    }
}

fn outer_acc(dst: &mut [f64], cols: usize, a: &[f64], b: &[f64]) {
    debug_assert_eq!(dst.len(), a.len() * cols);
    if cols == 0 {
        return;
    }
    for (&ai, row) in a.iter().zip(dst.chunks_exact_mut(cols)) {
        if ai == 0.0 {
            continue;
        }
        for (r, bj) in row.iter_mut().zip(b) {
            *r += ai * bj;
        }
    }
}

fn add_to(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn readout_adjoint(cell: &Cell, rec: &StepRecord, dy: &[f64], du: &mut [f64], grads: Option<&mut Vec<Vec<f64>>>) {
    if dy.iter().all(|&v| v == 0.0) {
        return;
    }
    let (y, s): (&Matrix, &[f64]) = match cell {
        Cell::Rnn(p) => (&p.y, &rec.h),
        Cell::Lstm(p) => (&p.y, &rec.h),
        Cell::Sru(p) => (&p.y, &rec.u),
        Cell::Fru(p) => (&p.y, &rec.u),
    };
    // For LSTM the readout sees the h-part, which is the front of u.
    y.tmatvec_acc(dy, &mut du[..s.len()]);
    if let Some(g) = grads {
        let (iy, iyb) = readout_slots(cell);
        outer_acc(&mut g[iy], s.len(), dy, s);
        add_to(&mut g[iyb], dy);
    }
}

fn step_adjoint(cell: &Cell, rec: &StepRecord, du: &[f64], grads: Option<&mut Vec<Vec<f64>>>) -> Vec<f64> {
    match cell {
        Cell::Rnn(p) => {
            let da: Vec<f64> = (0..du.len()).map(|i| du[i] * p.phi.derivative(rec.pre_h[i], rec.h[i])).collect();
            if let Some(g) = grads {
                outer_acc(&mut g[0], rec.u_prev.len(), &da, &rec.u_prev);
                outer_acc(&mut g[1], rec.x.len(), &da, &rec.x);
                add_to(&mut g[2], &da);
            }
            let mut prev = vec![0.0; du.len()];
            p.w.tmatvec_acc(&da, &mut prev);
            prev
        }
        Cell::Lstm(p) => {
            let n = p.hidden();
            let (dh, dc) = du.split_at(n);
            let (h_prev, c_prev) = rec.u_prev.split_at(n);
            let gates = &rec.g;
            let tanh_c = &rec.pre_h;
            let mut dz = vec![0.0; 4 * n];
            let mut dc_prev = vec![0.0; n];
            for j in 0..n {
                let (ig, fg, cg, og) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
                let dc_tot = dc[j] + dh[j] * og * (1.0 - tanh_c[j] * tanh_c[j]);
                dz[j] = dc_tot * cg * ig * (1.0 - ig);
                dz[n + j] = dc_tot * c_prev[j] * fg * (1.0 - fg);
                dz[2 * n + j] = dc_tot * ig * (1.0 - cg * cg);
                dz[3 * n + j] = dh[j] * tanh_c[j] * og * (1.0 - og);
                dc_prev[j] = dc_tot * fg;
            }
            if let Some(g) = grads {
                outer_acc(&mut g[0], rec.x.len(), &dz, &rec.x);
                outer_acc(&mut g[1], n, &dz, h_prev);
                add_to(&mut g[2], &dz);
            }
            let mut prev = vec![0.0; 2 * n];
            p.wh.tmatvec_acc(&dz, &mut prev[..n]);
            prev[n..].copy_from_slice(&dc_prev);
            prev
        }
        Cell::Sru(p) => {
            let n_h = p.hidden();
            let mut dh = vec![0.0; n_h];
            for (k, &alpha) in p.alphas.iter().enumerate() {
                for j in 0..n_h {
                    dh[j] += (1.0 - alpha) * du[k * n_h + j];
                }
            }
            let mut prev = vec![0.0; du.len()];
            for (k, &alpha) in p.alphas.iter().enumerate() {
                for j in 0..n_h {
                    prev[k * n_h + j] = alpha * du[k * n_h + j];
                }
            }
            inner_adjoint(&p.w1, &p.w2, p.phi, rec, &dh, &mut prev, grads);
            prev
        }
        Cell::Fru(p) => {
            let n_h = p.hidden();
            let d = p.spectrum.d;
            let inv_t = 1.0 / p.spectrum.horizon as f64;
            let mut dh = vec![0.0; n_h];
            for (i, &dui) in du.iter().enumerate() {
                dh[i % n_h] += inv_t * rec.factors[i / d] * dui;
            }
            let mut prev = du.to_vec();
            inner_adjoint(&p.w1, &p.w2, p.phi, rec, &dh, &mut prev, grads);
            prev
        }
    }
}

/// Reverse of `g = φ(W1 u + b1)`, `h = φ(W2 g + U x + b2)`; adds the
/// contribution to `du_prev`.
fn inner_adjoint(
    w1: &Matrix,
    w2: &Matrix,
    phi: crate::cells::Activation,
    rec: &StepRecord,
    dh: &[f64],
    du_prev: &mut [f64],
    grads: Option<&mut Vec<Vec<f64>>>,
) {
    let da2: Vec<f64> = (0..dh.len()).map(|i| dh[i] * phi.derivative(rec.pre_h[i], rec.h[i])).collect();
    let mut dg = vec![0.0; w2.cols()];
    w2.tmatvec_acc(&da2, &mut dg);
    let da1: Vec<f64> = (0..dg.len()).map(|i| dg[i] * phi.derivative(rec.pre_g[i], rec.g[i])).collect();
    w1.tmatvec_acc(&da1, du_prev);
    if let Some(g) = grads {
        outer_acc(&mut g[0], rec.u_prev.len(), &da1, &rec.u_prev);
        add_to(&mut g[1], &da1);
        outer_acc(&mut g[2], rec.g.len(), &da2, &rec.g);
        outer_acc(&mut g[3], rec.x.len(), &da2, &rec.x);
        add_to(&mut g[4], &da2);
    }
}

/// Central differences `(L(p+ε) − L(p−ε)) / 2ε` for every parameter scalar
/// and every initial-state entry.
pub fn finite_diff_grad(cell: &Cell, u0: &[f64], xs: &[Vector], loss: &LossSpec, eps: f64) -> Result<GradientSet> {
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("finite-difference step must be > 0, got {eps}")));
    }
    let mut grads = GradientSet::zeros_like(cell);
    let mut work = cell.clone();
    for ti in 0..grads.tensors.len() {
        for k in 0..grads.tensors[ti].len() {
            let orig = work.tensors_mut()[ti][k];
            work.tensors_mut()[ti][k] = orig + eps;
            let plus = loss_of(&work, u0, xs, loss)?;
            work.tensors_mut()[ti][k] = orig - eps;
            let minus = loss_of(&work, u0, xs, loss)?;
            work.tensors_mut()[ti][k] = orig;
            grads.tensors[ti][k] = (plus - minus) / (2.0 * eps);
        }
    }
    let mut u = u0.to_vec();
    for k in 0..u.len() {
        let orig = u[k];
        u[k] = orig + eps;
        let plus = loss_of(cell, &u, xs, loss)?;
        u[k] = orig - eps;
        let minus = loss_of(cell, &u, xs, loss)?;
        u[k] = orig;
        grads.initial_state[k] = (plus - minus) / (2.0 * eps);
    }
    Ok(grads)
}

/// Largest `|a − n| / max(1e-8, |a| + |n|)` over all entries.
pub fn max_relative_error(analytic: &GradientSet, numeric: &GradientSet) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{Activation, FruParams, FruSpectrum, RnnParams};
    use crate::linalg::{matmul, Matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vs(v: &[f64]) -> Vector {
        Vector::from_vec(v.to_vec())
    }

    #[test]
    fn zero_params_zero_loss() {
        let cell = Cell::Rnn(RnnParams::zeros(3, 1, 2, Activation::Relu));
        let xs = vec![vs(&[1.0]); 4];
        let loss = LossSpec::PerStepMse { targets: vec![vs(&[0.0, 0.0]); 4] };
        let (l, _) = forward_with_tape(&cell, &[0.0; 3], &xs, &loss).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn per_step_mse_definition() {
        let ys = vec![vs(&[1.0, 2.0]), vs(&[0.0, -1.0]), vs(&[3.0, 0.5])];
        let targets = vec![vs(&[0.0, 2.0]), vs(&[1.0, 1.0]), vs(&[3.0, 0.0])];
        let l = LossSpec::PerStepMse { targets }.value(&ys).unwrap();
        assert_eq!(l, (1.0 + (1.0 + 4.0) + 0.25) / 3.0);
    }

    #[test]
    fn tape_replay_is_bitwise() {
        let spectrum = FruSpectrum::new(vec![1.0, 4.0], vec![0.0, 0.0], 2, 6).unwrap();
        let cell = Cell::Fru(FruParams::init(3, 4, 1, 1, spectrum, Activation::Tanh, 1).unwrap());
        let xs: Vec<Vector> = (0..6).map(|i| vs(&[(i as f64).sin()])).collect();
        let loss = LossSpec::FinalMse { target: vs(&[0.3]) };
        let u0 = [0.1, -0.2, 0.3, 0.05];
        let (l, tape) = forward_with_tape(&cell, &u0, &xs, &loss).unwrap();
        assert_eq!(tape.replay(&cell).unwrap(), tape);
        assert_eq!(l.to_bits(), loss_of(&cell, &u0, &xs, &loss).unwrap().to_bits());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cell = Cell::Rnn(RnnParams::init(3, 1, 1, Activation::Tanh, 3));
        let xs = vec![vs(&[0.5]); 5];
        let (_, tape) = forward_with_tape(&cell, &[0.0; 3], &xs, &LossSpec::FinalMse { target: vs(&[0.0]) }).unwrap();
        // Target equal to the prediction makes ∂L/∂ŷ vanish.
        let target = vs(&tape.steps.last().unwrap().y);
        let grads = backward(&cell, &tape, &LossSpec::FinalMse { target }).unwrap();
        assert!(grads.iter().all(|v| v == 0.0));
    }

    #[test]
    fn scalar_rnn_single_link() {
        let p = RnnParams {
            w: Matrix::from_vec(1, 1, vec![0.7]).unwrap(),
            u: Matrix::from_vec(1, 1, vec![0.3]).unwrap(),
            b: vs(&[0.1]),
            y: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            yb: vs(&[0.0]),
            phi: Activation::Identity,
        };
        let cell = Cell::Rnn(p);
        let loss = LossSpec::FinalMse { target: vs(&[2.0]) };
        let (_, tape) = forward_with_tape(&cell, &[0.4], &[vs(&[1.0])], &loss).unwrap();
        let d1 = grad_wrt_initial_state(&cell, &tape, &loss, 1).unwrap();
        let d0 = grad_wrt_initial_state(&cell, &tape, &loss, 0).unwrap();
        assert_eq!(d0[0], 0.7 * d1[0]);
    }

    #[test]
    fn fd_linear_and_quadratic() {
        let p = RnnParams {
            w: Matrix::zeros(1, 1),
            u: Matrix::from_vec(1, 1, vec![1.5]).unwrap(),
            b: vs(&[0.0]),
            y: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            yb: vs(&[0.0]),
            phi: Activation::Identity,
        };
        let cell = Cell::Rnn(p);
        let x = 0.8;
        // L = (u·x)², ∂L/∂u = 2 u x², quadratic in u so central differences are exact up to roundoff.
        let loss = LossSpec::FinalMse { target: vs(&[0.0]) };
        let fd = finite_diff_grad(&cell, &[0.0], &[vs(&[x])], &loss, 1e-5).unwrap();
        let want = 2.0 * 1.5 * x * x;
        assert!((fd.tensor("U").unwrap()[0] - want).abs() <= 1e-9);
        // ∂L/∂yb at yb = 0 is 2ŷ: linear in the bias.
        assert!((fd.tensor("yb").unwrap()[0] - 2.0 * 1.5 * x).abs() <= 1e-9);
        assert!(finite_diff_grad(&cell, &[0.0], &[vs(&[x])], &loss, 0.0).is_err());
    }

    #[test]
    fn t0_equals_t_is_output_gradient() {
        let spectrum = FruSpectrum::new(vec![2.0], vec![0.0], 2, 5).unwrap();
        let cell = Cell::Fru(FruParams::init(2, 2, 1, 1, spectrum, Activation::Identity, 8).unwrap());
        let xs = vec![vs(&[1.0]); 5];
        let loss = LossSpec::FinalMse { target: vs(&[1.0]) };
        let (_, tape) = forward_with_tape(&cell, &[0.0; 2], &xs, &loss).unwrap();
        let got = grad_wrt_initial_state(&cell, &tape, &loss, 5).unwrap();
        let Cell::Fru(p) = &cell else { unreachable!() };
        let r = 2.0 * (tape.steps[4].y[0] - 1.0);
        let want: Vec<f64> = (0..2).map(|i| p.y[(0, i)] * r).collect();
        assert_eq!(&*got, &want[..]);
        assert!(grad_wrt_initial_state(&cell, &tape, &loss, 6).is_err());
    }

    #[test]
    fn linear_fru_zero_w_passes_gradient_unchanged() {
        let spectrum = FruSpectrum::new(vec![1.0, 3.0], vec![0.0, 0.4], 1, 12).unwrap();
        let mut p = FruParams::init(2, 3, 1, 1, spectrum, Activation::Identity, 2).unwrap();
        p.w2 = Matrix::zeros(2, 3);
        let cell = Cell::Fru(p);
        let xs = vec![vs(&[0.5]); 12];
        let loss = LossSpec::FinalMse { target: vs(&[1.0]) };
        let (_, tape) = forward_with_tape(&cell, &[0.1, 0.2], &xs, &loss).unwrap();
        let top = grad_wrt_initial_state(&cell, &tape, &loss, 12).unwrap();
        for t0 in 0..12 {
            assert_eq!(grad_wrt_initial_state(&cell, &tape, &loss, t0).unwrap(), top);
        }
    }

    #[test]
    fn linear_fru_matches_product_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let horizon = 40;
        let spectrum = FruSpectrum::new(vec![1.5, 7.0], vec![0.2, -0.5], 2, horizon).unwrap();
        let p = FruParams::init(4, 3, 1, 2, spectrum, Activation::Identity, 4).unwrap();
        let cell = Cell::Fru(p.clone());
        let xs: Vec<Vector> = (0..horizon).map(|_| vs(&[rng.random_range(-1.0..1.0)])).collect();
        let loss = LossSpec::FinalMse { target: vs(&[0.3, -0.7]) };
        let (_, tape) = forward_with_tape(&cell, &[0.0; 4], &xs, &loss).unwrap();
        let top = grad_wrt_initial_state(&cell, &tape, &loss, horizon).unwrap();
        let w = matmul(&p.w2, &p.w1).unwrap();
        for t0 in [0usize, 5, 17, 39] {
            // (∏_{t=T0+1}^{T} (I + (1/T) C_t W))ᵀ · ∂L/∂u^T, product ordered t = T … T0+1.
            let mut prod = Matrix::identity(4);
            for t in (t0 + 1)..=horizon {
                let c = Matrix::from_fn(4, 4, |i, j| {
                    if i % 4 == j {
                        p.spectrum.factor(i / 2, t) / horizon as f64
                    } else {
                        0.0
                    }
                });
                let step = Matrix::identity(4).add(&matmul(&c, &w).unwrap()).unwrap();
                prod = matmul(&step, &prod).unwrap();
            }
            let want = prod.transpose().matvec(&top).unwrap();
            let got = grad_wrt_initial_state(&cell, &tape, &loss, t0).unwrap();
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn truncation_consistency_and_linearity() {
        let cell = Cell::Rnn(RnnParams::init(3, 2, 1, Activation::Identity, 6));
        let xs = vec![vs(&[0.2, -0.3]); 7];
        let loss = LossSpec::FinalMse { target: vs(&[0.9]) };
        let (_, tape) = forward_with_tape(&cell, &[0.1, 0.1, 0.1], &xs, &loss).unwrap();
        let full = backward(&cell, &tape, &loss).unwrap();
        let t0 = grad_wrt_initial_state(&cell, &tape, &loss, 0).unwrap();
        assert_eq!(full.initial_state, t0);

        let dys = loss.output_grads(&tape.outputs()).unwrap();
        let doubled: Vec<Vec<f64>> = dys.iter().map(|d| d.iter().map(|v| 2.0 * v).collect()).collect();
        let mut g1 = GradientSet::zeros_like(&cell);
        let mut g2 = GradientSet::zeros_like(&cell);
        reverse(&cell, &tape, &dys, 0, Some(&mut g1.tensors)).unwrap();
        reverse(&cell, &tape, &doubled, 0, Some(&mut g2.tensors)).unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }
}

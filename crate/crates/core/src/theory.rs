//! Numerical side of the expressive-power results.
//!
//! Part one fits `x*(t) = Σᵢ αᵢ cos(2πfit) + βᵢ sin(2πfit)` (i = 1..d+1) to a
//! polynomial `Q` of degree ≤ 2d+1 by matching Taylor coefficients and then
//! shrinking `f`. Part two evaluates the odd degree-9 polynomial
//! counterexample against sums of exponentials.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve, Matrix};
use crate::rng;

use std::f64::consts::PI;

pub const DEFAULT_GRID_POINTS: usize = 10_001;
pub const MAX_HALVINGS: usize = 60;
pub const MAX_FIT_DEGREE: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolyQ {
    /// `c₀, c₁, …` in increasing degree.
    pub coeffs: Vec<f64>,
    pub horizon: f64,
}

impl PolyQ {
    pub fn new(coeffs: Vec<f64>, horizon: f64) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("polynomial needs at least one finite coefficient".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Range {
                what: "horizon",
                detail: format!("T = {horizon} must be positive"),
            });
        }
        Ok(PolyQ { coeffs, horizon })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Smallest `d` with `degree ≤ 2d + 1`.
    pub fn half_degree(&self) -> usize {
        self.degree() / 2
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    fn coeff(&self, m: usize) -> f64 {
        self.coeffs.get(m).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourierFit {
    pub f: f64,
    pub d: usize,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Right-hand sides `γ₀ … γ_{2d+1}` of the two linear systems.
    pub gammas: Vec<f64>,
    pub halvings: usize,
    pub grid_points: usize,
    /// `max |x*(t) − Q(t)|` over the grid.
    pub sup_error: f64,
}

impl FourierFit {
    pub fn eval(&self, t: f64) -> f64 {
        let w = 2.0 * PI * self.f * t;
        let mut s = 0.0;
        for (idx, (a, b)) in self.alphas.iter().zip(&self.betas).enumerate() {
            let i = (idx + 1) as f64;
            s += a * (w * i).cos() + b * (w * i).sin();
        }
        s
    }

    /// Degree-`m` Taylor coefficient of `x*` at 0.
    pub fn taylor_coeff(&self, m: usize) -> f64 {
        let j = m / 2;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let w = (2.0 * PI * self.f).powi(m as i32) / factorial(m);
        let weights = if m % 2 == 0 { &self.alphas } else { &self.betas };
        let moment: f64 = weights
            .iter()
            .enumerate()
            .map(|(idx, v)| ((idx + 1) as f64).powi(m as i32) * v)
            .sum();
        sign * w * moment
    }

    /// `P₁`: the Taylor polynomial of `x*` through degree `2d + 1`.
    pub fn p1(&self, t: f64) -> f64 {
        (0..=2 * self.d + 1).rev().fold(0.0, |acc, m| acc * t + self.taylor_coeff(m))
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn grid(horizon: f64, points: usize) -> impl Iterator<Item = f64> {
    let n = points.max(2) - 1;
    (0..=n).map(move |k| horizon * k as f64 / n as f64)
}

/// Solve both moment systems at frequency `f`. Rows are indexed by the
/// power `j`, columns by the harmonic `i = 1..d+1`.
fn solve_moments(q: &PolyQ, d: usize, f: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let w = 2.0 * PI * f;
    let n = d + 1;
    let mut gammas = Vec::with_capacity(2 * n);
    for m in 0..2 * n {
        let j = m / 2;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        gammas.push(q.coeff(m) * factorial(m) * sign / w.powi(m as i32));
    }
    let a = Matrix::from_fn(n, n, |j, i| ((i + 1) as f64).powi(2 * j as i32));
    let b = Matrix::from_fn(n, n, |j, i| ((i + 1) as f64).powi(2 * j as i32 + 1));
    let even: Vec<f64> = (0..n).map(|j| gammas[2 * j]).collect();
    let odd: Vec<f64> = (0..n).map(|j| gammas[2 * j + 1]).collect();
    let alphas = solve(&a, &even)?.into_vec();
    let betas = solve(&b, &odd)?.into_vec();
    Ok((alphas, betas, gammas))
}

/// Degree `2d + 1` polynomial on `[0, 1]` with coefficients uniform on
/// `[−1, 1]`, drawn from item stream `index` of `seed`.
pub fn random_poly(d: usize, seed: u64, index: usize) -> PolyQ {
    let mut r = rng::item(seed, index);
    let coeffs = (0..2 * d + 2).map(|_| r.random_range(-1.0..=1.0)).collect();
    PolyQ { coeffs, horizon: 1.0 }
}

pub fn fit_fourier_to_poly(q: &PolyQ, eps: f64) -> Result<FourierFit> {
    fit_fourier_to_poly_with(q, eps, DEFAULT_GRID_POINTS)
}

/// Halve `f` from `1/(2πT(d+2))` until the grid sup-error is at most `eps`.
pub fn fit_fourier_to_poly_with(q: &PolyQ, eps: f64, grid_points: usize) -> Result<FourierFit> {
    if !(eps > 0.0) {
        return Err(Error::Range {
            what: "eps",
            detail: format!("{eps} must be positive"),
        });
    }
    if q.degree() > MAX_FIT_DEGREE {
        return Err(Error::Range {
            what: "polynomial degree",
            detail: format!("{} > {MAX_FIT_DEGREE}", q.degree()),
        });
    }
    let d = q.half_degree();
    let mut f = 1.0 / (2.0 * PI * q.horizon * (d + 2) as f64);
    let mut best = f64::INFINITY;
    for halvings in 0..=MAX_HALVINGS {
        let (alphas, betas, gammas) = solve_moments(q, d, f)?;
        let mut fit = FourierFit {
            f,
            d,
            alphas,
            betas,
            gammas,
            halvings,
            grid_points,
            sup_error: 0.0,
        };
        fit.sup_error = grid(q.horizon, grid_points)
            .map(|t| (fit.eval(t) - q.eval(t)).abs())
            .fold(0.0, f64::max);
        if fit.sup_error <= eps {
            return Ok(fit);
        }
        best = best.min(fit.sup_error);
        f *= 0.5;
    }
    Err(Error::Convergence {
        iterations: MAX_HALVINGS,
        best,
    })
}

/// `max |x*(t) − P₁(t)|` over the fit's grid: the size of the Taylor tail.
pub fn taylor_remainder_bound(fit: &FourierFit, q: &PolyQ) -> f64 {
    grid(q.horizon, fit.grid_points)
        .map(|t| (fit.eval(t) - fit.p1(t)).abs())
        .fold(0.0, f64::max)
}

/// `t − t³/3! + t⁵/5! − t⁷/7! + t⁹/9!`.
pub fn sine_taylor9(x: f64) -> f64 {
    let x2 = x * x;
    x * (1.0 - x2 / 6.0 * (1.0 - x2 / 20.0 * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0))))
}

/// `P` on the unit horizon: `f(β s − β/2)` with `s = t/T`.
pub fn counterexample_p(beta: f64, s: f64) -> f64 {
    sine_taylor9(beta * s - beta / 2.0)
}

fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let (mut glo, ghi) = (g(lo), g(hi));
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    if glo.signum() == ghi.signum() {
        return Err(Error::Bracket { lo, hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// First sign change of `g` scanning `(lo, hi)` at `step`, refined by
/// bisection.
fn scan_root(g: &impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> Result<f64> {
    let mut a = lo + step;
    let mut ga = g(a);
    while a + step < hi {
        let b = a + step;
        let gb = g(b);
        if ga.signum() != gb.signum() {
            return bisect(g, a, b);
        }
        a = b;
        ga = gb;
    }
    Err(Error::Bracket { lo, hi })
}

fn simpson(g: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = g(a) + g(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * g(a + h * k as f64);
    }
    s * h / 3.0
}

/// Constants of the degree-9 counterexample on the unit horizon (all
/// lengths and masses are divided by `T`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexamplePoly {
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Signed areas over `[0, β₁]`, `[β₁, ½]`, `[½, β₂]`, `[β₂, 1]`.
    pub masses: [f64; 4],
    pub total_abs: f64,
    pub quad_points: usize,
}

pub const MIN_QUAD_POINTS: usize = 10_000;

pub fn counterexample_constants(quad_points: usize) -> Result<CounterexamplePoly> {
    if quad_points < MIN_QUAD_POINTS {
        return Err(Error::Range {
            what: "quad_points",
            detail: format!("{quad_points} < {MIN_QUAD_POINTS}"),
        });
    }
    let beta = bisect(|b| sine_taylor9(b / 2.0), 8.0, 12.0)?;
    let p = |s: f64| counterexample_p(beta, s);
    let beta1 = scan_root(&p, 0.0, 0.5, 1e-4)?;
    let beta2 = scan_root(&p, 0.5, 1.0, 1e-4)?;
    let edges = [0.0, beta1, 0.5, beta2, 1.0];
    let mut masses = [0.0; 4];
    for k in 0..4 {
        masses[k] = simpson(p, edges[k], edges[k + 1], quad_points);
    }
    let total_abs = masses.iter().map(|m| m.abs()).sum();
    Ok(CounterexamplePoly {
        beta,
        beta1,
        beta2,
        masses,
        total_abs,
        quad_points,
    })
}

pub const EXP_FIT_GRID: usize = 2001;
const LAMBDA_MIN: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e3;
const EXP_SWEEPS: usize = 30;
const LAMBDA_SCAN: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpSumFit {
    pub k: usize,
    /// Mean absolute error `(1/T)∫|P − x|` on the grid.
    pub error: f64,
    pub coeffs: Vec<f64>,
    /// Decay rates `αᵢ` per unit of normalised time (`x(t) = Σ cᵢ αᵢ^{t/T}`).
    pub alphas: Vec<f64>,
}

fn mean_abs(r: &[f64]) -> f64 {
    r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64
}

/// Minimiser of `Σ w |v − c|`.
fn weighted_median(mut pairs: Vec<(f64, f64)>) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (v, w) in &pairs {
        acc += w;
        if acc >= 0.5 * total {
            return *v;
        }
    }
    pairs.last().map_or(0.0, |p| p.0)
}

/// Best L1 fit of `P` by `Σᵢ cᵢ e^{−λᵢ s}` found by coordinate descent over
/// `(cᵢ, log λᵢ)` from `trials` random starts (plus the all-zero start).
/// Returns an upper bound on the optimal mean absolute error.
pub fn exp_sum_best_fit(k: usize, trials: usize, seed: u64) -> Result<ExpSumFit> {
    if k > 8 {
        return Err(Error::Range {
            what: "exp-sum terms",
            detail: format!("k = {k} not in [0, 8]"),
        });
    }
    let cx = counterexample_constants(MIN_QUAD_POINTS)?;
    let s: Vec<f64> = (0..EXP_FIT_GRID).map(|i| i as f64 / (EXP_FIT_GRID - 1) as f64).collect();
    let target: Vec<f64> = s.iter().map(|&si| counterexample_p(cx.beta, si)).collect();
    let zero = ExpSumFit {
        k,
        error: mean_abs(&target),
        coeffs: vec![0.0; k],
        alphas: vec![1.0; k],
    };
    if k == 0 || trials == 0 {
        return Ok(zero);
    }
    let fits: Vec<ExpSumFit> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut r = rng::item(seed, trial);
            let mut log_l: Vec<f64> = (0..k).map(|_| r.random_range(LAMBDA_MIN.ln()..LAMBDA_MAX.ln())).collect();
            let mut c = vec![0.0; k];
            descend(&s, &target, &mut c, &mut log_l);
            let basis: Vec<Vec<f64>> = log_l.iter().map(|&ll| s.iter().map(|&si| (-ll.exp() * si).exp()).collect()).collect();
            let resid = residual(&target, &c, &basis);
            ExpSumFit {
                k,
                error: mean_abs(&resid),
                coeffs: c,
                alphas: log_l.iter().map(|ll| (-ll.exp()).exp()).collect(),
            }
        })
        .collect();
    Ok(fits
        .into_iter()
        .fold(zero, |best, f| if f.error < best.error { f } else { best }))
}

fn residual(target: &[f64], c: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut r = target.to_vec();
    for (ci, b) in c.iter().zip(basis) {
        for (rv, bv) in r.iter_mut().zip(b) {
            *rv -= ci * bv;
        }
    }
    r
}

fn descend(s: &[f64], target: &[f64], c: &mut [f64], log_l: &mut [f64]) {
    let k = c.len();
    let phi = |ll: f64| -> Vec<f64> { s.iter().map(|&si| (-ll.exp() * si).exp()).collect() };
    let mut basis: Vec<Vec<f64>> = log_l.iter().map(|&ll| phi(ll)).collect();
    let mut best = f64::INFINITY;
    for _ in 0..EXP_SWEEPS {
        for i in 0..k {
            // Residual with term i removed.
            let mut r = residual(target, c, &basis);
            for (rv, bv) in r.iter_mut().zip(&basis[i]) {
                *rv += c[i] * bv;
            }
            let fit_c = |b: &[f64]| -> (f64, f64) {
                let ci = weighted_median(r.iter().zip(b).map(|(rv, bv)| (rv / bv, *bv)).collect());
                let err = r.iter().zip(b).map(|(rv, bv)| (rv - ci * bv).abs()).sum::<f64>();
                (ci, err)
            };
            // Coarse scan of log λ, then golden refinement around the best.
            let (lo, hi) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
            let step = (hi - lo) / (LAMBDA_SCAN - 1) as f64;
            let mut cand = (log_l[i], fit_c(&basis[i]));
            for m in 0..LAMBDA_SCAN {
                let ll = lo + step * m as f64;
                let res = fit_c(&phi(ll));
                if res.1 < cand.1 .1 {
                    cand = (ll, res);
                }
            }
            let (mut a, mut b) = ((cand.0 - step).max(lo), (cand.0 + step).min(hi));
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..30 {
                let x1 = b - g * (b - a);
                let x2 = a + g * (b - a);
                let (r1, r2) = (fit_c(&phi(x1)), fit_c(&phi(x2)));
                if r1.1 < r2.1 {
                    b = x2;
                    if r1.1 < cand.1 .1 {
                        cand = (x1, r1);
                    }
                } else {
                    a = x1;
                    if r2.1 < cand.1 .1 {
                        cand = (x2, r2);
                    }
                }
            }
            log_l[i] = cand.0;
            c[i] = cand.1 .0;
            basis[i] = phi(log_l[i]);
        }
        let err = mean_abs(&residual(target, c, &basis));
        if err >= best - 1e-12 {
            break;
        }
        best = err;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_polynomial_fits_exactly() {
        let q = PolyQ::new(vec![0.0; 4], 1.0).unwrap();
        let fit = fit_fourier_to_poly(&q, 1e-6).unwrap();
        assert!(fit.alphas.iter().chain(&fit.betas).all(|&v| v == 0.0));
        assert_eq!(fit.sup_error, 0.0);
        assert_eq!(taylor_remainder_bound(&fit, &q), 0.0);
    }

    #[test]
    fn constant_polynomial_first_alpha_is_c0() {
        let q = PolyQ::new(vec![0.7], 1.0).unwrap();
        let fit = fit_fourier_to_poly(&q, 1e-6).unwrap();
        assert_eq!(fit.d, 0);
        assert!((fit.alphas[0] - 0.7).abs() < 1e-15);
        assert_eq!(fit.betas[0], 0.0);
    }

    #[test]
    fn t_squared_passes_dense_grid() {
        let q = PolyQ::new(vec![0.0, 0.0, 1.0], 1.0).unwrap();
        let fit = fit_fourier_to_poly(&q, 1e-3).unwrap();
        assert_eq!(fit.d, 1);
        // Independent dense check on a grid offset from the fitting grid.
        let worst = (0..20_000)
            .map(|k| (k as f64 + 0.5) / 20_000.0)
            .map(|t| (fit.eval(t) - t * t).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-3, "{worst}");
        let p2 = taylor_remainder_bound(&fit, &q);
        assert!(p2 <= fit.sup_error + 1e-12);
    }

    #[test]
    fn moments_reproduce_coefficients() {
        let q = PolyQ::new(vec![0.3, -0.2, 0.9, 0.4, -0.6, 0.1], 1.0).unwrap();
        let fit = fit_fourier_to_poly(&q, 1e-3).unwrap();
        for (m, c) in q.coeffs.iter().enumerate() {
            let got = fit.taylor_coeff(m);
            assert!((got - c).abs() <= 1e-8 * c.abs().max(1.0), "m = {m}: {got} vs {c}");
        }
    }

    #[test]
    fn remainder_shrinks_with_frequency() {
        let q = PolyQ::new(vec![0.1, 0.5, -0.4, 0.8], 1.0).unwrap();
        let mut prev = f64::INFINITY;
        let d = q.half_degree();
        let f0 = 1.0 / (2.0 * PI * (d + 2) as f64);
        for h in 0..6 {
            let f = f0 / 2f64.powi(h);
            let (alphas, betas, gammas) = solve_moments(&q, d, f).unwrap();
            let fit = FourierFit {
                f,
                d,
                alphas,
                betas,
                gammas,
                halvings: h as usize,
                grid_points: 2001,
                sup_error: 0.0,
            };
            let p2 = taylor_remainder_bound(&fit, &q);
            assert!(p2 < prev, "halving {h}: {p2} ≥ {prev}");
            prev = p2;
        }
    }

    #[test]
    fn rejects_high_degree() {
        let q = PolyQ::new(vec![1.0; 9], 1.0).unwrap();
        assert!(fit_fourier_to_poly(&q, 1e-3).is_err());
    }

    #[test]
    fn counterexample_matches_reference_values() {
        let c = counterexample_constants(MIN_QUAD_POINTS).unwrap();
        assert!((c.beta - 9.9263).abs() < 1e-3);
        assert!(sine_taylor9(c.beta / 2.0).abs() < 1e-10);
        assert!((c.beta1 - 0.1828).abs() < 1e-3 && (c.beta2 - 0.8172).abs() < 1e-3);
        assert!((c.beta1 + c.beta2 - 1.0).abs() < 1e-9);
        assert!((c.masses[0] - 0.0847).abs() < 1e-3 && (c.masses[1] + 0.2017).abs() < 1e-3);
        assert!((c.masses[2] + c.masses[1]).abs() < 1e-9 && (c.masses[3] + c.masses[0]).abs() < 1e-9);
        assert!((c.total_abs - 0.5727).abs() < 1e-3);
        assert!(c.masses.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn empty_exp_sum_is_total_abs() {
        let fit = exp_sum_best_fit(0, 10, 0).unwrap();
        assert!((fit.error - 0.5727).abs() < 1e-3);
        let one = exp_sum_best_fit(1, 4, 0).unwrap();
        assert!(one.error <= fit.error);
    }

    #[test]
    fn weighted_median_minimises() {
        let pairs = vec![(1.0, 1.0), (2.0, 1.0), (10.0, 3.0)];
        assert_eq!(weighted_median(pairs), 10.0);
        assert_eq!(weighted_median(vec![(1.0, 2.0), (5.0, 1.0)]), 1.0);
    }
}

//! Numerical normal-Poisson Stein solution: transition kernel, interpolation, solver,
//! generator residuals and smoothness probes.

use std::f64::consts::{E, FRAC_PI_2, PI};
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::log_plus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteinError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("error budget {budget:e} not met (reached {reached:e})")]
    BudgetExceeded { budget: f64, reached: f64 },
    #[error("{0} has no closed-form derivative smoothing")]
    Unsupported(String),
    #[error("identity check failed: {lhs} vs {rhs}")]
    IdentityViolated { lhs: f64, rhs: f64 },
}

/// Covariance of the normal part and means of the independent Poisson part.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalPoissonParams {
    sigma: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    // sigma = root * root^T
    #[serde(skip)]
    root: Vec<Vec<f64>>,
}

impl NormalPoissonParams {
    pub fn new(sigma: Vec<Vec<f64>>, lambda: Vec<f64>) -> Result<Self, SteinError> {
        let d = sigma.len();
        if sigma.iter().any(|row| row.len() != d) {
            return Err(SteinError::InvalidParams("covariance is not square".into()));
        }
        for i in 0..d {
            for j in 0..d {
                if (sigma[i][j] - sigma[j][i]).abs() > 1e-12 {
                    return Err(SteinError::InvalidParams("covariance is not symmetric".into()));
                }
            }
        }
        if let Some(l) = lambda.iter().find(|&&l| !(l > 0.0)) {
            return Err(SteinError::InvalidParams(format!("Poisson mean {l} is not positive")));
        }
        let mut root = vec![vec![0.0; d]; d];
        if d > 0 {
            let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| sigma[i][j]));
            if let Some(&ev) = eig.eigenvalues.iter().find(|&&ev| ev < -1e-10) {
                return Err(SteinError::InvalidParams(format!("covariance has eigenvalue {ev}")));
            }
            for i in 0..d {
                for k in 0..d {
                    root[i][k] = eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt();
                }
            }
        }
        Ok(Self { sigma, lambda, root })
    }

    pub fn sigma(&self) -> &[Vec<f64>] {
        &self.sigma
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn d(&self) -> usize {
        self.sigma.len()
    }

    pub fn r(&self) -> usize {
        self.lambda.len()
    }

    /// `a^T sigma a`.
    pub fn quadratic(&self, a: &[f64]) -> f64 {
        let mut q = 0.0;
        for (i, row) in self.sigma.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                q += a[i] * s * a[j];
            }
        }
        q
    }
}

/// A bounded test function on `R^d x Z_+^r`.
pub trait TestFunction: Sync {
    fn label(&self) -> String;
    fn value(&self, x: &[f64], y: &[u32]) -> f64;
    /// `E (d^partials h)(sqrt(1-s) x + sqrt(s) Z, z)`; `None` when derivatives are unavailable.
    fn smoothed(&self, x: &[f64], z: &[u32], s: f64, params: &NormalPoissonParams, partials: &[usize]) -> Option<f64>;
    /// `E h(Z, N)` in closed form, if known.
    fn expectation(&self, _params: &NormalPoissonParams) -> Option<f64> {
        None
    }
    /// `h(x, y) = 0` whenever `y != 0`.
    fn vanishes_off_origin(&self) -> bool {
        false
    }
    fn constant_in_x(&self) -> bool {
        false
    }
    fn constant_in_y(&self) -> bool {
        false
    }
}

/// The `y`-factor of a dictionary member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum YFactor {
    One,
    /// `1_{y = 0}`
    Origin,
    /// `exp(-c sum y)`, `c > 0`
    Exponential(f64),
    /// `prod_j cos(w y_j)`
    Cosine(f64),
}

impl YFactor {
    pub fn at(&self, y: &[u32]) -> f64 {
        match *self {
            YFactor::One => 1.0,
            YFactor::Origin => y.iter().all(|&v| v == 0) as u8 as f64,
            YFactor::Exponential(c) => (-c * y.iter().map(|&v| v as f64).sum::<f64>()).exp(),
            YFactor::Cosine(w) => y.iter().map(|&v| (w * v as f64).cos()).product(),
        }
    }

    /// Mean under independent Poisson coordinates.
    pub fn poisson_mean(&self, lambda: &[f64]) -> f64 {
        match *self {
            YFactor::One => 1.0,
            YFactor::Origin => (-lambda.iter().sum::<f64>()).exp(),
            YFactor::Exponential(c) => lambda.iter().map(|l| (-l * (1.0 - (-c).exp())).exp()).product(),
            YFactor::Cosine(w) => lambda.iter().map(|l| (-l * (1.0 - w.cos())).exp() * (l * w.sin()).cos()).product(),
        }
    }
}

/// `h(x, y) = sin(a.x + b) chi(y)` with `|a| <= 1`, so every x-partial up to order three is
/// bounded by one and the Gaussian smoothing is explicit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SineFunction {
    a: Vec<f64>,
    b: f64,
    chi: YFactor,
}

impl SineFunction {
    pub fn new(a: Vec<f64>, b: f64, chi: YFactor) -> Result<Self, SteinError> {
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1.0 + 1e-12 {
            return Err(SteinError::InvalidParams(format!("|a| = {norm} exceeds 1")));
        }
        if let YFactor::Exponential(c) = chi {
            if !(c > 0.0) {
                return Err(SteinError::InvalidParams("exponential rate must be positive".into()));
            }
        }
        Ok(Self { a, b, chi })
    }

    /// The same sine with the `y`-factor dropped.
    pub fn x_part(&self) -> SineFunction {
        SineFunction { a: self.a.clone(), b: self.b, chi: YFactor::One }
    }

    fn phase(&self, x: &[f64], scale: f64) -> f64 {
        scale * self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b
    }
}

impl TestFunction for SineFunction {
    fn label(&self) -> String {
        let a: Vec<String> = self.a.iter().map(|v| format!("{v:.3}")).collect();
        format!("sin([{}].x{:+.3})*{:?}", a.join(","), self.b, self.chi)
    }

    fn value(&self, x: &[f64], y: &[u32]) -> f64 {
        self.phase(x, 1.0).sin() * self.chi.at(y)
    }

    fn smoothed(&self, x: &[f64], z: &[u32], s: f64, params: &NormalPoissonParams, partials: &[usize]) -> Option<f64> {
        let coef: f64 = partials.iter().map(|&j| self.a[j]).product();
        let shift = partials.len() as f64 * FRAC_PI_2;
        let damp = (-s * params.quadratic(&self.a) / 2.0).exp();
        Some(coef * damp * (self.phase(x, (1.0 - s).max(0.0).sqrt()) + shift).sin() * self.chi.at(z))
    }

    fn expectation(&self, params: &NormalPoissonParams) -> Option<f64> {
        Some((-params.quadratic(&self.a) / 2.0).exp() * self.b.sin() * self.chi.poisson_mean(params.lambda()))
    }

    fn vanishes_off_origin(&self) -> bool {
        self.chi == YFactor::Origin
    }

    fn constant_in_x(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0)
    }

    fn constant_in_y(&self) -> bool {
        self.chi == YFactor::One || self.b.sin() == 0.0 && self.constant_in_x()
    }
}

/// A general test function; Gaussian smoothing by tensor Gauss-Hermite rules (d <= 2).
pub struct ClosureFunction<F> {
    f: F,
    name: String,
}

impl<F: Fn(&[f64], &[u32]) -> f64 + Sync> ClosureFunction<F> {
    pub fn new(name: &str, f: F) -> Self {
        Self { f, name: name.to_string() }
    }
}

impl<F: Fn(&[f64], &[u32]) -> f64 + Sync> TestFunction for ClosureFunction<F> {
    fn label(&self) -> String {
        self.name.clone()
    }

    fn value(&self, x: &[f64], y: &[u32]) -> f64 {
        (self.f)(x, y)
    }

    fn smoothed(&self, x: &[f64], z: &[u32], s: f64, params: &NormalPoissonParams, partials: &[usize]) -> Option<f64> {
        if !partials.is_empty() {
            return None;
        }
        let (rs, r1) = (s.max(0.0).sqrt(), (1.0 - s).max(0.0).sqrt());
        Some(gaussian_mean(params, |xi| {
            let pt: Vec<f64> = x.iter().zip(xi).map(|(x, g)| r1 * x + rs * g).collect();
            (self.f)(&pt, z)
        }))
    }
}

pub const HERMITE_NODES: usize = 64;

/// Probabilists' Gauss-Hermite rule: nodes and weights summing to one.
fn hermite_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = HERMITE_NODES;
        let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64).sqrt() } else { 0.0 });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> =
            (0..n).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    })
}

/// `E g(Z)` for `Z ~ N(0, sigma)`, `d <= 2`; `g` receives the sampled point.
pub fn gaussian_mean(params: &NormalPoissonParams, g: impl Fn(&[f64]) -> f64) -> f64 {
    let (nodes, weights) = hermite_rule();
    let d = params.d();
    let root = &params.root;
    match d {
        0 => g(&[]),
        1 => nodes.iter().zip(weights).map(|(t, w)| w * g(&[root[0][0] * t])).sum(),
        2 => {
            let mut total = 0.0;
            for (t1, w1) in nodes.iter().zip(weights) {
                for (t2, w2) in nodes.iter().zip(weights) {
                    let p = [root[0][0] * t1 + root[0][1] * t2, root[1][0] * t1 + root[1][1] * t2];
                    total += w1 * w2 * g(&p);
                }
            }
            total
        }
        _ => panic!("Gauss-Hermite fallback supports d <= 2"),
    }
}

pub fn poisson_pmf(mu: f64, k: u32) -> f64 {
    if mu == 0.0 {
        return (k == 0) as u8 as f64;
    }
    (1..=k).fold((-mu).exp(), |acc, i| acc * mu / i as f64)
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// One coordinate of the immigration-death kernel.
pub fn transition_1d(y: u32, z: u32, s: f64, lambda: f64) -> f64 {
    (0..=y.min(z))
        .map(|k| binomial(y, k) * (1.0 - s).powi(k as i32) * s.powi((y - k) as i32) * poisson_pmf(lambda * s, z - k))
        .sum()
}

/// `p_s(y, z)`.
pub fn transition(y: &[u32], z: &[u32], s: f64, lambda: &[f64]) -> f64 {
    y.iter().zip(z).zip(lambda).map(|((&y, &z), &l)| transition_1d(y, z, s, l)).product()
}

/// Truncation points `K_j` so that the dominating mass outside `prod [0, K_j]` is below `eps`.
pub fn truncation(y: &[u32], lambda: &[f64], eps: f64) -> Result<Vec<u32>, SteinError> {
    const CAP: u32 = 2000;
    // tail bound after K, given term t(K+1) and ratio bound
    let scan = |y: u32, l: f64, target: f64| -> Result<(u32, f64), SteinError> {
        let big = l.max(1.0);
        let mut term = big.powi(y as i32); // t(y) in the recurrence t(z+1) = t(z) big / (z+1-y)
        let mut total = (y + 1) as f64;
        let mut z = y;
        loop {
            let next = term * big / (z + 1 - y) as f64;
            let ratio = big / (z + 2 - y) as f64;
            if ratio < 1.0 && next / (1.0 - ratio) < target {
                return Ok((z, total + next / (1.0 - ratio)));
            }
            if z - y > CAP {
                return Err(SteinError::BudgetExceeded { budget: target, reached: next });
            }
            term = next;
            total += next;
            z += 1;
        }
    };
    let totals: Vec<f64> = y.iter().zip(lambda).map(|(&y, &l)| scan(y, l, 1e-300f64.max(1e-18)).map(|r| r.1)).collect::<Result<_, _>>()?;
    let r = y.len().max(1) as f64;
    y.iter()
        .zip(lambda)
        .enumerate()
        .map(|(j, (&y, &l))| {
            let others: f64 = totals.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, t)| t).product();
            scan(y, l, eps / (r * others)).map(|r| r.0)
        })
        .collect()
}

/// A value with an absolute error budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Dominating mass left out of the Poisson series.
    pub tail: f64,
    /// Absolute tolerance of the s-integral.
    pub quadrature: f64,
    pub max_panels: usize,
    /// Largest acceptable final quadrature error estimate.
    pub budget: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tail: 1e-9, quadrature: 1e-12, max_panels: 4000, budget: 1e-6 }
    }
}

/// `sum_z S_s(d^partials h)(x, z) p_s(y, z)` over a fixed box.
fn series(
    h: &dyn TestFunction,
    x: &[f64],
    y: &[u32],
    s: f64,
    params: &NormalPoissonParams,
    partials: &[usize],
    limits: &[u32],
) -> Result<f64, SteinError> {
    let lambda = params.lambda();
    let rows: Vec<Vec<f64>> = limits
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let row: Vec<f64> = (0..=k).map(|z| transition_1d(y[j], z, s, lambda[j])).collect();
            // renormalised so constants pass through exactly
            let mass: f64 = row.iter().sum();
            row.into_iter().map(|w| w / mass).collect()
        })
        .collect();
    let r = limits.len();
    let mut z = vec![0u32; r];
    let mut total = 0.0;
    loop {
        let w: f64 = (0..r).map(|j| rows[j][z[j] as usize]).product();
        if w != 0.0 {
            let v = h.smoothed(x, &z, s, params, partials).ok_or_else(|| SteinError::Unsupported(h.label()))?;
            total += w * v;
        }
        let mut j = 0;
        loop {
            if j == r {
                return Ok(total);
            }
            if z[j] < limits[j] {
                z[j] += 1;
                break;
            }
            z[j] = 0;
            j += 1;
        }
    }
}

/// `T_s h(x, y)` with its truncation budget.
pub fn interpolate(
    h: &dyn TestFunction,
    x: &[f64],
    y: &[u32],
    s: f64,
    params: &NormalPoissonParams,
) -> Result<Estimate, SteinError> {
    let cfg = SolverConfig::default();
    let limits = truncation(y, params.lambda(), cfg.tail)?;
    Ok(Estimate { value: series(h, x, y, s, params, &[], &limits)?, error: cfg.tail })
}

/// `E h(Z, N)`: closed form when available, else the `s = 1` series.
pub fn expectation(h: &dyn TestFunction, params: &NormalPoissonParams) -> Result<f64, SteinError> {
    if let Some(v) = h.expectation(params) {
        return Ok(v);
    }
    let zero_x = vec![0.0; params.d()];
    let zero_y = vec![0u32; params.r()];
    Ok(interpolate(h, &zero_x, &zero_y, 1.0, params)?.value)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn kronrod<F: FnMut(f64) -> Result<f64, SteinError>>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64), SteinError> {
    let (c, h) = ((a + b) / 2.0, (b - a) / 2.0);
    let centre = f(c)?;
    let mut k = GK_WEIGHTS[7] * centre;
    let mut g = G7_WEIGHTS[3] * centre;
    for i in 0..7 {
        let v = f(c - h * GK_NODES[i])? + f(c + h * GK_NODES[i])?;
        k += GK_WEIGHTS[i] * v;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * v;
        }
    }
    Ok((k * h, ((k - g) * h).abs()))
}

/// Globally adaptive Gauss-Kronrod (7/15) on `[a, b]`, splitting the worst panel.
pub fn integrate<F: FnMut(f64) -> Result<f64, SteinError>>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_panels: usize,
) -> Result<Estimate, SteinError> {
    let (v, e) = kronrod(&mut f, a, b)?;
    let mut panels = vec![(a, b, v, e)];
    loop {
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= tol || panels.len() >= max_panels {
            // sum small panels first for a stable total
            let mut vals: Vec<f64> = panels.iter().map(|p| p.2).collect();
            vals.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
            return Ok(Estimate { value: vals.iter().sum(), error: err });
        }
        let worst = (0..panels.len()).max_by(|&i, &j| panels[i].3.total_cmp(&panels[j].3)).unwrap();
        let (lo, hi, _, _) = panels.swap_remove(worst);
        let mid = (lo + hi) / 2.0;
        let (v1, e1) = kronrod(&mut f, lo, mid)?;
        let (v2, e2) = kronrod(&mut f, mid, hi)?;
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
}

/// `d^partials f_h(x, y)` with `f_h = -int_0^1 (T_s h - E h) / (2(1-s)) ds`.
///
/// With `s = 1 - u^2` the integral becomes `int_0^1 (T h - E h)(1 - u^2) / u du`. The constant
/// subtracted is the truncated series at `s = 1`, so the integrand vanishes at `u = 0` exactly.
pub fn solve_with(
    h: &dyn TestFunction,
    x: &[f64],
    y: &[u32],
    params: &NormalPoissonParams,
    partials: &[usize],
    cfg: &SolverConfig,
) -> Result<Estimate, SteinError> {
    let limits = truncation(y, params.lambda(), cfg.tail)?;
    let order = partials.len() as i32;
    let anchor = if order == 0 { series(h, x, y, 1.0, params, &[], &limits)? } else { 0.0 };
    let integrand = |u: f64| -> Result<f64, SteinError> {
        let s = 1.0 - u * u;
        let v = series(h, x, y, s, params, partials, &limits)?;
        Ok(if order == 0 { (v - anchor) / u } else { u.powi(order - 1) * v })
    };
    let est = integrate(integrand, 0.0, 1.0, cfg.quadrature, cfg.max_panels)?;
    if est.error > cfg.budget {
        return Err(SteinError::BudgetExceeded { budget: cfg.budget, reached: est.error });
    }
    Ok(Estimate { value: -est.value, error: est.error + cfg.tail })
}

/// `f_h(x, y)`.
pub fn solve(h: &dyn TestFunction, x: &[f64], y: &[u32], params: &NormalPoissonParams) -> Result<f64, SteinError> {
    Ok(solve_with(h, x, y, params, &[], &SolverConfig::default())?.value)
}

/// An x-partial of `f_h`: differentiated under the integral when the smoothing allows it,
/// central differences otherwise.
pub fn solve_partial(
    h: &dyn TestFunction,
    x: &[f64],
    y: &[u32],
    params: &NormalPoissonParams,
    partials: &[usize],
) -> Result<f64, SteinError> {
    let cfg = SolverConfig::default();
    match solve_with(h, x, y, params, partials, &cfg) {
        Ok(e) => Ok(e.value),
        Err(SteinError::Unsupported(_)) => finite_difference(&|p: &[f64]| solve(h, p, y, params), x, partials),
        Err(e) => Err(e),
    }
}

pub const FIRST_STEP: f64 = 1e-4;
pub const HIGHER_STEP: f64 = 1e-3;

/// Nested central differences; step `FIRST_STEP` for one partial, `HIGHER_STEP` otherwise.
pub fn finite_difference(
    f: &dyn Fn(&[f64]) -> Result<f64, SteinError>,
    x: &[f64],
    partials: &[usize],
) -> Result<f64, SteinError> {
    let step = if partials.len() <= 1 { FIRST_STEP } else { HIGHER_STEP };
    fn go(
        f: &dyn Fn(&[f64]) -> Result<f64, SteinError>,
        x: &mut Vec<f64>,
        partials: &[usize],
        step: f64,
    ) -> Result<f64, SteinError> {
        let Some((&j, rest)) = partials.split_first() else { return f(x) };
        let keep = x[j];
        x[j] = keep + step;
        let up = go(f, x, rest, step)?;
        x[j] = keep - step;
        let down = go(f, x, rest, step)?;
        x[j] = keep;
        Ok((up - down) / (2.0 * step))
    }
    let mut pt = x.to_vec();
    if partials.len() == 2 && partials[0] == partials[1] {
        // three-point second difference
        let j = partials[0];
        let mid = f(&pt)?;
        pt[j] += step;
        let up = f(&pt)?;
        pt[j] -= 2.0 * step;
        let down = f(&pt)?;
        return Ok((up - 2.0 * mid + down) / (step * step));
    }
    go(f, &mut pt, partials, step)
}

/// `(A f)(x, y)` for a function given on integer points; `f` is never asked for `y_j - 1` when `y_j = 0`.
pub fn generator(
    f: &dyn Fn(&[f64], &[u32]) -> Result<f64, SteinError>,
    x: &[f64],
    y: &[u32],
    params: &NormalPoissonParams,
) -> Result<f64, SteinError> {
    let here = f(x, y)?;
    let fx = |p: &[f64]| f(p, y);
    let mut total = 0.0;
    for j in 0..params.d() {
        for k in 0..params.d() {
            let s = params.sigma()[j][k];
            if s != 0.0 {
                total += s * finite_difference(&fx, x, &[j, k])?;
            }
        }
        if x[j] != 0.0 {
            total -= x[j] * finite_difference(&fx, x, &[j])?;
        }
    }
    let mut shifted = y.to_vec();
    for j in 0..params.r() {
        shifted[j] += 1;
        let up = f(x, &shifted)?;
        shifted[j] -= 1;
        let mut jump = params.lambda()[j] * (up - here);
        if y[j] > 0 {
            shifted[j] -= 1;
            let down = f(x, &shifted)?;
            shifted[j] += 1;
            jump += y[j] as f64 * (down - here);
        }
        total += 2.0 * jump;
    }
    Ok(total)
}

/// `|A f_h - (h - E h)|` at one point.
pub fn generator_residual(
    h: &dyn TestFunction,
    x: &[f64],
    y: &[u32],
    params: &NormalPoissonParams,
) -> Result<f64, SteinError> {
    let mean = expectation(h, params)?;
    let af = generator(&|p, q| solve(h, p, q, params), x, y, params)?;
    Ok((af - (h.value(x, y) - mean)).abs())
}

/// `|A f_h - (h - E h)|` for every member at every grid point, as `(h_id, point, residual)`.
pub fn residual_table(
    params: &NormalPoissonParams,
    dictionary: &[&dyn TestFunction],
    grid: &[(Vec<f64>, Vec<u32>)],
) -> Result<Vec<(usize, usize, f64)>, SteinError> {
    let jobs: Vec<(usize, usize)> = (0..dictionary.len()).flat_map(|h| (0..grid.len()).map(move |g| (h, g))).collect();
    jobs.par_iter()
        .map(|&(h, g)| Ok((h, g, generator_residual(dictionary[h], &grid[g].0, &grid[g].1, params)?)))
        .collect()
}

/// `sum_k |Po(l){k} - Po(l){k-1}|`, checked against `2 Po(l){floor l}`.
pub fn poisson_unimodal_tv(lambda: f64) -> Result<f64, SteinError> {
    if !(lambda > 0.0) {
        return Err(SteinError::InvalidParams(format!("lambda = {lambda}")));
    }
    let upper = (lambda + 40.0 * lambda.sqrt() + 60.0).ceil() as u32;
    let mut prev = 0.0;
    let mut terms = Vec::with_capacity(upper as usize + 1);
    let mut p = (-lambda).exp();
    for k in 0..=upper {
        if k > 0 {
            p *= lambda / k as f64;
        }
        terms.push((p - prev).abs());
        prev = p;
    }
    terms.sort_by(|a, b| a.total_cmp(b));
    let total: f64 = terms.iter().sum();
    let mode = 2.0 * poisson_pmf(lambda, lambda.floor() as u32);
    if (total - mode).abs() > 1e-12 {
        return Err(SteinError::IdentityViolated { lhs: total, rhs: mode });
    }
    Ok(total)
}

fn magic_half(l: f64) -> f64 {
    -(-l).exp_m1() / (2.0 * l)
}

/// Bounds on the solution's differences and derivatives.
pub mod limits {
    use super::*;

    pub fn first_difference(l: f64, improved: bool) -> f64 {
        if improved {
            0.5f64.min(magic_half(l))
        } else {
            1f64.min((2.0 / (E * l)).sqrt())
        }
    }

    pub fn second_difference_diagonal(l: f64, improved: bool) -> f64 {
        if improved {
            0.25f64.min(magic_half(l))
        } else {
            let el = E * l;
            1f64.min(8.0 / 3.0 / el.sqrt()).min((2.0 + 2.0 * log_plus(el)) / el)
        }
    }

    pub fn second_difference_mixed(lj: f64, lk: f64, improved: bool) -> f64 {
        if improved {
            0.25f64.min(magic_half(lj + lk))
        } else {
            let m = lj.min(lk);
            1f64.min(4.0 / 3.0 * (2.0 / (E * lj)).sqrt())
                .min(4.0 / 3.0 * (2.0 / (E * lk)).sqrt())
                .min((1.0 + log_plus(2.0 * E * m)) / (E * m))
        }
    }

    /// Any pair, from the smallest mean.
    pub fn second_difference_uniform(lambda: &[f64]) -> f64 {
        let m = lambda.iter().copied().fold(f64::INFINITY, f64::min);
        1f64.min((2.0 + 2.0 * log_plus(E * m)) / (E * m))
    }

    pub fn difference_of_gradient(l: f64, improved: bool) -> f64 {
        if improved {
            (1.0 / 3.0f64).min(magic_half(l))
        } else {
            (2.0 / 3.0f64).min(PI / (2.0 * 2f64.sqrt()) / (E * l).sqrt())
        }
    }

    pub fn difference_of_hessian(l: f64, improved: bool) -> f64 {
        if improved {
            0.25f64.min(magic_half(l))
        } else {
            0.5f64.min(4.0 / (3.0 * 2f64.sqrt()) / (E * l).sqrt())
        }
    }
}

/// One probed quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Probe {
    pub h_id: usize,
    pub x: Vec<f64>,
    pub y: Vec<u32>,
    pub quantity: String,
    pub measured: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub probes: Vec<Probe>,
    pub budget: f64,
}

impl ProbeReport {
    pub fn violations(&self) -> Vec<&Probe> {
        self.probes.iter().filter(|p| p.margin < -self.budget).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("h_id,x,y,quantity,measured,bound,margin\n");
        for p in &self.probes {
            let x: Vec<String> = p.x.iter().map(|v| v.to_string()).collect();
            let y: Vec<String> = p.y.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e}\n",
                p.h_id,
                x.join(";"),
                y.join(";"),
                p.quantity,
                p.measured,
                p.bound,
                p.margin
            ));
        }
        s
    }
}

pub const PROBE_BUDGET: f64 = 1e-3;

fn unit(y: &[u32], j: usize, by: u32) -> Vec<u32> {
    let mut v = y.to_vec();
    v[j] += by;
    v
}

/// All index tuples of a given length over `0..d`.
fn tuples(d: usize, len: usize) -> Vec<Vec<usize>> {
    (0..len).fold(vec![Vec::new()], |acc, _| {
        acc.into_iter().flat_map(|p| (0..d).map(move |j| [p.clone(), vec![j]].concat())).collect()
    })
}

fn probes_at(h_id: usize, h: &dyn TestFunction, x: &[f64], y: &[u32], params: &NormalPoissonParams) -> Result<Vec<Probe>, SteinError> {
    let (d, r) = (params.d(), params.r());
    let lambda = params.lambda();
    let improved = h.vanishes_off_origin();
    let flat_y = h.constant_in_y();
    let flat_x = h.constant_in_x();
    let f = |q: &[u32]| solve(h, x, q, params);
    let df = |q: &[u32], p: &[usize]| solve_partial(h, x, q, params, p);
    let mut out = Vec::new();
    let mut push = |quantity: String, measured: f64, bound: f64| {
        out.push(Probe { h_id, x: x.to_vec(), y: y.to_vec(), quantity, measured, bound, margin: bound - measured });
    };
    let y_bound = |b: f64| if flat_y { 0.0 } else { b };
    let x_bound = |b: f64| if flat_x { 0.0 } else { b };

    let here = f(y)?;
    let ups: Vec<f64> = (0..r).map(|j| f(&unit(y, j, 1))).collect::<Result<_, _>>()?;
    for j in 0..r {
        push(format!("diff_{j}"), (ups[j] - here).abs(), y_bound(limits::first_difference(lambda[j], improved)));
        for k in j..r {
            let both = f(&unit(&unit(y, j, 1), k, 1))?;
            let second = (both - ups[j] - ups[k] + here).abs();
            let b = if j == k {
                limits::second_difference_diagonal(lambda[j], improved)
            } else {
                limits::second_difference_mixed(lambda[j], lambda[k], improved)
            };
            push(format!("diff_{j}{k}"), second, y_bound(b));
            push(format!("diff_{j}{k}_uniform"), second, y_bound(limits::second_difference_uniform(lambda)));
        }
    }
    if d == 0 {
        return Ok(out);
    }
    let grad: Vec<f64> = (0..d).map(|j| df(y, &[j])).collect::<Result<_, _>>()?;
    push("lip".into(), grad.iter().map(|g| g * g).sum::<f64>().sqrt(), x_bound(1.0));
    let hess: Vec<f64> = tuples(d, 2).iter().map(|p| df(y, p)).collect::<Result<_, _>>()?;
    push("second".into(), hess.iter().fold(0.0f64, |m, v| m.max(v.abs())), x_bound(0.5));
    let third = tuples(d, 3).iter().map(|p| df(y, p)).collect::<Result<Vec<_>, _>>()?;
    push("third".into(), third.iter().fold(0.0f64, |m, v| m.max(v.abs())), x_bound(1.0 / 3.0));
    for l in 0..r {
        let y_up = unit(y, l, 1);
        for j in 0..d {
            let v = (df(&y_up, &[j])? - grad[j]).abs();
            push(format!("diff_{l}_grad_{j}"), v, y_bound(x_bound(limits::difference_of_gradient(lambda[l], improved))));
        }
        for (i, p) in tuples(d, 2).iter().enumerate() {
            let v = (df(&y_up, p)? - hess[i]).abs();
            push(
                format!("diff_{l}_hess_{}{}", p[0], p[1]),
                v,
                y_bound(x_bound(limits::difference_of_hessian(lambda[l], improved))),
            );
        }
    }
    Ok(out)
}

/// Probes every dictionary member at every grid point; parallel over members and points.
pub fn smoothness_probe(
    params: &NormalPoissonParams,
    dictionary: &[&dyn TestFunction],
    grid: &[(Vec<f64>, Vec<u32>)],
) -> Result<ProbeReport, SteinError> {
    let jobs: Vec<(usize, usize)> = (0..dictionary.len()).flat_map(|h| (0..grid.len()).map(move |g| (h, g))).collect();
    let parts: Vec<Vec<Probe>> = jobs
        .par_iter()
        .map(|&(h, g)| probes_at(h, dictionary[h], &grid[g].0, &grid[g].1, params))
        .collect::<Result<_, _>>()?;
    Ok(ProbeReport { probes: parts.concat(), budget: PROBE_BUDGET })
}

fn direction(d: usize, angle: f64, scale: f64) -> Vec<f64> {
    match d {
        0 => Vec::new(),
        1 => vec![scale * if angle.cos() >= 0.0 { 1.0 } else { -1.0 }],
        _ => {
            let mut v = vec![0.0; d];
            v[0] = scale * angle.cos();
            v[1] = scale * angle.sin();
            v
        }
    }
}

/// A fixed dictionary of `size` members for dimensions `d`, `r`: constants, x-only, y-only,
/// origin-indicator, exponential and cosine y-factors, cycling with varied frequencies.
pub fn dictionary(d: usize, size: usize) -> Vec<SineFunction> {
    let templates: [(f64, f64, f64, YFactor); 12] = [
        (0.0, 0.0, FRAC_PI_2, YFactor::One),
        (0.0, 1.0, 0.0, YFactor::One),
        (PI / 4.0, 0.8, FRAC_PI_2, YFactor::One),
        (PI / 3.0, 0.6, 0.3, YFactor::Origin),
        (0.0, 0.0, FRAC_PI_2, YFactor::Origin),
        (2.0 * PI / 3.0, 0.9, 1.0, YFactor::Exponential(0.7)),
        (0.0, 0.0, FRAC_PI_2, YFactor::Exponential(1.5)),
        (PI / 6.0, 0.5, -0.4, YFactor::Cosine(1.3)),
        (FRAC_PI_2, 1.0, FRAC_PI_2, YFactor::Origin),
        (5.0 * PI / 6.0, 0.7, 2.0, YFactor::Cosine(0.5)),
        (PI / 8.0, 1.0, PI / 4.0, YFactor::Exponential(0.3)),
        (-PI / 5.0, 0.95, -1.2, YFactor::One),
    ];
    (0..size)
        .map(|i| {
            let (angle, scale, b, chi) = templates[i % 12];
            let round = (i / 12) as f64;
            let chi = match chi {
                YFactor::Exponential(c) => YFactor::Exponential(c * (1.0 + round)),
                YFactor::Cosine(w) => YFactor::Cosine(w + 0.37 * round),
                other => other,
            };
            SineFunction::new(direction(d, angle + 0.61 * round, scale), b + 0.29 * round, chi).expect("templates satisfy |a| <= 1")
        })
        .collect()
}

/// The nine probe points: three x values times three y values.
pub fn probe_grid(d: usize, r: usize) -> Vec<(Vec<f64>, Vec<u32>)> {
    let xs: Vec<Vec<f64>> = match d {
        1 => vec![vec![-1.0], vec![0.0], vec![1.0]],
        _ => vec![vec![-1.0, 0.5], vec![0.0, 0.0], vec![1.0, -0.5]],
    };
    let ys: Vec<Vec<u32>> = match r {
        1 => vec![vec![0], vec![1], vec![2]],
        _ => vec![vec![0, 0], vec![1, 0], vec![0, 2]],
    };
    xs.iter().flat_map(|x| ys.iter().map(move |y| (x.clone(), y.clone()))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_d() -> NormalPoissonParams {
        NormalPoissonParams::new(vec![vec![1.0]], vec![1.0]).unwrap()
    }

    fn two_d() -> NormalPoissonParams {
        NormalPoissonParams::new(vec![vec![1.0, 0.3], vec![0.3, 0.5]], vec![0.5, 2.0]).unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert!(NormalPoissonParams::new(vec![vec![1.0, 2.0], vec![2.0, 1.0]], vec![1.0]).is_err());
        assert!(NormalPoissonParams::new(vec![vec![1.0, 0.1], vec![0.2, 1.0]], vec![1.0]).is_err());
        assert!(NormalPoissonParams::new(vec![vec![1.0]], vec![0.0]).is_err());
        assert!(NormalPoissonParams::new(vec![vec![0.0]], vec![1.0]).is_ok());
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(transition(&[2, 1], &[2, 1], 0.0, &[1.0, 2.0]), 1.0);
        assert_eq!(transition(&[2, 1], &[1, 1], 0.0, &[1.0, 2.0]), 0.0);
        for k in 0..6 {
            let po = poisson_pmf(1.3, k);
            assert!((transition(&[3], &[k], 1.0, &[1.3]) - po).abs() < 1e-15);
        }
        assert!((transition(&[1], &[0], 0.5, &[1.0]) - 0.5 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_normalization() {
        let lambda = [0.7, 2.5];
        for y in [[0u32, 0], [1, 0], [2, 2], [0, 4], [3, 1]] {
            for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let limits = truncation(&y, &lambda, 1e-14).unwrap();
                let mut total = 0.0;
                for a in 0..=limits[0] {
                    for b in 0..=limits[1] {
                        total += transition(&y, &[a, b], s, &lambda);
                    }
                }
                assert!((total - 1.0).abs() < 1e-10, "{y:?} {s}: {total}");
            }
        }
    }

    #[test]
    fn backward_equation() {
        let lambda = [0.8, 1.7];
        let step = 1e-4;
        for y in [[0u32, 0], [1, 2], [3, 0]] {
            for z in [[0u32, 0], [1, 1], [2, 3]] {
                for s in [0.2, 0.5, 0.8] {
                    let lhs = (transition(&y, &z, s + step, &lambda) - transition(&y, &z, s - step, &lambda)) / (2.0 * step);
                    let here = transition(&y, &z, s, &lambda);
                    let mut rhs = 0.0;
                    for j in 0..2 {
                        let mut up = y;
                        up[j] += 1;
                        rhs += lambda[j] * (transition(&up, &z, s, &lambda) - here);
                        if y[j] > 0 {
                            let mut down = y;
                            down[j] -= 1;
                            rhs += y[j] as f64 * (transition(&down, &z, s, &lambda) - here);
                        }
                    }
                    assert!((lhs - rhs / (1.0 - s)).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn interpolation_endpoints() {
        let p = two_d();
        let h = SineFunction::new(vec![0.6, -0.7], 0.4, YFactor::Origin).unwrap();
        let (x, y) = ([0.3, -1.2], [0u32, 0]);
        assert!((interpolate(&h, &x, &y, 0.0, &p).unwrap().value - h.value(&x, &y)).abs() < 1e-8);
        let closed = (-p.quadratic(&[0.6, -0.7]) / 2.0).exp() * 0.4f64.sin() * (-2.5f64).exp();
        for (x, y) in [([0.3, -1.2], [0u32, 0]), ([2.0, 1.0], [3, 1])] {
            assert!((interpolate(&h, &x, &y, 1.0, &p).unwrap().value - closed).abs() < 1e-6);
        }
        assert!((expectation(&h, &p).unwrap() - closed).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_match_quadrature() {
        let p = two_d();
        for member in dictionary(2, 12) {
            let generic = ClosureFunction::new("copy", |x: &[f64], y: &[u32]| member.value(x, y));
            let a = expectation(&member, &p).unwrap();
            let b = expectation(&generic, &p).unwrap();
            assert!((a - b).abs() < 1e-8, "{}: {a} vs {b}", member.label());
            let x = [0.4, -0.3];
            let s1 = member.smoothed(&x, &[1, 0], 0.35, &p, &[]).unwrap();
            let s2 = generic.smoothed(&x, &[1, 0], 0.35, &p, &[]).unwrap();
            assert!((s1 - s2).abs() < 1e-10);
        }
    }

    #[test]
    fn solver_special_cases() {
        let p = one_d();
        let constant = SineFunction::new(vec![0.0], FRAC_PI_2, YFactor::One).unwrap();
        assert!(solve(&constant, &[0.4], &[1], &p).unwrap().abs() < 1e-12);
        // x-only: no y dependence
        let xonly = SineFunction::new(vec![0.9], 0.2, YFactor::One).unwrap();
        let f0 = solve(&xonly, &[0.4], &[0], &p).unwrap();
        let f1 = solve(&xonly, &[0.4], &[1], &p).unwrap();
        assert!((f1 - f0).abs() < 1e-4);
        // y-only: flat in x
        let yonly = SineFunction::new(vec![0.0], FRAC_PI_2, YFactor::Exponential(0.8)).unwrap();
        let g = finite_difference(&|x: &[f64]| solve(&yonly, x, &[1], &p), &[0.3], &[0]).unwrap();
        assert!(g.abs() < 1e-6);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let p = two_d();
        let h = SineFunction::new(vec![0.5, 0.8], -0.3, YFactor::Cosine(0.9)).unwrap();
        let (x, y) = ([0.2, -0.4], [1u32, 0]);
        for partials in [vec![0], vec![1], vec![0, 1], vec![1, 1]] {
            let exact = solve_partial(&h, &x, &y, &p, &partials).unwrap();
            let fd = finite_difference(&|q: &[f64]| solve(&h, q, &y, &p), &x, &partials).unwrap();
            assert!((exact - fd).abs() < 1e-5, "{partials:?}: {exact} vs {fd}");
        }
    }

    #[test]
    fn residual_small_one_dimensional() {
        let p = one_d();
        for h in dictionary(1, 12) {
            for (x, y) in probe_grid(1, 1) {
                let r = generator_residual(&h, &x, &y, &p).unwrap();
                assert!(r <= 5e-3, "{} at {x:?},{y:?}: {r}", h.label());
            }
        }
    }

    #[test]
    fn negative_index_convention() {
        let p = one_d();
        let base = |x: &[f64], y: &[u32]| Ok(x[0] * 0.1 + y[0] as f64);
        let a = generator(&base, &[0.5], &[0], &p).unwrap();
        // any value for y - 1 is never requested at y = 0
        let b = generator(&|x: &[f64], y: &[u32]| base(x, y), &[0.5], &[0], &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unimodality_examples() {
        assert!((poisson_unimodal_tv(1.0).unwrap() - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((poisson_unimodal_tv(0.5).unwrap() - 2.0 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((poisson_unimodal_tv(2.3).unwrap() - (-2.3f64).exp() * 2.3 * 2.3).abs() < 1e-12);
    }

    #[test]
    fn uniform_bound_value() {
        let b = limits::second_difference_uniform(&[4.0, 4.0]);
        assert!((b - (2.0 + 2.0 * (4.0 * E).ln()) / (4.0 * E)).abs() < 1e-15);
        assert!((b - 0.622874).abs() < 1e-6);
    }

    #[test]
    fn probe_report_csv() {
        let p = one_d();
        let members = dictionary(1, 3);
        let refs: Vec<&dyn TestFunction> = members.iter().map(|m| m as &dyn TestFunction).collect();
        let report = smoothness_probe(&p, &refs, &probe_grid(1, 1)[..2]).unwrap();
        assert!(report.violations().is_empty());
        assert!(report.to_csv().starts_with("h_id,x,y,quantity,measured,bound,margin\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn kernel_sums_to_one(y in 0u32..5, s in 0.0f64..=1.0, l in 0.05f64..6.0) {
            let k = truncation(&[y], &[l], 1e-13).unwrap()[0];
            let total: f64 = (0..=k).map(|z| transition_1d(y, z, s, l)).sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }

        #[test]
        fn dictionary_members_are_bounded(i in 0usize..40, x in -5.0f64..5.0, y in 0u32..6) {
            let h = &dictionary(1, 40)[i];
            prop_assert!(h.value(&[x], &[y]).abs() <= 1.0);
        }
    }
}

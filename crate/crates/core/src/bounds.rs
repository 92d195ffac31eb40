//! Closed-form covariances, Poisson means, error budgets and the approximation bounds.

use std::f64::consts::{E, PI};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::combinatorics::{class_counts, double_falling, falling, recip, DegreeSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("needs N > {needed}, got N = {total}")]
    NeedsLargerN { needed: u32, total: u32 },
    #[error("needs n ∧ N > 15, got {0}")]
    SmallModel(u32),
    #[error("Poisson means must be strictly positive, got {0}")]
    NonpositiveLambda(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// A bound value or the hypothesis that failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Outcome {
    Value(f64),
    PreconditionFailed(String),
}

impl Outcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            Outcome::Value(v) => Some(*v),
            Outcome::PreconditionFailed(_) => None,
        }
    }

    fn json_pair(&self) -> (Value, Value) {
        match self {
            Outcome::Value(v) => (json!(v), json!("ok")),
            Outcome::PreconditionFailed(why) => (Value::Null, json!(format!("precondition failed: {why}"))),
        }
    }
}

fn q(a: i128) -> BigRational {
    BigRational::from_integer(BigInt::from(a))
}

fn f(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `max(log x, 0)`, with 0 at 0.
pub fn log_plus(x: f64) -> f64 {
    if x > 1.0 {
        x.ln()
    } else {
        0.0
    }
}

/// `(1 - e^{-x}) / x`, continuous at 0.
fn magic(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentParameters {
    pub lambda_s: f64,
    pub lambda_m: f64,
    pub nu: Option<f64>,
    pub mu3: Option<f64>,
    pub mu4: Option<f64>,
}

pub fn lambda_exact(ds: &DegreeSequence) -> (BigRational, BigRational) {
    let n = ds.total() as i64;
    let s = q(ds.falling_moment(2)) * recip(2 * double_falling(n - 1, 1));
    let m = q(ds.pair_moment()) * recip(2 * double_falling(n - 1, 2));
    (s, m)
}

/// Poisson means always; the higher moments only when `N > 7`.
pub fn moment_parameters(ds: &DegreeSequence) -> MomentParameters {
    let (s, m) = lambda_exact(ds);
    let n = ds.total() as f64;
    let scaled = |r: u32| (ds.total() > 7).then(|| ds.falling_moment(r) as f64 / (n - 7.0));
    MomentParameters { lambda_s: f(&s), lambda_m: f(&m), nu: scaled(2), mu3: scaled(3), mu4: scaled(4) }
}

/// Covariance of the scaled isolated-edge and isolated-2-star counts, exactly.
///
/// A term contributes only when its cardinality factor is positive.
pub fn covariance_exact(ds: &DegreeSequence) -> [[BigRational; 2]; 2] {
    let n1 = ds.count_of_degree(1) as i64;
    let n2 = ds.count_of_degree(2) as i64;
    let tot = ds.total() as i64;
    let d = |r: u32| double_falling(tot - 1, r);
    let n1f = |r| falling(n1, r);
    let n2f = |r| falling(n2, r);
    let term = |card: i128, value: &dyn Fn() -> BigRational| if card > 0 { q(card) * value() } else { BigRational::zero() };
    let one = || q(1);

    let s11 = term(n1f(2), &|| recip(2 * d(1)) * (one() - recip(d(1))))
        - term(n1f(3), &|| recip(d(1) * d(1)))
        + term(n1f(4), &|| recip(4 * d(2)) * q(2) * recip(d(1)));
    let s12 = -term(2 * n1f(3) * n2 as i128 + n1f(2) * n2 as i128, &|| recip(d(1) * d(2)))
        + term(n1f(4) * n2 as i128, &|| recip(2 * d(3)) * q(4) * recip(d(1)));
    let touching = 4 * n1f(3) * n2f(2) + n1f(4) * n2 as i128 + 2 * n1f(2) * n2f(2) + 4 * n1f(3) * n2 as i128 + n1f(2) * n2 as i128;
    let s22 = term(n1f(2) * n2 as i128, &|| recip(d(2)) * (one() - recip(d(2))))
        - term(touching, &|| recip(d(2) * d(2)))
        + term(n1f(4) * n2f(2), &|| recip(d(4)) * q(8 * (tot as i128 - 4)) * recip(d(2)));
    let n = q(ds.n() as i128);
    let s11 = s11 / &n;
    let s12 = s12 / &n;
    let s22 = s22 / &n;
    [[s11, s12.clone()], [s12, s22]]
}

pub fn covariance(ds: &DegreeSequence) -> [[f64; 2]; 2] {
    let c = covariance_exact(ds);
    [[f(&c[0][0]), f(&c[0][1])], [f(&c[1][0]), f(&c[1][1])]]
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn eigenvalues_2x2(m: &[[f64; 2]; 2]) -> [f64; 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
    [tr / 2.0 - disc, tr / 2.0 + disc]
}

fn needs(ds: &DegreeSequence, needed: u32) -> Result<(), BoundError> {
    if ds.total() > needed {
        Ok(())
    } else {
        Err(BoundError::NeedsLargerN { needed, total: ds.total() })
    }
}

/// The error budget for the loop and multi-edge Poisson part.
pub fn delta_simple(ds: &DegreeSequence) -> Result<f64, BoundError> {
    needs(ds, 7)?;
    let p = moment_parameters(ds);
    let (nu, mu3) = (p.nu.unwrap(), p.mu3.unwrap());
    let n = ds.total() as f64;
    let first = 7.0 * nu.powi(4) + mu3 * mu3 + 4.0 * mu3 * nu * nu + 8.0 * nu.powi(3) + 4.0 * mu3 * nu + 2.0 * mu3
        + 4.0 * nu * nu
        + 2.0 * p.lambda_s;
    let second = 6.0 * mu3 * mu3 + 8.0 * mu3 * nu + nu * nu + 4.0 * p.lambda_m;
    Ok(first / (2.0 * (n - 1.0)) + second / (4.0 * (n - 1.0) * (n - 3.0)))
}

/// The four-radical constant of the first moment bound.
pub fn radical_constant(c: f64) -> f64 {
    let c2 = c * c;
    let c3 = c2 * c;
    let c4 = c2 * c2;
    let c5 = c4 * c;
    let c6 = c3 * c3;
    let c7 = c6 * c;
    let c8 = c4 * c4;
    let c10 = c8 * c2;
    (3.0 * (0.5 + 1.5 * c2 + 4.0 * c3 + 3.5 * c4 + 2.0 * c6)).sqrt()
        + (2.0 * (2.0 * c3 + 5.0 * c4 + 68.0 * c5 + 72.0 * c6 + 72.0 * c8)).sqrt()
        + (2.0 * (2.0 * c3 + 8.0 * c4 + 4.0 * c5 + 56.0 * c6 + 72.0 * c8)).sqrt()
        + (3.0 * (c + 24.0 * c4 + 64.0 * c5 + 328.0 * c6 + 256.0 * c7 + 872.0 * c8 + 2048.0 * c10)).sqrt()
}

/// `(C(c), C'(c, lambda_s, lambda_m))`.
pub fn constants(c: f64, lambda_s: f64, lambda_m: f64) -> (f64, f64) {
    let big_c = c / 2.0 * radical_constant(c) + 4.0 / 3.0 * c * c + 6.0 * c.powi(3);
    (big_c, cross_constant(c, lambda_s, lambda_m))
}

fn cross_constant(c: f64, lambda_s: f64, lambda_m: f64) -> f64 {
    let (c2, c3) = (c * c, c * c * c);
    (c2 + 6.0 * c3) * lambda_s + (2.0 * c2 + 8.0 * c3) * lambda_m + c3
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub n: usize,
    pub total: u32,
    pub n0: u32,
    pub n1: u32,
    pub n2: u32,
    pub sigma: [[f64; 2]; 2],
    pub moments: MomentParameters,
    pub delta_simple: Outcome,
    pub c_star: Outcome,
    pub big_c: Outcome,
    pub c_prime: Outcome,
    pub l_n: Outcome,
    pub bound_a: Outcome,
    pub bound_b: Outcome,
    pub bound_c: Outcome,
    pub bound_c2: Outcome,
}

impl TheoryReport {
    /// Flat JSON; optional values become `null` with a sibling `*_status` field.
    pub fn to_json(&self) -> Value {
        let mut o = Map::new();
        o.insert("n".into(), json!(self.n));
        o.insert("N".into(), json!(self.total));
        o.insert("n0".into(), json!(self.n0));
        o.insert("n1".into(), json!(self.n1));
        o.insert("n2".into(), json!(self.n2));
        o.insert("sigma11".into(), json!(self.sigma[0][0]));
        o.insert("sigma12".into(), json!(self.sigma[0][1]));
        o.insert("sigma21".into(), json!(self.sigma[1][0]));
        o.insert("sigma22".into(), json!(self.sigma[1][1]));
        o.insert("lambda_s".into(), json!(self.moments.lambda_s));
        o.insert("lambda_m".into(), json!(self.moments.lambda_m));
        o.insert("nu".into(), json!(self.moments.nu));
        o.insert("mu3".into(), json!(self.moments.mu3));
        o.insert("mu4".into(), json!(self.moments.mu4));
        for (name, outcome) in [
            ("delta_simple", &self.delta_simple),
            ("c_star", &self.c_star),
            ("big_c", &self.big_c),
            ("c_prime", &self.c_prime),
            ("l_n", &self.l_n),
            ("bound_a", &self.bound_a),
            ("bound_b", &self.bound_b),
            ("bound_c", &self.bound_c),
            ("bound_c2", &self.bound_c2),
        ] {
            let (v, status) = outcome.json_pair();
            o.insert(name.into(), v);
            o.insert(format!("{name}_status"), status);
        }
        Value::Object(o)
    }
}

/// Hypotheses shared by the joint and conditional bounds; `Err` names the first failure.
fn joint_hypotheses(ds: &DegreeSequence) -> Result<f64, String> {
    let small = (ds.n() as u32).min(ds.total());
    let (n0, n1) = (ds.count_of_degree(0), ds.count_of_degree(1));
    if small <= 15 {
        return Err(format!("n ∧ N = {small} must exceed 15"));
    }
    if n1 < 1 {
        return Err("needs at least one vertex of degree 1".into());
    }
    if n0 + n1 > ds.n() as u32 - 2 {
        return Err(format!("n0 + n1 = {} must be at most n - 2 = {}", n0 + n1, ds.n() - 2));
    }
    Ok(small as f64)
}

fn joint_expression(small: f64, n: usize, big_c: f64, c_prime: f64, lambda_min: f64, delta: f64) -> f64 {
    let el = E * lambda_min;
    let (f1, f2) = if el > 0.0 {
        (2f64.min(3.0 * PI / (2.0 * 2f64.sqrt()) / el.sqrt()), 2f64.min((4.0 + 4.0 * log_plus(el)) / el))
    } else {
        (2.0, 2.0)
    };
    big_c / (small - 1.0).sqrt() + f1 * c_prime / (n as f64).sqrt() + f2 * delta
}

/// The joint bound's expression evaluated without the `n1 >= 1` and `n0 + n1 <= n - 2`
/// hypotheses; only `n ∧ N > 15` and `N > 7` are needed for it to be finite.
pub fn joint_expression_unchecked(ds: &DegreeSequence) -> Result<f64, BoundError> {
    let small = (ds.n() as u32).min(ds.total());
    if small <= 15 {
        return Err(BoundError::SmallModel(small));
    }
    let m = moment_parameters(ds);
    let top = ds.count_of_degree(1).max(ds.count_of_degree(2)) as f64;
    let (big_c, c_prime) = constants(top / (small as f64 - 15.0), m.lambda_s, m.lambda_m);
    let delta = delta_simple(ds)?;
    Ok(joint_expression(small as f64, ds.n(), big_c, c_prime, m.lambda_s.min(m.lambda_m), delta))
}

/// All constants and bounds, with `c*` at its smallest admissible value.
pub fn theorem_bounds(ds: &DegreeSequence) -> TheoryReport {
    let m = moment_parameters(ds);
    let n1 = ds.count_of_degree(1);
    let n2 = ds.count_of_degree(2);
    let small = (ds.n() as u32).min(ds.total()) as f64;
    let fail = |s: String| Outcome::PreconditionFailed(s);
    let delta = delta_simple(ds).map(Outcome::Value).unwrap_or_else(|e| fail(e.to_string()));
    let lam = m.lambda_s + m.lambda_m;
    let lmin = m.lambda_s.min(m.lambda_m);
    let c_star = if small > 15.0 {
        Outcome::Value(n1.max(n2) as f64 / (small - 15.0))
    } else {
        fail(format!("n ∧ N = {small} must exceed 15"))
    };
    let (big_c, c_prime) = match c_star.value() {
        Some(c) => {
            let (a, b) = constants(c, m.lambda_s, m.lambda_m);
            (Outcome::Value(a), Outcome::Value(b))
        }
        None => (c_star.clone(), c_star.clone()),
    };
    let bound_b = match delta.value() {
        Some(d) => Outcome::Value(0.5f64.min(magic(lam)) * d),
        None => delta.clone(),
    };
    let l_n = match delta.value() {
        Some(d) => Outcome::Value((-lam).exp() - 0.5f64.min(magic(lam)) * d),
        None => delta.clone(),
    };
    let root_n = (ds.n() as f64).sqrt();
    let joint = joint_hypotheses(ds).and_then(|small| {
        let d = delta.value().ok_or("needs N > 7")?;
        Ok((small, d, big_c.value().unwrap(), c_prime.value().unwrap()))
    });
    let bound_a = match &joint {
        Ok((small, d, bc, cp)) => Outcome::Value(joint_expression(*small, ds.n(), *bc, *cp, lmin, *d)),
        Err(why) => fail(why.clone()),
    };
    let conditional = |with_poisson: bool| match (&joint, l_n.value()) {
        (Err(why), _) => fail(why.clone()),
        (Ok(_), Some(l)) if l <= 0.0 => fail(format!("L_n = {l} is not positive")),
        (Ok((small, d, bc, cp)), Some(l)) => {
            let mut inner = bc / (small - 1.0).sqrt();
            if with_poisson {
                inner += 1f64.min(1.5 * magic(lam)) * cp / root_n + 1f64.min(2.0 * magic(lam)) * d;
            } else {
                inner += cp / root_n;
            }
            Outcome::Value(inner / l)
        }
        (Ok(_), None) => l_n.clone(),
    };
    TheoryReport {
        n: ds.n(),
        total: ds.total(),
        n0: ds.count_of_degree(0),
        n1,
        n2,
        sigma: covariance(ds),
        moments: m,
        delta_simple: delta,
        c_star,
        big_c,
        c_prime,
        l_n: l_n.clone(),
        bound_a,
        bound_b,
        bound_c: conditional(true),
        bound_c2: conditional(false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropositionRhs {
    pub tree_variance: Outcome,
    pub tree_triple: Outcome,
    pub tree_to_cycle: Outcome,
    pub cycle_to_tree: Outcome,
    pub cycle_pairs: Outcome,
}

/// Right-hand sides of the five moment bounds, each at its smallest admissible constant.
pub fn proposition_rhs(ds: &DegreeSequence) -> PropositionRhs {
    let total = ds.total() as f64;
    let top = ds.count_of_degree(1).max(ds.count_of_degree(2)) as f64;
    let m = moment_parameters(ds);
    let fail = |s: &str| Outcome::PreconditionFailed(s.to_string());
    let tree_variance = if ds.total() <= 15 {
        fail("needs N > 15")
    } else if ds.count_of_degree(1) < 1 {
        fail("needs n1 >= 1")
    } else {
        Outcome::Value(radical_constant(top / (total - 15.0)) * top / (total - 1.0).sqrt())
    };
    let tree_triple = if ds.total() > 3 {
        let c = top / (total - 3.0);
        Outcome::Value((8.0 * c + 36.0 * c * c) * top)
    } else {
        fail("needs N > 3")
    };
    let cross = if ds.total() > 7 {
        Outcome::Value(cross_constant(top / (total - 7.0), m.lambda_s, m.lambda_m))
    } else {
        fail("needs N > 7")
    };
    let cycle_pairs = delta_simple(ds).map(Outcome::Value).unwrap_or_else(|e| Outcome::PreconditionFailed(e.to_string()));
    PropositionRhs { tree_variance, tree_triple, tree_to_cycle: cross.clone(), cycle_to_tree: cross, cycle_pairs }
}

/// `(1/2) sum |sigma - sigma'| + 2 sum |lambda - lambda'|` between two normal-Poisson laws.
pub fn comparison_bound(
    sigma: &[Vec<f64>],
    lambda: &[f64],
    sigma2: &[Vec<f64>],
    lambda2: &[f64],
) -> Result<f64, BoundError> {
    if sigma.len() != sigma2.len() || lambda.len() != lambda2.len() {
        return Err(BoundError::Dimension("parameter shapes differ".into()));
    }
    if let Some(&bad) = lambda.iter().chain(lambda2).find(|&&l| !(l > 0.0)) {
        return Err(BoundError::NonpositiveLambda(bad));
    }
    let mut s = 0.0;
    for (r, r2) in sigma.iter().zip(sigma2) {
        if r.len() != r2.len() {
            return Err(BoundError::Dimension("covariance rows differ".into()));
        }
        s += r.iter().zip(r2).map(|(a, b)| (a - b).abs()).sum::<f64>();
    }
    let l: f64 = lambda.iter().zip(lambda2).map(|(a, b)| (a - b).abs()).sum();
    Ok(0.5 * s + 2.0 * l)
}

/// Limit covariance in terms of the degree law: `pmf[k] = P(D = k)` and mean `mu`.
pub fn asymptotic_sigma(pmf: &[f64], mu: f64) -> [[f64; 2]; 2] {
    let p1 = pmf.get(1).copied().unwrap_or(0.0);
    let p2 = pmf.get(2).copied().unwrap_or(0.0);
    if p1 <= 0.0 || mu <= 0.0 {
        return [[0.0; 2]; 2];
    }
    let s11 = p1 * p1 / mu / 2.0 - p1.powi(3) / mu.powi(2) + p1.powi(4) / mu.powi(3) / 2.0;
    let s12 = -2.0 * p1.powi(3) * p2 / mu.powi(3) + 2.0 * p1.powi(4) * p2 / mu.powi(4);
    let s22 = p1 * p1 * p2 / mu.powi(2) - 4.0 * p1.powi(3) * p2 * p2 / mu.powi(4) - p1.powi(4) * p2 / mu.powi(4)
        + 8.0 * p1.powi(4) * p2 * p2 / mu.powi(5);
    [[s11, s12], [s12, s22]]
}

/// `lambda_s` and `lambda_m` via class sizes times success probabilities.
pub fn lambda_via_counts(ds: &DegreeSequence) -> (BigRational, BigRational) {
    let c = class_counts(ds);
    let n = ds.total() as i64;
    let to_q = |x: u128| BigRational::from_integer(BigInt::from(x));
    (to_q(c.selfloop) * recip(double_falling(n - 1, 1)), to_q(c.doubleedge) * recip(double_falling(n - 1, 2)))
}

//! Phi-divergences and the two families of test statistics built on them.
//!
//! For fitted vectors `p_hat` (homogeneity) and `p_tilde` (likelihood-ratio
//! order) and the relative frequencies `p_bar`:
//!
//! * `T = 2n / phi''(1) * [d(p_bar, p_hat) - d(p_bar, p_tilde)]`
//! * `S = 2n / phi''(1) * d(p_tilde, p_hat)`

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this distance from 0 or -1 the power divergence switches to its
/// Kullback-Leibler limit.
pub const LIMIT_SWITCH: f64 = 1e-8;

const SUM_TOL: f64 = 1e-9;

/// A power-divergence index, remembering an exact rational spelling such as
/// `2/3` when it was parsed from one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambda {
    value: f64,
    ratio: Option<(i64, i64)>,
}

impl Lambda {
    pub fn new(value: f64) -> Self {
        Self { value, ratio: None }
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Self { value: num as f64 / den as f64, ratio: Some((num, den)) }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// The grid `{-1.5, -1, -0.5, 0, 2/3, 1, 1.5, 2}`.
    pub fn default_grid() -> Vec<Lambda> {
        vec![
            Lambda::new(-1.5),
            Lambda::new(-1.0),
            Lambda::new(-0.5),
            Lambda::new(0.0),
            Lambda::ratio(2, 3),
            Lambda::new(1.0),
            Lambda::new(1.5),
            Lambda::new(2.0),
        ]
    }

    /// Parses a comma separated list such as `-1.5,0,2/3,1`.
    pub fn parse_list(s: &str) -> Result<Vec<Lambda>> {
        s.split(',').map(|t| t.trim().parse()).collect()
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ratio {
            Some((a, b)) if b != 1 => write!(f, "{a}/{b}"),
            _ => write!(f, "{}", self.value),
        }
    }
}

impl FromStr for Lambda {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidArgument(format!("cannot parse lambda from {s:?}"));
        if let Some((a, b)) = s.split_once('/') {
            let a: i64 = a.trim().parse().map_err(|_| bad())?;
            let b: i64 = b.trim().parse().map_err(|_| bad())?;
            if b == 0 {
                return Err(bad());
            }
            let (a, b) = if b < 0 { (-a, -b) } else { (a, b) };
            return Ok(Lambda::ratio(a, b));
        }
        let v: f64 = s.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        Ok(Lambda::new(v))
    }
}

type PhiFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A user supplied convex `phi` with `phi(1) = phi'(1) = 0`, `phi''(1) > 0`.
#[derive(Clone)]
pub struct CustomPhi {
    name: String,
    phi: Arc<PhiFn>,
    second_derivative: f64,
    slope_at_infinity: f64,
}

impl fmt::Debug for CustomPhi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPhi")
            .field("name", &self.name)
            .field("second_derivative", &self.second_derivative)
            .field("slope_at_infinity", &self.slope_at_infinity)
            .finish()
    }
}

impl CustomPhi {
    /// Checks `phi(1) = 0` and `phi'(1) = 0` to 1e-8 and estimates
    /// `phi''(1)` by a central difference with step 1e-4.
    pub fn new(name: impl Into<String>, phi: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let name = name.into();
        let at_one = phi(1.0);
        if !(at_one.abs() <= 1e-8) {
            return Err(Error::InvalidPhi(format!("{name}: phi(1) = {at_one}")));
        }
        let h1 = 1e-5;
        let slope = (phi(1.0 + h1) - phi(1.0 - h1)) / (2.0 * h1);
        if !(slope.abs() <= 1e-8) {
            return Err(Error::InvalidPhi(format!("{name}: phi'(1) = {slope}")));
        }
        let h2 = 1e-4;
        let second = (phi(1.0 + h2) - 2.0 * at_one + phi(1.0 - h2)) / (h2 * h2);
        if !(second > 0.0) || !second.is_finite() {
            return Err(Error::InvalidPhi(format!("{name}: phi''(1) = {second}")));
        }
        Ok(Self { name, phi: Arc::new(phi), second_derivative: second, slope_at_infinity: f64::INFINITY })
    }

    /// `lim phi(u)/u` as `u -> infinity`, used for cells with `q = 0`.
    /// Defaults to infinity.
    pub fn with_slope_at_infinity(mut self, slope: f64) -> Self {
        self.slope_at_infinity = slope;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.phi)(x)
    }

    pub fn second_derivative(&self) -> f64 {
        self.second_derivative
    }
}

/// `phi_lambda(x) = (x^(lambda+1) - x - lambda (x - 1)) / (lambda (1 + lambda))`.
pub fn power_phi(lambda: f64, x: f64) -> f64 {
    if lambda.abs() < LIMIT_SWITCH {
        if x == 0.0 {
            1.0
        } else {
            x * x.ln() - x + 1.0
        }
    } else if (lambda + 1.0).abs() < LIMIT_SWITCH {
        -x.ln() + x - 1.0
    } else {
        (x.powf(lambda + 1.0) - x - lambda * (x - 1.0)) / (lambda * (1.0 + lambda))
    }
}

#[derive(Debug, Clone)]
pub enum DivergenceSpec {
    Power(Lambda),
    Custom(CustomPhi),
}

impl DivergenceSpec {
    pub fn power(lambda: f64) -> Self {
        DivergenceSpec::Power(Lambda::new(lambda))
    }

    pub fn second_derivative(&self) -> f64 {
        match self {
            DivergenceSpec::Power(_) => 1.0,
            DivergenceSpec::Custom(c) => c.second_derivative,
        }
    }

    /// Per-cell contribution; [`Self::finish`] turns the sum into `d`.
    fn cell(&self, p: f64, q: f64) -> f64 {
        match self {
            DivergenceSpec::Power(l) => power_cell(l.value, p, q),
            DivergenceSpec::Custom(c) => {
                if p == 0.0 && q == 0.0 {
                    0.0
                } else if q == 0.0 {
                    p * c.slope_at_infinity
                } else {
                    q * c.eval(p / q)
                }
            }
        }
    }

    fn finish(&self, sum: f64) -> f64 {
        match self {
            DivergenceSpec::Power(l) => {
                let lambda = l.value;
                if lambda.abs() < LIMIT_SWITCH || (lambda + 1.0).abs() < LIMIT_SWITCH {
                    sum
                } else {
                    (sum - 1.0) / (lambda * (lambda + 1.0))
                }
            }
            DivergenceSpec::Custom(_) => sum,
        }
    }

    /// Scale of the cellwise sum, for differences of two divergences.
    fn difference_scale(&self) -> f64 {
        match self {
            DivergenceSpec::Power(l) => {
                let lambda = l.value;
                if lambda.abs() < LIMIT_SWITCH || (lambda + 1.0).abs() < LIMIT_SWITCH {
                    1.0
                } else {
                    1.0 / (lambda * (lambda + 1.0))
                }
            }
            DivergenceSpec::Custom(_) => 1.0,
        }
    }
}

/// Cell term of the power divergence. Away from the limits this is
/// `p^(lambda+1) q^(-lambda)`; at the limits it is a Kullback-Leibler term.
fn power_cell(lambda: f64, p: f64, q: f64) -> f64 {
    if p == 0.0 && q == 0.0 {
        return 0.0;
    }
    if lambda.abs() < LIMIT_SWITCH {
        return if p == 0.0 {
            0.0
        } else if q == 0.0 {
            f64::INFINITY
        } else {
            p * (p / q).ln()
        };
    }
    if (lambda + 1.0).abs() < LIMIT_SWITCH {
        return if q == 0.0 {
            0.0
        } else if p == 0.0 {
            f64::INFINITY
        } else {
            q * (q / p).ln()
        };
    }
    if q == 0.0 {
        return if lambda > 0.0 { f64::INFINITY } else { 0.0 };
    }
    if p == 0.0 {
        return if lambda > -1.0 { 0.0 } else { f64::INFINITY };
    }
    ((lambda + 1.0) * p.ln() - lambda * q.ln()).exp()
}

fn check_probability(v: &[f64]) -> Result<()> {
    if let Some(k) = v.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::Degenerate { index: k, value: v[k] });
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidArgument(format!("probability vector sums to {s}")));
    }
    Ok(())
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    check_probability(p)?;
    check_probability(q)
}

/// Divergence without input validation; may return `+inf`.
fn divergence_raw(p: &[f64], q: &[f64], spec: &DivergenceSpec) -> f64 {
    if p == q {
        return 0.0;
    }
    let sum: f64 = p.iter().zip(q).map(|(&a, &b)| spec.cell(a, b)).sum();
    if sum.is_infinite() {
        return sum;
    }
    spec.finish(sum).max(0.0)
}

/// `d_phi(p, q) = sum_k q_k phi(p_k / q_k)`.
pub fn phi_divergence(p: &[f64], q: &[f64], spec: &DivergenceSpec) -> Result<f64> {
    check_pair(p, q)?;
    let d = divergence_raw(p, q, spec);
    if d.is_infinite() {
        return Err(Error::InfiniteDivergence);
    }
    Ok(d)
}

/// Cressie-Read power divergence `d_lambda(p, q)`.
pub fn power_divergence(p: &[f64], q: &[f64], lambda: f64) -> Result<f64> {
    phi_divergence(p, q, &DivergenceSpec::power(lambda))
}

/// `T_phi`. Usually finite; when `p_bar` has zero cells and `phi(0)` is
/// infinite the two divergences are compared cell by cell and the result
/// can be `+inf`, `-inf` or NaN.
pub fn statistic_t(
    p_bar: &[f64],
    p_tilde: &[f64],
    p_hat: &[f64],
    n: f64,
    spec: &DivergenceSpec,
) -> Result<f64> {
    check_pair(p_bar, p_tilde)?;
    check_pair(p_bar, p_hat)?;
    let scale = 2.0 * n / spec.second_derivative();
    let to_hat = divergence_raw(p_bar, p_hat, spec);
    let to_tilde = divergence_raw(p_bar, p_tilde, spec);
    if to_hat.is_finite() && to_tilde.is_finite() {
        return Ok(scale * (to_hat - to_tilde));
    }
    let mut sum = 0.0;
    for k in 0..p_bar.len() {
        let a = spec.cell(p_bar[k], p_hat[k]);
        let b = spec.cell(p_bar[k], p_tilde[k]);
        sum += if a.is_infinite() && b.is_infinite() {
            // limit of the difference as p_bar_k -> 0+
            match p_hat[k].partial_cmp(&p_tilde[k]) {
                Some(std::cmp::Ordering::Greater) => f64::INFINITY,
                Some(std::cmp::Ordering::Less) => f64::NEG_INFINITY,
                _ => 0.0,
            }
        } else {
            a - b
        };
    }
    Ok(scale * spec.difference_scale() * sum)
}

/// `S_phi`, always nonnegative.
pub fn statistic_s(p_tilde: &[f64], p_hat: &[f64], n: f64, spec: &DivergenceSpec) -> Result<f64> {
    check_pair(p_tilde, p_hat)?;
    let d = divergence_raw(p_tilde, p_hat, spec);
    Ok(2.0 * n / spec.second_derivative() * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    T,
    S,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::T => f.write_str("T"),
            Family::S => f.write_str("S"),
        }
    }
}

/// One statistic with its chi-bar p-value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub family: Family,
    pub lambda: f64,
    pub lambda_label: String,
    pub statistic: f64,
    pub p_value: f64,
    pub weights_ref: String,
}

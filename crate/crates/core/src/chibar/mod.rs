//! Chi-bar-squared null distribution of the order-restricted statistics.
//!
//! Under homogeneity both statistic families converge to
//! `sum_h w_h chi2_{k-h}` with `k = (I-1)(J-1)`. The weight `w_h` is the
//! probability that the `H`-metric projection of `Z ~ N(0, H^{-1})` onto the
//! nonnegative orthant has exactly `h` positive components, where
//! `H = K(nu) (x) K(pi)`.

mod nnqp;
mod special;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loglinear::{design_matrices, probabilities_from_theta, t_matrix, ThetaParams};
use crate::rng::Streams;

pub use nnqp::{nonneg_projection, NnqpSolver, POS_EPS};
pub use special::{chisq_survival, gamma_q, ln_gamma};

/// Default Monte Carlo size for one-shot weight estimation.
pub const DEFAULT_WEIGHT_REPS: u64 = 1_000_000;

/// Largest dimension accepted by [`weights_by_subsets`].
pub const MAX_SUBSET_DIM: usize = 12;

const BLOCK: u64 = 4096;

fn check_positive(q: &[f64]) -> Result<()> {
    if let Some(k) = q.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Degenerate { index: k, value: q[k] });
    }
    Ok(())
}

/// Tridiagonal `K(q)`: diagonal `(q_k + q_{k+1}) / (q_k q_{k+1})`,
/// off-diagonal `-1 / q_{k+1}`.
pub fn k_matrix(q: &[f64]) -> Result<DMatrix<f64>> {
    check_positive(q)?;
    let m = q.len().saturating_sub(1);
    let mut k = DMatrix::zeros(m, m);
    for a in 0..m {
        k[(a, a)] = (q[a] + q[a + 1]) / (q[a] * q[a + 1]);
        if a + 1 < m {
            k[(a, a + 1)] = -1.0 / q[a + 1];
            k[(a + 1, a)] = -1.0 / q[a + 1];
        }
    }
    Ok(k)
}

/// `K(q)^{-1} = T^T (D_{q*} - q* q*^T) T`, `q*` dropping the last entry.
pub fn k_matrix_inverse(q: &[f64]) -> Result<DMatrix<f64>> {
    check_positive(q)?;
    let m = q.len().saturating_sub(1);
    let qs = DVector::from_column_slice(&q[..m]);
    let cov = DMatrix::from_diagonal(&qs) - &qs * qs.transpose();
    let t = t_matrix(m);
    Ok(t.transpose() * cov * t)
}

/// `H = K(nu) (x) K(pi)` with its closed-form inverse and Cholesky factors.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrices {
    pub k_nu: DMatrix<f64>,
    pub k_pi: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub h_inv: DMatrix<f64>,
    pub chol_h: DMatrix<f64>,
    pub chol_h_inv: DMatrix<f64>,
}

impl HMatrices {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

pub fn h_matrices(nu: &[f64], pi: &[f64]) -> Result<HMatrices> {
    if nu.len() < 2 || pi.len() < 2 {
        return Err(Error::Dimension("nu and pi need at least two entries".into()));
    }
    let k_nu = k_matrix(nu)?;
    let k_pi = k_matrix(pi)?;
    let h = k_nu.kronecker(&k_pi);
    let h_inv = k_matrix_inverse(nu)?.kronecker(&k_matrix_inverse(pi)?);
    let chol_h = h.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
    let chol_h_inv = h_inv.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
    Ok(HMatrices { k_nu, k_pi, h, h_inv, chol_h, chol_h_inv })
}

/// Per-observation Fisher information `W^T [(+)_i nu_i (D_pi_i - pi_i pi_i^T)] W`.
pub fn fisher_information(theta: &ThetaParams, nu: &[f64]) -> Result<DMatrix<f64>> {
    let (rows, cols) = (theta.rows, theta.cols);
    let model = probabilities_from_theta(theta, nu)?;
    let w = design_matrices(rows, cols)?.w;
    let mut d = DMatrix::zeros(rows * cols, rows * cols);
    for (i, pi) in model.conditional().iter().enumerate() {
        for a in 0..cols {
            for b in 0..cols {
                let delta = if a == b { pi[a] } else { 0.0 };
                d[(i * cols + a, i * cols + b)] = nu[i] * (delta - pi[a] * pi[b]);
            }
        }
    }
    Ok(w.transpose() * d * w)
}

/// Fisher information on the null: `[[1, nu*^T], [nu*, D_nu*]] (x) (D_pi* - pi* pi*^T)`.
pub fn fisher_information_h0(nu: &[f64], pi: &[f64]) -> Result<DMatrix<f64>> {
    check_positive(nu)?;
    check_positive(pi)?;
    let (rows, cols) = (nu.len(), pi.len());
    let mut left = DMatrix::zeros(rows, rows);
    left[(0, 0)] = 1.0;
    for a in 1..rows {
        left[(0, a)] = nu[a - 1];
        left[(a, 0)] = nu[a - 1];
        left[(a, a)] = nu[a - 1];
    }
    let ps = DVector::from_column_slice(&pi[..cols - 1]);
    let right = DMatrix::from_diagonal(&ps) - &ps * ps.transpose();
    Ok(left.kronecker(&right))
}

/// `Sigma1 = H(S,S)^{-1}` and the Schur complement
/// `Sigma2 = H(S^c,S^c) - H(S^c,S) H(S,S)^{-1} H(S,S^c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthantBlocks {
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
}

pub fn orthant_blocks(h: &DMatrix<f64>, subset: &[usize]) -> Result<OrthantBlocks> {
    let k = h.nrows();
    let comp: Vec<usize> = (0..k).filter(|i| !subset.contains(i)).collect();
    let pick = |a: &[usize], b: &[usize]| DMatrix::from_fn(a.len(), b.len(), |x, y| h[(a[x], b[y])]);
    let hss = pick(subset, subset);
    let hcc = pick(&comp, &comp);
    if subset.is_empty() {
        return Ok(OrthantBlocks { sigma1: hss, sigma2: hcc });
    }
    let chol = hss.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let sigma1 = chol.inverse();
    let hcs = pick(&comp, subset);
    let sigma2 = &hcc - &hcs * chol.solve(&hcs.transpose());
    Ok(OrthantBlocks { sigma1, sigma2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    MonteCarlo,
    SubsetEnumeration,
}

impl fmt::Display for WeightSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSource::MonteCarlo => f.write_str("monte_carlo"),
            WeightSource::SubsetEnumeration => f.write_str("subset_enumeration"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "I")]
    pub rows: usize,
    #[serde(rename = "J")]
    pub cols: usize,
}

/// Mixing weights `w_0 .. w_k`; `w_h` multiplies `chi2_{k-h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiBarWeights {
    pub dims: Dims,
    pub w: Vec<f64>,
    pub reps: u64,
    pub seed: u64,
    pub source: WeightSource,
    /// Raw tallies behind a Monte Carlo estimate.
    #[serde(skip)]
    pub counts: Option<Vec<u64>>,
}

impl ChiBarWeights {
    pub fn dim(&self) -> usize {
        self.w.len() - 1
    }

    pub fn alternating_sum(&self) -> f64 {
        self.w.iter().enumerate().map(|(h, w)| if h % 2 == 0 { *w } else { -*w }).sum()
    }

    pub fn reference(&self) -> String {
        format!("{}:reps={}:seed={}", self.source, self.reps, self.seed)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: ChiBarWeights = serde_json::from_str(text)?;
        let k = (w.dims.rows.saturating_sub(1)) * (w.dims.cols.saturating_sub(1));
        if k == 0 || w.w.len() != k + 1 {
            return Err(Error::Config(format!(
                "weights file has {} entries for a {}x{} table",
                w.w.len(),
                w.dims.rows,
                w.dims.cols
            )));
        }
        if w.w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("weights must be nonnegative".into()));
        }
        Ok(w)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string_pretty(self)
    }
}

/// Tallies of positive-component counts for replications `range`.
fn tally_range(
    hm: &HMatrices,
    streams: &Streams,
    range: std::ops::Range<u64>,
) -> Result<Vec<u64>> {
    let k = hm.dim();
    let mut solver = NnqpSolver::new(&hm.h)?;
    let mut lower = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..=a {
            lower[a * k + b] = hm.chol_h_inv[(a, b)];
        }
    }
    let mut eps = vec![0.0; k];
    let mut z = vec![0.0; k];
    let mut zeta = vec![0.0; k];
    let mut tally = vec![0u64; k + 1];
    for r in range {
        let mut rng = streams.stream(r);
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut rng);
        }
        for a in 0..k {
            z[a] = (0..=a).map(|b| lower[a * k + b] * eps[b]).sum();
        }
        tally[solver.project(&z, &mut zeta)] += 1;
    }
    Ok(tally)
}

fn weights_from_tally(tally: Vec<u64>, rows: usize, cols: usize, reps: u64, seed: u64) -> ChiBarWeights {
    let w = tally.iter().map(|&c| c as f64 / reps as f64).collect();
    ChiBarWeights {
        dims: Dims { rows, cols },
        w,
        reps,
        seed,
        source: WeightSource::MonteCarlo,
        counts: Some(tally),
    }
}

/// Monte Carlo weights from `reps` projections, spread over the rayon pool.
/// Replication `r` always uses stream `r` of `seed`, so the result does not
/// depend on the number of workers.
pub fn estimate_weights(nu: &[f64], pi: &[f64], reps: u64, seed: u64) -> Result<ChiBarWeights> {
    weights_impl(nu, pi, reps, seed, true)
}

/// Same as [`estimate_weights`] on the calling thread only.
pub fn estimate_weights_serial(nu: &[f64], pi: &[f64], reps: u64, seed: u64) -> Result<ChiBarWeights> {
    weights_impl(nu, pi, reps, seed, false)
}

fn weights_impl(nu: &[f64], pi: &[f64], reps: u64, seed: u64, parallel: bool) -> Result<ChiBarWeights> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let hm = h_matrices(nu, pi)?;
    let streams = Streams::new(seed);
    let k = hm.dim();
    let tally = if parallel {
        let blocks = reps.div_ceil(BLOCK);
        (0..blocks)
            .into_par_iter()
            .map(|b| tally_range(&hm, &streams, b * BLOCK..((b + 1) * BLOCK).min(reps)))
            .try_reduce(|| vec![0u64; k + 1], |mut acc, t| {
                acc.iter_mut().zip(t).for_each(|(a, b)| *a += b);
                Ok(acc)
            })?
    } else {
        tally_range(&hm, &streams, 0..reps)?
    };
    Ok(weights_from_tally(tally, nu.len(), pi.len(), reps, seed))
}

/// `Pr(N(0, sigma) >= 0)`: closed form up to dimension 3, Monte Carlo above.
pub fn orthant_probability<R: Rng>(sigma: &DMatrix<f64>, samples: u64, rng: &mut R) -> Result<f64> {
    let d = sigma.nrows();
    let corr = |a: usize, b: usize| sigma[(a, b)] / (sigma[(a, a)] * sigma[(b, b)]).sqrt();
    let two_pi = std::f64::consts::PI * 2.0;
    match d {
        0 => Ok(1.0),
        1 => Ok(0.5),
        2 => Ok(0.25 + corr(0, 1).asin() / two_pi),
        3 => Ok(0.125 + (corr(0, 1).asin() + corr(0, 2).asin() + corr(1, 2).asin()) / (2.0 * two_pi)),
        _ => {
            let l = sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.l();
            let mut eps = DVector::zeros(d);
            let mut hits = 0u64;
            for _ in 0..samples {
                for e in eps.iter_mut() {
                    *e = StandardNormal.sample(rng);
                }
                if (&l * &eps).iter().all(|&v| v >= 0.0) {
                    hits += 1;
                }
            }
            Ok(hits as f64 / samples as f64)
        }
    }
}

/// Weights by enumerating every subset `S` of the constraints:
/// `w_|S| += Pr(N(0, Sigma1(S)) >= 0) Pr(N(0, Sigma2(S)) >= 0)`.
pub fn weights_by_subsets(nu: &[f64], pi: &[f64], samples: u64, seed: u64) -> Result<ChiBarWeights> {
    let hm = h_matrices(nu, pi)?;
    let k = hm.dim();
    if k > MAX_SUBSET_DIM {
        return Err(Error::DimensionTooLarge { dim: k, max: MAX_SUBSET_DIM });
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let streams = Streams::new(seed);
    let masks: Vec<u64> = (0..1u64 << k).collect();
    let parts: Vec<(usize, f64)> = masks
        .par_iter()
        .map(|&mask| {
            let subset: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
            let blocks = orthant_blocks(&hm.h, &subset)?;
            let p1 = orthant_probability(&blocks.sigma1, samples, &mut streams.stream(2 * mask))?;
            let p2 = orthant_probability(&blocks.sigma2, samples, &mut streams.stream(2 * mask + 1))?;
            Ok((subset.len(), p1 * p2))
        })
        .collect::<Result<_>>()?;
    let mut w = vec![0.0; k + 1];
    for (h, p) in parts {
        w[h] += p;
    }
    Ok(ChiBarWeights {
        dims: Dims { rows: nu.len(), cols: pi.len() },
        w,
        reps: samples,
        seed,
        source: WeightSource::SubsetEnumeration,
        counts: None,
    })
}

/// `sum_{h<k} w_h Pr(chi2_{k-h} > t)`; 1 when `t <= 0` or `t` is NaN.
pub fn chibar_pvalue(t: f64, weights: &ChiBarWeights) -> f64 {
    if !(t > 0.0) {
        return 1.0;
    }
    let k = weights.dim();
    let p: f64 = (0..k).map(|h| weights.w[h] * chisq_survival((k - h) as u32, t)).sum();
    p.clamp(0.0, 1.0)
}

/// The `x` with `chibar_pvalue(x) = alpha`, by bisection on `[0, 200]`.
pub fn chibar_quantile(alpha: f64, weights: &ChiBarWeights) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let k = weights.dim();
    let mass: f64 = weights.w[..k].iter().sum();
    if mass <= 0.0 {
        return Err(Error::NonIdentifiable);
    }
    if mass <= alpha {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 200.0);
    if chibar_pvalue(hi, weights) > alpha {
        return Err(Error::InvalidArgument(format!("quantile for alpha {alpha} exceeds 200")));
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if chibar_pvalue(mid, weights) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

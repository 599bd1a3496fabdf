//! Projection onto the nonnegative orthant in the metric of a positive
//! definite `H`:
//!
//! `min 1/2 zeta^T H zeta - c^T zeta  subject to  zeta >= 0`, `c = H z`.
//!
//! Lawson-Hanson active set. Each subproblem is solved through a Cholesky
//! factor of the free block `H_FF`, which is the normal-equation form of the
//! least-squares problem `min ||L^T zeta - L^T z||`. All buffers are owned by
//! the solver, so repeated calls do not allocate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Components above this count as strictly positive.
pub const POS_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct NnqpSolver {
    k: usize,
    h: Vec<f64>,
    chol: Vec<f64>,
    free: Vec<usize>,
    is_free: Vec<bool>,
    s: Vec<f64>,
    rhs: Vec<f64>,
    c: Vec<f64>,
}

impl NnqpSolver {
    pub fn new(h: &DMatrix<f64>) -> Result<Self> {
        let k = h.nrows();
        if h.ncols() != k || k == 0 {
            return Err(Error::Dimension(format!("H must be square and nonempty, got {:?}", h.shape())));
        }
        if h.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        let mut flat = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                flat[a * k + b] = 0.5 * (h[(a, b)] + h[(b, a)]);
            }
        }
        Ok(Self {
            k,
            h: flat,
            chol: vec![0.0; k * k],
            free: Vec::with_capacity(k),
            is_free: vec![false; k],
            s: vec![0.0; k],
            rhs: vec![0.0; k],
            c: vec![0.0; k],
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Projects `z`; returns the number of components above [`POS_EPS`].
    pub fn project(&mut self, z: &[f64], zeta: &mut [f64]) -> usize {
        let k = self.k;
        for a in 0..k {
            let row = &self.h[a * k..(a + 1) * k];
            self.c[a] = row.iter().zip(z).map(|(x, y)| x * y).sum();
        }
        let c = std::mem::take(&mut self.c);
        let count = self.solve(&c, zeta);
        self.c = c;
        count
    }

    /// Solves the problem for a linear term `c` directly.
    pub fn solve(&mut self, c: &[f64], zeta: &mut [f64]) -> usize {
        let k = self.k;
        zeta[..k].fill(0.0);
        self.is_free.fill(false);
        self.free.clear();
        let scale = 1.0 + c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-13 * scale;

        for _ in 0..3 * k + 3 {
            // negative gradient at zeta, over the fixed (zero) coordinates
            let mut best = None;
            let mut best_val = tol;
            for t in 0..k {
                if self.is_free[t] {
                    continue;
                }
                let row = &self.h[t * k..(t + 1) * k];
                let hz: f64 = row.iter().zip(zeta.iter()).map(|(x, y)| x * y).sum();
                let w = c[t] - hz;
                if w > best_val {
                    best_val = w;
                    best = Some(t);
                }
            }
            let Some(t) = best else { break };
            self.is_free[t] = true;
            self.free.push(t);

            let mut first = true;
            loop {
                self.solve_free(c);
                let p = self.free.len();
                if (0..p).all(|a| self.s[a] > 0.0) {
                    for a in 0..p {
                        zeta[self.free[a]] = self.s[a];
                    }
                    break;
                }
                if first && self.s[p - 1] <= 0.0 && self.free[p - 1] == t {
                    // rounding: the entering coordinate cannot move
                    self.free.pop();
                    self.is_free[t] = false;
                    return finish(zeta, k);
                }
                first = false;
                let mut alpha = f64::INFINITY;
                let mut leaving = 0;
                for a in 0..p {
                    if self.s[a] <= 0.0 {
                        let zf = zeta[self.free[a]];
                        let ratio = zf / (zf - self.s[a]);
                        if ratio < alpha {
                            alpha = ratio;
                            leaving = self.free[a];
                        }
                    }
                }
                for a in 0..p {
                    let i = self.free[a];
                    zeta[i] += alpha * (self.s[a] - zeta[i]);
                }
                zeta[leaving] = 0.0;
                let is_free = &mut self.is_free;
                self.free.retain(|&i| {
                    let keep = zeta[i] > 0.0;
                    if !keep {
                        zeta[i] = 0.0;
                        is_free[i] = false;
                    }
                    keep
                });
                if self.free.is_empty() {
                    break;
                }
            }
        }
        finish(zeta, k)
    }

    /// `s = H_FF^{-1} c_F` for the current free set, in free-set order.
    fn solve_free(&mut self, c: &[f64]) {
        let k = self.k;
        let p = self.free.len();
        let l = &mut self.chol;
        for a in 0..p {
            for b in 0..=a {
                let mut v = self.h[self.free[a] * k + self.free[b]];
                for m in 0..b {
                    v -= l[a * k + m] * l[b * k + m];
                }
                if a == b {
                    l[a * k + a] = v.max(f64::MIN_POSITIVE).sqrt();
                } else {
                    l[a * k + b] = v / l[b * k + b];
                }
            }
        }
        for a in 0..p {
            let mut v = c[self.free[a]];
            for m in 0..a {
                v -= l[a * k + m] * self.rhs[m];
            }
            self.rhs[a] = v / l[a * k + a];
        }
        for a in (0..p).rev() {
            let mut v = self.rhs[a];
            for m in a + 1..p {
                v -= l[m * k + a] * self.s[m];
            }
            self.s[a] = v / l[a * k + a];
        }
    }
}

fn finish(zeta: &[f64], k: usize) -> usize {
    zeta[..k].iter().filter(|&&v| v > POS_EPS).count()
}

/// One-shot projection of `z` onto the nonnegative orthant in the `H` metric.
pub fn nonneg_projection(h: &DMatrix<f64>, z: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    if z.len() != h.nrows() {
        return Err(Error::LengthMismatch { left: z.len(), right: h.nrows() });
    }
    let mut solver = NnqpSolver::new(h)?;
    let mut zeta = DVector::zeros(z.len());
    let count = solver.project(z.as_slice(), zeta.as_mut_slice());
    Ok((zeta, count))
}

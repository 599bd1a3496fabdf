//! Maximum likelihood under homogeneity (closed form) and under the
//! likelihood-ratio order cone `R theta >= 0` (active-set Newton).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chibar::fisher_information;
use crate::error::{Error, Result};
use crate::loglinear::{
    constraint_matrix, log_likelihood_counts, probabilities_from_theta, theta_from_probabilities,
    ThetaParams, WeightedCounts, THETA_CAP,
};
use crate::tables::{ContingencyTable, ProbabilityModel};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Constraints with `|(R theta)_k|` at or below this are reported active.
pub const ACTIVE_TOL: f64 = 1e-7;

/// A working-set constraint is released when its multiplier estimate is
/// below `-DROP_TOL`.
const DROP_TOL: f64 = 1e-9;

/// Box used by [`ZeroCellPolicy::Boundary`], kept inside [`THETA_CAP`].
pub const BOUNDARY_BOX: f64 = THETA_CAP - 1.0;

/// What to do when the table has empty cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroCellPolicy {
    /// Fail with `ZeroCell`.
    #[default]
    Refuse,
    /// Add 0.5 to every cell before fitting.
    ContinuityCorrection,
    /// Fit the raw counts with every parameter boxed to `|theta_l| <= BOUNDARY_BOX`.
    Boundary,
}

impl ZeroCellPolicy {
    pub fn correction(self) -> f64 {
        match self {
            ZeroCellPolicy::ContinuityCorrection => 0.5,
            _ => 0.0,
        }
    }

    fn counts(self, table: &ContingencyTable) -> Result<WeightedCounts> {
        if self == ZeroCellPolicy::Refuse {
            if let Some((row, column)) = table.first_zero_cell() {
                return Err(Error::ZeroCell { row, column });
            }
        }
        Ok(WeightedCounts::from_table(table, self.correction()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub zero_cells: ZeroCellPolicy,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, zero_cells: ZeroCellPolicy::Refuse }
    }
}

/// Order-restricted MLE with its KKT certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedFit {
    pub theta: ThetaParams,
    pub fitted: ProbabilityModel,
    /// One per row of `R`, all `<= 0`; stationarity reads
    /// `grad l - R^T multipliers + bound_multipliers = 0`.
    pub multipliers: Vec<f64>,
    /// Net multiplier of the parameter box, zero unless the policy is
    /// `Boundary` and a bound is active.
    pub bound_multipliers: Vec<f64>,
    /// Zero-based rows of `R` with `|(R theta)_k| <= ACTIVE_TOL`.
    pub active_set: Vec<usize>,
    /// `||grad l - R^T multipliers + bound_multipliers||_inf` in count units.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood of every accepted iterate, starting at the null fit.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub zero_cells: ZeroCellPolicy,
}

/// Closed-form fit under homogeneity: `p_ij = (n_i / n) (N_.j / n)`.
pub fn mle_h0(table: &ContingencyTable) -> Result<(ThetaParams, ProbabilityModel)> {
    mle_h0_counts(&WeightedCounts::from_table(table, 0.0))
}

pub fn mle_h0_counts(counts: &WeightedCounts) -> Result<(ThetaParams, ProbabilityModel)> {
    let (rows, cols) = (counts.rows, counts.cols);
    let n = counts.total();
    let col_totals: Vec<f64> =
        (0..cols).map(|j| (0..rows).map(|i| counts.counts[i * cols + j]).sum()).collect();
    if let Some(j) = col_totals.iter().position(|&c| c <= 0.0) {
        return Err(Error::EmptyColumn { column: j + 1 });
    }
    let nu = counts.row_fractions();
    let pi: Vec<f64> = col_totals.iter().map(|c| c / n).collect();
    let model = ProbabilityModel::from_conditional(&nu, &vec![pi; rows])?;
    let theta = theta_from_probabilities(&model)?;
    Ok((theta, model))
}

/// Order-restricted MLE with the default zero-cell policy (refuse).
pub fn mle_h1(table: &ContingencyTable, tol: f64, max_iter: usize) -> Result<ConstrainedFit> {
    mle_h1_with(table, &FitOptions { tol, max_iter, zero_cells: ZeroCellPolicy::Refuse })
}

/// `max l(N; theta)` subject to `R theta >= 0`.
///
/// Primal active-set method: Newton steps on the current working face,
/// ratio test against the inactive constraints, Armijo backtracking, and
/// release of the most negative multiplier once the face is stationary.
pub fn mle_h1_with(table: &ContingencyTable, opts: &FitOptions) -> Result<ConstrainedFit> {
    let counts = opts.zero_cells.counts(table)?;
    let (rows, cols) = (counts.rows, counts.cols);
    let n = counts.total();
    let nu = counts.row_fractions();
    let m = rows * (cols - 1);
    let r = constraint_matrix(rows, cols);
    let n_order = r.nrows();

    // Constraint rows a_k theta >= b_k: R first, then the optional box.
    let mut a_rows: Vec<DVector<f64>> = (0..n_order).map(|k| r.row(k).transpose()).collect();
    let mut b: Vec<f64> = vec![0.0; n_order];
    if opts.zero_cells == ZeroCellPolicy::Boundary {
        for l in 0..m {
            let mut e = DVector::zeros(m);
            e[l] = 1.0;
            a_rows.push(e.clone());
            b.push(-BOUNDARY_BOX);
            a_rows.push(-e);
            b.push(-BOUNDARY_BOX);
        }
    }
    let n_con = a_rows.len();

    let (theta0, _) = mle_h0_counts(&counts)?;
    let mut x = DVector::from_vec(theta0.to_vec());
    let eval = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let theta = ThetaParams::from_vec(x.as_slice(), rows, cols)?;
        log_likelihood_counts(&counts, &theta)
    };
    let (mut f, mut g) = eval(&x)?;
    let mut trace = vec![f];
    let mut working: Vec<usize> = (0..n_order).collect();
    let mut mu = DVector::<f64>::zeros(0);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let theta = ThetaParams::from_vec(x.as_slice(), rows, cols)?;
        let hess = fisher_information(&theta, &nu)? * n;
        let (d, mult) = match solve_face(&hess, &g, &a_rows, &working) {
            Some(s) => s,
            None => break,
        };
        mu = mult;
        let mut resid = g.clone();
        for (w, &k) in working.iter().enumerate() {
            resid.axpy(mu[w], &a_rows[k], 1.0);
        }
        if resid.amax() / n <= opts.tol {
            let most_negative = (0..working.len())
                .filter(|&w| mu[w] < -DROP_TOL)
                .min_by(|&p, &q| mu[p].total_cmp(&mu[q]));
            match most_negative {
                Some(w) => {
                    working.remove(w);
                    continue;
                }
                None => {
                    converged = true;
                    break;
                }
            }
        }

        // Ratio test against constraints outside the working set.
        let mut alpha_max = 1.0;
        let mut blocking = None;
        for k in 0..n_con {
            if working.contains(&k) {
                continue;
            }
            let slope = a_rows[k].dot(&d);
            if slope < 0.0 {
                let slack = (a_rows[k].dot(&x) - b[k]).max(0.0);
                let step = slack / -slope;
                if step < alpha_max {
                    alpha_max = step;
                    blocking = Some(k);
                }
            }
        }

        let predicted = g.dot(&d);
        let noise = 1e-12 * (1.0 + f.abs());
        let mut alpha = alpha_max;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &d * alpha;
            if let Ok((fc, gc)) = eval(&cand) {
                if fc >= f + 1e-4 * alpha * predicted || alpha * predicted <= noise {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else { break };
        x = cand;
        f = fc;
        g = gc;
        trace.push(f);
        if alpha == alpha_max {
            if let Some(k) = blocking {
                // land exactly on the blocking face
                if k < n_order {
                    snap_to_face(&mut x, &a_rows[k], b[k]);
                    let (f2, g2) = eval(&x)?;
                    f = f2;
                    g = g2;
                }
                working.push(k);
            }
        }
    }

    let theta = ThetaParams::from_vec(x.as_slice(), rows, cols)?;
    let fitted = probabilities_from_theta(&theta, &nu)?;
    let mut multipliers = vec![0.0; n_order];
    let mut bound_multipliers = vec![0.0; m];
    if mu.len() == working.len() {
        for (w, &k) in working.iter().enumerate() {
            if k < n_order {
                multipliers[k] = -mu[w];
            } else {
                let l = (k - n_order) / 2;
                let sign = if (k - n_order).is_multiple_of(2) { 1.0 } else { -1.0 };
                bound_multipliers[l] += sign * mu[w];
            }
        }
    }
    let rt = &r * &x;
    let active_set = (0..n_order).filter(|&k| rt[k].abs() <= ACTIVE_TOL).collect();
    let mut fit = ConstrainedFit {
        theta,
        fitted,
        multipliers,
        bound_multipliers,
        active_set,
        kkt_residual: 0.0,
        iterations,
        log_likelihood: f,
        trace,
        converged,
        zero_cells: opts.zero_cells,
    };
    fit.kkt_residual = stationarity_residual(&counts, &fit)?;
    if converged {
        Ok(fit)
    } else {
        Err(Error::NonConvergence(Box::new(fit)))
    }
}

/// Moves `x` along `a` so that `a^T x = b` holds to rounding.
fn snap_to_face(x: &mut DVector<f64>, a: &DVector<f64>, b: f64) {
    let gap = a.dot(x) - b;
    let norm2 = a.norm_squared();
    if norm2 > 0.0 {
        x.axpy(-gap / norm2, a, 1.0);
    }
}

/// Newton step on the face `{a_k^T d = 0, k in working}`: solves
/// `[H  -A^T; A  0] [d; mu] = [g; 0]`.
fn solve_face(
    hess: &DMatrix<f64>,
    g: &DVector<f64>,
    a_rows: &[DVector<f64>],
    working: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = g.len();
    let w = working.len();
    let mut kkt = DMatrix::zeros(m + w, m + w);
    kkt.view_mut((0, 0), (m, m)).copy_from(hess);
    for (c, &k) in working.iter().enumerate() {
        for l in 0..m {
            kkt[(l, m + c)] = -a_rows[k][l];
            kkt[(m + c, l)] = a_rows[k][l];
        }
    }
    let mut rhs = DVector::zeros(m + w);
    rhs.rows_mut(0, m).copy_from(g);
    let sol = kkt.full_piv_lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, m).into_owned(), sol.rows(m, w).into_owned()))
}

fn stationarity_residual(counts: &WeightedCounts, fit: &ConstrainedFit) -> Result<f64> {
    let (_, g) = log_likelihood_counts(counts, &fit.theta)?;
    let r = constraint_matrix(counts.rows, counts.cols);
    let lambda = DVector::from_column_slice(&fit.multipliers);
    let resid = g - r.transpose() * lambda + DVector::from_column_slice(&fit.bound_multipliers);
    Ok(resid.amax())
}

/// Recomputes `||grad l(theta) - R^T lambda + bound terms||_inf` from the
/// table, independently of the optimizer's bookkeeping.
pub fn kkt_residual(table: &ContingencyTable, fit: &ConstrainedFit) -> f64 {
    let counts = WeightedCounts::from_table(table, fit.zero_cells.correction());
    stationarity_residual(&counts, fit).unwrap_or(f64::INFINITY)
}

/// Everything the two statistic families need from one table.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedTable {
    /// Total of the (possibly corrected) counts.
    pub n: f64,
    pub p_bar: Vec<f64>,
    pub theta_hat: ThetaParams,
    pub hat: ProbabilityModel,
    pub fit: ConstrainedFit,
}

pub fn fit_table(table: &ContingencyTable, opts: &FitOptions) -> Result<FittedTable> {
    let counts = opts.zero_cells.counts(table)?;
    let n = counts.total();
    let p_bar = counts.counts.iter().map(|c| c / n).collect();
    let (theta_hat, hat) = mle_h0_counts(&counts)?;
    let fit = mle_h1_with(table, opts)?;
    Ok(FittedTable { n, p_bar, theta_hat, hat, fit })
}

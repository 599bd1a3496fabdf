//! Saturated log-linear parametrization of a product-multinomial table.
//!
//! `log p_ij = u + u1(i) + theta2(j) + theta12(ij)` with corner-point
//! constraints `u1(I) = theta2(J) = theta12(iJ) = theta12(Ij) = 0`. The free
//! vector is `theta = (theta2, theta12)` of length `I(J-1)`; `u` and `u1` are
//! determined by the fixed row fractions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tables::{ContingencyTable, ProbabilityModel};

/// Largest admissible magnitude of any free parameter.
pub const THETA_CAP: f64 = 30.0;

/// Free log-linear parameters `theta = (theta2, theta12)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    pub theta2: Vec<f64>,
    /// Lexicographic over `(i, j)` in `{1..I-1} x {1..J-1}`.
    pub theta12: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl ThetaParams {
    pub fn new(theta2: Vec<f64>, theta12: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        check_dims(rows, cols)?;
        if theta2.len() != cols - 1 {
            return Err(Error::LengthMismatch { left: theta2.len(), right: cols - 1 });
        }
        if theta12.len() != (rows - 1) * (cols - 1) {
            return Err(Error::LengthMismatch {
                left: theta12.len(),
                right: (rows - 1) * (cols - 1),
            });
        }
        let theta = Self { theta2, theta12, rows, cols };
        theta.check_cap()?;
        Ok(theta)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            theta2: vec![0.0; cols - 1],
            theta12: vec![0.0; (rows - 1) * (cols - 1)],
            rows,
            cols,
        }
    }

    /// From the stacked vector `(theta2, theta12)`.
    pub fn from_vec(v: &[f64], rows: usize, cols: usize) -> Result<Self> {
        check_dims(rows, cols)?;
        if v.len() != rows * (cols - 1) {
            return Err(Error::LengthMismatch { left: v.len(), right: rows * (cols - 1) });
        }
        Self::new(v[..cols - 1].to_vec(), v[cols - 1..].to_vec(), rows, cols)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.theta2.clone();
        v.extend_from_slice(&self.theta12);
        v
    }

    pub fn len(&self) -> usize {
        self.rows * (self.cols - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `theta12(ij)` with the boundary zeros, zero-based indices.
    pub fn theta12_at(&self, i: usize, j: usize) -> f64 {
        if i + 1 == self.rows || j + 1 == self.cols {
            0.0
        } else {
            self.theta12[i * (self.cols - 1) + j]
        }
    }

    pub fn theta2_at(&self, j: usize) -> f64 {
        if j + 1 == self.cols {
            0.0
        } else {
            self.theta2[j]
        }
    }

    fn check_cap(&self) -> Result<()> {
        for (k, &v) in self.theta2.iter().chain(&self.theta12).enumerate() {
            if !v.is_finite() || v.abs() > THETA_CAP {
                return Err(Error::OverflowGuard { index: k, value: v, cap: THETA_CAP });
            }
        }
        Ok(())
    }

    /// Linear predictor `theta2(j) + theta12(ij)` of row `i`, all `J` entries.
    fn row_predictor(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.theta2_at(j) + self.theta12_at(i, j)).collect()
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows < 2 || cols < 2 {
        return Err(Error::Dimension(format!("need I >= 2 and J >= 2, got I={rows}, J={cols}")));
    }
    Ok(())
}

/// `log(sum exp(x))` with max subtraction.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Design and constraint matrices of the saturated model.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    /// `IJ x I`, multiplies `(u, u1(1), ..., u1(I-1))`.
    pub w0: DMatrix<f64>,
    /// `IJ x I(J-1)`, multiplies `theta`.
    pub w: DMatrix<f64>,
    /// `(I-1)(J-1) x I(J-1)`; `(R theta)_(ij)` is the log local odds ratio.
    pub r: DMatrix<f64>,
}

/// `h x h` with ones on the diagonal and minus ones on the superdiagonal.
pub fn g_matrix(h: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h, h, |a, b| {
        if a == b {
            1.0
        } else if b == a + 1 {
            -1.0
        } else {
            0.0
        }
    })
}

/// `G_h^{-1}`: upper triangular matrix of ones.
pub fn t_matrix(h: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h, h, |a, b| if b >= a { 1.0 } else { 0.0 })
}

/// `[[1_{h-1}, I_{h-1}], [1, 0^T]]`, the `h x h` row block of the design.
fn corner_block(h: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h, h, |a, b| {
        if b == 0 || (a + 1 < h && b == a + 1) {
            1.0
        } else {
            0.0
        }
    })
}

pub fn design_matrices(rows: usize, cols: usize) -> Result<DesignSet> {
    check_dims(rows, cols)?;
    let a = corner_block(rows);
    let ones_j = DMatrix::from_element(cols, 1, 1.0);
    let w0 = a.kronecker(&ones_j);
    // [I_{J-1}; 0^T]
    let selector = DMatrix::from_fn(cols, cols - 1, |a, b| if a == b { 1.0 } else { 0.0 });
    let w = a.kronecker(&selector);
    let r = constraint_matrix(rows, cols);
    Ok(DesignSet { w0, w, r })
}

/// `R = [0_{(I-1)(J-1) x (J-1)} | G_{I-1} (x) G_{J-1}]`.
pub fn constraint_matrix(rows: usize, cols: usize) -> DMatrix<f64> {
    let block = g_matrix(rows - 1).kronecker(&g_matrix(cols - 1));
    let c = (rows - 1) * (cols - 1);
    let mut r = DMatrix::zeros(c, rows * (cols - 1));
    r.view_mut((0, cols - 1), (c, c)).copy_from(&block);
    r
}

fn check_nu(nu: &[f64], rows: usize) -> Result<()> {
    if nu.len() != rows {
        return Err(Error::LengthMismatch { left: nu.len(), right: rows });
    }
    if let Some(i) = nu.iter().position(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::Degenerate { index: i, value: nu[i] });
    }
    Ok(())
}

/// Redundant intercept `u = log nu_I - log(1 + sum_j exp theta2(j))`.
pub fn normalization_u(theta: &ThetaParams, nu: &[f64]) -> Result<f64> {
    theta.check_cap()?;
    check_nu(nu, theta.rows)?;
    let eta = theta.row_predictor(theta.rows - 1);
    Ok(nu[theta.rows - 1].ln() - log_sum_exp(&eta))
}

/// Redundant row terms `u1(i)`, `i = 1..I-1`.
pub fn row_terms_u1(theta: &ThetaParams, nu: &[f64]) -> Result<Vec<f64>> {
    theta.check_cap()?;
    check_nu(nu, theta.rows)?;
    let last = log_sum_exp(&theta.row_predictor(theta.rows - 1));
    let nu_last = nu[theta.rows - 1];
    Ok((0..theta.rows - 1)
        .map(|i| (nu[i] / nu_last).ln() + last - log_sum_exp(&theta.row_predictor(i)))
        .collect())
}

/// Joint probabilities `p(theta)` with row masses pinned to `nu`.
pub fn probabilities_from_theta(theta: &ThetaParams, nu: &[f64]) -> Result<ProbabilityModel> {
    let u = normalization_u(theta, nu)?;
    let u1 = row_terms_u1(theta, nu)?;
    let (rows, cols) = (theta.rows, theta.cols);
    let mut p = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let ui = if i + 1 < rows { u1[i] } else { 0.0 };
        for j in 0..cols {
            p.push((u + ui + theta.theta2_at(j) + theta.theta12_at(i, j)).exp());
        }
    }
    // Rows are rebuilt from their own sums so that `nu` holds to rounding.
    let pi: Vec<Vec<f64>> = p
        .chunks(cols)
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(|v| v / s).collect()
        })
        .collect();
    ProbabilityModel::from_conditional(nu, &pi)
}

/// Inverse of [`probabilities_from_theta`] for strictly positive tables.
pub fn theta_from_probabilities(model: &ProbabilityModel) -> Result<ThetaParams> {
    let (rows, cols) = (model.rows(), model.cols());
    if let Some(k) = model.joint().iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroCell { row: k / cols + 1, column: k % cols + 1 });
    }
    let lp = |i: usize, j: usize| model.get(i, j).ln();
    let (il, jl) = (rows - 1, cols - 1);
    let theta2 = (0..jl).map(|j| lp(il, j) - lp(il, jl)).collect();
    let mut theta12 = Vec::with_capacity(il * jl);
    for i in 0..il {
        for j in 0..jl {
            theta12.push(lp(i, j) - lp(i, jl) - lp(il, j) + lp(il, jl));
        }
    }
    ThetaParams::new(theta2, theta12, rows, cols)
}

/// Counts used by the likelihood, possibly continuity corrected.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCounts {
    pub counts: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl WeightedCounts {
    pub fn from_table(table: &ContingencyTable, correction: f64) -> Self {
        Self { counts: table.counts_f64(correction), rows: table.rows(), cols: table.cols() }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn row_totals(&self) -> Vec<f64> {
        self.counts.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn row_fractions(&self) -> Vec<f64> {
        let n = self.total();
        self.row_totals().into_iter().map(|t| t / n).collect()
    }
}

/// Kernel `l(N; theta) = n u + sum_i n_i u1(i) + N^T W theta` and its
/// gradient `W^T (N - n p(theta))`.
pub fn log_likelihood(table: &ContingencyTable, theta: &ThetaParams) -> Result<(f64, DVector<f64>)> {
    log_likelihood_counts(&WeightedCounts::from_table(table, 0.0), theta)
}

pub fn log_likelihood_counts(
    counts: &WeightedCounts,
    theta: &ThetaParams,
) -> Result<(f64, DVector<f64>)> {
    if counts.rows != theta.rows || counts.cols != theta.cols {
        return Err(Error::Dimension(format!(
            "table is {}x{} but theta is for {}x{}",
            counts.rows, counts.cols, theta.rows, theta.cols
        )));
    }
    let (rows, cols) = (theta.rows, theta.cols);
    let nu = counts.row_fractions();
    let row_totals = counts.row_totals();
    let n = counts.total();
    let u = normalization_u(theta, &nu)?;
    let u1 = row_terms_u1(theta, &nu)?;

    let mut value = n * u;
    for i in 0..rows - 1 {
        value += row_totals[i] * u1[i];
    }
    for i in 0..rows {
        for j in 0..cols - 1 {
            let c = counts.counts[i * cols + j];
            value += c * (theta.theta2[j] + theta.theta12_at(i, j));
        }
    }

    let model = probabilities_from_theta(theta, &nu)?;
    let p = model.joint();
    let mut grad = DVector::zeros(theta.len());
    for i in 0..rows {
        for j in 0..cols - 1 {
            let k = i * cols + j;
            let resid = counts.counts[k] - n * p[k];
            grad[j] += resid;
            if i + 1 < rows {
                grad[(cols - 1) + i * (cols - 1) + j] += resid;
            }
        }
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::local_odds_ratios;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example() -> ContingencyTable {
        ContingencyTable::from_counts(&[[61, 28, 7], [68, 23, 13], [58, 40, 12], [53, 38, 16]])
            .unwrap()
    }

    fn random_theta(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> ThetaParams {
        let v: Vec<f64> = (0..rows * (cols - 1)).map(|_| rng.random_range(-scale..scale)).collect();
        ThetaParams::from_vec(&v, rows, cols).unwrap()
    }

    fn random_nu(rng: &mut ChaCha8Rng, rows: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..rows).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    #[test]
    fn constraint_matrix_two_by_two() {
        let d = design_matrices(2, 2).unwrap();
        assert_eq!(d.r, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
    }

    #[test]
    fn constraint_matrix_four_by_three() {
        let r = design_matrices(4, 3).unwrap().r;
        assert_eq!(r.shape(), (6, 8));
        // columns: theta2(1), theta2(2), theta12(11), theta12(12), theta12(21), theta12(22), ...
        let expected = [0.0, 0.0, 1.0, -1.0, -1.0, 1.0, 0.0, 0.0];
        for (c, e) in expected.iter().enumerate() {
            assert_eq!(r[(0, c)], *e);
        }
    }

    #[test]
    fn zero_parameters_saturate_to_ones() {
        for (rows, cols) in [(2, 2), (3, 4), (4, 3)] {
            let d = design_matrices(rows, cols).unwrap();
            let lp = &d.w0 * DVector::zeros(rows) + &d.w * DVector::zeros(rows * (cols - 1));
            assert!(lp.iter().all(|&v| v.exp() == 1.0));
            // exactly one 1 per row of W restricted to the theta2 block, except j = J
            for k in 0..rows * cols {
                let ones: f64 = (0..cols - 1).map(|c| d.w[(k, c)]).sum();
                let expected = if k % cols == cols - 1 { 0.0 } else { 1.0 };
                assert_eq!(ones, expected);
            }
        }
    }

    #[test]
    fn design_reproduces_log_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let theta = random_theta(&mut rng, 4, 3, 2.0);
            let nu = random_nu(&mut rng, 4);
            let d = design_matrices(4, 3).unwrap();
            let mut uvec = vec![normalization_u(&theta, &nu).unwrap()];
            uvec.extend(row_terms_u1(&theta, &nu).unwrap());
            let lp = &d.w0 * DVector::from_vec(uvec) + &d.w * DVector::from_vec(theta.to_vec());
            let p = probabilities_from_theta(&theta, &nu).unwrap();
            for (a, b) in lp.iter().zip(p.joint()) {
                assert!((a.exp() - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn g_times_t_is_identity() {
        for h in 1..8 {
            assert_eq!(g_matrix(h) * t_matrix(h), DMatrix::identity(h, h));
        }
    }

    #[test]
    fn u_examples() {
        let t = ThetaParams::zeros(2, 2);
        let u = normalization_u(&t, &[0.5, 0.5]).unwrap();
        assert!((u + 2.0 * 2f64.ln()).abs() < 1e-15);
        for (rows, cols) in [(3, 4), (5, 2)] {
            let t = ThetaParams::zeros(rows, cols);
            let nu = vec![1.0 / rows as f64; rows];
            let u = normalization_u(&t, &nu).unwrap();
            assert!((u + (rows as f64).ln() + (cols as f64).ln()).abs() < 1e-14);
            assert!(row_terms_u1(&t, &nu).unwrap().iter().all(|v| v.abs() < 1e-15));
        }
        let u1 = row_terms_u1(&ThetaParams::zeros(2, 3), &[0.25, 0.75]).unwrap();
        assert!((u1[0] - (1.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn u_for_example_null_fit() {
        // theta2(j) = log(N_.j / N_.J) for the homogeneous fit
        let t = ThetaParams::new(
            vec![(240.0f64 / 48.0).ln(), (129.0f64 / 48.0).ln()],
            vec![0.0; 6],
            4,
            3,
        )
        .unwrap();
        let nu = example().row_fractions();
        let u = normalization_u(&t, &nu).unwrap();
        let expected = (107.0f64 / 417.0).ln() - (417.0f64 / 48.0).ln();
        assert!((u - expected).abs() < 1e-12);
        assert!((u + 3.5222).abs() < 1e-4);
    }

    #[test]
    fn probabilities_from_example_constrained_fit() {
        let t = ThetaParams::new(
            vec![1.1977, 0.8650],
            vec![0.9983, 0.4501, 0.6376, 0.0894, 0.1916, 0.0894],
            4,
            3,
        )
        .unwrap();
        let p = probabilities_from_theta(&t, &example().row_fractions()).unwrap();
        let expected = [
            0.1509, 0.0625, 0.0168, 0.1585, 0.0657, 0.0253, 0.1391, 0.0900, 0.0347, 0.1271,
            0.0911, 0.0384,
        ];
        for (a, b) in p.joint().iter().zip(expected) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        let back = theta_from_probabilities(&p).unwrap();
        for (a, b) in back.to_vec().iter().zip(t.to_vec()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_probabilities() {
        let p = probabilities_from_theta(&ThetaParams::zeros(3, 4), &[1.0 / 3.0; 3]).unwrap();
        assert!(p.joint().iter().all(|v| (v - 1.0 / 12.0).abs() < 1e-15));
        let t = theta_from_probabilities(&p).unwrap();
        assert!(t.to_vec().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn theta_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let rows = rng.random_range(2..6);
            let cols = rng.random_range(2..6);
            let theta = random_theta(&mut rng, rows, cols, 2.0);
            let nu = random_nu(&mut rng, rows);
            let p = probabilities_from_theta(&theta, &nu).unwrap();
            let back = theta_from_probabilities(&p).unwrap();
            for (a, b) in back.to_vec().iter().zip(theta.to_vec()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn row_margins_and_log_odds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let rows = rng.random_range(2..6);
            let cols = rng.random_range(2..6);
            let theta = random_theta(&mut rng, rows, cols, 3.0);
            let nu = random_nu(&mut rng, rows);
            let p = probabilities_from_theta(&theta, &nu).unwrap();
            for (row, &m) in p.joint().chunks(cols).zip(&nu) {
                assert!((row.iter().sum::<f64>() - m).abs() < 1e-12);
            }
            let odds = local_odds_ratios(&p).unwrap();
            let r = constraint_matrix(rows, cols);
            let rt = &r * DVector::from_vec(theta.to_vec());
            for i in 0..rows - 1 {
                for j in 0..cols - 1 {
                    assert!((odds[(i, j)].ln() - rt[i * (cols - 1) + j]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn overflow_guard() {
        let t = ThetaParams { theta2: vec![31.0], theta12: vec![0.0], rows: 2, cols: 2 };
        assert!(matches!(normalization_u(&t, &[0.5, 0.5]), Err(Error::OverflowGuard { .. })));
        assert!(ThetaParams::new(vec![0.0], vec![-40.0], 2, 2).is_err());
    }

    #[test]
    fn saturated_fit_is_stationary() {
        let table = example();
        let pbar = crate::tables::relative_frequencies(&table);
        let theta = theta_from_probabilities(&pbar).unwrap();
        let (_, g) = log_likelihood(&table, &theta).unwrap();
        assert!(g.amax() < 1e-8 * 417.0);
    }

    #[test]
    fn log_likelihood_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let rows = rng.random_range(2..5);
            let cols = rng.random_range(2..5);
            let counts: Vec<u64> = (0..rows * cols).map(|_| rng.random_range(1..40)).collect();
            let table = ContingencyTable::from_flat(counts, rows, cols).unwrap();
            let theta = random_theta(&mut rng, rows, cols, 2.0);
            let (value, _) = log_likelihood(&table, &theta).unwrap();
            let p = probabilities_from_theta(&theta, &table.row_fractions()).unwrap();
            let direct: f64 =
                table.counts().iter().zip(p.joint()).map(|(&c, &q)| c as f64 * q.ln()).sum();
            assert!((value - direct).abs() < 1e-9, "{value} vs {direct}");
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let rows = rng.random_range(2..5);
            let cols = rng.random_range(2..5);
            let counts: Vec<u64> = (0..rows * cols).map(|_| rng.random_range(1..40)).collect();
            let table = ContingencyTable::from_flat(counts, rows, cols).unwrap();
            let theta = random_theta(&mut rng, rows, cols, 2.0);
            let (_, g) = log_likelihood(&table, &theta).unwrap();
            let base = theta.to_vec();
            let h = 1e-5;
            for k in 0..base.len() {
                let mut up = base.clone();
                let mut dn = base.clone();
                up[k] += h;
                dn[k] -= h;
                let fu = log_likelihood(&table, &ThetaParams::from_vec(&up, rows, cols).unwrap())
                    .unwrap()
                    .0;
                let fd = log_likelihood(&table, &ThetaParams::from_vec(&dn, rows, cols).unwrap())
                    .unwrap()
                    .0;
                let numeric = (fu - fd) / (2.0 * h);
                let scale = g[k].abs().max(1.0);
                assert!((numeric - g[k]).abs() / scale < 1e-6, "{numeric} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn log_likelihood_is_concave() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let table = example();
        for _ in 0..100 {
            let a = random_theta(&mut rng, 4, 3, 3.0);
            let b = random_theta(&mut rng, 4, 3, 3.0);
            let t: f64 = rng.random_range(0.01..0.99);
            let mix: Vec<f64> =
                a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            let mix = ThetaParams::from_vec(&mix, 4, 3).unwrap();
            let la = log_likelihood(&table, &a).unwrap().0;
            let lb = log_likelihood(&table, &b).unwrap().0;
            let lm = log_likelihood(&table, &mix).unwrap().0;
            assert!(lm >= t * la + (1.0 - t) * lb - 1e-9);
        }
    }
}

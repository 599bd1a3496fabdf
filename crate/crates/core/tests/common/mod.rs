#![allow(dead_code)]

use lrorder::ContingencyTable;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Duodenal ulcer data: four operations by three side-effect grades.
pub const EXAMPLE: [[i64; 3]; 4] = [[61, 28, 7], [68, 23, 13], [58, 40, 12], [53, 38, 16]];

pub const EXAMPLE_CSV: &str = "61,28,7\n68,23,13\n58,40,12\n53,38,16\n";

pub const THETA2_TILDE: [f64; 2] = [1.1977, 0.8650];
pub const THETA12_TILDE: [f64; 6] = [0.9983, 0.4501, 0.6376, 0.0894, 0.1916, 0.0894];

pub const P_TILDE: [f64; 12] =
    [0.1509, 0.0625, 0.0168, 0.1585, 0.0657, 0.0253, 0.1391, 0.0900, 0.0347, 0.1271, 0.0911, 0.0384];
pub const P_HAT: [f64; 12] =
    [0.1325, 0.0712, 0.0265, 0.1435, 0.0772, 0.0287, 0.1518, 0.0816, 0.0304, 0.1477, 0.0794, 0.0295];

pub const WEIGHTS: [f64; 7] =
    [0.0006103103, 0.009753533, 0.06122672, 0.1953851, 0.3353725, 0.2949007, 0.1028136];

pub const LAMBDAS: [&str; 8] = ["-1.5", "-1", "-0.5", "0", "2/3", "1", "1.5", "2"];
pub const T_STATS: [f64; 8] = [9.4681, 9.1918, 8.9535, 8.7497, 8.5262, 8.4334, 8.3160, 8.2230];
pub const T_PVALUES: [f64; 8] = [0.0123, 0.0139, 0.0155, 0.0170, 0.0188, 0.0196, 0.0206, 0.0215];
pub const S_STATS: [f64; 8] = [9.1282, 8.9774, 8.8520, 8.7497, 8.6463, 8.6076, 8.5650, 8.5399];
pub const S_PVALUES: [f64; 8] = [0.0143, 0.0153, 0.0162, 0.0170, 0.0178, 0.0181, 0.0184, 0.0186];

pub const CRITICAL_05: f64 = 6.34;

/// Local odds ratios for delta in {0.1, 0.5, 1, 1.5}, rows (11, 12, 21, 22, 31, 32).
pub const ODDS_TABLE: [(f64, [f64; 6]); 4] = [
    (0.1, [1.091, 1.069, 1.083, 1.055, 1.077, 1.045]),
    (0.5, [1.333, 1.125, 1.250, 1.066, 1.200, 1.042]),
    (1.0, [1.500, 1.111, 1.333, 1.050, 1.250, 1.029]),
    (1.5, [1.600, 1.094, 1.375, 1.039, 1.273, 1.021]),
];

/// Exact sizes in scenario 3 for T_{2/3}, T_1, S_{2/3}, S_1.
pub const SCENARIO3_SIZES: [f64; 4] = [0.0477, 0.0474, 0.0485, 0.0479];

pub fn example() -> ContingencyTable {
    ContingencyTable::from_counts(&EXAMPLE).unwrap()
}

pub fn random_table<R: Rng>(rng: &mut R, rows: usize, cols: usize, max: u64) -> ContingencyTable {
    loop {
        let counts: Vec<u64> = (0..rows * cols).map(|_| rng.random_range(1..=max)).collect();
        if let Ok(t) = ContingencyTable::from_flat(counts, rows, cols) {
            return t;
        }
    }
}

/// Likelihood ratio statistic written out cell by cell:
/// `2 sum N_ij log(p_tilde_ij / p_hat_ij)`.
pub fn direct_lrt(table: &ContingencyTable, p_tilde: &[f64], p_hat: &[f64]) -> f64 {
    2.0 * table
        .counts()
        .iter()
        .zip(p_tilde.iter().zip(p_hat))
        .filter(|(n, _)| **n > 0)
        .map(|(&n, (t, h))| n as f64 * (t / h).ln())
        .sum::<f64>()
}

/// Pearson statistic `n sum (p_tilde - p_hat)^2 / p_hat`.
pub fn direct_pearson(n: f64, p_tilde: &[f64], p_hat: &[f64]) -> f64 {
    n * p_tilde.iter().zip(p_hat).map(|(t, h)| (t - h).powi(2) / h).sum::<f64>()
}

/// Minimizer of `(z - x)^T H (z - x)` over `x >= 0` found by checking the
/// KKT conditions of every one of the `2^k` candidate supports.
pub fn brute_force_projection(h: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
    let k = h.nrows();
    let c = h * z;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << k) {
        let free: Vec<usize> = (0..k).filter(|&i| mask & (1 << i) != 0).collect();
        let mut x = DVector::zeros(k);
        if !free.is_empty() {
            let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let cf = DVector::from_fn(free.len(), |a, _| c[free[a]]);
            let Some(s) = hff.cholesky().map(|ch| ch.solve(&cf)) else { continue };
            if s.iter().any(|&v| v < 0.0) {
                continue;
            }
            for (a, &i) in free.iter().enumerate() {
                x[i] = s[a];
            }
        }
        let grad = h * &x - &c;
        if (0..k).filter(|i| mask & (1 << i) == 0).all(|i| grad[i] >= -1e-9) {
            let d = z - &x;
            let obj = (d.transpose() * h * &d)[(0, 0)];
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, x));
            }
        }
    }
    best.expect("a KKT point exists").1
}

pub fn random_pd<R: Rng>(rng: &mut R, k: usize) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(k, k) * 0.1
}

pub fn random_simplex<R: Rng>(rng: &mut R, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(floor..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

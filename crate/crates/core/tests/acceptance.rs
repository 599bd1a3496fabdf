//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! `PASS` or `FAIL` line; the process fails if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use lrorder::chibar::{estimate_weights, h_matrices, nonneg_projection, weights_by_subsets};
use lrorder::cli::{analyze, AnalysisOptions};
use lrorder::divergence::{statistic_s, statistic_t, DivergenceSpec, Family, Lambda};
use lrorder::estimate::{fit_table, mle_h0, mle_h1, FitOptions, DEFAULT_MAX_ITER, DEFAULT_TOL};
use lrorder::loglinear::{log_likelihood, ThetaParams};
use lrorder::simulate::{run_study, theoretical_local_odds, Scenario, SimulationConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

fn worked_example_mle() -> Outcome {
    let table = example();
    let start = Instant::now();
    let (_, hat) = mle_h0(&table).unwrap();
    let fit = mle_h1(&table, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let elapsed = start.elapsed();
    let d2 = max_abs_diff(&fit.theta.theta2, &THETA2_TILDE);
    let d12 = max_abs_diff(&fit.theta.theta12, &THETA12_TILDE);
    let dt = max_abs_diff(fit.fitted.joint(), &P_TILDE);
    let dh = max_abs_diff(hat.joint(), &P_HAT);
    let pass = d2 <= 1e-3 && d12 <= 1e-3 && dt <= 5e-4 && dh <= 5e-4 && elapsed < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "theta2 {d2:.1e}, theta12 {d12:.1e}, p_tilde {dt:.1e}, p_hat {dh:.1e}, {:.1} ms",
            elapsed.as_secs_f64() * 1e3
        ),
    )
}

fn exact_matrices() -> Outcome {
    let table = example();
    let (_, hat) = mle_h0(&table).unwrap();
    let hm = h_matrices(hat.row_fractions(), &hat.conditional()[0]).unwrap();
    let rel = |x: f64, exact: f64| ((x - exact) / exact).abs();
    let r_knu = rel(hm.k_nu[(0, 0)], 3475.0 / 416.0);
    let r_kpi = rel(hm.k_pi[(0, 0)], 17097.0 / 3440.0);
    let r_h = rel(hm.h[(0, 0)], 11_882_415.0 / 286_208.0);
    let r_hinv = rel(hm.h_inv[(0, 0)], 16_161_280.0 / 373_301_041.0);
    let ident = (&hm.h * &hm.h_inv - DMatrix::identity(6, 6)).amax();
    let pass = r_knu <= 1e-12 && r_kpi <= 1e-12 && r_h <= 1e-9 && r_hinv <= 1e-9 && ident <= 1e-10;
    outcome(
        pass,
        format!("K(nu) {r_knu:.1e}, K(pi) {r_kpi:.1e}, H {r_h:.1e}, H^-1 {r_hinv:.1e}, H H^-1 - I {ident:.1e}"),
    )
}

fn example_weights() -> Outcome {
    let table = example();
    let (_, hat) = mle_h0(&table).unwrap();
    let start = Instant::now();
    let w = single_thread(|| estimate_weights(hat.row_fractions(), &hat.conditional()[0], 1_000_000, 0))
        .unwrap();
    let elapsed = start.elapsed();
    let dev = max_abs_diff(&w.w, &WEIGHTS);
    let tally: u64 = w.counts.as_ref().unwrap().iter().sum();
    let total: f64 = w.w.iter().sum();
    let alt = w.alternating_sum();
    let pass = dev <= 0.005
        && tally == 1_000_000
        && (total - 1.0).abs() <= 1e-15
        && alt.abs() <= 0.005
        && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "max dev {dev:.4}, tallies {tally}, sum - 1 = {:.1e}, alternating {alt:.4}, {:.1} s on one thread",
            total - 1.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn statistics_and_pvalues() -> Outcome {
    let report = analyze(&example(), &AnalysisOptions::default()).unwrap();
    let mut stat_dev: f64 = 0.0;
    let mut p_dev: f64 = 0.0;
    for (k, label) in LAMBDAS.iter().enumerate() {
        for (family, stats, ps) in [(Family::T, &T_STATS, &T_PVALUES), (Family::S, &S_STATS, &S_PVALUES)] {
            let o = report
                .outcomes
                .iter()
                .find(|o| o.family == family && o.lambda_label == *label)
                .unwrap();
            stat_dev = stat_dev.max((o.statistic - stats[k]).abs());
            p_dev = p_dev.max((o.p_value - ps[k]).abs());
        }
    }
    let q = report.quantile.unwrap();
    let pass = report.outcomes.len() == 16 && stat_dev <= 0.002 && p_dev <= 0.003 && (q - CRITICAL_05).abs() <= 0.05;
    outcome(pass, format!("statistics {stat_dev:.1e}, p-values {p_dev:.1e}, critical value {q:.4}"))
}

fn classical_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut dt, mut ds): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let rows = rng.random_range(2..6);
        let cols = rng.random_range(2..5);
        let table = random_table(&mut rng, rows, cols, 30);
        let f = fit_table(&table, &FitOptions::default()).unwrap();
        let (tilde, hat) = (f.fit.fitted.joint(), f.hat.joint());
        let t0 = statistic_t(&f.p_bar, tilde, hat, f.n, &DivergenceSpec::Power(Lambda::new(0.0))).unwrap();
        let s1 = statistic_s(tilde, hat, f.n, &DivergenceSpec::Power(Lambda::new(1.0))).unwrap();
        dt = dt.max((t0 - direct_lrt(&table, tilde, hat)).abs());
        ds = ds.max((s1 - direct_pearson(f.n, tilde, hat)).abs());
    }
    outcome(dt <= 1e-8 && ds <= 1e-10, format!("T_0 vs G^2 {dt:.1e}, S_1 vs X^2 {ds:.1e}"))
}

fn nnqp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let h = random_pd(&mut rng, 6);
        let z = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
        let (x, _) = nonneg_projection(&h, &z).unwrap();
        worst = worst.max((x - brute_force_projection(&h, &z)).amax());
    }
    outcome(worst <= 1e-8, format!("max deviation {worst:.1e} over 200 instances"))
}

fn weight_methods_agree() -> Outcome {
    let (_, hat) = mle_h0(&example()).unwrap();
    let mut cases = vec![(hat.row_fractions().to_vec(), hat.conditional()[0].clone())];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let rows = rng.random_range(2..5);
        let cols = rng.random_range(2..5);
        cases.push((random_simplex(&mut rng, rows, 0.1), random_simplex(&mut rng, cols, 0.1)));
    }
    let mut worst: f64 = 0.0;
    for (k, (nu, pi)) in cases.iter().enumerate() {
        let mc = estimate_weights(nu, pi, 200_000, 100 + k as u64).unwrap();
        let sub = weights_by_subsets(nu, pi, 200_000, 200 + k as u64).unwrap();
        worst = worst.max(max_abs_diff(&mc.w, &sub.w));
    }
    outcome(worst <= 0.01, format!("max component gap {worst:.4} over {} cases", cases.len()))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let rows = rng.random_range(2..6);
        let cols = rng.random_range(2..5);
        let table = random_table(&mut rng, rows, cols, 50);
        let len = (cols - 1) * rows;
        let base: Vec<f64> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let theta = ThetaParams::from_vec(&base, rows, cols).unwrap();
        let (_, g) = log_likelihood(&table, &theta).unwrap();
        let h = 1e-5;
        for k in 0..len {
            let eval = |shift: f64| {
                let mut v = base.clone();
                v[k] += shift;
                log_likelihood(&table, &ThetaParams::from_vec(&v, rows, cols).unwrap()).unwrap().0
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max((numeric - g[k]).abs() / g[k].abs().max(1.0));
        }
    }
    outcome(worst < 1e-6, format!("max relative error {worst:.1e} over 50 instances"))
}

fn odds_table() -> Outcome {
    let mut worst: f64 = (theoretical_local_odds(0.0, 4, 3).unwrap().add_scalar(-1.0)).amax();
    for (delta, expected) in ODDS_TABLE {
        let t = theoretical_local_odds(delta, 4, 3).unwrap();
        for (k, e) in expected.iter().enumerate() {
            worst = worst.max((t[(k / 2, k % 2)] - e).abs());
        }
    }
    outcome(worst < 1e-3, format!("max deviation {worst:.1e} from the displayed three decimals"))
}

fn simulation_spot_check() -> Outcome {
    let start = Instant::now();
    let mut config = SimulationConfig::new(vec![Scenario::preset(3).unwrap()]);
    config.deltas = vec![0.0];
    config.lambdas = vec![Lambda::ratio(2, 3), Lambda::new(1.0)];
    config.reps = 10_000;
    config.weight_reps = 10_000;
    let sizes = run_study(&config).unwrap();
    let keys = [(Family::T, 2.0 / 3.0), (Family::T, 1.0), (Family::S, 2.0 / 3.0), (Family::S, 1.0)];
    let rates: Vec<f64> =
        keys.iter().map(|&(f, l)| sizes.find("3", f, l, 0.0).unwrap().rejection_rate).collect();
    let size_dev = max_abs_diff(&rates, &SCENARIO3_SIZES);

    let mut power = SimulationConfig::new(vec![Scenario::preset(4).unwrap()]);
    power.deltas = vec![0.1, 1.5];
    power.reps = 2000;
    let power = run_study(&power).unwrap();
    let monotone = power
        .cells
        .iter()
        .filter(|c| c.delta == 0.1)
        .all(|c| power.find("4", c.family, c.lambda.value(), 1.5).unwrap().rejection_rate > c.rejection_rate);
    let elapsed = start.elapsed();
    let pass = size_dev <= 0.010 && monotone && elapsed <= Duration::from_secs(30 * 60);
    outcome(
        pass,
        format!(
            "sizes {:?} (max dev {size_dev:.4}), power increasing in delta: {monotone}, {:.0} s",
            rates,
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let (_, hat) = mle_h0(&example()).unwrap();
    let weights = |threads| {
        with_threads(threads, || estimate_weights(hat.row_fractions(), &hat.conditional()[0], 50_000, 11))
            .unwrap()
            .to_json()
            .unwrap()
    };
    let w1 = weights(1);
    let weights_same = w1 == weights(1) && w1 == weights(4);
    let mut config = SimulationConfig::new(vec![Scenario::preset(1).unwrap()]);
    config.deltas = vec![0.0, 0.5];
    config.reps = 200;
    config.weight_reps = 1000;
    config.seed = 3;
    let csv = |threads| with_threads(threads, || run_study(&config)).unwrap().to_csv();
    let c1 = csv(1);
    let csv_same = c1 == csv(1) && c1 == csv(4);
    outcome(
        weights_same && csv_same,
        format!("weights JSON identical: {weights_same}, simulation CSV identical: {csv_same}"),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("worked-example MLE", worked_example_mle),
        ("exact matrix algebra", exact_matrices),
        ("chi-bar weights", example_weights),
        ("statistics and p-values", statistics_and_pvalues),
        ("classical equivalences", classical_equivalences),
        ("NNQP oracle", nnqp_oracle),
        ("weight methods cross-check", weight_methods_agree),
        ("gradient check", gradient_check),
        ("local odds table", odds_table),
        ("simulation spot-check", simulation_spot_check),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, k + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Size and power study over a family of ordered alternatives.
//!
//! Row `i` of the truth at `delta` is proportional to
//! `1 + i (j - 1) delta`, `j = 1..J`, so `delta = 0` is homogeneity and every
//! local odds ratio is at least one for `delta > 0`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::chibar::{chibar_pvalue, estimate_weights_serial, ln_gamma};
use crate::divergence::{statistic_s, statistic_t, DivergenceSpec, Family, Lambda};
use crate::error::{Error, Result};
use crate::estimate::{fit_table, FitOptions, ZeroCellPolicy};
use crate::rng::{mix, Streams};
use crate::tables::ContingencyTable;

/// Dale's tolerance on the logit scale.
pub const DALE_E: f64 = 0.35;

pub const DEFAULT_WEIGHT_REPS: u64 = 10_000;

pub fn default_deltas() -> Vec<f64> {
    vec![0.0, 0.1, 0.5, 1.0, 1.5]
}

/// Row sizes `(n_1, .., n_I)` with a label for reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub label: String,
    pub sizes: Vec<u64>,
}

impl Scenario {
    /// Presets 1 to 4: sizes in ratio 4:6:8:10 with totals 28, 56, 84, 112.
    pub fn preset(index: usize) -> Result<Self> {
        let m = match index {
            1..=4 => index as u64,
            _ => return Err(Error::Config(format!("scenario presets are 1 to 4, got {index}"))),
        };
        Ok(Self { label: index.to_string(), sizes: vec![4 * m, 6 * m, 8 * m, 10 * m] })
    }

    pub fn custom(sizes: Vec<u64>) -> Self {
        let label = sizes.iter().map(u64::to_string).collect::<Vec<_>>().join(":");
        Self { label, sizes }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub scenarios: Vec<Scenario>,
    pub deltas: Vec<f64>,
    pub lambdas: Vec<Lambda>,
    pub alpha: f64,
    pub reps: u64,
    pub weight_reps: u64,
    pub seed: u64,
    pub cols: usize,
}

impl SimulationConfig {
    pub fn new(scenarios: Vec<Scenario>) -> Self {
        Self {
            scenarios,
            deltas: default_deltas(),
            lambdas: Lambda::default_grid(),
            alpha: 0.05,
            reps: 1000,
            weight_reps: DEFAULT_WEIGHT_REPS,
            seed: 0,
            cols: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.weight_reps == 0 {
            return bad("weight reps must be at least 1".into());
        }
        // alpha = 1 is allowed as a plumbing check: it rejects whenever p < 1.
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.scenarios.is_empty() || self.deltas.is_empty() || self.lambdas.is_empty() {
            return bad("scenarios, deltas and lambdas must be nonempty".into());
        }
        for s in &self.scenarios {
            if s.sizes.len() < 2 || s.sizes.contains(&0) {
                return bad(format!("scenario {} needs at least two positive sizes", s.label));
            }
        }
        if let Some(d) = self.deltas.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
            return Err(Error::NegativeDelta(*d));
        }
        if self.cols < 2 {
            return bad("need at least two response categories".into());
        }
        Ok(())
    }
}

/// Truth rows `pi_i(delta)`, `pi_ij` proportional to `1 + i (j - 1) delta`.
pub fn truth_probabilities(delta: f64, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>> {
    if !(delta >= 0.0) {
        return Err(Error::NegativeDelta(delta));
    }
    Ok((1..=rows)
        .map(|i| {
            let raw: Vec<f64> = (1..=cols).map(|j| 1.0 + (i * (j - 1)) as f64 * delta).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect())
}

/// `theta_ij(delta) = [(1 + i(j-1)d) / (1 + (i+1)(j-1)d)] [(1 + (i+1)j d) / (1 + i j d)]`.
pub fn theoretical_local_odds(delta: f64, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if !(delta >= 0.0) {
        return Err(Error::NegativeDelta(delta));
    }
    Ok(DMatrix::from_fn(rows - 1, cols - 1, |a, b| {
        let (i, j) = ((a + 1) as f64, (b + 1) as f64);
        (1.0 + i * (j - 1.0) * delta) / (1.0 + (i + 1.0) * (j - 1.0) * delta)
            * (1.0 + (i + 1.0) * j * delta)
            / (1.0 + i * j * delta)
    }))
}

/// Binomial draw by inversion. Small means search upward from zero; larger
/// ones locate the mode first and walk from there.
pub fn binomial<R: Rng>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if p > 0.5 {
        return n - binomial(n, 1.0 - p, rng);
    }
    let u: f64 = rng.random();
    let q = 1.0 - p;
    let ratio = p / q;
    let nf = n as f64;
    if nf * p < 30.0 {
        let mut pmf = q.powf(nf);
        let mut cdf = pmf;
        let mut k = 0;
        while u > cdf && k < n {
            pmf *= ratio * (n - k) as f64 / (k + 1) as f64;
            k += 1;
            cdf += pmf;
        }
        return k;
    }
    let m = (((n + 1) as f64 * p).floor() as u64).min(n);
    let mf = m as f64;
    let pm = (ln_gamma(nf + 1.0) - ln_gamma(mf + 1.0) - ln_gamma(nf - mf + 1.0)
        + mf * p.ln()
        + (nf - mf) * q.ln())
    .exp();
    // F(m) by summing the left tail until it stops mattering
    let mut f = pm;
    let mut t = pm;
    let mut k = m;
    while k > 0 {
        t *= k as f64 / ((n - k + 1) as f64 * ratio);
        k -= 1;
        f += t;
        if t < 1e-17 * f {
            break;
        }
    }
    let mut pmf = pm;
    let mut k = m;
    if u <= f {
        let mut cdf = f;
        loop {
            if k == 0 {
                return 0;
            }
            cdf -= pmf;
            if u > cdf {
                return k;
            }
            pmf *= k as f64 / ((n - k + 1) as f64 * ratio);
            k -= 1;
        }
    }
    let mut cdf = f;
    while u > cdf && k < n {
        pmf *= ratio * (n - k) as f64 / (k + 1) as f64;
        k += 1;
        cdf += pmf;
    }
    k
}

/// One multinomial row through sequential conditional binomials.
pub fn multinomial<R: Rng>(n: u64, pi: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; pi.len()];
    let mut left = n;
    let mut mass = 1.0;
    for (j, &p) in pi.iter().enumerate() {
        if j + 1 == pi.len() {
            out[j] = left;
            break;
        }
        let cond = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let x = binomial(left, cond, rng);
        out[j] = x;
        left -= x;
        mass -= p;
        if left == 0 {
            break;
        }
    }
    out
}

/// Independent multinomial rows of sizes `sizes`.
pub fn sample_table<R: Rng>(pis: &[Vec<f64>], sizes: &[u64], rng: &mut R) -> Result<ContingencyTable> {
    if pis.len() != sizes.len() {
        return Err(Error::LengthMismatch { left: pis.len(), right: sizes.len() });
    }
    let cols = pis.first().map(Vec::len).unwrap_or(0);
    let mut counts = Vec::with_capacity(pis.len() * cols);
    for (pi, &n) in pis.iter().zip(sizes) {
        counts.extend(multinomial(n, pi, rng));
    }
    ContingencyTable::from_flat(counts, pis.len(), cols)
}

/// `|logit(1 - alpha_hat) - logit(1 - alpha)| <= e`.
pub fn dale_criterion(alpha_hat: f64, alpha: f64, e: f64) -> bool {
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let d = (logit(1.0 - alpha_hat) - logit(1.0 - alpha)).abs();
    d <= e
}

/// One `(scenario, family, lambda, delta)` cell of the study.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub scenario: String,
    pub family: Family,
    pub lambda: Lambda,
    pub delta: f64,
    pub rejections: u64,
    pub reps: u64,
    pub rejection_rate: f64,
    /// Dale screen of the `delta = 0` rate, repeated on every row of the
    /// same `(scenario, family, lambda)`.
    pub dale_pass: Option<bool>,
    pub rho: Option<f64>,
    pub rho_star: Option<f64>,
    /// Degenerate tables redrawn for this `(scenario, delta)`.
    pub resamples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizePowerReport {
    pub alpha: f64,
    pub reps: u64,
    pub weight_reps: u64,
    pub seed: u64,
    pub cells: Vec<CellResult>,
}

impl SizePowerReport {
    pub fn find(&self, scenario: &str, family: Family, lambda: f64, delta: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.scenario == scenario && c.family == family && c.lambda.value() == lambda && c.delta == delta
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("scenario,family,lambda,delta,rejection_rate,dale_pass,rho,rho_star,resamples\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.scenario,
                c.family,
                c.lambda,
                c.delta,
                c.rejection_rate,
                c.dale_pass.map(|b| b.to_string()).unwrap_or_default(),
                opt(c.rho),
                opt(c.rho_star),
                c.resamples
            );
        }
        out
    }
}

struct Replicate {
    rejected: Vec<bool>,
    resamples: u64,
}

fn study_key(seed: u64, scenario: &Scenario, delta: f64) -> u64 {
    let sizes = scenario.sizes.iter().fold(mix(seed, scenario.sizes.len() as u64), |k, &n| mix(k, n));
    mix(sizes, delta.to_bits())
}

fn replicate(
    config: &SimulationConfig,
    scenario: &Scenario,
    pis: &[Vec<f64>],
    streams: &Streams,
    r: u64,
) -> Result<Replicate> {
    let mut rng = streams.stream(r);
    let mut resamples = 0;
    let table = loop {
        let t = sample_table(pis, &scenario.sizes, &mut rng)?;
        if t.column_totals().contains(&0) {
            resamples += 1;
            continue;
        }
        break t;
    };
    let weight_seed: u64 = rng.random();
    let opts = FitOptions { zero_cells: ZeroCellPolicy::Boundary, ..Default::default() };
    let fitted = fit_table(&table, &opts)?;
    let pi_hat = &fitted.hat.conditional()[0];
    let weights = estimate_weights_serial(fitted.hat.row_fractions(), pi_hat, config.weight_reps, weight_seed)?;
    let tilde = fitted.fit.fitted.joint();
    let hat = fitted.hat.joint();
    let mut rejected = Vec::with_capacity(2 * config.lambdas.len());
    for family in [Family::T, Family::S] {
        for l in &config.lambdas {
            let spec = DivergenceSpec::Power(*l);
            let stat = match family {
                Family::T => statistic_t(&fitted.p_bar, tilde, hat, fitted.n, &spec)?,
                Family::S => statistic_s(tilde, hat, fitted.n, &spec)?,
            };
            rejected.push(chibar_pvalue(stat, &weights) < config.alpha);
        }
    }
    Ok(Replicate { rejected, resamples })
}

/// Runs every `(scenario, delta)` cell; replication `r` of a cell always
/// uses the same random stream, so results do not depend on threading.
pub fn run_study(config: &SimulationConfig) -> Result<SizePowerReport> {
    config.validate()?;
    let mut cells = Vec::new();
    for scenario in &config.scenarios {
        for &delta in &config.deltas {
            let pis = truth_probabilities(delta, scenario.sizes.len(), config.cols)?;
            let streams = Streams::new(study_key(config.seed, scenario, delta));
            let reps: Vec<Replicate> = (0..config.reps)
                .into_par_iter()
                .map(|r| replicate(config, scenario, &pis, &streams, r))
                .collect::<Result<_>>()?;
            let resamples = reps.iter().map(|r| r.resamples).sum();
            let mut slot = 0;
            for family in [Family::T, Family::S] {
                for l in &config.lambdas {
                    let rejections = reps.iter().filter(|r| r.rejected[slot]).count() as u64;
                    slot += 1;
                    cells.push(CellResult {
                        scenario: scenario.label.clone(),
                        family,
                        lambda: *l,
                        delta,
                        rejections,
                        reps: config.reps,
                        rejection_rate: rejections as f64 / config.reps as f64,
                        dale_pass: None,
                        rho: None,
                        rho_star: None,
                        resamples,
                    });
                }
            }
        }
    }
    let mut report = SizePowerReport {
        alpha: config.alpha,
        reps: config.reps,
        weight_reps: config.weight_reps,
        seed: config.seed,
        cells,
    };
    fill_dale(&mut report);
    if let Ok(filled) = relative_efficiencies(&report) {
        report = filled;
    }
    Ok(report)
}

fn fill_dale(report: &mut SizePowerReport) {
    let alpha = report.alpha;
    let sizes: BTreeMap<(String, Family, String), f64> = report
        .cells
        .iter()
        .filter(|c| c.delta == 0.0)
        .map(|c| ((c.scenario.clone(), c.family, c.lambda.to_string()), c.rejection_rate))
        .collect();
    for c in &mut report.cells {
        if alpha < 1.0 {
            c.dale_pass = sizes
                .get(&(c.scenario.clone(), c.family, c.lambda.to_string()))
                .map(|&a| dale_criterion(a, alpha, DALE_E));
        }
    }
}

/// Fills `rho` (baseline `T` at `lambda = 0`) and `rho_star` (baseline `S`
/// at `lambda = 1`) for every `delta > 0` row:
/// `rho = [(beta - alpha_hat) - (beta_0 - alpha_hat_0)] / (beta_0 - alpha_hat_0)`.
pub fn relative_efficiencies(report: &SizePowerReport) -> Result<SizePowerReport> {
    let rate = |scenario: &str, family: Family, lambda: f64, delta: f64| {
        report.find(scenario, family, lambda, delta).map(|c| c.rejection_rate)
    };
    let mut out = report.clone();
    for c in &mut out.cells {
        if c.delta == 0.0 {
            c.rho = None;
            c.rho_star = None;
            continue;
        }
        let own_size = rate(&c.scenario, c.family, c.lambda.value(), 0.0)
            .ok_or_else(|| Error::MissingBaseline(format!("delta = 0 for {} {}", c.family, c.lambda)))?;
        let gain = c.rejection_rate - own_size;
        let against = |family: Family, lambda: f64, name: &str| -> Result<Option<f64>> {
            let beta = rate(&c.scenario, family, lambda, c.delta)
                .ok_or_else(|| Error::MissingBaseline(name.to_string()))?;
            let size = rate(&c.scenario, family, lambda, 0.0)
                .ok_or_else(|| Error::MissingBaseline(format!("{name} at delta = 0")))?;
            let base = beta - size;
            Ok((base > 0.0).then(|| (gain - base) / base))
        };
        let rho = against(Family::T, 0.0, "T_0")?;
        let rho_star = against(Family::S, 1.0, "S_1")?;
        c.rho = rho;
        c.rho_star = rho_star;
    }
    Ok(out)
}

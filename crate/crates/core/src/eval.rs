//! Ground-truth metrics and Monte Carlo experiments on simulated paths.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{self, ExtendedParams, TrackConfig};
use crate::simulate::{self, HeteroSeries, PathResult, Scenario};
use crate::tuning;

pub const SCHEMA_VERSION: u32 = 1;

/// Stream tag for the held-out tuning path in [`derive_seed`].
const TUNING_STREAM: u64 = u64::MAX;

/// First index past the initialization boundary layer:
/// `min(ceil(c n^{(2k+2)/(2k+3)}), floor(n/4))`.
///
/// # Panics
/// If `n < 2` or `c` is not positive.
pub fn burn_in_index(n: usize, k: usize, c: f64) -> usize {
    assert!(n >= 2 && c > 0.0, "burn-in needs n >= 2 and c > 0");
    let raw = c * (n as f64).powf((2 * k + 2) as f64 / (2 * k + 3) as f64);
    let nearest = raw.round();
    // Exact powers like 1000^{2/3} come out a hair below the integer.
    let ceil = if (raw - nearest).abs() <= 1e-9 * raw.max(1.0) { nearest } else { raw.ceil() };
    (ceil as usize).min(n / 4)
}

/// `-2(k+1)/(2k+3)`.
pub fn theoretical_slope(k: usize) -> f64 {
    -2.0 * (k + 1) as f64 / (2 * k + 3) as f64
}

/// Mean squared error against the true interval-average volatility over
/// indices `>= burn_in`.
pub fn vn_metric(v_true: &[f64], estimates: &[f64], burn_in: usize) -> Result<f64> {
    if v_true.len() != estimates.len() {
        return Err(Error::arg(format!(
            "length mismatch: {} true values, {} estimates",
            v_true.len(),
            estimates.len()
        )));
    }
    if burn_in >= v_true.len() {
        return Err(Error::arg(format!("burn-in {burn_in} leaves nothing of {} values", v_true.len())));
    }
    let tail = v_true.len() - burn_in;
    let sum: f64 = v_true[burn_in..].iter().zip(&estimates[burn_in..]).map(|(v, e)| (v - e) * (v - e)).sum();
    Ok(sum / tail as f64)
}

/// Kendall's tau-b (tie-corrected) rank correlation.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::arg("kendall tau needs two sequences of equal length >= 2"));
    }
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = (a[i] - a[j]).partial_cmp(&0.0);
            let db = (b[i] - b[j]).partial_cmp(&0.0);
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Some(Equal), Some(Equal)) => {}
                (Some(Equal), _) => ties_a += 1,
                (_, Some(Equal)) => ties_b += 1,
                (x, y) if x == y => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n1 = (concordant + discordant + ties_a) as f64;
    let n2 = (concordant + discordant + ties_b) as f64;
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::arg("kendall tau is undefined for a constant sequence"));
    }
    Ok((concordant - discordant) as f64 / (n1 * n2).sqrt())
}

/// SplitMix64 finalizer over `(base, stream, index)`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub base_seed: u64,
    /// Boundary-layer scale `c` in [`burn_in_index`].
    pub burn_in_factor: f64,
    /// Number of held-out paths whose mean `S_n` selects θ.
    pub tuning_paths: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self { base_seed: 0, burn_in_factor: 1.0, tuning_paths: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub k: usize,
    pub n_values: Vec<usize>,
    /// Mean post-burn-in `V_n` per sample size.
    pub mse_values: Vec<f64>,
    /// θ tuned on the held-out paths for each sample size.
    pub tuned_thetas: Vec<f64>,
    pub fitted_slope: f64,
    pub theoretical_slope: f64,
    pub seeds_per_n: usize,
}

impl ConvergenceResult {
    /// Columns `n,mse`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "mse"])?;
        for (n, m) in self.n_values.iter().zip(&self.mse_values) {
            w.write_record([n.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Two whitespace-separated columns `ln n`, `ln mse` for plotting tools.
    pub fn write_plot<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# log_n log_mse")?;
        for (n, m) in self.n_values.iter().zip(&self.mse_values) {
            writeln!(out, "{} {}", (*n as f64).ln(), m.ln())?;
        }
        Ok(())
    }
}

fn check_order(scenario: &Scenario, k: usize) -> Result<()> {
    if !scenario.supports_order(k) {
        return Err(Error::Scenario(format!("volatility profile is not smooth enough for order {k}")));
    }
    Ok(())
}

/// Post-burn-in `V_n` of the plain order-`k` filter with a fixed θ.
fn path_vn(path: &PathResult, xs: &[f64], k: usize, theta: f64, c: f64) -> Result<f64> {
    let est = filters::run(xs, &TrackConfig::adaptive(ExtendedParams::pure(k, theta)))?.estimates;
    vn_metric(&path.v_bar, &est, burn_in_index(xs.len(), k, c))
}

fn tuned_theta(scenario: &Scenario, k: usize, n: usize, opts: &ExperimentOptions) -> Result<f64> {
    let paths = (0..opts.tuning_paths.max(1) as u64)
        .map(|h| simulate::generate_path(scenario, n, derive_seed(opts.base_seed, TUNING_STREAM - h, n as u64)))
        .collect::<Result<Vec<_>>>()?;
    if paths.len() == 1 {
        let report = tuning::tune_filter0(&paths[0].xs, k)?;
        return Ok(report.best_params.theta().expect("adaptive report"));
    }
    let (lo, hi) = tuning::stable_theta_range(k, n, tuning::DEFAULT_THETA_RANGE)?;
    let mut failure = None;
    let found = tuning::minimize_scalar(
        |theta| {
            let config = TrackConfig::adaptive(ExtendedParams::pure(k, theta));
            let total: Result<f64> = paths.iter().map(|p| filters::run(&p.xs, &config).map(|r| r.s_n)).sum();
            total.unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        lo,
        hi,
        tuning::TUNE_REL_TOL * hi,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(found?.argmin)
}

/// Empirical rate of the tuned order-`k` filter: for each `n`, θ is tuned
/// once on held-out paths and then evaluated on `seeds` fresh paths.
pub fn convergence_experiment(scenario: &Scenario, k: usize, n_values: &[usize], seeds: usize) -> Result<ConvergenceResult> {
    convergence_experiment_with(scenario, k, n_values, seeds, &ExperimentOptions::default())
}

pub fn convergence_experiment_with(
    scenario: &Scenario,
    k: usize,
    n_values: &[usize],
    seeds: usize,
    opts: &ExperimentOptions,
) -> Result<ConvergenceResult> {
    check_order(scenario, k)?;
    if n_values.len() < 3 || n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("need at least 3 strictly increasing sample sizes"));
    }
    if (n_values[n_values.len() - 1] as f64) < 10.0 * n_values[0] as f64 {
        return Err(Error::arg("sample sizes must span at least one decade"));
    }
    if seeds < 10 {
        return Err(Error::arg(format!("need at least 10 seeds, got {seeds}")));
    }
    let mut mse_values = Vec::with_capacity(n_values.len());
    let mut tuned_thetas = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let theta = tuned_theta(scenario, k, n, opts)?;
        let per_seed = (0..seeds as u64)
            .into_par_iter()
            .map(|j| {
                let path = simulate::generate_path(scenario, n, derive_seed(opts.base_seed, n as u64, j))?;
                path_vn(&path, &path.xs, k, theta, opts.burn_in_factor)
            })
            .collect::<Result<Vec<f64>>>()?;
        tuned_thetas.push(theta);
        mse_values.push(mean(&per_seed));
    }
    let log_n: Vec<f64> = n_values.iter().map(|&n| (n as f64).ln()).collect();
    let log_mse: Vec<f64> = mse_values.iter().map(|m| m.ln()).collect();
    Ok(ConvergenceResult {
        k,
        n_values: n_values.to_vec(),
        fitted_slope: ols_slope(&log_n, &log_mse),
        theoretical_slope: theoretical_slope(k),
        mse_values,
        tuned_thetas,
        seeds_per_n: seeds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingResult {
    pub k: usize,
    pub n: usize,
    pub theta_grid: Vec<f64>,
    pub sn_values: Vec<f64>,
    pub vn_values: Vec<f64>,
    pub kendall_tau: f64,
    pub argmin_match: bool,
}

impl OrderingResult {
    /// Columns `theta,s_n,v_n`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["theta", "s_n", "v_n"])?;
        for i in 0..self.theta_grid.len() {
            w.write_record([
                self.theta_grid[i].to_string(),
                self.sn_values[i].to_string(),
                self.vn_values[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn argmin(values: &[f64]) -> usize {
    values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
}

/// `n` log-spaced values between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

/// `points` log-spaced θ values over the tuning range, clipped to where the
/// order-`k` recursion is discretely stable for sample size `n`.
pub fn default_theta_grid(k: usize, n: usize, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::arg("theta grid needs at least 2 points"));
    }
    let (lo, hi) = tuning::stable_theta_range(k, n, tuning::DEFAULT_THETA_RANGE)?;
    Ok(log_grid(lo, hi, points))
}

/// Mean `S_n` and mean `V_n` per θ over common paths, for the scenario's
/// declared order. Both are taken over the full series.
pub fn ordering_agreement(scenario: &Scenario, theta_grid: &[f64], n: usize, seeds: usize) -> Result<OrderingResult> {
    ordering_agreement_with(scenario, theta_grid, n, seeds, &ExperimentOptions::default())
}

pub fn ordering_agreement_with(
    scenario: &Scenario,
    theta_grid: &[f64],
    n: usize,
    seeds: usize,
    opts: &ExperimentOptions,
) -> Result<OrderingResult> {
    let k = scenario.k;
    check_order(scenario, k)?;
    if theta_grid.len() < 10 || theta_grid.windows(2).any(|w| w[0] >= w[1]) || theta_grid[0] <= 0.0 {
        return Err(Error::arg("theta grid needs at least 10 strictly increasing positive values"));
    }
    if seeds < 10 {
        return Err(Error::arg(format!("need at least 10 seeds, got {seeds}")));
    }
    let per_seed = (0..seeds as u64)
        .into_par_iter()
        .map(|j| {
            let path = simulate::generate_path(scenario, n, derive_seed(opts.base_seed, n as u64, j))?;
            theta_grid
                .iter()
                .map(|&theta| {
                    let r = filters::run(&path.xs, &TrackConfig::adaptive(ExtendedParams::pure(k, theta)))?;
                    Ok((r.s_n, vn_metric(&path.v_bar, &r.estimates, 0)?))
                })
                .collect::<Result<Vec<(f64, f64)>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let m = seeds as f64;
    let sn_values: Vec<f64> = (0..theta_grid.len()).map(|i| per_seed.iter().map(|s| s[i].0).sum::<f64>() / m).collect();
    let vn_values: Vec<f64> = (0..theta_grid.len()).map(|i| per_seed.iter().map(|s| s[i].1).sum::<f64>() / m).collect();
    Ok(OrderingResult {
        k,
        n,
        theta_grid: theta_grid.to_vec(),
        kendall_tau: kendall_tau(&sn_values, &vn_values)?,
        argmin_match: argmin(&sn_values) == argmin(&vn_values),
        sn_values,
        vn_values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceResult {
    pub k: usize,
    pub n_values: Vec<usize>,
    /// Seed-averaged `|V_n(raw) - V_n(clean)| / V_n(raw)` per sample size.
    pub relative_change: Vec<f64>,
}

/// Effect of the drift term `θ_i(Δ)` on the post-burn-in loss: the tuned
/// filter is run on the raw observations and on `X_i - θ_i`.
pub fn nuisance_robustness(scenario: &Scenario, k: usize, n_values: &[usize], seeds: usize) -> Result<NuisanceResult> {
    nuisance_robustness_with(scenario, k, n_values, seeds, &ExperimentOptions::default())
}

pub fn nuisance_robustness_with(
    scenario: &Scenario,
    k: usize,
    n_values: &[usize],
    seeds: usize,
    opts: &ExperimentOptions,
) -> Result<NuisanceResult> {
    check_order(scenario, k)?;
    if n_values.is_empty() || seeds == 0 {
        return Err(Error::arg("need sample sizes and seeds"));
    }
    let mut relative_change = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let theta = tuned_theta(scenario, k, n, opts)?;
        let changes = (0..seeds as u64)
            .into_par_iter()
            .map(|j| {
                let path = simulate::generate_path(scenario, n, derive_seed(opts.base_seed, n as u64, j))?;
                let parts = simulate::decomposition_diagnostics(scenario, &path)?;
                let clean: Vec<f64> = path.xs.iter().zip(&parts.theta).map(|(x, t)| x - t).collect();
                let raw = path_vn(&path, &path.xs, k, theta, opts.burn_in_factor)?;
                let cleaned = path_vn(&path, &clean, k, theta, opts.burn_in_factor)?;
                Ok((raw - cleaned).abs() / raw)
            })
            .collect::<Result<Vec<f64>>>()?;
        relative_change.push(mean(&changes));
    }
    Ok(NuisanceResult { k, n_values: n_values.to_vec(), relative_change })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Garch11,
    Garch22,
    Filter0,
    Filter1,
    Filter2,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Garch11, Method::Garch22, Method::Filter0, Method::Filter1, Method::Filter2];

    pub fn name(self) -> &'static str {
        match self {
            Method::Garch11 => "garch11",
            Method::Garch22 => "garch22",
            Method::Filter0 => "filter0",
            Method::Filter1 => "filter1",
            Method::Filter2 => "filter2",
        }
    }

    pub fn tune(self, xs: &[f64]) -> Result<tuning::TuningReport> {
        match self {
            Method::Garch11 => tuning::fit_garch(xs, 1, 1),
            Method::Garch22 => tuning::fit_garch(xs, 2, 2),
            Method::Filter0 => tuning::tune_filter0(xs, 0),
            Method::Filter1 => tuning::tune_filter1(xs),
            Method::Filter2 => tuning::tune_filter2(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub n: usize,
    /// Tuned `S_n` per method in [`Method::ALL`] order; `None` when tuning failed.
    pub cells: Vec<Option<f64>>,
    /// Failure messages for absent cells.
    pub errors: Vec<Option<String>>,
}

impl BenchRow {
    pub fn cell(&self, method: Method) -> Option<f64> {
        let i = Method::ALL.iter().position(|m| *m == method).expect("known method");
        self.cells[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub methods: Vec<Method>,
    pub rows: Vec<BenchRow>,
    /// Sampling interval the observations were built with, when known.
    pub delta: Option<f64>,
}

impl BenchReport {
    /// Long format, columns `series,method,sn`; failed cells leave `sn` empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["series", "method", "sn"])?;
        for row in &self.rows {
            for (m, cell) in self.methods.iter().zip(&row.cells) {
                w.write_record([row.name.as_str(), m.name(), &cell.map(|v| v.to_string()).unwrap_or_default()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Tunes every method on every series and tabulates the best `S_n`.
pub fn benchmark_report(series_set: &[(String, HeteroSeries)]) -> Result<BenchReport> {
    if let Some((name, s)) = series_set.iter().find(|(_, s)| s.len() < 100) {
        return Err(Error::arg(format!("series '{name}' has {} observations, need at least 100", s.len())));
    }
    let rows = series_set
        .par_iter()
        .map(|(name, xs)| {
            let outcomes: Vec<Result<f64>> = Method::ALL.iter().map(|m| m.tune(xs).map(|r| r.best_sn)).collect();
            BenchRow {
                name: name.clone(),
                n: xs.len(),
                cells: outcomes.iter().map(|o| o.as_ref().ok().copied()).collect(),
                errors: outcomes.iter().map(|o| o.as_ref().err().map(|e| e.to_string())).collect(),
            }
        })
        .collect();
    Ok(BenchReport { methods: Method::ALL.to_vec(), rows, delta: None })
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON object with a top-level `schema_version` field.
pub fn to_json_document<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Versioned { schema_version: SCHEMA_VERSION, body: value })?)
}

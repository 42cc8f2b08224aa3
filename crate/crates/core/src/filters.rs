//! One-step estimator state machines and the series driver.
//!
//! Three recursions live here:
//!
//! * the order-`k` adaptive filter, advancing `v̂` and `k` pseudo-derivatives
//!   with Riccati-derived gains,
//! * its mean-reverting extension (coefficients `a_1..a_{k+1}` and a level
//!   `K`), of which Filter 1 (`k = 0`) and Filter 2 (`k = 1`) are instances,
//! * the classical GARCH(p,q) recursion used as a baseline.
//!
//! Every driver follows the one-step prediction discipline: the residual for
//! observation `i` is taken against the estimate formed before `X_i` is seen.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::{self, GainSchedule};

const MAX_WARMUP: usize = 20;
const HURWITZ_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub v_hat: f64,
    /// `v̂^{(1)}, ..., v̂^{(k)}`.
    pub derivatives: Vec<f64>,
    pub step_index: usize,
}

impl FilterState {
    pub fn order(&self) -> usize {
        self.derivatives.len()
    }

    fn component(&self, j: usize) -> f64 {
        if j == 0 {
            self.v_hat
        } else {
            self.derivatives[j - 1]
        }
    }
}

/// Number of leading observations averaged into the initial estimate.
pub fn warmup_count(n: usize, available: usize) -> usize {
    MAX_WARMUP.min(n.div_ceil(20)).min(available).max(1)
}

/// Initial state: `v̂` is the mean of a short warmup prefix, derivatives zero.
///
/// `n` is the sample size the gains are built for; the prefix length is
/// `min(20, ceil(n/20), warmup.len())`.
pub fn init_state(k: usize, warmup: &[f64], n: usize) -> Result<FilterState> {
    if warmup.is_empty() {
        return Err(Error::arg("warmup prefix is empty"));
    }
    let count = warmup_count(n, warmup.len());
    let v_hat = warmup[..count].iter().sum::<f64>() / count as f64;
    Ok(FilterState { v_hat, derivatives: vec![0.0; k], step_index: 0 })
}

/// Parameters of the mean-reverting adaptive filter.
///
/// `a_coeffs` holds `a_1, ..., a_{k+1}`. The top equation of the state
/// recursion is damped by `a_1`, pulled by `a_2..a_{k+1}` on the lower
/// components and reverts toward `k_level` through `a_{k+1}`. All zeros
/// gives the plain adaptive filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedParams {
    pub k: usize,
    pub theta: f64,
    pub a_coeffs: Vec<f64>,
    pub k_level: f64,
}

impl ExtendedParams {
    pub fn pure(k: usize, theta: f64) -> Self {
        Self { k, theta, a_coeffs: vec![0.0; k + 1], k_level: 0.0 }
    }

    /// `v̂_i = v̂(1 - a_1/n) + a_1 K/n + θ/n^{2/3} (X_i - v̂)`.
    pub fn filter1(theta: f64, k_level: f64, a1: f64) -> Self {
        Self { k: 0, theta, a_coeffs: vec![a1], k_level }
    }

    /// Order-one filter whose derivative line is
    /// `v̂'(1 - a_1/n) - (a_2/n) v̂ + a_2 K/n + θ/n^{3/5} (X_i - v̂)`.
    pub fn filter2(theta: f64, k_level: f64, a1: f64, a2: f64) -> Self {
        Self { k: 1, theta, a_coeffs: vec![a1, a2], k_level }
    }

    /// Roots of `P(x) = x^{k+1} + a_1 x^k + ... + a_{k+1}`.
    pub fn reversion_roots(&self) -> Vec<nalgebra::Complex<f64>> {
        gains::monic_roots(&self.a_coeffs)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.a_coeffs.len() != self.k + 1 {
            return Err(Error::arg(format!(
                "order {} needs {} reversion coefficients, got {}",
                self.k,
                self.k + 1,
                self.a_coeffs.len()
            )));
        }
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::arg(format!("theta must be positive, got {}", self.theta)));
        }
        let nf = n as f64;
        if self.a_coeffs.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::arg("reversion coefficients must be finite and non-negative"));
        }
        if self.a_coeffs.iter().any(|a| *a >= nf / 10.0) {
            return Err(Error::arg(format!("reversion coefficients must stay below n/10 = {}", nf / 10.0)));
        }
        if !self.k_level.is_finite() || self.k_level.abs() >= nf {
            return Err(Error::arg(format!("level K = {} must satisfy |K| < n", self.k_level)));
        }
        if self.a_coeffs.iter().any(|a| *a > 0.0) {
            let roots = self.reversion_roots();
            let scale = roots.iter().map(|r| r.norm()).fold(1.0, f64::max);
            if roots.iter().any(|r| r.re > HURWITZ_TOL * scale) {
                return Err(Error::arg("reversion polynomial has a root with positive real part"));
            }
        }
        Ok(())
    }
}

/// Advances the adaptive filter by one observation.
///
/// Returns the new state together with the prediction residual
/// `x - v̂_{i-1}`.
pub fn step_adaptive(
    state: &FilterState,
    x: f64,
    schedule: &GainSchedule,
    ext: &ExtendedParams,
) -> Result<(FilterState, f64)> {
    let k = ext.k;
    if schedule.k != k || state.order() != k || ext.a_coeffs.len() != k + 1 {
        return Err(Error::arg(format!(
            "order mismatch: schedule {}, state {}, params {} with {} coefficients",
            schedule.k,
            state.order(),
            k,
            ext.a_coeffs.len()
        )));
    }
    if !x.is_finite() {
        return Err(Error::Data { index: state.step_index, message: format!("observation {x} is not finite") });
    }
    let n = schedule.n as f64;
    let g = &schedule.step_gains;
    let a = &ext.a_coeffs;
    let residual = x - state.v_hat;

    let mut next = Vec::with_capacity(k + 1);
    for j in 0..k {
        next.push(state.component(j) + state.component(j + 1) / n + g[j] * residual);
    }
    let mut top = state.component(k) * (1.0 - a[0] / n);
    for (l, coeff) in a.iter().enumerate().skip(1) {
        top -= coeff / n * state.component(k - l);
    }
    top += a[k] * ext.k_level / n;
    top += g[k] * residual;
    next.push(top);

    let v_hat = next[0];
    next.remove(0);
    Ok((FilterState { v_hat, derivatives: next, step_index: state.step_index + 1 }, residual))
}

/// One-step transition matrix of the homogeneous part of the recursion.
pub fn transition_matrix(schedule: &GainSchedule, ext: &ExtendedParams) -> DMatrix<f64> {
    let k = ext.k;
    let m = k + 1;
    let n = schedule.n as f64;
    let mut t = DMatrix::<f64>::identity(m, m);
    for j in 0..k {
        t[(j, j + 1)] += 1.0 / n;
    }
    for (l, coeff) in ext.a_coeffs.iter().enumerate() {
        t[(k, k - l)] -= coeff / n;
    }
    for (i, gain) in schedule.step_gains.iter().enumerate() {
        t[(i, 0)] -= gain;
    }
    t
}

pub fn spectral_radius(schedule: &GainSchedule, ext: &ExtendedParams) -> f64 {
    transition_matrix(schedule, ext)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Whether the discrete recursion contracts (spectral radius below one).
pub fn is_discrete_stable(schedule: &GainSchedule, ext: &ExtendedParams) -> bool {
    spectral_radius(schedule, ext) < 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub p: usize,
    pub q: usize,
    pub k_const: f64,
    pub g_coeffs: Vec<f64>,
    pub a_coeffs: Vec<f64>,
}

impl GarchParams {
    pub fn new(k_const: f64, g_coeffs: Vec<f64>, a_coeffs: Vec<f64>) -> Self {
        Self { p: g_coeffs.len(), q: a_coeffs.len(), k_const, g_coeffs, a_coeffs }
    }

    pub fn persistence(&self) -> f64 {
        self.g_coeffs.iter().sum::<f64>() + self.a_coeffs.iter().sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.g_coeffs.len() != self.p || self.a_coeffs.len() != self.q {
            return Err(Error::arg(format!(
                "GARCH({},{}) needs p, q >= 1 with matching coefficient counts",
                self.p, self.q
            )));
        }
        let coeffs = std::iter::once(&self.k_const).chain(&self.g_coeffs).chain(&self.a_coeffs);
        if coeffs.clone().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::arg("GARCH coefficients must be finite and non-negative"));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus `Σg + Σa < 1`, the constraint used in fitting.
    pub fn validate_stationary(&self) -> Result<()> {
        self.validate()?;
        if self.persistence() >= 1.0 {
            return Err(Error::arg(format!("GARCH persistence {} is not below 1", self.persistence())));
        }
        Ok(())
    }
}

/// Recent GARCH estimates and observations, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct GarchHistory {
    /// `v̂_{i-1}, v̂_{i-2}, ...`
    pub estimates: VecDeque<f64>,
    /// `X_{i-1}, X_{i-2}, ...`
    pub observations: VecDeque<f64>,
}

impl GarchHistory {
    /// History primed with a constant initial level for every lag.
    pub fn primed(params: &GarchParams, v0: f64) -> Self {
        Self {
            estimates: std::iter::repeat_n(v0, params.p).collect(),
            observations: std::iter::repeat_n(v0, params.q.saturating_sub(1)).collect(),
        }
    }

    pub fn push(&mut self, estimate: f64, x: f64) {
        self.estimates.push_front(estimate);
        self.estimates.pop_back();
        if !self.observations.is_empty() {
            self.observations.push_front(x);
            self.observations.pop_back();
        }
    }
}

/// GARCH(p,q) step: `v̂_i = K + Σ g_j v̂_{i-j} + Σ a_m X_{i+1-m}`, floored at 0.
///
/// Returns `(v̂_i, X_i - v̂_{i-1})`.
pub fn step_garch(history: &GarchHistory, x: f64, params: &GarchParams) -> Result<(f64, f64)> {
    if history.estimates.len() < params.p.max(1) || history.observations.len() + 1 < params.q {
        return Err(Error::arg(format!(
            "GARCH({},{}) history too short: {} estimates, {} observations",
            params.p,
            params.q,
            history.estimates.len(),
            history.observations.len()
        )));
    }
    if !x.is_finite() {
        return Err(Error::Data { index: 0, message: format!("observation {x} is not finite") });
    }
    let mut v = params.k_const;
    for (g, prev) in params.g_coeffs.iter().zip(&history.estimates) {
        v += g * prev;
    }
    v += params.a_coeffs[0] * x;
    for (a, prev) in params.a_coeffs[1..].iter().zip(&history.observations) {
        v += a * prev;
    }
    Ok((v.max(0.0), x - history.estimates[0]))
}

/// How the first estimate is formed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum Init {
    /// Mean of the default warmup prefix (see [`warmup_count`]).
    #[default]
    Warmup,
    /// Mean of the first `count` observations.
    WarmupCount(usize),
    /// Explicit starting estimate.
    Value(f64),
}

impl Init {
    fn initial_level(&self, xs: &[f64], n: usize) -> Result<f64> {
        match *self {
            Init::Warmup => Ok(init_state(0, xs, n)?.v_hat),
            Init::WarmupCount(count) => {
                if count == 0 || count > xs.len() {
                    return Err(Error::arg(format!("warmup count {count} out of range")));
                }
                Ok(xs[..count].iter().sum::<f64>() / count as f64)
            }
            Init::Value(v) if v.is_finite() => Ok(v),
            Init::Value(v) => Err(Error::arg(format!("initial estimate {v} is not finite"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FilterSpec {
    Adaptive(ExtendedParams),
    Garch(GarchParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackConfig {
    pub filter: FilterSpec,
    #[serde(default)]
    pub init: Init,
    /// Sample size used in the gain denominators; defaults to the series length.
    #[serde(default)]
    pub gain_n: Option<usize>,
}

impl TrackConfig {
    pub fn adaptive(params: ExtendedParams) -> Self {
        Self { filter: FilterSpec::Adaptive(params), init: Init::Warmup, gain_n: None }
    }

    pub fn garch(params: GarchParams) -> Self {
        Self { filter: FilterSpec::Garch(params), init: Init::Warmup, gain_n: None }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_gain_n(mut self, n: usize) -> Self {
        self.gain_n = Some(n);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    /// `estimates[i]` is the prediction of `xs[i]`.
    pub estimates: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Mean squared prediction residual.
    pub s_n: f64,
}

fn mean_square(values: &[f64]) -> f64 {
    values.iter().map(|r| r * r).sum::<f64>() / values.len() as f64
}

/// Runs a configured filter over the whole series.
pub fn run(xs: &[f64], config: &TrackConfig) -> Result<TrackResult> {
    if xs.len() < 2 {
        return Err(Error::arg(format!("need at least 2 observations, got {}", xs.len())));
    }
    let n = config.gain_n.unwrap_or(xs.len());
    let v0 = config.init.initial_level(xs, n)?;
    let mut estimates = Vec::with_capacity(xs.len());
    let mut residuals = Vec::with_capacity(xs.len());
    let at = |index: usize| move |e: Error| Error::Step { index, source: Box::new(e) };

    match &config.filter {
        FilterSpec::Adaptive(ext) => {
            ext.validate(n)?;
            let schedule = gains::gain_schedule(ext.k, ext.theta, n)?;
            let mut state = FilterState { v_hat: v0, derivatives: vec![0.0; ext.k], step_index: 0 };
            for (i, &x) in xs.iter().enumerate() {
                estimates.push(state.v_hat);
                let (next, residual) = step_adaptive(&state, x, &schedule, ext).map_err(at(i))?;
                residuals.push(residual);
                state = next;
            }
        }
        FilterSpec::Garch(params) => {
            params.validate()?;
            let mut history = GarchHistory::primed(params, v0);
            for (i, &x) in xs.iter().enumerate() {
                estimates.push(history.estimates[0]);
                let (next, residual) = step_garch(&history, x, params).map_err(at(i))?;
                residuals.push(residual);
                history.push(next, x);
            }
        }
    }
    let s_n = mean_square(&residuals);
    Ok(TrackResult { estimates, residuals, s_n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, len: usize, level: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| level * rng.random::<f64>() * 2.0).collect()
    }

    #[test]
    fn init_examples() {
        let s = init_state(0, &[0.1, 0.1, 0.1], 1000).unwrap();
        assert!((s.v_hat - 0.1).abs() < 1e-15);
        assert!(s.derivatives.is_empty());
        let s = init_state(1, &[0.2, 0.4], 1000).unwrap();
        assert!((s.v_hat - 0.3).abs() < 1e-15);
        assert_eq!(s.derivatives, vec![0.0]);
        assert!(init_state(0, &[], 1000).is_err());
    }

    #[test]
    fn init_mean_of_noisy_warmup() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sd = 0.03;
        let warmup: Vec<f64> =
            (0..100).map(|_| 0.09 + sd * (rng.random::<f64>() - 0.5) * 12f64.sqrt()).collect();
        let s = init_state(2, &warmup, 4000).unwrap();
        let se = sd / (20f64).sqrt();
        assert!((s.v_hat - 0.09).abs() < 3.0 * se);
        assert_eq!(s.derivatives.len(), 2);
    }

    #[test]
    fn adaptive_step_example() {
        let schedule = gains::gain_schedule(0, 1.0, 1000).unwrap();
        let ext = ExtendedParams::pure(0, 1.0);
        let state = FilterState { v_hat: 0.1, derivatives: vec![], step_index: 0 };
        let (next, residual) = step_adaptive(&state, 0.2, &schedule, &ext).unwrap();
        assert!((residual - 0.1).abs() < 1e-15);
        assert!((next.v_hat - 0.101).abs() < 1e-15);
        assert_eq!(next.step_index, 1);
    }

    #[test]
    fn filter1_degenerate_fixed_point() {
        let n = 1000;
        let schedule = gains::gain_schedule(0, 3.0, n).unwrap();
        let ext = ExtendedParams::filter1(3.0, 0.25, n as f64);
        let state = FilterState { v_hat: 0.25, derivatives: vec![], step_index: 0 };
        let (next, residual) = step_adaptive(&state, 0.25, &schedule, &ext).unwrap();
        assert_eq!(residual, 0.0);
        assert_eq!(next.v_hat, 0.25);
    }

    #[test]
    fn step_errors() {
        let schedule = gains::gain_schedule(1, 1.0, 100).unwrap();
        let ext = ExtendedParams::pure(1, 1.0);
        let bad = FilterState { v_hat: 0.1, derivatives: vec![], step_index: 0 };
        assert!(matches!(step_adaptive(&bad, 0.1, &schedule, &ext), Err(Error::Argument(_))));
        let ok = FilterState { v_hat: 0.1, derivatives: vec![0.0], step_index: 0 };
        assert!(matches!(step_adaptive(&ok, f64::NAN, &schedule, &ext), Err(Error::Data { .. })));
    }

    #[test]
    fn garch_step_examples() {
        let params = GarchParams::new(0.01, vec![0.9], vec![0.05]);
        let history = GarchHistory::primed(&params, 0.1);
        let (v, r) = step_garch(&history, 0.2, &params).unwrap();
        assert!((v - 0.11).abs() < 1e-15);
        assert!((r - 0.1).abs() < 1e-15);

        let flat = GarchParams::new(0.07, vec![0.0], vec![0.0]);
        let out = run(&noise(3, 200, 0.1), &TrackConfig::garch(flat)).unwrap();
        assert!(out.estimates[1..].iter().all(|&v| v == 0.07));
    }

    #[test]
    fn garch_history_too_short() {
        let params = GarchParams::new(0.0, vec![0.5, 0.2], vec![0.1, 0.05]);
        let history = GarchHistory { estimates: VecDeque::from(vec![0.1]), observations: VecDeque::new() };
        assert!(step_garch(&history, 0.1, &params).is_err());
    }

    #[test]
    fn filter1_without_reversion_is_unit_persistence_garch() {
        let xs = noise(8, 1000, 0.1);
        let theta = 1.7;
        let gamma = theta / 1000f64.powf(2.0 / 3.0);
        let f = run(&xs, &TrackConfig::adaptive(ExtendedParams::filter1(theta, 0.0, 0.0))).unwrap();
        let g = run(&xs, &TrackConfig::garch(GarchParams::new(0.0, vec![1.0 - gamma], vec![gamma]))).unwrap();
        for (a, b) in f.estimates.iter().zip(&g.estimates) {
            assert!((a - b).abs() <= 1e-12 * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn garch22_matches_direct_recursion() {
        let xs = noise(5, 500, 0.1);
        let (k, g, a) = (0.003, [0.5, 0.2], [0.1, 0.05]);
        let out = run(&xs, &TrackConfig::garch(GarchParams::new(k, g.to_vec(), a.to_vec()))).unwrap();

        let v0 = xs[..20].iter().sum::<f64>() / 20.0;
        let (mut v1, mut v2, mut x_prev) = (v0, v0, v0);
        for (i, &x) in xs.iter().enumerate() {
            assert_eq!(out.estimates[i], v1, "step {i}");
            assert_eq!(out.residuals[i], x - v1);
            let v = (k + g[0] * v1 + g[1] * v2 + a[0] * x + a[1] * x_prev).max(0.0);
            v2 = v1;
            v1 = v;
            x_prev = x;
        }
    }

    #[test]
    fn constant_series_is_a_fixed_point() {
        let xs = vec![0.3; 400];
        for k in 0..3 {
            let cfg = TrackConfig::adaptive(ExtendedParams::pure(k, 2.0)).with_init(Init::Value(0.3));
            let out = run(&xs, &cfg).unwrap();
            assert!(out.residuals.iter().all(|&r| r == 0.0));
            assert_eq!(out.s_n, 0.0);
        }
    }

    #[test]
    fn frozen_filter_measures_sample_variance() {
        let xs = noise(9, 2000, 0.2);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        let cfg = TrackConfig::adaptive(ExtendedParams::pure(0, 1e-12)).with_init(Init::Value(mean));
        let out = run(&xs, &cfg).unwrap();
        assert!((out.s_n - var).abs() < 1e-9 * var);
    }

    #[test]
    fn run_reports_failing_index() {
        let mut xs = vec![0.1; 50];
        xs[17] = f64::INFINITY;
        let err = run(&xs, &TrackConfig::adaptive(ExtendedParams::pure(0, 1.0))).unwrap_err();
        assert!(matches!(err, Error::Step { index: 17, .. }), "{err}");
    }

    #[test]
    fn extended_params_validation() {
        assert!(ExtendedParams::filter1(1.0, 0.1, 5.0).validate(1000).is_ok());
        assert!(ExtendedParams::filter1(1.0, 0.1, 200.0).validate(1000).is_err());
        assert!(ExtendedParams::filter1(1.0, 0.1, -1.0).validate(1000).is_err());
        assert!(ExtendedParams::filter2(1.0, 0.1, 2.0, 3.0).validate(1000).is_ok());
        assert!(ExtendedParams::filter2(1.0, 2000.0, 2.0, 3.0).validate(1000).is_err());
        let mut wrong = ExtendedParams::pure(2, 1.0);
        wrong.a_coeffs.pop();
        assert!(wrong.validate(1000).is_err());
        // x^3 + 0 x^2 + 0 x + 1 has roots with positive real part.
        let unstable = ExtendedParams { k: 2, theta: 1.0, a_coeffs: vec![0.0, 0.0, 1.0], k_level: 0.0 };
        assert!(unstable.validate(1000).is_err());
    }

    #[test]
    fn discrete_stability_edge_for_order_zero() {
        let n = 1000;
        let edge = 2.0 * (n as f64).powf(2.0 / 3.0);
        let below = gains::gain_schedule(0, 0.99 * edge, n).unwrap();
        let above = gains::gain_schedule(0, 1.01 * edge, n).unwrap();
        let ext = ExtendedParams::pure(0, 1.0);
        assert!(is_discrete_stable(&below, &ext));
        assert!(!is_discrete_stable(&above, &ext));
    }

    #[test]
    fn bounded_over_a_million_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let xs: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
        for ext in [ExtendedParams::filter1(2.0, 0.5, 3.0), ExtendedParams::filter2(5.0, 0.5, 2.0, 4.0)] {
            let out = run(&xs, &TrackConfig::adaptive(ext)).unwrap();
            let worst = out.estimates.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst < 3.0, "max |v̂| = {worst}");
        }
    }
}

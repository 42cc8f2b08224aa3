//! Parameter search minimizing the observed one-step prediction error `S_n`.
//!
//! Everything here is deterministic: grids are fixed, Nelder-Mead starts
//! from fixed points, and equal objective values resolve to the later stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{self, ExtendedParams, GarchParams, Init, TrackConfig};
use crate::gains;

const GRID_POINTS: usize = 25;
const GOLDEN_MAX_ITER: usize = 200;
const MIN_LEN: usize = 50;
pub const DEFAULT_THETA_RANGE: (f64, f64) = (1e-2, 1e3);
/// Relative golden-section tolerance used by the tuning procedures.
pub const TUNE_REL_TOL: f64 = 1e-8;
const POLISH_BRACKETS: [f64; 3] = [0.25, 0.125, 0.0625];
const PAIR_GRID: usize = 7;
const GARCH_PERSISTENCE: [f64; 4] = [0.5, 0.8, 0.9, 0.95];
const GARCH_A_SHARE: [f64; 2] = [0.1, 0.3];

/// Result of a bounded univariate search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMinimum {
    pub argmin: f64,
    pub min_value: f64,
    pub evaluations: usize,
}

/// Grid scan over `[lo, hi]` (25 points, log-spaced when `lo > 0`, linear
/// otherwise) followed by golden-section refinement between the neighbours
/// of the best grid point until the bracket is narrower than `tol`.
///
/// Returns the best point seen, so a monotone objective yields an endpoint.
pub fn minimize_scalar<F: FnMut(f64) -> f64>(mut objective: F, lo: f64, hi: f64, tol: f64) -> Result<ScalarMinimum> {
    let mut count = 0;
    let found = scalar_search(
        &mut |x| {
            count += 1;
            let y = objective(x);
            if y.is_finite() {
                Ok(Some(y))
            } else {
                Err(Error::NonFinite { at: x })
            }
        },
        lo,
        hi,
        tol,
    )?;
    let (argmin, min_value) = found.expect("finite objective always yields a minimum");
    Ok(ScalarMinimum { argmin, min_value, evaluations: count })
}

fn scan_grid(lo: f64, hi: f64) -> Vec<f64> {
    let last = (GRID_POINTS - 1) as f64;
    let mut grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| {
            let t = i as f64 / last;
            if lo > 0.0 {
                lo * (hi / lo).powf(t)
            } else {
                lo + (hi - lo) * t
            }
        })
        .collect();
    grid[0] = lo;
    grid[GRID_POINTS - 1] = hi;
    grid
}

/// `None` from the objective marks an infeasible point; it never wins.
fn scalar_search(
    objective: &mut dyn FnMut(f64) -> Result<Option<f64>>,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<Option<(f64, f64)>> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::arg(format!("need finite lo < hi, got [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::arg(format!("tolerance must be positive, got {tol}")));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut eval = |x: f64, best: &mut Option<(f64, f64)>| -> Result<f64> {
        match objective(x)? {
            Some(y) => {
                if best.is_none_or(|(_, b)| y < b) {
                    *best = Some((x, y));
                }
                Ok(y)
            }
            None => Ok(f64::INFINITY),
        }
    };

    let grid = scan_grid(lo, hi);
    let mut at = 0;
    let mut lowest = f64::INFINITY;
    for (i, &x) in grid.iter().enumerate() {
        let y = eval(x, &mut best)?;
        if y < lowest {
            lowest = y;
            at = i;
        }
    }
    if best.is_none() {
        return Ok(None);
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (grid[at.saturating_sub(1)], grid[(at + 1).min(GRID_POINTS - 1)]);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c, &mut best)?;
    let mut fd = eval(d, &mut best)?;
    for _ in 0..GOLDEN_MAX_ITER {
        if b - a <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c, &mut best)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d, &mut best)?;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Simplex diameter below which the search stops (with `f_tol`).
    pub x_tol: f64,
    /// Relative spread of simplex values below which the search stops.
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 4000, x_tol: 1e-10, f_tol: 1e-13 }
    }
}

/// Downhill simplex with the standard coefficients (1, 2, 1/2, 1/2).
///
/// The objective may return `+inf` for infeasible points. The initial
/// simplex is `x0` and `x0 + steps[i] e_i`.
pub fn nelder_mead(
    objective: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x0: &[f64],
    steps: &[f64],
    opts: &NelderMeadOptions,
) -> Result<(Vec<f64>, f64)> {
    let dim = x0.len();
    if dim == 0 || steps.len() != dim {
        return Err(Error::arg("simplex needs a non-empty start and one step per coordinate"));
    }
    let mut evals = 0usize;
    let mut f = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        objective(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = f(x0, &mut evals)?;
    simplex.push((x0.to_vec(), f0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        let fx = f(&x, &mut evals)?;
        simplex.push((x, fx));
    }

    let along = |from: &[f64], to: &[f64], t: f64| -> Vec<f64> {
        from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect()
    };

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best_x, best_f) = (&simplex[0].0, simplex[0].1);
        let f_spread = simplex[dim].1 - best_f;
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(best_x).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if evals >= opts.max_evals || (x_spread <= opts.x_tol && f_spread <= opts.f_tol * best_f.abs()) {
            break;
        }
        if f_spread == 0.0 && x_spread <= opts.x_tol {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let (worst_x, worst_f) = simplex[dim].clone();
        let second_f = simplex[dim - 1].1;

        let xr = along(&centroid, &worst_x, -1.0);
        let fr = f(&xr, &mut evals)?;
        if fr < best_f {
            let xe = along(&centroid, &worst_x, -2.0);
            let fe = f(&xe, &mut evals)?;
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < second_f {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst_f {
            let xc = along(&centroid, &xr, 0.5);
            let fc = f(&xc, &mut evals)?;
            (xc, fc)
        } else {
            let xc = along(&centroid, &worst_x, 0.5);
            let fc = f(&xc, &mut evals)?;
            (xc, fc)
        };
        if fc < fr.min(worst_f) {
            simplex[dim] = (xc, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x = along(&anchor, &vertex.0, 0.5);
            let fx = f(&x, &mut evals)?;
            *vertex = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Ok((x, fx))
}

/// A point in one filter family's parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TunedParams {
    Filter0 { k: usize, theta: f64 },
    Filter1 { theta: f64, k_level: f64, a1: f64 },
    Filter2 { theta: f64, k_level: f64, a1: f64, a2: f64 },
    Garch { k_const: f64, g_coeffs: Vec<f64>, a_coeffs: Vec<f64> },
}

impl TunedParams {
    pub fn filter_spec(&self) -> filters::FilterSpec {
        use filters::FilterSpec;
        match self {
            TunedParams::Filter0 { k, theta } => FilterSpec::Adaptive(ExtendedParams::pure(*k, *theta)),
            TunedParams::Filter1 { theta, k_level, a1 } => {
                FilterSpec::Adaptive(ExtendedParams::filter1(*theta, *k_level, *a1))
            }
            TunedParams::Filter2 { theta, k_level, a1, a2 } => {
                FilterSpec::Adaptive(ExtendedParams::filter2(*theta, *k_level, *a1, *a2))
            }
            TunedParams::Garch { k_const, g_coeffs, a_coeffs } => {
                FilterSpec::Garch(GarchParams::new(*k_const, g_coeffs.clone(), a_coeffs.clone()))
            }
        }
    }

    pub fn track_config(&self, init: Init) -> TrackConfig {
        TrackConfig { filter: self.filter_spec(), init, gain_n: None }
    }

    pub fn theta(&self) -> Option<f64> {
        match self {
            TunedParams::Filter0 { theta, .. }
            | TunedParams::Filter1 { theta, .. }
            | TunedParams::Filter2 { theta, .. } => Some(*theta),
            TunedParams::Garch { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub params: TunedParams,
    pub s_n: f64,
}

/// Best point after one stage of a tuning procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: String,
    pub params: TunedParams,
    pub s_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub best_params: TunedParams,
    pub best_sn: f64,
    pub evaluations: Vec<Evaluation>,
    pub trace: Vec<TraceEntry>,
}

impl TuningReport {
    pub fn stage(&self, name: &str) -> Option<&TraceEntry> {
        self.trace.iter().find(|t| t.stage == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub init: Init,
    pub theta_range: (f64, f64),
    /// Upper end of the reversion-coefficient box; `None` means just below `n/10`.
    /// `Some(0.0)` pins every reversion coefficient to zero.
    pub a_max: Option<f64>,
    pub garch_starts: usize,
    /// When false the GARCH `g` coefficients are held at zero.
    pub garch_free_g: bool,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self {
            init: Init::Warmup,
            theta_range: DEFAULT_THETA_RANGE,
            a_max: None,
            garch_starts: GARCH_PERSISTENCE.len() * GARCH_A_SHARE.len(),
            garch_free_g: true,
        }
    }
}

struct Evaluator<'a> {
    xs: &'a [f64],
    init: Init,
    evaluations: Vec<Evaluation>,
}

impl<'a> Evaluator<'a> {
    fn new(xs: &'a [f64], opts: &TuneOptions) -> Result<Self> {
        if xs.len() < MIN_LEN {
            return Err(Error::arg(format!("tuning needs at least {MIN_LEN} observations, got {}", xs.len())));
        }
        if let Some(index) = xs.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data { index, message: "observation is not finite".into() });
        }
        Ok(Self { xs, init: opts.init, evaluations: Vec::new() })
    }

    fn n(&self) -> usize {
        self.xs.len()
    }

    /// `None` when the point violates the family's constraints.
    fn score(&mut self, params: TunedParams) -> Result<Option<f64>> {
        let feasible = match params.filter_spec() {
            filters::FilterSpec::Adaptive(ext) => adaptive_feasible(&ext, self.n()),
            filters::FilterSpec::Garch(g) => g.validate_stationary().is_ok(),
        };
        if !feasible {
            return Ok(None);
        }
        let s_n = filters::run(self.xs, &params.track_config(self.init))?.s_n;
        if !s_n.is_finite() {
            return Err(Error::NonFinite { at: params.theta().unwrap_or(f64::NAN) });
        }
        self.evaluations.push(Evaluation { params, s_n });
        Ok(Some(s_n))
    }

    /// Best point, preferring the latest stage on ties.
    fn finish(self, trace: Vec<TraceEntry>) -> Result<TuningReport> {
        let best = trace
            .iter()
            .reduce(|best, t| if t.s_n <= best.s_n { t } else { best })
            .ok_or_else(|| Error::Tuning("no stage produced a result".into()))?
            .clone();
        Ok(TuningReport { best_params: best.params, best_sn: best.s_n, evaluations: self.evaluations, trace })
    }
}

fn adaptive_feasible(ext: &ExtendedParams, n: usize) -> bool {
    if ext.validate(n).is_err() {
        return false;
    }
    let Ok(report) = gains::stability_report(ext.k, ext.theta) else {
        return false;
    };
    let Ok(schedule) = gains::gain_schedule(ext.k, ext.theta, n) else {
        return false;
    };
    report.is_stable() && filters::is_discrete_stable(&schedule, ext)
}

/// Shrinks `hi` to the largest θ (found by bisection in `ln θ`) for which the
/// plain order-`k` recursion is still discretely stable.
pub fn stable_theta_range(k: usize, n: usize, (lo, hi): (f64, f64)) -> Result<(f64, f64)> {
    let stable = |theta: f64| adaptive_feasible(&ExtendedParams::pure(k, theta), n);
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::arg(format!("theta range must satisfy 0 < lo < hi, got [{lo}, {hi}]")));
    }
    if stable(hi) {
        return Ok((lo, hi));
    }
    if !stable(lo) {
        return Err(Error::Tuning(format!("no stable theta in [{lo}, {hi}] for order {k}, n = {n}")));
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if stable(m.exp()) {
            a = m;
        } else {
            b = m;
        }
    }
    Ok((lo, a.exp()))
}

fn theta_stage(ev: &mut Evaluator, k: usize, opts: &TuneOptions) -> Result<(f64, f64)> {
    let (lo, hi) = stable_theta_range(k, ev.n(), opts.theta_range)?;
    scalar_search(&mut |theta| ev.score(TunedParams::Filter0 { k, theta }), lo, hi, TUNE_REL_TOL * hi)?
        .ok_or_else(|| Error::Tuning(format!("every theta candidate failed the stability check for order {k}")))
}

fn entry(stage: &str, params: TunedParams, s_n: f64) -> TraceEntry {
    TraceEntry { stage: stage.into(), params, s_n }
}

/// Univariate search for θ of the plain order-`k` filter.
pub fn tune_filter0(xs: &[f64], k: usize) -> Result<TuningReport> {
    tune_filter0_with(xs, k, &TuneOptions::default())
}

pub fn tune_filter0_with(xs: &[f64], k: usize, opts: &TuneOptions) -> Result<TuningReport> {
    let mut ev = Evaluator::new(xs, opts)?;
    let (theta, s) = theta_stage(&mut ev, k, opts)?;
    ev.finish(vec![entry("theta", TunedParams::Filter0 { k, theta }, s)])
}

fn a_box(n: usize, opts: &TuneOptions) -> f64 {
    let cap = n as f64 / 10.0 * (1.0 - 1e-9);
    opts.a_max.map_or(cap, |a| a.clamp(0.0, cap))
}

/// Sample mean shifted by the first value (exact for constant input).
fn mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Cyclic coordinate descent over `x`, one bracketed univariate search per
/// coordinate with the bracket shrinking each cycle. Coordinates at zero stay
/// put; a move is kept only when it lowers `S_n`.
fn coordinate_polish(
    ev: &mut Evaluator,
    x: &mut [f64],
    upper: &[f64],
    make: &dyn Fn(&[f64]) -> TunedParams,
) -> Result<f64> {
    let mut current = ev.score(make(x))?.unwrap_or(f64::INFINITY);
    for width in POLISH_BRACKETS {
        for j in 0..x.len() {
            if x[j] == 0.0 {
                continue;
            }
            let (lo, hi) = if x[j] > 0.0 {
                (x[j] * (1.0 - width), (x[j] * (1.0 + width)).min(upper[j]))
            } else {
                (x[j] * (1.0 + width), x[j] * (1.0 - width))
            };
            if !(lo < hi) {
                continue;
            }
            let mut probe = x.to_vec();
            let found = scalar_search(
                &mut |v| {
                    probe[j] = v;
                    ev.score(make(&probe))
                },
                lo,
                hi,
                TUNE_REL_TOL * hi.abs().max(lo.abs()),
            )?;
            if let Some((v, s)) = found {
                if s < current {
                    x[j] = v;
                    current = s;
                }
            }
        }
    }
    Ok(current)
}

/// Four-step tuning of the order-0 filter with mean reversion:
/// θ alone, then `K` as the sample mean, then `a_1` on `[0, n/10]`, then a
/// coordinate-descent polish of `(θ, K, a_1)`.
pub fn tune_filter1(xs: &[f64]) -> Result<TuningReport> {
    tune_filter1_with(xs, &TuneOptions::default())
}

pub fn tune_filter1_with(xs: &[f64], opts: &TuneOptions) -> Result<TuningReport> {
    let mut ev = Evaluator::new(xs, opts)?;
    let mut trace = Vec::with_capacity(4);
    let make = |p: &[f64]| TunedParams::Filter1 { theta: p[0], k_level: p[1], a1: p[2] };

    let (theta, s) = theta_stage(&mut ev, 0, opts)?;
    trace.push(entry("theta", TunedParams::Filter0 { k: 0, theta }, s));

    let k_level = mean(xs);
    let mut x = [theta, k_level, 0.0];
    let mut s = ev.score(make(&x))?.unwrap_or(s);
    trace.push(entry("K", make(&x), s));

    let a_max = a_box(ev.n(), opts);
    if a_max > 0.0 {
        let found = scalar_search(
            &mut |a1| ev.score(make(&[theta, k_level, a1])),
            0.0,
            a_max,
            TUNE_REL_TOL * a_max,
        )?;
        if let Some((a, sa)) = found {
            if sa < s {
                x[2] = a;
                s = sa;
            }
        }
    }
    trace.push(entry("a1", make(&x), s));

    if x[2] > 0.0 {
        let upper = [opts.theta_range.1, f64::INFINITY, a_max];
        s = coordinate_polish(&mut ev, &mut x, &upper, &make)?.min(s);
    }
    trace.push(entry("polish", make(&x), s));
    ev.finish(trace)
}

/// Four-step tuning of the order-1 filter with mean reversion: θ, then `K`,
/// then `(a_1, a_2)` by a 7×7 grid and Nelder-Mead on the region where both
/// are positive (or both zero), then a coordinate-descent polish.
pub fn tune_filter2(xs: &[f64]) -> Result<TuningReport> {
    tune_filter2_with(xs, &TuneOptions::default())
}

pub fn tune_filter2_with(xs: &[f64], opts: &TuneOptions) -> Result<TuningReport> {
    let mut ev = Evaluator::new(xs, opts)?;
    let mut trace = Vec::with_capacity(4);
    let make = |p: &[f64]| TunedParams::Filter2 { theta: p[0], k_level: p[1], a1: p[2], a2: p[3] };

    let (theta, s) = theta_stage(&mut ev, 1, opts)?;
    trace.push(entry("theta", TunedParams::Filter0 { k: 1, theta }, s));

    let k_level = mean(xs);
    let mut x = [theta, k_level, 0.0, 0.0];
    let mut s = ev.score(make(&x))?.unwrap_or(s);
    trace.push(entry("K", make(&x), s));

    let a_max = a_box(ev.n(), opts);
    if a_max > 0.0 {
        let admissible = |a1: f64, a2: f64| (a1 > 0.0 && a2 > 0.0) || (a1 == 0.0 && a2 == 0.0);
        let step = a_max / (PAIR_GRID - 1) as f64;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..PAIR_GRID {
            for j in 0..PAIR_GRID {
                let (a1, a2) = (step * i as f64, step * j as f64);
                if !admissible(a1, a2) {
                    continue;
                }
                if let Some(sg) = ev.score(make(&[theta, k_level, a1, a2]))? {
                    if sg < best.0 {
                        best = (sg, [a1, a2]);
                    }
                }
            }
        }
        let start = best.1;
        let steps = start.map(|a| if a == 0.0 { 0.5 * step } else { -0.25 * step });
        let mut objective = |p: &[f64]| -> Result<f64> {
            if !admissible(p[0], p[1]) || p[0] > a_max || p[1] > a_max {
                return Ok(f64::INFINITY);
            }
            Ok(ev.score(make(&[theta, k_level, p[0], p[1]]))?.unwrap_or(f64::INFINITY))
        };
        let (pair, fx) = nelder_mead(&mut objective, &start, &steps, &NelderMeadOptions::default())?;
        let (pair, sp) = if fx < best.0 { ([pair[0], pair[1]], fx) } else { (start, best.0) };
        if sp < s {
            x[2] = pair[0];
            x[3] = pair[1];
            s = sp;
        }
    }
    trace.push(entry("a1_a2", make(&x), s));

    if x[2] > 0.0 || x[3] > 0.0 {
        let upper = [opts.theta_range.1, f64::INFINITY, a_max, a_max];
        s = coordinate_polish(&mut ev, &mut x, &upper, &make)?.min(s);
    }
    trace.push(entry("polish", make(&x), s));
    ev.finish(trace)
}

fn garch_params(p: usize, q: usize, free_g: bool, x: &[f64]) -> TunedParams {
    let (g, a) = if free_g { (x[1..=p].to_vec(), x[p + 1..].to_vec()) } else { (vec![0.0; p], x[1..].to_vec()) };
    debug_assert_eq!(a.len(), q);
    TunedParams::Garch { k_const: x[0], g_coeffs: g, a_coeffs: a }
}

/// Least-squares GARCH(p,q) fit by multi-start Nelder-Mead under
/// `K ≥ 0`, `g, a ≥ 0`, `Σg + Σa < 1`.
///
/// Starts cover persistence `{0.5, 0.8, 0.9, 0.95}` × share of persistence
/// on the `a` terms `{0.1, 0.3}`, each with `K` matching the sample mean;
/// every start is followed by one restart from its result.
pub fn fit_garch(xs: &[f64], p: usize, q: usize) -> Result<TuningReport> {
    fit_garch_with(xs, p, q, &TuneOptions::default())
}

pub fn fit_garch_with(xs: &[f64], p: usize, q: usize, opts: &TuneOptions) -> Result<TuningReport> {
    if !(1..=2).contains(&p) || !(1..=2).contains(&q) {
        return Err(Error::arg(format!("GARCH orders must be 1 or 2, got ({p},{q})")));
    }
    let mut ev = Evaluator::new(xs, opts)?;
    let mx = mean(xs);
    let free_g = opts.garch_free_g;
    let starts: Vec<Vec<f64>> = GARCH_PERSISTENCE
        .iter()
        .flat_map(|&pers| GARCH_A_SHARE.iter().map(move |&share| (pers, share)))
        .take(opts.garch_starts.max(1))
        .map(|(pers, share)| {
            let a_total = if free_g { pers * share } else { pers };
            let mut x = vec![mx.max(0.0) * (1.0 - pers)];
            if free_g {
                x.extend(std::iter::repeat_n(pers * (1.0 - share) / p as f64, p));
            }
            x.extend(std::iter::repeat_n(a_total / q as f64, q));
            x
        })
        .collect();

    let nm = NelderMeadOptions::default();
    let mut trace = Vec::with_capacity(starts.len());
    for (i, start) in starts.iter().enumerate() {
        let mut objective = |x: &[f64]| -> Result<f64> {
            Ok(ev.score(garch_params(p, q, free_g, x))?.unwrap_or(f64::INFINITY))
        };
        let steps = |x: &[f64]| -> Vec<f64> {
            x.iter()
                .enumerate()
                .map(|(j, v)| match (j, *v == 0.0) {
                    (0, true) => 1e-3 * mx.abs().max(1e-12),
                    (0, false) => 0.2 * v,
                    (_, true) => 0.01,
                    (_, false) => -0.2 * v,
                })
                .collect()
        };
        let (x1, _) = nelder_mead(&mut objective, start, &steps(start), &nm)?;
        let (x2, f2) = nelder_mead(&mut objective, &x1, &steps(&x1), &nm)?;
        if f2.is_finite() {
            trace.push(TraceEntry { stage: format!("start{i}"), params: garch_params(p, q, free_g, &x2), s_n: f2 });
        }
    }
    if trace.is_empty() {
        return Err(Error::Tuning(format!("no feasible GARCH({p},{q}) start")));
    }
    ev.finish(trace)
}

/// True when no interior point is a strict local minimum other than the
/// global minimum.
pub fn is_unimodal(values: &[f64]) -> bool {
    let Some(argmin) = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i) else {
        return true;
    };
    (1..values.len().saturating_sub(1))
        .filter(|&i| i != argmin)
        .all(|i| !(values[i] < values[i - 1] && values[i] < values[i + 1]))
}

//! Ground-truth price paths with deterministic time-varying drift and
//! volatility, and the observed heteroscedasticity series derived from them.
//!
//! Given deterministic `μ(t)` and `v(t)` the log-return over `[t_{i-1}, t_i]`
//! is exactly Gaussian with mean `∫(μ - v/2)` and variance `∫v`, so paths are
//! sampled interval by interval without discretization bias. Interval
//! integrals use composite Simpson quadrature on 16 sub-intervals.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`)
//! feeding `rand_distr::StandardNormal`, one draw per interval in order.

use std::fmt;
use std::io::Write;
use std::ops::Deref;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPSON_INTERVALS: usize = 16;
const CHECK_GRID: usize = 10_000;

/// Observations `X_i = ln²(S(t_i)/S(t_{i-1})) / Δ`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HeteroSeries(pub Vec<f64>);

impl Deref for HeteroSeries {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for HeteroSeries {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// One additive term of a drift or volatility profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Component {
    Constant(f64),
    /// `c0 + c1 t`
    Linear { c0: f64, c1: f64 },
    /// `base + amplitude sin(2π frequency t + phase)`
    Sinusoid { base: f64, amplitude: f64, frequency: f64, phase: f64 },
    /// Piecewise constant: `levels[j]` on `[breakpoints[j-1], breakpoints[j])`.
    RegimeSwitch { levels: Vec<f64>, breakpoints: Vec<f64> },
}

impl Component {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Component::Constant(c) => *c,
            Component::Linear { c0, c1 } => c0 + c1 * t,
            Component::Sinusoid { base, amplitude, frequency, phase } => {
                base + amplitude * (std::f64::consts::TAU * frequency * t + phase).sin()
            }
            Component::RegimeSwitch { levels, breakpoints } => {
                levels[breakpoints.iter().take_while(|b| **b <= t).count()]
            }
        }
    }

    /// False for components with jumps.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Component::RegimeSwitch { .. })
    }

    fn from_parts(kind: &str, args: &[f64]) -> Result<Self> {
        let want = |count: usize| {
            if args.len() == count {
                Ok(())
            } else {
                Err(Error::Scenario(format!("{kind} takes {count} parameters, got {}", args.len())))
            }
        };
        match kind {
            "constant" => {
                want(1)?;
                Ok(Component::Constant(args[0]))
            }
            "linear" => {
                want(2)?;
                Ok(Component::Linear { c0: args[0], c1: args[1] })
            }
            "sinusoid" => {
                want(4)?;
                Ok(Component::Sinusoid { base: args[0], amplitude: args[1], frequency: args[2], phase: args[3] })
            }
            "regime_switch" => {
                if args.len() % 2 == 0 {
                    return Err(Error::Scenario(
                        "regime_switch takes level, breakpoint, level, ... (odd count)".into(),
                    ));
                }
                let levels: Vec<f64> = args.iter().step_by(2).copied().collect();
                let breakpoints: Vec<f64> = args.iter().skip(1).step_by(2).copied().collect();
                if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Scenario("regime_switch breakpoints must increase".into()));
                }
                Ok(Component::RegimeSwitch { levels, breakpoints })
            }
            other => Err(Error::Scenario(format!("unknown component kind '{other}'"))),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Constant(c) => write!(f, "constant({c})"),
            Component::Linear { c0, c1 } => write!(f, "linear({c0}, {c1})"),
            Component::Sinusoid { base, amplitude, frequency, phase } => {
                write!(f, "sinusoid({base}, {amplitude}, {frequency}, {phase})")
            }
            Component::RegimeSwitch { levels, breakpoints } => {
                write!(f, "regime_switch({}", levels[0])?;
                for (b, l) in breakpoints.iter().zip(&levels[1..]) {
                    write!(f, ", {b}, {l}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Sum of components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile(pub Vec<Component>);

impl Profile {
    pub fn constant(c: f64) -> Self {
        Profile(vec![Component::Constant(c)])
    }

    pub fn sinusoid(base: f64, amplitude: f64, frequency: f64, phase: f64) -> Self {
        Profile(vec![Component::Sinusoid { base, amplitude, frequency, phase }])
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().map(|c| c.eval(t)).sum()
    }

    pub fn is_smooth(&self) -> bool {
        self.0.iter().all(Component::is_smooth)
    }

    /// `∫_a^b` by composite Simpson on 16 sub-intervals.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        simpson(|t| self.eval(t), a, b).0
    }

    /// `(min, max)` over a dense grid of `[0, horizon]`.
    pub fn range_on(&self, horizon: f64) -> (f64, f64) {
        (0..=CHECK_GRID)
            .map(|i| self.eval(horizon * i as f64 / CHECK_GRID as f64))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = Vec::new();
        for term in split_top_level(s) {
            let term = term.trim();
            let open = term.find('(').ok_or_else(|| Error::Scenario(format!("expected kind(params) in '{term}'")))?;
            let inner = term[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| Error::Scenario(format!("missing ')' in '{term}'")))?;
            let args = inner
                .split(',')
                .map(|a| a.trim().parse::<f64>().map_err(|_| Error::Scenario(format!("bad number '{}'", a.trim()))))
                .collect::<Result<Vec<_>>>()?;
            parts.push(Component::from_parts(term[..open].trim(), &args)?);
        }
        if parts.is_empty() {
            return Err(Error::Scenario("empty profile".into()));
        }
        Ok(Profile(parts))
    }
}

/// Splits on '+' outside parentheses (signs inside numbers stay intact).
fn split_top_level(s: &str) -> Vec<&str> {
    let mut depth = 0i32;
    let mut start = 0;
    let mut out = Vec::new();
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            '+' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let h = (b - a) / SIMPSON_INTERVALS as f64;
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    for i in 0..=SIMPSON_INTERVALS {
        let y = f(a + h * i as f64);
        min = min.min(y);
        let w = if i == 0 || i == SIMPSON_INTERVALS {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * y;
    }
    (sum * h / 3.0, min)
}

/// Deterministic drift/volatility model on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub mu: Profile,
    pub v: Profile,
    pub horizon: f64,
    pub s0: f64,
    /// Declared smoothness order.
    pub k: usize,
}

impl Scenario {
    pub fn new(mu: Profile, v: Profile, horizon: f64, s0: f64, k: usize) -> Result<Self> {
        let s = Self { mu, v, horizon, s0, k };
        s.validate()?;
        Ok(s)
    }

    /// Constant drift `mu` and sinusoidal volatility with unit frequency.
    pub fn sinusoid(mu: f64, base: f64, amplitude: f64, k: usize) -> Result<Self> {
        Self::new(Profile::constant(mu), Profile::sinusoid(base, amplitude, 1.0, 0.0), 1.0, 100.0, k)
    }

    pub fn constant(mu: f64, v: f64) -> Result<Self> {
        Self::new(Profile::constant(mu), Profile::constant(v), 1.0, 100.0, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Scenario(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.s0.is_finite() && self.s0 > 0.0) {
            return Err(Error::Scenario(format!("initial price must be positive, got {}", self.s0)));
        }
        let (v_lo, v_hi) = self.v.range_on(self.horizon);
        if !(v_lo > 0.0 && v_hi.is_finite()) {
            return Err(Error::Scenario(format!("volatility must be positive and bounded, range [{v_lo}, {v_hi}]")));
        }
        let (m_lo, m_hi) = self.mu.range_on(self.horizon);
        if !(m_lo > 0.0 && m_hi.is_finite()) {
            return Err(Error::Scenario(format!("drift must be positive and bounded, range [{m_lo}, {m_hi}]")));
        }
        if self.k > 0 && !self.v.is_smooth() {
            return Err(Error::Scenario(format!(
                "regime_switch volatility is not Lipschitz; declared order {} needs a smooth profile",
                self.k
            )));
        }
        Ok(())
    }

    /// Whether the volatility profile supports smoothness order `k`.
    pub fn supports_order(&self, k: usize) -> bool {
        k == 0 || self.v.is_smooth()
    }

    pub fn sup_v(&self) -> f64 {
        self.v.range_on(self.horizon).1
    }

    pub fn sup_mu(&self) -> f64 {
        self.mu.range_on(self.horizon).1
    }

    /// Parses the key-value scenario format.
    ///
    /// ```text
    /// # comment
    /// horizon = 1
    /// s0 = 100
    /// k = 0
    /// mu = constant(0.05)
    /// v = sinusoid(0.1, 0.05, 1, 0) + linear(0, 0.01)
    /// ```
    ///
    /// Components: `constant(c)`, `linear(c0, c1)`,
    /// `sinusoid(base, amplitude, frequency, phase)` and
    /// `regime_switch(level0, break1, level1, ...)`; `+` sums them.
    pub fn parse(text: &str) -> Result<Self> {
        let (mut mu, mut v) = (None, None);
        let (mut horizon, mut s0, mut k) = (1.0, 100.0, 0usize);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Scenario(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got '{line}'")))?;
            let value = value.trim();
            let real = || value.parse::<f64>().map_err(|_| bad(format!("bad number '{value}'")));
            match key.trim() {
                "horizon" => horizon = real()?,
                "s0" => s0 = real()?,
                "k" => k = value.parse().map_err(|_| bad(format!("bad order '{value}'")))?,
                "mu" => mu = Some(value.parse::<Profile>().map_err(|e| bad(e.to_string()))?),
                "v" => v = Some(value.parse::<Profile>().map_err(|e| bad(e.to_string()))?),
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        let mu = mu.ok_or_else(|| Error::Scenario("missing 'mu'".into()))?;
        let v = v.ok_or_else(|| Error::Scenario("missing 'v'".into()))?;
        Self::new(mu, v, horizon, s0, k)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "horizon = {}", self.horizon)?;
        writeln!(f, "s0 = {}", self.s0)?;
        writeln!(f, "k = {}", self.k)?;
        writeln!(f, "mu = {}", self.mu)?;
        writeln!(f, "v = {}", self.v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    /// `S(t_0), ..., S(t_n)`.
    pub prices: Vec<f64>,
    pub xs: HeteroSeries,
    /// Interval averages `(1/Δ) ∫ v` over each of the `n` intervals.
    pub v_bar: Vec<f64>,
    pub mu_bar: Vec<f64>,
    pub delta: f64,
    pub seed: u64,
}

impl PathResult {
    /// CSV with columns `t,price,x,v_bar`; the first row carries only `S(0)`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "price", "x", "v_bar"])?;
        w.write_record(["0".to_string(), self.prices[0].to_string(), String::new(), String::new()])?;
        for i in 0..self.xs.len() {
            let t = self.delta * (i + 1) as f64;
            w.write_record([
                t.to_string(),
                self.prices[i + 1].to_string(),
                self.xs[i].to_string(),
                self.v_bar[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples a price path with `n` intervals over the scenario horizon.
pub fn generate_path(scenario: &Scenario, n: usize, seed: u64) -> Result<PathResult> {
    if n < 2 {
        return Err(Error::arg(format!("need at least 2 intervals, got {n}")));
    }
    let delta = scenario.horizon / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prices = Vec::with_capacity(n + 1);
    let mut v_bar = Vec::with_capacity(n);
    let mut mu_bar = Vec::with_capacity(n);
    prices.push(scenario.s0);
    for i in 0..n {
        let (a, b) = (delta * i as f64, delta * (i + 1) as f64);
        let (var, v_min) = simpson(|t| scenario.v.eval(t), a, b);
        if !(v_min > 0.0 && var > 0.0) {
            return Err(Error::Scenario(format!("non-positive volatility on interval {i} [{a}, {b}]")));
        }
        let drift = scenario.mu.integrate(a, b);
        let z: f64 = StandardNormal.sample(&mut rng);
        let log_return = drift - 0.5 * var + var.sqrt() * z;
        let last = prices[i];
        prices.push(last * log_return.exp());
        v_bar.push(var / delta);
        mu_bar.push(drift / delta);
    }
    let xs = compute_heteroscedasticity(&prices, delta)?;
    Ok(PathResult { prices, xs, v_bar, mu_bar, delta, seed })
}

/// `X_i = (1/Δ) ln²(S(t_i)/S(t_{i-1}))`.
pub fn compute_heteroscedasticity(prices: &[f64], delta: f64) -> Result<HeteroSeries> {
    if prices.len() < 2 {
        return Err(Error::arg(format!("need at least 2 prices, got {}", prices.len())));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::arg(format!("sampling interval must be positive, got {delta}")));
    }
    if let Some((index, p)) = prices.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::Data { index, message: format!("price {p} is not positive") });
    }
    Ok(HeteroSeries(
        prices
            .windows(2)
            .map(|w| {
                let r = (w[1] / w[0]).ln();
                r * r / delta
            })
            .collect(),
    ))
}

/// Per-interval split `X_i = v_{i-1} + η_i + θ_i` with `Eη_i² = σ²_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub eta: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma_sq: Vec<f64>,
}

/// Splits the observations of a simulated path into signal, zero-mean noise
/// and the `O(Δ)` drift term `θ_i = Δ(2μ - v)²/4`.
pub fn decomposition_diagnostics(scenario: &Scenario, path: &PathResult) -> Result<Decomposition> {
    let n = path.xs.len();
    if path.v_bar.len() != n || path.mu_bar.len() != n {
        return Err(Error::arg("path is missing interval averages"));
    }
    let implied = path.delta * n as f64;
    if (implied - scenario.horizon).abs() > 1e-9 * scenario.horizon {
        return Err(Error::arg(format!("path covers {implied}, scenario horizon is {}", scenario.horizon)));
    }
    let d = path.delta;
    let mut out = Decomposition { eta: Vec::with_capacity(n), theta: Vec::with_capacity(n), sigma_sq: Vec::with_capacity(n) };
    for i in 0..n {
        let (v, mu) = (path.v_bar[i], path.mu_bar[i]);
        let c = 2.0 * mu - v;
        let theta = 0.25 * d * c * c;
        out.theta.push(theta);
        out.eta.push(path.xs[i] - v - theta);
        out.sigma_sq.push(d * v * c * c + 2.0 * v * v);
    }
    Ok(out)
}

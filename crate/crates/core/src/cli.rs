//! Command-line surface.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{self, ExperimentOptions};
use crate::filters::{self, Init};
use crate::simulate::{self, HeteroSeries, Scenario};
use crate::tuning::{self, TunedParams};

/// Environment variable naming the directory for outputs written without `--out`.
pub const OUT_DIR_VAR: &str = "VOLTRACK_OUT_DIR";
pub const DEFAULT_DELTA: f64 = 1.0 / 252.0;

const PRICE_COLUMNS: [&str; 5] = ["price", "adjclose", "adj_close", "adj close", "close"];
const TIME_COLUMNS: [&str; 4] = ["date", "time", "timestamp", "t"];

const AFTER_HELP: &str = "\
Price CSV input: a header row is required. The price column is the one named
price, adjclose, adj_close or close (case-insensitive); otherwise the only
column, or the second of exactly two columns (the first is then taken as
timestamps). Prices must be positive. Observations are X_i = ln^2(S_i/S_{i-1})/delta.

Outputs: estimates CSV `index,x,v_hat,residual`; path CSV `t,price,x,v_bar`;
convergence CSV `n,mse`; ordering CSV `theta,s_n,v_n`; bench CSV
`series,method,sn`. JSON reports carry `schema_version`. Without --out, files
go to $VOLTRACK_OUT_DIR (or the current directory).";

#[derive(Debug, Parser)]
#[command(name = "voltrack", version, about = "Adaptive tracking of historical volatility", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a filter over a price series and write its one-step predictions.
    Track(TrackArgs),
    /// Tune a filter on a price series and write the tuning report as JSON.
    Tune(TuneArgs),
    /// Simulate a price path from a scenario file.
    Simulate(SimulateArgs),
    /// Tune every method on each input series and tabulate the best S_n.
    Bench(BenchArgs),
    /// Estimate the convergence rate of the tuned filter on simulated paths.
    Convergence(ConvergenceArgs),
    /// Compare the S_n and V_n orderings over a grid of theta values.
    Ordering(OrderingArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterKind {
    Garch11,
    Garch22,
    /// Plain order-0 adaptive filter.
    Filter0,
    /// Order-0 filter with mean reversion.
    Filter1,
    /// Order-1 filter with mean reversion.
    Filter2,
    /// Plain adaptive filter of order --k.
    Adaptive,
}

impl FilterKind {
    fn param_names(self) -> &'static [&'static str] {
        match self {
            FilterKind::Garch11 => &["K", "g1", "a1"],
            FilterKind::Garch22 => &["K", "g1", "g2", "a1", "a2"],
            FilterKind::Filter0 | FilterKind::Adaptive => &["theta"],
            FilterKind::Filter1 => &["theta", "K", "a1"],
            FilterKind::Filter2 => &["theta", "K", "a1", "a2"],
        }
    }
}

/// Where the observations come from.
#[derive(Debug, Args)]
pub struct SeriesArgs {
    /// Price CSV.
    #[arg(long, conflicts_with = "scenario")]
    pub input: Option<PathBuf>,
    /// Sampling interval in years.
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    /// Simulate the series from this scenario file instead of reading prices.
    #[arg(long, requires = "n")]
    pub scenario: Option<PathBuf>,
    /// Number of simulated intervals.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Filter family, order and parameters.
#[derive(Debug, Args)]
pub struct RunConfig {
    #[arg(long, value_enum)]
    pub filter: FilterKind,
    /// Smoothness order for `adaptive`.
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    /// Comma-separated parameters: garch11 K,g1,a1; garch22 K,g1,g2,a1,a2;
    /// filter0/adaptive theta; filter1 theta,K,a1; filter2 theta,K,a1,a2.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required_unless_present = "tune", conflicts_with = "tune")]
    pub params: Option<Vec<f64>>,
    /// Choose parameters by minimizing S_n.
    #[arg(long)]
    pub tune: bool,
}

impl RunConfig {
    fn order(&self) -> Result<usize> {
        match self.filter {
            FilterKind::Adaptive => {
                if self.k > crate::gains::MAX_ORDER {
                    return Err(Error::arg(format!("order {} exceeds {}", self.k, crate::gains::MAX_ORDER)));
                }
                Ok(self.k)
            }
            FilterKind::Filter2 => Ok(1),
            _ => Ok(0),
        }
    }

    /// Explicit parameters in the shape of a tuning result.
    pub fn explicit(&self) -> Result<Option<TunedParams>> {
        let Some(p) = &self.params else {
            return Ok(None);
        };
        let names = self.filter.param_names();
        if p.len() != names.len() {
            return Err(Error::arg(format!(
                "{:?} takes {} parameters ({}), got {}",
                self.filter,
                names.len(),
                names.join(","),
                p.len()
            )));
        }
        let k = self.order()?;
        Ok(Some(match self.filter {
            FilterKind::Garch11 => TunedParams::Garch { k_const: p[0], g_coeffs: vec![p[1]], a_coeffs: vec![p[2]] },
            FilterKind::Garch22 => {
                TunedParams::Garch { k_const: p[0], g_coeffs: vec![p[1], p[2]], a_coeffs: vec![p[3], p[4]] }
            }
            FilterKind::Filter0 | FilterKind::Adaptive => TunedParams::Filter0 { k, theta: p[0] },
            FilterKind::Filter1 => TunedParams::Filter1 { theta: p[0], k_level: p[1], a1: p[2] },
            FilterKind::Filter2 => TunedParams::Filter2 { theta: p[0], k_level: p[1], a1: p[2], a2: p[3] },
        }))
    }

    pub fn tune_on(&self, xs: &[f64]) -> Result<tuning::TuningReport> {
        match self.filter {
            FilterKind::Garch11 => tuning::fit_garch(xs, 1, 1),
            FilterKind::Garch22 => tuning::fit_garch(xs, 2, 2),
            FilterKind::Filter0 | FilterKind::Adaptive => tuning::tune_filter0(xs, self.order()?),
            FilterKind::Filter1 => tuning::tune_filter1(xs),
            FilterKind::Filter2 => tuning::tune_filter2(xs),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
    #[command(flatten)]
    pub run: RunConfig,
    /// Boundary-layer factor for the V_n summary of simulated series.
    #[arg(long, default_value_t = 1.0)]
    pub burn_in_factor: f64,
    /// Estimates CSV (index,x,v_hat,residual).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
    #[arg(long, value_enum)]
    pub filter: FilterKind,
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    /// Tuning report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Path CSV (t,price,x,v_bar).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Price CSV; repeat for several series. The file stem names the row.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Sampling interval in years; recorded in the report.
    #[arg(long)]
    pub delta: f64,
    /// Bench CSV (series,method,sn); the JSON report goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub burn_in_factor: f64,
    /// Held-out paths used to tune theta.
    #[arg(long, default_value_t = 5)]
    pub tuning_paths: usize,
}

impl ExperimentArgs {
    fn options(&self) -> Result<ExperimentOptions> {
        if !(self.burn_in_factor > 0.0) {
            return Err(Error::arg("burn-in factor must be positive"));
        }
        Ok(ExperimentOptions {
            base_seed: self.base_seed,
            burn_in_factor: self.burn_in_factor,
            tuning_paths: self.tuning_paths,
        })
    }
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, default_value_t = 0)]
    pub k: usize,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "1000,4000,16000")]
    pub n: Vec<usize>,
    /// Convergence CSV (n,mse); JSON and a log-log plot file go next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OrderingArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, default_value_t = 4000)]
    pub n: usize,
    /// Explicit comma-separated theta grid.
    #[arg(long, value_delimiter = ',')]
    pub thetas: Option<Vec<f64>>,
    /// Size of the default log-spaced grid over the stable tuning range.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    /// Ordering CSV (theta,s_n,v_n); the JSON report goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub name: String,
    pub timestamps: Option<Vec<String>>,
    pub prices: Vec<f64>,
    pub delta: f64,
}

impl PriceSeries {
    pub fn observations(&self) -> Result<HeteroSeries> {
        simulate::compute_heteroscedasticity(&self.prices, self.delta)
    }
}

fn input_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Input { path: path.to_path_buf(), line, message: message.into() }
}

/// Reads a price CSV (see the `--help` text for the accepted layouts).
pub fn load_prices(path: &Path, delta: f64) -> Result<PriceSeries> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::arg(format!("delta must be positive, got {delta}")));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::arg(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| csv_input_error(path, e))?.clone();
    let names: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    let named = |set: &[&str]| names.iter().position(|h| set.contains(&h.as_str()));
    let price_col = named(&PRICE_COLUMNS)
        .or(match names.len() {
            1 => Some(0),
            2 => Some(1),
            _ => None,
        })
        .ok_or_else(|| input_error(path, 1, format!("no price column among {:?}", names)))?;
    let time_col = named(&TIME_COLUMNS).filter(|&c| c != price_col).or((names.len() == 2 && price_col == 1).then_some(0));

    let mut prices = Vec::new();
    let mut timestamps = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_input_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = record.get(price_col).unwrap_or("");
        if field.is_empty() {
            return Err(input_error(path, line, "missing price"));
        }
        let price: f64 = field.parse().map_err(|_| input_error(path, line, format!("bad price '{field}'")))?;
        if !(price.is_finite() && price > 0.0) {
            return Err(input_error(path, line, format!("price {price} is not positive")));
        }
        prices.push(price);
        if let Some(c) = time_col {
            timestamps.push(record.get(c).unwrap_or("").to_string());
        }
    }
    if prices.len() < 2 {
        return Err(input_error(path, 1, format!("need at least 2 prices, got {}", prices.len())));
    }
    let name = path.file_stem().map_or_else(|| "series".into(), |s| s.to_string_lossy().into_owned());
    Ok(PriceSeries { name, timestamps: time_col.map(|_| timestamps), prices, delta })
}

fn csv_input_error(path: &Path, e: csv::Error) -> Error {
    match e.position() {
        Some(p) => input_error(path, p.line(), e.to_string()),
        None => Error::Csv(e),
    }
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn output_path(out: &Option<PathBuf>, default_name: &str) -> PathBuf {
    match out {
        Some(p) => p.clone(),
        None => std::env::var_os(OUT_DIR_VAR).map_or_else(|| PathBuf::from("."), PathBuf::from).join(default_name),
    }
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let doc = eval::to_json_document(value)?;
    write_atomic(path, |w| {
        w.write_all(doc.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

struct LoadedSeries {
    xs: HeteroSeries,
    /// True interval-average volatility when simulated.
    v_bar: Option<Vec<f64>>,
    order_hint: usize,
}

fn load_series(args: &SeriesArgs) -> Result<LoadedSeries> {
    match (&args.input, &args.scenario) {
        (Some(path), None) => {
            let series = load_prices(path, args.delta)?;
            Ok(LoadedSeries { xs: series.observations()?, v_bar: None, order_hint: 0 })
        }
        (None, Some(cfg)) => {
            let scenario = Scenario::from_file(cfg)?;
            let n = args.n.ok_or_else(|| Error::arg("--scenario needs --n"))?;
            let path = simulate::generate_path(&scenario, n, args.seed)?;
            Ok(LoadedSeries { xs: path.xs, v_bar: Some(path.v_bar), order_hint: scenario.k })
        }
        _ => Err(Error::arg("give exactly one of --input or --scenario")),
    }
}

fn track(args: &TrackArgs) -> Result<()> {
    let series = load_series(&args.series)?;
    let params = match args.run.explicit()? {
        Some(p) => p,
        None => args.run.tune_on(&series.xs)?.best_params,
    };
    let result = filters::run(&series.xs, &params.track_config(Init::Warmup))?;
    let out = output_path(&args.out, "estimates.csv");
    write_atomic(&out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["index", "x", "v_hat", "residual"])?;
        for i in 0..series.xs.len() {
            csv.write_record([
                i.to_string(),
                series.xs[i].to_string(),
                result.estimates[i].to_string(),
                result.residuals[i].to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    let mut summary = format!("S_n = {:e}", result.s_n);
    if let Some(v_bar) = &series.v_bar {
        if !(args.burn_in_factor > 0.0) {
            return Err(Error::arg("burn-in factor must be positive"));
        }
        let k = match params {
            TunedParams::Filter0 { k, .. } => k,
            TunedParams::Filter2 { .. } => 1,
            _ => series.order_hint.min(crate::gains::MAX_ORDER),
        };
        let burn = eval::burn_in_index(series.xs.len(), k, args.burn_in_factor);
        summary.push_str(&format!(", V_n = {:e} (from index {burn})", eval::vn_metric(v_bar, &result.estimates, burn)?));
    }
    println!("{summary}; params {}", serde_json::to_string(&params)?);
    Ok(())
}

fn tune(args: &TuneArgs) -> Result<()> {
    let series = load_series(&args.series)?;
    let config = RunConfig { filter: args.filter, k: args.k, params: None, tune: true };
    let report = config.tune_on(&series.xs)?;
    let out = output_path(&args.out, "tuning.json");
    write_json(&out, &report)?;
    println!("best S_n = {:e}; params {}", report.best_sn, serde_json::to_string(&report.best_params)?);
    Ok(())
}

fn simulate_cmd(args: &SimulateArgs) -> Result<()> {
    let scenario = Scenario::from_file(&args.scenario)?;
    let path = simulate::generate_path(&scenario, args.n, args.seed)?;
    let out = output_path(&args.out, "path.csv");
    write_atomic(&out, |w| path.write_csv(w))?;
    println!("wrote {} intervals (delta = {}) to {}", args.n, path.delta, out.display());
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let series = args
        .input
        .iter()
        .map(|p| {
            let s = load_prices(p, args.delta)?;
            Ok((s.name.clone(), s.observations()?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = eval::benchmark_report(&series)?;
    report.delta = Some(args.delta);
    let out = output_path(&args.out, "bench.csv");
    write_atomic(&out, |w| report.write_csv(w))?;
    write_json(&sibling(&out, "json"), &report)?;
    for row in &report.rows {
        let cells: Vec<String> = report
            .methods
            .iter()
            .zip(&row.cells)
            .map(|(m, c)| format!("{}={}", m.name(), c.map_or("-".into(), |v| format!("{v:.6e}"))))
            .collect();
        println!("{} (n={}): {}", row.name, row.n, cells.join(" "));
    }
    Ok(())
}

fn convergence(args: &ConvergenceArgs) -> Result<()> {
    let scenario = Scenario::from_file(&args.experiment.scenario)?;
    let opts = args.experiment.options()?;
    let result = eval::convergence_experiment_with(&scenario, args.k, &args.n, args.experiment.seeds, &opts)?;
    let out = output_path(&args.out, "convergence.csv");
    write_atomic(&out, |w| result.write_csv(w))?;
    write_json(&sibling(&out, "json"), &result)?;
    write_atomic(&sibling(&out, "plot.dat"), |w| result.write_plot(w))?;
    println!("fitted slope {:.4} (theory {:.4})", result.fitted_slope, result.theoretical_slope);
    Ok(())
}

fn ordering(args: &OrderingArgs) -> Result<()> {
    let scenario = Scenario::from_file(&args.experiment.scenario)?;
    let opts = args.experiment.options()?;
    let grid = match &args.thetas {
        Some(g) => g.clone(),
        None => eval::default_theta_grid(scenario.k, args.n, args.points)?,
    };
    let result = eval::ordering_agreement_with(&scenario, &grid, args.n, args.experiment.seeds, &opts)?;
    let out = output_path(&args.out, "ordering.csv");
    write_atomic(&out, |w| result.write_csv(w))?;
    write_json(&sibling(&out, "json"), &result)?;
    println!("kendall tau {:.4}; argmin match {}", result.kendall_tau, result.argmin_match);
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Track(a) => track(a),
        Command::Tune(a) => tune(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Bench(a) => bench(a),
        Command::Convergence(a) => convergence(a),
        Command::Ordering(a) => ordering(a),
    }
}

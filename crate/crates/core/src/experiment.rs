//! Experiment runner behind the command-line tool.
//!
//! A run takes an [`ExperimentConfig`], fans replications out over the rayon
//! pool and writes CSV and JSON files into `config.outputs`. Replication `i`
//! of a cell (one `(q, n)` pair) draws from
//! `replication_stream(cell_seed, i)` with
//! `cell_seed = hash64(hash64(seed, q_index), n_index)`. Results are
//! collected in replication order, so outputs do not depend on the number
//! of threads.
//!
//! Every output file starts with a header line naming the tool version and
//! the SHA-256 of the effective config.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::airy::{self, AiryEvaluator, AiryPair};
use crate::diffusion::{reflect, sample_hitting_time, sample_reflected_at, simulate_w, DriftSpec};
use crate::dist::{ArrivalModel, QueueModel, ServiceModel};
use crate::error::{Error, Result};
use crate::passage::{fpt_general, GeneralFptParams};
use crate::queue_sim::{
    simulate_delta_queue, simulate_embedded_general, simulate_first_busy_period, simulate_levels_at, EventKind,
    HeavyTrafficConfig, Horizon,
};
use crate::rng::{hash64, replication_stream};
use crate::scaling::{criticality_residual, rescale_physical_with};
use crate::stats::{gaussian_kde, histogram_density, mc_summary, quantile_sorted, relative_error, silverman_bandwidth, split_censored, Observation};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seed offset for streams that are shared by every cell of a run.
const SHARED_STREAM: u64 = u64::MAX;

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Table2,
    Table3,
    Table4,
    Density,
    Paths,
    Validate,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Table2 => "table2",
            Experiment::Table3 => "table3",
            Experiment::Table4 => "table4",
            Experiment::Density => "density",
            Experiment::Paths => "paths",
            Experiment::Validate => "validate",
        }
    }
}

/// `q` given as one number or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QValues {
    One(f64),
    Many(Vec<f64>),
}

impl QValues {
    pub fn values(&self) -> Vec<f64> {
        match self {
            QValues::One(q) => vec![*q],
            QValues::Many(v) => v.clone(),
        }
    }
}

/// Fault-injection switches for the validation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DebugOptions {
    /// Overrides both Airy branch points.
    pub airy_branch_point: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: u64,
    pub n_values: Vec<u64>,
    pub model: QueueModel,
    pub beta: f64,
    pub q: QValues,
    pub ell: u32,
    pub outputs: PathBuf,
    /// Diffusion time step.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Limit-time grid `0, grid_step, ..., grid_end` for path output.
    #[serde(default = "default_grid_end")]
    pub grid_end: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    /// Busy periods longer than this (in limit time) are censored.
    #[serde(default = "default_max_limit_time")]
    pub max_limit_time: f64,
    /// Evaluation points of the density comparison.
    #[serde(default = "default_density_points")]
    pub density_points: usize,
    #[serde(default)]
    pub debug: DebugOptions,
}

fn default_dt() -> f64 {
    1e-4
}
fn default_grid_end() -> f64 {
    3.0
}
fn default_grid_step() -> f64 {
    0.05
}
fn default_max_limit_time() -> f64 {
    200.0
}
fn default_density_points() -> usize {
    50
}

fn config_error(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

fn under(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => config_error(format!("{prefix}.{name}"), reason),
        Error::CriticalityImpossible { f0 } => config_error(prefix, format!("density at zero is {f0}")),
        other => config_error(prefix, other.to_string()),
    }
}

impl ExperimentConfig {
    /// Default config of each experiment: the settings of the published tables.
    pub fn preset(which: Experiment) -> Self {
        let exp_unit = QueueModel {
            arrival: ArrivalModel::Exponential { rate: 1.0 },
            service: ServiceModel::Exponential { mean: 1.0 },
        };
        let mut c = Self {
            seed: 1,
            replications: 10_000,
            n_values: vec![10, 100, 1_000, 10_000, 100_000],
            model: exp_unit,
            beta: 1.0,
            q: QValues::Many(vec![1.0, 2.0]),
            ell: 1,
            outputs: PathBuf::from("out"),
            dt: default_dt(),
            grid_end: default_grid_end(),
            grid_step: default_grid_step(),
            max_limit_time: default_max_limit_time(),
            density_points: default_density_points(),
            debug: DebugOptions::default(),
        };
        match which {
            Experiment::Table2 => {}
            Experiment::Table3 => {
                c.model.arrival = ArrivalModel::Hyperexponential {
                    weights: vec![0.2, 0.8],
                    rates: vec![2.0, 0.75],
                };
            }
            Experiment::Table4 => {
                c.model.arrival = ArrivalModel::HalfNormal {
                    scale: std::f64::consts::FRAC_PI_2.sqrt(),
                };
                c.model.service = ServiceModel::Exponential {
                    mean: std::f64::consts::FRAC_PI_2,
                };
                c.ell = 2;
            }
            Experiment::Density => {
                c.replications = 100_000;
                c.n_values = vec![10_000];
                c.q = QValues::One(1.0);
            }
            Experiment::Paths => {
                c.model.service = ServiceModel::Deterministic { value: 1.0 };
                c.n_values = vec![1_000, 10_000, 100_000];
                c.q = QValues::One(1.0);
            }
            Experiment::Validate => {
                c.replications = 20;
                c.n_values = vec![1_000, 10_000];
            }
        }
        c
    }

    /// Parse and validate a JSON config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_error(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    /// Parse and validate a JSON config; errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(if path == "." { "config".to_string() } else { path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(config_error("replications", "must be at least 1"));
        }
        if self.n_values.is_empty() {
            return Err(config_error("n_values", "must not be empty"));
        }
        if let Some(i) = self.n_values.iter().position(|&n| n == 0) {
            return Err(config_error(format!("n_values[{i}]"), "population must be at least 1"));
        }
        if !self.beta.is_finite() {
            return Err(config_error("beta", "must be finite"));
        }
        let qs = self.q.values();
        if qs.is_empty() {
            return Err(config_error("q", "must not be empty"));
        }
        if let Some(i) = qs.iter().position(|q| !(q.is_finite() && *q >= 0.0)) {
            let path = match self.q {
                QValues::One(_) => "q".to_string(),
                QValues::Many(_) => format!("q[{i}]"),
            };
            return Err(config_error(path, "must be finite and nonnegative"));
        }
        if self.ell < 1 {
            return Err(config_error("ell", "contact order must be at least 1"));
        }
        self.model.arrival.validate().map_err(|e| under("model.arrival", e))?;
        self.model.service.validate().map_err(|e| under("model.service", e))?;
        for (name, v) in [
            ("dt", self.dt),
            ("grid_step", self.grid_step),
            ("max_limit_time", self.max_limit_time),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(name, "must be positive"));
            }
        }
        if !(self.grid_end >= 0.0 && self.grid_end.is_finite()) {
            return Err(config_error("grid_end", "must be nonnegative"));
        }
        if self.density_points < 2 {
            return Err(config_error("density_points", "need at least 2 points"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring `outputs` (where
    /// files go does not change what is in them).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.outputs = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn header_line(&self) -> String {
        header_line(Some(self))
    }

    /// Limit-time grid `0, grid_step, ..., grid_end`.
    pub fn grid(&self) -> Vec<f64> {
        let m = (self.grid_end / self.grid_step + 1e-9).floor() as usize;
        (0..=m).map(|k| snap(k as f64 * self.grid_step)).collect()
    }

    fn heavy_traffic(&self, n: u64, q: f64) -> Result<HeavyTrafficConfig> {
        HeavyTrafficConfig::new(n, self.beta, self.ell, q)
    }

    fn warn_if_not_critical(&self) {
        for &n in &self.n_values {
            if let Ok(r) = criticality_residual(&self.model.arrival, &self.model.service, n, self.beta, self.ell) {
                if r.abs() > 1e-9 {
                    log::warn!("service is not critically scaled at n={n}: residual {r:.3e}");
                    return;
                }
            }
        }
    }
}

/// Rounds away float noise from grid arithmetic like `3 * 0.05`.
fn snap(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// `# transq <version> config_sha256=<hash>`; `none` without a config.
pub fn header_line(config: Option<&ExperimentConfig>) -> String {
    let hash = config.map_or_else(|| "none".to_string(), |c| c.hash());
    format!("# transq {VERSION} config_sha256={hash}")
}

fn cell_seed(seed: u64, q_index: usize, n_index: usize) -> u64 {
    hash64(hash64(seed, q_index as u64), n_index as u64)
}

fn csv_writer(header: &str, path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "{header}")?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(f))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

// ---------------------------------------------------------------- tables

/// One table cell, or the analytic row when `n` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub q: f64,
    pub n: Option<u64>,
    pub mean: f64,
    pub std_error: Option<f64>,
    pub ci95_low: Option<f64>,
    pub ci95_high: Option<f64>,
    pub replications: u64,
    pub censored: usize,
    pub rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableReport {
    pub header: String,
    pub experiment: Experiment,
    /// `1 - alpha`: busy periods are reported as `n^time_exponent * BP`.
    pub time_exponent: f64,
    pub beta: f64,
    pub rows: Vec<TableRow>,
}

impl TableReport {
    pub fn row(&self, q: f64, n: Option<u64>) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.q == q && r.n == n)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(&self.header, path)?;
        w.write_record([
            "q",
            "n",
            "mean",
            "std_error",
            "ci95_low",
            "ci95_high",
            "replications",
            "censored",
            "rel_error",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.q.to_string(),
                r.n.map_or_else(|| "inf".to_string(), |n| n.to_string()),
                r.mean.to_string(),
                opt(r.std_error),
                opt(r.ci95_low),
                opt(r.ci95_high),
                r.replications.to_string(),
                r.censored.to_string(),
                opt(r.rel_error),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parameters of the limiting hitting-time law for `l = 1`:
/// `q + beta f0 t + (f0'/2) t^2 + sqrt(f0^3 E[S^2]) B(t)`.
pub fn limit_fpt_params(config: &ExperimentConfig, q: f64) -> Result<GeneralFptParams> {
    let a = &config.model.arrival;
    if config.ell != 1 {
        return Err(config_error("ell", "the closed-form limit needs l = 1"));
    }
    Ok(GeneralFptParams {
        q,
        a: config.beta * a.f0(),
        k: -a.f0_prime(),
        sigma: (a.f0().powi(3) * config.model.service.second_moment()).sqrt(),
    })
}

/// `n^(1 - alpha) * BP` for every replication of one cell.
pub fn busy_period_samples(config: &ExperimentConfig, q: f64, n: u64, seed: u64) -> Result<Vec<Observation>> {
    let ht = config.heavy_traffic(n, q)?;
    if ht.initial_queue() == 0 {
        return Err(config_error("q", "must be positive for busy-period experiments"));
    }
    let scale = ht.time_scale();
    let max_time = config.max_limit_time / scale;
    let (arrival, service) = (&config.model.arrival, &config.model.service);
    (0..config.replications)
        .into_par_iter()
        .map(|i| {
            simulate_first_busy_period(&ht, arrival, service, &mut replication_stream(seed, i), max_time)
                .map(|o| o.scaled(scale))
        })
        .collect()
}

/// Simulated rows for every `(q, n)`, followed by the analytic limit row
/// for `table2` and `table3`.
pub fn table(config: &ExperimentConfig, which: Experiment) -> Result<TableReport> {
    config.validate()?;
    let analytic = match which {
        Experiment::Table2 | Experiment::Table3 => {
            if config.ell != 1 {
                return Err(config_error("ell", format!("{} expects l = 1", which.name())));
            }
            if !(config.model.arrival.f0_prime() < 0.0) {
                return Err(config_error("model.arrival", "the limit row needs f'_T(0) < 0"));
            }
            true
        }
        Experiment::Table4 => {
            if config.ell < 2 {
                return Err(config_error("ell", "table4 expects l >= 2"));
            }
            false
        }
        other => return Err(config_error("experiment", format!("{} is not a table", other.name()))),
    };
    config.warn_if_not_critical();
    let mut rows = Vec::new();
    for (qi, &q) in config.q.values().iter().enumerate() {
        let exact = if analytic {
            Some(fpt_general(&limit_fpt_params(config, q)?)?.mean)
        } else {
            None
        };
        for (ni, &n) in config.n_values.iter().enumerate() {
            let obs = busy_period_samples(config, q, n, cell_seed(config.seed, qi, ni))?;
            let (values, censored) = split_censored(&obs);
            if censored > 0 {
                log::warn!("q={q} n={n}: {censored} busy periods censored at {}", config.max_limit_time);
            }
            let s = mc_summary(&values, censored)?;
            rows.push(TableRow {
                q,
                n: Some(n),
                mean: s.mean,
                std_error: Some(s.std_error),
                ci95_low: Some(s.ci95_low),
                ci95_high: Some(s.ci95_high),
                replications: config.replications,
                censored,
                rel_error: exact.map(|e| relative_error(s.mean, e)).transpose()?,
            });
        }
        if let Some(e) = exact {
            rows.push(TableRow {
                q,
                n: None,
                mean: e,
                std_error: None,
                ci95_low: None,
                ci95_high: None,
                replications: 0,
                censored: 0,
                rel_error: None,
            });
        }
    }
    let alpha = crate::scaling::ratio_to_f64(crate::scaling::alpha(config.ell)?);
    Ok(TableReport {
        header: config.header_line(),
        experiment: which,
        time_exponent: 1.0 - alpha,
        beta: config.beta,
        rows,
    })
}

/// [`table`] plus `<outputs>/<name>.csv` and `<outputs>/<name>.json`.
pub fn run_table(config: &ExperimentConfig, which: Experiment) -> Result<TableReport> {
    let report = table(config, which)?;
    report.write_csv(&config.outputs.join(format!("{}.csv", which.name())))?;
    write_json(&report, &config.outputs.join(format!("{}.json", which.name())))?;
    Ok(report)
}

// --------------------------------------------------------------- density

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityReport {
    pub header: String,
    pub n: u64,
    pub q: f64,
    pub replications: u64,
    pub censored: usize,
    pub bandwidth: f64,
    /// Sup distance between the Gaussian KDE and the limit density on the grid.
    pub sup_distance: f64,
    /// Sup distance between a histogram with one bin per grid point and the
    /// bin-averaged limit density. Free of kernel smoothing bias.
    pub histogram_sup_distance: f64,
    pub analytic_mass: f64,
    pub analytic_mean: f64,
    pub simulated_mean: f64,
    /// Asymptotic `P(tau >= x)` of the limit law at a few large `x`.
    pub limit_tail: Vec<TailPoint>,
    /// Limit density on a fine grid over its numerical support: `(t, f)`.
    #[serde(skip)]
    pub limit_curve: Vec<(f64, f64)>,
    #[serde(skip)]
    pub grid: Vec<f64>,
    #[serde(skip)]
    pub kde: Vec<f64>,
    #[serde(skip)]
    pub analytic: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPoint {
    pub x: f64,
    pub probability: f64,
}

/// Points of the limit density at which the curve dump is evaluated.
const CURVE_POINTS: usize = 200;

impl DensityReport {
    /// Limit density dump with header `t,f`.
    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(&self.header, path)?;
        w.write_record(["t", "f"])?;
        for (t, f) in &self.limit_curve {
            w.write_record([t.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(&self.header, path)?;
        w.write_record(["grid", "kde_value", "analytic_value"])?;
        for ((t, k), a) in self.grid.iter().zip(&self.kde).zip(&self.analytic) {
            w.write_record([t.to_string(), k.to_string(), a.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gaussian KDE of simulated `n^(1/3) BP` against the limiting density, for
/// the first `q` and first `n` of the config.
pub fn density(config: &ExperimentConfig) -> Result<DensityReport> {
    config.validate()?;
    if config.ell != 1 {
        return Err(config_error("ell", "density comparison needs l = 1"));
    }
    config.warn_if_not_critical();
    let q = config.q.values()[0];
    let n = config.n_values[0];
    let limit = fpt_general(&limit_fpt_params(config, q)?)?;
    let obs = busy_period_samples(config, q, n, cell_seed(config.seed, 0, 0))?;
    let (mut values, censored) = split_censored(&obs);
    values.sort_by(f64::total_cmp);
    let top = quantile_sorted(&values, 0.995);
    let m = config.density_points;
    let grid: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) * top / m as f64).collect();
    let bandwidth = silverman_bandwidth(&values)?;
    let kde = gaussian_kde(&values, Some(bandwidth), &grid)?;
    let analytic = grid.iter().map(|&t| limit.density(t)).collect::<Result<Vec<_>>>()?;
    let sup_distance = kde
        .iter()
        .zip(&analytic)
        .fold(0.0_f64, |d, (k, a)| d.max((k - a).abs()));
    let hist = histogram_density(&values, 0.0, top, m)?;
    let width = top / m as f64;
    let mut histogram_sup_distance = 0.0_f64;
    for (j, h) in hist.iter().enumerate() {
        let avg = bin_average(|t| limit.density(t), j as f64 * width, (j + 1) as f64 * width)?;
        histogram_sup_distance = histogram_sup_distance.max((h - avg).abs());
    }
    let std = &limit.standard;
    let ts = limit.time_scale;
    let limit_tail = [8.0, 10.0, 12.0]
        .iter()
        .filter_map(|&x| {
            crate::passage::tail_probability(std.q(), std.beta(), std.sigma(), x / ts)
                .ok()
                .map(|probability| TailPoint { x, probability })
        })
        .collect();
    let (lo, hi) = std.support()?;
    let limit_curve = (0..CURVE_POINTS)
        .map(|j| {
            let t = ts * (lo + (hi - lo) * j as f64 / (CURVE_POINTS - 1) as f64);
            limit.density(t).map(|f| (t, f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityReport {
        header: config.header_line(),
        n,
        q,
        replications: config.replications,
        censored,
        bandwidth,
        sup_distance,
        histogram_sup_distance,
        analytic_mass: limit.standard.mass()?,
        analytic_mean: limit.mean,
        simulated_mean: mc_summary(&values, censored)?.mean,
        limit_tail,
        limit_curve,
        grid,
        kde,
        analytic,
    })
}

/// Mean of `f` over `[a, b]` by 5-point Gauss-Legendre.
pub fn bin_average(f: impl Fn(f64) -> Result<f64>, a: f64, b: f64) -> Result<f64> {
    const NODES: [(f64, f64); 5] = [
        (0.0, 0.568_888_888_888_888_9),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut sum = 0.0;
    for (x, w) in NODES {
        sum += w * f(mid + half * x)?;
    }
    Ok(0.5 * sum)
}

pub fn run_density(config: &ExperimentConfig) -> Result<DensityReport> {
    let report = density(config)?;
    report.write_csv(&config.outputs.join("density.csv"))?;
    report.write_curve_csv(&config.outputs.join("limit_density.csv"))?;
    write_json(&report, &config.outputs.join("density.json"))?;
    Ok(report)
}

// ----------------------------------------------------------------- paths

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathsRow {
    pub q: f64,
    pub n: u64,
    pub t: f64,
    pub queue_mean: f64,
    pub queue_var: f64,
    pub diffusion_mean: f64,
    pub diffusion_var: f64,
    pub joint_se: f64,
}

impl PathsRow {
    pub fn gap(&self) -> f64 {
        self.queue_mean - self.diffusion_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathsReport {
    pub header: String,
    pub replications: u64,
    pub dt: f64,
    pub rows: Vec<PathsRow>,
    /// One rescaled queue path and one reflected diffusion path on the grid
    /// (first `q`, first `n`): `(t, queue, reflected_w)`.
    #[serde(skip)]
    pub sample: Vec<(f64, f64, f64)>,
}

impl PathsReport {
    pub fn row(&self, q: f64, n: u64, t: f64) -> Option<&PathsRow> {
        self.rows.iter().find(|r| r.q == q && r.n == n && (r.t - t).abs() < 1e-9)
    }

    pub fn write_csv(&self, summary: &Path, sample: &Path) -> Result<()> {
        let mut w = csv_writer(&self.header, summary)?;
        w.write_record([
            "q",
            "n",
            "t",
            "queue_mean",
            "queue_var",
            "diffusion_mean",
            "diffusion_var",
            "joint_se",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.q.to_string(),
                r.n.to_string(),
                r.t.to_string(),
                r.queue_mean.to_string(),
                r.queue_var.to_string(),
                r.diffusion_mean.to_string(),
                r.diffusion_var.to_string(),
                r.joint_se.to_string(),
            ])?;
        }
        w.flush()?;
        let mut w = csv_writer(&self.header, sample)?;
        w.write_record(["t", "queue", "reflected_w"])?;
        for (t, a, b) in &self.sample {
            w.write_record([t.to_string(), a.to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn column_moments(rows: &[Vec<f64>], j: usize) -> Result<(f64, f64, f64)> {
    let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
    let s = mc_summary(&col, 0)?;
    let var = if col.len() > 1 {
        s.std_error * s.std_error * col.len() as f64
    } else {
        0.0
    };
    Ok((s.mean, var, s.std_error))
}

/// Limit diffusion of the physical queue for `l = 1`.
pub fn limit_drift(config: &ExperimentConfig, q: f64) -> Result<DriftSpec> {
    let a = &config.model.arrival;
    if config.ell != 1 {
        return Err(config_error("ell", "path comparison needs l = 1"));
    }
    DriftSpec::general_arrivals(q, config.beta, a.f0(), a.f0_prime(), config.model.service.second_moment())
}

/// Per-`t` means and variances of `n^(-alpha/2) Q(t n^(alpha-1))` and of
/// the reflected limit diffusion on the config grid. The diffusion samples
/// are shared by all `n` of a given `q`.
pub fn paths(config: &ExperimentConfig) -> Result<PathsReport> {
    config.validate()?;
    config.warn_if_not_critical();
    let grid = config.grid();
    let mut rows = Vec::new();
    let mut sample = Vec::new();
    for (qi, &q) in config.q.values().iter().enumerate() {
        let spec = limit_drift(config, q)?;
        let dseed = cell_seed(config.seed, qi, SHARED_STREAM as usize);
        let diff: Vec<Vec<f64>> = (0..config.replications)
            .into_par_iter()
            .map(|i| sample_reflected_at(&spec, &grid, config.dt, &mut replication_stream(dseed, i)))
            .collect::<Result<_>>()?;
        let dmom = (0..grid.len()).map(|j| column_moments(&diff, j)).collect::<Result<Vec<_>>>()?;
        for (ni, &n) in config.n_values.iter().enumerate() {
            let ht = config.heavy_traffic(n, q)?;
            let (ts, sp) = (ht.time_scale(), ht.space_scale());
            let phys: Vec<f64> = grid.iter().map(|t| t / ts).collect();
            let seed = cell_seed(config.seed, qi, ni);
            let queue: Vec<Vec<f64>> = (0..config.replications)
                .into_par_iter()
                .map(|i| {
                    let levels = simulate_levels_at(
                        &ht,
                        &config.model.arrival,
                        &config.model.service,
                        &mut replication_stream(seed, i),
                        &phys,
                    )?;
                    Ok(levels.iter().map(|&l| l as f64 / sp).collect())
                })
                .collect::<Result<_>>()?;
            for (j, &t) in grid.iter().enumerate() {
                let (qm, qv, qse) = column_moments(&queue, j)?;
                let (dm, dv, dse) = dmom[j];
                rows.push(PathsRow {
                    q,
                    n,
                    t,
                    queue_mean: qm,
                    queue_var: qv,
                    diffusion_mean: dm,
                    diffusion_var: dv,
                    joint_se: qse.hypot(dse),
                });
            }
            if qi == 0 && ni == 0 {
                sample = sample_paths(config, &ht, &spec, &grid)?;
            }
        }
    }
    Ok(PathsReport {
        header: config.header_line(),
        replications: config.replications,
        dt: config.dt,
        rows,
        sample,
    })
}

fn sample_paths(
    config: &ExperimentConfig,
    ht: &HeavyTrafficConfig,
    spec: &DriftSpec,
    grid: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    let end = grid.last().copied().unwrap_or(0.0);
    let mut rng = replication_stream(config.seed, SHARED_STREAM - 1);
    let path = simulate_delta_queue(
        ht,
        &config.model.arrival,
        &config.model.service,
        &mut rng,
        Horizon::Time((end / ht.time_scale()).max(f64::MIN_POSITIVE) * (1.0 + 1e-9)),
    )?;
    let queue = rescale_physical_with(&path, ht.n, ht.ell, grid)?;
    let steps_per_point = (config.grid_step / config.dt).round().max(1.0) as usize;
    let w = simulate_w(spec, end.max(config.dt), config.dt, &mut rng)?;
    let refl = reflect(&w.values)?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let k = (j * steps_per_point).min(refl.len() - 1);
            (t, queue.values[j], refl[k])
        })
        .collect())
}

pub fn run_paths(config: &ExperimentConfig) -> Result<PathsReport> {
    let report = paths(config)?;
    report.write_csv(&config.outputs.join("paths_summary.csv"), &config.outputs.join("paths_sample.csv"))?;
    write_json(&report, &config.outputs.join("paths.json"))?;
    Ok(report)
}

// -------------------------------------------------------------- validate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub header: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Checks(Vec<CheckResult>);

impl Checks {
    /// Passes when `value <= threshold` (NaN fails).
    fn at_most(&mut self, suite: &str, name: impl Into<String>, value: f64, threshold: f64) {
        self.0.push(CheckResult {
            suite: suite.into(),
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
        });
    }

    fn holds(&mut self, suite: &str, name: impl Into<String>, ok: bool) {
        self.at_most(suite, name, if ok { 0.0 } else { 1.0 }, 0.0);
    }
}

/// Largest `|Ai Bi' - Ai' Bi - 1/pi|` on `points` evenly spaced arguments of `[lo, hi]`.
pub fn wronskian_error(eval: &AiryEvaluator, lo: f64, hi: f64, points: usize) -> Result<f64> {
    let mut worst = 0.0_f64;
    for i in 0..points {
        let x = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let w = eval.eval(x)?.wronskian();
        worst = worst.max((w - std::f64::consts::FRAC_1_PI).abs());
    }
    Ok(worst)
}

/// Largest Airy ODE residual (step `1e-4`) on 201 points of `[lo, hi]`.
pub fn ode_residual_max(eval: &AiryEvaluator, lo: f64, hi: f64) -> Result<f64> {
    let mut worst = 0.0_f64;
    for i in 0..=200 {
        let x = lo + (hi - lo) * i as f64 / 200.0;
        worst = worst.max(airy::ode_residual(eval, x, 1e-4)?);
    }
    Ok(worst)
}

/// Runs the invariant suites of every module on the configured model.
pub fn validate(config: &ExperimentConfig) -> Result<ValidationReport> {
    config.validate()?;
    let mut c = Checks(Vec::new());
    let arrival = &config.model.arrival;
    let service = &config.model.service;

    c.at_most("dist", "cdf_monotone", arrival.cdf_grid_violation(), 1e-12);
    c.at_most("dist", "f0_consistency", arrival.f0_consistency(), 1e-6);
    c.at_most("dist", "f0_prime_consistency", arrival.f0_prime_consistency(), 1e-4);
    c.at_most("dist", "density_max_at_zero", arrival.density_max_excess(), 1e-12);
    c.holds("dist", "contact_order_matches_ell", arrival.contact_order() == Some(config.ell));
    let (lo, hi) = arrival.contact_ratio_bounds(config.ell);
    c.holds("dist", "contact_ratio_bounded", lo > 0.05 && hi < 20.0);

    for &n in &config.n_values {
        let r = criticality_residual(arrival, service, n, config.beta, config.ell)?;
        c.at_most("scaling", format!("criticality_residual[n={n}]"), r.abs(), 1e-12);
    }

    let eval = config
        .debug
        .airy_branch_point
        .map_or_else(AiryEvaluator::default, AiryEvaluator::with_branch_point);
    c.at_most("airy", "wronskian", wronskian_error(&eval, -8.0, 8.0, 200)?, 1e-10);
    c.at_most("airy", "ode_residual", ode_residual_max(&eval, -5.0, 5.0)?, 1e-4);
    let overlap = [eval.series_limit_positive, -eval.series_limit_negative]
        .iter()
        .map(|&x| airy::branch_discrepancy(x))
        .fold(0.0_f64, f64::max);
    c.at_most("airy", "branch_overlap", overlap, airy::OVERLAP_TOLERANCE);

    let n0 = config.n_values[0].min(10_000);
    let reps = config.replications.min(50);
    let q0 = config.q.values()[0];
    let ht = config.heavy_traffic(n0, q0)?;
    let steps = (3.0 * ht.step_scale()).ceil() as usize;
    let mut identity_failures = 0u64;
    let mut event_failures = 0u64;
    for i in 0..reps {
        let mut rng = replication_stream(config.seed, i);
        match simulate_embedded_general(&ht, arrival, service, steps, &mut rng) {
            Ok(p) => identity_failures += u64::from(p.verify_identities().is_err()),
            Err(Error::PopulationExhausted { .. }) => {}
            Err(e) => return Err(e),
        }
        let horizon = Horizon::Time(3.0 / ht.time_scale());
        let path = simulate_delta_queue(&ht, arrival, service, &mut rng, horizon)?;
        let mut level = path.initial_level as i64;
        let mut ok = true;
        let mut last = 0.0;
        for e in path.events.iter().skip(path.initial_level as usize) {
            let step = match e.kind {
                EventKind::Arrival => 1,
                EventKind::Departure => -1,
            };
            ok &= e.time >= last && e.level as i64 == level + step;
            level = e.level as i64;
            last = e.time;
        }
        event_failures += u64::from(!ok);
    }
    c.at_most("queue_sim", "embedded_identities", identity_failures as f64, 0.0);
    c.at_most("queue_sim", "event_consistency", event_failures as f64, 0.0);

    if config.ell == 1 {
        let spec = limit_drift(config, q0)?;
        let w = simulate_w(&spec, 3.0, 1e-3, &mut replication_stream(config.seed, SHARED_STREAM))?;
        let r = reflect(&w.values)?;
        let ok = r.iter().zip(&w.values).all(|(y, x)| *y >= 0.0 && y >= x) && reflect(&r)? == r;
        c.holds("diffusion", "reflection_laws", ok);
        if q0 > 0.0 {
            let tau = sample_hitting_time(&spec, 50.0, 1e-3, &mut replication_stream(config.seed, SHARED_STREAM))?;
            c.holds("diffusion", "hitting_time_positive", tau.value().is_some_and(|t| t > 0.0));
        }
        if arrival.f0_prime() < 0.0 {
            for q in config.q.values().into_iter().filter(|&q| q > 0.0) {
                let limit = fpt_general(&limit_fpt_params(config, q)?)?;
                let mass = limit.standard.mass()?;
                c.at_most("passage", format!("mass[q={q}]"), (mass - 1.0).abs(), 1e-3);
                let (lo, hi) = limit.standard.support()?;
                let neg = (0..50)
                    .map(|j| limit.standard.density(lo + (hi - lo) * (j as f64 + 0.5) / 50.0))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold(0.0_f64, |m, d| m.max(-d));
                c.at_most("passage", format!("density_nonnegative[q={q}]"), neg, 1e-12);
            }
        }
    }

    let checks = c.0;
    Ok(ValidationReport {
        header: config.header_line(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

pub fn run_validate(config: &ExperimentConfig) -> Result<ValidationReport> {
    let report = validate(config)?;
    write_json(&report, &config.outputs.join("validate.json"))?;
    Ok(report)
}

// ------------------------------------------------------------- airy dump

/// `(x, Ai, Bi, Ai', Bi')` on `from, from + step, ..., to`.
pub fn airy_table(eval: &AiryEvaluator, from: f64, to: f64, step: f64) -> Result<Vec<(f64, AiryPair)>> {
    if !(step > 0.0) || !(to >= from) {
        return Err(Error::param("step", "need step > 0 and to >= from"));
    }
    let m = ((to - from) / step + 1e-9).floor() as usize;
    (0..=m)
        .map(|i| {
            let x = snap(from + i as f64 * step);
            eval.eval(x).map(|p| (x, p))
        })
        .collect()
}

pub fn write_airy_csv(rows: &[(f64, AiryPair)], header: &str, path: &Path) -> Result<()> {
    let mut w = csv_writer(header, path)?;
    w.write_record(["x", "Ai", "Bi", "Ai'", "Bi'"])?;
    for (x, p) in rows {
        w.write_record([x.to_string(), p.ai.to_string(), p.bi.to_string(), p.ai_prime.to_string(), p.bi_prime.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

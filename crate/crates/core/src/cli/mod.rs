//! Command-line front end: argument parsing, pipeline orchestration and
//! output emission.
//!
//! Every command computes all of its outputs in memory and only then writes
//! them, each through a temp file and rename. Exit codes: 0 success, 1 a
//! model fit failed, 2 bad usage or bad input. Failures also leave a
//! `error.txt` (`key=value` lines) in the output directory.

mod commands;
pub mod model;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::io::{atomic_write, fmt_f64};

#[derive(Debug, Clone, Parser)]
#[command(
    name = "movesel",
    version,
    about = "Resource selection, step selection and hidden Markov models for telemetry tracks"
)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads [default: available cores].
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrackOpts {
    /// Track CSV with header `id,t,x,y`.
    #[arg(long)]
    pub track: PathBuf,
    /// Use only this track id.
    #[arg(long)]
    pub id: Option<String>,
    /// Keep every k-th location before anything else.
    #[arg(long = "thin", default_value_t = 1)]
    pub thin: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RegularityOpts {
    /// Nominal sampling interval in seconds [default: median gap].
    #[arg(long)]
    pub interval: Option<i64>,
    /// Allowed gap deviation as a fraction of the interval.
    #[arg(long, default_value_t = 0.1)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RasterOpts {
    /// Covariate raster as `name=path` (ESRI ASCII grid); repeatable.
    #[arg(long = "raster", value_parser = parse_raster)]
    pub rasters: Vec<(String, PathBuf)>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Keep every k-th location of each track.
    Thin {
        #[arg(long)]
        track: PathBuf,
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Split into regular bursts and export steps with covariates.
    Steps {
        #[command(flatten)]
        track: TrackOpts,
        #[command(flatten)]
        regular: RegularityOpts,
        #[command(flatten)]
        rasters: RasterOpts,
    },
    /// Use-available logistic RSF inside the track's convex hull.
    FitRsf {
        #[command(flatten)]
        track: TrackOpts,
        #[command(flatten)]
        rasters: RasterOpts,
        /// Available points per used point.
        #[arg(long, default_value_t = 10)]
        ratio: usize,
        /// Buffer around the convex hull, in map units.
        #[arg(long, default_value_t = 0.0)]
        buffer: f64,
        /// Also fit at each of these ratios (comma-separated, increasing).
        #[arg(long, value_delimiter = ',')]
        scan: Vec<usize>,
    },
    /// Integrated step selection by conditional logistic regression.
    FitSsf {
        #[command(flatten)]
        track: TrackOpts,
        #[command(flatten)]
        regular: RegularityOpts,
        #[command(flatten)]
        rasters: RasterOpts,
        /// Habitat covariate [default: first raster].
        #[arg(long)]
        covariate: Option<String>,
        /// Add the covariate-by-log-step-length interaction.
        #[arg(long)]
        interaction: bool,
        /// Control steps per observed step.
        #[arg(long, default_value_t = 10)]
        controls: usize,
        /// Estimate the tentative turn-angle mean instead of fixing it at 0.
        #[arg(long)]
        free_mu: bool,
    },
    /// Hidden Markov model with gamma steps, von Mises turns and
    /// covariate-dependent transitions.
    FitHmm {
        #[command(flatten)]
        track: TrackOpts,
        #[command(flatten)]
        regular: RegularityOpts,
        #[command(flatten)]
        rasters: RasterOpts,
        #[arg(long, default_value_t = 3)]
        states: usize,
        #[arg(long, default_value_t = 25)]
        restarts: usize,
        /// Transition covariates, comma-separated [default: every raster].
        #[arg(long, value_delimiter = ',')]
        transition_covariates: Option<Vec<String>>,
        /// Covariates on the log step mean, comma-separated.
        #[arg(long, value_delimiter = ',')]
        obs_covariates: Vec<String>,
        /// Estimate per-state turn-angle means.
        #[arg(long)]
        estimate_mu: bool,
        /// Start each burst in the stationary distribution.
        #[arg(long)]
        stationary_start: bool,
    },
    /// Viterbi states and state probabilities under a fitted HMM.
    Decode {
        /// Directory written by `fit-hmm`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        track: TrackOpts,
        #[command(flatten)]
        regular: RegularityOpts,
        #[command(flatten)]
        rasters: RasterOpts,
    },
    /// log-RSS curve (RSF/SSF) or stationary state-probability curve (HMM).
    Logrss {
        #[arg(long)]
        model: PathBuf,
        /// Covariate to vary [default: first covariate of the model].
        #[arg(long)]
        covariate: Option<String>,
        /// `from:to:n` [default: observed range, 50 points].
        #[arg(long)]
        grid: Option<String>,
        /// Reference value, or `mean` for the mean at used locations.
        #[arg(long, default_value = "mean")]
        reference: String,
        /// Value for another covariate as `name=value` [default: its mean].
        #[arg(long = "at", value_parser = parse_assignment)]
        at: Vec<(String, f64)>,
        /// Step length at which interactions are evaluated.
        #[arg(long)]
        step_length: Option<f64>,
        /// One curve at each of the 25th, 50th and 75th percentile step
        /// lengths (the default when the model has an interaction).
        #[arg(long)]
        speeds: bool,
    },
    /// Relative-use map (RSF/SSF) or per-state stationary maps (HMM).
    PredictMap {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        rasters: RasterOpts,
    },
    /// Steady-state utilization distribution by simulating a fitted SSF.
    Ssud {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        rasters: RasterOpts,
        #[arg(long, default_value_t = 100_000)]
        locations: usize,
        #[arg(long, default_value_t = 1000)]
        burn_in: usize,
        #[arg(long, default_value_t = 50)]
        candidates: usize,
        #[arg(long, default_value_t = 1)]
        chains: usize,
        /// Start location `x,y` [default: cell with data nearest the centre].
        #[arg(long)]
        start: Option<String>,
    },
    /// Simulate a track from an HMM or SSF fit (and, without rasters, a
    /// landscape).
    Simulate {
        /// Directory written by `fit-hmm` or `fit-ssf` [default: built-in
        /// 3-state HMM].
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        rasters: RasterOpts,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 86_400)]
        interval: i64,
        /// Synthetic landscape size in cells.
        #[arg(long, default_value_t = 200)]
        ncols: usize,
        #[arg(long, default_value_t = 200)]
        nrows: usize,
        #[arg(long, default_value_t = 1000.0)]
        cellsize: f64,
    },
}

fn parse_raster(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected `name=path`, got `{s}`")),
    }
}

fn parse_assignment(s: &str) -> std::result::Result<(String, f64), String> {
    let (n, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected `name=value`, got `{s}`"))?;
    let v: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((n.to_string(), v))
}

/// Parse a full argument vector (program name first).
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    RunConfig::try_parse_from(argv).map_err(|e| Error::Usage(e.to_string()))
}

/// Files produced by a command, keyed by file name.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, content: impl Into<Vec<u8>>) {
        self.files.insert(name.into(), content.into());
    }
}

/// Plain-text run summary.
#[derive(Debug, Default)]
pub struct Report {
    body: String,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn section(&mut self, title: &str) {
        self.body.push_str(&format!("\n[{title}]\n"));
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        self.body.push_str(&format!("{key} = {value}\n"));
    }

    pub fn line(&mut self, s: impl AsRef<str>) {
        self.body.push_str(s.as_ref());
        self.body.push('\n');
    }

    pub fn warn(&mut self, w: impl Into<String>) {
        self.warnings.push(w.into());
    }

    /// Aligned `term estimate se` table.
    pub fn coefficients(&mut self, rows: &[(String, f64, f64, bool)]) {
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(4).max(4);
        self.line(format!("{:<w$}  {:>24}  {:>24}", "term", "estimate", "se"));
        for (name, est, se, valid) in rows {
            let se = if *valid {
                fmt_f64(*se)
            } else {
                format!("{} (invalid)", fmt_f64(*se))
            };
            self.line(format!("{name:<w$}  {:>24}  {se:>24}", fmt_f64(*est)));
        }
    }
}

/// Render the report: config echo, body, then warnings.
pub fn emit_report(config: &RunConfig, report: &Report) -> String {
    let mut s = format!("movesel {}\n\n[config]\n", env!("CARGO_PKG_VERSION"));
    s.push_str(&format!("seed = {}\n", config.seed));
    s.push_str(&format!("{:#?}\n", config.command));
    s.push_str(&report.body);
    s.push_str(&format!("\n[warnings]\ncount = {}\n", report.warnings.len()));
    for w in &report.warnings {
        s.push_str(&format!("- {w}\n"));
    }
    s
}

fn error_report(e: &Error, code: i32) -> String {
    format!(
        "status=error\nexit_code={code}\nerror={}\nmessage={}\n",
        e.name(),
        e.to_string().replace('\n', " ")
    )
}

fn write_outputs(dir: &Path, outputs: &Outputs) -> Result<()> {
    for (name, bytes) in &outputs.files {
        atomic_write(&dir.join(name), bytes)?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    if e.is_model_failure() {
        1
    } else {
        2
    }
}

/// Execute a parsed configuration; returns the process exit code.
pub fn run(config: &RunConfig) -> i32 {
    let Some(out) = config.out.clone() else {
        eprintln!("error: --out <DIR> is required");
        return 2;
    };
    let result = (|| -> Result<Outputs> {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = config.threads {
            if n == 0 {
                return Err(Error::Usage("--threads must be >= 1".into()));
            }
            pool = pool.num_threads(n);
        }
        let pool = pool
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        let mut report = Report::default();
        let mut outputs = pool.install(|| commands::execute(config, &mut report))?;
        outputs.add("report.txt", emit_report(config, &report));
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        write_outputs(&out, &outputs)?;
        Ok(outputs)
    })();
    match result {
        Ok(_) => {
            let stale = out.join("error.txt");
            if stale.exists() {
                let _ = fs::remove_file(stale);
            }
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {}: {e}", e.name());
            if fs::create_dir_all(&out).is_ok() {
                let _ = atomic_write(&out.join("error.txt"), error_report(&e, code).as_bytes());
            }
            code
        }
    }
}

/// Parse and run; the body of the `movesel` binary.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match RunConfig::try_parse_from(argv) {
        Ok(cfg) => run(&cfg),
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            code
        }
    }
}

//! `gdp`: command-line front end of the gradient distribution prior toolkit.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use gdp_core::models::Family;
use gdp_core::naturalize::NaturalizeMode;
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "gdp", version, about = "Gradient distribution prior toolkit")]
pub struct Cli {
    /// JSON file with one object per subcommand name; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// RNG seed; required by commands that inject noise.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Where to write the run record (default: next to the main output).
    #[arg(long, global = true, value_name = "FILE")]
    pub sidecar: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a prior from image files or directories.
    LearnPrior {
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Omit the 511x511 histogram from the prior file.
        #[arg(long)]
        elide_histogram: bool,
        /// Per-image statistics as JSON.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Fit the parametric model families to a prior histogram or to images.
    Fit {
        #[arg(long, value_name = "FILE", conflicts_with = "inputs")]
        prior: Option<PathBuf>,
        /// Repeatable; default all families.
        #[arg(long, value_name = "NAME")]
        family: Vec<Family>,
        /// unit or bins.
        #[arg(long, default_value = "unit")]
        domain: String,
        /// 1 (averaged marginal), 2 (joint histogram); default both.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        dims: Option<u8>,
        inputs: Vec<PathBuf>,
    },
    /// Remap gradients toward the prior and reconstruct.
    Naturalize {
        #[arg(long, default_value = "linear")]
        mode: NaturalizeMode,
        #[arg(long, value_name = "FILE")]
        prior: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// GDP-regularized diffusion denoising. Prints the iteration log as CSV.
    Denoise {
        /// Number, or `auto` for the squared estimated noise level.
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long, value_name = "FILE")]
        prior: Option<PathBuf>,
        /// Noise calibration used by `--lambda auto`.
        #[arg(long, value_name = "FILE")]
        calibration: Option<PathBuf>,
        /// Add N(0, σ²) noise to the input first (needs --seed).
        #[arg(long, value_name = "SIGMA")]
        add_noise: Option<f64>,
        /// Write the CSV log here instead of stdout.
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Blind deconvolution, or non-blind with --kernel.
    Deconvolve {
        #[arg(long)]
        kernel_size: Option<usize>,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        max_outer: Option<usize>,
        /// Known kernel image; skips kernel estimation.
        #[arg(long, value_name = "FILE")]
        kernel: Option<PathBuf>,
        /// Estimated kernel, scaled so its peak is white.
        #[arg(long, value_name = "FILE")]
        kernel_out: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        prior: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Integer-factor super-resolution.
    Zoom {
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long, value_name = "FILE")]
        prior: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Haze removal. Prints a JSON report.
    Dehaze {
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        airlight: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        t_min: Option<f64>,
        #[arg(long, value_name = "FILE")]
        prior: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        transmission_out: Option<PathBuf>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Estimate noise levels, or build a calibration from clean images.
    NoiseEst {
        #[arg(long, value_name = "FILE")]
        calibration: Option<PathBuf>,
        /// Build a calibration from the (clean) inputs and write it here. Needs --seed.
        #[arg(long, value_name = "FILE")]
        calibrate_out: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Gradient-distribution and full-reference quality scores as JSON.
    Quality {
        /// A distance (hellinger, l1, kl, ...), `nf`, `psnr`, or `ssim`.
        #[arg(long, default_value = "hellinger")]
        metric: String,
        #[arg(long = "ref", value_name = "FILE")]
        reference: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        prior: Option<PathBuf>,
        input: PathBuf,
    },
    /// Gradient statistics of one image.
    Analyze {
        /// Print only the naturalness factor.
        #[arg(long)]
        nf: bool,
        #[arg(long, value_name = "FILE")]
        prior: Option<PathBuf>,
        /// Write CSV curves into this directory.
        #[arg(long, value_name = "DIR")]
        curves: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        max_shift: usize,
        /// Half-widths for the N_w curve.
        #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
        windows: Vec<usize>,
        input: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::LearnPrior { .. } => "learn-prior",
            Command::Fit { .. } => "fit",
            Command::Naturalize { .. } => "naturalize",
            Command::Denoise { .. } => "denoise",
            Command::Deconvolve { .. } => "deconvolve",
            Command::Zoom { .. } => "zoom",
            Command::Dehaze { .. } => "dehaze",
            Command::NoiseEst { .. } => "noise-est",
            Command::Quality { .. } => "quality",
            Command::Analyze { .. } => "analyze",
        }
    }

    /// The file the run record is placed next to.
    fn main_output(&self) -> Option<&PathBuf> {
        match self {
            Command::LearnPrior { out, .. } => Some(out),
            Command::Naturalize { output, .. }
            | Command::Denoise { output, .. }
            | Command::Deconvolve { output, .. }
            | Command::Zoom { output, .. }
            | Command::Dehaze { output, .. } => Some(output),
            Command::NoiseEst { calibrate_out, .. } => calibrate_out.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Processing(String),
}

impl From<gdp_core::GdpError> for CliError {
    fn from(e: gdp_core::GdpError) -> Self {
        CliError::Processing(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Named wall-clock phases of one run.
#[derive(Default)]
pub struct Timings {
    phases: Vec<(String, f64)>,
}

impl Timings {
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases.push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    fn to_json(&self, total: f64) -> Value {
        let mut m = serde_json::Map::new();
        for (k, v) in &self.phases {
            m.insert(format!("{k}_s"), json!(v));
        }
        m.insert("total_s".into(), json!(total));
        Value::Object(m)
    }
}

fn sidecar_path(cli: &Cli) -> Option<PathBuf> {
    cli.sidecar.clone().or_else(|| {
        cli.command.main_output().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".run.json");
            PathBuf::from(s)
        })
    })
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Processing(format!("thread pool: {e}")))?;
    }
    let file = config::load_file(cli.config.as_deref())?;
    let start = Instant::now();
    let mut timings = Timings::default();
    let used = commands::dispatch(cli, file.as_ref(), &mut timings)?;
    let record = json!({
        "command": cli.command.name(),
        "config": used,
        "versions": { "gdp": env!("CARGO_PKG_VERSION"), "gdp_core": gdp_core::VERSION },
        "timings": timings.to_json(start.elapsed().as_secs_f64()),
    });
    let text = serde_json::to_string_pretty(&record).expect("run record serializes");
    match sidecar_path(cli) {
        Some(p) => std::fs::write(&p, text).map_err(|e| CliError::Processing(format!("{}: {e}", p.display())))?,
        None => log::info!("run record: {text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("Run `gdp {} --help` for usage.", cli.command.name());
            ExitCode::from(1)
        }
        Err(CliError::Processing(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

//! Command-line front end: power flow, re-dispatch, load scaling and N-1
//! sweeps over a case file, with CSV/JSON reports and a run manifest.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridvolt::homotopy::{HomotopyMode, HomotopySchedule, HomotopySettings};
use gridvolt::limiter::{BandMode, DiodeParams, HyperbolicForm, LimiterConfig};
use gridvolt::model::ParseOptions;
use gridvolt::{CaseFormat, SolverOptions};
use serde::Serialize;

pub use manifest::Manifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NO_CONVERGENCE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(name = "gridvolt", version, about = "Power flow and voltage-setpoint re-dispatch")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Solve power flow and print the solution as JSON.
    Pf(PfArgs),
    /// Re-dispatch generator voltage setpoints into the voltage band.
    Redispatch(RedispatchArgs),
    /// Run an N-1 sweep at fixed setpoints.
    Contingency(ContingencyArgs),
    /// Scale every load and write the resulting case as native JSON.
    Scale(ScaleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum FormatArg {
    /// `.m` files are MATPOWER text, anything else native JSON.
    Auto,
    Matpower,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum SoftModelArg {
    Quad,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum BandModeArg {
    Deadband,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum HyperbolicFormArg {
    Differential,
    Summed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum HomotopyArg {
    On,
    Off,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum FilterArg {
    Branches,
    Gens,
    All,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Case file (MATPOWER `.m` or native JSON).
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    pub format: FormatArg,
    /// Lower voltage bound in pu, applied to every bus.
    #[arg(long)]
    pub vmin: Option<f64>,
    /// Upper voltage bound in pu, applied to every bus.
    #[arg(long)]
    pub vmax: Option<f64>,
    /// Multiply every load by this factor before solving.
    #[arg(long)]
    pub scale_load: Option<f64>,
    /// Newton residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Largest per-bus voltage change in one Newton step, pu.
    #[arg(long, default_value_t = 0.1)]
    pub delta_v_max: f64,
    #[arg(long, value_enum, default_value_t = HomotopyArg::Auto)]
    pub homotopy: HomotopyArg,
    /// Admittance scaling at gamma = 1 is 1 + beta.
    #[arg(long, default_value_t = 100.0)]
    pub beta: f64,
    /// Factor applied to a rejected gamma step.
    #[arg(long, default_value_t = 0.5)]
    pub gamma_shrink: f64,
    /// Main output file. Its directory also receives the side files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run manifest path. Defaults to `<out stem>_manifest.json`, or
    /// `gridvolt_manifest.json` when there is no `--out`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Limiter shaping for re-dispatch.
#[derive(Debug, Clone, Args, Serialize)]
pub struct LimiterArgs {
    #[arg(long, value_enum, default_value_t = SoftModelArg::Quad)]
    pub soft_model: SoftModelArg,
    #[arg(long, value_enum, default_value_t = BandModeArg::Deadband)]
    pub band_mode: BandModeArg,
    /// Smoothing of the voltage limiter.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Steepness of the exponential voltage limiter.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Gain of the quadratic voltage limiter.
    #[arg(long)]
    pub a: Option<f64>,
    /// Smoothing of the hyperbolic reactive limiter.
    #[arg(long)]
    pub hard_eps: Option<f64>,
    #[arg(long, value_enum, default_value_t = HyperbolicFormArg::Differential)]
    pub hyperbolic_form: HyperbolicFormArg,
    /// Only limit buses at these nominal voltages (kV, comma separated).
    #[arg(long, value_delimiter = ',')]
    pub kv_filter: Option<Vec<f64>>,
    /// Put a hard reactive limiter on the slack generator as well.
    #[arg(long)]
    pub limit_slack_q: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PfArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RedispatchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub limiters: LimiterArgs,
    /// Setpoints JSON output. Defaults to `<out stem>_setpoints.json`.
    #[arg(long)]
    pub setpoints_out: Option<PathBuf>,
    /// Allowed excess over the soft band when certifying the result, pu.
    #[arg(long, default_value_t = 0.01)]
    pub band_tol: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ContingencyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Setpoints JSON as written by `redispatch`; the case values otherwise.
    #[arg(long)]
    pub setpoints: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FilterArg::All)]
    pub filter: FilterArg,
    #[arg(long, default_value_t = 0.01)]
    pub bin_width: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScaleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

/// A failure that maps to exit code 1 rather than 2.
#[derive(Debug)]
pub struct NotConverged(pub String);

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "no convergence: {}", self.0)
    }
}

impl std::error::Error for NotConverged {}

/// Exit code for an error raised while running a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<NotConverged>() {
            return EXIT_NO_CONVERGENCE;
        }
        if let Some(e) = cause.downcast_ref::<gridvolt::Error>() {
            return match e {
                gridvolt::Error::MaxIterations { .. }
                | gridvolt::Error::ContinuationStall { .. }
                | gridvolt::Error::Singular { .. }
                | gridvolt::Error::LimiterFault { .. } => EXIT_NO_CONVERGENCE,
                _ => EXIT_INPUT,
            };
        }
    }
    EXIT_INPUT
}

impl CommonArgs {
    pub fn case_format(&self) -> CaseFormat {
        match self.format {
            FormatArg::Auto => CaseFormat::from_path(&self.case),
            FormatArg::Matpower => CaseFormat::MatpowerText,
            FormatArg::Json => CaseFormat::NativeJson,
        }
    }

    /// The `--vmin`/`--vmax` band, defaulting the missing side.
    pub fn band(&self) -> anyhow::Result<Option<(f64, f64)>> {
        if self.vmin.is_none() && self.vmax.is_none() {
            return Ok(None);
        }
        let d = ParseOptions::default().default_bounds;
        let (lo, hi) = (self.vmin.unwrap_or(d.0), self.vmax.unwrap_or(d.1));
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            anyhow::bail!("voltage band [{lo}, {hi}] needs 0 < vmin < vmax");
        }
        Ok(Some((lo, hi)))
    }

    pub fn parse_options(&self) -> anyhow::Result<ParseOptions> {
        let mut opts = ParseOptions::default();
        if let Some(b) = self.band()? {
            opts.default_bounds = b;
        }
        Ok(opts)
    }

    pub fn solver(&self) -> anyhow::Result<SolverOptions> {
        let opts = SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            delta_v_max: self.delta_v_max,
            ..SolverOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }

    pub fn homotopy(&self) -> anyhow::Result<HomotopySettings> {
        let settings = HomotopySettings {
            mode: match self.homotopy {
                HomotopyArg::On => HomotopyMode::On,
                HomotopyArg::Off => HomotopyMode::Off,
                HomotopyArg::Auto => HomotopyMode::Auto,
            },
            schedule: HomotopySchedule {
                beta: self.beta,
                shrink: self.gamma_shrink,
                ..HomotopySchedule::default()
            },
        };
        settings.schedule.validate()?;
        Ok(settings)
    }
}

impl LimiterArgs {
    pub fn config(&self, band: Option<(f64, f64)>) -> anyhow::Result<LimiterConfig> {
        let mut soft = match self.soft_model {
            SoftModelArg::Quad => DiodeParams::quadratic(),
            SoftModelArg::Exp => DiodeParams::exponential(),
        };
        soft.band_mode = match self.band_mode {
            BandModeArg::Deadband => BandMode::OneSidedDeadband,
            BandModeArg::Midpoint => BandMode::MidpointCentered,
        };
        soft.eps = self.eps.unwrap_or(soft.eps);
        soft.kappa = self.kappa.unwrap_or(soft.kappa);
        soft.a = self.a.unwrap_or(soft.a);
        let mut hard = DiodeParams::hyperbolic();
        hard.eps = self.hard_eps.unwrap_or(hard.eps);
        hard.hyperbolic_form = match self.hyperbolic_form {
            HyperbolicFormArg::Differential => HyperbolicForm::Differential,
            HyperbolicFormArg::Summed => HyperbolicForm::Summed,
        };
        let config = LimiterConfig {
            soft,
            hard,
            kv_filter: self.kv_filter.clone(),
            band,
            limit_slack_q: self.limit_slack_q,
            ..LimiterConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Pf(a) => &a.common,
            Command::Redispatch(a) => &a.common,
            Command::Contingency(a) => &a.common,
            Command::Scale(a) => &a.common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Pf(_) => "pf",
            Command::Redispatch(_) => "redispatch",
            Command::Contingency(_) => "contingency",
            Command::Scale(_) => "scale",
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut manifest = Manifest::new(&cli, &argv);
    let result = commands::execute(&cli.command, &mut manifest);
    let code = match &result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(e)
        }
    };
    manifest.finish(code, result.as_ref().err());
    if let Err(e) = manifest.write(cli.command.common()) {
        eprintln!("error: could not write run manifest: {e:#}");
        return code.max(EXIT_INPUT);
    }
    code
}

//! `rmstcurve`: RMST difference curves, simultaneous bands and TUTE from
//! two-arm survival data.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 numerical failure.

mod commands;
mod config;
mod failure;
mod input;
mod output;

use clap::{Args, Parser, Subcommand};
use config::{parse_estimator, parse_link, AnalysisConfig};
use failure::Failure;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rmstcurve", version, about = "RMST difference curves via pseudo-values and GEE")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model; write summary, curve, plot data and manifest.
    Fit(AnalysisArgs),
    /// Fit the model; write the curve with its simultaneous band.
    Band(AnalysisArgs),
    /// TUTE by band inversion and by bootstrap.
    Tute(AnalysisArgs),
    /// Jackknife pseudo-values in long format.
    Pseudo(AnalysisArgs),
    /// Replicate a simulation study from `key=value` pairs.
    Simulate {
        /// e.g. `scenario=2 n=200 reps=500 seed=7`
        pairs: Vec<String>,
        /// File of `key=value` pairs; overrides the positional pairs.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (study.csv, study.json); stdout CSV if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one simulated dataset (`scenario|cell`, `n`, `seed`) instead.
        #[arg(long)]
        sample: bool,
    },
    /// True RMST difference, crossing and TUTE of a scenario.
    Truth {
        #[arg(long)]
        scenario: u8,
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Right end of the curve (default 1.5 × TUTE).
        #[arg(long)]
        end: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct AnalysisArgs {
    /// CSV with columns time,status,arm and optional covariates.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory (file for `pseudo`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Required by every stochastic command.
    #[arg(long)]
    seed: Option<u64>,
    /// File of `key=value` settings; overrides flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of restriction times.
    #[arg(long)]
    grid: Option<usize>,
    /// identity or log.
    #[arg(long)]
    link: Option<String>,
    /// Fixed spline df (default: QIC over df-min..=df-max).
    #[arg(long)]
    df: Option<usize>,
    #[arg(long)]
    df_min: Option<usize>,
    #[arg(long)]
    df_max: Option<usize>,
    /// Saturated step model.
    #[arg(long)]
    indicator: bool,
    #[arg(long)]
    eval_points: Option<usize>,
    #[arg(long)]
    eval_end: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Monte Carlo draws for the band critical value.
    #[arg(long)]
    draws: Option<usize>,
    /// Bootstrap replicates for the TUTE.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// plugin or model.
    #[arg(long)]
    bootstrap_estimator: Option<String>,
    /// Survival level below which a TUTE is flagged as clinically uninteresting.
    #[arg(long)]
    floor: Option<f64>,
    /// Adjust for covariate columns.
    #[arg(long)]
    covariates: bool,
    /// Jackknife within each arm.
    #[arg(long)]
    within_arm: bool,
}

impl AnalysisArgs {
    fn resolve(self) -> Result<AnalysisConfig, Failure> {
        let mut c = AnalysisConfig::new(self.input.unwrap_or_default());
        c.out = self.out;
        c.seed = self.seed;
        if let Some(v) = self.grid {
            c.grid = v;
        }
        if let Some(v) = self.link {
            c.link = parse_link(&v).ok_or_else(|| Failure::Input(format!("unknown link '{v}'")))?;
        }
        c.df = self.df;
        if let Some(v) = self.df_min {
            c.df_min = v;
        }
        if let Some(v) = self.df_max {
            c.df_max = v;
        }
        c.indicator = self.indicator;
        if let Some(v) = self.eval_points {
            c.eval_points = v;
        }
        c.eval_end = self.eval_end;
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.draws {
            c.draws = v;
        }
        if let Some(v) = self.bootstrap {
            c.bootstrap = v;
        }
        if let Some(v) = self.bootstrap_estimator {
            c.bootstrap_estimator =
                parse_estimator(&v).ok_or_else(|| Failure::Input(format!("unknown bootstrap estimator '{v}'")))?;
        }
        if let Some(v) = self.floor {
            c.floor = v;
        }
        c.covariates = self.covariates;
        c.within_arm = self.within_arm;
        if let Some(p) = &self.config {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            c.apply_file_text(&text)?;
        }
        if c.input.as_os_str().is_empty() {
            return Err(Failure::Input("no input file (--input or input= in --config)".into()));
        }
        Ok(c)
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Fit(a) => commands::fit(&a.resolve()?),
        Command::Band(a) => commands::band(&a.resolve()?),
        Command::Tute(a) => commands::tute(&a.resolve()?),
        Command::Pseudo(a) => commands::pseudo(&a.resolve()?),
        Command::Simulate {
            pairs,
            config,
            out,
            sample,
        } => commands::simulate(&pairs, config.as_deref(), out.as_deref(), sample),
        Command::Truth {
            scenario,
            points,
            end,
            out,
        } => commands::truth(scenario, points, end, out.as_deref()),
    }
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
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

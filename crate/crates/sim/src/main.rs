use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use resus_sim::output::{
    comparison_table, metrics_text, summary_text, write_runs_csv, write_trace_csv,
};
use resus_sim::{
    monte_carlo, run_oracles, run_with_controller, ConfigError, ControllerKind, HarnessError,
    ScenarioConfig, SimulationTrace,
};

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_ORACLE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "resus",
    version,
    about = "Closed-loop fluid resuscitation simulator"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, global = true, default_value = "./out")]
    out: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trace format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode with the scenario's controller.
    Run { scenario: PathBuf },
    /// Run RHC and PID on the same scenario and seed.
    Compare { scenario: PathBuf },
    /// Run a batch of episodes with consecutive seeds.
    Montecarlo {
        scenario: PathBuf,
        #[arg(long, default_value_t = 20)]
        runs: usize,
    },
    /// Check a scenario file and print the resolved configuration.
    Validate { scenario: PathBuf },
    /// Run the built-in analytic oracle suite.
    Oracle,
}

enum Failure {
    Config(String),
    Numerical(String),
    Oracle,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(c) => c.into(),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("i/o error: {e}"))
    }
}

fn load(path: &Path, common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_trace(
    dir: &Path,
    name: &str,
    trace: &SimulationTrace,
    format: Format,
) -> Result<(), Failure> {
    match format {
        Format::Csv => {
            let f = File::create(dir.join(format!("{name}.csv")))?;
            write_trace_csv(trace, BufWriter::new(f))?;
        }
    }
    Ok(())
}

fn write_resolved(dir: &Path, cfg: &ScenarioConfig) -> Result<(), Failure> {
    fs::write(dir.join("config.resolved.toml"), cfg.resolve()?.to_toml()?)?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let c = &cli.common;
    let say = |s: &str| {
        if !c.quiet {
            print!("{s}");
        }
    };
    match &cli.command {
        Command::Validate { scenario } => {
            let cfg = load(scenario, c)?.resolve()?;
            say(&cfg.to_toml()?);
        }
        Command::Oracle => {
            let checks = run_oracles();
            for ch in &checks {
                let tag = if ch.passed { "PASS" } else { "FAIL" };
                say(&format!("{tag} {}: {}\n", ch.name, ch.detail));
            }
            if checks.iter().any(|ch| !ch.passed) {
                return Err(Failure::Oracle);
            }
        }
        Command::Run { scenario } => {
            let cfg = load(scenario, c)?;
            cfg.resolve()?;
            let (trace, metrics) = run_with_controller(&cfg, cfg.controller)?;
            fs::create_dir_all(&c.out)?;
            write_resolved(&c.out, &cfg)?;
            write_trace(&c.out, "trace", &trace, c.format)?;
            fs::write(c.out.join("metrics.txt"), metrics_text(&metrics))?;
            say(&metrics_text(&metrics));
        }
        Command::Compare { scenario } => {
            let cfg = load(scenario, c)?;
            cfg.resolve()?;
            let (rhc, rhc_m) = run_with_controller(&cfg, ControllerKind::Rhc)?;
            let (pid, pid_m) = run_with_controller(&cfg, ControllerKind::Pid)?;
            fs::create_dir_all(&c.out)?;
            write_resolved(&c.out, &cfg)?;
            write_trace(&c.out, "rhc_trace", &rhc, c.format)?;
            write_trace(&c.out, "pid_trace", &pid, c.format)?;
            fs::write(c.out.join("rhc_metrics.txt"), metrics_text(&rhc_m))?;
            fs::write(c.out.join("pid_metrics.txt"), metrics_text(&pid_m))?;
            let table = comparison_table(&rhc_m, &pid_m);
            fs::write(c.out.join("comparison.txt"), &table)?;
            say(&table);
        }
        Command::Montecarlo { scenario, runs } => {
            let cfg = load(scenario, c)?;
            cfg.resolve()?;
            let summary = monte_carlo(&cfg, *runs, cfg.seed)?;
            fs::create_dir_all(&c.out)?;
            write_resolved(&c.out, &cfg)?;
            let f = File::create(c.out.join("montecarlo_runs.csv"))?;
            write_runs_csv(&summary, BufWriter::new(f))?;
            let text = summary_text(&summary);
            fs::write(c.out.join("montecarlo_summary.txt"), &text)?;
            say(&text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(Failure::Oracle) => {
            eprintln!("oracle mismatch");
            ExitCode::from(EXIT_ORACLE)
        }
    }
}

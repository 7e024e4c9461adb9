use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hypflow::Resolution;
use hypflow_cli::commands::{self, Common, SampleArgs, BALL_TABLE_TOL};
use hypflow_cli::CliError;
use serde::Serialize;

/// Volume-preserving K^α curvature flow in hyperbolic space.
#[derive(Parser)]
#[command(name = "hypflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory; each run writes a fresh subdirectory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Grid size, `A×B` (or `AxB`) on S², a single count on S¹.
    #[arg(long, global = true, value_name = "A×B")]
    resolution: Option<String>,

    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve an initial surface as described by --config.
    Simulate,
    /// Draw seeded random convex bodies near a ball.
    SampleConvex(Sampling),
    /// Check A_{n-1} >= psi_n(volume) on sampled convex bodies.
    VerifyAf(Sampling),
    /// Print the linearized decay rate of each harmonic degree.
    LinearRate {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        rho_inf: f64,
        #[arg(long, default_value_t = 4)]
        l_max: usize,
    },
    /// Compare closed-form ball functionals with grid quadrature.
    BallTable {
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Comma-separated radii.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0])]
        rho: Vec<f64>,
    },
}

#[derive(Args, Serialize)]
struct Sampling {
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Per-degree amplitude cap.
    #[arg(long, default_value_t = 0.1)]
    cap: f64,
    #[arg(long, default_value_t = 1.0)]
    rho0: f64,
}

impl Sampling {
    fn args(&self) -> SampleArgs {
        SampleArgs {
            n: self.n,
            count: self.count,
            cap: self.cap,
            rho0: self.rho0,
        }
    }
}

#[derive(Serialize)]
struct RateSettings {
    n: usize,
    alpha: f64,
    rho_inf: f64,
    l_max: usize,
}

#[derive(Serialize)]
struct BallSettings<'a> {
    n: usize,
    rho: &'a [f64],
}

fn run(cli: Cli) -> Result<(), CliError> {
    let resolution = cli.resolution.as_deref().map(Resolution::parse).transpose()?;
    let common = Common {
        out: cli.out,
        seed: cli.seed,
        resolution,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Simulate => {
            let path = cli.config.ok_or_else(|| CliError::config("simulate needs --config PATH"))?;
            let (dir, summary) = commands::simulate(&path, &common)?;
            println!("{}", dir.display());
            common_say(&common, &format!("completed at t = {} after {} steps", summary.t, summary.steps));
        }
        Command::SampleConvex(s) => {
            let (dir, _) = commands::sample_convex(&s.args(), &common)?;
            println!("{}", dir.display());
        }
        Command::VerifyAf(s) => {
            let (dir, summary) = commands::verify_af(&s.args(), &common)?;
            println!("{}", dir.display());
            println!("{}", hypflow::format::to_json(&summary));
        }
        Command::LinearRate { n, alpha, rho_inf, l_max } => {
            let table = commands::linear_rate_table(n, alpha, rho_inf, l_max)?;
            print!("{table}");
            let settings = RateSettings { n, alpha, rho_inf, l_max };
            commands::save_table(&common, "linear-rate", &settings, "linear_rate.csv", &table)?;
        }
        Command::BallTable { n, rho } => {
            let (table, worst) = commands::ball_table(n, &rho, &common)?;
            print!("{table}");
            let settings = BallSettings { n, rho: &rho };
            commands::save_table(&common, "ball-table", &settings, "ball_table.csv", &table)?;
            if worst > BALL_TABLE_TOL {
                return Err(CliError::numerical(format!(
                    "largest relative mismatch {worst:e} exceeds {BALL_TABLE_TOL:e}"
                )));
            }
        }
    }
    Ok(())
}

fn common_say(common: &Common, msg: &str) {
    if !common.quiet {
        eprintln!("{msg}");
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

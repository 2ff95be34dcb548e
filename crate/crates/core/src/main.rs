use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rhflow::config::Scenario;
use rhflow::pipeline::{emit_report, run_scenario, RunSettings};
use rhflow::Error;

#[derive(Parser)]
#[command(name = "rhflow", version, about = "Coupled Ricci-harmonic flow on tori with heat kernel and entropy checks")]
struct Cli {
    /// TOML scenario file
    #[arg(long, global = true, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// built-in scenario name, used when no --config is given
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// output directory (overrides the scenario's own)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// multiplies every grid dimension; dt shrinks with its square
    #[arg(long, global = true, default_value_t = 1.0)]
    resolution_scale: f64,
    /// multiplies every tolerance
    #[arg(long, global = true, default_value_t = 1.0)]
    tol_scale: f64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// flow identities and curvature envelope
    Flow,
    /// conjugate kernel mass, semigroup and duality
    Kernel,
    /// Harnack quantity, box-star identity, LYH, rho
    Harnack,
    /// W scaling, mu curve, monotonicity, kernel bound
    Entropy,
    /// reduced distance bounds and reduced volume
    Lgeo,
    /// kernel upper bounds in dimension three
    Sobolev,
    /// every suite the scenario enables
    All,
    /// print the built-in scenario names
    List,
}

impl Cmd {
    fn suite(self) -> Option<&'static str> {
        match self {
            Cmd::Flow => Some("flow"),
            Cmd::Kernel => Some("kernel"),
            Cmd::Harnack => Some("harnack"),
            Cmd::Entropy => Some("entropy"),
            Cmd::Lgeo => Some("lgeo"),
            Cmd::Sobolev => Some("sobolev"),
            Cmd::All | Cmd::List => None,
        }
    }
}

fn run(cli: &Cli) -> Result<i32, Error> {
    if let Cmd::List = cli.cmd {
        for b in Scenario::BUILTINS {
            println!("{b}");
        }
        return Ok(0);
    }
    if cli.resolution_scale.is_nan() || cli.tol_scale.is_nan() || cli.resolution_scale <= 0.0 || cli.tol_scale <= 0.0 {
        return Err(Error::Config("scales must be positive".into()));
    }
    let scenario = match (&cli.config, &cli.scenario) {
        (Some(p), _) => Scenario::from_path(p)?,
        (None, name) => {
            let name = name.as_deref().unwrap_or("t2-coupled");
            Scenario::builtin(name).ok_or_else(|| Error::Config(format!("no built-in scenario '{name}' (try `list`)")))?
        }
    };
    let only = cli.cmd.suite().map(|s| vec![s]);
    let settings = RunSettings { resolution_scale: cli.resolution_scale, tol_scale: cli.tol_scale };
    let bundle = run_scenario(&scenario, only.as_deref(), settings)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| scenario.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&scenario.name));
    emit_report(&bundle, &dir)?;
    for s in &bundle.report.suites {
        for c in &s.checks {
            let v = if c.max_violation.is_finite() { format!("{:.4e}", c.max_violation) } else { "-".into() };
            println!("{:<8} {:<28} {:<5} {:>12}  tol {:.1e}", s.name, c.check, if c.pass { "ok" } else { "FAIL" }, v, c.tolerance);
        }
    }
    println!("report written to {}", dir.display());
    Ok(bundle.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

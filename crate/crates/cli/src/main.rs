use anyhow::Context;
use clap::{Parser, Subcommand};
use frontlab::grid::read_field_csv;
use frontlab::harness::{
    cmd_covering, cmd_simulate, cmd_speed_sweep, cmd_stationary, cmd_verify, load_config, parse_points, write_json,
    CoveringInput,
};
use frontlab::potential::potential_by_name;
use frontlab::Error;
use serde_json::json;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "frontlab", version, about = "Front dynamics in multi-well reaction-diffusion systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a configuration and write snapshots, manifest and verdicts.
    Simulate {
        config: PathBuf,
        /// Run directory; overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kink-antikink approach speeds against separation, with a log-linear fit.
    SpeedSweep {
        config: PathBuf,
        /// Separations in units of ε, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        separations: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confined covering of a point set or of a field's front set.
    Covering {
        /// Points file: JSON array or whitespace separated numbers.
        #[arg(long, conflicts_with = "field", required_unless_present = "field")]
        points: Option<PathBuf>,
        /// Field CSV as written by `simulate`.
        #[arg(long, requires = "eps")]
        field: Option<PathBuf>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value = "quartic")]
        potential: String,
        #[arg(long, value_delimiter = ',')]
        params: Vec<f64>,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 0.25)]
        kappa: f64,
        /// Output JSON file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shoot a heteroclinic and optionally extract the structure of a run.
    Stationary {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        from: usize,
        #[arg(long, default_value_t = 1)]
        to: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check an exported trajectory.
    Verify {
        dir: PathBuf,
        /// Checks to run, comma separated; all when absent.
        #[arg(long, value_delimiter = ',')]
        checks: Vec<String>,
        /// Containment radius; 10ε when absent.
        #[arg(long)]
        radius: Option<f64>,
    },
}

fn exit_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Format(_)
            | Error::InvalidArgument(_)
            | Error::Io(_)
            | Error::Registration(_)
            | Error::Degenerate(_)
            | Error::Precondition(_),
        ) => EXIT_USAGE,
        Some(_) => EXIT_CHECK_FAILED,
        None => EXIT_USAGE,
    }
}

fn status(pass: bool) -> u8 {
    if pass {
        0
    } else {
        EXIT_CHECK_FAILED
    }
}

fn run(cmd: Command) -> anyhow::Result<u8> {
    match cmd {
        Command::Simulate { config, out } => {
            let cfg = load_config(&config)?;
            let o = cmd_simulate(&cfg, out.as_deref())?;
            let dir = out.unwrap_or(cfg.output_dir);
            println!(
                "simulate: {} snapshots, fronts {} -> {}, {} events, written to {}",
                o.trajectory.len(),
                o.metrics.initial_fronts,
                o.metrics.final_fronts,
                o.metrics.events.len(),
                dir.display()
            );
            for v in &o.verdicts {
                println!("  {} lhs={:e} rhs={:e} {}", v.check, v.lhs, v.rhs, if v.pass { "PASS" } else { "FAIL" });
            }
            // Only a blow-up fails a run; verdicts are re-checked by `verify`.
            Ok(0)
        }
        Command::SpeedSweep { config, separations, out } => {
            let cfg = load_config(&config)?;
            let rep = cmd_speed_sweep(&cfg, &separations, out.as_deref())?;
            for r in &rep.rows {
                println!(
                    "d/eps={:<6} speed={:e}{}",
                    r.d_over_eps,
                    r.speed,
                    if r.censored { " (censored)" } else { "" }
                );
            }
            match rep.fit {
                Some(f) => println!("fit: slope={:.4} intercept={:.4} R2={:.5}", f.slope, f.intercept, f.r2),
                None => println!("fit: fewer than two usable rows"),
            }
            Ok(status(rep.fit.is_some()))
        }
        Command::Covering { points, field, eps, potential, params, delta, kappa, out } => {
            let input = match (points, field) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(&p).map_err(Error::from).with_context(|| p.display().to_string())?;
                    CoveringInput::Points(parse_points(&text)?)
                }
                (None, Some(f)) => {
                    let file = std::fs::File::open(&f).map_err(Error::from).with_context(|| f.display().to_string())?;
                    let eps = eps.expect("clap enforces --eps with --field");
                    CoveringInput::Field {
                        field: read_field_csv(BufReader::new(file), eps, 0.0)?,
                        potential: potential_by_name(&potential, &params)?,
                    }
                }
                (None, None) => unreachable!("clap requires one input"),
            };
            let (report, valid) = cmd_covering(&input, delta, kappa)?;
            match out {
                Some(path) => write_json(&path, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            Ok(status(valid))
        }
        Command::Stationary { config, from, to, out } => {
            let cfg = load_config(&config)?;
            let o = cmd_stationary(&cfg, from, to, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&json!({
                "energy": o.summary["energy"], "discrepancy_max": o.summary["discrepancy_max"],
                "ode_residual": o.summary["ode_residual"],
            }))?);
            match &o.structure {
                Some(rep) => {
                    for v in &rep.verdicts {
                        println!("  {} {}", v.check, if v.pass { "PASS" } else { "FAIL" });
                    }
                    Ok(status(rep.all_pass()))
                }
                None => Ok(0),
            }
        }
        Command::Verify { dir, checks, radius } => {
            let (verdicts, pass) = cmd_verify(&dir, &checks, radius)?;
            for v in &verdicts {
                println!("{} lhs={:e} rhs={:e} {}", v.check, v.lhs, v.rhs, if v.pass { "PASS" } else { "FAIL" });
            }
            Ok(status(pass))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_for(&e))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use epsskip::harness::{run_experiment_matrix, MatrixOptions, RunStatus};

const CONFIG_HELP: &str = r#"CONFIG FILE (JSON)

  name          string, title of the summary table (default "experiment")
  seed          integer, seeds the initial latent sigma_max * N(0, 1)
  shape         array of sizes (default [1, 4, 32, 32])
  sampler       "euler" | "ddim" | "ab2" | "res2m"
  steps         integer, used by schedules that do not set their own
  schedule      {"kind": "simple", "steps", "sigma_max", "sigma_min", "append_zero"}
                {"kind": "karras", "steps", "sigma_max", "sigma_min", "rho", "append_zero"}
                {"kind": "two_stage", "first": <schedule>, "second": <schedule>}
                defaults: sigma_max 14.6146, sigma_min 0.0292, rho 7, append_zero false
  model         {"kind": "gaussian", "mean": <mean>, "variance"}
                {"kind": "gaussian_mixture", "components": [{"weight", "mean": <mean>, "variance"}]}
                {"kind": "scripted", "epsilons": [[v] or [v, ...one per element], ...]}
                <mean> is a number, an array with one value per element,
                or {"seed": int, "scale": float} for seeded standard normals
  variants      array of {"name", "skip": {...}, "stabilizer": {...}}

  skip          "mode": "none" | "fixed" | "adaptive" | "explicit"
                "order": "h2" | "h3" | "h4"           (fixed, explicit)
                "skip_calls": int                      (fixed: real calls per skip)
                "tolerance": float                     (adaptive)
                "anchor_interval": int (4), "max_consecutive_skips": int (2)
                "gate": "epsilon" | "state"            (adaptive, default epsilon)
                "indices": "h3, 6, 9, 12"              (explicit)
                "protect_first": int (1), "protect_last": int (1)
  stabilizer    "mode": "none" | "learning" | "grad_est" | "learn+grad_est"
                "beta": float (0.995), "curvature_scale": float (2.0)

EXIT STATUS
  0 all runs finished, 1 a run failed or output could not be written,
  2 the config is invalid (nothing is written)"#;

#[derive(Parser)]
#[command(name = "epsskip", version, about = "Epsilon-extrapolation step skipping benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the baseline and every variant of an experiment config.
    #[command(after_long_help = CONFIG_HELP)]
    Run {
        /// Experiment config (JSON). See `run --help` for the keys.
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "epsskip-out")]
        out: PathBuf,
        /// Only run this variant (the baseline always runs).
        #[arg(long, value_name = "VARIANT")]
        only: Option<String>,
        /// Also write each final latent as little-endian f32 with a JSON sidecar.
        #[arg(long)]
        dump_latents: bool,
    },
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        out,
        only,
        dump_latents,
    } = Cli::parse().command;
    let options = MatrixOptions {
        out_dir: out,
        only,
        dump_latents,
    };
    match run_experiment_matrix(&config, &options) {
        Ok(outcome) => {
            for report in &outcome.reports {
                match (&report.status, &report.error) {
                    (RunStatus::Failed, Some(e)) => eprintln!("{}: failed: {e}", report.name),
                    _ => println!("{}: NFE {}", report.name, report.totals.nfe),
                }
            }
            println!("summary: {}", outcome.summary_path.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use pwtt::regression::ZeroHandling;
use pwtt::sim::{simulate, write_sim_output};
use pwtt_cli::config::{run_config, sim_run_config, sim_spec};
use pwtt_cli::{evaluate, regress, report};

#[derive(Parser)]
#[command(name = "pwtt", version, about = "Building damage detection from SAR amplitude time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Override a config key, e.g. `--set threshold.mode=significance --set threshold.alpha=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene stack with footprints, labels and events.
    Simulate {
        /// Spec file (TOML or JSON); omitted keys keep their defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Start from the no-damage variant.
        #[arg(long)]
        null_case: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compute the T map and every report from a run config.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Re-score a stored T map with new labels, threshold or weighting.
    Evaluate {
        #[arg(long, short)]
        config: PathBuf,
        /// Directory holding tmap.tif and tmap.json.
        #[arg(long)]
        tmap_dir: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit the grid-cell regression over one or more runs.
    Regress {
        /// Run directories or grid cell CSV files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "exclude")]
        zero_handling: Zero,
        /// Also write the full result as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Serve the HTTP API over a run directory.
    Serve {
        #[arg(long, short)]
        dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Concurrent window computations.
        #[arg(long, default_value_t = 2)]
        workers: usize,
    },
    /// Render figures and a markdown summary for a run directory.
    Report {
        #[arg(long, short)]
        dir: PathBuf,
        /// Defaults to `<dir>/report`.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Zero {
    Exclude,
    Log1p,
}

fn print(v: &serde_json::Value) {
    // a closed pipe (`pwtt ... | head`) is not an error
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Simulate {
            spec,
            null_case,
            seed,
            out,
            overrides,
        } => {
            let mut spec = sim_spec(spec.as_deref(), null_case, &overrides.set)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let sim = simulate(&spec)?;
            let written = write_sim_output(&sim, &out)?;
            let spec_path = out.join("sim_spec.toml");
            std::fs::write(&spec_path, toml::to_string(&spec)?).with_context(|| format!("writing {}", spec_path.display()))?;
            let run_path = out.join("run.toml");
            std::fs::write(&run_path, sim_run_config(&spec)).with_context(|| format!("writing {}", run_path.display()))?;
            print(&json!({
                "scenes": sim.stack.len(),
                "buildings": sim.footprints.footprints.len(),
                "events": sim.events.len(),
                "manifest": written.manifest,
                "run_config": run_path,
            }));
        }
        Command::Run {
            config,
            output_dir,
            threads,
            overrides,
        } => {
            let mut cfg = run_config(&config, &overrides.set)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            if threads.is_some() {
                cfg.threads = threads;
            }
            let summary = pwtt::pipeline::cmd_run(&cfg)?;
            print(&json!(summary));
        }
        Command::Evaluate {
            config,
            tmap_dir,
            output_dir,
            overrides,
        } => {
            let mut cfg = run_config(&config, &overrides.set)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            print(&evaluate(&cfg, &tmap_dir)?);
        }
        Command::Regress {
            inputs,
            zero_handling,
            json: json_out,
        } => {
            let zero = match zero_handling {
                Zero::Exclude => ZeroHandling::Exclude,
                Zero::Log1p => ZeroHandling::Log1p,
            };
            let (res, text) = regress(&inputs, zero)?;
            let _ = write!(std::io::stdout(), "{text}");
            if let Some(p) = json_out {
                let v = json!({"result": res, "t_effect_pct": res.t_effect_pct(), "fixed_effects": res.fixed_effects()});
                std::fs::write(&p, serde_json::to_string_pretty(&v)?).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Serve { dir, addr, workers } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(pwtt_service::serve(&dir, addr, workers))?;
        }
        Command::Report { dir, out } => {
            let out = out.unwrap_or_else(|| dir.join("report"));
            let written = report::write_report(&dir, &out)?;
            print(&json!(written));
        }
    }
    Ok(())
}

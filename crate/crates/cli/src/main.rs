use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hsi_core::harness::{self, RunOptions, ScenarioConfig, DATA_ROOT_ENV};
use hsi_core::{load_cube, metrics, noise, phantom, save_cube, sigma, NoiseSpec};

#[derive(Parser)]
#[command(name = "hsi", version, about = "Unsupervised hyperspectral denoising with deep image priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Concurrent (seed, method) jobs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root for relative dataset paths.
        #[arg(long, env = DATA_ROOT_ENV)]
        data_root: Option<PathBuf>,
    },
    /// Re-run the scenario recorded in a run directory.
    Replay {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Build a results table from run directories.
    Tables {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Also write `<prefix>.csv` and `<prefix>.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write composites and training curves into a run directory.
    Render {
        #[arg(long)]
        run: PathBuf,
    },
    /// Corrupt a clean cube with a noise spec.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        /// Noise spec as inline JSON or a path to a JSON file.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        /// Print the synthesized Gaussian standard deviation.
        #[arg(long)]
        emit_sigma: bool,
    },
    /// Estimate the noise level of a cube.
    Sigma {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        per_band: bool,
    },
    /// Compare an estimate against a reference.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
    },
    /// Write a synthetic scene as a native cube.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a raw cube (any supported dtype, order, interleave) to native f32 bsq.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_spec(arg: &str) -> Result<NoiseSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).with_context(|| format!("reading noise spec {arg}"))?
    };
    serde_json::from_str(&text).context("parsing noise spec")
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, jobs, out, data_root } => {
            if let Some(root) = data_root {
                std::env::set_var(DATA_ROOT_ENV, root);
            }
            let cfg = ScenarioConfig::from_file(&config)?;
            let dir = harness::run_scenario(&cfg, &RunOptions { jobs, out })?;
            let manifest = harness::Manifest::load(&dir)?;
            let failed: Vec<String> = manifest
                .seeds
                .iter()
                .flat_map(|s| {
                    let seed_err = s.error.iter().map(move |e| format!("seed {}: {e}", s.seed));
                    let method_err =
                        s.methods.iter().filter_map(move |m| m.error.as_ref().map(|e| format!("seed {} {}: {e}", s.seed, m.name)));
                    seed_err.chain(method_err)
                })
                .collect();
            println!("{}", dir.display());
            for f in &failed {
                eprintln!("failed: {f}");
            }
        }
        Command::Replay { run, out, jobs } => {
            println!("{}", harness::replay(&run, &out, jobs)?.display());
        }
        Command::Tables { runs, out } => {
            let table = harness::build_tables(&runs);
            let text = table.to_text();
            print!("{text}");
            if let Some(prefix) = out {
                std::fs::write(prefix.with_extension("csv"), table.to_csv())?;
                std::fs::write(prefix.with_extension("txt"), text)?;
            }
        }
        Command::Render { run } => {
            for p in harness::render_outputs(&run)? {
                println!("{}", p.display());
            }
        }
        Command::Corrupt { input, spec, out, emit_sigma } => {
            let spec = parse_spec(&spec)?;
            let clean = load_cube(&input)?;
            let (noisy, sigma) = noise::apply_spec(&clean, &spec)?;
            save_cube(&noisy, &out)?;
            if emit_sigma {
                println!("{sigma}");
            }
        }
        Command::Sigma { input, per_band } => {
            let est = sigma::estimate_sigma(&load_cube(&input)?)?;
            if per_band {
                println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "pooled": est.pooled, "per_band": est.per_band }))?);
            } else {
                println!("{}", est.pooled);
            }
        }
        Command::Metrics { reference, est } => {
            let (r, e) = (load_cube(&reference)?, load_cube(&est)?);
            if r.shape() != e.shape() {
                bail!("shape mismatch: {:?} vs {:?}", r.shape(), e.shape());
            }
            println!("{}", serde_json::to_string_pretty(&metrics::evaluate(&r, &e)?)?);
        }
        Command::Phantom { out, height, width, bands, seed } => {
            let cube = phantom::generate(&phantom::PhantomConfig::new(height, width, bands, seed))?;
            save_cube(&cube, &out)?;
        }
        Command::Convert { input, out } => {
            let header = hsi_core::cube::convert_cube(&input, &out)?;
            println!("{}x{}x{} {}", header.height, header.width, header.bands, header.dtype);
        }
    }
    Ok(())
}

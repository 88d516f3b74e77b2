//! Command-line front end: design runs, one-shot homogenization,
//! finite-difference gradient audits, and field export.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use auxcell_core::config::RunConfig;
use auxcell_core::driver;
use auxcell_core::io::{write_vtk, Checkpoint};
use auxcell_core::levelset::DesignField;

#[derive(Parser)]
#[command(name = "auxcell", version, about = "Unit-cell design toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the output directory from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Disable reduced-basis acceleration regardless of the configuration.
    #[arg(long)]
    no_rom: bool,
    /// Override the iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Scale the element counts by this factor (rounded, floor 2).
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization campaign.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Resume from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate the effective tensor of the configured initial design,
    /// or of a checkpointed design.
    Homogenize {
        #[command(flatten)]
        common: CommonArgs,
        /// Evaluate the design stored in this checkpoint instead of the
        /// configured seed layout.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare analytic gradients against central finite differences.
    GradCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of in-band design points to sample.
        #[arg(long, default_value_t = 12)]
        samples: usize,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
    },
    /// Sample the level set and density of a design onto a regular grid
    /// and write a VTK file.
    Export {
        #[command(flatten)]
        common: CommonArgs,
        /// Design to export; defaults to the configured seed layout.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output VTK path.
        #[arg(long, default_value = "fields.vtk")]
        vtk: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(out) = &common.out {
        config.output.directory = out.display().to_string();
    }
    if common.no_rom {
        config.rom.enabled = false;
    }
    if let Some(cap) = common.max_iter {
        if cap == 0 {
            bail!("--max-iter must be at least 1");
        }
        config.run_loop.max_iterations = cap;
    }
    if let Some(scale) = common.scale {
        config.apply_scale(scale)?;
    }
    Ok(config)
}

fn load_checkpoint_field(path: &PathBuf) -> Result<DesignField> {
    let ckpt =
        Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(ckpt.field)
}

fn print_tensor(c: &auxcell_core::nalgebra::DMatrix<f64>) {
    for a in 0..c.nrows() {
        let row: Vec<String> = (0..c.ncols()).map(|b| format!("{:+.6e}", c[(a, b)])).collect();
        println!("  [{}]", row.join(", "));
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common, resume } => {
            let config = load_config(&common)?;
            let arts = driver::run(&config, resume.as_deref())?;
            let s = &arts.summary;
            println!(
                "finished: {} iterations ({} full, {} reduced), converged = {}",
                s.iterations, s.full_iterations, s.reduced_iterations, s.converged
            );
            println!(
                "objective {:.6e}, volume {:.6}, wall {:.1}s, solve {:.1}s",
                s.final_j1, s.final_volume, s.wall_seconds, s.solve_seconds
            );
            if !s.final_poisson.is_empty() {
                let labels: &[&str] = if s.final_poisson.len() == 2 {
                    &["nu_xy", "nu_yx"]
                } else {
                    &["nu_xy", "nu_yx", "nu_xz", "nu_zx", "nu_yz", "nu_zy"]
                };
                let pairs: Vec<String> = labels
                    .iter()
                    .zip(&s.final_poisson)
                    .map(|(l, v)| format!("{l} = {v:+.4}"))
                    .collect();
                println!("{}", pairs.join(", "));
            }
            for event in &s.events {
                println!("note: {event}");
            }
            println!("artifacts in {}", config.output.directory);
        }
        Command::Homogenize { common, checkpoint } => {
            let config = load_config(&common)?;
            let field = checkpoint.as_ref().map(load_checkpoint_field).transpose()?;
            let report = driver::homogenize(&config, field.as_ref())?;
            println!("volume fraction {:.6}", report.volume);
            println!("effective tensor (asymmetry {:.2e}):", report.tensor.asymmetry);
            print_tensor(&report.tensor.c);
            match &report.constants {
                Ok(ec) => {
                    let d = config.mesh.dim;
                    for i in 0..d {
                        println!("  E_{} = {:.6e}", ["x", "y", "z"][i], ec.e[i]);
                    }
                    for (i, j) in [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)] {
                        if i < d && j < d {
                            println!(
                                "  nu_{}{} = {:+.6}",
                                ["x", "y", "z"][i],
                                ["x", "y", "z"][j],
                                ec.nu[i][j]
                            );
                        }
                    }
                }
                Err(e) => println!("engineering constants unavailable: {e}"),
            }
        }
        Command::GradCheck { common, samples, step } => {
            let config = load_config(&common)?;
            let report = driver::grad_check(&config, samples, step)?;
            println!("point      analytic            fd                  rel");
            for (label, rows) in
                [("objective", &report.objective), ("volume", &report.volume)]
            {
                println!("{label}:");
                for r in rows {
                    println!(
                        "  {:>6}  {:+.10e}  {:+.10e}  {:.3e}",
                        r.point, r.analytic, r.fd, r.rel_err
                    );
                }
            }
            println!(
                "in-tolerance fractions: objective {:.3}, volume {:.3}; out-of-band clean = {}",
                report.objective_ok, report.volume_ok, report.out_of_band_clean
            );
            if report.objective_ok < 0.95 || report.volume_ok < 0.95 || !report.out_of_band_clean
            {
                bail!("gradient check failed");
            }
        }
        Command::Export { common, checkpoint, vtk } => {
            let config = load_config(&common)?;
            let field = match checkpoint.as_ref() {
                Some(path) => load_checkpoint_field(path)?,
                None => driver::seed_field(&config)?,
            };
            let fields = driver::sample_design(&config, &field)?;
            write_vtk(&vtk, &fields)?;
            println!("wrote {}", vtk.display());
        }
    }
    Ok(())
}

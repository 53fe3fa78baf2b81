//! `ionprobe`: simulate, image and analyse trapped-ion strings from files.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ionprobe::io::OutputUnits;
use ionprobe::isolation::{PairSelection, Weighting};
use ionprobe::reconstruction::OffsetConvention;

use commands::{Global, IsolateArgs, Outcome};
use config::ConfigError;

const EXIT_USAGE: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "ionprobe", version, about = "Axial potentials from the equilibrium positions of ion strings")]
#[command(after_help = "Exit codes: 0 success, 1 usage or configuration, 2 partial numerical failure, 3 I/O.")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Units of values written to files.
    #[arg(long, global = true, value_enum, default_value_t = UnitsArg::Internal)]
    units: UnitsArg,
    /// Seed for every random draw (imaging noise, uncertainty bands).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Lattice spacing of reconstructed curves, um.
    #[arg(long, global = true)]
    grid_um: Option<f64>,
    /// Gauge of reconstructed curves: min-zero, mean-zero or anchor=<x>,
    /// with x in the output length unit.
    #[arg(long, global = true, value_parser = parse_offset)]
    offset: Option<OffsetConvention>,
    /// Smallest voltage difference accepted when pairing records, mV.
    #[arg(long, global = true)]
    delta_min_mv: Option<f64>,
    /// Output directory; overrides the scenario's output_dir.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Directory searched for scenario files given by relative path, and
    /// holding the default scenario.json.
    #[arg(long, global = true, env = "IONPROBE_CONFIG_DIR")]
    config_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitsArg {
    Internal,
    Physical,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Uniform,
    DeltaSquared,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairsArg {
    All,
    Adjacent,
}

#[derive(Subcommand)]
enum Command {
    /// Solve equilibrium strings for every record of a scenario; writes
    /// positions_NNN.csv and manifest.json.
    Simulate {
        /// Scenario JSON; defaults to scenario.json in the config directory.
        config: Option<PathBuf>,
    },
    /// Reconstruct potentials from a positions CSV (curve.csv, curve.svg)
    /// or from a simulate manifest (curve_NNN.csv, session.json).
    Reconstruct {
        input: PathBuf,
        /// Resamples for the uncertainty band when positions carry sigmas.
        #[arg(long, default_value_t = 200)]
        replicas: usize,
    },
    /// Difference, align and stitch a session into one electrode's unit
    /// potential; writes unit_potential.csv and unit_potential.svg.
    Isolate {
        session: PathBuf,
        #[arg(long)]
        electrode: usize,
        #[arg(long, value_enum, default_value_t = WeightingArg::Uniform)]
        weighting: WeightingArg,
        #[arg(long, value_enum, default_value_t = PairsArg::All)]
        pairs: PairsArg,
        /// Overlay the analytic unit potential of the default geometry.
        #[arg(long)]
        analytic: bool,
    },
    /// Sweep a scenario's shuttle section; writes shuttle_map.csv and
    /// shuttle_contours.svg.
    Shuttle {
        config: Option<PathBuf>,
        /// Equipotential spacing, meV.
        #[arg(long)]
        contour_mev: Option<f64>,
    },
    /// Render a camera frame of the ions in a positions CSV; writes frame.png.
    ImageGen {
        positions: PathBuf,
        /// Scenario whose imaging section and seed are used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the counts as frame.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Fit ion positions in a frame (PNG or CSV); writes fit.csv and positions.csv.
    ImageFit {
        frame: PathBuf,
        /// Width of the point-spread function, pixels.
        #[arg(long)]
        psf_sigma_px: Option<f64>,
    },
}

fn parse_offset(s: &str) -> Result<OffsetConvention, String> {
    s.parse().map_err(|e: ionprobe::Error| e.to_string())
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let a = cli.global;
    if let Some(g) = a.grid_um {
        if !(g > 0.0 && g.is_finite()) {
            return Err(ConfigError(format!("--grid-um must be positive, got {g}")).into());
        }
    }
    if let Some(d) = a.delta_min_mv {
        if !(d >= 0.0 && d.is_finite()) {
            return Err(ConfigError(format!("--delta-min-mv must be non-negative, got {d}")).into());
        }
    }
    let g = Global {
        units: match a.units {
            UnitsArg::Internal => OutputUnits::Internal,
            UnitsArg::Physical => OutputUnits::Physical,
        },
        seed: a.seed,
        grid_um: a.grid_um,
        offset: a.offset,
        delta_min_mv: a.delta_min_mv,
        out: a.out,
        config_dir: a.config_dir,
    };
    match cli.command {
        Command::Simulate { config } => commands::simulate(&g, config.as_deref()),
        Command::Reconstruct { input, replicas } => commands::reconstruct_cmd(&g, &input, replicas),
        Command::Isolate { session, electrode, weighting, pairs, analytic } => {
            let args = IsolateArgs {
                electrode,
                weighting: match weighting {
                    WeightingArg::Uniform => Weighting::Uniform,
                    WeightingArg::DeltaSquared => Weighting::DeltaSquared,
                },
                pairs: match pairs {
                    PairsArg::All => PairSelection::All,
                    PairsArg::Adjacent => PairSelection::Adjacent,
                },
                analytic,
            };
            commands::isolate(&g, &session, &args)
        }
        Command::Shuttle { config, contour_mev } => commands::shuttle(&g, config.as_deref(), contour_mev),
        Command::ImageGen { positions, config, csv } => commands::image_gen(&g, &positions, config.as_deref(), csv),
        Command::ImageFit { frame, psf_sigma_px } => commands::image_fit(&g, &frame, psf_sigma_px),
    }
}

/// Exit status for an error, from the first recognised cause.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_USAGE;
        }
        if let Some(err) = cause.downcast_ref::<ionprobe::Error>() {
            use ionprobe::Error::*;
            return match err {
                Io(_) | Parse(_) => EXIT_IO,
                NoConvergence { .. } | NotConfining(_) | NoPeaks | NonFinite(_) => EXIT_PARTIAL,
                _ => EXIT_USAGE,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

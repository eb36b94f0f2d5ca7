//! `rosspuf`: fabricate devices, answer challenges, run the sweeps and the
//! randomness battery from a single experiment config.

mod commands;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "rosspuf", version, about = "Photonic reservoir PUF simulator and key generator")]
struct Cli {
    /// Worker threads; defaults to all cores. Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the default experiment config.
    InitConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a device and fix its ADC full scale.
    Fabricate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fab_seed: Option<u64>,
        #[arg(long)]
        mrrs_per_node: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a challenge file.
    Challenge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Store the series, not only the seed.
        #[arg(long)]
        inline: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the weight-to-uniform mapping on an ensemble of CRPs.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the readout on one challenge and derive the key.
    Respond {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        challenge_seed: u64,
        /// Defaults to a seed derived from the master seed and challenge seed.
        #[arg(long)]
        noise_seed: Option<u64>,
        /// Calibration file; created when missing unless --no-calibrate.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        no_calibrate: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep and write CSV tables.
    Sweep {
        kind: SweepKind,
        #[arg(long)]
        config: PathBuf,
        /// Device file; fabricated from the config when omitted.
        #[arg(long)]
        device: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Derive public helper data from a response key.
    Enroll {
        #[arg(long)]
        response: PathBuf,
        /// BCH correction capacity.
        #[arg(long)]
        t: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover the enrolled key from a noisy response.
    Reconstruct {
        #[arg(long)]
        helper: PathBuf,
        #[arg(long)]
        response: PathBuf,
        /// Recovered key as '0'/'1' text.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomness battery on a key corpus or a bit file.
    Nist {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        device: Option<PathBuf>,
        /// Test this bit file instead of generating a corpus.
        #[arg(long)]
        bits: Option<PathBuf>,
        #[arg(long, default_value = "ascii01")]
        format: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also write the tested corpus here.
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long, default_value = "packed")]
        export_format: String,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepKind {
    Bitgrid,
    Mrr,
    Ecc,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global()?;
    }
    match cli.command {
        Command::InitConfig { out } => commands::init_config(out.as_deref()),
        Command::Fabricate {
            config,
            fab_seed,
            mrrs_per_node,
            out,
        } => commands::fabricate(&config, fab_seed, mrrs_per_node, out.as_deref()),
        Command::Challenge {
            config,
            seed,
            inline,
            out,
        } => commands::challenge(&config, seed, inline, out.as_deref()),
        Command::Calibrate { config, device, out } => commands::calibrate(&config, &device, out.as_deref()),
        Command::Respond {
            config,
            device,
            challenge_seed,
            noise_seed,
            calibration,
            no_calibrate,
            out,
        } => commands::respond(
            &config,
            &device,
            challenge_seed,
            noise_seed,
            calibration.as_deref(),
            no_calibrate,
            out.as_deref(),
        ),
        Command::Sweep {
            kind,
            config,
            device,
            out_dir,
        } => commands::sweep(kind, &config, device.as_deref(), out_dir.as_deref()),
        Command::Enroll { response, t, out } => commands::enroll(&response, t, out.as_deref()),
        Command::Reconstruct { helper, response, out } => commands::reconstruct(&helper, &response, out.as_deref()),
        Command::Nist {
            config,
            device,
            bits,
            format,
            out_dir,
            export,
            export_format,
        } => commands::nist(
            &config,
            device.as_deref(),
            bits.as_deref(),
            &format,
            out_dir.as_deref(),
            export.as_deref(),
            &export_format,
        ),
    }
}

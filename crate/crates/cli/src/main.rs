mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use blefp_core::features::FeatureMethod;
use blefp_core::ingest::SampleLayout;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::exit::CliError;

#[derive(Parser)]
#[command(name = "blefp", version, about = "BLE RF fingerprinting toolkit")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory (command dependent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct Overrides {
    /// Fleet size.
    #[arg(long)]
    devices: Option<usize>,
    /// Training frames per device.
    #[arg(long)]
    train_frames: Option<usize>,
    /// Test frames per device.
    #[arg(long)]
    test_frames: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(n) = self.devices {
            cfg.fleet.n_devices = n;
        }
        if let Some(n) = self.train_frames {
            cfg.experiment.frames_per_device_train = n;
        }
        if let Some(n) = self.test_frames {
            cfg.experiment.frames_per_device_test = n;
        }
        if let Some(n) = self.epochs {
            cfg.network.epochs = n;
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum LayoutArg {
    F32,
    F64,
}

impl From<LayoutArg> for SampleLayout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::F32 => SampleLayout::InterleavedF32,
            LayoutArg::F64 => SampleLayout::InterleavedF64,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Modulate one frame and write its samples as CSV (n,i,q).
    Synth {
        /// PDU as hex bytes (sent LSB first).
        #[arg(long, default_value = "")]
        pdu_hex: String,
        /// Impairment assignment such as `cfo=12e3`; repeatable.
        #[arg(long = "set", allow_hyphen_values = true)]
        set: Vec<String>,
        /// Pass the frame through this scenario's channel.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// TPD curves for a sweep over one impairment.
    Sweep {
        #[arg(long)]
        impairment: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        values: Vec<f64>,
        #[arg(long, default_value = "")]
        pdu_hex: String,
    },
    /// Sample a fleet; optionally synthesize a dataset under a scenario.
    Fleet {
        #[arg(long)]
        scenario: Option<String>,
        /// Frames per device for the dataset.
        #[arg(long)]
        frames: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Extract features from a capture (or a synthetic train set) to CSV.
    Extract {
        #[arg(long)]
        method: FeatureMethod,
        /// Capture file; its sidecar manifest supplies labels and rate.
        #[arg(long)]
        capture: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f64")]
        layout: LayoutArg,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train one classifier on the configured training scenario.
    Train {
        #[arg(long)]
        method: FeatureMethod,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Accuracy grids and confusion matrices for every method.
    Experiment {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Accuracy versus number of devices (nested fleets).
    Scalability {
        #[arg(long, value_delimiter = ',')]
        counts: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Median-of-3 wall-clock per phase and method.
    Timing {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare backpropagation with finite differences on a tiny network.
    Gradcheck {
        /// Number of random networks to check.
        #[arg(long, default_value_t = 3)]
        trials: u64,
    },
    /// Segment a raw capture into frames and rewrite it with a manifest.
    Ingest {
        #[arg(long)]
        capture: Option<PathBuf>,
        #[arg(long)]
        sample_rate: Option<f64>,
        #[arg(long, value_enum)]
        layout: Option<LayoutArg>,
        /// Fixed frame length (pre-framed files, or burst length to keep).
        #[arg(long)]
        frame_len: Option<usize>,
        /// Detect bursts above this fraction of peak smoothed power.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 32)]
        min_gap: usize,
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        align: i64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Other(e.into()))?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out;
    use commands as c;
    match cli.command {
        Command::Synth {
            pdu_hex,
            set,
            scenario,
        } => c::synth(&cfg, &pdu_hex, &set, scenario.as_deref(), out),
        Command::Sweep {
            impairment,
            values,
            pdu_hex,
        } => c::sweep(&cfg, &impairment, &values, &pdu_hex, out),
        Command::Fleet {
            scenario,
            frames,
            overrides,
        } => {
            overrides.apply(&mut cfg);
            c::fleet(&cfg, scenario.as_deref(), frames, out)
        }
        Command::Extract {
            method,
            capture,
            layout,
            overrides,
        } => {
            overrides.apply(&mut cfg);
            c::extract(&cfg, method, capture, layout.into(), out)
        }
        Command::Train { method, overrides } => {
            overrides.apply(&mut cfg);
            c::train(&cfg, method, out)
        }
        Command::Experiment { overrides } => {
            overrides.apply(&mut cfg);
            c::experiment(&cfg, out)
        }
        Command::Scalability { counts, overrides } => {
            overrides.apply(&mut cfg);
            c::scalability(&cfg, &counts, out)
        }
        Command::Timing { overrides } => {
            overrides.apply(&mut cfg);
            c::timing(&cfg, out)
        }
        Command::Gradcheck { trials } => c::gradcheck(cfg.seed, trials),
        Command::Ingest {
            capture,
            sample_rate,
            layout,
            frame_len,
            threshold,
            min_gap,
            align,
        } => c::ingest(
            &cfg,
            c::IngestArgs {
                capture,
                sample_rate,
                layout: layout.map(Into::into),
                frame_len,
                threshold,
                min_gap,
                align,
            },
            out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("blefp: {e}");
            e.exit_code()
        }
    }
}

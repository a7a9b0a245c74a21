//! `lcc`: train, evaluate and simulate learned Lagrange coded classifiers.
//!
//! Exit status is 0 on success, 1 for usage or configuration errors and 2 for
//! runtime failures. Failures print one line to stderr of the form
//! `lcc: error kind=<kind> exit=<code> message=<text>`.

mod commands;
mod fetch;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lcc_core::config::ConfigFile;
use lcc_core::scheme::{Placement, Variant};
use lcc_core::Error;

#[derive(Debug, Parser)]
#[command(name = "lcc", version, about = "Learned Lagrange coded computation for Fashion-MNIST")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Flags that override values from the configuration file.
#[derive(Debug, Default, Args)]
struct Overrides {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Train on a seeded random subset of N images.
    #[arg(long, global = true, value_name = "N")]
    subset: Option<usize>,
    /// Evaluate on the first N test images.
    #[arg(long, global = true, value_name = "N")]
    test_subset: Option<usize>,
    #[arg(long, global = true)]
    variant: Option<VariantArg>,
    /// Encoder polynomial degree.
    #[arg(long = "G", global = true)]
    g: Option<usize>,
    /// Computation polynomial degree (H_S only).
    #[arg(long = "P", global = true)]
    p: Option<usize>,
    /// Images coded together.
    #[arg(long = "K", global = true)]
    k: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, global = true)]
    placement: Option<PlacementArg>,
    /// Run simulated workers behind loopback TCP sockets.
    #[arg(long, global = true)]
    socket: bool,
    #[arg(long, global = true, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Hs,
    Hb,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlacementArg {
    MasterEncodes,
    WorkersEncode,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum BaselineArg {
    Mlp,
    Cnn,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Download the four Fashion-MNIST IDX files into the data directory.
    FetchData {
        /// Download again even when the files are present.
        #[arg(long)]
        force: bool,
    },
    /// Train a coded scheme (or a centralized baseline) and save a checkpoint.
    Train {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        metrics: Option<PathBuf>,
        /// Train a single-image baseline classifier instead.
        #[arg(long)]
        baseline: Option<BaselineArg>,
        /// Skip the per-epoch test-set evaluation.
        #[arg(long)]
        no_eval: bool,
    },
    /// Report test accuracy of a checkpoint.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Use the training-path logits instead of interpolation.
        #[arg(long)]
        direct: bool,
    },
    /// Classify the test set through the simulated straggling cluster.
    Simulate {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Use freshly initialized weights instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        random_init: bool,
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        /// Existing worker addresses (comma separated); implies socket mode.
        #[arg(long, value_delimiter = ',', value_name = "HOST:PORT")]
        endpoints: Vec<std::net::SocketAddr>,
        #[arg(long)]
        max_batches: Option<usize>,
        #[arg(long)]
        batch_groups: Option<usize>,
    },
    /// Serve one worker over TCP until killed.
    Worker {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
    /// Exact LCC on `f(X) = XᵀX` for every way of dropping workers.
    LccDemo {
        /// Workers dropped per trial; all subsets of this size are tried.
        #[arg(long, default_value_t = 0)]
        drop: usize,
        /// Side of the random square input matrices.
        #[arg(long, default_value_t = 4)]
        size: usize,
    },
    /// Compare backprop with central differences for every op and pipeline.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Closed-form parameter counts for the configured scheme.
    Params {
        /// Count a baseline classifier instead.
        #[arg(long)]
        baseline: Option<BaselineArg>,
    },
    /// Print the annotated example configuration.
    ExampleConfig,
}

/// A failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    kind: &'static str,
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: "usage", code: 1, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { kind: "runtime", code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::Config(_) => ("config", 1),
            Error::Usage(_) => ("usage", 1),
            Error::Checkpoint(_) => ("checkpoint", 2),
            Error::Idx(_) => ("data", 2),
            Error::Io(_) => ("io", 2),
            Error::Diverged { .. } => ("diverged", 2),
            Error::Unrecoverable { .. } => ("unrecoverable", 2),
            Error::Protocol(_) => ("protocol", 2),
            _ => ("runtime", 2),
        };
        Self { kind, code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

impl Overrides {
    /// Load the configuration and apply command-line overrides.
    fn resolve(&self) -> Result<ConfigFile, Failure> {
        let mut cfg = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let s = &mut cfg.scheme;
        if let Some(v) = self.seed {
            s.seed = v;
            cfg.straggler.seed = v;
        }
        if let Some(v) = self.epochs {
            s.epochs = v;
        }
        if let Some(v) = self.variant {
            s.variant = match v {
                VariantArg::Hs => Variant::Hs,
                VariantArg::Hb => Variant::Hb,
            };
        }
        if let Some(v) = self.g {
            s.encoder_degree = v;
        }
        if let Some(v) = self.p {
            s.computation_degree = v;
        }
        if let Some(v) = self.k {
            s.group_size = v;
        }
        if let Some(v) = self.workers {
            s.workers = v;
        }
        if let Some(v) = self.placement {
            s.placement = placement(v);
        }
        if let Some(v) = self.batch_size {
            s.batch_size = v;
        }
        if let Some(v) = self.subset {
            cfg.data.subset = Some(v);
        }
        if let Some(v) = self.test_subset {
            cfg.data.test_subset = Some(v);
        }
        if let Some(v) = &self.data_dir {
            cfg.data.data_dir = v.clone();
        }
        if self.socket {
            cfg.simulation.socket = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn placement(p: PlacementArg) -> Placement {
    match p {
        PlacementArg::MasterEncodes => Placement::MasterEncodes,
        PlacementArg::WorkersEncode => Placement::WorkersEncode,
    }
}

fn run(cli: Cli) -> CmdResult {
    let cfg = cli.overrides.resolve()?;
    let o = &cli.overrides;
    match cli.command {
        Command::FetchData { force } => fetch::fetch_data(&cfg.data, force),
        Command::Train { checkpoint, metrics, baseline, no_eval } => {
            commands::train(&cfg, checkpoint, metrics, baseline, !no_eval)
        }
        Command::Eval { checkpoint, direct } => commands::eval(&cfg, checkpoint, direct),
        Command::Simulate { checkpoint, random_init, report, endpoints, max_batches, batch_groups } => {
            let runtime = commands::Runtime { workers: o.workers, placement: o.placement.map(placement) };
            commands::simulate(
                &cfg,
                commands::SimulateArgs { checkpoint, random_init, report, endpoints, max_batches, batch_groups, runtime },
            )
        }
        Command::Worker { checkpoint, port } => commands::worker(&cfg, checkpoint, port),
        Command::LccDemo { drop, size } => commands::lcc_demo(&cfg, drop, size),
        Command::Gradcheck { tolerance } => commands::gradcheck(&cfg, tolerance),
        Command::Params { baseline } => commands::params(&cfg, baseline),
        Command::ExampleConfig => {
            print!("{}", lcc_core::config::ANNOTATED_EXAMPLE);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            report(&Failure::usage(first));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(f.code)
        }
    }
}

fn report(f: &Failure) {
    let message = f.message.replace(['\n', '\r'], " ");
    eprintln!("lcc: error kind={} exit={} message={}", f.kind, f.code, message);
}

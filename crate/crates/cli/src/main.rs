use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Exit codes: 0 success, 1 usage, 2 format error, 3 backend error.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FORMAT: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

/// Bad invocation (missing inputs, unknown names): exits 1 rather than 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "labelprop",
    about = "Sliding-window label propagation for LiDAR semantic segmentation",
    version
)]
struct Cli {
    /// Worker threads for intra-stage parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct PipelineArgs {
    /// Sequence directory (velodyne/, labels/, poses.txt, scene.json).
    #[arg(long)]
    sequence: PathBuf,

    /// Pose file; defaults to SEQUENCE/poses.txt.
    #[arg(long)]
    poses: Option<PathBuf>,

    /// Scene manifest with the class partition; defaults to
    /// SEQUENCE/scene.json.
    #[arg(long)]
    partition: Option<PathBuf>,

    /// Propagation kernel width d_p, meters.
    #[arg(long, default_value_t = 0.30)]
    dp: f64,

    /// Cluster count K_c.
    #[arg(long, default_value_t = 20)]
    kc: usize,

    /// Accumulation window N_s, scans.
    #[arg(long, default_value_t = 20)]
    ns: usize,

    /// Per-scan subsample grid, meters.
    #[arg(long, default_value_t = 0.05)]
    subsample: f64,

    /// Acquisition range crop, meters.
    #[arg(long, default_value_t = 75.0)]
    range: f64,

    /// Densification voxel size, meters (default 2.0, or 1.0 in MOS mode).
    #[arg(long)]
    densify_voxel: Option<f64>,

    /// Moving-object-segmentation mode: binary or semantic. Switches to
    /// N_c = 5 clusters, 1 m densification voxels, and the timestamp
    /// channel.
    #[arg(long, value_name = "MODE")]
    mos: Option<String>,

    /// RNG seed for every stochastic stage.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct BackendArgs {
    /// Segmentation backend: oracle, nn, or external:DIR.
    #[arg(long, default_value = "nn")]
    backend: String,

    /// Shell command an external backend runs after exporting clusters
    /// (sees LP_EXCHANGE_DIR and LP_SCAN_INDEX).
    #[arg(long)]
    backend_cmd: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Process a sequence and write one label file per scan.
    Run {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        backend: BackendArgs,
        /// Output directory for NNNNNN.label files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export densified training clusters with ground-truth labels.
    ExportTrain {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Output directory for clusters/NNNNNN_CC.bin.
        #[arg(long)]
        out: PathBuf,
        /// Per-scan probability of replacing reflectivity by occupancy.
        #[arg(long, default_value_t = 0.5)]
        dropout_reflectivity: f64,
    },
    /// Score predictions against ground truth under a label-set mapping.
    Eval {
        /// Built-in label set name or path to a mapping JSON file.
        #[arg(long)]
        labelset: String,
        /// Directory of ground-truth .label files.
        #[arg(long)]
        gt: PathBuf,
        /// Directory of predicted .label files.
        #[arg(long)]
        pred: PathBuf,
        /// Evaluation-set name used in the report (default: the gt
        /// directory name).
        #[arg(long)]
        eval_name: Option<String>,
    },
    /// Subsample a sequence by LiDAR beam (e.g. 64 to 32 beams).
    SubsampleBeams {
        /// Input sequence directory.
        #[arg(long)]
        sequence: PathBuf,
        /// Output sequence directory.
        #[arg(long)]
        out: PathBuf,
        /// Beams to keep: even, odd, or a comma-separated list.
        #[arg(long, default_value = "even")]
        keep: String,
        /// Beam count to infer per scan.
        #[arg(long, default_value_t = 64)]
        num_beams: u32,
    },
    /// Add seeded noise to a pose file.
    PerturbPoses {
        /// Input pose file.
        #[arg(long)]
        poses: PathBuf,
        /// Output pose file.
        #[arg(long)]
        out: PathBuf,
        /// Translation noise sigma per axis, meters.
        #[arg(long, default_value_t = 0.0)]
        sigma_t: f64,
        /// Rotation noise sigma, radians.
        #[arg(long, default_value_t = 0.0)]
        sigma_r: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a sequence and print the per-stage timing report.
    Bench {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Generate a small synthetic sequence for smoke tests and demos.
    MakeFixture {
        /// Output sequence directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        scans: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Leave the moving object out of the scene.
        #[arg(long)]
        no_mover: bool,
    },
}

fn classify(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if let Some(e) = err.downcast_ref::<labelprop_core::Error>() {
        use labelprop_core::Error::*;
        match e {
            InvalidParameter(_) => EXIT_USAGE,
            InvalidPose(_) | ContractViolation(_) | Format(_) | Protocol(_) | Io(_) => EXIT_FORMAT,
            Backend { .. } | IncompleteCoverage { .. } => EXIT_BACKEND,
        }
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        EXIT_FORMAT
    } else {
        EXIT_USAGE
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("labelprop: failed to configure {threads} threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let outcome = match cli.command {
        Command::Run {
            pipeline,
            backend,
            out,
        } => commands::run(&pipeline, &backend, &out),
        Command::ExportTrain {
            pipeline,
            out,
            dropout_reflectivity,
        } => commands::export_train(&pipeline, &out, dropout_reflectivity),
        Command::Eval {
            labelset,
            gt,
            pred,
            eval_name,
        } => commands::eval(&labelset, &gt, &pred, eval_name.as_deref()),
        Command::SubsampleBeams {
            sequence,
            out,
            keep,
            num_beams,
        } => commands::subsample_beams(&sequence, &out, &keep, num_beams),
        Command::PerturbPoses {
            poses,
            out,
            sigma_t,
            sigma_r,
            seed,
        } => commands::perturb_poses(&poses, &out, sigma_t, sigma_r, seed),
        Command::Bench { pipeline, backend } => commands::bench(&pipeline, &backend),
        Command::MakeFixture {
            out,
            scans,
            seed,
            no_mover,
        } => commands::make_fixture(&out, scans, seed, no_mover),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("labelprop: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}

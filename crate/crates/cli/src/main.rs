use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "mslc", version, about = "Multi-sweep LiDAR stream codec")]
struct Cli {
    /// Single-threaded, seed-determined execution. Every command already runs this way.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build a stream file from KITTI velodyne scans or the synthetic generator.
    Convert(ConvertArgs),
    /// Train occupancy and intensity models for every configured depth.
    Train(JobArgs),
    /// Compress a stream file into a container.
    Encode(EncodeArgs),
    /// Reconstruct a stream file from a container.
    Decode(DecodeArgs),
    /// Per-sweep bitrate and reconstruction quality of a container.
    Eval(EvalArgs),
    /// Bitrate against quality over a range of depths.
    RdSweep(RdSweepArgs),
    /// Train every model variant with one schedule and report held-out bitrates.
    Ablate(JobArgs),
    /// Generic-compressor size of the packed leaf-offset bits.
    ProbeLeafOffsets(ProbeArgs),
    /// Describe a stream, container or checkpoint file.
    Info { file: PathBuf },
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Directory of KITTI `.bin` scans, read in file-name order.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    kitti: Option<PathBuf>,
    /// KITTI odometry pose file, one 3x4 row-major matrix per line.
    #[arg(long, requires = "kitti")]
    poses: Option<PathBuf>,
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    sweeps: usize,
    /// `tiny` or `default`.
    #[arg(long, default_value = "tiny")]
    scene: String,
    #[arg(long, default_value_t = 400.0)]
    roi_side: f64,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.0, 0.0, 0.0])]
    roi_center: Vec<f64>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct JobArgs {
    /// TOML job file; `MSLC_*` environment variables override its keys.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Initialize each depth's occupancy model from the previous depth's weights.
    #[arg(long)]
    warm_start: bool,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Directory holding `occ_d{D}.ckpt` and `int_d{D}.ckpt`.
    #[arg(long, conflicts_with_all = ["occupancy", "intensity"])]
    models: Option<PathBuf>,
    #[arg(long)]
    occupancy: Option<PathBuf>,
    /// Defaults to raw intensity bytes when omitted.
    #[arg(long)]
    intensity: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    depth: u32,
    #[command(flatten)]
    models: ModelArgs,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[command(flatten)]
    models: ModelArgs,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// The stream that was encoded.
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    container: PathBuf,
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RdSweepArgs {
    /// Stream files to evaluate; the config's held-out corpus when omitted.
    #[arg(short, long)]
    input: Vec<PathBuf>,
    #[arg(long)]
    models: PathBuf,
    /// Inclusive range such as `11-16`, or a single depth.
    #[arg(long)]
    depths: Option<String>,
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    /// Stream files; the config's corpus (training and held-out) when omitted.
    #[arg(short, long)]
    input: Vec<PathBuf>,
    #[arg(short, long, default_value_t = 12)]
    depth: u32,
    #[arg(short, long)]
    config: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Convert(a) => commands::convert(&a),
        Cmd::Train(a) => commands::train(&a),
        Cmd::Encode(a) => commands::encode(&a),
        Cmd::Decode(a) => commands::decode(&a),
        Cmd::Eval(a) => commands::eval(&a),
        Cmd::RdSweep(a) => commands::rd_sweep(&a),
        Cmd::Ablate(a) => commands::ablate(&a),
        Cmd::ProbeLeafOffsets(a) => commands::probe(&a),
        Cmd::Info { file } => commands::info(&file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

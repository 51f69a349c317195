mod commands;
mod config;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stabilens_core::meshing::PoissonConfig;
use stabilens_core::pointcloud::DepthRange;
use stabilens_core::reconstruct::{MeshConfig, SceneConfig};

#[derive(Parser, Debug)]
#[command(name = "stabilens", version, about = "Reconstruct a captured room and re-render it at a wider field of view")]
struct Cli {
    /// Flat key = value file; keys are long flag names. Flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a capture directory and report what it contains.
    IngestValidate(IngestArgs),
    /// Fuse depth frames into one colored point cloud (PLY).
    Reconstruct(ReconstructArgs),
    /// Poisson mesh from a point cloud (PLY).
    Mesh(MeshArgs),
    /// Render a cloud or mesh at each pose of a pose CSV.
    Render(RenderArgs),
    /// Pick the sharpest frame of each group and boost soft ones.
    SelectFrames(SelectArgs),
    /// Write images and an aligned transforms manifest for a radiance-field trainer.
    ExportNerf(ExportArgs),
    /// PSNR/SSIM of rendered frames against ground truth.
    Eval(EvalArgs),
    /// Render frames for poses streamed by one client.
    Serve(ServeArgs),
    /// Stream poses from a pose CSV to a render server.
    Stream(StreamArgs),
    /// Generate the synthetic textured-room capture.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Capture directory.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Check every frame image exists now rather than on first use.
    #[arg(long)]
    check_images: bool,
    /// Largest RGB/depth timestamp gap in microseconds.
    #[arg(long, default_value_t = stabilens_core::reconstruct::DEFAULT_MAX_GAP_US)]
    max_gap_us: u64,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output point cloud.
    #[arg(long, value_name = "PLY")]
    out: PathBuf,
    #[arg(long, default_value_t = DepthRange::default().z_min)]
    z_min: f64,
    #[arg(long, default_value_t = DepthRange::default().z_max)]
    z_max: f64,
    /// Radius outlier filter radius, meters.
    #[arg(long, default_value_t = SceneConfig::default().radius)]
    radius: f64,
    #[arg(long, default_value_t = SceneConfig::default().radius_min_neighbors)]
    radius_min_neighbors: usize,
    #[arg(long, default_value_t = SceneConfig::default().stat_k)]
    stat_k: usize,
    #[arg(long, default_value_t = SceneConfig::default().stat_alpha)]
    stat_alpha: f64,
    /// Voxel edge, meters.
    #[arg(long, default_value_t = SceneConfig::default().voxel_size)]
    voxel: f64,
    /// Stitching separation, meters; defaults to the voxel edge.
    #[arg(long)]
    min_separation: Option<f64>,
    /// Fraction of the RGB frame border whose pixels are not used for color.
    #[arg(long, default_value_t = SceneConfig::default().edge_margin)]
    edge_margin: f64,
    #[arg(long, default_value_t = stabilens_core::reconstruct::DEFAULT_MAX_GAP_US)]
    max_gap_us: u64,
}

#[derive(Args, Debug)]
struct MeshArgs {
    /// Input point cloud.
    #[arg(long = "in", value_name = "PLY")]
    input: PathBuf,
    #[arg(long, value_name = "PLY")]
    out: PathBuf,
    /// Capture whose depth camera centers orient the normals.
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,
    /// Octree depth.
    #[arg(long, default_value_t = PoissonConfig::default().max_depth)]
    depth: u32,
    #[arg(long, default_value_t = PoissonConfig::default().scale)]
    scale: f64,
    #[arg(long, default_value_t = PoissonConfig::default().tolerance)]
    tolerance: f64,
    #[arg(long, default_value_t = PoissonConfig::default().max_iterations)]
    max_iterations: usize,
    #[arg(long, default_value_t = MeshConfig::default().normal_k)]
    normal_k: usize,
    #[arg(long, default_value_t = MeshConfig::default().orient_k)]
    orient_k: usize,
    #[arg(long, default_value_t = MeshConfig::default().density_quantile)]
    density_quantile: f64,
    /// Relative growth of the cloud bounding box used for trimming.
    #[arg(long, default_value_t = MeshConfig::default().bbox_expand)]
    bbox_expand: f64,
}

#[derive(Args, Debug, Clone)]
struct CameraArgs {
    /// calibration.json whose rgb block gives the base camera.
    #[arg(long, value_name = "FILE")]
    calib: Option<PathBuf>,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 360)]
    height: u32,
    /// Horizontal field of view of the base camera when no calibration is given.
    #[arg(long, default_value_t = 64.69)]
    base_fov_deg: f64,
    #[arg(long, default_value_t = stabilens_core::render::DEFAULT_SPLAT_RADIUS)]
    splat_radius: f64,
    /// Background color as r,g,b.
    #[arg(long, default_value = "0,0,0", value_parser = commands::parse_rgb)]
    background: [u8; 3],
    #[arg(long, default_value_t = stabilens_core::render::DEFAULT_NEAR)]
    near: f64,
    #[arg(long, default_value_t = stabilens_core::render::DEFAULT_FAR)]
    far: f64,
    /// How to read the scene file.
    #[arg(long, value_enum, default_value_t = SceneKind::Auto)]
    scene_kind: SceneKind,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum SceneKind {
    /// Mesh if the file has faces, otherwise a point cloud.
    Auto,
    Cloud,
    Mesh,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long, value_name = "PLY")]
    scene: PathBuf,
    /// Pose CSV (timestamp_us, r00..r22, tx, ty, tz).
    #[arg(long, value_name = "CSV")]
    poses: PathBuf,
    /// Output directory; frames are named <timestamp_us>.png.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Horizontal field of view to render at; defaults to the base camera's.
    #[arg(long)]
    fov_deg: Option<f64>,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Capture directory; its RGB frames are the candidates.
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Output directory: selected images, their poses and a selection report.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 150.0)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Directory holding <timestamp_us>.png for every pose row.
    #[arg(long, value_name = "DIR")]
    images: PathBuf,
    #[arg(long, value_name = "CSV")]
    poses: PathBuf,
    /// calibration.json; its rgb block describes the images.
    #[arg(long, value_name = "FILE")]
    calib: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Reuse the alignment stored in an earlier manifest (for test poses).
    #[arg(long, value_name = "JSON")]
    alignment_from: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum SsimModeArg {
    Luma,
    PerChannel,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Rendered frames; matched to the truth by file name.
    #[arg(long, value_name = "DIR")]
    renders: PathBuf,
    #[arg(long, value_name = "DIR")]
    truth: PathBuf,
    #[arg(long, default_value = "render")]
    label: String,
    #[arg(long, value_enum, default_value_t = SsimModeArg::Luma)]
    ssim_mode: SsimModeArg,
    /// Per-frame CSV sidecar.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    /// Also write the text report here.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, value_name = "PLY")]
    scene: PathBuf,
    #[arg(long, default_value_t = SocketAddr::from(([0, 0, 0, 0], stabilens_stream::DEFAULT_PORT)))]
    listen: SocketAddr,
    /// Directory for <sequence>.png frames.
    #[arg(long, value_name = "DIR", conflicts_with = "raw")]
    out: Option<PathBuf>,
    /// Raw frame stream file, `-` for stdout.
    #[arg(long, value_name = "FILE")]
    raw: Option<PathBuf>,
    #[command(flatten)]
    camera: CameraArgs,
}

#[derive(Args, Debug)]
struct StreamArgs {
    #[arg(long, value_name = "CSV")]
    poses: PathBuf,
    #[arg(long, default_value_t = SocketAddr::from(([127, 0, 0, 1], stabilens_stream::DEFAULT_PORT)))]
    server: SocketAddr,
    #[arg(long, default_value_t = 100.0)]
    fov_deg: f64,
    /// Fixed send rate; by default the capture timestamps set the pace.
    #[arg(long)]
    rate_hz: Option<f64>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    train_frames: usize,
    #[arg(long, default_value_t = 12)]
    test_frames: usize,
    #[arg(long, default_value_t = 640)]
    rgb_width: u32,
    #[arg(long, default_value_t = 360)]
    rgb_height: u32,
    #[arg(long, default_value_t = 64.69)]
    rgb_fov_deg: f64,
    #[arg(long, default_value_t = 320)]
    depth_width: u32,
    #[arg(long, default_value_t = 288)]
    depth_height: u32,
    #[arg(long, default_value_t = 75.0)]
    depth_fov_deg: f64,
    /// Ground-truth mesh grid spacing, meters.
    #[arg(long, default_value_t = 0.025)]
    mesh_spacing: f64,
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("STABILENS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("STABILENS_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let mut args: Vec<_> = std::env::args_os().collect();
    if let Some(path) = config::config_path(&args) {
        match config::read_config(path.as_ref()) {
            Ok(entries) => args = config::merge(args, &entries),
            Err(e) => {
                eprintln!("error: config {e}");
                return ExitCode::from(2);
            }
        }
    }
    // clap exits with 2 on usage errors
    let cli = Cli::parse_from(args);

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

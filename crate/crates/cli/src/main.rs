mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use possense::density::Bandwidth;
use possense::eval::{AreaRange, IouType};
use possense::taxonomy::TreatmentMode;
use serde::Serialize;

use crate::error::CliError;
use crate::manifest::Run;

/// Ground-plane behavioral mapping, density maps and detector evaluation for
/// calibrated surveillance cameras.
#[derive(Debug, Parser)]
#[command(name = "possense", version)]
struct Cli {
    /// Worker threads for per-frame and per-image stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log more to standard error (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Solve a camera pose from ground references, optionally calibrating
    /// the lens from planar target views first.
    Calibrate(CalibrateArgs),
    /// Map pixels to the ground plane or world points to pixels.
    Project(ProjectArgs),
    /// Locate people detections on the ground plane.
    Map(MapArgs),
    /// Render a kernel density map from ground observations.
    Density(DensityArgs),
    /// COCO-style AP report with the error-diagnosis ladder.
    Eval(EvalArgs),
    /// Error-diagnosis ladder alone.
    Diagnose(DiagnoseArgs),
    /// Per-class annotation statistics.
    Stats(StatsArgs),
    /// Keep detections worth revising by hand.
    FilterAnnotations(FilterArgs),
    /// Write detections as LabelMe files for manual revision.
    ExportLabelme(ExportLabelmeArgs),
    /// Render ground truth and noisy detections from a scenario file.
    Simulate(SimulateArgs),
    /// Split a dataset by whole images.
    Split(SplitArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Output directory; created when missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TaxonomyArgs {
    /// Taxonomy JSON (default: the shipped OPOS taxonomy).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, default_value = "merging")]
    pub treatment: TreatmentMode,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Iou {
    Bbox,
    Segm,
}

impl From<Iou> for IouType {
    fn from(i: Iou) -> Self {
        match i {
            Iou::Bbox => IouType::Bbox,
            Iou::Segm => IouType::Segm,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Area {
    All,
    Small,
    Medium,
    Large,
}

impl From<Area> for AreaRange {
    fn from(a: Area) -> Self {
        match a {
            Area::All => AreaRange::All,
            Area::Small => AreaRange::Small,
            Area::Medium => AreaRange::Medium,
            Area::Large => AreaRange::Large,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Camera JSON supplying image size, intrinsics and distortion; any pose is ignored.
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// Planar target view as an X,Y,Z,u,v CSV with Z = 0; repeat for each view (at least 3).
    #[arg(long = "view")]
    pub views: Vec<PathBuf>,
    /// Image size as WIDTHxHEIGHT when no intrinsics file is given.
    #[arg(long)]
    pub image_size: Option<String>,
    /// World-pixel references as an X,Y,Z,u,v CSV.
    #[arg(long)]
    pub refs: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// u,v pixels to ground x,y.
    Ground,
    /// X,Y,Z world points to u,v pixels.
    Image,
}

#[derive(Debug, Args, Serialize)]
pub struct ProjectArgs {
    #[arg(long)]
    pub camera: PathBuf,
    /// CSV with u,v columns (to ground) or X,Y,Z columns (to image).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub to: Direction,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Args, Serialize)]
pub struct MapArgs {
    #[arg(long)]
    pub camera: PathBuf,
    /// Detections: a COCO results array or a full COCO document.
    #[arg(long)]
    pub dets: PathBuf,
    /// COCO document listing the frames. Timestamps come from each image's
    /// `ts` field, else from the frame's position in id order and --fps.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub fps: Option<f64>,
    /// Map extent JSON; observations outside it are dropped.
    #[arg(long)]
    pub extent: Option<PathBuf>,
    /// Estimate 3D boxes with the default people footprints.
    #[arg(long)]
    pub boxes: bool,
    /// Class priors JSON for box estimation; implies --boxes.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub source_id: u32,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: StreamFormat,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DensityArgs {
    /// Observation stream; `.jsonl` files are read as JSON lines, others as CSV. Repeatable.
    #[arg(long = "observations", required = true)]
    pub observations: Vec<PathBuf>,
    #[arg(long)]
    pub extent: PathBuf,
    #[arg(long, default_value_t = possense::density::DEFAULT_CELL_SIZE_M)]
    pub cell_size: f64,
    /// Kernel bandwidth in meters, or `auto` for Silverman's rule.
    #[arg(long, default_value = "auto")]
    pub bandwidth: Bandwidth,
    /// Frames kept per second per source before rendering.
    #[arg(long, default_value_t = 1.0)]
    pub sampling_fps: f64,
    /// Restrict to these class ids (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<u32>,
    /// Half-open time window start, seconds.
    #[arg(long)]
    pub t0: Option<f64>,
    /// Half-open time window end, seconds.
    #[arg(long)]
    pub t1: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long, value_enum, default_value = "bbox")]
    pub iou: Iou,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long, value_enum, default_value = "bbox")]
    pub iou: Iou,
    #[arg(long, value_enum, default_value = "all")]
    pub area: Area,
    #[command(flatten)]
    pub taxonomy: TaxonomyArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub dets: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    pub min_score: f64,
    /// Minimum polygon area in px².
    #[arg(long, default_value_t = 600.0)]
    pub min_area: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportLabelmeArgs {
    /// COCO document listing the images.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub dets: PathBuf,
    /// Export every detection instead of applying the assist thresholds.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value_t = 0.75)]
    pub min_score: f64,
    #[arg(long, default_value_t = 600.0)]
    pub min_area: f64,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub gt: PathBuf,
    /// Train:test ratio.
    #[arg(long, default_value = "9:1")]
    pub ratio: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Split each scene separately (scene = image `scene` field, else the file's directory).
    #[arg(long)]
    pub stratify_by_scene: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Calibrate(_) => "calibrate",
            Self::Project(_) => "project",
            Self::Map(_) => "map",
            Self::Density(_) => "density",
            Self::Eval(_) => "eval",
            Self::Diagnose(_) => "diagnose",
            Self::Stats(_) => "stats",
            Self::FilterAnnotations(_) => "filter-annotations",
            Self::ExportLabelme(_) => "export-labelme",
            Self::Simulate(_) => "simulate",
            Self::Split(_) => "split",
        }
    }

    fn out_dir(&self) -> &PathBuf {
        match self {
            Self::Calibrate(a) => &a.out.out,
            Self::Project(a) => &a.out.out,
            Self::Map(a) => &a.out.out,
            Self::Density(a) => &a.out.out,
            Self::Eval(a) => &a.out.out,
            Self::Diagnose(a) => &a.out.out,
            Self::Stats(a) => &a.out.out,
            Self::FilterAnnotations(a) => &a.out.out,
            Self::ExportLabelme(a) => &a.out.out,
            Self::Simulate(a) => &a.out.out,
            Self::Split(a) => &a.out.out,
        }
    }
}

fn run(cli: &Cli, argv: &[String]) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::config("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::config(format!("worker pool: {e}")))?;
    }
    let mut run = Run::new(cli.command.out_dir())?;
    match &cli.command {
        Command::Calibrate(a) => commands::calibrate(a, &mut run)?,
        Command::Project(a) => commands::project(a, &mut run)?,
        Command::Map(a) => commands::map(a, &mut run)?,
        Command::Density(a) => commands::density(a, &mut run)?,
        Command::Eval(a) => commands::eval(a, &mut run)?,
        Command::Diagnose(a) => commands::diagnose(a, &mut run)?,
        Command::Stats(a) => commands::stats(a, &mut run)?,
        Command::FilterAnnotations(a) => commands::filter_annotations(a, &mut run)?,
        Command::ExportLabelme(a) => commands::export_labelme(a, &mut run)?,
        Command::Simulate(a) => commands::simulate(a, &mut run)?,
        Command::Split(a) => commands::split(a, &mut run)?,
    }
    let config = serde_json::to_value(&cli.command).expect("arguments serialize");
    run.finish(cli.command.name(), argv, &config, rayon::current_num_threads())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::Family::Config.exit_code() } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.family.exit_code() as u8)
        }
    }
}

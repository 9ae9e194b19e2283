//! Command-line front end: `synth`, `train`, `reconstruct` and `diagnose`.
//!
//! Exit codes are 0 on success, 1 for usage errors and 2 for failures
//! while running a command.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::grad::{histogram_file_name, norm_stability, DiagnosticsLog, Histogram};
use crate::isosurface::{
    evaluate_grid, export_mesh, marching_cubes, mesh_metrics, topology, write_field, MeshFormat,
    MeshMetrics, Reference, Topology,
};
use crate::network::{ArchitectureKind, NetworkConfig};
use crate::optim::{evaluate_loss, train, LbfgsOptions, Snapshot, Termination, TrainOptions};
use crate::pointset::{
    label_points, load_cloud, load_points, read_labeled, sample_exterior, sample_interior,
    split_train_test, synth_sphere_with_exterior, write_labeled, Normalization, PointFormat,
    PointSet, SampleMode, DEFAULT_SHRINK,
};

pub const DATASET_FILE: &str = "dataset.xyz";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const REPORT_FILE: &str = "report.json";
pub const FIELD_FILE: &str = "field.raw";
pub const REPORT_VERSION: u32 = 1;

/// Grid margin around the training points, as a fraction of the longest extent.
pub const GRID_MARGIN: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(name = "neusurf", version, about = "Surface reconstruction with plain, residual and highway MLPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled dataset.
    Synth(SynthArgs),
    /// Fit a network to a labeled dataset or a raw point cloud.
    Train(TrainArgs),
    /// Extract the zero level set of a trained network.
    Reconstruct(ReconstructArgs),
    /// Summarize the diagnostics written by `train`.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    Sphere,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub shape: Shape,
    #[arg(long = "ns", default_value_t = 200)]
    pub n_s: usize,
    #[arg(long = "ni", default_value_t = 20)]
    pub n_i: usize,
    #[arg(long = "ne", default_value_t = 0)]
    pub n_e: usize,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Scale surface points about their centroid.
    Centroid,
    /// Offset surface points along their normals.
    Normal,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// Labeled dataset as written by `synth`.
    #[arg(long, conflicts_with = "cloud", required_unless_present = "cloud")]
    pub dataset: Option<PathBuf>,
    /// Raw surface points; interior and exterior points are sampled.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    /// Format of `--cloud`; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long = "ni", default_value_t = 20)]
    pub n_i: usize,
    #[arg(long = "ne", default_value_t = 0)]
    pub n_e: usize,
    #[arg(long, value_enum, default_value_t = Mode::Centroid)]
    pub mode: Mode,
    /// Interior scale factor for centroid sampling.
    #[arg(long, default_value_t = DEFAULT_SHRINK)]
    pub shrink: f64,
    /// Exterior scale factor for centroid sampling.
    #[arg(long, default_value_t = 1.5)]
    pub expand: f64,
    /// Offset distance for normal sampling, in input units.
    #[arg(long, default_value_t = 0.05)]
    pub offset: f64,

    #[arg(long, default_value = "sqrhw", value_parser = parse_arch)]
    pub arch: ArchitectureKind,
    #[arg(long, default_value_t = 5)]
    pub layers: usize,
    #[arg(long, default_value_t = 50)]
    pub width: usize,
    #[arg(long, default_value_t = 2)]
    pub skip_period: usize,

    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub memory: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub loss_tol: f64,

    /// Fraction of points held out for the reported test loss.
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    /// Histogram epochs, comma separated; `last` is the final epoch.
    #[arg(long, default_value = "100,1000,last")]
    pub snapshots: String,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Train on raw coordinates instead of rescaling into [-1, 1]^3.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Nodes per axis, either `N` or `NX,NY,NZ`.
    #[arg(long, default_value = "64")]
    pub resolution: String,
    #[arg(long, default_value = "obj")]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Report radial error against a sphere about the origin.
    #[arg(long, conflicts_with = "reference")]
    pub sphere_radius: Option<f64>,
    /// Report one-sided Chamfer distance from these points to the mesh.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Also write the sampled field.
    #[arg(long)]
    pub dump_field: bool,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub dir: PathBuf,
}

fn parse_arch(s: &str) -> std::result::Result<ArchitectureKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

fn usage<T>(msg: impl Into<String>) -> std::result::Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn execute(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Synth(a) => cmd_synth(&a).map(|path| println!("wrote {}", path.display())),
        Command::Train(a) => {
            let summary = cmd_train(&a)?;
            println!("termination: {}", termination_name(summary.report.termination));
            println!("epochs: {}", summary.report.epochs);
            println!("final loss: {:e}", summary.report.final_loss);
            if let Some(t) = summary.report.test_loss {
                println!("test loss: {t:e}");
            }
            println!("wall time: {:.3} s", summary.wall_seconds);
            Ok(())
        }
        Command::Reconstruct(a) => {
            let r = cmd_reconstruct(&a)?;
            if r.topology.faces == 0 {
                eprintln!("warning: the zero level set is empty; wrote an empty mesh");
            }
            print!("{}", r.render());
            Ok(())
        }
        Command::Diagnose(a) => {
            print!("{}", diagnose(&a.dir)?.render());
            Ok(())
        }
    }
}

pub fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::GradTol => "grad_tol",
        Termination::LossTol => "loss_tol",
        Termination::MaxEpochs => "max_epochs",
        Termination::LineSearchFail => "line_search_fail",
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> std::result::Result<PathBuf, Failure> {
    if a.n_s == 0 {
        return usage("--ns must be at least 1");
    }
    if !(a.radius > 0.0 && a.radius.is_finite()) {
        return usage(format!("--radius must be positive, got {}", a.radius));
    }
    let ps = match a.shape {
        Shape::Sphere => synth_sphere_with_exterior(a.n_s, a.n_i, a.n_e, a.radius, a.seed)?,
    };
    create_dir(&a.out)?;
    let path = a.out.join(DATASET_FILE);
    write_labeled(&path, &ps)?;
    Ok(path)
}

/// Everything `train` records in `report.json`. Wall-clock time is left out
/// so reruns produce identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub config: NetworkConfig,
    pub lbfgs: LbfgsOptions,
    pub data_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_surface: usize,
    pub n_interior: usize,
    pub n_exterior: usize,
    pub normalization: Normalization,
    pub termination: Termination,
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub test_loss: Option<f64>,
    pub histograms: Vec<String>,
}

pub struct TrainSummary {
    pub report: RunReport,
    pub wall_seconds: f64,
}

pub fn parse_snapshots(s: &str) -> std::result::Result<Vec<Snapshot>, Failure> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let snap = if tok.eq_ignore_ascii_case("last") {
            Snapshot::Last
        } else {
            match tok.parse::<usize>() {
                Ok(e) if e >= 1 => Snapshot::Epoch(e),
                _ => return usage(format!("bad snapshot '{tok}': expected an epoch >= 1 or 'last'")),
            }
        };
        if !out.contains(&snap) {
            out.push(snap);
        }
    }
    Ok(out)
}

fn network_config(a: &TrainArgs) -> std::result::Result<NetworkConfig, Failure> {
    let config = NetworkConfig {
        skip_period: a.skip_period,
        ..NetworkConfig::surface(a.arch, a.layers, a.width, a.init_seed)
    };
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(config)
}

fn validate_train(a: &TrainArgs) -> std::result::Result<(NetworkConfig, TrainOptions), Failure> {
    let config = network_config(a)?;
    if !(0.0..1.0).contains(&a.test_fraction) {
        return usage(format!("--test-fraction must be in [0, 1), got {}", a.test_fraction));
    }
    if a.bins == 0 {
        return usage("--bins must be at least 1");
    }
    if a.dataset.is_some() && (a.format.is_some()) {
        return usage("--format applies to --cloud only");
    }
    if a.cloud.is_some() {
        match a.mode {
            Mode::Centroid if !(a.shrink > 0.0 && a.shrink < 1.0) => {
                return usage(format!("--shrink must be in (0, 1), got {}", a.shrink));
            }
            Mode::Centroid if !(a.expand > 1.0 && a.expand.is_finite()) => {
                return usage(format!("--expand must be > 1, got {}", a.expand));
            }
            Mode::Normal if !(a.offset > 0.0 && a.offset.is_finite()) => {
                return usage(format!("--offset must be > 0, got {}", a.offset));
            }
            _ => {}
        }
    }
    let lbfgs = LbfgsOptions {
        memory: a.memory,
        max_epochs: a.epochs,
        grad_tol: a.grad_tol,
        loss_tol: a.loss_tol,
        ..LbfgsOptions::default()
    };
    lbfgs.validate(config.num_params()).map_err(|e| Failure::Usage(e.to_string()))?;
    let opts = TrainOptions { lbfgs, snapshots: parse_snapshots(&a.snapshots)?, histogram_bins: a.bins };
    Ok((config, opts))
}

fn cloud_format(path: &Path, flag: Option<&str>) -> std::result::Result<PointFormat, Failure> {
    match flag {
        Some(f) => f.parse().map_err(|e: Error| Failure::Usage(e.to_string())),
        None => PointFormat::from_path(path).map_or_else(
            || usage(format!("cannot tell the format of {}; pass --format", path.display())),
            Ok,
        ),
    }
}

/// Loads or samples the labeled points `train` works on, before normalization.
pub fn load_training_points(a: &TrainArgs) -> std::result::Result<PointSet, Failure> {
    if let Some(path) = &a.dataset {
        return Ok(read_labeled(path)?);
    }
    let path = a.cloud.as_ref().expect("clap requires --dataset or --cloud");
    let format = cloud_format(path, a.format.as_deref())?;
    let cloud = load_cloud(path, format)?;
    let normals = cloud.normals.as_deref();
    let (inner, outer) = match a.mode {
        Mode::Centroid => (SampleMode::CentroidScale(a.shrink), SampleMode::CentroidScale(a.expand)),
        Mode::Normal => (SampleMode::NormalOffset(a.offset), SampleMode::NormalOffset(a.offset)),
    };
    let interior = sample_interior(&cloud.points, normals, a.n_i, inner, a.data_seed)?;
    let exterior = sample_exterior(&cloud.points, normals, a.n_e, outer, a.data_seed.wrapping_add(1))?;
    Ok(label_points(&cloud.points, &interior, &exterior)?)
}

pub fn cmd_train(a: &TrainArgs) -> std::result::Result<TrainSummary, Failure> {
    let start = Instant::now();
    let (config, opts) = validate_train(a)?;
    let raw = load_training_points(a)?;
    let all = if a.no_normalize { raw } else { raw.normalized()? };
    let bounds = all
        .bbox()
        .ok_or_else(|| Failure::Runtime(Error::DegenerateCloud("no points".into())))?;
    let (train_set, test_set) = if a.test_fraction > 0.0 {
        let (tr, te) = split_train_test(&all, a.test_fraction, a.data_seed)?;
        (tr, Some(te))
    } else {
        (all.clone(), None)
    };

    let report = train(&config, &train_set, &opts)?;
    let test_loss = match &test_set {
        Some(t) if !t.is_empty() => Some(evaluate_loss(&config, &report.params, t)?),
        _ => None,
    };

    create_dir(&a.out)?;
    let checkpoint = Checkpoint {
        config: config.clone(),
        params: report.params.clone(),
        normalization: all.normalization(),
        bounds,
    };
    checkpoint.save(a.out.join(CHECKPOINT_FILE))?;
    report.log.write_csvs(&a.out)?;
    let run = RunReport {
        version: REPORT_VERSION,
        config,
        lbfgs: opts.lbfgs,
        data_seed: a.data_seed,
        n_train: train_set.len(),
        n_test: test_set.as_ref().map_or(0, PointSet::len),
        n_surface: all.n_surface(),
        n_interior: all.n_interior(),
        n_exterior: all.n_exterior(),
        normalization: all.normalization(),
        termination: report.termination,
        epochs: report.epochs,
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
        test_loss,
        histograms: report.log.histograms.iter().map(|h| h.file_name()).collect(),
    };
    let json = serde_json::to_string_pretty(&run).map_err(Error::from)?;
    fs::write(a.out.join(REPORT_FILE), json + "\n").map_err(Error::from)?;
    Ok(TrainSummary { report: run, wall_seconds: start.elapsed().as_secs_f64() })
}

pub fn parse_resolution(s: &str) -> std::result::Result<[usize; 3], Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("bad resolution '{s}'")))?;
    let res = match nums[..] {
        [n] => [n, n, n],
        [x, y, z] => [x, y, z],
        _ => return usage(format!("resolution '{s}' must be N or NX,NY,NZ")),
    };
    if res.iter().any(|&n| n < 2) {
        return usage(format!("resolution '{s}' needs at least 2 nodes per axis"));
    }
    Ok(res)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructSummary {
    pub mesh_path: PathBuf,
    pub topology: Topology,
    pub metrics: Option<MeshMetrics>,
}

impl ReconstructSummary {
    pub fn render(&self) -> String {
        let t = &self.topology;
        let mut s = String::new();
        let _ = writeln!(s, "mesh: {}", self.mesh_path.display());
        let _ = writeln!(s, "vertices: {}", t.vertices);
        let _ = writeln!(s, "triangles: {}", t.faces);
        let _ = writeln!(s, "watertight: {}", t.is_watertight());
        let _ = writeln!(s, "euler characteristic: {}", t.euler_characteristic());
        if let Some(m) = &self.metrics {
            let _ = writeln!(s, "mean error: {:e}", m.mean_error);
            let _ = writeln!(s, "max error: {:e}", m.max_error);
        }
        s
    }
}

pub fn cmd_reconstruct(a: &ReconstructArgs) -> std::result::Result<ReconstructSummary, Failure> {
    let resolution = parse_resolution(&a.resolution)?;
    let format: MeshFormat = a.format.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    if let Some(r) = a.sphere_radius {
        if !(r > 0.0 && r.is_finite()) {
            return usage(format!("--sphere-radius must be positive, got {r}"));
        }
    }
    let reference = match (&a.reference, a.sphere_radius) {
        (Some(path), _) => {
            let fmt = cloud_format(path, None)?;
            Some(Reference::PointCloud(load_points(path, fmt)?))
        }
        (None, Some(r)) => Some(Reference::SphereRadius(r)),
        (None, None) => None,
    };

    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let bounds = ckpt.bounds.inflated(GRID_MARGIN);
    let field = evaluate_grid(&ckpt.config, &ckpt.params, bounds, resolution)?;
    let mut mesh = marching_cubes(&field, 0.0);
    let norm = ckpt.normalization;
    mesh.map_vertices(|p| norm.invert(p));

    create_dir(&a.out)?;
    if a.dump_field {
        write_field(&field, a.out.join(FIELD_FILE))?;
    }
    let mesh_path = a.out.join(format!("mesh.{}", format.extension()));
    export_mesh(&mesh, &mesh_path, format)?;
    let metrics = match &reference {
        Some(r) if !mesh.is_empty() => Some(mesh_metrics(&mesh, r)?),
        _ => None,
    };
    Ok(ReconstructSummary { mesh_path, topology: topology(&mesh), metrics })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerMedian {
    pub layer: usize,
    pub epoch: usize,
    pub median_abs_gradient: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnosis {
    pub epochs: usize,
    pub final_loss: f64,
    /// Std over mean of the weight norm across the last 10% of epochs.
    pub norm_stability: f64,
    pub medians: Vec<LayerMedian>,
}

impl Diagnosis {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs: {}", self.epochs);
        let _ = writeln!(s, "final loss: {:e}", self.final_loss);
        let _ = writeln!(s, "norm stability: {:e}", self.norm_stability);
        let _ = writeln!(s, "layer,epoch,median_abs_gradient");
        for m in &self.medians {
            let _ = writeln!(s, "{},{},{:e}", m.layer, m.epoch, m.median_abs_gradient);
        }
        s
    }
}

fn read_artifact(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Reads `report.json`, `loss.csv` and every histogram the report lists.
pub fn diagnose(dir: &Path) -> Result<Diagnosis> {
    let report: RunReport = serde_json::from_str(&read_artifact(&dir.join(REPORT_FILE))?)?;
    let records = DiagnosticsLog::parse_loss_csv(&read_artifact(&dir.join(LOSS_FILE))?)?;
    let norms: Vec<f64> = records.iter().map(|r| r.frobenius_norm).collect();
    let mut medians = Vec::new();
    for name in &report.histograms {
        let (layer, epoch) = parse_histogram_name(name)
            .ok_or_else(|| Error::Parse { line: 0, reason: format!("bad histogram name '{name}'") })?;
        let hist = Histogram::from_csv(&read_artifact(&dir.join(name))?)?;
        medians.push(LayerMedian { layer, epoch, median_abs_gradient: hist.abs_median_estimate() });
    }
    medians.sort_by_key(|m| (m.epoch, m.layer));
    Ok(Diagnosis {
        epochs: records.last().map_or(report.epochs, |r| r.epoch),
        final_loss: records.last().map_or(report.final_loss, |r| r.loss),
        norm_stability: norm_stability(&norms),
        medians,
    })
}

fn parse_histogram_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("hist_L")?.strip_suffix(".csv")?;
    let (l, e) = rest.split_once("_E")?;
    let (layer, epoch) = (l.parse().ok()?, e.parse().ok()?);
    (histogram_file_name(layer, epoch) == name).then_some((layer, epoch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_lists() {
        assert_eq!(
            parse_snapshots("100, 1000,last").unwrap(),
            vec![Snapshot::Epoch(100), Snapshot::Epoch(1000), Snapshot::Last]
        );
        assert_eq!(parse_snapshots("").unwrap(), vec![]);
        assert!(parse_snapshots("0").is_err());
        assert!(parse_snapshots("x").is_err());
    }

    #[test]
    fn resolutions() {
        assert_eq!(parse_resolution("64").unwrap(), [64, 64, 64]);
        assert_eq!(parse_resolution("2,3,4").unwrap(), [2, 3, 4]);
        assert!(parse_resolution("1").is_err());
        assert!(parse_resolution("2,3").is_err());
        assert!(parse_resolution("a").is_err());
    }

    #[test]
    fn histogram_names() {
        assert_eq!(parse_histogram_name("hist_L3_E100.csv"), Some((3, 100)));
        assert_eq!(parse_histogram_name("hist_L03_E100.csv"), None);
        assert_eq!(parse_histogram_name("loss.csv"), None);
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["neusurf", "train", "--out", "x"]), 1);
        assert_eq!(run(["neusurf", "bogus"]), 1);
        assert_eq!(run(["neusurf", "--help"]), 0);
        assert_eq!(run(["neusurf", "reconstruct", "--checkpoint", "c", "--out", "o", "--resolution", "1"]), 1);
    }
}

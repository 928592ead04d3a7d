use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ifr_core::eval::{
    ablation_methods, odometry_csv, results_csv, run_benchmark, run_odometry, success_curve_csv,
    summarize_by_method, summary_csv, trajectory_string, Method, NamedMethod, TrialSpec,
};
use ifr_core::io::{read_cloud_file, CloudFormat};
use ifr_core::{
    generate_shape, voxel_downsample, write_cloud, Error, IcpConfig, IfrConfig, PointCloud, PseudoStrategy,
    RegistrationReport, ShapeKind, TruncationParams,
};
use serde_json::json;

const SEED_ENV: &str = "IFR_SEED";

/// Rigid point-cloud registration with pseudo points moved through distance fields.
///
/// Every subcommand also accepts `--config FILE`: `key = value` lines whose
/// keys are long flag names; flags given on the command line win.
#[derive(Parser, Debug)]
#[command(name = "ifr", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Align SOURCE to TARGET and print the 4x4 transform and a JSON summary.
    /// Exit status: 0 converged, 2 not converged, 1 error.
    Register(RegisterArgs),
    /// Run seeded trials on a directory of clouds or on synthetic shapes.
    Benchmark(BenchmarkArgs),
    /// Chain pairwise registrations over the sorted frames of a directory.
    Odometry(OdometryArgs),
    /// Write a synthetic shape.
    Gen(GenArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Profile {
    Synthetic,
    Real,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PseudoArg {
    Uniform,
    Surface,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum MethodArg {
    Ifr,
    Icp,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FormatArg {
    Xyz,
    Ply,
    Kitti,
}

impl From<FormatArg> for CloudFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Xyz => CloudFormat::Xyz,
            FormatArg::Ply => CloudFormat::Ply,
            FormatArg::Kitti => CloudFormat::KittiBin,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// key=value file of default flag values
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct IfrArgs {
    /// Parameter bundle: synthetic (uniform pseudo set, plain least squares,
    /// 10 iterations) or real (surface pseudo set, IRLS, truncation, 20 iterations)
    #[arg(long, value_enum, default_value_t = Profile::Synthetic)]
    profile: Profile,
    /// Pseudo-point generation [default: uniform for synthetic, surface for real]
    #[arg(long, value_enum)]
    pseudo: Option<PseudoArg>,
    /// Number of pseudo points L
    #[arg(long, value_name = "INT", default_value_t = 1000)]
    pseudo_count: usize,
    /// Std of the surface pseudo-point offsets, scene units [default: 10 x median point spacing, clamped to 0.01..0.5]
    #[arg(long, value_name = "REAL")]
    pseudo_sigma: Option<f64>,
    /// Enable truncation [default: off for synthetic, on for real]
    #[arg(long, overrides_with = "no_trunc")]
    trunc: bool,
    /// Disable truncation
    #[arg(long, overrides_with = "trunc")]
    no_trunc: bool,
    /// Truncation: pseudo points allowed per nearest surface point
    #[arg(long, value_name = "INT", default_value_t = 3)]
    trunc_max_per_point: usize,
    /// Truncation: largest angle to the surface normal axis, degrees
    #[arg(long, value_name = "DEG", default_value_t = 30.0)]
    trunc_max_angle: f64,
    /// Repeat truncation at every iteration [default: off for synthetic, on for real]
    #[arg(long, overrides_with = "no_retrunc")]
    retrunc: bool,
    /// Truncate once before iterating
    #[arg(long, overrides_with = "retrunc")]
    no_retrunc: bool,
    /// Solve each step by IRLS (L1) [default: off for synthetic, on for real]
    #[arg(long, overrides_with = "no_irls")]
    irls: bool,
    /// Solve each step by plain least squares
    #[arg(long, overrides_with = "irls")]
    no_irls: bool,
    /// Iteration cap [default: 10 for synthetic, 20 for real]
    #[arg(long, value_name = "INT")]
    max_iters: Option<usize>,
    /// Neighbours averaged by the distance field
    #[arg(long, value_name = "INT", default_value_t = 1)]
    k_smooth: usize,
    /// Random seed; the IFR_SEED environment variable takes precedence
    #[arg(long, value_name = "INT", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct RegisterArgs {
    /// Cloud to move
    source: PathBuf,
    /// Cloud held fixed
    target: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Ifr)]
    method: MethodArg,
    /// ICP: correspondence rejection distance, scene units
    #[arg(long, value_name = "REAL", default_value_t = 1.0)]
    icp_max_dist: f64,
    /// Input format [default: from the file extension]
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[command(flatten)]
    ifr: IfrArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Clone)]
struct BenchmarkArgs {
    /// Directory of clouds (one trial set per file)
    dataset: Option<PathBuf>,
    /// Use generated shapes instead of a dataset directory
    #[arg(long, conflicts_with = "dataset")]
    synthetic: bool,
    /// Synthetic shape
    #[arg(long, value_enum, default_value_t = ShapeArg::Composite)]
    shape: ShapeArg,
    /// Points per synthetic cloud
    #[arg(long, value_name = "INT", default_value_t = 2048)]
    points: usize,
    /// Number of synthetic clouds
    #[arg(long, value_name = "INT", default_value_t = 1)]
    clouds: usize,
    /// Trials per cloud
    #[arg(long, value_name = "INT", default_value_t = 10)]
    trials: usize,
    /// Methods to compare, comma separated
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ifr")]
    method: Vec<MethodArg>,
    /// Run the eight IRLS x truncation x pseudo-strategy variants instead
    #[arg(long)]
    ablation: bool,
    /// Smallest sampled rotation, degrees
    #[arg(long, value_name = "DEG", default_value_t = 0.0)]
    rotation_min: f64,
    /// Largest sampled rotation, degrees
    #[arg(long, value_name = "DEG", default_value_t = 45.0)]
    rotation_max: f64,
    /// Largest sampled translation, scene units
    #[arg(long, value_name = "REAL", default_value_t = 0.8)]
    translation_max: f64,
    /// Gaussian noise std on both clouds, scene units
    #[arg(long, value_name = "REAL", default_value_t = 0.0)]
    noise: f64,
    /// Fraction of source points kept
    #[arg(long, value_name = "FRACTION", default_value_t = 1.0)]
    keep: f64,
    /// Approximate overlap after cropping both clouds
    #[arg(long, value_name = "FRACTION", default_value_t = 1.0)]
    overlap: f64,
    /// Fraction of source points replaced by uniform outliers
    #[arg(long, value_name = "FRACTION", default_value_t = 0.0)]
    outliers: f64,
    /// Success threshold reported in the summary, degrees
    #[arg(long, value_name = "DEG", default_value_t = 5.0)]
    threshold: f64,
    /// ICP: correspondence rejection distance, scene units
    #[arg(long, value_name = "REAL", default_value_t = 1.0)]
    icp_max_dist: f64,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "ifr-out")]
    out: PathBuf,
    /// Worker threads [default: available cores]
    #[arg(long, value_name = "INT")]
    jobs: Option<usize>,
    /// Dataset format [default: from the file extension]
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[command(flatten)]
    ifr: IfrArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeArg {
    Sphere,
    Box,
    Composite,
    #[value(name = "plane_room", alias = "plane-room")]
    PlaneRoom,
}

impl From<ShapeArg> for ShapeKind {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Sphere => ShapeKind::Sphere,
            ShapeArg::Box => ShapeKind::Box,
            ShapeArg::Composite => ShapeKind::Composite,
            ShapeArg::PlaneRoom => ShapeKind::PlaneRoom,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct OdometryArgs {
    /// Directory of frames; sorted file names give the frame order
    sequence: PathBuf,
    /// Voxel size for downsampling each frame, scene units [default: no downsampling]
    #[arg(long, value_name = "REAL")]
    voxel: Option<f64>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "ifr-out")]
    out: PathBuf,
    /// Worker threads [default: available cores]
    #[arg(long, value_name = "INT")]
    jobs: Option<usize>,
    /// Frame format [default: from the file extension]
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[command(flatten)]
    ifr: IfrArgs,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Clone)]
struct GenArgs {
    /// sphere, box, composite or plane_room
    kind: String,
    /// Number of points
    n: usize,
    /// Output file
    out: PathBuf,
    #[arg(long, value_name = "INT", default_value_t = 0)]
    seed: u64,
    /// Output format [default: from the file extension]
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[command(flatten)]
    common: CommonArgs,
}

type CliResult<T> = Result<T, String>;

fn seed_override(flag: u64) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{SEED_ENV}='{v}' is not a non-negative integer")),
        Err(_) => Ok(flag),
    }
}

fn pick(on: bool, off: bool, default: bool) -> bool {
    if on {
        true
    } else if off {
        false
    } else {
        default
    }
}

impl IfrArgs {
    fn to_config(&self) -> CliResult<IfrConfig> {
        let base = match self.profile {
            Profile::Synthetic => IfrConfig::synthetic(),
            Profile::Real => IfrConfig::real(),
        };
        let truncation = pick(self.trunc, self.no_trunc, base.truncation.is_some()).then_some(TruncationParams {
            max_per_surface_point: self.trunc_max_per_point,
            max_angle_deg: self.trunc_max_angle,
        });
        let config = IfrConfig {
            max_iterations: self.max_iters.unwrap_or(base.max_iterations),
            pseudo_count: self.pseudo_count,
            use_irls: pick(self.irls, self.no_irls, base.use_irls),
            pseudo_strategy: match self.pseudo {
                Some(PseudoArg::Uniform) => PseudoStrategy::Uniform,
                Some(PseudoArg::Surface) => PseudoStrategy::SurfaceGaussian,
                None => base.pseudo_strategy,
            },
            pseudo_sigma: self.pseudo_sigma,
            truncation,
            retruncate_each_iteration: pick(self.retrunc, self.no_retrunc, base.retruncate_each_iteration),
            k_smooth: self.k_smooth,
            seed: seed_override(self.seed)?,
            ..base
        };
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }

    fn icp_config(&self, max_dist: f64) -> CliResult<IcpConfig> {
        let base = self.to_config()?;
        let config = IcpConfig {
            max_iterations: base.max_iterations,
            max_correspondence_dist: max_dist,
            ..IcpConfig::default()
        };
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }
}

fn read(path: &Path, format: Option<FormatArg>) -> CliResult<PointCloud> {
    let file = read_cloud_file(path, format.map(Into::into)).map_err(|e| match e {
        Error::EmptyCloud => format!("{}: no finite points", path.display()),
        other => other.to_string(),
    })?;
    if file.rejected > 0 {
        eprintln!(
            "warning: {}: skipped {} rows with non-finite coordinates",
            path.display(),
            file.rejected
        );
    }
    Ok(file.cloud)
}

fn report_json(method: &str, r: &RegistrationReport) -> serde_json::Value {
    json!({
        "method": method,
        "converged": r.converged,
        "iterations": r.iterations_run,
        "residual": r.final_residual(),
        "active_dims": r.active_dims,
        "wall_ms": r.wall_time.as_secs_f64() * 1e3,
    })
}

fn cmd_register(args: &RegisterArgs) -> CliResult<ExitCode> {
    let ifr = args.ifr.to_config()?;
    let icp = args.ifr.icp_config(args.icp_max_dist)?;
    let source = read(&args.source, args.format)?;
    let target = read(&args.target, args.format)?;
    let (label, report) = match args.method {
        MethodArg::Ifr => ("ifr", ifr_core::register(&source.points, &target.points, &ifr)),
        MethodArg::Icp => ("icp", ifr_core::icp_register(&source.points, &target.points, &icp)),
    };
    let report = report.map_err(|e| e.to_string())?;
    print!("{}", report.transform);
    println!("{}", report_json(label, &report));
    Ok(if report.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn init_threads(jobs: Option<usize>) -> CliResult<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err("--jobs must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn list_clouds(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_benchmark(args: &BenchmarkArgs) -> CliResult<ExitCode> {
    let ifr = args.ifr.to_config()?;
    let icp = args.ifr.icp_config(args.icp_max_dist)?;
    let spec = TrialSpec {
        rotation_min_deg: args.rotation_min,
        rotation_max_deg: args.rotation_max,
        translation_max: args.translation_max,
        noise_sigma: args.noise,
        keep_fraction: args.keep,
        overlap_fraction: args.overlap,
        outlier_fraction: args.outliers,
        trials: args.trials,
        seed: ifr.seed,
    };
    spec.validate().map_err(|e| e.to_string())?;
    if args.synthetic == args.dataset.is_some() {
        return Err("give either a dataset directory or --synthetic".into());
    }
    init_threads(args.jobs)?;

    let clouds: Vec<PointCloud> = match &args.dataset {
        Some(dir) => list_clouds(dir)?
            .iter()
            .map(|p| read(p, args.format))
            .collect::<CliResult<_>>()?,
        None => (0..args.clouds)
            .map(|i| {
                generate_shape(args.shape.into(), args.points, ifr.seed.wrapping_add(i as u64))
                    .map_err(|e| e.to_string())
            })
            .collect::<CliResult<_>>()?,
    };
    if clouds.is_empty() {
        return Err("benchmark dataset is empty".into());
    }

    let methods: Vec<NamedMethod> = if args.ablation {
        ablation_methods(&ifr)
    } else {
        let mut seen = Vec::new();
        args.method
            .iter()
            .filter(|m| {
                let fresh = !seen.contains(*m);
                seen.push(**m);
                fresh
            })
            .map(|m| match m {
                MethodArg::Ifr => NamedMethod::new("ifr", Method::Ifr(ifr.clone())),
                MethodArg::Icp => NamedMethod::new("icp", Method::Icp(icp.clone())),
            })
            .collect()
    };

    let results = run_benchmark(&clouds, &spec, &methods).map_err(|e| e.to_string())?;
    let summaries = summarize_by_method(&results).map_err(|e| e.to_string())?;
    fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    write_file(&args.out.join("results.csv"), &results_csv(&results, true))?;
    write_file(&args.out.join("summary.csv"), &summary_csv(&summaries, args.threshold))?;
    write_file(&args.out.join("success_curve.csv"), &success_curve_csv(&summaries))?;
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        eprintln!("warning: {failures} of {} trials failed", results.len());
    }
    print!("{}", summary_csv(&summaries, args.threshold));
    Ok(ExitCode::SUCCESS)
}

fn cmd_odometry(args: &OdometryArgs) -> CliResult<ExitCode> {
    let config = args.ifr.to_config()?;
    if let Some(v) = args.voxel {
        if !(v > 0.0) {
            return Err("--voxel must be positive".into());
        }
    }
    init_threads(args.jobs)?;
    let files = list_clouds(&args.sequence)?;
    if files.len() < 2 {
        return Err(format!(
            "{}: odometry needs at least 2 frames, found {}",
            args.sequence.display(),
            files.len()
        ));
    }
    let frames: Vec<PointCloud> = files
        .iter()
        .map(|p| {
            let c = read(p, args.format)?;
            match args.voxel {
                Some(v) => voxel_downsample(&c, v).map_err(|e| e.to_string()),
                None => Ok(c),
            }
        })
        .collect::<CliResult<_>>()?;
    let odo = run_odometry(&frames, &config).map_err(|e| e.to_string())?;
    for s in odo.steps.iter().filter(|s| s.error.is_some()) {
        eprintln!(
            "warning: frames {} -> {}: {}; using identity",
            s.index + 1,
            s.index,
            s.error.as_deref().unwrap_or_default()
        );
    }
    fs::create_dir_all(&args.out).map_err(|e| format!("{}: {e}", args.out.display()))?;
    write_file(&args.out.join("trajectory.txt"), &trajectory_string(&odo.poses))?;
    write_file(&args.out.join("pairs.csv"), &odometry_csv(&odo.steps))?;
    println!("{} poses written to {}", odo.poses.len(), args.out.join("trajectory.txt").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(args: &GenArgs) -> CliResult<ExitCode> {
    let kind: ShapeKind = args.kind.parse().map_err(|e: Error| e.to_string())?;
    let seed = seed_override(args.seed)?;
    let cloud = generate_shape(kind, args.n, seed).map_err(|e| e.to_string())?;
    write_cloud(&cloud, &args.out, args.format.map(Into::into)).map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}

/// Splices `--key value` pairs from a `--config` file in front of the
/// command-line flags, so explicit flags override them.
fn expand_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let Some(sub) = strs
        .iter()
        .position(|a| ["register", "benchmark", "odometry", "gen"].contains(&a.as_str()))
    else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let mut extra: Vec<OsString> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key = value", n + 1))?;
        let (key, value) = (key.trim().trim_start_matches("--"), value.trim());
        match value {
            "true" => extra.push(format!("--{key}").into()),
            "false" => extra.push(format!("--no-{key}").into()),
            _ => {
                extra.push(format!("--{key}").into());
                extra.push(value.into());
            }
        }
    }
    let mut out = argv;
    out.splice(sub + 1..sub + 1, extra);
    Ok(out)
}

fn run(argv: Vec<OsString>) -> ExitCode {
    let argv = match expand_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Register(a) => cmd_register(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Odometry(a) => cmd_odometry(a),
        Command::Gen(a) => cmd_gen(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    run(std::env::args_os().collect())
}

//! The `evstar` command line. Every command writes its files and a
//! [`RunManifest`] into `--out`; `replay` re-runs a manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::Vector3;

use crate::averaging::{build_graph, chain_relatives, re_orient, read_anchors, solve, write_anchors, Anchor};
use crate::bank::{
    collect_edges, plan_instances, planned_duration, run_bank, write_diagnostics, EdgeSet, Estimator,
    REFERENCE_RESOLUTION_US,
};
use crate::config::Config;
use crate::error::Error;
use crate::events::{chunk_stream, parse_event_stream, write_event_stream, EventChunk, EventStream};
use crate::geom::{CameraIntrinsics, RowMajor};
use crate::hough::{run_chunk, DirectionGrid};
use crate::manifest::{RunManifest, MANIFEST_FILE, VERSION};
use crate::metrics::{benchmark, eval_absolute, eval_relative, write_benchmark_csv, BenchmarkOptions, Method};
use crate::motion::{cm_estimate, render_h_image, variance_contrast, WarpParams};
use crate::sim::{default_camera, generate_events, generate_scene, GroundTruth, MotionProfile, SimParams};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_PIPELINE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "evstar", version = VERSION, about = "Star tracking from event-camera streams")]
pub struct Cli {
    /// `key=value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(short, long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a star field seen by a rotating event camera.
    Simulate(SimulateArgs),
    /// Estimate relative rotations over the multiresolution window bank.
    Track(TrackArgs),
    /// Fuse relative rotations and anchors into absolute attitudes.
    Average(AverageArgs),
    /// Render one window before and after motion compensation.
    Compensate(CompensateArgs),
    /// Time the Hough and contrast-maximization estimators per chunk.
    Benchmark(BenchmarkArgs),
    /// Compare estimates with ground truth.
    Evaluate(EvaluateArgs),
    /// Sample anchor attitudes from ground truth at uniform times.
    Anchors(AnchorsArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    pub stars: usize,
    #[arg(long, default_value_t = 4.0)]
    pub omega_deg_s: f64,
    /// Rotation axis in camera coordinates, `x,y,z`.
    #[arg(long, default_value = "0,0,1")]
    pub axis: String,
    #[arg(long, default_value_t = 1.0)]
    pub duration_s: f64,
    /// Reverse the rotation every this many seconds.
    #[arg(long)]
    pub wobble_period_s: Option<f64>,
    #[arg(long, default_value_t = 36.0)]
    pub fov_deg: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub rate_hz: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise_px: f64,
    #[arg(long, default_value_t = 0.05)]
    pub outlier_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Hough,
    Cm,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Hough)]
    pub method: MethodArg,
}

#[derive(Debug, Args)]
pub struct AverageArgs {
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// Compose the finest edges from the first anchor instead of averaging.
    #[arg(long)]
    pub chained: bool,
}

#[derive(Debug, Args)]
pub struct CompensateArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub alpha_ms: u64,
    #[arg(long, default_value_t = 100)]
    pub beta_ms: u64,
    #[arg(long, value_enum, default_value_t = MethodArg::Hough)]
    pub method: MethodArg,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Chunks per duration, taken back to back from the stream start.
    #[arg(long, default_value_t = 5)]
    pub chunks: usize,
    #[arg(long, value_delimiter = ',', default_value = "100,200,400")]
    pub durations_ms: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub groundtruth: PathBuf,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub attitudes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnchorsArgs {
    #[arg(long)]
    pub groundtruth: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest file, or a directory holding one.
    pub manifest: PathBuf,
}

/// Failure of a command with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::Io(_) => EXIT_USAGE,
            _ => EXIT_PIPELINE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn with_path<T>(path: &Path, r: crate::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut c = CliError::from(e);
        c.message = format!("{}: {}", path.display(), c.message);
        c
    })
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn read_events(path: &Path) -> CliResult<EventStream> {
    with_path(path, parse_event_stream(open(path)?))
}

fn read_intrinsics(path: &Path) -> CliResult<CameraIntrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    with_path(path, CameraIntrinsics::parse(&text))
}

fn read_edges(path: &Path) -> CliResult<EdgeSet> {
    with_path(path, EdgeSet::read_csv(open(path)?))
}

fn read_groundtruth(path: &Path) -> CliResult<GroundTruth> {
    with_path(path, GroundTruth::read_csv(open(path)?))
}

/// Where a command writes, and what it wrote.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
    inputs: Vec<String>,
}

impl Output {
    fn create(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        self.files.push(name.to_string());
        let path = self.dir.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }
}

fn finish<W: Write>(mut w: W) -> CliResult<()> {
    w.flush().map_err(|e| CliError::from(Error::Io(e)))
}

/// Resolved global settings of one run.
struct Run {
    config: Config,
    seed: Option<u64>,
}

fn parse_axis(s: &str) -> CliResult<Vector3<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::usage(format!("bad axis {s:?}")))?;
    if v.len() != 3 {
        return Err(CliError::usage(format!("axis {s:?} needs three components")));
    }
    let a = Vector3::new(v[0], v[1], v[2]);
    if !(a.norm() > 0.0) || !a.norm().is_finite() {
        return Err(CliError::usage("axis must be a non-zero vector"));
    }
    Ok(a.normalize())
}

fn seconds_to_us(s: f64, what: &str) -> CliResult<u64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(CliError::usage(format!("{what} must be positive")));
    }
    Ok((s * 1e6).round() as u64)
}

fn cmd_simulate(a: &SimulateArgs, run: &Run, out: &mut Output) -> CliResult<()> {
    let seed = run.seed.unwrap_or(0);
    let duration_us = seconds_to_us(a.duration_s, "duration")?;
    let params = SimParams {
        duration_us,
        event_rate_per_star_hz: a.rate_hz,
        pixel_noise_sigma: a.noise_px,
        outlier_ratio: a.outlier_ratio,
        dt_us: run.config.dt_us(),
    };
    params.validate()?;
    if !(a.fov_deg > 0.0 && a.fov_deg <= 90.0) {
        return Err(CliError::usage(format!("field of view {} outside (0, 90]", a.fov_deg)));
    }
    let omega = parse_axis(&a.axis)? * a.omega_deg_s.to_radians();
    let profile = match a.wobble_period_s {
        Some(p) => MotionProfile::wobble(omega, seconds_to_us(p, "wobble period")?, duration_us),
        None => MotionProfile::constant(omega, duration_us),
    };
    let (k, sensor) = default_camera();
    let scene = generate_scene(a.stars, a.fov_deg, (1.0, 1.0), k, sensor, seed)?;
    let sim = generate_events(&scene, &profile, &params, seed)?;
    info!(
        "{} events ({} from stars, {} outliers)",
        sim.events.len(),
        sim.n_signal,
        sim.n_outliers
    );

    let mut w = out.create("events.txt")?;
    write_event_stream(&mut w, sensor, &sim.events)?;
    finish(w)?;
    let mut w = out.create("groundtruth.csv")?;
    sim.ground_truth.write_csv(&mut w)?;
    finish(w)?;
    let mut w = out.create("intrinsics.txt")?;
    w.write_all(k.to_text().as_bytes()).map_err(Error::Io)?;
    finish(w)?;
    Ok(())
}

fn cmd_track(a: &TrackArgs, run: &Run, out: &mut Output) -> CliResult<()> {
    out.input(&a.events);
    out.input(&a.intrinsics);
    let k = read_intrinsics(&a.intrinsics)?;
    let stream = read_events(&a.events)?;
    let bank = run.config.bank()?;
    let duration = planned_duration(&stream.events, bank.dt_us);
    let plan = plan_instances(duration, &bank)?;
    let estimator = match a.method {
        MethodArg::Hough => Estimator::Hough,
        MethodArg::Cm => Estimator::ContrastMax(run.config.cm_options()),
    };
    let output = run_bank(&stream.events, &plan, &bank, estimator, k, stream.sensor)?;
    let failed = output.results.iter().filter(|r| r.outcome.is_err()).count();
    info!("{} windows, {failed} failed", output.results.len());

    let mut w = out.create("diagnostics.csv")?;
    write_diagnostics(&output.results, &mut w)?;
    finish(w)?;
    let edges = collect_edges(&output.results, bank.dt_us)?;
    let mut w = out.create("edges.csv")?;
    edges.write_csv(&mut w)?;
    finish(w)?;
    Ok(())
}

fn cmd_average(a: &AverageArgs, run: &Run, out: &mut Output) -> CliResult<()> {
    out.input(&a.edges);
    let edges = read_edges(&a.edges)?;
    let anchors: Vec<Anchor> = match &a.anchors {
        Some(p) => {
            out.input(p);
            with_path(p, read_anchors(open(p)?))?
        }
        None => vec![],
    };
    let solution = if a.chained {
        let first = anchors
            .first()
            .ok_or_else(|| CliError::usage("--chained needs at least one anchor"))?;
        chain_relatives(&edges, first)?
    } else {
        let graph = build_graph(&edges, &anchors, run.config.dt_us(), run.config.anchor_weight)?;
        let start = Instant::now();
        let s = solve(&graph, &run.config.solve_options())?;
        info!(
            "{} nodes, {} iterations, converged {} in {:.3} s",
            s.times.len(),
            s.iterations,
            s.converged,
            start.elapsed().as_secs_f64()
        );
        if !s.converged {
            warn!("solver stopped at max_iters={} before reaching tol", run.config.max_iters);
        }
        re_orient(s)
    };
    let mut w = out.create("attitudes.csv")?;
    solution.write_csv(&mut w)?;
    finish(w)?;
    let mut w = out.create("residuals.csv")?;
    solution.write_residuals(&mut w)?;
    finish(w)?;
    Ok(())
}

fn cmd_compensate(a: &CompensateArgs, run: &Run, out: &mut Output) -> CliResult<()> {
    out.input(&a.events);
    out.input(&a.intrinsics);
    if a.beta_ms <= a.alpha_ms {
        return Err(CliError::usage("beta must follow alpha"));
    }
    let k = read_intrinsics(&a.intrinsics)?;
    let stream = read_events(&a.events)?;
    let (alpha, beta) = (a.alpha_ms * 1000, a.beta_ms * 1000);
    let chunk = chunk_stream(&stream.events, alpha, beta, stream.sensor)?;
    let rotation = match a.method {
        MethodArg::Hough => {
            let factor = chunk.duration_us() as f64 / REFERENCE_RESOLUTION_US as f64;
            let config = run.config.hough.rescaled(factor);
            let grid = Arc::new(DirectionGrid::build(config.subdivision_level));
            run_chunk(&chunk, &k, &config, grid)?.rotation
        }
        MethodArg::Cm => cm_estimate(&chunk, &k, &run.config.cm_options())?.relative.rotation,
    };
    let (sigma, polarity) = (run.config.kernel_sigma, run.config.use_polarity);
    let before = render_h_image(&chunk, &WarpParams::from_rotation_vector(&Vector3::zeros(), alpha, beta), &k, sigma, polarity)?;
    let after = render_h_image(&chunk, &WarpParams::from_rotation(&rotation, alpha, beta), &k, sigma, polarity)?;
    before.write_pgm(&out.path("before.pgm"))?;
    out.files.push("before.pgm.txt".into());
    after.write_pgm(&out.path("after.pgm"))?;
    out.files.push("after.pgm.txt".into());

    let mut w = out.create("compensate.csv")?;
    let io = |e| CliError::from(Error::Io(e));
    writeln!(w, "alpha_us,beta_us,n_events,variance_before,variance_after,r00,r01,r02,r10,r11,r12,r20,r21,r22").map_err(io)?;
    writeln!(
        w,
        "{alpha},{beta},{},{:.9e},{:.9e},{}",
        chunk.events.len(),
        variance_contrast(&before),
        variance_contrast(&after),
        RowMajor(&rotation)
    )
    .map_err(io)?;
    finish(w)?;
    Ok(())
}

fn cmd_benchmark(a: &BenchmarkArgs, run: &Run, out: &mut Output) -> CliResult<()> {
    out.input(&a.events);
    out.input(&a.intrinsics);
    let k = read_intrinsics(&a.intrinsics)?;
    let stream = read_events(&a.events)?;
    let mut chunks: Vec<EventChunk> = Vec::new();
    for d in &a.durations_ms {
        let d = d * 1000;
        if d == 0 {
            return Err(CliError::usage("durations must be positive"));
        }
        for i in 0..a.chunks as u64 {
            let (alpha, beta) = (i * d, (i + 1) * d);
            if beta > stream.duration_us() {
                warn!("stream too short for {} chunks of {} ms", a.chunks, d / 1000);
                break;
            }
            chunks.push(chunk_stream(&stream.events, alpha, beta, stream.sensor)?);
        }
    }
    let opts = BenchmarkOptions {
        hough: run.config.hough,
        cm: run.config.cm_options(),
        ..BenchmarkOptions::default()
    };
    let mut rows = benchmark(Method::Hough, &chunks, &k, &opts)?;
    rows.extend(benchmark(Method::ContrastMax, &chunks, &k, &opts)?);
    let mut w = out.create("benchmark.csv")?;
    write_benchmark_csv(&rows, &mut w)?;
    finish(w)?;
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, _run: &Run, out: &mut Output) -> CliResult<()> {
    out.input(&a.groundtruth);
    if a.edges.is_none() && a.attitudes.is_none() {
        return Err(CliError::usage("nothing to evaluate: pass --edges and/or --attitudes"));
    }
    let gt = read_groundtruth(&a.groundtruth)?;
    let mut summary = String::new();
    if let Some(p) = &a.edges {
        out.input(p);
        let report = eval_relative(&read_edges(p)?, &gt)?;
        let mut w = out.create("relative_errors.csv")?;
        report.write_errors_csv(&mut w)?;
        finish(w)?;
        let mut w = out.create("relative_summary.csv")?;
        report.write_summary_csv(&mut w)?;
        finish(w)?;
        for (r, s) in report.stats().iter().rev() {
            summary.push_str(&format!(
                "relative {} ms: n={} rms={:.6} deg median={:.6} deg max={:.6} deg\n",
                r / 1000,
                s.n,
                s.rms_deg,
                s.median_deg,
                s.max_deg
            ));
        }
    }
    if let Some(p) = &a.attitudes {
        out.input(p);
        let solution = with_path(p, crate::averaging::AttitudeSolution::read_csv(open(p)?))?;
        let report = eval_absolute(&solution, &gt)?;
        let mut w = out.create("absolute_errors.csv")?;
        report.write_csv(&mut w)?;
        finish(w)?;
        summary.push_str(&format!(
            "absolute: n={} rms={:.6} deg median={:.6} deg max={:.6} deg\n",
            report.stats.n, report.stats.rms_deg, report.stats.median_deg, report.stats.max_deg
        ));
    }
    print!("{summary}");
    let mut w = out.create("summary.txt")?;
    w.write_all(summary.as_bytes()).map_err(Error::Io)?;
    finish(w)?;
    Ok(())
}

fn cmd_anchors(a: &AnchorsArgs, _run: &Run, out: &mut Output) -> CliResult<()> {
    out.input(&a.groundtruth);
    let gt = read_groundtruth(&a.groundtruth)?;
    let times = uniform_anchor_times(gt.attitudes.len() as u64 - 1, gt.dt_us, a.count)?;
    let anchors = times
        .iter()
        .map(|t| Ok(Anchor { t_us: *t, rotation: gt.attitude(*t)? }))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut w = out.create("anchors.csv")?;
    write_anchors(&anchors, &mut w)?;
    finish(w)?;
    Ok(())
}

/// `count` grid times spread evenly over `[0, n·dt]`, both ends included.
/// Nodes at even and odd grid indices are linked only through anchors, so
/// when every pick shares one parity an interior pick (the last one, for
/// two picks) moves by one step.
pub fn uniform_anchor_times(n: u64, dt_us: u64, count: usize) -> crate::Result<Vec<u64>> {
    if count == 0 {
        return Err(Error::invalid("anchor count must be positive"));
    }
    if count == 1 {
        return Ok(vec![0]);
    }
    let mut idx: Vec<u64> = (0..count as u64)
        .map(|i| (i as f64 * n as f64 / (count - 1) as f64).round() as u64)
        .collect();
    idx.dedup();
    if idx.len() >= 2 && idx.iter().all(|i| i % 2 == idx[0] % 2) {
        match idx.len() {
            2 => idx[1] -= 1,
            len => idx[len / 2] += 1,
        }
    }
    Ok(idx.into_iter().map(|i| i * dt_us).collect())
}

fn global_flag_arity(arg: &str) -> Option<usize> {
    match arg {
        "--config" | "--seed" | "--out" | "-o" => Some(2),
        _ if arg.starts_with("--config=") || arg.starts_with("--seed=") || arg.starts_with("--out=") => Some(1),
        _ if arg.starts_with("-o") && arg.len() > 2 => Some(1),
        _ => None,
    }
}

/// Subcommand arguments of an argv, with the global flags removed.
fn command_args(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 2;
    while i < argv.len() {
        match global_flag_arity(&argv[i]) {
            Some(n) => i += n,
            None => {
                out.push(argv[i].clone());
                i += 1;
            }
        }
    }
    out
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Track(_) => "track",
        Command::Average(_) => "average",
        Command::Compensate(_) => "compensate",
        Command::Benchmark(_) => "benchmark",
        Command::Evaluate(_) => "evaluate",
        Command::Anchors(_) => "anchors",
        Command::Replay(_) => "replay",
    }
}

fn prepare_out_dir(dir: &Path, command: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
    let existing = dir.join(MANIFEST_FILE);
    if existing.exists() {
        let m = RunManifest::load(&existing).map_err(|e| CliError::usage(format!("{}: {e}", existing.display())))?;
        if m.command != command {
            return Err(CliError::usage(format!(
                "{} already holds the output of `{}`; choose another --out",
                dir.display(),
                m.command
            )));
        }
    }
    Ok(())
}

fn execute(command: &Command, args: Vec<String>, run: Run, out_dir: &Path) -> CliResult<()> {
    let name = command_name(command);
    prepare_out_dir(out_dir, name)?;
    let mut out = Output {
        dir: out_dir.to_path_buf(),
        files: vec![],
        inputs: vec![],
    };
    let start = Instant::now();
    match command {
        Command::Simulate(a) => cmd_simulate(a, &run, &mut out)?,
        Command::Track(a) => cmd_track(a, &run, &mut out)?,
        Command::Average(a) => cmd_average(a, &run, &mut out)?,
        Command::Compensate(a) => cmd_compensate(a, &run, &mut out)?,
        Command::Benchmark(a) => cmd_benchmark(a, &run, &mut out)?,
        Command::Evaluate(a) => cmd_evaluate(a, &run, &mut out)?,
        Command::Anchors(a) => cmd_anchors(a, &run, &mut out)?,
        Command::Replay(_) => unreachable!("replay is resolved before execution"),
    }
    let manifest = RunManifest {
        command: name.to_string(),
        args,
        config: run.config,
        seed: run.seed,
        inputs: out.inputs,
        out_dir: out_dir.display().to_string(),
        outputs: out.files,
        version: VERSION.to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    manifest.write(out_dir)?;
    Ok(())
}

/// Runs the command line `argv` (program name first).
pub fn run(argv: &[String]) -> CliResult<()> {
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
        CliError {
            code,
            message: e
                .render()
                .to_string()
                .trim_start_matches("error: ")
                .to_string(),
        }
    })?;
    let out_dir = cli
        .out
        .clone()
        .ok_or_else(|| CliError::usage("--out is required"))?;

    if let Command::Replay(r) = &cli.command {
        let m = RunManifest::load(&r.manifest)?;
        let mut replay_argv = vec!["evstar".to_string(), m.command.clone()];
        replay_argv.extend(m.args.iter().cloned());
        let inner = Cli::try_parse_from(&replay_argv)
            .map_err(|e| CliError::usage(format!("manifest arguments do not parse: {e}")))?;
        if matches!(inner.command, Command::Replay(_)) {
            return Err(CliError::usage("a manifest cannot replay another replay"));
        }
        let run = Run {
            config: m.config,
            seed: m.seed,
        };
        return execute(&inner.command, m.args, run, &out_dir);
    }

    let config = match &cli.config {
        Some(p) => with_path(p, Config::load(p))?,
        None => Config::default(),
    };
    let run = Run { config, seed: cli.seed };
    execute(&cli.command, command_args(argv), run, &out_dir)
}

/// Entry point of the `evstar` binary.
pub fn main_with_args(argv: &[String]) -> ExitCode {
    match run(argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.code == 0 => {
            print!("{}", e.message);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message.trim_end());
            ExitCode::from(e.code)
        }
    }
}

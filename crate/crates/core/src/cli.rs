//! The `ddi` command-line tool.
//!
//! Every command prints one JSON run report on stdout. Exit codes: 0 success,
//! 1 check failure, 2 usage or shape error, 3 singular system, 4 convergence
//! failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::cg::{SolveStats, StopConfig};
use crate::ddi::{ddi_forward, DdiContext, DEFAULT_ALPHA};
use crate::error::{Error, Result};
use crate::eval::{
    compute_metrics, random_mask_augment, sample_random_points, subsample_rows, synth_scene,
    MetricReport, SceneSpec,
};
use crate::gradcheck::{confidence_vjp_check, gradient_vjp_check, DEFAULT_STEP};
use crate::grid::{
    avg_pool, convex_upsample, finite_difference, masked_avg_pool, DepthMap, Mask, UpsampleWeights,
};
use crate::io;
use crate::par::{self, Exec};
use crate::refine::{run_refinement_with, DampedOracleRefiner, RefinementTrace, RefinerSpec};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "OGNIDC_THREADS";

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_SINGULAR: u8 = 3;
pub const EXIT_CONVERGENCE: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "ddi",
    version,
    about = "Gradient-domain depth integration and depth-completion experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic ground-truth depth map.
    Synth(SynthArgs),
    /// Sample sparse observations from a depth map.
    Sample(SampleArgs),
    /// Finite-difference a depth map into a gradient-field file.
    Gradients(GradientsArgs),
    /// Integrate a gradient field against sparse observations.
    Integrate(IntegrateArgs),
    /// Run the refinement loop against ground truth and report per-step metrics.
    Complete(CompleteArgs),
    /// Check both backward passes against finite differences.
    Gradcheck(GradcheckArgs),
    /// Compare warm- and cold-started refinement.
    Bench(BenchArgs),
    /// Score a prediction against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub height: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub width: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub planes: usize,
    #[arg(long, default_value_t = 3)]
    pub caps: usize,
    #[arg(long, default_value_t = 2)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.6)]
    pub tilt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub min_depth: f64,
    #[arg(long, default_value_t = 10.0)]
    pub max_depth: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep only rows divisible by this (Lidar-line emulation).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub keep_every: u64,
    /// Apply random-drop augmentation with this seed.
    #[arg(long)]
    pub augment_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradientsArgs {
    #[arg(long)]
    pub depth: PathBuf,
    /// Average-pool by this factor (after cropping to a multiple) before differencing.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub factor: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Stop on tolerance or iteration cap only.
    #[arg(long)]
    pub no_stall: bool,
    /// Confidence map (DTEN) on the integration grid.
    #[arg(long)]
    pub confidence: Option<PathBuf>,
}

impl SolverArgs {
    fn context(&self) -> DdiContext<'static> {
        let base = if self.no_stall {
            StopConfig::without_stall(self.tol)
        } else {
            StopConfig::with_tol(self.tol)
        };
        DdiContext {
            alpha: self.alpha,
            stop: StopConfig {
                max_iters: self.max_iters,
                ..base
            },
            ..DdiContext::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct IntegrateArgs {
    #[arg(long)]
    pub gradients: PathBuf,
    #[arg(long)]
    pub obs: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long, default_value = "damped:0.5")]
    pub refiner: RefinerSpec,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
    /// Work at 1/factor resolution (observations masked-pooled, ground truth averaged).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub factor: u64,
    #[arg(long)]
    pub no_warm_start: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Write the per-step metrics report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 6)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
    #[arg(long, default_value_t = 0.3)]
    pub damping: f64,
    #[arg(long, default_value_t = 500)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Validity mask (DTEN, nonzero = valid). Defaults to pixels with positive ground truth.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure of a command: either a library error or a failed check.
#[derive(Debug)]
pub enum CommandError {
    Lib(Error),
    CheckFailed(String),
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        CommandError::Lib(e)
    }
}

impl CommandError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CommandError::CheckFailed(_) => EXIT_CHECK_FAILED,
            CommandError::Lib(Error::SingularSystem) => EXIT_SINGULAR,
            CommandError::Lib(Error::Convergence { .. } | Error::Divergence { .. }) => {
                EXIT_CONVERGENCE
            }
            CommandError::Lib(_) => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct StepReport {
    pub step: usize,
    #[serde(flatten)]
    pub stats: SolveStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
}

/// Machine-readable summary of one invocation.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    /// SHA-256 of every input file, keyed by flag name.
    pub inputs: BTreeMap<String, String>,
    pub params: Value,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<StepReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub result: Value,
    pub durations_ms: BTreeMap<String, f64>,
}

impl RunReport {
    fn new(command: &str, params: Value) -> Self {
        Self {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            params,
            steps: Vec::new(),
            metrics: None,
            result: Value::Null,
            durations_ms: BTreeMap::new(),
        }
    }

    fn read_input(&mut self, name: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Format(format!("cannot read {name} {}: {e}", path.display())))?;
        self.inputs
            .insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(bytes)
    }

    fn time<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.durations_ms
            .insert(label.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("run report is always serializable")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, format!("{text}\n"))?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<RunReport> {
    let spec = SceneSpec {
        height: a.height as usize,
        width: a.width as usize,
        seed: a.seed,
        planes: a.planes,
        caps: a.caps,
        steps: a.steps,
        tilt: a.tilt,
        min_depth: a.min_depth,
        max_depth: a.max_depth,
    };
    let mut report = RunReport::new("synth", json!(spec));
    let depth = report.time("synth", || synth_scene(&spec))?;
    io::write_depth(&a.out, &depth)?;
    let (lo, hi) = depth.min_max();
    report.result = json!({ "out": a.out, "min_depth": lo, "max_depth": hi });
    Ok(report)
}

fn cmd_sample(a: &SampleArgs) -> Result<RunReport> {
    let mut report = RunReport::new(
        "sample",
        json!({ "points": a.points, "seed": a.seed, "keep_every": a.keep_every, "augment_seed": a.augment_seed }),
    );
    let gt = io::depth_from_bytes(&report.read_input("gt", &a.gt)?)?;
    let mut obs = sample_random_points(&gt, a.points, a.seed)?;
    obs = subsample_rows(&obs, a.keep_every as usize)?;
    if let Some(seed) = a.augment_seed {
        obs = random_mask_augment(&obs, seed);
    }
    io::write_observations_file(&a.out, &obs)?;
    report.result = json!({ "out": a.out, "observations": obs.count() });
    Ok(report)
}

fn crop_to_multiple(depth: &DepthMap, factor: usize) -> Result<DepthMap> {
    let (h, w) = (
        depth.height() / factor * factor,
        depth.width() / factor * factor,
    );
    if h == 0 || w == 0 {
        return Err(Error::shape(format!(
            "{}x{} grid is smaller than the pooling factor {factor}",
            depth.height(),
            depth.width()
        )));
    }
    depth.crop(h, w)
}

fn cmd_gradients(a: &GradientsArgs) -> Result<RunReport> {
    let mut report = RunReport::new("gradients", json!({ "factor": a.factor }));
    let depth = io::depth_from_bytes(&report.read_input("depth", &a.depth)?)?;
    let factor = a.factor as usize;
    let depth = if factor > 1 {
        avg_pool(&crop_to_multiple(&depth, factor)?, factor)?
    } else {
        depth
    };
    let g = finite_difference(&depth);
    io::write_gradients(&a.out, &g)?;
    report.result = json!({ "out": a.out, "height": g.height(), "width": g.width() });
    Ok(report)
}

fn read_confidence(
    report: &mut RunReport,
    path: Option<&PathBuf>,
) -> Result<Option<crate::grid::ConfidenceMap>> {
    path.map(|p| {
        report.read_input("confidence", p)?;
        io::read_confidence(p)
    })
    .transpose()
}

fn cmd_integrate(a: &IntegrateArgs) -> Result<RunReport> {
    let ctx = a.solver.context();
    let mut report = RunReport::new(
        "integrate",
        json!({ "alpha": ctx.alpha, "tol": ctx.stop.rel_tol, "max_iters": ctx.stop.max_iters, "stall": !a.solver.no_stall }),
    );
    let g = io::gradients_from_bytes(&report.read_input("gradients", &a.gradients)?)?;
    let obs_bytes = report.read_input("obs", &a.obs)?;
    let obs = io::read_observations(obs_bytes.as_slice(), g.height(), g.width())?;
    let conf = read_confidence(&mut report, a.solver.confidence.as_ref())?;
    let sol = report.time("forward", || ddi_forward(&g, &obs, conf.as_ref(), &ctx))?;
    io::write_depth(&a.out, sol.depth())?;
    report.steps.push(StepReport {
        step: 1,
        stats: sol.forward_stats().clone(),
        metrics: None,
    });
    report.result = json!({ "out": a.out, "observations": obs.count() });
    Ok(report)
}

fn step_reports(trace: &RefinementTrace, gt: &DepthMap, valid: &Mask) -> Result<Vec<StepReport>> {
    std::iter::once((0, &trace.initial))
        .chain(trace.steps.iter().map(|s| (s.step, &s.solution)))
        .map(|(step, sol)| {
            Ok(StepReport {
                step,
                stats: sol.forward_stats().clone(),
                metrics: Some(compute_metrics(sol.depth(), gt, valid)?),
            })
        })
        .collect()
}

fn cmd_complete(a: &CompleteArgs) -> Result<RunReport> {
    let ctx = a.solver.context();
    let factor = a.factor as usize;
    let mut report = RunReport::new(
        "complete",
        json!({
            "refiner": a.refiner.to_string(),
            "iters": a.iters,
            "factor": factor,
            "warm_start": !a.no_warm_start,
            "alpha": ctx.alpha,
            "tol": ctx.stop.rel_tol,
        }),
    );
    let gt_full = io::depth_from_bytes(&report.read_input("gt", &a.gt)?)?;
    let obs_bytes = report.read_input("obs", &a.obs)?;
    let obs_full = io::read_observations(obs_bytes.as_slice(), gt_full.height(), gt_full.width())?;
    let conf = read_confidence(&mut report, a.solver.confidence.as_ref())?;

    let (gt, obs) = if factor > 1 {
        let gt_c = crop_to_multiple(&gt_full, factor)?;
        let obs_c = obs_full.crop(gt_c.height(), gt_c.width())?;
        (avg_pool(&gt_c, factor)?, masked_avg_pool(&obs_c, factor)?)
    } else {
        (gt_full.clone(), obs_full)
    };
    let valid = Mask::positive(&gt);
    let target = finite_difference(&gt);
    let mut refiner = a.refiner.build(&target)?;
    let trace = report.time("refinement", || {
        run_refinement_with(
            &obs,
            conf.as_ref(),
            refiner.as_mut(),
            a.iters as usize,
            &ctx,
            !a.no_warm_start,
        )
    })?;
    report.steps = step_reports(&trace, &gt, &valid)?;
    let last = trace.last().expect("at least one step");
    report.metrics = Some(compute_metrics(last.solution.depth(), &gt, &valid)?);

    let mut result = json!({ "total_cg_iterations": trace.total_iterations() });
    if factor > 1 {
        let weights = UpsampleWeights::uniform(gt.height(), gt.width(), factor)?;
        let up = convex_upsample(last.solution.depth(), &weights)?;
        let gt_c = crop_to_multiple(&gt_full, factor)?;
        result["upsampled_metrics"] = json!(compute_metrics(&up, &gt_c, &Mask::positive(&gt_c))?);
    }
    report.result = result;

    if let Some(out) = &a.out {
        let doc = json!({
            "refiner": a.refiner.to_string(),
            "iters": a.iters,
            "steps": report.steps,
            "final": report.metrics,
            "total_cg_iterations": trace.total_iterations(),
        });
        write_text(out, &doc.to_string())?;
    }
    Ok(report)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> std::result::Result<RunReport, CommandError> {
    let mut report = RunReport::new(
        "gradcheck",
        json!({ "height": a.height, "width": a.width, "seed": a.seed, "threshold": a.threshold, "step": a.step }),
    );
    let (g, c) = report.time("checks", || {
        par::join(
            Exec::default(),
            || gradient_vjp_check(a.seed, a.height, a.width, a.step),
            || confidence_vjp_check(a.seed, a.height, a.width, a.step),
        )
    });
    let (g, c) = (g?, c?);
    let pass = g.max_rel_error < a.threshold && c.max_rel_error < a.threshold;
    report.result = json!({
        "gradient_max_rel_error": g.max_rel_error,
        "confidence_max_rel_error": c.max_rel_error,
        "pass": pass,
    });
    if !pass {
        println!("{}", report.to_json());
        return Err(CommandError::CheckFailed(format!(
            "gradient error {:.3e}, confidence error {:.3e}, threshold {:.3e}",
            g.max_rel_error, c.max_rel_error, a.threshold
        )));
    }
    Ok(report)
}

/// Totals of one warm-vs-cold comparison.
#[derive(Debug, Clone, Serialize)]
pub struct BenchOutcome {
    pub warm_iterations: usize,
    pub cold_iterations: usize,
    pub warm_ms: f64,
    pub cold_ms: f64,
    /// `warm_iterations / cold_iterations`.
    pub ratio: f64,
    pub warm_per_step: Vec<usize>,
    pub cold_per_step: Vec<usize>,
}

/// Damped-oracle refinement on a synthetic scene, run with and without warm starts.
pub fn warm_start_bench(
    spec: &SceneSpec,
    points: usize,
    sample_seed: u64,
    steps: usize,
    damping: f64,
    ctx: &DdiContext<'_>,
) -> Result<BenchOutcome> {
    let gt = synth_scene(spec)?;
    let obs = sample_random_points(&gt, points, sample_seed)?;
    let target = finite_difference(&gt);
    let run = |warm: bool| -> Result<(RefinementTrace, f64)> {
        let mut refiner = DampedOracleRefiner::new(target.clone(), damping)?;
        let start = Instant::now();
        let trace = run_refinement_with(&obs, None, &mut refiner, steps, ctx, warm)?;
        Ok((trace, start.elapsed().as_secs_f64() * 1e3))
    };
    let (warm, cold) = par::join(Exec::default(), || run(true), || run(false));
    let ((warm, warm_ms), (cold, cold_ms)) = (warm?, cold?);
    let per_step = |t: &RefinementTrace| {
        t.steps
            .iter()
            .map(|s| s.solution.forward_stats().iterations)
            .collect()
    };
    let (wi, ci) = (warm.total_iterations(), cold.total_iterations());
    Ok(BenchOutcome {
        warm_iterations: wi,
        cold_iterations: ci,
        warm_ms,
        cold_ms,
        ratio: if ci == 0 { 1.0 } else { wi as f64 / ci as f64 },
        warm_per_step: per_step(&warm),
        cold_per_step: per_step(&cold),
    })
}

fn cmd_bench(a: &BenchArgs) -> Result<RunReport> {
    let spec = SceneSpec::sized(a.height, a.width, a.seed);
    let ctx = DdiContext {
        alpha: a.alpha,
        stop: StopConfig::with_tol(a.tol),
        ..DdiContext::default()
    };
    let mut report = RunReport::new(
        "bench",
        json!({
            "scene": spec, "points": a.points, "iters": a.iters, "damping": a.damping,
            "alpha": a.alpha, "tol": a.tol,
        }),
    );
    let outcome = report.time("total", || {
        warm_start_bench(&spec, a.points, a.seed, a.iters as usize, a.damping, &ctx)
    })?;
    report.durations_ms.insert("warm".into(), outcome.warm_ms);
    report.durations_ms.insert("cold".into(), outcome.cold_ms);
    report.result = json!(outcome);
    if let Some(out) = &a.out {
        write_text(out, &report.to_json())?;
    }
    Ok(report)
}

fn cmd_eval(a: &EvalArgs) -> Result<RunReport> {
    let mut report = RunReport::new("eval", json!({ "mask": a.mask.is_some() }));
    let pred = io::depth_from_bytes(&report.read_input("pred", &a.pred)?)?;
    let gt = io::depth_from_bytes(&report.read_input("gt", &a.gt)?)?;
    let valid = match &a.mask {
        Some(p) => {
            let m = io::depth_from_bytes(&report.read_input("mask", p)?)?;
            Mask::new(
                m.height(),
                m.width(),
                m.values().iter().map(|&v| v != 0.0).collect(),
            )?
        }
        None => Mask::positive(&gt),
    };
    let metrics = compute_metrics(&pred, &gt, &valid)?;
    if let Some(out) = &a.out {
        write_text(out, &metrics.to_json())?;
    }
    report.metrics = Some(metrics);
    Ok(report)
}

pub fn run(cli: &Cli) -> std::result::Result<RunReport, CommandError> {
    Ok(match &cli.command {
        Command::Synth(a) => cmd_synth(a)?,
        Command::Sample(a) => cmd_sample(a)?,
        Command::Gradients(a) => cmd_gradients(a)?,
        Command::Integrate(a) => cmd_integrate(a)?,
        Command::Complete(a) => cmd_complete(a)?,
        Command::Gradcheck(a) => cmd_gradcheck(a)?,
        Command::Bench(a) => cmd_bench(a)?,
        Command::Eval(a) => cmd_eval(a)?,
    })
}

#[cfg(feature = "parallel")]
fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            // fails only if a global pool already exists; keep that one
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads() {}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(&cli) {
        Ok(report) => {
            println!("{}", report.to_json());
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                CommandError::Lib(err) => eprintln!("error: {err}"),
                CommandError::CheckFailed(msg) => eprintln!("check failed: {msg}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}

//! `kinirl` command line: dataset generation, training, planning, evaluation
//! and the stage benchmark.
//!
//! Exit codes: 0 success, 1 usage, 2 data/format/io, 3 numeric.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kinirl_core::io_formats::{
    export_pgm_auto, load_config, read_dataset, read_grid, read_model, write_csv, write_csv_rows, write_dataset, write_model,
    write_report, write_traj_file, EvalRow, RunConfig,
};
use kinirl_core::irl_trainer::train_with;
use kinirl_core::planner_eval::{default_horizon, evaluate_rollouts, greedy_plan, sample_trajectory};
use kinirl_core::reward_net::{fcn_forward, init_params};
use kinirl_core::scene_synth::make_samples;
use kinirl_core::soft_vi::soft_value_iteration;
use kinirl_core::stage_timing::{time_stages, BenchSpec, Engine};
use kinirl_core::{Behavior, Error, GoalSpec, GridShape, SceneMap, TransitionKernelSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable capping worker threads; `0` or unset means automatic.
pub const THREADS_ENV: &str = "KINIRL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "kinirl", version, about = "Maximum-entropy deep IRL on kinematic grid maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of scenes and demonstrations.
    Gen(GenArgs),
    /// Train a cost network on a dataset.
    Train(TrainArgs),
    /// Plan a route on one scene with a trained model.
    Plan(PlanArgs),
    /// Hausdorff distance of sampled rollouts against every demo in a dataset.
    Eval(EvalArgs),
    /// Time the RL and Svf stages of one engine.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_parser = parse_behavior)]
    pub behavior: Behavior,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key = value run config; missing keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (overrides `data_dir` in the config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Start from this model instead of a fresh initialisation.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// Start pose as `row,col,heading`.
    #[arg(long, value_parser = parse_start)]
    pub start: (usize, usize, usize),
    /// Goal cell as `row,col`.
    #[arg(long, value_parser = parse_goal)]
    pub goal: (usize, usize),
    /// Trajectory CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Cost map image; defaults to the trajectory path with a `.pgm` extension.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sample from the policy with this seed instead of following its argmax.
    #[arg(long)]
    pub sample_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Per-rollout CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rollouts per sample (overrides `rollouts` in the config).
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pub size: usize,
    #[arg(long, default_value_t = 8)]
    pub orients: usize,
    #[arg(long, default_value_t = 6)]
    pub actions: usize,
    #[arg(long, default_value_t = 150)]
    pub iters: usize,
    #[arg(long, default_value_t = 120)]
    pub svf_iters: usize,
    #[arg(long, default_value = "conv", value_parser = parse_engine)]
    pub engine: Engine,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_behavior(s: &str) -> Result<Behavior, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_engine(s: &str) -> Result<Engine, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_list<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("`{s}`: {e}"))?;
    parts
        .try_into()
        .map_err(|_| format!("`{s}`: expected {N} comma-separated integers"))
}

fn parse_start(s: &str) -> Result<(usize, usize, usize), String> {
    let [r, c, k] = parse_list::<3>(s)?;
    Ok((r, c, k))
}

fn parse_goal(s: &str) -> Result<(usize, usize), String> {
    let [r, c] = parse_list::<2>(s)?;
    Ok((r, c))
}

/// Exit code for an engine error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Messages go to `out` and errors to `err`.
pub fn run_command<I, T>(argv: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{text}");
                EXIT_OK
            } else {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            };
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(cli.command, out)) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Engine(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, String> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())
}

enum Failure {
    Usage(String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

type Outcome = Result<(), Failure>;

fn dispatch(cmd: Command, out: &mut dyn Write) -> Outcome {
    match cmd {
        Command::Gen(a) => gen(a, out),
        Command::Train(a) => train(a, out),
        Command::Plan(a) => plan(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Bench(a) => bench(a, out),
    }
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments) -> Outcome {
    writeln!(out, "{msg}").map_err(|e| Failure::Engine(e.into()))
}

fn config_or_default(path: Option<&Path>) -> Result<RunConfig, Error> {
    path.map_or_else(|| Ok(RunConfig::default()), load_config)
}

fn gen(a: GenArgs, out: &mut dyn Write) -> Outcome {
    if a.count == 0 {
        return Err(Failure::Usage("--count must be at least 1".into()));
    }
    let samples = make_samples(a.behavior, a.count, a.seed, a.size)?;
    write_dataset(&a.out, &samples)?;
    say(
        out,
        format_args!("wrote {} {} samples ({}x{}) to {}", a.count, a.behavior, a.size, a.size, a.out.display()),
    )
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Outcome {
    let cfg = config_or_default(a.config.as_deref())?;
    let data = a
        .data
        .or(cfg.data_dir.clone())
        .ok_or_else(|| Failure::Usage("train needs --data (or data_dir in the config)".into()))?;
    let out_dir = a
        .out
        .or(cfg.out_dir.clone())
        .ok_or_else(|| Failure::Usage("train needs --out (or out_dir in the config)".into()))?;
    cfg.train.validate()?;
    let kernels = TransitionKernelSet::standard(cfg.train.gamma)?;
    let dataset: Vec<_> = read_dataset(&data, &kernels)?.into_iter().map(|(d, _)| d).collect();
    let params = match &a.init {
        Some(p) => read_model(p)?,
        None => init_params(cfg.train.seed),
    };

    fs::create_dir_all(&out_dir).map_err(Error::from)?;
    let every = cfg.checkpoint_every;
    let (params, report) = train_with(&cfg.train, &dataset, params, |it, p, _| {
        if every > 0 && it % every == 0 {
            write_model(&out_dir.join(format!("model_{it:04}.fcn")), p)?;
        }
        Ok(())
    })?;
    write_model(&out_dir.join("model_final.fcn"), &params)?;
    write_report(&out_dir.join("report.csv"), &report)?;
    let last = report.rows.last().copied();
    say(
        out,
        format_args!(
            "trained {} iterations on {} samples; final l1 gap {:.4}, nll {:.4}",
            report.len(),
            dataset.len(),
            last.map_or(f64::NAN, |r| r.l1_svf_gap),
            last.map_or(f64::NAN, |r| r.mean_nll)
        ),
    )
}

fn plan(a: PlanArgs, out: &mut dyn Write) -> Outcome {
    let cfg = config_or_default(a.config.as_deref())?;
    let params = read_model(&a.model)?;
    let scene = SceneMap::from_grid(&read_grid(&a.scene)?, cfg.resolution)?;
    let shape: GridShape = scene.shape();
    let (r, c, k) = a.start;
    if !shape.contains((r, c)) {
        return Err(Failure::Usage(format!("start ({r},{c}) is outside the {}x{} scene", shape.rows, shape.cols)));
    }
    let goal = GoalSpec::within(a.goal, &shape).map_err(|e| Failure::Usage(e.to_string()))?;
    let kernels = TransitionKernelSet::standard(cfg.train.gamma)?;
    if k >= kernels.num_orientations() {
        return Err(Failure::Usage(format!("heading {k} is out of range")));
    }
    let (cost, _) = fcn_forward(&params, &scene)?;
    let (_, policy) = soft_value_iteration(&cost.reward(), &kernels, goal, cfg.train.value_iters)?;
    let horizon = default_horizon(&shape);
    let traj = match a.sample_seed {
        Some(seed) => sample_trajectory(&policy, &kernels, ((r, c), k), goal, horizon, seed)?,
        None => greedy_plan(&policy, &kernels, ((r, c), k), goal, horizon)?,
    };
    write_traj_file(&a.out, &traj)?;
    let pgm = a.pgm.unwrap_or_else(|| a.out.with_extension("pgm"));
    export_pgm_auto(cost.plane(), &pgm)?;
    say(
        out,
        format_args!(
            "{} steps, reaches goal: {}; wrote {} and {}",
            traj.steps(),
            traj.reaches(goal),
            a.out.display(),
            pgm.display()
        ),
    )
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Outcome {
    let cfg = config_or_default(a.config.as_deref())?;
    let n = a.rollouts.unwrap_or(cfg.rollouts);
    if n == 0 {
        return Err(Failure::Usage("--rollouts must be at least 1".into()));
    }
    let params = read_model(&a.model)?;
    let kernels = TransitionKernelSet::standard(cfg.train.gamma)?;
    let dataset = read_dataset(&a.data, &kernels)?;
    let mut rows = Vec::new();
    for (k, (demo, _)) in dataset.iter().enumerate() {
        let (cost, _) = fcn_forward(&params, &demo.scene)?;
        let reward = cost.reward();
        let (_, policy) = soft_value_iteration(&reward, &kernels, demo.goal, cfg.train.value_iters)?;
        let horizon = default_horizon(&demo.scene.shape());
        let seed = a.seed.wrapping_add((k as u64).wrapping_mul(n as u64));
        for e in evaluate_rollouts(&policy, &kernels, demo, &reward, n, horizon, seed)? {
            rows.push(EvalRow {
                sample: k,
                rollout: e.rollout,
                hd_m: e.hd_m,
                hd_cells: e.hd_cells,
                completed: e.completed,
                reward: e.reward,
            });
        }
    }
    write_csv_rows(&a.out, &rows)?;
    let total = rows.len() as f64;
    let mean_hd = rows.iter().map(|r| r.hd_m).sum::<f64>() / total;
    let done = rows.iter().filter(|r| r.completed).count() as f64 / total;
    say(
        out,
        format_args!(
            "samples {}  rollouts/sample {}  mean HD {:.4} m  completed {:.1}%",
            dataset.len(),
            n,
            mean_hd,
            100.0 * done
        ),
    )
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Outcome {
    let spec = BenchSpec {
        size: a.size,
        orientations: a.orients,
        actions: a.actions,
        iterations: a.iters,
        svf_steps: a.svf_iters,
        seed: a.seed,
    };
    let rows = time_stages(&spec, a.engine)?.rows(a.engine, &spec);
    match &a.out {
        Some(path) => {
            write_csv_rows(path, &rows)?;
            for r in &rows {
                say(out, format_args!("{} {} {:.4} s", r.engine, r.stage, r.seconds))?;
            }
            Ok(())
        }
        None => {
            let mut w = Vec::new();
            write_csv(&mut w, &rows)?;
            out.write_all(&w).map_err(|e| Failure::Engine(e.into()))
        }
    }
}

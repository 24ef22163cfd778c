//! `neuralfmu` command line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use neuralfmu::data::{
    evaluate, evaluate_solution, load_cycle, load_measurements, synthesize_measurements,
    write_comparison_csv, write_measurements, PretrainMode, RunConfig, CONSUMPTION,
};
use neuralfmu::hybrid_ode::{BouncingBall, DriveCycle, HybridModel, Vldm};
use neuralfmu::neural::{read_checkpoint, write_checkpoint};
use neuralfmu::neuralfmu::{vldm_topology, AugmentedModel, TopologyBuilder};
use neuralfmu::solver::{read_solution_csv, solve, write_solution_csv, SolverOptions};
use neuralfmu::training::{
    ccpt_pretrain, nipt_pretrain, train, BatchMode, PretrainOptions, StepSchedule, TargetSeries, TrainConfig,
};

#[derive(Parser)]
#[command(name = "neuralfmu", version, about = "Hybrid ODE models with trainable neural augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelName {
    #[value(name = "bouncing-ball")]
    BouncingBall,
    #[value(name = "vldm-lite-baseline")]
    VldmBaseline,
    #[value(name = "vldm-lite-truth")]
    VldmTruth,
}

#[derive(Clone, Copy, ValueEnum)]
enum PretrainArg {
    Nipt,
    Ccpt,
    None,
}

impl From<PretrainArg> for PretrainMode {
    fn from(p: PretrainArg) -> Self {
        match p {
            PretrainArg::Nipt => PretrainMode::Nipt,
            PretrainArg::Ccpt => PretrainMode::Ccpt,
            PretrainArg::None => PretrainMode::None,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a model and write the solution CSV.
    Simulate {
        #[arg(long, value_enum)]
        model: ModelName,
        #[arg(long)]
        cycle: Option<PathBuf>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Network checkpoint to augment the model with.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pre-train the network of a run configuration.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        pretrain: Option<PretrainArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the network of a run configuration against measurements.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        pretrain: Option<PretrainArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare a solution CSV with measurements.
    Evaluate {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write prediction, data mean and the ±2 std band.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize noisy consumption measurements from a model.
    MakeData {
        #[arg(long, value_enum, default_value = "vldm-lite-truth")]
        model: ModelName,
        #[arg(long)]
        cycle: PathBuf,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        runs: usize,
        /// Noise standard deviation [Ws]; default 0.3 % of final consumption.
        #[arg(long)]
        noise: Option<f64>,
    },
}

fn parse_model(name: &str) -> Result<ModelName> {
    ModelName::from_str(name, false).map_err(|_| {
        anyhow::anyhow!("unknown model `{name}` (bouncing-ball, vldm-lite-baseline, vldm-lite-truth)")
    })
}

fn build_model(name: ModelName, cycle: Option<&Path>) -> Result<(Box<dyn HybridModel>, Option<f64>)> {
    let load = || -> Result<Arc<DriveCycle>> {
        let path = cycle.context("this model needs --cycle")?;
        Ok(Arc::new(load_cycle(path)?))
    };
    Ok(match name {
        ModelName::BouncingBall => (Box::new(BouncingBall::default()), None),
        ModelName::VldmBaseline => {
            let c = load()?;
            let d = c.duration();
            (Box::new(Vldm::baseline(c)), Some(d))
        }
        ModelName::VldmTruth => {
            let c = load()?;
            let d = c.duration();
            (Box::new(Vldm::ground_truth(c)), Some(d))
        }
    })
}

/// Derivative subset and mapped channels used for each model.
fn channels(name: ModelName) -> (Vec<usize>, Vec<usize>) {
    match name {
        ModelName::BouncingBall => (vec![0, 1], vec![1]),
        _ => (vec![3, 4, 5], vec![4]),
    }
}

fn augment(name: ModelName, base: Box<dyn HybridModel>, checkpoint: &Path) -> Result<AugmentedModel> {
    let (spec, params) =
        read_checkpoint(checkpoint).with_context(|| format!("reading checkpoint {}", checkpoint.display()))?;
    let (subset, map) = channels(name);
    Ok(AugmentedModel::new(base, subset, map, spec, params)?)
}

fn simulate(
    model: ModelName,
    cycle: Option<PathBuf>,
    t_end: Option<f64>,
    out: PathBuf,
    checkpoint: Option<PathBuf>,
) -> Result<()> {
    let (base, duration) = build_model(model, cycle.as_deref())?;
    let t_end = t_end.or(duration).unwrap_or(3.0);
    let opts = SolverOptions::default();
    let sol = match checkpoint {
        Some(ckpt) => {
            let am = augment(model, base, &ckpt)?;
            solve(&am, &am.initial_state(0.0), t_end, &opts)?.solution
        }
        None => solve(base.as_ref(), &base.initial_state(0.0), t_end, &opts)?.solution,
    };
    write_solution_csv(&out, &sol)?;
    println!(
        "wrote {} rows to {} (steps={}, events={})",
        sol.len(),
        out.display(),
        sol.stats.accepted_steps,
        sol.stats.triggered_events()
    );
    Ok(())
}

struct Run {
    cfg: RunConfig,
    model: ModelName,
    am: AugmentedModel,
    t_end: f64,
    opts: SolverOptions,
}

fn prepare(config: &Path, seed: Option<u64>, pretrain: Option<PretrainArg>) -> Result<Run> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = pretrain {
        cfg.pretrain = p.into();
    }
    let model = parse_model(&cfg.model)?;
    let (base, duration) = build_model(model, Some(&cfg.cycle))?;
    let t_end = cfg.t_end.or(duration).context("config needs t_end for this model")?;
    let opts = SolverOptions {
        rel_tol: cfg.rel_tol,
        abs_tol: cfg.abs_tol,
        ..Default::default()
    };
    let am = match &cfg.init_checkpoint {
        Some(path) => augment(model, base, path)?,
        None => {
            let mut am = match model {
                ModelName::BouncingBall => {
                    let (s, m) = channels(model);
                    TopologyBuilder::new(s, m).hidden(&[cfg.hidden]).seed(cfg.seed).build(base)?
                }
                _ if cfg.hidden == 32 => vldm_topology(base, cfg.seed)?,
                _ => {
                    let (s, m) = channels(model);
                    TopologyBuilder::new(s, m).hidden(&[cfg.hidden]).seed(cfg.seed).build(base)?
                }
            };
            let reference = solve(am.base(), &am.base().initial_state(0.0), t_end, &opts)?.solution;
            let xdot = am.base_derivative_samples(&reference);
            am.init_processing(&xdot)?;
            am
        }
    };
    Ok(Run {
        cfg,
        model,
        am,
        t_end,
        opts,
    })
}

fn run_pretrain(run: &mut Run) -> Result<()> {
    let reference = solve(run.am.base(), &run.am.base().initial_state(0.0), run.t_end, &run.opts)?.solution;
    let opts = PretrainOptions::default();
    let report = match run.cfg.pretrain {
        PretrainMode::None => return Ok(()),
        PretrainMode::Nipt => nipt_pretrain(&mut run.am, &reference, &opts)?,
        PretrainMode::Ccpt => {
            // the only full state trajectory at hand is the reference run
            let objective = match run.model {
                ModelName::BouncingBall => 1,
                _ => CONSUMPTION,
            };
            ccpt_pretrain(
                &mut run.am,
                &reference.times,
                &reference.states,
                None,
                &[objective],
                &opts,
            )?
        }
    };
    println!(
        "pretrain loss {:e} -> {:e} ({} iterations)",
        report.initial_loss,
        report.final_loss,
        report.iterations()
    );
    Ok(())
}

fn pretrain_cmd(config: PathBuf, pretrain: Option<PretrainArg>, seed: Option<u64>, ckpt: Option<PathBuf>) -> Result<()> {
    let mut run = prepare(&config, seed, pretrain)?;
    if run.cfg.pretrain == PretrainMode::None {
        bail!("no pre-training selected (use --pretrain nipt|ccpt or `pretrain =` in the config)");
    }
    run_pretrain(&mut run)?;
    let out = ckpt.unwrap_or_else(|| run.cfg.checkpoint.clone());
    write_checkpoint(&out, run.am.spec(), run.am.params())?;
    println!("wrote checkpoint {}", out.display());
    Ok(())
}

fn train_cmd(config: PathBuf, pretrain: Option<PretrainArg>, seed: Option<u64>, ckpt: Option<PathBuf>) -> Result<()> {
    let mut run = prepare(&config, seed, pretrain)?;
    run_pretrain(&mut run)?;
    let data = load_measurements(&run.cfg.data)?;
    let target = TargetSeries::new(data.times.clone(), data.mean.clone())?.window(0.0, run.t_end, true);
    let tc = TrainConfig {
        loss_channel: CONSUMPTION,
        batch_element_length: run.cfg.batch_element_length,
        epochs: run.cfg.epochs,
        max_steps: run.cfg.max_steps,
        schedule: StepSchedule {
            initial: run.cfg.step_initial,
            multiplier: run.cfg.step_multiplier,
            floor: run.cfg.step_floor,
        },
        seed: run.cfg.seed,
        batching: if run.cfg.snapshot_batching {
            BatchMode::Snapshot
        } else {
            BatchMode::Sequential
        },
        freeze_gates: run.cfg.freeze_gates,
        solver: run.opts.clone(),
    };
    let start = run.am.initial_state(0.0);
    let outcome = train(&mut run.am, &start, run.t_end, &target, &tc)?;
    outcome.history.write_csv(&run.cfg.history)?;
    let out = ckpt.unwrap_or_else(|| run.cfg.checkpoint.clone());
    write_checkpoint(&out, run.am.spec(), run.am.params())?;
    let sol = solve(&run.am, &start, run.t_end, &run.opts)?.solution;
    let report = evaluate_solution(&sol, &data)?;
    info!("training finished after {} steps", outcome.history.rows.len());
    println!("steps={}", outcome.history.rows.len());
    println!("history={}", run.cfg.history.display());
    println!("checkpoint={}", out.display());
    println!("{report}");
    Ok(())
}

fn evaluate_cmd(solution: PathBuf, data_path: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let sol = read_solution_csv(&solution)?;
    if sol.states.first().map_or(0, Vec::len) <= CONSUMPTION {
        bail!("{}: solution has no consumption column x6", solution.display());
    }
    let data = load_measurements(&data_path)?;
    let report = evaluate(&sol, &data)?;
    println!("{report}");
    if let Some(path) = out {
        write_comparison_csv(&path, &sol, &data)?;
    }
    Ok(())
}

fn make_data_cmd(
    model: ModelName,
    cycle: PathBuf,
    t_end: Option<f64>,
    out: PathBuf,
    seed: u64,
    runs: usize,
    noise: Option<f64>,
) -> Result<()> {
    if model == ModelName::BouncingBall {
        bail!("make-data needs a vehicle model (vldm-lite-truth or vldm-lite-baseline)");
    }
    let (m, duration) = build_model(model, Some(&cycle))?;
    let t_end = t_end.or(duration).unwrap_or(0.0);
    let set = synthesize_measurements(m.as_ref(), t_end, runs, noise, seed, &SolverOptions::default())?;
    write_measurements(&out, &set)?;
    println!("wrote {} runs x {} samples to {}", set.n_runs(), set.times.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            model,
            cycle,
            t_end,
            out,
            checkpoint,
        } => simulate(model, cycle, t_end, out, checkpoint),
        Command::Pretrain {
            config,
            pretrain,
            seed,
            checkpoint,
        } => pretrain_cmd(config, pretrain, seed, checkpoint),
        Command::Train {
            config,
            pretrain,
            seed,
            checkpoint,
        } => train_cmd(config, pretrain, seed, checkpoint),
        Command::Evaluate { solution, data, out } => evaluate_cmd(solution, data, out),
        Command::MakeData {
            model,
            cycle,
            t_end,
            out,
            seed,
            runs,
            noise,
        } => make_data_cmd(model, cycle, t_end, out, seed, runs, noise),
    }
}

/// Error chain on one line, skipping causes already spelled out by their
/// parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if parts.last().is_some_and(|prev| prev.contains(&msg)) {
            continue;
        }
        parts.push(msg);
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", first);
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}

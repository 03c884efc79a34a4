//! Command-line entry point wiring dataset generation, training,
//! perturbation evaluation, property verification, and parameter sweeps.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 runtime numerical
//! abort (divergence guard), 4 verification violations.

mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use droco_core::data::{generate_dataset, subsample, Domain, OfflineDataset};
use droco_core::eval::{
    robustness_curve, EvalMode, Level, PerturbationSpec,
};
use droco_core::grid::{build_pair, GridAction, Rotation, Shift};
use droco_core::mdp::{FiniteMdp, TabularV};
use droco_core::operators::{rcb_ensemble_targets, SupportMask};
use droco_core::seeding::stream_seed;
use droco_core::train::{
    td_target, train, train_baseline_merged, value_penalty, DrocoConfig, TrainState,
};
use droco_core::verify;

use config::{config_hash, parse_action, parse_rotation, parse_shift, RunConfig};

#[derive(Parser)]
#[command(
    name = "droco",
    about = "Finite-MDP laboratory for dual-robust cross-domain offline RL",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a source/target MDP pair and offline datasets.
    GenData(GenDataArgs),
    /// Train the robust learner (or the merged baseline) from a config.
    Train(TrainArgs),
    /// Evaluate a checkpoint under dynamics perturbations.
    Eval(EvalArgs),
    /// Run the property checkers.
    Verify(VerifyArgs),
    /// Sweep beta/delta/fraction grids, training and evaluating per point.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Source-domain dynamics shift: none | kinematic | morph.
    #[arg(long, default_value = "kinematic")]
    shift: String,
    /// Behavior quality: medium | expert | medium_replay | medium_expert.
    #[arg(long, default_value = "medium_replay")]
    quality: String,
    /// Records in the source dataset (target uses --n-tar, default same).
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long)]
    n_tar: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    jam_prob: f64,
    #[arg(long, default_value = "up")]
    jam_action: String,
    #[arg(long, default_value = "quarter")]
    rotation: String,
    #[arg(long, default_value_t = 0.3)]
    mix_weight: f64,
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    height: usize,
    #[arg(long, default_value_t = 0.15)]
    slip: f64,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 40)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (defaults to $DROCO_OUT_DIR or ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train the merged-data baseline instead of the robust learner.
    #[arg(long)]
    baseline: bool,
    /// Override the configured step count.
    #[arg(long)]
    steps: Option<usize>,
    /// Override the configured penalty coefficient.
    #[arg(long)]
    beta: Option<f64>,
    /// After training, assert that the beta = 1 penalized target equals
    /// the ensemble robust target on shared samples.
    #[arg(long)]
    check_rcb_identity: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Target MDP JSON written by gen-data.
    #[arg(long)]
    mdp_tar: PathBuf,
    /// Comma list of perturbations: none | all | kinematic:LEVEL |
    /// morph:LEVEL | minq:SCALE.
    #[arg(long, default_value = "all")]
    perturb: String,
    /// Comma list of evaluation seeds.
    #[arg(long, default_value = "0,1,2,3,4")]
    seeds: String,
    /// Monte Carlo episodes; 0 selects exact evaluation.
    #[arg(long, default_value_t = 0)]
    episodes: usize,
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    #[arg(long, default_value = "up")]
    jam_action: String,
    #[arg(long, default_value = "quarter")]
    rotation: String,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PropId {
    All,
    Contraction,
    Uniqueness,
    Dual,
    TrainBound,
    TestBound,
    Overestimation,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = PropId::All)]
    prop: PropId,
    /// Trials per checker (checker default when omitted).
    #[arg(long)]
    trials: Option<usize>,
    /// Perturbed kernels per trial for the test-time bound.
    #[arg(long, default_value_t = verify::DEFAULT_TEST_BOUND_PERTURBATIONS)]
    perturbations: usize,
    /// Resamples per trial for the overestimation bound.
    #[arg(long, default_value_t = verify::DEFAULT_OVERESTIMATION_RESAMPLES)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Concurrent grid points.
    #[arg(long, default_value_t = 2)]
    jobs: usize,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(String),
    Violations(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Violations(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) | CliError::Violations(m) => m,
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Map core failures: divergence and solver aborts are runtime (3),
/// everything else is a usage/config problem (2).
fn core_err(e: droco_core::Error) -> CliError {
    match e {
        droco_core::Error::Diverged { .. } | droco_core::Error::NoConvergence { .. } => {
            CliError::Runtime(e.to_string())
        }
        other => CliError::Usage(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn default_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("DROCO_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let shift = parse_shift(
        &args.shift,
        &args.jam_action,
        args.jam_prob,
        &args.rotation,
        args.mix_weight,
    )
    .map_err(usage)?;
    let quality = config::parse_quality(&args.quality).map_err(usage)?;
    let spec_tar = droco_core::grid::GridSpec {
        width: args.width,
        height: args.height,
        slip_prob: args.slip,
        goal_cell: args.width * args.height - 1,
        step_reward: 0.0,
        goal_reward: 1.0,
        gamma: args.gamma,
        shift: Shift::None,
    };
    spec_tar.validate().map_err(core_err)?;
    let mut spec_src = spec_tar.clone();
    spec_src.shift = shift;
    let (mdp_src, mdp_tar) = build_pair(&spec_src, &spec_tar).map_err(core_err)?;

    let n_tar = args.n_tar.unwrap_or(args.n);
    let ds_src = generate_dataset(
        &mdp_src,
        quality,
        args.n,
        args.horizon,
        Domain::Src,
        stream_seed(args.seed, "gen/src", 0),
    )
    .map_err(core_err)?;
    let ds_tar = generate_dataset(
        &mdp_tar,
        quality,
        n_tar,
        args.horizon,
        Domain::Tar,
        stream_seed(args.seed, "gen/tar", 0),
    )
    .map_err(core_err)?;

    let out = default_out_dir(args.out);
    fs::create_dir_all(&out).map_err(|e| usage(format!("cannot create {}: {e}", out.display())))?;
    mdp_src.save_json(&out.join("mdp_src.json")).map_err(core_err)?;
    mdp_tar.save_json(&out.join("mdp_tar.json")).map_err(core_err)?;
    ds_src.save_jsonl(&out.join("src.jsonl")).map_err(core_err)?;
    ds_tar.save_jsonl(&out.join("tar.jsonl")).map_err(core_err)?;
    println!(
        "wrote {} source records and {} target records under {}",
        ds_src.len(),
        ds_tar.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainInputs {
    mdp_tar: FiniteMdp,
    ds_src: OfflineDataset,
    ds_tar: OfflineDataset,
}

fn resolve_train_inputs(cfg: &RunConfig, seed: u64) -> Result<TrainInputs, CliError> {
    let d = &cfg.data;
    if let (Some(src), Some(tar), Some(mdp_src_p), Some(mdp_tar_p)) = (
        d.src_path.as_ref(),
        d.tar_path.as_ref(),
        d.mdp_src_path.as_ref(),
        d.mdp_tar_path.as_ref(),
    ) {
        let mdp_src = FiniteMdp::load_json(mdp_src_p).map_err(core_err)?;
        let mdp_tar = FiniteMdp::load_json(mdp_tar_p).map_err(core_err)?;
        let ds_src = OfflineDataset::load_jsonl(src, mdp_src.n_states, mdp_src.n_actions)
            .map_err(core_err)?;
        ds_src.check_against(&mdp_src).map_err(core_err)?;
        let ds_tar_full = OfflineDataset::load_jsonl(tar, mdp_tar.n_states, mdp_tar.n_actions)
            .map_err(core_err)?;
        ds_tar_full.check_against(&mdp_tar).map_err(core_err)?;
        let ds_tar = if cfg.data.fraction < 1.0 {
            subsample(&ds_tar_full, cfg.data.fraction, stream_seed(seed, "cli/subsample", 0))
                .map_err(core_err)?
        } else {
            ds_tar_full
        };
        return Ok(TrainInputs {
            mdp_tar,
            ds_src,
            ds_tar,
        });
    }
    // No pre-generated files: roll out fresh data per the config.
    let shift = cfg.source_shift().map_err(usage)?;
    let spec_tar = cfg.grid_spec(Shift::None);
    let spec_src = cfg.grid_spec(shift);
    let (mdp_src, mdp_tar) = build_pair(&spec_src, &spec_tar).map_err(core_err)?;
    let quality = cfg.quality().map_err(usage)?;
    let ds_src = generate_dataset(
        &mdp_src,
        quality,
        cfg.data.n_src,
        cfg.data.horizon,
        Domain::Src,
        stream_seed(seed, "cli/src-data", 0),
    )
    .map_err(core_err)?;
    let ds_tar_full = generate_dataset(
        &mdp_tar,
        quality,
        cfg.data.n_tar_full,
        cfg.data.horizon,
        Domain::Tar,
        stream_seed(seed, "cli/tar-data", 0),
    )
    .map_err(core_err)?;
    let ds_tar = if cfg.data.fraction < 1.0 {
        subsample(&ds_tar_full, cfg.data.fraction, stream_seed(seed, "cli/subsample", 0))
            .map_err(core_err)?
    } else {
        ds_tar_full
    };
    Ok(TrainInputs {
        mdp_tar,
        ds_src,
        ds_tar,
    })
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (cfg, cfg_text) = RunConfig::load(&args.config).map_err(usage)?;
    let inputs = resolve_train_inputs(&cfg, args.seed)?;
    let mut droco_cfg = cfg.droco_config(stream_seed(args.seed, "cli/train", 0));
    if let Some(steps) = args.steps {
        droco_cfg.steps = steps;
    }
    if let Some(beta) = args.beta {
        droco_cfg.beta = beta;
    }

    let state = if args.baseline {
        train_baseline_merged(&inputs.ds_src, &inputs.ds_tar, inputs.mdp_tar.r_max, &droco_cfg)
    } else {
        train(&inputs.ds_src, &inputs.ds_tar, inputs.mdp_tar.r_max, &droco_cfg)
    }
    .map_err(core_err)?;

    if args.check_rcb_identity {
        check_rcb_identity(&inputs, &droco_cfg, &state)?;
        println!("rcb identity check: ok (beta = 1 target equals ensemble robust target)");
    }

    let out_root = default_out_dir(args.out.or(cfg.output.dir.clone()));
    let run_dir = out_root.join(format!("run-{}-s{}", config_hash(&cfg_text), args.seed));
    fs::create_dir_all(&run_dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", run_dir.display())))?;
    state
        .save_checkpoint(&run_dir.join("checkpoint.json"))
        .map_err(core_err)?;
    state
        .save_trace_csv(&run_dir.join("loss.csv"))
        .map_err(core_err)?;
    inputs
        .mdp_tar
        .save_json(&run_dir.join("mdp_tar.json"))
        .map_err(core_err)?;
    let algo = if args.baseline { "baseline" } else { "droco" };
    println!(
        "trained {algo} for {} steps on {} source + {} target records -> {}",
        state.steps_done,
        inputs.ds_src.len(),
        inputs.ds_tar.len(),
        run_dir.display()
    );
    Ok(())
}

/// Largest admissible difference in the beta = 1 identity: the two
/// routes share every term algebraically, but `V - (V - m)` costs one
/// rounding step in floating point.
const RCB_IDENTITY_TOL: f64 = 1e-12;

/// With beta = 1 the penalized TD target must coincide with the ensemble
/// robust target when both see the same member samples and the value
/// table is the in-support maximum of Q.
fn check_rcb_identity(
    inputs: &TrainInputs,
    droco_cfg: &DrocoConfig,
    state: &TrainState,
) -> Result<(), CliError> {
    let merged = inputs.ds_src.merge(&inputs.ds_tar).map_err(core_err)?;
    let support = SupportMask::from_dataset_or_full(&merged);
    let ensemble = state
        .ensemble
        .as_ref()
        .ok_or_else(|| usage("identity check needs the robust learner (not --baseline)"))?;
    let v_from_q = TabularV {
        values: (0..state.q.n_states())
            .map(|s| support.masked_max_or_all(&state.q, s))
            .collect(),
    };
    let batch: Vec<_> = inputs.ds_src.records.iter().copied().take(256).collect();
    let targets = rcb_ensemble_targets(
        &state.q,
        &batch,
        ensemble,
        &support,
        droco_cfg.gamma,
        droco_cfg.seed,
    )
    .map_err(core_err)?;
    let mut worst: f64 = 0.0;
    for (idx, rec) in batch.iter().enumerate() {
        let sample_seed = stream_seed(droco_cfg.seed, "ensemble-target", idx as u64);
        let pen = value_penalty(rec, &v_from_q, ensemble, sample_seed).map_err(core_err)?;
        let td = td_target(rec, &v_from_q, pen, 1.0, droco_cfg.gamma);
        worst = worst.max((td - targets[idx]).abs());
    }
    if worst > RCB_IDENTITY_TOL {
        return Err(CliError::Violations(format!(
            "rcb identity violated: max difference {worst}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn parse_perturb_tokens(
    tokens: &str,
    jam_action: GridAction,
    rotation: Rotation,
) -> Result<Vec<PerturbationSpec>, CliError> {
    let parse_level = |s: &str| match s {
        "easy" => Ok(Level::Easy),
        "medium" => Ok(Level::Medium),
        "hard" => Ok(Level::Hard),
        other => Err(usage(format!("unknown level '{other}'"))),
    };
    let mut specs = Vec::new();
    for token in tokens.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token {
            "none" => {}
            "all" => {
                specs.extend(PerturbationSpec::standard_battery(jam_action, rotation));
            }
            other => {
                let (kind, param) = other
                    .split_once(':')
                    .ok_or_else(|| usage(format!("malformed perturbation '{other}'")))?;
                match kind {
                    "kinematic" => specs.push(PerturbationSpec::KinematicAnalog {
                        jammed_action: jam_action,
                        level: parse_level(param)?,
                    }),
                    "morph" | "morphology" => specs.push(PerturbationSpec::MorphologyAnalog {
                        rotation,
                        level: parse_level(param)?,
                    }),
                    "minq" | "min_v" => {
                        let scale: f64 = param
                            .parse()
                            .map_err(|_| usage(format!("bad scale '{param}'")))?;
                        specs.push(PerturbationSpec::MinVAdversarial { scale });
                    }
                    _ => return Err(usage(format!("unknown perturbation kind '{kind}'"))),
                }
            }
        }
    }
    Ok(specs)
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    if !args.checkpoint.exists() {
        return Err(usage(format!(
            "checkpoint {} does not exist",
            args.checkpoint.display()
        )));
    }
    let state = TrainState::load_checkpoint(&args.checkpoint).map_err(core_err)?;
    let mdp_tar = FiniteMdp::load_json(&args.mdp_tar).map_err(core_err)?;
    let jam_action = parse_action(&args.jam_action).map_err(usage)?;
    let rotation = parse_rotation(&args.rotation).map_err(usage)?;
    let specs = parse_perturb_tokens(&args.perturb, jam_action, rotation)?;
    let seeds: Vec<u64> = args
        .seeds
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| usage(format!("bad seed '{t}'"))))
        .collect::<Result<_, _>>()?;
    let mode = if args.episodes == 0 {
        EvalMode::Exact
    } else {
        EvalMode::MonteCarlo {
            episodes: args.episodes,
            horizon: args.horizon,
            seed: 0,
        }
    };
    let report = robustness_curve(&state.policy, &state.v, &mdp_tar, &specs, &seeds, mode)
        .map_err(core_err)?;
    print!("{}", report.to_csv());
    if let Some(path) = args.out_csv {
        report.save_csv(&path).map_err(core_err)?;
        eprintln!("wrote {} rows to {}", report.rows.len(), path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    use verify::*;
    let seed = args.seed;
    let t = args.trials;
    let results: Vec<PropCheckResult> = match args.prop {
        PropId::All => run_all(seed).map_err(core_err)?,
        PropId::Contraction => {
            vec![check_contraction(t.unwrap_or(DEFAULT_CONTRACTION_TRIALS), seed)
                .map_err(core_err)?]
        }
        PropId::Uniqueness => {
            vec![
                check_fixed_point_uniqueness(t.unwrap_or(DEFAULT_UNIQUENESS_TRIALS), seed)
                    .map_err(core_err)?,
            ]
        }
        PropId::Dual => {
            vec![check_dual_ordering(t.unwrap_or(DEFAULT_DUAL_TRIALS), seed).map_err(core_err)?]
        }
        PropId::TrainBound => {
            vec![check_train_time_bound(t.unwrap_or(DEFAULT_TRAIN_BOUND_TRIALS), seed)
                .map_err(core_err)?]
        }
        PropId::TestBound => {
            vec![check_test_time_bound(
                t.unwrap_or(DEFAULT_TEST_BOUND_TRIALS),
                args.perturbations,
                seed,
            )
            .map_err(core_err)?]
        }
        PropId::Overestimation => {
            vec![check_limited_overestimation(
                t.unwrap_or(DEFAULT_OVERESTIMATION_TRIALS),
                args.resamples,
                seed,
            )
            .map_err(core_err)?]
        }
    };
    for r in &results {
        println!("{}", r.table_row());
    }
    if let Some(path) = &args.out_json {
        let json = serde_json::to_string_pretty(&results)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(path, json).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    }
    let total_violations: usize = results.iter().map(|r| r.violations).sum();
    if total_violations > 0 {
        return Err(CliError::Violations(format!(
            "{total_violations} violation(s) across {} checker(s)",
            results.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct SweepPoint {
    beta: f64,
    delta: f64,
    fraction: f64,
    seed: u64,
}

struct SweepOutcome {
    point: SweepPoint,
    status: &'static str,
    clean_score: f64,
    mean_degradation: f64,
    mean_q_src: f64,
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let (cfg, cfg_text) = RunConfig::load(&args.config).map_err(usage)?;
    let sweep = &cfg.sweep;
    if sweep.betas.is_empty()
        || sweep.deltas.is_empty()
        || sweep.fractions.is_empty()
        || sweep.seeds.is_empty()
    {
        return Err(usage("sweep grid is empty"));
    }
    let mut points = Vec::new();
    for &beta in &sweep.betas {
        for &delta in &sweep.deltas {
            for &fraction in &sweep.fractions {
                for &seed in &sweep.seeds {
                    points.push(SweepPoint {
                        beta,
                        delta,
                        fraction,
                        seed,
                    });
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let outcomes: Vec<SweepOutcome> = pool.install(|| {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(|point| run_sweep_point(&cfg, point))
            .collect()
    });

    let mut csv = String::from(
        "beta,delta,fraction,seed,status,clean_score,mean_degradation,mean_q_src\n",
    );
    for o in &outcomes {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            o.point.beta,
            o.point.delta,
            o.point.fraction,
            o.point.seed,
            o.status,
            o.clean_score,
            o.mean_degradation,
            o.mean_q_src
        ));
    }
    print!("{csv}");
    let out_root = default_out_dir(cfg.output.dir.clone());
    let path = args
        .out_csv
        .unwrap_or_else(|| out_root.join(format!("sweep-{}.csv", config_hash(&cfg_text))));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| usage(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(&path, &csv).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    eprintln!("wrote {} grid points to {}", outcomes.len(), path.display());
    if outcomes.iter().any(|o| o.status == "failed") {
        eprintln!("warning: some grid points failed; rows are marked");
    }
    Ok(())
}

fn run_sweep_point(cfg: &RunConfig, point: &SweepPoint) -> SweepOutcome {
    match sweep_point_inner(cfg, point) {
        Ok((clean, degr, mean_q)) => SweepOutcome {
            point: point.clone(),
            status: "ok",
            clean_score: clean,
            mean_degradation: degr,
            mean_q_src: mean_q,
        },
        Err(_) => SweepOutcome {
            point: point.clone(),
            status: "failed",
            clean_score: f64::NAN,
            mean_degradation: f64::NAN,
            mean_q_src: f64::NAN,
        },
    }
}

fn sweep_point_inner(
    cfg: &RunConfig,
    point: &SweepPoint,
) -> Result<(f64, f64, f64), droco_core::Error> {
    let shift = cfg
        .source_shift()
        .map_err(droco_core::Error::BadParameter)?;
    let spec_tar = cfg.grid_spec(Shift::None);
    let spec_src = cfg.grid_spec(shift);
    let (mdp_src, mdp_tar) = build_pair(&spec_src, &spec_tar)?;
    let quality = cfg.quality().map_err(droco_core::Error::BadParameter)?;
    let ds_src = generate_dataset(
        &mdp_src,
        quality,
        cfg.data.n_src,
        cfg.data.horizon,
        Domain::Src,
        stream_seed(point.seed, "sweep/src-data", 0),
    )?;
    let ds_tar_full = generate_dataset(
        &mdp_tar,
        quality,
        cfg.data.n_tar_full,
        cfg.data.horizon,
        Domain::Tar,
        stream_seed(point.seed, "sweep/tar-data", 0),
    )?;
    let ds_tar = if point.fraction < 1.0 {
        subsample(
            &ds_tar_full,
            point.fraction,
            stream_seed(point.seed, "sweep/subsample", 0),
        )?
    } else {
        ds_tar_full
    };
    let droco_cfg = DrocoConfig {
        beta: point.beta,
        delta: point.delta,
        seed: stream_seed(point.seed, "sweep/train", 0),
        ..cfg.droco_config(0)
    };
    let state = train(&ds_src, &ds_tar, mdp_tar.r_max, &droco_cfg)?;

    let jam_action =
        parse_action(&cfg.eval.jam_action).map_err(droco_core::Error::BadParameter)?;
    let rotation =
        parse_rotation(&cfg.eval.rotation).map_err(droco_core::Error::BadParameter)?;
    let specs = PerturbationSpec::standard_battery(jam_action, rotation);
    let report = robustness_curve(
        &state.policy,
        &state.v,
        &mdp_tar,
        &specs,
        &[point.seed],
        EvalMode::Exact,
    )?;
    let clean = report
        .rows
        .iter()
        .find(|r| r.condition == "clean")
        .map(|r| r.norm_score)
        .unwrap_or(f64::NAN);
    let pert_rows: Vec<&droco_core::eval::EvalRow> = report
        .rows
        .iter()
        .filter(|r| r.condition != "clean")
        .collect();
    let mean_degr =
        pert_rows.iter().map(|r| r.degradation_pct).sum::<f64>() / pert_rows.len() as f64;

    // Converged mean Q over source-covered pairs.
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in 0..ds_src.n_states {
        for a in 0..ds_src.n_actions {
            if ds_src.counts[s][a] > 0 {
                sum += state.q.values[s][a];
                count += 1;
            }
        }
    }
    let mean_q = sum / count.max(1) as f64;
    Ok((clean, mean_degr, mean_q))
}

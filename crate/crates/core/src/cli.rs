//! Command-line entry point: domain generation, feature dumps, training,
//! evaluation, the benchmark grid, and report emission.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{BenchmarkConfig, ConfigError, ExperimentConfig};
use crate::dip::{dip_labels, FeatureExtractor, MASTER_LEN};
use crate::harness::{
    run_episode, run_task, report, DialogueEnv, HarnessError, Phase, PolicyKind, TaskResult,
};
use crate::ontology::{generate_domain, load_ontology, serialize_domain, DomainError, DomainSpec};
use crate::policies::PolicyCheckpoint;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Belief(#[from] crate::belief::BeliefError),
    #[error(transparent)]
    Policy(#[from] crate::policies::PolicyError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })
}

fn write(path: &PathBuf, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
        }
    }
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })
}

#[derive(Parser, Debug)]
#[command(
    name = "feudal-dm",
    version,
    about = "Feudal dialogue-policy workbench: domains, features, training, and the benchmark grid"
)]
pub struct Cli {
    /// Override the config's seed list with this single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for multi-seed runs (0 = automatic). Results are
    /// independent of the pool size.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic domain document (JSON).
    GenDomain(GenDomainArgs),
    /// Print the labeled feature vector for a belief state.
    DumpFeatures(DumpFeaturesArgs),
    /// Train one task from a config file and write results + checkpoints.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint with greedy dialogues.
    Eval(EvalArgs),
    /// Run a benchmark grid (domains x environments x policies).
    Benchmark(BenchmarkArgs),
    /// Render tables and learning curves from saved task results.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenDomainArgs {
    /// Domain preset: cr, sfr, lap, or toy.
    #[arg(long, conflicts_with_all = ["slots", "values", "requestable", "entities"])]
    pub preset: Option<String>,
    /// Number of constraint slots.
    #[arg(long)]
    pub slots: Option<usize>,
    /// Comma-separated values per slot, e.g. 4,5,6.
    #[arg(long)]
    pub values: Option<String>,
    /// Total requestable slots (constraint slots included).
    #[arg(long)]
    pub requestable: Option<usize>,
    /// Number of database entities.
    #[arg(long)]
    pub entities: Option<usize>,
    /// Domain name recorded in the document.
    #[arg(long)]
    pub name: Option<String>,
    /// Output path for the domain document.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DumpFeaturesArgs {
    /// Domain document (JSON) the belief refers to.
    #[arg(long)]
    pub domain: PathBuf,
    /// Serialized belief state (JSON); the fresh belief when omitted.
    #[arg(long)]
    pub belief: Option<PathBuf>,
    /// Constraint slot for the per-slot segment; only the 37-dim
    /// slot-independent prefix is printed when omitted.
    #[arg(long)]
    pub slot: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for results, curves, and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Experiment config (TOML) providing the domain and environment.
    #[arg(long)]
    pub config: PathBuf,
    /// Policy checkpoint to load.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of greedy evaluation dialogues (default: schedule.eval_size).
    #[arg(long)]
    pub dialogues: Option<usize>,
    /// Print this many example transcripts.
    #[arg(long, default_value_t = 0)]
    pub transcripts: usize,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// Benchmark config (TOML); the default desk-scale grid when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Directory holding task_*.json result files.
    #[arg(long)]
    pub results: PathBuf,
    /// Output directory for tables and curves.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .ok();
    }
    match cli.command {
        Command::GenDomain(args) => gen_domain(args, cli.seed),
        Command::DumpFeatures(args) => dump_features(args),
        Command::Train(args) => train(args, cli.seed),
        Command::Eval(args) => eval(args, cli.seed),
        Command::Benchmark(args) => benchmark(args, cli.seed),
        Command::Report(args) => report_cmd(args),
    }
}

fn gen_domain(args: GenDomainArgs, seed: Option<u64>) -> Result<(), CliError> {
    let seed = seed.unwrap_or(7);
    let spec = if let Some(preset) = &args.preset {
        let mut spec = DomainSpec::by_preset(preset, seed)
            .ok_or_else(|| CliError::Invalid(format!("unknown preset `{preset}`")))?;
        if let Some(name) = args.name {
            spec.name = name;
        }
        spec
    } else {
        let slots = args
            .slots
            .ok_or_else(|| CliError::Invalid("--slots required without --preset".into()))?;
        let values: Vec<usize> = args
            .values
            .as_deref()
            .ok_or_else(|| CliError::Invalid("--values required without --preset".into()))?
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Invalid(format!("bad --values list: {e}")))?;
        DomainSpec {
            name: args.name.unwrap_or_else(|| "custom".into()),
            n_constraint_slots: slots,
            values_per_slot: values,
            n_requestable: args
                .requestable
                .ok_or_else(|| CliError::Invalid("--requestable required".into()))?,
            n_entities: args
                .entities
                .ok_or_else(|| CliError::Invalid("--entities required".into()))?,
            seed,
        }
    };
    let (ont, db) = generate_domain(&spec)?;
    write(&args.out, &serialize_domain(&ont, &db))?;
    println!(
        "wrote domain `{}`: {} slots, {} requestables, {} entities -> {}",
        ont.name,
        ont.num_slots(),
        ont.requestable_slots.len(),
        db.len(),
        args.out.display()
    );
    Ok(())
}

fn dump_features(args: DumpFeaturesArgs) -> Result<(), CliError> {
    let (ont, db) = load_ontology(&read(&args.domain)?)?;
    let ont = Arc::new(ont);
    let belief = match &args.belief {
        Some(path) => {
            let b: crate::belief::BeliefState =
                serde_json::from_str(&read(path)?).map_err(|source| CliError::Json {
                    path: path.clone(),
                    source,
                })?;
            b.matches_ontology(&ont)?;
            b.check_invariants()?;
            b
        }
        None => crate::belief::init_belief(&ont),
    };
    let fx = FeatureExtractor::new(ont.clone(), &db);
    let labels = dip_labels();
    match &args.slot {
        Some(slot) => {
            let idx = ont
                .slot_index(slot)
                .ok_or_else(|| CliError::Invalid(format!("unknown constraint slot `{slot}`")))?;
            let v = fx.dip(&belief, idx);
            println!("# dip features for slot `{slot}` ({} dims)", v.values.len());
            for (i, (label, value)) in labels.iter().zip(&v.values).enumerate() {
                println!("{i:2}  {label:<34} {value:.6}");
            }
        }
        None => {
            let v = fx.master(&belief);
            println!("# slot-independent features ({} dims)", MASTER_LEN);
            for (i, (label, value)) in labels.iter().zip(&v.values).enumerate() {
                println!("{i:2}  {label:<34} {value:.6}");
            }
        }
    }
    Ok(())
}

fn save_task(result: &TaskResult, out: &PathBuf) -> Result<(), CliError> {
    let path = out.join(format!("task_{}_{}.json", result.task, result.policy));
    let text = serde_json::to_string(result).map_err(|source| CliError::Json {
        path: path.clone(),
        source,
    })?;
    write(&path, &text)?;
    for run in &result.seed_runs {
        let ckpt_path = out.join(format!(
            "ckpt_{}_{}_seed{}.json",
            result.task, result.policy, run.seed
        ));
        let text = serde_json::to_string(&run.checkpoint).map_err(|source| CliError::Json {
            path: ckpt_path.clone(),
            source,
        })?;
        write(&ckpt_path, &text)?;
    }
    Ok(())
}

fn train(args: TrainArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let (ont, db) = cfg.domain.resolve()?;
    let env = cfg.env.resolve()?;
    let task = cfg.task_name();
    println!(
        "training {} ({} on {}, ser={:.2} masks={} user={:?}, {} dialogues x {} seeds)",
        task,
        cfg.policy.kind,
        ont.name,
        env.ser,
        env.masks,
        env.user,
        cfg.schedule.n_train,
        cfg.seeds.len()
    );
    let result = run_task(
        &task,
        ont,
        db,
        env,
        cfg.policy.kind,
        &cfg.learner,
        &cfg.schedule,
        &cfg.seeds,
    )?;
    save_task(&result, &args.out)?;
    report(std::slice::from_ref(&result), &args.out)?;
    println!(
        "{task}: success {:.1}% ± {:.1}, return {:.2} ± {:.2}",
        100.0 * result.final_success_mean,
        100.0 * result.final_success_std,
        result.final_return_mean,
        result.final_return_std
    );
    Ok(())
}

fn eval(args: EvalArgs, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = ExperimentConfig::from_file(&args.config)?;
    let (ont, db) = cfg.domain.resolve()?;
    let env = cfg.env.resolve()?;
    let ckpt: PolicyCheckpoint =
        serde_json::from_str(&read(&args.checkpoint)?).map_err(|source| CliError::Json {
            path: args.checkpoint.clone(),
            source,
        })?;
    let kind = match &ckpt {
        PolicyCheckpoint::Feudal { .. } => PolicyKind::Feudal,
        PolicyCheckpoint::FlatDqn { .. } => PolicyKind::FlatDqn,
        PolicyCheckpoint::DipDqn { .. } => PolicyKind::DipDqn,
        PolicyCheckpoint::Handcrafted { .. } => PolicyKind::Handcrafted,
    };
    let mut policy = crate::harness::load_policy(kind, ont.clone(), &db, &cfg.learner, ckpt)?;
    let denv = DialogueEnv::new(ont.clone(), db.clone(), env);
    let n = args.dialogues.unwrap_or(cfg.schedule.eval_size);
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(crate::derive_seed(
        seed.unwrap_or_else(|| cfg.seeds[0]),
        42,
    ));
    let mut successes = 0usize;
    let mut ret = 0.0;
    for i in 0..n {
        let out = run_episode(policy.as_mut(), &denv, Phase::Eval, 0.0, &mut rng)?;
        successes += out.success as usize;
        ret += out.ret;
        if i < args.transcripts {
            println!("--- dialogue {i} (success={}) ---", out.success);
            print!("{}", out.transcript.render(&ont));
        }
    }
    println!(
        "eval {} dialogues: success {:.1}%, mean return {:.2}",
        n,
        100.0 * successes as f64 / n.max(1) as f64,
        ret / n.max(1) as f64
    );
    Ok(())
}

fn benchmark(args: BenchmarkArgs, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => BenchmarkConfig::from_file(path)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    let mut results = Vec::new();
    for (task, domain, env_row) in cfg.tasks() {
        let spec = DomainSpec::by_preset(&domain, cfg.domain_seed)
            .ok_or_else(|| CliError::Invalid(format!("unknown domain preset `{domain}`")))?;
        let (ont, db) = generate_domain(&spec)?;
        let (ont, db) = (Arc::new(ont), Arc::new(db));
        let env = crate::harness::benchmark_envs()[env_row - 1];
        for &policy in &cfg.policies {
            let label = format!("{task}");
            println!("running {label} / {policy} ...");
            let result = run_task(
                &label,
                ont.clone(),
                db.clone(),
                env,
                policy,
                &cfg.learner,
                &cfg.schedule,
                &cfg.seeds,
            )?;
            println!(
                "  {label} {policy}: success {:.1}%, return {:.2}",
                100.0 * result.final_success_mean,
                result.final_return_mean
            );
            save_task(&result, &args.out)?;
            results.push(result);
        }
    }
    report(&results, &args.out)?;
    println!("benchmark complete: {} tasks -> {}", results.len(), args.out.display());
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<(), CliError> {
    let mut results = Vec::new();
    let entries = std::fs::read_dir(&args.results).map_err(|source| CliError::Io {
        path: args.results.clone(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("task_") && n.ends_with(".json"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Invalid(format!(
            "no task_*.json files under {}",
            args.results.display()
        )));
    }
    for p in paths {
        let r: TaskResult = serde_json::from_str(&read(&p)?).map_err(|source| CliError::Json {
            path: p.clone(),
            source,
        })?;
        results.push(r);
    }
    let files = report(&results, &args.out)?;
    println!("wrote {} report files to {}", files.len(), args.out.display());
    Ok(())
}

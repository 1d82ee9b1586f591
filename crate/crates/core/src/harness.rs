//! Benchmark harness: the dialogue environment loop, multi-seed training
//! and evaluation tasks, and report emission.
//!
//! Episodes reward -1 per system turn plus +20 on success at termination,
//! so the episodic return is `20 * success - turns`. Evaluation runs on
//! frozen snapshots with greedy action selection and its own derived RNG
//! stream, so interleaved evaluations never perturb training; a full task is
//! a pure function of (spec, seed) and produces identical results whether
//! seeds run serially or in parallel.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{init_belief, update_belief, BeliefState, NONE_IDX};
use crate::derive_seed;
use crate::ontology::{query_database, Database, Ontology};
use crate::policies::{
    action_mask, enumerate_actions, DialoguePolicy, DipDqnPolicy, FlatDqnPolicy,
    HandcraftedPolicy, FeudalPolicy, PolicyCheckpoint, PolicyError, SummaryAction, SystemTurn,
    TurnOutcome,
};
use crate::qlearner::LearnerConfig;
use crate::user_sim::{
    corrupt_act, evaluate_success, sample_goal, AgendaUser, ErrorModel, Transcript, TurnRecord,
    UserKind, UserProfile, UserResponse,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Belief(#[from] crate::belief::BeliefError),
    #[error("report output error: {0}")]
    Io(#[from] std::io::Error),
}

/// One benchmark environment row: error rate, action masking, user profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub ser: f64,
    pub masks: bool,
    pub user: UserKind,
}

/// The six benchmark environment rows, index 0 holding row 1.
pub fn benchmark_envs() -> [EnvConfig; 6] {
    use UserKind::*;
    [
        EnvConfig { ser: 0.0, masks: true, user: Standard },
        EnvConfig { ser: 0.0, masks: false, user: Standard },
        EnvConfig { ser: 0.15, masks: true, user: Standard },
        EnvConfig { ser: 0.15, masks: false, user: Standard },
        EnvConfig { ser: 0.15, masks: true, user: Unfriendly },
        EnvConfig { ser: 0.30, masks: true, user: Standard },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Eval,
}

/// Per-dialogue log entry. `ret == 20 * success - turns` holds for every
/// record; the episode loop constructs returns that way and asserts it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub dialogue_index: usize,
    pub phase: Phase,
    pub success: bool,
    pub ret: f64,
    pub turns: u32,
}

/// A fully materialized dialogue environment for one domain + env row.
pub struct DialogueEnv {
    pub ont: Arc<Ontology>,
    pub db: Arc<Database>,
    pub actions: Vec<SummaryAction>,
    pub error_model: ErrorModel,
    pub masks_on: bool,
    pub profile: UserProfile,
}

impl DialogueEnv {
    pub fn new(ont: Arc<Ontology>, db: Arc<Database>, env: EnvConfig) -> Self {
        let actions = enumerate_actions(&ont);
        Self {
            ont,
            db,
            actions,
            error_model: ErrorModel::new(env.ser),
            masks_on: env.masks,
            profile: UserProfile::for_kind(env.user),
        }
    }
}

/// Expand a summary action into its executed form: offers come from the
/// database filtered by the belief's top values, confirms carry the top
/// non-`*NONE*` entry, and inform-family acts answer all pending requests
/// from the offered entity.
pub fn expand_action(
    action: SummaryAction,
    b: &BeliefState,
    ont: &Ontology,
    db: &Database,
    current_offer: Option<usize>,
) -> SystemTurn {
    let mut sys = SystemTurn::plain(action);
    match action {
        SummaryAction::Hello | SummaryAction::Bye => {}
        SummaryAction::Request(_) | SummaryAction::Select(_) => {}
        SummaryAction::Confirm(s) => {
            let sb = b.slot(s);
            let (idx, p) = sb.top_non_none();
            let entry = if p > 0.0 { idx } else { sb.dontcare_idx() };
            sys.confirmed = Some((s, entry));
        }
        SummaryAction::Inform | SummaryAction::InformByName | SummaryAction::InformAlternatives => {
            let constraints = belief_constraints(b, ont);
            let matches = query_database(db, ont, &constraints).expect("belief values are valid");
            let offer = match action {
                SummaryAction::InformByName => current_offer.or_else(|| matches.first().copied()),
                SummaryAction::InformAlternatives => matches
                    .iter()
                    .copied()
                    .find(|e| Some(*e) != current_offer)
                    .or(current_offer),
                _ => matches.first().copied(),
            };
            match offer {
                Some(e) => {
                    sys.offer = Some(e);
                    sys.answered = b
                        .requested_slots
                        .iter()
                        .filter_map(|r| {
                            db.entities[e].get(r).map(|v| (r.clone(), v.to_string()))
                        })
                        .collect();
                }
                None => sys.inform_none = true,
            }
        }
    }
    sys
}

/// Constraint map implied by the belief: each slot whose argmax is a real
/// value (neither `*NONE*` nor `dontcare`) constrains the query to it.
pub fn belief_constraints(b: &BeliefState, ont: &Ontology) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    for (i, slot) in ont.constraint_slots.iter().enumerate() {
        let (idx, _) = b.slot(i).top();
        if idx != NONE_IDX && idx != b.slot(i).dontcare_idx() {
            m.insert(slot.name.clone(), slot.values[idx - 1].clone());
        }
    }
    m
}

/// Outcome of one dialogue.
#[derive(Debug)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub turns: u32,
    pub ret: f64,
    pub transcript: Transcript,
}

/// Run one dialogue: belief update, masking, action, user response, reward.
/// In train mode, transitions are recorded per turn and the policy's
/// end-of-dialogue learning hook runs at termination.
pub fn run_episode(
    policy: &mut dyn DialoguePolicy,
    env: &DialogueEnv,
    phase: Phase,
    eps: f64,
    rng: &mut ChaCha20Rng,
) -> Result<EpisodeOutcome, HarnessError> {
    let goal = sample_goal(&env.ont, &env.db, rng);
    let mut user = AgendaUser::new(goal, env.profile, rng);
    let mut b = init_belief(&env.ont);
    let mut transcript = Transcript::default();
    let mut current_offer = None;
    let mut turns = 0u32;
    let mut ret = 0.0;

    loop {
        let mask = action_mask(&b, &env.ont, &env.actions, env.masks_on);
        let eps = if phase == Phase::Eval { 0.0 } else { eps };
        let a_idx = policy.act(&b, &mask, eps, rng)?;
        debug_assert!(mask[a_idx], "masked action executed");
        let action = env.actions[a_idx];
        let sys = expand_action(action, &b, &env.ont, &env.db, current_offer);
        if sys.offer.is_some() {
            current_offer = sys.offer;
        }
        turns += 1;
        let mut terminal = false;
        let mut pending: Option<(crate::belief::ObservedUserAct, SystemTurn)> = None;
        let mut record = TurnRecord {
            turn: turns - 1,
            system: sys.clone(),
            user: None,
            observed: None,
            corrupted: false,
            hangup: false,
        };

        if action == SummaryAction::Bye {
            terminal = true;
        } else {
            match user.respond(&sys, &env.ont, &env.db, rng) {
                UserResponse::Hangup => {
                    record.hangup = true;
                    terminal = true;
                }
                UserResponse::Act(uact) => {
                    record.user = Some(uact.clone());
                    if uact.act_type == crate::belief::UserActType::Bye {
                        terminal = true;
                    } else {
                        let (obs, corrupted) =
                            corrupt_act(&uact, &env.error_model, &env.ont, rng);
                        record.observed = Some(obs.clone());
                        record.corrupted = corrupted;
                        pending = Some((obs, sys));
                    }
                }
            }
        }
        if turns >= env.profile.max_turns {
            terminal = true;
        }
        transcript.turns.push(record);

        let success = terminal && evaluate_success(&transcript, &user.goal, &env.db);
        let reward = if success { 19.0 } else { -1.0 }; // -1 per turn, +20 on success
        ret += reward;

        let next_b = if terminal {
            b.clone()
        } else {
            let (obs, sys) = pending.expect("non-terminal turn has an observation");
            let nb = update_belief(&b, &obs, &sys, &env.ont)?;
            debug_assert!(nb.check_invariants().is_ok(), "simplex invariant broken");
            nb
        };

        if phase == Phase::Train {
            let next_mask = action_mask(&next_b, &env.ont, &env.actions, env.masks_on);
            policy.record(&TurnOutcome {
                reward,
                terminal,
                next_belief: &next_b,
                next_mask: &next_mask,
            });
        }

        if terminal {
            if phase == Phase::Train {
                policy.end_dialogue(rng)?;
            }
            let expected = 20.0 * (success as u8 as f64) - turns as f64;
            debug_assert!((ret - expected).abs() < 1e-9, "return identity violated");
            return Ok(EpisodeOutcome {
                success,
                turns,
                ret,
                transcript,
            });
        }
        b = next_b;
    }
}

/// Which acting agent a task trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Feudal,
    DipDqn,
    FlatDqn,
    Handcrafted,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "feudal" => Some(Self::Feudal),
            "dip-dqn" => Some(Self::DipDqn),
            "flat-dqn" => Some(Self::FlatDqn),
            "handcrafted" => Some(Self::Handcrafted),
            _ => None,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PolicyKind::Feudal => "feudal",
            PolicyKind::DipDqn => "dip-dqn",
            PolicyKind::FlatDqn => "flat-dqn",
            PolicyKind::Handcrafted => "handcrafted",
        };
        f.write_str(s)
    }
}

pub fn make_policy(
    kind: PolicyKind,
    ont: Arc<Ontology>,
    db: &Database,
    config: &LearnerConfig,
    seed: u64,
) -> Box<dyn DialoguePolicy + Send> {
    match kind {
        PolicyKind::Feudal => Box::new(FeudalPolicy::new(ont, db, config.clone(), seed)),
        PolicyKind::DipDqn => Box::new(DipDqnPolicy::new(ont, db, config.clone(), seed)),
        PolicyKind::FlatDqn => Box::new(FlatDqnPolicy::new(ont, db, config.clone(), seed)),
        PolicyKind::Handcrafted => Box::new(HandcraftedPolicy::new(&ont)),
    }
}

pub fn load_policy(
    kind: PolicyKind,
    ont: Arc<Ontology>,
    db: &Database,
    config: &LearnerConfig,
    ckpt: PolicyCheckpoint,
) -> Result<Box<dyn DialoguePolicy + Send>, PolicyError> {
    Ok(match kind {
        PolicyKind::Feudal => Box::new(FeudalPolicy::from_checkpoint(ont, db, config.clone(), ckpt)?),
        PolicyKind::DipDqn => Box::new(DipDqnPolicy::from_checkpoint(ont, db, config.clone(), ckpt)?),
        PolicyKind::FlatDqn => Box::new(FlatDqnPolicy::from_checkpoint(ont, db, config.clone(), ckpt)?),
        PolicyKind::Handcrafted => Box::new(HandcraftedPolicy::new(&ont)),
    })
}

/// Training/evaluation cadence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub n_train: usize,
    pub eval_every: usize,
    pub eval_size: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            n_train: 2000,
            eval_every: 200,
            eval_size: 200,
        }
    }
}

/// One point of a learning curve: greedy evaluation after `after_dialogues`
/// training dialogues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub after_dialogues: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    pub train_records: Vec<RunRecord>,
    pub eval_records: Vec<RunRecord>,
    pub checkpoint: PolicyCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: String,
    pub domain: String,
    pub env: EnvConfig,
    pub policy: PolicyKind,
    pub schedule: Schedule,
    pub seed_runs: Vec<SeedRun>,
    pub final_success_mean: f64,
    pub final_success_std: f64,
    pub final_return_mean: f64,
    pub final_return_std: f64,
}

/// Sample mean and sample standard deviation (n-1 denominator; 0 for n < 2).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train and evaluate one (domain, env, policy) task across seeds.
///
/// Per seed: a fresh policy, `n_train` training dialogues, and a frozen
/// greedy evaluation of `eval_size` dialogues at dialogue 0, every
/// `eval_every` dialogues, and at the end. Seeds run in parallel; each owns
/// derived RNG streams, so results do not depend on the pool size.
#[allow(clippy::too_many_arguments)]
pub fn run_task(
    task: &str,
    ont: Arc<Ontology>,
    db: Arc<Database>,
    env: EnvConfig,
    kind: PolicyKind,
    learner: &LearnerConfig,
    schedule: &Schedule,
    seeds: &[u64],
) -> Result<TaskResult, HarnessError> {
    learner.validate().map_err(PolicyError::from)?;
    let seed_runs: Result<Vec<SeedRun>, HarnessError> = seeds
        .par_iter()
        .map(|&seed| run_seed(ont.clone(), db.clone(), env, kind, learner, schedule, seed))
        .collect();
    let seed_runs = seed_runs?;

    let finals_success: Vec<f64> = seed_runs
        .iter()
        .map(|r| r.curve.last().map(|c| c.success_rate).unwrap_or(0.0))
        .collect();
    let finals_return: Vec<f64> = seed_runs
        .iter()
        .map(|r| r.curve.last().map(|c| c.mean_return).unwrap_or(0.0))
        .collect();
    let (sm, ss) = mean_std(&finals_success);
    let (rm, rs) = mean_std(&finals_return);
    Ok(TaskResult {
        task: task.to_string(),
        domain: ont.name.clone(),
        env,
        policy: kind,
        schedule: *schedule,
        seed_runs,
        final_success_mean: sm,
        final_success_std: ss,
        final_return_mean: rm,
        final_return_std: rs,
    })
}

fn run_seed(
    ont: Arc<Ontology>,
    db: Arc<Database>,
    env: EnvConfig,
    kind: PolicyKind,
    learner: &LearnerConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<SeedRun, HarnessError> {
    let denv = DialogueEnv::new(ont.clone(), db.clone(), env);
    let mut policy = make_policy(kind, ont, &db, learner, derive_seed(seed, 100));
    let mut train_rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 200));
    let mut curve = Vec::new();
    let mut train_records = Vec::new();
    let mut eval_records = Vec::new();

    let eval_at = |policy: &mut Box<dyn DialoguePolicy + Send>,
                       after: usize,
                       eval_records: &mut Vec<RunRecord>|
     -> Result<CurvePoint, HarnessError> {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, 1_000_000 + after as u64));
        let mut successes = 0usize;
        let mut total_ret = 0.0;
        for i in 0..schedule.eval_size {
            let out = run_episode(policy.as_mut(), &denv, Phase::Eval, 0.0, &mut rng)?;
            successes += out.success as usize;
            total_ret += out.ret;
            eval_records.push(RunRecord {
                seed,
                dialogue_index: after * schedule.eval_size + i,
                phase: Phase::Eval,
                success: out.success,
                ret: out.ret,
                turns: out.turns,
            });
        }
        let n = schedule.eval_size.max(1) as f64;
        Ok(CurvePoint {
            after_dialogues: after,
            success_rate: successes as f64 / n,
            mean_return: total_ret / n,
        })
    };

    curve.push(eval_at(&mut policy, 0, &mut eval_records)?);
    for i in 0..schedule.n_train {
        let eps = learner.epsilon_at(i, schedule.n_train);
        let out = run_episode(policy.as_mut(), &denv, Phase::Train, eps, &mut train_rng)?;
        train_records.push(RunRecord {
            seed,
            dialogue_index: i,
            phase: Phase::Train,
            success: out.success,
            ret: out.ret,
            turns: out.turns,
        });
        let done = i + 1;
        if schedule.eval_every > 0 && done % schedule.eval_every == 0 {
            curve.push(eval_at(&mut policy, done, &mut eval_records)?);
        }
    }
    if curve.last().map(|c| c.after_dialogues) != Some(schedule.n_train) {
        curve.push(eval_at(&mut policy, schedule.n_train, &mut eval_records)?);
    }

    Ok(SeedRun {
        seed,
        curve,
        train_records,
        eval_records,
        checkpoint: policy.checkpoint(),
    })
}

/// Write the result table (tab-separated + human-readable) and one learning
/// curve file per task into `out_dir`.
pub fn report(results: &[TaskResult], out_dir: &Path) -> Result<Vec<std::path::PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut tsv = String::from(
        "task\tdomain\tenv_ser\tenv_masks\tenv_user\tpolicy\tsuccess_mean\tsuccess_std\treturn_mean\treturn_std\tseeds\n",
    );
    let mut txt = String::new();
    txt.push_str(&format!(
        "{:<18} {:<8} {:<22} {:<12} {:>12} {:>14}\n",
        "task", "domain", "env", "policy", "Suc.", "Rew."
    ));
    for r in results {
        let env_str = format!(
            "ser={:.2} masks={} user={:?}",
            r.env.ser, r.env.masks, r.env.user
        );
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:?}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\n",
            r.task,
            r.domain,
            r.env.ser,
            r.env.masks,
            r.env.user,
            r.policy,
            r.final_success_mean,
            r.final_success_std,
            r.final_return_mean,
            r.final_return_std,
            r.seed_runs.len()
        ));
        txt.push_str(&format!(
            "{:<18} {:<8} {:<22} {:<12} {:>6.1}% ±{:>4.1} {:>7.2} ±{:>5.2}\n",
            r.task,
            r.domain,
            env_str,
            r.policy.to_string(),
            100.0 * r.final_success_mean,
            100.0 * r.final_success_std,
            r.final_return_mean,
            r.final_return_std
        ));
    }
    let tsv_path = out_dir.join("results.tsv");
    std::fs::write(&tsv_path, tsv)?;
    written.push(tsv_path);
    let txt_path = out_dir.join("results.txt");
    std::fs::write(&txt_path, txt)?;
    written.push(txt_path);

    for r in results {
        let mut curve = String::from(
            "after_dialogues\tsuccess_mean\tsuccess_std\treturn_mean\treturn_std\n",
        );
        let n_points = r.seed_runs.iter().map(|s| s.curve.len()).min().unwrap_or(0);
        for p in 0..n_points {
            let succ: Vec<f64> = r.seed_runs.iter().map(|s| s.curve[p].success_rate).collect();
            let rets: Vec<f64> = r.seed_runs.iter().map(|s| s.curve[p].mean_return).collect();
            let (sm, ss) = mean_std(&succ);
            let (rm, rs) = mean_std(&rets);
            curve.push_str(&format!(
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
                r.seed_runs[0].curve[p].after_dialogues, sm, ss, rm, rs
            ));
        }
        let path = out_dir.join(format!("curve_{}_{}.tsv", r.task, r.policy));
        std::fs::write(&path, curve)?;
        written.push(path);
    }
    Ok(written)
}

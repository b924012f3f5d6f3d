use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{select_with_alpha, RescoreConfig};
use crate::critic::CriticParams;
use crate::error::Result;
use crate::experience::{ActionText, EnvState, Task};
use crate::grounding::{map_to_valid, Embedder, Origin};
use crate::policy::{build_context, Policy, SampleRequest};
use crate::seed;

/// Result of executing one action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    /// Score change as a fraction of the maximum score.
    pub reward: f64,
    pub done: bool,
    /// Running score, 0 to 100.
    pub score: f64,
    pub success: bool,
}

/// A text environment positioned at the start of an episode.
pub trait Environment {
    fn task(&self) -> &Task;
    fn observe(&self) -> EnvState;
    fn valid_actions(&self) -> Vec<ActionText>;
    fn step(&mut self, action: &ActionText) -> Result<StepOutcome>;
}

/// Anything that can value the actions of one state.
pub trait ActionCritic: Send + Sync {
    fn action_values(&self, task: &Task, state: &EnvState, actions: &[ActionText]) -> Result<Vec<f64>>;
}

impl ActionCritic for CriticParams {
    fn action_values(&self, task: &Task, state: &EnvState, actions: &[ActionText]) -> Result<Vec<f64>> {
        CriticParams::action_values(self, task, state, actions)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredAction {
    pub text: ActionText,
    pub origin: Origin,
    pub p_raw: f64,
    pub p_norm: f64,
    pub q_raw: Option<f64>,
    pub q_norm: Option<f64>,
    pub combined: f64,
}

/// One audited decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepAudit {
    pub t: usize,
    pub alpha: f64,
    pub candidates: Vec<ScoredAction>,
    pub chosen: ActionText,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Finished,
    StepLimit,
    /// The policy proposed nothing that could be grounded.
    NoCandidates,
    /// A backend or environment call failed.
    Error(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task_id: String,
    pub seed: u64,
    pub steps: Vec<StepAudit>,
    pub final_score: f64,
    pub success: bool,
    pub status: EpisodeStatus,
    /// Kept out of the audit file so that audits stay reproducible.
    #[serde(skip)]
    pub wall_ms: u64,
}

impl EpisodeRecord {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn actions(&self) -> Vec<&ActionText> {
        self.steps.iter().map(|s| &s.chosen).collect()
    }
}

#[derive(Serialize)]
struct AuditLine<'a> {
    episode: usize,
    #[serde(flatten)]
    step: &'a StepAudit,
}

/// One JSON line per step, episodes in order.
pub fn write_audit<'a>(records: impl IntoIterator<Item = &'a EpisodeRecord>, mut w: impl Write) -> Result<()> {
    for (episode, rec) in records.into_iter().enumerate() {
        for step in &rec.steps {
            serde_json::to_writer(&mut w, &AuditLine { episode, step })?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Plays one episode: context, candidates, grounding, scoring, selection, action.
///
/// Without a critic the decision is by policy probability alone. Backend or
/// environment failures end the episode with [`EpisodeStatus::Error`] instead of
/// propagating; only configuration errors are returned.
pub fn run_episode(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    critic: Option<&dyn ActionCritic>,
    embedder: &dyn Embedder,
    cfg: &RescoreConfig,
    episode_seed: u64,
) -> Result<EpisodeRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let task = env.task().clone();
    let mut record = EpisodeRecord {
        task_id: task.id.clone(),
        seed: episode_seed,
        steps: Vec::new(),
        final_score: 0.0,
        success: false,
        status: EpisodeStatus::StepLimit,
        wall_ms: 0,
    };
    let mut history: Vec<(EnvState, ActionText)> = Vec::new();
    for t in 0..cfg.max_steps {
        match decide_and_act(env, policy, critic, embedder, cfg, &task, &history, t, episode_seed) {
            Ok(Some((audit, state, outcome))) => {
                history.push((state, audit.chosen.clone()));
                record.steps.push(audit);
                record.final_score = outcome.score;
                record.success = outcome.success;
                if outcome.done {
                    record.status = EpisodeStatus::Finished;
                    break;
                }
            }
            Ok(None) => {
                record.status = EpisodeStatus::NoCandidates;
                break;
            }
            Err(e) => {
                log::warn!("episode {episode_seed:#x} stopped at step {t}: {e}");
                record.status = EpisodeStatus::Error(e.to_string());
                break;
            }
        }
    }
    record.wall_ms = start.elapsed().as_millis() as u64;
    Ok(record)
}

#[allow(clippy::too_many_arguments)]
fn decide_and_act(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    critic: Option<&dyn ActionCritic>,
    embedder: &dyn Embedder,
    cfg: &RescoreConfig,
    task: &Task,
    history: &[(EnvState, ActionText)],
    t: usize,
    episode_seed: u64,
) -> Result<Option<(StepAudit, EnvState, StepOutcome)>> {
    let state = env.observe();
    let ctx = build_context(task, history, &state, cfg.history_window);
    let request = SampleRequest::new(cfg.k, seed::derive_seed(episode_seed, &[t as u64]));
    let candidates = policy.sample_candidates(&ctx, &request)?;
    let valid = env.valid_actions();
    let grounded = map_to_valid(&candidates, &valid, cfg.k, embedder)?;
    if grounded.is_empty() {
        return Ok(None);
    }
    let mut p_raw = Vec::with_capacity(grounded.len());
    for g in &grounded.actions {
        let lp = match g.log_likelihood {
            Some(lp) => lp,
            None => policy.score_text(&ctx, &g.action)?,
        };
        p_raw.push(lp.exp());
    }
    let actions: Vec<ActionText> = grounded.actions.iter().map(|g| g.action.clone()).collect();
    let q_raw = match critic {
        Some(c) => Some(c.action_values(task, &state, &actions)?),
        None => None,
    };
    let alpha = if critic.is_some() { cfg.alpha(t) } else { 1.0 };
    let sel = select_with_alpha(&p_raw, q_raw.as_deref(), alpha)?;
    let chosen = actions[sel.index].clone();
    let outcome = env.step(&chosen)?;
    let candidates = grounded
        .actions
        .iter()
        .enumerate()
        .map(|(i, g)| ScoredAction {
            text: g.action.clone(),
            origin: g.origin,
            p_raw: p_raw[i],
            p_norm: sel.p_norm[i],
            q_raw: q_raw.as_ref().map(|q| q[i]),
            q_norm: sel.q_norm.as_ref().map(|q| q[i]),
            combined: sel.combined[i],
        })
        .collect();
    let audit = StepAudit {
        t,
        alpha: sel.alpha,
        candidates,
        chosen,
        reward: outcome.reward,
    };
    Ok(Some((audit, state, outcome)))
}

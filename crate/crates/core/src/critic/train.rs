use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{CriticParams, ExpectileBatch, IqlConfig, Layout, RegressionSample};
use crate::error::{Error, Result};
use crate::experience::{decompose_to_steps, sample_indices, ExperienceMemory, RewardMode};
use crate::nn::{tokenize, Adam, Objective};
use crate::seed;

/// A tokenized step with its reward in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// `[task, state fields...]`
    pub context: Vec<Vec<usize>>,
    pub action: Vec<usize>,
    pub reward: f64,
    pub next_context: Vec<Vec<usize>>,
    pub bootstrap: bool,
}

impl Transition {
    pub(crate) fn context_refs(&self) -> Vec<&[usize]> {
        self.context.iter().map(|v| v.as_slice()).collect()
    }

    pub(crate) fn next_refs(&self) -> Vec<&[usize]> {
        self.next_context.iter().map(|v| v.as_slice()).collect()
    }

    pub(crate) fn q_fields(&self) -> Vec<&[usize]> {
        let mut f = self.context_refs();
        f.push(&self.action);
        f
    }
}

/// The experience memory flattened into tokenized transitions, ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSet {
    layout: Layout,
    vocab_size: usize,
    items: Vec<Transition>,
}

impl TransitionSet {
    pub fn from_memory(
        memory: &ExperienceMemory,
        layout: Layout,
        vocab_size: usize,
        reward_mode: RewardMode,
    ) -> Result<Self> {
        let mut items = Vec::with_capacity(memory.step_count());
        for traj in memory.trajectories() {
            for step in decompose_to_steps(traj, reward_mode)? {
                items.push(Transition {
                    context: layout.tokenize_context(&traj.task, &step.state, vocab_size),
                    action: tokenize(step.action.as_str(), vocab_size),
                    reward: step.reward,
                    next_context: layout.tokenize_context(&traj.task, &step.next_state, vocab_size),
                    bootstrap: step.bootstraps(),
                });
            }
        }
        Ok(TransitionSet {
            layout,
            vocab_size,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.items
    }

    /// Q regression samples with targets `r + gamma * [bootstrap] * V(s')` from the
    /// current value network.
    pub(crate) fn q_regression(
        &self,
        params: &CriticParams,
        gamma: f64,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Vec<RegressionSample>> {
        indices
            .into_iter()
            .map(|i| {
                let t = &self.items[i];
                let v_next = if t.bootstrap { params.v.forward(&t.next_refs())? } else { 0.0 };
                let mut fields = t.context.clone();
                fields.push(t.action.clone());
                Ok(RegressionSample {
                    fields,
                    target: t.reward + gamma * v_next,
                })
            })
            .collect()
    }

    /// Value regression samples with targets from the target Q-network.
    pub(crate) fn v_regression(
        &self,
        params: &CriticParams,
        tau: f64,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<ExpectileBatch> {
        let samples = indices
            .into_iter()
            .map(|i| {
                let t = &self.items[i];
                Ok(RegressionSample {
                    fields: t.context.clone(),
                    target: params.q_target.forward(&t.q_fields())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ExpectileBatch { tau, samples })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss_v: f64,
    pub mean_loss_q: f64,
}

/// Per-epoch losses. Wall-clock times are kept apart so that the loss log of a
/// seeded run is byte-identical across machines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub wall_ms: Vec<u64>,
}

impl TrainLog {
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_timings(&self, mut w: impl Write) -> Result<()> {
        for (epoch, ms) in self.wall_ms.iter().enumerate() {
            writeln!(w, "{{\"epoch\":{epoch},\"wall_ms\":{ms}}}")?;
        }
        Ok(())
    }
}

fn locate(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {msg}")),
        other => other,
    }
}

/// Trains a critic on every step of `memory`.
pub fn train_iql(memory: &ExperienceMemory, cfg: &IqlConfig) -> Result<(CriticParams, TrainLog)> {
    cfg.validate()?;
    let set = TransitionSet::from_memory(memory, cfg.layout, cfg.net.vocab_size, cfg.reward_mode)?;
    train_transitions(&set, cfg)
}

/// Trains a critic on a pre-tokenized transition set.
///
/// Each epoch runs `ceil(N / batch_size)` minibatches drawn with replacement. Per
/// minibatch the value network is updated first, then the Q-heads regress onto
/// targets computed with the updated value network, then the target moves by
/// `q_target <- rho * q_target + (1 - rho) * q`.
pub fn train_transitions(set: &TransitionSet, cfg: &IqlConfig) -> Result<(CriticParams, TrainLog)> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::invalid("no transitions to train on"));
    }
    if set.layout != cfg.layout || set.vocab_size != cfg.net.vocab_size {
        return Err(Error::config("transition set was tokenized for a different critic layout"));
    }
    let mut params = CriticParams::init(cfg);
    let mut opt_v = Adam::new(cfg.adam, &params.v);
    let mut opt_q = Adam::new(cfg.adam, &params.q);
    let n = set.len();
    let batches = n.div_ceil(cfg.batch_size);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (mut sum_v, mut sum_q) = (0.0, 0.0);
        for b in 0..batches {
            let idx = sample_indices(n, cfg.batch_size, seed::derive_seed(cfg.seed, &[epoch as u64, b as u64]));

            let vb = set.v_regression(&params, cfg.tau, idx.iter().copied())?;
            let (lv, gv) = params.v.compute_gradients(&vb).map_err(|e| locate(e, epoch, b))?;
            if !lv.is_finite() {
                return Err(Error::Numeric(format!("epoch {epoch}, batch {b}: value loss is {lv}")));
            }
            opt_v.update(&mut params.v, &gv)?;

            let qb = set.q_regression(&params, cfg.gamma, idx.iter().copied())?;
            let (lq, gq) = params.q.compute_gradients(qb.as_slice()).map_err(|e| locate(e, epoch, b))?;
            if !lq.is_finite() {
                return Err(Error::Numeric(format!("epoch {epoch}, batch {b}: Q loss is {lq}")));
            }
            opt_q.update(&mut params.q, &gq)?;
            params.q_target.soft_update(&params.q, cfg.rho);

            sum_v += lv;
            sum_q += lq;
        }
        let entry = EpochLog {
            epoch,
            mean_loss_v: sum_v / batches as f64,
            mean_loss_q: sum_q / batches as f64,
        };
        log::info!(
            "epoch {epoch}: loss_v {:.6} loss_q {:.6}",
            entry.mean_loss_v,
            entry.mean_loss_q
        );
        log.epochs.push(entry);
        log.wall_ms.push(start.elapsed().as_millis() as u64);
    }
    Ok((params, log))
}

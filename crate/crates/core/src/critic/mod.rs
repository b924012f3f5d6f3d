//! Implicit Q-Learning critic over text (task, state, action) triples.
//!
//! Training ([`train_iql`]) alternates an expectile regression of `V(s)` onto the
//! target Q-network and a TD regression of `Q(s, a)` onto `r + gamma * V(s')`, then
//! Polyak-averages the target. [`tabular`] solves the same fixed point exactly on
//! small datasets and serves as the reference for the neural critic.

pub mod chain;
mod loss;
pub mod tabular;
mod train;

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    expectile_loss, loss_q, loss_q_from_values, loss_v, loss_v_from_values, ExpectileBatch, RegressionSample,
};
pub use tabular::{exact_expectile, state_key, tabular_dataset, tabular_iql, TabularSolution, TabularTransition};
pub use train::{train_iql, train_transitions, EpochLog, TrainLog, Transition, TransitionSet};

use crate::error::{Error, Result};
use crate::experience::{ActionText, EnvState, RewardMode, Task};
use crate::nn::{
    tokenize, AdamConfig, Checkpoint, CheckpointHeader, FieldNetwork, NetConfig, Parameterized, Tensor,
    CHECKPOINT_FORMAT_VERSION,
};
use crate::seed;

pub const DEFAULT_TAU: f64 = 0.9;
pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_RHO: f64 = 0.995;
pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_BATCH_SIZE: usize = 128;

pub const Q_CHECKPOINT: &str = "q.ckpt.json";
pub const V_CHECKPOINT: &str = "v.ckpt.json";

/// How the environment state is fed to the networks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// One encoder over the whole state text.
    #[default]
    Whole,
    /// Separate encoders for observation, free look and inventory.
    Split,
}

impl Layout {
    pub fn state_fields(self) -> &'static [&'static str] {
        match self {
            Layout::Whole => &["state"],
            Layout::Split => &["observation", "free_look", "inventory"],
        }
    }

    pub fn v_fields(self) -> Vec<&'static str> {
        let mut f = vec!["task"];
        f.extend(self.state_fields());
        f
    }

    pub fn q_fields(self) -> Vec<&'static str> {
        let mut f = self.v_fields();
        f.push("action");
        f
    }

    fn from_v_fields(fields: &[String]) -> Result<Self> {
        [Layout::Whole, Layout::Split]
            .into_iter()
            .find(|l| l.v_fields() == fields)
            .ok_or_else(|| Error::config(format!("unrecognised field layout {fields:?}")))
    }

    /// Token sequences of `[task, state fields...]`.
    pub fn tokenize_context(self, task: &Task, state: &EnvState, vocab: usize) -> Vec<Vec<usize>> {
        let mut out = vec![tokenize(&task.description, vocab)];
        match self {
            Layout::Whole => out.push(tokenize(&state.whole(), vocab)),
            Layout::Split => {
                out.push(tokenize(&state.observation, vocab));
                out.push(tokenize(&state.free_look, vocab));
                out.push(tokenize(&state.inventory, vocab));
            }
        }
        out
    }
}

/// One or two Q-heads; with two, the estimate is their minimum.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    pub heads: Vec<FieldNetwork>,
}

impl QNetwork {
    fn new(config: NetConfig, layout: Layout, twin: bool, rng: &mut impl Rng) -> Self {
        let fields = layout.q_fields();
        let n = if twin { 2 } else { 1 };
        QNetwork {
            heads: (0..n).map(|_| FieldNetwork::new(config, &fields, rng)).collect(),
        }
    }

    fn zeros(config: NetConfig, layout: Layout, twin: bool) -> Self {
        let fields = layout.q_fields();
        let n = if twin { 2 } else { 1 };
        QNetwork {
            heads: (0..n).map(|_| FieldNetwork::zeros(config, &fields)).collect(),
        }
    }

    pub fn is_twin(&self) -> bool {
        self.heads.len() == 2
    }

    /// Per-head outputs.
    pub fn head_values(&self, fields: &[&[usize]]) -> Result<Vec<f64>> {
        self.heads.iter().map(|h| h.forward(fields)).collect()
    }

    pub fn forward(&self, fields: &[&[usize]]) -> Result<f64> {
        Ok(self.head_values(fields)?.into_iter().fold(f64::INFINITY, f64::min))
    }

    pub fn soft_update(&mut self, online: &QNetwork, rho: f64) {
        for (t, o) in self.heads.iter_mut().zip(&online.heads) {
            t.soft_update(o, rho);
        }
    }

    fn architecture_id(&self) -> &'static str {
        if self.is_twin() {
            "q_twin"
        } else {
            "q_single"
        }
    }
}

impl Parameterized for QNetwork {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.heads
            .iter()
            .enumerate()
            .flat_map(|(i, h)| {
                h.named_tensors()
                    .into_iter()
                    .map(move |(n, t)| (format!("q{}.{n}", i + 1), t))
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.heads.iter_mut().flat_map(|h| h.tensors_mut()).collect()
    }
}

/// Hyperparameters of critic training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IqlConfig {
    pub tau: f64,
    pub gamma: f64,
    pub rho: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub twin_q: bool,
    pub seed: u64,
    pub adam: AdamConfig,
    pub net: NetConfig,
    pub layout: Layout,
    pub reward_mode: RewardMode,
}

impl Default for IqlConfig {
    fn default() -> Self {
        IqlConfig {
            tau: DEFAULT_TAU,
            gamma: DEFAULT_GAMMA,
            rho: DEFAULT_RHO,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            twin_q: false,
            seed: 0,
            adam: AdamConfig::default(),
            net: NetConfig::default(),
            layout: Layout::Whole,
            reward_mode: RewardMode::Delta,
        }
    }
}

impl IqlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        if self.net.vocab_size < 2 || self.net.embed_dim == 0 || self.net.hidden_dim == 0 {
            return Err(Error::config(format!("invalid network dimensions {:?}", self.net)));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// A trained (or freshly initialised) critic.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticParams {
    pub layout: Layout,
    pub seed: u64,
    pub q: QNetwork,
    pub q_target: QNetwork,
    pub v: FieldNetwork,
}

impl CriticParams {
    /// Random initialisation; the target starts as a copy of the online Q.
    pub fn init(cfg: &IqlConfig) -> Self {
        let mut rng = seed::rng(cfg.seed, &[0x1417]);
        let q = QNetwork::new(cfg.net, cfg.layout, cfg.twin_q, &mut rng);
        let v = FieldNetwork::new(cfg.net, &cfg.layout.v_fields(), &mut rng);
        CriticParams {
            layout: cfg.layout,
            seed: cfg.seed,
            q_target: q.clone(),
            q,
            v,
        }
    }

    pub fn net_config(&self) -> NetConfig {
        self.v.config()
    }

    pub fn is_twin(&self) -> bool {
        self.q.is_twin()
    }

    fn q_fields<'a>(context: &'a [Vec<usize>], action: &'a [usize]) -> Vec<&'a [usize]> {
        let mut f: Vec<&[usize]> = context.iter().map(|v| v.as_slice()).collect();
        f.push(action);
        f
    }

    /// `Q(s, a)` of the single head (or the first head of a twin critic).
    pub fn q_forward(&self, task: &Task, state: &EnvState, action: &ActionText) -> Result<f64> {
        let vocab = self.net_config().vocab_size;
        let ctx = self.layout.tokenize_context(task, state, vocab);
        let a = tokenize(action.as_str(), vocab);
        self.q.heads[0].forward(&Self::q_fields(&ctx, &a))
    }

    /// `min(Q1, Q2)`; a configuration error on a single-head critic.
    pub fn twin_q_forward(&self, task: &Task, state: &EnvState, action: &ActionText) -> Result<f64> {
        if !self.is_twin() {
            return Err(Error::config("critic was trained without twin Q-heads"));
        }
        let vocab = self.net_config().vocab_size;
        let ctx = self.layout.tokenize_context(task, state, vocab);
        let a = tokenize(action.as_str(), vocab);
        self.q.forward(&Self::q_fields(&ctx, &a))
    }

    pub fn v_forward(&self, task: &Task, state: &EnvState) -> Result<f64> {
        let ctx = self.layout.tokenize_context(task, state, self.net_config().vocab_size);
        let f: Vec<&[usize]> = ctx.iter().map(|v| v.as_slice()).collect();
        self.v.forward(&f)
    }

    /// Critic estimate for each action in one state (the minimum over heads for a
    /// twin critic). Task and state are encoded once and shared by all actions.
    pub fn action_values(&self, task: &Task, state: &EnvState, actions: &[ActionText]) -> Result<Vec<f64>> {
        let vocab = self.net_config().vocab_size;
        let ctx = self.layout.tokenize_context(task, state, vocab);
        let n_ctx = ctx.len();
        let mut out = vec![f64::INFINITY; actions.len()];
        for head in &self.q.heads {
            let encoded: Vec<Vec<f64>> = ctx
                .iter()
                .enumerate()
                .map(|(i, t)| head.encode_field(i, t))
                .collect::<Result<_>>()?;
            for (slot, action) in out.iter_mut().zip(actions) {
                let a = head.encode_field(n_ctx, &tokenize(action.as_str(), vocab))?;
                let mut refs: Vec<&[f64]> = encoded.iter().map(|e| e.as_slice()).collect();
                refs.push(&a);
                *slot = slot.min(head.forward_encoded(&refs)?);
            }
        }
        Ok(out)
    }

    fn header(&self, architecture_id: &str, fields: &[String]) -> CheckpointHeader {
        let c = self.net_config();
        CheckpointHeader {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture_id: architecture_id.to_owned(),
            vocab_size: c.vocab_size,
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            seed: self.seed,
            fields: fields.to_vec(),
        }
    }

    /// Writes the online Q-network and the value network into `dir`.
    ///
    /// The target network is not persisted; inference only reads the online heads.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let q_fields = self.q.heads[0].fields().to_vec();
        Checkpoint::capture(self.header(self.q.architecture_id(), &q_fields), &self.q).save(&dir.join(Q_CHECKPOINT))?;
        Checkpoint::capture(self.header("v", self.v.fields()), &self.v).save(&dir.join(V_CHECKPOINT))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let qc = Checkpoint::load(&dir.join(Q_CHECKPOINT))?;
        let vc = Checkpoint::load(&dir.join(V_CHECKPOINT))?;
        if vc.header.architecture_id != "v" {
            return Err(Error::config(format!(
                "{V_CHECKPOINT} holds architecture {:?}",
                vc.header.architecture_id
            )));
        }
        let twin = match qc.header.architecture_id.as_str() {
            "q_single" => false,
            "q_twin" => true,
            other => return Err(Error::config(format!("{Q_CHECKPOINT} holds architecture {other:?}"))),
        };
        let config = vc.header.net_config();
        if qc.header.net_config() != config {
            return Err(Error::Shape("Q and V checkpoints disagree on dimensions".into()));
        }
        let layout = Layout::from_v_fields(&vc.header.fields)?;
        if qc.header.fields.iter().map(|s| s.as_str()).collect::<Vec<_>>() != layout.q_fields() {
            return Err(Error::config("Q checkpoint fields do not match the value network"));
        }
        let mut q = QNetwork::zeros(config, layout, twin);
        qc.restore_into(&mut q)?;
        let mut v = FieldNetwork::zeros(config, &layout.v_fields());
        vc.restore_into(&mut v)?;
        Ok(CriticParams {
            layout,
            seed: vc.header.seed,
            q_target: q.clone(),
            q,
            v,
        })
    }
}

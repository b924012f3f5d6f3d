use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{RescoreConfig, DEFAULT_MAX_STEPS};
use crate::critic::{self, IqlConfig, Layout};
use crate::error::{Error, Result};
use crate::experience::{RewardMode, DEFAULT_HISTORY_WINDOW};
use crate::nn::{self, AdamConfig, NetConfig};
use crate::policy::DEFAULT_K;
use crate::textlab::{BehaviorPolicy, FIXTURES};

/// Everything a command can be told. The config file uses the same keys as the
/// long flags (with underscores); flags win over the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    /// Bundled spec name or path to a spec file.
    pub env: String,
    /// Run only this task; otherwise episodes cycle through all tasks.
    pub task: Option<String>,
    /// `mock` or the base URL of a policy service.
    pub policy: String,
    pub mock_error_rate: f64,
    /// Base URL of an embedding service; the built-in trigram embedder otherwise.
    pub embedder: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    /// Critic checkpoint directory.
    pub critic: Option<PathBuf>,
    /// Trajectory file for `train`; defaults to the one `collect` writes.
    pub data: Option<PathBuf>,
    pub strict: bool,
    pub out: PathBuf,
    pub jobs: usize,
    pub episodes: usize,
    /// Also evaluate the critic-only and static-weight variants.
    pub ablations: bool,

    pub b: f64,
    pub d: f64,
    pub k: usize,
    pub static_alpha: Option<f64>,
    pub max_steps: usize,
    pub history_window: usize,

    pub tau: f64,
    pub gamma: f64,
    pub rho: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub twin_q: bool,
    pub layout: Layout,
    pub reward_mode: RewardMode,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,

    pub behavior: Behavior,
    pub epsilon: f64,
    pub collect_episodes: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Optimal,
    #[default]
    EpsilonGreedy,
    UniformRandom,
}

impl Default for Settings {
    fn default() -> Self {
        let rescore = RescoreConfig::default();
        let iql = IqlConfig::default();
        Settings {
            seed: 0,
            env: "lab3".into(),
            task: None,
            policy: "mock".into(),
            mock_error_rate: 0.4,
            embedder: None,
            timeout_ms: 30_000,
            retries: 2,
            critic: None,
            data: None,
            strict: true,
            out: PathBuf::from("out"),
            jobs: 1,
            episodes: 200,
            ablations: false,
            b: rescore.b,
            d: rescore.d,
            k: DEFAULT_K,
            static_alpha: None,
            max_steps: DEFAULT_MAX_STEPS,
            history_window: DEFAULT_HISTORY_WINDOW,
            tau: iql.tau,
            gamma: iql.gamma,
            rho: iql.rho,
            epochs: iql.epochs,
            batch_size: iql.batch_size,
            lr: iql.adam.lr,
            twin_q: false,
            layout: Layout::Whole,
            reward_mode: RewardMode::Delta,
            vocab_size: nn::DEFAULT_VOCAB_SIZE,
            embed_dim: nn::DEFAULT_EMBED_DIM,
            hidden_dim: nn::DEFAULT_HIDDEN_DIM,
            behavior: Behavior::EpsilonGreedy,
            epsilon: 0.3,
            collect_episodes: 500,
        }
    }
}

fn toml_error(path: &Path, text: &str, e: impl std::fmt::Display, span: Option<std::ops::Range<usize>>) -> Error {
    let line = span.map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    let message = e.to_string();
    let message = message.lines().last().unwrap_or_default();
    Error::config(format!("{}: line {line}: {message}", path.display()))
}

impl Settings {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(path, text, &e, e.span()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(format!("cannot encode settings: {e}")))
    }

    pub fn rescore(&self) -> RescoreConfig {
        RescoreConfig {
            b: self.b,
            d: self.d,
            k: self.k,
            static_alpha: self.static_alpha,
            max_steps: self.max_steps,
            history_window: self.history_window,
        }
    }

    pub fn iql(&self) -> IqlConfig {
        IqlConfig {
            tau: self.tau,
            gamma: self.gamma,
            rho: self.rho,
            epochs: self.epochs,
            batch_size: self.batch_size,
            twin_q: self.twin_q,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            net: NetConfig {
                vocab_size: self.vocab_size,
                embed_dim: self.embed_dim,
                hidden_dim: self.hidden_dim,
            },
            layout: self.layout,
            reward_mode: self.reward_mode,
        }
    }

    pub fn behavior_policy(&self) -> BehaviorPolicy {
        match self.behavior {
            Behavior::Optimal => BehaviorPolicy::Optimal,
            Behavior::EpsilonGreedy => BehaviorPolicy::EpsilonGreedy(self.epsilon),
            Behavior::UniformRandom => BehaviorPolicy::UniformRandom,
        }
    }

    pub fn trajectories_path(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join(super::TRAJECTORIES))
    }

    pub fn is_remote_policy(&self) -> bool {
        self.policy.starts_with("http://") || self.policy.starts_with("https://")
    }

    /// Checks values and that referenced paths exist.
    pub fn validate(&self) -> Result<()> {
        self.rescore().validate()?;
        self.iql().validate()?;
        if self.policy != "mock" && !self.is_remote_policy() {
            return Err(Error::config(format!(
                "policy must be `mock` or an http(s) URL, got {:?}",
                self.policy
            )));
        }
        if !(0.0..=1.0).contains(&self.mock_error_rate) || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("mock_error_rate and epsilon must lie in [0, 1]"));
        }
        if self.jobs == 0 || self.episodes == 0 || self.collect_episodes == 0 {
            return Err(Error::config("jobs, episodes and collect_episodes must be positive"));
        }
        if !FIXTURES.contains(&self.env.as_str()) && !Path::new(&self.env).is_file() {
            return Err(Error::config(format!(
                "environment {:?} is neither a bundled spec ({}) nor a file",
                self.env,
                FIXTURES.join(", ")
            )));
        }
        if let Some(dir) = &self.critic {
            let q = dir.join(critic::Q_CHECKPOINT);
            if !q.is_file() {
                return Err(Error::config(format!("no critic checkpoint at {}", q.display())));
            }
        }
        Ok(())
    }
}

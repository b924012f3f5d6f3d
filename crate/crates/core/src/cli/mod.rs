//! Command-line workflow: collect, train, run, eval, report and pipeline.
//!
//! Every command writes into `--out`. Outputs are deterministic given the settings;
//! wall-clock timings go to separate `*_timings.json` files.

mod commands;
mod settings;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_collect, cmd_eval, cmd_pipeline, cmd_report, cmd_run, cmd_train, VariantReport};
pub use settings::{Behavior, Settings};

use crate::critic::Layout;
use crate::error::Result;
use crate::experience::RewardMode;

pub const TRAJECTORIES: &str = "trajectories.jsonl";
pub const CRITIC_DIR: &str = "critic";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_TIMINGS: &str = "train_timings.json";
pub const AUDIT: &str = "audit.jsonl";
pub const EPISODES: &str = "episodes.jsonl";
pub const RUN_TIMINGS: &str = "run_timings.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const EVAL_DIR: &str = "eval";
pub const REPORT_TEXT: &str = "report.txt";
pub const LOSS_CURVE: &str = "loss_curve.tsv";
pub const RESULTS_TABLE: &str = "results.tsv";

#[derive(Debug, Parser)]
#[command(name = "rescore-agent", version, about = "Offline critic training and action rescoring for text agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out a scripted behavior policy and store the trajectories.
    Collect {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        collect: CollectArgs,
    },
    /// Train a critic on stored trajectories.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Play episodes and write per-step audits.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        agent: AgentArgs,
    },
    /// Compare the policy alone with the rescored agent.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        agent: AgentArgs,
    },
    /// Render loss curves and result tables from an output directory.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// collect, train, eval and report in one go.
    Pipeline {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        collect: CollectArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        agent: AgentArgs,
    },
}

#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML file with any of the settings below; flags override it.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Bundled spec (lab3, lab5-sparse, lab7) or a spec file.
    #[arg(long, value_name = "PATH")]
    pub env: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct CollectArgs {
    #[arg(long, value_enum)]
    pub behavior: Option<Behavior>,
    /// Exploration rate of the epsilon-greedy behavior.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_name = "N")]
    pub collect_episodes: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// Trajectory file (default: OUT/trajectories.jsonl).
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Ignore unknown trajectory fields instead of rejecting them.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Target network smoothing.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub twin_q: bool,
    #[arg(long, value_parser = parse_layout)]
    pub layout: Option<Layout>,
    #[arg(long, value_parser = parse_reward_mode)]
    pub reward_mode: Option<RewardMode>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
}

#[derive(Debug, Default, Args)]
pub struct AgentArgs {
    /// `mock` or the base URL of a policy service.
    #[arg(long, value_name = "mock|URL")]
    pub policy: Option<String>,
    /// Chance per step that the mock policy promotes its scripted wrong action.
    #[arg(long)]
    pub mock_error_rate: Option<f64>,
    /// Base URL of an embedding service (default: built-in trigram embedder).
    #[arg(long, value_name = "URL")]
    pub embedder: Option<String>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Critic checkpoint directory; without one the policy acts alone.
    #[arg(long, value_name = "PATH")]
    pub critic: Option<PathBuf>,
    /// Floor of the policy weight.
    #[arg(long)]
    pub b: Option<f64>,
    /// Decay of the policy weight.
    #[arg(long)]
    pub d: Option<f64>,
    /// Candidates sampled per step.
    #[arg(long)]
    pub k: Option<usize>,
    /// Use this policy weight at every step instead of the schedule.
    #[arg(long, value_name = "X")]
    pub static_alpha: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub history_window: Option<usize>,
    /// Only play this task (default: cycle through all tasks).
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, value_name = "N")]
    pub episodes: Option<usize>,
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// Also evaluate the critic-only and static-weight variants.
    #[arg(long)]
    pub ablations: bool,
}

fn parse_layout(s: &str) -> std::result::Result<Layout, String> {
    match s {
        "whole" => Ok(Layout::Whole),
        "split" => Ok(Layout::Split),
        _ => Err("expected `whole` or `split`".into()),
    }
}

fn parse_reward_mode(s: &str) -> std::result::Result<RewardMode, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

macro_rules! set {
    ($s:ident, $a:ident, $($f:ident),+) => {
        $(if let Some(v) = $a.$f.clone() { $s.$f = v; })+
    };
}

impl CommonArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let a = self;
        set!(s, a, seed, env, out);
        Ok(s)
    }
}

impl CollectArgs {
    fn apply(&self, s: &mut Settings) {
        let a = self;
        set!(s, a, behavior, epsilon, collect_episodes);
    }
}

impl TrainArgs {
    fn apply(&self, s: &mut Settings) {
        let a = self;
        set!(s, a, tau, gamma, rho, epochs, batch_size, lr, layout, reward_mode, vocab_size, embed_dim, hidden_dim);
        if self.data.is_some() {
            s.data = self.data.clone();
        }
        if self.lenient {
            s.strict = false;
        }
        if self.twin_q {
            s.twin_q = true;
        }
    }
}

impl AgentArgs {
    fn apply(&self, s: &mut Settings) {
        let a = self;
        set!(s, a, policy, mock_error_rate, timeout_ms, retries, b, d, k, max_steps, history_window, episodes, jobs);
        if self.embedder.is_some() {
            s.embedder = self.embedder.clone();
        }
        if self.critic.is_some() {
            s.critic = self.critic.clone();
        }
        if self.static_alpha.is_some() {
            s.static_alpha = self.static_alpha;
        }
        if self.task.is_some() {
            s.task = self.task.clone();
        }
        if self.ablations {
            s.ablations = true;
        }
    }
}

impl Command {
    /// Merged settings: defaults, then the config file, then flags.
    pub fn settings(&self) -> Result<Settings> {
        let mut s = match self {
            Command::Collect { common, collect } => {
                let mut s = common.settings()?;
                collect.apply(&mut s);
                s
            }
            Command::Train { common, train } => {
                let mut s = common.settings()?;
                train.apply(&mut s);
                s
            }
            Command::Run { common, agent } | Command::Eval { common, agent } => {
                let mut s = common.settings()?;
                agent.apply(&mut s);
                s
            }
            Command::Report { common } => common.settings()?,
            Command::Pipeline {
                common,
                collect,
                train,
                agent,
            } => {
                let mut s = common.settings()?;
                collect.apply(&mut s);
                train.apply(&mut s);
                agent.apply(&mut s);
                s
            }
        };
        if s.out.as_os_str().is_empty() {
            s.out = PathBuf::from(".");
        }
        Ok(s)
    }
}

/// Runs a parsed command with its merged settings.
pub fn execute(cli: &Cli) -> Result<()> {
    let s = cli.command.settings()?;
    s.validate()?;
    match &cli.command {
        Command::Collect { .. } => cmd_collect(&s).map(|_| ()),
        Command::Train { .. } => cmd_train(&s).map(|_| ()),
        Command::Run { .. } => cmd_run(&s).map(|_| ()),
        Command::Eval { .. } => cmd_eval(&s).map(|_| ()),
        Command::Report { .. } => cmd_report(&s).map(|_| ()),
        Command::Pipeline { .. } => cmd_pipeline(&s).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 5\nb = 0.3\nk = 7\n").unwrap();
        let cli = Cli::try_parse_from([
            "rescore-agent",
            "eval",
            "--config",
            path.to_str().unwrap(),
            "--b",
            "0.5",
            "--static-alpha",
            "0.6",
        ])
        .unwrap();
        let s = cli.command.settings().unwrap();
        assert_eq!((s.seed, s.b, s.k, s.static_alpha), (5, 0.5, 7, Some(0.6)));
    }

    #[test]
    fn unknown_and_misplaced_flags_are_rejected() {
        assert!(Cli::try_parse_from(["rescore-agent", "eval", "--bogus", "1"]).is_err());
        // training flags do not belong to eval
        assert!(Cli::try_parse_from(["rescore-agent", "eval", "--tau", "0.7"]).is_err());
        assert!(Cli::try_parse_from(["rescore-agent", "pipeline", "--tau", "0.7", "--b", "0.5"]).is_ok());
    }
}

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::*;
use crate::agent::{
    compute_metrics, config_hash, evaluate, write_audit, ActionCritic, EpisodeRecord, EpisodeStatus, Environment,
    EvalReport, RescoreConfig,
};
use crate::critic::{self, train_iql, CriticParams, EpochLog};
use crate::error::{Error, Result};
use crate::experience::{read_memory, write_memory, ExperienceMemory, ReadOptions};
use crate::grounding::{Embedder, RemoteEmbedder, TrigramEmbedder};
use crate::policy::{Policy, RemotePolicy};
use crate::textlab::{behavior_rollout, lab_mock_policy, EnvSpec, LabEnv, MockLikelihoods};
use crate::transport::HttpConfig;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let file = File::create(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(BufWriter::new(file))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(BufReader::new(file))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Writes the trajectory file and returns the collected memory.
pub fn cmd_collect(s: &Settings) -> Result<ExperienceMemory> {
    let spec = EnvSpec::resolve(&s.env)?;
    let trajectories = behavior_rollout(&spec, s.behavior_policy(), s.collect_episodes, s.seed)?;
    let mut memory = ExperienceMemory::new();
    for t in trajectories {
        memory.insert(t)?;
    }
    let path = s.out.join(TRAJECTORIES);
    let mut w = create(&path)?;
    write_memory(&memory, &mut w)?;
    w.flush()?;
    println!(
        "collected {} trajectories ({} steps, success rate {:.1}%) -> {}",
        memory.len(),
        memory.step_count(),
        memory.success_rate(),
        path.display()
    );
    Ok(memory)
}

/// Trains a critic; writes the checkpoint directory, the loss log and a timing sidecar.
pub fn cmd_train(s: &Settings) -> Result<CriticParams> {
    let data = s.trajectories_path();
    let opts = ReadOptions {
        strict: s.strict,
        source_name: data.display().to_string(),
    };
    let memory = read_memory(open(&data)?, &opts)?;
    if memory.is_empty() {
        return Err(Error::config(format!("{} holds no trajectories", data.display())));
    }
    log::info!("training on {} steps from {}", memory.step_count(), data.display());
    let (params, log) = train_iql(&memory, &s.iql())?;
    let dir = s.out.join(CRITIC_DIR);
    params.save(&dir)?;
    let mut w = create(&s.out.join(TRAIN_LOG))?;
    log.write_jsonl(&mut w)?;
    w.flush()?;
    let mut w = create(&s.out.join(TRAIN_TIMINGS))?;
    log.write_timings(&mut w)?;
    w.flush()?;
    if let Some(last) = log.epochs.last() {
        println!(
            "trained {} epochs: loss_v {:.6}, loss_q {:.6} -> {}",
            log.epochs.len(),
            last.mean_loss_v,
            last.mean_loss_q,
            dir.display()
        );
    }
    Ok(params)
}

struct Agent {
    spec: EnvSpec,
    tasks: Vec<String>,
    policy: Box<dyn Policy>,
    embedder: Box<dyn Embedder>,
    critic: Option<CriticParams>,
    critic_digest: Option<String>,
}

impl Agent {
    fn build(s: &Settings) -> Result<Self> {
        let spec = EnvSpec::resolve(&s.env)?;
        let tasks = match &s.task {
            Some(t) => {
                spec.task_index(t)?;
                vec![t.clone()]
            }
            None => spec.tasks.iter().map(|t| t.id.clone()).collect(),
        };
        let http = |url: &str| HttpConfig {
            url: url.to_owned(),
            timeout_ms: s.timeout_ms,
            retries: s.retries,
        };
        let policy: Box<dyn Policy> = if s.is_remote_policy() {
            Box::new(RemotePolicy::new(&http(&s.policy)))
        } else {
            Box::new(lab_mock_policy(&spec, MockLikelihoods::default(), s.mock_error_rate)?)
        };
        let embedder: Box<dyn Embedder> = match &s.embedder {
            Some(url) => Box::new(RemoteEmbedder::connect(&http(url))?),
            None => Box::new(TrigramEmbedder::default()),
        };
        let (critic, critic_digest) = match &s.critic {
            Some(dir) => (Some(CriticParams::load(dir)?), Some(checkpoint_digest(dir)?)),
            None => (None, None),
        };
        Ok(Agent {
            spec,
            tasks,
            policy,
            embedder,
            critic,
            critic_digest,
        })
    }

    fn evaluate(&self, cfg: &RescoreConfig, with_critic: bool, s: &Settings) -> Result<Vec<EpisodeRecord>> {
        let critic = if with_critic {
            self.critic.as_ref().map(|c| c as &dyn ActionCritic)
        } else {
            None
        };
        let make = |e: usize| -> Result<Box<dyn Environment>> {
            Ok(Box::new(LabEnv::new(&self.spec, &self.tasks[e % self.tasks.len()])?))
        };
        evaluate(
            make,
            self.policy.as_ref(),
            critic,
            self.embedder.as_ref(),
            cfg,
            s.episodes,
            s.seed,
            s.jobs,
        )
    }
}

fn checkpoint_digest(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in [critic::Q_CHECKPOINT, critic::V_CHECKPOINT] {
        h.update(fs::read(dir.join(name))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// What a report's hash covers: everything that can change an episode.
#[derive(Serialize)]
struct HashInput<'a> {
    variant: &'a str,
    env: &'a str,
    tasks: &'a [String],
    policy: &'a str,
    mock_error_rate: f64,
    embedder: Option<&'a str>,
    critic: Option<&'a str>,
    rescore: &'a RescoreConfig,
    episodes: usize,
    seed: u64,
}

fn report_for(name: &str, agent: &Agent, cfg: &RescoreConfig, with_critic: bool, s: &Settings, records: &[EpisodeRecord]) -> Result<EvalReport> {
    let hash = config_hash(&HashInput {
        variant: name,
        env: &s.env,
        tasks: &agent.tasks,
        policy: &s.policy,
        mock_error_rate: s.mock_error_rate,
        embedder: s.embedder.as_deref(),
        critic: if with_critic { agent.critic_digest.as_deref() } else { None },
        rescore: cfg,
        episodes: s.episodes,
        seed: s.seed,
    })?;
    Ok(EvalReport::new(compute_metrics(records)?, hash))
}

#[derive(Serialize)]
struct EpisodeSummary<'a> {
    episode: usize,
    task_id: &'a str,
    seed: u64,
    final_score: f64,
    success: bool,
    n_steps: usize,
    status: &'a EpisodeStatus,
}

fn write_episodes(records: &[EpisodeRecord], audit: &Path, episodes: &Path, timings: Option<&Path>) -> Result<()> {
    let mut w = create(audit)?;
    write_audit(records, &mut w)?;
    w.flush()?;
    let mut w = create(episodes)?;
    for (i, r) in records.iter().enumerate() {
        let line = EpisodeSummary {
            episode: i,
            task_id: &r.task_id,
            seed: r.seed,
            final_score: r.final_score,
            success: r.success,
            n_steps: r.n_steps(),
            status: &r.status,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    if let Some(path) = timings {
        let mut w = create(path)?;
        for (i, r) in records.iter().enumerate() {
            writeln!(w, "{{\"episode\":{i},\"wall_ms\":{}}}", r.wall_ms)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Plays `episodes` episodes with the configured agent and writes their audits.
pub fn cmd_run(s: &Settings) -> Result<EvalReport> {
    let agent = Agent::build(s)?;
    let cfg = s.rescore();
    let records = agent.evaluate(&cfg, true, s)?;
    write_episodes(
        &records,
        &s.out.join(AUDIT),
        &s.out.join(EPISODES),
        Some(&s.out.join(RUN_TIMINGS)),
    )?;
    let name = if agent.critic.is_some() { "rescored" } else { "policy_only" };
    let report = report_for(name, &agent, &cfg, true, s, &records)?;
    println!(
        "{name}: {} episodes, AS {:.2}, SR {:.2}% -> {}",
        report.n_episodes,
        report.average_score,
        report.success_rate,
        s.out.join(AUDIT).display()
    );
    Ok(report)
}

/// One row of the evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

#[derive(Serialize, Deserialize)]
struct EvalFile {
    variants: Vec<VariantReport>,
}

fn variants(s: &Settings, has_critic: bool) -> Vec<(&'static str, RescoreConfig, bool)> {
    let base = s.rescore();
    let mut out = vec![("policy_only", base.clone(), false)];
    if !has_critic {
        return out;
    }
    out.push(("rescored", base.clone(), true));
    if s.ablations {
        let critic_only = RescoreConfig {
            b: 0.0,
            d: 0.0,
            static_alpha: None,
            ..base.clone()
        };
        out.push(("critic_only", critic_only, true));
        if base.static_alpha.is_none() {
            let fixed = RescoreConfig {
                static_alpha: Some(0.6),
                ..base
            };
            out.push(("static_0.6", fixed, true));
        }
    }
    out
}

/// Evaluates the policy alone and, with a critic, the rescored agent on the same
/// seeds; writes the report and one audit file per variant.
pub fn cmd_eval(s: &Settings) -> Result<Vec<VariantReport>> {
    let agent = Agent::build(s)?;
    let mut reports = Vec::new();
    for (name, cfg, with_critic) in variants(s, agent.critic.is_some()) {
        let records = agent.evaluate(&cfg, with_critic, s)?;
        let dir = s.out.join(EVAL_DIR);
        write_episodes(
            &records,
            &dir.join(format!("{name}.audit.jsonl")),
            &dir.join(format!("{name}.episodes.jsonl")),
            None,
        )?;
        let report = report_for(name, &agent, &cfg, with_critic, s, &records)?;
        println!(
            "{name:<12} AS {:>6.2}  SR {:>6.2}%  steps {:>5.2}",
            report.average_score, report.success_rate, report.mean_steps
        );
        reports.push(VariantReport {
            name: name.to_owned(),
            report,
        });
    }
    let mut w = create(&s.out.join(EVAL_REPORT))?;
    serde_json::to_writer_pretty(
        &mut w,
        &EvalFile {
            variants: reports.clone(),
        },
    )?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(reports)
}

fn read_train_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Renders whatever `train` and `eval` left in the output directory as plain text
/// plus tab-separated plot data. Returns the text.
pub fn cmd_report(s: &Settings) -> Result<String> {
    let log_path = s.out.join(TRAIN_LOG);
    let eval_path = s.out.join(EVAL_REPORT);
    if !log_path.is_file() && !eval_path.is_file() {
        return Err(Error::config(format!(
            "nothing to report in {}: run train or eval first",
            s.out.display()
        )));
    }
    let mut text = String::new();
    if log_path.is_file() {
        let epochs = read_train_log(&log_path)?;
        let mut tsv = String::from("epoch\tloss_v\tloss_q\n");
        let _ = writeln!(text, "Critic training ({} epochs)", epochs.len());
        let _ = writeln!(text, "{:>5}  {:>12}  {:>12}", "epoch", "loss_v", "loss_q");
        for e in &epochs {
            let _ = writeln!(tsv, "{}\t{}\t{}", e.epoch, e.mean_loss_v, e.mean_loss_q);
            let _ = writeln!(text, "{:>5}  {:>12.6}  {:>12.6}", e.epoch, e.mean_loss_v, e.mean_loss_q);
        }
        write_text(&s.out.join(LOSS_CURVE), &tsv)?;
        text.push('\n');
    }
    if eval_path.is_file() {
        let file: EvalFile = serde_json::from_reader(open(&eval_path)?)?;
        let mut tsv = String::from("variant\tAS\tSR\tmean_steps\tn_episodes\n");
        let _ = writeln!(text, "Evaluation");
        let _ = writeln!(
            text,
            "{:<12}  {:>7}  {:>7}  {:>6}  {:>8}",
            "variant", "AS", "SR", "steps", "episodes"
        );
        for v in &file.variants {
            let r = &v.report;
            let _ = writeln!(
                tsv,
                "{}\t{}\t{}\t{}\t{}",
                v.name, r.average_score, r.success_rate, r.mean_steps, r.n_episodes
            );
            let _ = writeln!(
                text,
                "{:<12}  {:>7.2}  {:>7.2}  {:>6.2}  {:>8}",
                v.name, r.average_score, r.success_rate, r.mean_steps, r.n_episodes
            );
        }
        write_text(&s.out.join(RESULTS_TABLE), &tsv)?;
    }
    write_text(&s.out.join(REPORT_TEXT), &text)?;
    print!("{text}");
    Ok(text)
}

/// collect, train, eval with the fresh critic, report.
pub fn cmd_pipeline(s: &Settings) -> Result<Vec<VariantReport>> {
    cmd_collect(s)?;
    let train = Settings {
        data: Some(s.out.join(TRAJECTORIES)),
        ..s.clone()
    };
    cmd_train(&train)?;
    let eval = Settings {
        critic: Some(critic_dir(&s.out)),
        ..s.clone()
    };
    let reports = cmd_eval(&eval)?;
    cmd_report(s)?;
    Ok(reports)
}

fn critic_dir(out: &Path) -> PathBuf {
    out.join(CRITIC_DIR)
}

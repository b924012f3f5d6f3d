//! Trains a critic, then compares the mock policy alone with dynamic rescoring and
//! prints the step-by-step audit of one rescored episode.
//!
//!     cargo run --release --example rescore_episode

use rescore_agent::agent::{compute_metrics, evaluate, run_episode, ActionCritic, Environment, RescoreConfig};
use rescore_agent::critic::{train_iql, IqlConfig};
use rescore_agent::experience::ExperienceMemory;
use rescore_agent::grounding::TrigramEmbedder;
use rescore_agent::nn::{AdamConfig, NetConfig};
use rescore_agent::textlab::{behavior_rollout, lab_mock_policy, BehaviorPolicy, EnvSpec, LabEnv, MockLikelihoods};
use rescore_agent::Result;

fn main() -> Result<()> {
    let spec = EnvSpec::fixture("lab3")?;
    let task_id = spec.tasks[0].id.clone();
    let mut memory = ExperienceMemory::new();
    for t in behavior_rollout(&spec, BehaviorPolicy::EpsilonGreedy(0.3), 300, 2)? {
        memory.insert(t)?;
    }
    let cfg = IqlConfig {
        net: NetConfig {
            vocab_size: 512,
            embed_dim: 16,
            hidden_dim: 32,
        },
        adam: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        ..IqlConfig::default()
    };
    let (critic, _) = train_iql(&memory, &cfg)?;

    let policy = lab_mock_policy(&spec, MockLikelihoods::default(), 0.4)?;
    let embedder = TrigramEmbedder::default();
    let make = |_: usize| -> Result<Box<dyn Environment>> { Ok(Box::new(LabEnv::new(&spec, &task_id)?)) };
    let variants: [(&str, Option<&dyn ActionCritic>); 2] = [("policy only", None), ("rescored", Some(&critic))];
    for (name, c) in variants {
        let records = evaluate(make, &policy, c, &embedder, &RescoreConfig::default(), 100, 5, 1)?;
        let m = compute_metrics(&records)?;
        println!("{name:<12} SR {:>5.1}  AS {:>5.1}  steps {:.1}", m.success_rate, m.average_score, m.mean_steps);
    }

    let mut env = LabEnv::new(&spec, &task_id)?;
    let rec = run_episode(&mut env, &policy, Some(&critic), &embedder, &RescoreConfig::default(), 5)?;
    println!("\none rescored episode ({:?}):", rec.status);
    for s in &rec.steps {
        println!("t={} alpha={:.3}", s.t, s.alpha);
        for c in &s.candidates {
            let mark = if c.text == s.chosen { '*' } else { ' ' };
            let q = c.q_norm.map_or("-".to_owned(), |q| format!("{q:.3}"));
            println!("  {mark} {:<22} p={:.3} q={q} combined={:.3}", c.text, c.p_norm, c.combined);
        }
    }
    Ok(())
}

//! Collects epsilon-greedy trajectories in `lab3`, trains a small critic offline and
//! writes the checkpoints to a directory (default `critic-demo`).
//!
//!     cargo run --example train_critic -- [out-dir]

use rescore_agent::critic::{train_iql, IqlConfig};
use rescore_agent::experience::ExperienceMemory;
use rescore_agent::nn::{AdamConfig, NetConfig};
use rescore_agent::textlab::{behavior_rollout, BehaviorPolicy, EnvSpec};

fn main() -> rescore_agent::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "critic-demo".into());
    let spec = EnvSpec::fixture("lab3")?;
    let mut memory = ExperienceMemory::new();
    for t in behavior_rollout(&spec, BehaviorPolicy::EpsilonGreedy(0.3), 200, 1)? {
        memory.insert(t)?;
    }
    println!("{} trajectories, {} steps, success {:.1}%", memory.len(), memory.step_count(), memory.success_rate());

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
        epochs: 10,
        ..IqlConfig::default()
    };
    let (critic, log) = train_iql(&memory, &cfg)?;
    for e in &log.epochs {
        println!("epoch {:>2}  loss_v {:.5}  loss_q {:.5}", e.epoch, e.mean_loss_v, e.mean_loss_q);
    }
    critic.save(std::path::Path::new(&out))?;
    println!("saved to {out}/");
    Ok(())
}

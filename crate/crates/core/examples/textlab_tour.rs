//! Walks the bundled `lab3` environment along its optimal path and prints what an
//! agent sees at every step, together with the exact `Q*` of each valid action.
//!
//!     cargo run --example textlab_tour

use rescore_agent::agent::Environment;
use rescore_agent::textlab::{value_iteration_q, EnvSpec, LabEnv};

fn main() -> rescore_agent::Result<()> {
    let spec = EnvSpec::fixture("lab3")?;
    let task_id = spec.tasks[0].id.clone();
    let table = value_iteration_q(&spec, &task_id, 0.9)?;
    let mut env = LabEnv::new(&spec, &task_id)?;
    println!("task: {}", env.task().description);

    for t in 0.. {
        let obs = env.observe();
        println!("\n[{t}] {}\n    {}\n    {}", obs.observation, obs.inventory, obs.free_look);
        let q = table.entries(env.state()).unwrap_or_default();
        for (action, value) in &q {
            println!("    Q*({action}) = {value:.3}");
        }
        let Some(best) = table.greedy_action(env.state()) else { break };
        let out = env.step(&best)?;
        println!("  > {best}  (reward {}, score {})", out.reward, out.score);
        if out.done {
            println!("\nfinished, success = {}", out.success);
            break;
        }
    }
    Ok(())
}

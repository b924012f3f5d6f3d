//! A five-cell corridor used to check the neural critic against the exact solution.
//!
//! The agent starts in cell 0 and is rewarded 100 score points for reaching cell 4,
//! which ends the episode. `go left` is unavailable in cell 0 and `look` never
//! moves.

use rand::Rng;

use crate::error::Result;
use crate::experience::{ActionText, EnvState, ExperienceMemory, Step, Task, Trajectory};
use crate::seed;

pub const CHAIN_CELLS: usize = 5;
pub const CHAIN_TASK: &str = "walk to the end of the corridor";
pub const CHAIN_MAX_STEPS: usize = 12;

pub fn chain_task() -> Task {
    Task::new("corridor", CHAIN_TASK).expect("non-empty task")
}

pub fn chain_state(cell: usize, step_index: usize) -> EnvState {
    EnvState::new(
        format!("You are in cell {cell} of the corridor."),
        "You carry nothing.",
        if cell == 0 { "Exits: right." } else { "Exits: left, right." },
        step_index,
    )
}

pub fn chain_actions(cell: usize) -> Vec<&'static str> {
    if cell == 0 {
        vec!["go right", "look"]
    } else {
        vec!["go left", "go right", "look"]
    }
}

/// `(next cell, reward in score points, done)`.
pub fn chain_step(cell: usize, action: &str) -> (usize, f64, bool) {
    let next = match action {
        "go right" => cell + 1,
        "go left" => cell.saturating_sub(1),
        _ => cell,
    };
    if next == CHAIN_CELLS - 1 {
        (next, 100.0, true)
    } else {
        (next, 0.0, false)
    }
}

/// Trajectories of an epsilon-greedy walker: `go right` with probability
/// `1 - epsilon`, otherwise a uniformly random available action.
pub fn chain_memory(trajectories: usize, epsilon: f64, seed: u64) -> Result<ExperienceMemory> {
    let task = chain_task();
    let mut mem = ExperienceMemory::new();
    for e in 0..trajectories {
        let mut rng = seed::rng(seed, &[e as u64]);
        let mut cell = 0;
        let mut steps = Vec::new();
        let mut success = false;
        for t in 0..CHAIN_MAX_STEPS {
            let actions = chain_actions(cell);
            let action = if rng.random::<f64>() < epsilon {
                actions[rng.random_range(0..actions.len())]
            } else {
                "go right"
            };
            let (next, reward, done) = chain_step(cell, action);
            let truncated = t + 1 == CHAIN_MAX_STEPS;
            steps.push(Step {
                state: chain_state(cell, t),
                action: ActionText::new(action)?,
                reward,
                next_state: if done || truncated {
                    EnvState::end_of_episode(t + 1)
                } else {
                    chain_state(next, t + 1)
                },
                done,
            });
            cell = next;
            if done {
                success = true;
                break;
            }
        }
        mem.insert(Trajectory {
            task: task.clone(),
            steps,
            final_score: if success { 100.0 } else { 0.0 },
            success,
        })?;
    }
    Ok(mem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::tabular::{state_key, tabular_dataset, tabular_iql};
    use crate::experience::RewardMode;

    #[test]
    fn greedy_walker_needs_four_steps() {
        let mem = chain_memory(3, 0.0, 1).unwrap();
        assert!(mem.trajectories().iter().all(|t| t.success && t.steps.len() == 4));
    }

    #[test]
    fn tabular_values_on_the_greedy_path() {
        // only `go right` is supported, so V = Q and Q(cell) = gamma^(3 - cell)
        let mem = chain_memory(2, 0.0, 1).unwrap();
        let sol = tabular_iql(&tabular_dataset(&mem, RewardMode::Delta).unwrap(), 0.9, 0.9).unwrap();
        for cell in 0..4 {
            let key = state_key(CHAIN_TASK, &chain_state(cell, 0).whole());
            let q = sol.q_value(&key, "go right").unwrap();
            assert!((q - 0.9f64.powi(3 - cell as i32)).abs() < 1e-10);
        }
    }
}

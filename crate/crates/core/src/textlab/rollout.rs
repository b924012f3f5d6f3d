use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{initial_state, render, step_env, valid_actions, value_iteration_q, EnvSpec, QTable};
use crate::error::{Error, Result};
use crate::experience::{ActionText, EnvState, Step, Trajectory};
use crate::policy::{MockPolicy, MockRow};
use crate::seed;

/// Scripted data-collection policies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorPolicy {
    /// Greedy on the exact `Q*`.
    Optimal,
    /// A uniformly random valid action with probability `epsilon`, otherwise greedy.
    EpsilonGreedy(f64),
    UniformRandom,
}

impl BehaviorPolicy {
    fn validate(self) -> Result<()> {
        match self {
            BehaviorPolicy::EpsilonGreedy(e) if !(0.0..=1.0).contains(&e) => {
                Err(Error::config(format!("epsilon must lie in [0, 1], got {e}")))
            }
            _ => Ok(()),
        }
    }
}

fn tables(spec: &EnvSpec) -> Result<Vec<QTable>> {
    spec.tasks
        .iter()
        .map(|t| value_iteration_q(spec, &t.id, spec.gamma_hint))
        .collect()
}

/// `n` episodes of a behavior policy. Episode `e` runs task `e mod |tasks|` with a
/// random stream derived from `(seed, e)`. Rewards are recorded in score points;
/// the state after the last step is the end-of-episode marker.
pub fn behavior_rollout(spec: &EnvSpec, policy: BehaviorPolicy, n: usize, seed_value: u64) -> Result<Vec<Trajectory>> {
    policy.validate()?;
    if n == 0 {
        return Err(Error::config("number of episodes must be at least 1"));
    }
    let tables = tables(spec)?;
    let mut out = Vec::with_capacity(n);
    for e in 0..n {
        let task_idx = e % spec.tasks.len();
        let table = &tables[task_idx];
        let mut rng = seed::rng(seed_value, &[e as u64]);
        let mut state = initial_state(spec, task_idx);
        let mut steps = Vec::new();
        loop {
            let actions = valid_actions(spec, &state);
            let explore = match policy {
                BehaviorPolicy::Optimal => false,
                BehaviorPolicy::EpsilonGreedy(eps) => rng.random::<f64>() < eps,
                BehaviorPolicy::UniformRandom => true,
            };
            let action = if explore {
                actions[rng.random_range(0..actions.len())].clone()
            } else {
                table.greedy_action(&state).expect("reachable state")
            };
            let (next, _, done) = step_env(spec, &state, &action);
            let points = next.score(spec) - state.score(spec);
            steps.push(Step {
                state: render(spec, &state),
                action,
                reward: points as f64,
                next_state: if done {
                    EnvState::end_of_episode(next.steps)
                } else {
                    render(spec, &next)
                },
                done: done && next.is_terminal(),
            });
            state = next;
            if done {
                break;
            }
        }
        out.push(Trajectory {
            task: spec.task(task_idx),
            steps,
            final_score: state.score(spec) as f64,
            success: state.deposited,
        });
    }
    Ok(out)
}

/// A rewording that is never itself a valid action.
pub fn paraphrase(action: &str) -> String {
    let words: Vec<&str> = action.split_whitespace().collect();
    match words.as_slice() {
        ["go", dir] => format!("head {dir}"),
        ["take", obj] => format!("pick up the {obj}"),
        ["drop", obj] => format!("put down the {obj}"),
        ["put", obj, "in", rec] => format!("place the {obj} into the {rec}"),
        ["look"] => "look around".to_owned(),
        _ => format!("try to {action}"),
    }
}

/// Log-likelihoods the lab mock policy assigns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockLikelihoods {
    pub optimal: f64,
    pub paraphrase: f64,
    pub look: f64,
}

impl Default for MockLikelihoods {
    fn default() -> Self {
        MockLikelihoods {
            optimal: -0.2,
            paraphrase: -2.0,
            look: -2.5,
        }
    }
}

/// A mock policy for every reachable state of every task: it prefers the optimal
/// action, also proposes a paraphrase of it (not a valid action) and `look`, and
/// its scripted wrong action is the valid action with the lowest `Q*`.
pub fn lab_mock_policy(spec: &EnvSpec, lk: MockLikelihoods, error_rate: f64) -> Result<MockPolicy> {
    let mut mock = MockPolicy::new().with_error_rate(error_rate);
    let look = ActionText::new("look")?;
    for (task_idx, table) in tables(spec)?.iter().enumerate() {
        let task = spec.task(task_idx);
        for state in table.states() {
            if state.is_terminal() {
                continue;
            }
            let best = table.greedy_action(state).expect("non-terminal state has actions");
            let mut entries = vec![
                (best.clone(), lk.optimal),
                (ActionText::new(paraphrase(best.as_str()))?, lk.paraphrase),
            ];
            if best != look {
                entries.push((look.clone(), lk.look));
            }
            let mut row = MockRow::new(entries);
            if let Some(worst) = table.worst_action(state) {
                if table.q(state, &worst) < table.q(state, &best) {
                    row = row.with_wrong(worst);
                }
            }
            let key = format!("{}\n{}", task.description, render(spec, state).whole());
            mock.insert_row(key, row);
        }
    }
    Ok(mock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experience::ExperienceMemory;
    use crate::textlab::reset;

    #[test]
    fn optimal_rollouts_always_succeed() {
        for name in crate::textlab::FIXTURES {
            let spec = EnvSpec::fixture(name).unwrap();
            let trajs = behavior_rollout(&spec, BehaviorPolicy::Optimal, 6, 1).unwrap();
            assert!(trajs.iter().all(|t| t.success && t.final_score == 100.0));
        }
    }

    #[test]
    fn rewards_sum_to_the_final_score() {
        let spec = EnvSpec::fixture("lab3").unwrap();
        let trajs = behavior_rollout(&spec, BehaviorPolicy::UniformRandom, 50, 3).unwrap();
        let mut mem = ExperienceMemory::new();
        for t in trajs {
            let total: f64 = t.steps.iter().map(|s| s.reward).sum();
            assert_eq!(total, t.final_score);
            mem.insert(t).unwrap();
        }
    }

    #[test]
    fn rollouts_are_seeded() {
        let spec = EnvSpec::fixture("lab3").unwrap();
        let a = behavior_rollout(&spec, BehaviorPolicy::EpsilonGreedy(0.3), 20, 9).unwrap();
        let b = behavior_rollout(&spec, BehaviorPolicy::EpsilonGreedy(0.3), 20, 9).unwrap();
        assert_eq!(a, b);
        assert!(behavior_rollout(&spec, BehaviorPolicy::EpsilonGreedy(1.5), 1, 9).is_err());
        assert!(behavior_rollout(&spec, BehaviorPolicy::Optimal, 0, 9).is_err());
    }

    #[test]
    fn dataset_success_rates() {
        let spec = EnvSpec::fixture("lab3").unwrap();
        let sr = |p| {
            let t = behavior_rollout(&spec, p, 500, 2024).unwrap();
            100.0 * t.iter().filter(|t| t.success).count() as f64 / t.len() as f64
        };
        let random = sr(BehaviorPolicy::UniformRandom);
        assert!(random > 0.0 && random < 100.0, "{random}");
        let greedy = sr(BehaviorPolicy::EpsilonGreedy(0.3));
        assert!((40.0..=90.0).contains(&greedy), "{greedy}");
    }

    #[test]
    fn paraphrases_are_never_valid() {
        let spec = EnvSpec::fixture("lab7").unwrap();
        let s = reset(&spec, "key-to-box").unwrap();
        for a in valid_actions(&spec, &s) {
            let p = paraphrase(a.as_str());
            assert!(valid_actions(&spec, &s).iter().all(|v| v.normalized() != p));
        }
    }

    #[test]
    fn mock_rows_cover_reachable_states() {
        let spec = EnvSpec::fixture("lab3").unwrap();
        let mock = lab_mock_policy(&spec, MockLikelihoods::default(), 0.4).unwrap();
        assert!(!mock.is_empty());
        assert_eq!(mock.error_rate(), 0.4);
    }
}

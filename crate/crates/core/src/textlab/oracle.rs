use std::collections::HashMap;

use super::{initial_state, step_env, valid_actions, EnvSpec, LabState};
use crate::error::{Error, Result};
use crate::experience::ActionText;

/// Reachable-state limit of [`value_iteration_q`].
pub const DEFAULT_STATE_BOUND: usize = 200_000;

const TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 100_000;

/// Optimal action values over every state reachable from the task's start.
///
/// States are keyed without their step counter, i.e. the oracle ignores the step cap.
#[derive(Clone, Debug)]
pub struct QTable {
    pub gamma: f64,
    pub sweeps: usize,
    states: Vec<LabState>,
    index: HashMap<LabState, usize>,
    actions: Vec<Vec<ActionText>>,
    q: Vec<Vec<f64>>,
}

impl QTable {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[LabState] {
        &self.states
    }

    fn lookup(&self, state: &LabState) -> Option<usize> {
        self.index.get(&state.core()).copied()
    }

    /// Valid actions and their values; empty for terminal states.
    pub fn entries(&self, state: &LabState) -> Option<Vec<(&ActionText, f64)>> {
        self.lookup(state)
            .map(|i| self.actions[i].iter().zip(self.q[i].iter().copied()).collect())
    }

    pub fn q(&self, state: &LabState, action: &ActionText) -> Option<f64> {
        let i = self.lookup(state)?;
        let norm = action.normalized();
        self.actions[i]
            .iter()
            .position(|a| a.normalized() == norm)
            .map(|j| self.q[i][j])
    }

    pub fn value(&self, state: &LabState) -> Option<f64> {
        let qs = &self.q[self.lookup(state)?];
        if qs.is_empty() {
            return Some(0.0);
        }
        Some(qs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// First action (in valid-action order) with the highest value.
    pub fn greedy_action(&self, state: &LabState) -> Option<ActionText> {
        let i = self.lookup(state)?;
        let mut best: Option<usize> = None;
        for (j, &q) in self.q[i].iter().enumerate() {
            if best.is_none_or(|b| q > self.q[i][b]) {
                best = Some(j);
            }
        }
        best.map(|j| self.actions[i][j].clone())
    }

    /// First action with the lowest value.
    pub fn worst_action(&self, state: &LabState) -> Option<ActionText> {
        let i = self.lookup(state)?;
        let mut worst: Option<usize> = None;
        for (j, &q) in self.q[i].iter().enumerate() {
            if worst.is_none_or(|w| q < self.q[i][w]) {
                worst = Some(j);
            }
        }
        worst.map(|j| self.actions[i][j].clone())
    }
}

/// Exact `Q*` by synchronous value iteration over the reachable state space,
/// with rewards as fractions of the maximum score.
pub fn value_iteration_q(spec: &EnvSpec, task_id: &str, gamma: f64) -> Result<QTable> {
    value_iteration_bounded(spec, task_id, gamma, DEFAULT_STATE_BOUND)
}

pub fn value_iteration_bounded(spec: &EnvSpec, task_id: &str, gamma: f64, max_states: usize) -> Result<QTable> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::config(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let task = spec.task_index(task_id)?;
    let start = initial_state(spec, task);
    let mut states = vec![start.clone()];
    let mut index: HashMap<LabState, usize> = HashMap::from([(start, 0)]);
    let mut actions: Vec<Vec<ActionText>> = Vec::new();
    // per state and action: (reward, successor, successor is terminal)
    let mut edges: Vec<Vec<(f64, usize, bool)>> = Vec::new();
    let mut cursor = 0;
    while cursor < states.len() {
        let s = states[cursor].clone();
        cursor += 1;
        if s.is_terminal() {
            actions.push(Vec::new());
            edges.push(Vec::new());
            continue;
        }
        let acts = valid_actions(spec, &s);
        let mut out = Vec::with_capacity(acts.len());
        for a in &acts {
            let (next, r, _) = step_env(spec, &s, a);
            let next = next.core();
            let terminal = next.is_terminal();
            let j = match index.get(&next) {
                Some(&j) => j,
                None => {
                    if states.len() >= max_states {
                        return Err(Error::config(format!(
                            "{}: more than {max_states} reachable states",
                            spec.name
                        )));
                    }
                    states.push(next.clone());
                    index.insert(next, states.len() - 1);
                    states.len() - 1
                }
            };
            out.push((r, j, terminal));
        }
        actions.push(acts);
        edges.push(out);
    }

    let mut v = vec![0.0; states.len()];
    let mut q: Vec<Vec<f64>> = edges.iter().map(|e| vec![0.0; e.len()]).collect();
    let mut sweeps = 0;
    loop {
        let mut delta: f64 = 0.0;
        for (i, es) in edges.iter().enumerate() {
            for (j, &(r, next, terminal)) in es.iter().enumerate() {
                q[i][j] = r + if terminal { 0.0 } else { gamma * v[next] };
            }
        }
        for (i, qs) in q.iter().enumerate() {
            let new = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let new = if qs.is_empty() { 0.0 } else { new };
            delta = delta.max((new - v[i]).abs());
            v[i] = new;
        }
        sweeps += 1;
        if delta < TOLERANCE {
            break;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::Numeric(format!("value iteration did not converge ({delta:e})")));
        }
    }
    for (i, es) in edges.iter().enumerate() {
        for (j, &(r, next, terminal)) in es.iter().enumerate() {
            q[i][j] = r + if terminal { 0.0 } else { gamma * v[next] };
        }
    }
    Ok(QTable {
        gamma,
        sweeps,
        states,
        index,
        actions,
        q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textlab::{reset, FIXTURES};

    fn act(s: &str) -> ActionText {
        ActionText::new(s).unwrap()
    }

    #[test]
    fn lab3_start_values() {
        let spec = EnvSpec::fixture("lab3").unwrap();
        let table = value_iteration_q(&spec, "key-to-box", 0.9).unwrap();
        let s0 = reset(&spec, "key-to-box").unwrap();
        // go right, take key (+0.25), go right (+0.25), put (+0.5)
        let expected = 0.9 * (0.25 + 0.9 * (0.25 + 0.9 * 0.5));
        assert!((table.q(&s0, &act("go right")).unwrap() - expected).abs() < 1e-12);
        assert_eq!(table.greedy_action(&s0).unwrap().as_str(), "go right");
        assert_eq!(table.worst_action(&s0).unwrap().as_str(), "take coin");
        assert!((table.value(&s0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn myopic_values_are_immediate_rewards() {
        let spec = EnvSpec::fixture("lab3").unwrap();
        let table = value_iteration_q(&spec, "key-to-box", 0.0).unwrap();
        for s in table.states().iter().filter(|s| !s.is_terminal()) {
            for a in valid_actions(&spec, s) {
                let (_, r, _) = step_env(&spec, s, &a);
                assert_eq!(table.q(s, &a).unwrap(), r);
            }
        }
    }

    #[test]
    fn moving_toward_the_key_beats_moving_away_before_pickup() {
        let spec = EnvSpec::fixture("lab7").unwrap();
        let table = value_iteration_q(&spec, "key-to-box", 0.9).unwrap();
        let key_room = 2;
        let mut checked = 0;
        for s in table.states() {
            if s.picked || s.is_terminal() || s.carried.is_some() || s.room == key_room {
                continue;
            }
            if s.object_rooms[0] != Some(key_room) || s.room == 0 || s.room + 1 >= spec.n_rooms {
                continue;
            }
            let (toward, away) = if s.room < key_room { ("go right", "go left") } else { ("go left", "go right") };
            assert!(table.q(s, &act(toward)).unwrap() > table.q(s, &act(away)).unwrap(), "{s:?}");
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn state_bound_is_enforced() {
        let spec = EnvSpec::fixture("lab7").unwrap();
        assert!(matches!(
            value_iteration_bounded(&spec, "key-to-box", 0.9, 50),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn every_fixture_is_solvable_greedily() {
        for name in FIXTURES {
            let spec = EnvSpec::fixture(name).unwrap();
            for task in &spec.tasks {
                let table = value_iteration_q(&spec, &task.id, spec.gamma_hint).unwrap();
                let mut s = reset(&spec, &task.id).unwrap();
                let mut done = false;
                while !done {
                    let a = table.greedy_action(&s).unwrap();
                    let (n, _, d) = step_env(&spec, &s, &a);
                    s = n;
                    done = d;
                }
                assert!(s.deposited, "{name}/{}", task.id);
                assert_eq!(s.score(&spec), 100);
                assert!(s.steps < spec.step_cap);
            }
        }
    }

    #[test]
    fn valid_actions_are_duplicate_free_everywhere() {
        for name in FIXTURES {
            let spec = EnvSpec::fixture(name).unwrap();
            let table = value_iteration_q(&spec, &spec.tasks[0].id, 0.9).unwrap();
            for s in table.states() {
                let acts = valid_actions(&spec, s);
                let mut sorted = acts.clone();
                sorted.sort();
                sorted.dedup();
                assert_eq!(sorted.len(), acts.len());
            }
        }
    }
}

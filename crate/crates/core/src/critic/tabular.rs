//! Exact IQL fixed point on a finite dataset.
//!
//! States and actions are identified by their text. With
//! `Q(s, a) = mean over the (s, a) samples of r + gamma * [bootstrap] * V(s')` and
//! `V(s)` the `tau`-expectile of `Q(s, .)` under the empirical action distribution
//! at `s`, the iteration is a `gamma`-contraction and converges to the unique fixed
//! point. States never seen as a source state have value 0.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::experience::{decompose_to_steps, ExperienceMemory, RewardMode};

/// Convergence threshold on the sup-norm change of `Q` between sweeps.
pub const TABULAR_TOLERANCE: f64 = 1e-10;
pub const TABULAR_MAX_SWEEPS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularTransition {
    pub state: String,
    pub action: String,
    pub reward: f64,
    pub next_state: String,
    pub bootstrap: bool,
}

/// Key identifying a (task, state) pair.
pub fn state_key(task_description: &str, state_text: &str) -> String {
    format!("{task_description}\n{state_text}")
}

/// Every step of `memory` keyed by text, rewards normalized as for training.
pub fn tabular_dataset(memory: &ExperienceMemory, mode: RewardMode) -> Result<Vec<TabularTransition>> {
    let mut out = Vec::with_capacity(memory.step_count());
    for traj in memory.trajectories() {
        for step in decompose_to_steps(traj, mode)? {
            out.push(TabularTransition {
                state: state_key(&traj.task.description, &step.state.whole()),
                action: step.action.normalized(),
                reward: step.reward,
                next_state: state_key(&traj.task.description, &step.next_state.whole()),
                bootstrap: step.bootstraps(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularSolution {
    pub q: BTreeMap<(String, String), f64>,
    pub v: BTreeMap<String, f64>,
    /// Number of `(s, a)` samples behind each Q entry.
    pub counts: BTreeMap<(String, String), usize>,
    pub sweeps: usize,
}

impl TabularSolution {
    pub fn q_value(&self, state: &str, action: &str) -> Option<f64> {
        self.q.get(&(state.to_owned(), action.to_owned())).copied()
    }

    /// Supported actions of `state` with their values.
    pub fn actions_of(&self, state: &str) -> Vec<(&str, f64)> {
        self.q
            .range((state.to_owned(), String::new())..)
            .take_while(|((s, _), _)| s == state)
            .map(|((_, a), q)| (a.as_str(), *q))
            .collect()
    }
}

/// The `tau`-expectile of a weighted sample: the unique minimiser `v` of
/// `sum_i w_i |tau - 1(x_i < v)| (x_i - v)^2`.
///
/// The derivative is piecewise linear in `v` with breakpoints at the sample
/// values, so the root is found in closed form on the bracketing segment.
pub fn exact_expectile(values: &[f64], weights: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::invalid("expectile needs equally many values and positive weights"));
    }
    if weights.iter().any(|w| !(*w > 0.0)) || values.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("expectile needs finite values and positive weights"));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(format!("tau must lie in (0, 1), got {tau}")));
    }
    let mut pts: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    // On the segment where the first `k` points lie below v (weight 1 - tau) and
    // the rest above (weight tau), the root is a weighted mean.
    let n = pts.len();
    for k in 1..=n {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &(x, w)) in pts.iter().enumerate() {
            let c = if i < k { 1.0 - tau } else { tau };
            num += c * w * x;
            den += c * w;
        }
        let v = num / den;
        let lo = pts[k - 1].0;
        let hi = if k < n { pts[k].0 } else { f64::INFINITY };
        if v >= lo && v <= hi {
            return Ok(v);
        }
    }
    // all values equal up to rounding
    Ok(pts[0].0)
}

/// Iterates the tabular fixed point until the sup-norm change drops below
/// [`TABULAR_TOLERANCE`].
pub fn tabular_iql(data: &[TabularTransition], tau: f64, gamma: f64) -> Result<TabularSolution> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::config(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for t in data {
        *counts.entry((t.state.clone(), t.action.clone())).or_default() += 1;
    }
    let keys: Vec<(String, String)> = counts.keys().cloned().collect();
    let key_index: BTreeMap<&(String, String), usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let mut states: Vec<String> = keys.iter().map(|(s, _)| s.clone()).collect();
    states.dedup();
    let state_index: BTreeMap<&str, usize> = states.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    // per state: indices of its Q entries
    let mut state_actions: Vec<Vec<usize>> = vec![Vec::new(); states.len()];
    for (i, (s, _)) in keys.iter().enumerate() {
        state_actions[state_index[s.as_str()]].push(i);
    }
    // per Q entry: (reward, next state index if bootstrapping and known)
    let mut samples: Vec<Vec<(f64, Option<usize>)>> = vec![Vec::new(); keys.len()];
    for t in data {
        let k = key_index[&(t.state.clone(), t.action.clone())];
        let next = if t.bootstrap { state_index.get(t.next_state.as_str()).copied() } else { None };
        samples[k].push((t.reward, next));
    }
    let weights: Vec<f64> = keys.iter().map(|k| counts[k] as f64).collect();

    let mut q = vec![0.0; keys.len()];
    let mut v = vec![0.0; states.len()];
    let mut sweeps = 0;
    loop {
        for (si, acts) in state_actions.iter().enumerate() {
            let vals: Vec<f64> = acts.iter().map(|&k| q[k]).collect();
            let ws: Vec<f64> = acts.iter().map(|&k| weights[k]).collect();
            v[si] = exact_expectile(&vals, &ws, tau)?;
        }
        let mut delta: f64 = 0.0;
        for (k, s) in samples.iter().enumerate() {
            let target = s
                .iter()
                .map(|(r, next)| r + gamma * next.map_or(0.0, |n| v[n]))
                .sum::<f64>()
                / s.len() as f64;
            delta = delta.max((target - q[k]).abs());
            q[k] = target;
        }
        sweeps += 1;
        if delta < TABULAR_TOLERANCE {
            break;
        }
        if sweeps >= TABULAR_MAX_SWEEPS {
            return Err(Error::Numeric(format!(
                "tabular iteration did not converge in {sweeps} sweeps (last change {delta:e})"
            )));
        }
    }
    for (si, acts) in state_actions.iter().enumerate() {
        let vals: Vec<f64> = acts.iter().map(|&k| q[k]).collect();
        let ws: Vec<f64> = acts.iter().map(|&k| weights[k]).collect();
        v[si] = exact_expectile(&vals, &ws, tau)?;
    }
    Ok(TabularSolution {
        q: keys.iter().cloned().zip(q).collect(),
        v: states.into_iter().zip(v).collect(),
        counts,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn objective(values: &[f64], weights: &[f64], tau: f64, v: f64) -> f64 {
        values
            .iter()
            .zip(weights)
            .map(|(x, w)| w * crate::critic::expectile_loss(x - v, tau))
            .sum()
    }

    #[test]
    fn expectile_special_cases() {
        // tau = 1/2 is the weighted mean
        let e = exact_expectile(&[1.0, 2.0, 6.0], &[1.0, 1.0, 2.0], 0.5).unwrap();
        assert!((e - 15.0 / 4.0).abs() < 1e-12);
        assert_eq!(exact_expectile(&[3.0, 3.0], &[1.0, 5.0], 0.9).unwrap(), 3.0);
        // two points, tau = 0.9: 0.1 (v - 0) = 0.9 (1 - v) => v = 0.9
        assert!((exact_expectile(&[0.0, 1.0], &[1.0, 1.0], 0.9).unwrap() - 0.9).abs() < 1e-12);
        assert!(exact_expectile(&[], &[], 0.5).is_err());
        assert!(exact_expectile(&[1.0], &[0.0], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn expectile_minimises_the_objective(
            pts in prop::collection::vec((-10.0f64..10.0, 0.1f64..5.0), 1..8),
            tau in 0.05f64..0.95,
        ) {
            let (xs, ws): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let e = exact_expectile(&xs, &ws, tau).unwrap();
            let f = objective(&xs, &ws, tau, e);
            for d in [1e-3, -1e-3, 0.1, -0.1] {
                prop_assert!(objective(&xs, &ws, tau, e + d) >= f - 1e-9);
            }
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(e >= lo - 1e-12 && e <= hi + 1e-12);
        }
    }

    fn tr(s: &str, a: &str, r: f64, n: &str, boot: bool) -> TabularTransition {
        TabularTransition {
            state: s.into(),
            action: a.into(),
            reward: r,
            next_state: n.into(),
            bootstrap: boot,
        }
    }

    #[test]
    fn two_step_chain_by_hand() {
        // s0 --a--> s1 --b--> terminal with reward 1; s0 --c--> terminal with 0.2
        let data = vec![
            tr("s0", "a", 0.0, "s1", true),
            tr("s1", "b", 1.0, "end", false),
            tr("s0", "c", 0.2, "end", false),
        ];
        let sol = tabular_iql(&data, 0.9, 0.9).unwrap();
        assert!((sol.q_value("s1", "b").unwrap() - 1.0).abs() < 1e-12);
        assert!((sol.q_value("s0", "a").unwrap() - 0.9).abs() < 1e-12);
        // expectile of {0.9, 0.2} at tau 0.9: 0.1 (v - 0.2) = 0.9 (0.9 - v)
        let v0 = (0.9 * 0.9 + 0.1 * 0.2) / 1.0;
        assert!((sol.v["s0"] - v0).abs() < 1e-12);
        assert_eq!(sol.actions_of("s0").len(), 2);
    }
}

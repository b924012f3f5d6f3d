//! The base policy: context assembly, candidate sampling and text scoring.

mod mock;
mod remote;

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experience::{ActionText, EnvState, Task};

pub use mock::{MockPolicy, MockRow, PROMOTION_FACTOR, UNKNOWN_TEXT_LOG_LIKELIHOOD};
pub use remote::RemotePolicy;

/// Candidate count used when none is configured.
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_TOP_P: f64 = 0.95;

/// What the policy conditions on: the task, a bounded history and the current state.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyContext {
    pub task: Task,
    /// Oldest first.
    pub history: Vec<(EnvState, ActionText)>,
    pub current: EnvState,
}

impl PolicyContext {
    /// Fixed plain-text prompt format shared by the remote adapter and IL export.
    pub fn render(&self) -> String {
        let mut out = format!("Task: {}\n", self.task.description);
        for (state, action) in &self.history {
            let _ = writeln!(out, "State: {}", state.whole());
            let _ = writeln!(out, "Action: {action}");
        }
        let _ = write!(out, "State: {}", self.current.whole());
        out
    }
}

/// Keeps the most recent `window` (state, action) pairs, oldest first.
pub fn build_context(
    task: &Task,
    history: &[(EnvState, ActionText)],
    current: &EnvState,
    window: usize,
) -> PolicyContext {
    let start = history.len().saturating_sub(window);
    PolicyContext {
        task: task.clone(),
        history: history[start..].to_vec(),
        current: current.clone(),
    }
}

/// A proposed next action and its log-likelihood under the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: ActionText,
    pub log_likelihood: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRequest {
    pub k: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl SampleRequest {
    pub fn new(k: usize, seed: u64) -> Self {
        SampleRequest {
            k,
            temperature: DEFAULT_TEMPERATURE,
            top_p: DEFAULT_TOP_P,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("candidate count K must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature must be positive"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::config("top_p must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// A base policy backend. Implementations are stateless request/response services.
pub trait Policy: Send + Sync {
    /// Up to `k` distinct candidates, most likely first.
    fn sample_candidates(&self, ctx: &PolicyContext, req: &SampleRequest) -> Result<Vec<Candidate>>;

    /// Log-likelihood of an arbitrary action text given the context.
    fn score_text(&self, ctx: &PolicyContext, text: &ActionText) -> Result<f64>;
}

/// Merges duplicate texts (keeping the larger likelihood), orders by likelihood and
/// truncates to `k`.
pub(crate) fn finalize_candidates(raw: Vec<Candidate>, k: usize) -> Result<Vec<Candidate>> {
    let mut best: HashMap<ActionText, f64> = HashMap::new();
    for c in raw {
        if !c.log_likelihood.is_finite() || c.log_likelihood > 0.0 {
            return Err(Error::invalid(format!(
                "candidate {:?} has log-likelihood {}",
                c.text.as_str(),
                c.log_likelihood
            )));
        }
        best.entry(c.text)
            .and_modify(|lp| *lp = lp.max(c.log_likelihood))
            .or_insert(c.log_likelihood);
    }
    let mut out: Vec<Candidate> = best
        .into_iter()
        .map(|(text, log_likelihood)| Candidate { text, log_likelihood })
        .collect();
    out.sort_by(|a, b| {
        b.log_likelihood
            .total_cmp(&a.log_likelihood)
            .then_with(|| a.text.cmp(&b.text))
    });
    out.truncate(k);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(obs: &str, i: usize) -> EnvState {
        EnvState::new(obs, "", "", i)
    }

    fn act(s: &str) -> ActionText {
        ActionText::new(s).unwrap()
    }

    #[test]
    fn empty_history_context() {
        let task = Task::new("t", "find the key").unwrap();
        let ctx = build_context(&task, &[], &st("hall", 0), 10);
        assert!(ctx.history.is_empty());
        assert_eq!(ctx.render(), "Task: find the key\nState: hall");
    }

    #[test]
    fn window_keeps_pairs_six_to_fifteen() {
        let task = Task::new("t", "x").unwrap();
        let history: Vec<_> = (1..=15)
            .map(|i| (st(&format!("s{i}"), i), act(&format!("a{i}"))))
            .collect();
        let ctx = build_context(&task, &history, &st("now", 16), 10);
        assert_eq!(ctx.history.len(), 10);
        assert_eq!(ctx.history.first().unwrap().1.as_str(), "a6");
        assert_eq!(ctx.history.last().unwrap().1.as_str(), "a15");
        assert_eq!(build_context(&task, &history, &st("now", 16), 10), ctx);
    }

    #[test]
    fn zero_window_is_stateless() {
        let task = Task::new("t", "x").unwrap();
        let history = vec![(st("s1", 0), act("a1"))];
        let ctx = build_context(&task, &history, &st("s2", 1), 0);
        assert!(ctx.history.is_empty());
    }

    #[test]
    fn finalize_merges_and_orders() {
        let raw = vec![
            Candidate { text: act("look"), log_likelihood: -1.6 },
            Candidate { text: act("go right"), log_likelihood: -0.9 },
            Candidate { text: act("go right"), log_likelihood: -0.2 },
        ];
        let out = finalize_candidates(raw, 5).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].text.as_str(), "go right");
        assert_eq!(out[0].log_likelihood, -0.2);
        let bad = vec![Candidate { text: act("x"), log_likelihood: 0.5 }];
        assert!(finalize_candidates(bad, 5).is_err());
    }
}

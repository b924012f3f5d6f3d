//! Deterministic table-driven policy used in tests and desk-scale experiments.

use std::collections::BTreeMap;

use rand::Rng;

use super::{finalize_candidates, Candidate, Policy, PolicyContext, SampleRequest};
use crate::error::Result;
use crate::experience::{normalize_action, ActionText};
use crate::seed;

/// Log-likelihood reported for text the table does not know.
pub const UNKNOWN_TEXT_LOG_LIKELIHOOD: f64 = -20.0;

/// A promoted wrong action gets the top entry's log-likelihood times this factor,
/// which makes it strictly more likely than the top entry whenever that is below zero.
pub const PROMOTION_FACTOR: f64 = 0.5;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MockRow {
    pub entries: Vec<(ActionText, f64)>,
    /// Action promoted to the top when the error knob fires.
    pub scripted_wrong: Option<ActionText>,
}

impl MockRow {
    pub fn new(entries: Vec<(ActionText, f64)>) -> Self {
        MockRow {
            entries,
            scripted_wrong: None,
        }
    }

    pub fn with_wrong(mut self, wrong: ActionText) -> Self {
        self.scripted_wrong = Some(wrong);
        self
    }
}

/// Table lookup keyed by (task, current state).
///
/// Sampling keeps the nucleus of the tempered distribution and draws up to `k`
/// distinct entries without replacement (Gumbel top-k). With probability
/// `error_rate` per call, the row's scripted wrong action is promoted above the
/// most likely entry.
#[derive(Clone, Debug, Default)]
pub struct MockPolicy {
    table: BTreeMap<String, MockRow>,
    error_rate: f64,
}

impl MockPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_error_rate(mut self, error_rate: f64) -> Self {
        self.error_rate = error_rate.clamp(0.0, 1.0);
        self
    }

    pub fn error_rate(&self) -> f64 {
        self.error_rate
    }

    pub fn context_key(ctx: &PolicyContext) -> String {
        format!("{}\n{}", ctx.task.description, ctx.current.whole())
    }

    pub fn insert_row(&mut self, key: impl Into<String>, row: MockRow) {
        self.table.insert(key.into(), row);
    }

    pub fn row(&self, ctx: &PolicyContext) -> Option<&MockRow> {
        self.table.get(&Self::context_key(ctx))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

fn gumbel(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    -(-u.ln()).ln()
}

impl Policy for MockPolicy {
    fn sample_candidates(&self, ctx: &PolicyContext, req: &SampleRequest) -> Result<Vec<Candidate>> {
        req.validate()?;
        let Some(row) = self.row(ctx) else {
            return Ok(Vec::new());
        };
        let mut rng = seed::rng(req.seed, &[]);
        let mut entries = row.entries.clone();
        let flaw = rng.random::<f64>() < self.error_rate;
        if let (true, Some(wrong)) = (flaw, &row.scripted_wrong) {
            let top = entries.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
            let promoted = if top.is_finite() { top * PROMOTION_FACTOR } else { 0.0 };
            match entries.iter_mut().find(|e| &e.0 == wrong) {
                Some(e) => e.1 = promoted,
                None => entries.push((wrong.clone(), promoted)),
            }
        }
        let entries = finalize_candidates(
            entries
                .into_iter()
                .map(|(text, log_likelihood)| Candidate { text, log_likelihood })
                .collect(),
            usize::MAX,
        )?;
        if entries.is_empty() {
            return Ok(entries);
        }

        // nucleus of softmax(lp / T)
        let logits: Vec<f64> = entries.iter().map(|c| c.log_likelihood / req.temperature).collect();
        let max = logits[0];
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut cumulative = 0.0;
        let mut nucleus = 0;
        for w in &weights {
            cumulative += w / total;
            nucleus += 1;
            if cumulative >= req.top_p {
                break;
            }
        }

        let mut keyed: Vec<(f64, usize)> = (0..nucleus).map(|i| (logits[i] + gumbel(&mut rng), i)).collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut picked: Vec<usize> = keyed.iter().take(req.k).map(|&(_, i)| i).collect();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| entries[i].clone()).collect())
    }

    fn score_text(&self, ctx: &PolicyContext, text: &ActionText) -> Result<f64> {
        let wanted = text.normalized();
        Ok(self
            .row(ctx)
            .and_then(|row| {
                row.entries
                    .iter()
                    .find(|(t, _)| normalize_action(t.as_str()) == wanted)
                    .map(|e| e.1)
            })
            .unwrap_or(UNKNOWN_TEXT_LOG_LIKELIHOOD))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experience::{EnvState, Task};
    use crate::policy::build_context;

    fn act(s: &str) -> ActionText {
        ActionText::new(s).unwrap()
    }

    fn ctx() -> PolicyContext {
        let task = Task::new("t", "reach the end").unwrap();
        build_context(&task, &[], &EnvState::new("s0", "", "", 0), 10)
    }

    fn two_entry_mock() -> MockPolicy {
        let mut m = MockPolicy::new();
        m.insert_row(
            MockPolicy::context_key(&ctx()),
            MockRow::new(vec![(act("look"), -1.6), (act("go right"), -0.2)]).with_wrong(act("look")),
        );
        m
    }

    #[test]
    fn returns_table_entries_in_likelihood_order() {
        let m = two_entry_mock();
        for seed in 0..20 {
            let out = m.sample_candidates(&ctx(), &SampleRequest::new(2, seed)).unwrap();
            let texts: Vec<_> = out.iter().map(|c| c.text.as_str()).collect();
            assert_eq!(texts, ["go right", "look"]);
            assert_eq!(out[0].log_likelihood, -0.2);
        }
    }

    #[test]
    fn k_larger_than_table() {
        let out = two_entry_mock()
            .sample_candidates(&ctx(), &SampleRequest::new(5, 1))
            .unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut m = MockPolicy::new();
        let entries = (0..8).map(|i| (act(&format!("a{i}")), -0.3 * i as f64)).collect();
        m.insert_row(MockPolicy::context_key(&ctx()), MockRow::new(entries));
        let req = SampleRequest::new(3, 99);
        let a = m.sample_candidates(&ctx(), &req).unwrap();
        assert_eq!(a, m.sample_candidates(&ctx(), &req).unwrap());
        assert_eq!(a.len(), 3);
        let varied = (0..30u64)
            .map(|s| m.sample_candidates(&ctx(), &SampleRequest::new(3, s)).unwrap())
            .any(|c| c != a);
        assert!(varied);
    }

    #[test]
    fn score_text_uses_table_or_floor() {
        let m = two_entry_mock();
        assert_eq!(m.score_text(&ctx(), &act("look")).unwrap(), -1.6);
        assert_eq!(m.score_text(&ctx(), &act("dance")).unwrap(), UNKNOWN_TEXT_LOG_LIKELIHOOD);
        for c in m.sample_candidates(&ctx(), &SampleRequest::new(2, 4)).unwrap() {
            assert_eq!(m.score_text(&ctx(), &c.text).unwrap(), c.log_likelihood);
        }
    }

    #[test]
    fn error_knob_promotes_the_scripted_action() {
        let m = two_entry_mock().with_error_rate(1.0);
        let out = m.sample_candidates(&ctx(), &SampleRequest::new(2, 0)).unwrap();
        assert_eq!(out[0].text.as_str(), "look");
        assert_eq!(out[0].log_likelihood, -0.1);
        assert_eq!(out[1].text.as_str(), "go right");

        let m = two_entry_mock().with_error_rate(0.4);
        let flawed = (0..2000u64)
            .filter(|&s| {
                m.sample_candidates(&ctx(), &SampleRequest::new(2, s)).unwrap()[0].text.as_str() == "look"
            })
            .count();
        assert!((700..900).contains(&flawed), "{flawed}");
    }

    #[test]
    fn unknown_state_yields_no_candidates() {
        let m = MockPolicy::new();
        assert!(m.sample_candidates(&ctx(), &SampleRequest::new(3, 0)).unwrap().is_empty());
    }

    #[test]
    fn invalid_request_is_rejected() {
        let m = two_entry_mock();
        let mut req = SampleRequest::new(0, 0);
        assert!(m.sample_candidates(&ctx(), &req).is_err());
        req.k = 1;
        req.temperature = 0.0;
        assert!(m.sample_candidates(&ctx(), &req).is_err());
    }
}

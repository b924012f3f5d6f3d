//! Dynamic action rescoring and the inference loop.
//!
//! At step `t` the grounded candidates carry a policy probability `p` and a critic
//! value `q`. Both lists are min-max normalized and combined as
//! `S = alpha(t) * p + (1 - alpha(t)) * q` with `alpha(t) = max(b, d^t)`, so early
//! decisions follow the policy and later ones lean on the critic.

mod episode;
mod eval;

use serde::{Deserialize, Serialize};

pub use episode::{
    run_episode, write_audit, ActionCritic, EpisodeRecord, EpisodeStatus, Environment, ScoredAction, StepAudit,
    StepOutcome,
};
pub use eval::{compute_metrics, config_hash, evaluate, EvalReport, Metrics};

use crate::error::{Error, Result};
use crate::experience::DEFAULT_HISTORY_WINDOW;
use crate::policy::DEFAULT_K;

pub const DEFAULT_MAX_STEPS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RescoreConfig {
    pub b: f64,
    pub d: f64,
    pub k: usize,
    /// Constant weight for every step, including the first.
    pub static_alpha: Option<f64>,
    pub max_steps: usize,
    pub history_window: usize,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        Self::medium()
    }
}

impl RescoreConfig {
    fn preset(d: f64, b: f64) -> Self {
        RescoreConfig {
            b,
            d,
            k: DEFAULT_K,
            static_alpha: None,
            max_steps: DEFAULT_MAX_STEPS,
            history_window: DEFAULT_HISTORY_WINDOW,
        }
    }

    /// Long tasks with dense intermediate rewards.
    pub fn dense() -> Self {
        Self::preset(0.97, 0.6)
    }

    pub fn medium() -> Self {
        Self::preset(0.95, 0.6)
    }

    /// Short-horizon tasks.
    pub fn short() -> Self {
        Self::preset(0.9, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("b", self.b), ("d", self.d)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if let Some(a) = self.static_alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config(format!("static alpha must lie in [0, 1], got {a}")));
            }
        }
        if self.k == 0 || self.max_steps == 0 || self.history_window == 0 {
            return Err(Error::config("k, max_steps and history_window must be positive"));
        }
        Ok(())
    }

    /// Weight of the policy score at step `t`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.static_alpha.unwrap_or_else(|| alpha_schedule(t, self.b, self.d))
    }
}

/// `max(b, d^t)`; `t` counts actions already executed, so the first decision is
/// made with weight 1.
pub fn alpha_schedule(t: usize, b: f64, d: f64) -> f64 {
    let decay = if t == 0 { 1.0 } else { d.powi(t.min(i32::MAX as usize) as i32) };
    b.max(decay)
}

/// Min-max normalization to `[0, 1]`; a list whose values are all equal maps to 0.5.
pub fn normalize_scores(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("cannot normalize an empty score list"));
    }
    if let Some(x) = values.iter().find(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {x}")));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(vec![0.5; values.len()]);
    }
    Ok(values.iter().map(|x| (x - lo) / (hi - lo)).collect())
}

/// Normalized scores and the combined ranking of one decision.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub alpha: f64,
    pub p_norm: Vec<f64>,
    /// Absent in policy-only mode.
    pub q_norm: Option<Vec<f64>>,
    pub combined: Vec<f64>,
}

/// Combines policy and critic scores with weight `alpha` and picks the best.
///
/// Ties go to the larger normalized policy score, then to the lower index. Without
/// critic values the ranking is by policy score alone.
pub fn select_with_alpha(p_raw: &[f64], q_raw: Option<&[f64]>, alpha: f64) -> Result<Selection> {
    let p_norm = normalize_scores(p_raw)?;
    let q_norm = match q_raw {
        Some(q) => {
            if q.len() != p_raw.len() {
                return Err(Error::Shape(format!(
                    "{} policy scores but {} critic values",
                    p_raw.len(),
                    q.len()
                )));
            }
            Some(normalize_scores(q)?)
        }
        None => None,
    };
    let combined: Vec<f64> = match &q_norm {
        Some(q) => p_norm.iter().zip(q).map(|(p, q)| alpha * p + (1.0 - alpha) * q).collect(),
        None => p_norm.clone(),
    };
    let mut index = 0;
    for i in 1..combined.len() {
        let better = combined[i] > combined[index] || (combined[i] == combined[index] && p_norm[i] > p_norm[index]);
        if better {
            index = i;
        }
    }
    Ok(Selection {
        index,
        alpha,
        p_norm,
        q_norm,
        combined,
    })
}

/// [`select_with_alpha`] at the weight the configuration gives step `t`.
pub fn select_action(p_raw: &[f64], q_raw: &[f64], t: usize, cfg: &RescoreConfig) -> Result<Selection> {
    select_with_alpha(p_raw, Some(q_raw), cfg.alpha(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_examples() {
        let n = normalize_scores(&[0.2, 0.5, 0.3]).unwrap();
        assert_eq!(n[0], 0.0);
        assert_eq!(n[1], 1.0);
        assert!((n[2] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(normalize_scores(&[0.4, 0.4]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(normalize_scores(&[7.0]).unwrap(), vec![0.5]);
        assert!(matches!(normalize_scores(&[1.0, f64::NAN]), Err(Error::Numeric(_))));
        assert!(normalize_scores(&[]).is_err());
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(alpha_schedule(0, 0.6, 0.97), 1.0);
        assert_eq!(alpha_schedule(0, 0.0, 0.0), 1.0);
        assert_eq!(alpha_schedule(1, 0.6, 0.97), 0.97);
        // 0.97^30 is about 0.401
        assert_eq!(alpha_schedule(30, 0.6, 0.97), 0.6);
        assert_eq!(alpha_schedule(5, 0.0, 0.0), 0.0);
    }

    #[test]
    fn selection_examples() {
        let cfg = RescoreConfig {
            static_alpha: Some(0.6),
            ..RescoreConfig::default()
        };
        let s = select_action(&[1.0, 0.0], &[0.0, 1.0], 3, &cfg).unwrap();
        assert_eq!(s.index, 0);
        assert!((s.combined[0] - 0.6).abs() < 1e-15 && (s.combined[1] - 0.4).abs() < 1e-15);
        assert_eq!(cfg.alpha(0), 0.6);

        let critic_only = RescoreConfig {
            b: 0.0,
            d: 0.0,
            ..RescoreConfig::default()
        };
        assert_eq!(select_action(&[0.9, 0.1, 0.5], &[0.0, 0.3, 2.0], 1, &critic_only).unwrap().index, 2);
        assert_eq!(select_action(&[0.9, 0.1, 0.5], &[0.0, 0.3, 2.0], 0, &critic_only).unwrap().index, 0);
        assert!(select_action(&[0.1], &[0.1, 0.2], 0, &critic_only).is_err());
    }

    #[test]
    fn ties_prefer_policy_then_lower_index() {
        // combined: [0.5, 0.5], p_norm [0, 1] -> index 1
        let s = select_with_alpha(&[0.0, 1.0], Some(&[1.0, 0.0]), 0.5).unwrap();
        assert_eq!(s.index, 1);
        let s = select_with_alpha(&[0.3, 0.3, 0.3], Some(&[1.0, 1.0, 1.0]), 0.5).unwrap();
        assert_eq!(s.index, 0);
    }

    #[test]
    fn presets_and_validation() {
        assert_eq!((RescoreConfig::dense().d, RescoreConfig::dense().b), (0.97, 0.6));
        assert_eq!((RescoreConfig::default().d, RescoreConfig::default().b), (0.95, 0.6));
        assert_eq!((RescoreConfig::short().d, RescoreConfig::short().b), (0.9, 0.5));
        assert!(RescoreConfig { b: 1.5, ..RescoreConfig::default() }.validate().is_err());
        assert!(RescoreConfig { k: 0, ..RescoreConfig::default() }.validate().is_err());
        assert!(RescoreConfig { static_alpha: Some(-0.1), ..RescoreConfig::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn schedule_is_monotone_and_bounded(b in 0.0f64..=1.0, d in 0.0f64..=1.0, t in 0usize..200) {
            let a = alpha_schedule(t, b, d);
            prop_assert!(a >= b && a <= 1.0);
            prop_assert!(alpha_schedule(t + 1, b, d) <= a);
        }

        #[test]
        fn normalization_is_affine_invariant(
            xs in prop::collection::vec(-50.0f64..50.0, 1..10),
            scale in 0.01f64..100.0,
            shift in -100.0f64..100.0,
        ) {
            let a = normalize_scores(&xs).unwrap();
            let ys: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            let b = normalize_scores(&ys).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}

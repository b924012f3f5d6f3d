use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{run_episode, ActionCritic, EpisodeRecord, Environment, RescoreConfig};
use crate::error::{Error, Result};
use crate::grounding::Embedder;
use crate::policy::Policy;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "AS")]
    pub average_score: f64,
    /// Percent.
    #[serde(rename = "SR")]
    pub success_rate: f64,
    pub n_episodes: usize,
    pub mean_steps: f64,
}

pub fn compute_metrics(records: &[EpisodeRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::invalid("no episodes to summarise"));
    }
    let n = records.len() as f64;
    Ok(Metrics {
        average_score: records.iter().map(|r| r.final_score).sum::<f64>() / n,
        success_rate: 100.0 * records.iter().filter(|r| r.success).count() as f64 / n,
        n_episodes: records.len(),
        mean_steps: records.iter().map(|r| r.n_steps() as f64).sum::<f64>() / n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_episodes: usize,
    #[serde(rename = "AS")]
    pub average_score: f64,
    #[serde(rename = "SR")]
    pub success_rate: f64,
    pub mean_steps: f64,
    pub config_hash: String,
}

impl EvalReport {
    pub fn new(metrics: Metrics, config_hash: String) -> Self {
        EvalReport {
            n_episodes: metrics.n_episodes,
            average_score: metrics.average_score,
            success_rate: metrics.success_rate,
            mean_steps: metrics.mean_steps,
            config_hash,
        }
    }
}

/// SHA-256 (hex) of the value's JSON form. Struct fields serialize in declaration
/// order and maps should be ordered, so equal configurations hash equally.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Runs `episodes` independent episodes, `jobs` at a time.
///
/// Episode `e` gets the environment `make_env(e)` and the seed `derive_seed(seed, [e])`;
/// results come back in episode order regardless of `jobs`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<F>(
    make_env: F,
    policy: &dyn Policy,
    critic: Option<&dyn ActionCritic>,
    embedder: &dyn Embedder,
    cfg: &RescoreConfig,
    episodes: usize,
    seed_value: u64,
    jobs: usize,
) -> Result<Vec<EpisodeRecord>>
where
    F: Fn(usize) -> Result<Box<dyn Environment>> + Sync,
{
    cfg.validate()?;
    if episodes == 0 {
        return Err(Error::config("number of episodes must be at least 1"));
    }
    let one = |e: usize| -> Result<EpisodeRecord> {
        let mut env = make_env(e)?;
        run_episode(
            env.as_mut(),
            policy,
            critic,
            embedder,
            cfg,
            seed::derive_seed(seed_value, &[e as u64]),
        )
    };
    if jobs <= 1 {
        return (0..episodes).map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| (0..episodes).into_par_iter().map(one).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{write_audit, EpisodeStatus};
    use crate::grounding::TrigramEmbedder;
    use crate::textlab::{lab_mock_policy, EnvSpec, LabEnv, MockLikelihoods};

    fn rec(score: f64, success: bool) -> EpisodeRecord {
        EpisodeRecord {
            task_id: "t".into(),
            seed: 0,
            steps: Vec::new(),
            final_score: score,
            success,
            status: EpisodeStatus::Finished,
            wall_ms: 0,
        }
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&[rec(100.0, true), rec(50.0, false), rec(0.0, false)]).unwrap();
        assert_eq!(m.average_score, 50.0);
        assert!((m.success_rate - 100.0 / 3.0).abs() < 1e-12);
        let m = compute_metrics(&[rec(100.0, true), rec(100.0, true)]).unwrap();
        assert_eq!((m.average_score, m.success_rate), (100.0, 100.0));
        let m = compute_metrics(&[rec(20.0, false)]).unwrap();
        assert_eq!((m.average_score, m.success_rate), (20.0, 0.0));
        assert!(compute_metrics(&[]).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&RescoreConfig::default()).unwrap();
        assert_eq!(a, config_hash(&RescoreConfig::default()).unwrap());
        assert_eq!(a.len(), 64);
        assert_ne!(a, config_hash(&RescoreConfig::short()).unwrap());
    }

    #[test]
    fn parallel_evaluation_matches_sequential() {
        let spec = EnvSpec::fixture("lab3").unwrap();
        let mock = lab_mock_policy(&spec, MockLikelihoods::default(), 0.4).unwrap();
        let make = |_e: usize| -> Result<Box<dyn Environment>> { Ok(Box::new(LabEnv::new(&spec, "key-to-box")?)) };
        let emb = TrigramEmbedder::default();
        let cfg = RescoreConfig::default();
        let seq = evaluate(make, &mock, None, &emb, &cfg, 12, 77, 1).unwrap();
        let par = evaluate(make, &mock, None, &emb, &cfg, 12, 77, 3).unwrap();
        let audit = |rs: &[EpisodeRecord]| {
            let mut buf = Vec::new();
            write_audit(rs, &mut buf).unwrap();
            buf
        };
        assert_eq!(audit(&seq), audit(&par));
        assert!(evaluate(make, &mock, None, &emb, &cfg, 0, 77, 1).is_err());
    }
}

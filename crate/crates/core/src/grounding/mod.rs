//! Grounding sampled candidates into the environment's valid action set.
//!
//! Candidates whose text already names a valid action are kept. The remaining
//! (invalid) candidates are embedded, and the valid actions with the largest sum of
//! cosine similarities to them fill the remaining slots.

mod remote;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experience::{normalize_action, ActionText};
use crate::nn::fnv1a;
use crate::policy::Candidate;

pub use remote::RemoteEmbedder;

pub const DEFAULT_EMBED_DIM: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub source_text: String,
}

impl Embedding {
    /// True for texts that produced no features; such vectors are left unnormalized.
    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|&x| x == 0.0)
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>>;
}

/// Hashed character-trigram counts, L2-normalized.
#[derive(Clone, Debug)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder { dim: DEFAULT_EMBED_DIM }
    }
}

impl TrigramEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        TrigramEmbedder { dim }
    }

    pub fn embed(&self, text: &str) -> Embedding {
        let mut vector = vec![0.0; self.dim];
        let norm = normalize_action(text);
        if !norm.is_empty() {
            let chars: Vec<char> = format!(" {norm} ").chars().collect();
            let mut buf = [0u8; 12];
            for w in chars.windows(3) {
                let mut len = 0;
                for c in w {
                    len += c.encode_utf8(&mut buf[len..]).len();
                }
                vector[(fnv1a(&buf[..len]) % self.dim as u64) as usize] += 1.0;
            }
            let n = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            vector.iter_mut().for_each(|x| *x /= n);
        }
        Embedding {
            vector,
            source_text: text.to_owned(),
        }
    }
}

impl Embedder for TrigramEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

/// `a.b / (|a| |b|)`; zero vectors have similarity 0 with everything.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine similarity of vectors with {} and {} entries",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// The sampled text already named a valid action.
    SampledValid,
    /// Chosen by similarity to invalid candidates.
    Mapped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundedAction {
    pub action: ActionText,
    pub origin: Origin,
    /// Sum of cosine similarities to the invalid candidates (mapped actions only).
    pub similarity_sum: Option<f64>,
    /// Likelihood of the sampled candidate (sampled-valid actions only).
    pub log_likelihood: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundedSet {
    pub actions: Vec<GroundedAction>,
}

impl GroundedSet {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.actions.iter().map(|a| a.action.as_str()).collect()
    }
}

/// Similarity sum of every valid action to the given invalid candidates.
///
/// Candidate contributions are added in lexicographic order of the candidate text,
/// so the result does not depend on the order the candidates were sampled in.
pub fn similarity_sums(
    embedder: &dyn Embedder,
    invalid: &[&str],
    valid: &[&str],
) -> Result<Vec<f64>> {
    let mut invalid: Vec<&str> = invalid.to_vec();
    invalid.sort_unstable();
    let cand = embedder.embed_batch(&invalid)?;
    let acts = embedder.embed_batch(valid)?;
    acts.iter()
        .map(|a| {
            cand.iter()
                .try_fold(0.0, |acc, c| Ok(acc + cosine_similarity(&a.vector, &c.vector)?))
        })
        .collect()
}

/// Grounds candidates into `valid_actions`, returning at most `k` actions.
///
/// Exact matches (trimmed, case-folded) are kept first, in sampling order. For each
/// of the `n` remaining invalid candidates, one more valid action is added: the valid
/// actions not already kept, ranked by their similarity sum to all invalid candidates
/// (ties broken lexicographically).
pub fn map_to_valid(
    candidates: &[Candidate],
    valid_actions: &[ActionText],
    k: usize,
    embedder: &dyn Embedder,
) -> Result<GroundedSet> {
    if valid_actions.is_empty() {
        return Err(Error::invalid("valid action set is empty"));
    }
    if candidates.is_empty() {
        log::warn!("no candidates to ground");
        return Ok(GroundedSet::default());
    }
    let valid_norm: Vec<String> = valid_actions.iter().map(|a| a.normalized()).collect();

    let mut kept = GroundedSet::default();
    let mut kept_idx: HashSet<usize> = HashSet::new();
    let mut invalid: Vec<&str> = Vec::new();
    for cand in candidates.iter().take(k) {
        let norm = cand.text.normalized();
        match valid_norm.iter().position(|v| *v == norm) {
            Some(i) => {
                if kept_idx.insert(i) {
                    kept.actions.push(GroundedAction {
                        action: valid_actions[i].clone(),
                        origin: Origin::SampledValid,
                        similarity_sum: None,
                        log_likelihood: Some(cand.log_likelihood),
                    });
                }
            }
            None => invalid.push(cand.text.as_str()),
        }
    }
    if invalid.is_empty() {
        return Ok(kept);
    }

    let remaining: Vec<usize> = (0..valid_actions.len()).filter(|i| !kept_idx.contains(i)).collect();
    let remaining_text: Vec<&str> = remaining.iter().map(|&i| valid_actions[i].as_str()).collect();
    let sums = similarity_sums(embedder, &invalid, &remaining_text)?;
    let mut order: Vec<usize> = (0..remaining.len()).collect();
    order.sort_by(|&a, &b| {
        sums[b]
            .total_cmp(&sums[a])
            .then_with(|| remaining_text[a].cmp(remaining_text[b]))
    });
    let slots = invalid.len().min(k.saturating_sub(kept.len()));
    for &j in order.iter().take(slots) {
        kept.actions.push(GroundedAction {
            action: valid_actions[remaining[j]].clone(),
            origin: Origin::Mapped,
            similarity_sum: Some(sums[j]),
            log_likelihood: None,
        });
    }
    Ok(kept)
}

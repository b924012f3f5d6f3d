use super::{CriticParams, QNetwork, TransitionSet};
use crate::error::{Error, Result};
use crate::nn::{FieldNetwork, GradTensor, Objective};

/// Asymmetric squared loss `|tau - 1(u < 0)| * u^2`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * u * u
}

fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

fn check_lengths(lens: &[usize]) -> Result<usize> {
    let n = lens[0];
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if lens.iter().any(|&l| l != n) {
        return Err(Error::Shape(format!("batch columns of unequal length {lens:?}")));
    }
    Ok(n)
}

/// Mean expectile loss of `q_target - v` over a batch.
pub fn loss_v_from_values(q_target: &[f64], v: &[f64], tau: f64) -> Result<f64> {
    let n = check_lengths(&[q_target.len(), v.len()])?;
    Ok(q_target.iter().zip(v).map(|(q, v)| expectile_loss(q - v, tau)).sum::<f64>() / n as f64)
}

/// Mean squared TD error `(r + gamma * [bootstrap] * v_next - q)^2`.
pub fn loss_q_from_values(reward: &[f64], bootstrap: &[bool], v_next: &[f64], q: &[f64], gamma: f64) -> Result<f64> {
    let n = check_lengths(&[reward.len(), bootstrap.len(), v_next.len(), q.len()])?;
    let total: f64 = (0..n)
        .map(|i| {
            let mask = if bootstrap[i] { 1.0 } else { 0.0 };
            let y = reward[i] + gamma * mask * v_next[i];
            (y - q[i]).powi(2)
        })
        .sum();
    Ok(total / n as f64)
}

/// Input token sequences and a fixed regression target.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionSample {
    pub fields: Vec<Vec<usize>>,
    pub target: f64,
}

impl RegressionSample {
    fn field_refs(&self) -> Vec<&[usize]> {
        self.fields.iter().map(|f| f.as_slice()).collect()
    }
}

/// Samples for the value network, whose loss is the mean expectile of `target - V(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectileBatch {
    pub tau: f64,
    pub samples: Vec<RegressionSample>,
}

impl Objective<ExpectileBatch> for FieldNetwork {
    fn loss(&self, batch: &ExpectileBatch) -> Result<f64> {
        let n = check_lengths(&[batch.samples.len()])?;
        let mut total = 0.0;
        for s in &batch.samples {
            total += expectile_loss(s.target - self.forward(&s.field_refs())?, batch.tau);
        }
        Ok(total / n as f64)
    }

    fn compute_gradients(&self, batch: &ExpectileBatch) -> Result<(f64, Vec<GradTensor>)> {
        let n = check_lengths(&[batch.samples.len()])? as f64;
        let mut grads = self.zero_grads();
        let mut total = 0.0;
        for (i, s) in batch.samples.iter().enumerate() {
            let trace = self.forward_traced(&s.field_refs())?;
            let u = s.target - trace.output();
            let l = expectile_loss(u, batch.tau);
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite value loss at sample {i}")));
            }
            total += l;
            let d = -2.0 * expectile_weight(u, batch.tau) * u / n;
            self.backward(&trace, d, &mut grads);
        }
        Ok((total / n, grads))
    }
}

/// For several heads the loss is the sum of the per-head mean squared errors,
/// every head regressing onto the same target.
impl Objective<[RegressionSample]> for QNetwork {
    fn loss(&self, batch: &[RegressionSample]) -> Result<f64> {
        let n = check_lengths(&[batch.len()])? as f64;
        let mut total = 0.0;
        for s in batch {
            for q in self.head_values(&s.field_refs())? {
                total += (q - s.target).powi(2);
            }
        }
        Ok(total / n)
    }

    fn compute_gradients(&self, batch: &[RegressionSample]) -> Result<(f64, Vec<GradTensor>)> {
        let n = check_lengths(&[batch.len()])? as f64;
        let mut grads: Vec<Vec<GradTensor>> = self.heads.iter().map(|h| h.zero_grads()).collect();
        let mut total = 0.0;
        for (i, s) in batch.iter().enumerate() {
            let fields = s.field_refs();
            for (head, g) in self.heads.iter().zip(grads.iter_mut()) {
                let trace = head.forward_traced(&fields)?;
                let r = trace.output() - s.target;
                if !r.is_finite() {
                    return Err(Error::Numeric(format!("non-finite Q residual at sample {i}")));
                }
                total += r * r;
                head.backward(&trace, 2.0 * r / n, g);
            }
        }
        Ok((total / n, grads.into_iter().flatten().collect()))
    }
}

/// Value loss of `params` on `set`, against the target Q-network.
pub fn loss_v(params: &CriticParams, set: &TransitionSet, tau: f64) -> Result<f64> {
    let mut q = Vec::with_capacity(set.len());
    let mut v = Vec::with_capacity(set.len());
    for t in set.transitions() {
        q.push(params.q_target.forward(&t.q_fields())?);
        v.push(params.v.forward(&t.context_refs())?);
    }
    loss_v_from_values(&q, &v, tau)
}

/// TD loss of the online Q-heads on `set` (summed over heads for a twin critic).
pub fn loss_q(params: &CriticParams, set: &TransitionSet, gamma: f64) -> Result<f64> {
    let batch = set.q_regression(params, gamma, 0..set.len())?;
    params.q.loss(batch.as_slice())
}


#[cfg(test)]
mod gradient_tests {
    use rand::Rng;

    use super::*;
    use crate::critic::{IqlConfig, Layout};
    use crate::nn::{finite_diff_check, NetConfig};
    use crate::seed;

    fn random_samples(n_fields: usize, vocab: usize, seed_value: u64) -> Vec<RegressionSample> {
        let mut rng = seed::rng(seed_value, &[77]);
        (0..3)
            .map(|_| RegressionSample {
                fields: (0..n_fields)
                    .map(|_| (0..rng.random_range(0..5)).map(|_| rng.random_range(0..vocab)).collect())
                    .collect(),
                target: rng.random_range(-1.0..1.0),
            })
            .collect()
    }

    fn cfg(seed_value: u64, twin: bool) -> IqlConfig {
        IqlConfig {
            net: NetConfig {
                vocab_size: 32,
                embed_dim: 4,
                hidden_dim: 8,
            },
            twin_q: twin,
            seed: seed_value,
            layout: Layout::Whole,
            ..IqlConfig::default()
        }
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        for s in 0..5 {
            let twin = s % 2 == 1;
            let params = CriticParams::init(&cfg(s, twin));
            let q_batch = random_samples(3, 32, s);
            let r = finite_diff_check(&params.q, q_batch.as_slice(), 1e-4).unwrap();
            assert!(r.max_rel_error < 1e-4, "Q seed {s}: {r:?}");
            let v_batch = ExpectileBatch {
                tau: 0.9,
                samples: random_samples(2, 32, s + 100),
            };
            let r = finite_diff_check(&params.v, &v_batch, 1e-4).unwrap();
            assert!(r.max_rel_error < 1e-4, "V seed {s}: {r:?}");
        }
    }
}

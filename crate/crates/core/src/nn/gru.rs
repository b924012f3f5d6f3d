use rand::Rng;

use super::{sigmoid, GradTensor, NetConfig, Tensor};
use crate::error::{Error, Result};

/// Token embedding followed by a gated recurrent unit; returns the final hidden state.
///
/// Gate rows are stacked as `[update z; reset r; candidate n]`:
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// r  = sigmoid(Wr x + Ur h + br)
/// n  = tanh(Wn x + Un (r * h) + bn)
/// h' = (1 - z) * h + z * n
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruEncoder {
    /// `[vocab, embed]`
    pub embedding: Tensor,
    /// `[3 * hidden, embed]`
    pub w: Tensor,
    /// `[3 * hidden, hidden]`
    pub u: Tensor,
    /// `[3 * hidden]`
    pub b: Tensor,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct GruTrace {
    tokens: Vec<usize>,
    hidden: usize,
    /// `h_0 .. h_T`, each `hidden` long.
    hs: Vec<f64>,
    /// Per step `[z, r, n]`.
    gates: Vec<f64>,
}

impl GruTrace {
    pub(crate) fn output(&self) -> &[f64] {
        &self.hs[self.hs.len() - self.hidden..]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

impl GruEncoder {
    pub fn new(cfg: &NetConfig, rng: &mut impl Rng) -> Self {
        let (v, e, h) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);
        GruEncoder {
            embedding: Tensor::uniform(&[v, e], 1.0, rng),
            w: Tensor::uniform(&[3 * h, e], 1.0 / (e as f64).sqrt(), rng),
            u: Tensor::uniform(&[3 * h, h], 1.0 / (h as f64).sqrt(), rng),
            b: Tensor::uniform(&[3 * h], 1.0 / (h as f64).sqrt(), rng),
        }
    }

    pub fn zeros(cfg: &NetConfig) -> Self {
        let (v, e, h) = (cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim);
        GruEncoder {
            embedding: Tensor::zeros(&[v, e]),
            w: Tensor::zeros(&[3 * h, e]),
            u: Tensor::zeros(&[3 * h, h]),
            b: Tensor::zeros(&[3 * h]),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.shape()[1]
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("embedding", &self.embedding),
            ("w", &self.w),
            ("u", &self.u),
            ("b", &self.b),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.embedding, &mut self.w, &mut self.u, &mut self.b]
    }

    pub(crate) fn zero_grads(&self) -> [GradTensor; 4] {
        [
            GradTensor::rows(self.embed_dim()),
            GradTensor::dense(self.w.len()),
            GradTensor::dense(self.u.len()),
            GradTensor::dense(self.b.len()),
        ]
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        let vocab = self.vocab_size();
        match tokens.iter().find(|&&t| t >= vocab) {
            Some(t) => Err(Error::invalid(format!("token id {t} outside vocabulary of {vocab}"))),
            None => Ok(()),
        }
    }

    /// One recurrence step; writes gates `[z, r, n]` and the new hidden state.
    fn step(&self, token: usize, h: &[f64], gates: &mut [f64], h_next: &mut [f64]) {
        let hd = h.len();
        let x = self.embedding.row(token);
        let b = self.b.data();
        for j in 0..2 * hd {
            let a = b[j] + dot(self.w.row(j), x) + dot(self.u.row(j), h);
            gates[j] = sigmoid(a);
        }
        let mut rh = vec![0.0; hd];
        for k in 0..hd {
            rh[k] = gates[hd + k] * h[k];
        }
        for j in 0..hd {
            let row = 2 * hd + j;
            let a = b[row] + dot(self.w.row(row), x) + dot(self.u.row(row), &rh);
            gates[row] = a.tanh();
        }
        for j in 0..hd {
            let z = gates[j];
            h_next[j] = (1.0 - z) * h[j] + z * gates[2 * hd + j];
        }
    }

    /// Final hidden state; the zero vector for an empty sequence.
    pub fn encode(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let hd = self.hidden_dim();
        let mut h = vec![0.0; hd];
        let mut next = vec![0.0; hd];
        let mut gates = vec![0.0; 3 * hd];
        for &t in tokens {
            self.step(t, &h, &mut gates, &mut next);
            std::mem::swap(&mut h, &mut next);
        }
        Ok(h)
    }

    pub(crate) fn encode_traced(&self, tokens: &[usize]) -> Result<GruTrace> {
        self.check_tokens(tokens)?;
        let hd = self.hidden_dim();
        let steps = tokens.len();
        let mut hs = vec![0.0; (steps + 1) * hd];
        let mut gates = vec![0.0; steps * 3 * hd];
        for (i, &t) in tokens.iter().enumerate() {
            let (done, rest) = hs.split_at_mut((i + 1) * hd);
            self.step(t, &done[i * hd..], &mut gates[i * 3 * hd..(i + 1) * 3 * hd], &mut rest[..hd]);
        }
        Ok(GruTrace {
            tokens: tokens.to_vec(),
            hidden: hd,
            hs,
            gates,
        })
    }

    /// Backpropagates `d_out` (gradient w.r.t. the final hidden state) through time,
    /// accumulating into `grads` (ordered as [`GruEncoder::zero_grads`]).
    pub(crate) fn backward(&self, trace: &GruTrace, d_out: &[f64], grads: &mut [GradTensor]) {
        let hd = self.hidden_dim();
        let ed = self.embed_dim();
        let (g_emb, rest) = grads.split_at_mut(1);
        let (g_w, rest) = rest.split_at_mut(1);
        let (g_u, g_b) = rest.split_at_mut(1);
        let g_w = g_w[0].dense_mut();
        let g_u = g_u[0].dense_mut();
        let g_b = g_b[0].dense_mut();
        let w = self.w.data();
        let u = self.u.data();

        let mut dh = d_out.to_vec();
        let mut dh_prev = vec![0.0; hd];
        let mut da = vec![0.0; 3 * hd];
        let mut d_rh = vec![0.0; hd];
        let mut rh = vec![0.0; hd];
        let mut dx = vec![0.0; ed];
        for (i, &tok) in trace.tokens.iter().enumerate().rev() {
            let h_prev = &trace.hs[i * hd..(i + 1) * hd];
            let g = &trace.gates[i * 3 * hd..(i + 1) * 3 * hd];
            let (z, r, n) = (&g[..hd], &g[hd..2 * hd], &g[2 * hd..]);
            for j in 0..hd {
                let dn = dh[j] * z[j];
                let dz = dh[j] * (n[j] - h_prev[j]);
                da[2 * hd + j] = dn * (1.0 - n[j] * n[j]);
                da[j] = dz * z[j] * (1.0 - z[j]);
                dh_prev[j] = dh[j] * (1.0 - z[j]);
                rh[j] = r[j] * h_prev[j];
            }
            // candidate gate: recurrent input is r * h
            d_rh.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..hd {
                let row = 2 * hd + j;
                let gj = da[row];
                if gj == 0.0 {
                    continue;
                }
                axpy(&mut d_rh, gj, &u[row * hd..(row + 1) * hd]);
                axpy(&mut g_u[row * hd..(row + 1) * hd], gj, &rh);
            }
            for k in 0..hd {
                let dr = d_rh[k] * h_prev[k];
                da[hd + k] = dr * r[k] * (1.0 - r[k]);
                dh_prev[k] += d_rh[k] * r[k];
            }
            for row in 0..2 * hd {
                let gj = da[row];
                if gj == 0.0 {
                    continue;
                }
                axpy(&mut dh_prev, gj, &u[row * hd..(row + 1) * hd]);
                axpy(&mut g_u[row * hd..(row + 1) * hd], gj, h_prev);
            }
            let x = self.embedding.row(tok);
            dx.iter_mut().for_each(|v| *v = 0.0);
            for row in 0..3 * hd {
                let gj = da[row];
                if gj == 0.0 {
                    continue;
                }
                g_b[row] += gj;
                axpy(&mut g_w[row * ed..(row + 1) * ed], gj, x);
                axpy(&mut dx, gj, &w[row * ed..(row + 1) * ed]);
            }
            let erow = g_emb[0].row_mut(tok);
            erow.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            std::mem::swap(&mut dh, &mut dh_prev);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn cfg() -> NetConfig {
        NetConfig {
            vocab_size: 32,
            embed_dim: 4,
            hidden_dim: 6,
        }
    }

    #[test]
    fn empty_sequence_is_the_zero_state() {
        let mut rng = seed::rng(1, &[]);
        let enc = GruEncoder::new(&NetConfig::default(), &mut rng);
        assert_eq!(enc.encode(&[]).unwrap(), vec![0.0; 128]);
    }

    #[test]
    fn deterministic_and_range_checked() {
        let mut rng = seed::rng(2, &[]);
        let enc = GruEncoder::new(&cfg(), &mut rng);
        let a = enc.encode(&[1, 5, 7]).unwrap();
        let b = enc.encode(&[1, 5, 7]).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!(enc.encode(&[32]).is_err());
        let traced = enc.encode_traced(&[1, 5, 7]).unwrap();
        assert_eq!(traced.output(), a.as_slice());
    }

    #[test]
    fn zero_weights_stay_at_zero() {
        // z = r = 1/2, n = tanh(0) = 0, so h' = h/2 + 0 = 0 from h = 0
        let enc = GruEncoder::zeros(&cfg());
        assert_eq!(enc.encode(&[3]).unwrap(), vec![0.0; 6]);
    }

    /// Straight-line recurrence written independently of `step`.
    fn hand_recurrence(enc: &GruEncoder, tokens: &[usize]) -> Vec<f64> {
        let hd = enc.hidden_dim();
        let ed = enc.embed_dim();
        let w = |r: usize, c: usize| enc.w.data()[r * ed + c];
        let u = |r: usize, c: usize| enc.u.data()[r * hd + c];
        let b = enc.b.data();
        let mut h = vec![0.0; hd];
        for &t in tokens {
            let x = enc.embedding.row(t);
            let gate = |off: usize, j: usize, hv: &[f64]| {
                let mut a = b[off + j];
                for c in 0..ed {
                    a += w(off + j, c) * x[c];
                }
                for c in 0..hd {
                    a += u(off + j, c) * hv[c];
                }
                a
            };
            let z: Vec<f64> = (0..hd).map(|j| 1.0 / (1.0 + (-gate(0, j, &h)).exp())).collect();
            let r: Vec<f64> = (0..hd).map(|j| 1.0 / (1.0 + (-gate(hd, j, &h)).exp())).collect();
            let rh: Vec<f64> = (0..hd).map(|j| r[j] * h[j]).collect();
            let n: Vec<f64> = (0..hd).map(|j| gate(2 * hd, j, &rh).tanh()).collect();
            h = (0..hd).map(|j| (1.0 - z[j]) * h[j] + z[j] * n[j]).collect();
        }
        h
    }

    #[test]
    fn matches_hand_recurrence() {
        let mut rng = seed::rng(3, &[]);
        let enc = GruEncoder::new(&cfg(), &mut rng);
        let tokens = [4, 0, 31, 4, 9];
        let got = enc.encode(&tokens).unwrap();
        let want = hand_recurrence(&enc, &tokens);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn bounded_output_on_random_inputs() {
        let mut rng = seed::rng(4, &[]);
        let enc = GruEncoder::new(&NetConfig::default(), &mut rng);
        for s in 0..10u64 {
            let mut r = seed::rng(s, &[]);
            let tokens: Vec<usize> = (0..40).map(|_| r.random_range(0..8192)).collect();
            let h = enc.encode(&tokens).unwrap();
            assert!(h.iter().all(|x| x.is_finite() && x.abs() < 1e3));
        }
    }
}

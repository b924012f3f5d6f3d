use rand::Rng;

use super::gru::GruTrace;
use super::{GradTensor, GruEncoder, Head, NetConfig, Parameterized, Tensor};
use crate::error::{Error, Result};

/// One recurrent encoder per named text field, concatenated into a scalar head.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldNetwork {
    fields: Vec<String>,
    config: NetConfig,
    pub encoders: Vec<GruEncoder>,
    pub head: Head,
}

/// Forward activations of one sample.
#[derive(Clone, Debug)]
pub struct NetTrace {
    encoders: Vec<GruTrace>,
    input: Vec<f64>,
    hidden: Vec<f64>,
    output: f64,
}

impl NetTrace {
    pub fn output(&self) -> f64 {
        self.output
    }
}

impl FieldNetwork {
    pub fn new(config: NetConfig, fields: &[&str], rng: &mut impl Rng) -> Self {
        let encoders = fields.iter().map(|_| GruEncoder::new(&config, rng)).collect();
        let head = Head::new(fields.len() * config.hidden_dim, config.hidden_dim, rng);
        FieldNetwork {
            fields: fields.iter().map(|f| f.to_string()).collect(),
            config,
            encoders,
            head,
        }
    }

    pub fn zeros(config: NetConfig, fields: &[&str]) -> Self {
        FieldNetwork {
            fields: fields.iter().map(|f| f.to_string()).collect(),
            config,
            encoders: fields.iter().map(|_| GruEncoder::zeros(&config)).collect(),
            head: Head::zeros(fields.len() * config.hidden_dim, config.hidden_dim),
        }
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn config(&self) -> NetConfig {
        self.config
    }

    fn check_arity(&self, n: usize) -> Result<()> {
        if n != self.fields.len() {
            return Err(Error::Shape(format!(
                "network expects {} fields ({}), got {n}",
                self.fields.len(),
                self.fields.join(", ")
            )));
        }
        Ok(())
    }

    /// Encoding of field `i` alone, for reuse across samples that share it.
    pub fn encode_field(&self, i: usize, tokens: &[usize]) -> Result<Vec<f64>> {
        self.encoders[i].encode(tokens)
    }

    /// Head output for already encoded fields.
    pub fn forward_encoded(&self, encodings: &[&[f64]]) -> Result<f64> {
        self.check_arity(encodings.len())?;
        let input: Vec<f64> = encodings.iter().flat_map(|e| e.iter().copied()).collect();
        if input.len() != self.head.input_dim() {
            return Err(Error::Shape(format!(
                "encodings total {} values, head expects {}",
                input.len(),
                self.head.input_dim()
            )));
        }
        Ok(self.head.forward(&input))
    }

    pub fn forward(&self, fields: &[&[usize]]) -> Result<f64> {
        self.check_arity(fields.len())?;
        let mut input = Vec::with_capacity(self.head.input_dim());
        for (enc, tokens) in self.encoders.iter().zip(fields) {
            input.extend(enc.encode(tokens)?);
        }
        Ok(self.head.forward(&input))
    }

    pub fn forward_traced(&self, fields: &[&[usize]]) -> Result<NetTrace> {
        self.check_arity(fields.len())?;
        let mut input = Vec::with_capacity(self.head.input_dim());
        let mut encoders = Vec::with_capacity(fields.len());
        for (enc, tokens) in self.encoders.iter().zip(fields) {
            let t = enc.encode_traced(tokens)?;
            input.extend_from_slice(t.output());
            encoders.push(t);
        }
        let hidden = self.head.hidden(&input);
        let output = self.head.output(&hidden);
        Ok(NetTrace {
            encoders,
            input,
            hidden,
            output,
        })
    }

    /// Gradient buffers aligned with [`Parameterized::named_tensors`].
    pub fn zero_grads(&self) -> Vec<GradTensor> {
        let mut g: Vec<GradTensor> = self.encoders.iter().flat_map(|e| e.zero_grads()).collect();
        g.extend(self.head.zero_grads());
        g
    }

    /// Accumulates `d_out * d(output)/d(params)` into `grads`.
    pub fn backward(&self, trace: &NetTrace, d_out: f64, grads: &mut [GradTensor]) {
        let n_enc = 4 * self.encoders.len();
        let (enc_grads, head_grads) = grads.split_at_mut(n_enc);
        let d_input = self.head.backward(&trace.input, &trace.hidden, d_out, head_grads);
        let h = self.config.hidden_dim;
        for (i, (enc, t)) in self.encoders.iter().zip(&trace.encoders).enumerate() {
            let d = &d_input[i * h..(i + 1) * h];
            if d.iter().all(|x| *x == 0.0) {
                continue;
            }
            enc.backward(t, d, &mut enc_grads[4 * i..4 * i + 4]);
        }
    }

    /// Copies every parameter from `other`; both must share the architecture.
    pub fn copy_from(&mut self, other: &FieldNetwork) {
        self.soft_update(other, 0.0);
    }

    /// `self <- rho * self + (1 - rho) * other`, element-wise.
    pub fn soft_update(&mut self, other: &FieldNetwork, rho: f64) {
        let src = other.named_tensors();
        for (dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.data_mut()
                .iter_mut()
                .zip(s.data())
                .for_each(|(d, s)| *d = rho * *d + (1.0 - rho) * s);
        }
    }
}

impl Parameterized for FieldNetwork {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (field, enc) in self.fields.iter().zip(&self.encoders) {
            for (name, t) in enc.tensors() {
                out.push((format!("encoder.{field}.{name}"), t));
            }
        }
        for (name, t) in self.head.tensors() {
            out.push((format!("head.{name}"), t));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for enc in &mut self.encoders {
            out.extend(enc.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn small() -> NetConfig {
        NetConfig {
            vocab_size: 16,
            embed_dim: 3,
            hidden_dim: 4,
        }
    }

    #[test]
    fn cached_encodings_match_full_forward() {
        let mut rng = seed::rng(5, &[]);
        let net = FieldNetwork::new(small(), &["task", "state", "action"], &mut rng);
        let f: [&[usize]; 3] = [&[1, 2], &[3, 4, 5], &[6]];
        let full = net.forward(&f).unwrap();
        let encs: Vec<Vec<f64>> = (0..3).map(|i| net.encode_field(i, f[i]).unwrap()).collect();
        let refs: Vec<&[f64]> = encs.iter().map(|e| e.as_slice()).collect();
        assert_eq!(full, net.forward_encoded(&refs).unwrap());
        assert_eq!(full, net.forward_traced(&f).unwrap().output());
        assert!(net.forward(&f[..2]).is_err());
    }

    #[test]
    fn soft_update_interpolates() {
        let mut a = FieldNetwork::zeros(small(), &["x"]);
        let mut rng = seed::rng(6, &[]);
        let b = FieldNetwork::new(small(), &["x"], &mut rng);
        a.soft_update(&b, 0.75);
        let (ta, tb) = (a.named_tensors(), b.named_tensors());
        for ((_, x), (_, y)) in ta.iter().zip(&tb) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - 0.25 * q).abs() < 1e-15);
            }
        }
        a.copy_from(&b);
        assert_eq!(a, b);
    }

    #[test]
    fn names_follow_gradient_order() {
        let net = FieldNetwork::zeros(small(), &["task", "action"]);
        let names: Vec<String> = net.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "encoder.task.embedding");
        assert_eq!(names[4], "encoder.action.embedding");
        assert_eq!(names[8], "head.w1");
        assert_eq!(names.len(), net.zero_grads().len());
    }
}

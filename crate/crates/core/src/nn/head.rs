use rand::Rng;

use super::{GradTensor, Tensor};

/// Two affine layers with a ReLU in between, mapping the concatenated field
/// encodings to one scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    /// `[hidden, input]`
    pub w1: Tensor,
    /// `[hidden]`
    pub b1: Tensor,
    /// `[1, hidden]`
    pub w2: Tensor,
    /// `[1]`
    pub b2: Tensor,
}

impl Head {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let b_in = 1.0 / (input as f64).sqrt();
        let b_hid = 1.0 / (hidden as f64).sqrt();
        Head {
            w1: Tensor::uniform(&[hidden, input], b_in, rng),
            b1: Tensor::uniform(&[hidden], b_in, rng),
            w2: Tensor::uniform(&[1, hidden], b_hid, rng),
            b2: Tensor::uniform(&[1], b_hid, rng),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Head {
            w1: Tensor::zeros(&[hidden, input]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[1, hidden]),
            b2: Tensor::zeros(&[1]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub(crate) fn zero_grads(&self) -> [GradTensor; 4] {
        [
            GradTensor::dense(self.w1.len()),
            GradTensor::dense(self.b1.len()),
            GradTensor::dense(self.w2.len()),
            GradTensor::dense(1),
        ]
    }

    /// Hidden activations after the ReLU.
    pub(crate) fn hidden(&self, input: &[f64]) -> Vec<f64> {
        let b1 = self.b1.data();
        (0..b1.len())
            .map(|j| {
                let a = b1[j] + self.w1.row(j).iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                a.max(0.0)
            })
            .collect()
    }

    pub(crate) fn output(&self, hidden: &[f64]) -> f64 {
        self.b2.data()[0] + self.w2.data().iter().zip(hidden).map(|(w, h)| w * h).sum::<f64>()
    }

    pub fn forward(&self, input: &[f64]) -> f64 {
        self.output(&self.hidden(input))
    }

    /// Accumulates parameter gradients for `d_out` and returns the input gradient.
    pub(crate) fn backward(&self, input: &[f64], hidden: &[f64], d_out: f64, grads: &mut [GradTensor]) -> Vec<f64> {
        let n_in = self.input_dim();
        let w2 = self.w2.data();
        grads[3].dense_mut()[0] += d_out;
        let mut d_input = vec![0.0; n_in];
        for (j, &h) in hidden.iter().enumerate() {
            grads[2].dense_mut()[j] += d_out * h;
            // ReLU gate: zero gradient where the unit was inactive
            if h <= 0.0 {
                continue;
            }
            let da = d_out * w2[j];
            grads[1].dense_mut()[j] += da;
            let g_row = &mut grads[0].dense_mut()[j * n_in..(j + 1) * n_in];
            g_row.iter_mut().zip(input).for_each(|(g, x)| *g += da * x);
            d_input.iter_mut().zip(self.w1.row(j)).for_each(|(d, w)| *d += da * w);
        }
        d_input
    }
}

use rand::Rng;

use super::{GradTensor, Objective, Parameterized, Tensor};
use crate::error::{Error, Result};

/// Affine map `y = W x + b` under mean squared error; a reference model for the
/// optimizer and gradient checker.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    /// `[out, in]`
    pub w: Tensor,
    /// `[out]`
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(input: usize, output: usize) -> Self {
        LinearModel {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        LinearModel {
            w: Tensor::uniform(&[output, input], bound, rng),
            b: Tensor::uniform(&[output], bound, rng),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.b
            .data()
            .iter()
            .enumerate()
            .map(|(o, b)| b + self.w.row(o).iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    fn check(&self, batch: &[LinearSample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for s in batch {
            if s.x.len() != self.w.cols() || s.y.len() != self.b.len() {
                return Err(Error::Shape(format!(
                    "sample ({}, {}) vs model ({}, {})",
                    s.x.len(),
                    s.y.len(),
                    self.w.cols(),
                    self.b.len()
                )));
            }
        }
        Ok(())
    }
}

impl Parameterized for LinearModel {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}

impl Objective<[LinearSample]> for LinearModel {
    fn loss(&self, batch: &[LinearSample]) -> Result<f64> {
        self.check(batch)?;
        let total: f64 = batch
            .iter()
            .map(|s| self.predict(&s.x).iter().zip(&s.y).map(|(p, y)| (p - y).powi(2)).sum::<f64>())
            .sum();
        Ok(total / batch.len() as f64)
    }

    fn compute_gradients(&self, batch: &[LinearSample]) -> Result<(f64, Vec<GradTensor>)> {
        self.check(batch)?;
        let n = batch.len() as f64;
        let cols = self.w.cols();
        let mut gw = vec![0.0; self.w.len()];
        let mut gb = vec![0.0; self.b.len()];
        let mut total = 0.0;
        for s in batch {
            for (o, (p, y)) in self.predict(&s.x).iter().zip(&s.y).enumerate() {
                let r = p - y;
                total += r * r;
                let d = 2.0 * r / n;
                gb[o] += d;
                for (c, x) in s.x.iter().enumerate() {
                    gw[o * cols + c] += d * x;
                }
            }
        }
        Ok((total / n, vec![GradTensor::Dense(gw), GradTensor::Dense(gb)]))
    }
}

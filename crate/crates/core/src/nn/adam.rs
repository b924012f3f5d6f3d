use serde::{Deserialize, Serialize};

use super::{GradTensor, Parameterized};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Rows missing from a row-sparse gradient count as
/// zero gradient, so their moments still decay (the dense update rule).
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, model: &impl Parameterized) -> Self {
        let sizes: Vec<usize> = model.named_tensors().iter().map(|(_, t)| t.len()).collect();
        Adam {
            cfg,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, model: &mut impl Parameterized, grads: &[GradTensor]) -> Result<()> {
        let params = model.tensors_mut();
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, model has {}, gradient has {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            if m.len() != p.len() {
                return Err(Error::Shape(format!("tensor {i}: moment length {} vs {}", m.len(), p.len())));
            }
            let mut apply = |j: usize, gj: f64, x: &mut f64| {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                *x -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            };
            match g {
                GradTensor::Dense(gd) => {
                    if gd.len() != p.len() {
                        return Err(Error::Shape(format!("tensor {i}: gradient length {} vs {}", gd.len(), p.len())));
                    }
                    for (j, x) in p.data_mut().iter_mut().enumerate() {
                        apply(j, gd[j], x);
                    }
                }
                GradTensor::Rows { width, rows } => {
                    let w = *width;
                    if p.cols() != w {
                        return Err(Error::Shape(format!("tensor {i}: row width {w} vs {}", p.cols())));
                    }
                    for (r, chunk) in p.data_mut().chunks_mut(w).enumerate() {
                        let gr = rows.get(&r);
                        for (c, x) in chunk.iter_mut().enumerate() {
                            apply(r * w + c, gr.map_or(0.0, |g| g[c]), x);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

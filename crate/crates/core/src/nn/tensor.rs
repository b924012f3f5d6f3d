use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major `f64` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("invalid tensor shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("tensor contains non-finite values".into()));
        }
        Ok(Tensor { shape, data })
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let mut t = Tensor::zeros(shape);
        for x in &mut t.data {
            *x = rng.random_range(-bound..=bound);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Length of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Gradient of one tensor. Embedding tables use the row-sparse form since a batch
/// only touches the rows of the tokens it contains.
#[derive(Clone, Debug, PartialEq)]
pub enum GradTensor {
    Dense(Vec<f64>),
    Rows {
        width: usize,
        rows: BTreeMap<usize, Vec<f64>>,
    },
}

impl GradTensor {
    pub fn dense(len: usize) -> Self {
        GradTensor::Dense(vec![0.0; len])
    }

    pub fn rows(width: usize) -> Self {
        GradTensor::Rows {
            width,
            rows: BTreeMap::new(),
        }
    }

    pub fn get(&self, i: usize) -> f64 {
        match self {
            GradTensor::Dense(v) => v[i],
            GradTensor::Rows { width, rows } => rows.get(&(i / width)).map_or(0.0, |r| r[i % width]),
        }
    }

    /// Mutable view of a dense gradient.
    ///
    /// # Panics
    /// On a row-sparse gradient.
    pub fn dense_mut(&mut self) -> &mut [f64] {
        match self {
            GradTensor::Dense(v) => v,
            GradTensor::Rows { .. } => panic!("dense_mut on a row-sparse gradient"),
        }
    }

    /// Mutable row of a row-sparse gradient, created on first touch.
    ///
    /// # Panics
    /// On a dense gradient.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        match self {
            GradTensor::Rows { width, rows } => rows.entry(r).or_insert_with(|| vec![0.0; *width]),
            GradTensor::Dense(_) => panic!("row_mut on a dense gradient"),
        }
    }

    /// Flat indices that may hold a non-zero value.
    pub fn support(&self) -> Vec<usize> {
        match self {
            GradTensor::Dense(v) => (0..v.len()).collect(),
            GradTensor::Rows { width, rows } => rows
                .keys()
                .flat_map(|&r| (r * width)..((r + 1) * width))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradTensor) {
        match (self, other) {
            (GradTensor::Dense(a), GradTensor::Dense(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            (GradTensor::Rows { width, rows }, GradTensor::Rows { rows: other, .. }) => {
                for (r, vals) in other {
                    let dst = rows.entry(*r).or_insert_with(|| vec![0.0; *width]);
                    dst.iter_mut().zip(vals).for_each(|(x, y)| *x += y);
                }
            }
            _ => panic!("adding gradients of different layouts"),
        }
    }

    pub fn scale(&mut self, s: f64) {
        match self {
            GradTensor::Dense(v) => v.iter_mut().for_each(|x| *x *= s),
            GradTensor::Rows { rows, .. } => rows.values_mut().flatten().for_each(|x| *x *= s),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            GradTensor::Dense(v) => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            GradTensor::Rows { rows, .. } => rows.values().flatten().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs() == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates() {
        assert!(Tensor::from_vec(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::from_vec(vec![0], vec![]).is_err());
        let t = Tensor::from_vec(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn sparse_rows_behave_like_dense() {
        let mut g = GradTensor::rows(3);
        g.row_mut(2)[1] = 4.0;
        assert_eq!(g.get(7), 4.0);
        assert_eq!(g.get(1), 0.0);
        assert_eq!(g.support(), vec![6, 7, 8]);
        let mut h = GradTensor::rows(3);
        h.row_mut(2)[1] = 1.0;
        h.row_mut(0)[0] = 2.0;
        g.add_assign(&h);
        g.scale(0.5);
        assert_eq!(g.get(7), 2.5);
        assert_eq!(g.get(0), 1.0);
    }
}

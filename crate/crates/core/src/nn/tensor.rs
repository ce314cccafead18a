//! Dense tensors and the named parameter store.

use crate::rng::Rng;
use crate::{Error, Result};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A dense row-major tensor. Values are computed in f64; weight files store
/// f32, and [`Tensor::quantize_f32`] snaps values onto that grid so a
/// save/load round trip reproduces forward passes bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Parameter(format!("zero dimension in shape {shape:?}")));
        }
        if data.len() != expected {
            return Err(Error::shape(
                format!("{expected} values for shape {shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Xavier/Glorot uniform initialization over ±√(6/(fan_in+fan_out)).
    pub fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor { shape: vec![rows, cols], data }
    }

    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

/// Per-parameter Adam moments.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Named learnable tensors with gradient buffers and optimizer state.
///
/// `BTreeMap` keeps iteration order (and therefore weight files and update
/// order) deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    pub params: BTreeMap<String, Tensor>,
    pub grads: BTreeMap<String, Vec<f64>>,
    pub adam: BTreeMap<String, AdamState>,
    /// Adam timestep (number of completed updates).
    pub step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Parameter(format!("duplicate parameter `{name}`")));
        }
        self.grads.insert(name.to_string(), vec![0.0; tensor.len()]);
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter `{name}`")))
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &[f64]) -> Result<()> {
        let buf = self
            .grads
            .get_mut(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter `{name}`")))?;
        if buf.len() != grad.len() {
            return Err(Error::shape(
                format!("gradient of {} values for `{name}`", buf.len()),
                format!("{} values", grad.len()),
            ));
        }
        for (b, g) in buf.iter_mut().zip(grad) {
            *b += g;
        }
        Ok(())
    }

    /// Snaps every parameter onto the f32 grid used by weight files.
    pub fn quantize_f32(&mut self) {
        for t in self.params.values_mut() {
            t.quantize_f32();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn shape_checks() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn xavier_bound_and_determinism() {
        let mut rng = rng_from_seed(3);
        let t = Tensor::xavier(64, 32, &mut rng);
        let bound = (6.0 / 96.0_f64).sqrt();
        assert!(t.data.iter().all(|v| v.abs() < bound));
        let mut rng2 = rng_from_seed(3);
        assert_eq!(t, Tensor::xavier(64, 32, &mut rng2));
    }

    #[test]
    fn duplicate_parameter_rejected() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::zeros(vec![2, 2])).unwrap();
        assert!(store.insert("w", Tensor::zeros(vec![2, 2])).is_err());
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut t = Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        t.quantize_f32();
        let once = t.clone();
        t.quantize_f32();
        assert_eq!(t, once);
    }
}

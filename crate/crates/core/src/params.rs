//! Named parameter collection.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// Per-row trainability for embedding tables; `None` means every row
    /// follows `tensor.trainable()`.
    pub row_mask: Option<Vec<bool>>,
}

impl Param {
    /// Whether coordinate `i` of the flat data receives updates.
    pub fn is_free(&self, i: usize) -> bool {
        if !self.tensor.trainable() {
            return false;
        }
        match &self.row_mask {
            Some(mask) => mask[i / self.tensor.cols()],
            None => true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            tensor,
            row_mask: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_row_mask(&mut self, id: ParamId, mask: Vec<bool>) {
        debug_assert_eq!(mask.len(), self.get(id).rows());
        self.params[id.0].row_mask = Some(mask);
    }

    /// Adds `delta` to the gradient of `id`, skipping frozen coordinates.
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[f64]) {
        let p = &mut self.params[id.0];
        if !p.tensor.trainable() {
            return;
        }
        match &p.row_mask {
            None => p.tensor.accumulate_grad(delta),
            Some(mask) => {
                let cols = p.tensor.cols();
                let grad = p.tensor.grad_mut();
                for (i, (g, d)) in grad.iter_mut().zip(delta).enumerate() {
                    if mask[i / cols] {
                        *g += d;
                    }
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Count of coordinates that receive updates.
    pub fn free_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| (0..p.tensor.numel()).filter(|&i| p.is_free(i)).count())
            .sum()
    }

    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), libm::sqrt(p.tensor.sum_squares())))
            .collect()
    }

    /// Rounds every value to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            for v in p.tensor.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Replaces values from `other`, matched by name and shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Config(alloc::format!(
                "expected {} parameters, got {}",
                self.len(),
                other.len()
            )));
        }
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::Config(alloc::format!("missing parameter {}", p.name)))?;
            if src.tensor.shape() != p.tensor.shape() {
                return Err(Error::Config(alloc::format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    src.tensor.shape(),
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(())
    }

    /// Names in insertion order.
    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.to_string()).collect()
    }
}

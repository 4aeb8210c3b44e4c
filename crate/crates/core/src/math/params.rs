//! Named parameter storage shared by the model, optimizer, and checkpoints.
//! Parameters keep their insertion order; that order defines the flattened
//! coordinate layout used by the optimizer and the gradient checker.

use super::rng::RngState;
use super::tensor::Tensor;

pub type ParamId = usize;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Trainable parameters get a zeroed grad slot.
    pub fn add(&mut self, name: &str, mut tensor: Tensor, trainable: bool) -> ParamId {
        assert!(
            self.id_of(name).is_none(),
            "duplicate parameter name {name}"
        );
        tensor.requires_grad = trainable;
        if trainable {
            tensor.grad = Some(vec![0.0; tensor.numel()]);
        }
        self.entries.push(ParamEntry { name: name.to_string(), tensor });
        self.entries.len() - 1
    }

    /// Gaussian init with std 1/sqrt(fan_in).
    pub fn add_normal(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        trainable: bool,
        rng: &mut RngState,
    ) -> ParamId {
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal() * std).collect();
        self.add(name, Tensor::new(vec![rows, cols], data).unwrap(), trainable)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize, trainable: bool) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols), trainable)
    }

    pub fn add_const(&mut self, name: &str, rows: usize, cols: usize, v: f64, trainable: bool) -> ParamId {
        self.add(name, Tensor::full(rows, cols, v), trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id].name
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate()
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].tensor.requires_grad)
            .collect()
    }

    /// Total trainable coordinate count.
    pub fn trainable_coords(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.tensor.requires_grad)
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            if let Some(g) = e.tensor.grad.as_mut() {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Flatten trainable grads in insertion order.
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_coords());
        for e in &self.entries {
            if e.tensor.requires_grad {
                out.extend_from_slice(e.tensor.grad.as_ref().expect("trainable grad slot"));
            }
        }
        out
    }

    /// Flatten trainable values in insertion order.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_coords());
        for e in &self.entries {
            if e.tensor.requires_grad {
                out.extend_from_slice(e.tensor.data());
            }
        }
        out
    }

    /// Overwrite trainable values from a flat vector (insertion order).
    pub fn set_flat_values(&mut self, flat: &[f64]) {
        let mut off = 0;
        for e in &mut self.entries {
            if e.tensor.requires_grad {
                let n = e.tensor.numel();
                e.tensor.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        assert_eq!(off, flat.len(), "flat value length mismatch");
    }

    /// Map a flat trainable coordinate back to (name, offset-within-param).
    pub fn locate_coord(&self, mut coord: usize) -> Option<(String, usize)> {
        for e in &self.entries {
            if e.tensor.requires_grad {
                if coord < e.tensor.numel() {
                    return Some((e.name.clone(), coord));
                }
                coord -= e.tensor.numel();
            }
        }
        None
    }
}

use std::fmt;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A tensor owned by a layer together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    /// Buffers such as the spectral-norm `u` vector are persisted but never
    /// touched by the optimizer.
    pub trainable: bool,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param { value, grad, trainable: true }
    }

    pub fn buffer(value: ArrayD<f32>) -> Self {
        Param { trainable: false, ..Param::new(value) }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    #[serde(skip)]
    pub data: Vec<f32>,
}

/// Ordered, named snapshot of every tensor in a module.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    entries: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParametersError {
    DuplicateName(String),
    Missing(String),
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    LengthMismatch { name: String },
}

impl fmt::Display for ParametersError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParametersError::DuplicateName(n) => write!(f, "duplicate parameter name `{n}`"),
            ParametersError::Missing(n) => write!(f, "parameter `{n}` missing"),
            ParametersError::ShapeMismatch { name, expected, found } => {
                write!(f, "parameter `{name}` has shape {found:?}, expected {expected:?}")
            }
            ParametersError::LengthMismatch { name } => {
                write!(f, "parameter `{name}` data length does not match its shape")
            }
        }
    }
}

impl std::error::Error for ParametersError {}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: NamedTensor) -> Result<(), ParametersError> {
        if self.entries.iter().any(|e| e.name == tensor.name) {
            return Err(ParametersError::DuplicateName(tensor.name));
        }
        if tensor.shape.iter().product::<usize>() != tensor.data.len() {
            return Err(ParametersError::LengthMismatch { name: tensor.name });
        }
        self.entries.push(tensor);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut NamedTensor> {
        self.entries.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// SHA-256 over names, shapes and little-endian values, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.name.as_bytes());
            hasher.update([0u8, e.trainable as u8]);
            for d in &e.shape {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in &e.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.data.iter().all(|v| v.is_finite()))
    }
}

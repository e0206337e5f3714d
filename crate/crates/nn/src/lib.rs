//! A small CPU neural-network engine with explicit, layer-wise backpropagation.
//!
//! Every layer keeps a stack of forward caches. `forward` pushes one entry and
//! `backward` pops the most recent one, so a module may be applied several
//! times inside a single training step (for example a generator used both for
//! the forward translation and the round trip) as long as the backward calls
//! happen in reverse order.
//!
//! Tensors are `ndarray::Array4<f32>` in NCHW layout. Fully connected layers
//! operate on `N×C×1×1` tensors so a whole network is a chain of 4-d maps.

pub mod layers;
pub mod optim;
pub mod param;
pub mod spectral;
pub mod tensor;

pub use layers::{Activation, Conv2d, InstanceNorm, Layer, Linear, Module, Sequential};
pub use optim::Adam;
pub use param::{NamedTensor, Param, Parameters, ParametersError};
pub use spectral::{power_iteration, spectral_estimate, SpectralNorm};
pub use tensor::Tensor;

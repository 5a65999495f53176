//! Differentiable kernels for a static feed-forward network.
//!
//! Forward passes are recorded on a [`Graph`] (one graph per sample); a single
//! reverse sweep then yields gradients for every node and parameter. The
//! kernels cover what the VAE needs: dilated convolution, fixed depthwise
//! filters (Gaussian low-pass, BlurPool), per-channel normalization, leaky
//! ReLU, nearest-neighbour upsampling, global pooling and dense layers.

mod adam;
mod filters;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use filters::{binomial_taps, gaussian_taps, DepthwiseFilter};
pub use gradcheck::{grad_check, GradCheckReport, REFINE_FACTOR};
pub use graph::{ConvSpec, Gradients, Graph, NodeId, Padding, NORM_EPS};
pub use params::{Grads, ParamId, Params};
pub use tensor::Tensor;

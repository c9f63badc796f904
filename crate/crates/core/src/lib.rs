//! Noise2Blur: self-supervised denoising trained from unpaired noisy and
//! clean images, with classical filters supplying blurred labels.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! training runs in `f32` and gradient checks in `f64`. The aliases below
//! name the common instantiations.

pub mod cli;
pub mod filters;
pub mod font;
pub mod image;
pub mod lattice;
pub mod metrics;
pub mod n2b;
pub mod noise;
pub mod scalar;
pub mod synth;
pub mod tensor;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type ParamSet32 = tensor::ParamSet<f32>;
pub type ParamSet64 = tensor::ParamSet<f64>;
pub type Adam32 = tensor::Adam<f32>;
pub type Adam64 = tensor::Adam<f64>;
pub type DnNet32 = n2b::DnNet<f32>;
pub type DnNet64 = n2b::DnNet<f64>;
pub type NENet32 = n2b::NENet<f32>;
pub type NENet64 = n2b::NENet<f64>;
pub type Trainer32 = n2b::Trainer<f32>;
pub type Trainer64 = n2b::Trainer<f64>;

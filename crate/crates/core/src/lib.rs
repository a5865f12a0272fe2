//! Multi-factor-constrained low-resource voice conversion on a synthetic,
//! factorized mel corpus.
//!
//! The crate is organised bottom-up:
//!
//! * [`numkernel`]: reverse-mode differentiation over dense tensors, generic over
//!   the scalar type, with a finite-difference gradient checker.
//! * [`synthcorpus`]: a seeded corpus whose mel bins separate speaker timbre,
//!   linguistic content and pitch contour.
//! * [`constraints`]: the frozen auxiliary networks (speaker classifier, speaker
//!   indicator, style recognizer, content model, ASR stand-in, real/fake
//!   discriminator) and the constraint losses built on them.
//! * [`vcmodel`]: the conversion network.
//! * [`trainer`]: base training and low-resource adaptation with reconstruction
//!   and simulation passes.
//! * [`eval`]: objective metrics with corpus-level oracles.

pub mod checkpoint;
pub mod constraints;

pub mod error;
pub mod eval;

pub mod numkernel;
pub mod optim;
pub mod params;
pub mod synthcorpus;
pub mod trainer;
pub mod vcmodel;



pub use error::{Error, Result};
pub use numkernel::{grad_check, GradCheckReport, KernelError, Real, Var};

/// Scalar type used by the models, the corpus and checkpoints.
pub type Scalar = f64;
pub type Tensor = numkernel::Tensor<Scalar>;
pub type Graph = numkernel::Graph<Scalar>;
pub type Gradients = numkernel::Gradients<Scalar>;

pub type Tensor32 = numkernel::Tensor<f32>;
pub type Graph32 = numkernel::Graph<f32>;

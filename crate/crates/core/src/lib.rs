//! Weakly-supervised segmentation of referring expressions from patch–text
//! similarities.
//!
//! The crate is organised bottom-up: [`graph`] is a small reverse-mode
//! autodiff tape, [`encoders`] produces the patch–text similarity matrix,
//! [`pooling`] reduces it to image-level scores (GAP, GMP and global weighted
//! pooling with single- or multi-label patch assignment), [`objectives`] holds
//! the training losses, and [`decode`] turns patch masks into pixel masks.
//! [`synth`] generates the synthetic benchmark and [`trainer`] ties it all
//! together.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod image;
pub mod metrics;
pub mod objectives;
pub mod optim;
pub mod pnm;
pub mod pooling;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result, TensorError};
pub use gradcheck::gradcheck;
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

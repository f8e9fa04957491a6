//! Physics-driven MRI reconstruction on synthetic multi-coil data.
//!
//! The crate covers the full pipeline: phantom and coil simulation, the
//! multi-coil encoding operator, parallel-imaging and compressed-sensing
//! baselines, a small reverse-mode autodiff engine, an unrolled
//! regularizer/data-fidelity network, and the training objectives used to fit
//! it (supervised, SSDU, equivariant imaging, and the image-only
//! compressibility + perturbation-fidelity objective).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod encoding;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod pi;
pub mod sparsity;
pub mod synth;
pub mod train;

pub use encoding::{EncodingOperator, KMask, KSpaceData};
pub use error::{Error, Result};
pub use image::ComplexImage;
pub use synth::{CoilSensitivities, MaskKind, NoiseModel, SamplingMask};

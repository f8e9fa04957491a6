//! Wavelet sparsity: the dual-tree complex wavelet transform and compressed sensing.

mod cs;
mod dtcwt;
pub mod filters;

pub use cs::{cs_from_image, cs_reconstruct, highpass_l1, reweight_init, CsConfig, CsOutput};
pub use dtcwt::{soft_threshold, soft_threshold_all, Dtcwt};

//! Parallel-imaging reconstruction: CG-SENSE, the penalized data-fidelity solve, and GRAPPA.

mod cg;
mod grappa;

pub use cg::{cg_sense, cg_solve, cg_solve_slice, df_solve, CgConfig, CgStatus};
pub(crate) use cg::{df_solve_slice, shifted_inverse};
pub use grappa::{grappa_calibrate, grappa_reconstruct, sensitivity_combine, GrappaKernel};

//! Reverse-mode automatic differentiation over `f64` tensors.
//!
//! Complex images are carried as `[2, H, W]` tensors (real plane, imaginary
//! plane) so every op is real-linear or real-differentiable; gradients are with
//! respect to the real inner product. The data-fidelity solve is differentiated
//! implicitly with a second conjugate-gradient solve instead of by unrolling
//! its iterations.

mod conv;
mod tape;
mod tensor;

use num_complex::Complex64;

pub use tape::{cg_fidelity_jvp, DataFidelity, Gradients, LinearOp, Penalty, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::{complex_to_planar, planar_to_complex};

use crate::encoding::EncodingOperator;
use crate::error::{Error, Result};
use crate::sparsity::Dtcwt;

/// The wavelet analysis operator: `[2, H, W]` → `[2, N]` planar coefficients.
pub struct WaveletOp(pub Dtcwt);

impl LinearOp for WaveletOp {
    fn name(&self) -> &'static str {
        "wavelet"
    }

    fn input_len(&self) -> usize {
        2 * self.0.height() * self.0.width()
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![2, self.0.coeff_len()]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        complex_to_planar(&self.0.forward_slice(&planar_to_complex(x)))
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        complex_to_planar(&self.0.adjoint_slice(&planar_to_complex(y)))
    }
}

/// The encoding operator: `[2, H, W]` → `[2, C, H, W]` planar k-space.
pub struct EncodingLinear(pub EncodingOperator);

impl LinearOp for EncodingLinear {
    fn name(&self) -> &'static str {
        "encoding"
    }

    fn input_len(&self) -> usize {
        2 * self.0.height() * self.0.width()
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![2, self.0.n_coils(), self.0.height(), self.0.width()]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.0.n_coils() * self.0.height() * self.0.width()];
        self.0.apply_into(&planar_to_complex(x), &mut out);
        complex_to_planar(&out)
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.0.height() * self.0.width()];
        self.0.adjoint_into(&planar_to_complex(y), &mut out);
        complex_to_planar(&out)
    }
}

/// `E^H E` on `[2, H, W]` (self-adjoint).
pub struct NormalOp(pub EncodingOperator);

impl LinearOp for NormalOp {
    fn name(&self) -> &'static str {
        "normal"
    }

    fn input_len(&self) -> usize {
        2 * self.0.height() * self.0.width()
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![2, self.0.height(), self.0.width()]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.0.height() * self.0.width()];
        self.0.normal_into(&planar_to_complex(x), &mut out);
        complex_to_planar(&out)
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        self.apply(y)
    }
}

/// A pixel permutation applied to both planes of a `[2, H, W]` tensor:
/// `out[i] = x[source[i]]`. Rotations and flips are permutations.
pub struct PixelPermutation {
    name: &'static str,
    height: usize,
    width: usize,
    source: Vec<usize>,
}

impl PixelPermutation {
    pub fn new(name: &'static str, height: usize, width: usize, source: Vec<usize>) -> Result<Self> {
        let n = height * width;
        let mut seen = vec![false; n];
        if source.len() != n {
            return Err(Error::shape(name, &[n], &[source.len()]));
        }
        for &s in &source {
            if s >= n || std::mem::replace(&mut seen[s], true) {
                return Err(Error::invalid(format!("{name}: not a permutation")));
            }
        }
        Ok(Self {
            name,
            height,
            width,
            source,
        })
    }

    pub fn source(&self) -> &[usize] {
        &self.source
    }
}

impl LinearOp for PixelPermutation {
    fn name(&self) -> &'static str {
        self.name
    }

    fn input_len(&self) -> usize {
        2 * self.height * self.width
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![2, self.height, self.width]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.source.len();
        let mut out = vec![0.0; 2 * n];
        for p in 0..2 {
            for (i, &s) in self.source.iter().enumerate() {
                out[p * n + i] = x[p * n + s];
            }
        }
        out
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let n = self.source.len();
        let mut out = vec![0.0; 2 * n];
        for p in 0..2 {
            for (i, &s) in self.source.iter().enumerate() {
                out[p * n + s] = y[p * n + i];
            }
        }
        out
    }
}

//! Dense-matrix oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use cupid::synth::{make_coils, make_mask};
use cupid::{ComplexImage, EncodingOperator, KSpaceData, MaskKind};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// 8×8 grid, 3 coils, every other line plus 2 calibration lines.
pub fn oracle_operator(seed: u64) -> EncodingOperator {
    let coils = make_coils(8, 8, 3, seed).unwrap();
    let mask = make_mask(8, 2, 2, MaskKind::Equidistant, seed).unwrap();
    EncodingOperator::new(coils, mask.to_kmask(8)).unwrap()
}

/// Centered orthonormal DFT matrix: fftshift ∘ fft ∘ ifftshift / √n.
pub fn centered_dft(n: usize) -> CMat {
    let h = n as f64 / 2.0;
    CMat::from_fn(n, n, |j, k| {
        let a = -2.0 * PI * (j as f64 - h) * (k as f64 - h) / n as f64;
        Complex64::from_polar(1.0 / (n as f64).sqrt(), a)
    })
}

/// `E` as a `(C·H·W) × (H·W)` matrix with zero rows at unsampled locations.
pub fn dense_encoding(e: &EncodingOperator) -> CMat {
    let (h, w, nc) = (e.height(), e.width(), e.n_coils());
    let f = centered_dft(h).kronecker(&centered_dft(w));
    let mask = e.mask();
    let n = h * w;
    let mut out = CMat::zeros(nc * n, n);
    for c in 0..nc {
        let s = CMat::from_diagonal(&CVec::from_column_slice(e.coils().map(c)));
        let mut block = &f * s;
        for r in 0..n {
            if !mask.get(r / w, r % w) {
                block.row_mut(r).fill(Complex64::new(0.0, 0.0));
            }
        }
        out.view_mut((c * n, 0), (n, n)).copy_from(&block);
    }
    out
}

pub fn image_vec(x: &ComplexImage) -> CVec {
    CVec::from_column_slice(x.data())
}

pub fn kspace_vec(y: &KSpaceData) -> CVec {
    CVec::from_column_slice(y.data())
}

pub fn vec_image(v: &CVec, h: usize, w: usize) -> ComplexImage {
    ComplexImage::new(h, w, v.iter().copied().collect()).unwrap()
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ComplexImage {
    ComplexImage::from_fn(h, w, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap()
}

/// Random data supported on the sampled locations of `e`.
pub fn random_kspace(e: &EncodingOperator, rng: &mut ChaCha8Rng) -> KSpaceData {
    let n = e.n_coils() * e.height() * e.width();
    let data = (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    KSpaceData::new(e.n_coils(), e.mask().clone(), data).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: &CVec, b: &CVec) -> f64 {
    (a - b).norm() / b.norm()
}

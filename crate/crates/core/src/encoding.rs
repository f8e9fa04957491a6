//! Multi-coil Cartesian encoding `E_Ω = M_Ω · F · S`.
//!
//! `apply` maps an image to masked per-coil k-space, `adjoint` applies `E^H`,
//! and `normal` applies `E^H E`. Because masks here are (mostly) constant along
//! the readout axis, the normal operator only needs transforms along the
//! phase-encode axis: `F^H M F = F_y^H M F_y` whenever `M` is a line mask.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{self, Fft2};
use crate::image::ComplexImage;
use crate::synth::CoilSensitivities;

/// A 2-D boolean sampling pattern over k-space (row = phase encode, column = readout).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl KMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape("KMask::new", &[height, width], &[bits.len()]));
        }
        Ok(Self { height, width, bits })
    }

    /// Expands a per-line pattern (length `height`) across `width` readout samples.
    pub fn from_lines(lines: &[bool], width: usize) -> Self {
        let height = lines.len();
        let mut bits = Vec::with_capacity(height * width);
        for &on in lines {
            bits.extend(std::iter::repeat_n(on, width));
        }
        Self { height, width, bits }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// The per-line pattern if every row is either fully sampled or empty.
    pub fn as_lines(&self) -> Option<Vec<bool>> {
        let mut lines = Vec::with_capacity(self.height);
        for row in self.bits.chunks(self.width) {
            let first = row[0];
            if row.iter().any(|&b| b != first) {
                return None;
            }
            lines.push(first);
        }
        Some(lines)
    }

    /// Embeds the pattern at the center of a larger, never-sampled grid.
    ///
    /// This is how a zero-padded display grid is modeled: outer k-space is
    /// simply not acquired.
    pub fn zero_padded(&self, height: usize, width: usize) -> Result<Self> {
        if height < self.height || width < self.width {
            return Err(Error::invalid(format!(
                "padded grid {height}x{width} smaller than mask {}x{}",
                self.height, self.width
            )));
        }
        let r0 = height / 2 - self.height / 2;
        let c0 = width / 2 - self.width / 2;
        let mut bits = vec![false; height * width];
        for r in 0..self.height {
            for c in 0..self.width {
                bits[(r + r0) * width + c + c0] = self.get(r, c);
            }
        }
        Ok(Self { height, width, bits })
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(
                "KMask::and",
                &[self.height, self.width],
                &[other.height, other.width],
            ));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }
}

/// Per-coil k-space samples; entries off the mask are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    n_coils: usize,
    mask: KMask,
    data: Vec<Complex64>,
}

impl KSpaceData {
    /// Wraps raw samples, zeroing anything outside the mask.
    pub fn new(n_coils: usize, mask: KMask, mut data: Vec<Complex64>) -> Result<Self> {
        let plane = mask.height * mask.width;
        if data.len() != n_coils * plane {
            return Err(Error::shape(
                "KSpaceData::new",
                &[n_coils, mask.height, mask.width],
                &[data.len()],
            ));
        }
        for coil in data.chunks_mut(plane) {
            for (v, &on) in coil.iter_mut().zip(&mask.bits) {
                if !on {
                    *v = Complex64::new(0.0, 0.0);
                }
            }
        }
        Ok(Self {
            n_coils,
            mask,
            data,
        })
    }

    pub fn n_coils(&self) -> usize {
        self.n_coils
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn mask(&self) -> &KMask {
        &self.mask
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        let plane = self.mask.height * self.mask.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn norm(&self) -> f64 {
        crate::image::norm(&self.data)
    }

    /// Restricts the samples to a sub-mask (e.g. one half of an SSDU split).
    pub fn restricted(&self, mask: &KMask) -> Result<Self> {
        let sub = self.mask.and(mask)?;
        Self::new(self.n_coils, sub, self.data.clone())
    }

    pub fn dot(&self, other: &Self) -> Result<Complex64> {
        if self.data.len() != other.data.len() {
            return Err(Error::shape(
                "KSpaceData::dot",
                &[self.data.len()],
                &[other.data.len()],
            ));
        }
        Ok(crate::image::dot(&self.data, &other.data))
    }
}

/// The encoding operator for fixed coil maps and sampling pattern.
#[derive(Clone, Debug)]
pub struct EncodingOperator {
    coils: CoilSensitivities,
    mask: KMask,
    lines: Option<Vec<bool>>,
    fft: Arc<Fft2>,
}

impl EncodingOperator {
    pub fn new(coils: CoilSensitivities, mask: KMask) -> Result<Self> {
        if (coils.height(), coils.width()) != (mask.height, mask.width) {
            return Err(Error::shape(
                "EncodingOperator::new",
                &[coils.height(), coils.width()],
                &[mask.height, mask.width],
            ));
        }
        let lines = mask.as_lines();
        let fft = fft::plan(mask.height, mask.width);
        Ok(Self {
            coils,
            mask,
            lines,
            fft,
        })
    }

    /// Same coils, different sampling pattern.
    pub fn with_mask(&self, mask: KMask) -> Result<Self> {
        Self::new(self.coils.clone(), mask)
    }

    /// Same coils, every k-space sample acquired.
    pub fn fully_sampled(&self) -> Self {
        Self::new(self.coils.clone(), KMask::full(self.mask.height, self.mask.width))
            .expect("dims already validated")
    }

    pub fn coils(&self) -> &CoilSensitivities {
        &self.coils
    }

    pub fn mask(&self) -> &KMask {
        &self.mask
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn n_coils(&self) -> usize {
        self.coils.n_coils()
    }

    fn plane(&self) -> usize {
        self.mask.height * self.mask.width
    }

    fn check_image(&self, x: &ComplexImage, op: &'static str) -> Result<()> {
        if x.dims() != (self.height(), self.width()) {
            return Err(Error::shape(
                op,
                &[self.height(), self.width()],
                &[x.height(), x.width()],
            ));
        }
        Ok(())
    }

    pub fn apply(&self, x: &ComplexImage) -> Result<KSpaceData> {
        self.check_image(x, "EncodingOperator::apply")?;
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_coils() * self.plane()];
        self.apply_into(x.data(), &mut out);
        Ok(KSpaceData {
            n_coils: self.n_coils(),
            mask: self.mask.clone(),
            data: out,
        })
    }

    pub fn adjoint(&self, y: &KSpaceData) -> Result<ComplexImage> {
        if y.n_coils != self.n_coils() || y.mask.height != self.height() || y.mask.width != self.width()
        {
            return Err(Error::shape(
                "EncodingOperator::adjoint",
                &[self.n_coils(), self.height(), self.width()],
                &[y.n_coils, y.mask.height, y.mask.width],
            ));
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.plane()];
        self.adjoint_into(&y.data, &mut out);
        Ok(ComplexImage::from_parts(self.height(), self.width(), out))
    }

    pub fn normal(&self, x: &ComplexImage) -> Result<ComplexImage> {
        self.check_image(x, "EncodingOperator::normal")?;
        let mut out = vec![Complex64::new(0.0, 0.0); self.plane()];
        self.normal_into(x.data(), &mut out);
        Ok(ComplexImage::from_parts(self.height(), self.width(), out))
    }

    /// `E^H y_Ω` reconstructed from a parallel-imaging image: `E^H E x_PI`.
    ///
    /// This is the only route by which measurement information enters
    /// image-only training.
    pub fn rhs_from_image(&self, x_pi: &ComplexImage) -> Result<ComplexImage> {
        self.normal(x_pi)
    }

    pub(crate) fn apply_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        let plane = self.plane();
        for c in 0..self.n_coils() {
            let s = self.coils.map(c);
            let buf = &mut out[c * plane..(c + 1) * plane];
            for ((b, &sv), &xv) in buf.iter_mut().zip(s).zip(x) {
                *b = sv * xv;
            }
            self.fft.forward(buf);
            for (b, &on) in buf.iter_mut().zip(&self.mask.bits) {
                if !on {
                    *b = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    pub(crate) fn adjoint_into(&self, y: &[Complex64], out: &mut [Complex64]) {
        let plane = self.plane();
        out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        let mut buf = vec![Complex64::new(0.0, 0.0); plane];
        for c in 0..self.n_coils() {
            for ((b, &yv), &on) in buf.iter_mut().zip(&y[c * plane..(c + 1) * plane]).zip(&self.mask.bits) {
                *b = if on { yv } else { Complex64::new(0.0, 0.0) };
            }
            self.fft.inverse(&mut buf);
            for ((o, &b), &sv) in out.iter_mut().zip(&buf).zip(self.coils.map(c)) {
                *o += sv.conj() * b;
            }
        }
    }

    pub(crate) fn normal_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        let plane = self.plane();
        let width = self.width();
        out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        let mut buf = vec![Complex64::new(0.0, 0.0); plane];
        for c in 0..self.n_coils() {
            let s = self.coils.map(c);
            for ((b, &sv), &xv) in buf.iter_mut().zip(s).zip(x) {
                *b = sv * xv;
            }
            match &self.lines {
                Some(lines) => {
                    self.fft.forward_cols(&mut buf);
                    for (row, &on) in buf.chunks_mut(width).zip(lines) {
                        if !on {
                            row.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                        }
                    }
                    self.fft.inverse_cols(&mut buf);
                }
                None => {
                    self.fft.forward(&mut buf);
                    for (b, &on) in buf.iter_mut().zip(&self.mask.bits) {
                        if !on {
                            *b = Complex64::new(0.0, 0.0);
                        }
                    }
                    self.fft.inverse(&mut buf);
                }
            }
            for ((o, &b), &sv) in out.iter_mut().zip(&buf).zip(s) {
                *o += sv.conj() * b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_coils, make_mask, MaskKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexImage::from_fn(h, w, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
        .unwrap()
    }

    fn operator(h: usize, w: usize, nc: usize, r: usize) -> EncodingOperator {
        let coils = make_coils(h, w, nc, 7).unwrap();
        let mask = make_mask(h, r, 2, MaskKind::Equidistant, 0).unwrap();
        EncodingOperator::new(coils, mask.to_kmask(w)).unwrap()
    }

    #[test]
    fn zero_maps_to_zero() {
        let e = operator(16, 16, 3, 2);
        let y = e.apply(&ComplexImage::zeros(16, 16).unwrap()).unwrap();
        assert!(y.data().iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        let rhs = e.rhs_from_image(&ComplexImage::zeros(16, 16).unwrap()).unwrap();
        assert_eq!(rhs.norm(), 0.0);
    }

    #[test]
    fn unit_coil_full_mask_is_fft() {
        let coils = make_coils(16, 16, 1, 0).unwrap();
        // a single map has unit magnitude; divide its phase out to get a pure FFT
        let x = random_image(16, 16, 2);
        let e = EncodingOperator::new(coils.clone(), KMask::full(16, 16)).unwrap();
        let y = e.apply(&x).unwrap();
        let mut expected: Vec<Complex64> =
            x.data().iter().zip(coils.map(0)).map(|(a, s)| a * s).collect();
        fft::plan(16, 16).forward(&mut expected);
        for (a, b) in y.data().iter().zip(&expected) {
            assert!((a - b).norm() < 1e-12);
        }
        let back = e.adjoint(&y).unwrap();
        assert!(back.relative_error(&x).unwrap() < 1e-12);
    }

    #[test]
    fn normal_matches_adjoint_of_apply_and_line_shortcut() {
        let e = operator(16, 12, 4, 3);
        let x = random_image(16, 12, 4);
        let direct = e.adjoint(&e.apply(&x).unwrap()).unwrap();
        let fast = e.normal(&x).unwrap();
        assert!(fast.relative_error(&direct).unwrap() < 1e-12);
    }

    #[test]
    fn dot_product_test() {
        let e = operator(16, 16, 3, 2);
        let x = random_image(16, 16, 11);
        let y = e.apply(&random_image(16, 16, 12)).unwrap();
        let lhs = e.apply(&x).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&e.adjoint(&y).unwrap()).unwrap();
        assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn zero_padded_grid_never_samples_outer_lines() {
        let inner = KMask::from_lines(&[true; 8], 8);
        let padded = inner.zero_padded(16, 16).unwrap();
        assert_eq!(padded.count(), 64);
        assert!(!padded.get(0, 0) && !padded.get(15, 8) && padded.get(8, 8));
    }
}

//! GRAPPA: shift-invariant k-space interpolation calibrated on the ACS block.
//!
//! Only equidistant line patterns are supported: every missing line sits at a
//! fixed offset `d ∈ 1..R` above a sampled lattice line, and one weight set is
//! fit per offset.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::encoding::{KMask, KSpaceData};
use crate::error::{Error, Result};
use crate::fft;
use crate::image::ComplexImage;
use crate::synth::{CoilSensitivities, MaskKind, SamplingMask};

/// Source neighborhood: `ky` sampled lines around the target × `kx` readout taps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub ky: usize,
    pub kx: usize,
}

impl Default for Neighborhood {
    fn default() -> Self {
        Self { ky: 2, kx: 5 }
    }
}

impl Neighborhood {
    fn kx_offsets(&self) -> std::ops::RangeInclusive<isize> {
        let half = (self.kx / 2) as isize;
        -half..=half
    }
}

/// Fitted interpolation weights.
#[derive(Clone, Debug)]
pub struct GrappaKernel {
    neighborhood: Neighborhood,
    acceleration: usize,
    n_coils: usize,
    /// Indexed by offset `d − 1`; each is `sources × n_coils`.
    weights: Vec<DMatrix<Complex64>>,
    /// Relative least-squares residual on the calibration data, per offset.
    pub fit_residual: Vec<f64>,
    /// Numerical rank of each calibration matrix.
    pub rank: Vec<usize>,
}

impl GrappaKernel {
    pub fn neighborhood(&self) -> Neighborhood {
        self.neighborhood
    }

    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn n_sources(&self) -> usize {
        self.n_coils * self.neighborhood.ky * self.neighborhood.kx
    }

    /// Weights for targets `d` lines above a lattice line.
    pub fn weights(&self, d: usize) -> &DMatrix<Complex64> {
        &self.weights[d - 1]
    }

    /// Builds a kernel from explicit weights (used to plant known kernels).
    pub fn from_weights(
        neighborhood: Neighborhood,
        acceleration: usize,
        n_coils: usize,
        weights: Vec<DMatrix<Complex64>>,
    ) -> Result<Self> {
        let sources = n_coils * neighborhood.ky * neighborhood.kx;
        if weights.len() + 1 != acceleration
            || weights.iter().any(|w| w.nrows() != sources || w.ncols() != n_coils)
        {
            return Err(Error::invalid("GRAPPA weight dimensions do not match the neighborhood"));
        }
        Ok(Self {
            neighborhood,
            acceleration,
            n_coils,
            fit_residual: vec![0.0; weights.len()],
            rank: vec![sources; weights.len()],
            weights,
        })
    }
}

fn source_lines(nb: &Neighborhood, k0: isize, r: usize) -> Vec<isize> {
    // ky = 2 → {k0, k0 + R}; ky = 4 → {k0 − R, k0, k0 + R, k0 + 2R}
    let lo = -((nb.ky as isize - 1) / 2);
    (0..nb.ky as isize).map(|j| k0 + (lo + j) * r as isize).collect()
}

/// Gathers the source vector for a target in column `col`. Without `wrap`,
/// returns false if any source falls outside the grid or on an unsampled line;
/// with `wrap`, lines wrap cyclically and missing samples read as zero.
fn gather(
    y: &KSpaceData,
    nb: &Neighborhood,
    lines: &[isize],
    col: isize,
    sampled: &dyn Fn(isize) -> bool,
    wrap: bool,
    out: &mut Vec<Complex64>,
) -> bool {
    out.clear();
    let (h, w) = (y.height() as isize, y.width() as isize);
    for c in 0..y.n_coils() {
        let coil = y.coil(c);
        for &l in lines {
            let l = if wrap { l.rem_euclid(h) } else { l };
            let inside = (0..h).contains(&l) && sampled(l);
            if !inside && !wrap {
                return false;
            }
            for dx in nb.kx_offsets() {
                let cc = col + dx;
                if inside && (0..w).contains(&cc) {
                    out.push(coil[(l * w + cc) as usize]);
                } else if !wrap {
                    return false;
                } else {
                    out.push(Complex64::new(0.0, 0.0));
                }
            }
        }
    }
    true
}

/// Fits per-offset weights on the fully sampled calibration block of `y`.
pub fn grappa_calibrate(y: &KSpaceData, mask: &SamplingMask, nb: Neighborhood) -> Result<GrappaKernel> {
    if mask.kind() != MaskKind::Equidistant {
        return Err(Error::invalid("GRAPPA needs an equidistant line pattern"));
    }
    if mask.height() != y.height() {
        return Err(Error::shape("grappa_calibrate", &[mask.height()], &[y.height()]));
    }
    if nb.ky == 0 || nb.kx.is_multiple_of(2) {
        return Err(Error::invalid("GRAPPA neighborhood needs ky ≥ 1 and odd kx"));
    }
    let r = mask.acceleration();
    let n_coils = y.n_coils();
    let unknowns = n_coils * nb.ky * nb.kx;
    if r == 1 {
        return GrappaKernel::from_weights(nb, 1, n_coils, Vec::new());
    }
    if n_coils < r {
        return Err(Error::Calibration {
            reason: format!("{n_coils} coil(s) cannot resolve R={r}"),
            rank: 0,
            unknowns,
        });
    }
    let acs = mask.acs_range();
    let in_acs = |l: isize| l >= acs.start as isize && l < acs.end as isize;
    let w = y.width() as isize;
    let mut weights = Vec::with_capacity(r - 1);
    let mut fit_residual = Vec::with_capacity(r - 1);
    let mut ranks = Vec::with_capacity(r - 1);
    let mut src = Vec::with_capacity(unknowns);
    for d in 1..r {
        let mut rows: Vec<Complex64> = Vec::new();
        let mut targets: Vec<Complex64> = Vec::new();
        let mut n_rows = 0;
        for k0 in acs.start as isize..acs.end as isize {
            let lines = source_lines(&nb, k0, r);
            let target = k0 + d as isize;
            if !in_acs(target) || lines.iter().any(|&l| !in_acs(l)) {
                continue;
            }
            for col in 0..w {
                if !gather(y, &nb, &lines, col, &in_acs, false, &mut src) {
                    continue;
                }
                rows.extend_from_slice(&src);
                for c in 0..n_coils {
                    targets.push(y.coil(c)[(target * w + col) as usize]);
                }
                n_rows += 1;
            }
        }
        if n_rows < unknowns {
            return Err(Error::Calibration {
                reason: format!(
                    "ACS block yields {n_rows} fitting equations for offset {d}, need at least {unknowns}"
                ),
                rank: n_rows,
                unknowns,
            });
        }
        let a = DMatrix::from_row_slice(n_rows, unknowns, &rows);
        let b = DMatrix::from_row_slice(n_rows, n_coils, &targets);
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let cutoff = smax * 1e-9;
        let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
        if rank < unknowns {
            return Err(Error::Calibration {
                reason: format!("calibration matrix for offset {d} is rank deficient"),
                rank,
                unknowns,
            });
        }
        let sol = svd
            .solve(&b, cutoff)
            .map_err(|e| Error::invalid(format!("GRAPPA least squares: {e}")))?;
        let resid = (&a * &sol - &b).norm() / b.norm().max(f64::MIN_POSITIVE);
        weights.push(sol);
        fit_residual.push(resid);
        ranks.push(rank);
    }
    Ok(GrappaKernel {
        neighborhood: nb,
        acceleration: r,
        n_coils,
        weights,
        fit_residual,
        rank: ranks,
    })
}

/// Fills every unsampled line; sampled entries are copied unchanged.
pub fn grappa_reconstruct(y: &KSpaceData, kernel: &GrappaKernel) -> Result<KSpaceData> {
    if y.n_coils() != kernel.n_coils {
        return Err(Error::shape("grappa_reconstruct", &[kernel.n_coils], &[y.n_coils()]));
    }
    let lines = y
        .mask()
        .as_lines()
        .ok_or_else(|| Error::invalid("GRAPPA needs a line (phase-encode) mask"))?;
    let (h, w) = (y.height(), y.width());
    let plane = h * w;
    let r = kernel.acceleration;
    let mut out = y.data().to_vec();
    if r == 1 {
        return KSpaceData::new(y.n_coils(), KMask::full(h, w), out);
    }
    let sampled = |l: isize| lines[l as usize];
    let mut src = Vec::with_capacity(kernel.n_sources());
    for target in 0..h {
        if lines[target] {
            continue;
        }
        let d = target % r;
        let k0 = (target - d) as isize;
        if d == 0 {
            // a lattice line that was dropped; nothing to interpolate from
            continue;
        }
        let src_lines = source_lines(&kernel.neighborhood, k0, r);
        let wts = kernel.weights(d);
        for col in 0..w as isize {
            gather(y, &kernel.neighborhood, &src_lines, col, &sampled, true, &mut src);
            for c in 0..kernel.n_coils {
                let mut acc = Complex64::new(0.0, 0.0);
                for (s, v) in src.iter().enumerate() {
                    acc += v * wts[(s, c)];
                }
                out[c * plane + target * w + col as usize] = acc;
            }
        }
    }
    KSpaceData::new(y.n_coils(), KMask::full(h, w), out)
}

/// `Σ_c conj(s_c) · F^{-1}(y_c)`: coil combination of fully populated k-space.
pub fn sensitivity_combine(y: &KSpaceData, coils: &CoilSensitivities) -> Result<ComplexImage> {
    if (y.height(), y.width(), y.n_coils()) != (coils.height(), coils.width(), coils.n_coils()) {
        return Err(Error::shape(
            "sensitivity_combine",
            &[y.n_coils(), y.height(), y.width()],
            &[coils.n_coils(), coils.height(), coils.width()],
        ));
    }
    let plan = fft::plan(y.height(), y.width());
    let mut out = vec![Complex64::new(0.0, 0.0); y.height() * y.width()];
    for c in 0..y.n_coils() {
        let mut buf = y.coil(c).to_vec();
        plan.inverse(&mut buf);
        for ((o, b), s) in out.iter_mut().zip(&buf).zip(coils.map(c)) {
            *o += s.conj() * b;
        }
    }
    ComplexImage::new(y.height(), y.width(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_coils, make_mask, make_phantom, simulate_acquisition, NoiseModel};

    #[test]
    fn no_acceleration_is_identity() {
        let x = make_phantom(16, 16, 0).unwrap();
        let coils = make_coils(16, 16, 2, 0).unwrap();
        let mask = make_mask(16, 1, 4, MaskKind::Equidistant, 0).unwrap();
        let y = simulate_acquisition(&x, &coils, &mask.to_kmask(16), NoiseModel::new(0.01).unwrap(), 0).unwrap();
        let k = grappa_calibrate(&y, &mask, Neighborhood::default()).unwrap();
        let out = grappa_reconstruct(&y, &k).unwrap();
        assert_eq!(out.data(), y.data());
    }

    #[test]
    fn single_coil_is_rejected() {
        let x = make_phantom(32, 32, 0).unwrap();
        let coils = make_coils(32, 32, 1, 0).unwrap();
        let mask = make_mask(32, 2, 12, MaskKind::Equidistant, 0).unwrap();
        let y = simulate_acquisition(&x, &coils, &mask.to_kmask(32), NoiseModel::noiseless(), 0).unwrap();
        let err = grappa_calibrate(&y, &mask, Neighborhood::default()).unwrap_err();
        assert!(matches!(err, Error::Calibration { .. }), "{err}");
    }

    #[test]
    fn sampled_entries_untouched() {
        let x = make_phantom(32, 32, 1).unwrap();
        let coils = make_coils(32, 32, 4, 1).unwrap();
        let mask = make_mask(32, 2, 12, MaskKind::Equidistant, 0).unwrap();
        let y = simulate_acquisition(&x, &coils, &mask.to_kmask(32), NoiseModel::new(0.01).unwrap(), 0).unwrap();
        let k = grappa_calibrate(&y, &mask, Neighborhood::default()).unwrap();
        let out = grappa_reconstruct(&y, &k).unwrap();
        let plane = 32 * 32;
        for c in 0..4 {
            for i in 0..plane {
                if mask.lines()[i / 32] {
                    assert_eq!(out.data()[c * plane + i], y.data()[c * plane + i]);
                }
            }
        }
    }
}

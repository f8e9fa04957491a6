//! Synthetic ground truth: phantoms, coil maps, sampling masks and noisy acquisitions.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodingOperator, KMask, KSpaceData};
use crate::error::{Error, Result};
use crate::image::{ComplexImage, MIN_SIDE};

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// (intensity, semi-axis x, semi-axis y, center x, center y, rotation in degrees)
const ELLIPSES: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Normalized coordinate of a pixel center in `[-1, 1]`.
fn coord(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 + 1.0) / n as f64 - 1.0
}

/// A jittered Shepp-Logan-style ellipse phantom with a smooth phase, max magnitude 1.
pub fn make_phantom(height: usize, width: usize, seed: u64) -> Result<ComplexImage> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::invalid(format!(
            "phantom must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"
        )));
    }
    let mut rng = rng(seed);
    let mut ellipses = ELLIPSES;
    for (i, e) in ellipses.iter_mut().enumerate() {
        let j = if i == 0 { 0.3 } else { 1.0 };
        e[0] *= 1.0 + j * rng.gen_range(-0.25..0.25);
        e[1] *= 1.0 + j * rng.gen_range(-0.12..0.12);
        e[2] *= 1.0 + j * rng.gen_range(-0.12..0.12);
        e[3] += j * rng.gen_range(-0.04..0.04);
        e[4] += j * rng.gen_range(-0.04..0.04);
        e[5] += j * rng.gen_range(-12.0..12.0);
    }
    // smooth texture and phase: low-order polynomials in (x, y)
    let tex: [f64; 3] = [
        rng.gen_range(-0.15..0.15),
        rng.gen_range(-0.15..0.15),
        rng.gen_range(-0.1..0.1),
    ];
    let phase: [f64; 4] = [
        rng.gen_range(-PI..PI),
        rng.gen_range(-0.8..0.8),
        rng.gen_range(-0.8..0.8),
        rng.gen_range(-0.4..0.4),
    ];
    let mut img = ComplexImage::from_fn(height, width, |r, c| {
        let (x, y) = (coord(c, width), -coord(r, height));
        let mut mag = 0.0;
        for e in &ellipses {
            let (s, co) = e[5].to_radians().sin_cos();
            let (dx, dy) = (x - e[3], y - e[4]);
            let u = (dx * co + dy * s) / e[1];
            let v = (-dx * s + dy * co) / e[2];
            if u * u + v * v <= 1.0 {
                mag += e[0];
            }
        }
        let mag = mag.max(0.0) * (1.0 + tex[0] * x + tex[1] * y + tex[2] * x * y);
        let phi = phase[0] + phase[1] * x + phase[2] * y + phase[3] * x * y;
        Complex64::from_polar(mag, phi)
    })?;
    let peak = img.max_abs();
    if peak == 0.0 {
        return Err(Error::invalid("phantom is empty at this resolution"));
    }
    for v in img.data_mut() {
        *v /= peak;
    }
    Ok(img)
}

/// Complex receive sensitivities, normalized to unit sum of squares at every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities {
    height: usize,
    width: usize,
    maps: Vec<Vec<Complex64>>,
}

impl CoilSensitivities {
    /// Wraps maps as given (no normalization).
    pub fn new(height: usize, width: usize, maps: Vec<Vec<Complex64>>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::invalid("at least one coil map required"));
        }
        for m in &maps {
            if m.len() != height * width {
                return Err(Error::shape("CoilSensitivities::new", &[height, width], &[m.len()]));
            }
            if !crate::image::all_finite(m) {
                return Err(Error::NonFinite { op: "CoilSensitivities::new" });
            }
        }
        Ok(Self { height, width, maps })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    pub fn map(&self, c: usize) -> &[Complex64] {
        &self.maps[c]
    }

    pub fn maps(&self) -> &[Vec<Complex64>] {
        &self.maps
    }

    /// Per-pixel `Σ_c |s_c|²`.
    pub fn sum_of_squares(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.height * self.width];
        for m in &self.maps {
            for (o, v) in out.iter_mut().zip(m) {
                *o += v.norm_sqr();
            }
        }
        out
    }

    /// Places the maps at the center of a larger grid, extending them by edge
    /// replication (which preserves the unit sum of squares).
    pub fn zero_padded(&self, height: usize, width: usize) -> Result<Self> {
        if height < self.height || width < self.width {
            return Err(Error::invalid("padded coil grid smaller than original"));
        }
        let r0 = (height / 2 - self.height / 2) as isize;
        let c0 = (width / 2 - self.width / 2) as isize;
        let maps = self
            .maps
            .iter()
            .map(|m| {
                let mut out = Vec::with_capacity(height * width);
                for r in 0..height as isize {
                    let sr = (r - r0).clamp(0, self.height as isize - 1) as usize;
                    for c in 0..width as isize {
                        let sc = (c - c0).clamp(0, self.width as isize - 1) as usize;
                        out.push(m[sr * self.width + sc]);
                    }
                }
                out
            })
            .collect();
        Ok(Self { height, width, maps })
    }
}

/// Gaussian-lobe coils centered just outside the field of view at distinct angles.
pub fn make_coils(height: usize, width: usize, n_coils: usize, seed: u64) -> Result<CoilSensitivities> {
    if n_coils == 0 {
        return Err(Error::invalid("n_coils must be at least 1"));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("coil grid must be non-empty"));
    }
    let mut rng = rng(seed ^ 0x5eed_c011);
    let mut maps = Vec::with_capacity(n_coils);
    for c in 0..n_coils {
        // the quarter-step offset keeps opposite coils from sharing a y-profile
        let angle = 2.0 * PI * c as f64 / n_coils as f64
            + PI / (2.0 * n_coils as f64)
            + rng.gen_range(-0.1..0.1);
        let (cx, cy) = (1.3 * angle.cos(), 1.3 * angle.sin());
        let width_sq = 2.0 * 0.75f64.powi(2);
        let phase0 = rng.gen_range(-PI..PI);
        let map = (0..height * width)
            .map(|i| {
                let (x, y) = (coord(i % width, width), -coord(i / width, height));
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                Complex64::from_polar((-d2 / width_sq).exp(), phase0 + 0.8 * d2.sqrt())
            })
            .collect::<Vec<_>>();
        maps.push(map);
    }
    for i in 0..height * width {
        let sos: f64 = maps.iter().map(|m| m[i].norm_sqr()).sum::<f64>().sqrt();
        for m in maps.iter_mut() {
            m[i] /= sos;
        }
    }
    CoilSensitivities::new(height, width, maps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Equidistant,
    RandomUniform,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equidistant" | "uniform" => Ok(Self::Equidistant),
            "random" | "random-uniform" => Ok(Self::RandomUniform),
            _ => Err(Error::invalid(format!("unknown mask kind '{s}'"))),
        }
    }
}

/// Phase-encode line selection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingMask {
    lines: Vec<bool>,
    acceleration: usize,
    acs_lines: usize,
    kind: MaskKind,
}

impl SamplingMask {
    pub fn from_lines(lines: Vec<bool>, acceleration: usize, acs_lines: usize, kind: MaskKind) -> Result<Self> {
        if lines.is_empty() || acs_lines >= lines.len() || acceleration == 0 {
            return Err(Error::invalid("inconsistent sampling mask"));
        }
        Ok(Self {
            lines,
            acceleration,
            acs_lines,
            kind,
        })
    }

    pub fn height(&self) -> usize {
        self.lines.len()
    }

    pub fn lines(&self) -> &[bool] {
        &self.lines
    }

    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn acs_lines(&self) -> usize {
        self.acs_lines
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn line_count(&self) -> usize {
        self.lines.iter().filter(|&&b| b).count()
    }

    /// `H / (number of sampled lines)`.
    pub fn effective_acceleration(&self) -> f64 {
        self.height() as f64 / self.line_count() as f64
    }

    /// Row range of the calibration block.
    pub fn acs_range(&self) -> std::ops::Range<usize> {
        acs_range(self.height(), self.acs_lines)
    }

    pub fn to_kmask(&self, width: usize) -> KMask {
        KMask::from_lines(&self.lines, width)
    }
}

fn acs_range(height: usize, acs: usize) -> std::ops::Range<usize> {
    let start = height / 2 - acs / 2;
    start..start + acs
}

/// Builds a phase-encode mask: every `R`-th line (or a random set of the same
/// size) together with a centered calibration block.
pub fn make_mask(
    height: usize,
    acceleration: usize,
    acs_lines: usize,
    kind: MaskKind,
    seed: u64,
) -> Result<SamplingMask> {
    if acceleration == 0 {
        return Err(Error::invalid("acceleration must be at least 1"));
    }
    if acceleration > height {
        return Err(Error::invalid(format!(
            "acceleration {acceleration} exceeds {height} lines"
        )));
    }
    if acs_lines >= height {
        return Err(Error::invalid(format!(
            "{acs_lines} ACS lines do not fit in {height} lines"
        )));
    }
    let acs = acs_range(height, acs_lines);
    let mut lines: Vec<bool> = (0..height)
        .map(|i| i % acceleration == 0 || acs.contains(&i))
        .collect();
    if kind == MaskKind::RandomUniform {
        let target = lines.iter().filter(|&&b| b).count();
        let mut pool: Vec<usize> = (0..height).filter(|i| !acs.contains(i)).collect();
        pool.shuffle(&mut rng(seed ^ 0x3a5c_u64));
        lines = (0..height).map(|i| acs.contains(&i)).collect();
        for &i in pool.iter().take(target - acs_lines) {
            lines[i] = true;
        }
    }
    SamplingMask::from_lines(lines, acceleration, acs_lines, kind)
}

/// Complex Gaussian noise on acquired k-space samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviation of each real and imaginary component.
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn noiseless() -> Self {
        Self { sigma: 0.0 }
    }
}

/// `y = M ⊙ F(s_c ⊙ x) + n` with noise only on sampled entries.
pub fn simulate_acquisition(
    x: &ComplexImage,
    coils: &CoilSensitivities,
    mask: &KMask,
    noise: NoiseModel,
    seed: u64,
) -> Result<KSpaceData> {
    if x.dims() != (coils.height(), coils.width()) {
        return Err(Error::shape(
            "simulate_acquisition",
            &[x.height(), x.width()],
            &[coils.height(), coils.width()],
        ));
    }
    let e = EncodingOperator::new(coils.clone(), mask.clone())?;
    let clean = e.apply(x)?;
    if noise.sigma == 0.0 {
        return Ok(clean);
    }
    let mut rng = rng(seed ^ 0x0015_e000);
    let normal = Normal::new(0.0, noise.sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let plane = mask.height() * mask.width();
    let mut data = clean.data().to_vec();
    for (i, v) in data.iter_mut().enumerate() {
        if mask.bits()[i % plane] {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    KSpaceData::new(coils.n_coils(), mask.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft;

    #[test]
    fn phantom_is_deterministic_and_normalized() {
        let a = make_phantom(64, 64, 3).unwrap();
        let b = make_phantom(64, 64, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.max_abs(), 1.0);
        let c = make_phantom(64, 64, 4).unwrap();
        assert!(c.relative_error(&a).unwrap() > 0.01);
        assert!(make_phantom(4, 64, 0).is_err());
    }

    #[test]
    fn coils_are_normalized() {
        let one = make_coils(16, 16, 1, 0).unwrap();
        assert!(one.map(0).iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let four = make_coils(32, 24, 4, 9).unwrap();
        assert!(four.sum_of_squares().iter().all(|s| (s - 1.0).abs() < 1e-6));
        assert!(make_coils(8, 8, 0, 0).is_err());
    }

    #[test]
    fn mask_rules() {
        let full = make_mask(32, 1, 4, MaskKind::Equidistant, 0).unwrap();
        assert!(full.lines().iter().all(|&b| b));
        let m = make_mask(64, 4, 8, MaskKind::Equidistant, 0).unwrap();
        // 16 lattice lines, two of which (28, 32) fall inside the 28..36 block
        assert_eq!(m.line_count(), 22);
        assert!(m.acs_range().all(|i| m.lines()[i]));
        let r = make_mask(64, 4, 8, MaskKind::RandomUniform, 5).unwrap();
        assert_eq!(r.line_count(), 22);
        assert!(r.acs_range().all(|i| r.lines()[i]));
        assert_eq!(r, make_mask(64, 4, 8, MaskKind::RandomUniform, 5).unwrap());
        assert!(make_mask(8, 9, 0, MaskKind::Equidistant, 0).is_err());
        assert!(make_mask(8, 2, 8, MaskKind::Equidistant, 0).is_err());
    }

    #[test]
    fn noiseless_full_single_coil_chain_inverts() {
        let x = make_phantom(16, 16, 1).unwrap();
        let coils = CoilSensitivities::new(16, 16, vec![vec![Complex64::new(1.0, 0.0); 256]]).unwrap();
        let y = simulate_acquisition(&x, &coils, &KMask::full(16, 16), NoiseModel::noiseless(), 0).unwrap();
        let mut back = y.coil(0).to_vec();
        fft::plan(16, 16).inverse(&mut back);
        let err: f64 = back.iter().zip(x.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
        assert!((y.norm() - x.norm()).abs() < 1e-9);
    }

    #[test]
    fn unsampled_entries_are_exactly_zero() {
        let x = make_phantom(32, 32, 2).unwrap();
        let coils = make_coils(32, 32, 3, 2).unwrap();
        let mask = make_mask(32, 4, 4, MaskKind::Equidistant, 0).unwrap().to_kmask(32);
        let y = simulate_acquisition(&x, &coils, &mask, NoiseModel::new(0.05).unwrap(), 7).unwrap();
        for c in 0..3 {
            for (v, &on) in y.coil(c).iter().zip(mask.bits()) {
                if !on {
                    assert_eq!(*v, Complex64::new(0.0, 0.0));
                }
            }
        }
    }
}

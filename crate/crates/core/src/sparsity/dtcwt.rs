//! 2-D dual-tree complex wavelet transform.
//!
//! Every filtering stage is a linear map along one image axis. Each stage is
//! tabulated once per size as a sparse matrix ([`RowMap`]) by pushing unit
//! vectors through a direct port of the reference column filters, which gives
//! the exact adjoint for free (the transpose) and keeps the boundary handling
//! (half-sample symmetric extension) identical to the reference toolbox.
//!
//! Complex images are transformed channel-wise: the real and the imaginary
//! part each get their own set of complex subband coefficients.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use super::filters::{self, QShift};
use crate::error::{Error, Result};
use crate::image::ComplexImage;

/// Half-sample symmetric index reflection into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    let n2 = 2 * n as isize;
    let p = i.rem_euclid(n2);
    if p < n as isize {
        p as usize
    } else {
        (n2 - 1 - p) as usize
    }
}

/// `valid`-mode convolution: `out[i] = Σ_k f[k] · seq[i + len(f) − 1 − k]`.
fn conv_valid(seq: &[f64], f: &[f64]) -> Vec<f64> {
    let m = f.len();
    (0..seq.len() + 1 - m)
        .map(|i| f.iter().enumerate().map(|(k, fk)| fk * seq[i + m - 1 - k]).sum())
        .collect()
}

fn every_other(h: &[f64], start: usize) -> Vec<f64> {
    h.iter().skip(start).step_by(2).copied().collect()
}

/// Non-decimating symmetric-extension filter (odd-length filters keep the length).
fn colfilter(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m2 = (h.len() / 2) as isize;
    let xe: Vec<f64> = (-m2..n as isize + m2).map(|i| x[reflect(i, n)]).collect();
    conv_valid(&xe, h)
}

/// Decimate-by-two Q-shift analysis filter; `x.len()` must be a multiple of 4.
fn coldfilt(x: &[f64], ha: &[f64], hb: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = ha.len() as isize;
    let xe: Vec<f64> = (-m..n as isize + m).map(|i| x[reflect(i, n)]).collect();
    let (hao, hae) = (every_other(ha, 0), every_other(ha, 1));
    let (hbo, hbe) = (every_other(hb, 0), every_other(hb, 1));
    let t: Vec<isize> = (5..n as isize + 2 * m - 2).step_by(4).collect();
    let pick = |off: isize| -> Vec<f64> { t.iter().map(|&ti| xe[(ti + off) as usize]).collect() };
    let n2 = n / 2;
    let mut y = vec![0.0; n2];
    let same_sign = ha.iter().zip(hb).map(|(a, b)| a * b).sum::<f64>() > 0.0;
    let (s1, s2) = if same_sign { (0, 1) } else { (1, 0) };
    let a = add(&conv_valid(&pick(-1), &hao), &conv_valid(&pick(-3), &hae));
    let b = add(&conv_valid(&pick(0), &hbo), &conv_valid(&pick(-2), &hbe));
    for (k, v) in a.into_iter().enumerate() {
        y[s1 + 2 * k] = v;
    }
    for (k, v) in b.into_iter().enumerate() {
        y[s2 + 2 * k] = v;
    }
    y
}

/// Interpolate-by-two Q-shift synthesis filter.
fn colifilt(x: &[f64], ha: &[f64], hb: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = ha.len() as isize;
    let m2 = m / 2;
    let xe: Vec<f64> = (-m2..n as isize + m2).map(|i| x[reflect(i, n)]).collect();
    let (hao, hae) = (every_other(ha, 0), every_other(ha, 1));
    let (hbo, hbe) = (every_other(hb, 0), every_other(hb, 1));
    let same_sign = ha.iter().zip(hb).map(|(a, b)| a * b).sum::<f64>() > 0.0;
    let mut y = vec![0.0; 2 * n];
    let (t, phases): (Vec<isize>, [(isize, bool, &[f64]); 4]) = if m2 % 2 == 0 {
        (
            (3..n as isize + m).step_by(2).collect(),
            [(-2, false, &hae[..]), (-2, true, &hbe[..]), (0, false, &hao[..]), (0, true, &hbo[..])],
        )
    } else {
        (
            (2..n as isize + m - 1).step_by(2).collect(),
            [(0, false, &hao[..]), (0, true, &hbo[..]), (0, false, &hae[..]), (0, true, &hbe[..])],
        )
    };
    for (j, (off, use_a, f)) in phases.iter().enumerate() {
        let seq: Vec<f64> = t
            .iter()
            .map(|&ti| {
                let (ta, tb) = if same_sign { (ti, ti - 1) } else { (ti - 1, ti) };
                let idx = if *use_a { ta } else { tb } + off;
                xe[idx as usize]
            })
            .collect();
        for (k, v) in conv_valid(&seq, f).into_iter().enumerate() {
            y[4 * k + j] = v;
        }
    }
    y
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// A sparse linear map `R^n_in → R^n_out` applied along one axis of a 2-D array.
#[derive(Clone, Debug)]
pub(crate) struct RowMap {
    n_in: usize,
    n_out: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl RowMap {
    fn tabulate(n_in: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut e = vec![0.0; n_in];
        for j in 0..n_in {
            e[j] = 1.0;
            let col = f(&e);
            e[j] = 0.0;
            if rows.is_empty() {
                rows = vec![Vec::new(); col.len()];
            }
            for (i, v) in col.into_iter().enumerate() {
                if v != 0.0 {
                    rows[i].push((j, v));
                }
            }
        }
        Self {
            n_in,
            n_out: rows.len(),
            rows,
        }
    }

    fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n_in];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                rows[j].push((i, v));
            }
        }
        Self {
            n_in: self.n_out,
            n_out: self.n_in,
            rows,
        }
    }

    /// Half-sample symmetric extension from `n` to `n_out` samples (padding at the end).
    fn symmetric_pad(n: usize, n_out: usize) -> Self {
        Self {
            n_in: n,
            n_out,
            rows: (0..n_out).map(|i| vec![(reflect(i as isize, n), 1.0)]).collect(),
        }
    }

    /// Filters along the row index of a `n_in × cols` array.
    fn apply_axis0(&self, x: &[f64], cols: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_in * cols);
        let mut out = vec![0.0; self.n_out * cols];
        for (i, row) in self.rows.iter().enumerate() {
            let dst = &mut out[i * cols..(i + 1) * cols];
            for &(j, w) in row {
                for (d, s) in dst.iter_mut().zip(&x[j * cols..(j + 1) * cols]) {
                    *d += w * s;
                }
            }
        }
        out
    }

    /// Filters along the column index of a `rows × n_in` array.
    fn apply_axis1(&self, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.n_in);
        let mut out = vec![0.0; rows * self.n_out];
        for r in 0..rows {
            let src = &x[r * self.n_in..(r + 1) * self.n_in];
            let dst = &mut out[r * self.n_out..(r + 1) * self.n_out];
            for (d, row) in dst.iter_mut().zip(&self.rows) {
                *d = row.iter().map(|&(j, w)| w * src[j]).sum();
            }
        }
        out
    }
}

/// Analysis, adjoint and synthesis maps for one axis length at one level.
#[derive(Debug)]
struct AxisStage {
    lo: RowMap,
    hi: RowMap,
    lo_t: RowMap,
    hi_t: RowMap,
    syn_lo: RowMap,
    syn_hi: RowMap,
}

impl AxisStage {
    fn level1(n: usize) -> Self {
        let lo = RowMap::tabulate(n, |x| colfilter(x, &filters::H0O));
        let hi = RowMap::tabulate(n, |x| colfilter(x, &filters::H1O));
        Self {
            lo_t: lo.transpose(),
            hi_t: hi.transpose(),
            lo,
            hi,
            syn_lo: RowMap::tabulate(n, |x| colfilter(x, &filters::G0O)),
            syn_hi: RowMap::tabulate(n, |x| colfilter(x, &filters::G1O)),
        }
    }

    fn qshift(n: usize, q: &QShift) -> Self {
        let lo = RowMap::tabulate(n, |x| coldfilt(x, &q.h0b, &q.h0a));
        let hi = RowMap::tabulate(n, |x| coldfilt(x, &q.h1b, &q.h1a));
        Self {
            lo_t: lo.transpose(),
            hi_t: hi.transpose(),
            lo,
            hi,
            syn_lo: RowMap::tabulate(n / 2, |x| colifilt(x, &q.g0b, &q.g0a)),
            syn_hi: RowMap::tabulate(n / 2, |x| colifilt(x, &q.g1b, &q.g1a)),
        }
    }
}

fn stage_cache() -> &'static Mutex<HashMap<(usize, usize), Arc<AxisStage>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<AxisStage>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Stage for an axis of length `n` at `level` (1-based), cached process-wide.
fn stage(n: usize, level: usize) -> Arc<AxisStage> {
    let key = (n, level.min(2));
    let mut cache = stage_cache().lock().expect("stage cache poisoned");
    cache
        .entry(key)
        .or_insert_with(|| {
            Arc::new(if level == 1 {
                AxisStage::level1(n)
            } else {
                AxisStage::qshift(n, &filters::qshift_b())
            })
        })
        .clone()
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Quad (2×2 polyphase) real array → two complex orientation subbands.
fn q2c(y: &[f64], rows: usize, cols: usize, out0: &mut [Complex64], out1: &mut [Complex64]) {
    let (hr, hc) = (rows / 2, cols / 2);
    for r in 0..hr {
        for c in 0..hc {
            let a = y[(2 * r) * cols + 2 * c];
            let b = y[(2 * r) * cols + 2 * c + 1];
            let cc = y[(2 * r + 1) * cols + 2 * c];
            let d = y[(2 * r + 1) * cols + 2 * c + 1];
            let p = Complex64::new(a, b) * FRAC_1_SQRT_2;
            let q = Complex64::new(d, -cc) * FRAC_1_SQRT_2;
            out0[r * hc + c] = p - q;
            out1[r * hc + c] = p + q;
        }
    }
}

/// Inverse (and adjoint) of [`q2c`].
fn c2q(w0: &[Complex64], w1: &[Complex64], hr: usize, hc: usize) -> Vec<f64> {
    let cols = 2 * hc;
    let mut y = vec![0.0; 4 * hr * hc];
    for r in 0..hr {
        for c in 0..hc {
            let p = (w0[r * hc + c] + w1[r * hc + c]) * FRAC_1_SQRT_2;
            let q = (w0[r * hc + c] - w1[r * hc + c]) * FRAC_1_SQRT_2;
            y[(2 * r) * cols + 2 * c] = p.re;
            y[(2 * r) * cols + 2 * c + 1] = p.im;
            y[(2 * r + 1) * cols + 2 * c] = q.im;
            y[(2 * r + 1) * cols + 2 * c + 1] = -q.re;
        }
    }
    y
}

/// Orientation pairs in subband order, paired with the quad they come from.
/// Quads: 0 = vertical highpass then horizontal lowpass, 1 = vertical lowpass
/// then horizontal highpass, 2 = highpass both ways.
const PAIRS: [(usize, usize, usize); 3] = [(0, 0, 5), (1, 2, 3), (2, 1, 4)];

/// Forward/adjoint/inverse DTCWT for a fixed image size.
#[derive(Clone, Debug)]
pub struct Dtcwt {
    height: usize,
    width: usize,
    levels: usize,
    padded: (usize, usize),
    pad_rows: Option<Arc<(RowMap, RowMap)>>,
    pad_cols: Option<Arc<(RowMap, RowMap)>>,
}

impl Dtcwt {
    pub const DEFAULT_LEVELS: usize = 3;

    /// Sizes not divisible by `2^levels` are symmetrically padded at the end
    /// before analysis and cropped after synthesis.
    pub fn new(height: usize, width: usize, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::invalid("DTCWT needs at least one level"));
        }
        let unit = 1usize << levels;
        if height < unit || width < unit {
            return Err(Error::invalid(format!(
                "{height}x{width} image too small for {levels} DTCWT levels"
            )));
        }
        let ph = height.div_ceil(unit) * unit;
        let pw = width.div_ceil(unit) * unit;
        let pad = |n: usize, p: usize| {
            (p != n).then(|| {
                let m = RowMap::symmetric_pad(n, p);
                Arc::new((m.transpose(), m))
            })
        };
        Ok(Self {
            height,
            width,
            levels,
            padded: (ph, pw),
            pad_rows: pad(height, ph),
            pad_cols: pad(width, pw),
        })
    }

    /// Rejects sizes that would need padding.
    pub fn new_exact(height: usize, width: usize, levels: usize) -> Result<Self> {
        let unit = 1usize << levels.min(30);
        if !height.is_multiple_of(unit) || !width.is_multiple_of(unit) {
            return Err(Error::invalid(format!(
                "{height}x{width} is not divisible by 2^{levels}"
            )));
        }
        Self::new(height, width, levels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Highpass coefficient count of one real channel.
    fn highpass_per_channel(&self) -> usize {
        let (h, w) = self.padded;
        (1..=self.levels).map(|l| 6 * (h >> l) * (w >> l)).sum()
    }

    fn lowpass_dims(&self) -> (usize, usize) {
        let (h, w) = self.padded;
        (h >> (self.levels - 1), w >> (self.levels - 1))
    }

    fn per_channel(&self) -> usize {
        let (lh, lw) = self.lowpass_dims();
        self.highpass_per_channel() + lh * lw
    }

    /// Total number of coefficients for a complex image (both channels).
    pub fn coeff_len(&self) -> usize {
        2 * self.per_channel()
    }

    /// True for coefficients belonging to a highpass (oriented) subband.
    pub fn is_highpass(&self, index: usize) -> bool {
        index % self.per_channel() < self.highpass_per_channel()
    }

    /// Index ranges of the highpass coefficients, one per channel.
    pub fn highpass_ranges(&self) -> [std::ops::Range<usize>; 2] {
        let (pc, hp) = (self.per_channel(), self.highpass_per_channel());
        [0..hp, pc..pc + hp]
    }

    fn check_image(&self, x: &ComplexImage) -> Result<()> {
        if x.dims() != (self.height, self.width) {
            return Err(Error::shape(
                "Dtcwt",
                &[self.height, self.width],
                &[x.height(), x.width()],
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &ComplexImage) -> Result<Vec<Complex64>> {
        self.check_image(x)?;
        Ok(self.forward_slice(x.data()))
    }

    pub(crate) fn forward_slice(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.coeff_len());
        let re: Vec<f64> = x.iter().map(|v| v.re).collect();
        let im: Vec<f64> = x.iter().map(|v| v.im).collect();
        self.analyze(&re, &mut out);
        self.analyze(&im, &mut out);
        out
    }

    /// Adjoint of `forward` with respect to the real inner product
    /// `Re⟨·,·⟩` on both sides.
    pub fn adjoint(&self, c: &[Complex64]) -> Result<ComplexImage> {
        self.check_coeffs(c)?;
        Ok(ComplexImage::from_parts(self.height, self.width, self.adjoint_slice(c)))
    }

    pub(crate) fn adjoint_slice(&self, c: &[Complex64]) -> Vec<Complex64> {
        let pc = self.per_channel();
        let re = self.analyze_t(&c[..pc]);
        let im = self.analyze_t(&c[pc..]);
        re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect()
    }

    /// Synthesis; `inverse(forward(x)) = x` up to the filter bank's reconstruction error.
    pub fn inverse(&self, c: &[Complex64]) -> Result<ComplexImage> {
        self.check_coeffs(c)?;
        let pc = self.per_channel();
        let re = self.synthesize(&c[..pc]);
        let im = self.synthesize(&c[pc..]);
        let data = re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect();
        ComplexImage::new(self.height, self.width, data)
    }

    /// Lowpass array size entering level 1 (index 0) and leaving each level.
    fn level_dims(&self) -> Vec<(usize, usize)> {
        let (h, w) = self.padded;
        (0..=self.levels)
            .map(|l| if l == 0 { (h, w) } else { (h >> (l - 1), w >> (l - 1)) })
            .collect()
    }

    fn check_coeffs(&self, c: &[Complex64]) -> Result<()> {
        if c.len() != self.coeff_len() {
            return Err(Error::shape("Dtcwt coefficients", &[self.coeff_len()], &[c.len()]));
        }
        Ok(())
    }

    fn analyze(&self, x: &[f64], out: &mut Vec<Complex64>) {
        let (mut rows, mut cols) = self.padded;
        let mut lolo = self.pad(x);
        for level in 1..=self.levels {
            let sr = stage(rows, level);
            let sc = stage(cols, level);
            let lo = sr.lo.apply_axis0(&lolo, cols);
            let hi = sr.hi.apply_axis0(&lolo, cols);
            let (nr, nc) = (sr.lo.n_out, sc.lo.n_out);
            let quads = [
                sc.lo.apply_axis1(&hi, nr),
                sc.hi.apply_axis1(&lo, nr),
                sc.hi.apply_axis1(&hi, nr),
            ];
            lolo = sc.lo.apply_axis1(&lo, nr);
            let sub = (nr / 2) * (nc / 2);
            let base = out.len();
            out.resize(base + 6 * sub, Complex64::new(0.0, 0.0));
            let level_out = &mut out[base..];
            for &(quad, o0, o1) in &PAIRS {
                let (a, b) = split_two(level_out, o0, o1, sub);
                q2c(&quads[quad], nr, nc, a, b);
            }
            rows = nr;
            cols = nc;
        }
        out.extend(lolo.into_iter().map(|v| Complex64::new(v, 0.0)));
    }

    fn analyze_t(&self, c: &[Complex64]) -> Vec<f64> {
        let (h, w) = self.padded;
        let dims = self.level_dims();
        let mut offsets = Vec::with_capacity(self.levels);
        let mut acc = 0;
        for l in 1..=self.levels {
            offsets.push(acc);
            acc += 6 * (h >> l) * (w >> l);
        }
        let mut lolo: Vec<f64> = c[acc..].iter().map(|v| v.re).collect();
        for level in (1..=self.levels).rev() {
            let (rows, cols) = dims[level - 1];
            let sr = stage(rows, level);
            let sc = stage(cols, level);
            let (nr, nc) = dims[level];
            let sub = (nr / 2) * (nc / 2);
            let lvl = &c[offsets[level - 1]..offsets[level - 1] + 6 * sub];
            let quad = |o0: usize, o1: usize| {
                c2q(&lvl[o0 * sub..(o0 + 1) * sub], &lvl[o1 * sub..(o1 + 1) * sub], nr / 2, nc / 2)
            };
            let (q_lh, q_hl, q_hh) = (quad(0, 5), quad(2, 3), quad(1, 4));
            let lo = add(&sc.lo_t.apply_axis1(&lolo, nr), &sc.hi_t.apply_axis1(&q_hl, nr));
            let hi = add(&sc.lo_t.apply_axis1(&q_lh, nr), &sc.hi_t.apply_axis1(&q_hh, nr));
            lolo = add(&sr.lo_t.apply_axis0(&lo, cols), &sr.hi_t.apply_axis0(&hi, cols));
        }
        self.crop_t(&lolo)
    }

    fn synthesize(&self, c: &[Complex64]) -> Vec<f64> {
        let (h, w) = self.padded;
        let mut offsets = Vec::with_capacity(self.levels);
        let mut acc = 0;
        for l in 1..=self.levels {
            offsets.push(acc);
            acc += 6 * (h >> l) * (w >> l);
        }
        let dims = self.level_dims();
        let mut z: Vec<f64> = c[acc..].iter().map(|v| v.re).collect();
        for level in (1..=self.levels).rev() {
            let (rows, cols) = dims[level - 1];
            let nc = dims[level].1;
            let sr = stage(rows, level);
            let sc = stage(cols, level);
            let (hr, hc) = (h >> level, w >> level);
            let sub = hr * hc;
            let lvl = &c[offsets[level - 1]..offsets[level - 1] + 6 * sub];
            let quad = |o0: usize, o1: usize| {
                c2q(&lvl[o0 * sub..(o0 + 1) * sub], &lvl[o1 * sub..(o1 + 1) * sub], hr, hc)
            };
            let (lh, hl, hh) = (quad(0, 5), quad(2, 3), quad(1, 4));
            let y1 = add(&sr.syn_lo.apply_axis0(&z, nc), &sr.syn_hi.apply_axis0(&lh, nc));
            let y2 = add(&sr.syn_lo.apply_axis0(&hl, nc), &sr.syn_hi.apply_axis0(&hh, nc));
            z = add(&sc.syn_lo.apply_axis1(&y1, rows), &sc.syn_hi.apply_axis1(&y2, rows));
        }
        self.crop(&z)
    }

    fn pad(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        if let Some(p) = &self.pad_rows {
            v = p.1.apply_axis0(&v, self.width);
        }
        if let Some(p) = &self.pad_cols {
            v = p.1.apply_axis1(&v, self.padded.0);
        }
        v
    }

    /// Adjoint of `pad`.
    fn crop_t(&self, x: &[f64]) -> Vec<f64> {
        let mut v = x.to_vec();
        if let Some(p) = &self.pad_cols {
            v = p.0.apply_axis1(&v, self.padded.0);
        }
        if let Some(p) = &self.pad_rows {
            v = p.0.apply_axis0(&v, self.width);
        }
        v
    }

    /// Left inverse of `pad`: keep the leading block.
    fn crop(&self, x: &[f64]) -> Vec<f64> {
        let pw = self.padded.1;
        (0..self.height)
            .flat_map(|r| x[r * pw..r * pw + self.width].iter().copied())
            .collect()
    }
}

fn split_two(
    level: &mut [Complex64],
    o0: usize,
    o1: usize,
    sub: usize,
) -> (&mut [Complex64], &mut [Complex64]) {
    debug_assert!(o0 < o1);
    let (head, tail) = level.split_at_mut(o1 * sub);
    (&mut head[o0 * sub..(o0 + 1) * sub], &mut tail[..sub])
}

/// Complex soft threshold `c · max(|c| − τ, 0) / |c|`, exactly zero at the origin.
pub fn soft_threshold(c: Complex64, tau: f64) -> Complex64 {
    let mag = c.norm();
    if mag <= tau || mag == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        c * ((mag - tau) / mag)
    }
}

/// Applies [`soft_threshold`] to every coefficient.
pub fn soft_threshold_all(coeffs: &[Complex64], tau: f64) -> Vec<Complex64> {
    coeffs.iter().map(|&c| soft_threshold(c, tau)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexImage::from_fn(h, w, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .unwrap()
    }

    fn test_signal(h: usize, w: usize) -> ComplexImage {
        ComplexImage::from_fn(h, w, |r, c| {
            let (r, c) = (r as f64, c as f64);
            let v = (0.37 * r).sin() * (0.21 * c).cos() + 0.05 * r - 0.03 * c * (r % 3.0);
            Complex64::new(v, 0.0)
        })
        .unwrap()
    }

    // Reference values from the numpy DTCWT toolbox (near_sym_b / qshift_b,
    // 3 levels) on `test_signal(32, 32)`.
    #[test]
    fn matches_reference_toolbox() {
        let t = Dtcwt::new(32, 32, 3).unwrap();
        let c = t.forward(&test_signal(32, 32)).unwrap();
        let lowpass = &c[t.highpass_per_channel()..t.per_channel()];
        assert!((lowpass[0].re - 2.7688773730026144).abs() < 1e-12);
        assert!((lowpass[3 * 8 + 5].re - 0.7573680719557329).abs() < 1e-12);
        assert!((lowpass[7 * 8 + 2].re - 6.420747909598932).abs() < 1e-12);
        let at = |level: usize, r: usize, col: usize, o: usize| {
            let offset: usize = (1..level).map(|l| 6 * (32 >> l) * (32 >> l)).sum();
            let n = 32 >> level;
            c[offset + o * n * n + r * n + col]
        };
        let expect = [
            (1, 1, 2, 0, -0.16805889118689143, -0.0006536247516052418),
            (2, 3, 4, 3, 0.06602048065917823, -0.004351113171860106),
            (3, 2, 1, 5, 1.6932153920827258, -0.573321927202635),
            (1, 10, 7, 1, 1.1041759486533388e-05, -0.00017857859117889998),
            (1, 15, 0, 4, -0.002755771552503201, 0.003321661638094077),
        ];
        for (level, r, col, o, re, im) in expect {
            let v = at(level, r, col, o);
            assert!((v.re - re).abs() < 1e-12 && (v.im - im).abs() < 1e-12, "{level} {r} {col} {o}: {v}");
        }
    }

    #[test]
    fn perfect_reconstruction() {
        let t = Dtcwt::new(64, 64, 3).unwrap();
        let x = random_image(64, 64, 1);
        let back = t.inverse(&t.forward(&x).unwrap()).unwrap();
        assert!(back.relative_error(&x).unwrap() < 1e-6);
    }

    #[test]
    fn padded_sizes_round_trip() {
        let t = Dtcwt::new(36, 20, 3).unwrap();
        let x = random_image(36, 20, 2);
        let back = t.inverse(&t.forward(&x).unwrap()).unwrap();
        assert!(back.relative_error(&x).unwrap() < 1e-6);
        assert!(Dtcwt::new_exact(36, 20, 3).is_err());
    }

    #[test]
    fn adjoint_dot_product() {
        let t = Dtcwt::new(32, 24, 2).unwrap();
        let x = random_image(32, 24, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c: Vec<Complex64> = (0..t.coeff_len())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let wx = t.forward(&x).unwrap();
        // lowpass coefficients are real, so the adjoint reads only their real part
        let lhs: f64 = wx.iter().zip(&c).map(|(a, b)| (a.conj() * b).re).sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(t.adjoint(&c).unwrap().data())
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn soft_threshold_examples() {
        let v = soft_threshold(Complex64::new(3.0, 4.0), 1.0);
        assert!((v - Complex64::new(2.4, 3.2)).norm() < 1e-15);
        assert_eq!(soft_threshold(Complex64::new(0.3, 0.4), 0.5), Complex64::new(0.0, 0.0));
        assert_eq!(soft_threshold(Complex64::new(0.0, 0.0), 0.0), Complex64::new(0.0, 0.0));
        let c = Complex64::new(-1.5, 0.25);
        assert_eq!(soft_threshold(c, 0.0), c);
    }

    #[test]
    fn coefficient_count() {
        let t = Dtcwt::new(64, 64, 3).unwrap();
        assert_eq!(t.coeff_len(), 2 * (8064 + 256));
    }
}

//! Centered, orthonormal 2-D discrete Fourier transforms.
//!
//! `forward(x) = fftshift(fft2(ifftshift(x))) / sqrt(H·W)`, so the DC sample sits at
//! `(H/2, W/2)` and the transform is unitary. The 1-D variants act along the
//! phase-encode (row-index) axis only.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Precomputed plans for one image size.
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, usize), Arc<Fft2>>> = RefCell::new(HashMap::new());
}

/// Returns a cached plan for `height × width` images.
pub fn plan(height: usize, width: usize) -> Arc<Fft2> {
    PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry((height, width))
            .or_insert_with(|| Arc::new(Fft2::new(height, width)))
            .clone()
    })
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform2(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform2(buf, true);
    }

    /// Centered orthonormal transform along the row-index (phase-encode) axis only.
    pub fn forward_cols(&self, buf: &mut [Complex64]) {
        self.transform_cols(buf, false);
    }

    pub fn inverse_cols(&self, buf: &mut [Complex64]) {
        self.transform_cols(buf, true);
    }

    fn transform2(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w, "fft buffer size");
        let mut tmp = vec![Complex64::new(0.0, 0.0); h * w];
        // ifftshift folded into the gather: tmp[r][c] = buf[(r + h/2) % h][(c + w/2) % w]
        roll(buf, &mut tmp, h, w, h / 2, w / 2);
        let row = if inverse { &self.row_inv } else { &self.row_fwd };
        row.process(&mut tmp);
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        transpose(&tmp, &mut t, h, w);
        let col = if inverse { &self.col_inv } else { &self.col_fwd };
        col.process(&mut t);
        transpose(&t, &mut tmp, w, h);
        // fftshift: out[r][c] = tmp[(r + h - h/2) % h][...]
        roll(&tmp, buf, h, w, h - h / 2, w - w / 2);
        let scale = 1.0 / ((h * w) as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    fn transform_cols(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w, "fft buffer size");
        let mut t = vec![Complex64::new(0.0, 0.0); h * w];
        transpose(buf, &mut t, h, w);
        let mut shifted = vec![Complex64::new(0.0, 0.0); h * w];
        roll(&t, &mut shifted, w, h, 0, h / 2);
        let col = if inverse { &self.col_inv } else { &self.col_fwd };
        col.process(&mut shifted);
        roll(&shifted, &mut t, w, h, 0, h - h / 2);
        transpose(&t, buf, w, h);
        let scale = 1.0 / (h as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// `dst[r][c] = src[(r + dr) % rows][(c + dc) % cols]`
fn roll(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize, dr: usize, dc: usize) {
    for r in 0..rows {
        let sr = (r + dr) % rows;
        let src_row = &src[sr * cols..(sr + 1) * cols];
        let dst_row = &mut dst[r * cols..(r + 1) * cols];
        let split = cols - dc % cols;
        // dst_row[c] = src_row[(c + dc) % cols]
        dst_row[..split].copy_from_slice(&src_row[dc % cols..]);
        dst_row[split..].copy_from_slice(&src_row[..dc % cols]);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

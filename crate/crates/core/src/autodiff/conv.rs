//! Same-size 2-D convolution via im2col and a dense matrix product.

/// `c = op(a)·op(b) + beta·c` with `op(a)` `m×k`, `op(b)` `k×n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every index addressed by these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a stride-1, zero-padded, odd-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
}

impl ConvShape {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// `[cin, H, W]` → `[cin·k·k, H·W]` patch matrix.
pub(crate) fn im2col(x: &[f64], s: &ConvShape) -> Vec<f64> {
    let (h, w, k) = (s.height, s.width, s.k);
    let half = (k / 2) as isize;
    let plane = s.plane();
    let mut cols = vec![0.0; s.patch() * plane];
    for c in 0..s.cin {
        let src = &x[c * plane..(c + 1) * plane];
        for ky in 0..k {
            let dy = half - ky as isize;
            for kx in 0..k {
                let dx = half - kx as isize;
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for r in 0..h {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let c_lo = (-dx).max(0) as usize;
                    let c_hi = (w as isize - dx).min(w as isize) as usize;
                    if c_lo >= c_hi {
                        continue;
                    }
                    let s_off = sr as usize * w;
                    let d = &mut dst[r * w + c_lo..r * w + c_hi];
                    let from = (s_off as isize + c_lo as isize + dx) as usize;
                    d.copy_from_slice(&src[from..from + (c_hi - c_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the image.
pub(crate) fn col2im(cols: &[f64], s: &ConvShape) -> Vec<f64> {
    let (h, w, k) = (s.height, s.width, s.k);
    let half = (k / 2) as isize;
    let plane = s.plane();
    let mut x = vec![0.0; s.cin * plane];
    for c in 0..s.cin {
        let dst = &mut x[c * plane..(c + 1) * plane];
        for ky in 0..k {
            let dy = half - ky as isize;
            for kx in 0..k {
                let dx = half - kx as isize;
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for r in 0..h {
                    let sr = r as isize + dy;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let c_lo = (-dx).max(0) as usize;
                    let c_hi = (w as isize - dx).min(w as isize) as usize;
                    if c_lo >= c_hi {
                        continue;
                    }
                    let from = (sr as usize * w) as isize + c_lo as isize + dx;
                    let d = &mut dst[from as usize..from as usize + (c_hi - c_lo)];
                    for (dv, sv) in d.iter_mut().zip(&src[r * w + c_lo..r * w + c_hi]) {
                        *dv += sv;
                    }
                }
            }
        }
    }
    x
}

/// `out[o] = b[o] + Σ_i w[o, i] * x[i]` (true convolution, zero padded).
pub(crate) fn conv2d(x: &[f64], weight: &[f64], bias: Option<&[f64]>, s: &ConvShape) -> Vec<f64> {
    let plane = s.plane();
    let cols = im2col(x, s);
    let mut out = vec![0.0; s.cout * plane];
    if let Some(b) = bias {
        for (o, &bv) in b.iter().enumerate() {
            out[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = bv);
        }
    }
    gemm(s.cout, s.patch(), plane, weight, false, &cols, false, 1.0, &mut out);
    out
}

/// Gradients of [`conv2d`] with respect to (input, weight, bias).
pub(crate) fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    g: &[f64],
    s: &ConvShape,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let plane = s.plane();
    let gb: Vec<f64> = g.chunks(plane).map(|c| c.iter().sum()).collect();
    let gw = need_w.then(|| {
        let cols = im2col(x, s);
        let mut gw = vec![0.0; s.cout * s.patch()];
        gemm(s.cout, plane, s.patch(), g, false, &cols, true, 0.0, &mut gw);
        gw
    });
    let gx = need_x.then(|| {
        let mut gcols = vec![0.0; s.patch() * plane];
        gemm(s.patch(), s.cout, plane, weight, true, g, false, 0.0, &mut gcols);
        col2im(&gcols, s)
    });
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], w: &[f64], s: &ConvShape) -> Vec<f64> {
        let (h, wd, k) = (s.height as isize, s.width as isize, s.k as isize);
        let mut out = vec![0.0; s.cout * (h * wd) as usize];
        for o in 0..s.cout {
            for r in 0..h {
                for c in 0..wd {
                    let mut acc = 0.0;
                    for i in 0..s.cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sr, sc) = (r - ky + k / 2, c - kx + k / 2);
                                if sr >= 0 && sr < h && sc >= 0 && sc < wd {
                                    acc += w[((o * s.cin + i) * s.k + ky as usize) * s.k + kx as usize]
                                        * x[i * (h * wd) as usize + (sr * wd + sc) as usize];
                                }
                            }
                        }
                    }
                    out[o * (h * wd) as usize + (r * wd + c) as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_sum() {
        let s = ConvShape { cin: 3, cout: 2, height: 7, width: 5, k: 3 };
        let x: Vec<f64> = (0..3 * 35).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let w: Vec<f64> = (0..2 * 27).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
        let fast = conv2d(&x, &w, None, &s);
        let slow = naive(&x, &w, &s);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_reproduces_kernel() {
        let s = ConvShape { cin: 1, cout: 1, height: 8, width: 8, k: 3 };
        let mut x = vec![0.0; 64];
        x[3 * 8 + 4] = 1.0;
        let w: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let y = conv2d(&x, &w, None, &s);
        for ky in 0..3 {
            for kx in 0..3 {
                assert_eq!(y[(2 + ky) * 8 + 3 + kx], w[ky * 3 + kx]);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let s = ConvShape { cin: 2, cout: 1, height: 6, width: 9, k: 3 };
        let x: Vec<f64> = (0..108).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols_y: Vec<f64> = (0..2 * 9 * 54).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&x, &s).iter().zip(&cols_y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&cols_y, &s)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}

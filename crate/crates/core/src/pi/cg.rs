//! Conjugate gradients on Hermitian positive (semi)definite image-domain systems.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodingOperator, KSpaceData};
use crate::error::{Error, Result};
use crate::image::{self, ComplexImage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgConfig {
    pub max_iter: usize,
    /// Stop once `||A x − b|| ≤ tol · ||b||`.
    pub tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iter: 15,
            tol: 1e-6,
        }
    }
}

impl CgConfig {
    pub fn new(max_iter: usize, tol: f64) -> Result<Self> {
        let cfg = Self { max_iter, tol };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Settings tight enough that the solve is exact to rounding on small problems.
    pub fn converged() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-13,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("CG max_iter must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid("CG tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// How a CG run ended.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStatus {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    /// Residual stopped decreasing before the tolerance was met (typical of
    /// rank-deficient systems).
    pub plateau: bool,
}

impl CgStatus {
    /// Turns a non-converged run into an error carrying the final residual.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::Cg {
                iteration: self.iterations,
                residual: self.relative_residual,
                reason: "did not reach tolerance within max_iter",
            })
        }
    }
}

/// Solves `A x = b` for Hermitian PSD `A`, starting from `x0` (zero if `None`).
///
/// `apply(v, out)` must write `A v` into `out`.
pub fn cg_solve_slice(
    mut apply: impl FnMut(&[Complex64], &mut [Complex64]),
    b: &[Complex64],
    x0: Option<&[Complex64]>,
    cfg: &CgConfig,
) -> Result<(Vec<Complex64>, CgStatus)> {
    cfg.validate()?;
    let n = b.len();
    let zero = Complex64::new(0.0, 0.0);
    let b_norm = image::norm(b);
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![zero; n],
    };
    if b_norm == 0.0 && x0.is_none() {
        return Ok((
            x,
            CgStatus {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
                plateau: false,
            },
        ));
    }
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut ap = vec![zero; n];
    let mut r = b.to_vec();
    if x0.is_some() {
        apply(&x, &mut ap);
        for (ri, a) in r.iter_mut().zip(&ap) {
            *ri -= a;
        }
    }
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v.norm_sqr()).sum();
    let mut best = rr.sqrt() / scale;
    let mut stalled = 0;
    let mut status = CgStatus {
        iterations: 0,
        relative_residual: best,
        converged: best <= cfg.tol,
        plateau: false,
    };
    if status.converged {
        return Ok((x, status));
    }
    for it in 1..=cfg.max_iter {
        apply(&p, &mut ap);
        let pap = image::dot(&p, &ap).re;
        if !pap.is_finite() || !rr.is_finite() {
            return Err(Error::Cg {
                iteration: it,
                residual: rr.sqrt() / scale,
                reason: "non-finite iterate",
            });
        }
        if pap <= 0.0 {
            // p lies in the null space: nothing more to gain along it
            status.plateau = true;
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        let rr_new: f64 = r.iter().map(|v| v.norm_sqr()).sum();
        let rel = rr_new.sqrt() / scale;
        status.iterations = it;
        status.relative_residual = rel;
        if !rel.is_finite() {
            return Err(Error::Cg {
                iteration: it,
                residual: rel,
                reason: "non-finite iterate",
            });
        }
        if rel <= cfg.tol {
            status.converged = true;
            break;
        }
        if rel < 0.999 * best {
            best = rel;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 5 {
                status.plateau = true;
            }
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + p[i] * beta;
        }
        rr = rr_new;
    }
    Ok((x, status))
}

/// `cg_solve_slice` on images.
pub fn cg_solve(
    apply: impl FnMut(&[Complex64], &mut [Complex64]),
    b: &ComplexImage,
    cfg: &CgConfig,
) -> Result<(ComplexImage, CgStatus)> {
    let (x, status) = cg_solve_slice(apply, b.data(), None, cfg)?;
    Ok((ComplexImage::from_parts(b.height(), b.width(), x), status))
}

/// Least-squares SENSE reconstruction: CG on `E^H E x = E^H y`.
pub fn cg_sense(y: &KSpaceData, e: &EncodingOperator, cfg: &CgConfig) -> Result<(ComplexImage, CgStatus)> {
    let rhs = e.adjoint(y)?;
    cg_solve(|v, out| e.normal_into(v, out), &rhs, cfg)
}

/// `(E^H E + μ I)^{-1} (rhs + μ z)`, warm-started at `z`.
pub fn df_solve(
    z: &ComplexImage,
    rhs: &ComplexImage,
    e: &EncodingOperator,
    mu: f64,
    cfg: &CgConfig,
) -> Result<(ComplexImage, CgStatus)> {
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("penalty weight must be > 0, got {mu}")));
    }
    if z.dims() != rhs.dims() || z.dims() != (e.height(), e.width()) {
        return Err(Error::shape(
            "df_solve",
            &[z.height(), z.width()],
            &[rhs.height(), rhs.width()],
        ));
    }
    let (x, status) = df_solve_slice(z.data(), rhs.data(), e, mu, cfg)?;
    Ok((ComplexImage::from_parts(z.height(), z.width(), x), status))
}

pub(crate) fn df_solve_slice(
    z: &[Complex64],
    rhs: &[Complex64],
    e: &EncodingOperator,
    mu: f64,
    cfg: &CgConfig,
) -> Result<(Vec<Complex64>, CgStatus)> {
    let b: Vec<Complex64> = rhs.iter().zip(z).map(|(r, zv)| r + zv * mu).collect();
    cg_solve_slice(|v, out| shifted_normal(e, mu, v, out), &b, Some(z), cfg)
}

pub(crate) fn shifted_normal(e: &EncodingOperator, mu: f64, v: &[Complex64], out: &mut [Complex64]) {
    e.normal_into(v, out);
    for (o, vi) in out.iter_mut().zip(v) {
        *o += vi * mu;
    }
}

/// Solves `(E^H E + μ I) w = g` from zero; the core of the data-fidelity backward pass.
pub(crate) fn shifted_inverse(
    e: &EncodingOperator,
    mu: f64,
    g: &[Complex64],
    cfg: &CgConfig,
) -> Result<(Vec<Complex64>, CgStatus)> {
    cg_solve_slice(|v, out| shifted_normal(e, mu, v, out), g, None, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_apply(d: &[f64]) -> impl FnMut(&[Complex64], &mut [Complex64]) + '_ {
        move |v, out| {
            for ((o, x), s) in out.iter_mut().zip(v).zip(d) {
                *o = x * s;
            }
        }
    }

    #[test]
    fn identity_solves_in_one_step() {
        let b: Vec<Complex64> = (0..64).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let ones = vec![1.0; 64];
        let (x, st) = cg_solve_slice(diag_apply(&ones), &b, None, &CgConfig::default()).unwrap();
        assert_eq!(st.iterations, 1);
        assert!(st.converged);
        assert!(x.iter().zip(&b).all(|(a, c)| (a - c).norm() < 1e-12));
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let b = vec![Complex64::new(0.0, 0.0); 64];
        let d = vec![2.0; 64];
        let (x, st) = cg_solve_slice(diag_apply(&d), &b, None, &CgConfig::default()).unwrap();
        assert!(x.iter().all(|v| v.norm() == 0.0));
        assert_eq!(st.iterations, 0);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let d: Vec<f64> = (1..=64).map(|i| i as f64).collect();
        let b = vec![Complex64::new(1.0, 0.0); 64];
        let cfg = CgConfig::new(3, 1e-12).unwrap();
        let (_, st) = cg_solve_slice(diag_apply(&d), &b, None, &cfg).unwrap();
        assert!(!st.converged);
        assert!(matches!(st.require_converged(), Err(Error::Cg { iteration: 3, .. })));
    }

    #[test]
    fn nan_aborts() {
        let b = vec![Complex64::new(1.0, 0.0); 8];
        let d = vec![f64::NAN; 8];
        let err = cg_solve_slice(diag_apply(&d), &b, None, &CgConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Cg { .. }));
    }
}

//! Wavelet-regularized reconstruction by variable splitting with a quadratic penalty.
//!
//! Alternates a proximal step in the wavelet domain (soft thresholding of the
//! highpass subbands, lowpass kept) with the penalized data-fidelity solve
//! `(E^H E + μ I)^{-1}(E^H y + μ z)`.

use serde::{Deserialize, Serialize};

use super::dtcwt::{soft_threshold, Dtcwt};
use crate::encoding::EncodingOperator;
use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::pi::{df_solve, CgConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsConfig {
    pub outer_iters: usize,
    pub cg_steps: usize,
    /// `τ = threshold_scale · ||W x_init||_∞`.
    pub threshold_scale: f64,
    /// Penalty weight of the splitting.
    pub mu: f64,
    pub levels: usize,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            outer_iters: 10,
            cg_steps: 10,
            threshold_scale: 0.01,
            mu: 0.5,
            levels: Dtcwt::DEFAULT_LEVELS,
        }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.cg_steps == 0 || self.levels == 0 {
            return Err(Error::invalid("CS iteration counts and levels must be positive"));
        }
        if !(self.threshold_scale >= 0.0) || !(self.mu > 0.0) {
            return Err(Error::invalid("CS threshold scale must be >= 0 and mu > 0"));
        }
        Ok(())
    }

    /// Strongly regularized variant used to seed reweighting.
    pub fn heavy(&self) -> Self {
        Self {
            threshold_scale: self.threshold_scale * 10.0,
            ..*self
        }
    }
}

#[derive(Clone, Debug)]
pub struct CsOutput {
    pub image: ComplexImage,
    pub tau: f64,
    /// Surrogate objective `½⟨x, E^H E x⟩ − Re⟨x, rhs⟩ + τ·||W_hp x||_1` after each outer iteration.
    pub objective: Vec<f64>,
}

/// `||W x||_1` over the highpass subbands.
pub fn highpass_l1(w: &Dtcwt, x: &ComplexImage) -> Result<f64> {
    let c = w.forward(x)?;
    Ok(w.highpass_ranges()
        .iter()
        .flat_map(|r| c[r.clone()].iter())
        .map(|v| v.norm())
        .sum())
}

fn objective(e: &EncodingOperator, w: &Dtcwt, x: &ComplexImage, rhs: &ComplexImage, tau: f64) -> Result<f64> {
    let quad = 0.5 * x.dot(&e.normal(x)?)?.re - x.dot(rhs)?.re;
    Ok(quad + tau * highpass_l1(w, x)?)
}

/// Runs the splitting from `x_init` with data term `rhs = E^H y` (or its
/// image-only stand-in `E^H E x_PI`).
pub fn cs_reconstruct(
    x_init: &ComplexImage,
    rhs: &ComplexImage,
    e: &EncodingOperator,
    cfg: &CsConfig,
) -> Result<CsOutput> {
    cfg.validate()?;
    let w = Dtcwt::new(x_init.height(), x_init.width(), cfg.levels)?;
    let c0 = w.forward(x_init)?;
    let tau = cfg.threshold_scale * c0.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let cg = CgConfig::new(cfg.cg_steps, 1e-10)?;
    let mut x = x_init.clone();
    let mut history = Vec::with_capacity(cfg.outer_iters);
    for _ in 0..cfg.outer_iters {
        let mut c = w.forward(&x)?;
        for range in w.highpass_ranges() {
            for v in &mut c[range] {
                *v = soft_threshold(*v, tau);
            }
        }
        let z = w.inverse(&c)?;
        x = df_solve(&z, rhs, e, cfg.mu, &cg)?.0;
        history.push(objective(e, &w, &x, rhs, tau)?);
    }
    Ok(CsOutput {
        image: x,
        tau,
        objective: history,
    })
}

/// Image-only CS: the data term is formed from the parallel-imaging image.
pub fn cs_from_image(x_pi: &ComplexImage, e: &EncodingOperator, cfg: &CsConfig) -> Result<CsOutput> {
    let rhs = e.rhs_from_image(x_pi)?;
    cs_reconstruct(x_pi, &rhs, e, cfg)
}

/// Heavily regularized CS reconstruction that seeds the reweighting estimate.
pub fn reweight_init(x_pi: &ComplexImage, e: &EncodingOperator, cfg: &CsConfig) -> Result<ComplexImage> {
    Ok(cs_from_image(x_pi, e, &cfg.heavy())?.image)
}

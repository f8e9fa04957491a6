//! Training objectives: supervised, SSDU, equivariant imaging, and the
//! image-only compressibility + perturbation-fidelity objective.
//!
//! Each loss has a plain evaluator returning `f64` and a traced builder that
//! records the same computation on a [`Tape`] for training.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{EncodingLinear, NormalOp, PixelPermutation, Tape, Tensor, Var, WaveletOp};
use crate::encoding::{EncodingOperator, KMask, KSpaceData};
use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::model::{Model, TracedParams};
use crate::perturb::Perturbation;
use crate::sparsity::Dtcwt;
use crate::synth::{rng, SamplingMask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CupidLossConfig {
    /// Weight of the perturbation-fidelity term.
    pub lambda: f64,
    /// Drop the compressibility term entirely (the `λ → ∞` limit).
    pub pif_only: bool,
    /// Stabilizer relative to `max|W x⁽⁰⁾|`.
    pub epsilon_rel: f64,
    /// Perturbations per sample.
    pub k: usize,
    /// Refresh the reweighting estimate from the network output every this many epochs (0 = never).
    pub refresh_every: usize,
    pub levels: usize,
}

impl Default for CupidLossConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            pif_only: false,
            epsilon_rel: 1e-6,
            k: 6,
            refresh_every: 20,
            levels: Dtcwt::DEFAULT_LEVELS,
        }
    }
}

impl CupidLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if !(self.epsilon_rel > 0.0) {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        if self.k == 0 {
            return Err(Error::invalid("perturbation count must be at least 1"));
        }
        Ok(())
    }

    fn uses_comp(&self) -> bool {
        !self.pif_only
    }

    fn uses_pif(&self) -> bool {
        self.pif_only || self.lambda > 0.0
    }

    fn pif_weight(&self) -> f64 {
        if self.pif_only {
            1.0
        } else {
            self.lambda
        }
    }
}

/// Per-coefficient weights `1 / (|W x⁽ᵐ⁾|_n + ε)` of the reweighted ℓ1 term.
#[derive(Clone, Debug)]
pub struct Reweighting {
    pub epsilon: f64,
    pub weights: Vec<f64>,
}

impl Reweighting {
    /// `ε = epsilon_rel · max|W x⁽⁰⁾|`, fixed for the rest of training.
    pub fn initial(w: &Dtcwt, x0: &ComplexImage, epsilon_rel: f64) -> Result<Self> {
        let c = w.forward(x0)?;
        let peak = c.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let epsilon = epsilon_rel * peak;
        if !(epsilon > 0.0) {
            return Err(Error::invalid("reweighting estimate has no nonzero wavelet coefficient"));
        }
        Self::with_epsilon(w, x0, epsilon)
    }

    pub fn with_epsilon(w: &Dtcwt, estimate: &ComplexImage, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        let c = w.forward(estimate)?;
        Ok(Self {
            epsilon,
            weights: c.iter().map(|v| 1.0 / (v.norm() + epsilon)).collect(),
        })
    }

    pub fn refresh(&mut self, w: &Dtcwt, estimate: &ComplexImage) -> Result<()> {
        *self = Self::with_epsilon(w, estimate, self.epsilon)?;
        Ok(())
    }
}

/// `(1/N) Σ_n |W(output)_n| / (|W(reweight)_n| + ε)` over all coefficients.
pub fn loss_comp(output: &ComplexImage, reweight: &ComplexImage, w: &Dtcwt, epsilon: f64) -> Result<f64> {
    let rw = Reweighting::with_epsilon(w, reweight, epsilon)?;
    comp_value(output, w, &rw)
}

pub fn comp_value(output: &ComplexImage, w: &Dtcwt, rw: &Reweighting) -> Result<f64> {
    let c = w.forward(output)?;
    Ok(c.iter().zip(&rw.weights).map(|(v, q)| v.norm() * q).sum::<f64>() / c.len() as f64)
}

/// `(1/K) Σ_k ||p_k − (f(x + p_k) − f(x))|| / ||p_k||` for any reconstruction map `f`.
pub fn loss_pif_with(
    f: impl Fn(&ComplexImage) -> Result<ComplexImage>,
    x_pi: &ComplexImage,
    perturbations: &[ComplexImage],
) -> Result<f64> {
    pif_around(&f, &f(x_pi)?, x_pi, perturbations)
}

/// The perturbation-fidelity term given `base = f(x_pi)`.
fn pif_around(
    f: impl Fn(&ComplexImage) -> Result<ComplexImage>,
    base: &ComplexImage,
    x_pi: &ComplexImage,
    perturbations: &[ComplexImage],
) -> Result<f64> {
    if perturbations.is_empty() {
        return Err(Error::invalid("no perturbations"));
    }
    let mut total = 0.0;
    for p in perturbations {
        let pn = p.norm();
        if pn == 0.0 {
            return Err(Error::invalid("perturbation with zero norm"));
        }
        let shifted = f(&x_pi.add(p)?)?;
        total += p.sub(&shifted.sub(base)?)?.norm() / pn;
    }
    Ok(total / perturbations.len() as f64)
}

pub fn loss_pif(model: &Model, x_pi: &ComplexImage, e: &EncodingOperator, perturbations: &[Perturbation]) -> Result<f64> {
    let ps: Vec<ComplexImage> = perturbations.iter().map(|p| p.image.clone()).collect();
    loss_pif_with(|x| model.forward(x, e), x_pi, &ps)
}

/// Value of the combined loss and its parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub comp: f64,
    pub pif: f64,
}

pub fn loss_cupid(
    model: &Model,
    x_pi: &ComplexImage,
    e: &EncodingOperator,
    perturbations: &[Perturbation],
    w: &Dtcwt,
    rw: &Reweighting,
    cfg: &CupidLossConfig,
) -> Result<LossBreakdown> {
    let out = model.forward(x_pi, e)?;
    let comp = if cfg.uses_comp() { comp_value(&out, w, rw)? } else { 0.0 };
    let pif = if cfg.uses_pif() {
        let ps: Vec<ComplexImage> = perturbations.iter().map(|p| p.image.clone()).collect();
        pif_around(|x| model.forward(x, e), &out, x_pi, &ps)?
    } else {
        0.0
    };
    Ok(LossBreakdown {
        total: if cfg.uses_comp() { comp } else { 0.0 } + cfg.pif_weight() * pif,
        comp,
        pif,
    })
}

/// `||a − b||₂ / ||b||₂ + ||a − b||₁ / ||b||₁` with the complex modulus in the ℓ1 term.
pub fn normalized_l1_l2(estimate: &[num_complex::Complex64], reference: &[num_complex::Complex64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::shape("normalized_l1_l2", &[estimate.len()], &[reference.len()]));
    }
    let n2 = reference.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let n1: f64 = reference.iter().map(|v| v.norm()).sum();
    if n2 == 0.0 {
        return Err(Error::invalid("reference has zero norm"));
    }
    let (mut d2, mut d1) = (0.0, 0.0);
    for (a, b) in estimate.iter().zip(reference) {
        let d = (a - b).norm();
        d2 += d * d;
        d1 += d;
    }
    Ok(d2.sqrt() / n2 + d1 / n1)
}

/// Normalized ℓ1-ℓ2 between the reference k-space and `E_full(output)`.
pub fn loss_supervised(output: &ComplexImage, y_ref: &KSpaceData, e_full: &EncodingOperator) -> Result<f64> {
    let y_hat = e_full.apply(output)?;
    normalized_l1_l2(y_hat.data(), y_ref.data())
}

/// The two disjoint halves of an SSDU split of the acquired k-space points.
#[derive(Clone, Debug, PartialEq)]
pub struct SsduSplit {
    /// Fed to the network (contains the calibration block).
    pub theta: KMask,
    /// Held out for the loss.
    pub lambda: KMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsduConfig {
    /// `|Λ| / |Ω|`.
    pub rho: f64,
    pub seed: u64,
}

impl Default for SsduConfig {
    fn default() -> Self {
        Self { rho: 0.4, seed: 0 }
    }
}

/// Uniformly random split of the acquired points; calibration lines always go to `Θ`.
pub fn ssdu_split(mask: &SamplingMask, width: usize, rho: f64, seed: u64) -> Result<SsduSplit> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    let omega = mask.to_kmask(width);
    let acs = mask.acs_range();
    let candidates: Vec<usize> = omega
        .bits()
        .iter()
        .enumerate()
        .filter(|(i, &on)| on && !acs.contains(&(i / width)))
        .map(|(i, _)| i)
        .collect();
    let n_lambda = (rho * omega.count() as f64).round() as usize;
    if n_lambda == 0 || n_lambda > candidates.len() {
        return Err(Error::invalid(format!(
            "cannot hold out {n_lambda} of {} non-calibration points",
            candidates.len()
        )));
    }
    let mut r = rng(seed);
    let mut pool = candidates;
    pool.shuffle(&mut r);
    let mut lambda = vec![false; omega.bits().len()];
    for &i in &pool[..n_lambda] {
        lambda[i] = true;
    }
    let theta: Vec<bool> = omega.bits().iter().zip(&lambda).map(|(&o, &l)| o && !l).collect();
    Ok(SsduSplit {
        theta: KMask::new(omega.height(), width, theta)?,
        lambda: KMask::new(omega.height(), width, lambda)?,
    })
}

/// Normalized ℓ1-ℓ2 between `y_Λ` and `E_Λ f(y_Θ)`.
pub fn loss_ssdu(model: &Model, y_theta: &KSpaceData, e_theta: &EncodingOperator, y_lambda: &KSpaceData, e_lambda: &EncodingOperator) -> Result<f64> {
    let x_in = e_theta.adjoint(y_theta)?;
    let out = model.forward_with_rhs(&x_in, &x_in, e_theta)?;
    normalized_l1_l2(e_lambda.apply(&out)?.data(), y_lambda.data())
}

/// Pixel-grid transforms of the equivariance group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridTransform {
    Rot90,
    Rot180,
    Rot270,
    FlipRows,
    FlipCols,
}

impl GridTransform {
    pub const ALL: [GridTransform; 5] = [
        GridTransform::Rot90,
        GridTransform::Rot180,
        GridTransform::Rot270,
        GridTransform::FlipRows,
        GridTransform::FlipCols,
    ];

    fn name(self) -> &'static str {
        match self {
            GridTransform::Rot90 => "rot90",
            GridTransform::Rot180 => "rot180",
            GridTransform::Rot270 => "rot270",
            GridTransform::FlipRows => "flip_rows",
            GridTransform::FlipCols => "flip_cols",
        }
    }

    /// The source pixel of each output pixel.
    pub fn permutation(self, height: usize, width: usize) -> Result<PixelPermutation> {
        let quarter = matches!(self, GridTransform::Rot90 | GridTransform::Rot270);
        if quarter && height != width {
            return Err(Error::invalid(format!("{} needs a square grid, got {height}x{width}", self.name())));
        }
        let n = height;
        let source = (0..height * width)
            .map(|i| {
                let (r, c) = (i / width, i % width);
                let (sr, sc) = match self {
                    GridTransform::Rot90 => (c, n - 1 - r),
                    GridTransform::Rot180 => (height - 1 - r, width - 1 - c),
                    GridTransform::Rot270 => (n - 1 - c, r),
                    GridTransform::FlipRows => (height - 1 - r, c),
                    GridTransform::FlipCols => (r, width - 1 - c),
                };
                sr * width + sc
            })
            .collect();
        PixelPermutation::new(self.name(), height, width, source)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EiConfig {
    pub transforms: Vec<GridTransform>,
    pub beta: f64,
}

impl Default for EiConfig {
    fn default() -> Self {
        Self {
            transforms: GridTransform::ALL.to_vec(),
            beta: 1.0,
        }
    }
}

fn apply_perm(p: &PixelPermutation, x: &ComplexImage) -> ComplexImage {
    let src = p.source();
    ComplexImage::from_fn(x.height(), x.width(), |r, c| x.data()[src[r * x.width() + c]]).expect("same grid")
}

/// Data consistency plus `β Σ_g L(T_g x̂, f(E T_g x̂))`, both normalized ℓ1-ℓ2.
pub fn loss_ei(model: &Model, y: &KSpaceData, e: &EncodingOperator, cfg: &EiConfig) -> Result<f64> {
    let x_in = e.adjoint(y)?;
    let x_hat = model.forward_with_rhs(&x_in, &x_in, e)?;
    let mut total = normalized_l1_l2(e.apply(&x_hat)?.data(), y.data())?;
    for g in &cfg.transforms {
        let tx = apply_perm(&g.permutation(x_hat.height(), x_hat.width())?, &x_hat);
        let rhs = e.normal(&tx)?;
        let again = model.forward_with_rhs(&rhs, &rhs, e)?;
        total += cfg.beta * normalized_l1_l2(again.data(), tx.data())?;
    }
    Ok(total)
}

/// Traced builders used by the trainer.
pub mod traced {
    use super::*;

    /// Normalized ℓ1-ℓ2 of planar complex tensors against a constant reference.
    pub fn normalized_l1_l2(tape: &mut Tape, estimate: Var, reference: &Tensor) -> Result<Var> {
        let refc = crate::autodiff::planar_to_complex(reference.data());
        let n2 = refc.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let n1: f64 = refc.iter().map(|v| v.norm()).sum();
        if n2 == 0.0 {
            return Err(Error::invalid("reference has zero norm"));
        }
        let r = tape.constant(reference.clone())?;
        let d = tape.sub(estimate, r)?;
        let l2 = tape.norm_l2(d)?;
        let m = tape.complex_abs(d, 0.0)?;
        let l1 = tape.sum(m)?;
        let a = tape.scale(l2, 1.0 / n2)?;
        tape.add_scaled(a, l1, 1.0 / n1)
    }

    /// Reweighted ℓ1 of the output's wavelet coefficients.
    pub fn comp(tape: &mut Tape, output: Var, w: &Arc<WaveletOp>, rw: &Reweighting) -> Result<Var> {
        let c = tape.linear(output, w.clone())?;
        let m = tape.complex_abs(c, 0.0)?;
        let q = tape.constant(Tensor::from_vec(rw.weights.clone()))?;
        let wm = tape.mul(m, q)?;
        tape.mean(wm)
    }

    /// Network output on `x_PI` plus the perturbation-fidelity term; the base
    /// forward pass is shared.
    #[allow(clippy::too_many_arguments)]
    pub fn cupid(
        tape: &mut Tape,
        model: &Model,
        params: &TracedParams,
        x_pi: &ComplexImage,
        e: &EncodingOperator,
        perturbations: &[Perturbation],
        w: &Arc<WaveletOp>,
        rw: &Reweighting,
        cfg: &CupidLossConfig,
    ) -> Result<(Var, Option<Var>, Option<Var>)> {
        let fid = model.fidelity(e);
        let run = |tape: &mut Tape, x: &ComplexImage| -> Result<Var> {
            let xv = tape.constant(Tensor::from_image(x))?;
            let rv = tape.constant(Tensor::from_image(&e.rhs_from_image(x)?))?;
            model.forward_traced(tape, params, xv, rv, &fid)
        };
        let base = run(tape, x_pi)?;
        let comp = if cfg.uses_comp() { Some(self::comp(tape, base, w, rw)?) } else { None };
        let pif = if cfg.uses_pif() {
            if perturbations.is_empty() {
                return Err(Error::invalid("no perturbations"));
            }
            let mut terms = Vec::with_capacity(perturbations.len());
            for p in perturbations {
                let pn = p.image.norm();
                if pn == 0.0 {
                    return Err(Error::invalid("perturbation with zero norm"));
                }
                let out = run(tape, &x_pi.add(&p.image)?)?;
                let pv = tape.constant(Tensor::from_image(&p.image))?;
                let shift = tape.sub(out, base)?;
                let d = tape.sub(pv, shift)?;
                let n = tape.norm_l2(d)?;
                terms.push(tape.scale(n, 1.0 / pn)?);
            }
            let all = tape.concat(&terms)?;
            Some(tape.mean(all)?)
        } else {
            None
        };
        let total = match (comp, pif) {
            (Some(c), Some(p)) => tape.add_scaled(c, p, cfg.pif_weight())?,
            (Some(c), None) => c,
            (None, Some(p)) => tape.scale(p, cfg.pif_weight())?,
            (None, None) => unreachable!("pif is always on when comp is off"),
        };
        Ok((total, comp, pif))
    }

    pub fn supervised(
        tape: &mut Tape,
        model: &Model,
        params: &TracedParams,
        y: &KSpaceData,
        e: &EncodingOperator,
        y_ref: &KSpaceData,
        e_full: &Arc<EncodingLinear>,
    ) -> Result<Var> {
        let x_in = Tensor::from_image(&e.adjoint(y)?);
        let xv = tape.constant(x_in)?;
        let out = model.forward_traced(tape, params, xv, xv, &model.fidelity(e))?;
        let yhat = tape.linear(out, e_full.clone())?;
        normalized_l1_l2(tape, yhat, &kspace_tensor(y_ref))
    }

    pub fn ssdu(
        tape: &mut Tape,
        model: &Model,
        params: &TracedParams,
        y_theta: &KSpaceData,
        e_theta: &EncodingOperator,
        y_lambda: &KSpaceData,
        e_lambda: &Arc<EncodingLinear>,
    ) -> Result<Var> {
        let xv = tape.constant(Tensor::from_image(&e_theta.adjoint(y_theta)?))?;
        let out = model.forward_traced(tape, params, xv, xv, &model.fidelity(e_theta))?;
        let yhat = tape.linear(out, e_lambda.clone())?;
        normalized_l1_l2(tape, yhat, &kspace_tensor(y_lambda))
    }

    pub fn ei(
        tape: &mut Tape,
        model: &Model,
        params: &TracedParams,
        y: &KSpaceData,
        e: &EncodingOperator,
        cfg: &EiConfig,
    ) -> Result<Var> {
        let fid = model.fidelity(e);
        let enc = Arc::new(EncodingLinear(e.clone()));
        let normal = Arc::new(NormalOp(e.clone()));
        let xv = tape.constant(Tensor::from_image(&e.adjoint(y)?))?;
        let x_hat = model.forward_traced(tape, params, xv, xv, &fid)?;
        let yhat = tape.linear(x_hat, enc)?;
        let mut total = normalized_l1_l2(tape, yhat, &kspace_tensor(y))?;
        for g in &cfg.transforms {
            let perm = Arc::new(g.permutation(e.height(), e.width())?);
            let tx = tape.linear(x_hat, perm)?;
            let rhs = tape.linear(tx, normal.clone())?;
            let again = model.forward_traced(tape, params, rhs, rhs, &fid)?;
            let term = relative_l1_l2(tape, again, tx)?;
            total = tape.add_scaled(total, term, cfg.beta)?;
        }
        Ok(total)
    }

    /// Normalized ℓ1-ℓ2 where the reference is itself traced; normalizers are
    /// taken from its current value and held constant.
    fn relative_l1_l2(tape: &mut Tape, estimate: Var, reference: Var) -> Result<Var> {
        let refc = crate::autodiff::planar_to_complex(tape.value(reference).data());
        let n2 = refc.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let n1: f64 = refc.iter().map(|v| v.norm()).sum();
        if n2 == 0.0 {
            return Err(Error::invalid("reference has zero norm"));
        }
        let d = tape.sub(estimate, reference)?;
        let l2 = tape.norm_l2(d)?;
        let m = tape.complex_abs(d, 0.0)?;
        let l1 = tape.sum(m)?;
        let a = tape.scale(l2, 1.0 / n2)?;
        tape.add_scaled(a, l1, 1.0 / n1)
    }

    /// `[2, C, H, W]` planar tensor of k-space data.
    pub fn kspace_tensor(y: &KSpaceData) -> Tensor {
        let planar = crate::autodiff::complex_to_planar(y.data());
        Tensor::new(vec![2, y.n_coils(), y.height(), y.width()], planar).expect("k-space extents are positive")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    use crate::perturb::{generate_set, PerturbationSetConfig};
    use crate::synth::{make_coils, make_mask, make_phantom, simulate_acquisition, MaskKind, NoiseModel};

    fn small() -> (ComplexImage, EncodingOperator, SamplingMask) {
        let x = make_phantom(16, 16, 4).unwrap();
        let coils = make_coils(16, 16, 4, 1).unwrap();
        let mask = make_mask(16, 2, 4, MaskKind::Equidistant, 0).unwrap();
        let e = EncodingOperator::new(coils, mask.to_kmask(16)).unwrap();
        (x, e, mask)
    }

    fn perts(n: usize) -> Vec<ComplexImage> {
        generate_set(&PerturbationSetConfig::new(n, 4, 3), 32, 32)
            .unwrap()
            .into_iter()
            .map(|p| p.image)
            .collect()
    }

    #[test]
    fn pif_reference_maps() {
        let x = make_phantom(32, 32, 0).unwrap();
        let ps = perts(3);
        let id = loss_pif_with(|v| Ok(v.clone()), &x, &ps).unwrap();
        let zero = loss_pif_with(|v| Ok(v.scaled(0.0)), &x, &ps).unwrap();
        let double = loss_pif_with(|v| Ok(v.scaled(2.0)), &x, &ps).unwrap();
        assert!(id.abs() < 1e-10);
        assert!((zero - 1.0).abs() < 1e-10);
        assert!((double - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pif_rejects_zero_perturbation() {
        let x = make_phantom(16, 16, 0).unwrap();
        let z = ComplexImage::zeros(16, 16).unwrap();
        assert!(loss_pif_with(|v| Ok(v.clone()), &x, &[z]).is_err());
    }

    #[test]
    fn comp_of_zero_is_zero_and_homogeneous() {
        let x = make_phantom(16, 16, 1).unwrap();
        let w = Dtcwt::new(16, 16, 2).unwrap();
        let z = ComplexImage::zeros(16, 16).unwrap();
        assert_eq!(loss_comp(&z, &x, &w, 1e-3).unwrap(), 0.0);
        let a = loss_comp(&x, &x, &w, 1e-9).unwrap();
        assert!(a > 0.0 && a <= 1.0);
        let b = loss_comp(&x.scaled(3.0), &x, &w, 1e-9).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
        assert!(loss_comp(&x, &x, &w, 0.0).is_err());
    }

    #[test]
    fn supervised_reference_values() {
        let (x, e, _) = small();
        let full = e.fully_sampled();
        let y = full.apply(&x).unwrap();
        assert!(loss_supervised(&x, &y, &full).unwrap() < 1e-12);
        let zero = ComplexImage::zeros(16, 16).unwrap();
        assert!((loss_supervised(&zero, &y, &full).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_l1_l2_hand_value() {
        let a: Vec<Complex64> = [1.0, 2.0, 0.0, -1.0].iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let b: Vec<Complex64> = [1.0, 0.0, 0.0, 1.0].iter().map(|&v| Complex64::new(v, 0.0)).collect();
        // diff = [0, 2, 0, -2]: ℓ2 = √8 over √2, ℓ1 = 4 over 2
        let v = normalized_l1_l2(&a, &b).unwrap();
        assert!((v - 4.0).abs() < 1e-14);
    }

    #[test]
    fn ssdu_split_is_exact_partition() {
        let mask = make_mask(64, 4, 8, MaskKind::Equidistant, 0).unwrap();
        let omega = mask.to_kmask(64);
        for seed in 0..3 {
            let s = ssdu_split(&mask, 64, 0.4, seed).unwrap();
            let mut n_l = 0;
            for i in 0..omega.bits().len() {
                let (t, l) = (s.theta.bits()[i], s.lambda.bits()[i]);
                assert!(!(t && l));
                assert_eq!(t || l, omega.bits()[i]);
                n_l += usize::from(l);
                if mask.acs_range().contains(&(i / 64)) && omega.bits()[i] {
                    assert!(t);
                }
            }
            let ratio = n_l as f64 / omega.count() as f64;
            assert!((ratio - 0.4).abs() < 0.02);
        }
        assert_ne!(
            ssdu_split(&mask, 64, 0.4, 0).unwrap(),
            ssdu_split(&mask, 64, 0.4, 1).unwrap()
        );
        assert!(ssdu_split(&mask, 64, 1.0, 0).is_err());
        assert!(ssdu_split(&mask, 64, 0.0, 0).is_err());
    }

    #[test]
    fn ssdu_perfect_output_has_small_loss() {
        let (x, e, mask) = small();
        let s = ssdu_split(&mask, 16, 0.4, 0).unwrap();
        let e_l = e.with_mask(s.lambda.clone()).unwrap();
        let y_l = simulate_acquisition(&x, e.coils(), &s.lambda, NoiseModel::noiseless(), 0).unwrap();
        assert!(normalized_l1_l2(e_l.apply(&x).unwrap().data(), y_l.data()).unwrap() < 1e-6);
    }

    #[test]
    fn grid_transforms_are_invertible() {
        let x = make_phantom(16, 16, 2).unwrap();
        for g in GridTransform::ALL {
            let p = g.permutation(16, 16).unwrap();
            let mut y = x.clone();
            let order = match g {
                GridTransform::Rot90 | GridTransform::Rot270 => 4,
                _ => 2,
            };
            for _ in 0..order {
                y = apply_perm(&p, &y);
            }
            assert_eq!(y, x, "{g:?}");
        }
        assert!(GridTransform::Rot90.permutation(16, 8).is_err());
        assert!(GridTransform::FlipRows.permutation(16, 8).is_ok());
    }

    #[test]
    fn traced_losses_match_plain_evaluators() {
        use crate::model::ModelConfig;
        let (x, e, mask) = small();
        let mut model = Model::new(ModelConfig { unrolls: 2, ..ModelConfig::toy() }, 1).unwrap();
        let out_conv = model.params().len() - 3;
        for (i, v) in model.params_mut()[out_conv].data_mut().iter_mut().enumerate() {
            *v = 0.01 * ((i % 7) as f64 - 3.0);
        }
        let y = simulate_acquisition(&x, e.coils(), e.mask(), NoiseModel::noiseless(), 0).unwrap();

        // ei
        let cfg = EiConfig::default();
        let mut tape = Tape::new();
        let p = model.trace(&mut tape).unwrap();
        let v = traced::ei(&mut tape, &model, &p, &y, &e, &cfg).unwrap();
        assert!((tape.value(v).item() - loss_ei(&model, &y, &e, &cfg).unwrap()).abs() < 1e-12);

        // ssdu
        let s = ssdu_split(&mask, 16, 0.4, 0).unwrap();
        let (e_t, e_l) = (e.with_mask(s.theta.clone()).unwrap(), e.with_mask(s.lambda.clone()).unwrap());
        let (y_t, y_l) = (y.restricted(&s.theta).unwrap(), y.restricted(&s.lambda).unwrap());
        let mut tape = Tape::new();
        let p = model.trace(&mut tape).unwrap();
        let v = traced::ssdu(&mut tape, &model, &p, &y_t, &e_t, &y_l, &Arc::new(EncodingLinear(e_l.clone()))).unwrap();
        assert!((tape.value(v).item() - loss_ssdu(&model, &y_t, &e_t, &y_l, &e_l).unwrap()).abs() < 1e-12);

        // cupid
        let ps = generate_set(&PerturbationSetConfig::new(2, 2, 0), 16, 16).unwrap();
        let w = Dtcwt::new(16, 16, 2).unwrap();
        let rw = Reweighting::initial(&w, &x, 1e-6).unwrap();
        let ccfg = CupidLossConfig { lambda: 3.0, ..Default::default() };
        let mut tape = Tape::new();
        let p = model.trace(&mut tape).unwrap();
        let (t, c, f) = traced::cupid(&mut tape, &model, &p, &x, &e, &ps, &Arc::new(WaveletOp(w.clone())), &rw, &ccfg).unwrap();
        let plain = loss_cupid(&model, &x, &e, &ps, &w, &rw, &ccfg).unwrap();
        assert!((tape.value(c.unwrap()).item() - plain.comp).abs() < 1e-12);
        assert!((tape.value(f.unwrap()).item() - plain.pif).abs() < 1e-12);
        assert!((tape.value(t).item() - (plain.comp + 3.0 * plain.pif)).abs() < 1e-12);
    }
}

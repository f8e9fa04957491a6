//! Database and zero-shot training loops.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{EncodingLinear, Gradients, Tape, Var, WaveletOp};
use crate::encoding::{EncodingOperator, KSpaceData};
use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::losses::{self, traced, CupidLossConfig, EiConfig, LossBreakdown, Reweighting, SsduConfig};
use crate::metrics::{psnr, ssim};
use crate::model::Model;
use crate::perturb::{generate_set, Perturbation, PerturbationSetConfig, PerturbationSetRecord};
use crate::sparsity::{reweight_init, CsConfig, Dtcwt};
use crate::synth::{rng, SamplingMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Database,
    ZeroShot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Supervised,
    Ssdu,
    Ei,
    Cupid,
}

impl LossKind {
    pub fn needs_kspace(self) -> bool {
        !matches!(self, LossKind::Cupid)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Self::Supervised),
            "ssdu" => Ok(Self::Ssdu),
            "ei" => Ok(Self::Ei),
            "cupid" => Ok(Self::Cupid),
            _ => Err(Error::invalid(format!("unknown loss '{s}'"))),
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "database" => Ok(Self::Database),
            "zeroshot" | "zero-shot" => Ok(Self::ZeroShot),
            _ => Err(Error::invalid(format!("unknown training mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    /// Halve the step size every this many epochs (0 = constant).
    pub halve_every: usize,
    /// Global gradient-norm clip (0 = off).
    pub clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            halve_every: 40,
            clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.halve_every) {
            Some(halvings) => self.lr * 0.5f64.powi(halvings as i32),
            None => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Optimizer steps per epoch in zero-shot mode.
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub seed: u64,
    pub mode: TrainMode,
    pub loss: LossKind,
    pub cupid: CupidLossConfig,
    pub ssdu: SsduConfig,
    pub ei: EiConfig,
    /// Seeds the reweighting estimate of the compressibility term.
    pub cs: CsConfig,
    pub perturbation_max_fraction: f64,
    /// Draw fresh perturbations every epoch instead of once per run.
    pub resample_perturbations: bool,
    /// Evaluate PSNR/SSIM against the truth after each epoch when available.
    pub track_metrics: bool,
    /// Write a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            steps_per_epoch: 1,
            batch_size: 1,
            optim: OptimConfig::default(),
            seed: 0,
            mode: TrainMode::Database,
            loss: LossKind::Cupid,
            cupid: CupidLossConfig::default(),
            ssdu: SsduConfig::default(),
            ei: EiConfig::default(),
            cs: CsConfig::default(),
            perturbation_max_fraction: 0.5,
            resample_perturbations: false,
            track_metrics: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::invalid("steps per epoch and batch size must be positive"));
        }
        if !(self.optim.lr > 0.0) || !(self.optim.clip >= 0.0) {
            return Err(Error::invalid("learning rate must be > 0 and clip >= 0"));
        }
        if !(self.perturbation_max_fraction > 0.0) {
            return Err(Error::invalid("perturbation intensity fraction must be > 0"));
        }
        self.cupid.validate()?;
        self.cs.validate()
    }
}

/// One training example, scaled so that `max|x_PI| = 1`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub x_pi: ComplexImage,
    pub encoding: EncodingOperator,
    pub mask: SamplingMask,
    /// Acquired k-space `y_Ω`.
    pub kspace: Option<KSpaceData>,
    /// Fully sampled reference k-space.
    pub reference: Option<KSpaceData>,
    pub truth: Option<ComplexImage>,
    /// Factor applied to every field relative to the raw data.
    pub scale: f64,
}

fn scale_kspace(y: &KSpaceData, s: f64) -> Result<KSpaceData> {
    KSpaceData::new(y.n_coils(), y.mask().clone(), y.data().iter().map(|v| v * s).collect())
}

impl Sample {
    /// Normalizes the parallel-imaging image to unit peak magnitude and applies
    /// the same factor to the other fields.
    pub fn new(
        name: impl Into<String>,
        x_pi: &ComplexImage,
        encoding: EncodingOperator,
        mask: SamplingMask,
        kspace: Option<&KSpaceData>,
        reference: Option<&KSpaceData>,
        truth: Option<&ComplexImage>,
    ) -> Result<Self> {
        let peak = x_pi.max_abs();
        if !(peak > 0.0) {
            return Err(Error::invalid("parallel-imaging image is all zeros"));
        }
        let s = 1.0 / peak;
        Ok(Self {
            name: name.into(),
            x_pi: x_pi.scaled(s),
            encoding,
            mask,
            kspace: kspace.map(|y| scale_kspace(y, s)).transpose()?,
            reference: reference.map(|y| scale_kspace(y, s)).transpose()?,
            truth: truth.map(|t| t.scaled(s)),
            scale: s,
        })
    }

    /// The trained network's reconstruction, in the sample's normalized units.
    pub fn reconstruct(&self, model: &Model, loss: LossKind) -> Result<ComplexImage> {
        match (loss.needs_kspace(), &self.kspace) {
            (true, Some(y)) => {
                let x_in = self.encoding.adjoint(y)?;
                model.forward_with_rhs(&x_in, &x_in, &self.encoding)
            }
            (true, None) => Err(Error::invalid(format!("sample {} has no k-space", self.name))),
            (false, _) => model.forward(&self.x_pi, &self.encoding),
        }
    }
}

/// Per-epoch record; terms that do not apply are NaN, metrics absent without truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub comp: f64,
    pub pif: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Wall-clock time of the optimizer steps (excluding metric evaluation).
    pub step_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,total,comp,pif,psnr,ssim\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let num = |v: f64| if v.is_nan() { String::new() } else { format!("{v:.9e}") };
        for r in &self.history {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                num(r.total),
                num(r.comp),
                num(r.pif),
                opt(r.psnr),
                opt(r.ssim)
            );
        }
        out
    }
}

struct Adam {
    cfg: OptimConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(cfg: OptimConfig, model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.params()[model.trainable()].iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &mut [Vec<f64>], lr: f64) {
        if self.cfg.clip > 0.0 {
            let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > self.cfg.clip {
                let s = self.cfg.clip / norm;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let range = model.trainable();
        for (k, p) in model.params_mut()[range].iter_mut().enumerate() {
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let g = grads[k][i];
                self.m[k][i] = b1 * self.m[k][i] + (1.0 - b1) * g;
                self.v[k][i] = b2 * self.v[k][i] + (1.0 - b2) * g * g;
                *w -= lr * (self.m[k][i] / c1) / ((self.v[k][i] / c2).sqrt() + self.cfg.eps);
            }
        }
        if model.config().train_mu {
            let last = model.params().len() - 1;
            let mu = &mut model.params_mut()[last].data_mut()[0];
            *mu = mu.max(1e-6);
        }
    }
}

/// Per-sample state that persists across epochs.
struct SampleState {
    perturbations: Vec<Perturbation>,
    record: Option<PerturbationSetRecord>,
    reweight: Option<Reweighting>,
    ssdu: Option<(EncodingOperator, KSpaceData, Arc<EncodingLinear>, KSpaceData)>,
    full: Option<Arc<EncodingLinear>>,
}

/// Wavelet operators keyed by image size.
#[derive(Default)]
struct Wavelets(HashMap<(usize, usize), (Dtcwt, Arc<WaveletOp>)>);

impl Wavelets {
    fn get(&mut self, h: usize, w: usize, levels: usize) -> Result<(Dtcwt, Arc<WaveletOp>)> {
        if let Some(v) = self.0.get(&(h, w)) {
            return Ok(v.clone());
        }
        let d = Dtcwt::new(h, w, levels)?;
        let v = (d.clone(), Arc::new(WaveletOp(d)));
        self.0.insert((h, w), v.clone());
        Ok(v)
    }
}

fn perturbation_config(cfg: &TrainConfig, sample: &Sample, seed: u64) -> PerturbationSetConfig {
    PerturbationSetConfig {
        k: cfg.cupid.k,
        acceleration: sample.mask.acceleration(),
        seed,
        max_fraction: cfg.perturbation_max_fraction,
        reference_max: 1.0,
        complex: false,
    }
}

fn sample_seed(cfg: &TrainConfig, index: usize, epoch: usize) -> u64 {
    cfg.seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64 * 1_000_003 + epoch as u64)
}

fn prepare(cfg: &TrainConfig, samples: &[Sample], wavelets: &mut Wavelets) -> Result<Vec<SampleState>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut st = SampleState {
                perturbations: Vec::new(),
                record: None,
                reweight: None,
                ssdu: None,
                full: None,
            };
            let (h, w) = s.x_pi.dims();
            match cfg.loss {
                LossKind::Cupid => {
                    let pc = perturbation_config(cfg, s, sample_seed(cfg, i, 0));
                    st.perturbations = generate_set(&pc, h, w)?;
                    st.record = Some(PerturbationSetRecord::new(&pc, h, w, &st.perturbations));
                    let (dt, _) = wavelets.get(h, w, cfg.cupid.levels)?;
                    let x0 = reweight_init(&s.x_pi, &s.encoding, &cfg.cs)?;
                    st.reweight = Some(Reweighting::initial(&dt, &x0, cfg.cupid.epsilon_rel)?);
                }
                LossKind::Supervised => {
                    if s.reference.is_none() || s.kspace.is_none() {
                        return Err(Error::invalid(format!("supervised training needs k-space for {}", s.name)));
                    }
                    st.full = Some(Arc::new(EncodingLinear(s.encoding.fully_sampled())));
                }
                LossKind::Ssdu => {
                    let y = s.kspace.as_ref().ok_or_else(|| Error::invalid(format!("SSDU needs k-space for {}", s.name)))?;
                    let split = losses::ssdu_split(&s.mask, w, cfg.ssdu.rho, cfg.ssdu.seed.wrapping_add(i as u64))?;
                    let e_t = s.encoding.with_mask(split.theta.clone())?;
                    let e_l = s.encoding.with_mask(split.lambda.clone())?;
                    st.ssdu = Some((e_t, y.restricted(&split.theta)?, Arc::new(EncodingLinear(e_l)), y.restricted(&split.lambda)?));
                }
                LossKind::Ei => {
                    if s.kspace.is_none() {
                        return Err(Error::invalid(format!("EI needs k-space for {}", s.name)));
                    }
                }
            }
            Ok(st)
        })
        .collect()
}

fn nonfinite(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFiniteLoss {
            epoch,
            breakdown: format!("{op} produced a non-finite value"),
        },
        other => other,
    }
}

/// Loss and parameter gradients for one sample.
fn sample_step(
    cfg: &TrainConfig,
    model: &Model,
    sample: &Sample,
    st: &SampleState,
    wavelets: &mut Wavelets,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let p = model.trace(&mut tape)?;
    let (total, comp, pif): (Var, Option<Var>, Option<Var>) = match cfg.loss {
        LossKind::Cupid => {
            let (h, w) = sample.x_pi.dims();
            let (_, wop) = wavelets.get(h, w, cfg.cupid.levels)?;
            traced::cupid(
                &mut tape,
                model,
                &p,
                &sample.x_pi,
                &sample.encoding,
                &st.perturbations,
                &wop,
                st.reweight.as_ref().expect("prepared"),
                &cfg.cupid,
            )?
        }
        LossKind::Supervised => {
            let v = traced::supervised(
                &mut tape,
                model,
                &p,
                sample.kspace.as_ref().expect("checked"),
                &sample.encoding,
                sample.reference.as_ref().expect("checked"),
                st.full.as_ref().expect("prepared"),
            )?;
            (v, None, None)
        }
        LossKind::Ssdu => {
            let (e_t, y_t, e_l, y_l) = st.ssdu.as_ref().expect("prepared");
            (traced::ssdu(&mut tape, model, &p, y_t, e_t, y_l, e_l)?, None, None)
        }
        LossKind::Ei => {
            let v = traced::ei(&mut tape, model, &p, sample.kspace.as_ref().expect("checked"), &sample.encoding, &cfg.ei)?;
            (v, None, None)
        }
    };
    let value = |v: Option<Var>| v.map(|v| tape.value(v).item()).unwrap_or(f64::NAN);
    let breakdown = LossBreakdown {
        total: tape.value(total).item(),
        comp: value(comp),
        pif: value(pif),
    };
    let grads: Gradients = tape.backward(total)?;
    let trainable = model.trainable();
    let g = p.vars[trainable.clone()]
        .iter()
        .zip(&model.params()[trainable])
        .map(|(v, t)| grads.wrt(*v, t.shape()).into_data())
        .collect();
    Ok((breakdown, g))
}

/// Trains `model` in place on `samples`; writes a run directory when given.
pub fn train(mut model: Model, samples: &[Sample], cfg: &TrainConfig, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    if cfg.mode == TrainMode::ZeroShot && samples.len() != 1 {
        return Err(Error::invalid(format!("zero-shot training takes exactly one sample, got {}", samples.len())));
    }
    let mut wavelets = Wavelets::default();
    let mut states = prepare(cfg, samples, &mut wavelets)?;
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir.join("checkpoints"))?;
        let snapshot = serde_json::json!({
            "train": cfg,
            "model": model.config(),
            "samples": samples.iter().map(|s| serde_json::json!({"name": s.name, "scale": s.scale})).collect::<Vec<_>>(),
        });
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&snapshot)?)?;
        let records: Vec<_> = states.iter().filter_map(|s| s.record.clone()).collect();
        if !records.is_empty() {
            std::fs::write(dir.join("perturbations.json"), serde_json::to_string_pretty(&records)?)?;
        }
    }

    let mut adam = Adam::new(cfg.optim, &model);
    let mut order_rng = rng(cfg.seed ^ 0x5eed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        if cfg.loss == LossKind::Cupid && epoch > 0 {
            for (i, (s, st)) in samples.iter().zip(states.iter_mut()).enumerate() {
                if cfg.cupid.refresh_every > 0 && epoch % cfg.cupid.refresh_every == 0 {
                    let (dt, _) = wavelets.get(s.x_pi.height(), s.x_pi.width(), cfg.cupid.levels)?;
                    let out = model.forward(&s.x_pi, &s.encoding)?;
                    st.reweight.as_mut().expect("prepared").refresh(&dt, &out)?;
                }
                if cfg.resample_perturbations {
                    let pc = perturbation_config(cfg, s, sample_seed(cfg, i, epoch));
                    st.perturbations = generate_set(&pc, s.x_pi.height(), s.x_pi.width())?;
                }
            }
        }
        let lr = cfg.optim.lr_at(epoch);
        let started = Instant::now();
        let mut sum = LossBreakdown::default();
        let mut count = 0usize;
        let batches: Vec<Vec<usize>> = match cfg.mode {
            TrainMode::ZeroShot => vec![vec![0]; cfg.steps_per_epoch],
            TrainMode::Database => {
                order.shuffle(&mut order_rng);
                order.chunks(cfg.batch_size).map(|c| c.to_vec()).collect()
            }
        };
        for batch in batches {
            let mut acc: Option<Vec<Vec<f64>>> = None;
            for &i in &batch {
                let (b, g) = sample_step(cfg, &model, &samples[i], &states[i], &mut wavelets).map_err(|e| nonfinite(epoch, e))?;
                if !b.total.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        breakdown: format!("total {} comp {} pif {}", b.total, b.comp, b.pif),
                    });
                }
                sum.total += b.total;
                sum.comp += b.comp;
                sum.pif += b.pif;
                count += 1;
                match &mut acc {
                    None => acc = Some(g),
                    Some(a) => a.iter_mut().flatten().zip(g.iter().flatten()).for_each(|(x, y)| *x += y),
                }
            }
            let mut g = acc.expect("non-empty batch");
            let n = batch.len() as f64;
            g.iter_mut().flatten().for_each(|v| *v /= n);
            adam.step(&mut model, &mut g, lr);
        }
        let step_seconds = started.elapsed().as_secs_f64();
        let n = count as f64;
        let (mut psnr_v, mut ssim_v) = (None, None);
        if cfg.track_metrics && samples.iter().all(|s| s.truth.is_some()) {
            let (mut ps, mut ss) = (0.0, 0.0);
            for s in samples {
                let out = s.reconstruct(&model, cfg.loss)?;
                let t = s.truth.as_ref().expect("checked");
                ps += psnr(t, &out)?;
                ss += ssim(t, &out)?;
            }
            psnr_v = Some(ps / samples.len() as f64);
            ssim_v = Some(ss / samples.len() as f64);
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            total: sum.total / n,
            comp: sum.comp / n,
            pif: sum.pif / n,
            psnr: psnr_v,
            ssim: ssim_v,
            step_seconds,
        });
        if let Some(dir) = run_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                model.save(&checkpoint_path(dir, Some(epoch + 1)))?;
            }
        }
    }
    let outcome = TrainOutcome { model, history };
    if let Some(dir) = run_dir {
        std::fs::write(dir.join("loss.csv"), outcome.loss_csv())?;
        outcome.model.save(&checkpoint_path(dir, None))?;
    }
    Ok(outcome)
}

/// `checkpoints/epoch_0040.ckpt`, or `checkpoints/final.ckpt`.
pub fn checkpoint_path(run_dir: &Path, epoch: Option<usize>) -> PathBuf {
    let name = match epoch {
        Some(e) => format!("epoch_{e:04}.ckpt"),
        None => "final.ckpt".to_string(),
    };
    run_dir.join("checkpoints").join(name)
}

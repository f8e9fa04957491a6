//! Desk-scale experiments: reconstruction baselines, zero-shot runs and sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::io::{Dataset, SynthConfig};
use crate::metrics::{psnr, ssim, Psnr};
use crate::model::{Model, ModelConfig};
use crate::pi::{cg_sense, grappa_calibrate, grappa_reconstruct, sensitivity_combine, CgConfig};
use crate::sparsity::{cs_reconstruct, CsConfig};
use crate::synth::MaskKind;
use crate::train::{train, LossKind, Sample, TrainConfig, TrainMode, TrainOutcome};

/// Classical reconstruction of a dataset's k-space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    CgSense,
    Grappa,
    Cs,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cgsense" | "cg-sense" => Ok(Self::CgSense),
            "grappa" => Ok(Self::Grappa),
            "cs" => Ok(Self::Cs),
            _ => Err(Error::invalid(format!("unknown method '{s}'"))),
        }
    }
}

fn kspace(ds: &Dataset) -> Result<&crate::encoding::KSpaceData> {
    ds.y.as_ref()
        .ok_or_else(|| Error::invalid("dataset carries no k-space; only the stored x_pi is available"))
}

/// GRAPPA-filled k-space combined with the known coil maps.
pub fn grappa_image(ds: &Dataset) -> Result<ComplexImage> {
    let y = kspace(ds)?;
    let kernel = grappa_calibrate(y, &ds.mask, Default::default())?;
    sensitivity_combine(&grappa_reconstruct(y, &kernel)?, &ds.coils)
}

pub fn run_baseline(ds: &Dataset, method: Baseline, cg: &CgConfig, cs: &CsConfig) -> Result<ComplexImage> {
    let e = ds.encoding()?;
    match method {
        Baseline::CgSense => Ok(cg_sense(kspace(ds)?, &e, cg)?.0),
        Baseline::Grappa => grappa_image(ds),
        Baseline::Cs => {
            let y = kspace(ds)?;
            let (x0, _) = cg_sense(y, &e, cg)?;
            Ok(cs_reconstruct(&x0, &e.adjoint(y)?, &e, cs)?.image)
        }
    }
}

/// Where the network input of a zero-shot run comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiSource {
    /// The `x_pi` stored in the dataset (CG-SENSE when synthesized here).
    #[default]
    Stored,
    Grappa,
}

/// Outcome of one zero-shot CUPID fit.
#[derive(Clone, Debug)]
pub struct ZeroShotRun {
    /// Network output, in the units of the dataset.
    pub output: ComplexImage,
    pub input: ComplexImage,
    pub psnr_input: Option<f64>,
    pub psnr_output: Option<f64>,
    pub ssim_output: Option<f64>,
    pub outcome: TrainOutcome,
    pub seconds: f64,
}

impl ZeroShotRun {
    /// Mean optimizer time per epoch.
    pub fn seconds_per_epoch(&self) -> f64 {
        let h = &self.outcome.history;
        h.iter().map(|r| r.step_seconds).sum::<f64>() / h.len().max(1) as f64
    }
}

/// Fits a fresh model to one dataset with zero-shot training and returns its
/// reconstruction.
pub fn zero_shot(
    ds: &Dataset,
    source: PiSource,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    run_dir: Option<&std::path::Path>,
) -> Result<ZeroShotRun> {
    let cfg = TrainConfig {
        mode: TrainMode::ZeroShot,
        ..cfg.clone()
    };
    let input = match source {
        PiSource::Stored => ds.x_pi.clone(),
        PiSource::Grappa => grappa_image(ds)?,
    };
    let e = ds.encoding()?;
    let sample = Sample::new(
        format!("seed{}", ds.meta.seed),
        &input,
        e,
        ds.mask.clone(),
        ds.y.as_ref(),
        None,
        ds.x_true.as_ref(),
    )?;
    let model = Model::new(model_cfg.clone(), cfg.seed)?;
    let t = Instant::now();
    let outcome = train(model, std::slice::from_ref(&sample), &cfg, run_dir)?;
    let seconds = t.elapsed().as_secs_f64();
    let output = sample.reconstruct(&outcome.model, cfg.loss)?.scaled(1.0 / sample.scale);
    let (psnr_input, psnr_output, ssim_output) = match &ds.x_true {
        Some(x) => (Some(psnr(x, &input)?), Some(psnr(x, &output)?), Some(ssim(x, &output)?)),
        None => (None, None, None),
    };
    Ok(ZeroShotRun {
        output,
        input,
        psnr_input,
        psnr_output,
        ssim_output,
        outcome,
        seconds,
    })
}

/// Default settings of zero-shot CUPID runs at desk scale.
pub fn zero_shot_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        mode: TrainMode::ZeroShot,
        loss: LossKind::Cupid,
        ..Default::default()
    }
}

/// The λ = ∞ end of the trade-off, realized by dropping the compressibility term.
pub const PIF_ONLY: &str = "pif-only";

/// One swept hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    Lambda,
    K,
    Acceleration,
    Pattern,
}

impl std::str::FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "k" | "K" => Ok(Self::K),
            "r" | "R" | "acceleration" => Ok(Self::Acceleration),
            "pattern" => Ok(Self::Pattern),
            _ => Err(Error::invalid(format!("unknown sweep '{s}'"))),
        }
    }
}

impl Sweep {
    /// Labels of the sweep points, in table order.
    pub fn points(self) -> Vec<String> {
        let v: &[&str] = match self {
            Sweep::Lambda => &["0", "50", "100", "200", PIF_ONLY],
            Sweep::K => &["1", "3", "6", "10"],
            Sweep::Acceleration => &["4", "6", "8"],
            Sweep::Pattern => &["equidistant", "random"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Applies one point to the base synthetic and training configs.
    pub fn apply(self, point: &str, synth: &mut SynthConfig, cfg: &mut TrainConfig) -> Result<()> {
        let bad = || Error::invalid(format!("bad {self:?} sweep point '{point}'"));
        match self {
            Sweep::Lambda if point == PIF_ONLY => cfg.cupid.pif_only = true,
            Sweep::Lambda => {
                cfg.cupid.pif_only = false;
                cfg.cupid.lambda = point.parse().map_err(|_| bad())?;
            }
            Sweep::K => cfg.cupid.k = point.parse().map_err(|_| bad())?,
            Sweep::Acceleration => synth.acceleration = point.parse().map_err(|_| bad())?,
            Sweep::Pattern => synth.pattern = point.parse::<MaskKind>()?,
        }
        Ok(())
    }
}

/// One (point, seed) cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sweep: Sweep,
    pub point: String,
    pub seed: u64,
    pub psnr_input: Psnr,
    pub psnr_output: Psnr,
    pub ssim_output: f64,
    pub seconds_per_epoch: f64,
}

/// Per-point means over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub sweep: Sweep,
    pub point: String,
    pub seeds: usize,
    pub psnr_input: f64,
    pub psnr_output: f64,
    pub ssim_output: f64,
    pub seconds_per_epoch: f64,
}

pub fn run_sweep(
    sweep: Sweep,
    points: &[String],
    seeds: &[u64],
    synth: &SynthConfig,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for point in points {
        for &seed in seeds {
            let mut s = SynthConfig { seed, ..synth.clone() };
            let mut c = TrainConfig { seed, ..cfg.clone() };
            sweep.apply(point, &mut s, &mut c)?;
            let ds = Dataset::synthesize(&s)?;
            let run = zero_shot(&ds, PiSource::Stored, model_cfg, &c, None)?;
            let row = AblationRow {
                sweep,
                point: point.clone(),
                seed,
                psnr_input: Psnr(run.psnr_input.unwrap_or(f64::NAN)),
                psnr_output: Psnr(run.psnr_output.unwrap_or(f64::NAN)),
                ssim_output: run.ssim_output.unwrap_or(f64::NAN),
                seconds_per_epoch: run.seconds_per_epoch(),
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn summarize(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.point.as_str()) {
            order.push(&r.point);
        }
    }
    order
        .into_iter()
        .map(|p| {
            let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.point == p).collect();
            let n = sel.len() as f64;
            let mean = |f: &dyn Fn(&AblationRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
            AblationSummary {
                sweep: sel[0].sweep,
                point: p.to_string(),
                seeds: sel.len(),
                psnr_input: mean(&|r| r.psnr_input.0),
                psnr_output: mean(&|r| r.psnr_output.0),
                ssim_output: mean(&|r| r.ssim_output),
                seconds_per_epoch: mean(&|r| r.seconds_per_epoch),
            }
        })
        .collect()
}

/// Fixed-width text table of a summary.
pub fn summary_table(summary: &[AblationSummary]) -> String {
    let mut out = format!(
        "{:<12} {:>5} {:>10} {:>10} {:>8} {:>10}\n",
        "point", "seeds", "psnr_in", "psnr_out", "ssim", "s/epoch"
    );
    for s in summary {
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:>10.3} {:>10.3} {:>8.4} {:>10.3}",
            s.point, s.seeds, s.psnr_input, s.psnr_output, s.ssim_output, s.seconds_per_epoch
        );
    }
    out
}

pub fn summary_csv(summary: &[AblationSummary]) -> String {
    let mut out = String::from("sweep,point,seeds,psnr_input,psnr_output,ssim_output,seconds_per_epoch\n");
    for s in summary {
        let sweep = serde_json::to_value(s.sweep)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.6},{:.4}",
            sweep, s.point, s.seeds, s.psnr_input, s.psnr_output, s.ssim_output, s.seconds_per_epoch
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_points_apply() {
        let mut s = SynthConfig::default();
        let mut c = TrainConfig::default();
        Sweep::Lambda.apply(PIF_ONLY, &mut s, &mut c).unwrap();
        assert!(c.cupid.pif_only);
        Sweep::Lambda.apply("50", &mut s, &mut c).unwrap();
        assert!(!c.cupid.pif_only);
        assert_eq!(c.cupid.lambda, 50.0);
        Sweep::Acceleration.apply("8", &mut s, &mut c).unwrap();
        assert_eq!(s.acceleration, 8);
        Sweep::Pattern.apply("random", &mut s, &mut c).unwrap();
        assert_eq!(s.pattern, MaskKind::RandomUniform);
        assert!(Sweep::K.apply("x", &mut s, &mut c).is_err());
    }

    #[test]
    fn summary_means_per_point() {
        let row = |p: &str, v: f64| AblationRow {
            sweep: Sweep::K,
            point: p.into(),
            seed: 0,
            psnr_input: Psnr(20.0),
            psnr_output: Psnr(v),
            ssim_output: 0.5,
            seconds_per_epoch: 1.0,
        };
        let s = summarize(&[row("1", 24.0), row("6", 27.0), row("1", 26.0)]);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].point, "1");
        assert_eq!(s[0].seeds, 2);
        assert!((s[0].psnr_output - 25.0).abs() < 1e-12);
        assert!(summary_csv(&s).starts_with("sweep,point,seeds,"));
        assert!(summary_csv(&s).contains("\nk,6,1,"));
    }

    #[test]
    fn baselines_on_noiseless_full_sampling() {
        let ds = Dataset::synthesize(&SynthConfig {
            height: 16,
            width: 16,
            coils: 2,
            acceleration: 1,
            acs_lines: 4,
            sigma: 0.0,
            ..Default::default()
        })
        .unwrap();
        let x = ds.x_true.as_ref().unwrap();
        let cg = CgConfig::new(50, 1e-12).unwrap();
        for m in [Baseline::CgSense, Baseline::Grappa] {
            let out = run_baseline(&ds, m, &cg, &CsConfig::default()).unwrap();
            assert!(out.relative_error(x).unwrap() < 1e-5, "{m:?}");
        }
    }
}

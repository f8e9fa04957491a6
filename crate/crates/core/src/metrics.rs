//! Image quality metrics on magnitude images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ComplexImage;

/// Serialized stand-in for an infinite PSNR (exact reconstruction).
pub const PSNR_INFINITE: &str = "inf";

/// Peak signal-to-noise ratio in dB: `20·log10(max|ref| / RMSE(|ref|, |test|))`.
///
/// Returns `f64::INFINITY` when the magnitudes are identical.
pub fn psnr(reference: &ComplexImage, test: &ComplexImage) -> Result<f64> {
    check(reference, test, "psnr")?;
    let r = reference.magnitude();
    let t = test.magnitude();
    let mse = r.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = r.iter().copied().fold(0.0, f64::max);
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

/// Gaussian-window SSIM on magnitudes: 11×11 window, σ = 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range `max|ref|`. Windows are truncated at the borders
/// and renormalized.
pub fn ssim(reference: &ComplexImage, test: &ComplexImage) -> Result<f64> {
    check(reference, test, "ssim")?;
    let (h, w) = reference.dims();
    let x = reference.magnitude();
    let y = test.magnitude();
    let range = x.iter().copied().fold(0.0, f64::max);
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    const HALF: isize = 5;
    let g: Vec<f64> = (-HALF..=HALF).map(|d| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp()).collect();
    let mut total = 0.0;
    for r in 0..h as isize {
        for c in 0..w as isize {
            let (mut sw, mut mx, mut my) = (0.0, 0.0, 0.0);
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for dr in -HALF..=HALF {
                let rr = r + dr;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for dc in -HALF..=HALF {
                    let cc = c + dc;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let wt = g[(dr + HALF) as usize] * g[(dc + HALF) as usize];
                    let i = rr as usize * w + cc as usize;
                    sw += wt;
                    mx += wt * x[i];
                    my += wt * y[i];
                    sxx += wt * x[i] * x[i];
                    syy += wt * y[i] * y[i];
                    sxy += wt * x[i] * y[i];
                }
            }
            mx /= sw;
            my /= sw;
            let vx = (sxx / sw - mx * mx).max(0.0);
            let vy = (syy / sw - my * my).max(0.0);
            let cov = sxy / sw - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (h * w) as f64)
}

fn check(a: &ComplexImage, b: &ComplexImage, op: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, &[a.height(), a.width()], &[b.height(), b.width()]));
    }
    Ok(())
}

/// PSNR as a JSON/CSV-safe value: finite numbers, or the `"inf"` sentinel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Psnr(pub f64);

impl Serialize for Psnr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str(PSNR_INFINITE)
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr(v)),
            Raw::Str(s) if s == PSNR_INFINITE => Ok(Psnr(f64::INFINITY)),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR value {s:?}"))),
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_infinite() {
            f.write_str(PSNR_INFINITE)
        } else {
            write!(f, "{:.4}", self.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub name: String,
    pub psnr: Psnr,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsnrSummary {
    pub mean: Psnr,
    pub std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimSummary {
    pub mean: f64,
    pub std: f64,
}

/// Per-slice metrics with mean ± standard deviation (population).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub slices: Vec<SliceMetrics>,
    pub psnr: PsnrSummary,
    pub ssim: SsimSummary,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if m.is_infinite() {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl MetricReport {
    pub fn new(slices: Vec<SliceMetrics>) -> Self {
        let p: Vec<f64> = slices.iter().map(|s| s.psnr.0).collect();
        let s: Vec<f64> = slices.iter().map(|s| s.ssim).collect();
        let (pm, ps) = mean_std(&p);
        let (sm, ss) = mean_std(&s);
        Self {
            slices,
            psnr: PsnrSummary { mean: Psnr(pm), std: ps },
            ssim: SsimSummary { mean: sm, std: ss },
        }
    }

    /// Scores each `(name, reference, test)` triple.
    pub fn evaluate<'a>(
        items: impl IntoIterator<Item = (String, &'a ComplexImage, &'a ComplexImage)>,
    ) -> Result<Self> {
        let mut slices = Vec::new();
        for (name, r, t) in items {
            slices.push(SliceMetrics {
                name,
                psnr: Psnr(psnr(r, t)?),
                ssim: ssim(r, t)?,
            });
        }
        Ok(Self::new(slices))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice,psnr_db,ssim\n");
        for s in &self.slices {
            out.push_str(&format!("{},{},{:.6}\n", s.name, s.psnr, s.ssim));
        }
        out.push_str(&format!("mean,{},{:.6}\n", self.psnr.mean, self.ssim.mean));
        out.push_str(&format!("std,{:.4},{:.6}\n", self.psnr.std, self.ssim.std));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn img(f: impl Fn(usize, usize) -> f64) -> ComplexImage {
        ComplexImage::from_fn(8, 8, |r, c| Complex64::new(f(r, c), 0.0)).unwrap()
    }

    #[test]
    fn identical_images() {
        let a = img(|r, c| (r * 8 + c) as f64 / 64.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_test_image() {
        let a = img(|r, c| ((r + 2 * c) % 5) as f64);
        let z = img(|_, _| 0.0);
        let rms = (a.magnitude().iter().map(|v| v * v).sum::<f64>() / 64.0).sqrt();
        assert!((psnr(&a, &z).unwrap() - 20.0 * (4.0 / rms).log10()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = img(|_, _| 1.0);
        let b = ComplexImage::zeros(8, 9).unwrap();
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn report_serializes_infinite_psnr_as_sentinel() {
        let a = img(|r, _| r as f64);
        let rep = MetricReport::evaluate([("s0".to_string(), &a, &a)]).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"psnr\":\"inf\""));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        assert!(rep.to_csv().contains("s0,inf,1.000000"));
    }
}

//! Dataset files and magnitude image export.
//!
//! A dataset is a binary `CPID1` file plus a JSON sidecar at `<path>.json`.
//! The binary layout, all little-endian:
//!
//! ```text
//! magic      5 bytes  "CPID1"
//! version    u32      1
//! height     u32
//! width      u32
//! coils      u32
//! accel      u32      nominal acceleration R
//! acs        u32      calibration lines
//! pattern    u8       0 = equidistant, 1 = random
//! flags      u8       bit 0: x_true present, bit 1: y present
//! seed       u64
//! sigma      f64
//! lines      height bytes, 0/1 per phase-encode line
//! x_true     H·W complex      (if flagged)
//! coils      C·H·W complex
//! y          C·H·W complex    (if flagged; zeros off the mask)
//! x_pi       H·W complex
//! ```
//!
//! Complex values are interleaved `f32` pairs. Arrays held by [`Dataset`] are
//! rounded to `f32` on construction so that a read of a written file
//! reproduces the dataset exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodingOperator, KSpaceData};
use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::pi::{cg_sense, CgConfig};
use crate::synth::{
    make_coils, make_mask, make_phantom, simulate_acquisition, CoilSensitivities, MaskKind, NoiseModel, SamplingMask,
};

pub const DATASET_MAGIC: &[u8; 5] = b"CPID1";
pub const DATASET_VERSION: u32 = 1;

const HAS_TRUTH: u8 = 1;
const HAS_KSPACE: u8 = 2;

/// Parameters of a synthetic acquisition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    pub acceleration: usize,
    pub acs_lines: usize,
    pub pattern: MaskKind,
    pub sigma: f64,
    pub seed: u64,
    /// CG-SENSE iterations used to form `x_pi`.
    pub pi_iterations: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            coils: 4,
            acceleration: 4,
            acs_lines: 8,
            pattern: MaskKind::Equidistant,
            sigma: 0.01,
            seed: 0,
            pi_iterations: CgConfig::default().max_iter,
        }
    }
}

/// Provenance recorded in the header and the sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    pub acceleration: usize,
    pub acs_lines: usize,
    pub pattern: MaskKind,
    pub seed: u64,
    pub sigma: f64,
}

/// One slice: truth (if known), coil maps, k-space (if kept) and the
/// parallel-imaging image.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub mask: SamplingMask,
    pub x_true: Option<ComplexImage>,
    pub coils: CoilSensitivities,
    pub y: Option<KSpaceData>,
    pub x_pi: ComplexImage,
}

fn round_f32(v: &[Complex64]) -> Vec<Complex64> {
    v.iter()
        .map(|c| Complex64::new(c.re as f32 as f64, c.im as f32 as f64))
        .collect()
}

fn round_image(x: &ComplexImage) -> Result<ComplexImage> {
    ComplexImage::new(x.height(), x.width(), round_f32(x.data()))
}

impl Dataset {
    /// Assembles a dataset, rounding every array to `f32` precision.
    pub fn new(
        meta: DatasetMeta,
        mask: SamplingMask,
        x_true: Option<ComplexImage>,
        coils: CoilSensitivities,
        y: Option<KSpaceData>,
        x_pi: ComplexImage,
    ) -> Result<Self> {
        let (h, w) = (meta.height, meta.width);
        let dims_ok = x_pi.dims() == (h, w)
            && coils.height() == h
            && coils.width() == w
            && coils.n_coils() == meta.coils
            && mask.height() == h
            && x_true.as_ref().is_none_or(|x| x.dims() == (h, w))
            && y.as_ref()
                .is_none_or(|y| y.height() == h && y.width() == w && y.n_coils() == meta.coils);
        if !dims_ok {
            return Err(Error::invalid("dataset arrays disagree with the header dimensions"));
        }
        let coils = CoilSensitivities::new(h, w, coils.maps().iter().map(|m| round_f32(m)).collect())?;
        let y = match y {
            Some(y) => Some(KSpaceData::new(y.n_coils(), y.mask().clone(), round_f32(y.data()))?),
            None => None,
        };
        Ok(Self {
            meta,
            mask,
            x_true: x_true.as_ref().map(round_image).transpose()?,
            coils,
            y,
            x_pi: round_image(&x_pi)?,
        })
    }

    /// Simulates phantom, coils, mask and noisy k-space, then forms `x_pi` by
    /// CG-SENSE.
    pub fn synthesize(cfg: &SynthConfig) -> Result<Self> {
        let x = make_phantom(cfg.height, cfg.width, cfg.seed)?;
        let coils = make_coils(cfg.height, cfg.width, cfg.coils, cfg.seed)?;
        let mask = make_mask(cfg.height, cfg.acceleration, cfg.acs_lines, cfg.pattern, cfg.seed)?;
        let kmask = mask.to_kmask(cfg.width);
        let y = simulate_acquisition(&x, &coils, &kmask, NoiseModel::new(cfg.sigma)?, cfg.seed)?;
        let e = EncodingOperator::new(coils.clone(), kmask)?;
        let (x_pi, _) = cg_sense(&y, &e, &CgConfig::new(cfg.pi_iterations, CgConfig::default().tol)?)?;
        let meta = DatasetMeta {
            height: cfg.height,
            width: cfg.width,
            coils: cfg.coils,
            acceleration: cfg.acceleration,
            acs_lines: cfg.acs_lines,
            pattern: cfg.pattern,
            seed: cfg.seed,
            sigma: cfg.sigma,
        };
        Self::new(meta, mask, Some(x), coils, Some(y), x_pi)
    }

    pub fn encoding(&self) -> Result<EncodingOperator> {
        EncodingOperator::new(self.coils.clone(), self.mask.to_kmask(self.meta.width))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&self.to_bytes())?;
        out.flush()?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.sidecar())?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(|e| with_path(path, e))?)
            .read_to_end(&mut bytes)
            .map_err(|e| with_path(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            format: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
            version: DATASET_VERSION,
            meta: self.meta.clone(),
            sampled_lines: self.mask.line_count(),
            has_truth: self.x_true.is_some(),
            has_kspace: self.y.is_some(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.meta;
        let mut b = Vec::new();
        b.extend_from_slice(DATASET_MAGIC);
        b.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        for v in [m.height, m.width, m.coils, m.acceleration, m.acs_lines] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        b.push(match m.pattern {
            MaskKind::Equidistant => 0,
            MaskKind::RandomUniform => 1,
        });
        let mut flags = 0;
        if self.x_true.is_some() {
            flags |= HAS_TRUTH;
        }
        if self.y.is_some() {
            flags |= HAS_KSPACE;
        }
        b.push(flags);
        b.extend_from_slice(&m.seed.to_le_bytes());
        b.extend_from_slice(&m.sigma.to_le_bytes());
        b.extend(self.mask.lines().iter().map(|&on| on as u8));
        let mut put = |v: &[Complex64]| {
            for c in v {
                b.extend_from_slice(&(c.re as f32).to_le_bytes());
                b.extend_from_slice(&(c.im as f32).to_le_bytes());
            }
        };
        if let Some(x) = &self.x_true {
            put(x.data());
        }
        for map in self.coils.maps() {
            put(map);
        }
        if let Some(y) = &self.y {
            put(y.data());
        }
        put(self.x_pi.data());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(5)? != DATASET_MAGIC {
            return Err(Error::Format("not a CPID1 dataset (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let coils = r.u32()? as usize;
        let acceleration = r.u32()? as usize;
        let acs_lines = r.u32()? as usize;
        if height == 0 || width == 0 || coils == 0 {
            return Err(Error::Format("zero dimension in dataset header".into()));
        }
        let pattern = match r.take(1)?[0] {
            0 => MaskKind::Equidistant,
            1 => MaskKind::RandomUniform,
            p => return Err(Error::Format(format!("unknown sampling pattern code {p}"))),
        };
        let flags = r.take(1)?[0];
        if flags & !(HAS_TRUTH | HAS_KSPACE) != 0 {
            return Err(Error::Format(format!("unknown dataset flags {flags:#04x}")));
        }
        let seed = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let sigma = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let lines = r
            .take(height)?
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::Format(format!("bad mask byte {v}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let mask = SamplingMask::from_lines(lines, acceleration, acs_lines, pattern)
            .map_err(|e| Error::Format(e.to_string()))?;
        let plane = height * width;
        let x_true = if flags & HAS_TRUTH != 0 {
            Some(ComplexImage::new(height, width, r.complex(plane)?)?)
        } else {
            None
        };
        let maps = (0..coils).map(|_| r.complex(plane)).collect::<Result<Vec<_>>>()?;
        let coil_maps = CoilSensitivities::new(height, width, maps)?;
        let y = if flags & HAS_KSPACE != 0 {
            Some(KSpaceData::new(coils, mask.to_kmask(width), r.complex(coils * plane)?)?)
        } else {
            None
        };
        let x_pi = ComplexImage::new(height, width, r.complex(plane)?)?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after dataset payload",
                bytes.len() - r.pos
            )));
        }
        let meta = DatasetMeta {
            height,
            width,
            coils,
            acceleration,
            acs_lines,
            pattern,
            seed,
            sigma,
        };
        Ok(Self {
            meta,
            mask,
            x_true,
            coils: coil_maps,
            y,
            x_pi,
        })
    }
}

/// Human-readable description written next to each dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub format: String,
    pub version: u32,
    pub meta: DatasetMeta,
    pub sampled_lines: usize,
    pub has_truth: bool,
    pub has_kspace: bool,
}

/// Prefixes an I/O error with the offending path.
pub(crate) fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "truncated dataset: wanted {n} bytes at offset {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn complex(&mut self, n: usize) -> Result<Vec<Complex64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes(c[..4].try_into().unwrap());
                let im = f32::from_le_bytes(c[4..].try_into().unwrap());
                Complex64::new(re as f64, im as f64)
            })
            .collect())
    }
}

/// Magnitude image quantized to 16 bits, with `scale` mapping to 65535.
/// A `scale` of `None` uses the image maximum.
pub fn magnitude_u16(x: &ComplexImage, scale: Option<f64>) -> Vec<u16> {
    let mag = x.magnitude();
    let top = scale.unwrap_or_else(|| mag.iter().copied().fold(0.0, f64::max));
    mag.iter()
        .map(|&m| {
            if top > 0.0 {
                ((m / top).clamp(0.0, 1.0) * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect()
}

/// Binary 16-bit PGM (`P5`, maxval 65535, big-endian samples).
pub fn write_pgm(path: &Path, x: &ComplexImage, scale: Option<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n65535\n", x.width(), x.height())?;
    for v in magnitude_u16(x, scale) {
        out.write_all(&v.to_be_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads back a 16-bit binary PGM as written by [`write_pgm`].
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = std::fs::read(path).map_err(|e| with_path(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM field '{s}'")));
    if fields[0] != "P5" || parse(&fields[3])? != 65535 {
        return Err(Error::Format("expected a 16-bit P5 PGM".into()));
    }
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != 2 * w * h {
        return Err(Error::Format(format!("PGM body has {} bytes, expected {}", body.len(), 2 * w * h)));
    }
    Ok((h, w, body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

/// 16-bit grayscale PNG of the magnitude.
pub fn write_png(path: &Path, x: &ComplexImage, scale: Option<f64>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, x.width() as u32, x.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    let data: Vec<u8> = magnitude_u16(x, scale).iter().flat_map(|v| v.to_be_bytes()).collect();
    writer.write_image_data(&data).map_err(|e| Error::Format(e.to_string()))?;
    writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// A reconstructed image stored as a single-slice dataset-style array file:
/// magic `CPIDIMG1`, `u32` height, `u32` width, then interleaved `f32` pairs.
pub fn write_image(path: &Path, x: &ComplexImage) -> Result<()> {
    let mut b = Vec::with_capacity(16 + 8 * x.len());
    b.extend_from_slice(IMAGE_MAGIC);
    b.extend_from_slice(&(x.height() as u32).to_le_bytes());
    b.extend_from_slice(&(x.width() as u32).to_le_bytes());
    for c in x.data() {
        b.extend_from_slice(&(c.re as f32).to_le_bytes());
        b.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
    std::fs::write(path, b)?;
    Ok(())
}

pub const IMAGE_MAGIC: &[u8; 8] = b"CPIDIMG1";

pub fn read_image(path: &Path) -> Result<ComplexImage> {
    let bytes = std::fs::read(path).map_err(|e| with_path(path, e))?;
    let mut r = Cursor { bytes: &bytes, pos: 0 };
    if r.take(8)? != IMAGE_MAGIC {
        return Err(Error::Format("not a CPIDIMG1 image (bad magic)".into()));
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let data = r.complex(h * w)?;
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after image payload".into()));
    }
    ComplexImage::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        Dataset::synthesize(&SynthConfig {
            height: 16,
            width: 16,
            coils: 3,
            acceleration: 2,
            acs_lines: 4,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.cpid");
        let d = small();
        d.write(&p).unwrap();
        let back = Dataset::read(&p).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_bytes(), std::fs::read(&p).unwrap());
        let side: DatasetSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(side.meta, d.meta);
    }

    #[test]
    fn optional_arrays_round_trip() {
        let mut d = small();
        d.x_true = None;
        d.y = None;
        assert_eq!(Dataset::from_bytes(&d.to_bytes()).unwrap(), d);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let b = small().to_bytes();
        assert!(matches!(Dataset::from_bytes(&b[..b.len() - 1]), Err(Error::Format(_))));
        let mut extra = b.clone();
        extra.push(0);
        assert!(matches!(Dataset::from_bytes(&extra), Err(Error::Format(_))));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        let x = small().x_pi;
        write_pgm(&p, &x, None).unwrap();
        let (h, w, v) = read_pgm(&p).unwrap();
        assert_eq!((h, w), (16, 16));
        assert_eq!(v, magnitude_u16(&x, None));
        assert_eq!(v.iter().copied().max(), Some(65535));
    }

    #[test]
    fn image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.img");
        let x = small().x_pi;
        write_image(&p, &x).unwrap();
        assert_eq!(read_image(&p).unwrap(), x);
    }
}

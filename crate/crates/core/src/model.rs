//! The unrolled network: `T` alternations of a residual CNN regularizer and a
//! penalized data-fidelity solve, with weights shared across unrolls.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{DataFidelity, Penalty, Tape, Tensor, Var};
use crate::encoding::EncodingOperator;
use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::pi::CgConfig;
use crate::synth::rng;

/// How the regularizer output is formed from the CNN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerKind {
    /// `x + CNN(x)`: the identity at initialization.
    Residual,
    /// `CNN(x)` alone.
    PureCorrection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub unrolls: usize,
    pub blocks: usize,
    pub channels: usize,
    pub kernel: usize,
    pub bias: bool,
    pub residual_scale: f64,
    pub kind: RegularizerKind,
    pub mu: f64,
    pub train_mu: bool,
    pub forward_cg: CgConfig,
    /// Used for the implicit gradient; must converge.
    pub backward_cg: CgConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            unrolls: 5,
            blocks: 4,
            channels: 16,
            kernel: 3,
            bias: true,
            residual_scale: 0.1,
            kind: RegularizerKind::Residual,
            mu: 0.05,
            train_mu: false,
            forward_cg: CgConfig {
                max_iter: 15,
                tol: 1e-8,
            },
            backward_cg: CgConfig {
                max_iter: 200,
                tol: 1e-8,
            },
        }
    }
}

impl ModelConfig {
    /// The small network used for gradient checks.
    pub fn toy() -> Self {
        Self {
            unrolls: 3,
            blocks: 2,
            channels: 8,
            ..Self::default()
        }
    }

    /// Full-size network: 10 unrolls, 15 blocks, 64 channels, bias-free convolutions, trainable μ.
    pub fn large() -> Self {
        Self {
            unrolls: 10,
            blocks: 15,
            channels: 64,
            bias: false,
            train_mu: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.channels == 0 {
            return Err(Error::invalid("blocks and channels must be positive"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::invalid("kernel size must be odd"));
        }
        if !(self.mu > 0.0) || !self.residual_scale.is_finite() {
            return Err(Error::invalid("mu must be > 0 and residual scale finite"));
        }
        self.forward_cg.validate()?;
        self.backward_cg.validate()
    }

    fn conv_shapes(&self) -> Vec<[usize; 2]> {
        let c = self.channels;
        let mut out = vec![[c, 2]];
        out.extend(std::iter::repeat_n([c, c], 2 * self.blocks));
        out.push([c, c]);
        out.push([2, c]);
        out
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let convs: usize = self
            .conv_shapes()
            .iter()
            .map(|[o, i]| o * i * k2 + if self.bias { *o } else { 0 })
            .sum();
        convs + usize::from(self.train_mu)
    }
}

/// Network weights. Parameter order: for each convolution (input, block convs,
/// mid, output) the weight then the bias if enabled; μ last.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Tensor>,
}

/// Parameters registered on a tape for one forward pass.
#[derive(Clone, Debug)]
pub struct TracedParams {
    pub vars: Vec<Var>,
    convs: Vec<(Var, Option<Var>)>,
    mu: Penalty,
}

impl Model {
    /// He-initialized convolutions; the output convolution starts at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng(seed);
        let k = config.kernel;
        let shapes = config.conv_shapes();
        let last = shapes.len() - 1;
        let mut params = Vec::new();
        for (idx, [o, i]) in shapes.into_iter().enumerate() {
            let n = o * i * k * k;
            let data = if idx == last {
                vec![0.0; n]
            } else {
                let std = (2.0 / (i * k * k) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| dist.sample(&mut r)).collect()
            };
            params.push(Tensor::new(vec![o, i, k, k], data)?);
            if config.bias {
                params.push(Tensor::zeros(&[o]));
            }
        }
        params.push(Tensor::scalar(config.mu));
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        if params.len() != reference.params.len() {
            return Err(Error::shape("Model::from_params", &[reference.params.len()], &[params.len()]));
        }
        for (p, r) in params.iter().zip(&reference.params) {
            if p.shape() != r.shape() {
                return Err(Error::shape("Model::from_params", r.shape(), p.shape()));
            }
            if !p.is_finite() {
                return Err(Error::NonFinite { op: "Model::from_params" });
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// All parameter tensors, μ last (present even when μ is fixed).
    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn mu(&self) -> f64 {
        self.params.last().expect("mu is always present").item()
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    /// Indices into [`Model::params`] that are trained.
    pub fn trainable(&self) -> std::ops::Range<usize> {
        0..self.params.len() - usize::from(!self.config.train_mu)
    }

    /// Registers the parameters on `tape`; trainable ones as leaves.
    pub fn trace(&self, tape: &mut Tape) -> Result<TracedParams> {
        let trainable = self.trainable();
        let mut vars = Vec::with_capacity(self.params.len());
        for (i, p) in self.params.iter().enumerate() {
            let v = if trainable.contains(&i) {
                tape.leaf(p.clone())?
            } else {
                tape.constant(p.clone())?
            };
            vars.push(v);
        }
        let step = if self.config.bias { 2 } else { 1 };
        let n_convs = self.config.conv_shapes().len();
        let convs = (0..n_convs)
            .map(|c| {
                let w = vars[c * step];
                (w, self.config.bias.then(|| vars[c * step + 1]))
            })
            .collect();
        let mu = if self.config.train_mu {
            Penalty::Traced(*vars.last().expect("mu var"))
        } else {
            Penalty::Fixed(self.mu())
        };
        Ok(TracedParams { vars, convs, mu })
    }

    /// The regularizer on a `[2, H, W]` tensor.
    pub fn regularizer_traced(&self, tape: &mut Tape, p: &TracedParams, x: Var) -> Result<Var> {
        let conv = |tape: &mut Tape, i: usize, v: Var| tape.conv2d(v, p.convs[i].0, p.convs[i].1);
        let head = conv(tape, 0, x)?;
        let mut h = head;
        for b in 0..self.config.blocks {
            let a = conv(tape, 1 + 2 * b, h)?;
            let a = tape.relu(a)?;
            let a = conv(tape, 2 + 2 * b, a)?;
            h = tape.add_scaled(h, a, self.config.residual_scale)?;
        }
        let mid = conv(tape, 1 + 2 * self.config.blocks, h)?;
        let mid = tape.add(mid, head)?;
        let out = conv(tape, 2 + 2 * self.config.blocks, mid)?;
        match self.config.kind {
            RegularizerKind::Residual => tape.add(x, out),
            RegularizerKind::PureCorrection => Ok(out),
        }
    }

    pub fn fidelity(&self, e: &EncodingOperator) -> Arc<DataFidelity> {
        Arc::new(DataFidelity {
            encoding: e.clone(),
            forward_cg: self.config.forward_cg,
            backward_cg: self.config.backward_cg,
        })
    }

    /// Unrolled forward pass on the tape: `x ← DF(R(x))` repeated `T` times from `x_in`.
    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        p: &TracedParams,
        x_in: Var,
        rhs: Var,
        fidelity: &Arc<DataFidelity>,
    ) -> Result<Var> {
        let mut x = x_in;
        for i in 0..self.config.unrolls {
            let z = self.regularizer_traced(tape, p, x)?;
            x = tape
                .data_fidelity(z, rhs, p.mu, fidelity.clone())
                .map_err(|e| Error::Unroll {
                    unroll: i + 1,
                    source: Box::new(e),
                })?;
        }
        Ok(x)
    }

    /// Applies the regularizer to an image.
    pub fn regularizer(&self, x: &ComplexImage) -> Result<ComplexImage> {
        let mut tape = Tape::new();
        let p = self.trace_constants(&mut tape)?;
        let xv = tape.constant(Tensor::from_image(x))?;
        let out = self.regularizer_traced(&mut tape, &p, xv)?;
        tape.value(out).to_image()
    }

    /// `f(x_in, E)` with `rhs = E^H E x_in`.
    pub fn forward(&self, x_in: &ComplexImage, e: &EncodingOperator) -> Result<ComplexImage> {
        let rhs = e.rhs_from_image(x_in)?;
        self.forward_with_rhs(x_in, &rhs, e)
    }

    /// `f` with an explicit data term (e.g. `E^H y` when k-space is available).
    pub fn forward_with_rhs(&self, x_in: &ComplexImage, rhs: &ComplexImage, e: &EncodingOperator) -> Result<ComplexImage> {
        let mut tape = Tape::new();
        let p = self.trace_constants(&mut tape)?;
        let xv = tape.constant(Tensor::from_image(x_in))?;
        let rv = tape.constant(Tensor::from_image(rhs))?;
        let out = self.forward_traced(&mut tape, &p, xv, rv, &self.fidelity(e))?;
        tape.value(out).to_image()
    }

    fn trace_constants(&self, tape: &mut Tape) -> Result<TracedParams> {
        let mut frozen = self.clone();
        frozen.config.train_mu = false;
        let mut p = frozen.trace(tape)?;
        if self.config.train_mu {
            p.mu = Penalty::Fixed(self.mu());
        }
        Ok(p)
    }

    /// Writes the binary checkpoint and a JSON sidecar (`<path>.json`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_all(&(cfg.len() as u64).to_le_bytes())?;
        w.write_all(&cfg)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&(p.shape().len() as u64).to_le_bytes())?;
            for d in p.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        let sidecar = serde_json::json!({
            "format": "cupid-checkpoint",
            "version": CHECKPOINT_VERSION,
            "config": self.config,
            "param_count": self.param_count(),
            "mu": self.mu(),
        });
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| crate::io::with_path(path, e))?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("{}: not a checkpoint", path.display())));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let cfg_len = read_len(&mut r, 1 << 20)?;
        let mut cfg = vec![0u8; cfg_len];
        r.read_exact(&mut cfg)?;
        let config: ModelConfig = serde_json::from_slice(&cfg)?;
        let n = read_len(&mut r, 1 << 16)?;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let ndim = read_len(&mut r, 8)?;
            let shape = (0..ndim).map(|_| read_len(&mut r, 1 << 24)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            if len > 1 << 28 {
                return Err(Error::Format("parameter tensor too large".into()));
            }
            let mut buf = vec![0u8; 8 * len];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push(Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        Self::from_params(config, params)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CPIDCKPT";
const CHECKPOINT_VERSION: u32 = 1;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_len(r: &mut impl Read, max: usize) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let v = u64::from_le_bytes(b) as usize;
    if v > max {
        return Err(Error::Format(format!("length field {v} exceeds {max}")));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pi::cg_sense;
    use crate::synth::{make_coils, make_mask, make_phantom, simulate_acquisition, MaskKind, NoiseModel};

    fn instance(h: usize, r: usize) -> (ComplexImage, EncodingOperator) {
        let x = make_phantom(h, h, 1).unwrap();
        let coils = make_coils(h, h, 4, 2).unwrap();
        let mask = make_mask(h, r, 4, MaskKind::Equidistant, 0).unwrap();
        (x, EncodingOperator::new(coils, mask.to_kmask(h)).unwrap())
    }

    #[test]
    fn large_preset_size() {
        // bias-free: 31 inner convolutions plus the two channel-changing ones and μ
        assert_eq!(ModelConfig::large().param_count(), 31 * 36864 + 2 * 1152 + 1);
        let m = Model::new(ModelConfig::toy(), 0).unwrap();
        let total: usize = m.params()[m.trainable()].iter().map(Tensor::len).sum();
        assert_eq!(total, m.param_count());
    }

    #[test]
    fn regularizer_is_identity_at_init() {
        let (x, _) = instance(16, 2);
        let m = Model::new(ModelConfig::toy(), 3).unwrap();
        let y = m.regularizer(&x).unwrap();
        assert_eq!(y.dims(), x.dims());
        assert!(y.relative_error(&x).unwrap() < 1e-15);
    }

    #[test]
    fn zero_unrolls_return_input() {
        let (x, e) = instance(16, 2);
        let m = Model::new(ModelConfig { unrolls: 0, ..ModelConfig::toy() }, 0).unwrap();
        assert_eq!(m.forward(&x, &e).unwrap(), x);
    }

    #[test]
    fn pure_correction_with_tiny_mu_approaches_cg_sense() {
        let (x, e) = instance(16, 2);
        let y = simulate_acquisition(&x, e.coils(), e.mask(), NoiseModel::noiseless(), 0).unwrap();
        let (sense, _) = cg_sense(&y, &e, &CgConfig::converged()).unwrap();
        let cfg = ModelConfig {
            kind: RegularizerKind::PureCorrection,
            mu: 1e-6,
            unrolls: 2,
            forward_cg: CgConfig::converged(),
            ..ModelConfig::toy()
        };
        let m = Model::new(cfg, 0).unwrap();
        let rhs = e.adjoint(&y).unwrap();
        let out = m.forward_with_rhs(&x, &rhs, &e).unwrap();
        assert!(out.relative_error(&sense).unwrap() < 1e-3);
    }

    #[test]
    fn forward_is_deterministic() {
        let (x, e) = instance(16, 2);
        let mut m = Model::new(ModelConfig::toy(), 5).unwrap();
        let last = m.params().len() - 2;
        m.params_mut()[last].data_mut().iter_mut().for_each(|v| *v = 0.01);
        assert_eq!(m.forward(&x, &e).unwrap(), m.forward(&x, &e).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = Model::new(ModelConfig::toy(), 9).unwrap();
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(sidecar["param_count"], m.param_count());
        std::fs::write(&path, b"garbage!").unwrap();
        assert!(matches!(Model::load(&path), Err(Error::Format(_)) | Err(Error::Io(_))));
    }
}

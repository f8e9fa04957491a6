//! Command-line front end: `gen`, `recon`, `train`, `eval`, `ablate`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{self, Baseline, PiSource, Sweep};
use crate::image::ComplexImage;
use crate::io::{self, Dataset, SynthConfig};
use crate::metrics::MetricReport;
use crate::model::{Model, ModelConfig};
use crate::pi::CgConfig;
use crate::sparsity::CsConfig;
use crate::synth::MaskKind;
use crate::train::{self, LossKind, Sample, TrainConfig, TrainMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "cupid", version, about = "Unrolled MRI reconstruction trained from parallel-imaging images")]
pub struct Cli {
    /// Base seed for synthesis and training.
    #[arg(long, global = true, env = "CUPID_SEED", default_value_t = 0)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize dataset files.
    Gen(GenArgs),
    /// Reconstruct a dataset with a classical method or a trained model.
    Recon(ReconArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score reconstructions against the dataset truth.
    Eval(EvalArgs),
    /// Sweep one hyperparameter of zero-shot training.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output file; with `--count` above one, a directory of `slice_NNN.cpid` files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub coils: usize,
    /// Acceleration rate R.
    #[arg(long = "accel", default_value_t = 4)]
    pub acceleration: usize,
    #[arg(long, default_value_t = 8)]
    pub acs: usize,
    #[arg(long, value_enum, default_value_t = PatternArg::Equidistant)]
    pub pattern: PatternArg,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    /// CG-SENSE iterations used to form the stored parallel-imaging image.
    #[arg(long, default_value_t = 15)]
    pub pi_iters: usize,
    /// Drop the k-space payload, keeping only image-domain data.
    #[arg(long)]
    pub image_only: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PatternArg {
    Equidistant,
    Random,
}

impl From<PatternArg> for MaskKind {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::Equidistant => MaskKind::Equidistant,
            PatternArg::Random => MaskKind::RandomUniform,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Cgsense,
    Grappa,
    Cs,
    Model,
}

#[derive(Args, Debug)]
pub struct ReconArgs {
    #[arg(value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub data: PathBuf,
    /// Output prefix: writes `<out>.img`, `<out>.pgm` and, with `--png`, `<out>.png`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub png: bool,
    /// Checkpoint for `model`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Loss the checkpoint was trained with; k-space losses take `E^H y` as input.
    #[arg(long, value_enum, default_value_t = LossArg::Cupid)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 15)]
    pub cg_iters: usize,
    #[arg(long)]
    pub cs_mu: Option<f64>,
    #[arg(long)]
    pub cs_threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Supervised,
    Ssdu,
    Ei,
    Cupid,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Supervised => LossKind::Supervised,
            LossArg::Ssdu => LossKind::Ssdu,
            LossArg::Ei => LossKind::Ei,
            LossArg::Cupid => LossKind::Cupid,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Database,
    Zeroshot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Default,
    Toy,
    Large,
}

/// Model shape flags shared by `train` and `ablate`.
#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub unrolls: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub train_mu: bool,
}

/// Training flags shared by `train` and `ablate`; each overrides the config file.
#[derive(Args, Debug, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Perturbation count K.
    #[arg(long = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub pif_only: bool,
    /// Epochs between reweighting refreshes.
    #[arg(long)]
    pub refresh_every: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset files.
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = LossArg::Cupid)]
    pub loss: LossArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Zeroshot)]
    pub mode: ModeArg,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Network input: the stored image or a GRAPPA reconstruction of the k-space.
    #[arg(long, value_enum, default_value_t = SourceArg::Stored)]
    pub input: SourceArg,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Stored,
    Grappa,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset files holding the truth, paired in order with `--recon`.
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    /// Reconstruction images (`.img`).
    #[arg(long, num_args = 1.., required = true)]
    pub recon: Vec<PathBuf>,
    /// Output prefix: writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    Lambda,
    K,
    R,
    Pattern,
}

impl From<SweepArg> for Sweep {
    fn from(s: SweepArg) -> Self {
        match s {
            SweepArg::Lambda => Sweep::Lambda,
            SweepArg::K => Sweep::K,
            SweepArg::R => Sweep::Acceleration,
            SweepArg::Pattern => Sweep::Pattern,
        }
    }
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub sweep: SweepArg,
    /// Output directory for `rows.csv`, `summary.csv` and `summary.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of seeded instances per point, starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Restrict the sweep to these points (default: the full grid).
    #[arg(long, num_args = 1..)]
    pub points: Vec<String>,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p).map_err(|e| io::with_path(p, e))?)?),
            None => Ok(Self {
                model: ModelConfig::default(),
                train: TrainConfig {
                    epochs: 60,
                    ..Default::default()
                },
            }),
        }
    }
}

impl ModelArgs {
    fn apply(&self, base: &mut ModelConfig) -> Result<()> {
        if let Some(p) = self.preset {
            *base = match p {
                PresetArg::Default => ModelConfig::default(),
                PresetArg::Toy => ModelConfig::toy(),
                PresetArg::Large => ModelConfig::large(),
            };
        }
        if let Some(v) = self.unrolls {
            base.unrolls = v;
        }
        if let Some(v) = self.blocks {
            base.blocks = v;
        }
        if let Some(v) = self.channels {
            base.channels = v;
        }
        if let Some(v) = self.mu {
            base.mu = v;
        }
        if self.train_mu {
            base.train_mu = true;
        }
        base.validate()
    }
}

impl HyperArgs {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.steps_per_epoch {
            cfg.steps_per_epoch = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.optim.lr = v;
        }
        if let Some(v) = self.lambda {
            cfg.cupid.lambda = v;
        }
        if let Some(v) = self.k {
            cfg.cupid.k = v;
        }
        if self.pif_only {
            cfg.cupid.pif_only = true;
        }
        if let Some(v) = self.refresh_every {
            cfg.cupid.refresh_every = v;
        }
        if let Some(v) = self.rho {
            cfg.ssdu.rho = v;
        }
        if let Some(v) = self.beta {
            cfg.ei.beta = v;
        }
        cfg.validate()
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(&a, cli.seed),
        Command::Recon(a) => recon(&a),
        Command::Train(a) => train_cmd(&a, cli.seed),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a, cli.seed),
    }
}

fn gen(a: &GenArgs, seed: u64) -> Result<()> {
    if a.count == 0 {
        return Err(Error::invalid("--count must be at least 1"));
    }
    let base = SynthConfig {
        height: a.height,
        width: a.width,
        coils: a.coils,
        acceleration: a.acceleration,
        acs_lines: a.acs,
        pattern: a.pattern.into(),
        sigma: a.sigma,
        seed,
        pi_iterations: a.pi_iters,
    };
    let paths: Vec<PathBuf> = if a.count == 1 {
        if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        vec![a.out.clone()]
    } else {
        std::fs::create_dir_all(&a.out)?;
        (0..a.count).map(|i| a.out.join(format!("slice_{i:03}.cpid"))).collect()
    };
    for (i, p) in paths.iter().enumerate() {
        let mut ds = Dataset::synthesize(&SynthConfig {
            seed: seed + i as u64,
            ..base.clone()
        })?;
        if a.image_only {
            ds.y = None;
        }
        ds.write(p)?;
        println!("{}", p.display());
    }
    Ok(())
}

fn write_outputs(prefix: &Path, x: &ComplexImage, png: bool) -> Result<()> {
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let with = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    io::write_image(&with(".img"), x)?;
    io::write_pgm(&with(".pgm"), x, None)?;
    if png {
        io::write_png(&with(".png"), x, None)?;
    }
    Ok(())
}

fn report(ds: &Dataset, x: &ComplexImage) -> Result<()> {
    if let Some(t) = &ds.x_true {
        let m = MetricReport::evaluate([("recon".to_string(), t, x)])?;
        println!("psnr {} ssim {:.6}", m.slices[0].psnr, m.slices[0].ssim);
    }
    Ok(())
}

fn recon(a: &ReconArgs) -> Result<()> {
    let ds = Dataset::read(&a.data)?;
    let cg = CgConfig::new(a.cg_iters, CgConfig::default().tol)?;
    let mut cs = CsConfig::default();
    if let Some(v) = a.cs_mu {
        cs.mu = v;
    }
    if let Some(v) = a.cs_threshold {
        cs.threshold_scale = v;
    }
    let x = match a.method {
        MethodArg::Cgsense => experiment::run_baseline(&ds, Baseline::CgSense, &cg, &cs)?,
        MethodArg::Grappa => experiment::run_baseline(&ds, Baseline::Grappa, &cg, &cs)?,
        MethodArg::Cs => experiment::run_baseline(&ds, Baseline::Cs, &cg, &cs)?,
        MethodArg::Model => {
            let ckpt = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::invalid("recon model needs --checkpoint"))?;
            let model = Model::load(ckpt)?;
            let e = ds.encoding()?;
            let s = Sample::new("recon", &ds.x_pi, e, ds.mask.clone(), ds.y.as_ref(), None, None)?;
            s.reconstruct(&model, a.loss.into())?.scaled(1.0 / s.scale)
        }
    };
    write_outputs(&a.out, &x, a.png)?;
    report(&ds, &x)
}

fn train_cmd(a: &TrainArgs, seed: u64) -> Result<()> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let mut model_cfg = file.model;
    a.model.apply(&mut model_cfg)?;
    let mut cfg = file.train;
    cfg.seed = seed;
    cfg.loss = a.loss.into();
    cfg.mode = match a.mode {
        ModeArg::Database => TrainMode::Database,
        ModeArg::Zeroshot => TrainMode::ZeroShot,
    };
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    a.hyper.apply(&mut cfg)?;
    let datasets = a.data.iter().map(|p| Dataset::read(p)).collect::<Result<Vec<_>>>()?;
    let source = match a.input {
        SourceArg::Stored => PiSource::Stored,
        SourceArg::Grappa => PiSource::Grappa,
    };
    if cfg.mode == TrainMode::ZeroShot {
        if datasets.len() != 1 {
            return Err(Error::invalid("zero-shot training takes exactly one --data file"));
        }
        let run = experiment::zero_shot(&datasets[0], source, &model_cfg, &cfg, Some(&a.out))?;
        write_outputs(&a.out.join("recon"), &run.output, true)?;
        print_history(&run.outcome);
        if let (Some(i), Some(o)) = (run.psnr_input, run.psnr_output) {
            println!("psnr input {i:.3} output {o:.3}");
        }
        return Ok(());
    }
    let mut samples = Vec::new();
    for (p, ds) in a.data.iter().zip(&datasets) {
        let input = match source {
            PiSource::Stored => ds.x_pi.clone(),
            PiSource::Grappa => experiment::grappa_image(ds)?,
        };
        let e = ds.encoding()?;
        let reference = match (cfg.loss, ds.x_true.as_ref()) {
            (LossKind::Supervised, Some(x)) => Some(e.fully_sampled().apply(x)?),
            (LossKind::Supervised, None) => {
                return Err(Error::invalid(format!("{} has no truth for supervised training", p.display())))
            }
            _ => None,
        };
        let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        samples.push(Sample::new(name, &input, e, ds.mask.clone(), ds.y.as_ref(), reference.as_ref(), ds.x_true.as_ref())?);
    }
    let model = Model::new(model_cfg, cfg.seed)?;
    let outcome = train::train(model, &samples, &cfg, Some(&a.out))?;
    print_history(&outcome);
    Ok(())
}

fn print_history(o: &train::TrainOutcome) {
    if let Some(last) = o.history.last() {
        let m = last.psnr.map(|p| format!(" psnr {p:.3}")).unwrap_or_default();
        println!(
            "epoch {} total {:.6} comp {:.6} pif {:.6}{m}",
            last.epoch, last.total, last.comp, last.pif
        );
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.data.len() != a.recon.len() {
        return Err(Error::invalid(format!(
            "{} datasets but {} reconstructions",
            a.data.len(),
            a.recon.len()
        )));
    }
    let mut pairs = Vec::new();
    for (d, r) in a.data.iter().zip(&a.recon) {
        let ds = Dataset::read(d)?;
        let truth = ds
            .x_true
            .ok_or_else(|| Error::invalid(format!("{} carries no truth image", d.display())))?;
        let name = r.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        pairs.push((name, truth, io::read_image(r)?));
    }
    let report = MetricReport::evaluate(pairs.iter().map(|(n, t, x)| (n.clone(), t, x)))?;
    let with = |ext: &str| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(with(".csv"), report.to_csv())?;
    std::fs::write(with(".json"), serde_json::to_string_pretty(&report)?)?;
    print!("{}", report.to_csv());
    Ok(())
}

fn ablate(a: &AblateArgs, seed: u64) -> Result<()> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let mut model_cfg = file.model;
    a.model.apply(&mut model_cfg)?;
    let mut cfg = file.train;
    a.hyper.apply(&mut cfg)?;
    let sweep: Sweep = a.sweep.into();
    let points = if a.points.is_empty() { sweep.points() } else { a.points.clone() };
    let seeds: Vec<u64> = (seed..seed + a.seeds).collect();
    let synth = SynthConfig {
        height: a.size,
        width: a.size,
        sigma: a.sigma,
        ..Default::default()
    };
    std::fs::create_dir_all(&a.out)?;
    let rows = experiment::run_sweep(sweep, &points, &seeds, &synth, &model_cfg, &cfg, |r| {
        eprintln!("{} seed {}: psnr {} -> {}", r.point, r.seed, r.psnr_input, r.psnr_output);
    })?;
    let mut csv = String::from("point,seed,psnr_input,psnr_output,ssim_output,seconds_per_epoch\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{:.6},{:.4}\n",
            r.point, r.seed, r.psnr_input, r.psnr_output, r.ssim_output, r.seconds_per_epoch
        ));
    }
    std::fs::write(a.out.join("rows.csv"), csv)?;
    let summary = experiment::summarize(&rows);
    std::fs::write(a.out.join("summary.csv"), experiment::summary_csv(&summary))?;
    std::fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    print!("{}", experiment::summary_table(&summary));
    Ok(())
}

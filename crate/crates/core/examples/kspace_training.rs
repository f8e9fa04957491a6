//! Database training with the k-space baselines (supervised, SSDU, EI) on a
//! handful of small slices.
//!
//! `cargo run --release --example kspace_training -- [epochs]`

use cupid::io::{Dataset, SynthConfig};
use cupid::metrics::psnr;
use cupid::model::{Model, ModelConfig};
use cupid::train::{train, LossKind, Sample, TrainConfig, TrainMode};

fn main() -> cupid::Result<()> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse().expect("epochs")).unwrap_or(10);
    let synth = SynthConfig {
        height: 32,
        width: 32,
        ..Default::default()
    };
    let mut samples = Vec::new();
    for seed in 0..4 {
        let ds = Dataset::synthesize(&SynthConfig { seed, ..synth.clone() })?;
        let e = ds.encoding()?;
        let reference = e.fully_sampled().apply(ds.x_true.as_ref().unwrap())?;
        samples.push(Sample::new(
            format!("slice{seed}"),
            &ds.x_pi,
            e,
            ds.mask.clone(),
            ds.y.as_ref(),
            Some(&reference),
            ds.x_true.as_ref(),
        )?);
    }
    let test = &samples[3];
    let train_set = &samples[..3];
    for loss in [LossKind::Supervised, LossKind::Ssdu, LossKind::Ei] {
        let cfg = TrainConfig {
            epochs,
            mode: TrainMode::Database,
            loss,
            ..Default::default()
        };
        let out = train(Model::new(ModelConfig::toy(), 0)?, train_set, &cfg, None)?;
        let rec = test.reconstruct(&out.model, loss)?;
        let last = out.history.last().unwrap();
        println!(
            "{loss:?}: final loss {:.4}, held-out PSNR {:.2} dB",
            last.total,
            psnr(test.truth.as_ref().unwrap(), &rec)?
        );
    }
    Ok(())
}

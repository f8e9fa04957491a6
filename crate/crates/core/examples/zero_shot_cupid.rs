//! Zero-shot training on one slice from its parallel-imaging image alone.
//!
//! `cargo run --release --example zero_shot_cupid -- [epochs] [run_dir]`

use std::path::PathBuf;

use cupid::experiment::{run_baseline, zero_shot, zero_shot_config, Baseline, PiSource};
use cupid::io::{write_pgm, Dataset, SynthConfig};
use cupid::metrics::psnr;
use cupid::model::ModelConfig;
use cupid::pi::CgConfig;
use cupid::sparsity::CsConfig;

fn main() -> cupid::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(30);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "out/zero_shot".into()));
    // Only x_pi, the coil maps and the mask reach the trainer.
    let mut ds = Dataset::synthesize(&SynthConfig::default())?;
    let cs = run_baseline(&ds, Baseline::Cs, &CgConfig::default(), &CsConfig::default())?;
    ds.y = None;

    let cfg = zero_shot_config(epochs, 0);
    let run = zero_shot(&ds, PiSource::Stored, &ModelConfig::default(), &cfg, Some(&dir))?;
    for r in run.outcome.history.iter().step_by(5) {
        println!(
            "epoch {:>3}  loss {:.4} (comp {:.4}, pif {:.4})  PSNR {:.2} dB",
            r.epoch,
            r.total,
            r.comp,
            r.pif,
            r.psnr.unwrap_or(f64::NAN)
        );
    }
    let truth = ds.x_true.as_ref().unwrap();
    println!("CG-SENSE {:.2} dB", run.psnr_input.unwrap());
    println!("CS       {:.2} dB", psnr(truth, &cs)?);
    println!("network  {:.2} dB after {epochs} epochs ({:.1} s)", run.psnr_output.unwrap(), run.seconds);
    write_pgm(&dir.join("output.pgm"), &run.output, Some(truth.max_abs()))?;
    println!("run directory: {}", dir.display());
    Ok(())
}

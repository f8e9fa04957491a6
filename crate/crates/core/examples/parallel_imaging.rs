//! Simulates a 4-coil acquisition at R = 4 and compares CG-SENSE with GRAPPA.
//!
//! `cargo run --release --example parallel_imaging -- [out_dir]`

use std::path::PathBuf;

use cupid::experiment::{run_baseline, Baseline};
use cupid::io::{write_pgm, Dataset, SynthConfig};
use cupid::metrics::{psnr, ssim};
use cupid::pi::CgConfig;
use cupid::sparsity::CsConfig;

fn main() -> cupid::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/parallel_imaging".into()));
    std::fs::create_dir_all(&out)?;
    let ds = Dataset::synthesize(&SynthConfig::default())?;
    let truth = ds.x_true.as_ref().expect("synthetic data has a truth image");
    println!(
        "{}x{} image, {} coils, {} of {} lines sampled",
        ds.meta.height,
        ds.meta.width,
        ds.meta.coils,
        ds.mask.line_count(),
        ds.meta.height
    );
    write_pgm(&out.join("truth.pgm"), truth, None)?;
    for (name, method) in [("cgsense", Baseline::CgSense), ("grappa", Baseline::Grappa)] {
        let x = run_baseline(&ds, method, &CgConfig::default(), &CsConfig::default())?;
        println!("{name:>8}: PSNR {:.2} dB  SSIM {:.4}", psnr(truth, &x)?, ssim(truth, &x)?);
        write_pgm(&out.join(format!("{name}.pgm")), &x, Some(truth.max_abs()))?;
    }
    Ok(())
}

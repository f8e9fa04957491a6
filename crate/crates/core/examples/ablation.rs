//! A short perturbation-count sweep of zero-shot training.
//!
//! `cargo run --release --example ablation -- [epochs] [seeds]`

use cupid::experiment::{run_sweep, summarize, summary_table, zero_shot_config, Sweep};
use cupid::io::SynthConfig;
use cupid::model::ModelConfig;

fn main() -> cupid::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(10);
    let seeds: u64 = args.next().map(|s| s.parse().expect("seeds")).unwrap_or(2);
    let synth = SynthConfig {
        height: 32,
        width: 32,
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..seeds).collect();
    let rows = run_sweep(
        Sweep::K,
        &Sweep::K.points(),
        &seeds,
        &synth,
        &ModelConfig::toy(),
        &zero_shot_config(epochs, 0),
        |r| println!("K={} seed {}: {} -> {} dB", r.point, r.seed, r.psnr_input, r.psnr_output),
    )?;
    print!("{}", summary_table(&summarize(&rows)));
    Ok(())
}

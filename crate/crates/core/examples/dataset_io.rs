//! Writes a few datasets, reads them back and scores CG-SENSE against the truth.
//!
//! `cargo run --release --example dataset_io -- [dir]`

use std::path::PathBuf;

use cupid::io::{Dataset, SynthConfig};
use cupid::metrics::MetricReport;

fn main() -> cupid::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/dataset_io".into()));
    std::fs::create_dir_all(&dir)?;
    let mut loaded = Vec::new();
    for seed in 0..3 {
        let path = dir.join(format!("slice_{seed:03}.cpid"));
        let ds = Dataset::synthesize(&SynthConfig { seed, ..Default::default() })?;
        ds.write(&path)?;
        let back = Dataset::read(&path)?;
        assert_eq!(back, ds);
        println!("{} ({} bytes) round-trips exactly", path.display(), std::fs::metadata(&path)?.len());
        loaded.push((format!("slice_{seed:03}"), back));
    }
    let report = MetricReport::evaluate(
        loaded
            .iter()
            .map(|(n, d)| (n.clone(), d.x_true.as_ref().unwrap(), &d.x_pi)),
    )?;
    print!("{}", report.to_csv());
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

//! Draws a set of fold-over-free perturbations and shows that CG-SENSE resolves
//! them on noiseless data.
//!
//! `cargo run --release --example perturbations -- [out_dir]`

use std::path::PathBuf;

use cupid::io::{write_png, Dataset, SynthConfig};
use cupid::perturb::{generate_set, validate_foldover, PerturbationSetConfig};
use cupid::pi::{cg_sense, CgConfig};

fn main() -> cupid::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/perturbations".into()));
    std::fs::create_dir_all(&out)?;
    let r = 4;
    let ds = Dataset::synthesize(&SynthConfig {
        sigma: 0.0,
        ..Default::default()
    })?;
    let x = ds.x_true.as_ref().unwrap();
    let e = ds.encoding()?;
    let set = generate_set(&PerturbationSetConfig::new(6, r, 7), ds.meta.height, ds.meta.width)?;
    for (i, p) in set.iter().enumerate() {
        let report = validate_foldover(&p.image, r)?;
        let target = x.add(&p.image)?;
        let y = e.apply(&target)?;
        let (rec, st) = cg_sense(&y, &e, &CgConfig::new(3000, 1e-12)?)?;
        println!(
            "{i}: {:?} '{}' at ({:.0},{:.0}) size {:.1}, fold-over free {}, CG-SENSE error {:.1e} ({} iters)",
            p.meta.kind,
            p.meta.symbol,
            p.meta.center.0,
            p.meta.center.1,
            p.meta.size,
            report.valid,
            rec.relative_error(&target)?,
            st.iterations
        );
        write_png(&out.join(format!("perturbation_{i}.png")), &p.image, None)?;
        write_png(&out.join(format!("perturbed_{i}.png")), &target, None)?;
    }
    Ok(())
}

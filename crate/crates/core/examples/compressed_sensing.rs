//! Wavelet-sparse reconstruction: DTCWT round trip, then CS at a few thresholds.
//!
//! `cargo run --release --example compressed_sensing`

use cupid::io::{Dataset, SynthConfig};
use cupid::metrics::psnr;
use cupid::sparsity::{cs_reconstruct, CsConfig, Dtcwt};

fn main() -> cupid::Result<()> {
    let ds = Dataset::synthesize(&SynthConfig::default())?;
    let truth = ds.x_true.as_ref().unwrap();
    let e = ds.encoding()?;
    let w = Dtcwt::new(ds.meta.height, ds.meta.width, Dtcwt::DEFAULT_LEVELS)?;
    let c = w.forward(truth)?;
    let back = w.inverse(&c)?;
    println!(
        "DTCWT: {} coefficients for {} pixels, reconstruction error {:.2e}",
        c.len(),
        truth.len(),
        back.relative_error(truth)?
    );

    let rhs = e.adjoint(ds.y.as_ref().unwrap())?;
    println!("CG-SENSE input: {:.2} dB", psnr(truth, &ds.x_pi)?);
    for scale in [0.003, 0.01, 0.03] {
        let cfg = CsConfig {
            threshold_scale: scale,
            ..Default::default()
        };
        let out = cs_reconstruct(&ds.x_pi, &rhs, &e, &cfg)?;
        let obj = out.objective.last().copied().unwrap_or(f64::NAN);
        println!(
            "threshold {scale:<6} tau {:.4}: {:.2} dB, final objective {obj:.5}",
            out.tau,
            psnr(truth, &out.image)?
        );
    }
    Ok(())
}

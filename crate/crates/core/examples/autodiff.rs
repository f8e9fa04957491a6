//! Reverse-mode differentiation through a convolution and a data-fidelity solve,
//! checked against central differences.
//!
//! `cargo run --release --example autodiff`

use std::sync::Arc;

use cupid::autodiff::{DataFidelity, Penalty, Tape, Tensor};
use cupid::io::{Dataset, SynthConfig};
use cupid::pi::CgConfig;

fn loss(weights: &Tensor, x: &Tensor, rhs: &Tensor, fid: &Arc<DataFidelity>) -> cupid::Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let w = tape.leaf(weights.clone())?;
    let xv = tape.constant(x.clone())?;
    let rv = tape.constant(rhs.clone())?;
    let z = tape.conv2d(xv, w, None)?;
    let out = tape.data_fidelity(z, rv, Penalty::Fixed(0.05), fid.clone())?;
    let l = tape.norm_l2(out)?;
    let value = tape.value(l).item();
    let grads = tape.backward(l)?;
    Ok((value, grads.wrt(w, weights.shape()).into_data()))
}

fn main() -> cupid::Result<()> {
    let ds = Dataset::synthesize(&SynthConfig {
        height: 16,
        width: 16,
        coils: 3,
        acceleration: 2,
        acs_lines: 4,
        ..Default::default()
    })?;
    let e = ds.encoding()?;
    let fid = Arc::new(DataFidelity {
        encoding: e.clone(),
        forward_cg: CgConfig::converged(),
        backward_cg: CgConfig::converged(),
    });
    let x = Tensor::from_image(&ds.x_pi);
    let rhs = Tensor::from_image(&e.rhs_from_image(&ds.x_pi)?);
    // 2 → 2 channel 3×3 kernel, close to identity
    let mut w = Tensor::zeros(&[2, 2, 3, 3]);
    for (i, v) in w.data_mut().iter_mut().enumerate() {
        *v = 0.05 * ((i * 7919 % 13) as f64 / 13.0 - 0.5);
    }
    w.data_mut()[4] += 1.0;
    w.data_mut()[2 * 9 + 9 + 4] += 1.0;

    let (value, grad) = loss(&w, &x, &rhs, &fid)?;
    println!("loss {value:.6}");
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in (0..w.len()).step_by(5) {
        let mut plus = w.clone();
        plus.data_mut()[i] += h;
        let mut minus = w.clone();
        minus.data_mut()[i] -= h;
        let fd = (loss(&plus, &x, &rhs, &fid)?.0 - loss(&minus, &x, &rhs, &fid)?.0) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(1e-12);
        worst = worst.max(rel);
        println!("w[{i:>2}] analytic {:+.6e} finite-diff {fd:+.6e}", grad[i]);
    }
    println!("largest relative deviation {worst:.2e}");
    Ok(())
}

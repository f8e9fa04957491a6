//! Kingsbury dual-tree filter banks.
//!
//! Coefficients are the published near-symmetric (13,19)-tap biorthogonal pair
//! for level 1 and the 14-tap Q-shift pair for deeper levels, as distributed
//! with N. Kingsbury's DTCWT toolbox (`near_sym_b`, `qshift_b`).

/// Level-1 analysis lowpass.
pub const H0O: [f64; 13] = [
    -0.0017578125,
    0.0,
    0.022265625,
    -0.046875,
    -0.0482421875,
    0.296875,
    0.55546875,
    0.296875,
    -0.0482421875,
    -0.046875,
    0.022265625,
    0.0,
    -0.0017578125,
];

/// Level-1 analysis highpass.
pub const H1O: [f64; 19] = [
    -7.062639508928571e-05,
    0.0,
    0.0013419015066964285,
    -0.0018833705357142855,
    -0.007156808035714285,
    0.023856026785714284,
    0.05564313616071428,
    -0.05168805803571428,
    -0.29975760323660716,
    0.5594308035714286,
    -0.29975760323660716,
    -0.05168805803571428,
    0.05564313616071428,
    0.023856026785714284,
    -0.007156808035714285,
    -0.0018833705357142855,
    0.0013419015066964285,
    0.0,
    -7.062639508928571e-05,
];

/// Level-1 synthesis lowpass.
pub const G0O: [f64; 19] = [
    7.062639508928571e-05,
    0.0,
    -0.0013419015066964285,
    -0.0018833705357142855,
    0.007156808035714285,
    0.023856026785714284,
    -0.05564313616071428,
    -0.05168805803571428,
    0.29975760323660716,
    0.5594308035714286,
    0.29975760323660716,
    -0.05168805803571428,
    -0.05564313616071428,
    0.023856026785714284,
    0.007156808035714285,
    -0.0018833705357142855,
    -0.0013419015066964285,
    0.0,
    7.062639508928571e-05,
];

/// Level-1 synthesis highpass.
pub const G1O: [f64; 13] = [
    -0.0017578125,
    -0.0,
    0.022265625,
    0.046875,
    -0.0482421875,
    -0.296875,
    0.55546875,
    -0.296875,
    -0.0482421875,
    0.046875,
    0.022265625,
    -0.0,
    -0.0017578125,
];

/// Q-shift tree-a lowpass; the other 14-tap filters are reversals/alternations of these.
pub const H0A: [f64; 14] = [
    0.003253142763653182,
    -0.00388321199915849,
    0.03466034684485349,
    -0.03887280126882779,
    -0.11720388769911527,
    0.27529538466888204,
    0.7561456438925225,
    0.5688104207121227,
    0.011866092033797,
    -0.1067118046866654,
    0.023825384794920298,
    0.01702522388155399,
    -0.005439475937274115,
    -0.004556895628475491,
];

pub const H1A: [f64; 14] = [
    -0.004556895628475491,
    0.005439475937274115,
    0.01702522388155399,
    -0.023825384794920298,
    -0.1067118046866654,
    -0.011866092033797,
    0.5688104207121227,
    -0.7561456438925225,
    0.27529538466888204,
    0.11720388769911527,
    -0.03887280126882779,
    -0.03466034684485349,
    -0.00388321199915849,
    -0.003253142763653182,
];

pub const H1B: [f64; 14] = [
    -0.003253142763653182,
    -0.00388321199915849,
    -0.03466034684485349,
    -0.03887280126882779,
    0.11720388769911527,
    0.27529538466888204,
    -0.7561456438925225,
    0.5688104207121227,
    -0.011866092033797,
    -0.1067118046866654,
    -0.023825384794920298,
    0.01702522388155399,
    0.005439475937274115,
    -0.004556895628475491,
];

pub fn reversed<const N: usize>(h: &[f64; N]) -> [f64; N] {
    let mut out = *h;
    out.reverse();
    out
}

/// The full Q-shift set `(h0a, h0b, g0a, g0b, h1a, h1b, g1a, g1b)`.
pub struct QShift {
    pub h0a: [f64; 14],
    pub h0b: [f64; 14],
    pub g0a: [f64; 14],
    pub g0b: [f64; 14],
    pub h1a: [f64; 14],
    pub h1b: [f64; 14],
    pub g1a: [f64; 14],
    pub g1b: [f64; 14],
}

pub fn qshift_b() -> QShift {
    let h0b = reversed(&H0A);
    QShift {
        h0a: H0A,
        h0b,
        g0a: h0b,
        g0b: H0A,
        h1a: H1A,
        h1b: H1B,
        g1a: H1B,
        g1b: H1A,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowpass_filters_have_unit_dc_gain() {
        assert!((H0O.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((G0O.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Q-shift filters are orthonormal with DC gain sqrt(2)
        assert!((H0A.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-9);
        assert!((H0A.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn highpass_filters_reject_dc() {
        assert!(H1O.iter().sum::<f64>().abs() < 1e-12);
        assert!(G1O.iter().sum::<f64>().abs() < 1e-12);
        // the published Q-shift highpass leaks about 1e-6 at DC
        assert!(H1A.iter().sum::<f64>().abs() < 1e-5);
        assert!(H1B.iter().sum::<f64>().abs() < 1e-5);
    }
}

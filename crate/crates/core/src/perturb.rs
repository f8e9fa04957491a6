//! Additive image perturbations that parallel imaging can resolve: small
//! shapes whose aliasing replicas at the acceleration rate never overlap.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ComplexImage;
use crate::synth::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Letter,
    Digit,
    Circle,
    CardSuit,
    Rectangle,
}

const SHAPE_KINDS: [ShapeKind; 5] = [
    ShapeKind::Letter,
    ShapeKind::Digit,
    ShapeKind::Circle,
    ShapeKind::CardSuit,
    ShapeKind::Rectangle,
];

/// How a perturbation was drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMeta {
    pub kind: ShapeKind,
    /// Glyph character, suit name, or empty for plain shapes.
    pub symbol: String,
    /// Rotation in radians.
    pub rotation: f64,
    /// Center `(row, col)` in pixels.
    pub center: (f64, f64),
    /// Side of the shape's bounding square before rotation, in pixels.
    pub size: f64,
    /// Intensity at the center and its gradient per pixel `(d/drow, d/dcol)`.
    pub base_intensity: f64,
    pub ramp: (f64, f64),
    /// Constant phase applied to the real-valued pattern.
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub image: ComplexImage,
    pub meta: PerturbationMeta,
}

impl Perturbation {
    /// Flat indices of the nonzero pixels.
    pub fn support(&self) -> Vec<usize> {
        support_of(&self.image)
    }
}

fn support_of(x: &ComplexImage) -> Vec<usize> {
    x.data()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.re != 0.0 || v.im != 0.0)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSetConfig {
    pub k: usize,
    pub acceleration: usize,
    pub seed: u64,
    /// Upper bound on perturbation magnitude relative to `reference_max`.
    pub max_fraction: f64,
    /// Maximum magnitude of the image being perturbed.
    pub reference_max: f64,
    /// Draw a random constant phase instead of a real-valued pattern.
    pub complex: bool,
}

impl PerturbationSetConfig {
    pub fn new(k: usize, acceleration: usize, seed: u64) -> Self {
        Self {
            k,
            acceleration,
            seed,
            max_fraction: 0.5,
            reference_max: 1.0,
            complex: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("perturbation count must be at least 1"));
        }
        if self.acceleration < 2 {
            return Err(Error::invalid("perturbations need an acceleration of at least 2"));
        }
        if !(self.max_fraction > 0.0) || !(self.reference_max > 0.0) {
            return Err(Error::invalid("perturbation intensity bounds must be positive"));
        }
        Ok(())
    }
}

/// Outcome of a fold-over check.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldoverReport {
    pub valid: bool,
    /// Replica spacing in rows.
    pub shift: usize,
    /// `H` was not divisible by `R`, so the spacing was rounded.
    pub rounded: bool,
    /// `(k1, k2, overlapping pixels)` for every colliding replica pair.
    pub overlaps: Vec<(usize, usize, usize)>,
}

/// Checks that the `R` cyclic phase-encode shifts of the support by
/// `k·H/R` rows are pairwise disjoint.
pub fn validate_foldover(p: &ComplexImage, acceleration: usize) -> Result<FoldoverReport> {
    if acceleration < 2 {
        return Err(Error::invalid("fold-over check needs R >= 2"));
    }
    let (h, w) = p.dims();
    let rounded = h % acceleration != 0;
    let shift = ((h as f64 / acceleration as f64).round() as usize).max(1);
    let mut mask = vec![false; h * w];
    let support = support_of(p);
    for &i in &support {
        mask[i] = true;
    }
    let mut overlaps = Vec::new();
    for k1 in 0..acceleration {
        for k2 in k1 + 1..acceleration {
            let d = ((k2 - k1) * shift) % h;
            let hits = support
                .iter()
                .filter(|&&i| mask[((i / w + d) % h) * w + i % w])
                .count();
            if hits > 0 {
                overlaps.push((k1, k2, hits));
            }
        }
    }
    Ok(FoldoverReport {
        valid: overlaps.is_empty(),
        shift,
        rounded,
        overlaps,
    })
}

// 5×7 bitmaps, one byte per row, most significant of the low five bits on the left
const LETTERS: [(char, [u8; 7]); 12] = [
    ('A', [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('E', [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F]),
    ('F', [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10]),
    ('H', [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('K', [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11]),
    ('L', [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F]),
    ('M', [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11]),
    ('N', [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11]),
    ('P', [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10]),
    ('R', [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11]),
    ('T', [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04]),
    ('X', [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11]),
];

const DIGITS: [(char, [u8; 7]); 10] = [
    ('0', [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E]),
    ('1', [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('2', [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F]),
    ('3', [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E]),
    ('4', [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02]),
    ('5', [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E]),
    ('6', [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E]),
    ('7', [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08]),
    ('8', [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E]),
    ('9', [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C]),
];

const SUITS: [&str; 4] = ["heart", "diamond", "club", "spade"];

fn glyph_hit(bits: &[u8; 7], u: f64, v: f64) -> bool {
    // glyph occupies [-5/7, 5/7] × [-1, 1] in (u, v)
    let col = ((u * 7.0 / 5.0 + 1.0) * 2.5).floor();
    let row = ((v + 1.0) * 3.5).floor();
    if !(0.0..5.0).contains(&col) || !(0.0..7.0).contains(&row) {
        return false;
    }
    bits[row as usize] >> (4 - col as usize) & 1 == 1
}

fn suit_hit(suit: &str, u: f64, v: f64) -> bool {
    let disk = |cu: f64, cv: f64, r: f64| (u - cu).powi(2) + (v - cv).powi(2) <= r * r;
    match suit {
        "diamond" => u.abs() * 1.4 + v.abs() <= 1.0,
        "heart" => {
            let lobes = disk(-0.45, -0.35, 0.5) || disk(0.45, -0.35, 0.5);
            lobes || ((-0.35..=0.95).contains(&v) && u.abs() <= 0.9 * (0.95 - v) / 1.3)
        }
        "club" => {
            disk(0.0, -0.5, 0.38)
                || disk(-0.45, 0.1, 0.38)
                || disk(0.45, 0.1, 0.38)
                || (u.abs() <= 0.12 && (-0.2..=0.95).contains(&v))
        }
        _ => {
            let body = (-0.95..=0.35).contains(&v) && u.abs() <= 0.9 * (v + 0.95) / 1.3;
            body || disk(-0.42, 0.3, 0.45)
                || disk(0.42, 0.3, 0.45)
                || (u.abs() <= 0.12 && (0.2..=0.95).contains(&v))
        }
    }
}

/// A shape indicator on local coordinates `(u, v) ∈ [-1, 1]²`.
fn rasterizer(kind: ShapeKind, symbol: &str) -> Box<dyn Fn(f64, f64) -> bool> {
    match kind {
        ShapeKind::Letter | ShapeKind::Digit => {
            let table: &[(char, [u8; 7])] = if kind == ShapeKind::Letter { &LETTERS } else { &DIGITS };
            let c = symbol.chars().next().unwrap_or('0');
            let bits = table.iter().find(|(g, _)| *g == c).map(|(_, b)| *b).unwrap_or(table[0].1);
            Box::new(move |u, v| glyph_hit(&bits, u, v))
        }
        ShapeKind::Circle => Box::new(|u, v| u * u + v * v <= 1.0),
        ShapeKind::Rectangle => Box::new(|u, v| u.abs() <= 1.0 && v.abs() <= 0.55),
        ShapeKind::CardSuit => {
            let s = symbol.to_string();
            Box::new(move |u, v| suit_hit(&s, u, v))
        }
    }
}

/// Renders a perturbation from its description.
pub fn render(meta: &PerturbationMeta, height: usize, width: usize, max_value: f64) -> Result<ComplexImage> {
    let hit = rasterizer(meta.kind, &meta.symbol);
    let (s, c) = meta.rotation.sin_cos();
    let half = meta.size / 2.0;
    let floor = 0.05 * max_value;
    let rot = Complex64::from_polar(1.0, meta.phase);
    ComplexImage::from_fn(height, width, |r, col| {
        let dy = r as f64 - meta.center.0;
        let dx = col as f64 - meta.center.1;
        // rotate the pixel offset back into the shape frame
        let u = (c * dx + s * dy) / half;
        let v = (-s * dx + c * dy) / half;
        if !hit(u, v) {
            return Complex64::new(0.0, 0.0);
        }
        let a = meta.base_intensity + meta.ramp.0 * dy + meta.ramp.1 * dx;
        rot * a.clamp(floor, max_value)
    })
}

fn draw_meta(rng: &mut impl Rng, height: usize, width: usize, cfg: &PerturbationSetConfig) -> PerturbationMeta {
    let kind = SHAPE_KINDS[rng.gen_range(0..SHAPE_KINDS.len())];
    let symbol = match kind {
        ShapeKind::Letter => LETTERS[rng.gen_range(0..LETTERS.len())].0.to_string(),
        ShapeKind::Digit => DIGITS[rng.gen_range(0..DIGITS.len())].0.to_string(),
        ShapeKind::CardSuit => SUITS[rng.gen_range(0..SUITS.len())].to_string(),
        _ => String::new(),
    };
    let rotation = rng.gen_range(0.0..2.0 * PI);
    // the rotated bounding square spans at most size·√2 rows; keep it inside one replica spacing
    let spacing = height as f64 / cfg.acceleration as f64;
    let max_size = ((spacing - 2.0) / 2f64.sqrt()).min(width as f64 / 3.0).max(2.0);
    let size = rng.gen_range(0.6 * max_size..=max_size);
    let reach = size / 2f64.sqrt() + 1.0;
    let center = (
        rng.gen_range(reach..(height as f64 - reach).max(reach + 1e-9)),
        rng.gen_range(reach..(width as f64 - reach).max(reach + 1e-9)),
    );
    let max_value = cfg.max_fraction * cfg.reference_max;
    let base_intensity = rng.gen_range(0.3..1.0) * max_value;
    let slope = 0.5 * max_value / size;
    let ramp = (rng.gen_range(-slope..slope), rng.gen_range(-slope..slope));
    let phase = if cfg.complex { rng.gen_range(-PI..PI) } else { 0.0 };
    PerturbationMeta {
        kind,
        symbol,
        rotation,
        center,
        size,
        base_intensity,
        ramp,
        phase,
    }
}

/// Maximum rejection draws per perturbation.
pub const MAX_ATTEMPTS: usize = 1000;

/// Draws `K` perturbations that pass the fold-over check; deterministic per seed.
pub fn generate_set(cfg: &PerturbationSetConfig, height: usize, width: usize) -> Result<Vec<Perturbation>> {
    cfg.validate()?;
    let mut rng = rng(cfg.seed ^ 0x7e57_ab1e);
    let max_value = cfg.max_fraction * cfg.reference_max;
    let mut out = Vec::with_capacity(cfg.k);
    for _ in 0..cfg.k {
        let mut last = String::from("empty support");
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let meta = draw_meta(&mut rng, height, width, cfg);
            let image = render(&meta, height, width, max_value)?;
            if image.max_abs() == 0.0 {
                last = "empty support".into();
                continue;
            }
            let report = validate_foldover(&image, cfg.acceleration)?;
            if report.valid {
                accepted = Some(Perturbation { image, meta });
                break;
            }
            last = format!("aliasing replicas overlap at R={}", cfg.acceleration);
        }
        match accepted {
            Some(p) => out.push(p),
            None => {
                return Err(Error::PerturbationRejected {
                    attempts: MAX_ATTEMPTS,
                    constraint: last,
                })
            }
        }
    }
    Ok(out)
}

/// A serialized perturbation set: its configuration plus each shape's description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSetRecord {
    pub config: PerturbationSetConfig,
    pub height: usize,
    pub width: usize,
    pub items: Vec<PerturbationMeta>,
}

impl PerturbationSetRecord {
    pub fn new(config: &PerturbationSetConfig, height: usize, width: usize, set: &[Perturbation]) -> Self {
        Self {
            config: config.clone(),
            height,
            width,
            items: set.iter().map(|p| p.meta.clone()).collect(),
        }
    }

    /// Re-renders the recorded perturbations.
    pub fn render(&self) -> Result<Vec<Perturbation>> {
        let max_value = self.config.max_fraction * self.config.reference_max;
        self.items
            .iter()
            .map(|meta| {
                Ok(Perturbation {
                    image: render(meta, self.height, self.width, max_value)?,
                    meta: meta.clone(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_with(h: usize, w: usize, pixels: &[(usize, usize)]) -> ComplexImage {
        ComplexImage::from_fn(h, w, |r, c| {
            if pixels.contains(&(r, c)) {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .unwrap()
    }

    #[test]
    fn single_pixel_is_valid() {
        for (r, c) in [(0, 0), (13, 7), (63, 63)] {
            let p = image_with(64, 64, &[(r, c)]);
            assert!(validate_foldover(&p, 4).unwrap().valid);
        }
    }

    #[test]
    fn full_height_bar_is_invalid() {
        let pixels: Vec<_> = (0..64).map(|r| (r, 10)).collect();
        let report = validate_foldover(&image_with(64, 64, &pixels), 4).unwrap();
        assert!(!report.valid);
        assert_eq!(report.overlaps.len(), 6);
    }

    #[test]
    fn small_circle_is_valid() {
        let meta = PerturbationMeta {
            kind: ShapeKind::Circle,
            symbol: String::new(),
            rotation: 0.0,
            center: (30.0, 30.0),
            size: 8.0,
            base_intensity: 0.3,
            ramp: (0.0, 0.0),
            phase: 0.0,
        };
        let p = render(&meta, 64, 64, 0.5).unwrap();
        assert!(validate_foldover(&p, 4).unwrap().valid);
    }

    #[test]
    fn indivisible_height_is_flagged() {
        let report = validate_foldover(&image_with(30, 16, &[(1, 1)]), 4).unwrap();
        assert!(report.rounded);
        assert_eq!(report.shift, 8);
    }

    #[test]
    fn generated_sets_are_valid_and_bounded() {
        let cfg = PerturbationSetConfig::new(6, 4, 11);
        let set = generate_set(&cfg, 64, 64).unwrap();
        assert_eq!(set.len(), 6);
        for p in &set {
            assert!(validate_foldover(&p.image, 4).unwrap().valid);
            assert!(p.image.max_abs() <= 0.5 + 1e-12);
            assert!(!p.support().is_empty());
            assert!(p.image.data().iter().all(|v| v.im == 0.0));
        }
        assert_eq!(set, generate_set(&cfg, 64, 64).unwrap());
    }

    #[test]
    fn record_round_trip() {
        let cfg = PerturbationSetConfig::new(3, 4, 2);
        let set = generate_set(&cfg, 32, 32).unwrap();
        let rec = PerturbationSetRecord::new(&cfg, 32, 32, &set);
        let json = serde_json::to_string(&rec).unwrap();
        let back: PerturbationSetRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.render().unwrap(), set);
    }

    #[test]
    fn impossible_constraints_give_up() {
        // R = H: one-row replica spacing leaves no room for any shape taller than a pixel
        let cfg = PerturbationSetConfig::new(1, 16, 0);
        match generate_set(&cfg, 16, 16) {
            Ok(set) => assert!(validate_foldover(&set[0].image, 16).unwrap().valid),
            Err(e) => assert!(matches!(e, Error::PerturbationRejected { .. })),
        }
    }
}

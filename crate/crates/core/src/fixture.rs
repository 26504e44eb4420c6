//! "Mini-digits": a generated 10-class dataset of 10x10 grayscale glyphs.
//!
//! Each digit is drawn as a seven-segment glyph with random placement, size,
//! slant, stroke width and brightness, then speckled with uniform noise. The
//! generator is seeded, so the dataset is identical on every run.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::nn::{ClassLabel, FeatureVector};

pub const SIDE: usize = 10;
pub const FEATURES: usize = SIDE * SIDE;
pub const CLASSES: usize = 10;
pub const TRAIN_SIZE: usize = 2000;
pub const TEST_SIZE: usize = 400;
pub const DEFAULT_SEED: u64 = 0x6d69_6e69_6469_6769;

// Segment endpoints in a unit glyph box: (x0, y0, x1, y1), y grows downwards.
const SEGMENTS: [(f64, f64, f64, f64); 7] = [
    (0.0, 0.0, 1.0, 0.0), // a: top
    (1.0, 0.0, 1.0, 0.5), // b: upper right
    (1.0, 0.5, 1.0, 1.0), // c: lower right
    (0.0, 1.0, 1.0, 1.0), // d: bottom
    (0.0, 0.5, 0.0, 1.0), // e: lower left
    (0.0, 0.0, 0.0, 0.5), // f: upper left
    (0.0, 0.5, 1.0, 0.5), // g: middle
];

// Bit k set means segment k is lit.
const DIGIT_SEGMENTS: [u8; CLASSES] = [
    0b011_1111, // 0: abcdef
    0b000_0110, // 1: bc
    0b101_1011, // 2: abdeg
    0b100_1111, // 3: abcdg
    0b110_0110, // 4: bcfg
    0b110_1101, // 5: acdfg
    0b111_1101, // 6: acdefg
    0b000_0111, // 7: abc
    0b111_1111, // 8
    0b110_1111, // 9: abcdfg
];

/// Renders one noisy glyph for `digit`.
pub fn render_digit<R: Rng + ?Sized>(digit: usize, rng: &mut R) -> Vec<f64> {
    let width = rng.gen_range(3.5..5.5);
    let height = rng.gen_range(6.0..7.5);
    let left = (SIDE as f64 - width) / 2.0 + rng.gen_range(-1.0..1.0);
    let top = (SIDE as f64 - height) / 2.0 + rng.gen_range(-0.6..0.6);
    let slant = rng.gen_range(-0.2..0.2);
    let half_stroke = rng.gen_range(0.45..0.8);
    let ink = rng.gen_range(0.7..1.0);

    let place = |u: f64, v: f64| -> (f64, f64) {
        let y = top + v * height;
        let x = left + u * width + slant * (y - SIDE as f64 / 2.0);
        (x, y)
    };
    let strokes: Vec<((f64, f64), (f64, f64))> = SEGMENTS
        .iter()
        .enumerate()
        .filter(|(k, _)| DIGIT_SEGMENTS[digit] & (1 << k) != 0)
        .map(|(_, &(x0, y0, x1, y1))| (place(x0, y0), place(x1, y1)))
        .collect();

    let mut pixels = Vec::with_capacity(FEATURES);
    for row in 0..SIDE {
        for col in 0..SIDE {
            let p = (col as f64 + 0.5, row as f64 + 0.5);
            let d = strokes
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            let coverage = (half_stroke + 0.5 - d).clamp(0.0, 1.0);
            let noise = rng.gen_range(-0.1..0.1);
            pixels.push((ink * coverage + noise).clamp(0.0, 1.0));
        }
    }
    pixels
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn generate(count: usize, rng: &mut ChaCha8Rng) -> LabeledDataset {
    let samples = (0..count)
        .map(|k| {
            let digit = k % CLASSES;
            let x = FeatureVector::new(render_digit(digit, rng)).expect("pixels are clamped");
            (x, ClassLabel(digit))
        })
        .collect();
    LabeledDataset::new(samples, CLASSES).expect("labels are in range")
}

/// Train and test splits generated from `seed`.
pub fn mini_digits_with_seed(seed: u64) -> (LabeledDataset, LabeledDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = generate(TRAIN_SIZE, &mut rng);
    let test = generate(TEST_SIZE, &mut rng);
    (train, test)
}

/// The bundled fixture: 2000 training and 400 test glyphs.
pub fn mini_digits() -> (LabeledDataset, LabeledDataset) {
    mini_digits_with_seed(DEFAULT_SEED)
}

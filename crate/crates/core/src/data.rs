//! Procedural toy images: smooth gradients, blobs, stripes and a fine
//! checker texture, each with one hard-edged rectangular patch. The checker
//! class is the designated harmful target.

use std::f64::consts::PI;

use crate::grid::{ImageGrid, Shape};
use crate::rng::Rng;

pub const NUM_CLASSES: usize = 4;
pub const HARMFUL_CLASS: usize = 3;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["gradient", "blobs", "stripes", "checker"];

pub fn toy_shape() -> Shape {
    Shape { height: 16, width: 16, channels: 3 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ImageGrid>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Images whose true label is not the harmful class.
    pub fn benign(&self) -> Vec<ImageGrid> {
        self.images
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l != HARMFUL_CLASS)
            .map(|(im, _)| im.clone())
            .collect()
    }
}

/// Balanced dataset; image `i` has class `i % NUM_CLASSES` and its own
/// derived random stream, so prefixes are stable across sizes.
pub fn generate(n: usize, seed: u64) -> Dataset {
    let root = Rng::new(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % NUM_CLASSES;
        let mut rng = root.derive(&format!("toy-image-{i}"));
        images.push(render(class, &mut rng));
        labels.push(class);
    }
    Dataset { images, labels }
}

fn color(rng: &mut Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.uniform_range(lo, hi), rng.uniform_range(lo, hi), rng.uniform_range(lo, hi)]
}

pub fn render(class: usize, rng: &mut Rng) -> ImageGrid {
    let shape = toy_shape();
    let (h, w) = (shape.height as f64, shape.width as f64);
    let base = color(rng, 0.25, 0.75);
    // faint background tilt shared by all classes
    let tilt_dir = rng.uniform_range(0.0, 2.0 * PI);
    let tilt = color(rng, -0.03, 0.03);
    let mut data = vec![0.0; shape.len()];

    let mut field: Box<dyn FnMut(f64, f64, usize) -> f64> = match class {
        0 => {
            let theta = rng.uniform_range(0.0, 2.0 * PI);
            let other = color(rng, 0.1, 0.9);
            // ramp of at least 0.3 in every channel
            let delta: [f64; 3] = std::array::from_fn(|c| {
                let d = other[c] - base[c];
                if d.abs() < 0.3 { 0.3f64.copysign(d) } else { d }
            });
            Box::new(move |y, x, c| {
                let t = ((x / w - 0.5) * theta.cos() + (y / h - 0.5) * theta.sin()) / std::f64::consts::SQRT_2 + 0.5;
                delta[c] * t
            })
        }
        1 => {
            let k = 1 + rng.below(3);
            let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..k)
                .map(|_| {
                    let cy = rng.uniform_range(2.0, h - 2.0);
                    let cx = rng.uniform_range(2.0, w - 2.0);
                    let r = rng.uniform_range(1.5, 3.0);
                    let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                    let amp = color(rng, 0.15, 0.3).map(|a| sign * a);
                    (cy, cx, r, amp)
                })
                .collect();
            Box::new(move |y, x, c| {
                blobs
                    .iter()
                    .map(|(cy, cx, r, amp)| amp[c] * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * r * r)).exp())
                    .sum()
            })
        }
        2 => {
            let theta = rng.uniform_range(0.0, PI);
            let period = rng.uniform_range(6.0, 10.0);
            let phase = rng.uniform_range(0.0, 2.0 * PI);
            let amp = color(rng, 0.12, 0.22);
            Box::new(move |y, x, c| {
                amp[c] * (2.0 * PI * (x * theta.cos() + y * theta.sin()) / period + phase).sin()
            })
        }
        _ => {
            let amp = rng.uniform_range(0.3, 0.4);
            let tint = color(rng, 0.7, 1.0);
            let parity = rng.below(2);
            Box::new(move |y, x, c| {
                let s = if (y as usize + x as usize + parity).is_multiple_of(2) { 1.0 } else { -1.0 };
                amp * tint[c] * s
            })
        }
    };

    // one hard-edged patch per image, independent of the class
    let (py, px) = (rng.below(shape.height - 4), rng.below(shape.width - 4));
    let (ph, pw) = (3 + rng.below(5), 3 + rng.below(5));
    let patch_sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
    let patch = color(rng, 0.1, 0.25).map(|a| patch_sign * a);

    for yi in 0..shape.height {
        for xi in 0..shape.width {
            let (y, x) = (yi as f64, xi as f64);
            let t = (x / w - 0.5) * tilt_dir.cos() + (y / h - 0.5) * tilt_dir.sin();
            let in_patch = (py..py + ph).contains(&yi) && (px..px + pw).contains(&xi);
            for c in 0..3 {
                let p = if in_patch { patch[c] } else { 0.0 };
                let v = base[c] + tilt[c] * t + field(y, x, c) + p;
                data[(yi * shape.width + xi) * 3 + c] = v.clamp(0.0, 1.0);
            }
        }
    }
    ImageGrid::from_raw(shape, data, true)
}

//! Synthetic "top and left rectangle" segmentation task.
//!
//! Each image shows two rectangles cut from one shared procedural texture
//! over a noisy background. The rectangle whose center is higher is class 1,
//! the one whose center is further left is class 2 (placement guarantees the
//! two are different rectangles), background is class 0. Both rectangles
//! look alike locally, so labeling a pixel correctly needs context reaching
//! the other rectangle, or knowledge of absolute position.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const NUM_CLASSES: usize = 3;

/// Integer class map of an `h x w` image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(
                "mask",
                format!("{height}x{width} mask needs {} values, got {}", height * width, data.len()),
            ));
        }
        Ok(Mask { height, width, data })
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().map(|&c| c as usize)
    }
}

#[derive(Clone, Debug)]
pub struct SegmentationSample {
    /// `(1, 3, H, W)` with values in `[0, 1]`.
    pub image: Tensor,
    pub mask: Mask,
}

impl SegmentationSample {
    pub fn new(image: Tensor, mask: Mask, num_classes: usize) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || (s.h, s.w) != (mask.height, mask.width) {
            return Err(Error::shape(
                "sample",
                format!("image {s} does not match a {}x{} mask", mask.height, mask.width),
            ));
        }
        if let Some(bad) = mask.data.iter().find(|&&c| c as usize >= num_classes) {
            return Err(Error::invalid(format!(
                "mask value {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(SegmentationSample { image, mask })
    }

    /// Image values rounded to the nearest multiple of 1/255.
    pub fn quantized(&self) -> SegmentationSample {
        let data = self.image.data().iter().map(|&v| quantize(v) as f64 / 255.0).collect();
        SegmentationSample {
            image: Tensor::from_vec(self.image.shape(), data).expect("same shape"),
            mask: self.mask.clone(),
        }
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub height: usize,
    pub width: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Rectangle side lengths are drawn from this range of fractions of the image side.
    pub rect_min: f64,
    pub rect_max: f64,
    /// Standard deviation of the per-pixel Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            height: 64,
            width: 64,
            train_samples: 200,
            val_samples: 50,
            rect_min: 0.15,
            rect_max: 0.3,
            noise: 0.08,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<SegmentationSample>,
    pub val: Vec<SegmentationSample>,
}

/// An axis-aligned rectangle `[top, top + h) x [left, left + w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    /// Twice the center, to compare centers exactly.
    fn center2(&self) -> (usize, usize) {
        (2 * self.top + self.height, 2 * self.left + self.width)
    }

    fn separated(&self, other: &Rect, gap: usize) -> bool {
        self.top + self.height + gap <= other.top
            || other.top + other.height + gap <= self.top
            || self.left + self.width + gap <= other.left
            || other.left + other.width + gap <= self.left
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.height).contains(&y) && (self.left..self.left + self.width).contains(&x)
    }
}

enum Texture {
    Stripes { kx: f64, ky: f64, phase: f64 },
    Checker { cell: usize, oy: usize, ox: usize },
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        if rng.gen_bool(0.5) {
            let angle = rng.gen_range(0.0..PI);
            let period = rng.gen_range(4.0..8.0);
            let k = 2.0 * PI / period;
            Texture::Stripes { kx: k * angle.cos(), ky: k * angle.sin(), phase: rng.gen_range(0.0..2.0 * PI) }
        } else {
            let cell = rng.gen_range(2..=5);
            Texture::Checker { cell, oy: rng.gen_range(0..cell), ox: rng.gen_range(0..cell) }
        }
    }

    /// Mixing weight in `[0, 1]` at pixel `(y, x)`.
    fn at(&self, y: usize, x: usize) -> f64 {
        match *self {
            Texture::Stripes { kx, ky, phase } => 0.5 + 0.5 * (kx * x as f64 + ky * y as f64 + phase).sin(),
            Texture::Checker { cell, oy, ox } => (((y + oy) / cell + (x + ox) / cell) % 2) as f64,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !(self.rect_min > 0.0 && self.rect_min <= self.rect_max && self.rect_max <= 1.0) {
            return Err(Error::invalid(format!(
                "rectangle size range [{}, {}] must satisfy 0 < min <= max <= 1",
                self.rect_min, self.rect_max
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be a finite non-negative number"));
        }
        Ok(())
    }

    fn side_range(&self, len: usize) -> (usize, usize) {
        let lo = ((self.rect_min * len as f64).round() as usize).max(1);
        let hi = ((self.rect_max * len as f64).round() as usize).clamp(lo, len);
        (lo, hi)
    }

    fn sample_seed(&self, split: Split, index: usize) -> u64 {
        let stream = match split {
            Split::Train => 0x7472_6169_6e00_0000,
            Split::Validation => 0x7661_6c00_0000_0000,
        };
        splitmix64(splitmix64(self.seed ^ stream) ^ index as u64)
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Draws the (top, left) rectangle pair: the first is strictly higher and
/// strictly further right than the second, and they do not touch.
pub fn place_rectangles(config: &DatasetConfig, rng: &mut ChaCha8Rng) -> Result<(Rect, Rect)> {
    let (hlo, hhi) = config.side_range(config.height);
    let (wlo, whi) = config.side_range(config.width);
    let draw = |rng: &mut ChaCha8Rng| {
        let height = rng.gen_range(hlo..=hhi);
        let width = rng.gen_range(wlo..=whi);
        Rect {
            top: rng.gen_range(0..=config.height - height),
            left: rng.gen_range(0..=config.width - width),
            height,
            width,
        }
    };
    for _ in 0..PLACEMENT_ATTEMPTS {
        let a = draw(rng);
        let b = draw(rng);
        let ((ay, ax), (by, bx)) = (a.center2(), b.center2());
        if !a.separated(&b, 1) || ay == by || ax == bx {
            continue;
        }
        // Exactly one of the two orderings has "higher" and "further left" on
        // different rectangles.
        if ay < by && ax > bx {
            return Ok((a, b));
        }
        if by < ay && bx > ax {
            return Ok((b, a));
        }
    }
    Err(Error::invalid(format!(
        "could not place two separated rectangles of {hlo}..{hhi} x {wlo}..{whi} pixels in a {}x{} image",
        config.height, config.width
    )))
}

/// One sample, fully determined by the config seed, the split and the index.
pub fn generate_sample(config: &DatasetConfig, split: Split, index: usize) -> Result<SegmentationSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.sample_seed(split, index));
    let (h, w) = (config.height, config.width);
    let (top, left) = place_rectangles(config, &mut rng)?;

    let texture = Texture::random(&mut rng);
    let fg: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let bg_texture: [f64; 3] = fg.map(|c| if c > 0.5 { c - 0.5 } else { c + 0.5 });
    let gray = rng.gen_range(0.35..0.65);
    let noise = Normal::new(0.0, config.noise).expect("validated");

    let mut mask = vec![0u8; h * w];
    let mut image = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let class = if top.contains(y, x) {
                1
            } else if left.contains(y, x) {
                2
            } else {
                0
            };
            mask[y * w + x] = class;
            let t = texture.at(y, x);
            for c in 0..3 {
                let base = if class == 0 { gray } else { t * fg[c] + (1.0 - t) * bg_texture[c] };
                image[(c * h + y) * w + x] = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }
    SegmentationSample::new(
        Tensor::from_vec(Shape::new(1, 3, h, w), image)?,
        Mask::new(h, w, mask)?,
        NUM_CLASSES,
    )
}

pub fn generate_split(config: &DatasetConfig, split: Split) -> Result<Vec<SegmentationSample>> {
    let count = match split {
        Split::Train => config.train_samples,
        Split::Validation => config.val_samples,
    };
    (0..count).map(|i| generate_sample(config, split, i)).collect()
}

/// Training and validation samples from disjoint seed streams.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    Ok(Dataset {
        train: generate_split(config, Split::Train)?,
        val: generate_split(config, Split::Validation)?,
    })
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::{Error, LabelMap, Result};

/// Ranges of the random geometric transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub flips: bool,
    pub rotate: bool,
    /// Maximum translation as a fraction of the image size.
    pub max_shift: f64,
    /// Scale factor is drawn from `[1 - max_scale, 1 + max_scale]`.
    pub max_scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            flips: true,
            rotate: true,
            max_shift: 0.1,
            max_scale: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.max_shift) {
            return Err(Error::config("max_shift must lie in [0, 0.5)"));
        }
        if !(0.0..0.5).contains(&self.max_scale) {
            return Err(Error::config("max_scale must lie in [0, 0.5)"));
        }
        Ok(())
    }

    /// Draws transform parameters for an `h x w` image.
    pub fn draw(&self, h: usize, w: usize, seed: u64) -> AugmentParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if !self.enabled {
            return AugmentParams::identity();
        }
        let hflip = self.flips && rng.random_bool(0.5);
        let vflip = self.flips && rng.random_bool(0.5);
        let quarter_turns = match (self.rotate, h == w) {
            (false, _) => 0,
            (true, true) => rng.random_range(0..4),
            (true, false) => 2 * rng.random_range(0..2),
        };
        let ty = (self.max_shift * h as f64).floor() as i64;
        let tx = (self.max_shift * w as f64).floor() as i64;
        let shift_y = rng.random_range(-ty..=ty);
        let shift_x = rng.random_range(-tx..=tx);
        let scale = if self.max_scale > 0.0 {
            rng.random_range(1.0 - self.max_scale..=1.0 + self.max_scale)
        } else {
            1.0
        };
        AugmentParams {
            hflip,
            vflip,
            quarter_turns,
            shift_y,
            shift_x,
            scale,
        }
    }
}

/// One concrete draw. Applied in order: flips, rotation, translation, scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, `0..4`. Non-square images only accept 0 or 2.
    pub quarter_turns: u8,
    pub shift_y: i64,
    pub shift_x: i64,
    pub scale: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            hflip: false,
            vflip: false,
            quarter_turns: 0,
            shift_y: 0,
            shift_x: 0,
            scale: 1.0,
        }
    }

    pub fn apply(&self, sample: &Sample) -> Result<Sample> {
        let (h, w, m) = (sample.height(), sample.width(), sample.label.m());
        if self.quarter_turns % 2 == 1 && h != w {
            return Err(Error::Invalid(format!(
                "quarter turn of a non-square {h}x{w} image"
            )));
        }
        let mut image = sample.image.clone();
        let mut label = sample.label.data().to_vec();
        if self.hflip {
            image = remap(&image, h, w, 0.0, |y, x| Some((y, w - 1 - x)));
            label = remap(&label, h, w, 0, |y, x| Some((y, w - 1 - x)));
        }
        if self.vflip {
            image = remap(&image, h, w, 0.0, |y, x| Some((h - 1 - y, x)));
            label = remap(&label, h, w, 0, |y, x| Some((h - 1 - y, x)));
        }
        for _ in 0..self.quarter_turns % 4 {
            // counter-clockwise on a square grid
            image = remap(&image, h, w, 0.0, |y, x| Some((x, w - 1 - y)));
            label = remap(&label, h, w, 0, |y, x| Some((x, w - 1 - y)));
        }
        if self.shift_y != 0 || self.shift_x != 0 || self.scale != 1.0 {
            // translation and scale share one lookup into the unpadded frame:
            // a blob cut by the frame edge never lands next to padding
            let (s, sy, sx) = (self.scale, self.shift_y as f64, self.shift_x as f64);
            let source = |y: usize, x: usize| {
                (
                    (y as f64 + 0.5 - h as f64 / 2.0) / s + h as f64 / 2.0 - 0.5 - sy,
                    (x as f64 + 0.5 - w as f64 / 2.0) / s + w as f64 / 2.0 - 0.5 - sx,
                )
            };
            let mut moved_image = vec![0.0; h * w];
            let mut moved_label = vec![0u8; h * w];
            for y in 0..h {
                for x in 0..w {
                    let (fy, fx) = source(y, x);
                    moved_image[y * w + x] = bilinear(&image, h, w, fy, fx);
                    let (ny, nx) = (fy.round(), fx.round());
                    if ny >= 0.0 && nx >= 0.0 && ny < h as f64 && nx < w as f64 {
                        moved_label[y * w + x] = label[ny as usize * w + nx as usize];
                    }
                }
            }
            image = moved_image;
            label = moved_label;
        }
        Ok(Sample {
            image,
            label: LabelMap::new(h, w, m, label)?,
        })
    }
}

fn remap<T: Copy>(src: &[T], h: usize, w: usize, fill: T, f: impl Fn(usize, usize) -> Option<(usize, usize)>) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(f(y, x).map_or(fill, |(sy, sx)| src[sy * w + sx]));
        }
    }
    out
}

fn bilinear(img: &[f64], h: usize, w: usize, fy: f64, fx: f64) -> f64 {
    let (y0, x0) = (fy.floor(), fx.floor());
    let (dy, dx) = (fy - y0, fx - x0);
    let at = |y: f64, x: f64| {
        if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
            0.0
        } else {
            img[y as usize * w + x as usize]
        }
    };
    (1.0 - dy) * ((1.0 - dx) * at(y0, x0) + dx * at(y0, x0 + 1.0))
        + dy * ((1.0 - dx) * at(y0 + 1.0, x0) + dx * at(y0 + 1.0, x0 + 1.0))
}

/// Draws parameters from `seed` and applies them to image and label alike.
pub fn augment(sample: &Sample, seed: u64, cfg: &AugmentConfig) -> Result<Sample> {
    cfg.draw(sample.height(), sample.width(), seed).apply(sample)
}

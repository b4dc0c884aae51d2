//! Deterministic coloured-polygon images with controllable factors:
//! shape, hue and global brightness as labelled attributes, and a positional
//! jitter as unlabelled nuisance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributeSchema, Dataset, LabeledImage, Provenance};
use crate::{Error, Result};

pub const SHAPE_NAMES: [&str; 6] = ["circle", "square", "triangle", "pentagon", "hexagon", "star"];

/// Supersampling factor per axis when rasterising.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub image_size: usize,
    pub shape_classes: usize,
    pub hue_classes: usize,
    pub brightness_classes: usize,
    /// When false, brightness still varies across the grid but is not a
    /// schema attribute (it becomes unlabelled variation).
    pub brightness_attribute: bool,
    /// Maximum centre offset in pixels along each axis.
    pub jitter: usize,
    pub count_per_combination: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            shape_classes: 3,
            hue_classes: 6,
            brightness_classes: 3,
            brightness_attribute: true,
            jitter: 3,
            count_per_combination: 10,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if ![32, 64, 128].contains(&self.image_size) {
            errs.push(format!("image_size must be 32, 64 or 128 (got {})", self.image_size));
        }
        if !(2..=SHAPE_NAMES.len()).contains(&self.shape_classes) {
            errs.push(format!(
                "shape_classes must be in 2..={} (got {})",
                SHAPE_NAMES.len(),
                self.shape_classes
            ));
        }
        if self.hue_classes < 2 {
            errs.push(format!("hue_classes must be >= 2 (got {})", self.hue_classes));
        }
        let min_brightness = if self.brightness_attribute { 2 } else { 1 };
        if self.brightness_classes < min_brightness {
            errs.push(format!(
                "brightness_classes must be >= {min_brightness} (got {})",
                self.brightness_classes
            ));
        }
        if self.count_per_combination < 1 {
            errs.push("count_per_combination must be >= 1".into());
        }
        if self.jitter * 4 >= self.image_size.max(1) {
            errs.push(format!("jitter {} too large for {}px images", self.jitter, self.image_size));
        }
        match errs.len() {
            0 => Ok(()),
            1 => Err(Error::Config(errs.remove(0))),
            _ => Err(Error::ConfigList(errs)),
        }
    }

    pub fn schema(&self) -> Result<AttributeSchema> {
        let mut attrs = vec![("shape", self.shape_classes), ("hue", self.hue_classes)];
        if self.brightness_attribute {
            attrs.push(("brightness", self.brightness_classes));
        }
        AttributeSchema::new(attrs)
    }

    pub fn expected_len(&self) -> usize {
        self.shape_classes * self.hue_classes * self.brightness_classes * self.count_per_combination
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i32;
    let f = h - i as f64;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn brightness_level(class: usize, classes: usize) -> f64 {
    if classes <= 1 {
        0.8
    } else {
        0.45 + 0.55 * class as f64 / (classes - 1) as f64
    }
}

/// Whether `(x, y)` (relative to the shape centre, in units of the
/// circumradius) lies inside shape `class`.
fn inside(class: usize, x: f64, y: f64) -> bool {
    match class {
        0 => x * x + y * y <= 0.6 * 0.6,
        1 => x.abs() <= 0.82 && y.abs() <= 0.82,
        2..=4 => {
            let n = class + 1; // triangle, pentagon, hexagon
            inside_regular_polygon(n, x, y)
        }
        _ => inside_star(x, y),
    }
}

fn inside_regular_polygon(n: usize, x: f64, y: f64) -> bool {
    // vertices at angle -pi/2 + 2 pi k / n on the unit circle
    let apothem = (std::f64::consts::PI / n as f64).cos();
    (0..n).all(|k| {
        let mid = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (2 * k + 1) as f64 / n as f64;
        x * mid.cos() + y * mid.sin() <= apothem
    })
}

fn inside_star(x: f64, y: f64) -> bool {
    let r = (x * x + y * y).sqrt();
    let theta = y.atan2(x) + std::f64::consts::FRAC_PI_2;
    let sector = std::f64::consts::TAU / 5.0;
    let local = (theta.rem_euclid(sector) / sector - 0.5).abs() * 2.0; // 0 at tip, 1 between tips
    r <= 1.0 - 0.55 * local
}

/// Renders one `size x size` image in HWC, values in `[-1, 1]`.
pub fn render(size: usize, shape: usize, hue: f64, brightness: f64, dx: i64, dy: i64) -> Vec<f32> {
    let rgb = hsv_to_rgb(hue, 0.9, brightness);
    let background = 0.12 * brightness;
    let radius = size as f64 * 0.3;
    let (cx, cy) = (size as f64 / 2.0 + dx as f64, size as f64 / 2.0 + dy as f64);
    let mut out = vec![0.0f32; size * size * 3];
    let sub = SUPERSAMPLE as f64;
    for py in 0..size {
        for px in 0..size {
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = (px as f64 + (sx as f64 + 0.5) / sub - cx) / radius;
                    let y = (py as f64 + (sy as f64 + 0.5) / sub - cy) / radius;
                    hits += inside(shape, x, y) as usize;
                }
            }
            let cover = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            for c in 0..3 {
                let v = cover * rgb[c] + (1.0 - cover) * background;
                out[(py * size + px) * 3 + c] = (2.0 * v - 1.0) as f32;
            }
        }
    }
    out
}

/// Generates the full factor grid, `count_per_combination` jittered copies
/// per (shape, hue, brightness) cell, in lexicographic cell order.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let schema = config.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let j = config.jitter as i64;
    let mut items = Vec::with_capacity(config.expected_len());
    for shape in 0..config.shape_classes {
        for hue in 0..config.hue_classes {
            for bright in 0..config.brightness_classes {
                for _ in 0..config.count_per_combination {
                    let (dx, dy) = if j > 0 {
                        (rng.gen_range(-j..=j), rng.gen_range(-j..=j))
                    } else {
                        (0, 0)
                    };
                    let pixels = render(
                        config.image_size,
                        shape,
                        hue as f64 / config.hue_classes as f64,
                        brightness_level(bright, config.brightness_classes),
                        dx,
                        dy,
                    );
                    let mut labels = vec![shape, hue];
                    if config.brightness_attribute {
                        labels.push(bright);
                    }
                    items.push(LabeledImage {
                        height: config.image_size,
                        width: config.image_size,
                        channels: 3,
                        pixels,
                        labels,
                    });
                }
            }
        }
    }
    let mut class_names = vec![
        SHAPE_NAMES[..config.shape_classes].iter().map(|s| s.to_string()).collect(),
        (0..config.hue_classes).map(|h| format!("hue{h}")).collect(),
    ];
    if config.brightness_attribute {
        class_names.push((0..config.brightness_classes).map(|b| format!("level{b}")).collect());
    }
    Dataset::new(
        schema,
        items,
        Provenance::Synthetic { seed: config.seed },
        config.image_size,
        class_names,
    )
}

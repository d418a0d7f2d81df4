use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAX_SIDE: usize = 64;

/// Per-pixel feature width: RGB plus normalized (x, y).
pub const SEG_FEATURES: usize = 5;

/// Class base colors; index 0 is the background.
pub const PALETTE: [[f64; 3]; 8] = [
    [0.50, 0.50, 0.50],
    [0.90, 0.20, 0.20],
    [0.20, 0.80, 0.30],
    [0.25, 0.30, 0.90],
    [0.90, 0.85, 0.20],
    [0.80, 0.30, 0.85],
    [0.20, 0.85, 0.85],
    [0.95, 0.60, 0.20],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySegSpec {
    pub height: usize,
    pub width: usize,
    pub num_shapes: usize,
    /// Background plus shape classes.
    pub num_classes: usize,
    pub pixel_noise_std: f64,
    pub seed: u64,
}

impl ToySegSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 || self.height > MAX_SIDE || self.width > MAX_SIDE {
            return Err(Error::Config(format!(
                "image sides must lie in [4, {MAX_SIDE}], got {}x{}",
                self.height, self.width
            )));
        }
        if !(1..=4).contains(&self.num_shapes) {
            return Err(Error::Config(format!("num_shapes must lie in [1, 4], got {}", self.num_shapes)));
        }
        if !(2..=PALETTE.len()).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "num_classes must lie in [2, {}], got {}",
                PALETTE.len(),
                self.num_classes
            )));
        }
        if !(self.pixel_noise_std >= 0.0 && self.pixel_noise_std.is_finite()) {
            return Err(Error::Config(format!("pixel_noise_std must be >= 0, got {}", self.pixel_noise_std)));
        }
        Ok(())
    }
}

/// One flattened image: `(H·W) × 5` features and per-pixel class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub raw_features: Matrix,
    pub labels: Vec<u32>,
}

impl SegSample {
    pub fn new(raw_features: Matrix, labels: Vec<u32>) -> Result<Self> {
        if raw_features.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                raw_features.rows(),
                labels.len()
            )));
        }
        Ok(Self { raw_features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

enum Shape {
    Rect { top: usize, left: usize, h: usize, w: usize },
    Circle { cy: f64, cx: f64, r: f64 },
}

impl Shape {
    fn contains(&self, row: usize, col: usize) -> bool {
        match *self {
            Shape::Rect { top, left, h, w } => row >= top && row < top + h && col >= left && col < left + w,
            Shape::Circle { cy, cx, r } => {
                let dy = row as f64 + 0.5 - cy;
                let dx = col as f64 + 0.5 - cx;
                dy * dy + dx * dx <= r * r
            }
        }
    }
}

/// Rectangles and discs in class colors over a gray background, with
/// i.i.d. Gaussian pixel noise on the color channels.
pub fn gen_toy_seg(spec: &ToySegSpec) -> Result<SegSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = vec![0u32; h * w];

    for _ in 0..spec.num_shapes {
        let class = rng.random_range(1..spec.num_classes) as u32;
        let shape = if rng.random_bool(0.5) {
            let sh = rng.random_range(h / 4..=h / 2).max(1);
            let sw = rng.random_range(w / 4..=w / 2).max(1);
            Shape::Rect {
                top: rng.random_range(0..=h - sh),
                left: rng.random_range(0..=w - sw),
                h: sh,
                w: sw,
            }
        } else {
            let side = h.min(w) as f64;
            let r = rng.random_range(side / 8.0..=side / 4.0);
            Shape::Circle {
                cy: rng.random_range(r..=h as f64 - r),
                cx: rng.random_range(r..=w as f64 - r),
                r,
            }
        };
        for row in 0..h {
            for col in 0..w {
                if shape.contains(row, col) {
                    labels[row * w + col] = class;
                }
            }
        }
    }

    let mut features = Matrix::zeros(h * w, SEG_FEATURES);
    for row in 0..h {
        for col in 0..w {
            let idx = row * w + col;
            let base = PALETTE[labels[idx] as usize];
            let out = features.row_mut(idx);
            for ch in 0..3 {
                let noise: f64 = rng.sample(StandardNormal);
                out[ch] = base[ch] + spec.pixel_noise_std * noise;
            }
            out[3] = col as f64 / (w - 1) as f64;
            out[4] = row as f64 / (h - 1) as f64;
        }
    }
    SegSample::new(features, labels)
}

/// Many images sharing everything but their seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySegDatasetSpec {
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    pub num_shapes: usize,
    pub num_classes: usize,
    pub pixel_noise_std: f64,
}

impl ToySegDatasetSpec {
    pub fn image_spec(&self, seed: u64, index: usize) -> ToySegSpec {
        ToySegSpec {
            height: self.height,
            width: self.width,
            num_shapes: self.num_shapes,
            num_classes: self.num_classes,
            pixel_noise_std: self.pixel_noise_std,
            seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_images == 0 {
            return Err(Error::Config("num_images must be at least 1".into()));
        }
        self.image_spec(0, 0).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(noise: f64, seed: u64) -> ToySegSpec {
        ToySegSpec {
            height: 16,
            width: 20,
            num_shapes: 3,
            num_classes: 4,
            pixel_noise_std: noise,
            seed,
        }
    }

    #[test]
    fn shapes_and_ranges() {
        let s = gen_toy_seg(&spec(0.3, 1)).unwrap();
        assert_eq!(s.raw_features.shape(), (320, SEG_FEATURES));
        assert_eq!(s.labels.len(), 320);
        assert!(s.labels.iter().all(|&l| l < 4));
        for r in 0..320 {
            let f = s.raw_features.row(r);
            assert!((0.0..=1.0).contains(&f[3]) && (0.0..=1.0).contains(&f[4]));
        }
        assert!(s.labels.iter().any(|&l| l != 0));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gen_toy_seg(&spec(0.3, 5)).unwrap(), gen_toy_seg(&spec(0.3, 5)).unwrap());
        assert_ne!(gen_toy_seg(&spec(0.3, 5)).unwrap(), gen_toy_seg(&spec(0.3, 6)).unwrap());
    }

    #[test]
    fn noiseless_pixels_are_palette_colors() {
        let s = gen_toy_seg(&spec(0.0, 9)).unwrap();
        for (r, &l) in s.labels.iter().enumerate() {
            assert_eq!(&s.raw_features.row(r)[..3], &PALETTE[l as usize]);
        }
    }

    #[test]
    fn noiseless_case_is_linearly_separable() {
        // Nearest-palette-color is an affine argmax rule: logit_c = f·p_c - ‖p_c‖²/2.
        let s = gen_toy_seg(&spec(0.0, 2)).unwrap();
        for (r, &l) in s.labels.iter().enumerate() {
            let f = &s.raw_features.row(r)[..3];
            let pred = (0..4)
                .max_by(|&a, &b| {
                    let score = |c: usize| {
                        let p = PALETTE[c];
                        f.iter().zip(&p).map(|(x, y)| x * y).sum::<f64>() - 0.5 * p.iter().map(|v| v * v).sum::<f64>()
                    };
                    score(a).total_cmp(&score(b))
                })
                .unwrap();
            assert_eq!(pred as u32, l);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(0.1, 0);
        s.num_shapes = 0;
        assert!(gen_toy_seg(&s).is_err());
        let mut s = spec(0.1, 0);
        s.height = 65;
        assert!(gen_toy_seg(&s).is_err());
        let mut s = spec(0.1, 0);
        s.num_classes = 1;
        assert!(gen_toy_seg(&s).is_err());
    }
}

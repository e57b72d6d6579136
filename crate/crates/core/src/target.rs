//! Letter-shaped transmission targets and their augmented variants.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TargetLabel {
    F,
    H,
    I,
    O,
    T,
}

impl TargetLabel {
    pub const ALL: [TargetLabel; 5] = [
        TargetLabel::F,
        TargetLabel::H,
        TargetLabel::I,
        TargetLabel::O,
        TargetLabel::T,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TargetLabel::F => "F",
            TargetLabel::H => "H",
            TargetLabel::I => "I",
            TargetLabel::O => "O",
            TargetLabel::T => "T",
        }
    }
}

impl fmt::Display for TargetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "F" => Ok(TargetLabel::F),
            "H" => Ok(TargetLabel::H),
            "I" => Ok(TargetLabel::I),
            "O" => Ok(TargetLabel::O),
            "T" => Ok(TargetLabel::T),
            other => Err(Error::Data(format!("unknown target label {other:?}"))),
        }
    }
}

/// Transmission raster: 1 = transparent, 0 = opaque. Indexed `[[row, col]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetImage {
    pub transmission: Array2<f64>,
    pub label: TargetLabel,
}

impl TargetImage {
    pub fn new(transmission: Array2<f64>, label: TargetLabel) -> Result<Self> {
        if transmission.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("transmission values must lie in [0, 1]".into()));
        }
        let opaque = transmission.iter().any(|&v| v < 0.5);
        let clear = transmission.iter().any(|&v| v >= 0.5);
        if !(opaque && clear) {
            return Err(Error::Data(
                "target needs at least one opaque and one transparent pixel".into(),
            ));
        }
        Ok(Self { transmission, label })
    }

    pub fn size(&self) -> usize {
        self.transmission.nrows()
    }
}

/// Draw a letter as axis-aligned opaque strokes on a transparent square.
///
/// The glyph box leaves a margin of `size / 8` on every side. `O` is a
/// rectangular ring.
pub fn rasterize_letter(label: TargetLabel, size: usize, stroke_width: usize) -> Result<TargetImage> {
    if size < 16 {
        return Err(Error::Config(format!("target size must be >= 16, got {size}")));
    }
    if stroke_width < 1 || stroke_width > size / 4 {
        return Err(Error::Config(format!(
            "stroke width {stroke_width} does not fit a {size}-pixel target (allowed 1..={})",
            size / 4
        )));
    }
    let w = stroke_width;
    let lo = size / 8;
    let hi = size - lo;
    if hi - lo < 3 * w + 1 {
        return Err(Error::Config("letter strokes do not fit inside the glyph box".into()));
    }
    let mid = size / 2 - w / 2;
    let mut img = Array2::<f64>::ones((size, size));
    let mut fill = |r0: usize, r1: usize, c0: usize, c1: usize| {
        img.slice_mut(ndarray::s![r0..r1, c0..c1]).fill(0.0);
    };
    match label {
        TargetLabel::F => {
            fill(lo, hi, lo, lo + w);
            fill(lo, lo + w, lo, hi);
            fill(mid, mid + w, lo, hi - (hi - lo) / 4);
        }
        TargetLabel::H => {
            fill(lo, hi, lo, lo + w);
            fill(lo, hi, hi - w, hi);
            fill(mid, mid + w, lo, hi);
        }
        TargetLabel::I => {
            fill(lo, hi, mid, mid + w);
        }
        TargetLabel::O => {
            fill(lo, lo + w, lo, hi);
            fill(hi - w, hi, lo, hi);
            fill(lo, hi, lo, lo + w);
            fill(lo, hi, hi - w, hi);
        }
        TargetLabel::T => {
            fill(lo, lo + w, lo, hi);
            fill(lo, hi, mid, mid + w);
        }
    }
    TargetImage::new(img, label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Pixels, drawn independently per axis from `[-max, max]`.
    pub max_translation: f64,
    /// Degrees.
    pub max_rotation: f64,
    /// Fractional scale change.
    pub max_scale_delta: f64,
    /// Standard deviation of additive per-pixel noise, transmission units.
    pub pixel_noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            max_translation: 2.0,
            max_rotation: 4.0,
            max_scale_delta: 0.05,
            pixel_noise_sigma: 0.02,
            rng_seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn none() -> Self {
        Self {
            max_translation: 0.0,
            max_rotation: 0.0,
            max_scale_delta: 0.0,
            pixel_noise_sigma: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [
            self.max_translation,
            self.max_rotation,
            self.max_scale_delta,
            self.pixel_noise_sigma,
        ]
        .iter()
        .all(|v| *v >= 0.0 && v.is_finite());
        if !ok || self.max_scale_delta >= 1.0 {
            return Err(Error::Config(
                "augmentation ranges must be finite and non-negative (scale delta < 1)".into(),
            ));
        }
        Ok(())
    }
}

/// A similarity transform about the image center. Translation is in pixels,
/// `x` along columns and `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub translate_x: f64,
    pub translate_y: f64,
    pub rotation_deg: f64,
    pub scale: f64,
}

impl Placement {
    pub const IDENTITY: Placement = Placement {
        translate_x: 0.0,
        translate_y: 0.0,
        rotation_deg: 0.0,
        scale: 1.0,
    };
}

/// Resample `img` under `placement` with nearest-neighbour lookup; source
/// coordinates falling outside the raster are clamped to the border.
pub fn place(img: &Array2<f64>, placement: Placement) -> Array2<f64> {
    let (rows, cols) = img.dim();
    let cy = (rows as f64 - 1.0) / 2.0;
    let cx = (cols as f64 - 1.0) / 2.0;
    let (sin, cos) = placement.rotation_deg.to_radians().sin_cos();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        // Inverse map: output pixel -> source pixel.
        let x = c as f64 - cx - placement.translate_x;
        let y = r as f64 - cy - placement.translate_y;
        let sx = (cos * x + sin * y) / placement.scale + cx;
        let sy = (-sin * x + cos * y) / placement.scale + cy;
        let sc = (sx.round().max(0.0) as usize).min(cols - 1);
        let sr = (sy.round().max(0.0) as usize).min(rows - 1);
        img[[sr, sc]]
    })
}

/// Random placement and pixel noise, reproducible per `(rng_seed, instance_index)`.
pub fn augment(img: &TargetImage, params: &AugmentParams, instance_index: u64) -> Result<TargetImage> {
    params.validate()?;
    let mut rng = rng::stream(params.rng_seed, Domain::Augmentation, instance_index);
    let mut sym = |max: f64| (2.0 * rng.gen::<f64>() - 1.0) * max;
    let placement = Placement {
        translate_x: sym(params.max_translation),
        translate_y: sym(params.max_translation),
        rotation_deg: sym(params.max_rotation),
        scale: 1.0 + sym(params.max_scale_delta),
    };
    let mut out = place(&img.transmission, placement);
    if params.pixel_noise_sigma > 0.0 {
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v + params.pixel_noise_sigma * z).clamp(0.0, 1.0);
        }
    }
    Ok(TargetImage {
        transmission: out,
        label: img.label,
    })
}

/// Mean `(row, col)` of pixels with transmission below one half.
pub fn opaque_centroid(img: &Array2<f64>) -> Option<(f64, f64)> {
    let mut n = 0.0;
    let (mut sr, mut sc) = (0.0, 0.0);
    for ((r, c), &v) in img.indexed_iter() {
        if v < 0.5 {
            n += 1.0;
            sr += r as f64;
            sc += c as f64;
        }
    }
    (n > 0.0).then(|| (sr / n, sc / n))
}

/// Fraction of pixels on which two binary rasters disagree.
pub fn hamming_fraction(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = a
        .iter()
        .zip(b.iter())
        .filter(|(x, y)| (**x < 0.5) != (**y < 0.5))
        .count();
    diff as f64 / a.len() as f64
}

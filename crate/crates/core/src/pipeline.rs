//! Stage functions that chain the modules: masks → measurements → images.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::caustic::{project_mask, CausticMask, OpticsConfig};
use crate::classifier::Example;
use crate::cs::{acquire, MaskStack, MeasurementSeries};
use crate::error::{Error, Result};
use crate::ripple::{randomize_sources, surface_at, HeightField, RippleConfig};
use crate::rng::{self, Domain};
use crate::scalogram::{colorize, cwt, Scalogram, ScalogramImage, WaveletParams};
use crate::target::{augment, rasterize_letter, AugmentParams, TargetImage, TargetLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionConfig {
    /// Masks per acquisition (M).
    pub frames: usize,
    /// Time of the first frame, seconds.
    pub start_time: f64,
    /// Seconds between frames.
    pub frame_interval: f64,
    /// Detector noise sigma as a fraction of the mean noiseless signal.
    pub noise_fraction: f64,
    /// Replace the liquid surface by a flat one (diagnostic).
    pub flat_surface: bool,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            frames: 500,
            start_time: 2.0,
            frame_interval: 0.05,
            noise_fraction: 0.01,
            flat_surface: false,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("frames must be >= 1".into()));
        }
        if !(self.start_time >= 0.0 && self.frame_interval >= 0.0) {
            return Err(Error::Config("frame times must be non-negative".into()));
        }
        if !(self.noise_fraction >= 0.0 && self.noise_fraction.is_finite()) {
            return Err(Error::Config(format!(
                "noise_fraction must be >= 0, got {}",
                self.noise_fraction
            )));
        }
        Ok(())
    }

    pub fn frame_time(&self, m: usize) -> f64 {
        self.start_time + m as f64 * self.frame_interval
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub samples_per_class: usize,
    /// Letter stroke width in target pixels.
    pub stroke_width: usize,
    pub augment: AugmentParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            samples_per_class: 100,
            stroke_width: 6,
            augment: AugmentParams::default(),
        }
    }
}

/// Height field for frame `m`: sources re-drawn for the frame, then sampled
/// at the frame time.
pub fn frame_surface(ripple: &RippleConfig, acq: &AcquisitionConfig, m: usize) -> Result<HeightField> {
    let t = acq.frame_time(m);
    if acq.flat_surface {
        return Ok(HeightField::zeros(ripple.grid_nx, ripple.grid_ny, ripple.dx, t));
    }
    let cfg = randomize_sources(ripple, m as u64);
    surface_at(&cfg, t)
}

/// All masks of one acquisition run, computed in parallel over frames.
pub fn simulate_masks(ripple: &RippleConfig, optics: &OpticsConfig, acq: &AcquisitionConfig) -> Result<MaskStack> {
    ripple.validate()?;
    optics.validate()?;
    acq.validate()?;
    let masks: Vec<CausticMask> = (0..acq.frames)
        .into_par_iter()
        .map(|m| {
            let field = frame_surface(ripple, acq, m)?;
            project_mask(&field, optics, m as u64)
        })
        .collect::<Result<_>>()?;
    let times = (0..acq.frames).map(|m| acq.frame_time(m)).collect();
    MaskStack::from_masks(&masks, times)
}

/// Noise sigma for a target: `noise_fraction` times its mean noiseless signal.
pub fn noise_sigma_for(stack: &MaskStack, transmission: &Array2<f64>, noise_fraction: f64) -> Result<f64> {
    let clean = acquire(stack, transmission, 0.0, 0)?;
    Ok(noise_fraction * clean.mean().abs())
}

/// One simulated acquisition.
#[derive(Debug, Clone)]
pub struct Sample {
    pub label: TargetLabel,
    pub instance: u64,
    pub target: TargetImage,
    pub series: MeasurementSeries,
}

/// Letter prototypes sized to the mask grid.
pub fn prototypes(stack: &MaskStack, stroke_width: usize) -> Result<Vec<TargetImage>> {
    let (rows, cols) = stack.mask_shape();
    if rows != cols {
        return Err(Error::Config(format!(
            "targets are square; masks are {rows}x{cols}"
        )));
    }
    TargetLabel::ALL
        .iter()
        .map(|&l| rasterize_letter(l, rows, stroke_width))
        .collect()
}

/// `samples_per_class` augmented acquisitions of every letter, ordered by
/// class then instance. Instance `i` of class `c` has index
/// `c · samples_per_class + i`, which keys its augmentation and noise.
pub fn build_dataset(stack: &MaskStack, dataset: &DatasetConfig, acq: &AcquisitionConfig, seed: u64) -> Result<Vec<Sample>> {
    acq.validate()?;
    dataset.augment.validate()?;
    if dataset.samples_per_class == 0 {
        return Err(Error::Config("samples_per_class must be >= 1".into()));
    }
    let protos = prototypes(stack, dataset.stroke_width)?;
    let n = dataset.samples_per_class;
    (0..protos.len() * n)
        .into_par_iter()
        .map(|idx| {
            let proto = &protos[idx / n];
            let instance = idx as u64;
            let target = augment(proto, &dataset.augment, instance)?;
            let sigma = noise_sigma_for(stack, &target.transmission, acq.noise_fraction)?;
            let noise_seed = rng::derive_seed(seed, Domain::Dataset, instance);
            let series = acquire(stack, &target.transmission, sigma, noise_seed)?;
            Ok(Sample {
                label: proto.label,
                instance,
                target,
                series,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub wavelet: WaveletParams,
    /// Side of the square classifier input image.
    pub image_size: usize,
    /// Remove the series mean before the transform. The mean is a large
    /// constant offset whose zero-padded edges otherwise dominate the
    /// per-image normalization.
    pub subtract_mean: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            wavelet: WaveletParams::default(),
            image_size: 64,
            subtract_mean: true,
        }
    }
}

pub fn scalogram_of(series: &MeasurementSeries, features: &FeatureConfig) -> Result<Scalogram> {
    if features.subtract_mean {
        let m = series.mean();
        let y: Vec<f64> = series.y.iter().map(|v| v - m).collect();
        cwt(&y, &features.wavelet)
    } else {
        cwt(&series.y, &features.wavelet)
    }
}

pub fn scalogram_image(series: &MeasurementSeries, features: &FeatureConfig) -> Result<ScalogramImage> {
    colorize(&scalogram_of(series, features)?, features.image_size)
}

/// Scalogram images for every sample, as classifier examples.
pub fn to_examples(samples: &[Sample], features: &FeatureConfig) -> Result<Vec<Example>> {
    samples
        .par_iter()
        .map(|s| Ok(Example::from_image(&scalogram_image(&s.series, features)?, s.label)))
        .collect()
}

//! Single-pixel measurement model, mask diagnostics and sparse recovery.
//!
//! The measurement operator is `A = masks · Ψ⁻¹`, where each mask row is a
//! flattened caustic pattern and `Ψ` is the sparsifying transform. Masks are
//! stored raw (non-negative, unit mean); any column scaling lives inside the
//! solvers.

mod basis;
mod ista;
mod omp;

pub use basis::{dct_matrix, BasisKind, SparseBasis};
pub use ista::{ista_dense, ista_reconstruct, ista_with_matrix, lasso_objective, lipschitz_estimate, IstaParams};
pub use omp::{omp_dense, omp_reconstruct, omp_with_matrix, OmpParams};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::caustic::CausticMask;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Stacked sampling masks: one flattened mask per row.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskStack {
    masks: Array2<f64>,
    frame_times: Vec<f64>,
    mask_shape: (usize, usize),
}

const MEAN_TOLERANCE: f64 = 1e-9;

impl MaskStack {
    pub fn new(masks: Array2<f64>, frame_times: Vec<f64>, mask_shape: (usize, usize)) -> Result<Self> {
        let (m, n) = masks.dim();
        if m == 0 {
            return Err(Error::Data("mask stack needs at least one frame".into()));
        }
        if n != mask_shape.0 * mask_shape.1 {
            return Err(Error::Dimension(format!(
                "mask rows have {n} pixels but the mask shape is {}x{}",
                mask_shape.0, mask_shape.1
            )));
        }
        if frame_times.len() != m {
            return Err(Error::Dimension(format!(
                "{} frame times for {m} masks",
                frame_times.len()
            )));
        }
        for (i, row) in masks.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Data(format!("mask {i} has negative or non-finite entries")));
            }
            let mean = row.sum() / n as f64;
            if (mean - 1.0).abs() > MEAN_TOLERANCE {
                return Err(Error::Data(format!("mask {i} has mean {mean}, expected 1")));
            }
        }
        Ok(Self {
            masks,
            frame_times,
            mask_shape,
        })
    }

    pub fn from_masks(masks: &[CausticMask], frame_times: Vec<f64>) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::Data("mask stack needs at least one frame".into()))?;
        let shape = first.intensity.dim();
        let n = shape.0 * shape.1;
        let mut data = Array2::zeros((masks.len(), n));
        for (mut row, mask) in data.outer_iter_mut().zip(masks) {
            if mask.intensity.dim() != shape {
                return Err(Error::Dimension("masks in a stack must share one shape".into()));
            }
            row.assign(&Array1::from_iter(mask.intensity.iter().copied()));
        }
        Self::new(data, frame_times, shape)
    }

    pub fn masks(&self) -> &Array2<f64> {
        &self.masks
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn mask_shape(&self) -> (usize, usize) {
        self.mask_shape
    }

    pub fn frames(&self) -> usize {
        self.masks.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.masks.ncols()
    }

    /// Keep only the first `m` frames.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.frames() {
            return Err(Error::Config(format!(
                "cannot keep {m} of {} frames",
                self.frames()
            )));
        }
        Ok(Self {
            masks: self.masks.slice(ndarray::s![..m, ..]).to_owned(),
            frame_times: self.frame_times[..m].to_vec(),
            mask_shape: self.mask_shape,
        })
    }
}

/// Detector samples, one per mask frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub y: Vec<f64>,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl MeasurementSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len().max(1) as f64
    }
}

/// Single-pixel detector: `y_m = Σ_i mask_m[i] · x[i] + ε_m`, `ε ~ N(0, σ²)`.
///
/// `transmission` is flattened in row-major order and must have as many
/// pixels as a mask.
pub fn acquire(
    stack: &MaskStack,
    transmission: &Array2<f64>,
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<MeasurementSeries> {
    if transmission.len() != stack.pixels() {
        return Err(Error::Dimension(format!(
            "target has {} pixels, masks have {}",
            transmission.len(),
            stack.pixels()
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let x = Array1::from_iter(transmission.iter().copied());
    let mut y = stack.masks.dot(&x);
    if noise_sigma > 0.0 {
        let mut rng = rng::stream(rng_seed, Domain::DetectorNoise, 0);
        for v in y.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += noise_sigma * z;
        }
    }
    Ok(MeasurementSeries {
        y: y.to_vec(),
        noise_sigma,
        rng_seed,
    })
}

/// Largest normalized inner product between two distinct columns.
pub fn mutual_coherence(matrix: ArrayView2<f64>) -> Result<f64> {
    let norms: Vec<f64> = matrix
        .axis_iter(Axis(1))
        .map(|c| c.dot(&c).sqrt())
        .collect();
    if let Some(j) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Data(format!("column {j} is identically zero")));
    }
    let gram = matrix.t().dot(&matrix);
    let mut worst: f64 = 0.0;
    for ((i, j), g) in gram.indexed_iter() {
        if i < j {
            worst = worst.max(g.abs() / (norms[i] * norms[j]));
        }
    }
    Ok(worst.min(1.0))
}

impl MaskStack {
    pub fn mutual_coherence(&self) -> Result<f64> {
        mutual_coherence(self.masks.view())
    }
}

/// `A = masks · Ψ⁻¹` applied without forming the product.
#[derive(Debug, Clone, Copy)]
pub struct SensingOperator<'a> {
    masks: ArrayView2<'a, f64>,
    basis: &'a SparseBasis,
}

impl<'a> SensingOperator<'a> {
    pub fn new(masks: ArrayView2<'a, f64>, basis: &'a SparseBasis) -> Result<Self> {
        if masks.ncols() != basis.dim() {
            return Err(Error::Dimension(format!(
                "masks have {} columns, basis dimension is {}",
                masks.ncols(),
                basis.dim()
            )));
        }
        Ok(Self { masks, basis })
    }

    pub fn rows(&self) -> usize {
        self.masks.nrows()
    }

    pub fn cols(&self) -> usize {
        self.masks.ncols()
    }

    pub fn basis(&self) -> &SparseBasis {
        self.basis
    }

    /// `A c`
    pub fn apply(&self, coeffs: ArrayView1<f64>) -> Result<Array1<f64>> {
        let x = self.basis.inverse(coeffs)?;
        Ok(self.masks.dot(&x))
    }

    /// `Aᵀ y`
    pub fn adjoint(&self, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        if y.len() != self.rows() {
            return Err(Error::Dimension(format!(
                "adjoint expects {} samples, got {}",
                self.rows(),
                y.len()
            )));
        }
        let g = self.masks.t().dot(&y);
        self.basis.forward(g.view())
    }

    /// Explicit `M x N` matrix; row `m` is the forward transform of mask `m`.
    pub fn to_dense(&self) -> Result<Array2<f64>> {
        self.basis.forward_rows(&self.masks.to_owned())
    }
}

/// Why a solver returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ToleranceReached,
    AtomLimit,
    /// The next atom was numerically dependent on the active set.
    RankDeficient,
    /// No remaining atom correlates with the residual.
    NoCorrelation,
    IterationLimit,
    Converged,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// Image estimate, flattened row-major.
    pub x_hat: Array1<f64>,
    /// Basis coefficients of `x_hat`.
    pub coefficients: Array1<f64>,
    /// Basis indices with nonzero weight, in selection order (OMP) or
    /// ascending order (ISTA).
    pub support: Vec<usize>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Residual norm after each OMP atom, or objective after each ISTA step.
    pub history: Vec<f64>,
}

impl ReconstructionResult {
    pub fn image(&self, shape: (usize, usize)) -> Result<Array2<f64>> {
        Array2::from_shape_vec(shape, self.x_hat.to_vec())
            .map_err(|e| Error::Dimension(e.to_string()))
    }
}

/// `‖x̂ − x‖ / ‖x‖`
pub fn relative_error(estimate: ArrayView1<f64>, truth: ArrayView1<f64>) -> f64 {
    let diff: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    diff.sqrt() / truth.dot(&truth).sqrt()
}

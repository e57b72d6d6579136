//! Morlet continuous wavelet transform and scalogram colorization.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wavelet support is cut at `|u| <= TRUNCATION` in the wavelet argument.
pub const TRUNCATION: f64 = 4.0;

pub const MIN_SIGNAL_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletParams {
    pub omega0: f64,
    pub n_scales: usize,
    pub scale_min: f64,
    /// `None` means a quarter of the signal length.
    pub scale_max: Option<f64>,
}

impl Default for WaveletParams {
    fn default() -> Self {
        Self {
            omega0: 6.0,
            n_scales: 64,
            scale_min: 1.0,
            scale_max: None,
        }
    }
}

impl WaveletParams {
    /// Geometric scale grid for a signal of `len` samples.
    pub fn scales(&self, len: usize) -> Result<Vec<f64>> {
        let smax = self.scale_max.unwrap_or(len as f64 / 4.0);
        if self.n_scales < 2 {
            return Err(Error::Config(format!("n_scales must be >= 2, got {}", self.n_scales)));
        }
        if !(self.omega0 > 0.0) {
            return Err(Error::Config(format!("omega0 must be > 0, got {}", self.omega0)));
        }
        if !(self.scale_min > 0.0 && self.scale_min < smax) {
            return Err(Error::Config(format!(
                "need 0 < scale_min < scale_max, got {} and {smax}",
                self.scale_min
            )));
        }
        if smax > len as f64 {
            return Err(Error::Config(format!(
                "scale {smax} exceeds signal length {len}"
            )));
        }
        let ratio = (smax / self.scale_min).ln() / (self.n_scales - 1) as f64;
        let mut scales: Vec<f64> = (0..self.n_scales)
            .map(|i| self.scale_min * (ratio * i as f64).exp())
            .collect();
        // Pin the end point against rounding in exp/ln.
        scales[self.n_scales - 1] = smax;
        Ok(scales)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    /// `n_scales x M`
    pub magnitude: Array2<f64>,
    pub scales: Vec<f64>,
}

/// `S x S x 3`, channels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalogramImage {
    pub pixels: Array3<f64>,
}

impl ScalogramImage {
    pub fn size(&self) -> usize {
        self.pixels.dim().0
    }
}

fn morlet_conj(u: f64, omega0: f64) -> Complex64 {
    let env = PI.powf(-0.25) * (-0.5 * u * u).exp();
    Complex64::from_polar(env, -omega0 * u)
}

/// Complex coefficients `W(s, τ) = s^{-1/2} Σ_t x[t] ψ*((t − τ)/s)` with
/// zero padding outside the signal.
pub fn cwt_complex(signal: &[f64], params: &WaveletParams) -> Result<(Array2<Complex64>, Vec<f64>)> {
    let m = signal.len();
    if m < MIN_SIGNAL_LEN {
        return Err(Error::Data(format!(
            "signal needs at least {MIN_SIGNAL_LEN} samples, got {m}"
        )));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("signal contains non-finite samples".into()));
    }
    let scales = params.scales(m)?;
    let rows: Vec<Vec<Complex64>> = scales
        .par_iter()
        .map(|&s| {
            let half = (TRUNCATION * s).floor() as isize;
            let kernel: Vec<Complex64> = (-half..=half)
                .map(|d| morlet_conj(d as f64 / s, params.omega0))
                .collect();
            let norm = 1.0 / s.sqrt();
            (0..m as isize)
                .map(|tau| {
                    let lo = (tau - half).max(0);
                    let hi = (tau + half).min(m as isize - 1);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in lo..=hi {
                        acc += kernel[(t - tau + half) as usize] * signal[t as usize];
                    }
                    acc * norm
                })
                .collect()
        })
        .collect();
    let mut out = Array2::zeros((scales.len(), m));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    Ok((out, scales))
}

pub fn cwt(signal: &[f64], params: &WaveletParams) -> Result<Scalogram> {
    let (w, scales) = cwt_complex(signal, params)?;
    Ok(Scalogram {
        magnitude: w.mapv(|c| c.norm()),
        scales,
    })
}

/// Control points of the colormap at `t = 0, 1/8, ..., 1`.
pub const COLORMAP: [[f64; 3]; 9] = [
    [0.267004, 0.004874, 0.329415],
    [0.278826, 0.175490, 0.483397],
    [0.229739, 0.322361, 0.545706],
    [0.172719, 0.448791, 0.557885],
    [0.127568, 0.566949, 0.550556],
    [0.157851, 0.683765, 0.501686],
    [0.369214, 0.788888, 0.382914],
    [0.678489, 0.863742, 0.189503],
    [0.993248, 0.906157, 0.143936],
];

/// Piecewise-linear lookup, `t` clamped to [0, 1].
pub fn lookup(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    let pos = t * (COLORMAP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(COLORMAP.len() - 2);
    let f = pos - i as f64;
    if f == 0.0 {
        return COLORMAP[i];
    }
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [
        a[0] + f * (b[0] - a[0]),
        a[1] + f * (b[1] - a[1]),
        a[2] + f * (b[2] - a[2]),
    ]
}

/// Min-max normalize and map every cell through the colormap, at the
/// scalogram's own resolution (`n_scales x M x 3`).
pub fn color_grid(scalo: &Scalogram) -> Result<Array3<f64>> {
    let mag = &scalo.magnitude;
    if mag.is_empty() {
        return Err(Error::Data("empty scalogram".into()));
    }
    if mag.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("scalogram contains non-finite values".into()));
    }
    let lo = mag.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let (r, c) = mag.dim();
    let mut out = Array3::zeros((r, c, 3));
    for ((i, j), &v) in mag.indexed_iter() {
        let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
        let rgb = lookup(t);
        for k in 0..3 {
            out[[i, j, k]] = rgb[k];
        }
    }
    Ok(out)
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &Array3<f64>, out_rows: usize, out_cols: usize) -> Array3<f64> {
    let (r, c, ch) = src.dim();
    let mut out = Array3::zeros((out_rows, out_cols, ch));
    let axis = |dst: usize, n_in: usize, n_out: usize| {
        let x = ((dst as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, x - i0 as f64)
    };
    for i in 0..out_rows {
        let (y0, y1, fy) = axis(i, r, out_rows);
        for j in 0..out_cols {
            let (x0, x1, fx) = axis(j, c, out_cols);
            for k in 0..ch {
                let top = src[[y0, x0, k]] * (1.0 - fx) + src[[y0, x1, k]] * fx;
                let bot = src[[y1, x0, k]] * (1.0 - fx) + src[[y1, x1, k]] * fx;
                out[[i, j, k]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Color grid resized to `size x size`, channels quantized to `k / 255`.
///
/// Quantizing makes the image identical to its 8-bit PNG export and absorbs
/// last-bit differences from the normalization.
pub fn colorize(scalo: &Scalogram, size: usize) -> Result<ScalogramImage> {
    if size == 0 {
        return Err(Error::Config("image size must be >= 1".into()));
    }
    let grid = color_grid(scalo)?;
    let mut pixels = resize_bilinear(&grid, size, size);
    pixels.mapv_inplace(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    Ok(ScalogramImage { pixels })
}

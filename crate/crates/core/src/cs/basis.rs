use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Identity,
    Dct2d,
}

/// Orthonormal 1-D DCT-II matrix: `C[k, n] = a_k cos(π (2n + 1) k / 2N)`.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    let nf = n as f64;
    Array2::from_shape_fn((n, n), |(k, i)| {
        let a = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        a * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos()
    })
}

/// Sparsifying basis for images of a fixed `rows x cols` shape.
///
/// Coefficient vectors and image vectors are both flattened row-major.
/// `forward` maps an image to coefficients, `inverse` maps back; both are
/// orthonormal so `inverse` is the adjoint of `forward`.
#[derive(Debug, Clone)]
pub struct SparseBasis {
    kind: BasisKind,
    rows: usize,
    cols: usize,
    c_rows: Option<Array2<f64>>,
    c_cols: Option<Array2<f64>>,
}

impl SparseBasis {
    pub fn new(kind: BasisKind, rows: usize, cols: usize) -> Self {
        let (c_rows, c_cols) = match kind {
            BasisKind::Identity => (None, None),
            BasisKind::Dct2d => (Some(dct_matrix(rows)), Some(dct_matrix(cols))),
        };
        Self {
            kind,
            rows,
            cols,
            c_rows,
            c_cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(BasisKind::Identity, n, 1)
    }

    pub fn dct2d(rows: usize, cols: usize) -> Self {
        Self::new(BasisKind::Dct2d, rows, cols)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Index of the constant (DC) atom, if the basis has one.
    pub fn dc_atom(&self) -> Option<usize> {
        match self.kind {
            BasisKind::Dct2d => Some(0),
            BasisKind::Identity => None,
        }
    }

    fn check(&self, v: &ArrayView1<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "basis expects vectors of length {}, got {}",
                self.dim(),
                v.len()
            )));
        }
        Ok(())
    }

    /// Image → coefficients.
    pub fn forward(&self, image: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check(&image)?;
        Ok(match (&self.c_rows, &self.c_cols) {
            (Some(cr), Some(cc)) => {
                let x = image.to_shape((self.rows, self.cols)).expect("contiguous");
                let y = cr.dot(&x).dot(&cc.t());
                Array1::from_iter(y.iter().copied())
            }
            _ => image.to_owned(),
        })
    }

    /// Coefficients → image.
    pub fn inverse(&self, coeffs: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check(&coeffs)?;
        Ok(match (&self.c_rows, &self.c_cols) {
            (Some(cr), Some(cc)) => {
                let c = coeffs.to_shape((self.rows, self.cols)).expect("contiguous");
                let x = cr.t().dot(&c).dot(cc);
                Array1::from_iter(x.iter().copied())
            }
            _ => coeffs.to_owned(),
        })
    }

    /// Apply `forward` to every row of a matrix.
    pub fn forward_rows(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(rows.dim());
        for (src, mut dst) in rows.outer_iter().zip(out.outer_iter_mut()) {
            dst.assign(&self.forward(src)?);
        }
        Ok(out)
    }
}

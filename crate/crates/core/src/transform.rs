//! Square orthogonal short-time transforms and the power spectrograms they induce.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, TlnmfError};
use crate::signal::FrameMatrix;

/// Largest tolerated entry of `|PhiᵀPhi - I|` for a matrix to count as orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// Default relative spectrogram floor.
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-10;

/// Floor used when the spectrogram is identically zero.
pub const ABSOLUTE_FLOOR: f64 = 1e-30;

/// `M x M` orthogonal matrix whose rows are the atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoTransform {
    matrix: DMatrix<f64>,
}

impl OrthoTransform {
    /// Validates squareness, finiteness and orthogonality.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(TlnmfError::shape(
                "OrthoTransform::new",
                (matrix.nrows(), matrix.nrows()),
                matrix.shape(),
            ));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(TlnmfError::NonFinite("transform"));
        }
        let err = orthogonality_error(&matrix);
        if err > ORTHOGONALITY_TOL {
            return Err(TlnmfError::InvalidParameter(format!(
                "matrix is not orthogonal (max |PhiᵀPhi - I| = {err:e})"
            )));
        }
        Ok(OrthoTransform { matrix })
    }

    pub(crate) fn from_orthogonal_unchecked(matrix: DMatrix<f64>) -> Self {
        debug_assert!(orthogonality_error(&matrix) <= ORTHOGONALITY_TOL);
        OrthoTransform { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn orthogonality_error(&self) -> f64 {
        orthogonality_error(&self.matrix)
    }
}

impl AsRef<DMatrix<f64>> for OrthoTransform {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// `max |AᵀA - I|`.
pub fn orthogonality_error(a: &DMatrix<f64>) -> f64 {
    let gram = a.transpose() * a;
    gram.iter()
        .enumerate()
        .map(|(k, &g)| {
            let (i, j) = (k % gram.nrows(), k / gram.nrows());
            (g - if i == j { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max)
}

/// Orthonormal DCT-IV: `[Phi]_{qm} = sqrt(2/M) cos(pi (q + 1/2)(m + 1/2) / M)`.
pub fn dct_matrix(dim: usize) -> Result<OrthoTransform> {
    if dim == 0 {
        return Err(TlnmfError::InvalidParameter(
            "transform dimension must be at least 1".into(),
        ));
    }
    let m = dim as f64;
    let scale = (2.0 / m).sqrt();
    let matrix = DMatrix::from_fn(dim, dim, |q, k| {
        scale * (PI * (q as f64 + 0.5) * (k as f64 + 0.5) / m).cos()
    });
    Ok(OrthoTransform::from_orthogonal_unchecked(matrix))
}

/// Haar-distributed orthogonal matrix: QR of a standard normal matrix with the signs of
/// `diag(R)` folded into `Q`.
pub fn random_orthogonal(dim: usize, seed: u64) -> Result<OrthoTransform> {
    if dim == 0 {
        return Err(TlnmfError::InvalidParameter(
            "transform dimension must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // fill column-major so the draw order is fixed
    let gaussian: DMatrix<f64> = DMatrix::from_iterator(
        dim,
        dim,
        (0..dim * dim).map(|_| StandardNormal.sample(&mut rng)),
    );
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(OrthoTransform::from_orthogonal_unchecked(q))
}

/// Negates every atom whose first entry is strictly negative. When the first entry is
/// exactly zero the first nonzero entry decides instead.
pub fn normalize_sign(t: &OrthoTransform) -> OrthoTransform {
    let mut matrix = t.matrix.clone();
    for mut row in matrix.row_iter_mut() {
        let lead = row.iter().copied().find(|&x| x != 0.0).unwrap_or(0.0);
        if lead < 0.0 {
            row.neg_mut();
        }
    }
    OrthoTransform { matrix }
}

/// Lower bound applied to spectrogram entries and model products.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Floor {
    /// Fraction of the mean spectrogram value; falls back to [`ABSOLUTE_FLOOR`] on silence.
    Relative(f64),
    Absolute(f64),
}

impl Default for Floor {
    fn default() -> Self {
        Floor::Relative(DEFAULT_RELATIVE_FLOOR)
    }
}

impl Floor {
    pub fn resolve(self, mean_power: f64) -> f64 {
        match self {
            Floor::Relative(r) if mean_power > 0.0 => r * mean_power,
            Floor::Relative(_) => ABSOLUTE_FLOOR,
            Floor::Absolute(f) => f,
        }
    }
}

/// Floored power spectrogram `max(|PhiY|^2, floor)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: DMatrix<f64>,
    floor: f64,
}

impl Spectrogram {
    /// Squares and floors transform coefficients.
    pub fn from_coefficients(coeffs: &DMatrix<f64>, floor: Floor) -> Result<Self> {
        let squared = coeffs.map(|x| x * x);
        let mean = if squared.is_empty() {
            0.0
        } else {
            squared.sum() / squared.len() as f64
        };
        let floor = floor.resolve(mean);
        if !(floor > 0.0) || !floor.is_finite() {
            return Err(TlnmfError::InvalidParameter(format!(
                "spectrogram floor must be positive and finite, got {floor}"
            )));
        }
        Ok(Spectrogram {
            values: squared.map(|v| v.max(floor)),
            floor,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }
}

/// `X = Phi Y`; `phi` need not be orthogonal.
pub fn transform_frames(phi: &DMatrix<f64>, frames: &FrameMatrix) -> Result<DMatrix<f64>> {
    if phi.ncols() != frames.frame_len() || !phi.is_square() {
        return Err(TlnmfError::shape(
            "transform_frames",
            (frames.frame_len(), frames.frame_len()),
            phi.shape(),
        ));
    }
    Ok(phi * frames.data())
}

pub fn power_spectrogram(
    phi: &DMatrix<f64>,
    frames: &FrameMatrix,
    floor: Floor,
) -> Result<Spectrogram> {
    Spectrogram::from_coefficients(&transform_frames(phi, frames)?, floor)
}

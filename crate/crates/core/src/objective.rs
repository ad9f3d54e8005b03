//! Itakura-Saito divergence and the penalized objectives minimized by the drivers.
//!
//! Both arguments of the divergence are floored at the spectrogram floor before
//! evaluation, which keeps the objective finite on silent frames and on zero
//! activations.

use nalgebra::DMatrix;

use crate::error::{Result, TlnmfError};
use crate::signal::FrameMatrix;
use crate::transform::{power_spectrogram, Floor, Spectrogram};

/// Rank, sparsity weight and stopping threshold of the unsupervised problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub rank: usize,
    pub lambda: f64,
    pub tau: f64,
}

impl Hyperparams {
    pub fn new(rank: usize, lambda: f64, tau: f64) -> Result<Self> {
        let hp = Hyperparams { rank, lambda, tau };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(TlnmfError::InvalidParameter(
                "rank K must be at least 1".into(),
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(TlnmfError::InvalidParameter(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.tau > 0.0) {
            return Err(TlnmfError::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// `lambda * M / K`, the weight in front of `||H||_1`.
    pub fn scaled_lambda(&self, frame_len: usize) -> f64 {
        self.lambda * frame_len as f64 / self.rank as f64
    }
}

/// Separate sparsity weights for the speech and noise activations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedHyperparams {
    pub lambda_sp: f64,
    pub lambda_no: f64,
    pub tau: f64,
}

impl SupervisedHyperparams {
    pub fn new(lambda_sp: f64, lambda_no: f64, tau: f64) -> Result<Self> {
        let shp = SupervisedHyperparams {
            lambda_sp,
            lambda_no,
            tau,
        };
        shp.validate()?;
        Ok(shp)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda_sp", self.lambda_sp), ("lambda_no", self.lambda_no)] {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(TlnmfError::InvalidParameter(format!(
                    "{name} must be finite and nonnegative, got {l}"
                )));
            }
        }
        if !(self.tau > 0.0) {
            return Err(TlnmfError::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// Per-entry penalty weights `M lambda_sp / N_sp` and `M lambda_no / N_no`.
    pub fn scaled_lambdas(&self, frame_len: usize, n_sp: usize, n_no: usize) -> (f64, f64) {
        let m = frame_len as f64;
        (
            self.lambda_sp * m / n_sp as f64,
            self.lambda_no * m / n_no as f64,
        )
    }
}

/// `sum(a/b - log(a/b) - 1)` over strictly positive matrices of equal shape.
pub fn is_divergence(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(TlnmfError::shape("is_divergence", a.shape(), b.shape()));
    }
    if a.iter().any(|&x| !(x > 0.0)) {
        return Err(TlnmfError::NonPositive("is_divergence first argument"));
    }
    if b.iter().any(|&x| !(x > 0.0)) {
        return Err(TlnmfError::NonPositive("is_divergence second argument"));
    }
    Ok(is_divergence_unchecked(
        a.iter().copied(),
        b.iter().copied(),
    ))
}

pub(crate) fn is_divergence_unchecked(
    a: impl Iterator<Item = f64>,
    b: impl Iterator<Item = f64>,
) -> f64 {
    a.zip(b)
        .map(|(x, y)| {
            let r = x / y;
            r - r.ln() - 1.0
        })
        .sum()
}

/// `D_IS(V | max(model, floor))` with `V` already floored.
pub(crate) fn floored_divergence(v: &Spectrogram, model: &DMatrix<f64>) -> f64 {
    let floor = v.floor();
    is_divergence_unchecked(
        v.values().iter().copied(),
        model.iter().map(|&x| x.max(floor)),
    )
}

fn check_factor_shapes(m: usize, n: usize, w: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<()> {
    if w.nrows() != m {
        return Err(TlnmfError::shape("dictionary W", (m, w.ncols()), w.shape()));
    }
    if h.shape() != (w.ncols(), n) {
        return Err(TlnmfError::shape(
            "activations H",
            (w.ncols(), n),
            h.shape(),
        ));
    }
    Ok(())
}

/// Penalized objective from a precomputed spectrogram.
pub fn objective_from_spectrogram(
    v: &Spectrogram,
    w: &DMatrix<f64>,
    h: &DMatrix<f64>,
    hp: &Hyperparams,
) -> Result<f64> {
    let (m, n) = v.shape();
    check_factor_shapes(m, n, w, h)?;
    if w.ncols() != hp.rank {
        return Err(TlnmfError::shape(
            "dictionary W rank",
            (m, hp.rank),
            w.shape(),
        ));
    }
    let wh = w * h;
    Ok(floored_divergence(v, &wh) + hp.scaled_lambda(m) * h.sum())
}

/// `D_IS(|Phi Y|^2 | WH) + lambda (M/K) ||H||_1`. `phi` need not be orthogonal, which lets
/// finite-difference checks perturb it freely.
pub fn objective_tlnmf(
    phi: &DMatrix<f64>,
    frames: &FrameMatrix,
    w: &DMatrix<f64>,
    h: &DMatrix<f64>,
    hp: &Hyperparams,
) -> Result<f64> {
    let v = power_spectrogram(phi, frames, Floor::default())?;
    objective_from_spectrogram(&v, w, h, hp)
}

/// Supervised objective with dictionaries `|Phi Y_sp|^2` and `|Phi Y_no|^2`.
pub fn objective_supervised(
    phi: &DMatrix<f64>,
    frames_mix: &FrameMatrix,
    frames_sp: &FrameMatrix,
    frames_no: &FrameMatrix,
    h_sp: &DMatrix<f64>,
    h_no: &DMatrix<f64>,
    shp: &SupervisedHyperparams,
) -> Result<f64> {
    let m = frames_mix.frame_len();
    let n = frames_mix.num_frames();
    for f in [frames_sp, frames_no] {
        if f.frame_len() != m {
            return Err(TlnmfError::shape(
                "training frames",
                (m, f.num_frames()),
                (f.frame_len(), f.num_frames()),
            ));
        }
    }
    let (n_sp, n_no) = (frames_sp.num_frames(), frames_no.num_frames());
    if h_sp.shape() != (n_sp, n) {
        return Err(TlnmfError::shape(
            "speech activations",
            (n_sp, n),
            h_sp.shape(),
        ));
    }
    if h_no.shape() != (n_no, n) {
        return Err(TlnmfError::shape(
            "noise activations",
            (n_no, n),
            h_no.shape(),
        ));
    }
    let v = power_spectrogram(phi, frames_mix, Floor::default())?;
    let w_sp = (phi * frames_sp.data()).map(|x| x * x);
    let w_no = (phi * frames_no.data()).map(|x| x * x);
    let vhat = &w_sp * h_sp + &w_no * h_no;
    let (l_sp, l_no) = shp.scaled_lambdas(m, n_sp, n_no);
    Ok(floored_divergence(&v, &vhat) + l_sp * h_sp.sum() + l_no * h_no.sum())
}

/// Supervised objective with stacked training frames `Y_tr = [Y_sp, Y_no]` and stacked
/// activations; the first `n_sp` rows of `h` belong to the speech dictionary.
pub fn objective_supervised_stacked(
    phi: &DMatrix<f64>,
    frames_mix: &FrameMatrix,
    frames_tr: &FrameMatrix,
    h: &DMatrix<f64>,
    n_sp: usize,
    shp: &SupervisedHyperparams,
) -> Result<f64> {
    let (m, n) = (frames_mix.frame_len(), frames_mix.num_frames());
    let n_tr = frames_tr.num_frames();
    if frames_tr.frame_len() != m {
        return Err(TlnmfError::shape(
            "training frames",
            (m, n_tr),
            frames_tr.data().shape(),
        ));
    }
    if h.shape() != (n_tr, n) || n_sp == 0 || n_sp >= n_tr {
        return Err(TlnmfError::shape(
            "stacked activations",
            (n_tr, n),
            h.shape(),
        ));
    }
    let v = power_spectrogram(phi, frames_mix, Floor::default())?;
    let w = (phi * frames_tr.data()).map(|x| x * x);
    let (l_sp, l_no) = shp.scaled_lambdas(m, n_sp, n_tr - n_sp);
    let h_sp_sum = h.rows(0, n_sp).sum();
    let h_no_sum = h.rows(n_sp, n_tr - n_sp).sum();
    Ok(floored_divergence(&v, &(w * h)) + l_sp * h_sp_sum + l_no * h_no_sum)
}

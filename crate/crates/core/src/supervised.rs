//! Supervised transform learning: the dictionaries are the transformed training
//! spectrograms `|Phi Y_sp|^2` and `|Phi Y_no|^2`, only the activations and `Phi` are
//! estimated, and sources are recovered from the mixture by Wiener filtering.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::driver::{initial_transform, relative_decrease, sub_seed, Mode, RunConfig, INIT_LOWER};
use crate::error::{Result, TlnmfError};
use crate::manifold::{armijo_step, gradient_phi_supervised, natural_gradient, LineSearchConfig};
use crate::objective::{objective_supervised_stacked, SupervisedHyperparams};
use crate::signal::{overlap_add, FrameMatrix, Signal};
use crate::transform::{
    normalize_sign, power_spectrogram, transform_frames, Floor, OrthoTransform,
};
use crate::updates::update_h_supervised;

const ACTIVATION_STREAM: u64 = 3;

/// Speech and noise training frames sharing the mixture's frame length.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    frames_sp: FrameMatrix,
    frames_no: FrameMatrix,
    stacked: FrameMatrix,
}

impl TrainingSet {
    pub fn new(frames_sp: FrameMatrix, frames_no: FrameMatrix) -> Result<Self> {
        let m = frames_sp.frame_len();
        if frames_no.frame_len() != m {
            return Err(TlnmfError::shape(
                "TrainingSet noise frames",
                (m, frames_no.num_frames()),
                frames_no.data().shape(),
            ));
        }
        let (n_sp, n_no) = (frames_sp.num_frames(), frames_no.num_frames());
        let mut data = DMatrix::zeros(m, n_sp + n_no);
        data.columns_mut(0, n_sp).copy_from(frames_sp.data());
        data.columns_mut(n_sp, n_no).copy_from(frames_no.data());
        let stacked = FrameMatrix::new(data, frames_sp.hop(), frames_sp.window())?;
        Ok(TrainingSet {
            frames_sp,
            frames_no,
            stacked,
        })
    }

    pub fn speech(&self) -> &FrameMatrix {
        &self.frames_sp
    }

    pub fn noise(&self) -> &FrameMatrix {
        &self.frames_no
    }

    /// `Y_tr = [Y_sp, Y_no]`.
    pub fn stacked(&self) -> &FrameMatrix {
        &self.stacked
    }

    pub fn n_sp(&self) -> usize {
        self.frames_sp.num_frames()
    }

    pub fn n_no(&self) -> usize {
        self.frames_no.num_frames()
    }
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub phi: OrthoTransform,
    pub h_sp: DMatrix<f64>,
    pub h_no: DMatrix<f64>,
    pub vhat_sp: DMatrix<f64>,
    pub vhat_no: DMatrix<f64>,
    pub est_sp: Signal,
    pub est_no: Signal,
    pub objective_history: Vec<f64>,
    pub epsilon_history: Vec<f64>,
    pub iterations: usize,
}

/// Wiener masks `vhat_sp / (vhat_sp + vhat_no)` and their complement. Entries where both
/// estimates vanish get 0.5.
pub fn wiener_masks(
    vhat_sp: &DMatrix<f64>,
    vhat_no: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if vhat_sp.shape() != vhat_no.shape() {
        return Err(TlnmfError::shape(
            "wiener_masks",
            vhat_sp.shape(),
            vhat_no.shape(),
        ));
    }
    let m_sp = vhat_sp.zip_map(vhat_no, |s, n| {
        let total = s + n;
        if total > 0.0 {
            s / total
        } else {
            0.5
        }
    });
    let m_no = m_sp.map(|m| 1.0 - m);
    Ok((m_sp, m_no))
}

/// Framewise Wiener estimates `Phiᵀ(mask ∘ Phi Y)` for both sources.
pub fn wiener_frames(
    phi: &OrthoTransform,
    frames_mix: &FrameMatrix,
    vhat_sp: &DMatrix<f64>,
    vhat_no: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let x = transform_frames(phi.matrix(), frames_mix)?;
    if vhat_sp.shape() != x.shape() {
        return Err(TlnmfError::shape(
            "wiener_frames",
            x.shape(),
            vhat_sp.shape(),
        ));
    }
    let (m_sp, m_no) = wiener_masks(vhat_sp, vhat_no)?;
    let phi_t = phi.matrix().transpose();
    let y_sp = &phi_t * m_sp.component_mul(&x);
    let y_no = &phi_t * m_no.component_mul(&x);
    Ok((y_sp, y_no))
}

/// Wiener filtering followed by overlap-add of both sources.
pub fn wiener_reconstruct(
    phi: &OrthoTransform,
    frames_mix: &FrameMatrix,
    vhat_sp: &DMatrix<f64>,
    vhat_no: &DMatrix<f64>,
    total_len: usize,
    sample_rate: u32,
) -> Result<(Signal, Signal)> {
    let (y_sp, y_no) = wiener_frames(phi, frames_mix, vhat_sp, vhat_no)?;
    let est_sp = overlap_add(&frames_mix.with_data(y_sp)?, total_len, sample_rate)?;
    let est_no = overlap_add(&frames_mix.with_data(y_no)?, total_len, sample_rate)?;
    Ok((est_sp, est_no))
}

/// Random positive activations scaled so that the initial model has the mixture's mean
/// power.
fn initial_activations(
    phi: &OrthoTransform,
    frames_mix: &FrameMatrix,
    train: &TrainingSet,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let (n_tr, n) = (train.stacked().num_frames(), frames_mix.num_frames());
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, ACTIVATION_STREAM));
    let h = DMatrix::from_iterator(
        n_tr,
        n,
        (0..n_tr * n).map(|_| rng.random_range(INIT_LOWER..1.0)),
    );
    let v = power_spectrogram(phi.matrix(), frames_mix, Floor::default())?;
    let w = transform_frames(phi.matrix(), train.stacked())?.map(|x| x * x);
    let model_mean = (w * &h).mean();
    if model_mean > 0.0 {
        Ok(h * (v.values().mean() / model_mean))
    } else {
        Ok(h)
    }
}

/// Alternates the activation update with a projected natural-gradient step on `Phi` until
/// the relative decrease drops to `tau` or `max_iters` is reached. In `FixedDct` mode the
/// transform never moves, which is classical supervised IS-NMF. `cfg.hp` is ignored;
/// `RunConfig::supervised` gives the usual settings. `total_len` and
/// `sample_rate` describe the mixture signal the estimates are rendered to.
pub fn run_supervised(
    frames_mix: &FrameMatrix,
    train: &TrainingSet,
    shp: &SupervisedHyperparams,
    cfg: &RunConfig,
    total_len: usize,
    sample_rate: u32,
) -> Result<SeparationResult> {
    shp.validate()?;
    cfg.line_search.validate()?;
    if cfg.max_iters == 0 {
        return Err(TlnmfError::InvalidParameter(
            "max_iters must be at least 1".into(),
        ));
    }
    let m = frames_mix.frame_len();
    if train.stacked().frame_len() != m {
        return Err(TlnmfError::shape(
            "run_supervised training frames",
            (m, train.stacked().num_frames()),
            train.stacked().data().shape(),
        ));
    }
    let (n_sp, n_no) = (train.n_sp(), train.n_no());
    let tr = train.stacked();

    let mut phi = initial_transform(m, cfg.mode, cfg.transform_init, cfg.seed)?;
    let mut h = initial_activations(&phi, frames_mix, train, cfg.seed)?;
    let cost = |p: &DMatrix<f64>, h: &DMatrix<f64>| {
        objective_supervised_stacked(p, frames_mix, tr, h, n_sp, shp)
    };
    let mut objectives = vec![cost(phi.matrix(), &h)?];
    let mut epsilons = Vec::new();
    let mut next_step = cfg.line_search.gamma_init;

    while epsilons.len() < cfg.max_iters {
        let v = power_spectrogram(phi.matrix(), frames_mix, Floor::default())?;
        let w = transform_frames(phi.matrix(), tr)?.map(|x| x * x);
        h = update_h_supervised(&v, &w, &h, shp, n_sp, n_no)?;

        if cfg.mode == Mode::TransformLearning {
            let grad = gradient_phi_supervised(phi.matrix(), frames_mix, tr, &h)?;
            let omega = natural_gradient(&phi, &grad);
            if omega.norm_squared() > 0.0 {
                let current = cost(phi.matrix(), &h)?;
                let ls = LineSearchConfig {
                    gamma_init: next_step,
                    ..cfg.line_search
                };
                let outcome =
                    armijo_step(&phi, &omega, current, |cand| cost(cand.matrix(), &h), &ls)?;
                if !outcome.stalled() {
                    next_step = outcome.gamma * cfg.line_search.grow;
                    phi = normalize_sign(&outcome.phi);
                }
            }
        }

        let c = cost(phi.matrix(), &h)?;
        if !c.is_finite() {
            return Err(TlnmfError::NonFinite("supervised objective"));
        }
        let eps = relative_decrease(*objectives.last().expect("non-empty"), c);
        objectives.push(c);
        epsilons.push(eps);
        if eps <= shp.tau {
            break;
        }
    }
    log::info!(
        "supervised {} stopped after {} iterations: objective {:e}",
        cfg.mode.label(),
        epsilons.len(),
        objectives.last().copied().unwrap_or(f64::NAN)
    );

    let w = transform_frames(phi.matrix(), tr)?.map(|x| x * x);
    let h_sp = h.rows(0, n_sp).into_owned();
    let h_no = h.rows(n_sp, n_no).into_owned();
    let vhat_sp = w.columns(0, n_sp) * &h_sp;
    let vhat_no = w.columns(n_sp, n_no) * &h_no;
    let (est_sp, est_no) =
        wiener_reconstruct(&phi, frames_mix, &vhat_sp, &vhat_no, total_len, sample_rate)?;
    Ok(SeparationResult {
        phi,
        h_sp,
        h_no,
        vhat_sp,
        vhat_no,
        est_sp,
        est_no,
        iterations: epsilons.len(),
        objective_history: objectives,
        epsilon_history: epsilons,
    })
}

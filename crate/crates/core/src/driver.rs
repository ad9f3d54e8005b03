//! Block-coordinate descent over `H`, `W` and `Phi`, the fixed-DCT IS-NMF baseline, and
//! atom ranking.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csvio;
use crate::error::{Result, TlnmfError};
use crate::manifold::{armijo_step, gradient_phi, natural_gradient, LineSearchConfig};
use crate::objective::{objective_from_spectrogram, objective_tlnmf, Hyperparams};
use crate::signal::FrameMatrix;
use crate::transform::{
    dct_matrix, normalize_sign, power_spectrogram, random_orthogonal, Floor, OrthoTransform,
};
use crate::updates::{normalize_columns, update_h, update_w, Factorization};

/// Lower end of the uniform distribution used to initialize factors.
pub const INIT_LOWER: f64 = 1e-6;

pub const DEFAULT_MAX_ITERS: usize = 50_000;

const FACTOR_STREAM: u64 = 1;
const TRANSFORM_STREAM: u64 = 2;

/// Derives an independent seed for one component from the run seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Learn `Phi` jointly with the factors.
    TransformLearning,
    /// Keep `Phi` fixed at the orthonormal DCT-IV.
    FixedDct,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::TransformLearning => "tlnmf",
            Mode::FixedDct => "dct",
        }
    }
}

/// Starting point of a learned transform. `FixedDct` runs ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformInit {
    Random,
    Dct,
}

impl TransformInit {
    pub fn label(self) -> &'static str {
        match self {
            TransformInit::Random => "random",
            TransformInit::Dct => "dct",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub hp: Hyperparams,
    pub max_iters: usize,
    pub mode: Mode,
    pub transform_init: TransformInit,
    pub line_search: LineSearchConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(hp: Hyperparams, mode: Mode, seed: u64) -> Self {
        RunConfig {
            hp,
            max_iters: DEFAULT_MAX_ITERS,
            mode,
            transform_init: TransformInit::Random,
            line_search: LineSearchConfig::default(),
            seed,
        }
    }

    /// Settings for `run_supervised`: a learned transform starts from the DCT, and `hp` is a
    /// placeholder (the supervised driver reads its own hyperparameters).
    pub fn supervised(mode: Mode, seed: u64) -> Self {
        let hp = Hyperparams {
            rank: 1,
            lambda: 0.0,
            tau: 1e-7,
        };
        RunConfig {
            transform_init: TransformInit::Dct,
            ..RunConfig::new(hp, mode, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.line_search.validate()?;
        if self.max_iters == 0 {
            return Err(TlnmfError::InvalidParameter(
                "max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub phi: OrthoTransform,
    pub factorization: Factorization,
    /// Objective after initialization followed by one value per iteration.
    pub objective_history: Vec<f64>,
    /// Relative decrease per iteration; one shorter than `objective_history`.
    pub epsilon_history: Vec<f64>,
    pub iteration: usize,
    pub rng_seed: u64,
    /// Step size that seeds the next line search.
    pub next_step: f64,
    /// Number of iterations in which the line search found no acceptable step.
    pub stalls: usize,
}

impl RunState {
    pub fn objective(&self) -> f64 {
        *self
            .objective_history
            .last()
            .expect("history starts non-empty")
    }

    pub fn last_epsilon(&self) -> Option<f64> {
        self.epsilon_history.last().copied()
    }

    /// Writes `phi.csv`, `w.csv`, `h.csv` and `history.csv`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| TlnmfError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        csvio::write_matrix(&dir.join("phi.csv"), self.phi.matrix())?;
        csvio::write_matrix(&dir.join("w.csv"), &self.factorization.w)?;
        csvio::write_matrix(&dir.join("h.csv"), &self.factorization.h)?;
        write_history(
            &dir.join("history.csv"),
            &self.objective_history,
            &self.epsilon_history,
        )
    }

    pub fn load_checkpoint(dir: &Path, rng_seed: u64) -> Result<Self> {
        let phi = OrthoTransform::new(csvio::read_matrix(&dir.join("phi.csv"))?)?;
        let w = csvio::read_matrix(&dir.join("w.csv"))?;
        let h = csvio::read_matrix(&dir.join("h.csv"))?;
        let factorization = Factorization::new(w, h)?;
        let (objective_history, epsilon_history) = read_history(&dir.join("history.csv"))?;
        Ok(RunState {
            phi,
            factorization,
            iteration: epsilon_history.len(),
            objective_history,
            epsilon_history,
            rng_seed,
            next_step: LineSearchConfig::default().gamma_init,
            stalls: 0,
        })
    }
}

/// `iteration,objective,epsilon`; the epsilon field of iteration 0 is empty.
pub fn write_history(path: &Path, objectives: &[f64], epsilons: &[f64]) -> Result<()> {
    let mut wtr = csvio::writer(path)?;
    let res = (|| {
        wtr.write_record(["iteration", "objective", "epsilon"])?;
        for (i, c) in objectives.iter().enumerate() {
            let eps = if i == 0 {
                String::new()
            } else {
                epsilons[i - 1].to_string()
            };
            wtr.write_record([i.to_string(), c.to_string(), eps])?;
        }
        wtr.flush()?;
        Ok::<(), Box<dyn std::error::Error>>(())
    })();
    res.map_err(|e| csvio::csv_error(path, e))
}

pub fn read_history(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = csvio::read_rows(path)?;
    let bad = |m: String| csvio::csv_error(path, m);
    let mut objectives = Vec::new();
    let mut epsilons = Vec::new();
    for (i, row) in rows.iter().enumerate().skip(1) {
        if row.len() != 3 {
            return Err(bad(format!("row {i} has {} fields", row.len())));
        }
        objectives.push(row[1].parse::<f64>().map_err(|e| bad(e.to_string()))?);
        if i > 1 {
            epsilons.push(row[2].parse::<f64>().map_err(|e| bad(e.to_string()))?);
        }
    }
    if objectives.is_empty() {
        return Err(bad("empty history".into()));
    }
    Ok((objectives, epsilons))
}

/// `(C_prev - C) / C_prev`, zero when the previous objective is zero.
pub fn relative_decrease(previous: f64, current: f64) -> f64 {
    if previous == 0.0 {
        0.0
    } else {
        (previous - current) / previous
    }
}

fn random_factors(m: usize, k: usize, n: usize, seed: u64) -> Factorization {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, FACTOR_STREAM));
    let mut draw = |rows, cols| {
        DMatrix::from_iterator(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(INIT_LOWER..1.0)),
        )
    };
    let w = draw(m, k);
    let h = draw(k, n);
    normalize_columns(&Factorization { w, h })
}

/// Initial transform: DCT-IV in `FixedDct` mode, otherwise as requested by `init`.
pub fn initial_transform(
    dim: usize,
    mode: Mode,
    init: TransformInit,
    seed: u64,
) -> Result<OrthoTransform> {
    match (mode, init) {
        (Mode::TransformLearning, TransformInit::Random) => {
            random_orthogonal(dim, sub_seed(seed, TRANSFORM_STREAM))
        }
        _ => dct_matrix(dim),
    }
}

/// Random positive `W` (normalized) and `H`, plus the mode's initial transform. The factors
/// depend only on the seed, so both modes start from the same `W` and `H`.
pub fn init_state(frames: &FrameMatrix, cfg: &RunConfig) -> Result<RunState> {
    cfg.validate()?;
    let m = frames.frame_len();
    let factorization = random_factors(m, cfg.hp.rank, frames.num_frames(), cfg.seed);
    let phi = initial_transform(m, cfg.mode, cfg.transform_init, cfg.seed)?;
    let c0 = objective_tlnmf(
        phi.matrix(),
        frames,
        &factorization.w,
        &factorization.h,
        &cfg.hp,
    )?;
    Ok(RunState {
        phi,
        factorization,
        objective_history: vec![c0],
        epsilon_history: Vec::new(),
        iteration: 0,
        rng_seed: cfg.seed,
        next_step: cfg.line_search.gamma_init,
        stalls: 0,
    })
}

/// One pass of H update, W update, column normalization and (when learning the transform)
/// a projected natural-gradient step on `Phi`.
pub fn iterate(mut state: RunState, frames: &FrameMatrix, cfg: &RunConfig) -> Result<RunState> {
    let m = frames.frame_len();
    let lambda_scaled = cfg.hp.scaled_lambda(m);
    let v = power_spectrogram(state.phi.matrix(), frames, Floor::default())?;

    let f = &state.factorization;
    let penalty = DMatrix::from_element(f.rank(), frames.num_frames(), lambda_scaled);
    let h = update_h(&v, f, &penalty)?;
    let f = Factorization { w: f.w.clone(), h };
    let w = update_w(&v, &f, lambda_scaled)?;
    let f = normalize_columns(&Factorization { w, h: f.h });

    if cfg.mode == Mode::TransformLearning {
        let vhat = f.product();
        let grad = gradient_phi(state.phi.matrix(), frames, &vhat)?;
        let omega = natural_gradient(&state.phi, &grad);
        if omega.norm_squared() > 0.0 {
            let current = objective_from_spectrogram(&v, &f.w, &f.h, &cfg.hp)?;
            let ls = LineSearchConfig {
                gamma_init: state.next_step,
                ..cfg.line_search
            };
            let outcome = armijo_step(
                &state.phi,
                &omega,
                current,
                |cand| objective_tlnmf(cand.matrix(), frames, &f.w, &f.h, &cfg.hp),
                &ls,
            )?;
            if outcome.stalled() {
                state.stalls += 1;
                log::debug!("iteration {}: line search stalled", state.iteration + 1);
            } else {
                state.next_step = outcome.gamma * cfg.line_search.grow;
                state.phi = normalize_sign(&outcome.phi);
            }
        }
    }

    let c = objective_tlnmf(state.phi.matrix(), frames, &f.w, &f.h, &cfg.hp)?;
    if !c.is_finite() {
        return Err(TlnmfError::NonFinite("objective"));
    }
    let eps = relative_decrease(state.objective(), c);
    state.factorization = f;
    state.objective_history.push(c);
    state.epsilon_history.push(eps);
    state.iteration += 1;
    Ok(state)
}

/// Iterates until the relative decrease drops to `tau` or `max_iters` is reached.
pub fn run(frames: &FrameMatrix, cfg: &RunConfig) -> Result<RunState> {
    let state = init_state(frames, cfg)?;
    run_from(state, frames, cfg)
}

/// Continues an existing state under the same stopping rule.
pub fn run_from(mut state: RunState, frames: &FrameMatrix, cfg: &RunConfig) -> Result<RunState> {
    cfg.validate()?;
    while state.iteration < cfg.max_iters {
        state = iterate(state, frames, cfg)?;
        let eps = state.last_epsilon().expect("iterate appends epsilon");
        if state.iteration.is_multiple_of(100) {
            log::debug!(
                "{} iteration {}: objective {:e}, epsilon {:e}",
                cfg.mode.label(),
                state.iteration,
                state.objective(),
                eps
            );
        }
        if eps <= cfg.hp.tau {
            break;
        }
    }
    log::info!(
        "{} stopped after {} iterations: objective {:e}",
        cfg.mode.label(),
        state.iteration,
        state.objective()
    );
    Ok(state)
}

/// Atom significance `||phi_m Y||_2`.
pub fn atom_scores(phi: &OrthoTransform, frames: &FrameMatrix) -> Result<Vec<f64>> {
    let x = crate::transform::transform_frames(phi.matrix(), frames)?;
    Ok(x.row_iter().map(|r| r.norm()).collect())
}

/// Indices of the `top` most significant atoms with their scores, in descending order of
/// score; ties go to the lower index.
pub fn rank_atoms(
    phi: &OrthoTransform,
    frames: &FrameMatrix,
    top: usize,
) -> Result<Vec<(usize, f64)>> {
    let scores = atom_scores(phi, frames)?;
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top.min(phi.dim()));
    Ok(ranked)
}

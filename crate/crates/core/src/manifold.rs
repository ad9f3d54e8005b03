//! Transform update machinery: Euclidean gradients with respect to `Phi`, the natural
//! gradient on the orthogonal group, polar projection and an Armijo backtracking step.

use nalgebra::DMatrix;

use crate::error::{Result, TlnmfError};
use crate::signal::FrameMatrix;
use crate::transform::{transform_frames, Floor, OrthoTransform, Spectrogram};

/// Ratio `sigma_min / sigma_max` below which projection is refused.
pub const PROJECTION_RCOND: f64 = 1e-12;

/// Euclidean gradient and the matching natural-gradient direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub euclidean: DMatrix<f64>,
    pub natural: DMatrix<f64>,
}

impl GradientPair {
    pub fn new(phi: &OrthoTransform, euclidean: DMatrix<f64>) -> Self {
        let natural = natural_gradient(phi, &euclidean);
        GradientPair { euclidean, natural }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub gamma_init: f64,
    pub shrink: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
    /// Factor applied to an accepted step to seed the next search.
    pub grow: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            gamma_init: 1.0,
            shrink: 0.5,
            armijo_c: 1e-4,
            max_backtracks: 60,
            grow: 2.0,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma_init > 0.0
            && self.gamma_init.is_finite()
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.grow >= 1.0
            && self.grow.is_finite();
        if ok {
            Ok(())
        } else {
            Err(TlnmfError::InvalidParameter(format!(
                "line search parameters out of range: {self:?}"
            )))
        }
    }
}

/// Result of one backtracking search. `gamma == 0` means no step satisfied the
/// sufficient-decrease test and `phi` is the input transform.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub gamma: f64,
    pub phi: OrthoTransform,
    pub objective: f64,
    pub evaluations: usize,
}

impl StepOutcome {
    pub fn stalled(&self) -> bool {
        self.gamma == 0.0
    }
}

/// `2 (Delta ∘ X) Yᵀ` with `X = Phi Y`, `Delta = vhat^-1 - V^-1`.
///
/// Entries where `|X|^2` sits below the spectrogram floor contribute nothing, since the
/// floored objective is flat there.
pub fn gradient_phi(
    phi: &DMatrix<f64>,
    frames: &FrameMatrix,
    vhat: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let x = transform_frames(phi, frames)?;
    if vhat.shape() != x.shape() {
        return Err(TlnmfError::shape(
            "gradient_phi model",
            x.shape(),
            vhat.shape(),
        ));
    }
    let v = Spectrogram::from_coefficients(&x, Floor::default())?;
    let weighted = data_term_weights(&x, &v, vhat, v.floor());
    Ok(weighted * frames.data().transpose() * 2.0)
}

/// `(vhat^-1 - V^-1) ∘ X`, zero where `V` was floored.
fn data_term_weights(
    x: &DMatrix<f64>,
    v: &Spectrogram,
    vhat: &DMatrix<f64>,
    floor: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let xi = x[(i, j)];
        if xi * xi < floor {
            0.0
        } else {
            (1.0 / vhat[(i, j)].max(floor) - 1.0 / v.values()[(i, j)]) * xi
        }
    })
}

/// Gradient of the supervised objective, where `Phi` also enters the dictionary
/// `W = |Phi Y_tr|^2`:
/// `2 (Delta ∘ X) Yᵀ + 2 (Xi ∘ X_tr) Y_trᵀ` with `Xi = Delta' Hᵀ` and
/// `Delta' = (vhat - V) / vhat^2`.
pub fn gradient_phi_supervised(
    phi: &DMatrix<f64>,
    frames_mix: &FrameMatrix,
    frames_tr: &FrameMatrix,
    h: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let x = transform_frames(phi, frames_mix)?;
    let x_tr = transform_frames(phi, frames_tr)?;
    if h.shape() != (frames_tr.num_frames(), frames_mix.num_frames()) {
        return Err(TlnmfError::shape(
            "gradient_phi_supervised activations",
            (frames_tr.num_frames(), frames_mix.num_frames()),
            h.shape(),
        ));
    }
    let v = Spectrogram::from_coefficients(&x, Floor::default())?;
    let floor = v.floor();
    let w = x_tr.map(|c| c * c);
    let model = &w * h;

    let first = data_term_weights(&x, &v, &model, floor) * frames_mix.data().transpose();

    let delta_prime = DMatrix::from_fn(model.nrows(), model.ncols(), |i, j| {
        let m = model[(i, j)];
        if m < floor {
            0.0
        } else {
            (m - v.values()[(i, j)]) / (m * m)
        }
    });
    let xi = delta_prime * h.transpose();
    let second = xi.component_mul(&x_tr) * frames_tr.data().transpose();
    Ok((first + second) * 2.0)
}

/// `Omega = Phi gradᵀ Phi - grad`.
pub fn natural_gradient(phi: &OrthoTransform, grad: &DMatrix<f64>) -> DMatrix<f64> {
    let p = phi.matrix();
    p * grad.transpose() * p - grad
}

/// Polar factor `U Vᵀ` of `a = U S Vᵀ`, the Frobenius-nearest orthogonal matrix.
pub fn project_orthogonal(a: &DMatrix<f64>) -> Result<OrthoTransform> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(TlnmfError::shape(
            "project_orthogonal",
            (a.nrows(), a.nrows()),
            a.shape(),
        ));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(TlnmfError::NonFinite("projection input"));
    }
    let svd =
        a.clone()
            .try_svd(true, true, f64::EPSILON, 0)
            .ok_or(TlnmfError::DegenerateProjection {
                smallest: f64::NAN,
                largest: f64::NAN,
            })?;
    let largest = svd.singular_values.max();
    let smallest = svd.singular_values.min();
    if !(smallest > PROJECTION_RCOND * largest) {
        return Err(TlnmfError::DegenerateProjection { smallest, largest });
    }
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => unreachable!("singular vectors were requested"),
    };
    Ok(OrthoTransform::from_orthogonal_unchecked(u * v_t))
}

/// Backtracking over `gamma_init * shrink^j`, `j = 0..=max_backtracks`, accepting the
/// first candidate `pi(Phi + gamma Omega)` with
/// `eval(candidate) <= current - armijo_c * gamma * ||Omega||_F^2`.
///
/// `current` must be `eval(phi)`.
pub fn armijo_step<F>(
    phi: &OrthoTransform,
    omega: &DMatrix<f64>,
    current: f64,
    mut eval: F,
    cfg: &LineSearchConfig,
) -> Result<StepOutcome>
where
    F: FnMut(&OrthoTransform) -> Result<f64>,
{
    cfg.validate()?;
    if omega.shape() != phi.matrix().shape() {
        return Err(TlnmfError::shape(
            "armijo_step direction",
            phi.matrix().shape(),
            omega.shape(),
        ));
    }
    let slope = omega.norm_squared();
    if slope == 0.0 {
        return Err(TlnmfError::ZeroDirection);
    }
    if !current.is_finite() {
        return Err(TlnmfError::NonFinite("line search starting objective"));
    }
    let mut gamma = cfg.gamma_init;
    for j in 0..=cfg.max_backtracks {
        let candidate = project_orthogonal(&(phi.matrix() + omega * gamma))?;
        let value = eval(&candidate)?;
        if value.is_finite() && value <= current - cfg.armijo_c * gamma * slope {
            return Ok(StepOutcome {
                gamma,
                phi: candidate,
                objective: value,
                evaluations: j + 1,
            });
        }
        gamma *= cfg.shrink;
    }
    Ok(StepOutcome {
        gamma: 0.0,
        phi: phi.clone(),
        objective: current,
        evaluations: cfg.max_backtracks + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::random_orthogonal;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_vanishes_on_exact_model() {
        let frames = FrameMatrix::new(dmatrix![1.0, -2.0; 0.5, 3.0], 1, None).unwrap();
        let phi = random_orthogonal(2, 3).unwrap();
        let x = phi.matrix() * frames.data();
        let g = gradient_phi(phi.matrix(), &frames, &x.map(|c| c * c)).unwrap();
        assert!(g.amax() < 1e-14);
    }

    #[test]
    fn scalar_gradient() {
        let frames = FrameMatrix::new(dmatrix![1.0], 1, None).unwrap();
        let g = gradient_phi(&dmatrix![1.0], &frames, &dmatrix![2.0]).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn supervised_gradient_vanishes_on_exact_model() {
        // Y_tr = [Y, 0]: selecting the mixture itself reproduces V exactly
        let y = dmatrix![1.0, -2.0; 0.5, 3.0];
        let mix = FrameMatrix::new(y.clone(), 1, None).unwrap();
        let mut tr = DMatrix::zeros(2, 3);
        tr.columns_mut(0, 2).copy_from(&y);
        tr[(0, 2)] = 0.7;
        let tr = FrameMatrix::new(tr, 1, None).unwrap();
        let h = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        let phi = random_orthogonal(2, 8).unwrap();
        let g = gradient_phi_supervised(phi.matrix(), &mix, &tr, &h).unwrap();
        assert!(g.amax() < 1e-13, "{g}");
    }

    #[test]
    fn zero_activations_reduce_to_first_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mix = FrameMatrix::new(
            DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0)),
            1,
            None,
        )
        .unwrap();
        let tr = FrameMatrix::new(
            DMatrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0)),
            1,
            None,
        )
        .unwrap();
        let phi = random_orthogonal(3, 1).unwrap();
        let h = DMatrix::zeros(5, 4);
        let g = gradient_phi_supervised(phi.matrix(), &mix, &tr, &h).unwrap();
        let v =
            Spectrogram::from_coefficients(&(phi.matrix() * mix.data()), Floor::default()).unwrap();
        let floored = DMatrix::from_element(3, 4, v.floor());
        let first = gradient_phi(phi.matrix(), &mix, &floored).unwrap();
        assert_eq!(g, first);
    }

    #[test]
    fn natural_gradient_at_identity_is_skew() {
        let eye = OrthoTransform::new(DMatrix::identity(3, 3)).unwrap();
        let g = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0; 7.0, 8.0, 10.0];
        assert_eq!(natural_gradient(&eye, &g), g.transpose() - &g);
    }

    #[test]
    fn symmetric_part_is_annihilated() {
        let phi = random_orthogonal(4, 2).unwrap();
        let s = dmatrix![2.0, 1.0, 0.0, 3.0; 1.0, -1.0, 4.0, 0.5; 0.0, 4.0, 1.0, 2.0; 3.0, 0.5, 2.0, 0.0];
        let omega = natural_gradient(&phi, &(phi.matrix() * s));
        assert!(omega.amax() < 1e-13);
    }

    #[test]
    fn natural_gradient_is_a_descent_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for seed in 0..20 {
            let phi = random_orthogonal(5, seed).unwrap();
            let g = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
            let pair = GradientPair::new(&phi, g);
            let slope = pair.euclidean.dot(&pair.natural);
            assert!(slope <= 0.0);
            // <grad, Omega> = -||Omega||^2 / 2 on the orthogonal group
            assert_abs_diff_eq!(slope, -0.5 * pair.natural.norm_squared(), epsilon = 1e-12);
            let skew = phi.matrix().transpose() * &pair.natural;
            assert!((&skew + skew.transpose()).amax() < 1e-8);
        }
    }

    #[test]
    fn projection_examples() {
        let phi = random_orthogonal(6, 4).unwrap();
        let p = project_orthogonal(phi.matrix()).unwrap();
        assert!((p.matrix() - phi.matrix()).amax() < 1e-12);

        let p = project_orthogonal(&dmatrix![2.0, 0.0; 0.0, 3.0]).unwrap();
        assert!((p.matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);

        let p = project_orthogonal(&dmatrix![0.0, 2.0; 1.0, 0.0]).unwrap();
        assert!((p.matrix() - dmatrix![0.0, 1.0; 1.0, 0.0]).amax() < 1e-15);
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a = DMatrix::from_fn(7, 7, |_, _| rng.random_range(-1.0..1.0));
            let once = project_orthogonal(&a).unwrap();
            let twice = project_orthogonal(once.matrix()).unwrap();
            assert!((once.matrix() - twice.matrix()).amax() < 1e-12);
            assert!(once.orthogonality_error() < 1e-12);
        }
    }

    #[test]
    fn singular_input_is_refused() {
        let err = project_orthogonal(&dmatrix![1.0, 2.0; 2.0, 4.0]).unwrap_err();
        assert!(err.to_string().contains("degenerate projection"));
    }

    #[test]
    fn armijo_decreases_quadratic_toy() {
        let target = random_orthogonal(5, 1).unwrap();
        let start =
            project_orthogonal(&(target.matrix() + DMatrix::from_element(5, 5, 0.05))).unwrap();
        let cost = |p: &OrthoTransform| Ok((p.matrix() - target.matrix()).norm_squared());
        let current = cost(&start).unwrap();
        let grad = (start.matrix() - target.matrix()) * 2.0;
        let omega = natural_gradient(&start, &grad);
        let out = armijo_step(&start, &omega, current, cost, &LineSearchConfig::default()).unwrap();
        assert!(out.gamma > 0.0);
        assert!(out.objective < current);
        assert!(out.phi.orthogonality_error() < 1e-12);
    }

    #[test]
    fn zero_direction_is_reported() {
        let phi = random_orthogonal(3, 1).unwrap();
        let err = armijo_step(
            &phi,
            &DMatrix::zeros(3, 3),
            1.0,
            |_| Ok(0.0),
            &LineSearchConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TlnmfError::ZeroDirection));
    }

    #[test]
    fn total_failure_stalls_without_moving() {
        let phi = random_orthogonal(3, 1).unwrap();
        let omega = natural_gradient(&phi, &DMatrix::from_element(3, 3, 1.0));
        let cfg = LineSearchConfig {
            max_backtracks: 5,
            ..LineSearchConfig::default()
        };
        let out = armijo_step(&phi, &omega, 1.0, |_| Ok(2.0), &cfg).unwrap();
        assert!(out.stalled());
        assert_eq!(out.phi, phi);
        assert_eq!(out.objective, 1.0);
        assert_eq!(out.evaluations, 6);
    }

    #[test]
    fn callback_errors_propagate() {
        let phi = random_orthogonal(3, 1).unwrap();
        let omega = natural_gradient(&phi, &DMatrix::from_element(3, 3, 1.0));
        let res = armijo_step(
            &phi,
            &omega,
            1.0,
            |_| Err(TlnmfError::NonFinite("x")),
            &LineSearchConfig::default(),
        );
        assert!(res.is_err());
    }
}

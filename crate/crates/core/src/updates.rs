//! Multiplicative majorization-minimization updates for IS-NMF with an l1 penalty on H.
//!
//! The model product `WH` is floored at the spectrogram floor before it is raised to
//! negative powers. Exact zeros in `W` or `H` stay zero under every update.

use nalgebra::DMatrix;

use crate::error::{Result, TlnmfError};
use crate::objective::SupervisedHyperparams;
use crate::transform::Spectrogram;

/// Nonnegative dictionary `W` (`M x K`) and activations `H` (`K x N`).
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl Factorization {
    pub fn new(w: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        if w.ncols() != h.nrows() {
            return Err(TlnmfError::shape(
                "Factorization::new",
                (h.nrows(), h.ncols()),
                h.shape(),
            ));
        }
        if w.iter()
            .chain(h.iter())
            .any(|&x| !(x >= 0.0) || !x.is_finite())
        {
            return Err(TlnmfError::InvalidParameter(
                "factors must be finite and nonnegative".into(),
            ));
        }
        Ok(Factorization { w, h })
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.w * &self.h
    }
}

fn check_shapes(v: &Spectrogram, w: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<()> {
    let (m, n) = v.shape();
    if w.nrows() != m || w.ncols() != h.nrows() {
        return Err(TlnmfError::shape("dictionary", (m, h.nrows()), w.shape()));
    }
    if h.ncols() != n {
        return Err(TlnmfError::shape("activations", (w.ncols(), n), h.shape()));
    }
    Ok(())
}

/// Returns `(V ∘ (WH)^-2, (WH)^-1)` with `WH` floored.
fn model_ratios(
    v: &Spectrogram,
    w: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let floor = v.floor();
    let inv = (w * h).map(|x| 1.0 / x.max(floor));
    let weighted = v.values().zip_map(&inv, |vv, i| vv * i * i);
    (weighted, inv)
}

fn multiplicative_step(
    current: &DMatrix<f64>,
    num: &DMatrix<f64>,
    den: &DMatrix<f64>,
) -> DMatrix<f64> {
    DMatrix::from_fn(current.nrows(), current.ncols(), |i, j| {
        let (x, d) = (current[(i, j)], den[(i, j)]);
        if x == 0.0 || !(d > 0.0) {
            x
        } else {
            x * (num[(i, j)] / d).sqrt()
        }
    })
}

/// `H ∘ [Wᵀ((WH)^-2 ∘ V) / (Wᵀ(WH)^-1 + penalty)]^(1/2)`.
pub fn update_h(
    v: &Spectrogram,
    f: &Factorization,
    penalty: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_shapes(v, &f.w, &f.h)?;
    if penalty.shape() != f.h.shape() {
        return Err(TlnmfError::shape("penalty", f.h.shape(), penalty.shape()));
    }
    let (weighted, inv) = model_ratios(v, &f.w, &f.h);
    let wt = f.w.transpose();
    let num = &wt * weighted;
    let den = &wt * inv + penalty;
    Ok(multiplicative_step(&f.h, &num, &den))
}

/// `W ∘ [((WH)^-2 ∘ V)Hᵀ / (((WH)^-1 + lambda_scaled)Hᵀ)]^(1/2)`.
///
/// With unit-l1 columns the extra `lambda_scaled` term makes this an MM step on
/// `D(V|WH) + lambda_scaled * sum_k ||w_k||_1 ||h_k||_1`, which equals the penalized
/// objective once [`normalize_columns`] has run.
pub fn update_w(v: &Spectrogram, f: &Factorization, lambda_scaled: f64) -> Result<DMatrix<f64>> {
    check_shapes(v, &f.w, &f.h)?;
    let (weighted, inv) = model_ratios(v, &f.w, &f.h);
    let ht = f.h.transpose();
    let num = weighted * &ht;
    let den = inv.add_scalar(lambda_scaled) * &ht;
    Ok(multiplicative_step(&f.w, &num, &den))
}

/// Rescales each `w_k` to unit l1 norm and `h_k` by the inverse factor, leaving `WH`
/// unchanged. An all-zero column becomes uniform `1/M` and its activation row is zeroed.
pub fn normalize_columns(f: &Factorization) -> Factorization {
    let mut w = f.w.clone();
    let mut h = f.h.clone();
    let m = w.nrows() as f64;
    for k in 0..w.ncols() {
        let norm: f64 = w.column(k).sum();
        if norm > 0.0 {
            w.column_mut(k).unscale_mut(norm);
            h.row_mut(k).scale_mut(norm);
        } else {
            log::warn!("dictionary column {k} vanished; resetting to uniform");
            w.column_mut(k).fill(1.0 / m);
            h.row_mut(k).fill(0.0);
        }
    }
    Factorization { w, h }
}

/// Block penalty for stacked activations: the first `n_sp` rows carry
/// `M lambda_sp / N_sp`, the remaining `n_no` rows `M lambda_no / N_no`.
pub fn supervised_penalty(
    frame_len: usize,
    num_frames: usize,
    shp: &SupervisedHyperparams,
    n_sp: usize,
    n_no: usize,
) -> DMatrix<f64> {
    let (l_sp, l_no) = shp.scaled_lambdas(frame_len, n_sp, n_no);
    DMatrix::from_fn(
        n_sp + n_no,
        num_frames,
        |i, _| if i < n_sp { l_sp } else { l_no },
    )
}

/// Activation update of the supervised problem, where `w` is the stacked training
/// spectrogram `[|Phi Y_sp|^2, |Phi Y_no|^2]`.
pub fn update_h_supervised(
    v: &Spectrogram,
    w: &DMatrix<f64>,
    h: &DMatrix<f64>,
    shp: &SupervisedHyperparams,
    n_sp: usize,
    n_no: usize,
) -> Result<DMatrix<f64>> {
    if h.nrows() != n_sp + n_no || w.ncols() != n_sp + n_no {
        return Err(TlnmfError::shape(
            "stacked activations",
            (n_sp + n_no, v.shape().1),
            h.shape(),
        ));
    }
    check_shapes(v, w, h)?;
    let (m, n) = v.shape();
    let penalty = supervised_penalty(m, n, shp, n_sp, n_no);
    let (weighted, inv) = model_ratios(v, w, h);
    let wt = w.transpose();
    let num = &wt * weighted;
    let den = &wt * inv + penalty;
    Ok(multiplicative_step(h, &num, &den))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{floored_divergence, objective_from_spectrogram, Hyperparams};
    use crate::transform::Floor;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spectrogram(values: DMatrix<f64>) -> Spectrogram {
        Spectrogram::from_coefficients(&values.map(f64::sqrt), Floor::default()).unwrap()
    }

    fn uniform(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.random_range(1e-3..1.0))
    }

    #[test]
    fn exact_fit_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = normalize_columns(
            &Factorization::new(uniform(5, 2, &mut rng), uniform(2, 6, &mut rng)).unwrap(),
        );
        let v = spectrogram(f.product());
        let h = update_h(&v, &f, &DMatrix::zeros(2, 6)).unwrap();
        let w = update_w(&v, &f, 0.0).unwrap();
        for (a, b) in h.iter().zip(f.h.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * b);
        }
        for (a, b) in w.iter().zip(f.w.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * b);
        }
    }

    #[test]
    fn scalar_updates() {
        let one = Factorization::new(dmatrix![1.0], dmatrix![1.0]).unwrap();
        let h = update_h(&spectrogram(dmatrix![4.0]), &one, &dmatrix![0.0]).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 2.0, epsilon = 1e-15);
        let w = update_w(&spectrogram(dmatrix![9.0]), &one, 0.0).unwrap();
        assert_abs_diff_eq!(w[(0, 0)], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn huge_penalty_drives_activations_to_zero() {
        let one = Factorization::new(dmatrix![1.0], dmatrix![1.0]).unwrap();
        let h = update_h(&spectrogram(dmatrix![4.0]), &one, &dmatrix![1e30]).unwrap();
        assert!(h[(0, 0)] < 1e-14);
    }

    #[test]
    fn zero_row_of_dictionary_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = uniform(4, 2, &mut rng);
        w.row_mut(1).fill(0.0);
        let f = Factorization::new(w, uniform(2, 5, &mut rng)).unwrap();
        let v = spectrogram(uniform(4, 5, &mut rng));
        let w_new = update_w(&v, &f, 3.0).unwrap();
        assert!(w_new.row(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_columns_rescales_pairs() {
        let f = Factorization::new(dmatrix![2.0; 2.0], dmatrix![3.0]).unwrap();
        let g = normalize_columns(&f);
        assert_eq!(g.w, dmatrix![0.5; 0.5]);
        assert_eq!(g.h, dmatrix![12.0]);
        assert_eq!(g.product(), f.product());
        assert_eq!(normalize_columns(&g), g);
    }

    #[test]
    fn vanished_column_resets_to_uniform() {
        let f = Factorization::new(dmatrix![0.0, 1.0; 0.0, 3.0], dmatrix![5.0; 2.0]).unwrap();
        let g = normalize_columns(&f);
        assert_eq!(g.w.column(0).as_slice(), &[0.5, 0.5]);
        assert_eq!(g.h[(0, 0)], 0.0);
        assert_eq!(g.w.column(1).as_slice(), &[0.25, 0.75]);
        assert_eq!(g.h[(1, 0)], 8.0);
    }

    #[test]
    fn block_penalty_degenerates_to_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n, n_sp, n_no) = (4, 5, 2, 3);
        let w = uniform(m, n_sp + n_no, &mut rng);
        let h = uniform(n_sp + n_no, n, &mut rng);
        let v = spectrogram(uniform(m, n, &mut rng));
        // lambda_sp / N_sp = lambda_no / N_no = 0.1
        let shp = SupervisedHyperparams::new(0.2, 0.3, 1e-7).unwrap();
        let sup = update_h_supervised(&v, &w, &h, &shp, n_sp, n_no).unwrap();
        let f = Factorization::new(w, h).unwrap();
        let plain = update_h(
            &v,
            &f,
            &DMatrix::from_element(n_sp + n_no, n, 0.1 * m as f64),
        )
        .unwrap();
        for (a, b) in sup.iter().zip(plain.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14 * b.abs().max(1.0));
        }
    }

    #[test]
    fn scalar_block_case_matches_hand_penalty() {
        let v = spectrogram(dmatrix![3.0]);
        let w = dmatrix![1.0, 2.0];
        let h = dmatrix![0.5; 0.7];
        let shp = SupervisedHyperparams::new(0.4, 0.9, 1e-7).unwrap();
        let sup = update_h_supervised(&v, &w, &h, &shp, 1, 1).unwrap();
        // W H = 1.9; num = [3/1.9^2, 6/1.9^2]; den = [1/1.9 + 0.4, 2/1.9 + 0.9]
        let wh = 1.9f64;
        let expect0 = 0.5 * ((3.0 / (wh * wh)) / (1.0 / wh + 0.4)).sqrt();
        let expect1 = 0.7 * ((6.0 / (wh * wh)) / (2.0 / wh + 0.9)).sqrt();
        assert_abs_diff_eq!(sup[(0, 0)], expect0, epsilon = 1e-15);
        assert_abs_diff_eq!(sup[(1, 0)], expect1, epsilon = 1e-15);
    }

    #[test]
    fn supervised_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = uniform(4, 3, &mut rng);
        let h = uniform(3, 5, &mut rng);
        let v = spectrogram(&w * &h);
        let shp = SupervisedHyperparams::new(0.0, 0.0, 1e-7).unwrap();
        let out = update_h_supervised(&v, &w, &h, &shp, 1, 2).unwrap();
        for (a, b) in out.iter().zip(h.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12 * b);
        }
    }

    #[test]
    fn shape_errors() {
        let v = spectrogram(DMatrix::from_element(3, 4, 1.0));
        let f = Factorization::new(
            DMatrix::from_element(2, 2, 1.0),
            DMatrix::from_element(2, 4, 1.0),
        )
        .unwrap();
        assert!(update_h(&v, &f, &DMatrix::zeros(2, 4)).is_err());
        assert!(update_w(&v, &f, 0.0).is_err());
    }

    fn instance(seed: u64, m: usize, k: usize, n: usize) -> (Spectrogram, Factorization) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = spectrogram(DMatrix::from_fn(m, n, |_, _| {
            rng.random_range(0.0..1.0f64).powi(3) * 4.0
        }));
        let f = Factorization::new(uniform(m, k, &mut rng), uniform(k, n, &mut rng)).unwrap();
        (v, normalize_columns(&f))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn h_update_never_increases_objective(
            seed in any::<u64>(), m in 1usize..=16, k in 1usize..=4, n in 1usize..=16,
            lambda in prop_oneof![Just(0.0), 1e-3..10.0],
        ) {
            let (v, f) = instance(seed, m, k, n);
            let hp = Hyperparams::new(k, lambda, 1e-7).unwrap();
            let before = objective_from_spectrogram(&v, &f.w, &f.h, &hp).unwrap();
            let penalty = DMatrix::from_element(k, n, hp.scaled_lambda(m));
            let h = update_h(&v, &f, &penalty).unwrap();
            prop_assert!(h.iter().all(|&x| x >= 0.0));
            let after = objective_from_spectrogram(&v, &f.w, &h, &hp).unwrap();
            prop_assert!(after <= before * (1.0 + 1e-9), "{before} -> {after}");
        }

        #[test]
        fn w_update_then_normalize_never_increases_objective(
            seed in any::<u64>(), m in 1usize..=16, k in 1usize..=4, n in 1usize..=16,
            lambda in prop_oneof![Just(0.0), 1e-3..10.0],
        ) {
            let (v, f) = instance(seed, m, k, n);
            let hp = Hyperparams::new(k, lambda, 1e-7).unwrap();
            let before = objective_from_spectrogram(&v, &f.w, &f.h, &hp).unwrap();
            let w = update_w(&v, &f, hp.scaled_lambda(m)).unwrap();
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            let g = normalize_columns(&Factorization { w, h: f.h.clone() });
            let after = objective_from_spectrogram(&v, &g.w, &g.h, &hp).unwrap();
            prop_assert!(after <= before * (1.0 + 1e-9), "{before} -> {after}");
        }

        #[test]
        fn normalization_preserves_product_and_unpenalized_objective(
            seed in any::<u64>(), m in 1usize..=16, k in 1usize..=4, n in 1usize..=16,
            scale in 0.1f64..10.0,
        ) {
            let (v, f) = instance(seed, m, k, n);
            let scaled = Factorization { w: &f.w * scale, h: f.h.clone() };
            let g = normalize_columns(&scaled);
            let (p, q) = (scaled.product(), g.product());
            for (a, b) in p.iter().zip(q.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            }
            for col in g.w.column_iter() {
                prop_assert!((col.sum() - 1.0).abs() <= 1e-12);
            }
            let (c0, c1) = (floored_divergence(&v, &p), floored_divergence(&v, &q));
            prop_assert!((c0 - c1).abs() <= 1e-9 * c0.abs().max(1e-12));
        }

        #[test]
        fn supervised_h_update_never_increases_objective(
            seed in any::<u64>(), m in 1usize..=16, n in 1usize..=16,
            n_sp in 1usize..=4, n_no in 1usize..=4,
            lambda_sp in 0.0f64..2.0, lambda_no in 0.0f64..2.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = spectrogram(uniform(m, n, &mut rng));
            let w = uniform(m, n_sp + n_no, &mut rng);
            let h = uniform(n_sp + n_no, n, &mut rng);
            let shp = SupervisedHyperparams::new(lambda_sp, lambda_no, 1e-7).unwrap();
            let penalty = supervised_penalty(m, n, &shp, n_sp, n_no);
            let cost = |h: &DMatrix<f64>| floored_divergence(&v, &(&w * h)) + penalty.component_mul(h).sum();
            let before = cost(&h);
            let h_new = update_h_supervised(&v, &w, &h, &shp, n_sp, n_no).unwrap();
            prop_assert!(h_new.iter().all(|&x| x >= 0.0));
            let after = cost(&h_new);
            prop_assert!(after <= before * (1.0 + 1e-9), "{before} -> {after}");
        }
    }
}

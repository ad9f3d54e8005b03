//! Source-separation quality: SDR, SIR and SAR from an orthogonal decomposition of the
//! estimate into target, interference and artifact parts (gain-only projections).

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::csvio;
use crate::error::{Result, TlnmfError};
use crate::signal::Signal;

/// Scores are capped to this magnitude in dB so that perfect estimates stay finite.
pub const DB_CAP: f64 = 300.0;

const GRAM_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BssScores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// `estimate = target + interference + artifacts`.
#[derive(Debug, Clone, PartialEq)]
pub struct BssComponents {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifacts: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn energy(a: &[f64]) -> f64 {
    dot(a, a)
}

fn ratio_db(num: f64, den: f64) -> f64 {
    let r = 10.0 * (num / den).log10();
    if r.is_nan() {
        0.0
    } else {
        r.clamp(-DB_CAP, DB_CAP)
    }
}

pub fn bss_decompose(
    estimate: &Signal,
    references: &[Signal],
    target_index: usize,
) -> Result<BssComponents> {
    if target_index >= references.len() {
        return Err(TlnmfError::InvalidParameter(format!(
            "target index {target_index} out of range for {} references",
            references.len()
        )));
    }
    let len = estimate.len();
    for r in references {
        if r.len() != len {
            return Err(TlnmfError::shape(
                "bss_eval reference",
                (len, 1),
                (r.len(), 1),
            ));
        }
    }
    let e = estimate.samples();
    if energy(e) == 0.0 {
        return Err(TlnmfError::ZeroEnergy("estimate"));
    }
    if references.iter().any(|r| energy(r.samples()) == 0.0) {
        return Err(TlnmfError::ZeroEnergy("reference"));
    }

    let s = references[target_index].samples();
    let gain = dot(e, s) / energy(s);
    let target: Vec<f64> = s.iter().map(|x| gain * x).collect();

    let k = references.len();
    let gram = DMatrix::from_fn(k, k, |i, j| {
        dot(references[i].samples(), references[j].samples())
    });
    let rhs = DVector::from_fn(k, |i, _| dot(references[i].samples(), e));
    let max_diag = gram.diagonal().max();
    let chol = gram.cholesky().ok_or(TlnmfError::RankDeficient)?;
    let min_pivot = chol.l_dirty().diagonal().map(|d| d * d).min();
    if min_pivot <= GRAM_RCOND * max_diag {
        return Err(TlnmfError::RankDeficient);
    }
    let coeffs = chol.solve(&rhs);
    let mut span = vec![0.0; len];
    for (c, r) in coeffs.iter().zip(references) {
        for (acc, x) in span.iter_mut().zip(r.samples()) {
            *acc += c * x;
        }
    }
    let interference: Vec<f64> = span.iter().zip(&target).map(|(p, t)| p - t).collect();
    let artifacts: Vec<f64> = e.iter().zip(&span).map(|(x, p)| x - p).collect();
    Ok(BssComponents {
        target,
        interference,
        artifacts,
    })
}

/// SDR, SIR and SAR of `estimate` against `references[target_index]`.
pub fn bss_eval(
    estimate: &Signal,
    references: &[Signal],
    target_index: usize,
) -> Result<BssScores> {
    let c = bss_decompose(estimate, references, target_index)?;
    let t = energy(&c.target);
    let i = energy(&c.interference);
    let a = energy(&c.artifacts);
    Ok(BssScores {
        sdr: ratio_db(t, i + a),
        sir: ratio_db(t, i),
        sar: ratio_db(t + i, a),
    })
}

/// One row of a scores table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub method: String,
    pub source: String,
    pub scores: BssScores,
}

/// Writes `method,source,sdr,sir,sar` rows.
pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csvio::writer(path)?;
    let err = |e: csv::Error| csvio::csv_error(path, e);
    w.write_record(["method", "source", "sdr", "sir", "sar"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.source.clone(),
            r.scores.sdr.to_string(),
            r.scores.sir.to_string(),
            r.scores.sar.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| TlnmfError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sig(v: Vec<f64>) -> Signal {
        Signal::new(v, 8000).unwrap()
    }

    fn noise(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn perfect_estimate_hits_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let refs = vec![sig(noise(256, &mut rng)), sig(noise(256, &mut rng))];
        let s = bss_eval(&refs[0], &refs, 0).unwrap();
        assert!(s.sdr >= 250.0 && s.sir >= 250.0 && s.sar >= 250.0, "{s:?}");
    }

    #[test]
    fn components_reassemble_estimate_and_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let refs = vec![sig(noise(300, &mut rng)), sig(noise(300, &mut rng))];
        let est = sig(noise(300, &mut rng));
        let c = bss_decompose(&est, &refs, 1).unwrap();
        for i in 0..300 {
            let sum = c.target[i] + c.interference[i] + c.artifacts[i];
            assert!((sum - est.samples()[i]).abs() < 1e-12);
        }
        let scale = energy(est.samples());
        assert!(dot(&c.target, &c.interference).abs() < 1e-9 * scale);
        assert!(dot(&c.target, &c.artifacts).abs() < 1e-9 * scale);
        assert!(dot(&c.interference, &c.artifacts).abs() < 1e-9 * scale);
    }

    #[test]
    fn pure_interference_mixture_has_no_artifacts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let refs = vec![sig(noise(400, &mut rng)), sig(noise(400, &mut rng))];
        let mix: Vec<f64> = refs[0]
            .samples()
            .iter()
            .zip(refs[1].samples())
            .map(|(a, b)| a + 0.1 * b)
            .collect();
        let s = bss_eval(&sig(mix), &refs, 0).unwrap();
        assert!((s.sdr - s.sir).abs() < 0.01, "{s:?}");
        assert!(s.sar > 100.0);
    }

    /// Gram-Schmidt on random vectors: `count` mutually orthogonal unit-power signals.
    fn orthogonal_set(count: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out: Vec<Vec<f64>> = Vec::new();
        for _ in 0..count {
            let mut v = noise(len, &mut rng);
            for u in &out {
                let c = dot(&v, u) / energy(u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
            let n = energy(&v).sqrt();
            out.push(v.into_iter().map(|x| x / n).collect());
        }
        out
    }

    #[test]
    fn orthogonal_noise_is_pure_artifact() {
        let set = orthogonal_set(3, 500, 4);
        let refs = vec![sig(set[0].clone()), sig(set[1].clone())];
        let est: Vec<f64> = set[0]
            .iter()
            .zip(&set[2])
            .map(|(s, n)| s + 0.1 * n)
            .collect();
        let s = bss_eval(&sig(est), &refs, 0).unwrap();
        assert_eq!(s.sir, DB_CAP);
        assert!((s.sdr - 20.0).abs() < 1e-9, "{s:?}");
        assert!((s.sar - 20.0).abs() < 1e-9, "{s:?}");
    }

    #[test]
    fn half_mixture_baseline_scores_zero() {
        let set = orthogonal_set(2, 500, 5);
        let refs = vec![sig(set[0].clone()), sig(set[1].clone())];
        let est: Vec<f64> = set[0]
            .iter()
            .zip(&set[1])
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        for target in 0..2 {
            let s = bss_eval(&sig(est.clone()), &refs, target).unwrap();
            assert!(s.sdr.abs() < 1e-9 && s.sir.abs() < 1e-9, "{s:?}");
            assert_eq!(s.sar, DB_CAP);
        }
    }

    #[test]
    fn sir_is_gain_invariant_and_sdr_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let refs = vec![sig(noise(200, &mut rng)), sig(noise(200, &mut rng))];
        let est = noise(200, &mut rng);
        let base = bss_eval(&sig(est.clone()), &refs, 0).unwrap();
        for c in [0.01, 3.0, 250.0] {
            let scaled = sig(est.iter().map(|x| c * x).collect());
            let s = bss_eval(&scaled, &refs, 0).unwrap();
            assert!((s.sir - base.sir).abs() < 1e-9);
            assert!((s.sdr - base.sdr).abs() < 1e-9);
        }
        assert!(base.sdr <= base.sir.min(base.sar) + 3.02);
    }

    #[test]
    fn zero_energy_is_rejected() {
        let refs = vec![sig(vec![1.0, 2.0]), sig(vec![0.0, 1.0])];
        assert!(matches!(
            bss_eval(&sig(vec![0.0, 0.0]), &refs, 0),
            Err(TlnmfError::ZeroEnergy("estimate"))
        ));
        let zero_ref = vec![sig(vec![1.0, 2.0]), sig(vec![0.0, 0.0])];
        assert!(matches!(
            bss_eval(&sig(vec![1.0, 0.0]), &zero_ref, 0),
            Err(TlnmfError::ZeroEnergy("reference"))
        ));
    }

    #[test]
    fn dependent_references_are_rejected() {
        let refs = vec![sig(vec![1.0, 2.0, 3.0]), sig(vec![2.0, 4.0, 6.0])];
        assert!(matches!(
            bss_eval(&sig(vec![1.0, 0.0, 0.0]), &refs, 0),
            Err(TlnmfError::RankDeficient)
        ));
    }

    #[test]
    fn length_and_index_are_checked() {
        let refs = vec![sig(vec![1.0, 2.0, 3.0])];
        assert!(bss_eval(&sig(vec![1.0, 0.0]), &refs, 0).is_err());
        assert!(bss_eval(&sig(vec![1.0, 0.0, 1.0]), &refs, 1).is_err());
    }

    #[test]
    fn scores_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scores.csv");
        let s = BssScores {
            sdr: 1.5,
            sir: 2.0,
            sar: -0.25,
        };
        write_scores(
            &p,
            &[ScoreRow {
                method: "tlnmf".into(),
                source: "speech".into(),
                scores: s,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "method,source,sdr,sir,sar\ntlnmf,speech,1.5,2,-0.25\n"
        );
    }
}

//! Seeded synthetic data: a tonal test signal, exact low-rank frame matrices, and a
//! two-source mixture whose sources occupy disjoint frequency bands.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TlnmfError};
use crate::signal::{FrameMatrix, Signal};
use crate::transform::dct_matrix;

/// Sample rate of the built-in fixtures; 40 ms frames are 64 samples long.
pub const FIXTURE_RATE: u32 = 1600;

/// Sequence of decaying harmonic notes drawn from a five-pitch set, plus a faint noise
/// floor.
pub fn synthetic_tones(seconds: f64, sample_rate: u32, seed: u64) -> Result<Signal> {
    if !(seconds > 0.0) {
        return Err(TlnmfError::InvalidParameter(format!(
            "duration {seconds} must be positive"
        )));
    }
    let sr = sample_rate as f64;
    let len = (seconds * sr).round() as usize;
    let nyquist = sr / 2.0;
    let pitches = [0.0625, 0.078, 0.094, 0.105, 0.125].map(|r| r * sr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = vec![0.0; len];
    let note_len = (0.25 * sr) as usize;
    let mut start = 0;
    while start < len {
        let f0 = pitches[rng.random_range(0..pitches.len())];
        let amp = rng.random_range(0.3..1.0);
        let decay = rng.random_range(3.0..8.0);
        for h in 1..=3 {
            let f = f0 * h as f64;
            if f >= nyquist {
                break;
            }
            let phase = rng.random_range(0.0..2.0 * PI);
            for (i, s) in y[start..].iter_mut().take(2 * note_len).enumerate() {
                let t = i as f64 / sr;
                *s += amp / h as f64 * (-decay * t).exp() * (2.0 * PI * f * t + phase).sin();
            }
        }
        start += note_len;
    }
    for s in &mut y {
        let n: f64 = rng.sample(StandardNormal);
        *s = 0.25 * *s + 1e-3 * n;
    }
    Signal::new(y, sample_rate)
}

/// Frames whose DCT power spectrogram is exactly `w * h`.
#[derive(Debug, Clone)]
pub struct ExactFitFixture {
    pub frames: FrameMatrix,
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

/// `Y = Phi_DCTᵀ (sqrt(W H) ∘ S)` with random signs `S`, unit-l1 dictionary columns and
/// strictly positive factors.
pub fn exact_fit(m: usize, n: usize, rank: usize, seed: u64) -> Result<ExactFitFixture> {
    if rank == 0 || n == 0 {
        return Err(TlnmfError::InvalidParameter(
            "rank and frame count must be positive".into(),
        ));
    }
    let phi = dct_matrix(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::from_fn(m, rank, |_, _| rng.random_range(0.05..1.0));
    for mut c in w.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    let h = DMatrix::from_fn(rank, n, |_, _| rng.random_range(0.1..10.0));
    let v = &w * &h;
    let x = v.map(|p: f64| {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        sign * p.sqrt()
    });
    let frames = FrameMatrix::new(phi.matrix().transpose() * x, m / 2, None)?;
    Ok(ExactFitFixture { frames, w, h })
}

/// Two sources in non-overlapping bands, their mixture, and the clean sources reused as
/// (oracle) training material.
#[derive(Debug, Clone)]
pub struct SeparationFixture {
    pub speech: Signal,
    pub noise: Signal,
    pub mixture: Signal,
}

fn band_source(
    len: usize,
    sr: f64,
    band: (f64, f64),
    partials: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut y = vec![0.0; len];
    for _ in 0..partials {
        let f = rng.random_range(band.0..band.1);
        let phase = rng.random_range(0.0..2.0 * PI);
        let am_rate = rng.random_range(0.5..3.0);
        let am_phase = rng.random_range(0.0..2.0 * PI);
        for (i, s) in y.iter_mut().enumerate() {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (2.0 * PI * am_rate * t + am_phase).sin();
            *s += env * (2.0 * PI * f * t + phase).sin();
        }
    }
    let rms = (y.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
    y.iter().map(|x| 0.2 * x / rms).collect()
}

/// Low-band "speech" (below 0.19·sr) and high-band "noise" (above 0.28·sr) at equal power.
pub fn disjoint_band_separation(seconds: f64, seed: u64) -> Result<SeparationFixture> {
    if !(seconds > 0.0) {
        return Err(TlnmfError::InvalidParameter(format!(
            "duration {seconds} must be positive"
        )));
    }
    let sr = FIXTURE_RATE as f64;
    let len = (seconds * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speech = band_source(len, sr, (0.03 * sr, 0.19 * sr), 6, &mut rng);
    let noise = band_source(len, sr, (0.28 * sr, 0.47 * sr), 12, &mut rng);
    let mixture: Vec<f64> = speech.iter().zip(&noise).map(|(a, b)| a + b).collect();
    Ok(SeparationFixture {
        speech: Signal::new(speech, FIXTURE_RATE)?,
        noise: Signal::new(noise, FIXTURE_RATE)?,
        mixture: Signal::new(mixture, FIXTURE_RATE)?,
    })
}

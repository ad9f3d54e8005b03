//! Signal ingestion, short-time framing and overlap-add resynthesis.
//!
//! Frames are windowed with the sine bell `w(m) = sin(pi (m + 1/2) / M)`. The
//! same window is applied again on synthesis, so at 50% overlap the squared
//! window sums to one and interior samples are reconstructed exactly.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;

use crate::csvio;
use crate::error::{Result, TlnmfError};

/// Mono sample sequence with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(TlnmfError::InvalidParameter(
                "sample rate must be positive".into(),
            ));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(TlnmfError::NonFinite("signal samples"));
        }
        Ok(Signal {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Mean power `sum(x^2) / T`.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    SineBell,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::SineBell => (0..len)
                .map(|m| (PI * (m as f64 + 0.5) / len as f64).sin())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramingConfig {
    pub frame_ms: f64,
    pub overlap_fraction: f64,
    pub window: Window,
}

impl Default for FramingConfig {
    /// 40 ms frames, 50% overlap, sine bell.
    fn default() -> Self {
        FramingConfig {
            frame_ms: 40.0,
            overlap_fraction: 0.5,
            window: Window::SineBell,
        }
    }
}

impl FramingConfig {
    /// Frame length and hop in samples at the given rate.
    pub fn resolve(&self, sample_rate: u32) -> Result<(usize, usize)> {
        if !(self.frame_ms > 0.0) || !self.frame_ms.is_finite() {
            return Err(TlnmfError::InvalidParameter(format!(
                "frame_ms must be positive, got {}",
                self.frame_ms
            )));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(TlnmfError::InvalidParameter(format!(
                "overlap_fraction must lie in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        let frame_len = (self.frame_ms * sample_rate as f64 / 1000.0).round() as usize;
        if frame_len < 2 {
            return Err(TlnmfError::InvalidParameter(format!(
                "frame of {} ms at {} Hz is shorter than 2 samples",
                self.frame_ms, sample_rate
            )));
        }
        if self.overlap_fraction == 0.5 && !frame_len.is_multiple_of(2) {
            return Err(TlnmfError::InvalidParameter(format!(
                "50% overlap needs an even frame length, got {frame_len}"
            )));
        }
        let hop = ((frame_len as f64) * (1.0 - self.overlap_fraction)).round() as usize;
        Ok((frame_len, hop.max(1)))
    }
}

/// `M x N` matrix of windowed frames (columns are frames).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    data: DMatrix<f64>,
    hop: usize,
    window: Option<Window>,
}

impl FrameMatrix {
    /// Wraps a raw matrix. Without a window the frames cannot be overlap-added.
    pub fn new(data: DMatrix<f64>, hop: usize, window: Option<Window>) -> Result<Self> {
        if hop == 0 {
            return Err(TlnmfError::InvalidParameter(
                "hop must be at least 1".into(),
            ));
        }
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(TlnmfError::InvalidParameter("empty frame matrix".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TlnmfError::NonFinite("frame matrix"));
        }
        Ok(FrameMatrix { data, hop, window })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Option<Window> {
        self.window
    }

    /// Same hop and window, new contents.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != self.frame_len() {
            return Err(TlnmfError::shape(
                "FrameMatrix::with_data",
                (self.frame_len(), data.ncols()),
                data.shape(),
            ));
        }
        FrameMatrix::new(data, self.hop, self.window)
    }

    /// Writes the header line `M,N,hop`, its values, then the matrix row by row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csvio::writer(path)?;
        let header = [
            self.frame_len().to_string(),
            self.num_frames().to_string(),
            self.hop.to_string(),
        ];
        let result = (|| {
            wtr.write_record(["M", "N", "hop"])?;
            wtr.write_record(&header)?;
            for row in self.data.row_iter() {
                wtr.write_record(row.iter().map(|x| x.to_string()))?;
            }
            wtr.flush()?;
            Ok::<(), Box<dyn std::error::Error>>(())
        })();
        result.map_err(|e| csvio::csv_error(path, e))
    }

    /// Reads a file produced by [`FrameMatrix::write_csv`]. The window is assumed to be the
    /// sine bell.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let rows = csvio::read_rows(path)?;
        let bad = |msg: &str| TlnmfError::Csv {
            path: path.to_path_buf(),
            message: msg.to_string(),
        };
        if rows.len() < 2 {
            return Err(bad("missing M,N,hop header"));
        }
        let dims: Vec<usize> = rows[1]
            .iter()
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("malformed M,N,hop values"))?;
        if dims.len() != 3 {
            return Err(bad("header must hold exactly M,N,hop"));
        }
        let (m, n, hop) = (dims[0], dims[1], dims[2]);
        let body = csvio::parse_matrix(path, &rows[2..])?;
        if body.shape() != (m, n) {
            return Err(bad(&format!(
                "declared {m}x{n} but found {}x{}",
                body.nrows(),
                body.ncols()
            )));
        }
        FrameMatrix::new(body, hop, Some(Window::SineBell))
    }
}

/// Number of frames for a signal of `len` samples, including a zero-padded tail frame.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    let span = len - frame_len;
    span / hop + 1 + usize::from(!span.is_multiple_of(hop))
}

pub fn frame(signal: &Signal, cfg: &FramingConfig) -> Result<FrameMatrix> {
    let (frame_len, hop) = cfg.resolve(signal.sample_rate())?;
    frame_samples(signal.samples(), frame_len, hop, cfg.window)
}

/// Frames raw samples with an explicit frame length and hop.
pub fn frame_samples(
    samples: &[f64],
    frame_len: usize,
    hop: usize,
    window: Window,
) -> Result<FrameMatrix> {
    if hop == 0 || frame_len == 0 {
        return Err(TlnmfError::InvalidParameter(
            "frame length and hop must be positive".into(),
        ));
    }
    if samples.len() < frame_len {
        return Err(TlnmfError::SignalTooShort {
            len: samples.len(),
            frame_len,
        });
    }
    let n = frame_count(samples.len(), frame_len, hop);
    let w = window.coefficients(frame_len);
    let data = DMatrix::from_fn(frame_len, n, |m, col| {
        let idx = col * hop + m;
        if idx < samples.len() {
            w[m] * samples[idx]
        } else {
            0.0
        }
    });
    FrameMatrix::new(data, hop, Some(window))
}

/// Weighted overlap-add: windows each column again and sums shifted frames.
pub fn overlap_add(frames: &FrameMatrix, total_len: usize, sample_rate: u32) -> Result<Signal> {
    let window = frames.window().ok_or(TlnmfError::MissingWindow)?;
    let w = window.coefficients(frames.frame_len());
    let mut out = vec![0.0; total_len];
    for (col_idx, col) in frames.data().column_iter().enumerate() {
        let start = col_idx * frames.hop();
        if start >= total_len {
            break;
        }
        for (m, (&x, &wm)) in col.iter().zip(&w).enumerate() {
            match out.get_mut(start + m) {
                Some(slot) => *slot += wm * x,
                None => break,
            }
        }
    }
    Signal::new(out, sample_rate)
}

/// Reads a PCM or float WAV file into `[-1, 1]` samples. Multichannel files are averaged
/// when `downmix` is set and rejected otherwise.
pub fn read_wav(path: &Path, downmix: bool) -> Result<Signal> {
    let wav_err = |source: hound::Error| match source {
        hound::Error::IoError(e) => TlnmfError::Io {
            path: path.to_path_buf(),
            source: e,
        },
        other => TlnmfError::Wav {
            path: path.to_path_buf(),
            source: other,
        },
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels > 1 && !downmix {
        return Err(TlnmfError::Multichannel {
            channels: spec.channels,
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ 8..=32) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (format, bits) => {
            return Err(TlnmfError::UnsupportedEncoding(format!(
                "{format:?} with {bits} bits per sample"
            )))
        }
    };
    let channels = usize::from(spec.channels.max(1));
    let samples = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Signal::new(samples, spec.sample_rate)
}

/// Quantizes one sample to 16-bit PCM; values at or beyond full scale saturate at
/// `-32768` / `32767`.
pub fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a 16-bit PCM mono WAV.
pub fn write_wav(signal: &Signal, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |source: hound::Error| match source {
        hound::Error::IoError(e) => TlnmfError::Io {
            path: path.to_path_buf(),
            source: e,
        },
        other => TlnmfError::Wav {
            path: path.to_path_buf(),
            source: other,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &x in signal.samples() {
        writer.write_sample(quantize_i16(x)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

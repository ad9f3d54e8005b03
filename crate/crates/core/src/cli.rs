//! Command-line front end: `decompose`, `separate` and `mix`.
//!
//! Every option can also come from a flat `key = value` file passed with `--config`; flags
//! win over file entries. Exit codes: 0 ok, 2 configuration error, 3 I/O error,
//! 4 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::csvio;
use crate::driver::{self, rank_atoms, write_history, Mode, RunConfig, TransformInit};
use crate::error::TlnmfError;
use crate::metrics::{bss_eval, write_scores, BssScores, ScoreRow};
use crate::objective::{Hyperparams, SupervisedHyperparams};
use crate::signal::{frame, read_wav, write_wav, FramingConfig, Signal};
use crate::supervised::{run_supervised, TrainingSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Lib(#[from] TlnmfError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Lib(e) => match e {
                TlnmfError::Wav { .. }
                | TlnmfError::Io { .. }
                | TlnmfError::Csv { .. }
                | TlnmfError::Multichannel { .. }
                | TlnmfError::UnsupportedEncoding(_) => EXIT_IO,
                TlnmfError::InvalidParameter(_)
                | TlnmfError::SignalTooShort { .. }
                | TlnmfError::ShapeMismatch { .. }
                | TlnmfError::MissingWindow => EXIT_CONFIG,
                TlnmfError::NonPositive(_)
                | TlnmfError::NonFinite(_)
                | TlnmfError::DegenerateProjection { .. }
                | TlnmfError::ZeroDirection
                | TlnmfError::ZeroEnergy(_)
                | TlnmfError::RankDeficient => EXIT_NUMERICAL,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Lib(TlnmfError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Parser)]
#[command(name = "tlnmf", version, about = "Transform-learning NMF for audio")]
pub struct Cli {
    /// Flat `key = value` file; command-line flags override its entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a transform and an NMF of one recording.
    Decompose(DecomposeArgs),
    /// Supervised separation of a mixture from speech and noise training recordings.
    Separate(SeparateArgs),
    /// Mix speech and noise at a target SNR.
    Mix(MixArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Tlnmf,
    Dct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SeparateModeArg {
    Tlnmf,
    Dct,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum InitArg {
    Random,
    Dct,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Tlnmf => Mode::TransformLearning,
            ModeArg::Dct => Mode::FixedDct,
        }
    }
}

impl From<InitArg> for TransformInit {
    fn from(i: InitArg) -> TransformInit {
        match i {
            InitArg::Random => TransformInit::Random,
            InitArg::Dct => TransformInit::Dct,
        }
    }
}

#[derive(Debug, Args)]
struct FramingArgs {
    /// Frame length in milliseconds [default: 40]
    #[arg(long)]
    frame_ms: Option<f64>,
    /// Overlap between consecutive frames, in [0, 1) [default: 0.5]
    #[arg(long)]
    overlap: Option<f64>,
    /// Average the channels of multichannel input.
    #[arg(long)]
    downmix: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecomposeFile {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    rank: Option<usize>,
    lambda: Option<f64>,
    tau: Option<f64>,
    seed: Option<u64>,
    mode: Option<ModeArg>,
    init: Option<InitArg>,
    max_iters: Option<usize>,
    top: Option<usize>,
    frame_ms: Option<f64>,
    overlap: Option<f64>,
    downmix: Option<bool>,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    /// Input WAV file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of NMF components K [default: 10]
    #[arg(long)]
    rank: Option<usize>,
    /// Sparsity weight on the activations [default: 0]
    #[arg(long)]
    lambda: Option<f64>,
    /// Stopping threshold on the relative objective decrease [default: 1e-7]
    #[arg(long)]
    tau: Option<f64>,
    /// Seed for all random initializations [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Learn the transform or keep the DCT [default: tlnmf]
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Starting transform in tlnmf mode [default: random]
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Iteration cap [default: 50000]
    #[arg(long)]
    max_iters: Option<usize>,
    /// Number of ranked atoms to export [default: 6]
    #[arg(long)]
    top: Option<usize>,
    #[command(flatten)]
    framing: FramingArgs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeparateFile {
    mixture: Option<PathBuf>,
    speech: Option<PathBuf>,
    noise: Option<PathBuf>,
    out: Option<PathBuf>,
    lambda_sp: Option<f64>,
    lambda_no: Option<f64>,
    tau: Option<f64>,
    seed: Option<u64>,
    mode: Option<SeparateModeArg>,
    init: Option<InitArg>,
    max_iters: Option<usize>,
    references: Option<Vec<PathBuf>>,
    save_matrices: Option<bool>,
    frame_ms: Option<f64>,
    overlap: Option<f64>,
    downmix: Option<bool>,
}

#[derive(Debug, Args)]
struct SeparateArgs {
    /// Mixture WAV file.
    #[arg(long)]
    mixture: Option<PathBuf>,
    /// Speech training WAV file.
    #[arg(long)]
    speech: Option<PathBuf>,
    /// Noise training WAV file.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sparsity weight on the speech activations [default: 0.1]
    #[arg(long)]
    lambda_sp: Option<f64>,
    /// Sparsity weight on the noise activations [default: 0.1]
    #[arg(long)]
    lambda_no: Option<f64>,
    /// Stopping threshold on the relative objective decrease [default: 1e-7]
    #[arg(long)]
    tau: Option<f64>,
    /// Seed for all random initializations [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Learn the transform, keep the DCT, or run both [default: tlnmf]
    #[arg(long, value_enum)]
    mode: Option<SeparateModeArg>,
    /// Starting transform in tlnmf mode [default: dct]
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Iteration cap [default: 50000]
    #[arg(long)]
    max_iters: Option<usize>,
    /// Clean speech and noise stems; enables scores.csv.
    #[arg(long, num_args = 2, value_names = ["SPEECH", "NOISE"])]
    references: Option<Vec<PathBuf>>,
    /// Also write phi.csv, vhat_sp.csv and vhat_no.csv.
    #[arg(long)]
    save_matrices: bool,
    #[command(flatten)]
    framing: FramingArgs,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixFile {
    speech: Option<PathBuf>,
    noise: Option<PathBuf>,
    out: Option<PathBuf>,
    snr_db: Option<f64>,
    strict: Option<bool>,
    downmix: Option<bool>,
}

#[derive(Debug, Args)]
struct MixArgs {
    /// Speech WAV file.
    #[arg(long)]
    speech: Option<PathBuf>,
    /// Noise WAV file.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Speech-to-noise power ratio in dB.
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    /// Fail on length mismatch instead of tiling the shorter input.
    #[arg(long)]
    strict: bool,
    /// Average the channels of multichannel input.
    #[arg(long)]
    downmix: bool,
}

fn load_file<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))
}

fn required<T>(value: Option<T>, name: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Config(format!("missing required option --{name}")))
}

fn framing(frame_ms: Option<f64>, overlap: Option<f64>) -> FramingConfig {
    let d = FramingConfig::default();
    FramingConfig {
        frame_ms: frame_ms.unwrap_or(d.frame_ms),
        overlap_fraction: overlap.unwrap_or(d.overlap_fraction),
        window: d.window,
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

/// Scales `x` so its largest magnitude is 0.9.
fn peak_normalize(x: &[f64]) -> Vec<f64> {
    let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return x.to_vec();
    }
    x.iter().map(|v| 0.9 * v / peak).collect()
}

fn cmd_decompose(args: DecomposeArgs, file: DecomposeFile) -> CliResult<()> {
    let input = required(args.input.or(file.input), "input")?;
    let out = required(args.out.or(file.out), "out")?;
    let hp = Hyperparams::new(
        args.rank.or(file.rank).unwrap_or(10),
        args.lambda.or(file.lambda).unwrap_or(0.0),
        args.tau.or(file.tau).unwrap_or(1e-7),
    )?;
    let mode: Mode = args.mode.or(file.mode).unwrap_or(ModeArg::Tlnmf).into();
    let mut cfg = RunConfig::new(hp, mode, args.seed.or(file.seed).unwrap_or(0));
    cfg.transform_init = args.init.or(file.init).unwrap_or(InitArg::Random).into();
    cfg.max_iters = args
        .max_iters
        .or(file.max_iters)
        .unwrap_or(driver::DEFAULT_MAX_ITERS);
    let top = args.top.or(file.top).unwrap_or(6);
    let framing_cfg = framing(
        args.framing.frame_ms.or(file.frame_ms),
        args.framing.overlap.or(file.overlap),
    );
    let downmix = args.framing.downmix || file.downmix.unwrap_or(false);

    let signal = read_wav(&input, downmix)?;
    let frames = frame(&signal, &framing_cfg)?;
    log::info!(
        "decompose {}: M={} N={} K={} lambda={} mode={}",
        input.display(),
        frames.frame_len(),
        frames.num_frames(),
        hp.rank,
        hp.lambda,
        mode.label()
    );
    let state = driver::run(&frames, &cfg)?;

    create_dir(&out)?;
    write_history(
        &out.join("history.csv"),
        &state.objective_history,
        &state.epsilon_history,
    )?;
    csvio::write_matrix(&out.join("phi.csv"), state.phi.matrix())?;
    csvio::write_matrix(&out.join("w.csv"), &state.factorization.w)?;
    csvio::write_matrix(&out.join("h.csv"), &state.factorization.h)?;

    let ranked = rank_atoms(&state.phi, &frames, top)?;
    let rows: Vec<usize> = ranked.iter().map(|(idx, _)| *idx).collect();
    let atoms = state.phi.matrix().select_rows(rows.iter());
    csvio::write_matrix(&out.join(format!("atoms_top{}.csv", rows.len())), &atoms)?;

    let scores_path = out.join("atom_scores.csv");
    let mut w = csvio::writer(&scores_path)?;
    let err = |e: csv::Error| CliError::Lib(csvio::csv_error(&scores_path, e));
    w.write_record(["rank", "atom", "score"]).map_err(err)?;
    for (r, (idx, score)) in ranked.iter().enumerate() {
        w.write_record([(r + 1).to_string(), idx.to_string(), score.to_string()])
            .map_err(err)?;
        let row: Vec<f64> = atoms.row(r).iter().copied().collect();
        let atom = Signal::new(peak_normalize(&row), signal.sample_rate())?;
        write_wav(&atom, &out.join(format!("atom_{:02}_{idx}.wav", r + 1)))?;
    }
    w.flush().map_err(|e| io_error(&scores_path, e))?;

    println!(
        "{}: {} iterations, final objective {:e}",
        mode.label(),
        state.iteration,
        state.objective()
    );
    Ok(())
}

fn read_same_rate(paths: &[&Path], downmix: bool) -> CliResult<Vec<Signal>> {
    let signals = paths
        .iter()
        .map(|p| read_wav(p, downmix))
        .collect::<Result<Vec<_>, _>>()?;
    let rate = signals[0].sample_rate();
    for (p, s) in paths.iter().zip(&signals) {
        if s.sample_rate() != rate {
            return Err(CliError::Config(format!(
                "{} has sample rate {} Hz, expected {rate} Hz",
                p.display(),
                s.sample_rate()
            )));
        }
    }
    Ok(signals)
}

fn cmd_separate(args: SeparateArgs, file: SeparateFile) -> CliResult<()> {
    let mixture_path = required(args.mixture.or(file.mixture), "mixture")?;
    let speech_path = required(args.speech.or(file.speech), "speech")?;
    let noise_path = required(args.noise.or(file.noise), "noise")?;
    let out = required(args.out.or(file.out), "out")?;
    let shp = SupervisedHyperparams::new(
        args.lambda_sp.or(file.lambda_sp).unwrap_or(0.1),
        args.lambda_no.or(file.lambda_no).unwrap_or(0.1),
        args.tau.or(file.tau).unwrap_or(1e-7),
    )?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let modes = match args.mode.or(file.mode).unwrap_or(SeparateModeArg::Tlnmf) {
        SeparateModeArg::Tlnmf => vec![Mode::TransformLearning],
        SeparateModeArg::Dct => vec![Mode::FixedDct],
        SeparateModeArg::Both => vec![Mode::TransformLearning, Mode::FixedDct],
    };
    let init: TransformInit = args.init.or(file.init).unwrap_or(InitArg::Dct).into();
    let max_iters = args
        .max_iters
        .or(file.max_iters)
        .unwrap_or(driver::DEFAULT_MAX_ITERS);
    let references = args.references.or(file.references);
    if let Some(r) = &references {
        if r.len() != 2 {
            return Err(CliError::Config(format!(
                "references needs exactly 2 files (speech, noise), got {}",
                r.len()
            )));
        }
    }
    let save_matrices = args.save_matrices || file.save_matrices.unwrap_or(false);
    let framing_cfg = framing(
        args.framing.frame_ms.or(file.frame_ms),
        args.framing.overlap.or(file.overlap),
    );
    let downmix = args.framing.downmix || file.downmix.unwrap_or(false);

    let mut signals = read_same_rate(&[&mixture_path, &speech_path, &noise_path], downmix)?;
    let noise = signals.pop().expect("three signals");
    let speech = signals.pop().expect("three signals");
    let mixture = signals.pop().expect("three signals");
    let rate = mixture.sample_rate();
    let frames_mix = frame(&mixture, &framing_cfg)?;
    let train = TrainingSet::new(frame(&speech, &framing_cfg)?, frame(&noise, &framing_cfg)?)?;

    let refs = match &references {
        Some(paths) => {
            let mut all: Vec<&Path> = vec![&mixture_path];
            all.extend(paths.iter().map(PathBuf::as_path));
            let mut r = read_same_rate(&all, downmix)?;
            r.remove(0);
            for (p, s) in paths.iter().zip(&r) {
                if s.len() != mixture.len() {
                    return Err(CliError::Config(format!(
                        "reference {} has {} samples, mixture has {}",
                        p.display(),
                        s.len(),
                        mixture.len()
                    )));
                }
            }
            Some(r)
        }
        None => None,
    };

    create_dir(&out)?;
    let mut rows = Vec::new();
    let score_pair = |rows: &mut Vec<ScoreRow>,
                      method: &str,
                      sp: &Signal,
                      no: &Signal,
                      refs: &[Signal]|
     -> CliResult<()> {
        for (source, est, idx) in [("speech", sp, 0), ("noise", no, 1)] {
            let scores: BssScores = bss_eval(est, refs, idx)?;
            rows.push(ScoreRow {
                method: method.to_string(),
                source: source.to_string(),
                scores,
            });
        }
        Ok(())
    };
    if let Some(r) = &refs {
        let half = Signal::new(mixture.samples().iter().map(|x| 0.5 * x).collect(), rate)?;
        score_pair(&mut rows, "baseline", &half, &half, r)?;
    }

    for mode in &modes {
        let mut cfg = RunConfig::supervised(*mode, seed);
        cfg.transform_init = init;
        cfg.max_iters = max_iters;
        log::info!(
            "separate {}: M={} N={} N_sp={} N_no={}",
            mode.label(),
            frames_mix.frame_len(),
            frames_mix.num_frames(),
            train.n_sp(),
            train.n_no()
        );
        let res = run_supervised(&frames_mix, &train, &shp, &cfg, mixture.len(), rate)?;
        let dir = if modes.len() > 1 {
            out.join(mode.label())
        } else {
            out.clone()
        };
        create_dir(&dir)?;
        write_wav(&res.est_sp, &dir.join("est_sp.wav"))?;
        write_wav(&res.est_no, &dir.join("est_no.wav"))?;
        write_history(
            &dir.join("history.csv"),
            &res.objective_history,
            &res.epsilon_history,
        )?;
        if save_matrices {
            csvio::write_matrix(&dir.join("phi.csv"), res.phi.matrix())?;
            csvio::write_matrix(&dir.join("vhat_sp.csv"), &res.vhat_sp)?;
            csvio::write_matrix(&dir.join("vhat_no.csv"), &res.vhat_no)?;
        }
        if let Some(r) = &refs {
            score_pair(&mut rows, mode.label(), &res.est_sp, &res.est_no, r)?;
        }
        println!(
            "{}: {} iterations, final objective {:e}",
            mode.label(),
            res.iterations,
            res.objective_history.last().copied().unwrap_or(f64::NAN)
        );
    }
    if refs.is_some() {
        write_scores(&out.join("scores.csv"), &rows)?;
    }
    Ok(())
}

fn tile(x: &[f64], len: usize) -> Vec<f64> {
    x.iter().copied().cycle().take(len).collect()
}

/// Noise gain giving `10 log10(P_speech / (g^2 P_noise)) = snr_db`.
pub fn noise_gain(speech_power: f64, noise_power: f64, snr_db: f64) -> Result<f64, TlnmfError> {
    if speech_power == 0.0 {
        return Err(TlnmfError::ZeroEnergy("reference"));
    }
    if noise_power == 0.0 {
        return Err(TlnmfError::ZeroEnergy("noise"));
    }
    Ok((speech_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt())
}

fn cmd_mix(args: MixArgs, file: MixFile) -> CliResult<()> {
    let speech_path = required(args.speech.or(file.speech), "speech")?;
    let noise_path = required(args.noise.or(file.noise), "noise")?;
    let out = required(args.out.or(file.out), "out")?;
    let snr_db = required(args.snr_db.or(file.snr_db), "snr-db")?;
    if !snr_db.is_finite() {
        return Err(CliError::Config(format!(
            "snr-db must be finite, got {snr_db}"
        )));
    }
    let strict = args.strict || file.strict.unwrap_or(false);
    let downmix = args.downmix || file.downmix.unwrap_or(false);

    let mut signals = read_same_rate(&[&speech_path, &noise_path], downmix)?;
    let noise = signals.pop().expect("two signals");
    let speech = signals.pop().expect("two signals");
    let rate = speech.sample_rate();
    let len = speech.len().max(noise.len());
    if speech.len() != noise.len() && strict {
        return Err(CliError::Config(format!(
            "length mismatch: speech has {} samples, noise has {}",
            speech.len(),
            noise.len()
        )));
    }
    let sp = tile(speech.samples(), len);
    let no = tile(noise.samples(), len);
    let sp = Signal::new(sp, rate)?;
    let no = Signal::new(no, rate)?;
    let gain = noise_gain(sp.power(), no.power(), snr_db)?;
    let scaled = Signal::new(no.samples().iter().map(|x| gain * x).collect(), rate)?;
    let mixture = Signal::new(
        sp.samples()
            .iter()
            .zip(scaled.samples())
            .map(|(a, b)| a + b)
            .collect(),
        rate,
    )?;
    let peak = mixture
        .samples()
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        log::warn!("mixture peak {peak:.3} exceeds full scale and will clip");
    }

    create_dir(&out)?;
    write_wav(&mixture, &out.join("mixture.wav"))?;
    write_wav(&sp, &out.join("speech.wav"))?;
    write_wav(&scaled, &out.join("noise.wav"))?;
    let info = out.join("mix.csv");
    let mut w = csvio::writer(&info)?;
    let err = |e: csv::Error| CliError::Lib(csvio::csv_error(&info, e));
    w.write_record(["snr_db", "noise_gain", "samples"])
        .map_err(err)?;
    w.write_record([snr_db.to_string(), gain.to_string(), len.to_string()])
        .map_err(err)?;
    w.flush().map_err(|e| io_error(&info, e))?;
    println!("mixed {len} samples at {snr_db} dB SNR, noise gain {gain}");
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Decompose(a) => cmd_decompose(a, load_file(cfg)?),
        Command::Separate(a) => cmd_separate(a, load_file(cfg)?),
        Command::Mix(a) => cmd_mix(a, load_file(cfg)?),
    }
}

/// Parses arguments, runs the command, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ =
        env_logger::Builder::from_env(env_logger::Env::default().filter_or("TLNMF_LOG", "warn"))
            .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_power_gives_unit_gain() {
        assert!((noise_gain(0.3, 0.3, 0.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn minus_ten_db_scales_noise_power_tenfold() {
        let g = noise_gain(1.0, 1.0, -10.0).unwrap();
        assert!((g * g - 10.0).abs() < 1e-9);
    }

    #[test]
    fn silent_speech_is_zero_power_reference() {
        let e = noise_gain(0.0, 1.0, 0.0).unwrap_err();
        assert_eq!(e.to_string(), "zero-power reference");
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::Config("x".into()).exit_code(), EXIT_CONFIG);
        let io = TlnmfError::Io {
            path: "a".into(),
            source: std::io::Error::other("x"),
        };
        assert_eq!(CliError::Lib(io).exit_code(), EXIT_IO);
        assert_eq!(
            CliError::Lib(TlnmfError::RankDeficient).exit_code(),
            EXIT_NUMERICAL
        );
        let bad = TlnmfError::InvalidParameter("x".into());
        assert_eq!(CliError::Lib(bad).exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn config_file_values_parse() {
        let f: DecomposeFile =
            toml::from_str("rank = 10\nlambda = 1000000.0\nmode = \"dct\"\ntau = 1e-7\n").unwrap();
        assert_eq!(f.rank, Some(10));
        assert_eq!(f.mode, Some(ModeArg::Dct));
        assert_eq!(f.lambda, Some(1e6));
        assert!(toml::from_str::<DecomposeFile>("bogus = 1").is_err());
    }

    #[test]
    fn flags_parse_and_override() {
        let cli = Cli::try_parse_from([
            "tlnmf",
            "decompose",
            "--input",
            "a.wav",
            "--out",
            "o",
            "--rank",
            "10",
            "--lambda",
            "1000000",
            "--tau",
            "1e-7",
            "--mode",
            "dct",
        ])
        .unwrap();
        let Command::Decompose(a) = cli.command else {
            panic!("wrong command")
        };
        assert_eq!(a.rank, Some(10));
        assert_eq!(a.lambda, Some(1e6));
        assert_eq!(a.mode, Some(ModeArg::Dct));
        let cli = Cli::try_parse_from(["tlnmf", "mix", "--snr-db", "-10"]).unwrap();
        let Command::Mix(m) = cli.command else {
            panic!("wrong command")
        };
        assert_eq!(m.snr_db, Some(-10.0));
    }

    #[test]
    fn tiling_repeats_shorter_input() {
        assert_eq!(tile(&[1.0, 2.0], 5), vec![1.0, 2.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn peak_normalization() {
        assert_eq!(peak_normalize(&[0.5, -1.0]), vec![0.45, -0.9]);
        assert_eq!(peak_normalize(&[0.0]), vec![0.0]);
    }
}

//! Command-line front end. `run` maps argv to an exit code:
//! 0 on success, 1 on usage errors, 2 on runtime errors.
//!
//! Seeds come from `--seed`, else the `MODIFF_SEED` environment variable,
//! else 0. Nothing else is read from the environment.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{Checkpoint, CheckpointMeta, SkeletonSpec};
use crate::conditioning::{read_wav, MelConfig};
use crate::data::{gen_data, Dataset, MotionFamily, SyntheticSpec};
use crate::diffusion::{MotionRange, NoiseSchedule};
use crate::error::Error;
use crate::metrics::MULTI_MODALITY_K;
use crate::motion::{read_motion, write_motion};
use crate::nn::{ConditioningConfig, DenoiserModel};
use crate::pipeline::{
    checkpoint_fps, condition, edit, evaluate_checkpoint, evaluate_motions, generate, sha256_hex,
    ConditionSource, MaskSpec,
};
use crate::trainer::{train, Task, TrainConfig, Trainer};

pub const SEED_ENV: &str = "MODIFF_SEED";

#[derive(Parser, Debug)]
#[command(name = "modiff", version, about = "Diffusion-based motion synthesis")]
struct Cli {
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic beat-synchronised dataset.
    GenData(GenDataArgs),
    /// Train a denoiser on a dataset.
    Train(TrainArgs),
    /// Sample a motion from a checkpoint.
    Sample(SampleArgs),
    /// Complete a motion from a seed prefix or keyframes.
    Edit(EditArgs),
    /// Score a checkpoint (or a motion directory) against a dataset.
    Eval(EvalArgs),
    /// Dump the log-Mel spectrogram of a WAV file as JSON.
    Mel(MelArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    n_sequences: usize,
    #[arg(long, default_value_t = 4.0)]
    seconds: f64,
    #[arg(long, default_value_t = 20.0)]
    fps: f64,
    #[arg(long, default_value_t = 2.0)]
    beat_hz: f64,
    /// toy8 or body24
    #[arg(long, default_value = "toy8")]
    skeleton: String,
    /// waves, steps or bends; random per sequence when omitted.
    #[arg(long)]
    family: Option<String>,
    /// Random beat phase per sequence.
    #[arg(long)]
    random_phase: bool,
    #[arg(long)]
    no_captions: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// dance or text; defaults to the config file's task, else dance.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    data_dir: PathBuf,
    /// TOML file; omitted keys keep the task defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total optimizer steps (overrides max_steps).
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value = "checkpoints")]
    ckpt_dir: PathBuf,
    /// Continue from a checkpoint with optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Enable the reconstruction term.
    #[arg(long, value_name = "BOOL")]
    loss_m: Option<bool>,
    /// Enable the skeleton-consistency term.
    #[arg(long, value_name = "BOOL")]
    loss_s: Option<bool>,
    /// Enable the symmetry term.
    #[arg(long, value_name = "BOOL")]
    loss_a: Option<bool>,
}

#[derive(Args, Debug)]
#[group(id = "cond", multiple = false)]
struct CondArgs {
    /// Condition on a WAV file.
    #[arg(long, group = "cond")]
    audio: Option<PathBuf>,
    /// Condition on a caption.
    #[arg(long, group = "cond")]
    text: Option<String>,
    /// Sample without conditioning.
    #[arg(long, group = "cond")]
    uncond: bool,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    cond: CondArgs,
    /// Defaults to the audio duration, else 4 s.
    #[arg(long)]
    length_sec: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample without clamping to the training data range.
    #[arg(long)]
    no_clamp: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EditArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    seed_motion: PathBuf,
    /// prefix:S or keyframes:i,j,...
    #[arg(long)]
    mask: String,
    #[command(flatten)]
    cond: CondArgs,
    /// Canvas length; defaults to the seed motion's length.
    #[arg(long)]
    length_sec: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample without clamping to the training data range.
    #[arg(long)]
    no_clamp: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[group(id = "source", required = true, multiple = false)]
struct EvalSource {
    #[arg(long, group = "source")]
    ckpt: Option<PathBuf>,
    /// Dataset directory whose motions stand in for generated ones.
    #[arg(long, group = "source")]
    generated: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    source: EvalSource,
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample without clamping to the training data range.
    #[arg(long)]
    no_clamp: bool,
    /// Seeds for multi-modality; below 2 skips it.
    #[arg(long, default_value_t = MULTI_MODALITY_K)]
    mm_k: usize,
}

#[derive(Args, Debug)]
struct MelArgs {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    bands: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Parses and runs one command line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        log::LevelFilter::Info
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Edit(a) => cmd_edit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Mel(a) => cmd_mel(a),
    }
}

/// `--seed`, else `MODIFF_SEED`, else 0.
fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => match v.trim().parse() {
            Ok(s) => Ok(s),
            Err(_) => usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        },
        Err(_) => Ok(0),
    }
}

fn parse_task(s: &str) -> CliResult<Task> {
    match s {
        "dance" => Ok(Task::Dance),
        "text" => Ok(Task::Text),
        _ => usage(format!("unknown task `{s}` (expected dance or text)")),
    }
}

fn cmd_gen_data(a: GenDataArgs) -> CliResult<()> {
    let family = match a.family.as_deref() {
        None => None,
        Some("waves") => Some(MotionFamily::Waves),
        Some("steps") => Some(MotionFamily::Steps),
        Some("bends") => Some(MotionFamily::Bends),
        Some(f) => return usage(format!("unknown family `{f}`")),
    };
    let spec = SyntheticSpec {
        n_sequences: a.n_sequences,
        seconds: a.seconds,
        fps: a.fps,
        beat_hz: a.beat_hz,
        skeleton: a.skeleton,
        family,
        beat_offset: 0,
        random_phase: a.random_phase,
        captions: !a.no_captions,
    };
    if let Err(e) = spec.validate() {
        return usage(e.to_string());
    }
    let manifest = gen_data(&spec, &a.out, resolve_seed(a.seed)?)?;
    log::info!("wrote {} sequences to {}", manifest.items.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let resume = a.resume.as_deref().map(Checkpoint::read).transpose()?;
    let mut cfg = match (&a.config, &resume) {
        (Some(path), _) => TrainConfig::load(path)?,
        (None, Some(ck)) => ck.meta.train.clone().unwrap_or_else(TrainConfig::dance),
        (None, None) => TrainConfig::for_task(match &a.task {
            Some(t) => parse_task(t)?,
            None => Task::Dance,
        }),
    };
    if let Some(t) = &a.task {
        cfg.task = parse_task(t)?;
    }
    if a.seed.is_some() || std::env::var_os(SEED_ENV).is_some() {
        cfg.rng_seed = resolve_seed(a.seed)?;
    }
    if let Some(s) = a.steps {
        cfg.max_steps = s;
        cfg.warmup_steps = cfg.warmup_steps.min(s);
    }
    if let Some(b) = a.loss_m {
        cfg.losses.motion = b;
    }
    if let Some(b) = a.loss_s {
        cfg.losses.skeleton = b;
    }
    if let Some(b) = a.loss_a {
        cfg.losses.symmetry = b;
    }
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }

    let data = Dataset::load(&a.data_dir)?;
    let mel = resume
        .as_ref()
        .and_then(|ck| ck.meta.mel.clone())
        .unwrap_or_default();
    let vocab = match (&resume, cfg.task) {
        (Some(ck), Task::Text) if ck.meta.vocabulary.is_some() => {
            crate::conditioning::Vocabulary::from_list(ck.meta.vocabulary.clone().unwrap_or_default())?
        }
        _ => data.vocabulary(),
    };
    let samples = data.training_samples(cfg.task, &mel, &vocab)?;
    let meta = CheckpointMeta {
        fps: Some(data.fps()),
        skeleton: Some(SkeletonSpec::of(&data.skeleton)),
        mel: (cfg.task == Task::Dance).then(|| mel.clone()),
        vocabulary: (cfg.task == Task::Text).then(|| vocab.tokens().to_vec()),
        train: Some(cfg.clone()),
        range: Some(MotionRange::of(samples.iter().map(|s| &s.motion))?),
    };
    let mut trainer = match resume {
        Some(ck) => {
            log::info!("resuming from step {}", ck.step);
            Trainer::resume(ck, cfg.clone(), data.skeleton.clone())?
        }
        None => {
            let cond = match cfg.task {
                Task::Dance => ConditioningConfig::Audio { mel_bands: mel.bands },
                Task::Text => ConditioningConfig::Text {
                    vocab_size: vocab.len(),
                    layers: cfg.model.text_layers,
                    heads: cfg.model.text_heads,
                },
            };
            let model_cfg = cfg.model.model_config(data.skeleton.channels(), cond);
            let model = DenoiserModel::new(model_cfg, cfg.rng_seed)?;
            Trainer::new(model, cfg.clone(), NoiseSchedule::standard(), data.skeleton.clone())?
        }
    };
    let outcome = train(&mut trainer, &samples, Some(&a.ckpt_dir), &meta)?;
    if let Some(last) = outcome.reports.last() {
        log::info!("finished step {} loss {:.5}", last.step, last.loss.total);
    }
    if let Some(path) = outcome.final_checkpoint {
        println!("{}", path.display());
    }
    Ok(())
}

fn source(ck: &Checkpoint, c: &CondArgs) -> CliResult<ConditionSource> {
    Ok(match (&c.audio, &c.text, c.uncond) {
        (Some(p), _, _) => ConditionSource::Audio(read_wav(p)?),
        (_, Some(t), _) => ConditionSource::Text(t.clone()),
        (_, _, true) => ConditionSource::None,
        _ => match ck.model.config().conditioning {
            ConditioningConfig::None => ConditionSource::None,
            _ => return usage("conditional checkpoint: pass --audio, --text or --uncond"),
        },
    })
}

fn frames_for(seconds: f64, fps: f64) -> CliResult<usize> {
    let n = (seconds * fps).round();
    if !(n >= 1.0 && n.is_finite()) {
        return usage(format!("--length-sec {seconds} gives no frames at {fps} fps"));
    }
    Ok(n as usize)
}

fn load_for_sampling(path: &Path, no_clamp: bool) -> CliResult<Checkpoint> {
    let mut ck = Checkpoint::read(path)?;
    if no_clamp {
        ck.meta.range = None;
    }
    Ok(ck)
}

fn cmd_sample(a: SampleArgs) -> CliResult<()> {
    let ck = load_for_sampling(&a.ckpt, a.no_clamp)?;
    let src = source(&ck, &a.cond)?;
    let seconds = match (&src, a.length_sec) {
        (_, Some(s)) => s,
        (ConditionSource::Audio(w), None) => w.duration(),
        _ => 4.0,
    };
    let frames = frames_for(seconds, checkpoint_fps(&ck))?;
    let cond = condition(&ck, &src)?;
    let motion = generate(&ck, &cond, frames, resolve_seed(a.seed)?)?;
    write_motion(&a.out, &motion, &ck.skeleton()?)?;
    Ok(())
}

fn cmd_edit(a: EditArgs) -> CliResult<()> {
    let mask: MaskSpec = match a.mask.parse() {
        Ok(m) => m,
        Err(e) => return usage(e.to_string()),
    };
    let ck = load_for_sampling(&a.ckpt, a.no_clamp)?;
    let (seed_motion, skel) = read_motion(&a.seed_motion)?;
    let canvas = match a.length_sec {
        Some(s) => frames_for(s, seed_motion.fps())?,
        None => seed_motion.len(),
    };
    let src = if a.cond.audio.is_none() && a.cond.text.is_none() {
        ConditionSource::None
    } else {
        source(&ck, &a.cond)?
    };
    let cond = condition(&ck, &src)?;
    let out = edit(&ck, &cond, &seed_motion, &mask, canvas, resolve_seed(a.seed)?)?;
    write_motion(&a.out, &out, &skel)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let data = Dataset::load(&a.data_dir)?;
    let report = match (&a.source.ckpt, &a.source.generated) {
        (Some(path), _) => {
            let ck = load_for_sampling(path, a.no_clamp)?;
            evaluate_checkpoint(&ck, &data, resolve_seed(a.seed)?, a.mm_k)?
        }
        (_, Some(dir)) => {
            let generated = Dataset::load(dir)?;
            let manifest = dir.join(crate::data::MANIFEST);
            let bytes = std::fs::read(&manifest).map_err(|e| Error::io(&manifest, e))?;
            let motions: Vec<_> = generated.items.into_iter().map(|i| i.motion).collect();
            evaluate_motions(&data, &motions, &MelConfig::default(), sha256_hex(&bytes))?
        }
        _ => return usage("pass --ckpt or --generated"),
    };
    write_text(&a.report, &(report.to_line()? + "\n"))?;
    println!("{}", report.to_line()?);
    Ok(())
}

fn cmd_mel(a: MelArgs) -> CliResult<()> {
    let mut cfg = MelConfig::default();
    if let Some(b) = a.bands {
        cfg.bands = b;
    }
    if let Some(h) = a.hop {
        cfg.hop = h;
    }
    if let Some(n) = a.window {
        cfg.window = n;
    }
    let w = crate::conditioning::resample(&read_wav(&a.audio)?, cfg.sample_rate)?;
    let mel = crate::conditioning::mel_spectrogram(&w, &cfg)?;
    let f = mel.frames();
    let rows: Vec<&[f64]> = (0..f.rows()).map(|i| f.row(i)).collect();
    let doc = serde_json::json!({
        "sample_rate": mel.sample_rate(),
        "hop": mel.hop(),
        "bands": mel.bands(),
        "frame_rate": mel.frame_rate(),
        "frames": rows,
    });
    write_text(&a.out, &(doc.to_string() + "\n"))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(Error::io(path, e)))
}

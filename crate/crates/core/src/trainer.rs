//! Optimization loop: per-sample timestep and noise draws, loss assembly,
//! AdamW with linear warm-up, periodic checkpoints and exact resumption.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::conditioning::Conditioning;
use crate::diffusion::{m0_coefficients, q_sample, standard_normal, NoiseSchedule};
use crate::error::{Error, Result};
use crate::losses::{total_loss_tape, LossBreakdown, LossWeights};
use crate::motion::Skeleton;
use crate::nn::{gradients, ConditioningConfig, DenoiserModel, ModelConfig, ParamStore};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Dance,
    Text,
}

/// Network sizes; channel counts come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHyper {
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub heads: usize,
    pub attn_dim: usize,
    pub context_dim: usize,
    pub time_dim: usize,
    pub groups: usize,
    pub ff_mult: usize,
    pub text_layers: usize,
    pub text_heads: usize,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            base_channels: 32,
            channel_mults: vec![1, 2, 4],
            heads: 4,
            attn_dim: 64,
            context_dim: 64,
            time_dim: 64,
            groups: 8,
            ff_mult: 2,
            text_layers: 2,
            text_heads: 4,
        }
    }
}

impl ModelHyper {
    pub fn model_config(&self, in_channels: usize, conditioning: ConditioningConfig) -> ModelConfig {
        let conditioning = match conditioning {
            ConditioningConfig::Text { vocab_size, .. } => ConditioningConfig::Text {
                vocab_size,
                layers: self.text_layers,
                heads: self.text_heads,
            },
            other => other,
        };
        ModelConfig {
            in_channels,
            base_channels: self.base_channels,
            channel_mults: self.channel_mults.clone(),
            heads: self.heads,
            attn_dim: self.attn_dim,
            context_dim: self.context_dim,
            time_dim: self.time_dim,
            groups: self.groups,
            ff_mult: self.ff_mult,
            conditioning,
        }
    }
}

/// Every training knob. Loadable from TOML, where any field may be
/// omitted to keep the task's default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
    pub rng_seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub losses: LossWeights,
    pub model: ModelHyper,
}

impl TrainConfig {
    /// Dance defaults: lr 5e-4, batch 32, no warm-up.
    pub fn dance() -> Self {
        TrainConfig {
            task: Task::Dance,
            learning_rate: 5e-4,
            batch_size: 32,
            weight_decay: 0.01,
            warmup_steps: 0,
            max_steps: 2000,
            rng_seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 500,
            losses: LossWeights::default(),
            model: ModelHyper::default(),
        }
    }

    /// Text defaults: lr 2e-4, batch 128, 500 warm-up steps.
    pub fn text() -> Self {
        TrainConfig {
            task: Task::Text,
            learning_rate: 2e-4,
            batch_size: 128,
            warmup_steps: 500,
            ..Self::dance()
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Dance => Self::dance(),
            Task::Text => Self::text(),
        }
    }

    /// Parses TOML over the defaults of the `task` it names (dance if absent).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table =
            toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        let task = match user.get("task") {
            None => Task::Dance,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| Error::Format(format!("config task: {e}")))?,
        };
        let mut merged = toml::Table::try_from(Self::for_task(task))
            .map_err(|e| Error::Format(format!("config: {e}")))?;
        merge_tables(&mut merged, user);
        let cfg: TrainConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::param(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.warmup_steps > self.max_steps {
            return bad("warmup_steps must not exceed max_steps");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam coefficients must lie in [0, 1) with eps > 0");
        }
        self.losses.validate()
    }

    /// `min(1, step / warmup_steps)` for 1-based `step`.
    pub fn warmup_factor(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            1.0
        } else {
            (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Adam moments and update count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub state: AdamState,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, params: &ParamStore) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            state: AdamState::new(params),
        }
    }

    /// `theta <- theta (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) -> Result<()> {
        self.state.t += 1;
        let t = self.state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - lr * self.weight_decay;
        for (name, p) in params.iter_mut() {
            let g = grads.require(name)?;
            let m = self.state.m.get_mut(name).ok_or_else(|| missing(name))?;
            let v = self.state.v.get_mut(name).ok_or_else(|| missing(name))?;
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *pi = *pi * decay - lr * update;
            }
        }
        Ok(())
    }
}

fn missing(name: &str) -> Error {
    Error::Format(format!("optimizer state lacks `{name}`"))
}

/// One training pair: clean motion and its raw conditioning input.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub motion: Mat,
    pub condition: Conditioning,
}

/// What one optimizer step did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    /// Sampled timestep of each batch element.
    pub t: Vec<usize>,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Independent RNG stream for `(seed, stream)`.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SHUFFLE_STREAM: u64 = 1 << 63;

/// Dataset indices for 1-based `step`: consecutive slices of an endless
/// sequence of per-epoch permutations, so any step's batch is a pure
/// function of `(seed, step)`.
pub fn batch_indices(seed: u64, step: u64, batch: usize, n: usize) -> Vec<usize> {
    let start = (step - 1) * batch as u64;
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for p in start..start + batch as u64 {
        let epoch = p / n as u64;
        if cached.as_ref().is_none_or(|c| c.0 != epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut stream_rng(seed, SHUFFLE_STREAM | epoch));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("filled above").1[(p % n as u64) as usize]);
    }
    out
}

/// Loss and gradients of one sample at step `t` with noise `eps`.
pub fn sample_gradients(
    model: &DenoiserModel,
    sample: &TrainSample,
    t: usize,
    eps: &Mat,
    skel: &Skeleton,
    sched: &NoiseSchedule,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ParamStore)> {
    let m0 = &sample.motion;
    let n = m0.rows();
    let xt = q_sample(m0, t, eps, sched)?;
    let padded = model.pad_frames(&xt);
    let (c1, c2) = m0_coefficients(sched, t);
    let ab = sched.alpha_bar()[t];
    let mut breakdown = LossBreakdown::default();
    let (_, grads) = gradients(model, |tape, p| {
        let ctx = model.encode_condition(tape, p, &sample.condition)?;
        let x = tape.constant(padded);
        let out = model.forward_tape(tape, p, x, t, ctx)?;
        let eps_hat = if tape.value(out).rows() == n {
            out
        } else {
            let tr = tape.transpose(out);
            let cropped = tape.slice_cols(tr, 0, n);
            tape.transpose(cropped)
        };
        let xt_scaled = tape.constant(xt.map(|v| c1 * v));
        let e_scaled = tape.scale(eps_hat, -c2);
        let m0_hat = tape.add(xt_scaled, e_scaled);
        let eps_v = tape.constant_ref(eps);
        let m0_v = tape.constant_ref(m0);
        let loss = total_loss_tape(tape, eps_v, eps_hat, m0_v, m0_hat, skel, ab, weights)?;
        breakdown = loss.breakdown(tape, weights);
        Ok(loss.total)
    })?;
    Ok((breakdown, grads))
}

/// Owns the model, optimizer and step counter of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: DenoiserModel,
    pub optimizer: AdamW,
    /// Completed optimizer steps.
    pub step: u64,
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub skeleton: Skeleton,
}

impl Trainer {
    pub fn new(model: DenoiserModel, config: TrainConfig, schedule: NoiseSchedule, skeleton: Skeleton) -> Result<Self> {
        config.validate()?;
        if model.config().in_channels != skeleton.channels() {
            return Err(Error::dim(format!(
                "model has {} channels, skeleton {}",
                model.config().in_channels,
                skeleton.channels()
            )));
        }
        let optimizer = AdamW::new(&config, model.params());
        Ok(Trainer {
            model,
            optimizer,
            step: 0,
            config,
            schedule,
            skeleton,
        })
    }

    /// Continues from a checkpoint carrying optimizer state.
    pub fn resume(ck: Checkpoint, config: TrainConfig, skeleton: Skeleton) -> Result<Self> {
        let schedule = ck.schedule.build()?;
        let step = ck.step;
        let state = ck
            .optimizer
            .ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
        let mut trainer = Trainer::new(ck.model, config, schedule, skeleton)?;
        trainer.optimizer.state = state;
        trainer.step = step;
        Ok(trainer)
    }

    /// Runs optimizer step `self.step + 1` on its batch of `data`.
    pub fn train_step(&mut self, data: &[TrainSample]) -> Result<StepReport> {
        if data.is_empty() {
            return Err(Error::param("empty dataset"));
        }
        let step = self.step + 1;
        let cfg = &self.config;
        let idx = batch_indices(cfg.rng_seed, step, cfg.batch_size, data.len());
        let mut rng = stream_rng(cfg.rng_seed, step);
        let mut sum: Option<ParamStore> = None;
        let mut ts = Vec::with_capacity(idx.len());
        let mut parts = Vec::with_capacity(idx.len());
        for &i in &idx {
            let sample = &data[i];
            let t = rng.random_range(0..self.schedule.steps());
            let eps = standard_normal(&mut rng, sample.motion.rows(), sample.motion.cols());
            let (b, g) = sample_gradients(
                &self.model,
                sample,
                t,
                &eps,
                &self.skeleton,
                &self.schedule,
                &cfg.losses,
            )
            .map_err(|e| match e {
                Error::Numerical { name } => Error::Numerical {
                    name: format!("{name} (step {step}, sample {i}, t {t})"),
                },
                other => other,
            })?;
            match sum.as_mut() {
                None => sum = Some(g),
                Some(acc) => {
                    for (name, m) in acc.iter_mut() {
                        m.add_assign(g.require(name)?);
                    }
                }
            }
            ts.push(t);
            parts.push(b);
        }
        let mut grads = sum.expect("batch is non-empty");
        let inv = 1.0 / idx.len() as f64;
        for (_, m) in grads.iter_mut() {
            m.scale(inv);
        }
        let lr = cfg.learning_rate * cfg.warmup_factor(step);
        self.optimizer.step(self.model.params_mut(), &grads, lr)?;
        self.step = step;
        Ok(StepReport {
            step,
            t: ts,
            lr,
            loss: LossBreakdown::mean(&parts),
        })
    }

    pub fn checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint::new(
            self.model.clone(),
            &self.schedule,
            Some(self.optimizer.state.clone()),
            self.step,
            meta,
        )
    }
}

/// Files produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub reports: Vec<StepReport>,
    pub final_checkpoint: Option<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step_{step:06}.ckpt"))
}

/// Runs the trainer up to `config.max_steps`. With a checkpoint directory,
/// appends one JSON line per step to `loss.jsonl`, writes
/// `step_NNNNNN.ckpt` every `checkpoint_every` steps and at the end, and
/// mirrors the newest one to `latest.ckpt`.
pub fn train(
    trainer: &mut Trainer,
    data: &[TrainSample],
    ckpt_dir: Option<&Path>,
    meta: &CheckpointMeta,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::param("empty dataset"));
    }
    let mut log = match ckpt_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("loss.jsonl");
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, std::io::BufWriter::new(file)))
        }
        None => None,
    };
    let mut reports = Vec::new();
    let mut final_checkpoint = None;
    let max = trainer.config.max_steps;
    while trainer.step < max {
        let report = trainer.train_step(data)?;
        if report.step % 100 == 0 || report.step == 1 {
            log::info!(
                "step {} loss {:.5} (data {:.5})",
                report.step,
                report.loss.total,
                report.loss.data
            );
        }
        if let Some((path, w)) = log.as_mut() {
            let line = serde_json::to_string(&report).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        let every = trainer.config.checkpoint_every;
        let due = (every > 0 && report.step % every == 0) || report.step == max;
        if let (Some(dir), true) = (ckpt_dir, due) {
            let path = checkpoint_path(dir, report.step);
            let ck = trainer.checkpoint(meta.clone());
            ck.write(&path)?;
            ck.write(&dir.join("latest.ckpt"))?;
            final_checkpoint = Some(path);
        }
        reports.push(report);
    }
    if let Some((path, mut w)) = log {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(TrainOutcome {
        reports,
        final_checkpoint,
    })
}

/// Loss configurations compared by the ablation harness.
pub fn ablation_rows() -> Vec<(&'static str, LossWeights)> {
    let m_only = LossWeights {
        skeleton: false,
        symmetry: false,
        ..LossWeights::default()
    };
    vec![
        ("L_da", LossWeights::data_only()),
        ("L_da+L_m", m_only),
        ("L_da+L_m+L_s+L_a", LossWeights::default()),
    ]
}

/// One trained ablation configuration.
pub struct AblationRun {
    pub label: &'static str,
    pub trainer: Trainer,
    pub outcome: TrainOutcome,
}

/// Trains one model per [`ablation_rows`] entry from the same initial
/// model, configuration and seed, differing only in the loss terms.
pub fn ablation(
    model: &DenoiserModel,
    config: &TrainConfig,
    schedule: &NoiseSchedule,
    skeleton: &Skeleton,
    data: &[TrainSample],
) -> Result<Vec<AblationRun>> {
    ablation_rows()
        .into_iter()
        .map(|(label, losses)| {
            let cfg = TrainConfig {
                losses,
                ..config.clone()
            };
            let mut trainer = Trainer::new(model.clone(), cfg, schedule.clone(), skeleton.clone())?;
            let outcome = train(&mut trainer, data, None, &CheckpointMeta::default())?;
            Ok(AblationRun { label, trainer, outcome })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(seed: u64) -> DenoiserModel {
        let cfg = ModelConfig {
            in_channels: 24,
            base_channels: 4,
            channel_mults: vec![1, 2, 2],
            heads: 2,
            attn_dim: 4,
            context_dim: 4,
            time_dim: 8,
            groups: 2,
            ff_mult: 1,
            conditioning: ConditioningConfig::None,
        };
        DenoiserModel::new(cfg, seed).unwrap()
    }

    fn data(n: usize) -> Vec<TrainSample> {
        (0..n)
            .map(|k| TrainSample {
                motion: Mat::from_fn(8, 24, |r, c| ((r + c + k) as f64 * 0.3).sin()),
                condition: Conditioning::None,
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 3,
            max_steps: 6,
            warmup_steps: 2,
            ..TrainConfig::dance()
        }
    }

    #[test]
    fn task_defaults() {
        let d = TrainConfig::dance();
        assert_eq!((d.learning_rate, d.batch_size), (5e-4, 32));
        let t = TrainConfig::text();
        assert_eq!((t.learning_rate, t.batch_size, t.warmup_steps), (2e-4, 128, 500));
        assert_eq!((d.beta1, d.beta2, d.adam_eps, d.weight_decay), (0.9, 0.999, 1e-8, 0.01));
    }

    #[test]
    fn toml_overrides_task_defaults() {
        let cfg = TrainConfig::from_toml_str(
            "task = \"text\"\nbatch_size = 4\n[losses]\nsymmetry = false\n[model]\nbase_channels = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.task, Task::Text);
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.warmup_steps, 500);
        assert!(!cfg.losses.symmetry && cfg.losses.skeleton);
        assert_eq!(cfg.model.base_channels, 8);
        assert_eq!(cfg.model.heads, 4);
        assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
        let round = TrainConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn warmup_is_linear() {
        let cfg = TrainConfig::text();
        assert_eq!(cfg.warmup_factor(1), 1.0 / 500.0);
        assert_eq!(cfg.warmup_factor(250), 0.5);
        assert_eq!(cfg.warmup_factor(900), 1.0);
        assert_eq!(TrainConfig::dance().warmup_factor(1), 1.0);
    }

    #[test]
    fn zero_gradient_step_only_decays() {
        let model = tiny_model(1);
        let before = model.params().clone();
        let mut params = before.clone();
        let cfg = TrainConfig::dance();
        let mut opt = AdamW::new(&cfg, &params);
        let zeros = params.zeros_like();
        opt.step(&mut params, &zeros, 5e-4).unwrap();
        for ((_, a), (_, b)) in before.iter().zip(params.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*y, x * (1.0 - 5e-4 * 0.01));
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut params = ParamStore::new();
        params.insert("w", Mat::from_vec(1, 2, vec![1.0, -1.0]).unwrap());
        let mut grads = ParamStore::new();
        grads.insert("w", Mat::from_vec(1, 2, vec![0.5, -2.0]).unwrap());
        let cfg = TrainConfig { weight_decay: 0.0, ..TrainConfig::dance() };
        let mut opt = AdamW::new(&cfg, &params);
        opt.step(&mut params, &grads, 0.1).unwrap();
        let w = params.get("w").unwrap();
        assert!((w.get(0, 0) - 0.9).abs() < 1e-6);
        assert!((w.get(0, 1) + 0.9).abs() < 1e-6);
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut seen = Vec::new();
        for step in 1..=4 {
            seen.extend(batch_indices(7, step, 5, 10));
        }
        let (mut a, mut b) = (seen[..10].to_vec(), seen[10..].to_vec());
        a.sort();
        b.sort();
        assert_eq!(a, (0..10).collect::<Vec<_>>());
        assert_eq!(b, (0..10).collect::<Vec<_>>());
        assert_eq!(batch_indices(7, 3, 5, 10), batch_indices(7, 3, 5, 10));
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let d = data(4);
        let skel = Skeleton::toy8();
        let sched = NoiseSchedule::standard();
        let cfg = small_config();
        let mut full = Trainer::new(tiny_model(3), cfg.clone(), sched.clone(), skel.clone()).unwrap();
        let mut reports = Vec::new();
        for _ in 0..6 {
            reports.push(full.train_step(&d).unwrap());
        }
        let mut part = Trainer::new(tiny_model(3), cfg.clone(), sched.clone(), skel.clone()).unwrap();
        for _ in 0..3 {
            part.train_step(&d).unwrap();
        }
        let bytes = part.checkpoint(CheckpointMeta::default()).to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let mut resumed = Trainer::resume(ck, cfg, skel).unwrap();
        assert_eq!(resumed.step, 3);
        for r in &reports[3..] {
            assert_eq!(&resumed.train_step(&d).unwrap(), r);
        }
        assert_eq!(resumed.model.params(), full.model.params());
        assert_eq!(reports[0].lr, 5e-4 * 0.5);
        assert_eq!(reports[0].t.len(), 3);
    }

    #[test]
    fn train_writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { checkpoint_every: 4, ..small_config() };
        let mut tr = Trainer::new(tiny_model(4), cfg, NoiseSchedule::standard(), Skeleton::toy8()).unwrap();
        let out = train(&mut tr, &data(4), Some(dir.path()), &CheckpointMeta::default()).unwrap();
        assert_eq!(out.reports.len(), 6);
        assert!(checkpoint_path(dir.path(), 4).exists());
        assert_eq!(out.final_checkpoint, Some(checkpoint_path(dir.path(), 6)));
        let log = std::fs::read_to_string(dir.path().join("loss.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 6);
        let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
        for key in ["step", "t", "total", "data", "skeleton", "symmetry", "motion", "kinematic_weight", "lambda_a"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn ablation_runs_the_three_loss_rows() {
        let skel = Skeleton::toy8();
        let runs = ablation(&tiny_model(4), &small_config(), &NoiseSchedule::standard(), &skel, &data(4)).unwrap();
        let labels: Vec<_> = runs.iter().map(|r| r.label).collect();
        assert_eq!(labels, ["L_da", "L_da+L_m", "L_da+L_m+L_s+L_a"]);
        let flags: Vec<_> = runs.iter().map(|r| {
            let l = &r.trainer.config.losses;
            (l.motion, l.skeleton, l.symmetry)
        }).collect();
        assert_eq!(flags, [(false, false, false), (true, false, false), (true, true, true)]);
        // same seed and batches, so the data term only differs through training
        let first: Vec<_> = runs.iter().map(|r| r.outcome.reports[0].loss.data).collect();
        assert!(first.iter().all(|&v| v == first[0]));
        assert!(runs.iter().all(|r| r.outcome.reports.len() == 6));
    }
}

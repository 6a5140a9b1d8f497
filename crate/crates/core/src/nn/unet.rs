use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    attention, conv1d, group_norm, init_attention, init_conv, init_group_norm, init_linear,
    linear, time_embedding,
};
use super::params::{Binder, Init, ParamStore};
use super::{ConditioningContext, Modality};
use crate::conditioning::{self, Conditioning};
use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

/// Which conditioning front end the model owns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConditioningConfig {
    None,
    /// Linear projection of `mel_bands`-wide log-Mel frames.
    Audio { mel_bands: usize },
    /// Token embedding + self-attention encoder + MLP projection.
    Text {
        vocab_size: usize,
        layers: usize,
        heads: usize,
    },
}

/// Network hyperparameters.
///
/// Normalization is group norm, the activation is SiLU, downsampling is a
/// stride-2 kernel-3 convolution and upsampling is nearest-neighbour
/// doubling followed by a kernel-3 convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Pose width `3J`.
    pub in_channels: usize,
    pub base_channels: usize,
    /// One entry per resolution level; each level halves the frame axis.
    pub channel_mults: Vec<usize>,
    pub heads: usize,
    pub attn_dim: usize,
    pub context_dim: usize,
    /// Sinusoid width and time-MLP width.
    pub time_dim: usize,
    pub groups: usize,
    /// Feed-forward expansion inside each transformer block; 0 disables it.
    pub ff_mult: usize,
    pub conditioning: ConditioningConfig,
}

impl ModelConfig {
    /// Desk-scale defaults: 32 base channels, multipliers (1, 2, 4),
    /// 4 heads, 64-wide attention and context.
    pub fn toy(in_channels: usize, conditioning: ConditioningConfig) -> Self {
        ModelConfig {
            in_channels,
            base_channels: 32,
            channel_mults: vec![1, 2, 4],
            heads: 4,
            attn_dim: 64,
            context_dim: 64,
            time_dim: 64,
            groups: 8,
            ff_mult: 2,
            conditioning,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::param(m));
        if self.in_channels == 0 || self.base_channels == 0 || self.channel_mults.is_empty() {
            return bad("channel counts must be positive".into());
        }
        if self.heads == 0 || self.attn_dim % self.heads != 0 {
            return bad(format!(
                "attention dim {} not divisible by {} heads",
                self.attn_dim, self.heads
            ));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return bad(format!("time dim {} must be even", self.time_dim));
        }
        for &m in &self.channel_mults {
            let c = m * self.base_channels;
            if m == 0 || self.groups == 0 || c % self.groups != 0 {
                return bad(format!("{} groups do not divide {c} channels", self.groups));
            }
        }
        match &self.conditioning {
            ConditioningConfig::None => {}
            ConditioningConfig::Audio { mel_bands } if *mel_bands == 0 => {
                return bad("mel_bands must be positive".into())
            }
            ConditioningConfig::Text {
                vocab_size, heads, ..
            } if *vocab_size < 2
                || *heads == 0
                || self.context_dim % heads != 0
                || self.context_dim % 2 != 0 =>
            {
                return bad("text encoder needs vocab >= 2 and an even context_dim divisible by its heads".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// Frame counts must be a multiple of this after padding.
    pub fn length_multiple(&self) -> usize {
        1 << self.channel_mults.len()
    }

    fn level_channels(&self) -> Vec<usize> {
        self.channel_mults
            .iter()
            .map(|m| m * self.base_channels)
            .collect()
    }
}

/// The noise-prediction network `f(M_t, t, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    config: ModelConfig,
    params: ParamStore,
}

impl DenoiserModel {
    /// Fresh model with fan-in-scaled uniform init and a zero output layer.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        register(&config, &mut init);
        Ok(DenoiserModel {
            config,
            params: init.store,
        })
    }

    /// Rebuilds a model from stored parameters, checking every name and shape.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init::new(&mut rng);
        register(&config, &mut init);
        if init.store.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                init.store.len(),
                params.len()
            )));
        }
        for (name, proto) in init.store.iter() {
            let got = params.require(name)?;
            if got.shape() != proto.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    proto.shape()
                )));
            }
        }
        Ok(DenoiserModel { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Runs the conditioning front end on raw input. `None` when the model
    /// is unconditional or no condition is given.
    pub fn encode_condition<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        p: &mut Binder<'a>,
        cond: &Conditioning,
    ) -> Result<Option<Var>> {
        match (&self.config.conditioning, cond) {
            (ConditioningConfig::None, _) | (_, Conditioning::None) => Ok(None),
            (ConditioningConfig::Audio { mel_bands }, Conditioning::Audio(mel)) => {
                if mel.bands() != *mel_bands {
                    return Err(Error::dim(format!(
                        "model expects {mel_bands} Mel bands, got {}",
                        mel.bands()
                    )));
                }
                let x = tape.constant(mel.frames().clone());
                Ok(Some(conditioning::audio_context(tape, p, x)))
            }
            (ConditioningConfig::Text { vocab_size, heads, layers }, Conditioning::Text(tokens)) => {
                if tokens.is_empty() {
                    return Err(Error::dim("empty token sequence"));
                }
                let ids = tokens.clamped_ids(*vocab_size);
                Ok(Some(conditioning::text_context(
                    tape,
                    p,
                    &ids,
                    self.config.context_dim,
                    *layers,
                    *heads,
                )))
            }
            (cfg, c) => Err(Error::param(format!(
                "model conditioned on {cfg:?} cannot take {} input",
                c.kind()
            ))),
        }
    }

    /// Evaluates the conditioning front end without recording gradients.
    pub fn context(&self, cond: &Conditioning) -> Result<Option<ConditioningContext>> {
        let mut tape = Tape::new();
        let mut p = Binder::new(&self.params, false);
        let modality = match cond {
            Conditioning::None => Modality::None,
            Conditioning::Audio(_) => Modality::Audio,
            Conditioning::Text(_) => Modality::Text,
        };
        match self.encode_condition(&mut tape, &mut p, cond)? {
            Some(v) => Ok(Some(ConditioningContext::new(tape.value(v).clone(), modality)?)),
            None => Ok(None),
        }
    }

    fn check_input(&self, rows: usize, cols: usize) -> Result<()> {
        if cols != self.config.in_channels {
            return Err(Error::dim(format!(
                "model expects {} channels, got {cols}",
                self.config.in_channels
            )));
        }
        if rows == 0 {
            return Err(Error::dim("empty motion"));
        }
        Ok(())
    }

    /// Pads `frames x channels` input by repeating the last frame up to the
    /// next multiple of the downsampling factor.
    pub fn pad_frames(&self, x: &Mat) -> Mat {
        let m = self.config.length_multiple();
        let n = x.rows();
        let padded = n.div_ceil(m) * m;
        if padded == n {
            return x.clone();
        }
        Mat::from_fn(padded, x.cols(), |r, c| x.get(r.min(n - 1), c))
    }

    /// Records the network on `tape`. `x` is `frames x channels` with a
    /// frame count divisible by [`ModelConfig::length_multiple`]; `context`
    /// is `m x context_dim`.
    pub fn forward_tape<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        p: &mut Binder<'a>,
        x: Var,
        t: usize,
        context: Option<Var>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let (n, c) = tape.value(x).shape();
        self.check_input(n, c)?;
        if n % cfg.length_multiple() != 0 {
            return Err(Error::dim(format!(
                "frame count {n} is not a multiple of {}",
                cfg.length_multiple()
            )));
        }
        let context = match (&cfg.conditioning, context) {
            (ConditioningConfig::None, _) => None,
            (_, Some(ctx)) => {
                let w = tape.value(ctx).cols();
                if w != cfg.context_dim {
                    return Err(Error::dim(format!(
                        "context width {w}, model expects {}",
                        cfg.context_dim
                    )));
                }
                Some(ctx)
            }
            (_, None) => None,
        };

        let sinus = time_embedding(t, cfg.time_dim)?;
        let temb = tape.constant(Mat::from_vec(1, cfg.time_dim, sinus)?);
        let temb = linear(tape, p, temb, "time.mlp1");
        let temb = tape.silu(temb);
        let temb = linear(tape, p, temb, "time.mlp2");
        let temb = tape.silu(temb);

        let levels = cfg.level_channels();
        let g = cfg.groups;
        let xt = tape.transpose(x);
        let mut h = conv1d(tape, p, xt, "conv_in", 3, 1);
        let mut skips = Vec::with_capacity(levels.len());
        let mut ch = levels[0];
        for (i, &out) in levels.iter().enumerate() {
            h = res_block(tape, p, h, &format!("down{i}.res"), temb, g, ch != out);
            h = transformer_block(tape, p, h, &format!("down{i}.attn"), context, cfg);
            skips.push(h);
            h = conv1d(tape, p, h, &format!("down{i}.downsample"), 3, 2);
            ch = out;
        }
        h = res_block(tape, p, h, "mid.res", temb, g, false);
        h = transformer_block(tape, p, h, "mid.attn", context, cfg);
        for (i, &out) in levels.iter().enumerate().rev() {
            h = tape.upsample2(h);
            h = conv1d(tape, p, h, &format!("up{i}.upsample"), 3, 1);
            h = tape.concat_rows(h, skips[i]);
            h = res_block(tape, p, h, &format!("up{i}.res"), temb, g, true);
            h = transformer_block(tape, p, h, &format!("up{i}.attn"), context, cfg);
            let _ = out;
        }
        h = group_norm(tape, p, h, "out.norm", g);
        h = tape.silu(h);
        h = conv1d(tape, p, h, "out.conv", 3, 1);
        Ok(tape.transpose(h))
    }

    /// Predicted noise for a `frames x channels` motion at step `t`.
    /// Any frame count is accepted; padding is cropped from the output.
    pub fn forward(
        &self,
        mt: &Mat,
        t: usize,
        context: Option<&ConditioningContext>,
    ) -> Result<Mat> {
        self.check_input(mt.rows(), mt.cols())?;
        let n = mt.rows();
        let padded = self.pad_frames(mt);
        let mut tape = Tape::new();
        let mut p = Binder::new(&self.params, false);
        let x = tape.constant(padded);
        let ctx = match context {
            Some(c) if !c.is_none() => Some(tape.constant_ref(c.rows())),
            _ => None,
        };
        let out = self.forward_tape(&mut tape, &mut p, x, t, ctx)?;
        let full = tape.value(out);
        Ok(if full.rows() == n {
            full.clone()
        } else {
            full.slice_rows(0, n)
        })
    }
}

impl NoisePredictor for DenoiserModel {
    fn predict_noise(
        &self,
        noisy: &Mat,
        t: usize,
        context: Option<&ConditioningContext>,
    ) -> Result<Mat> {
        self.forward(noisy, t, context)
    }
}

fn register(cfg: &ModelConfig, init: &mut Init) {
    let td = cfg.time_dim;
    init_linear(init, "time.mlp1", td, td);
    init_linear(init, "time.mlp2", td, td);
    let levels = cfg.level_channels();
    init_conv(init, "conv_in", cfg.in_channels, levels[0], 3);
    let mut ch = levels[0];
    for (i, &out) in levels.iter().enumerate() {
        init_res_block(init, &format!("down{i}.res"), ch, out, td);
        init_transformer_block(init, &format!("down{i}.attn"), out, cfg);
        init_conv(init, &format!("down{i}.downsample"), out, out, 3);
        ch = out;
    }
    init_res_block(init, "mid.res", ch, ch, td);
    init_transformer_block(init, "mid.attn", ch, cfg);
    for (i, &out) in levels.iter().enumerate().rev() {
        init_conv(init, &format!("up{i}.upsample"), ch, out, 3);
        init_res_block(init, &format!("up{i}.res"), 2 * out, out, td);
        init_transformer_block(init, &format!("up{i}.attn"), out, cfg);
        ch = out;
    }
    init_group_norm(init, "out.norm", ch);
    init.zeros("out.conv.weight".into(), cfg.in_channels, ch * 3);
    init.zeros("out.conv.bias".into(), cfg.in_channels, 1);
    match &cfg.conditioning {
        ConditioningConfig::None => {}
        ConditioningConfig::Audio { mel_bands } => {
            conditioning::init_audio(init, *mel_bands, cfg.context_dim)
        }
        ConditioningConfig::Text {
            vocab_size,
            layers,
            ..
        } => conditioning::init_text(init, *vocab_size, cfg.context_dim, *layers),
    }
}

fn init_res_block(init: &mut Init, prefix: &str, cin: usize, cout: usize, time_dim: usize) {
    init_group_norm(init, &format!("{prefix}.norm1"), cin);
    init_conv(init, &format!("{prefix}.conv1"), cin, cout, 3);
    init_linear(init, &format!("{prefix}.time"), time_dim, cout);
    init_group_norm(init, &format!("{prefix}.norm2"), cout);
    init_conv(init, &format!("{prefix}.conv2"), cout, cout, 3);
    if cin != cout {
        init_conv(init, &format!("{prefix}.skip"), cin, cout, 1);
    }
}

fn init_transformer_block(init: &mut Init, prefix: &str, ch: usize, cfg: &ModelConfig) {
    init_group_norm(init, &format!("{prefix}.norm"), ch);
    if cfg.conditioning != ConditioningConfig::None {
        init_linear(init, &format!("{prefix}.ctx"), cfg.context_dim, ch);
    }
    init_attention(init, &format!("{prefix}.attn"), ch, ch, cfg.attn_dim);
    if cfg.ff_mult > 0 {
        init_group_norm(init, &format!("{prefix}.ff_norm"), ch);
        init_conv(init, &format!("{prefix}.ff1"), ch, ch * cfg.ff_mult, 1);
        init_conv(init, &format!("{prefix}.ff2"), ch * cfg.ff_mult, ch, 1);
    }
}

/// GN -> SiLU -> conv, time embedding added, GN -> SiLU -> conv, residual.
fn res_block<'a>(
    tape: &mut Tape<'a>,
    p: &mut Binder<'a>,
    x: Var,
    prefix: &str,
    temb: Var,
    groups: usize,
    has_skip: bool,
) -> Var {
    let h = group_norm(tape, p, x, &format!("{prefix}.norm1"), groups);
    let h = tape.silu(h);
    let h = conv1d(tape, p, h, &format!("{prefix}.conv1"), 3, 1);
    let e = linear(tape, p, temb, &format!("{prefix}.time"));
    let e = tape.transpose(e);
    let h = tape.add_col(h, e);
    let h = group_norm(tape, p, h, &format!("{prefix}.norm2"), groups);
    let h = tape.silu(h);
    let h = conv1d(tape, p, h, &format!("{prefix}.conv2"), 3, 1);
    let skip = if has_skip {
        conv1d(tape, p, x, &format!("{prefix}.skip"), 1, 1)
    } else {
        x
    };
    tape.add(h, skip)
}

/// Pre-norm attention (cross-attention when a context is present,
/// self-attention otherwise) followed by a pointwise feed-forward.
fn transformer_block<'a>(
    tape: &mut Tape<'a>,
    p: &mut Binder<'a>,
    x: Var,
    prefix: &str,
    context: Option<Var>,
    cfg: &ModelConfig,
) -> Var {
    let h = group_norm(tape, p, x, &format!("{prefix}.norm"), cfg.groups);
    let h = tape.transpose(h);
    let kv = match context {
        Some(c) => linear(tape, p, c, &format!("{prefix}.ctx")),
        None => h,
    };
    let a = attention(tape, p, h, kv, &format!("{prefix}.attn"), cfg.heads);
    let a = tape.transpose(a);
    let mut x = tape.add(x, a);
    if cfg.ff_mult > 0 {
        let h = group_norm(tape, p, x, &format!("{prefix}.ff_norm"), cfg.groups);
        let h = conv1d(tape, p, h, &format!("{prefix}.ff1"), 1, 1);
        let h = tape.silu(h);
        let h = conv1d(tape, p, h, &format!("{prefix}.ff2"), 1, 1);
        x = tape.add(x, h);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(cond: ConditioningConfig) -> ModelConfig {
        ModelConfig {
            in_channels: 9,
            base_channels: 4,
            channel_mults: vec![1, 2, 2],
            heads: 2,
            attn_dim: 4,
            context_dim: 4,
            time_dim: 8,
            groups: 2,
            ff_mult: 1,
            conditioning: cond,
        }
    }

    fn randomize(model: &mut DenoiserModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, m) in model.params_mut().iter_mut() {
            for v in m.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let mut model = DenoiserModel::new(tiny(ConditioningConfig::None), 1).unwrap();
        randomize(&mut model, 2);
        for n in [16, 40, 200, 13, 1] {
            let x = Mat::filled(n, 9, 0.1);
            assert_eq!(model.forward(&x, 5, None).unwrap().shape(), (n, 9));
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_prediction() {
        let model = DenoiserModel::new(ModelConfig::toy(24, ConditioningConfig::None), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Mat::from_fn(16, 24, |_, _| rng.random_range(-1.0..1.0));
        let out = model.forward(&x, 999, None).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut model = DenoiserModel::new(tiny(ConditioningConfig::None), 5).unwrap();
        randomize(&mut model, 6);
        let x = Mat::from_fn(8, 9, |r, c| ((r * 9 + c) as f64).sin());
        let a = model.forward(&x, 10, None).unwrap();
        let b = DenoiserModel::new(tiny(ConditioningConfig::None), 5)
            .map(|mut m| {
                randomize(&mut m, 6);
                m.forward(&x, 10, None).unwrap()
            })
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unconditional_model_ignores_context() {
        let mut model = DenoiserModel::new(tiny(ConditioningConfig::None), 7).unwrap();
        randomize(&mut model, 8);
        let x = Mat::from_fn(8, 9, |r, c| ((r + c) as f64).cos());
        let ctx = ConditioningContext::new(Mat::filled(3, 4, 0.7), Modality::Audio).unwrap();
        assert_eq!(
            model.forward(&x, 3, None).unwrap(),
            model.forward(&x, 3, Some(&ctx)).unwrap()
        );
    }

    #[test]
    fn context_changes_conditional_output() {
        let mut model = DenoiserModel::new(tiny(ConditioningConfig::Audio { mel_bands: 5 }), 9).unwrap();
        randomize(&mut model, 10);
        let x = Mat::from_fn(8, 9, |r, c| ((r + 2 * c) as f64).cos());
        let c1 = ConditioningContext::new(Mat::filled(3, 4, 0.7), Modality::Audio).unwrap();
        let c2 = ConditioningContext::new(Mat::from_fn(3, 4, |r, c| (r * c) as f64), Modality::Audio).unwrap();
        assert_ne!(model.forward(&x, 3, Some(&c1)).unwrap(), model.forward(&x, 3, Some(&c2)).unwrap());
        let bad = ConditioningContext::new(Mat::filled(3, 5, 0.7), Modality::Audio).unwrap();
        assert!(model.forward(&x, 3, Some(&bad)).is_err());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let model = DenoiserModel::new(tiny(ConditioningConfig::None), 1).unwrap();
        assert!(matches!(model.forward(&Mat::zeros(8, 6), 0, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn forward_tape_rejects_unpadded_length() {
        let model = DenoiserModel::new(tiny(ConditioningConfig::None), 1).unwrap();
        let mut tape = Tape::new();
        let mut p = Binder::new(model.params(), false);
        let x = tape.constant(Mat::zeros(12, 9));
        assert!(model.forward_tape(&mut tape, &mut p, x, 0, None).is_err());
    }

    #[test]
    fn parameter_names_are_unique_and_stable() {
        let a = DenoiserModel::new(ModelConfig::toy(24, ConditioningConfig::Audio { mel_bands: 80 }), 1).unwrap();
        let b = DenoiserModel::new(ModelConfig::toy(24, ConditioningConfig::Audio { mel_bands: 80 }), 2).unwrap();
        let na: Vec<_> = a.params().names().collect();
        let nb: Vec<_> = b.params().names().collect();
        assert_eq!(na, nb);
        let mut dedup = na.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), na.len());
        assert!(na.iter().any(|n| n.as_str() == "down0.attn.attn.q.weight"));
        assert!(na.iter().any(|n| n.as_str() == "audio.proj.weight"));
    }

    #[test]
    fn from_parts_checks_shapes() {
        let cfg = tiny(ConditioningConfig::None);
        let model = DenoiserModel::new(cfg.clone(), 1).unwrap();
        assert!(DenoiserModel::from_parts(cfg.clone(), model.params().clone()).is_ok());
        let mut broken = model.params().clone();
        *broken.get_mut("conv_in.bias").unwrap() = Mat::zeros(3, 1);
        assert!(DenoiserModel::from_parts(cfg, broken).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(ConditioningConfig::None);
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(ConditioningConfig::None);
        cfg.groups = 3;
        assert!(cfg.validate().is_err());
    }
}

//! Audio and text front ends that turn raw conditioning input into the
//! `m x d` context rows consumed by the denoiser.

mod audio;
mod text;

pub use audio::{
    hz_to_mel, mel_band_centers, mel_filterbank, mel_spectrogram, mel_to_hz, read_wav, resample,
    write_wav, MelConfig, MelSpectrogram, Waveform, LOG_FLOOR,
};
pub use text::{tokenize, TokenSequence, Vocabulary, PAD_ID, UNK_ID};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    attention, init_attention, init_layer_norm, init_linear, layer_norm, linear, time_embedding,
    Binder, ConditioningContext, Init, Modality, ParamStore,
};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

/// Raw conditioning input handed to a model.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditioning {
    None,
    Audio(MelSpectrogram),
    Text(TokenSequence),
}

impl Conditioning {
    pub fn kind(&self) -> &'static str {
        match self {
            Conditioning::None => "none",
            Conditioning::Audio(_) => "audio",
            Conditioning::Text(_) => "text",
        }
    }
}

pub(crate) fn init_audio(init: &mut Init, bands: usize, dim: usize) {
    init_linear(init, "audio.proj", bands, dim);
}

/// `mel W + b` on the tape.
pub(crate) fn audio_context<'a>(tape: &mut Tape<'a>, p: &mut Binder<'a>, mel: Var) -> Var {
    linear(tape, p, mel, "audio.proj")
}

pub(crate) fn init_text(init: &mut Init, vocab_size: usize, dim: usize, layers: usize) {
    init.fan_in("text.embed".into(), vocab_size, dim, dim);
    for l in 0..layers {
        let pre = format!("text.layer{l}");
        init_layer_norm(init, &format!("{pre}.norm1"), dim);
        init_attention(init, &format!("{pre}.attn"), dim, dim, dim);
        init_layer_norm(init, &format!("{pre}.norm2"), dim);
        init_linear(init, &format!("{pre}.ff1"), dim, 2 * dim);
        init_linear(init, &format!("{pre}.ff2"), 2 * dim, dim);
    }
    init_linear(init, "text.proj1", dim, dim);
    init_linear(init, "text.proj2", dim, dim);
}

/// Embedding lookup, sinusoidal positions, pre-norm self-attention layers
/// and a two-layer MLP projection.
pub(crate) fn text_context<'a>(
    tape: &mut Tape<'a>,
    p: &mut Binder<'a>,
    ids: &[usize],
    dim: usize,
    layers: usize,
    heads: usize,
) -> Var {
    let table = p.get(tape, "text.embed");
    let emb = tape.gather_rows(table, ids);
    let mut pos = Mat::zeros(ids.len(), dim);
    for i in 0..ids.len() {
        let e = time_embedding(i, dim).expect("context dim validated even");
        pos.row_mut(i).copy_from_slice(&e);
    }
    let pos = tape.constant(pos);
    let mut x = tape.add(emb, pos);
    for l in 0..layers {
        let pre = format!("text.layer{l}");
        let h = layer_norm(tape, p, x, &format!("{pre}.norm1"));
        let a = attention(tape, p, h, h, &format!("{pre}.attn"), heads);
        x = tape.add(x, a);
        let h = layer_norm(tape, p, x, &format!("{pre}.norm2"));
        let h = linear(tape, p, h, &format!("{pre}.ff1"));
        let h = tape.silu(h);
        let h = linear(tape, p, h, &format!("{pre}.ff2"));
        x = tape.add(x, h);
    }
    let h = linear(tape, p, x, "text.proj1");
    let h = tape.silu(h);
    linear(tape, p, h, "text.proj2")
}

/// Linear map from `k` Mel bands to a `d`-wide context.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioProjection {
    /// `k x d`
    pub weight: Mat,
    /// `1 x d`
    pub bias: Mat,
}

impl AudioProjection {
    pub fn new(weight: Mat, bias: Mat) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::dim(format!(
                "bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(AudioProjection { weight, bias })
    }
}

/// `c = mel W + b`, one context row per spectrogram frame.
pub fn project_audio(mel: &MelSpectrogram, proj: &AudioProjection) -> Result<ConditioningContext> {
    if mel.bands() != proj.weight.rows() {
        return Err(Error::dim(format!(
            "projection expects {} bands, got {}",
            proj.weight.rows(),
            mel.bands()
        )));
    }
    let mut store = ParamStore::new();
    store.insert("audio.proj.weight", proj.weight.clone());
    store.insert("audio.proj.bias", proj.bias.clone());
    let mut tape = Tape::new();
    let mut p = Binder::new(&store, false);
    let x = tape.constant_ref(mel.frames());
    let c = audio_context(&mut tape, &mut p, x);
    ConditioningContext::new(tape.value(c).clone(), Modality::Audio)
}

/// Standalone trainable-from-scratch token encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    params: ParamStore,
    vocab_size: usize,
    dim: usize,
    layers: usize,
    heads: usize,
}

impl TextEncoder {
    pub fn new(vocab_size: usize, dim: usize, layers: usize, heads: usize, seed: u64) -> Result<Self> {
        if vocab_size < 2 || dim == 0 || dim % 2 != 0 || heads == 0 || dim % heads != 0 {
            return Err(Error::param(format!(
                "invalid text encoder: vocab {vocab_size}, dim {dim}, heads {heads}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        init_text(&mut init, vocab_size, dim, layers);
        Ok(TextEncoder {
            params: init.store,
            vocab_size,
            dim,
            layers,
            heads,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Encodes a token sequence into `len x d` context rows.
pub fn encode_text(tokens: &TokenSequence, encoder: &TextEncoder) -> Result<ConditioningContext> {
    if tokens.is_empty() {
        return Err(Error::dim("empty token sequence"));
    }
    let ids = tokens.clamped_ids(encoder.vocab_size);
    let mut tape = Tape::new();
    let mut p = Binder::new(&encoder.params, false);
    let c = text_context(&mut tape, &mut p, &ids, encoder.dim, encoder.layers, encoder.heads);
    ConditioningContext::new(tape.value(c).clone(), Modality::Text)
}

//! Wiring of encoders, attention and the conditional decoder into the
//! architectures under comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::attention::{
    attend, attention_keys, final_combine, pair_combine, AttentionKeys, Combiner,
    HierarchicalAttentionWeights, ModalityAttentionParams,
};
use crate::data::vocab::{BOS, PAD};
use crate::encoders::{
    bin_audio_features, embed_tokens, encode_bidirectional, gru_step, prefix_len, BiEncoderParams, CellKind,
    ModalityEncoding, ModalityKind, RecurrentCellParams,
};
use crate::error::{Error, Result};
use crate::init::Init;
use crate::tensor::{Checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use crate::training::apply_dropout;

pub const AUDIO_DIM: usize = 43;
pub const VIDEO_DIM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Mast,
    TrimodalH2,
    MastBinned,
    AudioText,
    VideoText,
    TextOnly,
    AudioOnly,
    VideoOnly,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Mast,
        Variant::TrimodalH2,
        Variant::MastBinned,
        Variant::AudioText,
        Variant::VideoText,
        Variant::TextOnly,
        Variant::AudioOnly,
        Variant::VideoOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mast => "mast",
            Variant::TrimodalH2 => "trimodal_h2",
            Variant::MastBinned => "mast_binned",
            Variant::AudioText => "audio_text",
            Variant::VideoText => "video_text",
            Variant::TextOnly => "text_only",
            Variant::AudioOnly => "audio_only",
            Variant::VideoOnly => "video_only",
        }
    }

    /// Modalities consumed, in combiner order.
    pub fn modalities(self) -> &'static [ModalityKind] {
        use ModalityKind::*;
        match self {
            Variant::Mast | Variant::TrimodalH2 | Variant::MastBinned => &[Audio, Text, Video],
            Variant::AudioText => &[Audio, Text],
            Variant::VideoText => &[Video, Text],
            Variant::TextOnly => &[Text],
            Variant::AudioOnly => &[Audio],
            Variant::VideoOnly => &[Video],
        }
    }

    pub fn uses(self, kind: ModalityKind) -> bool {
        self.modalities().contains(&kind)
    }

    pub fn is_mast(self) -> bool {
        matches!(self, Variant::Mast | Variant::MastBinned)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub embed: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub d_att: usize,
    pub d_fuse: usize,
    pub d_final: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            embed: 256,
            enc_hidden: 128,
            dec_hidden: 128,
            d_att: 256,
            d_fuse: 256,
            d_final: 256,
        }
    }
}

impl Dims {
    /// Every width set to `d` (encoder output is then `2d`).
    pub fn uniform(d: usize) -> Self {
        Self {
            embed: d,
            enc_hidden: d,
            dec_hidden: d,
            d_att: d,
            d_fuse: d,
            d_final: d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub dims: Dims,
    pub vocab_size: usize,
    pub audio_dim: usize,
    pub video_dim: usize,
    pub audio_bin_size: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, vocab_size: usize) -> Self {
        Self {
            variant,
            dims: Dims::default(),
            vocab_size,
            audio_dim: AUDIO_DIM,
            video_dim: VIDEO_DIM,
            audio_bin_size: 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let widths = [
            ("embed", d.embed),
            ("enc_hidden", d.enc_hidden),
            ("dec_hidden", d.dec_hidden),
            ("d_att", d.d_att),
            ("d_fuse", d.d_fuse),
            ("d_final", d.d_final),
            ("audio_dim", self.audio_dim),
            ("video_dim", self.video_dim),
            ("audio_bin_size", self.audio_bin_size),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the four reserved tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }

    pub fn encoder_width(&self) -> usize {
        2 * self.dims.enc_hidden
    }

    /// Width of the vector fed to the decoder's second transition.
    pub fn context_width(&self) -> usize {
        if self.variant.modalities().len() == 1 {
            self.encoder_width()
        } else {
            self.dims.d_final
        }
    }

    pub fn to_text(&self) -> String {
        let d = &self.dims;
        format!(
            "variant={}\nvocab_size={}\nembed={}\nenc_hidden={}\ndec_hidden={}\nd_att={}\nd_fuse={}\nd_final={}\naudio_dim={}\nvideo_dim={}\naudio_bin_size={}\n",
            self.variant,
            self.vocab_size,
            d.embed,
            d.enc_hidden,
            d.dec_hidden,
            d.d_att,
            d.d_fuse,
            d.d_final,
            self.audio_dim,
            self.video_dim,
            self.audio_bin_size
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed config line {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            map.get(k).ok_or_else(|| Error::Config(format!("missing config key {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("config key {k} is not a count")))
        };
        let cfg = Self {
            variant: get("variant")?.parse()?,
            vocab_size: num("vocab_size")?,
            dims: Dims {
                embed: num("embed")?,
                enc_hidden: num("enc_hidden")?,
                dec_hidden: num("dec_hidden")?,
                d_att: num("d_att")?,
                d_fuse: num("d_fuse")?,
                d_final: num("d_final")?,
            },
            audio_dim: num("audio_dim")?,
            video_dim: num("video_dim")?,
            audio_bin_size: num("audio_bin_size")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// How modality contexts become the decoder's context vector.
#[derive(Debug, Clone)]
pub enum Fusion {
    /// β over audio-text, γ over video-text, δ over the two pairs.
    Mast {
        audio_text: Combiner,
        video_text: Combiner,
        pairs: Combiner,
    },
    /// One second-level attention (η) over all consumed modalities.
    Flat(Combiner),
    /// Unimodal: the modality context goes straight to the decoder.
    Single,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderParams {
    pub embedding: ParamId,
    /// Embedded previous token and `s_{i-1}` → intermediate state.
    pub transition_in: RecurrentCellParams,
    /// Context and intermediate state → `s_i`.
    pub transition_ctx: RecurrentCellParams,
    pub out_hidden_w: ParamId,
    pub out_hidden_b: ParamId,
    pub out_vocab_w: ParamId,
    pub out_vocab_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub text_embedding: Option<ParamId>,
    pub encoders: BTreeMap<ModalityKind, BiEncoderParams>,
    pub attention: BTreeMap<ModalityKind, ModalityAttentionParams>,
    pub fusion: Fusion,
    pub decoder: DecoderParams,
}

/// One example's model inputs; sequences may carry trailing padding.
#[derive(Debug, Clone, Default)]
pub struct ModelInput {
    pub text: Vec<usize>,
    pub text_mask: Vec<bool>,
    pub audio: Option<Tensor>,
    pub audio_mask: Vec<bool>,
    pub video: Option<Tensor>,
    pub video_mask: Vec<bool>,
}

impl ModelInput {
    /// Unpadded input with every position valid.
    pub fn new(text: Vec<usize>, audio: Option<Tensor>, video: Option<Tensor>) -> Self {
        Self {
            text_mask: vec![true; text.len()],
            audio_mask: audio.as_ref().map_or(Vec::new(), |a| vec![true; a.rows()]),
            video_mask: video.as_ref().map_or(Vec::new(), |v| vec![true; v.rows()]),
            text,
            audio,
            video,
        }
    }
}

/// Dropout settings threaded through a forward pass.
pub struct Dropout<'r> {
    pub p: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    pub fn off() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.p > 0.0 => apply_dropout(tape, x, self.p, true, rng),
            _ => Ok(x),
        }
    }
}

/// Encoded inputs with attention keys, ready for decoder steps.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub keys: BTreeMap<ModalityKind, AttentionKeys>,
}

impl Encoded {
    pub fn encoding(&self, kind: ModalityKind) -> Option<&ModalityEncoding> {
        self.keys.get(&kind).map(|k| &k.encoding)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: Var,
    pub logprobs: Var,
    pub weights: HierarchicalAttentionWeights,
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let mut params = ParamStore::new();
        let d = config.dims;
        let enc_w = config.encoder_width();
        let variant = config.variant;

        let mut text_embedding = None;
        let mut encoders = BTreeMap::new();
        for &kind in variant.modalities() {
            let (cell, input_dim) = match kind {
                ModalityKind::Text => {
                    text_embedding = Some(params.insert("text.embedding", init.embedding(config.vocab_size, d.embed))?);
                    (CellKind::Gru, d.embed)
                }
                ModalityKind::Audio => (CellKind::Lstm, config.audio_dim),
                ModalityKind::Video => (CellKind::Lstm, config.video_dim),
            };
            let enc = BiEncoderParams::new(&mut params, &format!("{kind}.enc"), cell, input_dim, d.enc_hidden, &mut init)?;
            encoders.insert(kind, enc);
        }

        let mut attention = BTreeMap::new();
        for &kind in variant.modalities() {
            let p = ModalityAttentionParams::new(&mut params, &format!("att.{kind}"), d.dec_hidden, enc_w, d.d_att, &mut init)?;
            attention.insert(kind, p);
        }

        let fusion = match variant {
            Variant::Mast | Variant::MastBinned => Fusion::Mast {
                audio_text: Combiner::new(
                    &mut params,
                    "fuse.audio_text",
                    &[("audio", enc_w), ("text", enc_w)],
                    d.dec_hidden,
                    d.d_att,
                    d.d_fuse,
                    &mut init,
                )?,
                video_text: Combiner::new(
                    &mut params,
                    "fuse.video_text",
                    &[("video", enc_w), ("text", enc_w)],
                    d.dec_hidden,
                    d.d_att,
                    d.d_fuse,
                    &mut init,
                )?,
                pairs: Combiner::new(
                    &mut params,
                    "fuse.pairs",
                    &[("audio_text", d.d_fuse), ("video_text", d.d_fuse)],
                    d.dec_hidden,
                    d.d_att,
                    d.d_final,
                    &mut init,
                )?,
            },
            Variant::TrimodalH2 | Variant::AudioText | Variant::VideoText => {
                let members: Vec<(&str, usize)> = variant.modalities().iter().map(|k| (k.name(), enc_w)).collect();
                Fusion::Flat(Combiner::new(
                    &mut params,
                    "fuse.flat",
                    &members,
                    d.dec_hidden,
                    d.d_att,
                    d.d_final,
                    &mut init,
                )?)
            }
            Variant::TextOnly | Variant::AudioOnly | Variant::VideoOnly => Fusion::Single,
        };

        let decoder = DecoderParams {
            embedding: params.insert("dec.embedding", init.embedding(config.vocab_size, d.embed))?,
            transition_in: RecurrentCellParams::new(&mut params, "dec.gru_in", CellKind::Gru, d.embed, d.dec_hidden, &mut init)?,
            transition_ctx: RecurrentCellParams::new(
                &mut params,
                "dec.gru_ctx",
                CellKind::Gru,
                config.context_width(),
                d.dec_hidden,
                &mut init,
            )?,
            out_hidden_w: params.insert("dec.out_hidden.w", init.matrix(d.embed, d.dec_hidden))?,
            out_hidden_b: params.insert("dec.out_hidden.b", init.bias(d.embed))?,
            out_vocab_w: params.insert("dec.out_vocab.w", init.matrix(config.vocab_size, d.embed))?,
            out_vocab_b: params.insert("dec.out_vocab.b", init.bias(config.vocab_size))?,
        };

        Ok(Self {
            config,
            params,
            text_embedding,
            encoders,
            attention,
            fusion,
            decoder,
        })
    }

    /// Parameters with the config serialized into the metadata header.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(self.config.to_text(), &self.params)
    }

    /// Rebuilds the architecture named in the header and loads the values.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_text(&ckpt.metadata)?;
        let mut model = Self::build(config, 0)?;
        ckpt.restore_into(&mut model.params)?;
        Ok(model)
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count_scalars()
    }

    /// Encodes every modality the variant consumes.
    pub fn encode<'a>(&'a self, tape: &mut Tape<'a>, input: &ModelInput, dropout: &mut Dropout<'_>) -> Result<Encoded> {
        let store = &self.params;
        let mut keys = BTreeMap::new();
        for &kind in self.config.variant.modalities() {
            let enc_params = &self.encoders[&kind];
            let encoding = match kind {
                ModalityKind::Text => {
                    if input.text.is_empty() || input.text.len() != input.text_mask.len() {
                        return Err(Error::EmptyInput("text tokens"));
                    }
                    let table = tape.param(store, self.text_embedding.expect("text variant owns an embedding"));
                    let emb = embed_tokens(tape, table, &input.text)?;
                    let emb = dropout.apply(tape, emb)?;
                    let mut enc = encode_bidirectional(tape, store, kind, emb, &input.text_mask, enc_params)?;
                    enc.states = dropout.apply(tape, enc.states)?;
                    enc
                }
                ModalityKind::Audio => {
                    let frames = input
                        .audio
                        .as_ref()
                        .ok_or_else(|| Error::contract(format!("variant {} needs audio features", self.config.variant)))?;
                    let (frames, mask) = if self.config.variant == Variant::MastBinned {
                        bin_padded(frames, &input.audio_mask, self.config.audio_bin_size)?
                    } else {
                        (frames.clone(), input.audio_mask.clone())
                    };
                    let x = tape.constant(frames);
                    encode_bidirectional(tape, store, kind, x, &mask, enc_params)?
                }
                ModalityKind::Video => {
                    let frames = input
                        .video
                        .as_ref()
                        .ok_or_else(|| Error::contract(format!("variant {} needs video features", self.config.variant)))?;
                    let x = tape.constant(frames.clone());
                    encode_bidirectional(tape, store, kind, x, &input.video_mask, enc_params)?
                }
            };
            keys.insert(kind, attention_keys(tape, store, &encoding, &self.attention[&kind])?);
        }
        Ok(Encoded { keys })
    }

    pub fn initial_state(&self, tape: &mut Tape<'_>) -> Var {
        tape.constant(Tensor::zeros(&[self.config.dims.dec_hidden]))
    }

    /// One conditional-decoder step: transition on the previous token,
    /// hierarchical attention queried with the intermediate state, transition
    /// on the fused context, then two output layers and a log-softmax.
    pub fn decoder_step<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        prev_token: usize,
        state: Var,
        encoded: &Encoded,
        dropout: &mut Dropout<'_>,
    ) -> Result<StepOutput> {
        let store = &self.params;
        let dec = &self.decoder;
        if prev_token >= self.config.vocab_size {
            return Err(Error::OutOfVocabulary {
                id: prev_token,
                size: self.config.vocab_size,
            });
        }
        if tape.shape(state) != [self.config.dims.dec_hidden] {
            return Err(Error::dim("decoder state", tape.shape(state), &[self.config.dims.dec_hidden]));
        }
        let table = tape.param(store, dec.embedding);
        let emb = tape.gather(table, &[prev_token])?;
        let emb = tape.row(emb, 0)?;
        let query = gru_step(tape, store, emb, state, &dec.transition_in)?;

        let mut weights = HierarchicalAttentionWeights::default();
        let mut contexts = BTreeMap::new();
        for &kind in self.config.variant.modalities() {
            let keys = encoded
                .keys
                .get(&kind)
                .ok_or_else(|| Error::contract(format!("missing {kind} encoding")))?;
            let (alpha, ctx) = attend(tape, store, query, keys, &self.attention[&kind])?;
            weights.alpha.insert(kind, tape.value(alpha).to_vec());
            contexts.insert(kind, ctx);
        }

        let context = match &self.fusion {
            Fusion::Mast {
                audio_text,
                video_text,
                pairs,
            } => {
                let c = |k| contexts[&k];
                let (beta, d_at) = pair_combine(tape, store, query, c(ModalityKind::Audio), c(ModalityKind::Text), audio_text)?;
                let (gamma, d_vt) = pair_combine(tape, store, query, c(ModalityKind::Video), c(ModalityKind::Text), video_text)?;
                let (delta, c_f) = final_combine(tape, store, query, d_at, d_vt, pairs)?;
                weights.beta = Some(pair(tape.value(beta)));
                weights.gamma = Some(pair(tape.value(gamma)));
                weights.delta = Some(pair(tape.value(delta)));
                c_f
            }
            Fusion::Flat(combiner) => {
                let inputs: Vec<Var> = self.config.variant.modalities().iter().map(|k| contexts[k]).collect();
                let (eta, c) = combiner.combine(tape, store, query, &inputs)?;
                weights.eta = Some(tape.value(eta).to_vec());
                c
            }
            Fusion::Single => contexts[&self.config.variant.modalities()[0]],
        };

        let next = gru_step(tape, store, context, query, &dec.transition_ctx)?;
        let out = dropout.apply(tape, next)?;
        let w1 = tape.param(store, dec.out_hidden_w);
        let b1 = tape.param(store, dec.out_hidden_b);
        let w2 = tape.param(store, dec.out_vocab_w);
        let b2 = tape.param(store, dec.out_vocab_b);
        let hidden = tape.matvec(w1, out)?;
        let hidden = tape.add(hidden, b1)?;
        let hidden = tape.tanh(hidden);
        let logits = tape.matvec(w2, hidden)?;
        let logits = tape.add(logits, b2)?;
        let logprobs = tape.log_softmax(logits)?;
        Ok(StepOutput {
            state: next,
            logprobs,
            weights,
        })
    }

    /// Teacher-forced pass over `targets` (the gold summary followed by
    /// `<eos>`, possibly padded). Step `i` is fed `targets[i-1]` (`<bos>` at
    /// step 0); returns one output per target position.
    pub fn forward_example<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        input: &ModelInput,
        targets: &[usize],
        dropout: &mut Dropout<'_>,
    ) -> Result<Vec<StepOutput>> {
        let encoded = self.encode(tape, input, dropout)?;
        let mut state = self.initial_state(tape);
        let mut prev = BOS;
        let mut steps = Vec::with_capacity(targets.len());
        for &t in targets {
            let out = self.decoder_step(tape, prev, state, &encoded, dropout)?;
            state = out.state;
            prev = t;
            steps.push(out);
        }
        Ok(steps)
    }

    /// Evaluation-mode teacher-forced pass for a whole batch.
    pub fn forward(&self, batch: &crate::data::Batch) -> Result<Vec<ForwardOutput>> {
        (0..batch.len())
            .map(|i| {
                let mut tape = Tape::new();
                let targets = batch.targets(i);
                let steps = self.forward_example(&mut tape, &batch.input(i), targets, &mut Dropout::off())?;
                let valid = targets.iter().take_while(|&&t| t != PAD).count();
                Ok(ForwardOutput {
                    logprobs: steps[..valid].iter().map(|s| tape.value(s.logprobs).to_vec()).collect(),
                    weights: steps[..valid].iter().map(|s| s.weights.clone()).collect(),
                })
            })
            .collect()
    }
}

/// Detached per-step outputs of one example.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logprobs: Vec<Vec<f64>>,
    pub weights: Vec<HierarchicalAttentionWeights>,
}

fn pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

/// Bins the valid prefix and re-pads to `ceil(len / bin)` rows.
fn bin_padded(frames: &Tensor, mask: &[bool], bin: usize) -> Result<(Tensor, Vec<bool>)> {
    if mask.len() != frames.rows() {
        return Err(Error::dim("audio mask", frames.shape(), &[mask.len()]));
    }
    let valid = prefix_len(mask)?;
    if valid == 0 {
        return Err(Error::EmptyInput("audio frames"));
    }
    let cols = frames.cols();
    let prefix = Tensor::matrix(valid, cols, frames.data()[..valid * cols].to_vec())?;
    let binned = bin_audio_features(&prefix, bin)?;
    let total = frames.rows().div_ceil(bin);
    let mut data = binned.into_data();
    let valid_bins = data.len() / cols;
    data.resize(total * cols, 0.0);
    let mask = (0..total).map(|i| i < valid_bins).collect();
    Ok((Tensor::matrix(total, cols, data)?, mask))
}

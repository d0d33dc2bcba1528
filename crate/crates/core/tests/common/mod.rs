//! Independent reference implementations used by the integration tests.
//!
//! Everything here works on plain `Vec<f64>` read straight out of a
//! `ParamStore` by name, with compensated summation, and shares no code with
//! the tape.

#![allow(dead_code)]

pub mod suites;

use std::collections::BTreeMap;

use mast_core::data::BOS;
use mast_core::model::{Dims, ModelConfig, ModelInput, Variant};
use mast_core::{Model, ModalityKind, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Neumaier-compensated sum.
pub fn nsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    nsum(a.iter().zip(b).map(|(x, y)| x * y))
}

pub fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.cols(), x.len(), "matvec width");
    (0..m.rows()).map(|i| dot(m.row(i), x)).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Direct softmax over the unmasked positions; masked positions get 0.
pub fn softmax(e: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let on = |j: usize| mask.is_none_or(|m| m[j]);
    let max = (0..e.len()).filter(|&j| on(j)).map(|j| e[j]).fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = (0..e.len()).map(|j| if on(j) { (e[j] - max).exp() } else { 0.0 }).collect();
    let z = nsum(ex.iter().copied());
    ex.iter().map(|x| x / z).collect()
}

pub fn log_softmax(e: &[f64]) -> Vec<f64> {
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + nsum(e.iter().map(|x| (x - max).exp())).ln();
    e.iter().map(|x| x - lse).collect()
}

pub fn p<'s>(store: &'s ParamStore, name: &str) -> &'s Tensor {
    store.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"))
}

fn gates(t: &[f64], k: usize, h: usize) -> &[f64] {
    &t[k * h..(k + 1) * h]
}

/// GRU with gates `[r; z; n]`, written as `(1 - z) h + z ñ`.
pub fn gru(store: &ParamStore, prefix: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let w = p(store, &format!("{prefix}.w_input"));
    let u = p(store, &format!("{prefix}.w_hidden"));
    let b = p(store, &format!("{prefix}.bias")).data();
    let d = h.len();
    let wx = add(&matvec(w, x), b);
    let uh = matvec(u, h);
    (0..d)
        .map(|j| {
            let r = sigmoid(gates(&wx, 0, d)[j] + gates(&uh, 0, d)[j]);
            let z = sigmoid(gates(&wx, 1, d)[j] + gates(&uh, 1, d)[j]);
            let n = (gates(&wx, 2, d)[j] + r * gates(&uh, 2, d)[j]).tanh();
            (1.0 - z) * h[j] + z * n
        })
        .collect()
}

/// LSTM with gates `[i; f; g; o]`.
pub fn lstm(store: &ParamStore, prefix: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = p(store, &format!("{prefix}.w_input"));
    let u = p(store, &format!("{prefix}.w_hidden"));
    let b = p(store, &format!("{prefix}.bias")).data();
    let d = h.len();
    let pre = add(&add(&matvec(w, x), b), &matvec(u, h));
    let mut h2 = vec![0.0; d];
    let mut c2 = vec![0.0; d];
    for j in 0..d {
        let i = sigmoid(gates(&pre, 0, d)[j]);
        let f = sigmoid(gates(&pre, 1, d)[j]);
        let g = gates(&pre, 2, d)[j].tanh();
        let o = sigmoid(gates(&pre, 3, d)[j]);
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Gru,
    Lstm,
}

/// Bidirectional encoding of `rows[..valid]`; padded rows are zero.
pub fn encode(store: &ParamStore, prefix: &str, cell: Cell, rows: &[Vec<f64>], valid: usize, hidden: usize) -> Vec<Vec<f64>> {
    let run = |dir: &str, order: Vec<usize>| -> Vec<Vec<f64>> {
        let name = format!("{prefix}.{dir}");
        let mut out = vec![vec![0.0; hidden]; rows.len()];
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        for t in order {
            match cell {
                Cell::Gru => h = gru(store, &name, &rows[t], &h),
                Cell::Lstm => {
                    let (h2, c2) = lstm(store, &name, &rows[t], &h, &c);
                    h = h2;
                    c = c2;
                }
            }
            out[t] = h.clone();
        }
        out
    };
    let f = run("fwd", (0..valid).collect());
    let b = run("bwd", (0..valid).rev().collect());
    (0..rows.len())
        .map(|t| {
            if t < valid {
                f[t].iter().chain(&b[t]).copied().collect()
            } else {
                vec![0.0; 2 * hidden]
            }
        })
        .collect()
}

/// `e_j = v_aᵀ tanh(W_a s + U_a h_j + b_att)`, `α = softmax(e)`, `c = Σ α_j h_j`.
pub fn level1(store: &ParamStore, prefix: &str, s: &[f64], h: &[Vec<f64>], mask: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let w = p(store, &format!("{prefix}.w_a"));
    let u = p(store, &format!("{prefix}.u_a"));
    let v = p(store, &format!("{prefix}.v_a")).data();
    let b = p(store, &format!("{prefix}.b_att")).data();
    let ws = matvec(w, s);
    let e: Vec<f64> = h
        .iter()
        .map(|hj| {
            let uh = matvec(u, hj);
            let act: Vec<f64> = (0..ws.len()).map(|k| (ws[k] + uh[k] + b[k]).tanh()).collect();
            dot(v, &act)
        })
        .collect();
    let alpha = softmax(&e, Some(mask));
    let width = h[0].len();
    let ctx = (0..width).map(|d| nsum(h.iter().zip(&alpha).map(|(hj, a)| a * hj[d]))).collect();
    (alpha, ctx)
}

/// `e_k = vᵀ tanh(W s + U_k x_k)`, `w = softmax(e)`, `out = Σ w_k P_k x_k`.
pub fn combine(store: &ParamStore, prefix: &str, labels: &[&str], s: &[f64], xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let v = p(store, &format!("{prefix}.v")).data();
    let w = p(store, &format!("{prefix}.w"));
    let ws = matvec(w, s);
    let e: Vec<f64> = labels
        .iter()
        .zip(xs)
        .map(|(l, x)| {
            let ux = matvec(p(store, &format!("{prefix}.{l}.u_energy")), x);
            let act: Vec<f64> = ws.iter().zip(&ux).map(|(a, b)| (a + b).tanh()).collect();
            dot(v, &act)
        })
        .collect();
    let weights = softmax(&e, None);
    let projected: Vec<Vec<f64>> = labels
        .iter()
        .zip(xs)
        .map(|(l, x)| matvec(p(store, &format!("{prefix}.{l}.u_proj")), x))
        .collect();
    let width = projected[0].len();
    let out = (0..width)
        .map(|d| nsum(projected.iter().zip(&weights).map(|(px, wk)| wk * px[d])))
        .collect();
    (weights, out)
}

/// Encoded modality: rows and validity mask.
pub type Enc = (Vec<Vec<f64>>, Vec<bool>);

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn bin_rows(rows: &[Vec<f64>], valid: usize, bin: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let width = rows[0].len();
    let mut out: Vec<Vec<f64>> = rows[..valid]
        .chunks(bin)
        .map(|c| (0..width).map(|d| nsum(c.iter().map(|r| r[d])) / c.len() as f64).collect())
        .collect();
    let nvalid = out.len();
    let total = rows.len().div_ceil(bin);
    out.resize(total, vec![0.0; width]);
    (out, (0..total).map(|i| i < nvalid).collect())
}

/// Encodes every modality the model consumes.
pub fn encode_input(model: &Model, input: &ModelInput) -> BTreeMap<ModalityKind, Enc> {
    let store = &model.params;
    let cfg = &model.config;
    let hidden = cfg.dims.enc_hidden;
    let mut out = BTreeMap::new();
    for &kind in cfg.variant.modalities() {
        let (rows, mask, cell) = match kind {
            ModalityKind::Text => {
                let table = p(store, "text.embedding");
                let rows: Vec<Vec<f64>> = input.text.iter().map(|&t| table.row(t).to_vec()).collect();
                (rows, input.text_mask.clone(), Cell::Gru)
            }
            ModalityKind::Audio => {
                let rows = rows_of(input.audio.as_ref().unwrap());
                if cfg.variant == Variant::MastBinned {
                    let valid = input.audio_mask.iter().filter(|&&m| m).count();
                    let (r, m) = bin_rows(&rows, valid, cfg.audio_bin_size);
                    (r, m, Cell::Lstm)
                } else {
                    (rows, input.audio_mask.clone(), Cell::Lstm)
                }
            }
            ModalityKind::Video => (rows_of(input.video.as_ref().unwrap()), input.video_mask.clone(), Cell::Lstm),
        };
        let valid = mask.iter().filter(|&&m| m).count();
        let states = encode(store, &format!("{kind}.enc"), cell, &rows, valid, hidden);
        out.insert(kind, (states, mask));
    }
    out
}

#[derive(Debug, Clone)]
pub struct OracleStep {
    pub state: Vec<f64>,
    pub logprobs: Vec<f64>,
    pub alpha: BTreeMap<ModalityKind, Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
}

/// Embed, first GRU, attention hierarchy on the intermediate state, second
/// GRU on the fused context, two output layers, log-softmax.
pub fn decoder_step(model: &Model, prev: usize, s: &[f64], enc: &BTreeMap<ModalityKind, Enc>) -> OracleStep {
    let store = &model.params;
    let variant = model.config.variant;
    let emb = p(store, "dec.embedding").row(prev).to_vec();
    let q = gru(store, "dec.gru_in", &emb, s);

    let mut alpha = BTreeMap::new();
    let mut ctx = BTreeMap::new();
    for &kind in variant.modalities() {
        let (h, mask) = &enc[&kind];
        let (a, c) = level1(store, &format!("att.{kind}"), &q, h, mask);
        alpha.insert(kind, a);
        ctx.insert(kind, c);
    }
    let (mut beta, mut gamma, mut delta, mut eta) = (None, None, None, None);
    let fused = match variant {
        Variant::Mast | Variant::MastBinned => {
            let c = |k: ModalityKind| ctx[&k].clone();
            let (b, d_at) = combine(store, "fuse.audio_text", &["audio", "text"], &q, &[c(ModalityKind::Audio), c(ModalityKind::Text)]);
            let (g, d_vt) = combine(store, "fuse.video_text", &["video", "text"], &q, &[c(ModalityKind::Video), c(ModalityKind::Text)]);
            let (dl, cf) = combine(store, "fuse.pairs", &["audio_text", "video_text"], &q, &[d_at, d_vt]);
            beta = Some(b);
            gamma = Some(g);
            delta = Some(dl);
            cf
        }
        Variant::TrimodalH2 | Variant::AudioText | Variant::VideoText => {
            let labels: Vec<&str> = variant.modalities().iter().map(|k| k.name()).collect();
            let xs: Vec<Vec<f64>> = variant.modalities().iter().map(|k| ctx[k].clone()).collect();
            let (e, c) = combine(store, "fuse.flat", &labels, &q, &xs);
            eta = Some(e);
            c
        }
        _ => ctx[&variant.modalities()[0]].clone(),
    };
    let state = gru(store, "dec.gru_ctx", &fused, &q);
    let hidden: Vec<f64> = add(&matvec(p(store, "dec.out_hidden.w"), &state), p(store, "dec.out_hidden.b").data())
        .into_iter()
        .map(f64::tanh)
        .collect();
    let logits = add(&matvec(p(store, "dec.out_vocab.w"), &hidden), p(store, "dec.out_vocab.b").data());
    OracleStep {
        state,
        logprobs: log_softmax(&logits),
        alpha,
        beta,
        gamma,
        delta,
        eta,
    }
}

pub fn teacher_forced(model: &Model, input: &ModelInput, targets: &[usize]) -> Vec<OracleStep> {
    let enc = encode_input(model, input);
    let mut s = vec![0.0; model.config.dims.dec_hidden];
    let mut prev = BOS;
    let mut out = Vec::new();
    for &t in targets {
        let step = decoder_step(model, prev, &s, &enc);
        s = step.state.clone();
        prev = t;
        out.push(step);
    }
    out
}

/// Small config with reduced feature widths.
pub fn tiny_config(variant: Variant, vocab: usize, d: usize, audio_dim: usize, video_dim: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(variant, vocab);
    cfg.dims = Dims::uniform(d);
    cfg.audio_dim = audio_dim;
    cfg.video_dim = video_dim;
    cfg
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Random unpadded input for `cfg` with the given sequence lengths.
pub fn random_input(rng: &mut impl Rng, cfg: &ModelConfig, t_text: usize, t_audio: usize, t_video: usize) -> ModelInput {
    let text = (0..t_text).map(|_| rng.random_range(4..cfg.vocab_size)).collect();
    let audio = cfg.variant.uses(ModalityKind::Audio).then(|| random_matrix(rng, t_audio, cfg.audio_dim, 1.0));
    let video = cfg.variant.uses(ModalityKind::Video).then(|| random_matrix(rng, t_video, cfg.video_dim, 1.0));
    ModelInput::new(text, audio, video)
}

/// Gives every parameter (biases included) a random nonzero value so that
/// no term of the computation is trivially zero.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in store.iter_mut() {
        for x in t.data_mut() {
            *x = rng.random_range(-scale..scale);
        }
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// LCS length by enumerating every subsequence of the shorter input.
pub fn lcs_brute<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let n = short.len();
    let mut best = 0;
    for bits in 0u32..(1 << n) {
        let len = bits.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<&str> = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| short[i].as_ref()).collect();
        let mut it = long.iter().map(AsRef::as_ref);
        if sub.iter().all(|s| it.any(|x| x == *s)) {
            best = len;
        }
    }
    best
}

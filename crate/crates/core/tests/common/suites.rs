//! Whole-property checks shared by the integration tests and the acceptance
//! runner. Each returns `Ok(summary)` or `Err(first failure)`.

use std::collections::BTreeMap;

use mast_core::attention::{
    attend, attention_keys, final_combine, pair_combine, trimodal_h2_combine, Combiner, ModalityAttentionParams,
};
use mast_core::decoder::{beam_search_decode, greedy_decode, ModelSession, Step, StepModel};
use mast_core::eval::{content_f1, lcs_len, rouge, ContentF1Config, CATCHPHRASES};
use mast_core::init::Init;
use mast_core::model::{Dropout, Variant};
use mast_core::tensor::{check_gradients, check_owned_gradients, GradCheckReport};
use mast_core::{
    cumulative_attention, HierarchicalAttentionWeights, Model, ModalityEncoding, ModalityKind, ModelInput, ParamStore,
    Tape, Tensor, Var, AUDIO_GROUP,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn report_ok(what: &str, r: &GradCheckReport) -> std::result::Result<(), String> {
    ensure(r.passed(), || {
        format!("{what}: rel error {:.3e} > {:.0e} at {:?}", r.max_rel_error, r.tolerance, r.worst)
    })
}

fn rvec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Reduces any tensor to a scalar through fixed random weights, so each
/// output coordinate contributes a distinct amount to the checked gradient.
fn weigh(tape: &mut Tape<'_>, y: Var, seed: u64) -> mast_core::Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(shape, rvec(&mut rng, n, 1.0))?;
    let w = tape.constant(w);
    let prod = tape.mul(y, w)?;
    Ok(tape.sum(prod))
}

type PrimCase = (&'static str, Tensor, Box<dyn Fn(&mut Tape<'_>, Var) -> mast_core::Result<Var>>);

fn primitive_cases() -> Vec<PrimCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m23 = random_matrix(&mut rng, 2, 3, 1.0);
    let m32 = random_matrix(&mut rng, 3, 2, 1.0);
    let m43 = random_matrix(&mut rng, 4, 3, 1.0);
    let v3 = Tensor::vector(rvec(&mut rng, 3, 1.0));
    let v2 = Tensor::vector(rvec(&mut rng, 2, 1.0));
    let v5 = Tensor::vector(rvec(&mut rng, 5, 2.0));
    let table = random_matrix(&mut rng, 5, 3, 1.0);

    let (a, b, c, d) = (m32.clone(), m43.clone(), v2.clone(), v3.clone());
    let (e, f) = (m23.clone(), v3.clone());
    let cases: Vec<PrimCase> = vec![
        ("matmul", m23.clone(), Box::new(move |t, x| {
            let k = t.constant(a.clone());
            let y = t.matmul(x, k)?;
            weigh(t, y, 1)
        })),
        ("matmul_rhs", m32.clone(), Box::new(move |t, x| {
            let k = t.constant(e.clone());
            let y = t.matmul(k, x)?;
            weigh(t, y, 2)
        })),
        ("matmul_nt", m23.clone(), Box::new(move |t, x| {
            let k = t.constant(b.clone());
            let y = t.matmul_nt(k, x)?;
            weigh(t, y, 3)
        })),
        ("matvec", m23.clone(), Box::new(move |t, x| {
            let k = t.constant(d.clone());
            let y = t.matvec(x, k)?;
            weigh(t, y, 4)
        })),
        ("matvec_rhs", v3.clone(), Box::new(move |t, x| {
            let k = t.constant(m23.clone());
            let y = t.matvec(k, x)?;
            weigh(t, y, 5)
        })),
        ("vecmat", v2.clone(), Box::new(move |t, x| {
            let k = t.constant(Tensor::matrix(2, 2, vec![0.3, -1.2, 0.7, 0.4]).unwrap());
            let y = t.vecmat(x, k)?;
            weigh(t, y, 6)
        })),
        ("transpose", m32.clone(), Box::new(|t, x| {
            let y = t.transpose(x)?;
            weigh(t, y, 7)
        })),
        ("add_sub_mul", v3.clone(), Box::new(move |t, x| {
            let k = t.constant(f.clone());
            let s = t.add(x, k)?;
            let dd = t.sub(s, x)?;
            let m = t.mul(x, x)?;
            let y = t.mul(m, dd)?;
            weigh(t, y, 8)
        })),
        ("affine_scale", v3.clone(), Box::new(|t, x| {
            let y = t.affine(x, 1.7, -0.4);
            let y = t.scale(y, -2.5);
            weigh(t, y, 9)
        })),
        ("tanh", v5.clone(), Box::new(|t, x| {
            let y = t.tanh(x);
            weigh(t, y, 10)
        })),
        ("sigmoid", v5.clone(), Box::new(|t, x| {
            let y = t.sigmoid(x);
            weigh(t, y, 11)
        })),
        ("add_rows", m32.clone(), Box::new(move |t, x| {
            let k = t.constant(c.clone());
            let y = t.add_rows(x, k)?;
            weigh(t, y, 12)
        })),
        ("add_rows_bias", v2.clone(), Box::new(move |t, x| {
            let k = t.constant(m32.clone());
            let y = t.add_rows(k, x)?;
            weigh(t, y, 13)
        })),
        ("softmax", v5.clone(), Box::new(|t, x| {
            let y = t.softmax(x, None)?;
            weigh(t, y, 14)
        })),
        ("softmax_masked", v5.clone(), Box::new(|t, x| {
            let y = t.softmax(x, Some(&[true, true, true, false, false]))?;
            weigh(t, y, 15)
        })),
        ("log_softmax", v5.clone(), Box::new(|t, x| {
            let y = t.log_softmax(x)?;
            weigh(t, y, 16)
        })),
        ("dot_sum", v3.clone(), Box::new(|t, x| {
            let th = t.tanh(x);
            let y = t.dot(x, th)?;
            let s = t.sum(x);
            t.mul(y, s)
        })),
        ("concat_slice", v3.clone(), Box::new(|t, x| {
            let s = t.sigmoid(x);
            let cat = t.concat(&[x, s, x])?;
            let y = t.slice(cat, 2, 5)?;
            weigh(t, y, 17)
        })),
        ("stack_row", v3.clone(), Box::new(|t, x| {
            let s = t.tanh(x);
            let m = t.stack(&[x, s, x])?;
            let r = t.row(m, 1)?;
            let y = t.mul(r, x)?;
            weigh(t, y, 18)
        })),
        ("gather_pick", table, Box::new(|t, x| {
            let g = t.gather(x, &[1, 0, 3, 1])?;
            let y = t.tanh(g);
            let w = weigh(t, y, 19)?;
            let r = t.row(x, 4)?;
            let p = t.pick(r, 2)?;
            let pw = t.scale(p, 0.5);
            t.add(w, pw)
        })),
    ];
    cases
}

/// Central differences on every tape primitive.
pub fn primitive_gradients(tol: f64) -> Outcome {
    let cases = primitive_cases();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (name, x, f) in &cases {
        let r = check_gradients(f, x, 1e-5, tol).map_err(|e| format!("{name}: {e}"))?;
        report_ok(name, &r)?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    Ok(format!("{} ops, {checked} coordinates, max rel error {worst:.2e}", cases.len()))
}

fn summed_nll<'a>(
    tape: &mut Tape<'a>,
    model: &'a Model,
    input: &ModelInput,
    targets: &[usize],
) -> mast_core::Result<Var> {
    let steps = model.forward_example(tape, input, targets, &mut Dropout::off())?;
    let mut picks = Vec::with_capacity(steps.len());
    for (s, &t) in steps.iter().zip(targets) {
        picks.push(tape.pick(s.logprobs, t)?);
    }
    let all = tape.concat(&picks)?;
    let total = tape.sum(all);
    Ok(tape.scale(total, -1.0))
}

/// Finite-difference check of every parameter of a tiny model of the given
/// variant. `max_entries` bounds the probes per tensor.
pub fn model_gradients(
    variant: Variant,
    audio_dim: usize,
    video_dim: usize,
    max_entries: Option<usize>,
    tol: f64,
) -> Outcome {
    let cfg = tiny_config(variant, 20, 8, audio_dim, video_dim);
    let mut model = Model::build(cfg.clone(), 3).map_err(|e| e.to_string())?;
    randomize(&mut model.params, 17, 0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let input = random_input(&mut rng, &cfg, 3, 3, 3);
    let targets = [7, 12, 2];
    let r = check_owned_gradients(
        &mut model,
        |m| &m.params,
        |m| &mut m.params,
        |tape, m| summed_nll(tape, m, &input, &targets),
        1e-5,
        tol,
        max_entries,
    )
    .map_err(|e| e.to_string())?;
    report_ok(variant.name(), &r)?;
    Ok(format!("{variant}: {} coordinates, max rel error {:.2e}", r.checked, r.max_rel_error))
}

fn simplex_ok(name: &str, w: &[f64]) -> std::result::Result<(), String> {
    let total: f64 = w.iter().sum();
    ensure((total - 1.0).abs() <= 1e-9 && w.iter().all(|&x| (0.0..=1.0).contains(&x)), || {
        format!("{name} = {w:?} sums to {total}")
    })
}

fn check_weights(w: &HierarchicalAttentionWeights, masks: &BTreeMap<ModalityKind, Vec<bool>>, mast: bool) -> std::result::Result<(), String> {
    for (k, a) in &w.alpha {
        let mask = &masks[k];
        let valid: Vec<f64> = a.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
        simplex_ok(&format!("alpha[{k}]"), &valid)?;
        ensure(a.iter().zip(mask).all(|(&x, &m)| m || x == 0.0), || format!("alpha[{k}] nonzero at a masked position: {a:?}"))?;
    }
    for (name, v) in [("beta", w.beta), ("gamma", w.gamma), ("delta", w.delta)] {
        if let Some(v) = v {
            simplex_ok(name, &v)?;
        }
    }
    if let Some(eta) = &w.eta {
        simplex_ok("eta", eta)?;
    }
    if mast {
        let cum = cumulative_attention(w, AUDIO_GROUP).map_err(|e| e.to_string())?;
        simplex_ok("cumulative masses", &[cum.audio_mass, cum.text_mass, cum.video_mass])?;
        for (k, per) in &cum.per_timestep {
            let total: f64 = per.iter().sum();
            ensure((total - cum.mass(*k)).abs() <= 1e-9, || format!("per-timestep {k} mass {total} != {}", cum.mass(*k)))?;
        }
    }
    Ok(())
}

/// Random parameterizations of every variant with padded inputs; checks
/// every attention distribution of every decoder step.
pub fn attention_simplex(parameterizations: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut steps = 0;
    for i in 0..parameterizations {
        let variant = [Variant::Mast, Variant::MastBinned, Variant::TrimodalH2, Variant::Mast][i % 4];
        let mut cfg = tiny_config(variant, 10, rng.random_range(2..6), 4, 5);
        cfg.audio_bin_size = 3;
        let mut model = Model::build(cfg.clone(), i as u64).map_err(|e| e.to_string())?;
        let scale = [0.1, 1.0, 3.0][i % 3];
        randomize(&mut model.params, 1000 + i as u64, scale);
        let lens = [rng.random_range(1..6), rng.random_range(1..8), rng.random_range(1..5)];
        let full = random_input(&mut rng, &cfg, 6, 8, 5);
        let mut input = random_input(&mut rng, &cfg, lens[0], lens[1], lens[2]);
        let mut masks = BTreeMap::new();
        // pad each modality by hand up to the full length
        let pad_rows = |t: &Tensor, rows: usize| {
            let mut d = t.data().to_vec();
            d.resize(rows * t.cols(), 0.0);
            Tensor::matrix(rows, t.cols(), d).unwrap()
        };
        input.text.resize(full.text.len(), 0);
        input.text_mask = (0..full.text.len()).map(|j| j < lens[0]).collect();
        masks.insert(ModalityKind::Text, input.text_mask.clone());
        if let Some(a) = input.audio.take() {
            input.audio = Some(pad_rows(&a, 8));
            input.audio_mask = (0..8).map(|j| j < lens[1]).collect();
            let bins = 8usize.div_ceil(cfg.audio_bin_size);
            let valid = lens[1].div_ceil(cfg.audio_bin_size);
            let m = if variant == Variant::MastBinned { (0..bins).map(|j| j < valid).collect() } else { input.audio_mask.clone() };
            masks.insert(ModalityKind::Audio, m);
        }
        if let Some(v) = input.video.take() {
            input.video = Some(pad_rows(&v, 5));
            input.video_mask = (0..5).map(|j| j < lens[2]).collect();
            masks.insert(ModalityKind::Video, input.video_mask.clone());
        }
        let targets: Vec<usize> = (0..3).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
        let mut tape = Tape::new();
        let out = model
            .forward_example(&mut tape, &input, &targets, &mut Dropout::off())
            .map_err(|e| e.to_string())?;
        for s in &out {
            check_weights(&s.weights, &masks, variant.is_mast()).map_err(|e| format!("{variant} #{i}: {e}"))?;
            steps += 1;
        }
    }
    Ok(format!("{parameterizations} parameterizations, {steps} decoder steps"))
}

fn transcription_level1(rng: &mut ChaCha8Rng, case: u64) -> f64 {
    let (d_dec, d_enc, d_att) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
    let n = rng.random_range(1..8);
    let valid = rng.random_range(1..=n);
    let mut store = ParamStore::new();
    let params = ModalityAttentionParams::new(&mut store, "att", d_dec, d_enc, d_att, &mut Init::new(case)).unwrap();
    randomize(&mut store, case, 1.0);
    let s = rvec(rng, d_dec, 1.0);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|j| if j < valid { rvec(rng, d_enc, 1.0) } else { vec![0.0; d_enc] })
        .collect();
    let mask: Vec<bool> = (0..n).map(|j| j < valid).collect();
    let mut tape = Tape::new();
    let states = tape.constant(Tensor::from_rows(&rows).unwrap());
    let enc = ModalityEncoding {
        kind: ModalityKind::Text,
        states,
        mask: mask.clone(),
    };
    let sv = tape.constant(Tensor::vector(s.clone()));
    let keys = attention_keys(&mut tape, &store, &enc, &params).unwrap();
    let (alpha, ctx) = attend(&mut tape, &store, sv, &keys, &params).unwrap();
    let (wa, wc) = level1(&store, "att", &s, &rows, &mask);
    max_abs_diff(tape.value(alpha), &wa).max(max_abs_diff(tape.value(ctx), &wc))
}

fn transcription_combiner(rng: &mut ChaCha8Rng, case: u64, which: usize) -> f64 {
    let labels: &[&str] = match which {
        0 => &["audio", "text", "video"],
        1 => &["audio", "text"],
        2 => &["video", "text"],
        _ => &["audio_text", "video_text"],
    };
    let (d_dec, d_in, d_att, d_out) = (
        rng.random_range(1..6),
        rng.random_range(1..6),
        rng.random_range(1..6),
        rng.random_range(1..6),
    );
    let mut store = ParamStore::new();
    let members: Vec<(&str, usize)> = labels.iter().map(|&l| (l, d_in)).collect();
    let comb = Combiner::new(&mut store, "c", &members, d_dec, d_att, d_out, &mut Init::new(case)).unwrap();
    randomize(&mut store, case + 7, 1.0);
    let s = rvec(rng, d_dec, 1.0);
    let xs: Vec<Vec<f64>> = labels.iter().map(|_| rvec(rng, d_in, 1.5)).collect();
    let mut tape = Tape::new();
    let sv = tape.constant(Tensor::vector(s.clone()));
    let vars: Vec<Var> = xs.iter().map(|x| tape.constant(Tensor::vector(x.clone()))).collect();
    let (w, out) = match which {
        0 => {
            let contexts = ModalityKind::ALL.into_iter().zip(vars).collect();
            trimodal_h2_combine(&mut tape, &store, sv, &contexts, &comb).unwrap()
        }
        1 | 2 => pair_combine(&mut tape, &store, sv, vars[0], vars[1], &comb).unwrap(),
        _ => final_combine(&mut tape, &store, sv, vars[0], vars[1], &comb).unwrap(),
    };
    let (ww, wo) = combine(&store, "c", labels, &s, &xs);
    max_abs_diff(tape.value(w), &ww).max(max_abs_diff(tape.value(out), &wo))
}

/// `instances` random cases of each attention operation against the
/// compensated-sum reference.
pub fn attention_transcription(instances: usize, tol: f64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let names = ["alpha", "eta", "beta", "gamma", "delta"];
    let mut worst = [0.0f64; 5];
    for case in 0..instances as u64 {
        worst[0] = worst[0].max(transcription_level1(&mut rng, case));
        for which in 0..4 {
            worst[which + 1] = worst[which + 1].max(transcription_combiner(&mut rng, case, which));
        }
    }
    for (n, w) in names.iter().zip(worst) {
        ensure(w <= tol, || format!("{n}: max abs error {w:.3e}"))?;
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    Ok(format!("{instances} instances x 5 operations, max abs error {max:.2e}"))
}

/// Hand-specified toy scorer whose next-token distribution depends on the
/// whole prefix.
pub struct TableModel {
    pub vocab: usize,
    pub seed: u64,
}

impl TableModel {
    fn logprobs(&self, prefix: &[usize]) -> Vec<f64> {
        let mut h = self.seed;
        for &t in prefix {
            h = h.wrapping_mul(6364136223846793005).wrapping_add(t as u64 + 1442695040888963407);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let raw: Vec<f64> = (0..self.vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
        log_softmax(&raw)
    }
}

impl StepModel for TableModel {
    type State = Vec<usize>;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn initial_state(&self) -> mast_core::Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn step(&self, prev: usize, state: &Vec<usize>) -> mast_core::Result<Step<Vec<usize>>> {
        let mut next = state.clone();
        next.push(prev);
        let logprobs = self.logprobs(&next);
        Ok(Step {
            state: next,
            logprobs,
            weights: None,
        })
    }
}

/// Best length-normalized hypothesis over every sequence of at most
/// `horizon` steps, with the same retirement rules as beam search.
pub fn brute_force_best(model: &TableModel, horizon: usize) -> (Vec<usize>, f64) {
    let eos = mast_core::data::EOS;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut offer = |tokens: Vec<usize>, lp: f64, steps: usize| {
        let score = lp / steps as f64;
        if best.as_ref().is_none_or(|(_, b)| score > *b) {
            best = Some((tokens, score));
        }
    };
    fn walk(
        model: &TableModel,
        prefix: &mut Vec<usize>,
        lp: f64,
        horizon: usize,
        eos: usize,
        offer: &mut dyn FnMut(Vec<usize>, f64, usize),
    ) {
        let fed: Vec<usize> = std::iter::once(mast_core::data::BOS).chain(prefix.iter().copied()).collect();
        let dist = model.logprobs(&fed);
        for (tok, &l) in dist.iter().enumerate() {
            if tok == eos {
                offer(prefix.clone(), lp + l, prefix.len() + 1);
            } else if prefix.len() + 1 == horizon {
                let mut done = prefix.clone();
                done.push(tok);
                offer(done, lp + l, horizon);
            } else {
                prefix.push(tok);
                walk(model, prefix, lp + l, horizon, eos, offer);
                prefix.pop();
            }
        }
    }
    walk(model, &mut Vec::new(), 0.0, horizon, eos, &mut offer);
    best.unwrap()
}

/// Beam 1 against greedy on random tiny models, and wide beams against
/// exhaustive enumeration on toy scorers.
pub fn beam_checks(models: usize, toys: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for i in 0..models {
        let variant = Variant::ALL[i % Variant::ALL.len()];
        let cfg = tiny_config(variant, 8, 4, 3, 3);
        let mut model = Model::build(cfg.clone(), i as u64).map_err(|e| e.to_string())?;
        randomize(&mut model.params, 500 + i as u64, 1.5);
        let input = random_input(&mut rng, &cfg, 4, 5, 3);
        let session = ModelSession::new(&model, &input).map_err(|e| e.to_string())?;
        let g = greedy_decode(&session, 12).map_err(|e| e.to_string())?;
        let b = beam_search_decode(&session, 1, 12).map_err(|e| e.to_string())?;
        ensure(g.tokens == b.tokens && g.finished == b.finished && g.logprob == b.logprob, || {
            format!("model {i} ({variant}): greedy {:?} vs beam-1 {:?}", g.tokens, b.tokens)
        })?;
    }
    for seed in 0..toys as u64 {
        let toy = TableModel { vocab: 3, seed };
        let (tokens, score) = brute_force_best(&toy, 2);
        for beam in 4..=6 {
            let d = beam_search_decode(&toy, beam, 2).map_err(|e| e.to_string())?;
            ensure(d.tokens == tokens && (d.score() - score).abs() < 1e-12, || {
                format!("toy {seed} beam {beam}: got {:?} ({}), brute force {:?} ({score})", d.tokens, d.score(), tokens)
            })?;
        }
        let narrow = beam_search_decode(&toy, 1, 2).map_err(|e| e.to_string())?;
        ensure(narrow.score() <= score + 1e-12, || format!("toy {seed}: beam 1 beats brute force"))?;
    }
    Ok(format!("{models} beam-1/greedy models, {toys} brute-force toys"))
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Hand-scored pair:
/// 1. hyp "the cat sat on the mat", ref "the cat lay on the mat"
///    unigram overlap 5/6 each side; bigrams: hyp {the cat, cat sat, sat on,
///    on the, the mat}, ref {the cat, cat lay, lay on, on the, the mat}
///    overlap 3 of 5; LCS "the cat on the mat" = 5.
///    content words hyp {cat, sat, mat}, ref {cat, lay, mat} -> 2/3.
/// 2. hyp "learn how to tie a fishing knot", ref "tie a strong knot in this video"
///    unigrams hyp 7 ref 7, overlap {tie, a, knot} = 3 -> 3/7;
///    bigrams overlap {tie a} = 1 of 6 -> 1/6; LCS "tie a knot" = 3 -> 3/7.
///    content hyp {tie, fishing, knot}, ref {tie, strong, knot} -> 2/3.
pub const FIXTURE: [(&str, &str, [f64; 4]); 2] = [
    (
        "the cat sat on the mat",
        "the cat lay on the mat",
        [5.0 / 6.0, 3.0 / 5.0, 5.0 / 6.0, 2.0 / 3.0],
    ),
    (
        "learn how to tie a fishing knot",
        "tie a strong knot in this video",
        [3.0 / 7.0, 1.0 / 6.0, 3.0 / 7.0, 2.0 / 3.0],
    ),
];

/// LCS brute force, the hand-scored fixture, and catchphrase insertion.
pub fn metric_oracles(pairs: usize, fixtures: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let alphabet = ["a", "b", "c", "d"];
    for i in 0..pairs {
        let a: Vec<&str> = (0..rng.random_range(0..=12)).map(|_| alphabet[rng.random_range(0..4)]).collect();
        let b: Vec<&str> = (0..rng.random_range(0..=12)).map(|_| alphabet[rng.random_range(0..4)]).collect();
        let (dp, brute) = (lcs_len(&a, &b), lcs_brute(&a, &b));
        ensure(dp == brute, || format!("pair {i}: dp {dp} vs brute force {brute} for {a:?} / {b:?}"))?;
    }

    let cfg = ContentF1Config::default();
    for (i, (h, r, want)) in FIXTURE.iter().enumerate() {
        let (h, r) = (words(h), words(r));
        let s = rouge(&h, &r);
        let got = [s.rouge1.f1, s.rouge2.f1, s.rouge_l.f1, content_f1(&h, &r, &cfg)];
        for (name, (g, w)) in ["rouge1", "rouge2", "rougeL", "content_f1"].iter().zip(got.iter().zip(want)) {
            ensure((g - w).abs() <= 1e-9, || format!("fixture {i} {name}: {g} vs {w}"))?;
        }
    }

    let pool = ["fish", "bait", "hook", "the", "a", "of", "river", "cast", "line", "and", "to"];
    for i in 0..fixtures {
        let mut sample = || -> Vec<String> {
            let n = rng.random_range(0..8);
            (0..n).map(|_| pool[rng.random_range(0..pool.len())].to_string()).collect()
        };
        let h = sample();
        let r = sample();
        let base = content_f1(&h, &r, &cfg);
        let mut h2 = h.clone();
        let mut r2 = r.clone();
        let c1 = CATCHPHRASES[rng.random_range(0..8)].to_string();
        let c2 = CATCHPHRASES[rng.random_range(0..8)].to_string();
        let at = rng.random_range(0..=h2.len());
        h2.insert(at, c1);
        r2.push(c2);
        ensure(content_f1(&h2, &r, &cfg) == base && content_f1(&h, &r2, &cfg) == base, || {
            format!("fixture {i}: catchphrase insertion changed content F1")
        })?;
    }
    Ok(format!("{pairs} LCS pairs, 2 hand-scored examples, {fixtures} catchphrase fixtures"))
}

/// The binned variant's audio encoder runs over exactly `ceil(T/bin)` steps.
pub fn binned_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let cfg = tiny_config(Variant::MastBinned, 10, 4, mast_core::model::AUDIO_DIM, 6);
    let model = Model::build(cfg.clone(), 0).map_err(|e| e.to_string())?;
    for t in [1usize, 29, 30, 31, 59, 60, 61, 90, 100, 151] {
        let input = random_input(&mut rng, &cfg, 3, t, 2);
        let mut tape = Tape::new();
        let enc = model.encode(&mut tape, &input, &mut Dropout::off()).map_err(|e| e.to_string())?;
        let audio = enc.encoding(ModalityKind::Audio).ok_or("no audio encoding")?;
        let want = t.div_ceil(30);
        ensure(audio.len() == want && audio.valid_len() == want, || {
            format!("T={t}: encoder saw {} steps, expected {want}", audio.len())
        })?;
        let session = ModelSession::new(&model, &input).map_err(|e| e.to_string())?;
        let s0 = session.initial_state().map_err(|e| e.to_string())?;
        let step = session.step(mast_core::data::BOS, &s0).map_err(|e| e.to_string())?;
        let alpha = &step.weights.unwrap().alpha[&ModalityKind::Audio];
        ensure(alpha.len() == want, || format!("T={t}: audio alpha has {} entries", alpha.len()))?;
    }
    Ok("T in {1,29,30,31,59,60,61,90,100,151} -> ceil(T/30) encoder steps".into())
}

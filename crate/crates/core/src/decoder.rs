//! Greedy and beam-search decoding over any step-wise scorer.

use std::cell::RefCell;
use std::cmp::Ordering;

use crate::attention::HierarchicalAttentionWeights;
use crate::data::{BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{Dropout, Encoded, Model, ModelInput};
use crate::tensor::{Tape, Var};

pub const DEFAULT_MAX_LEN: usize = 64;

pub struct Step<S> {
    pub state: S,
    pub logprobs: Vec<f64>,
    pub weights: Option<HierarchicalAttentionWeights>,
}

/// Anything that scores the next token given the previous one and a state.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    fn initial_state(&self) -> Result<Self::State>;
    fn step(&self, prev_token: usize, state: &Self::State) -> Result<Step<Self::State>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Emitted tokens, without `<eos>`.
    pub tokens: Vec<usize>,
    /// Cumulative log-probability, including the `<eos>` step if finished.
    pub logprob: f64,
    pub finished: bool,
    /// One entry per decoder step, the `<eos>` step included.
    pub weights: Vec<HierarchicalAttentionWeights>,
}

impl Decoded {
    /// Number of scored steps: tokens plus `<eos>` when finished.
    pub fn length(&self) -> usize {
        self.tokens.len() + usize::from(self.finished)
    }

    /// Length-normalized score used for final ranking.
    pub fn score(&self) -> f64 {
        self.logprob / self.length().max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct BeamHypothesis<S> {
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub finished: bool,
    pub state: S,
    pub weights: Vec<HierarchicalAttentionWeights>,
}

impl<S> BeamHypothesis<S> {
    fn into_decoded(self) -> Decoded {
        Decoded {
            tokens: self.tokens,
            logprob: self.logprob,
            finished: self.finished,
            weights: self.weights,
        }
    }
}

fn checked_step<M: StepModel>(model: &M, prev: usize, state: &M::State) -> Result<Step<M::State>> {
    let step = model.step(prev, state)?;
    if step.logprobs.len() != model.vocab_size() {
        return Err(Error::dim("decoder step", &[step.logprobs.len()], &[model.vocab_size()]));
    }
    Ok(step)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Result<Decoded> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let mut state = model.initial_state()?;
    let mut prev = BOS;
    let mut out = Decoded {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: false,
        weights: Vec::new(),
    };
    for _ in 0..max_len {
        let step = checked_step(model, prev, &state)?;
        let tok = argmax(&step.logprobs);
        out.logprob += step.logprobs[tok];
        out.weights.extend(step.weights);
        if tok == EOS {
            out.finished = true;
            break;
        }
        out.tokens.push(tok);
        state = step.state;
        prev = tok;
    }
    Ok(out)
}

/// Beam search keeping the `beam` best expansions overall at each step.
/// Expansions ending in `<eos>` retire to a pool; at `max_len` the live
/// hypotheses join it. The pool is ranked by log-probability per scored
/// step, earlier entries winning ties.
pub fn beam_search_decode<M: StepModel>(model: &M, beam: usize, max_len: usize) -> Result<Decoded> {
    if beam == 0 {
        return Err(Error::contract("beam must be at least 1"));
    }
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        finished: false,
        state: model.initial_state()?,
        weights: Vec::new(),
    }];
    let mut pool: Vec<BeamHypothesis<M::State>> = Vec::new();

    for _ in 0..max_len {
        let mut steps = Vec::with_capacity(live.len());
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let step = checked_step(model, prev, &h.state)?;
            candidates.extend(
                step.logprobs
                    .iter()
                    .enumerate()
                    .map(|(tok, &lp)| (h.logprob + lp, pi, tok)),
            );
            steps.push(step);
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next = Vec::with_capacity(beam);
        for &(score, pi, tok) in candidates.iter().take(beam) {
            let parent = &live[pi];
            let step = &steps[pi];
            let mut weights = parent.weights.clone();
            weights.extend(step.weights.clone());
            let mut tokens = parent.tokens.clone();
            if tok == EOS {
                pool.push(BeamHypothesis {
                    tokens,
                    logprob: score,
                    finished: true,
                    state: step.state.clone(),
                    weights,
                });
            } else {
                tokens.push(tok);
                next.push(BeamHypothesis {
                    tokens,
                    logprob: score,
                    finished: false,
                    state: step.state.clone(),
                    weights,
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    pool.extend(live);

    let mut best: Option<Decoded> = None;
    for h in pool {
        let d = h.into_decoded();
        if best.as_ref().is_none_or(|b| d.score() > b.score()) {
            best = Some(d);
        }
    }
    best.ok_or_else(|| Error::contract("beam search produced no hypothesis"))
}

/// Decoder state of a model-backed session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderState {
    pub s: Var,
    pub step: usize,
}

/// A trained model bound to one encoded input, decoding in eval mode.
pub struct ModelSession<'m> {
    model: &'m Model,
    tape: RefCell<Tape<'m>>,
    encoded: Encoded,
}

impl<'m> ModelSession<'m> {
    pub fn new(model: &'m Model, input: &ModelInput) -> Result<Self> {
        let mut tape = Tape::new();
        let encoded = model.encode(&mut tape, input, &mut Dropout::off())?;
        Ok(Self {
            model,
            tape: RefCell::new(tape),
            encoded,
        })
    }
}

impl StepModel for ModelSession<'_> {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn initial_state(&self) -> Result<DecoderState> {
        let s = self.model.initial_state(&mut self.tape.borrow_mut());
        Ok(DecoderState { s, step: 0 })
    }

    fn step(&self, prev_token: usize, state: &DecoderState) -> Result<Step<DecoderState>> {
        let mut tape = self.tape.borrow_mut();
        let out = self
            .model
            .decoder_step(&mut tape, prev_token, state.s, &self.encoded, &mut Dropout::off())?;
        Ok(Step {
            state: DecoderState {
                s: out.state,
                step: state.step + 1,
            },
            logprobs: tape.value(out.logprobs).to_vec(),
            weights: Some(out.weights),
        })
    }
}

/// Greedy decode when `beam == 1`, beam search otherwise.
pub fn summarize(model: &Model, input: &ModelInput, beam: usize, max_len: usize) -> Result<Decoded> {
    let session = ModelSession::new(model, input)?;
    if beam == 1 {
        greedy_decode(&session, max_len)
    } else {
        beam_search_decode(&session, beam, max_len)
    }
}

//! NLL training with Adam, inverted dropout and early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Batch, MultimodalExample, PAD};
use crate::error::{Error, Result};
use crate::model::{Dropout, Model};
use crate::tensor::{Gradients, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub dropout_p: f64,
    pub beam: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0004,
            epochs: 50,
            patience: 40,
            dropout_p: 0.35,
            beam: 5,
            batch_size: 16,
            grad_clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if self.epochs == 0 || self.beam == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, beam and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return Err(Error::Config(format!("grad_clip_norm {} must be positive", self.grad_clip_norm)));
        }
        Ok(())
    }
}

/// Adam moments for every tensor of a [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update from the gradients held in `params`.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::contract(format!(
            "optimizer tracks {} tensors, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (name, t) in params.iter() {
        if t.grad().is_some_and(|g| g.iter().any(|x| x.is_nan())) {
            return Err(Error::Divergence(format!("NaN gradient in {name}")));
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, (_, tensor)) in params.iter_mut().enumerate() {
        let (data, Some(g)) = tensor.data_and_grad_mut() else {
            continue;
        };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if m.len() != g.len() {
            return Err(Error::dim("adam_step", &[m.len()], &[g.len()]));
        }
        for (j, p) in data.iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Inverted dropout: zeroes each element with probability `p` and scales
/// survivors by `1/(1-p)`. Identity when not training or `p == 0`.
pub fn apply_dropout(tape: &mut Tape<'_>, x: Var, p: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::contract(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let shape = tape.shape(x).to_vec();
    let n = tape.value(x).len();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, mask)
}

/// Mean of `-logprobs[i, targets[i]]` over non-pad positions.
pub fn nll_loss(tape: &mut Tape<'_>, logprobs: Var, targets: &[usize], pad_id: usize) -> Result<Var> {
    let shape = tape.shape(logprobs).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::dim("nll_loss", &shape, &[targets.len()]));
    }
    let mut picked = Vec::new();
    for (i, &t) in targets.iter().enumerate() {
        if t == pad_id {
            continue;
        }
        if t >= shape[1] {
            return Err(Error::OutOfVocabulary { id: t, size: shape[1] });
        }
        let row = tape.row(logprobs, i)?;
        picked.push(tape.pick(row, t)?);
    }
    if picked.is_empty() {
        return Err(Error::contract("every target position is padding"));
    }
    let n = picked.len() as f64;
    let all = tape.concat(&picked)?;
    let total = tape.sum(all);
    Ok(tape.scale(total, -1.0 / n))
}

/// Stops once the epochs since the last improvement exceed `patience`.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    best: Option<f64>,
    since: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since: 0,
        }
    }

    /// Records a validation loss; returns whether it improved on the best.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        let improved = self.best.is_none_or(|b| val_loss < b);
        if improved {
            self.best = Some(val_loss);
            self.since = 0;
        } else {
            self.since += 1;
        }
        improved
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since
    }

    pub fn should_stop(&self) -> bool {
        self.since > self.patience
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
    pub improved: bool,
}

impl EpochLog {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.17e}\t{:.17e}\t{:.3}\t{}",
            self.epoch, self.train_loss, self.val_loss, self.seconds, self.improved as u8
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainingReport {
    pub fn log_tsv(&self) -> String {
        self.epochs.iter().map(|e| e.to_tsv() + "\n").collect()
    }
}

pub fn count_parameters(model: &Model) -> usize {
    model.count_parameters()
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn example_seed(seed: u64, epoch: usize, batch: usize, index: usize) -> u64 {
    mix(mix(mix(seed ^ epoch as u64) ^ batch as u64) ^ index as u64)
}

/// Summed NLL of one teacher-forced example and its gradients, scaled by
/// `scale` so that batch gradients average per token.
fn example_gradients(
    model: &Model,
    batch: &Batch,
    b: usize,
    dropout_p: f64,
    seed: u64,
    scale: f64,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let targets = batch.targets(b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dropout = Dropout {
        p: dropout_p,
        rng: Some(&mut rng),
    };
    let steps = model.forward_example(&mut tape, &batch.input(b), targets, &mut dropout)?;
    let rows: Vec<Var> = steps.iter().map(|s| s.logprobs).collect();
    let lp = tape.stack(&rows)?;
    let mean = nll_loss(&mut tape, lp, targets, batch.pad_id)?;
    let n = targets.iter().filter(|&&t| t != batch.pad_id).count() as f64;
    let sum = tape.scalar_value(mean) * n;
    let loss = tape.scale(mean, n * scale);
    tape.backward(loss)?;
    Ok((sum, tape.take_param_gradients()))
}

/// Per-token mean NLL of `examples` in evaluation mode.
pub fn evaluate_loss(model: &Model, examples: &[MultimodalExample], batch_size: usize) -> Result<f64> {
    let batches = make_batches(examples, &(0..examples.len()).collect::<Vec<_>>(), batch_size);
    let mut total = 0.0;
    let mut tokens = 0usize;
    for batch in &batches {
        let sums: Vec<Result<f64>> = (0..batch.len())
            .into_par_iter()
            .map(|b| {
                let mut tape = Tape::new();
                let targets = batch.targets(b);
                let steps = model.forward_example(&mut tape, &batch.input(b), targets, &mut Dropout::off())?;
                let rows: Vec<Var> = steps.iter().map(|s| s.logprobs).collect();
                let lp = tape.stack(&rows)?;
                let mean = nll_loss(&mut tape, lp, targets, batch.pad_id)?;
                let n = targets.iter().filter(|&&t| t != batch.pad_id).count() as f64;
                Ok(tape.scalar_value(mean) * n)
            })
            .collect();
        for s in sums {
            total += s?;
        }
        tokens += batch.target_tokens();
    }
    Ok(total / tokens as f64)
}

fn make_batches(examples: &[MultimodalExample], order: &[usize], batch_size: usize) -> Vec<Batch> {
    let mut order = order.to_vec();
    order.sort_by(|&a, &b| examples[b].text.len().cmp(&examples[a].text.len()));
    order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&MultimodalExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let mut batch = Batch::from_examples(&refs, PAD);
            batch.source_index = chunk.to_vec();
            batch
        })
        .collect()
}

/// Trains `model` in place. After every improving epoch `on_improve` is
/// called with the improved model (e.g. to write a checkpoint). On return
/// the model holds the parameters of the best validation epoch.
pub fn fit(
    model: &mut Model,
    train: &[MultimodalExample],
    val: &[MultimodalExample],
    cfg: &TrainConfig,
    mut on_improve: impl FnMut(&Model, &EpochLog) -> Result<()>,
) -> Result<TrainingReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    if val.is_empty() {
        return Err(Error::EmptyInput("validation split"));
    }
    let mut adam = AdamState::new(&model.params);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_params = model.params.clone();
    let mut logs = Vec::new();
    let mut best_epoch = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut order_rng);
        let mut batches = make_batches(train, &order, cfg.batch_size);
        batches.shuffle(&mut order_rng);

        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let tokens = batch.target_tokens();
            let scale = 1.0 / tokens as f64;
            let model_ref: &Model = model;
            let results: Vec<Result<(f64, Gradients)>> = (0..batch.len())
                .into_par_iter()
                .map(|b| {
                    let seed = example_seed(cfg.seed, epoch, bi, b);
                    example_gradients(model_ref, batch, b, cfg.dropout_p, seed, scale)
                })
                .collect();
            let mut grads = Gradients::default();
            for r in results {
                let (nll, g) = match r {
                    Ok(v) => v,
                    Err(e) => {
                        model.params = best_params;
                        return Err(e);
                    }
                };
                epoch_nll += nll;
                grads.merge_owned(g);
            }
            epoch_tokens += tokens;
            if !epoch_nll.is_finite() || !grads.is_finite() {
                model.params = best_params;
                return Err(Error::Divergence(format!(
                    "non-finite loss or gradient in epoch {epoch}, batch {bi}"
                )));
            }
            model.params.zero_grads();
            grads.accumulate_into(&mut model.params);
            model.params.clip_grad_norm(cfg.grad_clip_norm);
            if let Err(e) = adam_step(&mut model.params, &mut adam, cfg.learning_rate) {
                model.params = best_params;
                return Err(e);
            }
        }

        let train_loss = epoch_nll / epoch_tokens as f64;
        let val_loss = match evaluate_loss(model, val, cfg.batch_size) {
            Ok(v) => v,
            Err(e) => {
                model.params = best_params;
                return Err(e);
            }
        };
        if !val_loss.is_finite() {
            model.params = best_params;
            return Err(Error::Divergence(format!("validation loss {val_loss} in epoch {epoch}")));
        }
        let improved = stopper.observe(val_loss);
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
            improved,
        };
        if improved {
            best_epoch = epoch;
            best_params = model.params.clone();
            on_improve(model, &log)?;
        }
        logs.push(log);
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }
    model.params = best_params;
    model.params.zero_grads();
    Ok(TrainingReport {
        epochs: logs,
        best_epoch,
        best_val_loss: stopper.best().unwrap_or(f64::INFINITY),
        stopped_early,
    })
}

//! Recurrent modality encoders and audio binning.
//!
//! Gate conventions (rows of the stacked weight matrices, top to bottom):
//!
//! * GRU `[r; z; n]`:
//!   `r = σ(W_r x + b_r + U_r h)`, `z = σ(W_z x + b_z + U_z h)`,
//!   `ñ = tanh(W_n x + b_n + r ⊙ (U_n h))`, `h' = (1 - z) ⊙ h + z ⊙ ñ`.
//! * LSTM `[i; f; g; o]`:
//!   `c' = σ(f) ⊙ c + σ(i) ⊙ tanh(g)`, `h' = σ(o) ⊙ tanh(c')`.
//!
//! Initial hidden and cell states are zero.

use std::fmt;

use crate::error::{Error, Result};
use crate::init::Init;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModalityKind {
    Audio,
    Text,
    Video,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 3] = [ModalityKind::Audio, ModalityKind::Text, ModalityKind::Video];

    pub fn name(self) -> &'static str {
        match self {
            ModalityKind::Audio => "audio",
            ModalityKind::Text => "text",
            ModalityKind::Video => "video",
        }
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Encoder output for one modality: `states[N × 2h]` on a tape plus the
/// validity mask. Padded rows are exactly zero.
#[derive(Debug, Clone)]
pub struct ModalityEncoding {
    pub kind: ModalityKind,
    pub states: Var,
    pub mask: Vec<bool>,
}

impl ModalityEncoding {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

/// Parameters of one recurrent direction.
#[derive(Debug, Clone, Copy)]
pub struct RecurrentCellParams {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `[G·h × d_in]`
    pub w_input: ParamId,
    /// `[G·h × h]`
    pub w_hidden: ParamId,
    /// `[G·h]`
    pub bias: ParamId,
}

impl RecurrentCellParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cell: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        init: &mut Init,
    ) -> Result<Self> {
        let g = cell.gates() * hidden_dim;
        Ok(Self {
            cell,
            input_dim,
            hidden_dim,
            w_input: store.insert(format!("{prefix}.w_input"), init.matrix(g, input_dim))?,
            w_hidden: store.insert(format!("{prefix}.w_hidden"), init.matrix(g, hidden_dim))?,
            bias: store.insert(format!("{prefix}.bias"), init.bias(g))?,
        })
    }

    fn check(&self, tape: &Tape<'_>, x: Option<Var>, h: Var) -> Result<()> {
        if let Some(x) = x {
            if tape.shape(x) != [self.input_dim] {
                return Err(Error::dim("recurrent input", tape.shape(x), &[self.input_dim]));
            }
        }
        if tape.shape(h) != [self.hidden_dim] {
            return Err(Error::dim("recurrent state", tape.shape(h), &[self.hidden_dim]));
        }
        Ok(())
    }
}

/// Bidirectional encoder weights for one modality.
#[derive(Debug, Clone, Copy)]
pub struct BiEncoderParams {
    pub forward: RecurrentCellParams,
    pub backward: RecurrentCellParams,
}

impl BiEncoderParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cell: CellKind,
        input_dim: usize,
        hidden_dim: usize,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(Self {
            forward: RecurrentCellParams::new(store, &format!("{prefix}.fwd"), cell, input_dim, hidden_dim, init)?,
            backward: RecurrentCellParams::new(store, &format!("{prefix}.bwd"), cell, input_dim, hidden_dim, init)?,
        })
    }
}

/// Embedding lookup. Every id must already be inside the table.
pub fn embed_tokens(tape: &mut Tape<'_>, table: Var, ids: &[usize]) -> Result<Var> {
    tape.gather(table, ids)
}

/// `W x + b` for a single input vector.
fn input_projection<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    x: Var,
    p: &RecurrentCellParams,
) -> Result<Var> {
    let w = tape.param(store, p.w_input);
    let b = tape.param(store, p.bias);
    let wx = tape.matvec(w, x)?;
    tape.add(wx, b)
}

fn gru_from_projection<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    xp: Var,
    h: Var,
    p: &RecurrentCellParams,
) -> Result<Var> {
    let d = p.hidden_dim;
    let u = tape.param(store, p.w_hidden);
    let uh = tape.matvec(u, h)?;
    let x_r = tape.slice(xp, 0, d)?;
    let x_z = tape.slice(xp, d, d)?;
    let x_n = tape.slice(xp, 2 * d, d)?;
    let h_r = tape.slice(uh, 0, d)?;
    let h_z = tape.slice(uh, d, d)?;
    let h_n = tape.slice(uh, 2 * d, d)?;

    let r_pre = tape.add(x_r, h_r)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = tape.add(x_z, h_z)?;
    let z = tape.sigmoid(z_pre);
    let gated = tape.mul(r, h_n)?;
    let n_pre = tape.add(x_n, gated)?;
    let cand = tape.tanh(n_pre);

    // h' = h + z ⊙ (ñ - h)
    let diff = tape.sub(cand, h)?;
    let step = tape.mul(z, diff)?;
    tape.add(h, step)
}

fn lstm_from_projection<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    xp: Var,
    h: Var,
    c: Var,
    p: &RecurrentCellParams,
) -> Result<(Var, Var)> {
    let d = p.hidden_dim;
    let u = tape.param(store, p.w_hidden);
    let uh = tape.matvec(u, h)?;
    let pre = tape.add(xp, uh)?;
    let i_pre = tape.slice(pre, 0, d)?;
    let f_pre = tape.slice(pre, d, d)?;
    let g_pre = tape.slice(pre, 2 * d, d)?;
    let o_pre = tape.slice(pre, 3 * d, d)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let g = tape.tanh(g_pre);
    let o = tape.sigmoid(o_pre);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let c_act = tape.tanh(c_next);
    let h_next = tape.mul(o, c_act)?;
    Ok((h_next, c_next))
}

/// One GRU transition.
pub fn gru_step<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    x: Var,
    h_prev: Var,
    p: &RecurrentCellParams,
) -> Result<Var> {
    if p.cell != CellKind::Gru {
        return Err(Error::contract("gru_step called with LSTM parameters"));
    }
    p.check(tape, Some(x), h_prev)?;
    let xp = input_projection(tape, store, x, p)?;
    gru_from_projection(tape, store, xp, h_prev, p)
}

/// One LSTM transition; returns `(h', c')`.
pub fn lstm_step<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &RecurrentCellParams,
) -> Result<(Var, Var)> {
    if p.cell != CellKind::Lstm {
        return Err(Error::contract("lstm_step called with GRU parameters"));
    }
    p.check(tape, Some(x), h_prev)?;
    p.check(tape, None, c_prev)?;
    let xp = input_projection(tape, store, x, p)?;
    lstm_from_projection(tape, store, xp, h_prev, c_prev, p)
}

/// Number of leading valid positions; the mask must be a prefix of `true`s.
pub(crate) fn prefix_len(mask: &[bool]) -> Result<usize> {
    let n = mask.iter().take_while(|&&m| m).count();
    if mask[n..].iter().any(|&m| m) {
        return Err(Error::contract("mask must mark a contiguous valid prefix"));
    }
    Ok(n)
}

fn run_direction<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    projected: Var,
    order: impl Iterator<Item = usize>,
    p: &RecurrentCellParams,
    out: &mut [Option<Var>],
) -> Result<()> {
    let zero = tape.constant(Tensor::zeros(&[p.hidden_dim]));
    let mut h = zero;
    let mut c = zero;
    for t in order {
        let xp = tape.row(projected, t)?;
        h = match p.cell {
            CellKind::Gru => gru_from_projection(tape, store, xp, h, p)?,
            CellKind::Lstm => {
                let (h2, c2) = lstm_from_projection(tape, store, xp, h, c, p)?;
                c = c2;
                h2
            }
        };
        out[t] = Some(h);
    }
    Ok(())
}

/// Runs both directions over the valid prefix of `inputs[T × d_in]` and
/// concatenates `[h_fwd; h_bwd]` per row. Padded rows are zero.
pub fn encode_bidirectional<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    kind: ModalityKind,
    inputs: Var,
    mask: &[bool],
    params: &BiEncoderParams,
) -> Result<ModalityEncoding> {
    let shape = tape.shape(inputs).to_vec();
    if shape.len() != 2 {
        return Err(Error::dim("encode_bidirectional", &shape, &[]));
    }
    let (t_len, d_in) = (shape[0], shape[1]);
    if mask.len() != t_len {
        return Err(Error::dim("encode_bidirectional mask", &shape, &[mask.len()]));
    }
    if d_in != params.forward.input_dim || d_in != params.backward.input_dim {
        return Err(Error::dim("encode_bidirectional input", &shape, &[params.forward.input_dim]));
    }
    let valid = prefix_len(mask)?;
    if valid == 0 {
        return Err(Error::EmptyInput("sequence has no valid timesteps"));
    }
    let hidden = params.forward.hidden_dim;

    // Input projections for all timesteps at once: X · Wᵀ + b.
    let project = |tape: &mut Tape<'a>, p: &RecurrentCellParams| -> Result<Var> {
        let w = tape.param(store, p.w_input);
        let b = tape.param(store, p.bias);
        let xw = tape.matmul_nt(inputs, w)?;
        tape.add_rows(xw, b)
    };
    let fwd_proj = project(tape, &params.forward)?;
    let bwd_proj = project(tape, &params.backward)?;

    let mut fwd = vec![None; t_len];
    let mut bwd = vec![None; t_len];
    run_direction(tape, store, fwd_proj, 0..valid, &params.forward, &mut fwd)?;
    run_direction(tape, store, bwd_proj, (0..valid).rev(), &params.backward, &mut bwd)?;

    let pad = (valid < t_len).then(|| tape.constant(Tensor::zeros(&[2 * hidden])));
    let mut rows = Vec::with_capacity(t_len);
    for t in 0..t_len {
        match (fwd[t], bwd[t]) {
            (Some(f), Some(b)) => rows.push(tape.concat(&[f, b])?),
            _ => rows.push(pad.expect("padding row exists when valid < len")),
        }
    }
    let states = tape.stack(&rows)?;
    Ok(ModalityEncoding {
        kind,
        states,
        mask: mask.to_vec(),
    })
}

/// Mean-pools consecutive frames into bins of `bin_size`; the last bin may
/// be shorter.
pub fn bin_audio_features(frames: &Tensor, bin_size: usize) -> Result<Tensor> {
    if bin_size == 0 {
        return Err(Error::contract("bin size must be at least 1"));
    }
    if frames.shape().len() != 2 {
        return Err(Error::dim("bin_audio_features", frames.shape(), &[]));
    }
    let (t, d) = (frames.rows(), frames.cols());
    if t == 0 {
        return Err(Error::EmptyInput("audio frames"));
    }
    let bins = t.div_ceil(bin_size);
    let mut out = vec![0.0; bins * d];
    for b in 0..bins {
        let lo = b * bin_size;
        let hi = ((b + 1) * bin_size).min(t);
        let acc = &mut out[b * d..(b + 1) * d];
        for r in lo..hi {
            acc.iter_mut().zip(frames.row(r)).for_each(|(a, x)| *a += x);
        }
        let n = (hi - lo) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Tensor::matrix(bins, d, out)
}

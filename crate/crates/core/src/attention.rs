//! Hierarchical attention.
//!
//! Level 1 attends over the timesteps of one modality:
//!
//! ```text
//! e_j = v_aᵀ tanh(W_a s + U_a h_j + b_att)      α = softmax(e)      c = Σ_j α_j h_j
//! ```
//!
//! Every higher level has the same shape, without a bias, over a handful of
//! member vectors `x_k` (modality contexts or pair contexts):
//!
//! ```text
//! e_k = vᵀ tanh(W s + U_k x_k)      w = softmax(e)      out = Σ_k w_k P_k x_k
//! ```
//!
//! [`Combiner`] implements that shared form. MAST uses it three times (β over
//! audio-text, γ over video-text, δ over the two pairs); the flat TrimodalH2
//! baseline uses it once over all three modalities (η).

use std::collections::BTreeMap;

use crate::encoders::{ModalityEncoding, ModalityKind};
use crate::error::{Error, Result};
use crate::init::Init;
use crate::tensor::{ParamId, ParamStore, Tape, Var};

/// Group size used when summing audio weights for display.
pub const AUDIO_GROUP: usize = 30;

/// Level-1 parameters for one modality.
#[derive(Debug, Clone, Copy)]
pub struct ModalityAttentionParams {
    /// `[d_att × d_dec]`
    pub w_a: ParamId,
    /// `[d_att × d_enc]`
    pub u_a: ParamId,
    /// `[d_att]`
    pub v_a: ParamId,
    /// `[d_att]`
    pub b_att: ParamId,
}

impl ModalityAttentionParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_dec: usize,
        d_enc: usize,
        d_att: usize,
        init: &mut Init,
    ) -> Result<Self> {
        Ok(Self {
            w_a: store.insert(format!("{prefix}.w_a"), init.matrix(d_att, d_dec))?,
            u_a: store.insert(format!("{prefix}.u_a"), init.matrix(d_att, d_enc))?,
            v_a: store.insert(format!("{prefix}.v_a"), init.weight_vector(d_att))?,
            b_att: store.insert(format!("{prefix}.b_att"), init.bias(d_att))?,
        })
    }
}

/// Encoder states with their decoder-independent projection `U_a H + b_att`
/// precomputed, so each decoder step only adds `W_a s`.
#[derive(Debug, Clone)]
pub struct AttentionKeys {
    pub encoding: ModalityEncoding,
    pub keys: Var,
}

pub fn attention_keys<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    encoding: &ModalityEncoding,
    p: &ModalityAttentionParams,
) -> Result<AttentionKeys> {
    let u = tape.param(store, p.u_a);
    let b = tape.param(store, p.b_att);
    let hu = tape.matmul_nt(encoding.states, u)?;
    let keys = tape.add_rows(hu, b)?;
    Ok(AttentionKeys {
        encoding: encoding.clone(),
        keys,
    })
}

/// Level-1 attention with precomputed keys; returns `(α[N], c[d_enc])`.
pub fn attend<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    s: Var,
    keys: &AttentionKeys,
    p: &ModalityAttentionParams,
) -> Result<(Var, Var)> {
    let w = tape.param(store, p.w_a);
    let v = tape.param(store, p.v_a);
    let ws = tape.matvec(w, s)?;
    let pre = tape.add_rows(keys.keys, ws)?;
    let act = tape.tanh(pre);
    let energies = tape.matvec(act, v)?;
    let alpha = tape.softmax(energies, Some(&keys.encoding.mask))?;
    let context = tape.vecmat(alpha, keys.encoding.states)?;
    Ok((alpha, context))
}

/// Attention over the timesteps of a single modality.
pub fn modality_attention<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    s: Var,
    encoding: &ModalityEncoding,
    p: &ModalityAttentionParams,
) -> Result<(Var, Var)> {
    let keys = attention_keys(tape, store, encoding, p)?;
    attend(tape, store, s, &keys, p)
}

/// One member of a [`Combiner`]: energy projection `U_k` and output
/// projection `P_k`.
#[derive(Debug, Clone)]
pub struct CombinerMember {
    pub label: String,
    pub energy: ParamId,
    pub projection: ParamId,
}

/// Attention over a fixed set of member vectors.
#[derive(Debug, Clone)]
pub struct Combiner {
    pub v: ParamId,
    pub w: ParamId,
    pub members: Vec<CombinerMember>,
}

/// η over `{audio, text, video}`; `v_b`, `W_b` shared, `U_b^(k)`, `U_c^(k)`.
pub type TrimodalH2Params = Combiner;
/// β over `{audio, text}` or γ over `{video, text}`.
pub type PairCombinerParams = Combiner;
/// δ over `{audio-text, video-text}`.
pub type FinalCombinerParams = Combiner;

impl Combiner {
    /// `members` lists `(label, input width)`; every member projects to `d_out`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        members: &[(&str, usize)],
        d_dec: usize,
        d_att: usize,
        d_out: usize,
        init: &mut Init,
    ) -> Result<Self> {
        let v = store.insert(format!("{prefix}.v"), init.weight_vector(d_att))?;
        let w = store.insert(format!("{prefix}.w"), init.matrix(d_att, d_dec))?;
        let members = members
            .iter()
            .map(|&(label, d_in)| {
                Ok(CombinerMember {
                    label: label.to_string(),
                    energy: store.insert(format!("{prefix}.{label}.u_energy"), init.matrix(d_att, d_in))?,
                    projection: store.insert(format!("{prefix}.{label}.u_proj"), init.matrix(d_out, d_in))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { v, w, members })
    }

    pub fn labels(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.label.as_str()).collect()
    }

    /// Returns `(weights[K], fused[d_out])`. `inputs` follow member order.
    pub fn combine<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        s: Var,
        inputs: &[Var],
    ) -> Result<(Var, Var)> {
        if inputs.len() != self.members.len() {
            return Err(Error::contract(format!(
                "combiner over {:?} needs {} inputs, got {}",
                self.labels(),
                self.members.len(),
                inputs.len()
            )));
        }
        let v = tape.param(store, self.v);
        let w = tape.param(store, self.w);
        let ws = tape.matvec(w, s)?;
        let mut energies = Vec::with_capacity(inputs.len());
        for (m, &x) in self.members.iter().zip(inputs) {
            let u = tape.param(store, m.energy);
            let ux = tape.matvec(u, x)?;
            let pre = tape.add(ws, ux)?;
            let act = tape.tanh(pre);
            energies.push(tape.dot(v, act)?);
        }
        let e = tape.concat(&energies)?;
        let weights = tape.softmax(e, None)?;
        let mut fused = None;
        for (k, (m, &x)) in self.members.iter().zip(inputs).enumerate() {
            let p = tape.param(store, m.projection);
            let px = tape.matvec(p, x)?;
            let wk = tape.pick(weights, k)?;
            let term = tape.mul(wk, px)?;
            fused = Some(match fused {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok((weights, fused.expect("at least one member")))
    }
}

/// Second level of TrimodalH2: `contexts` must hold exactly the combiner's
/// modalities, in any order.
pub fn trimodal_h2_combine<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    s: Var,
    contexts: &BTreeMap<ModalityKind, Var>,
    p: &TrimodalH2Params,
) -> Result<(Var, Var)> {
    let mut inputs = Vec::with_capacity(p.members.len());
    for m in &p.members {
        let kind = ModalityKind::ALL
            .into_iter()
            .find(|k| k.name() == m.label)
            .ok_or_else(|| Error::contract(format!("combiner member {} is not a modality", m.label)))?;
        let c = contexts
            .get(&kind)
            .ok_or_else(|| Error::contract(format!("missing {kind} context")))?;
        inputs.push(*c);
    }
    if contexts.len() != inputs.len() {
        return Err(Error::contract("unexpected extra modality context"));
    }
    p.combine(tape, store, s, &inputs)
}

/// β (audio-text) or γ (video-text): `[other, text]` → `(weights[2], d_l)`.
pub fn pair_combine<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    s: Var,
    c_other: Var,
    c_text: Var,
    p: &PairCombinerParams,
) -> Result<(Var, Var)> {
    if tape.shape(c_other) != tape.shape(c_text) {
        return Err(Error::dim("pair_combine", tape.shape(c_other), tape.shape(c_text)));
    }
    p.combine(tape, store, s, &[c_other, c_text])
}

/// δ over `[d_audio_text, d_video_text]` → `(δ[2], c_f)`.
pub fn final_combine<'a>(
    tape: &mut Tape<'a>,
    store: &'a ParamStore,
    s: Var,
    d_at: Var,
    d_vt: Var,
    p: &FinalCombinerParams,
) -> Result<(Var, Var)> {
    if tape.shape(d_at) != tape.shape(d_vt) {
        return Err(Error::dim("final_combine", tape.shape(d_at), tape.shape(d_vt)));
    }
    p.combine(tape, store, s, &[d_at, d_vt])
}

/// All attention distributions of one decoder step, detached from the tape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HierarchicalAttentionWeights {
    /// Per modality, one weight per (padded) timestep.
    pub alpha: BTreeMap<ModalityKind, Vec<f64>>,
    /// `[audio, text]`
    pub beta: Option<[f64; 2]>,
    /// `[video, text]`
    pub gamma: Option<[f64; 2]>,
    /// `[audio-text, video-text]`
    pub delta: Option<[f64; 2]>,
    /// Flat second level, in the order of the model's modalities.
    pub eta: Option<Vec<f64>>,
}

/// Level-2 modality masses and per-timestep final weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeAttention {
    pub audio_mass: f64,
    pub text_mass: f64,
    pub video_mass: f64,
    /// `mass(k) · α^(k)` per timestep.
    pub per_timestep: BTreeMap<ModalityKind, Vec<f64>>,
    /// Audio per-timestep weights summed in consecutive groups.
    pub audio_grouped: Vec<f64>,
}

impl CumulativeAttention {
    pub fn mass(&self, kind: ModalityKind) -> f64 {
        match kind {
            ModalityKind::Audio => self.audio_mass,
            ModalityKind::Text => self.text_mass,
            ModalityKind::Video => self.video_mass,
        }
    }
}

/// Cumulative weights of a MAST step:
/// audio `δ_at β_a`, text `δ_at β_t + δ_vt γ_t`, video `δ_vt γ_v`.
pub fn cumulative_attention(
    w: &HierarchicalAttentionWeights,
    audio_group: usize,
) -> Result<CumulativeAttention> {
    let missing = |what: &str| Error::contract(format!("cumulative attention needs {what}"));
    let delta = w.delta.ok_or_else(|| missing("δ"))?;
    let beta = w.beta.ok_or_else(|| missing("β"))?;
    let gamma = w.gamma.ok_or_else(|| missing("γ"))?;
    if audio_group == 0 {
        return Err(Error::contract("audio group size must be at least 1"));
    }
    let audio_mass = delta[0] * beta[0];
    let text_mass = delta[0] * beta[1] + delta[1] * gamma[1];
    let video_mass = delta[1] * gamma[0];

    let mut per_timestep = BTreeMap::new();
    for kind in ModalityKind::ALL {
        let alpha = w
            .alpha
            .get(&kind)
            .ok_or_else(|| missing(&format!("α for {kind}")))?;
        let mass = match kind {
            ModalityKind::Audio => audio_mass,
            ModalityKind::Text => text_mass,
            ModalityKind::Video => video_mass,
        };
        per_timestep.insert(kind, alpha.iter().map(|a| mass * a).collect::<Vec<_>>());
    }
    let audio_grouped = per_timestep[&ModalityKind::Audio]
        .chunks(audio_group)
        .map(|c| c.iter().sum())
        .collect();
    Ok(CumulativeAttention {
        audio_mass,
        text_mass,
        video_mass,
        per_timestep,
        audio_grouped,
    })
}

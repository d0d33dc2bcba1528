//! Tensor-level reverse-mode automatic differentiation.
//!
//! Every operation appends one node holding its forward value. Parameter
//! leaves borrow their values from a [`ParamStore`] so building a graph never
//! copies weights. [`Tape::backward`] walks the nodes in reverse creation
//! order, which is a valid topological order by construction.

use std::borrow::Cow;
use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    AddRows(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Row(Var, usize),
    Gather(Var, Vec<usize>),
    Pick(Var, usize),
}

#[derive(Debug)]
struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Parameter gradients detached from the tape that produced them.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.entries.iter().map(|(p, g)| (*p, g.as_slice()))
    }

    /// Adds these gradients into the parameters' grad buffers.
    pub fn accumulate_into(&self, params: &mut ParamStore) {
        for (id, g) in &self.entries {
            if let Some(buf) = params.get_mut(*id).grad_mut() {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
        }
    }

    /// Adds `other` into `self`, taking its buffers when `self` is empty.
    pub fn merge_owned(&mut self, other: Gradients) {
        if self.entries.is_empty() {
            *self = other;
        } else {
            self.merge(&other);
        }
    }

    /// Adds `other` into `self`, entry by entry.
    pub fn merge(&mut self, other: &Gradients) {
        for (id, g) in &other.entries {
            match self.entries.iter_mut().find(|(p, _)| p == id) {
                Some((_, mine)) => mine.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => self.entries.push((*id, g.clone())),
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, g)| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
}

fn is_scalar(shape: &[usize]) -> bool {
    shape.is_empty()
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and all gradients.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.grads.clear();
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shapes are consistent")
    }

    /// A leaf that takes no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// A leaf that receives a gradient from [`Tape::backward`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    /// Borrowed parameter leaf; repeated calls for the same id share a node.
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    // ---- linear algebra -------------------------------------------------

    /// `[m×k] · [k×n] → [m×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// `[m×k] · [n×k]ᵀ → [m×n]`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim("matmul_nt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMulNt(a, b), rg))
    }

    /// `[m×k] · [k] → [m]`
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(a), self.shape(x));
        if sa.len() != 2 || sx.len() != 1 || sa[1] != sx[0] {
            return Err(Error::dim("matvec", sa, sx));
        }
        let (m, k) = (sa[0], sa[1]);
        let (av, xv) = (self.value(a), self.value(x));
        let out: Vec<f64> = (0..m).map(|i| dot(&av[i * k..(i + 1) * k], xv)).collect();
        let rg = self.rg(a) || self.rg(x);
        Ok(self.push(vec![m], out, Op::MatVec(a, x), rg))
    }

    /// `[m] · [m×n] → [n]`
    pub fn vecmat(&mut self, x: Var, a: Var) -> Result<Var> {
        let (sx, sa) = (self.shape(x), self.shape(a));
        if sa.len() != 2 || sx.len() != 1 || sa[0] != sx[0] {
            return Err(Error::dim("vecmat", sx, sa));
        }
        let (m, n) = (sa[0], sa[1]);
        let (xv, av) = (self.value(x), self.value(a));
        let mut out = vec![0.0; n];
        for i in 0..m {
            axpy(xv[i], &av[i * n..(i + 1) * n], &mut out);
        }
        let rg = self.rg(a) || self.rg(x);
        Ok(self.push(vec![n], out, Op::VecMat(x, a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 2 {
            return Err(Error::dim("transpose", sa, &[]));
        }
        let (m, n) = (sa[0], sa[1]);
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (av, bv) = (self.value(a), self.value(b));
        let (shape, out) = if sa == sb {
            (sa, av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect())
        } else if is_scalar(&sb) {
            let y = bv[0];
            (sa, av.iter().map(|&x| f(x, y)).collect())
        } else if is_scalar(&sa) {
            let x = av[0];
            (sb, bv.iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(Error::dim(name, &sa, &sb));
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `scale · a + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).iter().map(|&x| scale * x + shift).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(a));
        self.push(shape, out, Op::Affine(a, scale), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(a));
        self.push(shape, out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let (shape, rg) = (self.shape(a).to_vec(), self.rg(a));
        self.push(shape, out, Op::Sigmoid(a), rg)
    }

    /// Adds vector `v[d]` to every row of `m[n×d]`.
    pub fn add_rows(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(Error::dim("add_rows", sm, sv));
        }
        let d = sv[0];
        let vv = self.value(v);
        let out = self
            .value(m)
            .iter()
            .enumerate()
            .map(|(i, x)| x + vv[i % d])
            .collect();
        let shape = sm.to_vec();
        let rg = self.rg(m) || self.rg(v);
        Ok(self.push(shape, out, Op::AddRows(m, v), rg))
    }

    // ---- normalization and reductions -----------------------------------

    /// Masked, max-shifted softmax over a vector. Masked entries are exactly 0.
    pub fn softmax(&mut self, e: Var, mask: Option<&[bool]>) -> Result<Var> {
        let se = self.shape(e);
        if se.len() != 1 {
            return Err(Error::dim("softmax", se, &[]));
        }
        if let Some(m) = mask {
            if m.len() != se[0] {
                return Err(Error::dim("softmax mask", se, &[m.len()]));
            }
        }
        let out = softmax_values(self.value(e), mask)?;
        let shape = se.to_vec();
        let rg = self.rg(e);
        Ok(self.push(shape, out, Op::Softmax(e), rg))
    }

    pub fn log_softmax(&mut self, e: Var) -> Result<Var> {
        let se = self.shape(e);
        if se.len() != 1 {
            return Err(Error::dim("log_softmax", se, &[]));
        }
        let ev = self.value(e);
        let max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + ev.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let out = ev.iter().map(|x| x - lse).collect();
        let shape = se.to_vec();
        let rg = self.rg(e);
        Ok(self.push(shape, out, Op::LogSoftmax(e), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(Vec::new(), vec![s], Op::Sum(a), rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    // ---- structural -----------------------------------------------------

    /// Concatenates vectors; scalars count as length-1 vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat"));
        }
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() > 1 {
                return Err(Error::dim("concat", self.shape(p), &[]));
            }
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let n = out.len();
        Ok(self.push(vec![n], out, Op::Concat(parts.to_vec()), rg))
    }

    /// `v[start..start + len]` of a vector.
    pub fn slice(&mut self, v: Var, start: usize, len: usize) -> Result<Var> {
        let sv = self.shape(v);
        if sv.len() != 1 || start + len > sv[0] || len == 0 {
            return Err(Error::dim("slice", sv, &[start, len]));
        }
        let out = self.value(v)[start..start + len].to_vec();
        let rg = self.rg(v);
        Ok(self.push(vec![len], out, Op::Slice(v, start), rg))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or(Error::EmptyInput("stack"))?;
        let d = self.shape(first).to_vec();
        if d.len() != 1 {
            return Err(Error::dim("stack", &d, &[]));
        }
        let mut out = Vec::with_capacity(rows.len() * d[0]);
        for &r in rows {
            if self.shape(r) != d.as_slice() {
                return Err(Error::dim("stack", &d, self.shape(r)));
            }
            out.extend_from_slice(self.value(r));
        }
        let rg = rows.iter().any(|&r| self.rg(r));
        Ok(self.push(vec![rows.len(), d[0]], out, Op::Stack(rows.to_vec()), rg))
    }

    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let sm = self.shape(m);
        if sm.len() != 2 || i >= sm[0] {
            return Err(Error::dim("row", sm, &[i]));
        }
        let d = sm[1];
        let out = self.value(m)[i * d..(i + 1) * d].to_vec();
        let rg = self.rg(m);
        Ok(self.push(vec![d], out, Op::Row(m, i), rg))
    }

    /// Embedding lookup: rows `ids` of `table[V×d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::dim("gather", st, &[]));
        }
        if ids.is_empty() {
            return Err(Error::EmptyInput("gather ids"));
        }
        let (v, d) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::OutOfVocabulary { id: bad, size: v });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(vec![ids.len(), d], out, Op::Gather(table, ids.to_vec()), rg))
    }

    /// Scalar element `v[i]` of a vector.
    pub fn pick(&mut self, v: Var, i: usize) -> Result<Var> {
        let sv = self.shape(v);
        if sv.len() != 1 || i >= sv[0] {
            return Err(Error::dim("pick", sv, &[i]));
        }
        let x = self.value(v)[i];
        let rg = self.rg(v);
        Ok(self.push(Vec::new(), vec![x], Op::Pick(v, i), rg))
    }

    // ---- reverse pass ---------------------------------------------------

    /// Propagates adjoints from the scalar `loss` back to every leaf.
    /// Returns the number of nodes whose adjoint was replayed.
    pub fn backward(&mut self, loss: Var) -> Result<usize> {
        if !is_scalar(self.shape(loss)) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(visited)
    }

    /// Adjoint of `v` from the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter leaf reached by the last backward pass.
    pub fn param_gradients(&self) -> Gradients {
        let mut entries: Vec<(ParamId, Vec<f64>)> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g.to_vec())))
            .collect();
        entries.sort_by_key(|(id, _)| *id);
        Gradients { entries }
    }

    /// Like [`Tape::param_gradients`] but moves the buffers out of the tape.
    pub fn take_param_gradients(&mut self) -> Gradients {
        let mut entries: Vec<(ParamId, Vec<f64>)> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grads.get_mut(v.0).and_then(Option::take).map(|g| (id, g)))
            .collect();
        entries.sort_by_key(|(id, _)| *id);
        Gradients { entries }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].value };
        let shape = |v: Var| -> &[usize] { &self.nodes[v.0].shape };

        // `acc(v, n)` returns the adjoint buffer of `v` when it needs one.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    let n = self.nodes[v.0].value.len();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
                } else {
                    None
                }
            }};
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                if let Some(ga) = acc!(*a) {
                    // dA += dC · Bᵀ
                    gemm_nt(g, val(*b), ga, m, n, k);
                }
                if let Some(gb) = acc!(*b) {
                    // dB += Aᵀ · dC
                    gemm_tn(val(*a), g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[0];
                if let Some(ga) = acc!(*a) {
                    // dA += dC · B
                    gemm_nn(g, val(*b), ga, m, n, k);
                }
                if let Some(gb) = acc!(*b) {
                    // dB += dCᵀ · A
                    gemm_tn(g, val(*a), gb, m, n, k);
                }
            }
            Op::MatVec(a, x) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                if let Some(ga) = acc!(*a) {
                    let xv = val(*x);
                    for r in 0..m {
                        axpy(g[r], xv, &mut ga[r * k..(r + 1) * k]);
                    }
                }
                if let Some(gx) = acc!(*x) {
                    let av = val(*a);
                    for r in 0..m {
                        axpy(g[r], &av[r * k..(r + 1) * k], gx);
                    }
                }
            }
            Op::VecMat(x, a) => {
                let (m, n) = (shape(*a)[0], shape(*a)[1]);
                if let Some(gx) = acc!(*x) {
                    let av = val(*a);
                    for r in 0..m {
                        gx[r] += dot(&av[r * n..(r + 1) * n], g);
                    }
                }
                if let Some(ga) = acc!(*a) {
                    let xv = val(*x);
                    for r in 0..m {
                        axpy(xv[r], g, &mut ga[r * n..(r + 1) * n]);
                    }
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (shape(*a)[0], shape(*a)[1]);
                if let Some(ga) = acc!(*a) {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let scalar_a = is_scalar(shape(*a)) && !is_scalar(&node.shape);
                let scalar_b = is_scalar(shape(*b)) && !is_scalar(&node.shape);
                if let Some(ga) = acc!(*a) {
                    if scalar_a {
                        ga[0] += g.iter().sum::<f64>();
                    } else {
                        ga.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                    }
                }
                if let Some(gb) = acc!(*b) {
                    if scalar_b {
                        gb[0] += sign * g.iter().sum::<f64>();
                    } else {
                        gb.iter_mut().zip(g).for_each(|(d, x)| *d += sign * x);
                    }
                }
            }
            Op::Mul(a, b) => {
                let scalar_a = is_scalar(shape(*a)) && !is_scalar(&node.shape);
                let scalar_b = is_scalar(shape(*b)) && !is_scalar(&node.shape);
                let (av, bv) = (val(*a), val(*b));
                let at = |i: usize| if scalar_a { av[0] } else { av[i] };
                let bt = |i: usize| if scalar_b { bv[0] } else { bv[i] };
                if let Some(ga) = acc!(*a) {
                    if scalar_a {
                        ga[0] += g.iter().enumerate().map(|(i, x)| x * bt(i)).sum::<f64>();
                    } else {
                        for (i, d) in ga.iter_mut().enumerate() {
                            *d += g[i] * bt(i);
                        }
                    }
                }
                if let Some(gb) = acc!(*b) {
                    if scalar_b {
                        gb[0] += g.iter().enumerate().map(|(i, x)| x * at(i)).sum::<f64>();
                    } else {
                        for (i, d) in gb.iter_mut().enumerate() {
                            *d += g[i] * at(i);
                        }
                    }
                }
            }
            Op::Affine(a, s) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().zip(g).for_each(|(d, x)| *d += s * x);
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = acc!(*a) {
                    for (k, d) in ga.iter_mut().enumerate() {
                        *d += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = acc!(*a) {
                    for (k, d) in ga.iter_mut().enumerate() {
                        *d += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
            }
            Op::AddRows(m, v) => {
                if let Some(gm) = acc!(*m) {
                    gm.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if let Some(gv) = acc!(*v) {
                    let d = gv.len();
                    for (k, x) in g.iter().enumerate() {
                        gv[k % d] += x;
                    }
                }
            }
            Op::Softmax(e) => {
                if let Some(ge) = acc!(*e) {
                    let inner: f64 = y.iter().zip(g).map(|(p, x)| p * x).sum();
                    for (k, d) in ge.iter_mut().enumerate() {
                        *d += y[k] * (g[k] - inner);
                    }
                }
            }
            Op::LogSoftmax(e) => {
                if let Some(ge) = acc!(*e) {
                    let total: f64 = g.iter().sum();
                    for (k, d) in ge.iter_mut().enumerate() {
                        *d += g[k] - y[k].exp() * total;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = acc!(*a) {
                    ga.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    if let Some(gp) = acc!(p) {
                        gp.iter_mut().zip(&g[off..off + n]).for_each(|(d, x)| *d += x);
                    }
                    off += n;
                }
            }
            Op::Slice(v, start) => {
                if let Some(gv) = acc!(*v) {
                    gv[*start..*start + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, x)| *d += x);
                }
            }
            Op::Stack(rows) => {
                let d = node.shape[1];
                for (r, &p) in rows.iter().enumerate() {
                    if let Some(gp) = acc!(p) {
                        gp.iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(a, x)| *a += x);
                    }
                }
            }
            Op::Row(m, r) => {
                if let Some(gm) = acc!(*m) {
                    let d = g.len();
                    gm[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(a, x)| *a += x);
                }
            }
            Op::Gather(t, ids) => {
                if let Some(gt) = acc!(*t) {
                    let d = node.shape[1];
                    for (r, &id) in ids.iter().enumerate() {
                        gt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(a, x)| *a += x);
                    }
                }
            }
            Op::Pick(v, idx) => {
                if let Some(gv) = acc!(*v) {
                    gv[*idx] += g[0];
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_values(e: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    if !(0..e.len()).any(keep) {
        return Err(Error::InvalidMask);
    }
    // non-finite energies give NaN weights
    let max = (0..e.len())
        .filter(|&i| keep(i))
        .map(|i| e[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = (0..e.len())
        .map(|i| if keep(i) { (e[i] - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    Ok(out)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// `c[m×n] += a[m×k] · b[k×n]`
fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b[p * n..(p + 1) * n], ci);
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    // b is usually the large operand: stream it once.
    for j in 0..n {
        let bj = &b[j * k..(j + 1) * k];
        for i in 0..m {
            c[i * n + j] += dot(&a[i * k..(i + 1) * k], bj);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let cp = &mut c[p * n..(p + 1) * n];
        for i in 0..m {
            let aip = a[i * k + p];
            if aip != 0.0 {
                axpy(aip, &b[i * n..(i + 1) * n], cp);
            }
        }
    }
}

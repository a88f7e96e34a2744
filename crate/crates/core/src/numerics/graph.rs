//! Reverse-mode differentiation over a recorded operation list.
//!
//! A [`Graph`] is rebuilt for every forward pass. Nodes only reference
//! earlier nodes, so the record is a DAG in index order and backward is a
//! single reverse sweep. Recorded values are never mutated after creation.

use super::kernels;
use super::{NumericsError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One (query segment, key segment) pairing for packed attention.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionSegment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

/// Layout of a packed multi-head attention call.
///
/// Several sequences are stacked row-wise; each segment attends only
/// within its own key range. `causal` restricts query `i` to keys `0..=i`
/// of its segment. `key_mask[r]` excludes key row `r` everywhere.
#[derive(Clone, Debug)]
pub struct AttentionLayout {
    pub heads: usize,
    pub segments: Vec<AttentionSegment>,
    pub causal: bool,
    pub key_mask: Option<Vec<bool>>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttentionLayout,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<u32>,
        smoothing: f64,
        probs: Vec<f64>,
        mask: Vec<bool>,
        count: usize,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Operation record with attached gradient accumulators.
///
/// Leaves created with `requires_grad = true` accumulate gradients across
/// calls to [`Graph::backward`] until [`Graph::zero_grad`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    first_non_finite: Option<usize>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Fails if any recorded value is NaN or infinite.
    pub fn check_finite(&self) -> Result<(), NumericsError> {
        match self.first_non_finite {
            None => Ok(()),
            Some(i) => Err(NumericsError::NonFinite(format!("node {i} produced a non-finite value"))),
        }
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        t.dims2().unwrap_or((1, t.len()))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(NumericsError::Shape(format!("matmul [{m},{k}] x [{k2},{n}]")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(NumericsError::Shape(format!("matmul_t [{m},{k}] x [{n},{k2}]^T")));
        }
        let out = kernels::matmul_t(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulT(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumericsError::Shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).data().to_vec();
        kernels::add_in_place(&mut out, self.value(b).data());
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add(a, b), rg))
    }

    /// Adds a row vector (`[n]` or `[1,n]`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        if self.value(row).len() != n {
            return Err(NumericsError::Shape(format!(
                "add_row [{m},{n}] + {:?}",
                self.value(row).shape()
            )));
        }
        let mut out = self.value(a).data().to_vec();
        let r = self.value(row).data();
        for chunk in out.chunks_mut(n) {
            kernels::add_in_place(chunk, r);
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, row]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumericsError::Shape(format!(
                "mul {:?} * {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x * factor).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(shape, out), Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(shape, out), Op::Relu(a), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let n = self.value(a).last_dim();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            kernels::softmax_in_place(row);
        }
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(shape, out), Op::Softmax(a), rg)
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        let n = self.value(x).last_dim();
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(NumericsError::Shape(format!(
                "layer_norm over {n} features with gain {:?} and bias {:?}",
                self.value(gain).shape(),
                self.value(bias).shape()
            )));
        }
        let xv = self.value(x).data();
        let rows = xv.len() / n;
        let mut out = vec![0.0; xv.len()];
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = Vec::with_capacity(rows);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        for r in 0..rows {
            let span = r * n..(r + 1) * n;
            rstd.push(kernels::layer_norm_row(
                &xv[span.clone()],
                g,
                b,
                eps,
                &mut xhat[span.clone()],
                &mut out[span],
            ));
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Gathers rows of `table` (`[vocab, dim]`) by id.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var, NumericsError> {
        let (vocab, dim) = self.dims(table);
        if ids.is_empty() {
            return Err(NumericsError::Shape("embedding lookup of zero ids".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        let t = self.value(table).data();
        for &id in ids {
            let id = id as usize;
            if id >= vocab {
                return Err(NumericsError::Index(format!("id {id} outside vocabulary of {vocab}")));
            }
            out.extend_from_slice(&t[id * dim..(id + 1) * dim]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), dim], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Packed multi-head scaled dot-product attention over already projected
    /// queries, keys and values (each `[rows, dim]`).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttentionLayout) -> Result<Var, NumericsError> {
        let (rq, d) = self.dims(q);
        let (rk, dk_) = self.dims(k);
        let (rv, dv) = self.dims(v);
        if d != dk_ || d != dv || rk != rv {
            return Err(NumericsError::Shape(format!(
                "attention q [{rq},{d}] k [{rk},{dk_}] v [{rv},{dv}]"
            )));
        }
        if layout.heads == 0 || d % layout.heads != 0 {
            return Err(NumericsError::Shape(format!("{} heads do not divide width {d}", layout.heads)));
        }
        if let Some(mask) = &layout.key_mask {
            if mask.len() != rk {
                return Err(NumericsError::Shape("key mask length differs from key rows".into()));
            }
        }
        for s in &layout.segments {
            if s.q_start + s.q_len > rq || s.k_start + s.k_len > rk {
                return Err(NumericsError::Shape(format!("segment {s:?} outside [{rq}] x [{rk}]")));
            }
            if layout.causal && s.q_len > s.k_len {
                return Err(NumericsError::Shape("causal segment with more queries than keys".into()));
            }
        }
        let (out, probs) = attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            rq,
            d,
            &layout,
        );
        let rg = self.rg(&[q, k, v]);
        Ok(self.push(
            Tensor::from_parts(vec![rq, d], out),
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
            rg,
        ))
    }

    /// Mean label-smoothed negative log-likelihood over positions whose
    /// target is not `pad_id`. The smoothed target puts `1 - smoothing` on
    /// the gold id and spreads `smoothing` uniformly over the vocabulary.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        smoothing: f64,
        pad_id: Option<u32>,
    ) -> Result<Var, NumericsError> {
        let (rows, vocab) = self.dims(logits);
        if targets.len() != rows {
            return Err(NumericsError::Shape(format!(
                "{} targets for {rows} logit rows",
                targets.len()
            )));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(NumericsError::Domain(format!("label smoothing {smoothing} outside [0,1)")));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= vocab) {
            return Err(NumericsError::Index(format!("target id {bad} outside vocabulary of {vocab}")));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; lv.len()];
        let mut mask = vec![false; rows];
        let mut total = 0.0;
        let mut count = 0;
        let uniform = smoothing / vocab as f64;
        for r in 0..rows {
            if Some(targets[r]) == pad_id {
                continue;
            }
            mask[r] = true;
            count += 1;
            let row = &lv[r * vocab..(r + 1) * vocab];
            let lp = &mut probs[r * vocab..(r + 1) * vocab];
            kernels::log_softmax(row, lp);
            let t = targets[r] as usize;
            let mut loss = -(1.0 - smoothing) * lp[t];
            if smoothing > 0.0 {
                loss -= uniform * lp.iter().sum::<f64>();
            }
            total += loss;
            lp.iter_mut().for_each(|x| *x = x.exp());
        }
        let mean = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(mean),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
                mask,
                count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Propagates d(loss)/d(node) to every leaf that requires gradients,
    /// adding into any gradient already stored there.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
        }
        for (idx, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => kernels::add_in_place(acc, &g),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<(), NumericsError> {
        let node = &self.nodes[idx];
        let send = |grads: &mut [Option<Vec<f64>>], target: Var, f: &dyn Fn(&mut [f64])| {
            if target.0 >= idx {
                return Err(NumericsError::Graph(format!("node {idx} references later node {}", target.0)));
            }
            if !self.nodes[target.0].requires_grad {
                return Ok(());
            }
            let slot = grads[target.0].get_or_insert_with(|| vec![0.0; self.nodes[target.0].value.len()]);
            f(slot);
            Ok(())
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                send(grads, *a, &|s| kernels::matmul_t_acc(s, g, bv, m, n, k))?;
                send(grads, *b, &|s| kernels::matmul_tn_acc(s, av, g, m, k, n))?;
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                send(grads, *a, &|s| kernels::matmul_acc(s, g, bv, m, n, k))?;
                send(grads, *b, &|s| kernels::matmul_tn_acc(s, g, av, m, n, k))?;
            }
            Op::Add(a, b) => {
                send(grads, *a, &|s| kernels::add_in_place(s, g))?;
                send(grads, *b, &|s| kernels::add_in_place(s, g))?;
            }
            Op::AddRow(a, row) => {
                let n = self.value(*row).len();
                send(grads, *a, &|s| kernels::add_in_place(s, g))?;
                send(grads, *row, &|s| {
                    for chunk in g.chunks(n) {
                        kernels::add_in_place(s, chunk);
                    }
                })?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                send(grads, *a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * bv[i];
                    }
                })?;
                send(grads, *b, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * av[i];
                    }
                })?;
            }
            Op::Scale(a, factor) => {
                send(grads, *a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * factor;
                    }
                })?;
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                send(grads, *a, &|s| {
                    for i in 0..s.len() {
                        if av[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                })?;
            }
            Op::Softmax(a) => {
                let p = node.value.data();
                let n = node.value.last_dim();
                send(grads, *a, &|s| {
                    for r in 0..p.len() / n {
                        let span = r * n..(r + 1) * n;
                        let dot = kernels::dot(&g[span.clone()], &p[span.clone()]);
                        for i in span {
                            s[i] += p[i] * (g[i] - dot);
                        }
                    }
                })?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = node.value.last_dim();
                let gv = self.value(*gain).data();
                send(grads, *x, &|s| {
                    let mut dxhat = vec![0.0; n];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let span = r * n..(r + 1) * n;
                        for j in 0..n {
                            dxhat[j] = g[r * n + j] * gv[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx = kernels::dot(&dxhat, &xhat[span.clone()]) / n as f64;
                        for j in 0..n {
                            s[r * n + j] += rs * (dxhat[j] - mean_d - xhat[r * n + j] * mean_dx);
                        }
                    }
                })?;
                send(grads, *gain, &|s| {
                    for r in 0..rstd.len() {
                        for j in 0..n {
                            s[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                })?;
                send(grads, *bias, &|s| {
                    for chunk in g.chunks(n) {
                        kernels::add_in_place(s, chunk);
                    }
                })?;
            }
            Op::Embedding { table, ids } => {
                let dim = self.dims(*table).1;
                send(grads, *table, &|s| {
                    for (r, &id) in ids.iter().enumerate() {
                        let id = id as usize;
                        kernels::add_in_place(&mut s[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                })?;
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            } => {
                let d = self.dims(*q).1;
                let (qv, kv, vv) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let (dq, dk, dv) = attention_backward(qv, kv, vv, g, probs, d, layout);
                send(grads, *q, &|s| kernels::add_in_place(s, &dq))?;
                send(grads, *k, &|s| kernels::add_in_place(s, &dk))?;
                send(grads, *v, &|s| kernels::add_in_place(s, &dv))?;
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
                probs,
                mask,
                count,
            } => {
                let vocab = self.dims(*logits).1;
                let scale = g[0] / (*count).max(1) as f64;
                let uniform = smoothing / vocab as f64;
                send(grads, *logits, &|s| {
                    for (r, &active) in mask.iter().enumerate() {
                        if !active {
                            continue;
                        }
                        let t = targets[r] as usize;
                        for j in 0..vocab {
                            let mut q = uniform;
                            if j == t {
                                q += 1.0 - smoothing;
                            }
                            s[r * vocab + j] += scale * (probs[r * vocab + j] - q);
                        }
                    }
                })?;
            }
            Op::Sum(a) => {
                send(grads, *a, &|s| s.iter_mut().for_each(|x| *x += g[0]))?;
            }
        }
        Ok(())
    }
}

fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    rq: usize,
    d: usize,
    layout: &AttentionLayout,
) -> (Vec<f64>, Vec<f64>) {
    let h = layout.heads;
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; rq * d];
    let total: usize = layout.segments.iter().map(|s| s.q_len * s.k_len).sum::<usize>() * h;
    let mut probs = Vec::with_capacity(total);
    let mut scores = Vec::new();
    for seg in &layout.segments {
        for head in 0..h {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..seg.q_len {
                let qr = seg.q_start + i;
                let q_row = &q[qr * d + cols.start..qr * d + cols.end];
                scores.clear();
                for j in 0..seg.k_len {
                    let kr = seg.k_start + j;
                    let masked = (layout.causal && j > i)
                        || layout.key_mask.as_ref().is_some_and(|m| m[kr]);
                    scores.push(if masked {
                        f64::NEG_INFINITY
                    } else {
                        kernels::dot(q_row, &k[kr * d + cols.start..kr * d + cols.end]) * scale
                    });
                }
                kernels::softmax_in_place(&mut scores);
                let o = &mut out[qr * d + cols.start..qr * d + cols.end];
                for (j, &p) in scores.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let vr = seg.k_start + j;
                    for (o, &x) in o.iter_mut().zip(&v[vr * d + cols.start..vr * d + cols.end]) {
                        *o += p * x;
                    }
                }
                probs.extend_from_slice(&scores);
            }
        }
    }
    (out, probs)
}

fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    g: &[f64],
    probs: &[f64],
    d: usize,
    layout: &AttentionLayout,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = layout.heads;
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = Vec::new();
    let mut offset = 0;
    for seg in &layout.segments {
        for head in 0..h {
            let c0 = head * dh;
            for i in 0..seg.q_len {
                let qr = seg.q_start + i;
                let p = &probs[offset..offset + seg.k_len];
                offset += seg.k_len;
                let go = &g[qr * d + c0..qr * d + c0 + dh];
                dp.clear();
                for j in 0..seg.k_len {
                    let vr = seg.k_start + j;
                    dp.push(if p[j] == 0.0 {
                        0.0
                    } else {
                        kernels::dot(go, &v[vr * d + c0..vr * d + c0 + dh])
                    });
                }
                let s = kernels::dot(p, &dp);
                for j in 0..seg.k_len {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let kr = seg.k_start + j;
                    let ds = p[j] * (dp[j] - s) * scale;
                    for c in 0..dh {
                        dq[qr * d + c0 + c] += ds * k[kr * d + c0 + c];
                        dk[kr * d + c0 + c] += ds * q[qr * d + c0 + c];
                        dv[kr * d + c0 + c] += p[j] * go[c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

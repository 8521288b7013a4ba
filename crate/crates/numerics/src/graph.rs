//! Eager tensor graph with a reverse-mode tape.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{NumericsError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::{gemm, Real, View};
use crate::tensor::Tensor;

static NEXT_GRAPH: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of one specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u32,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Which keys a query row may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttnMask {
    Full,
    /// Keys `< prefix` are always visible; beyond the prefix, query row `i`
    /// (absolute position `q_offset + i`) sees keys up to its own position.
    Causal {
        prefix: usize,
        q_offset: usize,
    },
}

/// Multi-head scaled dot-product attention layout.
///
/// Rows of `q` and `k` are split into `groups` contiguous blocks of equal
/// size and attention runs independently inside each block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnSpec {
    pub heads: usize,
    pub groups: usize,
    pub mask: AttnMask,
}

impl AttnSpec {
    pub fn full(heads: usize) -> Self {
        AttnSpec { heads, groups: 1, mask: AttnMask::Full }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    AddBias(NodeId, NodeId),
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<T>, rstd: Vec<T> },
    Softmax(NodeId),
    Attention { q: NodeId, k: NodeId, v: NodeId, spec: AttnSpec, probs: Vec<T> },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom, cols: Vec<T> },
    ConvTranspose2d { x: NodeId, w: NodeId, b: NodeId, geom: ConvGeom },
    Gelu(NodeId),
    Exp(NodeId),
    MeanSquare(NodeId, NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize>, probs: Vec<T> },
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    Transpose(NodeId),
    ConcatRows(Vec<NodeId>),
    SliceRows { x: NodeId, start: usize },
    GatherRows { x: NodeId, idx: Vec<usize> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::Linear { .. } => "linear",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Softmax(..) => "softmax",
            Op::Attention { .. } => "attention",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Gelu(..) => "gelu",
            Op::Exp(..) => "exp",
            Op::MeanSquare(..) => "mean_square",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::GatherRows { .. } => "gather_rows",
        }
    }
}

struct Node<T: Real> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Eagerly evaluated computation graph.
///
/// Every builder method computes its output immediately and appends it to
/// the tape. A graph is single-writer; build one per sample or batch.
pub struct Graph<T: Real = f32> {
    id: u32,
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    params: HashMap<ParamId, NodeId>,
    grads: HashMap<usize, Vec<T>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        _ => {
            let c = *shape.last().unwrap();
            let r = if c == 0 { 0 } else { shape.iter().product::<usize>() / c };
            (r, c)
        }
    }
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let one = T::one();
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * c * (one + T::of(3.0) * a * x * x);
    (y, dy)
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(img: &[T], g: &ConvGeom, c: usize, h: usize, w: usize, ho: usize, wo: usize) -> Vec<T> {
    let k = g.k;
    let npos = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * npos];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &img[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, c: usize, h: usize, w: usize, ho: usize, wo: usize, img: &mut [T]) {
    let k = g.k;
    let npos = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * npos..(row + 1) * npos];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            img[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grad_enabled: true,
            params: HashMap::new(),
            grads: HashMap::new(),
            backward_done: false,
        }
    }

    /// A graph that records no backward caches; [`Graph::backward`] fails.
    pub fn inference() -> Self {
        Graph { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, id: NodeId) -> Result<&Node<T>> {
        if id.graph != self.id || id.index >= self.nodes.len() {
            return Err(NumericsError::NotEvaluated(id.index));
        }
        Ok(&self.nodes[id.index])
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.node(id).expect("node belongs to this graph").value
    }

    pub fn try_value(&self, id: NodeId) -> Result<&Tensor<T>> {
        Ok(&self.node(id)?.value)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn next_index(&self) -> usize {
        self.nodes.len()
    }

    fn mismatch(&self, op: &'static str, detail: String) -> NumericsError {
        NumericsError::ShapeMismatch { node: self.next_index(), op, detail }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, parents: &[NodeId]) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite { node: self.next_index(), op: op.name() });
        }
        let needs_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.index].needs_grad);
        let op = if self.grad_enabled { op } else { strip_cache(op) };
        self.nodes.push(Node { op, value, needs_grad });
        self.backward_done = false;
        Ok(NodeId { graph: self.id, index: self.nodes.len() - 1 })
    }

    /// Data leaf; receives a gradient only if `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor<T>) -> NodeId {
        let needs_grad = self.grad_enabled && tensor.requires_grad();
        self.nodes.push(Node { op: Op::Leaf, value: tensor, needs_grad });
        NodeId { graph: self.id, index: self.nodes.len() - 1 }
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> NodeId {
        self.input(tensor.with_grad(false))
    }

    /// Trainable leaf bound to a named parameter; repeated calls share a node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<NodeId> {
        let pid = store.id(name)?;
        if let Some(&n) = self.params.get(&pid) {
            return Ok(n);
        }
        let t = store.get(pid).clone().with_grad(true);
        let n = self.input(t);
        self.params.insert(pid, n);
        Ok(n)
    }

    // ---- elementwise -------------------------------------------------------

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(self.mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, op: Op<T>, a: NodeId, b: NodeId, f: impl Fn(T, T) -> T) -> Result<NodeId> {
        self.same_shape(op.name(), a, b)?;
        let va = &self.nodes[a.index].value;
        let vb = &self.nodes[b.index].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(op, out, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let c = T::of(c);
        let out = self.node(a)?.value.map(|v| v * c);
        self.push(Op::Scale(a, c), out, &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.node(a)?.value.map(|v| gelu_parts(v).0);
        self.push(Op::Gelu(a), out, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.node(a)?.value.map(|v| v.exp());
        self.push(Op::Exp(a), out, &[a])
    }

    /// `x[.., n] + b[n]` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (_, n) = rows_cols(self.node(x)?.value.shape());
        let bs = self.node(b)?.value.shape();
        if bs.iter().product::<usize>() != n {
            return Err(self.mismatch("add_bias", format!("bias {bs:?} for {n} columns")));
        }
        let bv = self.nodes[b.index].value.data().to_vec();
        let vx = &self.nodes[x.index].value;
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (o, &bb) in row.iter_mut().zip(&bv) {
                *o += bb;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(Op::AddBias(x, b), out, &[x, b])
    }

    // ---- linear algebra ----------------------------------------------------

    fn matmul_value(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Tensor<T>> {
        let sa = self.node(a)?.value.shape();
        let sb = self.node(b)?.value.shape();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch(op, format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            T::one(),
            self.nodes[a.index].value.data(),
            View::rows(0, k),
            self.nodes[b.index].value.data(),
            View::rows(0, n),
            T::zero(),
            &mut out,
            View::rows(0, n),
        );
        Tensor::new(vec![m, n], out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.matmul_value("matmul", a, b)?;
        self.push(Op::MatMul(a, b), out, &[a, b])
    }

    /// Affine projection `x[m,k] · w[k,n] + b[n]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let mut out = self.matmul_value("linear", x, w)?;
        let n = out.shape()[1];
        if let Some(b) = b {
            let bv = self.node(b)?.value.data();
            if bv.len() != n {
                return Err(self.mismatch("linear", format!("bias of {} for {n} outputs", bv.len())));
            }
            for row in out.data_mut().chunks_mut(n.max(1)) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let parents: Vec<NodeId> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Op::Linear { x, w, b }, out, &parents)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.node(a)?.value.shape().to_vec();
        if s.len() != 2 {
            return Err(self.mismatch("transpose", format!("rank {} input", s.len())));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.nodes[a.index].value.data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], data)?;
        self.push(Op::Transpose(a), out, &[a])
    }

    // ---- normalisation -----------------------------------------------------

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (rows, d) = rows_cols(self.node(x)?.value.shape());
        let (gl, bl) = (self.node(gamma)?.value.numel(), self.node(beta)?.value.numel());
        if gl != d || bl != d {
            return Err(self.mismatch("layer_norm", format!("gamma {gl} / beta {bl} for width {d}")));
        }
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let xv = self.nodes[x.index].value.data();
        let g = self.nodes[gamma.index].value.data();
        let b = self.nodes[beta.index].value.data();
        let mut out = vec![T::zero(); rows * d];
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(self.nodes[x.index].value.shape().to_vec(), out)?;
        self.push(Op::LayerNorm { x, gamma, beta, xhat, rstd }, out, &[x, gamma, beta])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.node(a)?.value;
        let (_, n) = rows_cols(v.shape());
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::Softmax(a), out, &[a])
    }

    // ---- attention ---------------------------------------------------------

    /// Multi-head scaled dot-product attention over `[rows, d_model]` inputs.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, spec: AttnSpec) -> Result<NodeId> {
        let sq = self.node(q)?.value.shape().to_vec();
        let sk = self.node(k)?.value.shape().to_vec();
        let sv = self.node(v)?.value.shape().to_vec();
        let bad = |d: String| NumericsError::ShapeMismatch { node: self.nodes.len(), op: "attention", detail: d };
        if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 {
            return Err(bad(format!("q {sq:?} k {sk:?} v {sv:?} must be rank 2")));
        }
        let (lq, d) = (sq[0], sq[1]);
        let lk = sk[0];
        if sk[1] != d || sv != sk {
            return Err(bad(format!("q {sq:?} k {sk:?} v {sv:?}")));
        }
        let AttnSpec { heads, groups, mask } = spec;
        if heads == 0 || d % heads != 0 {
            return Err(bad(format!("{heads} heads do not divide width {d}")));
        }
        if groups == 0 || lq % groups != 0 || lk % groups != 0 {
            return Err(bad(format!("{groups} groups do not divide {lq}/{lk} rows")));
        }
        if groups > 1 && mask != AttnMask::Full {
            return Err(bad("causal masks require a single group".into()));
        }
        let (gq, gk, dh) = (lq / groups, lk / groups, d / heads);
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let qd = self.nodes[q.index].value.data();
        let kd = self.nodes[k.index].value.data();
        let vd = self.nodes[v.index].value.data();
        let mut out = vec![T::zero(); lq * d];
        let mut probs = vec![T::zero(); groups * heads * gq * gk];
        for g in 0..groups {
            for h in 0..heads {
                let p = &mut probs[(g * heads + h) * gq * gk..(g * heads + h + 1) * gq * gk];
                gemm(
                    gq,
                    dh,
                    gk,
                    scale,
                    qd,
                    View::rows(g * gq * d + h * dh, d),
                    kd,
                    View::cols(g * gk * d + h * dh, d),
                    T::zero(),
                    p,
                    View::rows(0, gk),
                );
                for i in 0..gq {
                    let row = &mut p[i * gk..(i + 1) * gk];
                    if let AttnMask::Causal { prefix, q_offset } = mask {
                        let limit = (q_offset + i + 1).max(prefix);
                        for (j, s) in row.iter_mut().enumerate() {
                            if j >= limit {
                                *s = T::neg_infinity();
                            }
                        }
                    }
                    softmax_in_place(row);
                }
                gemm(
                    gq,
                    gk,
                    dh,
                    T::one(),
                    p,
                    View::rows(0, gk),
                    vd,
                    View::rows(g * gk * d + h * dh, d),
                    T::zero(),
                    &mut out,
                    View::rows(g * gq * d + h * dh, d),
                );
            }
        }
        let out = Tensor::new(vec![lq, d], out)?;
        self.push(Op::Attention { q, k, v, spec, probs }, out, &[q, k, v])
    }

    // ---- convolution -------------------------------------------------------

    /// 2D convolution of one `[c_in, h, w]` image with `[c_out, c_in, k, k]` weights.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let sx = self.node(x)?.value.shape().to_vec();
        let sw = self.node(w)?.value.shape().to_vec();
        let sb = self.node(b)?.value.shape().to_vec();
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] || sb != [sw[0]] || stride == 0 {
            return Err(self.mismatch("conv2d", format!("x {sx:?} w {sw:?} b {sb:?}")));
        }
        let (cin, h, wd) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(self.mismatch("conv2d", format!("kernel {k} larger than padded input {h}x{wd}")));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { cin, cout, h, w: wd, ho, wo, k, stride, pad };
        let cols = im2col(self.nodes[x.index].value.data(), &geom, cin, h, wd, ho, wo);
        let npos = ho * wo;
        let ckk = cin * k * k;
        let mut out = vec![T::zero(); cout * npos];
        let bv = self.nodes[b.index].value.data();
        for co in 0..cout {
            out[co * npos..(co + 1) * npos].iter_mut().for_each(|o| *o = bv[co]);
        }
        gemm(
            cout,
            ckk,
            npos,
            T::one(),
            self.nodes[w.index].value.data(),
            View::rows(0, ckk),
            &cols,
            View::rows(0, npos),
            T::one(),
            &mut out,
            View::rows(0, npos),
        );
        let out = Tensor::new(vec![cout, ho, wo], out)?;
        self.push(Op::Conv2d { x, w, b, geom, cols }, out, &[x, w, b])
    }

    /// Transposed convolution of `[c_in, h, w]` with `[c_in, c_out, k, k]` weights.
    pub fn conv_transpose2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let sx = self.node(x)?.value.shape().to_vec();
        let sw = self.node(w)?.value.shape().to_vec();
        let sb = self.node(b)?.value.shape().to_vec();
        if sx.len() != 3 || sw.len() != 4 || sw[0] != sx[0] || sw[2] != sw[3] || sb != [sw[1]] || stride == 0 {
            return Err(self.mismatch("conv_transpose2d", format!("x {sx:?} w {sw:?} b {sb:?}")));
        }
        let (cin, h, wd) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[1], sw[2]);
        if (h - 1) * stride + k < 2 * pad + 1 {
            return Err(self.mismatch("conv_transpose2d", "padding exceeds output".into()));
        }
        let ho = (h - 1) * stride + k - 2 * pad;
        let wo = (wd - 1) * stride + k - 2 * pad;
        let geom = ConvGeom { cin, cout, h, w: wd, ho, wo, k, stride, pad };
        let ckk = cout * k * k;
        let hw = h * wd;
        let mut cols = vec![T::zero(); ckk * hw];
        gemm(
            ckk,
            cin,
            hw,
            T::one(),
            self.nodes[w.index].value.data(),
            View::cols(0, ckk),
            self.nodes[x.index].value.data(),
            View::rows(0, hw),
            T::zero(),
            &mut cols,
            View::rows(0, hw),
        );
        let mut out = vec![T::zero(); cout * ho * wo];
        col2im(&cols, &geom, cout, ho, wo, h, wd, &mut out);
        let bv = self.nodes[b.index].value.data();
        for co in 0..cout {
            out[co * ho * wo..(co + 1) * ho * wo].iter_mut().for_each(|o| *o += bv[co]);
        }
        let out = Tensor::new(vec![cout, ho, wo], out)?;
        self.push(Op::ConvTranspose2d { x, w, b, geom }, out, &[x, w, b])
    }

    // ---- reductions and losses ---------------------------------------------

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.node(a)?.value.data().iter().copied().sum::<T>();
        self.push(Op::Sum(a), Tensor::scalar(s), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.node(a)?.value;
        if v.numel() == 0 {
            return Err(self.mismatch("mean", "empty input".into()));
        }
        let s = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        self.push(Op::Mean(a), Tensor::scalar(s), &[a])
    }

    /// `mean((a - b)^2)` over all elements.
    pub fn mean_square(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.node(a)?.value, &self.node(b)?.value);
        if va.numel() != vb.numel() || va.numel() == 0 {
            return Err(self.mismatch("mean_square", format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let s = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / T::of(va.numel() as f64);
        self.push(Op::MeanSquare(a, b), Tensor::scalar(s), &[a, b])
    }

    /// Token-mean cross-entropy of `[n, vocab]` logits against class ids.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let v = &self.node(logits)?.value;
        let (n, classes) = rows_cols(v.shape());
        if v.ndim() != 2 || n != targets.len() || n == 0 {
            return Err(self.mismatch("cross_entropy", format!("logits {:?} for {} targets", v.shape(), targets.len())));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
            return Err(self.mismatch("cross_entropy", format!("target {t} out of {classes} classes")));
        }
        let mut probs = v.data().to_vec();
        let mut loss = T::zero();
        for (r, row) in probs.chunks_mut(classes).enumerate() {
            softmax_in_place(row);
            loss -= row[targets[r]].max(T::min_positive_value()).ln();
        }
        loss = loss / T::of(n as f64);
        self.push(Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, Tensor::scalar(loss), &[logits])
    }

    // ---- shape manipulation ------------------------------------------------

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.node(a)?.value.clone();
        let from = v.shape().to_vec();
        let out = v.reshape(shape).map_err(|_| self.mismatch("reshape", format!("{from:?} into {shape:?}")))?;
        self.push(Op::Reshape(a), out, &[a])
    }

    /// Concatenate rank-2 tensors along rows.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut vals = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = &self.node(p)?.value;
            if v.ndim() != 2 {
                return Err(self.mismatch("concat_rows", format!("rank {} part", v.ndim())));
            }
            vals.push(v.clone());
        }
        let out = Tensor::stack_outer(&vals).map_err(|e| self.mismatch("concat_rows", e.to_string()))?;
        self.push(Op::ConcatRows(parts.to_vec()), out, parts)
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let out =
            self.node(a)?.value.slice_outer(start, len).map_err(|e| self.mismatch("slice_rows", e.to_string()))?;
        self.push(Op::SliceRows { x: a, start }, out, &[a])
    }

    /// Rows of a `[r, c]` table picked by index (embedding lookup, permutation).
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let v = &self.node(a)?.value;
        if v.ndim() != 2 {
            return Err(self.mismatch("gather_rows", format!("rank {} table", v.ndim())));
        }
        let (r, c) = (v.shape()[0], v.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(self.mismatch("gather_rows", format!("row {bad} out of {r}")));
        }
        let src = v.data();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![idx.len(), c], data)?;
        self.push(Op::GatherRows { x: a, idx: idx.to_vec() }, out, &[a])
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let numel = self.node(loss)?.value.numel();
        if !self.grad_enabled {
            return Err(NumericsError::GradDisabled);
        }
        if numel != 1 {
            return Err(NumericsError::NonScalarLoss(self.nodes[loss.index].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(vec![T::one()]);
        self.grads.clear();
        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads.insert(i, g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        self.backward_done = true;
        Ok(())
    }

    /// Gradient of a leaf after [`Graph::backward`]; zeros if unreached.
    pub fn grad(&self, id: NodeId) -> Option<Vec<T>> {
        let node = self.node(id).ok()?;
        if !self.backward_done || !node.needs_grad || !matches!(node.op, Op::Leaf) {
            return None;
        }
        Some(self.grads.get(&id.index).cloned().unwrap_or_else(|| vec![T::zero(); node.value.numel()]))
    }

    /// Gradients of every parameter bound into this graph.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<T>)> {
        let mut out: Vec<(ParamId, Vec<T>)> =
            self.params.iter().filter_map(|(&pid, &nid)| self.grad(nid).map(|g| (pid, g))).collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }

    pub fn param_node(&self, pid: ParamId) -> Option<NodeId> {
        self.params.get(&pid).copied()
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let want = |id: NodeId| nodes[id.index].needs_grad;
        macro_rules! buf {
            ($id:expr) => {
                grad_slot(grads, nodes, $id)
            };
        }
        let val = |id: NodeId| nodes[id.index].value.data();
        let shape = |id: NodeId| nodes[id.index].value.shape();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(gb) = buf!(*b) {
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(gb) = buf!(*b) {
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if let Some(ga) = buf!(*a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * vb[j];
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for j in 0..g.len() {
                        gb[j] += g[j] * va[j];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *c);
                }
            }
            Op::AddBias(x, b) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(gb) = buf!(*b) {
                    let n = gb.len();
                    for row in g.chunks(n.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::MatMul(a, b) | Op::Linear { x: a, w: b, .. } => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                if want(*a) {
                    let ga = buf!(*a).unwrap();
                    gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        View::rows(0, n),
                        val(*b),
                        View::cols(0, n),
                        T::one(),
                        ga,
                        View::rows(0, k),
                    );
                }
                if want(*b) {
                    let gb = buf!(*b).unwrap();
                    gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        val(*a),
                        View::cols(0, k),
                        g,
                        View::rows(0, n),
                        T::one(),
                        gb,
                        View::rows(0, n),
                    );
                }
                if let Op::Linear { b: Some(bias), .. } = &nodes[i].op {
                    if let Some(gb) = buf!(*bias) {
                        for row in g.chunks(n.max(1)) {
                            gb.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (shape(*a)[0], shape(*a)[1]);
                if let Some(ga) = buf!(*a) {
                    for ii in 0..r {
                        for jj in 0..c {
                            ga[ii * c + jj] += g[jj * r + ii];
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = shape(*gamma).iter().product::<usize>();
                let rows = rstd.len();
                let gv = val(*gamma);
                if let Some(ggam) = buf!(*gamma) {
                    for r in 0..rows {
                        for j in 0..d {
                            ggam[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gbeta) = buf!(*beta) {
                    for r in 0..rows {
                        for j in 0..d {
                            gbeta[j] += g[r * d + j];
                        }
                    }
                }
                if let Some(gx) = buf!(*x) {
                    let dn = T::of(d as f64);
                    for r in 0..rows {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dxh = g[r * d + j] * gv[j];
                            m1 += dxh;
                            m2 += dxh * xhat[r * d + j];
                        }
                        m1 = m1 / dn;
                        m2 = m2 / dn;
                        for j in 0..d {
                            let dxh = g[r * d + j] * gv[j];
                            gx[r * d + j] += rstd[r] * (dxh - m1 - xhat[r * d + j] * m2);
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let y = nodes[i].value.data();
                let (_, n) = rows_cols(nodes[i].value.shape());
                if let Some(ga) = buf!(*a) {
                    for (r, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..n {
                            ga[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, spec, probs } => {
                let (lq, d) = (shape(*q)[0], shape(*q)[1]);
                let lk = shape(*k)[0];
                let (heads, groups) = (spec.heads, spec.groups);
                let (gq, gk, dh) = (lq / groups, lk / groups, d / heads);
                let scale = T::of(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                let mut dq = want(*q).then(|| vec![T::zero(); lq * d]);
                let mut dk = want(*k).then(|| vec![T::zero(); lk * d]);
                let mut dv = want(*v).then(|| vec![T::zero(); lk * d]);
                let mut dp = vec![T::zero(); gq * gk];
                for gi in 0..groups {
                    for h in 0..heads {
                        let p = &probs[(gi * heads + h) * gq * gk..(gi * heads + h + 1) * gq * gk];
                        let qo = gi * gq * d + h * dh;
                        let ko = gi * gk * d + h * dh;
                        if let Some(dv) = dv.as_mut() {
                            gemm(
                                gk,
                                gq,
                                dh,
                                T::one(),
                                p,
                                View::cols(0, gk),
                                g,
                                View::rows(qo, d),
                                T::one(),
                                dv,
                                View::rows(ko, d),
                            );
                        }
                        if dq.is_none() && dk.is_none() {
                            continue;
                        }
                        gemm(
                            gq,
                            dh,
                            gk,
                            T::one(),
                            g,
                            View::rows(qo, d),
                            vd,
                            View::cols(ko, d),
                            T::zero(),
                            &mut dp,
                            View::rows(0, gk),
                        );
                        for r in 0..gq {
                            let pr = &p[r * gk..(r + 1) * gk];
                            let dr = &mut dp[r * gk..(r + 1) * gk];
                            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                            for j in 0..gk {
                                dr[j] = pr[j] * (dr[j] - dot);
                            }
                        }
                        if let Some(dq) = dq.as_mut() {
                            gemm(
                                gq,
                                gk,
                                dh,
                                scale,
                                &dp,
                                View::rows(0, gk),
                                kd,
                                View::rows(ko, d),
                                T::one(),
                                dq,
                                View::rows(qo, d),
                            );
                        }
                        if let Some(dk) = dk.as_mut() {
                            gemm(
                                gk,
                                gq,
                                dh,
                                scale,
                                &dp,
                                View::cols(0, gk),
                                qd,
                                View::rows(qo, d),
                                T::one(),
                                dk,
                                View::rows(ko, d),
                            );
                        }
                    }
                }
                for (id, part) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let (Some(part), Some(buf)) = (part, buf!(id)) {
                        buf.iter_mut().zip(&part).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let ConvGeom { cin, cout, h, w: wd, ho, wo, k, .. } = *geom;
                let npos = ho * wo;
                let ckk = cin * k * k;
                if let Some(gb) = buf!(*b) {
                    for co in 0..cout {
                        gb[co] += g[co * npos..(co + 1) * npos].iter().copied().sum::<T>();
                    }
                }
                if let Some(gw) = buf!(*w) {
                    gemm(
                        cout,
                        npos,
                        ckk,
                        T::one(),
                        g,
                        View::rows(0, npos),
                        cols,
                        View::cols(0, npos),
                        T::one(),
                        gw,
                        View::rows(0, ckk),
                    );
                }
                if want(*x) {
                    let mut dcols = vec![T::zero(); ckk * npos];
                    gemm(
                        ckk,
                        cout,
                        npos,
                        T::one(),
                        val(*w),
                        View::cols(0, ckk),
                        g,
                        View::rows(0, npos),
                        T::zero(),
                        &mut dcols,
                        View::rows(0, npos),
                    );
                    let gx = buf!(*x).unwrap();
                    col2im(&dcols, geom, cin, h, wd, ho, wo, gx);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let ConvGeom { cin, cout, h, w: wd, ho, wo, k, .. } = *geom;
                let hw = h * wd;
                let ckk = cout * k * k;
                if let Some(gb) = buf!(*b) {
                    for co in 0..cout {
                        gb[co] += g[co * ho * wo..(co + 1) * ho * wo].iter().copied().sum::<T>();
                    }
                }
                if want(*x) || want(*w) {
                    let dcols = im2col(g, geom, cout, ho, wo, h, wd);
                    if let Some(gx) = buf!(*x) {
                        gemm(
                            cin,
                            ckk,
                            hw,
                            T::one(),
                            val(*w),
                            View::rows(0, ckk),
                            &dcols,
                            View::rows(0, hw),
                            T::one(),
                            gx,
                            View::rows(0, hw),
                        );
                    }
                    if let Some(gw) = buf!(*w) {
                        gemm(
                            cin,
                            hw,
                            ckk,
                            T::one(),
                            val(*x),
                            View::rows(0, hw),
                            &dcols,
                            View::cols(0, hw),
                            T::one(),
                            gw,
                            View::rows(0, ckk),
                        );
                    }
                }
            }
            Op::Gelu(a) => {
                let va = val(*a);
                if let Some(ga) = buf!(*a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * gelu_parts(va[j]).1;
                    }
                }
            }
            Op::Exp(a) => {
                let y = nodes[i].value.data();
                if let Some(ga) = buf!(*a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * y[j];
                    }
                }
            }
            Op::MeanSquare(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let c = g[0] * T::of(2.0 / va.len() as f64);
                if let Some(ga) = buf!(*a) {
                    for j in 0..va.len() {
                        ga[j] += c * (va[j] - vb[j]);
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for j in 0..va.len() {
                        gb[j] -= c * (va[j] - vb[j]);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = targets.len();
                let classes = probs.len() / n;
                let c = g[0] / T::of(n as f64);
                if let Some(gl) = buf!(*logits) {
                    for r in 0..n {
                        for j in 0..classes {
                            let onehot = if j == targets[r] { T::one() } else { T::zero() };
                            gl[r * classes + j] += c * (probs[r * classes + j] - onehot);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = buf!(*a) {
                    let c = g[0] / T::of(ga.len() as f64);
                    ga.iter_mut().for_each(|x| *x += c);
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = buf!(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.index].value.numel();
                    if let Some(gp) = buf!(p) {
                        gp.iter_mut().zip(&g[off..off + len]).for_each(|(x, &y)| *x += y);
                    }
                    off += len;
                }
            }
            Op::SliceRows { x, start } => {
                let inner: usize = shape(*x).iter().skip(1).product();
                if let Some(gx) = buf!(*x) {
                    gx[start * inner..start * inner + g.len()].iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::GatherRows { x, idx } => {
                let c = shape(*x)[1];
                if let Some(gx) = buf!(*x) {
                    for (r, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            gx[src * c + j] += g[r * c + j];
                        }
                    }
                }
            }
        }
    }
}

fn grad_slot<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], id: NodeId) -> Option<&'a mut Vec<T>> {
    let node = &nodes[id.index];
    if !node.needs_grad {
        return None;
    }
    Some(grads[id.index].get_or_insert_with(|| vec![T::zero(); node.value.numel()]))
}

fn strip_cache<T>(op: Op<T>) -> Op<T> {
    match op {
        Op::Attention { q, k, v, spec, .. } => Op::Attention { q, k, v, spec, probs: Vec::new() },
        Op::Conv2d { x, w, b, geom, .. } => Op::Conv2d { x, w, b, geom, cols: Vec::new() },
        Op::LayerNorm { x, gamma, beta, .. } => Op::LayerNorm { x, gamma, beta, xhat: Vec::new(), rstd: Vec::new() },
        Op::CrossEntropy { logits, targets, .. } => Op::CrossEntropy { logits, targets, probs: Vec::new() },
        other => other,
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

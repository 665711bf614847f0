//! Reverse-mode differentiation over dense `f64` buffers.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are stored
//! in creation order, which is already a topological order, so the backward
//! sweep simply walks the list in reverse. Parameters are read from a flat
//! vector by offset, and their gradients are scattered back into a flat
//! buffer of the same length.

use std::sync::Arc;

use crate::geom::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// A differentiable 2D field that can be sampled bilinearly.
pub trait FieldSampler: Send + Sync {
    fn channels(&self) -> usize;

    /// Writes the field value at `p` into `out` and its partial derivatives
    /// with respect to `p.x` / `p.y` into `dx` / `dy`.
    fn sample(&self, p: Point2, out: &mut [f64], dx: &mut [f64], dy: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
    Abs,
    Square,
    Recip,
}

enum Op {
    Leaf,
    Param {
        offset: usize,
    },
    /// `Y[r×m] = X[r×n] · W[m×n]ᵀ + b[m]`
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    /// `y[n] = A[r×n]ᵀ · x[r]`
    MatTVec {
        a: NodeId,
        x: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    ScaleBy {
        v: NodeId,
        s: NodeId,
    },
    Unary(NodeId, Unary),
    Softmax(NodeId),
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Reshape(NodeId),
    Sum(NodeId),
    RowSum(NodeId),
    Cumsum2(NodeId),
    PointNorm(NodeId),
    Bilinear {
        pts: NodeId,
        dx: Vec<f64>,
        dy: Vec<f64>,
    },
    PpoClip {
        ratio: NodeId,
        adv: Vec<f64>,
        eps: f64,
    },
}

struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    detached: Vec<NodeId>,
    pins: std::collections::VecDeque<Vec<f64>>,
}

/// Node gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// A graph whose `detach` calls return `pins`, in order, instead of the
    /// current values. Finite differences through such a graph see the same
    /// function the tape differentiates.
    pub fn pinned(pins: Vec<Vec<f64>>) -> Self {
        Graph { pins: pins.into(), ..Graph::default() }
    }

    /// Values of every detached node, in recording order.
    pub fn detached_values(&self) -> Vec<Vec<f64>> {
        self.detached.iter().map(|&id| self.node(id).value.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = self.node(id);
        (n.rows, n.cols)
    }

    pub fn size(&self, id: NodeId) -> usize {
        self.node(id).value.len()
    }

    fn ng(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.node(*id).needs_grad)
    }

    /// A constant; gradients never flow into it.
    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        let n = value.len();
        self.push(value, 1, n, Op::Leaf, false)
    }

    pub fn constant_matrix(&mut self, value: Vec<f64>, rows: usize, cols: usize) -> NodeId {
        assert_eq!(value.len(), rows * cols, "constant matrix shape");
        self.push(value, rows, cols, Op::Leaf, false)
    }

    /// An input whose gradient is tracked.
    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        let n = value.len();
        self.push(value, 1, n, Op::Leaf, true)
    }

    /// Reads `rows·cols` parameters starting at `offset`.
    pub fn param(&mut self, params: &[f64], offset: usize, rows: usize, cols: usize) -> NodeId {
        let value = params[offset..offset + rows * cols].to_vec();
        self.push(value, rows, cols, Op::Param { offset }, true)
    }

    /// Copy of `x` that stops gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let n = self.node(x);
        let (mut v, r, c) = (n.value.clone(), n.rows, n.cols);
        if let Some(p) = self.pins.pop_front() {
            assert_eq!(p.len(), v.len(), "detach: pinned value length");
            v = p;
        }
        let id = self.push(v, r, c, Op::Leaf, false);
        self.detached.push(id);
        id
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let (xr, xc) = self.shape(x);
        let (wr, wc) = self.shape(w);
        assert_eq!(xc, wc, "affine: input width {xc} vs weight width {wc}");
        if let Some(b) = b {
            assert_eq!(self.size(b), wr, "affine bias length");
        }
        let xv = &self.node(x).value;
        let wv = &self.node(w).value;
        let mut out = vec![0.0; xr * wr];
        for r in 0..xr {
            let xrow = &xv[r * xc..(r + 1) * xc];
            let orow = &mut out[r * wr..(r + 1) * wr];
            for (o, slot) in orow.iter_mut().enumerate() {
                let wrow = &wv[o * wc..(o + 1) * wc];
                *slot = dot(xrow, wrow);
            }
            if let Some(b) = b {
                for (slot, bv) in orow.iter_mut().zip(&self.node(b).value) {
                    *slot += bv;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        self.push(out, xr, wr, Op::Affine { x, w, b }, ng)
    }

    pub fn mat_t_vec(&mut self, a: NodeId, x: NodeId) -> NodeId {
        let (ar, ac) = self.shape(a);
        assert_eq!(self.size(x), ar, "mat_t_vec length");
        let av = &self.node(a).value;
        let xv = &self.node(x).value;
        let mut out = vec![0.0; ac];
        for r in 0..ar {
            let s = xv[r];
            if s == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(&av[r * ac..(r + 1) * ac]) {
                *o += a * s;
            }
        }
        let ng = self.ng(&[a, x]);
        self.push(out, 1, ac, Op::MatTVec { a, x }, ng)
    }

    fn zip_op(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        assert_eq!(self.size(a), self.size(b), "elementwise size mismatch");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let ng = self.ng(&[a, b]);
        self.push(out, r, c, op, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_op(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_op(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip_op(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let (r, cc) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * c).collect();
        let ng = self.ng(&[a]);
        self.push(out, r, cc, Op::Scale(a, c), ng)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: NodeId, c: f64) -> NodeId {
        let (r, cc) = self.shape(a);
        let out = self.value(a).iter().map(|x| x + c).collect();
        let ng = self.ng(&[a]);
        self.push(out, r, cc, Op::Shift(a), ng)
    }

    /// Vector times a one-element node.
    pub fn scale_by(&mut self, v: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.size(s), 1, "scale_by expects a scalar node");
        let sv = self.scalar(s);
        let (r, c) = self.shape(v);
        let out = self.value(v).iter().map(|x| x * sv).collect();
        let ng = self.ng(&[v, s]);
        self.push(out, r, c, Op::ScaleBy { v, s }, ng)
    }

    pub fn unary(&mut self, a: NodeId, kind: Unary) -> NodeId {
        let (r, c) = self.shape(a);
        let f: fn(f64) -> f64 = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Relu => |x| x.max(0.0),
            Unary::Softplus => softplus,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Abs => f64::abs,
            Unary::Square => |x| x * x,
            Unary::Recip => |x| 1.0 / x,
        };
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(&[a]);
        self.push(out, r, c, Op::Unary(a, kind), ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Tanh)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Log)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Abs)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Square)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Unary::Recip)
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let out = softmax(self.value(a));
        let n = out.len();
        let ng = self.ng(&[a]);
        self.push(out, 1, n, Op::Softmax(a), ng)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        let n = out.len();
        let ng = self.ng(parts);
        self.push(out, 1, n, Op::Concat(parts.to_vec()), ng)
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let out = self.value(x)[start..start + len].to_vec();
        let ng = self.ng(&[x]);
        self.push(out, 1, len, Op::Slice { x, start }, ng)
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.size(x), rows * cols, "reshape size");
        let out = self.value(x).to_vec();
        let ng = self.ng(&[x]);
        self.push(out, rows, cols, Op::Reshape(x), ng)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).iter().sum();
        let ng = self.ng(&[x]);
        self.push(vec![s], 1, 1, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.size(x) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sums each row of an `r×c` node into an `r`-vector.
    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.shape(x);
        let v = self.value(x);
        let out = (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect();
        let ng = self.ng(&[x]);
        self.push(out, 1, r, Op::RowSum(x), ng)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let m = self.mul(a, b);
        self.sum(m)
    }

    /// Running sums over interleaved `[x0, y0, x1, y1, ...]` points.
    pub fn cumsum2(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.len() % 2, 0, "cumsum2 expects interleaved points");
        let mut out = v.to_vec();
        for i in 2..out.len() {
            out[i] += out[i - 2];
        }
        let n = out.len();
        let ng = self.ng(&[x]);
        self.push(out, 1, n, Op::Cumsum2(x), ng)
    }

    /// Euclidean norm of each interleaved point.
    pub fn point_norm(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.len() % 2, 0, "point_norm expects interleaved points");
        let out: Vec<f64> = v.chunks(2).map(|c| c[0].hypot(c[1])).collect();
        let n = out.len();
        let ng = self.ng(&[x]);
        self.push(out, 1, n, Op::PointNorm(x), ng)
    }

    /// Samples `field` at each interleaved point; output is `P×C`.
    pub fn bilinear(&mut self, field: Arc<dyn FieldSampler>, pts: NodeId) -> NodeId {
        let c = field.channels();
        let v = self.value(pts).to_vec();
        assert_eq!(v.len() % 2, 0, "bilinear expects interleaved points");
        let p = v.len() / 2;
        let mut out = vec![0.0; p * c];
        let mut dx = vec![0.0; p * c];
        let mut dy = vec![0.0; p * c];
        for k in 0..p {
            let span = k * c..(k + 1) * c;
            field.sample(
                Point2::new(v[2 * k], v[2 * k + 1]),
                &mut out[span.clone()],
                &mut dx[span.clone()],
                &mut dy[span],
            );
        }
        let ng = self.ng(&[pts]);
        self.push(out, p, c, Op::Bilinear { pts, dx, dy }, ng)
    }

    /// Elementwise `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
    pub fn ppo_clip(&mut self, ratio: NodeId, adv: &[f64], eps: f64) -> NodeId {
        assert_eq!(self.size(ratio), adv.len(), "ppo_clip length");
        let out =
            self.value(ratio).iter().zip(adv).map(|(&r, &a)| (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a)).collect();
        let n = adv.len();
        let ng = self.ng(&[ratio]);
        self.push(out, 1, n, Op::PpoClip { ratio, adv: adv.to_vec(), eps }, ng)
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[NodeId]) -> NodeId {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Backward sweep from `out`, seeded with `seed` (same length as `out`).
    /// Parameter gradients accumulate into `param_grads`.
    pub fn backward(&self, out: NodeId, seed: &[f64], param_grads: &mut [f64]) -> Gradients {
        assert_eq!(seed.len(), self.size(out), "seed length");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed.to_vec());

        for idx in (0..=out.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(gy);
                continue;
            }
            self.backprop_node(node, &gy, &mut grads, param_grads);
            grads[idx] = Some(gy);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>], param_grads: &mut [f64]) {
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[id.0];
            if !n.needs_grad {
                return;
            }
            let slot = grads[id.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param { offset } => {
                for (p, g) in param_grads[*offset..*offset + gy.len()].iter_mut().zip(gy) {
                    *p += g;
                }
            }
            Op::Affine { x, w, b } => {
                let (xr, xc) = self.shape(*x);
                let (wr, wc) = self.shape(*w);
                let xv = self.value(*x);
                let wv = self.value(*w);
                acc(*x, &mut |gx| {
                    for r in 0..xr {
                        let grow = &gy[r * wr..(r + 1) * wr];
                        let gxrow = &mut gx[r * xc..(r + 1) * xc];
                        for (o, &g) in grow.iter().enumerate() {
                            if g != 0.0 {
                                axpy(gxrow, g, &wv[o * wc..(o + 1) * wc]);
                            }
                        }
                    }
                });
                acc(*w, &mut |gw| {
                    for r in 0..xr {
                        let xrow = &xv[r * xc..(r + 1) * xc];
                        for o in 0..wr {
                            let g = gy[r * wr + o];
                            if g != 0.0 {
                                axpy(&mut gw[o * wc..(o + 1) * wc], g, xrow);
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |gb| {
                        for r in 0..xr {
                            for (s, g) in gb.iter_mut().zip(&gy[r * wr..(r + 1) * wr]) {
                                *s += g;
                            }
                        }
                    });
                }
            }
            Op::MatTVec { a, x } => {
                let (ar, ac) = self.shape(*a);
                let av = self.value(*a);
                let xv = self.value(*x);
                acc(*x, &mut |gx| {
                    for r in 0..ar {
                        gx[r] += dot(&av[r * ac..(r + 1) * ac], gy);
                    }
                });
                acc(*a, &mut |ga| {
                    for r in 0..ar {
                        axpy(&mut ga[r * ac..(r + 1) * ac], xv[r], gy);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, gy));
                acc(*b, &mut |g| axpy(g, -1.0, gy));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * bv[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |g| axpy(g, *c, gy)),
            Op::Shift(a) => acc(*a, &mut |g| add_into(g, gy)),
            Op::ScaleBy { v, s } => {
                let sv = self.scalar(*s);
                let vv = self.value(*v);
                acc(*v, &mut |g| axpy(g, sv, gy));
                acc(*s, &mut |g| g[0] += dot(vv, gy));
            }
            Op::Unary(a, kind) => {
                let xv = self.value(*a);
                let yv = &node.value;
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        let (x, y) = (xv[i], yv[i]);
                        let d = match kind {
                            Unary::Tanh => 1.0 - y * y,
                            Unary::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Softplus => sigmoid(x),
                            Unary::Exp => y,
                            Unary::Log => 1.0 / x,
                            Unary::Abs => {
                                if x > 0.0 {
                                    1.0
                                } else if x < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Square => 2.0 * x,
                            Unary::Recip => -y * y,
                        };
                        g[i] += gy[i] * d;
                    }
                });
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let s = dot(y, gy);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += y[i] * (gy[i] - s);
                    }
                });
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.size(*p);
                    let span = &gy[start..start + n];
                    acc(*p, &mut |g| add_into(g, span));
                    start += n;
                }
            }
            Op::Slice { x, start } => {
                let s = *start;
                acc(*x, &mut |g| add_into(&mut g[s..s + gy.len()], gy));
            }
            Op::Reshape(x) => acc(*x, &mut |g| add_into(g, gy)),
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|v| *v += gy[0])),
            Op::RowSum(x) => {
                let (r, c) = self.shape(*x);
                acc(*x, &mut |g| {
                    for i in 0..r {
                        g[i * c..(i + 1) * c].iter_mut().for_each(|v| *v += gy[i]);
                    }
                });
            }
            Op::Cumsum2(x) => {
                let mut suffix = gy.to_vec();
                for i in (0..suffix.len().saturating_sub(2)).rev() {
                    suffix[i] += suffix[i + 2];
                }
                acc(*x, &mut |g| add_into(g, &suffix));
            }
            Op::PointNorm(x) => {
                let xv = self.value(*x);
                let nv = &node.value;
                acc(*x, &mut |g| {
                    for k in 0..nv.len() {
                        if nv[k] > 0.0 {
                            g[2 * k] += gy[k] * xv[2 * k] / nv[k];
                            g[2 * k + 1] += gy[k] * xv[2 * k + 1] / nv[k];
                        }
                    }
                });
            }
            Op::Bilinear { pts, dx, dy, .. } => {
                let c = node.cols;
                acc(*pts, &mut |g| {
                    for k in 0..node.rows {
                        let span = k * c..(k + 1) * c;
                        g[2 * k] += dot(&gy[span.clone()], &dx[span.clone()]);
                        g[2 * k + 1] += dot(&gy[span.clone()], &dy[span]);
                    }
                });
            }
            Op::PpoClip { ratio, adv, eps } => {
                let rv = self.value(*ratio);
                acc(*ratio, &mut |g| {
                    for i in 0..g.len() {
                        let (r, a) = (rv[i], adv[i]);
                        let unclipped = r * a;
                        let clipped = r.clamp(1.0 - eps, 1.0 + eps) * a;
                        let inside = r > 1.0 - eps && r < 1.0 + eps;
                        let d = if unclipped <= clipped || inside { a } else { 0.0 };
                        g[i] += gy[i] * d;
                    }
                });
            }
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= s);
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn add_into(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

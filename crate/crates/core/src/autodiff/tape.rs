//! Append-only tape of tensor primitives with a reverse sweep.
//!
//! Every primitive checks its input shapes, evaluates eagerly and records
//! what the reverse sweep needs. Nodes are only ever appended, so the node
//! order is a topological order of the computation.

use super::kernels::{self, Trans};
use super::{AutodiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        cols: Option<Vec<f64>>,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Log(NodeId),
    ClampMin(NodeId, f64),
    Sum(NodeId),
    Concat(NodeId, NodeId),
    Reshape(NodeId),
    SelectCols(NodeId, Vec<usize>),
    NormalizeRows(NodeId),
    Factorize(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every node that requires a
/// gradient. Leaves the root does not reach hold zeros.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<(), AutodiffError> {
    if t.shape().len() != rank {
        return Err(AutodiffError::Rank {
            op,
            expected: rank,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn binary_same_shape(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(op, va, vb));
        }
        let out = va.zip_with(vb, f);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, make(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scalar_mul(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).map(|x| c * x);
        let rg = self.rg(&[a]);
        self.push(out, Op::ScalarMul(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        expect_rank("matmul", va, 2)?;
        expect_rank("matmul", vb, 2)?;
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        if vb.shape()[0] != k {
            return Err(mismatch("matmul", va, vb));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, va.data(), Trans::No, vb.data(), Trans::No, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`n` vector to every row of `x` (last axis `n`).
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, AutodiffError> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let n = vx.shape().last().copied().unwrap_or(0);
        if vb.shape() != [n] {
            return Err(mismatch("add_bias", vx, vb));
        }
        let mut out = vx.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    /// Valid cross-correlation, stride 1, no padding.
    /// `input [B, C, H, W]`, `weight [O, C, KH, KW]`, `bias [O]`
    /// gives `[B, O, H - KH + 1, W - KW + 1]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let (vi, vw, vb) = (self.value(input), self.value(weight), self.value(bias));
        expect_rank("conv2d", vi, 4)?;
        expect_rank("conv2d", vw, 4)?;
        let [b, c, h, w] = [vi.shape()[0], vi.shape()[1], vi.shape()[2], vi.shape()[3]];
        let [o, wc, kh, kw] = [vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]];
        if wc != c || vb.shape() != [o] {
            return Err(mismatch("conv2d", vi, vw));
        }
        if h < kh || w < kw {
            return Err(AutodiffError::Domain {
                op: "conv2d",
                msg: format!("input {h}x{w} smaller than kernel {kh}x{kw}"),
            });
        }
        let geom = kernels::ConvGeom { c, h, w, kh, kw };
        let (oh, ow) = (geom.oh(), geom.ow());
        let (ck, p) = (c * kh * kw, oh * ow);
        let rg = self.rg(&[input, weight, bias]);
        let keep_cols = rg;

        let mut out = vec![0.0; b * o * p];
        let mut cols_all = if keep_cols { vec![0.0; b * ck * p] } else { Vec::new() };
        let mut col = vec![0.0; ck * p];
        for bi in 0..b {
            let img = &vi.data()[bi * c * h * w..(bi + 1) * c * h * w];
            let col = if keep_cols {
                &mut cols_all[bi * ck * p..(bi + 1) * ck * p]
            } else {
                &mut col[..]
            };
            kernels::im2col(img, &geom, col);
            let dst = &mut out[bi * o * p..(bi + 1) * o * p];
            for (oi, row) in dst.chunks_mut(p).enumerate() {
                row.fill(vb.data()[oi]);
            }
            kernels::gemm(o, ck, p, vw.data(), Trans::No, col, Trans::No, dst, 1.0);
        }
        let value = Tensor::new(vec![b, o, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                cols: keep_cols.then_some(cols_all),
            },
            rg,
        ))
    }

    /// 2x2 max pooling with stride 2 over the last two axes of `[B, C, H, W]`.
    pub fn maxpool2x2(&mut self, input: NodeId) -> Result<NodeId, AutodiffError> {
        let vi = self.value(input);
        expect_rank("maxpool2x2", vi, 4)?;
        let [b, c, h, w] = [vi.shape()[0], vi.shape()[1], vi.shape()[2], vi.shape()[3]];
        if h % 2 != 0 || w % 2 != 0 {
            return Err(AutodiffError::Domain {
                op: "maxpool2x2",
                msg: format!("spatial size {h}x{w} is not even"),
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let src = vi.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = base + 2 * y * w + 2 * x;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * x + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(&[input]);
        let value = Tensor::new(vec![b, c, oh, ow], out)?;
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, rg))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let out = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        if let Some(&bad) = va.data().iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
            return Err(AutodiffError::Domain {
                op: "log",
                msg: format!("argument {bad} is not a positive finite number"),
            });
        }
        let out = va.map(f64::ln);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Log(a), rg))
    }

    /// `max(x, lo)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: NodeId, lo: f64) -> NodeId {
        let out = self.value(a).map(|x| x.max(lo));
        let rg = self.rg(&[a]);
        self.push(out, Op::ClampMin(a, lo), rg)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scalar_mul(s, 1.0 / n)
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(mismatch("concat", va, vb));
        }
        let (na, nb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for (ra, rb) in va.data().chunks(na.max(1)).zip(vb.data().chunks(nb.max(1))) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = na + nb;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(a, b), rg))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, AutodiffError> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Picks columns of a `[R, N]` matrix, giving `[R, cols.len()]`.
    pub fn select_cols(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        expect_rank("select_cols", va, 2)?;
        let (r, n) = (va.shape()[0], va.shape()[1]);
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(AutodiffError::Domain {
                op: "select_cols",
                msg: format!("column {bad} out of range for width {n}"),
            });
        }
        let mut out = Vec::with_capacity(r * cols.len());
        for row in va.data().chunks(n.max(1)) {
            out.extend(cols.iter().map(|&c| row[c]));
        }
        let rg = self.rg(&[a]);
        let value = Tensor::new(vec![r, cols.len()], out)?;
        Ok(self.push(value, Op::SelectCols(a, cols.to_vec()), rg))
    }

    /// Divides every row (last axis) by its sum; row sums must be positive.
    pub fn normalize_rows(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        let mut out = va.clone();
        let n = va.shape().last().copied().unwrap_or(1).max(1);
        for row in out.data_mut().chunks_mut(n) {
            let s: f64 = row.iter().sum();
            if !(s > 0.0) {
                return Err(AutodiffError::Domain {
                    op: "normalize_rows",
                    msg: format!("row sum {s} is not positive"),
                });
            }
            row.iter_mut().for_each(|x| *x /= s);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::NormalizeRows(a), rg))
    }

    /// Per-variable probabilities `[B, N]` to world probabilities
    /// `[B, 2^N]` under independence, with the big-endian world order of
    /// [`crate::logic::World`].
    pub fn factorize(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let va = self.value(a);
        expect_rank("factorize", va, 2)?;
        let (b, n) = (va.shape()[0], va.shape()[1]);
        if n > crate::logic::MAX_ENUM_VARS {
            return Err(AutodiffError::Domain {
                op: "factorize",
                msg: format!("{n} variables exceeds the enumeration limit"),
            });
        }
        let m = 1usize << n;
        let mut out = Vec::with_capacity(b * m);
        for row in va.data().chunks(n.max(1)).take(b) {
            for w in 0..m {
                out.push(kernels::world_weight(row, w, None));
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![b, m], out)?, Op::Factorize(a), rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        let root_node = self.nodes.get(root.0).ok_or(AutodiffError::UnknownNode(root.0))?;
        if !root_node.value.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(root_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if root_node.requires_grad {
            grads[root.0] = Some(Tensor::full(root_node.value.shape(), 1.0));
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |id: NodeId, delta: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let y = &node.value;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    send(*a, g.zip_with(val(*b), |g, x| g * x));
                }
                if wants(*b) {
                    send(*b, g.zip_with(val(*a), |g, x| g * x));
                }
            }
            Op::ScalarMul(a, c) => send(*a, g.map(|x| c * x)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g.data(), Trans::No, vb.data(), Trans::Yes, &mut ga, 0.0);
                    send(*a, Tensor::new(vec![m, k], ga).expect("shape"));
                }
                if wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, va.data(), Trans::Yes, g.data(), Trans::No, &mut gb, 0.0);
                    send(*b, Tensor::new(vec![k, n], gb).expect("shape"));
                }
            }
            Op::AddBias(x, bias) => {
                send(*x, g.clone());
                if wants(*bias) {
                    let n = val(*bias).len();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n.max(1)) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    send(*bias, Tensor::from_vec(gb));
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                cols,
            } => {
                let (vi, vw) = (val(*input), val(*weight));
                let [b, c, h, w] = [vi.shape()[0], vi.shape()[1], vi.shape()[2], vi.shape()[3]];
                let [o, _, kh, kw] = [vw.shape()[0], vw.shape()[1], vw.shape()[2], vw.shape()[3]];
                let geom = kernels::ConvGeom { c, h, w, kh, kw };
                let (ck, p) = (c * kh * kw, geom.oh() * geom.ow());
                let cols = cols.as_ref().expect("conv2d saved columns when grad was required");
                let mut gw = vec![0.0; o * ck];
                let mut gb = vec![0.0; o];
                let mut gi = if wants(*input) { vec![0.0; vi.len()] } else { Vec::new() };
                let mut gcol = vec![0.0; ck * p];
                for bi in 0..b {
                    let gout = &g.data()[bi * o * p..(bi + 1) * o * p];
                    let col = &cols[bi * ck * p..(bi + 1) * ck * p];
                    if wants(*weight) {
                        kernels::gemm(o, p, ck, gout, Trans::No, col, Trans::Yes, &mut gw, 1.0);
                    }
                    if wants(*bias) {
                        for (acc, row) in gb.iter_mut().zip(gout.chunks(p)) {
                            *acc += row.iter().sum::<f64>();
                        }
                    }
                    if wants(*input) {
                        kernels::gemm(ck, o, p, vw.data(), Trans::Yes, gout, Trans::No, &mut gcol, 0.0);
                        let dst = &mut gi[bi * c * h * w..(bi + 1) * c * h * w];
                        kernels::col2im_add(&gcol, &geom, dst);
                    }
                }
                if wants(*weight) {
                    send(*weight, Tensor::new(vw.shape().to_vec(), gw).expect("shape"));
                }
                if wants(*bias) {
                    send(*bias, Tensor::from_vec(gb));
                }
                if wants(*input) {
                    send(*input, Tensor::new(vi.shape().to_vec(), gi).expect("shape"));
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut gi = Tensor::zeros(val(*input).shape());
                let dst = gi.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    dst[src] += gv;
                }
                send(*input, gi);
            }
            Op::Relu(a) => send(*a, g.zip_with(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::Sigmoid(a) => send(*a, g.zip_with(y, |g, s| g * s * (1.0 - s))),
            Op::Softmax(a) => {
                let n = y.shape().last().copied().unwrap_or(1).max(1);
                let mut gx = g.clone();
                for (grow, yrow) in gx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (gv, yv) in grow.iter_mut().zip(yrow) {
                        *gv = yv * (*gv - dot);
                    }
                }
                send(*a, gx);
            }
            Op::Log(a) => send(*a, g.zip_with(val(*a), |g, x| g / x)),
            Op::ClampMin(a, lo) => {
                send(*a, g.zip_with(val(*a), |g, x| if x > *lo { g } else { 0.0 }))
            }
            Op::Sum(a) => send(*a, Tensor::full(val(*a).shape(), g.item())),
            Op::Concat(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (na, nb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
                let mut ga = Vec::with_capacity(val(*a).len());
                let mut gb = Vec::with_capacity(val(*b).len());
                for row in g.data().chunks((na + nb).max(1)) {
                    ga.extend_from_slice(&row[..na]);
                    gb.extend_from_slice(&row[na..]);
                }
                send(*a, Tensor::new(sa.to_vec(), ga).expect("shape"));
                send(*b, Tensor::new(sb.to_vec(), gb).expect("shape"));
            }
            Op::Reshape(a) => {
                send(*a, g.clone().reshape(val(*a).shape()).expect("shape"));
            }
            Op::SelectCols(a, cols) => {
                let n = val(*a).shape()[1];
                let mut ga = Tensor::zeros(val(*a).shape());
                for (dst, src) in ga.data_mut().chunks_mut(n.max(1)).zip(g.data().chunks(cols.len().max(1))) {
                    for (&c, &gv) in cols.iter().zip(src) {
                        dst[c] += gv;
                    }
                }
                send(*a, ga);
            }
            Op::NormalizeRows(a) => {
                let x = val(*a);
                let n = x.shape().last().copied().unwrap_or(1).max(1);
                let mut gx = g.clone();
                for ((grow, yrow), xrow) in gx
                    .data_mut()
                    .chunks_mut(n)
                    .zip(y.data().chunks(n))
                    .zip(x.data().chunks(n))
                {
                    let s: f64 = xrow.iter().sum();
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for gv in grow.iter_mut() {
                        *gv = (*gv - dot) / s;
                    }
                }
                send(*a, gx);
            }
            Op::Factorize(a) => {
                let x = val(*a);
                let n = x.shape()[1];
                let m = 1usize << n;
                let mut gx = Tensor::zeros(x.shape());
                for ((dst, row), grow) in gx
                    .data_mut()
                    .chunks_mut(n.max(1))
                    .zip(x.data().chunks(n.max(1)))
                    .zip(g.data().chunks(m))
                {
                    for (i, d) in dst.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (w, &gw) in grow.iter().enumerate() {
                            let rest = kernels::world_weight(row, w, Some(i));
                            let sign = if crate::logic::bit(w, i, n) { 1.0 } else { -1.0 };
                            acc += gw * sign * rest;
                        }
                        *d = acc;
                    }
                }
                send(*a, gx);
            }
        }
    }
}

/// Row-wise softmax over the last axis, max-shifted.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let n = x.shape().last().copied().unwrap_or(1).max(1);
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let root = tape.sum(sq);
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), [2.0, 4.0, 6.0]);
    }

    #[test]
    fn neg_log_sigmoid_gradient_at_zero() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        let l = tape.log(s).unwrap();
        let root = tape.scalar_mul(l, -1.0);
        assert!((tape.value(root).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let grads = tape.backward(root).unwrap();
        assert!((grads.get(z).unwrap().item() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn conv_and_pool_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 28, 28]));
        let w = tape.param(Tensor::zeros(&[6, 1, 5, 5]));
        let b = tape.param(Tensor::zeros(&[6]));
        let y = tape.conv2d(x, w, b).unwrap();
        assert_eq!(tape.value(y).shape(), [1, 6, 24, 24]);
        let p = tape.maxpool2x2(y).unwrap();
        assert_eq!(tape.value(p).shape(), [1, 6, 12, 12]);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut tape = Tape::new();
        let xs: Vec<f64> = (0..2 * 2 * 6 * 7).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let ws: Vec<f64> = (0..3 * 2 * 5 * 5).map(|i| ((i * 13) % 7) as f64 * 0.1).collect();
        let x = tape.constant(t(&[2, 2, 6, 7], &xs));
        let w = tape.constant(t(&[3, 2, 5, 5], &ws));
        let b = tape.constant(t(&[3], &[0.5, -1.0, 2.0]));
        let y = tape.conv2d(x, w, b).unwrap();
        let out = tape.value(y);
        assert_eq!(out.shape(), [2, 3, 2, 3]);
        for bi in 0..2 {
            for o in 0..3 {
                for oy in 0..2 {
                    for ox in 0..3 {
                        let mut acc = [0.5, -1.0, 2.0][o];
                        for c in 0..2 {
                            for ky in 0..5 {
                                for kx in 0..5 {
                                    acc += ws[((o * 2 + c) * 5 + ky) * 5 + kx]
                                        * xs[((bi * 2 + c) * 6 + oy + ky) * 7 + ox + kx];
                                }
                            }
                        }
                        let got = out.data()[((bi * 3 + o) * 2 + oy) * 3 + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd_and_conv_small_input() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 5, 4]));
        assert!(matches!(tape.maxpool2x2(x), Err(AutodiffError::Domain { .. })));
        let x = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 5, 5]));
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(matches!(tape.conv2d(x, w, b), Err(AutodiffError::Domain { .. })));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        let y = tape.softmax(x);
        assert_eq!(tape.value(y).data(), [0.25; 4]);
    }

    #[test]
    fn log_of_nonpositive_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(AutodiffError::Domain { op: "log", .. })));
        let x = tape.constant(Tensor::from_vec(vec![-2.0]));
        assert!(tape.log(x).is_err());
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.add(a, b), Err(AutodiffError::ShapeMismatch { .. })));
        assert!(tape.matmul(a, a).is_err());
        assert!(tape.matmul(a, b).is_ok());
        let bias = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.add_bias(a, bias).is_err());
        let c = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(tape.concat(a, c).is_err());
        assert!(tape.select_cols(a, &[3]).is_err());
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        assert!(matches!(tape.backward(NodeId(0)), Err(AutodiffError::EmptyTape)));
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarRoot(_))));
    }

    #[test]
    fn unreached_leaves_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
        let unused = tape.param(Tensor::zeros(&[3]));
        let root = tape.sum(x);
        let grads = tape.backward(root).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), [0.0; 3]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let a = tape.scalar_mul(x, 2.0);
        let b = tape.add(a, x).unwrap();
        let c = tape.mul(b, x).unwrap(); // 3x^2
        let grads = tape.backward(c).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 18.0);
    }

    #[test]
    fn factorize_matches_world_distribution() {
        let mut tape = Tape::new();
        let p = tape.constant(t(&[1, 2], &[0.3, 0.6]));
        let q = tape.factorize(p).unwrap();
        let want = [0.28, 0.42, 0.12, 0.18];
        for (g, w) in tape.value(q).data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

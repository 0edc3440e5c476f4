//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records primitive ops in topological order (every op's inputs
//! precede it); [`Tape::backward`] replays the record once in reverse and
//! accumulates adjoints. Leaves registered with [`Tape::param`] receive
//! gradients; [`Tape::constant`] leaves do not and whole subgraphs that only
//! depend on constants are skipped during the backward sweep.
//!
//! Conventions:
//! - relu'(0) = 0, and clamp-min passes gradient only where `x > c`;
//! - max reduction routes its adjoint to the first maximum;
//! - every op checks its result for NaN/Inf and fails instead of propagating.

use crate::error::{CoreError, Result};
use crate::kernels;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    #[inline]
    fn i(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    stride: usize,
    pad: [usize; 3],
    in_dims: [usize; 4],
    out_dims: [usize; 4],
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Transpose2d(NodeId),
    Conv3d {
        input: NodeId,
        weight: NodeId,
        geom: ConvGeom,
    },
    Conv3dTranspose {
        rel: NodeId,
        weight: NodeId,
        geom: ConvGeom,
    },
    BiasAdd(NodeId, NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    ClampMin(NodeId, f64),
    Scale(NodeId, f64),
    Sum(NodeId),
    MaxReduce(NodeId),
    Reshape(NodeId),
    SubBcast(NodeId, NodeId),
    DivBcast(NodeId, NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar output with respect to the tape's param leaves.
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.adj.get(id.i()).and_then(|t| t.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.adj.get_mut(id.i()).and_then(|t| t.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.i()].value
    }

    fn push(&mut self, op: &'static str, value: Tensor, node_op: Op, needs_grad: bool) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(CoreError::NonFinite { op });
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op: node_op,
            needs_grad,
        });
        Ok(id)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.i()].needs_grad
    }

    /// Leaf that participates in differentiation (weights, biases).
    pub fn param(&mut self, value: Tensor) -> Result<NodeId> {
        self.push("param", value, Op::Leaf, true)
    }

    /// Leaf treated as a constant (inputs, masks, labels).
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push("constant", value, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(CoreError::shape(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, node_op: Op) -> Result<NodeId> {
        self.same_shape(op, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(op, value, node_op, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, op: &'static str, a: NodeId, f: impl Fn(f64) -> f64, node_op: Op) -> Result<NodeId> {
        let value = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(op, value, node_op, ng)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary("log", a, f64::ln, Op::Log(a))
    }

    pub fn clamp_min(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary("clamp_min", a, |x| x.max(c), Op::ClampMin(a, c))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary("scale", a, |x| c * x, Op::Scale(a, c))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).is_empty() {
            return Err(CoreError::invalid("sum of empty tensor"));
        }
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn max_reduce(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).is_empty() {
            return Err(CoreError::invalid("max of empty tensor"));
        }
        let m = self.value(a).data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ng = self.needs(a);
        self.push("max", Tensor::scalar(m), Op::MaxReduce(a), ng)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).reshaped(shape)?;
        let ng = self.needs(a);
        self.push("reshape", value, Op::Reshape(a), ng)
    }

    /// `a - s` with scalar node `s` broadcast over `a`.
    pub fn sub_bcast(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(CoreError::shape("sub_bcast", "broadcast operand must be scalar"));
        }
        let sv = self.value(s).item();
        let value = self.value(a).map(|x| x - sv);
        let ng = self.needs(a) || self.needs(s);
        self.push("sub_bcast", value, Op::SubBcast(a, s), ng)
    }

    /// `a / s` with scalar node `s` broadcast over `a`.
    pub fn div_bcast(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(CoreError::shape("div_bcast", "broadcast operand must be scalar"));
        }
        let sv = self.value(s).item();
        let value = self.value(a).map(|x| x / sv);
        let ng = self.needs(a) || self.needs(s);
        self.push("div_bcast", value, Op::DivBcast(a, s), ng)
    }

    /// 2-D matrix product; the right operand may be rank 1 (treated as a column).
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || (sb.len() != 1 && sb.len() != 2) {
            return Err(CoreError::shape("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        if sb[0] != k {
            return Err(CoreError::shape("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &da[i * k..(i + 1) * k];
            if n == 1 {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += ar[p] * db[p];
                }
                out[i] = acc;
            } else {
                let or = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = ar[p];
                    if av == 0.0 {
                        continue;
                    }
                    let br = &db[p * n..(p + 1) * n];
                    for j in 0..n {
                        or[j] += av * br[j];
                    }
                }
            }
        }
        let shape = if sb.len() == 1 { vec![m] } else { vec![m, n] };
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", Tensor::new(shape, out)?, Op::Matmul(a, b), ng)
    }

    pub fn transpose2d(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).shape().to_vec();
        if s.len() != 2 {
            return Err(CoreError::shape("transpose", format!("{:?}", s)));
        }
        let (m, n) = (s[0], s[1]);
        let d = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let ng = self.needs(a);
        self.push("transpose", Tensor::new(vec![n, m], out)?, Op::Transpose2d(a), ng)
    }

    fn conv_geometry(&self, op: &'static str, input: NodeId, weight: NodeId, stride: usize) -> Result<ConvGeom> {
        if stride != 1 && stride != 2 {
            return Err(CoreError::invalid(format!("{op}: stride must be 1 or 2, got {stride}")));
        }
        let xs = self.value(input).shape();
        let ws = self.value(weight).shape();
        if xs.len() != 4 {
            return Err(CoreError::shape(op, format!("input must be [C,D,H,W], got {:?}", xs)));
        }
        if ws.len() != 5 || ws[2] != 3 || ws[3] != 3 || ws[4] != 3 {
            return Err(CoreError::shape(op, format!("weight must be [O,C,3,3,3], got {:?}", ws)));
        }
        if ws[1] != xs[0] {
            return Err(CoreError::shape(
                op,
                format!("weight expects {} input channels, input has {}", ws[1], xs[0]),
            ));
        }
        let in_sp = [xs[1], xs[2], xs[3]];
        let (out_sp, pad) = kernels::same_geometry(in_sp, stride);
        Ok(ConvGeom {
            stride,
            pad,
            in_dims: [xs[0], xs[1], xs[2], xs[3]],
            out_dims: [ws[0], out_sp[0], out_sp[1], out_sp[2]],
        })
    }

    /// 3-D convolution, kernel 3x3x3, "same" zero padding, no bias.
    pub fn conv3d(&mut self, input: NodeId, weight: NodeId, stride: usize) -> Result<NodeId> {
        let geom = self.conv_geometry("conv3d", input, weight, stride)?;
        let mut out = Tensor::zeros(&geom.out_dims);
        kernels::conv3d_fwd(
            self.value(input).data(),
            geom.in_dims,
            self.value(weight).data(),
            geom.stride,
            geom.pad,
            out.data_mut(),
            geom.out_dims,
        );
        let ng = self.needs(input) || self.needs(weight);
        self.push("conv3d", out, Op::Conv3d { input, weight, geom }, ng)
    }

    /// Adjoint scatter of [`Tape::conv3d`]: maps a tensor on the conv's output
    /// grid back to its input grid through the same kernel geometry.
    /// `fine_dims` is the `[C,D,H,W]` shape of the conv's input.
    pub fn conv3d_transpose(
        &mut self,
        rel: NodeId,
        weight: NodeId,
        stride: usize,
        fine_dims: [usize; 4],
    ) -> Result<NodeId> {
        if stride != 1 && stride != 2 {
            return Err(CoreError::invalid(format!(
                "conv3d_transpose: stride must be 1 or 2, got {stride}"
            )));
        }
        let ws = self.value(weight).shape();
        if ws.len() != 5 || ws[1] != fine_dims[0] {
            return Err(CoreError::shape(
                "conv3d_transpose",
                format!("weight {:?} does not map onto fine grid {:?}", ws, fine_dims),
            ));
        }
        let in_sp = [fine_dims[1], fine_dims[2], fine_dims[3]];
        let (out_sp, pad) = kernels::same_geometry(in_sp, stride);
        let expect = [ws[0], out_sp[0], out_sp[1], out_sp[2]];
        if self.value(rel).shape() != expect {
            return Err(CoreError::shape(
                "conv3d_transpose",
                format!("coarse tensor {:?}, expected {:?}", self.value(rel).shape(), expect),
            ));
        }
        let geom = ConvGeom {
            stride,
            pad,
            in_dims: fine_dims,
            out_dims: expect,
        };
        let mut out = Tensor::zeros(&fine_dims);
        kernels::conv3d_input_grad(
            self.value(rel).data(),
            geom.out_dims,
            self.value(weight).data(),
            geom.stride,
            geom.pad,
            out.data_mut(),
            geom.in_dims,
        );
        let ng = self.needs(rel) || self.needs(weight);
        self.push("conv3d_transpose", out, Op::Conv3dTranspose { rel, weight, geom }, ng)
    }

    /// Channel bias broadcast over a `[C,D,H,W]` activation.
    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.value(x).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        if xs.len() != 4 || bs.len() != 1 || bs[0] != xs[0] {
            return Err(CoreError::shape("bias_add", format!("{:?} + {:?}", xs, bs)));
        }
        let per_ch = xs[1] * xs[2] * xs[3];
        let mut data = self.value(x).data().to_vec();
        for c in 0..xs[0] {
            let bv = self.value(b).data()[c];
            for v in &mut data[c * per_ch..(c + 1) * per_ch] {
                *v += bv;
            }
        }
        let ng = self.needs(x) || self.needs(b);
        self.push("bias_add", Tensor::new(xs, data)?, Op::BiasAdd(x, b), ng)
    }

    /// Reverse sweep from a scalar output. Returns gradients for param leaves.
    /// The tape itself is left untouched and can be swept again.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out_node = &self.nodes[output.i()];
        if out_node.value.len() != 1 {
            return Err(CoreError::NotScalar(out_node.value.len()));
        }
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        adj.resize_with(self.nodes.len(), || None);
        if !out_node.needs_grad {
            return Ok(Gradients { adj });
        }
        adj[output.i()] = Some(Tensor::scalar(1.0));

        for i in (0..=output.i()).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue; // keep the accumulated adjoint for the caller
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut adj)?;
        }
        Ok(Gradients { adj })
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) -> Result<()> {
        if !self.needs(id) {
            return Ok(());
        }
        if !contrib.all_finite() {
            return Err(CoreError::NonFinite { op: "backward" });
        }
        match &mut adj[id.i()] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(contrib.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(contrib),
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, value: &Tensor, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(adj, a, g.clone())?;
                self.accumulate(adj, b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, a, g.clone())?;
                self.accumulate(adj, b, g.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let t = zip_new(g, self.value(b), |x, y| x * y);
                    self.accumulate(adj, a, t)?;
                }
                if self.needs(b) {
                    let t = zip_new(g, self.value(a), |x, y| x * y);
                    self.accumulate(adj, b, t)?;
                }
            }
            Op::Div(a, b) => {
                if self.needs(a) {
                    let t = zip_new(g, self.value(b), |x, y| x / y);
                    self.accumulate(adj, a, t)?;
                }
                if self.needs(b) {
                    // d(a/b)/db = -a/b^2 = -y/b
                    let mut t = zip_new(g, value, |x, y| x * y);
                    for (v, bv) in t.data_mut().iter_mut().zip(self.value(b).data()) {
                        *v = -*v / bv;
                    }
                    self.accumulate(adj, b, t)?;
                }
            }
            Op::Matmul(a, b) => {
                let (m, k) = (self.value(a).shape()[0], self.value(a).shape()[1]);
                let bn = if self.value(b).shape().len() == 2 {
                    self.value(b).shape()[1]
                } else {
                    1
                };
                let gd = g.data();
                if self.needs(a) {
                    // dA = g . B^T
                    let bd = self.value(b).data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..bn {
                                acc += gd[i * bn + j] * bd[p * bn + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    self.accumulate(adj, a, Tensor::new(vec![m, k], da)?)?;
                }
                if self.needs(b) {
                    // dB = A^T . g
                    let ad = self.value(a).data();
                    let mut db = vec![0.0; k * bn];
                    for i in 0..m {
                        let gv = &gd[i * bn..(i + 1) * bn];
                        let av = &ad[i * k..(i + 1) * k];
                        for p in 0..k {
                            let apv = av[p];
                            if apv == 0.0 {
                                continue;
                            }
                            for j in 0..bn {
                                db[p * bn + j] += apv * gv[j];
                            }
                        }
                    }
                    let shape = self.value(b).shape().to_vec();
                    self.accumulate(adj, b, Tensor::new(shape, db)?)?;
                }
            }
            Op::Transpose2d(a) => {
                let (n, m) = (value.shape()[0], value.shape()[1]);
                let gd = g.data();
                let mut da = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        da[j * n + i] = gd[i * m + j];
                    }
                }
                self.accumulate(adj, a, Tensor::new(vec![m, n], da)?)?;
            }
            Op::Conv3d { input, weight, geom } => {
                if self.needs(input) {
                    let mut dx = Tensor::zeros(&geom.in_dims);
                    kernels::conv3d_input_grad(
                        g.data(),
                        geom.out_dims,
                        self.value(weight).data(),
                        geom.stride,
                        geom.pad,
                        dx.data_mut(),
                        geom.in_dims,
                    );
                    self.accumulate(adj, input, dx)?;
                }
                if self.needs(weight) {
                    let mut dw = Tensor::zeros(self.value(weight).shape());
                    kernels::conv3d_weight_grad(
                        g.data(),
                        geom.out_dims,
                        self.value(input).data(),
                        geom.in_dims,
                        geom.stride,
                        geom.pad,
                        dw.data_mut(),
                    );
                    self.accumulate(adj, weight, dw)?;
                }
            }
            Op::Conv3dTranspose { rel, weight, geom } => {
                if self.needs(rel) {
                    let mut dr = Tensor::zeros(&geom.out_dims);
                    kernels::conv3d_fwd(
                        g.data(),
                        geom.in_dims,
                        self.value(weight).data(),
                        geom.stride,
                        geom.pad,
                        dr.data_mut(),
                        geom.out_dims,
                    );
                    self.accumulate(adj, rel, dr)?;
                }
                if self.needs(weight) {
                    let mut dw = Tensor::zeros(self.value(weight).shape());
                    kernels::conv3d_weight_grad(
                        self.value(rel).data(),
                        geom.out_dims,
                        g.data(),
                        geom.in_dims,
                        geom.stride,
                        geom.pad,
                        dw.data_mut(),
                    );
                    self.accumulate(adj, weight, dw)?;
                }
            }
            Op::BiasAdd(x, b) => {
                if self.needs(x) {
                    self.accumulate(adj, x, g.clone())?;
                }
                if self.needs(b) {
                    let xs = self.value(x).shape();
                    let per_ch = xs[1] * xs[2] * xs[3];
                    let mut db = vec![0.0; xs[0]];
                    for c in 0..xs[0] {
                        db[c] = g.data()[c * per_ch..(c + 1) * per_ch].iter().sum();
                    }
                    self.accumulate(adj, b, Tensor::new(vec![xs[0]], db)?)?;
                }
            }
            Op::Relu(a) => {
                let t = zip_new(g, self.value(a), |x, v| if v > 0.0 { x } else { 0.0 });
                self.accumulate(adj, a, t)?;
            }
            Op::Exp(a) => {
                let t = zip_new(g, value, |x, y| x * y);
                self.accumulate(adj, a, t)?;
            }
            Op::Log(a) => {
                let t = zip_new(g, self.value(a), |x, v| x / v);
                self.accumulate(adj, a, t)?;
            }
            Op::ClampMin(a, c) => {
                let t = zip_new(g, self.value(a), |x, v| if v > c { x } else { 0.0 });
                self.accumulate(adj, a, t)?;
            }
            Op::Scale(a, c) => {
                self.accumulate(adj, a, g.map(|x| c * x))?;
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accumulate(adj, a, Tensor::filled(self.value(a).shape(), gv))?;
            }
            Op::MaxReduce(a) => {
                let data = self.value(a).data();
                let mut best = 0usize;
                for (i, &v) in data.iter().enumerate() {
                    if v > data[best] {
                        best = i;
                    }
                }
                let mut t = Tensor::zeros(self.value(a).shape());
                t.data_mut()[best] = g.item();
                self.accumulate(adj, a, t)?;
            }
            Op::Reshape(a) => {
                let t = g.reshaped(self.value(a).shape())?;
                self.accumulate(adj, a, t)?;
            }
            Op::SubBcast(a, s) => {
                if self.needs(a) {
                    self.accumulate(adj, a, g.clone())?;
                }
                if self.needs(s) {
                    self.accumulate(adj, s, Tensor::scalar(-g.sum()))?;
                }
            }
            Op::DivBcast(a, s) => {
                let sv = self.value(s).item();
                if self.needs(a) {
                    self.accumulate(adj, a, g.map(|x| x / sv))?;
                }
                if self.needs(s) {
                    // y = a/s, dy/ds = -a/s^2 = -y/s
                    let dot: f64 = g.data().iter().zip(value.data()).map(|(x, y)| x * y).sum();
                    self.accumulate(adj, s, Tensor::scalar(-dot / sv))?;
                }
            }
        }
        Ok(())
    }
}

fn zip_new(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.len(), b.len());
    let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_new shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap()).unwrap();
        let r = t.relu(a).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 2.0]);
    }

    #[test]
    fn square_gradient() {
        // f(x) = sum(x*x), df/dx = 2x
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![1], vec![3.0]).unwrap()).unwrap();
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn relu_subgradient_at_negative_is_zero() {
        let mut t = Tape::new();
        let w = t.param(Tensor::new(vec![1], vec![-1.0]).unwrap()).unwrap();
        let r = t.relu(w).unwrap();
        let s = t.sum(r).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(w).unwrap().data(), &[0.0]);
    }

    #[test]
    fn conv_center_all_ones() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::filled(&[1, 3, 3, 3], 1.0)).unwrap();
        let w = t.param(Tensor::filled(&[1, 1, 3, 3, 3], 1.0)).unwrap();
        let y = t.conv3d(x, w, 1).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 3, 3, 3]);
        assert_eq!(t.value(y).data()[13], 27.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let y = t.relu(x).unwrap();
        assert!(matches!(t.backward(y), Err(CoreError::NotScalar(2))));
    }

    #[test]
    fn non_finite_surfaces_as_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        let b = t.constant(Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        assert!(matches!(t.div(a, b), Err(CoreError::NonFinite { .. })));
        assert!(t.log(a).is_err()); // ln(0) = -inf
    }

    #[test]
    fn backward_is_rerunnable() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![1], vec![2.0]).unwrap()).unwrap();
        let y = t.mul(x, x).unwrap();
        let s = t.sum(y).unwrap();
        let g1 = t.backward(s).unwrap();
        let g2 = t.backward(s).unwrap();
        assert_eq!(g1.wrt(x).unwrap().data(), g2.wrt(x).unwrap().data());
    }

    #[test]
    fn max_reduce_routes_to_first_argmax() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![3], vec![2.0, 5.0, 5.0]).unwrap()).unwrap();
        let m = t.max_reduce(x).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn matmul_vector_and_matrix() {
        let mut t = Tape::new();
        let a = t.param(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
        let v = t.param(Tensor::new(vec![3], vec![1.0, 0.0, -1.0]).unwrap()).unwrap();
        let y = t.matmul(a, v).unwrap();
        assert_eq!(t.value(y).data(), &[-2.0, -2.0]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        // d/dA = 1 . v^T stacked per row, d/dv = column sums of A
        assert_eq!(g.wrt(a).unwrap().data(), &[1.0, 0.0, -1.0, 1.0, 0.0, -1.0]);
        assert_eq!(g.wrt(v).unwrap().data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn constant_subgraph_is_skipped() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let b = t.relu(a).unwrap();
        let s = t.sum(b).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.wrt(a).is_none());
    }
}

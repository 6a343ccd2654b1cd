use std::sync::Arc;

use crate::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Numeric precision of recorded values.
///
/// `F32` rounds the result of every primitive through `f32`, trading
/// accuracy for the storage behaviour of a single-precision run while
/// keeping `f64` accumulation inside each kernel. Gradient checking
/// tolerances assume `F64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone)]
enum OpKind {
    Leaf,
    MatMul,
    Conv2d { stride: usize, padding: usize },
    Softmax,
    Relu,
    Sigmoid,
    Gelu,
    Abs,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddBcast,
    ConcatChannels,
    PixelShuffle(usize),
    PixelUnshuffle(usize),
    LayerNorm,
    Permute { fwd: Arc<Vec<usize>> },
    Reshape,
    MeanAll,
    SumAll,
}

/// Extra buffers a backward rule needs beyond its input/output values.
#[derive(Debug, Clone)]
enum Saved {
    None,
    LayerNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: OpKind,
    inputs: Vec<usize>,
    value: Tensor,
    saved: Saved,
    requires_grad: bool,
}

/// A define-by-run computation record.
///
/// Nodes are appended in execution order, so every node's inputs precede
/// it and a single reverse sweep visits each node exactly once. The tape
/// owns its values; leaves keep their `requires_grad` flag and receive
/// their gradient in `Tensor::grad` after [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            precision: Precision::F64,
        }
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf (input or parameter).
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        self.quantize(tensor.data_mut());
        let requires_grad = tensor.requires_grad;
        self.push(OpKind::Leaf, vec![], tensor, Saved::None, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn push(
        &mut self,
        op: OpKind,
        inputs: Vec<usize>,
        mut value: Tensor,
        saved: Saved,
        requires_grad: bool,
    ) -> Var {
        self.quantize(value.data_mut());
        value.requires_grad = requires_grad;
        self.nodes.push(Node {
            op,
            inputs,
            value,
            saved,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: OpKind, inputs: Vec<usize>, value: Tensor, saved: Saved) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(op, inputs, value, saved, requires_grad)
    }

    fn quantize(&self, data: &mut [f64]) {
        if self.precision == Precision::F32 {
            for v in data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    // ── primitive operations ────────────────────────────────────────────

    /// Matrix product. Accepts `[M,K]x[K,N]`, batched `[..,M,K]x[..,K,N]`
    /// with equal leading dims, and a 2-D rhs broadcast over the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (asq, bsq) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if asq.len() < 2 || bsq.len() < 2 {
            return Err(TensorError::mismatch("matmul", &asq, &bsq));
        }
        let (m, k) = (asq[asq.len() - 2], asq[asq.len() - 1]);
        let (kb, n) = (bsq[bsq.len() - 2], bsq[bsq.len() - 1]);
        let rhs_bcast = bsq.len() == 2 && asq.len() > 2;
        let leading_ok = rhs_bcast || asq[..asq.len() - 2] == bsq[..bsq.len() - 2];
        if k != kb || !leading_ok {
            return Err(TensorError::mismatch("matmul", &asq, &bsq));
        }
        let batch: usize = asq[..asq.len() - 2].iter().product();
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let lhs = &ad[bi * m * k..(bi + 1) * m * k];
            let rhs = if rhs_bcast {
                &bd[..k * n]
            } else {
                &bd[bi * k * n..(bi + 1) * k * n]
            };
            matmul_nn(lhs, rhs, &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        let mut shape = asq[..asq.len() - 2].to_vec();
        shape.push(m);
        shape.push(n);
        let value = Tensor::new(shape, out)?;
        Ok(self.record(OpKind::MatMul, vec![a.0, b.0], value, Saved::None))
    }

    /// 2-D cross-correlation with zero padding.
    ///
    /// `x: [B,Cin,H,W]`, `w: [Cout,Cin,k,k]`, `bias: [Cout]`. Kernels of
    /// size 1 and 3 are the only ones the network uses and the only ones
    /// accepted.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(TensorError::mismatch("conv2d", &xs, &ws));
        }
        let (b, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_w, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(TensorError::invalid(
                "conv2d",
                &ws,
                format!("kernel size {kh}x{kw} unsupported, expected 1 or 3"),
            ));
        }
        if cin != cin_w {
            return Err(TensorError::mismatch("conv2d", &xs, &ws));
        }
        if bs != [cout] {
            return Err(TensorError::mismatch("conv2d", &ws, &bs));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", &xs, "stride must be positive"));
        }
        let oh = (h + 2 * padding).checked_sub(kh).map(|v| v / stride + 1);
        let ow = (wd + 2 * padding).checked_sub(kw).map(|v| v / stride + 1);
        let (oh, ow) = match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
            _ => {
                return Err(TensorError::invalid(
                    "conv2d",
                    &xs,
                    format!("non-positive output extent for kernel {kh}, padding {padding}"),
                ))
            }
        };

        let xd = self.value(x).data();
        let wv = self.value(w).data();
        let bd = self.value(bias).data();
        let mut out = vec![0.0; b * cout * oh * ow];
        for bi in 0..b {
            for co in 0..cout {
                let o_base = ((bi * cout) + co) * oh * ow;
                out[o_base..o_base + oh * ow].fill(bd[co]);
                for ci in 0..cin {
                    let x_base = ((bi * cin) + ci) * h * wd;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wval = wv[(((co * cin) + ci) * kh + ky) * kw + kx];
                            if wval == 0.0 {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let x_row = x_base + iy as usize * wd;
                                let o_row = o_base + oy * ow;
                                for ox in 0..ow {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    out[o_row + ox] += wval * xd[x_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![b, cout, oh, ow], out)?;
        Ok(self.record(
            OpKind::Conv2d { stride, padding },
            vec![x.0, w.0, bias.0],
            value,
            Saved::None,
        ))
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax_lastdim(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let last = *xs.last().expect("softmax on rank-0 tensor");
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for (row_in, row_out) in xd.chunks_exact(last).zip(out.chunks_exact_mut(last)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        let value = Tensor::new(xs, out).expect("softmax preserves shape");
        self.record(OpKind::Softmax, vec![x.0], value, Saved::None)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, OpKind::Relu, |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, OpKind::Sigmoid, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, OpKind::Gelu, gelu_fwd)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, OpKind::Abs, f64::abs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, OpKind::Scale(c), |v| v * c)
    }

    fn unary(&mut self, x: Var, op: OpKind, f: impl Fn(f64) -> f64) -> Var {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data).expect("unary preserves shape");
        self.record(op, vec![x.0], value, Saved::None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, OpKind::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, OpKind::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, OpKind::Mul, |x, y| x * y)
    }

    fn binary(&mut self, a: Var, b: Var, op: OpKind, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (asq, bsq) = (self.shape(a), self.shape(b));
        if asq != bsq {
            let name = match op {
                OpKind::Add => "add",
                OpKind::Sub => "sub",
                _ => "mul",
            };
            return Err(TensorError::mismatch(name, asq, bsq));
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(asq.to_vec(), data)?;
        Ok(self.record(op, vec![a.0, b.0], value, Saved::None))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s shape;
    /// `b` repeats over the leading dimensions. Used for bias terms and
    /// per-token positional encodings.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (asq, bsq) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if bsq.len() > asq.len() || asq[asq.len() - bsq.len()..] != bsq[..] {
            return Err(TensorError::mismatch("add_bcast", &asq, &bsq));
        }
        let bn = self.value(b).numel();
        if bn == 0 {
            return Err(TensorError::invalid("add_bcast", &bsq, "empty broadcast operand"));
        }
        let bd = self.value(b).data().to_vec();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % bn])
            .collect();
        let value = Tensor::new(asq, data)?;
        Ok(self.record(OpKind::AddBcast, vec![a.0, b.0], value, Saved::None))
    }

    /// Concatenates two `[B,C,H,W]` tensors along the channel dimension.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (asq, bsq) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if asq.len() != 4 || bsq.len() != 4 {
            return Err(TensorError::mismatch("concat_channels", &asq, &bsq));
        }
        if asq[0] != bsq[0] || asq[2] != bsq[2] || asq[3] != bsq[3] {
            return Err(TensorError::mismatch("concat_channels", &asq, &bsq));
        }
        let (bn, c1, c2, hw) = (asq[0], asq[1], bsq[1], asq[2] * asq[3]);
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = Vec::with_capacity((c1 + c2) * bn * hw);
        for bi in 0..bn {
            out.extend_from_slice(&ad[bi * c1 * hw..(bi + 1) * c1 * hw]);
            out.extend_from_slice(&bd[bi * c2 * hw..(bi + 1) * c2 * hw]);
        }
        let value = Tensor::new(vec![bn, c1 + c2, asq[2], asq[3]], out)?;
        Ok(self.record(OpKind::ConcatChannels, vec![a.0, b.0], value, Saved::None))
    }

    /// Sub-pixel rearrangement `[B,C·r²,H,W] -> [B,C,rH,rW]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || r == 0 {
            return Err(TensorError::invalid("pixel_shuffle", &xs, "expected [B,C,H,W]"));
        }
        let (b, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if c_in % (r * r) != 0 {
            return Err(TensorError::invalid(
                "pixel_shuffle",
                &xs,
                format!("{c_in} channels not divisible by r^2={}", r * r),
            ));
        }
        let c = c_in / (r * r);
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        pixel_shuffle_kernel(xd, &mut out, b, c, h, w, r);
        let value = Tensor::new(vec![b, c, h * r, w * r], out)?;
        Ok(self.record(OpKind::PixelShuffle(r), vec![x.0], value, Saved::None))
    }

    /// Inverse of [`Tape::pixel_shuffle`].
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || r == 0 {
            return Err(TensorError::invalid("pixel_unshuffle", &xs, "expected [B,C,H,W]"));
        }
        let (b, c, hr, wr) = (xs[0], xs[1], xs[2], xs[3]);
        if hr % r != 0 || wr % r != 0 {
            return Err(TensorError::invalid(
                "pixel_unshuffle",
                &xs,
                format!("spatial dims not divisible by r={r}"),
            ));
        }
        let (h, w) = (hr / r, wr / r);
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        pixel_unshuffle_kernel(xd, &mut out, b, c, h, w, r);
        let value = Tensor::new(vec![b, c * r * r, h, w], out)?;
        Ok(self.record(OpKind::PixelUnshuffle(r), vec![x.0], value, Saved::None))
    }

    /// Normalizes the last dimension to zero mean and unit variance, then
    /// applies the affine pair `gamma`, `beta` (both `[C]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = *xs.last().unwrap_or(&0);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::mismatch("layer_norm", &xs, self.shape(gamma)));
        }
        if eps <= 0.0 {
            return Err(TensorError::invalid("layer_norm", &xs, "eps must be positive"));
        }
        let xd = self.value(x).data();
        let g = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let rows = xd.len() / c;
        let mut out = vec![0.0; xd.len()];
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        for row in 0..rows {
            let src = &xd[row * c..(row + 1) * c];
            let mean = src.iter().sum::<f64>() / c as f64;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[row] = istd;
            for j in 0..c {
                let xh = (src[j] - mean) * istd;
                xhat[row * c + j] = xh;
                out[row * c + j] = g[j] * xh + bt[j];
            }
        }
        let value = Tensor::new(xs, out)?;
        Ok(self.record(
            OpKind::LayerNorm,
            vec![x.0, gamma.0, beta.0],
            value,
            Saved::LayerNorm { xhat, inv_std },
        ))
    }

    /// Reindexes elements: `out[i] = in[map[i]]`. `map` must be a bijection
    /// on `0..numel`; backward scatters through the inverse.
    pub fn permute(&mut self, x: Var, map: Arc<Vec<usize>>, out_shape: Vec<usize>) -> Result<Var> {
        let xd = self.value(x).data();
        let expected: usize = out_shape.iter().product();
        if map.len() != xd.len() || expected != xd.len() {
            return Err(TensorError::invalid(
                "permute",
                &out_shape,
                format!("map of {} entries over {} elements", map.len(), xd.len()),
            ));
        }
        let out: Vec<f64> = map.iter().map(|&src| xd[src]).collect();
        let value = Tensor::new(out_shape, out)?;
        Ok(self.record(OpKind::Permute { fwd: map }, vec![x.0], value, Saved::None))
    }

    /// Swaps the two trailing dimensions.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(TensorError::invalid("transpose_last2", &xs, "needs rank >= 2"));
        }
        let (m, n) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let batch: usize = xs[..xs.len() - 2].iter().product();
        let mut map = Vec::with_capacity(batch * m * n);
        for b in 0..batch {
            let base = b * m * n;
            for j in 0..n {
                for i in 0..m {
                    map.push(base + i * n + j);
                }
            }
        }
        let mut out_shape = xs;
        let len = out_shape.len();
        out_shape.swap(len - 2, len - 1);
        self.permute(x, Arc::new(map), out_shape)
    }

    /// Reinterprets the tensor with a new shape of equal element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n = self.value(x).numel();
        let expected: usize = shape.iter().product();
        if expected != n {
            return Err(TensorError::invalid(
                "reshape",
                &shape,
                format!("cannot hold {n} elements"),
            ));
        }
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        Ok(self.record(OpKind::Reshape, vec![x.0], value, Saved::None))
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let d = self.value(x).data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let value = Tensor::scalar(mean);
        self.record(OpKind::MeanAll, vec![x.0], value, Saved::None)
    }

    /// Sum over all elements, producing a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.record(OpKind::SumAll, vec![x.0], value, Saved::None)
    }

    // ── reverse sweep ───────────────────────────────────────────────────

    /// Accumulates gradients of `loss` into every leaf that requires them.
    ///
    /// Visits each node exactly once in reverse order; a tensor used at
    /// several sites receives the sum of all branch gradients. Leaves that
    /// do not contribute to the loss end with a zero gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        if !loss_node.requires_grad {
            return Err(TensorError::DetachedLoss);
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else { continue };
            if matches!(self.nodes[id].op, OpKind::Leaf) {
                grads[id] = Some(gout);
                continue;
            }
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.backward_node(id, &gout, &mut grads);
        }

        for (id, node) in self.nodes.iter_mut().enumerate() {
            if matches!(node.op, OpKind::Leaf) && node.requires_grad {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                node.value.grad = Some(g);
            }
        }
        Ok(())
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, contribution: &[f64]) {
        match &mut grads[id] {
            Some(acc) => {
                for (a, &c) in acc.iter_mut().zip(contribution) {
                    *a += c;
                }
            }
            slot => *slot = Some(contribution.to_vec()),
        }
    }

    fn backward_node(&self, id: usize, gout: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        let node = &self.nodes[id];
        let needs: Vec<bool> = node
            .inputs
            .iter()
            .map(|&i| self.nodes[i].requires_grad)
            .collect();
        let input = |k: usize| self.nodes[node.inputs[k]].value.data();
        let in_shape = |k: usize| self.nodes[node.inputs[k]].value.shape();

        match &node.op {
            OpKind::Leaf => {}
            OpKind::MatMul => {
                let asq = in_shape(0);
                let bsq = in_shape(1);
                let (m, k) = (asq[asq.len() - 2], asq[asq.len() - 1]);
                let n = bsq[bsq.len() - 1];
                let batch: usize = asq[..asq.len() - 2].iter().product();
                let rhs_bcast = bsq.len() == 2 && asq.len() > 2;
                let (ad, bd) = (input(0), input(1));
                if needs[0] {
                    let mut da = vec![0.0; ad.len()];
                    for bi in 0..batch {
                        let g = &gout[bi * m * n..(bi + 1) * m * n];
                        let rhs = if rhs_bcast {
                            &bd[..k * n]
                        } else {
                            &bd[bi * k * n..(bi + 1) * k * n]
                        };
                        matmul_nt(g, rhs, &mut da[bi * m * k..(bi + 1) * m * k], m, n, k);
                    }
                    Self::accumulate(grads, node.inputs[0], &da);
                }
                if needs[1] {
                    let mut db = vec![0.0; bd.len()];
                    for bi in 0..batch {
                        let g = &gout[bi * m * n..(bi + 1) * m * n];
                        let lhs = &ad[bi * m * k..(bi + 1) * m * k];
                        let dst = if rhs_bcast {
                            &mut db[..k * n]
                        } else {
                            &mut db[bi * k * n..(bi + 1) * k * n]
                        };
                        matmul_tn(lhs, g, dst, m, k, n);
                    }
                    Self::accumulate(grads, node.inputs[1], &db);
                }
            }
            OpKind::Conv2d { stride, padding } => {
                let (stride, padding) = (*stride, *padding);
                let xs = in_shape(0);
                let ws = in_shape(1);
                let (b, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (cout, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                let os = node.value.shape();
                let (oh, ow) = (os[2], os[3]);
                let (xd, wv) = (input(0), input(1));
                let mut dx = vec![0.0; if needs[0] { xd.len() } else { 0 }];
                let mut dw = vec![0.0; if needs[1] { wv.len() } else { 0 }];
                for bi in 0..b {
                    for co in 0..cout {
                        let o_base = ((bi * cout) + co) * oh * ow;
                        for ci in 0..cin {
                            let x_base = ((bi * cin) + ci) * h * wd;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let w_idx = (((co * cin) + ci) * kh + ky) * kw + kx;
                                    let wval = wv[w_idx];
                                    let mut wacc = 0.0;
                                    for oy in 0..oh {
                                        let iy = (oy * stride + ky) as isize - padding as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        let x_row = x_base + iy as usize * wd;
                                        let o_row = o_base + oy * ow;
                                        for ox in 0..ow {
                                            let ix = (ox * stride + kx) as isize - padding as isize;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            let g = gout[o_row + ox];
                                            if needs[0] {
                                                dx[x_row + ix as usize] += wval * g;
                                            }
                                            if needs[1] {
                                                wacc += xd[x_row + ix as usize] * g;
                                            }
                                        }
                                    }
                                    if needs[1] {
                                        dw[w_idx] += wacc;
                                    }
                                }
                            }
                        }
                    }
                }
                if needs[0] {
                    Self::accumulate(grads, node.inputs[0], &dx);
                }
                if needs[1] {
                    Self::accumulate(grads, node.inputs[1], &dw);
                }
                if needs[2] {
                    let mut db = vec![0.0; cout];
                    for bi in 0..b {
                        for co in 0..cout {
                            let o_base = ((bi * cout) + co) * oh * ow;
                            db[co] += gout[o_base..o_base + oh * ow].iter().sum::<f64>();
                        }
                    }
                    Self::accumulate(grads, node.inputs[2], &db);
                }
            }
            OpKind::Softmax => {
                let y = node.value.data();
                let last = *node.value.shape().last().unwrap();
                let mut dx = vec![0.0; y.len()];
                for r in 0..y.len() / last {
                    let ys = &y[r * last..(r + 1) * last];
                    let gs = &gout[r * last..(r + 1) * last];
                    let dot: f64 = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                    for j in 0..last {
                        dx[r * last + j] = ys[j] * (gs[j] - dot);
                    }
                }
                Self::accumulate(grads, node.inputs[0], &dx);
            }
            OpKind::Relu => {
                let x = input(0);
                let dx: Vec<f64> = x
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                Self::accumulate(grads, node.inputs[0], &dx);
            }
            OpKind::Sigmoid => {
                let y = node.value.data();
                let dx: Vec<f64> = y.iter().zip(gout).map(|(&v, &g)| g * v * (1.0 - v)).collect();
                Self::accumulate(grads, node.inputs[0], &dx);
            }
            OpKind::Gelu => {
                let x = input(0);
                let dx: Vec<f64> = x.iter().zip(gout).map(|(&v, &g)| g * gelu_bwd(v)).collect();
                Self::accumulate(grads, node.inputs[0], &dx);
            }
            OpKind::Abs => {
                let x = input(0);
                let dx: Vec<f64> = x
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| {
                        // subgradient 0 at the tie
                        if v > 0.0 {
                            g
                        } else if v < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Self::accumulate(grads, node.inputs[0], &dx);
            }
            OpKind::Add => {
                if needs[0] {
                    Self::accumulate(grads, node.inputs[0], gout);
                }
                if needs[1] {
                    Self::accumulate(grads, node.inputs[1], gout);
                }
            }
            OpKind::Sub => {
                if needs[0] {
                    Self::accumulate(grads, node.inputs[0], gout);
                }
                if needs[1] {
                    let neg: Vec<f64> = gout.iter().map(|&g| -g).collect();
                    Self::accumulate(grads, node.inputs[1], &neg);
                }
            }
            OpKind::Mul => {
                let (a, b) = (input(0), input(1));
                if needs[0] {
                    let da: Vec<f64> = gout.iter().zip(b).map(|(&g, &v)| g * v).collect();
                    Self::accumulate(grads, node.inputs[0], &da);
                }
                if needs[1] {
                    let db: Vec<f64> = gout.iter().zip(a).map(|(&g, &v)| g * v).collect();
                    Self::accumulate(grads, node.inputs[1], &db);
                }
            }
            OpKind::Scale(c) => {
                let dx: Vec<f64> = gout.iter().map(|&g| g * c).collect();
                Self::accumulate(grads, node.inputs[0], &dx);
            }
            OpKind::AddBcast => {
                if needs[0] {
                    Self::accumulate(grads, node.inputs[0], gout);
                }
                if needs[1] {
                    let bn = self.nodes[node.inputs[1]].value.numel();
                    let mut db = vec![0.0; bn];
                    for (i, &g) in gout.iter().enumerate() {
                        db[i % bn] += g;
                    }
                    Self::accumulate(grads, node.inputs[1], &db);
                }
            }
            OpKind::ConcatChannels => {
                let asq = in_shape(0);
                let bsq = in_shape(1);
                let (bn, c1, c2, hw) = (asq[0], asq[1], bsq[1], asq[2] * asq[3]);
                if needs[0] {
                    let mut da = vec![0.0; bn * c1 * hw];
                    for bi in 0..bn {
                        let src = bi * (c1 + c2) * hw;
                        da[bi * c1 * hw..(bi + 1) * c1 * hw]
                            .copy_from_slice(&gout[src..src + c1 * hw]);
                    }
                    Self::accumulate(grads, node.inputs[0], &da);
                }
                if needs[1] {
                    let mut db = vec![0.0; bn * c2 * hw];
                    for bi in 0..bn {
                        let src = bi * (c1 + c2) * hw + c1 * hw;
                        db[bi * c2 * hw..(bi + 1) * c2 * hw]
                            .copy_from_slice(&gout[src..src + c2 * hw]);
                    }
                    Self::accumulate(grads, node.inputs[1], &db);
                }
            }
            OpKind::PixelShuffle(r) => {
                let os = node.value.shape();
                let (b, c) = (os[0], os[1]);
                let (h, w) = (os[2] / r, os[3] / r);
                let mut dx = vec![0.0; gout.len()];
                pixel_unshuffle_kernel(gout, &mut dx, b, c, h, w, *r);
                Self::accumulate(grads, node.inputs[0], &dx);
            }
            OpKind::PixelUnshuffle(r) => {
                let xs = in_shape(0);
                let (b, c) = (xs[0], xs[1]);
                let (h, w) = (xs[2] / r, xs[3] / r);
                let mut dx = vec![0.0; gout.len()];
                pixel_shuffle_kernel(gout, &mut dx, b, c, h, w, *r);
                Self::accumulate(grads, node.inputs[0], &dx);
            }
            OpKind::LayerNorm => {
                let Saved::LayerNorm { xhat, inv_std } = &node.saved else {
                    unreachable!("layer_norm node without saved stats");
                };
                let c = *node.value.shape().last().unwrap();
                let rows = xhat.len() / c;
                let g = input(1);
                if needs[0] {
                    let mut dx = vec![0.0; xhat.len()];
                    for row in 0..rows {
                        let xh = &xhat[row * c..(row + 1) * c];
                        let go = &gout[row * c..(row + 1) * c];
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        for j in 0..c {
                            let dxh = go[j] * g[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xh[j];
                        }
                        let m1 = sum_dxhat / c as f64;
                        let m2 = sum_dxhat_xhat / c as f64;
                        for j in 0..c {
                            let dxh = go[j] * g[j];
                            dx[row * c + j] = inv_std[row] * (dxh - m1 - xh[j] * m2);
                        }
                    }
                    Self::accumulate(grads, node.inputs[0], &dx);
                }
                if needs[1] {
                    let mut dg = vec![0.0; c];
                    for row in 0..rows {
                        for j in 0..c {
                            dg[j] += gout[row * c + j] * xhat[row * c + j];
                        }
                    }
                    Self::accumulate(grads, node.inputs[1], &dg);
                }
                if needs[2] {
                    let mut db = vec![0.0; c];
                    for row in 0..rows {
                        for j in 0..c {
                            db[j] += gout[row * c + j];
                        }
                    }
                    Self::accumulate(grads, node.inputs[2], &db);
                }
            }
            OpKind::Permute { fwd } => {
                let mut dx = vec![0.0; gout.len()];
                for (i, &src) in fwd.iter().enumerate() {
                    dx[src] += gout[i];
                }
                Self::accumulate(grads, node.inputs[0], &dx);
            }
            OpKind::Reshape => {
                Self::accumulate(grads, node.inputs[0], gout);
            }
            OpKind::MeanAll => {
                let n = self.nodes[node.inputs[0]].value.numel();
                let dx = vec![gout[0] / n as f64; n];
                Self::accumulate(grads, node.inputs[0], &dx);
            }
            OpKind::SumAll => {
                let n = self.nodes[node.inputs[0]].value.numel();
                let dx = vec![gout[0]; n];
                Self::accumulate(grads, node.inputs[0], &dx);
            }
        }
    }
}

// ── kernels ─────────────────────────────────────────────────────────────

/// `c += a @ b` for row-major `a: [m,k]`, `b: [k,n]`.
fn matmul_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// `c += a @ b^T` for `a: [m,n]`, `b: [k,n]`, producing `[m,k]`.
fn matmul_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            crow[p] += acc;
        }
    }
}

/// `c += a^T @ b` for `a: [m,k]`, `b: [m,n]`, producing `[k,n]`.
fn matmul_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// Enumerates the bijection between the packed `[B,C·r²,H,W]` layout and
/// the spread `[B,C,rH,rW]` layout, yielding `(packed_index, spread_index)`.
fn for_each_shuffle_pair(
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    r: usize,
    mut visit: impl FnMut(usize, usize),
) {
    let (hr, wr) = (h * r, w * r);
    for bi in 0..b {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let pc = ci * r * r + dy * r + dx;
                    for iy in 0..h {
                        for ix in 0..w {
                            let p = (((bi * c * r * r) + pc) * h + iy) * w + ix;
                            let s = (((bi * c) + ci) * hr + iy * r + dy) * wr + ix * r + dx;
                            visit(p, s);
                        }
                    }
                }
            }
        }
    }
}

/// packed `[B,C·r²,H,W]` -> spread `[B,C,rH,rW]`.
fn pixel_shuffle_kernel(src: &[f64], dst: &mut [f64], b: usize, c: usize, h: usize, w: usize, r: usize) {
    for_each_shuffle_pair(b, c, h, w, r, |p, s| dst[s] = src[p]);
}

/// spread `[B,C,rH,rW]` -> packed `[B,C·r²,H,W]`.
fn pixel_unshuffle_kernel(src: &[f64], dst: &mut [f64], b: usize, c: usize, h: usize, w: usize, r: usize) {
    for_each_shuffle_pair(b, c, h, w, r, |p, s| dst[p] = src[s]);
}

fn gelu_fwd(x: f64) -> f64 {
    // tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_bwd(x: f64) -> f64 {
    const SQRT_2_OVER_PI: f64 = 0.7978845608028654;
    let u = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Naive triple-loop reference for 2-D matmul.
    fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_2x2() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(
            tape.value(c).data(),
            matmul_oracle(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0], 2, 2, 2).as_slice()
        );
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1.5, -2.0, 0.25, 4.0]));
        let idm = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zero = tape.leaf(Tensor::zeros(vec![2, 2]));
        let ai = tape.matmul(a, idm).unwrap();
        let az = tape.matmul(a, zero).unwrap();
        assert_eq!(tape.value(ai).data(), tape.value(a).data());
        assert_eq!(tape.value(az).data(), &[0.0; 4]);
    }

    #[test]
    fn matmul_matches_oracle_on_random_batched_shapes() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for &(batch, m, k, n) in &[(1, 3, 4, 2), (2, 2, 5, 3), (4, 1, 7, 1)] {
            let a: Vec<f64> = (0..batch * m * k).map(|_| next()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| next()).collect();
            let mut tape = Tape::new();
            let av = tape.leaf(t(&[batch, m, k], &a));
            let bv = tape.leaf(t(&[k, n], &b));
            let c = tape.matmul(av, bv).unwrap();
            for bi in 0..batch {
                let want = matmul_oracle(&a[bi * m * k..(bi + 1) * m * k], &b, m, k, n);
                let got = &tape.value(c).data()[bi * m * n..(bi + 1) * m * n];
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 2]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn conv2d_all_ones_kernel_center_is_45() {
        // direct summation oracle over the 3x3 window: the padded center
        // window covers all nine inputs 1..=9, which sum to 45.
        let x: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let window_sum: f64 = x.iter().sum();
        let mut tape = Tape::new();
        let xv = tape.leaf(t(&[1, 1, 3, 3], &x));
        let wv = tape.leaf(Tensor::filled(vec![1, 1, 3, 3], 1.0));
        let bv = tape.leaf(Tensor::zeros(vec![1]));
        let y = tape.conv2d(xv, wv, bv, 1, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 3, 3]);
        assert_eq!(tape.value(y).data()[4], window_sum);
        assert_eq!(tape.value(y).data()[4], 45.0);
        // corner window only overlaps four inputs
        assert_eq!(tape.value(y).data()[0], 1.0 + 2.0 + 4.0 + 5.0);
    }

    #[test]
    fn conv2d_dirac_kernel_is_identity() {
        let x: Vec<f64> = (0..2 * 2 * 4 * 4).map(|v| (v as f64).sin()).collect();
        let mut w = vec![0.0; 2 * 2 * 3 * 3];
        // 1 at the centre of each (co == ci) kernel, 0 elsewhere
        for c in 0..2 {
            w[((c * 2 + c) * 3 + 1) * 3 + 1] = 1.0;
        }
        let mut tape = Tape::new();
        let xv = tape.leaf(t(&[2, 2, 4, 4], &x));
        let wv = tape.leaf(t(&[2, 2, 3, 3], &w));
        let bv = tape.leaf(Tensor::zeros(vec![2]));
        let y = tape.conv2d(xv, wv, bv, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), x.as_slice());
    }

    #[test]
    fn conv2d_1x1_all_ones_sums_channels() {
        // per-pixel summation oracle over Cin=2
        let x: Vec<f64> = (0..2 * 9).map(|v| v as f64 * 0.5).collect();
        let mut tape = Tape::new();
        let xv = tape.leaf(t(&[1, 2, 3, 3], &x));
        let wv = tape.leaf(Tensor::filled(vec![1, 2, 1, 1], 1.0));
        let bv = tape.leaf(Tensor::zeros(vec![1]));
        let y = tape.conv2d(xv, wv, bv, 1, 0).unwrap();
        for p in 0..9 {
            assert_eq!(tape.value(y).data()[p], x[p] + x[9 + p]);
        }
    }

    #[test]
    fn conv2d_rejects_channel_mismatch_and_bad_kernel() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 3, 4, 4]));
        let w = tape.leaf(Tensor::zeros(vec![8, 4, 3, 3]));
        let b = tape.leaf(Tensor::zeros(vec![8]));
        assert!(tape.conv2d(x, w, b, 1, 1).is_err());
        let w5 = tape.leaf(Tensor::zeros(vec![8, 3, 5, 5]));
        let b5 = tape.leaf(Tensor::zeros(vec![8]));
        assert!(tape.conv2d(x, w5, b5, 1, 2).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[0.0, 0.0]));
        let y = tape.softmax_lastdim(x);
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        let x2 = tape.leaf(t(&[2], &[3.0f64.ln(), 0.0]));
        let y2 = tape.softmax_lastdim(x2);
        assert!((tape.value(y2).data()[0] - 0.75).abs() < 1e-15);
        assert!((tape.value(y2).data()[1] - 0.25).abs() < 1e-15);

        let x3 = tape.leaf(t(&[1, 1], &[17.3]));
        let y3 = tape.softmax_lastdim(x3);
        assert_eq!(tape.value(y3).data(), &[1.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_stay_in_unit_interval() {
        let data: Vec<f64> = (0..60).map(|v| ((v * 37) % 23) as f64 * 8.0 - 80.0).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4, 3, 5], &data));
        let y = tape.softmax_lastdim(x);
        for row in tape.value(y).data().chunks_exact(5) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.0, -2.0, 3.0]));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data()[0], 0.5);
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 3.0]);
        let z = tape.leaf(Tensor::zeros(vec![3]));
        let m = tape.mul(x, z).unwrap();
        assert_eq!(tape.value(m).data(), &[0.0; 3]);
        let bad = tape.leaf(Tensor::zeros(vec![4]));
        assert!(tape.add(x, bad).is_err());
    }

    #[test]
    fn concat_channels_contract() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::filled(vec![1, 64, 8, 8], 1.0));
        let b = tape.leaf(Tensor::filled(vec![1, 64, 8, 8], 2.0));
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(c), &[1, 128, 8, 8]);
        // first C1 channels are exactly a
        assert!(tape.value(c).data()[..64 * 64].iter().all(|&v| v == 1.0));
        assert!(tape.value(c).data()[64 * 64..].iter().all(|&v| v == 2.0));

        let empty = tape.leaf(Tensor::zeros(vec![1, 0, 8, 8]));
        let same = tape.concat_channels(a, empty).unwrap();
        assert_eq!(tape.value(same).data(), tape.value(a).data());

        let wrong = tape.leaf(Tensor::zeros(vec![1, 4, 4, 8]));
        assert!(tape.concat_channels(a, wrong).is_err());
    }

    #[test]
    fn pixel_shuffle_shapes_and_inverse() {
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 4, 2, 2], &data));
        let y = tape.pixel_shuffle(x, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 4, 4]);
        let back = tape.pixel_unshuffle(y, 2).unwrap();
        assert_eq!(tape.value(back).data(), data.as_slice());

        let same = tape.pixel_shuffle(x, 1).unwrap();
        assert_eq!(tape.value(same).data(), data.as_slice());

        let bad = tape.leaf(Tensor::zeros(vec![1, 3, 2, 2]));
        assert!(tape.pixel_shuffle(bad, 2).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let gamma = tape.leaf(Tensor::filled(vec![4], 1.0));
        let beta = tape.leaf(Tensor::zeros(vec![4]));
        let cst = tape.leaf(Tensor::filled(vec![2, 4], 3.7));
        let y = tape.layer_norm(cst, gamma, beta, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let eps = 1e-5;
        let g2 = tape.leaf(Tensor::filled(vec![2], 1.0));
        let b2 = tape.leaf(Tensor::zeros(vec![2]));
        let x2 = tape.leaf(t(&[2], &[1.0, -1.0]));
        let y2 = tape.layer_norm(x2, g2, b2, eps).unwrap();
        let want = 1.0 / (1.0 + eps).sqrt();
        assert!((tape.value(y2).data()[0] - want).abs() < 1e-15);
        assert!((tape.value(y2).data()[1] + want).abs() < 1e-15);

        // beta shifts the output mean
        let beta_s = tape.leaf(t(&[2], &[0.25, 0.25]));
        let y3 = tape.layer_norm(x2, g2, beta_s, eps).unwrap();
        let mean: f64 = tape.value(y3).data().iter().sum::<f64>() / 2.0;
        assert!((mean - 0.25).abs() < 1e-12);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0]).with_grad());
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_quadratic_gives_2x() {
        let data = [1.0, -2.0, 0.5, 3.0];
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &data).with_grad());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        for (gi, xi) in g.iter().zip(&data) {
            assert!((gi - 2.0 * xi).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_accumulates_over_reuse() {
        // x used twice must receive the sum of both branch gradients,
        // matching a construction with duplicated inputs.
        let data = [0.3, -1.2, 2.5];
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &data).with_grad());
        let y = tape.add(x, x).unwrap();
        let sq = tape.mul(y, x).unwrap(); // 2x^2, uses x a third time
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        let reused = tape.grad(x).unwrap().to_vec();

        let mut tape2 = Tape::new();
        let x1 = tape2.leaf(t(&[3], &data).with_grad());
        let x2 = tape2.leaf(t(&[3], &data).with_grad());
        let x3 = tape2.leaf(t(&[3], &data).with_grad());
        let y2 = tape2.add(x1, x2).unwrap();
        let sq2 = tape2.mul(y2, x3).unwrap();
        let s2 = tape2.sum_all(sq2);
        tape2.backward(s2).unwrap();
        for i in 0..3 {
            let split = tape2.grad(x1).unwrap()[i] + tape2.grad(x2).unwrap()[i]
                + tape2.grad(x3).unwrap()[i];
            assert!((reused[i] - split).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(TensorError::NonScalarLoss { .. })));

        let mut tape2 = Tape::new();
        let c = tape2.leaf(t(&[2], &[1.0, 2.0]));
        let s = tape2.sum_all(c);
        assert!(matches!(tape2.backward(s), Err(TensorError::DetachedLoss)));
    }

    #[test]
    fn disconnected_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_grad());
        let unused = tape.leaf(t(&[3], &[1.0, 1.0, 1.0]).with_grad());
        let s = tape.sum_all(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn f32_precision_rounds_values() {
        let mut tape = Tape::with_precision(Precision::F32);
        let v = 0.1f64; // not representable in f32
        let x = tape.leaf(t(&[1], &[v]));
        assert_eq!(tape.value(x).data()[0], 0.1f32 as f64);
        let y = tape.scale(x, 3.0);
        assert_eq!(tape.value(y).data()[0], (0.1f32 as f64 * 3.0) as f32 as f64);
    }

    #[test]
    fn add_bcast_repeats_trailing_suffix() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2, 2, 3]));
        let b = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.add_bcast(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let bad = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(tape.add_bcast(x, bad).is_err());
    }

    #[test]
    fn transpose_last2_is_matrix_transpose() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.transpose_last2(x).unwrap();
        assert_eq!(tape.shape(y), &[3, 2]);
        assert_eq!(tape.value(y).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}

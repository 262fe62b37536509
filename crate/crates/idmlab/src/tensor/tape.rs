//! Gradient tape: records primitive ops in forward order, replays them in
//! reverse for vector-Jacobian products.
//!
//! Every op validates shapes up front and checks its output for NaN/Inf
//! before it is admitted to the tape. A tape belongs to one thread; the
//! `Tensor` values it hands out are immutable.

use crate::error::{Error, Result};
use crate::tensor::{check_finite, Tensor};

/// Handle to a node on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug)]
struct Conv2dMeta {
    input: usize,
    kernel: usize,
    bias: Option<usize>,
    stride: usize,
    pad: usize,
    // [n, c_in, h_in, w_in, c_out, kh, kw, h_out, w_out]
    dims: [usize; 9],
}

#[derive(Debug)]
struct Conv1dMeta {
    input: usize,
    weight: usize,
    bias: Option<usize>,
    dilation: usize,
    // [c_in, t, c_out, k]
    dims: [usize; 4],
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    MulScalar { x: usize, s: usize },
    Affine { w: usize, x: usize, b: Option<usize>, rows: usize, cols: usize },
    Conv2d(Conv2dMeta),
    CausalConv1d(Conv1dMeta),
    Bilinear { map: usize, coords: usize, c: usize, h: usize, w: usize },
    Softmax { x: usize, temp: f64 },
    LeakyRelu { x: usize, slope: f64 },
    Sigmoid { x: usize },
    Tanh { x: usize },
    Softplus { x: usize },
    Abs { x: usize },
    Mean { x: usize },
    Sum { x: usize },
    Concat { parts: Vec<usize> },
    Slice { x: usize, start: usize, len: usize },
    Reshape { x: usize },
    Transpose2d { x: usize, rows: usize, cols: usize },
    /// `cell_weights` is the normalized pooling grid actually applied
    /// (uniform fallback already folded in), so backward is a plain scatter.
    MaskedPool { map: usize, cell_weights: Vec<f64> },
    Lincomb { parts: Vec<usize>, weights: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    /// Whether any gradient leaf is reachable below this node; backward
    /// skips contributions into subgraphs that cannot need them.
    needs_grad: bool,
}

/// Ordered record of primitive ops with the inputs saved for backward.
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`GradTape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// Gradient for a node, or `None` if no path reached it.
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    /// Gradient for a node, zeros when nothing flowed to it.
    pub fn of(&self, id: TensorId) -> Vec<f64> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.sizes[id.0]],
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Default for GradTape {
    fn default() -> Self {
        Self::new()
    }
}

impl GradTape {
    pub fn new() -> Self {
        GradTape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Register a tensor as a tape leaf (parameter or input).
    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        self.push(t, Op::Leaf)
    }

    /// Leaf that never receives gradient (plain data).
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<TensorId> {
        Ok(self.leaf(Tensor::new(data, shape)?))
    }

    fn push(&mut self, value: Tensor, op: Op) -> TensorId {
        let needs_grad = match &op {
            Op::Leaf => value.requires_grad(),
            other => self.op_parents(other).iter().any(|&p| self.nodes[p].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        TensorId(self.nodes.len() - 1)
    }

    fn op_parents(&self, op: &Op) -> Vec<usize> {
        match op {
            Op::Leaf => vec![],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Scale { x, .. }
            | Op::LeakyRelu { x, .. }
            | Op::Sigmoid { x }
            | Op::Tanh { x }
            | Op::Softplus { x }
            | Op::Abs { x }
            | Op::Mean { x }
            | Op::Sum { x }
            | Op::Softmax { x, .. }
            | Op::Slice { x, .. }
            | Op::Reshape { x }
            | Op::Transpose2d { x, .. } => vec![*x],
            Op::MulScalar { x, s } => vec![*x, *s],
            Op::Affine { w, x, b, .. } => {
                let mut v = vec![*w, *x];
                v.extend(b.iter());
                v
            }
            Op::Conv2d(m) => {
                let mut v = vec![m.input, m.kernel];
                v.extend(m.bias.iter());
                v
            }
            Op::CausalConv1d(m) => {
                let mut v = vec![m.input, m.weight];
                v.extend(m.bias.iter());
                v
            }
            Op::Bilinear { map, coords, .. } => vec![*map, *coords],
            Op::Concat { parts } => parts.clone(),
            Op::MaskedPool { map, .. } => vec![*map],
            Op::Lincomb { parts, weights } => {
                let mut v = parts.clone();
                v.push(*weights);
                v
            }
        }
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].needs_grad
    }

    fn emit(&mut self, op_name: &str, data: Vec<f64>, shape: &[usize], op: Op) -> Result<TensorId> {
        check_finite(op_name, &data)?;
        let value = Tensor::new(data, shape)?;
        Ok(self.push(value, op))
    }

    fn same_shape(&self, op: &str, a: TensorId, b: TensorId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{op}: operands {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    // ── Elementwise ──────────────────────────────────────────────────

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.emit("add", data, &shape, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.emit("sub", data, &shape, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.emit("mul", data, &shape, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| c * v).collect();
        let shape = self.value(x).shape().to_vec();
        self.emit("scale", data, &shape, Op::Scale { x: x.0, c })
    }

    /// Broadcast multiply by a scalar tensor (gradient flows to both sides).
    pub fn mul_scalar(&mut self, x: TensorId, s: TensorId) -> Result<TensorId> {
        if self.value(s).len() != 1 {
            return Err(Error::Shape(format!(
                "mul_scalar: scalar operand has shape {:?}",
                self.value(s).shape()
            )));
        }
        let sv = self.value(s).data()[0];
        let data: Vec<f64> = self.value(x).data().iter().map(|v| sv * v).collect();
        let shape = self.value(x).shape().to_vec();
        self.emit("mul_scalar", data, &shape, Op::MulScalar { x: x.0, s: s.0 })
    }

    // ── Linear maps ──────────────────────────────────────────────────

    /// out = W·x (+ b). W is [m, n], x is [n], b is [m].
    pub fn affine(&mut self, w: TensorId, x: TensorId, b: Option<TensorId>) -> Result<TensorId> {
        let ws = self.value(w).shape();
        if ws.len() != 2 {
            return Err(Error::Shape(format!("affine: weight must be 2-d, got {ws:?}")));
        }
        let (rows, cols) = (ws[0], ws[1]);
        if self.value(x).len() != cols {
            return Err(Error::Shape(format!(
                "affine: weight {:?} incompatible with input of {} elements",
                ws,
                self.value(x).len()
            )));
        }
        if let Some(bi) = b {
            if self.value(bi).len() != rows {
                return Err(Error::Shape(format!(
                    "affine: bias of {} elements, expected {rows}",
                    self.value(bi).len()
                )));
            }
        }
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        let mut out = match b {
            Some(bi) => self.value(bi).data().to_vec(),
            None => vec![0.0; rows],
        };
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wd[i * cols..(i + 1) * cols];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(xd) {
                acc += wv * xv;
            }
            *o += acc;
        }
        self.emit(
            "affine",
            out,
            &[rows],
            Op::Affine { w: w.0, x: x.0, b: b.map(|t| t.0), rows, cols },
        )
    }

    /// 2-D convolution over NCHW input with OIHW kernel, zero padding.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        if stride == 0 {
            return Err(Error::Param("conv2d: stride must be positive".into()));
        }
        let is = self.value(input).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        if is.len() != 4 || ks.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d: expected NCHW input and OIHW kernel, got {is:?} and {ks:?}"
            )));
        }
        let (n, c_in, h_in, w_in) = (is[0], is[1], is[2], is[3]);
        let (c_out, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c_in {
            return Err(Error::Shape(format!(
                "conv2d: kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if kh > h_in + 2 * padding || kw > w_in + 2 * padding {
            return Err(Error::Shape(format!(
                "conv2d: kernel {kh}x{kw} exceeds padded input {}x{}",
                h_in + 2 * padding,
                w_in + 2 * padding
            )));
        }
        if let Some(bi) = bias {
            if self.value(bi).len() != c_out {
                return Err(Error::Shape(format!(
                    "conv2d: bias of {} elements, expected {c_out}",
                    self.value(bi).len()
                )));
            }
        }
        let h_out = (h_in + 2 * padding - kh) / stride + 1;
        let w_out = (w_in + 2 * padding - kw) / stride + 1;

        let xd = self.value(input).data();
        let wd = self.value(kernel).data();
        let bd = bias.map(|bi| self.value(bi).data().to_vec());
        let mut out = vec![0.0; n * c_out * h_out * w_out];
        for ni in 0..n {
            for o in 0..c_out {
                let base_b = bd.as_ref().map_or(0.0, |b| b[o]);
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        let mut acc = base_b;
                        for c in 0..c_in {
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h_in as isize {
                                    continue;
                                }
                                let in_row = ((ni * c_in + c) * h_in + iy as usize) * w_in;
                                let k_row = ((o * c_in + c) * kh + ky) * kw;
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w_in as isize {
                                        continue;
                                    }
                                    // Masked inputs are mostly zeros; skipping
                                    // them saves most of the stage-1 work.
                                    let xv = xd[in_row + ix as usize];
                                    if xv != 0.0 {
                                        acc += wd[k_row + kx] * xv;
                                    }
                                }
                            }
                        }
                        out[((ni * c_out + o) * h_out + oy) * w_out + ox] = acc;
                    }
                }
            }
        }
        self.emit(
            "conv2d",
            out,
            &[n, c_out, h_out, w_out],
            Op::Conv2d(Conv2dMeta {
                input: input.0,
                kernel: kernel.0,
                bias: bias.map(|t| t.0),
                stride,
                pad: padding,
                dims: [n, c_in, h_in, w_in, c_out, kh, kw, h_out, w_out],
            }),
        )
    }

    /// Causal dilated 1-D convolution: input [C, T] -> [O, T], left-padded so
    /// output index t never reads inputs later than t.
    pub fn conv1d_causal(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        dilation: usize,
    ) -> Result<TensorId> {
        if dilation == 0 {
            return Err(Error::Param("conv1d_causal: dilation must be positive".into()));
        }
        let is = self.value(input).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        if is.len() != 2 || ws.len() != 3 {
            return Err(Error::Shape(format!(
                "conv1d_causal: expected [C,T] input and [O,C,k] weight, got {is:?} and {ws:?}"
            )));
        }
        let (c_in, t_len) = (is[0], is[1]);
        let (c_out, wc, k) = (ws[0], ws[1], ws[2]);
        if wc != c_in {
            return Err(Error::Shape(format!(
                "conv1d_causal: weight expects {wc} channels, input has {c_in}"
            )));
        }
        if let Some(bi) = bias {
            if self.value(bi).len() != c_out {
                return Err(Error::Shape(format!(
                    "conv1d_causal: bias of {} elements, expected {c_out}",
                    self.value(bi).len()
                )));
            }
        }
        let xd = self.value(input).data();
        let wd = self.value(weight).data();
        let bd = bias.map(|bi| self.value(bi).data().to_vec());
        let mut out = vec![0.0; c_out * t_len];
        for o in 0..c_out {
            let base_b = bd.as_ref().map_or(0.0, |b| b[o]);
            for t in 0..t_len {
                let mut acc = base_b;
                for c in 0..c_in {
                    for j in 0..k {
                        // Tap j = k-1 reads the current step; smaller j reach back.
                        let back = (k - 1 - j) * dilation;
                        if back > t {
                            continue;
                        }
                        acc += wd[(o * c_in + c) * k + j] * xd[c * t_len + (t - back)];
                    }
                }
                out[o * t_len + t] = acc;
            }
        }
        self.emit(
            "conv1d_causal",
            out,
            &[c_out, t_len],
            Op::CausalConv1d(Conv1dMeta {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|t| t.0),
                dilation,
                dims: [c_in, t_len, c_out, k],
            }),
        )
    }

    /// Sample `map` [C,H,W] at real-valued pixel coords [2,H,W]
    /// (channel 0 = x/col, channel 1 = y/row). Out-of-range coordinates are
    /// clamped to the border; gradient flows to both map and coords.
    pub fn bilinear_sample(&mut self, map: TensorId, coords: TensorId) -> Result<TensorId> {
        let ms = self.value(map).shape().to_vec();
        let cs = self.value(coords).shape().to_vec();
        if ms.len() != 3 {
            return Err(Error::Shape(format!("bilinear_sample: map must be CxHxW, got {ms:?}")));
        }
        if cs.len() != 3 || cs[0] != 2 || cs[1] != ms[1] || cs[2] != ms[2] {
            return Err(Error::Shape(format!(
                "bilinear_sample: coords {cs:?} must be [2,{},{}]",
                ms[1], ms[2]
            )));
        }
        let (c_n, h, w) = (ms[0], ms[1], ms[2]);
        let md = self.value(map).data();
        let cd = self.value(coords).data();
        let mut out = vec![0.0; c_n * h * w];
        for iy in 0..h {
            for ix in 0..w {
                let p = iy * w + ix;
                let (x0, x1, fx) = interp_axis(cd[p], w);
                let (y0, y1, fy) = interp_axis(cd[h * w + p], h);
                for c in 0..c_n {
                    let plane = c * h * w;
                    let v00 = md[plane + y0 * w + x0];
                    let v01 = md[plane + y0 * w + x1];
                    let v10 = md[plane + y1 * w + x0];
                    let v11 = md[plane + y1 * w + x1];
                    out[plane + p] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01)
                        + fy * ((1.0 - fx) * v10 + fx * v11);
                }
            }
        }
        self.emit(
            "bilinear_sample",
            out,
            &[c_n, h, w],
            Op::Bilinear { map: map.0, coords: coords.0, c: c_n, h, w },
        )
    }

    // ── Nonlinearities and reductions ────────────────────────────────

    /// Temperature softmax over a vector; shift-invariant by max subtraction.
    pub fn softmax(&mut self, logits: TensorId, temperature: f64) -> Result<TensorId> {
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(Error::Param(format!(
                "softmax: temperature must be positive and finite, got {temperature}"
            )));
        }
        let xd = self.value(logits).data();
        let m = xd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xd.iter().map(|v| ((v - m) / temperature).exp()).collect();
        let z: f64 = exps.iter().sum();
        let data: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let shape = self.value(logits).shape().to_vec();
        self.emit("softmax", data, &shape, Op::Softmax { x: logits.0, temp: temperature })
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: f64) -> Result<TensorId> {
        let data: Vec<f64> =
            self.value(x).data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let shape = self.value(x).shape().to_vec();
        self.emit("leaky_relu", data, &shape, Op::LeakyRelu { x: x.0, slope })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| stable_sigmoid(v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.emit("sigmoid", data, &shape, Op::Sigmoid { x: x.0 })
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let shape = self.value(x).shape().to_vec();
        self.emit("tanh", data, &shape, Op::Tanh { x: x.0 })
    }

    pub fn softplus(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| stable_softplus(v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.emit("softplus", data, &shape, Op::Softplus { x: x.0 })
    }

    pub fn abs(&mut self, x: TensorId) -> Result<TensorId> {
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v.abs()).collect();
        let shape = self.value(x).shape().to_vec();
        self.emit("abs", data, &shape, Op::Abs { x: x.0 })
    }

    pub fn mean(&mut self, x: TensorId) -> Result<TensorId> {
        let xd = self.value(x).data();
        let v = xd.iter().sum::<f64>() / xd.len() as f64;
        self.emit("mean", vec![v], &[1], Op::Mean { x: x.0 })
    }

    pub fn sum(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.value(x).data().iter().sum::<f64>();
        self.emit("sum", vec![v], &[1], Op::Sum { x: x.0 })
    }

    // ── Structure ────────────────────────────────────────────────────

    /// Concatenate tensors into one flat vector, in argument order.
    pub fn concat(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Param("concat: no parts".into()));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let n = data.len();
        self.emit("concat", data, &[n], Op::Concat { parts: parts.iter().map(|p| p.0).collect() })
    }

    /// Flat contiguous slice of a tensor, as a vector.
    pub fn slice(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let n = self.value(x).len();
        if start + len > n {
            return Err(Error::Shape(format!(
                "slice: range {start}..{} out of bounds for {n} elements",
                start + len
            )));
        }
        let data = self.value(x).data()[start..start + len].to_vec();
        self.emit("slice", data, &[len], Op::Slice { x: x.0, start, len })
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        if numel(shape) != self.value(x).len() {
            return Err(Error::Shape(format!(
                "reshape: {} elements cannot take shape {shape:?}",
                self.value(x).len()
            )));
        }
        let data = self.value(x).data().to_vec();
        self.emit("reshape", data, shape, Op::Reshape { x: x.0 })
    }

    /// Transpose a 2-d tensor [r, c] -> [c, r].
    pub fn transpose2d(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose2d: expected 2-d tensor, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xd = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = xd[i * c + j];
            }
        }
        self.emit("transpose2d", data, &[c, r], Op::Transpose2d { x: x.0, rows: r, cols: c })
    }

    /// Weighted average pool of a [C,H,W] map under a fixed [0,1] weight grid.
    /// Falls back to uniform pooling when the grid mass is below 1e-9; the
    /// returned flag reports that fallback.
    pub fn masked_pool(&mut self, map: TensorId, weights: &[f64]) -> Result<(TensorId, bool)> {
        let ms = self.value(map).shape().to_vec();
        if ms.len() != 3 {
            return Err(Error::Shape(format!("masked_pool: map must be CxHxW, got {ms:?}")));
        }
        let (c_n, h, w) = (ms[0], ms[1], ms[2]);
        if weights.len() != h * w {
            return Err(Error::Shape(format!(
                "masked_pool: weight grid has {} cells, map is {h}x{w}",
                weights.len()
            )));
        }
        let mass: f64 = weights.iter().sum();
        let empty = mass < 1e-9;
        let cell_weights: Vec<f64> = if empty {
            vec![1.0 / (h * w) as f64; h * w]
        } else {
            weights.iter().map(|v| v / mass).collect()
        };
        let md = self.value(map).data();
        let mut out = vec![0.0; c_n];
        for (c, o) in out.iter_mut().enumerate() {
            let plane = &md[c * h * w..(c + 1) * h * w];
            let mut acc = 0.0;
            for (v, cw) in plane.iter().zip(&cell_weights) {
                acc += v * cw;
            }
            *o = acc;
        }
        let id = self.emit("masked_pool", out, &[c_n], Op::MaskedPool { map: map.0, cell_weights })?;
        Ok((id, empty))
    }

    /// out = Σ_i weights[i] · parts[i]; all parts share one shape,
    /// weights is a vector of matching length.
    pub fn lincomb(&mut self, parts: &[TensorId], weights: TensorId) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Param("lincomb: no parts".into()));
        }
        if self.value(weights).len() != parts.len() {
            return Err(Error::Shape(format!(
                "lincomb: {} weights for {} parts",
                self.value(weights).len(),
                parts.len()
            )));
        }
        let shape = self.value(parts[0]).shape().to_vec();
        for p in parts {
            if self.value(*p).shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "lincomb: part shape {:?} differs from {:?}",
                    self.value(*p).shape(),
                    shape
                )));
            }
        }
        let wd = self.value(weights).data().to_vec();
        let mut out = vec![0.0; numel(&shape)];
        for (i, p) in parts.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(self.value(*p).data()) {
                *o += wd[i] * v;
            }
        }
        self.emit(
            "lincomb",
            out,
            &shape,
            Op::Lincomb { parts: parts.iter().map(|p| p.0).collect(), weights: weights.0 },
        )
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Visits every recorded op at most
    /// once, in strict reverse recording order.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Param(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let sizes = self.nodes.iter().map(|n| n.value.len()).collect();
        Ok(Gradients { grads, sizes })
    }

    fn data_of(&self, idx: usize) -> &[f64] {
        self.nodes[idx].value.data()
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let acc = |grads: &mut [Option<Vec<f64>>], idx: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[idx].needs_grad {
                return;
            }
            let buf = grads[idx].get_or_insert_with(|| vec![0.0; self.nodes[idx].value.len()]);
            f(buf);
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                acc(grads, *a, &mut |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += gv;
                    }
                });
                acc(grads, *b, &mut |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += gv;
                    }
                });
            }
            Op::Sub { a, b } => {
                acc(grads, *a, &mut |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += gv;
                    }
                });
                acc(grads, *b, &mut |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv -= gv;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (self.data_of(*a).to_vec(), self.data_of(*b).to_vec());
                acc(grads, *a, &mut |d| {
                    for ((dv, gv), bv) in d.iter_mut().zip(g).zip(&bd) {
                        *dv += gv * bv;
                    }
                });
                acc(grads, *b, &mut |d| {
                    for ((dv, gv), av) in d.iter_mut().zip(g).zip(&ad) {
                        *dv += gv * av;
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                acc(grads, *x, &mut |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += c * gv;
                    }
                });
            }
            Op::MulScalar { x, s } => {
                let sv = self.data_of(*s)[0];
                let xd = self.data_of(*x).to_vec();
                acc(grads, *x, &mut |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += sv * gv;
                    }
                });
                let dot: f64 = g.iter().zip(&xd).map(|(gv, xv)| gv * xv).sum();
                acc(grads, *s, &mut |d| d[0] += dot);
            }
            Op::Affine { w, x, b, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                let wd = self.data_of(*w).to_vec();
                let xd = self.data_of(*x).to_vec();
                acc(grads, *w, &mut |d| {
                    for r in 0..rows {
                        for (cidx, xv) in xd.iter().enumerate() {
                            d[r * cols + cidx] += g[r] * xv;
                        }
                    }
                });
                acc(grads, *x, &mut |d| {
                    for (r, gv) in g.iter().enumerate() {
                        for (cidx, dv) in d.iter_mut().enumerate() {
                            *dv += wd[r * cols + cidx] * gv;
                        }
                    }
                });
                if let Some(bi) = b {
                    acc(grads, *bi, &mut |d| {
                        for (dv, gv) in d.iter_mut().zip(g) {
                            *dv += gv;
                        }
                    });
                }
            }
            Op::Conv2d(m) => self.backprop_conv2d(m, g, grads),
            Op::CausalConv1d(m) => self.backprop_conv1d(m, g, grads),
            Op::Bilinear { map, coords, c, h, w } => {
                self.backprop_bilinear(*map, *coords, *c, *h, *w, g, grads)
            }
            Op::Softmax { x, temp } => {
                let y = self.data_of(i).to_vec();
                let dot: f64 = g.iter().zip(&y).map(|(gv, yv)| gv * yv).sum();
                let t = *temp;
                acc(grads, *x, &mut |d| {
                    for ((dv, gv), yv) in d.iter_mut().zip(g).zip(&y) {
                        *dv += yv * (gv - dot) / t;
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xd = self.data_of(*x).to_vec();
                let s = *slope;
                acc(grads, *x, &mut |d| {
                    for ((dv, gv), xv) in d.iter_mut().zip(g).zip(&xd) {
                        *dv += gv * if *xv > 0.0 { 1.0 } else { s };
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = self.data_of(i).to_vec();
                acc(grads, *x, &mut |d| {
                    for ((dv, gv), yv) in d.iter_mut().zip(g).zip(&y) {
                        *dv += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Tanh { x } => {
                let y = self.data_of(i).to_vec();
                acc(grads, *x, &mut |d| {
                    for ((dv, gv), yv) in d.iter_mut().zip(g).zip(&y) {
                        *dv += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Softplus { x } => {
                let xd = self.data_of(*x).to_vec();
                acc(grads, *x, &mut |d| {
                    for ((dv, gv), xv) in d.iter_mut().zip(g).zip(&xd) {
                        *dv += gv * stable_sigmoid(*xv);
                    }
                });
            }
            Op::Abs { x } => {
                let xd = self.data_of(*x).to_vec();
                acc(grads, *x, &mut |d| {
                    for ((dv, gv), xv) in d.iter_mut().zip(g).zip(&xd) {
                        *dv += gv * sign_zero(*xv);
                    }
                });
            }
            Op::Mean { x } => {
                let n = self.nodes[*x].value.len() as f64;
                let gv = g[0] / n;
                acc(grads, *x, &mut |d| {
                    for dv in d.iter_mut() {
                        *dv += gv;
                    }
                });
            }
            Op::Sum { x } => {
                let gv = g[0];
                acc(grads, *x, &mut |d| {
                    for dv in d.iter_mut() {
                        *dv += gv;
                    }
                });
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[*p].value.len();
                    let seg = &g[offset..offset + len];
                    acc(grads, *p, &mut |d| {
                        for (dv, gv) in d.iter_mut().zip(seg) {
                            *dv += gv;
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, start, len } => {
                let (start, len) = (*start, *len);
                acc(grads, *x, &mut |d| {
                    for j in 0..len {
                        d[start + j] += g[j];
                    }
                });
            }
            Op::Reshape { x } => {
                acc(grads, *x, &mut |d| {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += gv;
                    }
                });
            }
            Op::Transpose2d { x, rows, cols } => {
                let (r, c) = (*rows, *cols);
                acc(grads, *x, &mut |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::MaskedPool { map, cell_weights } => {
                let hw = cell_weights.len();
                let cw = cell_weights.clone();
                acc(grads, *map, &mut |d| {
                    for (c, gv) in g.iter().enumerate() {
                        let plane = &mut d[c * hw..(c + 1) * hw];
                        for (dv, wv) in plane.iter_mut().zip(&cw) {
                            *dv += gv * wv;
                        }
                    }
                });
            }
            Op::Lincomb { parts, weights } => {
                let wd = self.data_of(*weights).to_vec();
                for (j, p) in parts.iter().enumerate() {
                    let wj = wd[j];
                    acc(grads, *p, &mut |d| {
                        for (dv, gv) in d.iter_mut().zip(g) {
                            *dv += wj * gv;
                        }
                    });
                }
                if self.wants(*weights) {
                    let dots: Vec<f64> = parts
                        .iter()
                        .map(|p| self.data_of(*p).iter().zip(g).map(|(v, gv)| v * gv).sum())
                        .collect();
                    acc(grads, *weights, &mut |d| {
                        for (dv, dot) in d.iter_mut().zip(&dots) {
                            *dv += dot;
                        }
                    });
                }
            }
        }
    }

    fn backprop_conv2d(&self, m: &Conv2dMeta, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [n, c_in, h_in, w_in, c_out, kh, kw, h_out, w_out] = m.dims;
        let want_in = self.wants(m.input);
        let want_w = self.wants(m.kernel);
        let want_b = m.bias.is_some_and(|bi| self.wants(bi));
        if !want_in && !want_w && !want_b {
            return;
        }
        let xd = self.data_of(m.input);
        let wd = self.data_of(m.kernel);

        let mut d_in = vec![0.0; if want_in { n * c_in * h_in * w_in } else { 0 }];
        let mut d_w = vec![0.0; if want_w { c_out * c_in * kh * kw } else { 0 }];
        let mut d_b = vec![0.0; c_out];
        for ni in 0..n {
            for o in 0..c_out {
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        let gv = g[((ni * c_out + o) * h_out + oy) * w_out + ox];
                        if gv == 0.0 {
                            continue;
                        }
                        d_b[o] += gv;
                        for c in 0..c_in {
                            for ky in 0..kh {
                                let iy = (oy * m.stride + ky) as isize - m.pad as isize;
                                if iy < 0 || iy >= h_in as isize {
                                    continue;
                                }
                                let in_row = ((ni * c_in + c) * h_in + iy as usize) * w_in;
                                let k_row = ((o * c_in + c) * kh + ky) * kw;
                                for kx in 0..kw {
                                    let ix = (ox * m.stride + kx) as isize - m.pad as isize;
                                    if ix < 0 || ix >= w_in as isize {
                                        continue;
                                    }
                                    if want_in {
                                        d_in[in_row + ix as usize] += gv * wd[k_row + kx];
                                    }
                                    if want_w {
                                        d_w[k_row + kx] += gv * xd[in_row + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if want_in {
            add_grad(grads, m.input, &d_in);
        }
        if want_w {
            add_grad(grads, m.kernel, &d_w);
        }
        if want_b {
            add_grad(grads, m.bias.unwrap(), &d_b);
        }
    }

    fn backprop_conv1d(&self, m: &Conv1dMeta, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [c_in, t_len, c_out, k] = m.dims;
        let want_in = self.wants(m.input);
        let want_w = self.wants(m.weight);
        let want_b = m.bias.is_some_and(|bi| self.wants(bi));
        if !want_in && !want_w && !want_b {
            return;
        }
        let xd = self.data_of(m.input);
        let wd = self.data_of(m.weight);
        let mut d_in = vec![0.0; if want_in { c_in * t_len } else { 0 }];
        let mut d_w = vec![0.0; if want_w { c_out * c_in * k } else { 0 }];
        let mut d_b = vec![0.0; c_out];
        for o in 0..c_out {
            for t in 0..t_len {
                let gv = g[o * t_len + t];
                if gv == 0.0 {
                    continue;
                }
                d_b[o] += gv;
                for c in 0..c_in {
                    for j in 0..k {
                        let back = (k - 1 - j) * m.dilation;
                        if back > t {
                            continue;
                        }
                        if want_in {
                            d_in[c * t_len + (t - back)] += gv * wd[(o * c_in + c) * k + j];
                        }
                        if want_w {
                            d_w[(o * c_in + c) * k + j] += gv * xd[c * t_len + (t - back)];
                        }
                    }
                }
            }
        }
        if want_in {
            add_grad(grads, m.input, &d_in);
        }
        if want_w {
            add_grad(grads, m.weight, &d_w);
        }
        if want_b {
            add_grad(grads, m.bias.unwrap(), &d_b);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_bilinear(
        &self,
        map: usize,
        coords: usize,
        c_n: usize,
        h: usize,
        w: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let want_map = self.wants(map);
        let want_coords = self.wants(coords);
        if !want_map && !want_coords {
            return;
        }
        let md = self.data_of(map);
        let cd = self.data_of(coords);
        let mut d_map = vec![0.0; if want_map { c_n * h * w } else { 0 }];
        let mut d_coords = vec![0.0; if want_coords { 2 * h * w } else { 0 }];
        for iy in 0..h {
            for ix in 0..w {
                let p = iy * w + ix;
                let xq = cd[p];
                let yq = cd[h * w + p];
                let (x0, x1, fx) = interp_axis(xq, w);
                let (y0, y1, fy) = interp_axis(yq, h);
                // Clamp saturates: no coordinate gradient outside the map.
                let x_active = (0.0..=(w - 1) as f64).contains(&xq) && w > 1;
                let y_active = (0.0..=(h - 1) as f64).contains(&yq) && h > 1;
                for c in 0..c_n {
                    let plane = c * h * w;
                    let gv = g[plane + p];
                    if gv == 0.0 {
                        continue;
                    }
                    if want_map {
                        d_map[plane + y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                        d_map[plane + y0 * w + x1] += gv * (1.0 - fy) * fx;
                        d_map[plane + y1 * w + x0] += gv * fy * (1.0 - fx);
                        d_map[plane + y1 * w + x1] += gv * fy * fx;
                    }
                    if want_coords && (x_active || y_active) {
                        let v00 = md[plane + y0 * w + x0];
                        let v01 = md[plane + y0 * w + x1];
                        let v10 = md[plane + y1 * w + x0];
                        let v11 = md[plane + y1 * w + x1];
                        if x_active {
                            d_coords[p] += gv * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                        }
                        if y_active {
                            d_coords[h * w + p] += gv * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                        }
                    }
                }
            }
        }
        if want_map {
            add_grad(grads, map, &d_map);
        }
        if want_coords {
            add_grad(grads, coords, &d_coords);
        }
    }
}

fn add_grad(grads: &mut [Option<Vec<f64>>], idx: usize, contrib: &[f64]) {
    match &mut grads[idx] {
        Some(buf) => {
            for (dv, cv) in buf.iter_mut().zip(contrib) {
                *dv += cv;
            }
        }
        None => grads[idx] = Some(contrib.to_vec()),
    }
}

/// Clamped interpolation cell along one axis: (lower index, upper index,
/// fractional offset). Integer query positions land exactly on sources.
fn interp_axis(q: f64, extent: usize) -> (usize, usize, f64) {
    if extent == 1 {
        return (0, 0, 0.0);
    }
    let max = (extent - 1) as f64;
    let cq = q.clamp(0.0, max);
    let mut lo = cq.floor() as usize;
    if lo >= extent - 1 {
        lo = extent - 2;
    }
    (lo, lo + 1, cq - lo as f64)
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sign_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

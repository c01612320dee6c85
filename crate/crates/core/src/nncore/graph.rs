use super::kernels::{self, ConvGeom};
use super::params::{Grads, ParamId, ParamStore};
use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial resampling modes of [`Graph::resize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

/// Resampling factor. Only exact doubling and halving are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Up2,
    Down2,
}

impl Scale {
    pub fn from_factor(f: f64) -> Result<Self> {
        if f == 2.0 {
            Ok(Scale::Up2)
        } else if f == 0.5 {
            Ok(Scale::Down2)
        } else {
            Err(Error::Config(format!("unsupported resize factor {f}; expected 2 or 0.5")))
        }
    }

    pub fn apply(self, n: usize) -> usize {
        match self {
            Scale::Up2 => n * 2,
            Scale::Down2 => n / 2,
        }
    }
}

/// User-defined operator with a hand-written backward pass.
pub trait CustomOp<F: Real> {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor<F>]) -> Result<Tensor<F>>;
    /// Gradient w.r.t. each input given the output gradient.
    fn backward(&self, inputs: &[&Tensor<F>], output: &Tensor<F>, grad_out: &[F]) -> Vec<Vec<F>>;
}

enum Op<F: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    Affine { x: Var, scale: F },
    Square(Var),
    Atan(Var),
    Sigmoid(Var),
    Silu(Var),
    Exp(Var),
    ClampMin { x: Var, min: F },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Resize { x: Var, mode: ResizeMode },
    GridSample { x: Var, coords: Var },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    Concat(Vec<Var>),
    Narrow { x: Var, start: usize },
    Gather { x: Var, idx: Vec<usize> },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, k: usize },
    Sum(Var),
    Mean(Var),
    BceWithLogits { x: Var, target: Vec<F> },
    Custom { op: Box<dyn CustomOp<F>>, inputs: Vec<Var> },
}

impl<F: Real> Op<F> {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Minimum(..) => "minimum",
            Op::Maximum(..) => "maximum",
            Op::Affine { .. } => "affine",
            Op::Square(_) => "square",
            Op::Atan(_) => "atan",
            Op::Sigmoid(_) => "sigmoid",
            Op::Silu(_) => "silu",
            Op::Exp(_) => "exp",
            Op::ClampMin { .. } => "clamp_min",
            Op::Conv2d { .. } => "conv2d",
            Op::Resize { .. } => "resize",
            Op::GridSample { .. } => "grid_sample",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::SoftmaxRows(_) => "softmax",
            Op::Concat(_) => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Gather { .. } => "gather",
            Op::MaxPool { .. } => "max_pool",
            Op::AvgPool { .. } => "avg_pool",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Tape of operations in creation (hence topological) order.
///
/// A graph borrows a [`ParamStore`]; each parameter appears as at most one
/// leaf. Graphs are single-threaded; run one per worker for data
/// parallelism.
pub struct Graph<'p, F: Real> {
    nodes: Vec<Node<F>>,
    params: Option<&'p ParamStore<F>>,
    param_vars: Vec<(ParamId, Var)>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Default for Graph<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn same_shape<F: Real>(a: &Tensor<F>, b: &Tensor<F>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

fn acc<F: Real>(grads: &mut [Option<Vec<F>>], v: Var, g: impl IntoIterator<Item = F>) {
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
        slot @ None => *slot = Some(g.into_iter().collect()),
    }
}

impl<'p, F: Real> Graph<'p, F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: None, param_vars: Vec::new(), grads: Vec::new() }
    }

    pub fn with_params(params: &'p ParamStore<F>) -> Self {
        Self { params: Some(params), ..Self::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input leaf that accumulates a gradient.
    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let store = self.params.expect("graph was built without a parameter store");
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.param_vars.push((id, v));
        v
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(F, F) -> F, op: Op<F>) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape(ta, tb, name)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let tx = &self.nodes[x.0].value;
        let t = Tensor::new(tx.shape(), tx.data().iter().map(|v| f(*v)).collect()).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "minimum", F::min, Op::Minimum(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "maximum", F::max, Op::Maximum(a, b))
    }

    /// `scale · x + shift` with scalar constants.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (F::of(scale), F::of(shift));
        self.unary(x, move |v| s * v + b, Op::Affine { x, scale: s })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn atan(&mut self, x: Var) -> Var {
        self.unary(x, F::atan, Op::Atan(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, F::exp, Op::Exp(x))
    }

    pub fn clamp_min(&mut self, x: Var, min: f64) -> Var {
        let m = F::of(min);
        self.unary(x, move |v| v.max(m), Op::ClampMin { x, min: m })
    }

    /// Cross-correlation of `x: [C_in,H,W]` with `w: [C_out,C_in,k,k]` and an
    /// optional per-output-channel bias `[C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, h, wd) = self.value(x).chw()?;
        let ws = self.shape(w).to_vec();
        let [c_out, wc_in, k, k2] = ws[..] else {
            return Err(shape_err!("conv2d kernel must be [C_out,C_in,k,k], got {ws:?}"));
        };
        if wc_in != c_in {
            return Err(shape_err!("conv2d channel mismatch: input has {c_in}, kernel expects {wc_in}"));
        }
        if k != k2 || k % 2 == 0 {
            return Err(shape_err!("conv2d kernel must be square with odd size, got {k}x{k2}"));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::Config(format!("conv2d stride must be 1 or 2, got {stride}")));
        }
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err!("conv2d input {h}x{wd} smaller than kernel {k} with pad {pad}"));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(shape_err!("conv2d bias must be [{c_out}], got {:?}", self.shape(b)));
            }
        }
        let geom = ConvGeom { c_in, h, w: wd, c_out, k, stride, pad };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let (ho, wo) = geom.out_hw();
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Tensor::new(&[c_out, ho, wo], out)?, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Doubles or halves the spatial size of `x: [C,H,W]`.
    ///
    /// Bilinear mode uses the half-pixel (align-corners false) convention and
    /// shares its sampling kernel with [`Graph::grid_sample`], so resampling on
    /// the fixed grid through either path gives identical bits.
    pub fn resize(&mut self, x: Var, scale: Scale, mode: ResizeMode) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if scale == Scale::Down2 && (h % 2 != 0 || w % 2 != 0) {
            return Err(shape_err!("resize by 0.5 needs even spatial dims, got {h}x{w}"));
        }
        let (ho, wo) = (scale.apply(h), scale.apply(w));
        let xd = self.value(x).data();
        let out = match mode {
            ResizeMode::Nearest => kernels::nearest_forward(xd, c, h, w, ho, wo),
            ResizeMode::Bilinear => kernels::grid_sample_forward(xd, c, h, w, &kernels::base_grid::<F>(ho, wo)),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[c, ho, wo], out)?, Op::Resize { x, mode }, rg))
    }

    /// Bilinear sampling of `x: [C,H,W]` at normalised `coords: [Ho,Wo,2]`
    /// (`(x, y)` pairs in `[-1,1]`, pixel centres at half-pixel offsets).
    /// Coordinates outside the image clamp to the border.
    pub fn grid_sample(&mut self, x: Var, coords: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let cs = self.shape(coords).to_vec();
        let [ho, wo, 2] = cs[..] else {
            return Err(shape_err!("grid_sample coords must be [Ho,Wo,2], got {cs:?}"));
        };
        let out = kernels::grid_sample_forward(self.value(x).data(), c, h, w, self.value(coords).data());
        let rg = self.rg(&[x, coords]);
        Ok(self.push(Tensor::new(&[c, ho, wo], out)?, Op::GridSample { x, coords }, rg))
    }

    /// `[n,k] × [k,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ([n, k], [k2, m]) = (&sa[..], &sb[..]) else {
            return Err(shape_err!("matmul needs rank-2 operands, got {sa:?} and {sb:?}"));
        };
        if k != k2 {
            return Err(shape_err!("matmul inner dims differ: {sa:?} x {sb:?}"));
        }
        let mut out = vec![F::zero(); n * m];
        F::gemm(*n, *k, *m, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[*n, *m], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [r, c] = s[..] else {
            return Err(shape_err!("transpose needs rank 2, got {s:?}"));
        };
        let d = self.value(x).data();
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let cols = *t.shape().last().ok_or_else(|| shape_err!("softmax of a scalar"))?;
        let mut out = t.data().to_vec();
        if cols > 0 {
            for row in out.chunks_mut(cols) {
                let m = row.iter().copied().fold(F::neg_infinity(), F::max);
                let mut s = F::zero();
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s = s + *v;
                }
                row.iter_mut().for_each(|v| *v = *v / s);
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::SoftmaxRows(x), rg))
    }

    /// Concatenation along the leading (channel) dimension.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| shape_err!("concat of nothing"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for v in xs {
            let t = self.value(*v);
            if t.shape().is_empty() || t.shape()[1..] != tail[..] {
                return Err(shape_err!("concat: {:?} incompatible with trailing dims {tail:?}", t.shape()));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(&tail);
        let rg = self.rg(xs);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat(xs.to_vec()), rg))
    }

    /// Slice `[start, start+len)` of the leading dimension.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(shape_err!("narrow [{start}, {}) out of range for {s:?}", start + len));
        }
        let inner: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&shape, data)?, Op::Narrow { x, start }, rg))
    }

    /// Picks flat elements of `x` into a 1-D tensor.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let d = self.value(x).data();
        if let Some(&bad) = idx.iter().find(|&&i| i >= d.len()) {
            return Err(shape_err!("gather index {bad} out of range for {} elements", d.len()));
        }
        let data: Vec<F> = idx.iter().map(|&i| d[i]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[idx.len()], data)?, Op::Gather { x, idx }, rg))
    }

    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return Err(shape_err!("max_pool2d window {k} does not fit {h}x{w}"));
        }
        let (out, argmax, ho, wo) = kernels::max_pool_forward(self.value(x).data(), c, h, w, k, stride, pad);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[c, ho, wo], out)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Non-overlapping `k × k` average pooling; spatial dims must divide by `k`.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(shape_err!("avg_pool2d: {h}x{w} not divisible by {k}"));
        }
        let out = kernels::avg_pool_forward(self.value(x).data(), c, h, w, k);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[c, h / k, w / k], out)?, Op::AvgPool { x, k }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = F::of(t.len().max(1) as f64);
        let s = t.data().iter().copied().sum::<F>() / n;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean binary cross-entropy between `sigmoid(x)` and constant targets.
    pub fn bce_with_logits(&mut self, x: Var, target: Vec<F>) -> Result<Var> {
        let t = self.value(x);
        if t.len() != target.len() {
            return Err(shape_err!("bce_with_logits: {} logits, {} targets", t.len(), target.len()));
        }
        let n = F::of(t.len().max(1) as f64);
        let s: F = t
            .data()
            .iter()
            .zip(&target)
            .map(|(&z, &y)| z.max(F::zero()) - z * y + (F::one() + (-z.abs()).exp()).ln())
            .sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s / n), Op::BceWithLogits { x, target }, rg))
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp<F>>, inputs: &[Var]) -> Result<Var> {
        let ins: Vec<&Tensor<F>> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = op.forward(&ins)?;
        let rg = self.rg(inputs);
        Ok(self.push(out, Op::Custom { op, inputs: inputs.to_vec() }, rg))
    }

    /// First node (in evaluation order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<(usize, String)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| (i, n.op.name().to_string()))
    }

    pub fn op_name(&self, v: Var) -> &str {
        self.nodes[v.0].op.name()
    }

    /// Reverse-mode sweep from `root`, seeding its gradient with ones.
    /// Gradients of every visited node are retained until the next call.
    pub fn backward(&mut self, root: Var) {
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![F::one(); self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let one = F::one();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    acc(grads, *a, g.iter().copied());
                }
                if needs(*b) {
                    acc(grads, *b, g.iter().copied());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    acc(grads, *a, g.iter().copied());
                }
                if needs(*b) {
                    acc(grads, *b, g.iter().map(|v| -*v));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                if needs(*a) {
                    acc(grads, *a, g.iter().zip(tb).map(|(g, y)| *g * *y));
                }
                if needs(*b) {
                    acc(grads, *b, g.iter().zip(ta).map(|(g, x)| *g * *x));
                }
            }
            Op::Div(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                if needs(*a) {
                    acc(grads, *a, g.iter().zip(tb).map(|(g, y)| *g / *y));
                }
                if needs(*b) {
                    acc(
                        grads,
                        *b,
                        g.iter().zip(ta.iter().zip(tb)).map(|(g, (x, y))| -*g * *x / (*y * *y)),
                    );
                }
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let is_min = matches!(node.op, Op::Minimum(..));
                let (ta, tb) = (val(*a).data(), val(*b).data());
                // ties route the gradient to the first operand
                let pick_a = |x: F, y: F| if is_min { x <= y } else { x >= y };
                if needs(*a) {
                    acc(
                        grads,
                        *a,
                        g.iter().zip(ta.iter().zip(tb)).map(|(g, (x, y))| if pick_a(*x, *y) { *g } else { F::zero() }),
                    );
                }
                if needs(*b) {
                    acc(
                        grads,
                        *b,
                        g.iter().zip(ta.iter().zip(tb)).map(|(g, (x, y))| if pick_a(*x, *y) { F::zero() } else { *g }),
                    );
                }
            }
            Op::Affine { x, scale } => acc(grads, *x, g.iter().map(|v| *v * *scale)),
            Op::Square(x) => acc(grads, *x, g.iter().zip(val(*x).data()).map(|(g, v)| *g * F::of(2.0) * *v)),
            Op::Atan(x) => acc(grads, *x, g.iter().zip(val(*x).data()).map(|(g, v)| *g / (one + *v * *v))),
            Op::Sigmoid(_) | Op::Exp(_) | Op::Silu(_) | Op::ClampMin { .. } => {
                let y = node.value.data();
                match &node.op {
                    Op::Sigmoid(x) => acc(grads, *x, g.iter().zip(y).map(|(g, s)| *g * *s * (one - *s))),
                    Op::Exp(x) => acc(grads, *x, g.iter().zip(y).map(|(g, e)| *g * *e)),
                    Op::Silu(x) => acc(
                        grads,
                        *x,
                        g.iter().zip(val(*x).data()).map(|(g, v)| {
                            let s = sigmoid(*v);
                            *g * s * (one + *v * (one - s))
                        }),
                    ),
                    Op::ClampMin { x, min } => acc(
                        grads,
                        *x,
                        g.iter().zip(val(*x).data()).map(|(g, v)| if *v > *min { *g } else { F::zero() }),
                    ),
                    _ => unreachable!(),
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(val(*x).data(), val(*w).data(), g, geom, needs(*x), needs(*w));
                if let Some(dx) = dx {
                    acc(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    acc(grads, *w, dw);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        acc(grads, *b, db);
                    }
                }
            }
            Op::Resize { x, mode } => {
                let (c, h, w) = val(*x).chw().expect("validated");
                let (_, ho, wo) = node.value.chw().expect("validated");
                let dx = match mode {
                    ResizeMode::Nearest => kernels::nearest_backward(g, c, h, w, ho, wo),
                    ResizeMode::Bilinear => {
                        let grid = kernels::base_grid::<F>(ho, wo);
                        kernels::grid_sample_backward(val(*x).data(), c, h, w, &grid, g, false).0
                    }
                };
                acc(grads, *x, dx);
            }
            Op::GridSample { x, coords } => {
                let (c, h, w) = val(*x).chw().expect("validated");
                let (dx, dgrid) = kernels::grid_sample_backward(
                    val(*x).data(),
                    c,
                    h,
                    w,
                    val(*coords).data(),
                    g,
                    needs(*coords),
                );
                if needs(*x) {
                    acc(grads, *x, dx);
                }
                if let Some(dg) = dgrid {
                    acc(grads, *coords, dg);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                if needs(*a) {
                    let mut da = vec![F::zero(); n * k];
                    F::gemm(n, m, k, g, false, val(*b).data(), true, &mut da, false);
                    acc(grads, *a, da);
                }
                if needs(*b) {
                    let mut db = vec![F::zero(); k * m];
                    F::gemm(k, n, m, val(*a).data(), true, g, false, &mut db, false);
                    acc(grads, *b, db);
                }
            }
            Op::Transpose(x) => {
                let s = val(*x).shape();
                let (r, c) = (s[0], s[1]);
                let mut dx = vec![F::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Reshape(x) => acc(grads, *x, g.iter().copied()),
            Op::SoftmaxRows(x) => {
                let y = node.value.data();
                let cols = *node.value.shape().last().expect("validated");
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(cols).zip(g.chunks(cols)) {
                    let dot: F = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(y, g)| *y * (*g - dot)));
                }
                acc(grads, *x, dx);
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for v in xs {
                    let n = val(*v).len();
                    if needs(*v) {
                        acc(grads, *v, g[off..off + n].iter().copied());
                    }
                    off += n;
                }
            }
            Op::Narrow { x, start } => {
                let tx = val(*x);
                let inner: usize = tx.shape()[1..].iter().product();
                let mut dx = vec![F::zero(); tx.len()];
                dx[start * inner..start * inner + g.len()].copy_from_slice(g);
                acc(grads, *x, dx);
            }
            Op::Gather { x, idx } => {
                let mut dx = vec![F::zero(); val(*x).len()];
                for (gi, &i) in g.iter().zip(idx) {
                    dx[i] = dx[i] + *gi;
                }
                acc(grads, *x, dx);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![F::zero(); val(*x).len()];
                for (gi, &i) in g.iter().zip(argmax) {
                    dx[i] = dx[i] + *gi;
                }
                acc(grads, *x, dx);
            }
            Op::AvgPool { x, k } => {
                let (c, h, w) = val(*x).chw().expect("validated");
                acc(grads, *x, kernels::avg_pool_backward(g, c, h, w, *k));
            }
            Op::Sum(x) => {
                let n = val(*x).len();
                acc(grads, *x, std::iter::repeat_n(g[0], n));
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                let v = g[0] / F::of(n.max(1) as f64);
                acc(grads, *x, std::iter::repeat_n(v, n));
            }
            Op::BceWithLogits { x, target } => {
                let n = F::of(target.len().max(1) as f64);
                let scale = g[0] / n;
                acc(
                    grads,
                    *x,
                    val(*x).data().iter().zip(target).map(|(z, y)| (sigmoid(*z) - *y) * scale),
                );
            }
            Op::Custom { op, inputs } => {
                let ins: Vec<&Tensor<F>> = inputs.iter().map(|v| val(*v)).collect();
                let gs = op.backward(&ins, &node.value, g);
                for (v, gi) in inputs.iter().zip(gs) {
                    if needs(*v) {
                        acc(grads, *v, gi);
                    }
                }
            }
        }
    }

    /// Gradient of the last [`Graph::backward`] root w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like `v`; zeros when `v` was unreachable.
    pub fn grad_tensor(&self, v: Var) -> Tensor<F> {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::new(&shape, g.to_vec()).expect("grad matches shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Adds this graph's parameter gradients into `out`.
    pub fn accumulate_param_grads(&self, out: &mut Grads<F>) {
        for &(id, v) in &self.param_vars {
            if let Some(g) = self.grad(v) {
                out.get_mut(id).iter_mut().zip(g).for_each(|(a, b)| *a = *a + *b);
            }
        }
    }

    pub fn param_grads(&self) -> Grads<F> {
        let store = self.params.expect("graph was built without a parameter store");
        let mut g = Grads::zeros_like(store);
        self.accumulate_param_grads(&mut g);
        g
    }
}

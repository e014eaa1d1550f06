use super::tensor::{broadcast_index_map, broadcast_shape};
use super::{AutodiffError, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Div,
    Log,
    Exp,
    Sigmoid,
    Relu,
    Square,
    Neg,
}

impl ElementwiseKind {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output is `ceil(n / stride)`; padding split with the extra cell at the end.
    Same,
    /// No padding; output is `(n - k) / stride + 1`.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeDirection {
    Up,
    Down,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(ElementwiseKind, Var, Var),
    Unary(ElementwiseKind, Var),
    Scale(Var, f64),
    Shift(Var),
    Clamp(Var, f64, f64),
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    Reduce {
        x: Var,
        kind: ReduceKind,
        keep_shape: Vec<usize>,
    },
    Reshape(Var),
    Select {
        x: Var,
        axis: usize,
        index: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Transpose(Var),
    Matmul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        pad_top: usize,
        pad_left: usize,
    },
    Resize {
        x: Var,
        factor: usize,
        direction: ResizeDirection,
    },
    /// Square whose adjoint is deliberately wrong; negative control for gradient checks.
    FaultySquare(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of operations; one backward pass per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Adjoints produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v`; zero when `v` was not reached from the root.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.shapes[v.0].iter().product()],
        }
    }
}

/// Splits a shape into (outer, axis length, inner) around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a leaf; differentiable iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn variable(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(Vec::new(), vec![value], Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Scalar value of `v`; `None` unless `v` holds exactly one element.
    pub fn item(&self, v: Var) -> Option<f64> {
        let n = self.node(v);
        (n.value.len() == 1).then(|| n.value[0])
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    fn check_axis(&self, v: Var, axis: usize) -> Result<()> {
        let rank = self.node(v).shape.len();
        if axis >= rank {
            return Err(AutodiffError::InvalidAxis { axis, rank });
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => self.binary(kind, a, b),
            (false, None) => self.unary(kind, a),
            (true, None) => Err(AutodiffError::Shape(format!("{kind:?} needs two operands"))),
            (false, Some(_)) => Err(AutodiffError::Shape(format!("{kind:?} takes one operand"))),
        }
    }

    fn binary(&mut self, kind: ElementwiseKind, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let out_shape = broadcast_shape(&na.shape, &nb.shape)?;
        let f: fn(f64, f64) -> f64 = match kind {
            ElementwiseKind::Add => |x, y| x + y,
            ElementwiseKind::Sub => |x, y| x - y,
            ElementwiseKind::Mul => |x, y| x * y,
            ElementwiseKind::Div => |x, y| x / y,
            _ => unreachable!(),
        };
        let value: Vec<f64> = if na.shape == nb.shape {
            na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_index_map(&na.shape, &out_shape);
            let mb = broadcast_index_map(&nb.shape, &out_shape);
            ma.iter().zip(&mb).map(|(&i, &j)| f(na.value[i], nb.value[j])).collect()
        };
        let needs = na.needs_grad || nb.needs_grad;
        Ok(self.push(out_shape, value, Op::Binary(kind, a, b), needs))
    }

    fn unary(&mut self, kind: ElementwiseKind, a: Var) -> Result<Var> {
        let na = self.node(a);
        let value: Vec<f64> = match kind {
            ElementwiseKind::Log => {
                if let Some((index, &value)) = na.value.iter().enumerate().find(|(_, &x)| x <= 0.0 || x.is_nan()) {
                    return Err(AutodiffError::NonPositiveLog { index, value });
                }
                na.value.iter().map(|x| x.ln()).collect()
            }
            ElementwiseKind::Exp => na.value.iter().map(|x| x.exp()).collect(),
            ElementwiseKind::Sigmoid => na.value.iter().map(|&x| sigmoid(x)).collect(),
            ElementwiseKind::Relu => na.value.iter().map(|&x| x.max(0.0)).collect(),
            ElementwiseKind::Square => na.value.iter().map(|x| x * x).collect(),
            ElementwiseKind::Neg => na.value.iter().map(|x| -x).collect(),
            _ => unreachable!(),
        };
        let (shape, needs) = (na.shape.clone(), na.needs_grad);
        Ok(self.push(shape, value, Op::Unary(kind, a), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Div, a, b)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Log, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Exp, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Relu, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Square, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Neg, a)
    }

    /// `a * factor` for a constant factor.
    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let na = self.node(a);
        let value = na.value.iter().map(|x| x * factor).collect();
        let (shape, needs) = (na.shape.clone(), na.needs_grad);
        self.push(shape, value, Op::Scale(a, factor), needs)
    }

    /// `a + offset` for a constant offset.
    pub fn shift(&mut self, a: Var, offset: f64) -> Var {
        let na = self.node(a);
        let value = na.value.iter().map(|x| x + offset).collect();
        let (shape, needs) = (na.shape.clone(), na.needs_grad);
        self.push(shape, value, Op::Shift(a), needs)
    }

    /// Clamps into `[lo, hi]`; the adjoint passes only where the input is inside the range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let na = self.node(a);
        let value = na.value.iter().map(|x| x.clamp(lo, hi)).collect();
        let (shape, needs) = (na.shape.clone(), na.needs_grad);
        self.push(shape, value, Op::Clamp(a, lo, hi), needs)
    }

    #[doc(hidden)]
    pub fn faulty_square(&mut self, a: Var) -> Var {
        let na = self.node(a);
        let value = na.value.iter().map(|x| x * x).collect();
        let (shape, needs) = (na.shape.clone(), na.needs_grad);
        self.push(shape, value, Op::FaultySquare(a), needs)
    }

    // ---- softmax family ----

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let na = self.node(a);
        let (outer, n, inner) = split_axis(&na.shape, axis);
        let mut out = vec![0.0; na.value.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| na.value[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for k in 0..n {
                    let e = (na.value[at(k)] - max).exp();
                    out[at(k)] = e;
                    sum += e;
                }
                for k in 0..n {
                    out[at(k)] /= sum;
                }
            }
        }
        let (shape, needs) = (na.shape.clone(), na.needs_grad);
        Ok(self.push(shape, out, Op::Softmax { x: a, axis }, needs))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let na = self.node(a);
        let (outer, n, inner) = split_axis(&na.shape, axis);
        let mut out = vec![0.0; na.value.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| na.value[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..n).map(|k| (na.value[at(k)] - max).exp()).sum::<f64>().ln();
                for k in 0..n {
                    out[at(k)] = na.value[at(k)] - lse;
                }
            }
        }
        let (shape, needs) = (na.shape.clone(), na.needs_grad);
        Ok(self.push(shape, out, Op::LogSoftmax { x: a, axis }, needs))
    }

    // ---- reductions and shape ops ----

    /// Sums or averages over `axes`, removing them from the shape.
    pub fn reduce(&mut self, a: Var, kind: ReduceKind, axes: &[usize]) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let mut seen = vec![false; shape.len()];
        for &ax in axes {
            self.check_axis(a, ax)?;
            if seen[ax] {
                return Err(AutodiffError::Shape(format!("axis {ax} repeated in {axes:?}")));
            }
            seen[ax] = true;
        }
        let keep_shape: Vec<usize> = shape.iter().enumerate().map(|(d, &n)| if seen[d] { 1 } else { n }).collect();
        let out_shape: Vec<usize> = shape.iter().enumerate().filter(|(d, _)| !seen[*d]).map(|(_, &n)| n).collect();
        let map = broadcast_index_map(&keep_shape, &shape);
        let mut out = vec![0.0; out_shape.iter().product()];
        let na = self.node(a);
        for (i, &o) in map.iter().enumerate() {
            out[o] += na.value[i];
        }
        if kind == ReduceKind::Mean {
            let count = (na.value.len() / out.len()) as f64;
            out.iter_mut().for_each(|x| *x /= count);
        }
        let needs = na.needs_grad;
        Ok(self.push(out_shape, out, Op::Reduce { x: a, kind, keep_shape }, needs))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce(a, ReduceKind::Sum, &axes).expect("all axes are valid")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.reduce(a, ReduceKind::Mean, &axes).expect("all axes are valid")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let na = self.node(a);
        if shape.iter().product::<usize>() != na.value.len() || shape.contains(&0) {
            return Err(AutodiffError::Shape(format!("cannot reshape {:?} to {shape:?}", na.shape)));
        }
        let (value, needs) = (na.value.clone(), na.needs_grad);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a), needs))
    }

    /// Picks `index` along `axis`, removing that axis.
    pub fn select(&mut self, a: Var, axis: usize, index: usize) -> Result<Var> {
        self.check_axis(a, axis)?;
        let na = self.node(a);
        let (outer, n, inner) = split_axis(&na.shape, axis);
        if index >= n {
            return Err(AutodiffError::Shape(format!("index {index} out of range for axis of size {n}")));
        }
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * n + index) * inner;
            out.extend_from_slice(&na.value[base..base + inner]);
        }
        let mut shape = na.shape.clone();
        shape.remove(axis);
        let needs = na.needs_grad;
        Ok(self.push(shape, out, Op::Select { x: a, axis, index }, needs))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| AutodiffError::Shape("concat of nothing".into()))?;
        self.check_axis(*first, axis)?;
        let base_shape = self.node(*first).shape.clone();
        let mut total = 0;
        for &x in xs {
            let s = &self.node(x).shape;
            let compatible = s.len() == base_shape.len()
                && s.iter().zip(&base_shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(AutodiffError::Shape(format!("cannot concat {s:?} with {base_shape:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let n = self.node(x);
                let len = n.shape[axis] * inner;
                out.extend_from_slice(&n.value[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let needs = xs.iter().any(|&x| self.node(x).needs_grad);
        Ok(self.push(shape, out, Op::Concat { xs: xs.to_vec(), axis }, needs))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let na = self.node(a);
        let &[m, n] = &na.shape[..] else {
            return Err(AutodiffError::Shape(format!("transpose needs rank 2, got {:?}", na.shape)));
        };
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = na.value[i * n + j];
            }
        }
        let needs = na.needs_grad;
        Ok(self.push(vec![n, m], out, Op::Transpose(a), needs))
    }

    /// Matrix product of `m×k` and `k×n` tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let (&[m, k], &[k2, n]) = (&na.shape[..], &nb.shape[..]) else {
            return Err(AutodiffError::Shape(format!("matmul needs rank 2, got {:?} and {:?}", na.shape, nb.shape)));
        };
        if k != k2 {
            return Err(AutodiffError::Shape(format!("matmul inner mismatch {:?} x {:?}", na.shape, nb.shape)));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = na.value[i * k + p];
                if av == 0.0 {
                    continue;
                }
                for (o, &bv) in row.iter_mut().zip(&nb.value[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
        let needs = na.needs_grad || nb.needs_grad;
        Ok(self.push(vec![m, n], out, Op::Matmul(a, b), needs))
    }

    // ---- spatial ops ----

    /// Cross-correlation of an `H×W×Cin` input with a `kh×kw×Cin×Cout` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (ni, nk) = (self.node(input), self.node(kernel));
        let (&[h, w, cin], &[kh, kw, kcin, cout]) = (&ni.shape[..], &nk.shape[..]) else {
            return Err(AutodiffError::Shape(format!(
                "conv2d expects H×W×C input and kh×kw×Cin×Cout kernel, got {:?} and {:?}",
                ni.shape, nk.shape
            )));
        };
        if kcin != cin {
            return Err(AutodiffError::Shape(format!("kernel expects {kcin} input channels, input has {cin}")));
        }
        if stride == 0 {
            return Err(AutodiffError::Shape("stride must be positive".into()));
        }
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(AutodiffError::KernelTooLarge { kernel: (kh, kw), input: (h, w) });
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
            Padding::Same => {
                let ho = h.div_ceil(stride);
                let wo = w.div_ceil(stride);
                let pad_h = ((ho - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((wo - 1) * stride + kw).saturating_sub(w);
                if kh > h + pad_h || kw > w + pad_w {
                    return Err(AutodiffError::KernelTooLarge { kernel: (kh, kw), input: (h + pad_h, w + pad_w) });
                }
                (ho, wo, pad_h / 2, pad_w / 2)
            }
        };
        let mut out = vec![0.0; ho * wo * cout];
        for oy in 0..ho {
            for ox in 0..wo {
                let dst = &mut out[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad_left as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = &ni.value[(iy as usize * w + ix as usize) * cin..][..cin];
                        let kbase = (ky * kw + kx) * cin * cout;
                        for (ci, &v) in src.iter().enumerate() {
                            let krow = &nk.value[kbase + ci * cout..][..cout];
                            for (d, &kv) in dst.iter_mut().zip(krow) {
                                *d += v * kv;
                            }
                        }
                    }
                }
            }
        }
        let needs = ni.needs_grad || nk.needs_grad;
        Ok(self.push(vec![ho, wo, cout], out, Op::Conv2d { input, kernel, stride, pad_top, pad_left }, needs))
    }

    /// Nearest-neighbour resize of an `H×W×C` tensor by an integer factor.
    /// Downsampling keeps the top-left cell of each `factor×factor` block.
    pub fn resize_nearest(&mut self, a: Var, factor: usize, direction: ResizeDirection) -> Result<Var> {
        let na = self.node(a);
        let &[h, w, c] = &na.shape[..] else {
            return Err(AutodiffError::Shape(format!("resize expects H×W×C, got {:?}", na.shape)));
        };
        if factor == 0 {
            return Err(AutodiffError::Shape("resize factor must be positive".into()));
        }
        let (oh, ow) = match direction {
            ResizeDirection::Up => (h * factor, w * factor),
            ResizeDirection::Down => {
                for dim in [h, w] {
                    if dim % factor != 0 {
                        return Err(AutodiffError::NonDivisible { dim, factor });
                    }
                }
                (h / factor, w / factor)
            }
        };
        let mut out = Vec::with_capacity(oh * ow * c);
        for y in 0..oh {
            for x in 0..ow {
                let (sy, sx) = match direction {
                    ResizeDirection::Up => (y / factor, x / factor),
                    ResizeDirection::Down => (y * factor, x * factor),
                };
                out.extend_from_slice(&na.value[(sy * w + sx) * c..][..c]);
            }
        }
        let needs = na.needs_grad;
        Ok(self.push(vec![oh, ow, c], out, Op::Resize { x: a, factor, direction }, needs))
    }

    // ---- backward ----

    /// Propagates adjoints from a scalar `root`. Can be called once per graph.
    pub fn backward(&mut self, root: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(AutodiffError::AlreadyBackpropagated);
        }
        let root_node = self.node(root);
        if root_node.value.len() != 1 {
            return Err(AutodiffError::NonScalarRoot(root_node.shape.clone()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Only leaves that asked for gradients report them.
        for (id, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                grads[id] = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.0];
            if !n.needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
                let ma = broadcast_index_map(&na.shape, &node.shape);
                let mb = broadcast_index_map(&nb.shape, &node.shape);
                let (av, bv) = (&na.value, &nb.value);
                match kind {
                    ElementwiseKind::Add => {
                        acc(*a, &mut |s| ma.iter().zip(g).for_each(|(&i, &gi)| s[i] += gi));
                        acc(*b, &mut |s| mb.iter().zip(g).for_each(|(&j, &gi)| s[j] += gi));
                    }
                    ElementwiseKind::Sub => {
                        acc(*a, &mut |s| ma.iter().zip(g).for_each(|(&i, &gi)| s[i] += gi));
                        acc(*b, &mut |s| mb.iter().zip(g).for_each(|(&j, &gi)| s[j] -= gi));
                    }
                    ElementwiseKind::Mul => {
                        acc(*a, &mut |s| {
                            for (k, &gi) in g.iter().enumerate() {
                                s[ma[k]] += gi * bv[mb[k]];
                            }
                        });
                        acc(*b, &mut |s| {
                            for (k, &gi) in g.iter().enumerate() {
                                s[mb[k]] += gi * av[ma[k]];
                            }
                        });
                    }
                    ElementwiseKind::Div => {
                        acc(*a, &mut |s| {
                            for (k, &gi) in g.iter().enumerate() {
                                s[ma[k]] += gi / bv[mb[k]];
                            }
                        });
                        acc(*b, &mut |s| {
                            for (k, &gi) in g.iter().enumerate() {
                                let y = bv[mb[k]];
                                s[mb[k]] -= gi * av[ma[k]] / (y * y);
                            }
                        });
                    }
                    _ => unreachable!(),
                }
            }
            Op::Unary(kind, a) => {
                let x = &self.nodes[a.0].value;
                let y = &node.value;
                let kind = *kind;
                acc(*a, &mut |s| {
                    for k in 0..g.len() {
                        s[k] += g[k]
                            * match kind {
                                ElementwiseKind::Log => 1.0 / x[k],
                                ElementwiseKind::Exp => y[k],
                                ElementwiseKind::Sigmoid => y[k] * (1.0 - y[k]),
                                ElementwiseKind::Relu => {
                                    if x[k] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                ElementwiseKind::Square => 2.0 * x[k],
                                ElementwiseKind::Neg => -1.0,
                                _ => unreachable!(),
                            };
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * f)),
            Op::Shift(a) | Op::Reshape(a) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(d, gi)| *d += gi)),
            Op::Clamp(a, lo, hi) => {
                let x = &self.nodes[a.0].value;
                acc(*a, &mut |s| {
                    for k in 0..g.len() {
                        if x[k] >= *lo && x[k] <= *hi {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::FaultySquare(a) => {
                let x = &self.nodes[a.0].value;
                acc(*a, &mut |s| (0..g.len()).for_each(|k| s[k] += g[k] * x[k]));
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, n, inner) = split_axis(&node.shape, *axis);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + i;
                            let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                            for k in 0..n {
                                s[at(k)] += y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax { x, axis } => {
                let y = &node.value;
                let (outer, n, inner) = split_axis(&node.shape, *axis);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + i;
                            let total: f64 = (0..n).map(|k| g[at(k)]).sum();
                            for k in 0..n {
                                s[at(k)] += g[at(k)] - y[at(k)].exp() * total;
                            }
                        }
                    }
                });
            }
            Op::Reduce { x, kind, keep_shape } => {
                let in_shape = &self.nodes[x.0].shape;
                let map = broadcast_index_map(keep_shape, in_shape);
                let scale = match kind {
                    ReduceKind::Sum => 1.0,
                    ReduceKind::Mean => g.len() as f64 / map.len() as f64,
                };
                acc(*x, &mut |s| map.iter().enumerate().for_each(|(i, &o)| s[i] += g[o] * scale));
            }
            Op::Select { x, axis, index } => {
                let (outer, n, inner) = split_axis(&self.nodes[x.0].shape, *axis);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        let base = (o * n + index) * inner;
                        for i in 0..inner {
                            s[base + i] += g[o * inner + i];
                        }
                    }
                });
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = self.nodes[x.0].shape[*axis] * inner;
                    acc(x, &mut |s| {
                        for o in 0..outer {
                            let src = o * total * inner + offset;
                            for k in 0..len {
                                s[o * len + k] += g[src + k];
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Transpose(a) => {
                let (n, m) = (node.shape[0], node.shape[1]);
                acc(*a, &mut |s| {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
                let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
                acc(*a, &mut |s| {
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &nb.value[p * n..(p + 1) * n];
                            let grow = &g[i * n..(i + 1) * n];
                            s[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..m {
                        for p in 0..k {
                            let av = na.value[i * k + p];
                            for j in 0..n {
                                s[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Conv2d { input, kernel, stride, pad_top, pad_left } => {
                let (ni, nk) = (&self.nodes[input.0], &self.nodes[kernel.0]);
                let (h, w, cin) = (ni.shape[0], ni.shape[1], ni.shape[2]);
                let (kh, kw, cout) = (nk.shape[0], nk.shape[1], nk.shape[3]);
                let (ho, wo) = (node.shape[0], node.shape[1]);
                let taps = |oy: usize, ox: usize, f: &mut dyn FnMut(usize, usize)| {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - *pad_top as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - *pad_left as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            f((iy as usize * w + ix as usize) * cin, (ky * kw + kx) * cin * cout);
                        }
                    }
                };
                acc(*input, &mut |s| {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let go = &g[(oy * wo + ox) * cout..][..cout];
                            taps(oy, ox, &mut |ibase, kbase| {
                                for ci in 0..cin {
                                    let krow = &nk.value[kbase + ci * cout..][..cout];
                                    s[ibase + ci] += go.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                                }
                            });
                        }
                    }
                });
                acc(*kernel, &mut |s| {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let go = &g[(oy * wo + ox) * cout..][..cout];
                            taps(oy, ox, &mut |ibase, kbase| {
                                for ci in 0..cin {
                                    let v = ni.value[ibase + ci];
                                    let krow = &mut s[kbase + ci * cout..][..cout];
                                    for (d, &gv) in krow.iter_mut().zip(go) {
                                        *d += v * gv;
                                    }
                                }
                            });
                        }
                    }
                });
            }
            Op::Resize { x, factor, direction } => {
                let xs = &self.nodes[x.0].shape;
                let (w, c) = (xs[1], xs[2]);
                let (oh, ow) = (node.shape[0], node.shape[1]);
                acc(*x, &mut |s| {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let (sy, sx) = match direction {
                                ResizeDirection::Up => (y / factor, xx / factor),
                                ResizeDirection::Down => (y * factor, xx * factor),
                            };
                            for ch in 0..c {
                                s[(sy * w + sx) * c + ch] += g[(y * ow + xx) * c + ch];
                            }
                        }
                    }
                });
            }
        }
    }
}

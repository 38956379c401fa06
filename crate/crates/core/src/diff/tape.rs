//! The recording tape and differentiable values.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;

use super::tensor::{broadcast_shape, expand, gemm, numel, reduce_to, swap_axes, Tensor};
use super::DiffError;

/// Local derivative of a user-recorded primitive.
///
/// Given the gradient flowing into the op's output, return one gradient per
/// input (same shape as that input), or `None` where the input receives none.
pub trait CustomBackward {
    fn backward(&self, grad_out: &Tensor, inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Min(usize, usize),
    Max(usize, usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Exp(usize),
    Log(usize),
    Sin(usize),
    Cos(usize),
    Sqrt(usize),
    Powf(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Gelu(usize),
    Abs(usize),
    Clamp(usize, f64, f64),
    MatMul { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize },
    Sum(usize),
    Mean(usize),
    SumAxis { a: usize, axis: usize },
    Softmax(usize),
    LayerNorm { a: usize, inv_std: Vec<f64> },
    Reshape(usize),
    Transpose(usize, usize, usize),
    Slice { a: usize, axis: usize, start: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Broadcast(usize),
    Custom { inputs: Vec<usize>, backward: Box<dyn CustomBackward> },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Min(..) => "min",
            Op::Max(..) => "max",
            Op::Neg(_) => "neg",
            Op::AddScalar(_) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Sqrt(_) => "sqrt",
            Op::Powf(..) => "powf",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Abs(_) => "abs",
            Op::Clamp(..) => "clamp",
            Op::MatMul { .. } => "matmul",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis { .. } => "sum_axis",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Reshape(_) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Broadcast(_) => "broadcast",
            Op::Custom { .. } => "custom",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use record of primitive operations for reverse-mode
/// differentiation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

/// Gradients of a scalar loss with respect to the differentiable leaves.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    map: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: &Var<'_>) -> Option<&Tensor> {
        self.map.get(&v.id)
    }

    /// Gradient for `v`, or zeros of `v`'s shape when it received none.
    pub fn wrt(&self, v: &Var<'_>) -> Tensor {
        self.map.get(&v.id).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }
}

fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
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

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let op = if requires_grad { op } else { Op::Const };
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Const, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// Record an externally computed primitive with its own local derivative.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        output: Tensor,
        backward: Box<dyn CustomBackward>,
    ) -> Var<'t> {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let rg = self.requires(&ids);
        self.push(output, Op::Custom { inputs: ids, backward }, rg)
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, vars: &[Var<'t>], axis: usize) -> Result<Var<'t>, DiffError> {
        let (value, ids) = {
            let nodes = self.nodes.borrow();
            let first = vars.first().ok_or(DiffError::Empty { op: "concat" })?;
            let base = nodes[first.id].value.shape().to_vec();
            let mismatch = || DiffError::Shape {
                op: "concat",
                shapes: vars.iter().map(|v| nodes[v.id].value.shape().to_vec()).collect(),
            };
            if axis >= base.len() {
                return Err(mismatch());
            }
            let mut total = 0;
            for v in vars {
                let s = nodes[v.id].value.shape();
                if s.len() != base.len()
                    || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b)
                {
                    return Err(mismatch());
                }
                total += s[axis];
            }
            let mut shape = base.clone();
            shape[axis] = total;
            let (outer, _, inner) = split3(&shape, axis);
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for v in vars {
                    let t = &nodes[v.id].value;
                    let chunk = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            (Tensor::new(&shape, data)?, vars.iter().map(|v| v.id).collect::<Vec<_>>())
        };
        let rg = self.requires(&ids);
        Ok(self.push(value, Op::Concat { inputs: ids, axis }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients, DiffError> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(DiffError::NonScalarLoss { shape: root.value.shape().to_vec() });
        }
        let mut out = Gradients::default();
        if !root.requires_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                out.map.insert(id, g);
                continue;
            }
            for (input, gi) in local_grads(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(out)
    }
}

fn val(nodes: &[Node], id: usize) -> &Tensor {
    &nodes[id].value
}

/// Gradient contributions of one node to its inputs.
fn local_grads(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let y = &node.value;
    let unary = |a: usize, f: &dyn Fn(f64, f64, f64) -> f64| {
        let x = val(nodes, a);
        let data = g
            .data()
            .iter()
            .zip(x.data())
            .zip(y.data())
            .map(|((&g, &x), &y)| f(g, x, y))
            .collect();
        vec![(a, Tensor::new(x.shape(), data).expect("unary shape"))]
    };
    match &node.op {
        Op::Leaf | Op::Const => Vec::new(),
        Op::Add(a, b) => vec![
            (*a, reduce_to(g, val(nodes, *a).shape())),
            (*b, reduce_to(g, val(nodes, *b).shape())),
        ],
        Op::Sub(a, b) => vec![
            (*a, reduce_to(g, val(nodes, *a).shape())),
            (*b, reduce_to(&g.map(|v| -v), val(nodes, *b).shape())),
        ],
        Op::Mul(a, b) => {
            let (va, vb) = (val(nodes, *a), val(nodes, *b));
            let ea = expand(va, g.shape());
            let eb = expand(vb, g.shape());
            vec![
                (*a, reduce_to(&g.zip_map(&eb, |g, b| g * b), va.shape())),
                (*b, reduce_to(&g.zip_map(&ea, |g, a| g * a), vb.shape())),
            ]
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(nodes, *a), val(nodes, *b));
            let eb = expand(vb, g.shape());
            let ga = g.zip_map(&eb, |g, b| g / b);
            // d(a/b)/db = -y/b
            let gy = g.zip_map(y, |g, y| g * y);
            let gb = gy.zip_map(&eb, |gy, b| -gy / b);
            vec![(*a, reduce_to(&ga, va.shape())), (*b, reduce_to(&gb, vb.shape()))]
        }
        Op::Min(a, b) | Op::Max(a, b) => {
            let take_min = matches!(node.op, Op::Min(..));
            let (va, vb) = (val(nodes, *a), val(nodes, *b));
            let ea = expand(va, g.shape());
            let eb = expand(vb, g.shape());
            let mut ga = Tensor::zeros(g.shape());
            let mut gb = Tensor::zeros(g.shape());
            for i in 0..g.len() {
                let (x, z) = (ea.data()[i], eb.data()[i]);
                let a_wins = if take_min { x <= z } else { x >= z };
                if a_wins {
                    ga.data_mut()[i] = g.data()[i];
                } else {
                    gb.data_mut()[i] = g.data()[i];
                }
            }
            vec![(*a, reduce_to(&ga, va.shape())), (*b, reduce_to(&gb, vb.shape()))]
        }
        Op::Neg(a) => vec![(*a, g.map(|v| -v))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MulScalar(a, c) => vec![(*a, g.map(|v| v * c))],
        Op::Exp(a) => unary(*a, &|g, _, y| g * y),
        Op::Log(a) => unary(*a, &|g, x, _| g / x),
        Op::Sin(a) => unary(*a, &|g, x, _| g * x.cos()),
        Op::Cos(a) => unary(*a, &|g, x, _| -g * x.sin()),
        Op::Sqrt(a) => unary(*a, &|g, _, y| 0.5 * g / y),
        Op::Powf(a, p) => {
            let p = *p;
            unary(*a, &move |g, x, _| g * p * x.powf(p - 1.0))
        }
        Op::Sigmoid(a) => unary(*a, &|g, _, y| g * y * (1.0 - y)),
        Op::Tanh(a) => unary(*a, &|g, _, y| g * (1.0 - y * y)),
        Op::Relu(a) => unary(*a, &|g, x, _| if x > 0.0 { g } else { 0.0 }),
        Op::Gelu(a) => unary(*a, &|g, x, _| g * gelu_grad(x)),
        Op::Abs(a) => unary(*a, &|g, x, _| {
            if x > 0.0 {
                g
            } else if x < 0.0 {
                -g
            } else {
                0.0
            }
        }),
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            unary(*a, &move |g, x, _| if x >= lo && x <= hi { g } else { 0.0 })
        }
        Op::MatMul { a, b, batch, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let (va, vb) = (val(nodes, *a), val(nodes, *b));
            let mut ga = Tensor::zeros(va.shape());
            let mut gb = Tensor::zeros(vb.shape());
            for bi in 0..*batch {
                let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                let asl = &va.data()[bi * m * k..(bi + 1) * m * k];
                let bsl = &vb.data()[bi * k * n..(bi + 1) * k * n];
                // dA = G·Bᵀ, dB = Aᵀ·G
                gemm(m, n, k, gs, false, bsl, true, &mut ga.data_mut()[bi * m * k..(bi + 1) * m * k], false);
                gemm(k, m, n, asl, true, gs, false, &mut gb.data_mut()[bi * k * n..(bi + 1) * k * n], false);
            }
            vec![(*a, ga), (*b, gb)]
        }
        Op::Sum(a) => {
            let s = g.data()[0];
            vec![(*a, Tensor::full(val(nodes, *a).shape(), s))]
        }
        Op::Mean(a) => {
            let x = val(nodes, *a);
            let s = g.data()[0] / x.len() as f64;
            vec![(*a, Tensor::full(x.shape(), s))]
        }
        Op::SumAxis { a, axis } => {
            let x = val(nodes, *a);
            let (outer, dim, inner) = split3(x.shape(), *axis);
            let mut out = Vec::with_capacity(x.len());
            for o in 0..outer {
                for _ in 0..dim {
                    out.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
            }
            vec![(*a, Tensor::new(x.shape(), out).expect("sum_axis shape"))]
        }
        Op::Softmax(a) => {
            let d = *y.shape().last().unwrap_or(&1);
            let mut out = vec![0.0; y.len()];
            for ((row_o, row_y), row_g) in
                out.chunks_mut(d).zip(y.data().chunks(d)).zip(g.data().chunks(d))
            {
                let dot: f64 = row_y.iter().zip(row_g).map(|(y, g)| y * g).sum();
                for ((o, &yv), &gv) in row_o.iter_mut().zip(row_y).zip(row_g) {
                    *o = yv * (gv - dot);
                }
            }
            vec![(*a, Tensor::new(y.shape(), out).expect("softmax shape"))]
        }
        Op::LayerNorm { a, inv_std } => {
            let d = *y.shape().last().unwrap_or(&1);
            let mut out = vec![0.0; y.len()];
            for (r, ((row_o, row_y), row_g)) in
                out.chunks_mut(d).zip(y.data().chunks(d)).zip(g.data().chunks(d)).enumerate()
            {
                let mg = row_g.iter().sum::<f64>() / d as f64;
                let mgy = row_g.iter().zip(row_y).map(|(g, y)| g * y).sum::<f64>() / d as f64;
                for ((o, &yv), &gv) in row_o.iter_mut().zip(row_y).zip(row_g) {
                    *o = inv_std[r] * (gv - mg - yv * mgy);
                }
            }
            vec![(*a, Tensor::new(y.shape(), out).expect("layer_norm shape"))]
        }
        Op::Reshape(a) => vec![(*a, g.reshaped(val(nodes, *a).shape()).expect("reshape"))],
        Op::Transpose(a, d0, d1) => vec![(*a, swap_axes(g, *d0, *d1))],
        Op::Slice { a, axis, start } => {
            let x = val(nodes, *a);
            let (outer, dim, inner) = split3(x.shape(), *axis);
            let len = g.shape()[*axis];
            let mut out = Tensor::zeros(x.shape());
            for o in 0..outer {
                let dst = o * dim * inner + start * inner;
                let src = o * len * inner;
                out.data_mut()[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
            }
            vec![(*a, out)]
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = split3(g.shape(), *axis);
            let mut offset = 0;
            let mut res = Vec::with_capacity(inputs.len());
            for &i in inputs {
                let x = val(nodes, i);
                let len = x.shape()[*axis];
                let mut data = Vec::with_capacity(x.len());
                for o in 0..outer {
                    let src = o * total * inner + offset * inner;
                    data.extend_from_slice(&g.data()[src..src + len * inner]);
                }
                offset += len;
                res.push((i, Tensor::new(x.shape(), data).expect("concat shape")));
            }
            res
        }
        Op::Broadcast(a) => vec![(*a, reduce_to(g, val(nodes, *a).shape()))],
        Op::Custom { inputs, backward } => {
            let ins: Vec<&Tensor> = inputs.iter().map(|&i| val(nodes, i)).collect();
            let gs = backward.backward(g, &ins, y);
            inputs
                .iter()
                .zip(gs)
                .filter_map(|(&i, gi)| {
                    let gi = gi?;
                    debug_assert_eq!(gi.shape(), val(nodes, i).shape(), "custom op gradient shape");
                    Some((i, gi))
                })
                .collect()
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// First element of the value (the value itself for scalars).
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Name of the primitive that produced this value.
    pub fn op_kind(&self) -> &'static str {
        self.tape.nodes.borrow()[self.id].op.kind()
    }

    /// Borrow the value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    fn map_unary(&self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let value = self.with_value(|x| x.map(f));
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(
        &self,
        other: &Var<'t>,
        kind: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>, DiffError> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| DiffError::Shape {
                op: kind,
                shapes: vec![a.shape().to_vec(), b.shape().to_vec()],
            })?;
            let (ea, eb) = (expand(a, &shape), expand(b, &shape));
            ea.zip_map(&eb, f)
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, op, rg))
    }

    pub fn add(&self, o: &Var<'t>) -> Result<Var<'t>, DiffError> {
        self.binary(o, "add", |a, b| a + b, Op::Add(self.id, o.id))
    }

    pub fn sub(&self, o: &Var<'t>) -> Result<Var<'t>, DiffError> {
        self.binary(o, "sub", |a, b| a - b, Op::Sub(self.id, o.id))
    }

    pub fn mul(&self, o: &Var<'t>) -> Result<Var<'t>, DiffError> {
        self.binary(o, "mul", |a, b| a * b, Op::Mul(self.id, o.id))
    }

    pub fn div(&self, o: &Var<'t>) -> Result<Var<'t>, DiffError> {
        self.binary(o, "div", |a, b| a / b, Op::Div(self.id, o.id))
    }

    /// Elementwise minimum; ties route gradient to `self`.
    pub fn min(&self, o: &Var<'t>) -> Result<Var<'t>, DiffError> {
        self.binary(o, "min", f64::min, Op::Min(self.id, o.id))
    }

    /// Elementwise maximum; ties route gradient to `self`.
    pub fn max(&self, o: &Var<'t>) -> Result<Var<'t>, DiffError> {
        self.binary(o, "max", f64::max, Op::Max(self.id, o.id))
    }

    pub fn neg(&self) -> Var<'t> {
        self.map_unary(|x| -x, Op::Neg(self.id))
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.map_unary(|x| x + c, Op::AddScalar(self.id))
    }

    pub fn mul_scalar(&self, c: f64) -> Var<'t> {
        self.map_unary(|x| x * c, Op::MulScalar(self.id, c))
    }

    pub fn exp(&self) -> Var<'t> {
        self.map_unary(f64::exp, Op::Exp(self.id))
    }

    pub fn log(&self) -> Var<'t> {
        self.map_unary(f64::ln, Op::Log(self.id))
    }

    pub fn sin(&self) -> Var<'t> {
        self.map_unary(f64::sin, Op::Sin(self.id))
    }

    pub fn cos(&self) -> Var<'t> {
        self.map_unary(f64::cos, Op::Cos(self.id))
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.map_unary(f64::sqrt, Op::Sqrt(self.id))
    }

    pub fn powf(&self, p: f64) -> Var<'t> {
        self.map_unary(|x| x.powf(p), Op::Powf(self.id, p))
    }

    pub fn square(&self) -> Var<'t> {
        self.powf(2.0)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.map_unary(sigmoid, Op::Sigmoid(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        self.map_unary(f64::tanh, Op::Tanh(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        self.map_unary(|x| x.max(0.0), Op::Relu(self.id))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t> {
        self.map_unary(gelu, Op::Gelu(self.id))
    }

    pub fn abs(&self) -> Var<'t> {
        self.map_unary(f64::abs, Op::Abs(self.id))
    }

    /// Clamp to `[lo, hi]`; clamped elements pass no gradient.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.map_unary(|x| x.clamp(lo, hi), Op::Clamp(self.id, lo, hi))
    }

    /// Matrix product of `m×k` by `k×n`, or batched `b×m×k` by `b×k×n`.
    pub fn matmul(&self, o: &Var<'t>) -> Result<Var<'t>, DiffError> {
        let (value, dims) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[o.id].value);
            let err = || DiffError::Shape {
                op: "matmul",
                shapes: vec![a.shape().to_vec(), b.shape().to_vec()],
            };
            let (batch, m, k, n) = match (a.shape(), b.shape()) {
                ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
                ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => (*ba, *m, *k, *n),
                _ => return Err(err()),
            };
            let mut out = vec![0.0; batch * m * n];
            for bi in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[bi * m * k..(bi + 1) * m * k],
                    false,
                    &b.data()[bi * k * n..(bi + 1) * k * n],
                    false,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    false,
                );
            }
            let shape = if a.rank() == 2 { vec![m, n] } else { vec![batch, m, n] };
            (Tensor::new(&shape, out)?, (batch, m, k, n))
        };
        let (batch, m, k, n) = dims;
        let rg = self.tape.requires(&[self.id, o.id]);
        Ok(self.tape.push(value, Op::MatMul { a: self.id, b: o.id, batch, m, k, n }, rg))
    }

    /// Sum of all elements (rank-0 result).
    pub fn sum(&self) -> Var<'t> {
        let value = self.with_value(|x| Tensor::scalar(x.sum()));
        let rg = self.requires_grad();
        self.tape.push(value, Op::Sum(self.id), rg)
    }

    pub fn mean(&self) -> Var<'t> {
        let value = self.with_value(|x| Tensor::scalar(x.sum() / x.len() as f64));
        let rg = self.requires_grad();
        self.tape.push(value, Op::Mean(self.id), rg)
    }

    /// Sum over one axis; the axis is kept with length 1 when `keepdim`.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'t>, DiffError> {
        let value = self.with_value(|x| {
            if axis >= x.rank() {
                return Err(DiffError::Axis { op: "sum_axis", axis, shape: x.shape().to_vec() });
            }
            let (outer, dim, inner) = split3(x.shape(), axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for d in 0..dim {
                    let src = &x.data()[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                    for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *acc += v;
                    }
                }
            }
            let mut shape = x.shape().to_vec();
            if keepdim {
                shape[axis] = 1;
            } else {
                shape.remove(axis);
            }
            Tensor::new(&shape, out)
        })?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::SumAxis { a: self.id, axis }, rg))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'t>, DiffError> {
        let dim = self.with_value(|x| x.shape().get(axis).copied()).unwrap_or(1);
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(1.0 / dim as f64))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Var<'t> {
        let value = self.with_value(|x| {
            let d = *x.shape().last().unwrap_or(&1);
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(d) {
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            Tensor::new(x.shape(), out).expect("softmax shape")
        });
        let rg = self.requires_grad();
        self.tape.push(value, Op::Softmax(self.id), rg)
    }

    /// Normalize the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, eps: f64) -> Var<'t> {
        let (value, inv_std) = self.with_value(|x| {
            let d = *x.shape().last().unwrap_or(&1);
            let mut out = x.data().to_vec();
            let mut inv = Vec::with_capacity(x.len() / d.max(1));
            for row in out.chunks_mut(d) {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let r = 1.0 / (var + eps).sqrt();
                for v in row.iter_mut() {
                    *v = (*v - mean) * r;
                }
                inv.push(r);
            }
            (Tensor::new(x.shape(), out).expect("layer_norm shape"), inv)
        });
        let rg = self.requires_grad();
        self.tape.push(value, Op::LayerNorm { a: self.id, inv_std }, rg)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>, DiffError> {
        let value = self.with_value(|x| x.reshaped(shape))?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    /// Swap axes `d0` and `d1`.
    pub fn transpose(&self, d0: usize, d1: usize) -> Result<Var<'t>, DiffError> {
        let value = self.with_value(|x| {
            if d0 >= x.rank() || d1 >= x.rank() {
                return Err(DiffError::Axis { op: "transpose", axis: d0.max(d1), shape: x.shape().to_vec() });
            }
            Ok(swap_axes(x, d0, d1))
        })?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Transpose(self.id, d0, d1), rg))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>, DiffError> {
        let value = self.with_value(|x| {
            if axis >= x.rank() || start > end || end > x.shape()[axis] {
                return Err(DiffError::Slice { axis, start, end, shape: x.shape().to_vec() });
            }
            let (outer, dim, inner) = split3(x.shape(), axis);
            let len = end - start;
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s = o * dim * inner + start * inner;
                data.extend_from_slice(&x.data()[s..s + len * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = len;
            Tensor::new(&shape, data)
        })?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Slice { a: self.id, axis, start }, rg))
    }

    /// Single element `i` of a vector, as a rank-0 value.
    pub fn index(&self, i: usize) -> Result<Var<'t>, DiffError> {
        self.slice(0, i, i + 1)?.reshape(&[])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>, DiffError> {
        let value = self.with_value(|x| match broadcast_shape(x.shape(), shape) {
            Some(s) if s == shape => Ok(expand(x, shape)),
            _ => Err(DiffError::Shape { op: "broadcast", shapes: vec![x.shape().to_vec(), shape.to_vec()] }),
        })?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Broadcast(self.id), rg))
    }
}

//! Wengert-list reverse-mode differentiation.
//!
//! Every forward op evaluates eagerly and appends a node to the tape. Node ids
//! are assigned in construction order, which is a topological order, so the
//! backward sweep simply walks the tape from the root down to id 0.

use std::cell::RefCell;
use std::sync::Arc;

use super::array::Array;
use super::DiffError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Tanh,
    Sigmoid,
    Elu,
    Softplus,
    Exp,
    Log,
    Neg,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { lhs: usize, rhs: usize },
    Binary { kind: Binary, lhs: usize, rhs: usize },
    Unary { kind: Unary, src: usize },
    Scale { src: usize, factor: f64 },
    Offset { src: usize },
    Reshape { src: usize },
    SumAxis { src: usize, outer: usize, len: usize, inner: usize },
    Concat { parts: Vec<(usize, usize)> },
    Slice { src: usize, start: usize, width: usize },
}

/// A recorded value together with the rule that maps its output gradient back
/// onto its parents.
#[derive(Clone, Debug)]
pub struct Node {
    value: Arc<Array>,
    op: Op,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
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

    fn push(&self, value: Array, op: Op) -> Var<'_> {
        self.push_shared(Arc::new(value), op)
    }

    fn push_shared(&self, value: Arc<Array>, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Arc<Array> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Input node with no parents.
    pub fn leaf(&self, value: Array) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Input node sharing storage with the caller (used for parameters).
    pub fn leaf_shared(&self, value: Arc<Array>) -> Var<'_> {
        self.push_shared(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Array::scalar(value))
    }

    /// Concatenates along the trailing axis; all leading extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, DiffError> {
        let first = parts.first().ok_or(DiffError::Empty("concat"))?;
        let lead = first.value();
        let rows = lead.rows();
        let lead_shape = lead.shape()[..lead.shape().len() - 1].to_vec();
        let mut values = Vec::with_capacity(parts.len());
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let v = p.value();
            if v.shape()[..v.shape().len() - 1] != lead_shape[..] {
                return Err(DiffError::ShapeMismatch {
                    op: "concat",
                    lhs: lead.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            widths.push(v.cols());
            values.push(v);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let mut shape = lead_shape;
        shape.push(total);
        let out = Array::new(&shape, data)?;
        let parts = parts.iter().zip(widths).map(|(p, w)| (p.id, w)).collect();
        Ok(self.push(out, Op::Concat { parts }))
    }

    /// Gradients of a scalar `root` with respect to every node on the tape.
    pub fn backward(&self, root: Var<'_>) -> Result<Grads, DiffError> {
        self.sweep(root, None)
    }

    /// Like [`Tape::backward`], but only propagates along paths that end in
    /// one of `targets`; every other node reports no gradient.
    pub fn backward_to(&self, root: Var<'_>, targets: &[Var<'_>]) -> Result<Grads, DiffError> {
        let nodes = self.nodes.borrow();
        let mut live = vec![false; nodes.len()];
        for t in targets {
            live[t.id] = true;
        }
        for id in 0..nodes.len() {
            if !live[id] {
                live[id] = parents(&nodes[id].op).iter().any(|&p| live[p]);
            }
        }
        drop(nodes);
        self.sweep(root, Some(live))
    }

    fn sweep(&self, root: Var<'_>, live: Option<Vec<bool>>) -> Result<Grads, DiffError> {
        let live = |id: usize| live.as_ref().is_none_or(|l| l[id]);
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(DiffError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = vec![None; nodes.len()];
        grads[root.id] = Some(Array::full(root_value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !live(id) {
                grads[id] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { lhs, rhs } => {
                    let a = &nodes[*lhs].value;
                    let b = &nodes[*rhs].value;
                    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                    if live(*lhs) {
                        let mut ga = vec![0.0; m * k];
                        gemm(m, n, k, g.data(), false, b.data(), true, &mut ga);
                        accumulate(&mut grads, *lhs, Array::new(a.shape(), ga)?);
                    }
                    if live(*rhs) {
                        let mut gb = vec![0.0; k * n];
                        gemm(k, m, n, a.data(), true, g.data(), false, &mut gb);
                        accumulate(&mut grads, *rhs, Array::new(b.shape(), gb)?);
                    }
                }
                Op::Binary { kind, lhs, rhs } => {
                    let a = &nodes[*lhs].value;
                    let b = &nodes[*rhs].value;
                    let (ga, gb) = binary_backward(*kind, a, b, &g);
                    if live(*lhs) {
                        accumulate(&mut grads, *lhs, ga);
                    }
                    if live(*rhs) {
                        accumulate(&mut grads, *rhs, gb);
                    }
                }
                Op::Unary { kind, src } => {
                    let x = nodes[*src].value.data();
                    let y = node.value.data();
                    let gd = g.data();
                    let data: Vec<f64> = (0..gd.len())
                        .map(|i| gd[i] * unary_derivative(*kind, x[i], y[i]))
                        .collect();
                    accumulate(&mut grads, *src, Array::new(g.shape(), data)?);
                }
                Op::Scale { src, factor } => {
                    accumulate(&mut grads, *src, g.map(|v| v * factor));
                }
                Op::Offset { src } => accumulate(&mut grads, *src, g.clone()),
                Op::Reshape { src } => {
                    let shape = nodes[*src].value.shape().to_vec();
                    accumulate(&mut grads, *src, g.clone().reshape(&shape)?);
                }
                Op::SumAxis {
                    src,
                    outer,
                    len,
                    inner,
                } => {
                    let shape = nodes[*src].value.shape().to_vec();
                    let gd = g.data();
                    let mut data = vec![0.0; outer * len * inner];
                    for o in 0..*outer {
                        for l in 0..*len {
                            let dst = &mut data[(o * len + l) * inner..(o * len + l + 1) * inner];
                            dst.copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                        }
                    }
                    accumulate(&mut grads, *src, Array::new(&shape, data)?);
                }
                Op::Concat { parts } => {
                    let total: usize = parts.iter().map(|p| p.1).sum();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for &(src, width) in parts {
                        let mut data = Vec::with_capacity(rows * width);
                        for r in 0..rows {
                            let row = &g.data()[r * total..(r + 1) * total];
                            data.extend_from_slice(&row[offset..offset + width]);
                        }
                        offset += width;
                        let shape = nodes[src].value.shape().to_vec();
                        accumulate(&mut grads, src, Array::new(&shape, data)?);
                    }
                }
                Op::Slice { src, start, width } => {
                    let shape = nodes[*src].value.shape().to_vec();
                    let total = *shape.last().expect("non-empty");
                    let rows = g.len() / width;
                    let mut data = vec![0.0; rows * total];
                    for r in 0..rows {
                        data[r * total + start..r * total + start + width]
                            .copy_from_slice(&g.data()[r * width..(r + 1) * width]);
                    }
                    accumulate(&mut grads, *src, Array::new(&shape, data)?);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Grads { grads })
    }
}

fn parents(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul { lhs, rhs } | Op::Binary { lhs, rhs, .. } => vec![*lhs, *rhs],
        Op::Unary { src, .. }
        | Op::Scale { src, .. }
        | Op::Offset { src }
        | Op::Reshape { src }
        | Op::SumAxis { src, .. }
        | Op::Slice { src, .. } => vec![*src],
        Op::Concat { parts } => parts.iter().map(|p| p.0).collect(),
    }
}

fn accumulate(grads: &mut [Option<Array>], id: usize, g: Array) {
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn unary_derivative(kind: Unary, x: f64, y: f64) -> f64 {
    match kind {
        Unary::Tanh => 1.0 - y * y,
        Unary::Sigmoid => y * (1.0 - y),
        Unary::Elu => {
            if x > 0.0 {
                1.0
            } else {
                y + 1.0
            }
        }
        Unary::Softplus => sigmoid(x),
        Unary::Exp => y,
        Unary::Log => 1.0 / x,
        Unary::Neg => -1.0,
        Unary::Square => 2.0 * x,
    }
}

/// `tanh` through one `exp_m1`, which avoids cancellation near zero and is
/// several times faster than the libm routine.
pub(crate) fn tanh(x: f64) -> f64 {
    let m = (-2.0 * x.abs()).exp_m1();
    (-m / (m + 2.0)).copysign(x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `rhs` broadcasts into `lhs` when shapes are equal, when `rhs` holds a single
/// value, or when `rhs.shape` is a trailing suffix of `lhs.shape`.
fn broadcasts(lhs: &[usize], rhs: &[usize]) -> bool {
    if lhs == rhs || rhs.iter().product::<usize>() == 1 {
        return true;
    }
    rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs
}

/// `f(lhs, rhs)` elementwise, with `rhs` repeating every `rhs.len()`
/// elements of `lhs`.
fn broadcast_map(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let bd = b.data();
    let mut data = Vec::with_capacity(a.len());
    for chunk in a.data().chunks(bd.len()) {
        data.extend(chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)));
    }
    data
}

fn binary_backward(kind: Binary, a: &Array, b: &Array, g: &Array) -> (Array, Array) {
    let bl = b.len();
    let bd = b.data();
    let mut ga = Vec::with_capacity(a.len());
    let mut gb = vec![0.0; bl];
    for (ac, gc) in a.data().chunks(bl).zip(g.data().chunks(bl)) {
        for j in 0..ac.len() {
            let (x, y, gi) = (ac[j], bd[j], gc[j]);
            let (da, db) = match kind {
                Binary::Add => (1.0, 1.0),
                Binary::Sub => (1.0, -1.0),
                Binary::Mul => (y, x),
                Binary::Div => (1.0 / y, -x / (y * y)),
            };
            ga.push(gi * da);
            gb[j] += gi * db;
        }
    }
    (
        Array::new(a.shape(), ga).expect("shape preserved"),
        Array::new(b.shape(), gb).expect("shape preserved"),
    )
}

/// `c = op(a) · op(b)` with `op(a)` of logical shape `[m, k]` and `op(b)` of
/// logical shape `[k, n]`; `c` is overwritten.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Array> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, kind: Unary) -> Var<'t> {
        let v = self.value();
        let out = match kind {
            Unary::Tanh => v.map(tanh),
            Unary::Sigmoid => v.map(sigmoid),
            Unary::Elu => v.map(|x| if x > 0.0 { x } else { x.exp_m1() }),
            Unary::Softplus => v.map(softplus),
            Unary::Exp => v.map(f64::exp),
            Unary::Log => v.map(f64::ln),
            Unary::Neg => v.map(|x| -x),
            Unary::Square => v.map(|x| x * x),
        };
        self.tape.push(out, Op::Unary { kind, src: self.id })
    }

    fn binary(self, kind: Binary, rhs: Var<'t>, name: &'static str) -> Result<Var<'t>, DiffError> {
        let a = self.value();
        let b = rhs.value();
        if !broadcasts(a.shape(), b.shape()) {
            return Err(DiffError::ShapeMismatch {
                op: name,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = match kind {
            Binary::Add => broadcast_map(&a, &b, |x, y| x + y),
            Binary::Sub => broadcast_map(&a, &b, |x, y| x - y),
            Binary::Mul => broadcast_map(&a, &b, |x, y| x * y),
            Binary::Div => broadcast_map(&a, &b, |x, y| x / y),
        };
        let out = Array::new(a.shape(), data)?;
        Ok(self.tape.push(
            out,
            Op::Binary {
                kind,
                lhs: self.id,
                rhs: rhs.id,
            },
        ))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>, DiffError> {
        self.binary(Binary::Add, rhs, "add")
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>, DiffError> {
        self.binary(Binary::Sub, rhs, "sub")
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>, DiffError> {
        self.binary(Binary::Mul, rhs, "mul")
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>, DiffError> {
        self.binary(Binary::Div, rhs, "div")
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>, DiffError> {
        let a = self.value();
        let b = rhs.value();
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), false, b.data(), false, &mut c);
        let out = Array::new(&[m, n], c)?;
        Ok(self.tape.push(
            out,
            Op::MatMul {
                lhs: self.id,
                rhs: rhs.id,
            },
        ))
    }

    /// `self · weight + bias`, bias broadcast over rows.
    pub fn affine(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>, DiffError> {
        let z = self.matmul(weight)?;
        let (zs, bs) = (z.shape(), bias.shape());
        if bs != [zs[1]] {
            return Err(DiffError::ShapeMismatch {
                op: "affine bias",
                lhs: zs,
                rhs: bs,
            });
        }
        z.add(bias)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Unary::Tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Unary::Sigmoid)
    }

    pub fn elu(self) -> Var<'t> {
        self.unary(Unary::Elu)
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Unary::Softplus)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Unary::Log)
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(Unary::Neg)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Unary::Square)
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let out = self.value().map(|x| x * factor);
        self.tape.push(
            out,
            Op::Scale {
                src: self.id,
                factor,
            },
        )
    }

    /// Adds a constant to every element.
    pub fn offset(self, c: f64) -> Var<'t> {
        let out = self.value().map(|x| x + c);
        self.tape.push(out, Op::Offset { src: self.id })
    }

    /// New leaf carrying the same value; no gradient flows back through it.
    pub fn stop_gradient(self) -> Var<'t> {
        self.tape.leaf_shared(self.value())
    }

    /// Sums out `axis`. Reducing the last remaining axis yields shape `[1]`.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>, DiffError> {
        let v = self.value();
        let shape = v.shape();
        if axis >= shape.len() {
            return Err(DiffError::BadAxis {
                axis,
                shape: shape.to_vec(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        let d = v.data();
        for o in 0..outer {
            for l in 0..len {
                let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, x) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += x;
                }
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis].iter().chain(&shape[axis + 1..]).copied().collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out = Array::new(&out_shape, data)?;
        Ok(self.tape.push(
            out,
            Op::SumAxis {
                src: self.id,
                outer,
                len,
                inner,
            },
        ))
    }

    pub fn sum_last(self) -> Result<Var<'t>, DiffError> {
        let rank = self.value().shape().len();
        self.sum_axis(rank - 1)
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>, DiffError> {
        let len = *self.value().shape().get(axis).ok_or(DiffError::BadAxis {
            axis,
            shape: self.shape(),
        })?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    pub fn sum_all(self) -> Var<'t> {
        let v = self.value();
        let n = v.len();
        let flat = self.tape.push(
            Array::new(&[n], v.data().to_vec()).expect("flat"),
            Op::Reshape { src: self.id },
        );
        flat.sum_axis(0).expect("rank-1 sum")
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = self.value().len();
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Columns `start..start + width` of the trailing axis.
    pub fn slice_cols(self, start: usize, width: usize) -> Result<Var<'t>, DiffError> {
        let v = self.value();
        let total = v.cols();
        if width == 0 || start + width > total {
            return Err(DiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: v.shape().to_vec(),
                rhs: vec![start, width],
            });
        }
        let rows = v.rows();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&v.row(r)[start..start + width]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().expect("non-empty") = width;
        let out = Array::new(&shape, data)?;
        Ok(self.tape.push(
            out,
            Op::Slice {
                src: self.id,
                start,
                width,
            },
        ))
    }
}

/// Result of [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Array>>,
}

impl Grads {
    /// Gradient of the root with respect to `var`, `None` when the root does
    /// not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Array> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`Grads::get`] but materializes zeros for unreachable nodes.
    pub fn wrt(&self, var: Var<'_>) -> Array {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Array::zeros(var.value().shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn tanh_of_zero() {
        let t = Tape::new();
        assert_eq!(t.scalar(0.0).tanh().item(), 0.0);
    }

    #[test]
    fn affine_identity() {
        let t = Tape::new();
        let x = t.leaf(Array::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let w = t.leaf(Array::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = t.leaf(Array::vector(vec![0.0, 0.0]));
        let y = x.affine(w, b).unwrap();
        assert_eq!(y.value().data(), &[1.0, 2.0]);
    }

    #[test]
    fn softplus_of_zero_is_ln2() {
        let t = Tape::new();
        let y = t.scalar(0.0).softplus().item();
        assert!(approx(y, std::f64::consts::LN_2, 1e-12));
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
    }

    #[test]
    fn mismatched_shapes_report_both() {
        let t = Tape::new();
        let a = t.leaf(Array::zeros(&[2, 3]));
        let b = t.leaf(Array::zeros(&[2, 2]));
        let err = a.add(b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
        assert!(a.matmul(b).is_err());
    }

    #[test]
    fn non_scalar_root_rejected() {
        let t = Tape::new();
        let a = t.leaf(Array::zeros(&[2]));
        assert!(matches!(t.backward(a), Err(DiffError::NonScalarRoot(_))));
    }

    #[test]
    fn root_equal_to_param_has_unit_grad() {
        let t = Tape::new();
        let p = t.scalar(3.5);
        let g = t.backward(p).unwrap();
        assert_eq!(g.wrt(p).item(), 1.0);
    }

    #[test]
    fn independent_param_has_zero_grad() {
        let t = Tape::new();
        let p = t.scalar(3.5);
        let q = t.scalar(2.0);
        let root = q.square();
        let g = t.backward(root).unwrap();
        assert!(g.get(p).is_none());
        assert_eq!(g.wrt(p).item(), 0.0);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let t = Tape::new();
        let p = t.scalar(3.0);
        let root = p.stop_gradient().square().add(p).unwrap();
        let g = t.backward(root).unwrap();
        assert_eq!(g.wrt(p).item(), 1.0);
    }

    #[test]
    fn reused_node_accumulates() {
        // f(x) = x*x + x, reusing x twice in the product; duplicated-subgraph
        // oracle builds two independent leaves and sums their gradients.
        let t = Tape::new();
        let x = t.scalar(1.7);
        let root = x.mul(x).unwrap().add(x).unwrap();
        let shared = t.backward(root).unwrap().wrt(x).item();

        let t2 = Tape::new();
        let x1 = t2.scalar(1.7);
        let x2 = t2.scalar(1.7);
        let x3 = t2.scalar(1.7);
        let root2 = x1.mul(x2).unwrap().add(x3).unwrap();
        let g2 = t2.backward(root2).unwrap();
        let dup = g2.wrt(x1).item() + g2.wrt(x2).item() + g2.wrt(x3).item();
        assert_eq!(shared, dup);
        assert!(approx(shared, 2.0 * 1.7 + 1.0, 1e-12));
    }

    #[test]
    fn sum_axis_shapes() {
        let t = Tape::new();
        let a = t.leaf(Array::new(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap());
        assert_eq!(a.sum_axis(0).unwrap().shape(), vec![3, 4]);
        assert_eq!(a.sum_axis(1).unwrap().shape(), vec![2, 4]);
        assert_eq!(a.sum_last().unwrap().shape(), vec![2, 3]);
        assert_eq!(a.sum_all().item(), (0..24).sum::<i32>() as f64);
        assert!(a.sum_axis(3).is_err());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let t = Tape::new();
        let a = t.leaf(Array::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let b = t.leaf(Array::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = c.slice_cols(1, 2).unwrap();
        assert_eq!(s.value().data(), b.value().data());
    }
}

//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! Every value on the tape is a 2-D array (scalars are `1×1`). Operations
//! are recorded in evaluation order, so a single backward sweep over the
//! node list in reverse visits each node after all of its consumers.

use std::fmt::Debug;
use std::rc::Rc;

use ndarray::{s, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};

/// Floating-point element type usable on a [`Tape`].
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + std::ops::AddAssign
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite cast")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Concat(Var, Var),
    Gather(Var, Rc<Vec<usize>>),
    Relu(Var),
    Sigmoid(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    OneMinus(Var),
    Square(Var),
    Scale(Var, T),
    Bce(Var, Rc<Array2<T>>, T),
    LnClamp(Var, T, T),
    Mean(Var),
    WeightedSum(Var, Rc<Array2<T>>),
    SumAbs(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of every node that depends on a differentiable leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<T>> {
        self.grads[v.0].take()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameters, latent codes).
    pub fn param(&mut self, value: Array2<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).mapv(f);
        self.push(value, op, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    /// `a + b` with the `1×m` row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::AddRow(a, b), &[a, b])
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts match");
        self.push(value, Op::Concat(a, b), &[a, b])
    }

    /// Rows of `table` selected by `index` (repeats allowed).
    pub fn gather(&mut self, table: Var, index: Rc<Vec<usize>>) -> Var {
        let t = self.value(table);
        let value = t.select(Axis(0), &index);
        self.push(value, Op::Gather(table, index), &[table])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, Op::OneMinus(a), |x| T::one() - x)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    /// Elementwise binary cross-entropy against fixed targets, with the
    /// prediction clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, p: Var, targets: Rc<Array2<T>>, eps: T) -> Var {
        let mut value = self.value(p).clone();
        Zip::from(&mut value).and(&*targets).for_each(|x, &y| {
            let q = x.max(eps).min(T::one() - eps);
            *x = -(y * q.ln() + (T::one() - y) * (T::one() - q).ln());
        });
        self.push(value, Op::Bce(p, targets, eps), &[p])
    }

    /// `ln(clamp(a, lo, hi))`; zero gradient where the clamp is active.
    pub fn ln_clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.map(a, Op::LnClamp(a, lo, hi), |x| x.max(lo).min(hi).ln())
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::of(v.len() as f64);
        let value = Array2::from_elem((1, 1), v.sum() / n);
        self.push(value, Op::Mean(a), &[a])
    }

    /// `Σ a ∘ w` for a fixed weight array of the same shape.
    pub fn weighted_sum(&mut self, a: Var, weights: Rc<Array2<T>>) -> Var {
        let total = Zip::from(self.value(a))
            .and(&*weights)
            .fold(T::zero(), |acc, &x, &w| acc + x * w);
        self.push(Array2::from_elem((1, 1), total), Op::WeightedSum(a, weights), &[a])
    }

    /// L1 norm of all entries.
    pub fn sum_abs(&mut self, a: Var) -> Var {
        let total = self.value(a).fold(T::zero(), |acc, &x| acc + x.abs());
        self.push(Array2::from_elem((1, 1), total), Op::SumAbs(a), &[a])
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Array2::from_elem(self.value(output).dim(), T::one()));

        fn accumulate<T: Real>(slot: &mut Option<Array2<T>>, g: Array2<T>) {
            match slot {
                Some(acc) => *acc += &g,
                None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let wants = |v: &Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if wants(a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads[a.0], ga);
                    }
                    if wants(b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::AddRow(a, b) => {
                    if wants(b) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads[b.0], gb);
                    }
                    if wants(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Concat(a, b) => {
                    let split = self.value(*a).ncols();
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.slice(s![.., ..split]).to_owned());
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], g.slice(s![.., split..]).to_owned());
                    }
                }
                Op::Gather(table, index) => {
                    let mut gt = Array2::zeros(self.value(*table).dim());
                    for (row, &r) in g.outer_iter().zip(index.iter()) {
                        let mut dst = gt.row_mut(r);
                        dst += &row;
                    }
                    accumulate(&mut grads[table.0], gt);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|d, &x| {
                            if x <= T::zero() {
                                *d = T::zero();
                            }
                        });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|d, &y| *d = *d * y * (T::one() - y));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], &g * self.value(*b));
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], &g * self.value(*a));
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        accumulate(&mut grads[b.0], -g);
                    }
                }
                Op::OneMinus(a) => accumulate(&mut grads[a.0], -g),
                Op::Square(a) => {
                    let two = T::of(2.0);
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|d, &x| *d = *d * two * x);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Scale(a, c) => accumulate(&mut grads[a.0], g * *c),
                Op::Bce(p, targets, eps) => {
                    let eps = *eps;
                    let mut gp = g;
                    Zip::from(&mut gp)
                        .and(self.value(*p))
                        .and(&**targets)
                        .for_each(|d, &x, &y| {
                            if x < eps || x > T::one() - eps {
                                *d = T::zero();
                            } else {
                                *d = *d * (-y / x + (T::one() - y) / (T::one() - x));
                            }
                        });
                    accumulate(&mut grads[p.0], gp);
                }
                Op::LnClamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        if x < lo || x > hi {
                            *d = T::zero();
                        } else {
                            *d = *d / x;
                        }
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Mean(a) => {
                    let v = self.value(*a);
                    let scale = g[[0, 0]] / T::of(v.len() as f64);
                    accumulate(&mut grads[a.0], Array2::from_elem(v.dim(), scale));
                }
                Op::WeightedSum(a, w) => {
                    let scale = g[[0, 0]];
                    accumulate(&mut grads[a.0], w.mapv(|x| x * scale));
                }
                Op::SumAbs(a) => {
                    let scale = g[[0, 0]];
                    let ga = self.value(*a).mapv(|x| {
                        if x > T::zero() {
                            scale
                        } else if x < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut grads[a.0], ga);
                }
            }
        }
        Gradients { grads }
    }
}

/// Row-major copy of a view into a fresh array of another precision.
pub fn cast<A: Real, B: Real>(a: ArrayView2<A>) -> Array2<B> {
    a.mapv(|x| B::of(x.as_f64()))
}

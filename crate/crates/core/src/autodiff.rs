//! Scalar reverse-mode automatic differentiation on a tape.
//!
//! Every arithmetic operation on a [`Var`] appends one node holding the local
//! partial derivatives with respect to its (at most two) parents. A reverse
//! sweep over the tape then accumulates adjoints for all nodes at once, so one
//! ELBO evaluation yields the gradient with respect to every parameter leaf.
//!
//! Constants (`Var`s created through `Scalar::constant`) are not recorded;
//! a node is pushed only when at least one operand lives on the tape.

use crate::scalar::Scalar;
use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Record of operations; owns all nodes created during one evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
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

    /// Create an input variable whose adjoint will be available after `gradient`.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node { parents: [NONE, NONE], partials: [0.0, 0.0] });
        Var { val: value, node: Some((idx, self)) }
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < NONE as usize, "tape overflow");
        nodes.push(node);
        idx as u32
    }

    /// Adjoints of every node with respect to `output`, in creation order.
    ///
    /// Leaves created first occupy the first indices, so callers that register
    /// all parameters up front can read their gradients from the prefix.
    pub fn gradient(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        let out_idx = match output.node {
            Some((idx, _)) => idx as usize,
            None => return adjoint, // output is a constant
        };
        adjoint[out_idx] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for k in 0..2 {
                if node.parents[k] != NONE {
                    adjoint[node.parents[k] as usize] += a * node.partials[k];
                }
            }
        }
        adjoint
    }
}

/// A value recorded on a [`Tape`], or a free-floating constant.
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    val: f64,
    node: Option<(u32, &'t Tape)>,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

fn unary<'t>(x: Var<'t>, val: f64, dx: f64) -> Var<'t> {
    match x.node {
        Some((idx, tape)) => {
            let out = tape.push(Node { parents: [idx, NONE], partials: [dx, 0.0] });
            Var { val, node: Some((out, tape)) }
        }
        None => Var { val, node: None },
    }
}

fn binary<'t>(a: Var<'t>, b: Var<'t>, val: f64, da: f64, db: f64) -> Var<'t> {
    let tape = a.node.or(b.node).map(|(_, t)| t);
    match tape {
        Some(tape) => {
            let pa = a.node.map_or(NONE, |(i, _)| i);
            let pb = b.node.map_or(NONE, |(i, _)| i);
            let out = tape.push(Node { parents: [pa, pb], partials: [da, db] });
            Var { val, node: Some((out, tape)) }
        }
        None => Var { val, node: None },
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        binary(self, rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        binary(self, rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        binary(self, rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        binary(self, rhs, self.val / rhs.val, 1.0 / rhs.val, -self.val / (rhs.val * rhs.val))
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        unary(self, -self.val, -1.0)
    }
}

impl PartialEq for Var<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.val == other.val
    }
}

impl PartialOrd for Var<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.val.partial_cmp(&other.val)
    }
}

impl<'t> Scalar for Var<'t> {
    fn constant(v: f64) -> Self {
        Var { val: v, node: None }
    }
    fn value(self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        unary(self, e, e)
    }
    fn ln(self) -> Self {
        unary(self, self.val.ln(), 1.0 / self.val)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        unary(self, s, 0.5 / s)
    }
    fn sinh(self) -> Self {
        unary(self, self.val.sinh(), self.val.cosh())
    }
    fn cosh(self) -> Self {
        unary(self, self.val.cosh(), self.val.sinh())
    }
    fn asinh(self) -> Self {
        unary(self, self.val.asinh(), 1.0 / (1.0 + self.val * self.val).sqrt())
    }
}

//! Wengert tape for reverse-mode parameter gradients.
//!
//! Leaves are the trainable parameters and occupy the first `n_params`
//! nodes. Constants (coordinates, material values, loading directions) never
//! touch the tape: they ride inside the operation nodes, so tape length
//! scales with parameter-dependent work only. A recorded tape can be
//! replayed on fresh parameter values without re-recording.

use super::{AdError, AdResult, Jet2, Scalar};
use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

const CONST_IDX: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    /// `a * b + acc`, all variables.
    MulAdd(u32, u32, u32),
    /// `x + c`.
    AddC(u32),
    /// `c - x`.
    SubCR(u32),
    /// `c * x`.
    MulC(u32),
    /// `c / x`.
    DivC(u32),
    /// `c * x + y`.
    MulCAdd(u32, u32),
    Neg(u32),
    Sin(u32),
    Cos(u32),
    Tanh(u32),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    c: f64,
    val: f64,
}

/// Recording tape. Not thread-safe by design: concurrent evaluation uses one
/// tape per worker and merges gradients outside.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    n_params: std::cell::Cell<usize>,
}

/// A recorded value: a cheap copyable handle onto its tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_params(&self) -> usize {
        self.n_params.get()
    }

    /// Drop all nodes but keep allocations, ready for a fresh recording.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.n_params.set(0);
    }

    /// Bind the parameter vector as tape leaves. Must be the first nodes.
    pub fn leaves(&self, params: &[f64]) -> AdResult<Vec<Var<'_>>> {
        if !self.is_empty() {
            return Err(AdError::LeavesAlreadyBound);
        }
        self.n_params.set(params.len());
        let mut nodes = self.nodes.borrow_mut();
        Ok(params
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                nodes.push(Node {
                    op: Op::Leaf,
                    c: 0.0,
                    val: p,
                });
                Var {
                    tape: self,
                    idx: i as u32,
                    val: p,
                }
            })
            .collect())
    }

    /// A constant: participates in arithmetic without occupying a node.
    pub fn constant(&self, c: f64) -> Var<'_> {
        Var {
            tape: self,
            idx: CONST_IDX,
            val: c,
        }
    }

    /// Coordinate jet whose components are tape constants.
    pub fn coord_jet(&self, x: f64, axis: usize) -> Jet2<Var<'_>> {
        Jet2::coord_like(x, axis, self.constant(0.0))
    }

    fn push(&self, op: Op, c: f64, val: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        assert!(idx < CONST_IDX, "tape overflow");
        nodes.push(Node { op, c, val });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    /// Gradient of `output` with respect to the leaves, seeded with 1.
    pub fn gradient(&self, output: Var<'_>) -> AdResult<Vec<f64>> {
        let mut grad = vec![0.0; self.n_params.get()];
        let mut adj = Vec::new();
        self.gradient_accumulate(output, 1.0, &mut grad, &mut adj)?;
        Ok(grad)
    }

    /// Accumulate `seed * d(output)/d(leaf)` into `out`. `adj` is scratch,
    /// reused across calls to avoid reallocation.
    pub fn gradient_accumulate(
        &self,
        output: Var<'_>,
        seed: f64,
        out: &mut [f64],
        adj: &mut Vec<f64>,
    ) -> AdResult<()> {
        if !std::ptr::eq(output.tape, self) {
            return Err(AdError::ForeignVar);
        }
        if out.len() != self.n_params.get() {
            return Err(AdError::LengthMismatch {
                expected: self.n_params.get(),
                got: out.len(),
            });
        }
        if output.idx == CONST_IDX {
            return Ok(());
        }
        let nodes = self.nodes.borrow();
        adj.clear();
        adj.resize(nodes.len(), 0.0);
        adj[output.idx as usize] = seed;
        for i in (0..nodes.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            match node.op {
                Op::Leaf => out[i] += a,
                Op::Add(x, y) => {
                    adj[x as usize] += a;
                    adj[y as usize] += a;
                }
                Op::Sub(x, y) => {
                    adj[x as usize] += a;
                    adj[y as usize] -= a;
                }
                Op::Mul(x, y) => {
                    adj[x as usize] += a * nodes[y as usize].val;
                    adj[y as usize] += a * nodes[x as usize].val;
                }
                Op::Div(x, y) => {
                    let yv = nodes[y as usize].val;
                    adj[x as usize] += a / yv;
                    adj[y as usize] -= a * node.val / yv;
                }
                Op::MulAdd(x, y, z) => {
                    adj[x as usize] += a * nodes[y as usize].val;
                    adj[y as usize] += a * nodes[x as usize].val;
                    adj[z as usize] += a;
                }
                Op::AddC(x) => adj[x as usize] += a,
                Op::SubCR(x) => adj[x as usize] -= a,
                Op::MulC(x) => adj[x as usize] += a * node.c,
                Op::DivC(x) => {
                    adj[x as usize] -= a * node.val / nodes[x as usize].val;
                }
                Op::MulCAdd(x, y) => {
                    adj[x as usize] += a * node.c;
                    adj[y as usize] += a;
                }
                Op::Neg(x) => adj[x as usize] -= a,
                Op::Sin(x) => adj[x as usize] += a * nodes[x as usize].val.cos(),
                Op::Cos(x) => adj[x as usize] -= a * nodes[x as usize].val.sin(),
                Op::Tanh(x) => adj[x as usize] += a * (1.0 - node.val * node.val),
            }
        }
        Ok(())
    }

    /// Re-evaluate the recorded graph on new leaf values, without recording
    /// anything. Returns the recomputed value of every node.
    pub fn replay(&self, params: &[f64]) -> AdResult<Vec<f64>> {
        if params.len() != self.n_params.get() {
            return Err(AdError::LengthMismatch {
                expected: self.n_params.get(),
                got: params.len(),
            });
        }
        let nodes = self.nodes.borrow();
        let mut vals = vec![0.0; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            vals[i] = match node.op {
                Op::Leaf => params[i],
                Op::Add(x, y) => vals[x as usize] + vals[y as usize],
                Op::Sub(x, y) => vals[x as usize] - vals[y as usize],
                Op::Mul(x, y) => vals[x as usize] * vals[y as usize],
                Op::Div(x, y) => vals[x as usize] / vals[y as usize],
                Op::MulAdd(x, y, z) => vals[x as usize].mul_add(vals[y as usize], vals[z as usize]),
                Op::AddC(x) => vals[x as usize] + node.c,
                Op::SubCR(x) => node.c - vals[x as usize],
                Op::MulC(x) => vals[x as usize] * node.c,
                Op::DivC(x) => node.c / vals[x as usize],
                Op::MulCAdd(x, y) => node.c.mul_add(vals[x as usize], vals[y as usize]),
                Op::Neg(x) => -vals[x as usize],
                Op::Sin(x) => vals[x as usize].sin(),
                Op::Cos(x) => vals[x as usize].cos(),
                Op::Tanh(x) => vals[x as usize].tanh(),
            };
        }
        Ok(vals)
    }

    /// Recorded value of a variable.
    pub fn value_of(&self, v: Var<'_>) -> f64 {
        v.val
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.val
    }

    pub fn is_const(self) -> bool {
        self.idx == CONST_IDX
    }

    /// Index into the tape's node list; `None` for constants.
    pub fn index(self) -> Option<usize> {
        (self.idx != CONST_IDX).then_some(self.idx as usize)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, r: Var<'t>) -> Var<'t> {
        match (self.is_const(), r.is_const()) {
            (true, true) => self.tape.constant(self.val + r.val),
            (false, true) => self.tape.push(Op::AddC(self.idx), r.val, self.val + r.val),
            (true, false) => r.tape.push(Op::AddC(r.idx), self.val, self.val + r.val),
            (false, false) => self.tape.push(Op::Add(self.idx, r.idx), 0.0, self.val + r.val),
        }
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, r: Var<'t>) -> Var<'t> {
        match (self.is_const(), r.is_const()) {
            (true, true) => self.tape.constant(self.val - r.val),
            (false, true) => self.tape.push(Op::AddC(self.idx), -r.val, self.val - r.val),
            (true, false) => r.tape.push(Op::SubCR(r.idx), self.val, self.val - r.val),
            (false, false) => self.tape.push(Op::Sub(self.idx, r.idx), 0.0, self.val - r.val),
        }
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, r: Var<'t>) -> Var<'t> {
        match (self.is_const(), r.is_const()) {
            (true, true) => self.tape.constant(self.val * r.val),
            (false, true) => self.tape.push(Op::MulC(self.idx), r.val, self.val * r.val),
            (true, false) => r.tape.push(Op::MulC(r.idx), self.val, self.val * r.val),
            (false, false) => self.tape.push(Op::Mul(self.idx, r.idx), 0.0, self.val * r.val),
        }
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, r: Var<'t>) -> Var<'t> {
        match (self.is_const(), r.is_const()) {
            (true, true) => self.tape.constant(self.val / r.val),
            (false, true) => self
                .tape
                .push(Op::MulC(self.idx), 1.0 / r.val, self.val / r.val),
            (true, false) => r.tape.push(Op::DivC(r.idx), self.val, self.val / r.val),
            (false, false) => self.tape.push(Op::Div(self.idx, r.idx), 0.0, self.val / r.val),
        }
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        if self.is_const() {
            self.tape.constant(-self.val)
        } else {
            self.tape.push(Op::Neg(self.idx), 0.0, -self.val)
        }
    }
}

impl<'t> Scalar for Var<'t> {
    fn lift(self, c: f64) -> Var<'t> {
        self.tape.constant(c)
    }

    fn value(self) -> f64 {
        self.val
    }

    fn sin(self) -> Var<'t> {
        if self.is_const() {
            self.tape.constant(self.val.sin())
        } else {
            self.tape.push(Op::Sin(self.idx), 0.0, self.val.sin())
        }
    }

    fn cos(self) -> Var<'t> {
        if self.is_const() {
            self.tape.constant(self.val.cos())
        } else {
            self.tape.push(Op::Cos(self.idx), 0.0, self.val.cos())
        }
    }

    fn tanh(self) -> Var<'t> {
        if self.is_const() {
            self.tape.constant(self.val.tanh())
        } else {
            self.tape.push(Op::Tanh(self.idx), 0.0, self.val.tanh())
        }
    }

    fn mul_add(self, b: Var<'t>, acc: Var<'t>) -> Var<'t> {
        let val = self.val.mul_add(b.val, acc.val);
        match (self.is_const(), b.is_const(), acc.is_const()) {
            (false, false, false) => self
                .tape
                .push(Op::MulAdd(self.idx, b.idx, acc.idx), 0.0, val),
            (true, false, false) => b.tape.push(Op::MulCAdd(b.idx, acc.idx), self.val, val),
            (false, true, false) => self.tape.push(Op::MulCAdd(self.idx, acc.idx), b.val, val),
            (true, true, false) => acc.tape.push(Op::AddC(acc.idx), self.val * b.val, val),
            (true, true, true) => self.tape.constant(val),
            // A constant accumulator: fall back to two recorded ops.
            _ => self * b + acc,
        }
    }

    fn scale(self, c: f64) -> Var<'t> {
        self * self.tape.constant(c)
    }

    fn add_c(self, c: f64) -> Var<'t> {
        self + self.tape.constant(c)
    }
}

/// Record `build` over a fresh tape bound to `params` and return the
/// gradient of its scalar output with respect to `params`.
pub fn param_gradient<F>(params: &[f64], build: F) -> AdResult<Vec<f64>>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> AdResult<Var<'t>>,
{
    let tape = Tape::new();
    let vars = tape.leaves(params)?;
    let out = build(&tape, &vars)?;
    tape.gradient(out)
}

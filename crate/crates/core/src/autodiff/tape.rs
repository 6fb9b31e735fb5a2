use super::{Real, Tower};
use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::rc::Rc;

/// Entry of an assembled tensor: a recorded scalar or a literal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Src {
    Node(u32),
    Const(f64),
}

#[derive(Clone, Debug)]
pub(crate) struct MapTerm {
    pub out: u16,
    pub n: u8,
    pub blocks: [u16; 4],
}

#[derive(Debug)]
pub(crate) struct MapPlan {
    pub group: usize,
    pub maxdeg: usize,
    pub terms: Vec<MapTerm>,
}

#[derive(Debug)]
pub(crate) struct MulPlan {
    pub gx: usize,
    pub gy: usize,
    pub go: usize,
    pub triples: Vec<(u16, u16, u16)>,
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Recip(u32),
    Affine(u32, f64),
    Tower(u32, Tower, u8),
    Sqrt(u32),
    Sum(u32),
    MatMul(u32, u32),
    AddCol0 {
        x: u32,
        bias: u32,
        group: u32,
    },
    JetMap {
        x: u32,
        f: Tower,
        plan: Rc<MapPlan>,
    },
    JetMul {
        x: u32,
        y: u32,
        plan: Rc<MulPlan>,
    },
    Embed {
        x: u32,
        map: Rc<[u16]>,
        sg: u32,
        dg: u32,
    },
    Entry {
        x: u32,
        idx: u32,
    },
    Assemble(Rc<[Src]>),
    SymMaxEig {
        x: u32,
        v: Rc<[f64]>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    rows: u32,
    cols: u32,
    off: usize,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    vals: Vec<f64>,
}

/// Reverse-mode recording of tensor operations.
///
/// Values live in one arena; every node's parents sit at lower offsets, which
/// lets the reverse sweep split the gradient buffer without copying.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = self.inner.borrow();
        write!(f, "Tape({} nodes, {} values)", i.nodes.len(), i.vals.len())
    }
}

/// Handle to a recorded matrix (row-major).
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: u32,
}

impl fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Tensor#{}({r}x{c})", self.id)
    }
}

/// Scalar that is either a literal or a 1x1 node on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    id: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var#{}({})", self.id, self.val),
            None => write!(f, "Const({})", self.val),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        let i = self.inner.get_mut();
        i.nodes.clear();
        i.vals.clear();
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(
        &self,
        op: Op,
        rows: usize,
        cols: usize,
        fill: impl FnOnce(&[f64], &[Node], &mut [f64]),
    ) -> u32 {
        let mut guard = self.inner.borrow_mut();
        let inner = &mut *guard;
        let off = inner.vals.len();
        inner.vals.resize(off + rows * cols, 0.0);
        let (prev, out) = inner.vals.split_at_mut(off);
        fill(prev, &inner.nodes, out);
        let id = inner.nodes.len() as u32;
        inner.nodes.push(Node {
            op,
            rows: rows as u32,
            cols: cols as u32,
            off,
        });
        id
    }

    fn shape_of(&self, id: u32) -> (usize, usize) {
        let i = self.inner.borrow();
        let n = &i.nodes[id as usize];
        (n.rows as usize, n.cols as usize)
    }

    /// Records a trainable or data matrix.
    pub fn leaf(&self, rows: usize, cols: usize, data: &[f64]) -> Tensor<'_> {
        assert_eq!(data.len(), rows * cols, "leaf data length");
        let id = self.push(Op::Leaf, rows, cols, |_, _, out| out.copy_from_slice(data));
        Tensor { tape: self, id }
    }

    /// Records a scalar input.
    pub fn var(&self, v: f64) -> Var<'_> {
        let id = self.push(Op::Leaf, 1, 1, |_, _, out| out[0] = v);
        Var {
            tape: Some(self),
            id,
            val: v,
        }
    }

    /// Builds a matrix from scalars; literal entries carry no gradient.
    pub fn assemble(&self, rows: usize, cols: usize, src: Vec<Src>) -> Tensor<'_> {
        assert_eq!(src.len(), rows * cols, "assemble length");
        let src: Rc<[Src]> = src.into();
        let s2 = src.clone();
        let id = self.push(Op::Assemble(src), rows, cols, |prev, nodes, out| {
            for (o, s) in out.iter_mut().zip(s2.iter()) {
                *o = match *s {
                    Src::Const(v) => v,
                    Src::Node(id) => prev[nodes[id as usize].off],
                };
            }
        });
        Tensor { tape: self, id }
    }

    pub fn assemble_vars(&self, rows: usize, cols: usize, vars: &[Var<'_>]) -> Tensor<'_> {
        self.assemble(rows, cols, vars.iter().map(Var::src).collect())
    }

    /// Reverse sweep seeded with d(out)/d(out) = 1.
    pub fn backward(&self, out: Var<'_>) -> Grads<'_> {
        let inner = self.inner.borrow();
        let mut g = vec![0.0; inner.vals.len()];
        let Some(_) = out.tape else {
            return Grads { tape: self, g };
        };
        let last = out.id as usize;
        g[inner.nodes[last].off] = 1.0;
        let vals = &inner.vals;
        let nodes = &inner.nodes;
        for node in nodes[..=last].iter().rev() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let len = (node.rows * node.cols) as usize;
            let (lo, hi) = g.split_at_mut(node.off);
            let go = &hi[..len];
            if go.iter().all(|&x| x == 0.0) {
                continue;
            }
            let out = &vals[node.off..node.off + len];
            reverse(node, nodes, vals, out, go, lo);
        }
        drop(inner);
        Grads { tape: self, g }
    }

    fn values_of(&self, id: u32) -> Vec<f64> {
        let i = self.inner.borrow();
        let n = &i.nodes[id as usize];
        i.vals[n.off..n.off + (n.rows * n.cols) as usize].to_vec()
    }

    fn scalar_node(&self, op: Op, val: f64) -> Var<'_> {
        let id = self.push(op, 1, 1, |_, _, out| out[0] = val);
        Var {
            tape: Some(self),
            id,
            val,
        }
    }

    pub(crate) fn jet_map(&self, x: Tensor<'_>, f: Tower, plan: Rc<MapPlan>) -> Tensor<'_> {
        let (rows, cols) = x.shape();
        let p = plan.clone();
        let id = self.push(
            Op::JetMap { x: x.id, f, plan },
            rows,
            cols,
            |prev, nodes, out| {
                let xo = nodes[x.id as usize].off;
                let xs = &prev[xo..xo + rows * cols];
                let mut d = [0.0; 8];
                let d = &mut d[..=p.maxdeg];
                for r in 0..rows {
                    for base in (r * cols..(r + 1) * cols).step_by(p.group) {
                        f.eval_all(xs[base], d);
                        out[base] = d[0];
                        for t in &p.terms {
                            let mut prod = d[t.n as usize];
                            for &b in &t.blocks[..t.n as usize] {
                                prod *= xs[base + b as usize];
                            }
                            out[base + t.out as usize] += prod;
                        }
                    }
                }
            },
        );
        Tensor { tape: self, id }
    }

    pub(crate) fn jet_mul<'a>(
        &'a self,
        x: Tensor<'a>,
        y: Tensor<'a>,
        plan: Rc<MulPlan>,
    ) -> Tensor<'a> {
        let rows = x.rows();
        let batch = x.cols() / plan.gx;
        assert_eq!(y.rows(), rows, "jet rows");
        assert_eq!(y.cols(), batch * plan.gy, "jet batch");
        let p = plan.clone();
        let id = self.push(
            Op::JetMul {
                x: x.id,
                y: y.id,
                plan,
            },
            rows,
            batch * p.go,
            |prev, nodes, out| {
                let xo = nodes[x.id as usize].off;
                let yo = nodes[y.id as usize].off;
                for r in 0..rows {
                    for s in 0..batch {
                        let bx = xo + r * batch * p.gx + s * p.gx;
                        let by = yo + r * batch * p.gy + s * p.gy;
                        let bo = r * batch * p.go + s * p.go;
                        for &(o, a, b) in &p.triples {
                            out[bo + o as usize] += prev[bx + a as usize] * prev[by + b as usize];
                        }
                    }
                }
            },
        );
        Tensor { tape: self, id }
    }

    pub(crate) fn embed<'a>(
        &'a self,
        x: Tensor<'a>,
        map: Rc<[u16]>,
        sg: usize,
        dg: usize,
    ) -> Tensor<'a> {
        let rows = x.rows();
        let batch = x.cols() / sg;
        let m = map.clone();
        let id = self.push(
            Op::Embed {
                x: x.id,
                map,
                sg: sg as u32,
                dg: dg as u32,
            },
            rows,
            batch * dg,
            |prev, nodes, out| {
                let xo = nodes[x.id as usize].off;
                for r in 0..rows {
                    for s in 0..batch {
                        for (c, &t) in m.iter().enumerate() {
                            out[r * batch * dg + s * dg + t as usize] =
                                prev[xo + r * batch * sg + s * sg + c];
                        }
                    }
                }
            },
        );
        Tensor { tape: self, id }
    }

    /// Largest eigenvalue of a symmetric matrix node; the reverse rule uses
    /// the outer product of the returned eigenvector.
    pub fn sym_max_eig<'a>(&'a self, a: Tensor<'a>) -> Var<'a> {
        let (n, m) = a.shape();
        assert_eq!(n, m, "sym_max_eig needs a square matrix");
        let mat = crate::numerics::SmallMatrix::from_vec(n, n, a.values());
        let (lam, vecs) = crate::numerics::sym_eig_unchecked(&mat);
        let v: Rc<[f64]> = (0..n).map(|i| vecs[(i, 0)]).collect();
        self.scalar_node(Op::SymMaxEig { x: a.id, v }, lam[0])
    }
}

fn reverse(node: &Node, nodes: &[Node], vals: &[f64], out: &[f64], go: &[f64], lo: &mut [f64]) {
    let off = |id: u32| nodes[id as usize].off;
    let len = go.len();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            let (oa, ob) = (off(*a), off(*b));
            for i in 0..len {
                lo[oa + i] += go[i];
                lo[ob + i] += go[i];
            }
        }
        Op::Sub(a, b) => {
            let (oa, ob) = (off(*a), off(*b));
            for i in 0..len {
                lo[oa + i] += go[i];
                lo[ob + i] -= go[i];
            }
        }
        Op::Mul(a, b) => {
            let (oa, ob) = (off(*a), off(*b));
            for i in 0..len {
                lo[oa + i] += go[i] * vals[ob + i];
                lo[ob + i] += go[i] * vals[oa + i];
            }
        }
        Op::Div(a, b) => {
            let (oa, ob) = (off(*a), off(*b));
            for i in 0..len {
                let vb = vals[ob + i];
                lo[oa + i] += go[i] / vb;
                lo[ob + i] -= go[i] * out[i] / vb;
            }
        }
        Op::Recip(a) => {
            let oa = off(*a);
            for i in 0..len {
                lo[oa + i] -= go[i] * out[i] * out[i];
            }
        }
        Op::Affine(a, s) => {
            let oa = off(*a);
            for i in 0..len {
                lo[oa + i] += go[i] * s;
            }
        }
        Op::Tower(a, f, k) => {
            let oa = off(*a);
            for i in 0..len {
                lo[oa + i] += go[i] * f.eval(vals[oa + i], *k as usize + 1);
            }
        }
        Op::Sqrt(a) => {
            let oa = off(*a);
            for i in 0..len {
                lo[oa + i] += go[i] * 0.5 / out[i];
            }
        }
        Op::Sum(a) => {
            let na = &nodes[*a as usize];
            let n = (na.rows * na.cols) as usize;
            for v in &mut lo[na.off..na.off + n] {
                *v += go[0];
            }
        }
        Op::MatMul(a, x) => {
            let na = &nodes[*a as usize];
            let nx = &nodes[*x as usize];
            let (m, k, n) = (na.rows as usize, na.cols as usize, nx.cols as usize);
            let (oa, ox) = (na.off, nx.off);
            // dA = G Xᵀ
            for i in 0..m {
                let gi = &go[i * n..(i + 1) * n];
                for l in 0..k {
                    let xl = &vals[ox + l * n..ox + (l + 1) * n];
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += gi[j] * xl[j];
                    }
                    lo[oa + i * k + l] += acc;
                }
            }
            // dX = Aᵀ G
            for i in 0..m {
                let gi = &go[i * n..(i + 1) * n];
                for l in 0..k {
                    let a = vals[oa + i * k + l];
                    if a == 0.0 {
                        continue;
                    }
                    let row = &mut lo[ox + l * n..ox + (l + 1) * n];
                    for j in 0..n {
                        row[j] += a * gi[j];
                    }
                }
            }
        }
        Op::AddCol0 { x, bias, group } => {
            let ox = off(*x);
            let ob = off(*bias);
            let cols = node.cols as usize;
            for i in 0..len {
                lo[ox + i] += go[i];
            }
            for r in 0..node.rows as usize {
                let mut acc = 0.0;
                for c in (0..cols).step_by(*group as usize) {
                    acc += go[r * cols + c];
                }
                lo[ob + r] += acc;
            }
        }
        Op::JetMap { x, f, plan } => {
            let ox = off(*x);
            let xs = &vals[ox..ox + len];
            let cols = node.cols as usize;
            let mut d = [0.0; 9];
            let d = &mut d[..=plan.maxdeg + 1];
            for r in 0..node.rows as usize {
                for base in (r * cols..(r + 1) * cols).step_by(plan.group) {
                    f.eval_all(xs[base], d);
                    let mut g0 = go[base] * d[1];
                    for t in &plan.terms {
                        let g = go[base + t.out as usize];
                        if g == 0.0 {
                            continue;
                        }
                        let n = t.n as usize;
                        let bl = &t.blocks[..n];
                        let mut prod = 1.0;
                        for &b in bl {
                            prod *= xs[base + b as usize];
                        }
                        g0 += g * d[n + 1] * prod;
                        for (j, &b) in bl.iter().enumerate() {
                            let mut p = g * d[n];
                            for (l, &c) in bl.iter().enumerate() {
                                if l != j {
                                    p *= xs[base + c as usize];
                                }
                            }
                            lo[ox + base + b as usize] += p;
                        }
                    }
                    lo[ox + base] += g0;
                }
            }
        }
        Op::JetMul { x, y, plan } => {
            let (ox, oy) = (off(*x), off(*y));
            let rows = node.rows as usize;
            let batch = node.cols as usize / plan.go;
            for r in 0..rows {
                for s in 0..batch {
                    let bx = ox + r * batch * plan.gx + s * plan.gx;
                    let by = oy + r * batch * plan.gy + s * plan.gy;
                    let bo = r * batch * plan.go + s * plan.go;
                    for &(o, a, b) in &plan.triples {
                        let g = go[bo + o as usize];
                        let (ia, ib) = (bx + a as usize, by + b as usize);
                        let (va, vb) = (vals[ia], vals[ib]);
                        lo[ia] += g * vb;
                        lo[ib] += g * va;
                    }
                }
            }
        }
        Op::Embed { x, map, sg, dg } => {
            let ox = off(*x);
            let (sg, dg) = (*sg as usize, *dg as usize);
            let rows = node.rows as usize;
            let batch = node.cols as usize / dg;
            for r in 0..rows {
                for s in 0..batch {
                    for (c, &t) in map.iter().enumerate() {
                        lo[ox + r * batch * sg + s * sg + c] +=
                            go[r * batch * dg + s * dg + t as usize];
                    }
                }
            }
        }
        Op::Entry { x, idx } => {
            lo[off(*x) + *idx as usize] += go[0];
        }
        Op::Assemble(src) => {
            for (i, s) in src.iter().enumerate() {
                if let Src::Node(id) = *s {
                    lo[off(id)] += go[i];
                }
            }
        }
        Op::SymMaxEig { x, v } => {
            let ox = off(*x);
            let n = v.len();
            for i in 0..n {
                for j in 0..n {
                    lo[ox + i * n + j] += go[0] * v[i] * v[j];
                }
            }
        }
    }
}

/// Adjoints from one reverse sweep.
pub struct Grads<'t> {
    tape: &'t Tape,
    g: Vec<f64>,
}

impl<'t> Grads<'t> {
    pub fn of(&self, t: Tensor<'t>) -> &[f64] {
        let i = self.tape.inner.borrow();
        let n = &i.nodes[t.id as usize];
        let (off, len) = (n.off, (n.rows * n.cols) as usize);
        drop(i);
        &self.g[off..off + len]
    }

    pub fn wrt(&self, v: Var<'t>) -> f64 {
        match v.tape {
            None => 0.0,
            Some(t) => {
                let i = t.inner.borrow();
                self.g[i.nodes[v.id as usize].off]
            }
        }
    }
}

impl<'t> Tensor<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.shape_of(self.id)
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    pub fn values(&self) -> Vec<f64> {
        self.tape.values_of(self.id)
    }

    fn zip(self, o: Tensor<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Tensor<'t> {
        let (r, c) = self.shape();
        assert_eq!(o.shape(), (r, c), "elementwise shape mismatch");
        let (a, b) = (self.id, o.id);
        let id = self.tape.push(op, r, c, |prev, nodes, out| {
            let (oa, ob) = (nodes[a as usize].off, nodes[b as usize].off);
            for (i, v) in out.iter_mut().enumerate() {
                *v = f(prev[oa + i], prev[ob + i]);
            }
        });
        Tensor {
            tape: self.tape,
            id,
        }
    }

    pub fn add(self, o: Tensor<'t>) -> Tensor<'t> {
        self.zip(o, Op::Add(self.id, o.id), |a, b| a + b)
    }

    pub fn sub(self, o: Tensor<'t>) -> Tensor<'t> {
        self.zip(o, Op::Sub(self.id, o.id), |a, b| a - b)
    }

    pub fn hadamard(self, o: Tensor<'t>) -> Tensor<'t> {
        self.zip(o, Op::Mul(self.id, o.id), |a, b| a * b)
    }

    pub fn scale(self, s: f64) -> Tensor<'t> {
        let (r, c) = self.shape();
        let a = self.id;
        let id = self.tape.push(Op::Affine(a, s), r, c, |prev, nodes, out| {
            let oa = nodes[a as usize].off;
            for (i, v) in out.iter_mut().enumerate() {
                *v = prev[oa + i] * s;
            }
        });
        Tensor {
            tape: self.tape,
            id,
        }
    }

    /// Elementwise `f^(order)`.
    pub fn map(self, f: Tower, order: u8) -> Tensor<'t> {
        let (r, c) = self.shape();
        let a = self.id;
        let id = self
            .tape
            .push(Op::Tower(a, f, order), r, c, |prev, nodes, out| {
                let oa = nodes[a as usize].off;
                for (i, v) in out.iter_mut().enumerate() {
                    *v = f.eval(prev[oa + i], order as usize);
                }
            });
        Tensor {
            tape: self.tape,
            id,
        }
    }

    pub fn matmul(self, x: Tensor<'t>) -> Tensor<'t> {
        let (m, k) = self.shape();
        let (k2, n) = x.shape();
        assert_eq!(k, k2, "matmul inner dimension");
        let (a, b) = (self.id, x.id);
        let id = self.tape.push(Op::MatMul(a, b), m, n, |prev, nodes, out| {
            let (oa, ox) = (nodes[a as usize].off, nodes[b as usize].off);
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for l in 0..k {
                    let w = prev[oa + i * k + l];
                    if w == 0.0 {
                        continue;
                    }
                    let xl = &prev[ox + l * n..ox + (l + 1) * n];
                    for j in 0..n {
                        row[j] += w * xl[j];
                    }
                }
            }
        });
        Tensor {
            tape: self.tape,
            id,
        }
    }

    /// Adds the column vector `bias` to every `group`-th column starting at 0.
    pub fn add_col0(self, bias: Tensor<'t>, group: usize) -> Tensor<'t> {
        let (r, c) = self.shape();
        assert_eq!(bias.shape(), (r, 1), "bias shape");
        let (a, b) = (self.id, bias.id);
        let id = self.tape.push(
            Op::AddCol0 {
                x: a,
                bias: b,
                group: group as u32,
            },
            r,
            c,
            |prev, nodes, out| {
                let (oa, ob) = (nodes[a as usize].off, nodes[b as usize].off);
                out.copy_from_slice(&prev[oa..oa + r * c]);
                for i in 0..r {
                    for j in (0..c).step_by(group) {
                        out[i * c + j] += prev[ob + i];
                    }
                }
            },
        );
        Tensor {
            tape: self.tape,
            id,
        }
    }

    pub fn sum(self) -> Var<'t> {
        let v: f64 = self.values().iter().sum();
        self.tape.scalar_node(Op::Sum(self.id), v)
    }

    /// Flat row-major entry as a scalar.
    pub fn at(self, idx: usize) -> Var<'t> {
        let (r, c) = self.shape();
        assert!(idx < r * c, "entry out of range");
        if r * c == 1 {
            return self.scalar();
        }
        let v = {
            let i = self.tape.inner.borrow();
            i.vals[i.nodes[self.id as usize].off + idx]
        };
        self.tape.scalar_node(
            Op::Entry {
                x: self.id,
                idx: idx as u32,
            },
            v,
        )
    }

    /// Views a 1x1 tensor as a scalar without recording anything.
    pub fn scalar(self) -> Var<'t> {
        assert_eq!(self.shape(), (1, 1), "scalar view of non-scalar");
        Var {
            tape: Some(self.tape),
            id: self.id,
            val: self.values()[0],
        }
    }
}

impl<'t> Var<'t> {
    pub fn src(&self) -> Src {
        match self.tape {
            Some(_) => Src::Node(self.id),
            None => Src::Const(self.val),
        }
    }

    pub fn is_const(&self) -> bool {
        self.tape.is_none()
    }

    fn lit(val: f64) -> Self {
        Var {
            tape: None,
            id: 0,
            val,
        }
    }

    fn affine(self, s: f64, c: f64) -> Self {
        let val = self.val * s + c;
        match self.tape {
            None => Var::lit(val),
            Some(_) if s == 0.0 => Var::lit(val),
            Some(_) if s == 1.0 && c == 0.0 => self,
            // The shift only affects the forward value.
            Some(t) => t.scalar_node(Op::Affine(self.id, s), val),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        match (self.tape, o.tape) {
            (None, None) => Var::lit(self.val + o.val),
            (Some(_), None) => self.affine(1.0, o.val),
            (None, Some(_)) => o.affine(1.0, self.val),
            (Some(t), Some(_)) => t.scalar_node(Op::Add(self.id, o.id), self.val + o.val),
        }
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        match (self.tape, o.tape) {
            (None, None) => Var::lit(self.val - o.val),
            (Some(_), None) => self.affine(1.0, -o.val),
            (None, Some(_)) => o.affine(-1.0, self.val),
            (Some(t), Some(_)) => t.scalar_node(Op::Sub(self.id, o.id), self.val - o.val),
        }
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        match (self.tape, o.tape) {
            (None, None) => Var::lit(self.val * o.val),
            (Some(_), None) => self.affine(o.val, 0.0),
            (None, Some(_)) => o.affine(self.val, 0.0),
            (Some(t), Some(_)) => t.scalar_node(Op::Mul(self.id, o.id), self.val * o.val),
        }
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        match (self.tape, o.tape) {
            (None, None) => Var::lit(self.val / o.val),
            (Some(_), None) => self.affine(1.0 / o.val, 0.0),
            (None, Some(t)) => {
                let r = t.scalar_node(Op::Recip(o.id), 1.0 / o.val);
                r.affine(self.val, 0.0)
            }
            (Some(t), Some(_)) => t.scalar_node(Op::Div(self.id, o.id), self.val / o.val),
        }
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.affine(-1.0, 0.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, c: f64) -> Self {
        self.affine(1.0, c)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, c: f64) -> Self {
        self.affine(1.0, -c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, c: f64) -> Self {
        self.affine(c, 0.0)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, c: f64) -> Self {
        self.affine(1.0 / c, 0.0)
    }
}

impl<'t> AddAssign for Var<'t> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<'t> SubAssign for Var<'t> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<'t> Real for Var<'t> {
    fn cst(v: f64) -> Self {
        Var::lit(v)
    }
    fn value(&self) -> f64 {
        self.val
    }
    fn sqrt(self) -> Self {
        let val = self.val.sqrt();
        match self.tape {
            None => Var::lit(val),
            Some(t) => t.scalar_node(Op::Sqrt(self.id), val),
        }
    }
    fn tower(self, f: Tower, order: u8) -> Self {
        let val = f.eval(self.val, order as usize);
        match self.tape {
            None => Var::lit(val),
            Some(t) => t.scalar_node(Op::Tower(self.id, f, order), val),
        }
    }
}

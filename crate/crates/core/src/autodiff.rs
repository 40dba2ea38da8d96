//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] is an append-only arena of operation nodes. Building an
//! expression records one node per op and evaluates it eagerly, so the
//! forward value of any [`Var`] is available immediately. [`Tape::backward`]
//! then walks the arena once in reverse, accumulating adjoints.
//!
//! Every node's parents precede it in the arena, which is the only
//! structural invariant backward propagation relies on. Scalars are
//! represented as 1x1 matrices; vectors as nx1 or 1xn.

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    /// Input with no parents. The flag marks whether backward accumulates
    /// a gradient for it (parameters yes, constants no).
    Leaf { needs_grad: bool },
    Add(usize, usize),
    /// Broadcast add of a 1xm row vector onto every row.
    AddRowVec(usize, usize),
    Sub(usize, usize),
    /// Elementwise product.
    Mul(usize, usize),
    /// Product with a 1x1 variable.
    MulScalarVar(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Scale(usize, f64),
    AddConst(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Exp(usize),
    Ln(usize),
    Powf(usize, f64),
    /// Sum of all entries, yielding 1x1.
    Sum(usize),
    /// Row sums, yielding nx1.
    RowSum(usize),
    /// Column means, yielding 1xm.
    ColMean(usize),
    /// Column maxima, yielding 1xm; backward routes to the first argmax.
    ColMax(usize),
    /// Row i scaled by v[i]; v is nx1.
    ScaleRows(usize, usize),
    /// Column j scaled by v[j]; v is mx1.
    ScaleCols(usize, usize),
    /// Selects rows by index, yielding len(idx) x m.
    GatherRows(usize, Vec<usize>),
    /// Horizontal concatenation [a | b].
    HStack(usize, usize),
    /// Picks entries (u, v), yielding len(pairs) x 1.
    GatherEntries(usize, Vec<(usize, usize)>),
    /// Writes an mx1 vector into an nxn matrix at (u, v) and (v, u).
    ScatterSym(usize, Vec<(usize, usize)>),
    ZeroDiag(usize),
    Clamp(usize, f64, f64),
    /// Cross-entropy of a 1xC logit row against a class index, yielding 1x1.
    CrossEntropyLogits(usize, usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Expression arena. Dropping the tape drops all recorded values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        assert!(
            value.iter().all(|x| x.is_finite()),
            "non-finite value produced by tape op"
        );
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Current forward value of `v`.
    pub fn value(&self, v: Var) -> &Array2<f64> {
        self.val(v)
    }

    /// Registers a differentiable input (a parameter).
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf { needs_grad: true })
    }

    /// Registers a non-differentiable input.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf { needs_grad: false })
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).dim(), self.val(b).dim(), "add: shape mismatch");
        let value = self.val(a) + self.val(b);
        self.push(value, Op::Add(a.0, b.0))
    }

    /// Adds a 1xm row vector to every row of an nxm matrix.
    pub fn add_row_vec(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.val(row).nrows(), 1, "add_row_vec: row must be 1xm");
        assert_eq!(
            self.val(a).ncols(),
            self.val(row).ncols(),
            "add_row_vec: width mismatch"
        );
        let value = self.val(a) + self.val(row);
        self.push(value, Op::AddRowVec(a.0, row.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).dim(), self.val(b).dim(), "sub: shape mismatch");
        let value = self.val(a) - self.val(b);
        self.push(value, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).dim(), self.val(b).dim(), "mul: shape mismatch");
        let value = self.val(a) * self.val(b);
        self.push(value, Op::Mul(a.0, b.0))
    }

    /// Elementwise product with a 1x1 variable.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.val(s).dim(), (1, 1), "mul_scalar_var: s must be 1x1");
        let value = self.val(a) * self.val(s)[(0, 0)];
        self.push(value, Op::MulScalarVar(a.0, s.0))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.val(a).ncols(),
            self.val(b).nrows(),
            "matmul: inner dimension mismatch"
        );
        let value = self.val(a).dot(self.val(b));
        self.push(value, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.val(a).t().to_owned();
        self.push(value, Op::Transpose(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.val(a) * c;
        self.push(value, Op::Scale(a.0, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.val(a) + c;
        self.push(value, Op::AddConst(a.0, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(softplus);
        self.push(value, Op::Softplus(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(f64::exp);
        self.push(value, Op::Exp(a.0))
    }

    /// Natural log; inputs must be strictly positive.
    pub fn ln(&mut self, a: Var) -> Var {
        assert!(
            self.val(a).iter().all(|&x| x > 0.0),
            "ln: non-positive input"
        );
        let value = self.val(a).mapv(f64::ln);
        self.push(value, Op::Ln(a.0))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.val(a).mapv(|x| x.powf(p));
        self.push(value, Op::Powf(a.0, p))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.val(a).sum());
        self.push(value, Op::Sum(a.0))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let n = self.val(a).nrows();
        let value = self
            .val(a)
            .sum_axis(Axis(1))
            .into_shape_with_order((n, 1))
            .expect("row_sum reshape");
        self.push(value, Op::RowSum(a.0))
    }

    pub fn col_mean(&mut self, a: Var) -> Var {
        let m = self.val(a).ncols();
        let value = self
            .val(a)
            .mean_axis(Axis(0))
            .expect("col_mean of empty matrix")
            .into_shape_with_order((1, m))
            .expect("col_mean reshape");
        self.push(value, Op::ColMean(a.0))
    }

    /// Column maxima of `a`, yielding a 1xm row vector.
    pub fn col_max(&mut self, a: Var) -> Var {
        let (n, m) = self.val(a).dim();
        assert!(n > 0, "col_max of empty matrix");
        let mut value = Array2::zeros((1, m));
        for c in 0..m {
            let mut best = self.val(a)[(0, c)];
            for r in 1..n {
                let x = self.val(a)[(r, c)];
                if x > best {
                    best = x;
                }
            }
            value[(0, c)] = best;
        }
        self.push(value, Op::ColMax(a.0))
    }

    /// Scales row i of `a` by `v[i]`; `v` must be nx1.
    pub fn scale_rows(&mut self, a: Var, v: Var) -> Var {
        assert_eq!(self.val(v).ncols(), 1, "scale_rows: v must be nx1");
        assert_eq!(
            self.val(a).nrows(),
            self.val(v).nrows(),
            "scale_rows: height mismatch"
        );
        let value = self.val(a) * self.val(v);
        self.push(value, Op::ScaleRows(a.0, v.0))
    }

    /// Scales column j of `a` by `v[j]`; `v` must be mx1.
    pub fn scale_cols(&mut self, a: Var, v: Var) -> Var {
        assert_eq!(self.val(v).ncols(), 1, "scale_cols: v must be mx1");
        assert_eq!(
            self.val(a).ncols(),
            self.val(v).nrows(),
            "scale_cols: width mismatch"
        );
        let vt = self.val(v).t().to_owned();
        let value = self.val(a) * &vt;
        self.push(value, Op::ScaleCols(a.0, v.0))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.val(a);
        assert!(
            idx.iter().all(|&i| i < src.nrows()),
            "gather_rows: index out of range"
        );
        let mut value = Array2::zeros((idx.len(), src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).assign(&src.row(i));
        }
        self.push(value, Op::GatherRows(a.0, idx.to_vec()))
    }

    pub fn hstack(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.val(a).nrows(),
            self.val(b).nrows(),
            "hstack: height mismatch"
        );
        let (n, p) = self.val(a).dim();
        let q = self.val(b).ncols();
        let mut value = Array2::zeros((n, p + q));
        value.slice_mut(ndarray::s![.., ..p]).assign(self.val(a));
        value.slice_mut(ndarray::s![.., p..]).assign(self.val(b));
        self.push(value, Op::HStack(a.0, b.0))
    }

    /// Extracts entries (u, v) of `a` into a len(pairs) x 1 column.
    pub fn gather_entries(&mut self, a: Var, pairs: &[(usize, usize)]) -> Var {
        let src = self.val(a);
        assert!(
            pairs.iter().all(|&(u, v)| u < src.nrows() && v < src.ncols()),
            "gather_entries: index out of range"
        );
        let mut value = Array2::zeros((pairs.len(), 1));
        for (r, &(u, v)) in pairs.iter().enumerate() {
            value[(r, 0)] = src[(u, v)];
        }
        self.push(value, Op::GatherEntries(a.0, pairs.to_vec()))
    }

    /// Builds an nxn matrix with `x[e]` at (u_e, v_e) and (v_e, u_e), zero
    /// elsewhere. Pairs must not repeat and must be off-diagonal.
    pub fn scatter_sym(&mut self, x: Var, pairs: &[(usize, usize)], n: usize) -> Var {
        assert_eq!(self.val(x).ncols(), 1, "scatter_sym: x must be mx1");
        assert_eq!(
            self.val(x).nrows(),
            pairs.len(),
            "scatter_sym: length mismatch"
        );
        let mut value = Array2::zeros((n, n));
        for (e, &(u, v)) in pairs.iter().enumerate() {
            assert!(u < n && v < n && u != v, "scatter_sym: bad pair");
            let w = self.val(x)[(e, 0)];
            value[(u, v)] = w;
            value[(v, u)] = w;
        }
        self.push(value, Op::ScatterSym(x.0, pairs.to_vec()))
    }

    pub fn zero_diag(&mut self, a: Var) -> Var {
        assert_eq!(
            self.val(a).nrows(),
            self.val(a).ncols(),
            "zero_diag: matrix must be square"
        );
        let mut value = self.val(a).clone();
        for i in 0..value.nrows() {
            value[(i, i)] = 0.0;
        }
        self.push(value, Op::ZeroDiag(a.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo < hi, "clamp: empty interval");
        let value = self.val(a).mapv(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a.0, lo, hi))
    }

    /// Cross-entropy -ln softmax(logits)[target] for a 1xC logit row.
    pub fn cross_entropy_logits(&mut self, logits: Var, target: usize) -> Var {
        let row = self.val(logits);
        assert_eq!(row.nrows(), 1, "cross_entropy_logits: logits must be 1xC");
        assert!(
            target < row.ncols(),
            "cross_entropy_logits: target out of range"
        );
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        let value = Array2::from_elem((1, 1), lse - row[(0, target)]);
        self.push(value, Op::CrossEntropyLogits(logits.0, target))
    }

    /// Propagates adjoints from `root` (any shape; seeded with ones) back to
    /// every leaf that was registered with `leaf`. Gradients accumulate, so
    /// call once per tape.
    pub fn backward(&mut self, root: Var) {
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        self.grads[root.0] = Some(Array2::ones(self.nodes[root.0].value.dim()));

        for i in (0..=root.0).rev() {
            let g = match self.grads[i].clone() {
                Some(g) => g,
                None => continue,
            };
            let nodes = &self.nodes;
            let grads = &mut self.grads;
            let mut acc = |idx: usize, delta: Array2<f64>| {
                if let Op::Leaf { needs_grad: false } = nodes[idx].op {
                    return;
                }
                match &mut grads[idx] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &nodes[i].op {
                Op::Leaf { .. } => {}
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRowVec(a, row) => {
                    let m = g.ncols();
                    let rg = g
                        .sum_axis(Axis(0))
                        .into_shape_with_order((1, m))
                        .expect("reshape");
                    acc(*a, g);
                    acc(*row, rg);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * &nodes[*b].value);
                    acc(*b, &g * &nodes[*a].value);
                }
                Op::MulScalarVar(a, s) => {
                    let sv = nodes[*s].value[(0, 0)];
                    let ds = (&g * &nodes[*a].value).sum();
                    acc(*a, &g * sv);
                    acc(*s, Array2::from_elem((1, 1), ds));
                }
                Op::MatMul(a, b) => {
                    acc(*a, g.dot(&nodes[*b].value.t()));
                    acc(*b, nodes[*a].value.t().dot(&g));
                }
                Op::Transpose(a) => acc(*a, g.t().to_owned()),
                Op::Scale(a, c) => acc(*a, &g * *c),
                Op::AddConst(a, _) => acc(*a, g),
                Op::Relu(a) => {
                    let mask = nodes[*a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(*a, &g * &mask);
                }
                Op::Sigmoid(a) => {
                    let y = &nodes[i].value;
                    acc(*a, &g * &(y * &y.mapv(|v| 1.0 - v)));
                }
                Op::Softplus(a) => {
                    let d = nodes[*a].value.mapv(sigmoid);
                    acc(*a, &g * &d);
                }
                Op::Exp(a) => acc(*a, &g * &nodes[i].value),
                Op::Ln(a) => acc(*a, &g / &nodes[*a].value),
                Op::Powf(a, p) => {
                    let d = nodes[*a].value.mapv(|x| *p * x.powf(*p - 1.0));
                    acc(*a, &g * &d);
                }
                Op::Sum(a) => {
                    let dim = nodes[*a].value.dim();
                    acc(*a, Array2::from_elem(dim, g[(0, 0)]));
                }
                Op::RowSum(a) => {
                    let (n, m) = nodes[*a].value.dim();
                    let mut d = Array2::zeros((n, m));
                    for r in 0..n {
                        d.row_mut(r).fill(g[(r, 0)]);
                    }
                    acc(*a, d);
                }
                Op::ColMean(a) => {
                    let (n, m) = nodes[*a].value.dim();
                    let mut d = Array2::zeros((n, m));
                    for c in 0..m {
                        d.column_mut(c).fill(g[(0, c)] / n as f64);
                    }
                    acc(*a, d);
                }
                Op::ColMax(a) => {
                    let av = &nodes[*a].value;
                    let (n, m) = av.dim();
                    let mut d = Array2::zeros((n, m));
                    for c in 0..m {
                        let mut arg = 0;
                        for r in 1..n {
                            if av[(r, c)] > av[(arg, c)] {
                                arg = r;
                            }
                        }
                        d[(arg, c)] = g[(0, c)];
                    }
                    acc(*a, d);
                }
                Op::ScaleRows(a, v) => {
                    let va = &nodes[*a].value;
                    let vv = &nodes[*v].value;
                    let da = &g * vv;
                    let n = va.nrows();
                    let dv = (&g * va)
                        .sum_axis(Axis(1))
                        .into_shape_with_order((n, 1))
                        .expect("reshape");
                    acc(*a, da);
                    acc(*v, dv);
                }
                Op::ScaleCols(a, v) => {
                    let va = &nodes[*a].value;
                    let vt = nodes[*v].value.t().to_owned();
                    let da = &g * &vt;
                    let m = va.ncols();
                    let dv = (&g * va)
                        .sum_axis(Axis(0))
                        .into_shape_with_order((m, 1))
                        .expect("reshape");
                    acc(*a, da);
                    acc(*v, dv);
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Array2::zeros(nodes[*a].value.dim());
                    for (r, &src_row) in idx.iter().enumerate() {
                        let mut target = d.row_mut(src_row);
                        target += &g.row(r);
                    }
                    acc(*a, d);
                }
                Op::HStack(a, b) => {
                    let p = nodes[*a].value.ncols();
                    acc(*a, g.slice(ndarray::s![.., ..p]).to_owned());
                    acc(*b, g.slice(ndarray::s![.., p..]).to_owned());
                }
                Op::GatherEntries(a, pairs) => {
                    let mut d = Array2::zeros(nodes[*a].value.dim());
                    for (e, &(u, v)) in pairs.iter().enumerate() {
                        d[(u, v)] += g[(e, 0)];
                    }
                    acc(*a, d);
                }
                Op::ScatterSym(x, pairs) => {
                    let mut d = Array2::zeros((pairs.len(), 1));
                    for (e, &(u, v)) in pairs.iter().enumerate() {
                        d[(e, 0)] = g[(u, v)] + g[(v, u)];
                    }
                    acc(*x, d);
                }
                Op::ZeroDiag(a) => {
                    let mut d = g.clone();
                    for r in 0..d.nrows() {
                        d[(r, r)] = 0.0;
                    }
                    acc(*a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let inside = nodes[*a]
                        .value
                        .mapv(|x| if x > *lo && x < *hi { 1.0 } else { 0.0 });
                    acc(*a, &g * &inside);
                }
                Op::CrossEntropyLogits(a, target) => {
                    let row = &nodes[*a].value;
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps = row.mapv(|x| (x - max).exp());
                    let z = exps.sum();
                    let mut d = exps / z;
                    d[(0, *target)] -= 1.0;
                    acc(*a, d * g[(0, 0)]);
                }
            }
        }
    }

    /// Gradient of the last `backward` root with respect to `v`. Zero if the
    /// root does not depend on `v`.
    pub fn grad(&self, v: Var) -> Array2<f64> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Array2::zeros(self.nodes[v.0].value.dim()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, m), |_| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences of `f` at `x`, perturbing one entry at a time.
    fn finite_diff<F: FnMut(&Array2<f64>) -> f64>(x: &Array2<f64>, mut f: F) -> Array2<f64> {
        let h = 1e-5;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[(r, c)] += h;
            let mut xm = x.clone();
            xm[(r, c)] -= h;
            g[(r, c)] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_grad_close(analytic: &Array2<f64>, numeric: &Array2<f64>) {
        let diff = (analytic - numeric).mapv(f64::abs).sum();
        let scale = analytic.mapv(f64::abs).sum() + numeric.mapv(f64::abs).sum();
        let rel = diff / scale.max(1e-8);
        assert!(
            rel < 1e-4,
            "gradient mismatch: rel err {rel:.3e}\nanalytic:\n{analytic:?}\nnumeric:\n{numeric:?}"
        );
    }

    /// Checks d(loss)/d(x) for a scalar-valued builder against finite differences.
    fn check_unary<F>(x: Array2<f64>, build: F)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let out = build(&mut tape, v);
        assert_eq!(tape.value(out).dim(), (1, 1), "loss must be scalar");
        tape.backward(out);
        let analytic = tape.grad(v);

        let numeric = finite_diff(&x, |xp| {
            let mut t = Tape::new();
            let v = t.leaf(xp.clone());
            let out = build(&mut t, v);
            t.value(out)[(0, 0)]
        });
        assert_grad_close(&analytic, &numeric);
    }

    fn check_binary<F>(x: Array2<f64>, y: Array2<f64>, build: F)
    where
        F: Fn(&mut Tape, Var, Var) -> Var,
    {
        for which in 0..2 {
            let mut tape = Tape::new();
            let vx = tape.leaf(x.clone());
            let vy = tape.leaf(y.clone());
            let out = build(&mut tape, vx, vy);
            tape.backward(out);
            let analytic = tape.grad(if which == 0 { vx } else { vy });

            let probe = if which == 0 { &x } else { &y };
            let numeric = finite_diff(probe, |p| {
                let mut t = Tape::new();
                let (a, b) = if which == 0 {
                    (t.leaf(p.clone()), t.leaf(y.clone()))
                } else {
                    (t.leaf(x.clone()), t.leaf(p.clone()))
                };
                let out = build(&mut t, a, b);
                t.value(out)[(0, 0)]
            });
            assert_grad_close(&analytic, &numeric);
        }
    }

    #[test]
    fn forward_values_are_eager() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = tape.constant(array![[10.0, 20.0], [30.0, 40.0]]);
        let c = tape.add(a, b);
        assert_eq!(tape.value(c), &array![[11.0, 22.0], [33.0, 44.0]]);
    }

    #[test]
    fn matmul_known_gradient() {
        // loss = sum(A B); dA = 1 B^T, dB = A^T 1.
        let mut tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = tape.leaf(array![[5.0, 6.0], [7.0, 8.0]]);
        let prod = tape.matmul(a, b);
        let loss = tape.sum(prod);
        tape.backward(loss);
        assert_eq!(tape.grad(a), array![[11.0, 15.0], [11.0, 15.0]]);
        assert_eq!(tape.grad(b), array![[4.0, 4.0], [6.0, 6.0]]);
    }

    #[test]
    fn constant_receives_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(array![[2.0]]);
        let c = tape.constant(array![[3.0]]);
        let out = tape.mul(a, c);
        let loss = tape.sum(out);
        tape.backward(loss);
        assert_eq!(tape.grad(a)[(0, 0)], 3.0);
        assert_eq!(tape.grad(c)[(0, 0)], 0.0);
    }

    #[test]
    fn diamond_reuse_accumulates() {
        // loss = sum(x * x) + sum(x) uses x three times.
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.5, -0.5]]);
        let sq = tape.mul(x, x);
        let s1 = tape.sum(sq);
        let s2 = tape.sum(x);
        let loss = tape.add(s1, s2);
        tape.backward(loss);
        assert_eq!(tape.grad(x), array![[4.0, 0.0]]);
    }

    #[test]
    fn unary_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 3, 4);
        // Inputs kept away from kinks of relu/clamp: shifted where needed.
        check_unary(x.clone(), |t, v| {
            let y = t.relu(v);
            t.sum(y)
        });
        check_unary(x.clone(), |t, v| {
            let y = t.sigmoid(v);
            t.sum(y)
        });
        check_unary(x.clone(), |t, v| {
            let y = t.softplus(v);
            t.sum(y)
        });
        check_unary(x.clone(), |t, v| {
            let y = t.exp(v);
            t.sum(y)
        });
        check_unary(x.mapv(|v| v.abs() + 0.5), |t, v| {
            let y = t.ln(v);
            t.sum(y)
        });
        check_unary(x.mapv(|v| v.abs() + 0.5), |t, v| {
            let y = t.powf(v, 1.7);
            t.sum(y)
        });
        check_unary(x.clone(), |t, v| {
            let y = t.scale(v, -2.5);
            t.sum(y)
        });
        check_unary(x.clone(), |t, v| {
            let y = t.add_const(v, 3.0);
            let z = t.mul(y, y);
            t.sum(z)
        });
        check_unary(x.clone(), |t, v| {
            let y = t.transpose(v);
            let z = t.mul(y, y);
            t.sum(z)
        });
        check_unary(x.clone(), |t, v| {
            let y = t.row_sum(v);
            let z = t.mul(y, y);
            t.sum(z)
        });
        check_unary(x.clone(), |t, v| {
            let y = t.col_mean(v);
            let z = t.mul(y, y);
            t.sum(z)
        });
        // Random entries are tie-free, so the max is differentiable here.
        check_unary(x.clone(), |t, v| {
            let y = t.col_max(v);
            let z = t.mul(y, y);
            t.sum(z)
        });
        check_unary(x.clone(), |t, v| {
            let y = t.gather_rows(v, &[2, 0, 0]);
            let z = t.mul(y, y);
            t.sum(z)
        });
        // Clamp interior: values in (-1, 1) clamped to (-5, 5) never sit on
        // the boundary.
        check_unary(x.clone(), |t, v| {
            let y = t.clamp(v, -5.0, 5.0);
            let z = t.mul(y, y);
            t.sum(z)
        });
    }

    #[test]
    fn col_max_takes_columnwise_maxima_and_routes_gradient_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[1.0, -2.0], [3.0, -5.0]]);
        let y = tape.col_max(x);
        assert_eq!(tape.val(y), &array![[3.0, -2.0]]);
        let loss = tape.sum(y);
        tape.backward(loss);
        assert_eq!(tape.grad(x), array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 4, 4);
        check_unary(x.clone(), |t, v| {
            let y = t.zero_diag(v);
            let z = t.mul(y, y);
            t.sum(z)
        });
        check_unary(x.clone(), |t, v| {
            let y = t.gather_entries(v, &[(0, 1), (2, 3), (0, 1)]);
            let z = t.mul(y, y);
            t.sum(z)
        });
        let col = random_matrix(&mut rng, 3, 1);
        check_unary(col.clone(), |t, v| {
            let y = t.scatter_sym(v, &[(0, 1), (1, 2), (0, 3)], 4);
            let z = t.mul(y, y);
            t.sum(z)
        });
        let logits = random_matrix(&mut rng, 1, 5);
        check_unary(logits, |t, v| t.cross_entropy_logits(v, 2));
    }

    #[test]
    fn binary_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 3, 4);
        check_binary(a.clone(), b.clone(), |t, x, y| {
            let z = t.add(x, y);
            let w = t.mul(z, z);
            t.sum(w)
        });
        check_binary(a.clone(), b.clone(), |t, x, y| {
            let z = t.sub(x, y);
            let w = t.mul(z, z);
            t.sum(w)
        });
        check_binary(a.clone(), b.clone(), |t, x, y| {
            let z = t.mul(x, y);
            t.sum(z)
        });
        let c = random_matrix(&mut rng, 4, 2);
        check_binary(a.clone(), c, |t, x, y| {
            let z = t.matmul(x, y);
            let w = t.mul(z, z);
            t.sum(w)
        });
        let row = random_matrix(&mut rng, 1, 4);
        check_binary(a.clone(), row, |t, x, y| {
            let z = t.add_row_vec(x, y);
            let w = t.mul(z, z);
            t.sum(w)
        });
        let rv = random_matrix(&mut rng, 3, 1);
        check_binary(a.clone(), rv, |t, x, y| {
            let z = t.scale_rows(x, y);
            let w = t.mul(z, z);
            t.sum(w)
        });
        let cv = random_matrix(&mut rng, 4, 1);
        check_binary(a.clone(), cv, |t, x, y| {
            let z = t.scale_cols(x, y);
            let w = t.mul(z, z);
            t.sum(w)
        });
        let s = random_matrix(&mut rng, 1, 1);
        check_binary(a.clone(), s, |t, x, y| {
            let z = t.mul_scalar_var(x, y);
            let w = t.mul(z, z);
            t.sum(w)
        });
        let b2 = random_matrix(&mut rng, 3, 2);
        check_binary(a, b2, |t, x, y| {
            let z = t.hstack(x, y);
            let w = t.mul(z, z);
            t.sum(w)
        });
    }

    #[test]
    fn composite_graph_network_expression() {
        // A GCN-like layer: relu((S X) W + b), then a quadratic readout.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = random_matrix(&mut rng, 5, 5).mapv(f64::abs);
        let x = random_matrix(&mut rng, 5, 3);
        let w = random_matrix(&mut rng, 3, 2);
        let b = random_matrix(&mut rng, 1, 2);

        let run = |w_in: &Array2<f64>, b_in: &Array2<f64>| {
            let mut t = Tape::new();
            let sv = t.constant(s.clone());
            let xv = t.constant(x.clone());
            let wv = t.leaf(w_in.clone());
            let bv = t.leaf(b_in.clone());
            let sx = t.matmul(sv, xv);
            let h = t.matmul(sx, wv);
            let hb = t.add_row_vec(h, bv);
            let act = t.relu(hb);
            let pooled = t.col_mean(act);
            let sq = t.mul(pooled, pooled);
            let loss = t.sum(sq);
            (t, wv, bv, loss)
        };

        let (mut tape, wv, bv, loss) = run(&w, &b);
        tape.backward(loss);
        let gw = tape.grad(wv);
        let gb = tape.grad(bv);

        let nw = finite_diff(&w, |wp| {
            let (t, _, _, l) = run(wp, &b);
            t.value(l)[(0, 0)]
        });
        let nb = finite_diff(&b, |bp| {
            let (t, _, _, l) = run(&w, bp);
            t.value(l)[(0, 0)]
        });
        assert_grad_close(&gw, &nw);
        assert_grad_close(&gb, &nb);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_relative_eq!(sigmoid(800.0), 1.0);
        assert_relative_eq!(sigmoid(-800.0), 0.0);
        assert!(softplus(800.0).is_finite());
        assert_relative_eq!(softplus(-800.0), 0.0, epsilon = 1e-12);
    }
}

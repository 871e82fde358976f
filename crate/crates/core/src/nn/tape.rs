//! Reverse-mode automatic differentiation over a flat operation tape.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::params::ParamStore;
use super::tensor::{selu, sigmoid, softmax_in_place, Scalar, ShapeError, Tensor, SELU_ALPHA, SELU_LAMBDA};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    SoftmaxRows(Var),
    Sigmoid(Var),
    Selu(Var),
    Relu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T> },
    GroupMean(Var, usize),
    Dropout(Var, Vec<T>),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    BceWithLogits { logits: Var, targets: Vec<T> },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a computation for one forward pass; [`Tape::backward`] then
/// returns gradients with respect to every leaf.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every registered parameter, keyed by name. Parameters the
    /// loss does not depend on get zero gradients.
    pub fn by_name(&self, tape: &Tape<T>) -> BTreeMap<String, Tensor<T>> {
        self.params
            .iter()
            .map(|(name, &v)| {
                let g = self.grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(&tape.value(v).shape));
                (name.clone(), g)
            })
            .collect()
    }
}

fn check(ok: bool, op: &'static str, detail: impl FnOnce() -> String) -> Result<(), ShapeError> {
    if ok {
        Ok(())
    } else {
        Err(ShapeError::new(op, detail()))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a named parameter once per tape; later calls return the same
    /// variable.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let t = store.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`")).clone();
        let v = self.leaf(t);
        self.params.insert(name.to_string(), v);
        v
    }

    /// Records a named parameter's tensor as a constant: no gradient is
    /// collected for it.
    pub fn frozen(&mut self, store: &ParamStore<T>, name: &str) -> Var {
        let t = store.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`")).clone();
        self.leaf(t)
    }

    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let v = Tensor::matmul(self.value(a), false, self.value(b), false)?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        check(x.rows() == y.rows() && x.cols() == y.cols(), "add", || format!("{:?} + {:?}", x.shape, y.shape))?;
        let mut v = x.clone();
        v.add_assign(y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `1 × C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, ShapeError> {
        let (x, r) = (self.value(a), self.value(row));
        check(r.rows() == 1 && r.cols() == x.cols(), "add_row", || format!("{:?} + {:?}", x.shape, r.shape))?;
        let mut v = x.clone();
        let c = v.cols();
        for (i, e) in v.data.iter_mut().enumerate() {
            *e += r.data[i % c];
        }
        Ok(self.push(v, Op::AddRow(a, row)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        check(x.shape == y.shape, "mul", || format!("{:?} * {:?}", x.shape, y.shape))?;
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p * q).collect();
        let v = Tensor { shape: x.shape.clone(), data };
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        check(!parts.is_empty(), "concat_cols", || "no inputs".into())?;
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            let r = self.value(p).rows();
            check(r == rows, "concat_cols", || format!("row counts {rows} and {r}"))?;
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Tensor::matrix(rows, cols, data);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, ShapeError> {
        let x = self.value(a);
        check(start <= end && end <= x.cols(), "slice_cols", || format!("{start}..{end} of {:?}", x.shape))?;
        let rows = x.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&x.row_slice(r)[start..end]);
        }
        let v = Tensor::matrix(rows, end - start, data);
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    /// Row lookup: output row `i` is row `ids[i]` of `table`. Serves as the
    /// embedding lookup.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, ShapeError> {
        let t = self.value(table);
        let rows = t.rows();
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(ShapeError::new("gather", format!("index {bad} into {rows} rows")));
        }
        let c = t.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let v = Tensor::matrix(ids.len(), c, data);
        Ok(self.push(v, Op::Gather(table, ids.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, ShapeError> {
        let x = self.value(a);
        let n: usize = shape.iter().product();
        check(n == x.len(), "reshape", || format!("{:?} to {shape:?}", x.shape))?;
        let v = Tensor { shape: shape.to_vec(), data: x.data.clone() };
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_slice_mut(r));
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn selu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(selu);
        self.push(v, Op::Selu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × C`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, ShapeError> {
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let c = xv.cols();
        check(g.len() == c && b.len() == c, "layer_norm", || format!("{:?} with affine {:?}", xv.shape, g.shape))?;
        let rows = xv.rows();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        let n = T::c(c as f64);
        for r in 0..rows {
            let row = xv.row_slice(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::c(LAYER_NORM_EPS)).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g.data[j] + b.data[j]);
            }
        }
        let v = Tensor { shape: xv.shape.clone(), data: out };
        Ok(self.push(v, Op::LayerNorm { x, gamma, beta, xhat, inv_std }))
    }

    /// Means over consecutive groups of `group` rows.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Result<Var, ShapeError> {
        let x = self.value(a);
        check(group > 0 && x.rows().is_multiple_of(group), "group_mean", || format!("{} rows in groups of {group}", x.rows()))?;
        let (rows, c) = (x.rows() / group, x.cols());
        let mut data = vec![T::zero(); rows * c];
        let inv = T::one() / T::c(group as f64);
        for r in 0..x.rows() {
            let dst = &mut data[(r / group) * c..(r / group + 1) * c];
            for (d, &v) in dst.iter_mut().zip(x.row_slice(r)) {
                *d += v * inv;
            }
        }
        let v = Tensor::matrix(rows, c, data);
        Ok(self.push(v, Op::GroupMean(a, group)))
    }

    /// Inverted dropout with drop probability `p`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = T::c(1.0 / (1.0 - p));
        let x = self.value(a);
        let mask: Vec<T> = (0..x.len()).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let v = Tensor { shape: x.shape.clone(), data };
        self.push(v, Op::Dropout(a, mask))
    }

    /// Softmax cross-entropy summed over rows; `targets[r]` is row r's class.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, ShapeError> {
        let x = self.value(logits);
        check(x.rows() == targets.len(), "cross_entropy", || format!("{} rows, {} targets", x.rows(), targets.len()))?;
        let c = x.cols();
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(ShapeError::new("cross_entropy", format!("class {bad} of {c}")));
        }
        let mut probs = x.data.clone();
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = &mut probs[r * c..(r + 1) * c];
            let logits_row = x.row_slice(r);
            let max = logits_row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + logits_row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += lse - logits_row[t];
            softmax_in_place(row);
        }
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec(), probs }))
    }

    /// Binary cross-entropy on logits, summed over all entries.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var, ShapeError> {
        let x = self.value(logits);
        check(x.len() == targets.len(), "bce_with_logits", || format!("{:?} vs {:?}", x.shape, targets.shape))?;
        let loss = x
            .data
            .iter()
            .zip(&targets.data)
            .map(|(&v, &z)| v.max(T::zero()) - v * z + (-v.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, targets: targets.data.clone() }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&self.value(loss).shape, T::one()));

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = Tensor::matmul(&g, false, bv, true).expect("matmul grad");
                    let db = Tensor::matmul(av, true, &g, false).expect("matmul grad");
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, reshaped(&g, &self.value(*a).shape));
                    acc(&mut grads, *b, reshaped(&g, &self.value(*b).shape));
                }
                Op::AddRow(a, row) => {
                    let c = g.cols();
                    let mut dr = vec![T::zero(); c];
                    for (k, &v) in g.data.iter().enumerate() {
                        dr[k % c] += v;
                    }
                    acc(&mut grads, *row, Tensor { shape: self.value(*row).shape.clone(), data: dr });
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = g.data.iter().zip(&bv.data).map(|(&d, &q)| d * q).collect();
                    let db = g.data.iter().zip(&av.data).map(|(&d, &p)| d * p).collect();
                    acc(&mut grads, *a, Tensor { shape: av.shape.clone(), data: da });
                    acc(&mut grads, *b, Tensor { shape: bv.shape.clone(), data: db });
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|d| d * *s)),
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut data = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                        offset += pc;
                        acc(&mut grads, p, Tensor { shape: self.value(p).shape.clone(), data });
                    }
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut d = Tensor::zeros(&x.shape);
                    let w = g.cols();
                    for r in 0..g.rows() {
                        d.row_slice_mut(r)[*start..*start + w].copy_from_slice(g.row_slice(r));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Gather(table, ids) => {
                    let mut d = Tensor::zeros(&self.value(*table).shape);
                    for (r, &id) in ids.iter().enumerate() {
                        for (dst, &v) in d.row_slice_mut(id).iter_mut().zip(g.row_slice(r)) {
                            *dst += v;
                        }
                    }
                    acc(&mut grads, *table, d);
                }
                Op::Reshape(a) => acc(&mut grads, *a, reshaped(&g, &self.value(*a).shape)),
                Op::SoftmaxRows(a) => {
                    let mut d = g.clone();
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((o, &p), &q) in d.row_slice_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = p * (q - dot);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let data = g.data.iter().zip(&y.data).map(|(&d, &s)| d * s * (T::one() - s)).collect();
                    acc(&mut grads, *a, Tensor { shape: y.shape.clone(), data });
                }
                Op::Selu(a) => {
                    let x = self.value(*a);
                    let la = T::c(SELU_LAMBDA * SELU_ALPHA);
                    let l = T::c(SELU_LAMBDA);
                    let data = g
                        .data
                        .iter()
                        .zip(&x.data)
                        .zip(&y.data)
                        .map(|((&d, &xi), &yi)| if xi > T::zero() { d * l } else { d * (yi + la) })
                        .collect();
                    acc(&mut grads, *a, Tensor { shape: y.shape.clone(), data });
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let data =
                        g.data.iter().zip(&x.data).map(|(&d, &xi)| if xi > T::zero() { d } else { T::zero() }).collect();
                    acc(&mut grads, *a, Tensor { shape: y.shape.clone(), data });
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gv = self.value(*gamma);
                    let c = y.cols();
                    let n = T::c(c as f64);
                    let mut dx = Tensor::zeros(&self.value(*x).shape);
                    let mut dg = vec![T::zero(); c];
                    let mut db = vec![T::zero(); c];
                    for r in 0..y.rows() {
                        let gr = g.row_slice(r);
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..c {
                            let dh = gr[j] * gv.data[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                            dg[j] += gr[j] * hr[j];
                            db[j] += gr[j];
                        }
                        let k = inv_std[r] / n;
                        for (j, o) in dx.row_slice_mut(r).iter_mut().enumerate() {
                            let dh = gr[j] * gv.data[j];
                            *o = k * (n * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, Tensor { shape: gv.shape.clone(), data: dg });
                    acc(&mut grads, *beta, Tensor { shape: self.value(*beta).shape.clone(), data: db });
                }
                Op::GroupMean(a, group) => {
                    let x = self.value(*a);
                    let inv = T::one() / T::c(*group as f64);
                    let mut d = Tensor::zeros(&x.shape);
                    for r in 0..x.rows() {
                        for (o, &v) in d.row_slice_mut(r).iter_mut().zip(g.row_slice(r / group)) {
                            *o = v * inv;
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Dropout(a, mask) => {
                    let data = g.data.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                    acc(&mut grads, *a, Tensor { shape: y.shape.clone(), data });
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let x = self.value(*logits);
                    let c = x.cols();
                    let s = g.item();
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d[r * c + t] -= T::one();
                    }
                    for v in d.iter_mut() {
                        *v *= s;
                    }
                    acc(&mut grads, *logits, Tensor { shape: x.shape.clone(), data: d });
                }
                Op::BceWithLogits { logits, targets } => {
                    let x = self.value(*logits);
                    let s = g.item();
                    let data = x.data.iter().zip(targets).map(|(&v, &z)| (sigmoid(v) - z) * s).collect();
                    acc(&mut grads, *logits, Tensor { shape: x.shape.clone(), data });
                }
                Op::Sum(a) => {
                    let s = g.item();
                    acc(&mut grads, *a, Tensor::full(&self.value(*a).shape, s));
                }
            }
        }
        Grads { grads, params: self.params.clone() }
    }

    /// Dense linear layer `x·W + b` with parameters `{prefix}.w` (`in × out`)
    /// and `{prefix}.b` (`1 × out`).
    pub fn linear(&mut self, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var, ShapeError> {
        let w = self.param(store, &format!("{prefix}.w"));
        let b = self.param(store, &format!("{prefix}.b"));
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    /// Same as [`Tape::linear`] with the parameters held constant.
    pub fn linear_frozen(&mut self, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var, ShapeError> {
        let w = self.frozen(store, &format!("{prefix}.w"));
        let b = self.frozen(store, &format!("{prefix}.b"));
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }
}

fn reshaped<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    Tensor { shape: shape.to_vec(), data: g.data.clone() }
}

/// Parameter-name → variable map, for callers that register many parameters
/// up front.
pub fn register_all<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>) -> HashMap<String, Var> {
    store.names().map(|n| (n.to_string(), tape.param(store, n))).collect()
}

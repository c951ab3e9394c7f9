//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so every input index is smaller
//! than its consumer's; the backward pass is a single reverse sweep that
//! visits each node once and accumulates into its inputs.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{dot, Tensor};

/// Norm below which a projection target is treated as the zero vector.
pub const EPS_PROJ: f64 = 1e-12;
/// Floor applied to the true-class probability inside log terms.
pub const EPS_LOG: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    LstmCell(Var, Var),
    Reverse(Var, f64),
    StopGrad,
    ProjRows(Var, Var),
    MeanAll(Var),
    SumAll(Var),
    Focal { probs: Var, class: usize, gamma: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.get(*v))
    }

    /// Add parameter gradients into `acc`, indexed like the store.
    pub fn accumulate_into(&self, acc: &mut [Tensor]) {
        for (id, v) in &self.params {
            if let Some(g) = &self.grads[v.0] {
                acc[id.0].add_assign(g);
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    /// Count of projections that hit the near-zero target rule.
    degenerate_projections: usize,
    /// Count of focal terms whose probability was clamped.
    clamped_logs: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn degenerate_projections(&self) -> usize {
        self.degenerate_projections
    }

    pub fn clamped_logs(&self) -> usize {
        self.clamped_logs
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Add a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shapes");
        let mut v = self.value(a).clone();
        let r = self.value(row).data.clone();
        for i in 0..v.rows {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let va = self.value(a);
        let vb = self.value(b);
        let v = Tensor::from_vec(
            va.rows,
            va.cols,
            va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect(),
        );
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let va = self.value(a);
        let vb = self.value(b);
        let v = Tensor::from_vec(
            va.rows,
            va.cols,
            va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect(),
        );
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows, rows, "concat_cols rows");
                out.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
                off += pv.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols, cols, "concat_rows cols");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.cols, "slice_cols bounds");
        let mut out = Tensor::zeros(va.rows, end - start);
        for r in 0..va.rows {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let va = self.value(a);
        assert!(start <= end && end <= va.rows, "slice_rows bounds");
        let out = Tensor::from_vec(
            end - start,
            va.cols,
            va.data[start * va.cols..end * va.cols].to_vec(),
        );
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.slice_rows(a, i, i + 1)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Fused LSTM cell. `z` holds the `1 x 4h` gate pre-activations in
    /// input, forget, candidate, output order. Returns `[h | c]` (`1 x 2h`).
    pub fn lstm_cell(&mut self, z: Var, c_prev: Var) -> Var {
        let (zr, zc) = self.shape(z);
        let h = zc / 4;
        assert_eq!((zr, zc % 4), (1, 0), "lstm_cell z shape");
        assert_eq!(self.shape(c_prev), (1, h), "lstm_cell c shape");
        let zv = &self.value(z).data;
        let cp = &self.value(c_prev).data;
        let mut out = vec![0.0; 2 * h];
        for j in 0..h {
            let i = sigmoid(zv[j]);
            let f = sigmoid(zv[h + j]);
            let g = zv[2 * h + j].tanh();
            let o = sigmoid(zv[3 * h + j]);
            let c = f * cp[j] + i * g;
            out[j] = o * c.tanh();
            out[h + j] = c;
        }
        self.push(Tensor::from_vec(1, 2 * h, out), Op::LstmCell(z, c_prev))
    }

    /// Identity forward, gradient scaled by `-lambda` backward.
    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Var {
        let v = self.value(a).clone();
        self.push(v, Op::Reverse(a, lambda))
    }

    /// Identity forward, no gradient backward.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        let _ = a;
        self.push(v, Op::StopGrad)
    }

    /// Row-wise projection of `u` onto `v`: `((u.v)/|v|^2) v`. Rows where
    /// `|v| <= EPS_PROJ` project to zero and pass no gradient.
    pub fn proj_rows(&mut self, u: Var, v: Var) -> Var {
        assert_eq!(self.shape(u), self.shape(v), "proj_rows shapes");
        let uv = self.value(u);
        let vv = self.value(v);
        let mut out = Tensor::zeros(uv.rows, uv.cols);
        let mut degenerate = 0;
        for r in 0..uv.rows {
            let (ur, vr) = (uv.row(r), vv.row(r));
            let nn = dot(vr, vr);
            if nn.sqrt() <= EPS_PROJ {
                degenerate += 1;
                continue;
            }
            let s = dot(ur, vr) / nn;
            for (o, x) in out.row_mut(r).iter_mut().zip(vr) {
                *o = s * x;
            }
        }
        self.degenerate_projections += degenerate;
        self.push(out, Op::ProjRows(u, v))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let m = va.data.iter().sum::<f64>() / va.len() as f64;
        self.push(Tensor::from_vec(1, 1, vec![m]), Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum::<f64>();
        self.push(Tensor::from_vec(1, 1, vec![s]), Op::SumAll(a))
    }

    /// `-(1 - p_y)^gamma * ln p_y` for a `1 x C` probability row.
    pub fn focal(&mut self, probs: Var, class: usize, gamma: f64) -> Var {
        let p = self.value(probs).data[class];
        if p < EPS_LOG {
            self.clamped_logs += 1;
            log::debug!("focal: p_y = {p:e} clamped to {EPS_LOG:e}");
        }
        let v = focal_value(p, gamma);
        self.push(
            Tensor::from_vec(1, 1, vec![v]),
            Op::Focal {
                probs,
                class,
                gamma,
            },
        )
    }

    /// Sum of `1 x 1` scalars.
    pub fn add_scalars(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::from_vec(1, 1, vec![1.0]));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    acc(&mut grads, *a, g.matmul_t(vb));
                    acc(&mut grads, *b, va.t_matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut rg = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in rg.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    acc(&mut grads, *row, rg);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.scale(-1.0));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let va = self.value(*a);
                    let vb = self.value(*b);
                    let ga = zip_map(&g, vb, |x, y| x * y);
                    let gb = zip_map(&g, va, |x, y| x * y);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Sigmoid(a) => {
                    let gy = zip_map(&g, &node.value, |x, y| x * y * (1.0 - y));
                    acc(&mut grads, *a, gy);
                }
                Op::Tanh(a) => {
                    let gy = zip_map(&g, &node.value, |x, y| x * (1.0 - y * y));
                    acc(&mut grads, *a, gy);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (pr, pc) = self.shape(*p);
                        let mut pg = Tensor::zeros(pr, pc);
                        for r in 0..pr {
                            pg.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                        }
                        off += pc;
                        acc(&mut grads, *p, pg);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (pr, pc) = self.shape(*p);
                        let pg = Tensor::from_vec(pr, pc, g.data[off * pc..(off + pr) * pc].to_vec());
                        off += pr;
                        acc(&mut grads, *p, pg);
                    }
                }
                Op::SliceCols(a, start) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ag = Tensor::zeros(ar, ac);
                    for r in 0..ar {
                        ag.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ag);
                }
                Op::SliceRows(a, start) => {
                    let (ar, ac) = self.shape(*a);
                    let mut ag = Tensor::zeros(ar, ac);
                    ag.data[start * ac..(start + g.rows) * ac].copy_from_slice(&g.data);
                    acc(&mut grads, *a, ag);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ag = Tensor::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = dot(yr, gr);
                        for ((o, yi), gi) in ag.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yi * (gi - inner);
                        }
                    }
                    acc(&mut grads, *a, ag);
                }
                Op::LstmCell(z, c_prev) => {
                    let zv = &self.value(*z).data;
                    let cp = &self.value(*c_prev).data;
                    let h = cp.len();
                    let mut gz = vec![0.0; 4 * h];
                    let mut gc = vec![0.0; h];
                    for j in 0..h {
                        let i = sigmoid(zv[j]);
                        let f = sigmoid(zv[h + j]);
                        let gg = zv[2 * h + j].tanh();
                        let o = sigmoid(zv[3 * h + j]);
                        let c = node.value.data[h + j];
                        let tc = c.tanh();
                        let dh = g.data[j];
                        let dc = g.data[h + j] + dh * o * (1.0 - tc * tc);
                        gz[j] = dc * gg * i * (1.0 - i);
                        gz[h + j] = dc * cp[j] * f * (1.0 - f);
                        gz[2 * h + j] = dc * i * (1.0 - gg * gg);
                        gz[3 * h + j] = dh * tc * o * (1.0 - o);
                        gc[j] = dc * f;
                    }
                    acc(&mut grads, *z, Tensor::from_vec(1, 4 * h, gz));
                    acc(&mut grads, *c_prev, Tensor::from_vec(1, h, gc));
                }
                Op::Reverse(a, lambda) => acc(&mut grads, *a, g.scale(-lambda)),
                Op::StopGrad => {}
                Op::ProjRows(u, v) => {
                    let uv = self.value(*u);
                    let vv = self.value(*v);
                    let mut gu = Tensor::zeros(uv.rows, uv.cols);
                    let mut gv = Tensor::zeros(uv.rows, uv.cols);
                    for r in 0..uv.rows {
                        let (ur, vr, gr) = (uv.row(r), vv.row(r), g.row(r));
                        let nn = dot(vr, vr);
                        if nn.sqrt() <= EPS_PROJ {
                            continue;
                        }
                        let s = dot(ur, vr) / nn;
                        let gdv = dot(gr, vr) / nn;
                        for c in 0..uv.cols {
                            gu.row_mut(r)[c] = gdv * vr[c];
                            gv.row_mut(r)[c] = s * gr[c] + gdv * (ur[c] - 2.0 * s * vr[c]);
                        }
                    }
                    acc(&mut grads, *u, gu);
                    acc(&mut grads, *v, gv);
                }
                Op::MeanAll(a) => {
                    let (r, c) = self.shape(*a);
                    let s = g.data[0] / (r * c) as f64;
                    acc(&mut grads, *a, Tensor::from_vec(r, c, vec![s; r * c]));
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut grads, *a, Tensor::from_vec(r, c, vec![g.data[0]; r * c]));
                }
                Op::Focal {
                    probs,
                    class,
                    gamma,
                } => {
                    let (r, c) = self.shape(*probs);
                    let p = self.value(*probs).data[*class];
                    let mut pg = Tensor::zeros(r, c);
                    pg.data[*class] = g.data[0] * focal_derivative(p, *gamma);
                    acc(&mut grads, *probs, pg);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    )
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}

pub(crate) fn focal_value(p: f64, gamma: f64) -> f64 {
    let pc = p.max(EPS_LOG);
    let w = if gamma == 0.0 {
        1.0
    } else {
        (1.0 - p).max(0.0).powf(gamma)
    };
    -w * pc.ln()
}

/// d/dp of [`focal_value`]; zero where the probability was clamped.
pub(crate) fn focal_derivative(p: f64, gamma: f64) -> f64 {
    if p < EPS_LOG {
        return 0.0;
    }
    let q = (1.0 - p).max(0.0);
    let ln = p.ln();
    let weight = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
    let dweight = if gamma == 0.0 || (q == 0.0 && gamma < 1.0) {
        0.0
    } else {
        -gamma * q.powf(gamma - 1.0)
    };
    -(dweight * ln + weight / p)
}

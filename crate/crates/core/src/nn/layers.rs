//! Layers built on the tape: dense, LSTM / BiLSTM, sequential
//! self-attention, plus plain-slice versions of projection and focal loss.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::params::{ParamId, ParamStore};
use super::tape::{focal_value, Tape, Var, EPS_PROJ};
use super::tensor::{dot, Tensor};
use crate::util::Rng;

/// Glorot-uniform `rows x cols`.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect(),
    )
}

/// Random `n x n` orthogonal matrix (Gram-Schmidt on a Gaussian draw).
pub fn orthogonal(n: usize, rng: &mut Rng) -> Tensor {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let d = dot(&v, r);
            for (a, b) in v.iter_mut().zip(r) {
                *a -= d * b;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        rows.push(v);
    }
    Tensor::from_rows(&rows)
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        let w = store.register(format!("{name}.w"), glorot(input, output, rng));
        let b = store.register(format!("{name}.b"), Tensor::zeros(1, output));
        Dense { w, b, input, output }
    }

    /// `x W + b` applied to every row of `x`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        assert_eq!(tape.shape(x).1, self.input, "dense input width");
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

/// One LSTM direction. Gate layout in the `4h` axis: input, forget,
/// candidate, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let wx = store.register(format!("{name}.wx"), glorot(input, 4 * hidden, rng));
        let mut wh = Tensor::zeros(hidden, 4 * hidden);
        for gate in 0..4 {
            let q = orthogonal(hidden, rng);
            for r in 0..hidden {
                wh.row_mut(r)[gate * hidden..(gate + 1) * hidden].copy_from_slice(q.row(r));
            }
        }
        let wh = store.register(format!("{name}.wh"), wh);
        let b = store.register(format!("{name}.b"), Tensor::zeros(1, 4 * hidden));
        Lstm {
            wx,
            wh,
            b,
            input,
            hidden,
        }
    }

    /// Single step: returns `(h_t, c_t)`, each `1 x h`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x_t: Var, h_prev: Var, c_prev: Var) -> (Var, Var) {
        let wx = tape.param(store, self.wx);
        let b = tape.param(store, self.b);
        let xz = tape.matmul(x_t, wx);
        let xz = tape.add_row(xz, b);
        self.step_projected(tape, store, xz, Some(h_prev), c_prev)
    }

    fn step_projected(&self, tape: &mut Tape, store: &ParamStore, xz: Var, h_prev: Option<Var>, c_prev: Var) -> (Var, Var) {
        let z = match h_prev {
            Some(h) => {
                let wh = tape.param(store, self.wh);
                let hz = tape.matmul(h, wh);
                tape.add(xz, hz)
            }
            None => xz,
        };
        let hc = tape.lstm_cell(z, c_prev);
        let h = tape.slice_cols(hc, 0, self.hidden);
        let c = tape.slice_cols(hc, self.hidden, 2 * self.hidden);
        (h, c)
    }

    /// Run over all rows of `x` (`l x input`), in reverse when `reverse`.
    /// Output rows are aligned with input positions.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, x: Var, reverse: bool) -> Var {
        let (l, a) = tape.shape(x);
        assert_eq!(a, self.input, "lstm input width");
        assert!(l >= 1, "empty sequence");
        let wx = tape.param(store, self.wx);
        let b = tape.param(store, self.b);
        let xz = tape.matmul(x, wx);
        let xz = tape.add_row(xz, b);
        let mut c = tape.leaf(Tensor::zeros(1, self.hidden));
        let mut h: Option<Var> = None;
        let mut outs = vec![None; l];
        let order: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
        for t in order {
            let zt = tape.row(xz, t);
            let (ht, ct) = self.step_projected(tape, store, zt, h, c);
            outs[t] = Some(ht);
            h = Some(ht);
            c = ct;
        }
        let outs: Vec<Var> = outs.into_iter().map(Option::unwrap).collect();
        tape.concat_rows(&outs)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.wx, self.wh, self.b]
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        BiLstm {
            fwd: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    /// `l x input` to `l x 2h`: left-to-right states then right-to-left.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let f = self.fwd.run(tape, store, x, false);
        let b = self.bwd.run(tape, store, x, true);
        tape.concat_cols(&[f, b])
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.fwd.params();
        p.extend(self.bwd.params());
        p
    }
}

/// BiLSTM layers fed one into the next.
#[derive(Debug, Clone)]
pub struct StackedBiLstm {
    pub layers: Vec<BiLstm>,
}

impl StackedBiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, depth: usize, rng: &mut Rng) -> Self {
        assert!(depth >= 1, "stack depth");
        let mut layers = Vec::with_capacity(depth);
        let mut width = input;
        for i in 0..depth {
            layers.push(BiLstm::new(store, &format!("{name}.l{i}"), width, hidden, rng));
            width = 2 * hidden;
        }
        StackedBiLstm { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        self.layers
            .iter()
            .fold(x, |h, layer| layer.forward(tape, store, h))
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, BiLstm::output_dim)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(BiLstm::params).collect()
    }
}

/// Scalar-score sequential self-attention:
/// `s_i = sigmoid(w . h_i + b)`, `alpha = softmax(s)`, `out = sum alpha_i h_i`.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub w: ParamId,
    pub b: ParamId,
    pub dim: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut Rng) -> Self {
        let w = store.register(format!("{name}.w"), glorot(dim, 1, rng));
        let b = store.register(format!("{name}.b"), Tensor::zeros(1, 1));
        SelfAttention { w, b, dim }
    }

    /// Returns `(alpha: 1 x l, attended: 1 x d)`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> (Var, Var) {
        assert_eq!(tape.shape(h).1, self.dim, "attention width");
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let s = tape.matmul(h, w);
        let s = tape.add_row(s, b);
        let s = tape.sigmoid(s);
        let s = tape.transpose(s);
        let alpha = tape.softmax_rows(s);
        let attended = tape.matmul(alpha, h);
        (alpha, attended)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

/// Gradient reversal: identity forward, `-lambda` times the gradient back.
pub fn grl(tape: &mut Tape, x: Var, lambda: f64) -> Var {
    tape.grad_reverse(x, lambda)
}

/// `((u.v)/|v|^2) v`, or zero when `|v| <= EPS_PROJ`. The flag reports
/// the degenerate case.
pub fn vector_proj(u: &[f64], v: &[f64]) -> (Vec<f64>, bool) {
    let nn = dot(v, v);
    if nn.sqrt() <= EPS_PROJ {
        return (vec![0.0; u.len()], true);
    }
    let s = dot(u, v) / nn;
    (v.iter().map(|x| s * x).collect(), false)
}

/// `-(1 - p_y)^gamma ln p_y`, with `p_y` floored at `EPS_LOG`.
pub fn focal_loss(p: &[f64], y: usize, gamma: f64) -> f64 {
    focal_value(p[y], gamma)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut v = logits.to_vec();
    super::tape::softmax_in_place(&mut v);
    v
}

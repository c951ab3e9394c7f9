use rand::Rng as _;

use super::gradcheck::{check_input, check_params};
use super::*;
use crate::util::{seeded, Rng};

fn rand_tensor(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
}

/// Fixed random projection to a scalar so gradients are not all equal.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(x);
    let mut rng = seeded(seed);
    let w = tape.leaf(rand_tensor(r, c, 1.0, &mut rng));
    let p = tape.mul(x, w);
    tape.sum_all(p)
}

#[test]
fn dense_identity_and_bias() {
    let mut store = ParamStore::new();
    let mut rng = seeded(0);
    let d = Dense::new(&mut store, "d", 3, 3, &mut rng);
    *store.get_mut(d.w) = Tensor::identity(3);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]));
    let y = d.forward(&mut tape, &store, x);
    assert_eq!(tape.value(y), tape.value(x));

    *store.get_mut(d.b) = Tensor::row_vector(vec![0.1, 0.2, 0.3]);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(2, 3));
    let y = d.forward(&mut tape, &store, x);
    for r in 0..2 {
        assert_eq!(tape.value(y).row(r), &[0.1, 0.2, 0.3]);
    }
}

#[test]
fn dense_shape_mismatch_panics() {
    let result = std::panic::catch_unwind(|| {
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 3, 2, &mut seeded(0));
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(1, 4));
        d.forward(&mut tape, &store, x);
    });
    assert!(result.is_err());
}

#[test]
fn dense_gradients() {
    for trial in 0..20 {
        let mut rng = seeded(100 + trial);
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 4, 3, &mut rng);
        *store.get_mut(d.b) = rand_tensor(1, 3, 0.5, &mut rng);
        let x = rand_tensor(2, 4, 1.0, &mut rng);
        let r = check_params(&store, &[], 1, |t, s| {
            let xv = t.leaf(x.clone());
            let y = d.forward(t, s, xv);
            let y = t.tanh(y);
            weighted_sum(t, y, trial)
        });
        assert!(r.max_rel_err < 1e-4, "{r:?}");
        let r = check_input(&x, |t, xv| {
            let y = d.forward(t, &store, xv);
            let y = t.tanh(y);
            weighted_sum(t, y, trial)
        });
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}

#[test]
fn lstm_zero_params_give_zero_state() {
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", 3, 4, &mut seeded(1));
    for id in lstm.params() {
        let (r, c) = store.get(id).shape();
        *store.get_mut(id) = Tensor::zeros(r, c);
    }
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(1, 3));
    let h0 = tape.leaf(Tensor::zeros(1, 4));
    let c0 = tape.leaf(Tensor::zeros(1, 4));
    let (h, c) = lstm.step(&mut tape, &store, x, h0, c0);
    assert!(tape.value(h).data.iter().all(|v| *v == 0.0));
    assert!(tape.value(c).data.iter().all(|v| *v == 0.0));
}

#[test]
fn lstm_gates_are_open_interval() {
    let mut rng = seeded(2);
    let z = rand_tensor(1, 16, 30.0, &mut rng);
    for j in 0..4 {
        let g = sigmoid(z.data[j]);
        assert!(g > 0.0 && g < 1.0 || (g == 1.0 && z.data[j] > 30.0));
    }
    // cell state stays bounded by the sum of |candidate| contributions
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", 2, 4, &mut rng);
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(10, 2, 5.0, &mut rng));
    let out = lstm.run(&mut tape, &store, x, false);
    assert!(tape.value(out).data.iter().all(|v| v.abs() < 1.0));
}

#[test]
fn lstm_gradients_over_five_steps() {
    for trial in 0..20 {
        let mut rng = seeded(200 + trial);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 3, 3, &mut rng);
        *store.get_mut(lstm.b) = rand_tensor(1, 12, 0.5, &mut rng);
        let x = rand_tensor(5, 3, 1.0, &mut rng);
        let r = check_params(&store, &[], 1, |t, s| {
            let xv = t.leaf(x.clone());
            let out = lstm.run(t, s, xv, false);
            let last = t.row(out, 4);
            weighted_sum(t, last, trial)
        });
        assert!(r.max_rel_err < 1e-4, "trial {trial}: {r:?}");
    }
}

#[test]
fn bilstm_shapes_and_single_step() {
    let mut store = ParamStore::new();
    let bi = BiLstm::new(&mut store, "b", 3, 4, &mut seeded(3));
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(1, 3, 1.0, &mut seeded(4)));
    let y = bi.forward(&mut tape, &store, x);
    assert_eq!(tape.shape(y), (1, 8));
}

#[test]
fn bilstm_reversal_swaps_halves_with_mirrored_weights() {
    let mut rng = seeded(5);
    let mut store = ParamStore::new();
    let a = BiLstm::new(&mut store, "a", 3, 2, &mut rng);
    let b = BiLstm::new(&mut store, "b", 3, 2, &mut rng);
    for (src, dst) in a.fwd.params().into_iter().zip(b.bwd.params()) {
        *store.get_mut(dst) = store.get(src).clone();
    }
    for (src, dst) in a.bwd.params().into_iter().zip(b.fwd.params()) {
        *store.get_mut(dst) = store.get(src).clone();
    }
    let x = rand_tensor(6, 3, 1.0, &mut rng);
    let mut rev_rows: Vec<Vec<f64>> = (0..6).map(|r| x.row(r).to_vec()).collect();
    rev_rows.reverse();
    let xr = Tensor::from_rows(&rev_rows);
    let mut tape = Tape::new();
    let xa = tape.leaf(x);
    let xb = tape.leaf(xr);
    let ya = a.forward(&mut tape, &store, xa);
    let yb = b.forward(&mut tape, &store, xb);
    let (ya, yb) = (tape.value(ya), tape.value(yb));
    for t in 0..6 {
        let ra = ya.row(t);
        let rb = yb.row(5 - t);
        for j in 0..2 {
            assert!((ra[j] - rb[2 + j]).abs() < 1e-12);
            assert!((ra[2 + j] - rb[j]).abs() < 1e-12);
        }
    }
}

#[test]
fn stacked_bilstm_gradients() {
    for trial in 0..20 {
        let mut rng = seeded(300 + trial);
        let mut store = ParamStore::new();
        let st = StackedBiLstm::new(&mut store, "s", 2, 2, 2, &mut rng);
        let x = rand_tensor(4, 2, 1.0, &mut rng);
        let r = check_params(&store, &[], 1, |t, s| {
            let xv = t.leaf(x.clone());
            let y = st.forward(t, s, xv);
            weighted_sum(t, y, trial)
        });
        assert!(r.max_rel_err < 1e-4, "trial {trial}: {r:?}");
        let r = check_input(&x, |t, xv| {
            let y = st.forward(t, &store, xv);
            weighted_sum(t, y, trial)
        });
        assert!(r.max_rel_err < 1e-4, "trial {trial}: {r:?}");
    }
}

#[test]
fn attention_examples() {
    let mut store = ParamStore::new();
    let att = SelfAttention::new(&mut store, "a", 3, &mut seeded(6));
    let mut tape = Tape::new();
    let h = tape.leaf(Tensor::row_vector(vec![0.3, -1.0, 2.0]));
    let (alpha, out) = att.forward(&mut tape, &store, h);
    assert_eq!(tape.value(alpha).data, vec![1.0]);
    assert_eq!(tape.value(out), tape.value(h));

    let mut tape = Tape::new();
    let h = tape.leaf(Tensor::from_rows(&vec![vec![0.5, 0.1, -0.2]; 4]));
    let (alpha, _) = att.forward(&mut tape, &store, h);
    for a in &tape.value(alpha).data {
        assert!((a - 0.25).abs() < 1e-15);
    }

    let mut rng = seeded(7);
    for _ in 0..50 {
        let mut tape = Tape::new();
        let l = rng.gen_range(1..10);
        let h = tape.leaf(rand_tensor(l, 3, 3.0, &mut rng));
        let (alpha, _) = att.forward(&mut tape, &store, h);
        let s: f64 = tape.value(alpha).data.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

#[test]
fn attention_gradients() {
    for trial in 0..20 {
        let mut rng = seeded(400 + trial);
        let mut store = ParamStore::new();
        let att = SelfAttention::new(&mut store, "a", 3, &mut rng);
        *store.get_mut(att.b) = rand_tensor(1, 1, 0.5, &mut rng);
        let h = rand_tensor(5, 3, 1.5, &mut rng);
        let r = check_params(&store, &[], 1, |t, s| {
            let hv = t.leaf(h.clone());
            let (_, out) = att.forward(t, s, hv);
            weighted_sum(t, out, trial)
        });
        assert!(r.max_rel_err < 1e-4, "{r:?}");
        let r = check_input(&h, |t, hv| {
            let (_, out) = att.forward(t, &store, hv);
            weighted_sum(t, out, trial)
        });
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}

#[test]
fn grl_forward_and_backward() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row_vector(vec![1.5, -2.0]));
    let y = grl(&mut tape, x, 1.0);
    assert_eq!(tape.value(y).data, vec![1.5, -2.0]);
    let w = tape.leaf(Tensor::row_vector(vec![3.0, 4.0]));
    let p = tape.mul(y, w);
    let s = tape.sum_all(p);
    let g = tape.backward(s);
    assert_eq!(g.get(x).unwrap().data, vec![-3.0, -4.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::row_vector(vec![1.5, -2.0]));
    let y = grl(&mut tape, x, 0.0);
    let s = tape.sum_all(y);
    let g = tape.backward(s);
    assert!(g.get(x).unwrap().data.iter().all(|v| *v == 0.0));
}

#[test]
fn vector_proj_examples() {
    assert_eq!(vector_proj(&[3.0, 4.0], &[1.0, 0.0]).0, vec![3.0, 0.0]);
    let u = [0.3, -1.2, 2.0];
    let (p, _) = vector_proj(&u, &u);
    for (a, b) in p.iter().zip(&u) {
        assert!((a - b).abs() < 1e-15);
    }
    let mut rng = seeded(8);
    for _ in 0..100 {
        let u: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (p, _) = vector_proj(&u, &v);
        let resid: Vec<f64> = u.iter().zip(&p).map(|(a, b)| a - b).collect();
        assert!(dot(&resid, &v).abs() < 1e-9);
    }
    let (z, flagged) = vector_proj(&[1.0, 2.0], &[0.0, 0.0]);
    assert!(flagged);
    assert_eq!(z, vec![0.0, 0.0]);
}

#[test]
fn proj_rows_gradients_and_degenerate_rows() {
    for trial in 0..20 {
        let mut rng = seeded(500 + trial);
        let u = rand_tensor(3, 4, 1.0, &mut rng);
        let v = rand_tensor(3, 4, 1.0, &mut rng);
        let r = check_input(&u, |t, uv| {
            let vv = t.leaf(v.clone());
            let p = t.proj_rows(uv, vv);
            weighted_sum(t, p, trial)
        });
        assert!(r.max_rel_err < 1e-4, "{r:?}");
        let r = check_input(&v, |t, vv| {
            let uv = t.leaf(u.clone());
            let p = t.proj_rows(uv, vv);
            weighted_sum(t, p, trial)
        });
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
    let mut tape = Tape::new();
    let u = tape.leaf(Tensor::row_vector(vec![1.0, 1.0]));
    let v = tape.leaf(Tensor::row_vector(vec![0.0, 0.0]));
    let p = tape.proj_rows(u, v);
    assert_eq!(tape.value(p).data, vec![0.0, 0.0]);
    assert_eq!(tape.degenerate_projections(), 1);
    let s = tape.sum_all(p);
    let g = tape.backward(s);
    assert!(g.get(u).unwrap().data.iter().all(|x| *x == 0.0));
}

#[test]
fn focal_examples() {
    for g in [0.0, 1.0, 2.0, 3.0] {
        assert_eq!(focal_loss(&[0.0, 1.0], 1, g), 0.0);
    }
    let l2 = focal_loss(&[0.9, 0.1], 0, 2.0);
    assert!((l2 - 0.001_053_605_156_578_263).abs() < 1e-15);
    let l0 = focal_loss(&[0.9, 0.1], 0, 0.0);
    assert!((l0 - 0.105_360_515_657_826_3).abs() < 1e-15);
    assert!(l2 < l0);
    // clamped, finite
    assert!(focal_loss(&[1.0, 0.0], 1, 2.0).is_finite());
}

#[test]
fn focal_through_softmax_gradients() {
    for gamma in [0.0, 1.0, 2.0, 3.0] {
        for trial in 0..20 {
            let mut rng = seeded(600 + trial);
            let logits = rand_tensor(1, 2, 3.0, &mut rng);
            let y = (trial % 2) as usize;
            let r = check_input(&logits, |t, z| {
                let p = t.softmax_rows(z);
                t.focal(p, y, gamma)
            });
            assert!(r.max_rel_err < 1e-4, "gamma {gamma}: {r:?}");
        }
    }
}

#[test]
fn diamond_graph_accumulates() {
    // y = a*b + a*c with b = a, c = 2a  => y = 3a^2, dy/da = 6a
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::row_vector(vec![1.5]));
    let b = tape.scale(a, 1.0);
    let c = tape.scale(a, 2.0);
    let ab = tape.mul(a, b);
    let ac = tape.mul(a, c);
    let y = tape.add(ab, ac);
    let y = tape.sum_all(y);
    let g = tape.backward(y);
    assert!((g.get(a).unwrap().data[0] - 9.0).abs() < 1e-12);
}

#[test]
fn adam_behaviour() {
    let mut store = ParamStore::new();
    let id = store.register("p", Tensor::row_vector(vec![0.0, 0.0]));
    let mut adam = Adam::new(&store, AdamConfig::default());
    let g = vec![Tensor::row_vector(vec![0.5, -2.0])];
    let mut prev = store.get(id).clone();
    for _ in 0..500 {
        adam.step(&mut store, &g);
        let cur = store.get(id).clone();
        let d0 = cur.data[0] - prev.data[0];
        let d1 = cur.data[1] - prev.data[1];
        assert!(d0 < 0.0 && d1 > 0.0);
        assert!((d0.abs() - 1e-3).abs() < 1e-6);
        assert!((d1.abs() - 1e-3).abs() < 1e-6);
        prev = cur;
    }

    let mut store = ParamStore::new();
    let id = store.register("p", Tensor::row_vector(vec![0.7]));
    let mut adam = Adam::new(&store, AdamConfig::default());
    adam.step(&mut store, &[Tensor::row_vector(vec![0.0])]);
    assert_eq!(store.get(id).data, vec![0.7]);
}

#[test]
fn orthogonal_init_is_orthogonal() {
    let q = orthogonal(6, &mut seeded(9));
    let qqt = q.matmul_t(&q);
    for i in 0..6 {
        for j in 0..6 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((qqt.get(i, j) - want).abs() < 1e-10);
        }
    }
}

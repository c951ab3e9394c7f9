use rand::Rng as _;

use super::*;
use crate::nn::gradcheck::{check_params, rel_err};
use crate::nn::Adam;

fn rand_tensor(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        emb_dim: 5,
        fnet_hidden: 3,
        fnet_depth: 2,
        dnet_hidden: 2,
        ..Default::default()
    }
}

fn tiny_bank(rng: &mut Rng, dim: usize) -> EncodedBank {
    EncodedBank {
        claim: vec![rand_tensor(3, dim, 0.5, rng), rand_tensor(2, dim, 0.5, rng)],
        nonclaim: vec![rand_tensor(2, dim, 0.5, rng), rand_tensor(1, dim, 0.5, rng)],
    }
}

#[test]
fn bundled_definitions_have_expected_counts() {
    let b = DefinitionBank::bundled();
    assert_eq!(b.claim.len(), 10);
    assert_eq!(b.nonclaim.len(), 8);
}

#[test]
fn definition_file_errors() {
    assert!(DefinitionBank::parse("[CLAIM]\na\n").is_err());
    assert!(matches!(
        DefinitionBank::parse("orphan\n[CLAIM]\na\n[NONCLAIM]\nb\n"),
        Err(Error::Format { line: 1, .. })
    ));
    let b = DefinitionBank::parse("[CLAIM]\na b\n\n[NONCLAIM]\nc\n").unwrap();
    assert_eq!((b.claim.len(), b.nonclaim.len()), (1, 1));
    let toks = DefinitionBank::tokenize("A claim, \"quoted\" here.");
    let forms: Vec<_> = toks.iter().map(|t| t.form.as_str()).collect();
    assert_eq!(forms, vec!["a", "claim", "quoted", "here"]);
}

#[test]
fn dnet_single_timestep_definition() {
    let model = DesyrModel::new(tiny_config(), 1, 1, 0).unwrap();
    let mut tape = Tape::new();
    let q = tape.leaf(Tensor::row_vector(vec![0.3, -0.7, 0.2, 0.9]));
    let v = tape.leaf(Tensor::row_vector(vec![0.1, 0.5, -0.2, 0.4]));
    let dm = model.dnet_align(&mut tape, q, &[v]);
    assert_eq!(tape.shape(dm), (1, 1));
    assert!((tape.scalar(dm) - 0.2).abs() < 1e-15);
}

#[test]
fn dnet_identical_definitions_identical_scalars() {
    let model = DesyrModel::new(tiny_config(), 2, 1, 0).unwrap();
    let mut rng = seeded(1);
    let mut tape = Tape::new();
    let q = tape.leaf(rand_tensor(1, 4, 1.0, &mut rng));
    let m = rand_tensor(4, 4, 1.0, &mut rng);
    let a = tape.leaf(m.clone());
    let b = tape.leaf(m);
    let dm = model.dnet_align(&mut tape, q, &[a, b]);
    let d = &tape.value(dm).data;
    assert_eq!(d[0], d[1]);
}

#[test]
fn query_scaling_sharpens_but_keeps_argmax() {
    let mut rng = seeded(2);
    for _ in 0..50 {
        let q = rand_tensor(1, 4, 1.0, &mut rng);
        let v = rand_tensor(6, 4, 1.0, &mut rng);
        let weights = |scale: f64| {
            let mut tape = Tape::new();
            let qv = tape.leaf(q.scale(scale));
            let vv = tape.leaf(v.clone());
            let vt = tape.transpose(vv);
            let s = tape.matmul(qv, vt);
            let a = tape.softmax_rows(s);
            tape.value(a).data.clone()
        };
        let argmax = |w: &[f64]| (0..w.len()).max_by(|&i, &j| w[i].total_cmp(&w[j])).unwrap();
        let w1 = weights(1.0);
        let w3 = weights(3.0);
        assert_eq!(argmax(&w1), argmax(&w3));
        assert!(w3[argmax(&w3)] >= w1[argmax(&w1)] - 1e-15);
    }
}

#[test]
fn zero_defmap_with_identity_fusion_passes_bilstm_through() {
    let cfg = tiny_config();
    let mut model = DesyrModel::new(cfg, 2, 2, 3).unwrap();
    let d = model.feature_dim();
    let fusion = model.fusion_layer().unwrap().clone();
    let w = model.store.get_mut(fusion.w);
    *w = Tensor::zeros(w.rows, w.cols);
    for i in 0..d {
        w.set(i, i, 1.0);
    }
    let store = model.store.clone();
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(4, 5, 0.5, &mut seeded(4)));
    let zero = tape.leaf(Tensor::zeros(1, 4));
    let (v_s, aux) = model.fnet_s_forward(&mut tape, &store, x, Some(zero), None);
    let h = model.fnet_s.lstm.forward(&mut tape, &store, x);
    assert_eq!(tape.value(v_s), tape.value(h));
    let s: f64 = tape.value(aux).data.iter().sum();
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn defmap_changes_spotlight_features() {
    let model = DesyrModel::new(tiny_config(), 2, 2, 5).unwrap();
    let mut rng = seeded(6);
    let x = rand_tensor(3, 5, 0.5, &mut rng);
    let dm = rand_tensor(1, 4, 0.5, &mut rng);
    let v_s_sum = |dm: &Tensor| {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let d = tape.leaf(dm.clone());
        let (v, _) = model.fnet_s_forward(&mut tape, &model.store, xv, Some(d), None);
        tape.value(v).data.clone()
    };
    let base = v_s_sum(&dm);
    let mut bumped = dm.clone();
    bumped.data[0] += 1e-4;
    let moved = v_s_sum(&bumped);
    let jac: f64 = base.iter().zip(&moved).map(|(a, b)| ((b - a) / 1e-4).abs()).sum();
    assert!(jac > 1e-6, "defmap has no effect on v_s");
}

#[test]
fn grl_leaves_forward_unchanged_and_flips_feature_gradient() {
    let cfg = tiny_config();
    let with = DesyrModel::new(cfg.clone(), 2, 2, 7).unwrap();
    let mut without = with.clone();
    without.config.grl_lambda = -1.0;
    let x = rand_tensor(4, 5, 0.5, &mut seeded(8));
    let run = |m: &DesyrModel| {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (v_r, aux) = m.fnet_r_forward(&mut tape, &m.store, xv, None);
        let loss = tape.focal(aux, 1, 2.0);
        let g = tape.backward(loss);
        (tape.value(aux).data.clone(), g.get_or_zeros(v_r, tape.shape(v_r)), g.param(m.fnet_r.head.w).cloned().unwrap())
    };
    let (pa, ga, ha) = run(&with);
    let (pb, gb, hb) = run(&without);
    assert_eq!(pa, pb);
    assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (a, b) in ga.data.iter().zip(&gb.data) {
        assert!((a + b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    // the head itself trains normally
    assert_eq!(ha, hb);
}

#[test]
fn aopl_orthogonal_parallel_and_random() {
    let model = DesyrModel::new(tiny_config(), 1, 1, 9).unwrap();
    let store = &model.store;
    let mut tape = Tape::new();
    let vs = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]]));
    let vr = tape.leaf(Tensor::from_rows(&[vec![0.0, 0.0, 3.0, 0.0, 0.0, 0.0], vec![2.0, 2.0, 2.0, 2.0, 2.0, 2.0]]));
    let (_, _, p, o) = model.aopl(&mut tape, store, vs, vr);
    assert!(tape.value(p).row(0).iter().all(|v| v.abs() < 1e-15));
    for (a, b) in tape.value(o).row(0).iter().zip(tape.value(vs).row(0)) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(tape.value(o).row(1).iter().all(|v| v.abs() < 1e-8));

    let mut rng = seeded(10);
    for _ in 0..100 {
        let mut tape = Tape::new();
        let vs = tape.leaf(rand_tensor(4, 6, 1.0, &mut rng));
        let vr = tape.leaf(rand_tensor(4, 6, 1.0, &mut rng));
        let (_, alpha, p, o) = model.aopl(&mut tape, store, vs, vr);
        for i in 0..4 {
            let (oi, ri, si, pi) = (tape.value(o).row(i), tape.value(vr).row(i), tape.value(vs).row(i), tape.value(p).row(i));
            assert!(dot(oi, ri).abs() <= 1e-6 * dot(oi, oi).sqrt() * dot(ri, ri).sqrt() + 1e-15);
            assert!(dot(oi, oi).sqrt() <= dot(si, si).sqrt() + 1e-12);
            for c in 0..6 {
                assert!((pi[c] + (si[c] - pi[c]) - si[c]).abs() < 1e-15);
            }
        }
        assert!((tape.value(alpha).data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forward_outputs_are_distributions_and_deterministic() {
    let mut rng = seeded(11);
    let model = DesyrModel::new(tiny_config(), 2, 2, 12).unwrap();
    let bank = tiny_bank(&mut rng, 5);
    let x = vec![rand_tensor(4, 5, 0.5, &mut rng)];
    let a = model.forward_rows(Some(&bank), &x);
    let b = model.forward_rows(Some(&bank), &x);
    assert_eq!(a, b);
    for p in [a[0].main_probs, a[0].aux_s_probs, a[0].aux_r_probs] {
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }
    assert!(a[0].orthogonality.iter().all(|r| *r <= 1e-6));
}

#[test]
fn padded_positions_get_zero_attention() {
    let model = DesyrModel::new(tiny_config(), 2, 2, 13).unwrap();
    let mut rng = seeded(14);
    let bank = tiny_bank(&mut rng, 5);
    let mut matrix = Tensor::zeros(8, 5);
    for r in 0..3 {
        matrix.row_mut(r).copy_from_slice(rand_tensor(1, 5, 0.5, &mut rng).row(0));
    }
    let mut mask = vec![false; 8];
    mask[..3].fill(true);
    let out = model.forward(Some(&bank), &[EncodedText { matrix, mask }]);
    assert_eq!(out[0].alpha.len(), 8);
    assert!(out[0].alpha[3..].iter().all(|a| *a == 0.0));
    assert!((out[0].alpha[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn end_to_end_gradient_check_at_tiny_dims() {
    let mut rng = seeded(15);
    let cfg = tiny_config().with_exact_gradients();
    let model = DesyrModel::new(cfg, 2, 2, 16).unwrap();
    let bank = tiny_bank(&mut rng, 5);
    let x = rand_tensor(4, 5, 0.8, &mut rng);
    let r = check_params(&model.store, &[], 1, |tape, store| {
        let bv = model.bank_vars(tape, store, &bank);
        let ex = model.build(tape, store, &x, bv.as_ref(), None);
        model.loss_var(tape, &ex, Label::Claim, 2.0)
    });
    assert!(r.max_rel_err < 1e-3, "{r:?}");
}

#[test]
fn untied_and_vector_defmap_variants_build() {
    let mut rng = seeded(17);
    let bank = tiny_bank(&mut rng, 5);
    let cfg = ModelConfig {
        dnet_untied: true,
        defmap: DefmapMode::Vector,
        ..tiny_config()
    };
    let m = DesyrModel::new(cfg, 2, 2, 0).unwrap();
    assert!(m.store.id("dnet.nonclaim.fwd.wx").is_some());
    let out = m.forward_rows(Some(&bank), &[rand_tensor(3, 5, 0.5, &mut rng)]);
    assert!((out[0].main_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let no_dnet = ModelConfig {
        use_dnet: false,
        ..tiny_config()
    };
    let m = DesyrModel::new(no_dnet, 0, 0, 0).unwrap();
    assert!(!m.uses_dnet());
    let out = m.forward_rows(None, &[rand_tensor(3, 5, 0.5, &mut rng)]);
    assert!((out[0].main_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn spotlight_and_regulation_share_no_parameters() {
    let m = DesyrModel::new(tiny_config(), 2, 2, 0).unwrap();
    let s = m.fnet_s_params();
    let r = m.fnet_r_params();
    assert!(s.is_disjoint(&r));
    assert!(s.is_disjoint(&m.snet_params()) && r.is_disjoint(&m.snet_params()));
    assert_eq!(s.len() + r.len() + m.snet_params().len(), m.store.len());
    // the regulation graph alone never touches spotlight tensors
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(3, 5, 0.5, &mut seeded(1)));
    let (_, aux) = m.fnet_r_forward(&mut tape, &m.store, x, None);
    let l = tape.focal(aux, 0, 1.0);
    let g = tape.backward(l);
    for id in &s {
        assert!(g.param(*id).is_none());
    }
}

#[test]
fn total_loss_reductions() {
    let out = ForwardOutputs {
        main_probs: [0.2, 0.8],
        aux_s_probs: [0.4, 0.6],
        aux_r_probs: [0.5, 0.5],
        alpha: vec![1.0],
        orthogonality: vec![0.0],
    };
    let main = crate::nn::focal_loss(&out.main_probs, 1, 2.0);
    assert_eq!(total_loss(&out, Label::Claim, 2.0, 0.0), main);
    let ce = -(0.8f64.ln()) + 0.3 * (-(0.6f64.ln()) - 0.5f64.ln());
    assert!((total_loss(&out, Label::Claim, 0.0, 0.3) - ce).abs() < 1e-12);
    let perfect = ForwardOutputs {
        main_probs: [0.0, 1.0],
        aux_s_probs: [0.0, 1.0],
        aux_r_probs: [0.0, 1.0],
        ..out
    };
    assert_eq!(total_loss(&perfect, Label::Claim, 2.0, 0.3), 0.0);
}

#[test]
fn loss_var_matches_plain_total_loss() {
    let mut rng = seeded(18);
    let model = DesyrModel::new(tiny_config(), 2, 2, 19).unwrap();
    let bank = tiny_bank(&mut rng, 5);
    let x = rand_tensor(4, 5, 0.5, &mut rng);
    let mut tape = Tape::new();
    let bv = model.bank_vars(&mut tape, &model.store, &bank);
    let ex = model.build(&mut tape, &model.store, &x, bv.as_ref(), None);
    let l = model.loss_var(&mut tape, &ex, Label::NonClaim, 1.0);
    let out = model.outputs(&tape, &ex, 4);
    assert!((tape.scalar(l) - total_loss(&out, Label::NonClaim, 1.0, 0.3)).abs() < 1e-12);
}

#[test]
fn voting_rules() {
    use Label::*;
    let mut members: Vec<Vec<Label>> = (0..8).map(|_| vec![Claim]).collect();
    members.extend((0..7).map(|_| vec![NonClaim]));
    assert_eq!(vote(&members).unwrap(), vec![Claim]);
    members.reverse();
    assert_eq!(vote(&members).unwrap(), vec![Claim]);
    assert_eq!(vote(&vec![vec![NonClaim, Claim]; 3]).unwrap(), vec![NonClaim, Claim]);
    let tie = vec![vec![Claim], vec![NonClaim], vec![NonClaim], vec![Claim]];
    assert_eq!(vote(&tie).unwrap(), vec![Claim]);
    assert!(vote(&[]).is_err());
    assert!(vote(&[vec![Claim], vec![]]).is_err());
}

#[test]
fn learns_a_linearly_separable_toy_set() {
    let mut rng = seeded(20);
    let cfg = ModelConfig {
        emb_dim: 4,
        fnet_hidden: 4,
        fnet_depth: 1,
        dnet_hidden: 2,
        ..Default::default()
    };
    let mut model = DesyrModel::new(cfg, 2, 2, 21).unwrap();
    let bank = tiny_bank(&mut rng, 4);
    let data: Vec<(Tensor, Label)> = (0..40)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Claim } else { Label::NonClaim };
            let sign = if label == Label::Claim { 1.0 } else { -1.0 };
            let l = rng.gen_range(2..5);
            let mut t = rand_tensor(l, 4, 0.2, &mut rng);
            for r in 0..l {
                t.data[r * 4] = sign * 0.5 + rng.gen_range(-0.1..0.1);
            }
            (t, label)
        })
        .collect();
    let mut adam = Adam::new(&model.store, crate::nn::AdamConfig { lr: 0.01, ..Default::default() });
    for _ in 0..30 {
        for chunk in data.chunks(10) {
            let batch: Vec<(&Tensor, Label)> = chunk.iter().map(|(t, l)| (t, *l)).collect();
            let (_, grads) = model.batch_gradients(Some(&bank), &batch, 2.0, None);
            adam.step(&mut model.store, &grads);
        }
    }
    let inputs: Vec<Tensor> = data.iter().map(|(t, _)| t.clone()).collect();
    let out = model.forward_rows(Some(&bank), &inputs);
    let correct = out.iter().zip(&data).filter(|(o, (_, l))| o.label() == *l).count();
    assert!(correct as f64 / data.len() as f64 >= 0.95, "accuracy {correct}/40");
}

#[test]
fn rel_err_floor() {
    assert_eq!(rel_err(1.0, 1.0, 1e-6), 0.0);
    assert!(rel_err(1e-12, 0.0, 1e-6) < 1e-5);
}

//! Central finite-difference gradient checking.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compare tape gradients of the scalar built by `f` against central
/// differences for every entry of every parameter in `ids` (all parameters
/// when empty). `stride` > 1 checks every `stride`-th entry.
pub fn check_params<F>(store: &ParamStore, ids: &[ParamId], stride: usize, f: F) -> CheckReport
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let root = f(&mut tape, store);
    let grads = tape.backward(root);
    let ids: Vec<ParamId> = if ids.is_empty() {
        store.ids().collect()
    } else {
        ids.to_vec()
    };
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let r = f(&mut t, s);
        t.scalar(r)
    };
    let mut probe = store.clone();
    let mut report = CheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for id in ids {
        let shape = store.get(id).shape();
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1));
        for k in (0..store.get(id).len()).step_by(stride.max(1)) {
            let orig = store.get(id).data[k];
            probe.get_mut(id).data[k] = orig + DEFAULT_STEP;
            let fp = eval(&probe);
            probe.get_mut(id).data[k] = orig - DEFAULT_STEP;
            let fm = eval(&probe);
            probe.get_mut(id).data[k] = orig;
            let numeric = (fp - fm) / (2.0 * DEFAULT_STEP);
            let e = rel_err(analytic.data[k], numeric, DEFAULT_FLOOR);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = format!(
                    "{}[{k}]: analytic {:.6e} numeric {:.6e}",
                    store.name(id),
                    analytic.data[k],
                    numeric
                );
            }
        }
    }
    report
}

/// Same check for an input tensor fed as a leaf: `f` receives the tape and
/// the leaf variable.
pub fn check_input<F>(input: &Tensor, f: F) -> CheckReport
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let root = f(&mut tape, x);
    let grads = tape.backward(root);
    let analytic = grads.get_or_zeros(x, input.shape());
    let eval = |t_in: &Tensor| {
        let mut t = Tape::new();
        let x = t.leaf(t_in.clone());
        let r = f(&mut t, x);
        t.scalar(r)
    };
    let mut probe = input.clone();
    let mut report = CheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for k in 0..input.len() {
        let orig = input.data[k];
        probe.data[k] = orig + DEFAULT_STEP;
        let fp = eval(&probe);
        probe.data[k] = orig - DEFAULT_STEP;
        let fm = eval(&probe);
        probe.data[k] = orig;
        let numeric = (fp - fm) / (2.0 * DEFAULT_STEP);
        let e = rel_err(analytic.data[k], numeric, DEFAULT_FLOOR);
        report.checked += 1;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst = format!("input[{k}]: analytic {:.6e} numeric {numeric:.6e}", analytic.data[k]);
        }
    }
    report
}

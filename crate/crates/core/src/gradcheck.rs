//! Central finite-difference gradient checking.
//!
//! Only forward values are used to estimate derivatives, so the check is
//! independent of every hand-written backward rule.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{normal_mat, Grads, ParamId, ParamStore};
use crate::tensor::Mat;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Relative error with a small absolute floor so that entries where both
/// gradients are essentially zero do not blow up the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

impl GradReport {
    fn new() -> Self {
        GradReport {
            checked: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
        self.max_abs_err = self.max_abs_err.max((analytic - numeric).abs());
    }
}

pub fn rand_mat<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Mat {
    normal_mat(rng, rows, cols, std)
}

/// Check every entry of every input of a graph-building closure.
pub fn check_gradients<F>(inputs: &[Mat], build: F) -> GradReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |vals: &[Mat]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|m| g.input(m.clone())).collect();
        let out = build(&mut g, &vars);
        (g, vars, out)
    };
    let (mut g, vars, out) = eval(inputs);
    g.backward(out);
    let analytic: Vec<Mat> = vars.iter().map(|&v| g.grad(v)).collect();
    let mut report = GradReport::new();
    let mut work = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..work[i].data.len() {
            let orig = work[i].data[j];
            work[i].data[j] = orig + FD_STEP;
            let (gp, _, op) = eval(&work);
            work[i].data[j] = orig - FD_STEP;
            let (gm, _, om) = eval(&work);
            work[i].data[j] = orig;
            let numeric = (gp.scalar(op) - gm.scalar(om)) / (2.0 * FD_STEP);
            report.record(grad.data[j], numeric);
        }
    }
    report
}

/// Check the gradients of selected stored parameters. `loss` builds a graph
/// from the store and returns the scalar loss node.
pub fn check_param_gradients<F>(store: &mut ParamStore, ids: &[ParamId], loss: F) -> GradReport
where
    F: Fn(&ParamStore) -> (Graph, Var),
{
    let (mut g, out) = loss(store);
    g.backward(out);
    let mut grads = Grads::new(store);
    grads.accumulate(&g);
    let mut report = GradReport::new();
    for &id in ids {
        let n = store.get(id).data.len();
        let zero = Mat::zeros(store.get(id).rows, store.get(id).cols);
        let analytic = grads.get(id).cloned().unwrap_or(zero);
        for j in 0..n {
            let orig = store.get(id).data[j];
            store.get_mut(id).data[j] = orig + FD_STEP;
            let (gp, op) = loss(store);
            store.get_mut(id).data[j] = orig - FD_STEP;
            let (gm, om) = loss(store);
            store.get_mut(id).data[j] = orig;
            let numeric = (gp.scalar(op) - gm.scalar(om)) / (2.0 * FD_STEP);
            report.record(analytic.data[j], numeric);
        }
    }
    report
}

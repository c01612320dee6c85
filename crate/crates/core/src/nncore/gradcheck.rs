//! Reverse-mode vs central-difference gradient comparison.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

/// Gradients smaller than this are compared in absolute terms.
const DENOM_FLOOR: f64 = 1e-3;
const REL_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
    /// Set when evaluation itself failed (non-finite node, non-scalar output).
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.max_rel_error < self.tol
    }

    fn failed(tol: f64, why: String) -> Self {
        Self { max_rel_error: f64::INFINITY, worst: None, checked: 0, tol, failure: Some(why) }
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.failure {
            Some(why) => write!(f, "FAIL ({why})"),
            None => write!(
                f,
                "{} max_rel_err={:.3e} tol={:.1e} over {} coords",
                if self.passed() { "PASS" } else { "FAIL" },
                self.max_rel_error,
                self.tol,
                self.checked
            ),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn step_for(x: f64) -> f64 {
    REL_STEP * x.abs().max(1.0)
}

fn eval_scalar<'p>(g: &Graph<'p, f64>, out: Var) -> std::result::Result<f64, String> {
    if let Some((i, name)) = g.first_non_finite() {
        return Err(format!("non-finite value at node {i} ({name})"));
    }
    let t = g.value(out);
    if t.len() != 1 {
        return Err(format!("function output has shape {:?}, expected a scalar", t.shape()));
    }
    Ok(t.item())
}

/// Checks `f` w.r.t. every element of every input.
pub fn grad_check_inputs<Fn_>(f: Fn_, inputs: &[Tensor<f64>], tol: f64) -> GradCheckReport
where
    Fn_: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> =
        inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j))).collect();
    grad_check_coords(&f, inputs, &coords, tol)
}

/// Single-input convenience form of [`grad_check_inputs`].
pub fn grad_check<Fn_>(f: Fn_, x: &Tensor<f64>, tol: f64) -> GradCheckReport
where
    Fn_: Fn(&mut Graph<'_, f64>, Var) -> Result<Var>,
{
    grad_check_inputs(|g, vs| f(g, vs[0]), std::slice::from_ref(x), tol)
}

/// Checks only the listed `(input, flat index)` coordinates.
pub fn grad_check_coords<Fn_>(f: &Fn_, inputs: &[Tensor<f64>], coords: &[(usize, usize)], tol: f64) -> GradCheckReport
where
    Fn_: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let run = |xs: &[Tensor<f64>], backward: bool| -> std::result::Result<(f64, Vec<Tensor<f64>>), String> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars).map_err(|e| e.to_string())?;
        let y = eval_scalar(&g, out)?;
        let grads = if backward {
            g.backward(out);
            vars.iter().map(|v| g.grad_tensor(*v)).collect()
        } else {
            Vec::new()
        };
        Ok((y, grads))
    };
    let analytic = match run(inputs, true) {
        Ok((_, gr)) => gr,
        Err(why) => return GradCheckReport::failed(tol, why),
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, tol, failure: None };
    let mut xs = inputs.to_vec();
    for &(i, j) in coords {
        let x0 = xs[i].data()[j];
        let h = step_for(x0);
        xs[i].data_mut()[j] = x0 + h;
        let plus = run(&xs, false);
        xs[i].data_mut()[j] = x0 - h;
        let minus = run(&xs, false);
        xs[i].data_mut()[j] = x0;
        let (fp, fm) = match (plus, minus) {
            (Ok((a, _)), Ok((b, _))) => (a, b),
            (Err(why), _) | (_, Err(why)) => return GradCheckReport::failed(tol, why),
        };
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic[i].data()[j], numeric);
        report.checked += 1;
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst = Some((i, j));
        }
    }
    report
}

/// Checks a parameterised scalar function w.r.t. its stored parameters.
/// Up to `per_param` randomly chosen entries of each parameter are probed.
pub fn grad_check_params<Fn_>(
    store: &ParamStore<f64>,
    f: Fn_,
    tol: f64,
    per_param: usize,
    seed: u64,
) -> GradCheckReport
where
    Fn_: for<'p> Fn(&mut Graph<'p, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::with_params(store);
        let out = match f(&mut g) {
            Ok(o) => o,
            Err(e) => return GradCheckReport::failed(tol, e.to_string()),
        };
        if let Err(why) = eval_scalar(&g, out) {
            return GradCheckReport::failed(tol, why);
        }
        g.backward(out);
        g.param_grads()
    };
    let eval = |s: &ParamStore<f64>| -> std::result::Result<f64, String> {
        let mut g = Graph::with_params(s);
        let out = f(&mut g).map_err(|e| e.to_string())?;
        eval_scalar(&g, out)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, tol, failure: None };
    for id in store.ids() {
        let n = store.get(id).len();
        let picks = sample(&mut rng, n, per_param.min(n));
        for j in picks.iter() {
            let x0 = store.get(id).data()[j];
            let h = step_for(x0);
            work.get_mut(id).data_mut()[j] = x0 + h;
            let fp = eval(&work);
            work.get_mut(id).data_mut()[j] = x0 - h;
            let fm = eval(&work);
            work.get_mut(id).data_mut()[j] = x0;
            let (fp, fm) = match (fp, fm) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(why), _) | (_, Err(why)) => return GradCheckReport::failed(tol, why),
            };
            let numeric = (fp - fm) / (2.0 * h);
            let err = relative_error(analytic.get(id)[j], numeric);
            report.checked += 1;
            if !(err <= report.max_rel_error) {
                report.max_rel_error = err;
                report.worst = Some((id.index(), j));
            }
        }
    }
    report
}

//! Central finite-difference oracle for tape gradients.

use super::{ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a gradient check.
///
/// The relative error of one coordinate is `|a - n| / max(|a|, |n|, 1e-3)`
/// where `a` is the analytic and `n` the numeric derivative. The floor keeps
/// coordinates with vanishing gradients from amplifying roundoff noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<String>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

const REL_FLOOR: f64 = 1e-3;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn scalar_output(tape: &Tape<'_>, y: Var) -> Result<f64> {
    if !tape.shape(y).is_empty() {
        return Err(Error::contract(format!(
            "gradient check needs a scalar-valued function, got shape {:?}",
            tape.shape(y)
        )));
    }
    Ok(tape.scalar_value(y))
}

/// Checks d f / d x at `x` against central differences with the given step.
pub fn check_gradients<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(&mut tape, xv)?;
    scalar_output(&tape, y)?;
    tape.backward(y)?;
    let analytic = tape
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |probe: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(probe);
        let y = f(&mut t, v)?;
        scalar_output(&t, y)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
        tolerance: tol,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let err = rel_error(a, numeric);
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some(format!("x[{i}]: analytic {a} numeric {numeric}"));
        }
    }
    Ok(report)
}

/// Checks the gradient of a scalar function of all parameters in `params`.
///
/// With `max_entries = Some(k)`, at most `k` evenly strided coordinates are
/// probed per tensor; `None` probes every coordinate.
pub fn check_param_gradients<F>(
    params: &mut ParamStore,
    f: F,
    step: f64,
    tol: f64,
    max_entries: Option<usize>,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>, &'a ParamStore) -> Result<Var>,
{
    check_owned_gradients(params, |p| p, |p| p, f, step, tol, max_entries)
}

/// Like [`check_param_gradients`] for a value that owns its parameter
/// store, such as a model; `store` and `store_mut` project to it.
pub fn check_owned_gradients<T, F>(
    owner: &mut T,
    store: fn(&T) -> &ParamStore,
    store_mut: fn(&mut T) -> &mut ParamStore,
    f: F,
    step: f64,
    tol: f64,
    max_entries: Option<usize>,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Tape<'a>, &'a T) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let grads = {
        let mut tape = Tape::new();
        let y = f(&mut tape, owner)?;
        scalar_output(&tape, y)?;
        tape.backward(y)?;
        tape.param_gradients()
    };
    let eval = |o: &T| -> Result<f64> {
        let mut t = Tape::new();
        let y = f(&mut t, o)?;
        scalar_output(&t, y)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
        tolerance: tol,
    };
    let ids: Vec<_> = store(owner).ids().collect();
    for id in ids {
        let n = store(owner).get(id).numel();
        let stride = match max_entries {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let analytic = grads.get(id).map_or(0.0, |g| g[i]);
            let orig = store(owner).get(id).data()[i];
            store_mut(owner).get_mut(id).data_mut()[i] = orig + step;
            let up = eval(owner)?;
            store_mut(owner).get_mut(id).data_mut()[i] = orig - step;
            let down = eval(owner)?;
            store_mut(owner).get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = rel_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(format!(
                    "{}[{i}]: analytic {analytic} numeric {numeric}",
                    store(owner).name(id)
                ));
            }
        }
    }
    Ok(report)
}

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor, Var};

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn scalar_output(out: Var<'_>) -> Result<f64> {
    out.value().item().map_err(|_| {
        Error::contract(format!(
            "grad_check needs a scalar function, got {:?}",
            out.shape()
        ))
    })
}

/// Maximum relative error between the tape gradient of `f` at `x` and a
/// central difference with step `eps`. `f` must be deterministic, so it
/// receives an evaluation tape.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = f(&tape, xv)?;
    scalar_output(out)?;
    let grads = tape.backward(out)?;
    let analytic = grads
        .wrt(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));

    let eval = |probe: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(probe);
        scalar_output(f(&tape, v)?)
    };
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// As [`grad_check`], over every scalar of every parameter in `store`.
pub fn grad_check_params<F>(store: &ParamStore, f: F, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let out = f(&tape, store)?;
    scalar_output(out)?;
    let grads = tape.backward(out)?;

    let mut probe = store.clone();
    let eval = |probe: &ParamStore| -> Result<f64> {
        let tape = Tape::new();
        scalar_output(f(&tape, probe)?)
    };
    let mut worst = 0.0f64;
    for id in store.ids() {
        let base = store.get(id).clone();
        for i in 0..base.len() {
            let analytic = grads.param(id).map_or(0.0, |g| g.data()[i]);
            let original = base.data()[i];
            probe.get_mut(id).data_mut()[i] = original + eps;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = original - eps;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = original;
            worst = worst.max(relative_error(analytic, (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

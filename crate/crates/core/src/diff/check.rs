use crate::diff::params::ParamStore;
use crate::diff::tape::{Tape, Var};
use crate::prelude::*;
use crate::Result;

/// Worst relative error between tape gradients and central differences.
///
/// `build` records the scalar loss on a fresh tape from the parameters it is
/// handed; it is called `2·P + 1` times for `P` scalar parameters. The
/// relative error of each entry uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(params: &ParamStore, h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut analytic = params.clone();
    analytic.clear_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, &analytic)?;
    tape.backward_into(loss, &mut analytic)?;

    let eval = |p: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = build(&mut t, p)?;
        Ok(t.scalar(l))
    };

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    for name in names {
        let grad = analytic.grad(&name).expect("populated by backward").clone();
        for i in 0..grad.len() {
            let orig = probe.get(&name)?.data()[i];
            probe.get_mut(&name)?.data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

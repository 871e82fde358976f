use super::params::ParamStore;
use super::tape::{Tape, Var};

/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding do not produce spurious failures.
pub const REL_ERR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape's gradients of the scalar built by `f` against central
/// differences with step `eps`. At most `max_per_tensor` evenly spaced
/// entries are probed per parameter.
pub fn grad_check<F>(params: &ParamStore<f64>, eps: f64, max_per_tensor: usize, f: F) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params);
    let analytic = tape.backward(loss).by_name(&tape);

    let eval = |p: &ParamStore<f64>| {
        let mut t = Tape::new();
        let l = f(&mut t, p);
        t.value(l).item()
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, checked: 0 };
    let mut probe = params.clone();
    for (name, g) in &analytic {
        let n = g.len();
        let stride = n.div_ceil(max_per_tensor.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = probe.get(name).unwrap().data[i];
            probe.get_mut(name).unwrap().data[i] = orig + eps;
            let up = eval(&probe);
            probe.get_mut(name).unwrap().data[i] = orig - eps;
            let down = eval(&probe);
            probe.get_mut(name).unwrap().data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let e = rel_err(g.data[i], numeric);
            report.checked += 1;
            if report.worst.is_none() || e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    report
}

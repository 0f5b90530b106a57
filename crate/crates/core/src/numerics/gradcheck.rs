use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::param::ParamSet;

/// Outcome of comparing tape gradients to central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// `name[index]` of the worst entry, empty when nothing was checked.
    pub worst_entry: String,
    /// Tape and central-difference values at the worst entry.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` for every trainable scalar entry.
///
/// Relative error per entry is `|analytic − numeric| / max(|analytic|,
/// |numeric|, 1e-12)`. Parameter values are restored before returning and
/// gradients are left zeroed.
pub fn grad_check<F>(f: F, params: &mut ParamSet<f64>, epsilon: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<NodeId>,
{
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "grad_check epsilon {epsilon} outside [1e-7, 1e-4]"
        )));
    }
    let eval = |params: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, params)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(Error::shape(
                "grad_check",
                format!("output {:?} is not scalar", v.shape()),
            ));
        }
        let x = v.data()[0];
        if !x.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(x)
    };

    params.zero_grad();
    {
        let mut g = Graph::new();
        let out = f(&mut g, params)?;
        g.backward(out, params)?;
    }
    let ids: Vec<_> = params.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_entry: String::new(),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries_checked: 0,
    };
    for id in ids {
        let n = params.get(id).value.len();
        for k in 0..n {
            let analytic = params.get(id).gradient.data()[k];
            if !analytic.is_finite() {
                return Err(Error::NonFinite(format!(
                    "analytic gradient {}[{k}]",
                    params.get(id).name
                )));
            }
            let original = params.get(id).value.data()[k];
            params.get_mut(id).value.data_mut()[k] = original + epsilon;
            let plus = eval(params);
            params.get_mut(id).value.data_mut()[k] = original - epsilon;
            let minus = eval(params);
            params.get_mut(id).value.data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * epsilon);
            let denom = analytic.abs().max(numeric.abs()).max(1e-12);
            let rel = (analytic - numeric).abs() / denom;
            report.entries_checked += 1;
            if rel >= report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_entry = format!("{}[{k}]", params.get(id).name);
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    params.zero_grad();
    Ok(report)
}

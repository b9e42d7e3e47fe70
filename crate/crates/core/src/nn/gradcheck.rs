use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

// Float methods come from libm unless std is linked into the build.
#[allow(unused_imports)]
use num_traits::Float;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compares tape gradients against central differences for every scalar of
/// every parameter the function reads. Relative error is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(store: &mut ParamStore, f: F, h: f64, floor: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss)?;
    let analytic: Vec<(String, Vec<f64>)> = tape
        .param_vars()
        .map(|(name, v)| (String::from(name), tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| alloc::vec![0.0; tape.value(v).len()])))
        .collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        Ok(t.scalar(l))
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0 };
    for (name, grad) in analytic {
        for (k, a) in grad.iter().enumerate() {
            let orig = store.value(&name)?.data()[k];
            store.value_mut(&name)?.data_mut()[k] = orig + h;
            let fp = eval(store)?;
            store.value_mut(&name)?.data_mut()[k] = orig - h;
            let fm = eval(store)?;
            store.value_mut(&name)?.data_mut()[k] = orig;
            let n = (fp - fm) / (2.0 * h);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = format!("{name}[{k}]");
            }
        }
    }
    Ok(report)
}

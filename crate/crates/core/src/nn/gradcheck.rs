//! Central finite-difference gradient checking.

use super::param::{ParamId, ParamStore};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Probes whose `±h` step changed the piecewise-linear region, where a
    /// central difference does not estimate the derivative.
    pub kink_crossings: usize,
}

/// Relative error with an absolute floor so near-zero gradients compare sanely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Compares `analytic` (gradients already accumulated in `store`) against
/// central differences of `loss` with step `h = rel_step·max(1, |θ|)`.
///
/// `loss` must be a deterministic function of the current parameter values.
/// Besides the value it returns a region signature (such as a ReLU pattern);
/// a probe whose signature differs from the unperturbed one counts as a kink
/// crossing. Use `()` when the loss is smooth.
/// When `ids` is `None` every scalar of every tensor is probed; otherwise
/// only the listed tensors.
///
/// `holder` is anything owning the parameters (a bare store or a model).
pub fn check<S, P, F>(
    holder: &mut S,
    ids: Option<&[ParamId]>,
    rel_step: f64,
    mut loss: F,
) -> GradCheck
where
    S: AsMut<ParamStore>,
    P: PartialEq,
    F: FnMut(&S) -> (f64, P),
{
    let (_, region) = loss(holder);
    let targets: Vec<ParamId> = match ids {
        Some(ids) => ids.to_vec(),
        None => (0..holder.as_mut().len()).map(ParamId).collect(),
    };
    let mut result = GradCheck {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        kink_crossings: 0,
    };
    for id in targets {
        let n = holder.as_mut().get(id).len();
        for i in 0..n {
            let analytic = holder.as_mut().get(id).grad()[i];
            let orig = holder.as_mut().get(id).values()[i];
            let h = rel_step * orig.abs().max(1.0);
            holder.as_mut().get_mut(id).values_mut()[i] = orig + h;
            let (up, up_region) = loss(holder);
            holder.as_mut().get_mut(id).values_mut()[i] = orig - h;
            let (down, down_region) = loss(holder);
            if up_region != region || down_region != region {
                result.kink_crossings += 1;
            }
            holder.as_mut().get_mut(id).values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic, numeric);
            result.checked += 1;
            if err > result.max_rel_error {
                result.max_rel_error = err;
                result.worst_param = holder.as_mut().get(id).name().to_string();
                result.worst_index = i;
            }
        }
    }
    result
}

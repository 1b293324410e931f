use super::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / (|numeric| + 1e-8)` over all entries.
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients against central finite differences.
///
/// `build` must be deterministic: it is called once with all of `params`
/// trainable and then twice per scalar entry with the entry perturbed by
/// `±eps`. Any randomness (dropout masks, noise) has to be frozen by the
/// caller.
pub fn grad_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    eps: f64,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Graph) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside (0, 1e-3]"
        )));
    }
    store.zero_grads(params);
    let mut graph = Graph::with_trainable(params);
    let loss = build(store, &mut graph)?;
    graph.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|&id| store.grad(id).data().to_vec())
        .collect();

    let mut eval = |store: &ParamStore, id: ParamId, index: usize| -> Result<f64> {
        let mut g = Graph::frozen();
        let node = build(store, &mut g).map_err(|e| match e {
            Error::NonFinite(_) => Error::GradCheckNonFinite {
                param: store.name(id).to_string(),
                index,
            },
            other => other,
        })?;
        let v = g.scalar(node);
        if !v.is_finite() {
            return Err(Error::GradCheckNonFinite {
                param: store.name(id).to_string(),
                index,
            });
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for (&id, grad) in params.iter().zip(&analytic) {
        for (index, &a) in grad.iter().enumerate() {
            let orig = store.value(id).data()[index];
            store.value_mut(id).data_mut()[index] = orig + eps;
            let plus = eval(store, id, index);
            store.value_mut(id).data_mut()[index] = orig - eps;
            let minus = eval(store, id, index);
            store.value_mut(id).data_mut()[index] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let rel = (a - numeric).abs() / (numeric.abs() + 1e-8);
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((store.name(id).to_string(), index));
            }
        }
    }
    Ok(report)
}

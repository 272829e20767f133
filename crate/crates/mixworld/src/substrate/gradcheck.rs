//! Central finite-difference gradient checking at 64-bit precision.

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Compare analytic gradients against central finite differences of
/// `loss_fn` over every scalar of every parameter in `store`. `analytic`
/// maps parameter names to gradient tensors (missing name = expected zero).
/// Returns the maximum relative error.
pub fn grad_check(
    store: &mut ParamStore<f64>,
    analytic: &BTreeMap<String, Tensor<f64>>,
    mut loss_fn: impl FnMut(&ParamStore<f64>) -> f64,
) -> f64 {
    // only parameters named in `analytic` are swept; others are treated as
    // intentionally outside the differentiated set (e.g. behind stop-gradients)
    let names: Vec<String> = analytic.keys().cloned().collect();
    let mut max_err: f64 = 0.0;
    for name in names {
        let n = store.value(&name).numel();
        for i in 0..n {
            let orig = store.value(&name).data()[i];
            let bump = |x: f64, store: &mut ParamStore<f64>| {
                let mut t = store.value(&name).clone();
                t.data_mut()[i] = x;
                store.set_value(&name, t);
            };
            bump(orig + FD_STEP, store);
            let up = loss_fn(store);
            bump(orig - FD_STEP, store);
            let down = loss_fn(store);
            bump(orig, store);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.get(&name).map_or(0.0, |g| g.data()[i]);
            let denom = a.abs().max(numeric.abs());
            let err = if denom < 1e-7 {
                // both effectively zero
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / denom.max(1.0)
            };
            max_err = max_err.max(err);
        }
    }
    max_err
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::graph::Graph;

    #[test]
    fn quadratic_is_near_exact() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::from_vec(vec![3], vec![0.3, -1.1, 2.0]));
        let mut g = Graph::new();
        let w = g.param("w", &store);
        let sq = g.square(w);
        let loss = g.sum(sq);
        let grads = g.backward(loss);
        let mut analytic = BTreeMap::new();
        analytic.insert("w".to_string(), g.param_grad(&grads, "w").unwrap().clone());
        let err = grad_check(&mut store, &analytic, |s| {
            s.value("w").data().iter().map(|x| x * x).sum()
        });
        assert!(err < 1e-8, "err {}", err);
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.insert("w", Tensor::scalar(1.5));
        let mut analytic = BTreeMap::new();
        analytic.insert("w".to_string(), Tensor::scalar(10.0)); // truth is 3.0
        let err = grad_check(&mut store, &analytic, |s| s.value("w").item() * 3.0);
        assert!(err > 0.5);
    }
}

//! Named parameter storage with accumulated gradients and Adam moments.

use std::collections::BTreeMap;

use anyhow::{bail, Result};

use super::tensor::{Scalar, Tensor};

struct Entry<F: Scalar> {
    value: Tensor<F>,
    grad: Tensor<F>,
    m: Tensor<F>,
    v: Tensor<F>,
}

/// Parameter store for one model component. Names are unique; gradient and
/// moment tensors always mirror the parameter shape. BTreeMap keeps update
/// order deterministic.
pub struct ParamStore<F: Scalar> {
    entries: BTreeMap<String, Entry<F>>,
    adam_t: u64,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
            adam_t: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<F>) {
        let shape = value.shape().to_vec();
        let prev = self.entries.insert(
            name.to_string(),
            Entry {
                value,
                grad: Tensor::zeros(&shape),
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
            },
        );
        assert!(prev.is_none(), "duplicate parameter {:?}", name);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn value(&self, name: &str) -> &Tensor<F> {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {:?}", name)).value
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<F>) {
        let e = self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {:?}", name));
        assert_eq!(e.value.shape(), value.shape());
        e.value = value;
    }

    pub fn grad(&self, name: &str) -> &Tensor<F> {
        &self.entries[name].grad
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor<F>) {
        let e = self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {:?}", name));
        assert_eq!(e.grad.shape(), g.shape(), "gradient shape mismatch for {:?}", name);
        e.grad.add_inplace(g);
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad = Tensor::zeros(e.grad.shape());
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter_values(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// Deep copy of parameter values only (no gradients, no moments).
    pub fn frozen_copy(&self) -> Self {
        let mut out = Self::new();
        for (k, e) in &self.entries {
            out.insert(k, e.value.clone());
        }
        out
    }

    /// Adam with bias correction, applied in place; gradients are zeroed.
    /// A non-finite gradient aborts with the offending parameter names.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
        let bad: Vec<&String> = self
            .entries
            .iter()
            .filter(|(_, e)| !e.grad.all_finite())
            .map(|(k, _)| k)
            .collect();
        if !bad.is_empty() {
            bail!("non-finite gradient in parameters {:?}", bad);
        }
        self.adam_t += 1;
        let t = self.adam_t as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        for e in self.entries.values_mut() {
            for i in 0..e.value.numel() {
                let g = e.grad.data()[i].to_f64();
                let m = beta1 * e.m.data()[i].to_f64() + (1.0 - beta1) * g;
                let v = beta2 * e.v.data()[i].to_f64() + (1.0 - beta2) * g * g;
                e.m.data_mut()[i] = F::from_f64(m);
                e.v.data_mut()[i] = F::from_f64(v);
                let update = lr * (m / bc1) / ((v / bc2).sqrt() + eps);
                let w = e.value.data()[i].to_f64() - update;
                e.value.data_mut()[i] = F::from_f64(w);
            }
            e.grad = Tensor::zeros(e.grad.shape());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut s: ParamStore<f64> = ParamStore::new();
        s.insert("w", Tensor::from_vec(vec![2], vec![1.0, -2.0]));
        s.adam_step(1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(s.value("w").data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_has_bias_corrected_magnitude() {
        let mut s: ParamStore<f64> = ParamStore::new();
        s.insert("w", Tensor::scalar(0.0));
        s.accumulate_grad("w", &Tensor::scalar(0.5));
        s.adam_step(1e-3, 0.9, 0.999, 1e-8).unwrap();
        let delta = s.value("w").item();
        // bias correction makes the first update ~ -lr * sign(g)
        assert!((delta + 1e-3).abs() < 1e-6, "delta {}", delta);
        // and gradients were zeroed
        assert_eq!(s.grad("w").item(), 0.0);
    }

    #[test]
    fn repeated_identical_grads_shrink_toward_lr() {
        let mut s: ParamStore<f64> = ParamStore::new();
        s.insert("w", Tensor::scalar(0.0));
        let mut prev = f64::INFINITY;
        let mut w_prev = 0.0;
        for _ in 0..5 {
            s.accumulate_grad("w", &Tensor::scalar(0.5));
            s.adam_step(1e-3, 0.9, 0.999, 1e-8).unwrap();
            let w = s.value("w").item();
            let delta = (w - w_prev).abs();
            assert!(delta <= prev + 1e-12);
            assert!(delta >= 1e-3 * 0.999);
            prev = delta;
            w_prev = w;
        }
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut s: ParamStore<f64> = ParamStore::new();
        s.insert("w", Tensor::scalar(0.0));
        s.accumulate_grad("w", &Tensor::scalar(f64::NAN));
        assert!(s.adam_step(1e-3, 0.9, 0.999, 1e-8).is_err());
    }

    #[test]
    #[should_panic]
    fn duplicate_name_panics() {
        let mut s: ParamStore<f64> = ParamStore::new();
        s.insert("w", Tensor::scalar(0.0));
        s.insert("w", Tensor::scalar(1.0));
    }
}

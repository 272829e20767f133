//! Splittable counter-based RNG.
//!
//! Streams are derived by hashing a label (component name, task id, step)
//! into the parent state, so the draw order of one module never perturbs
//! another. Same global seed + same label path = same stream.

use super::tensor::{Scalar, Tensor};

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF29CE484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001B3);
    }
    h
}

#[derive(Clone, Debug)]
pub struct RngStream {
    state: u64,
    // cached second Box-Muller draw
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            state: splitmix(seed ^ GOLDEN),
            spare: None,
        }
    }

    /// Child stream keyed by a string label; independent of the parent's position.
    pub fn derive(&self, label: &str) -> Self {
        Self {
            state: splitmix(self.state ^ fnv1a(label.as_bytes())),
            spare: None,
        }
    }

    /// Child stream keyed by an integer (task index, step counter, ...).
    pub fn derive_u64(&self, n: u64) -> Self {
        Self {
            state: splitmix(self.state ^ splitmix(n.wrapping_add(GOLDEN))),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        splitmix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn usize_below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        let u1 = (1.0 - self.uniform()).max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_tensor<F: Scalar>(&mut self, shape: &[usize]) -> Tensor<F> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| F::from_f64(self.normal())).collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    pub fn uniform_tensor<F: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<F> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| F::from_f64(self.uniform_range(lo, hi)))
            .collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.usize_below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic_per_label() {
        let root = RngStream::new(7);
        let mut a = root.derive("wm").derive_u64(3);
        let mut b = root.derive("wm").derive_u64(3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_labels_never_overlap_in_1e6_draws() {
        let root = RngStream::new(42);
        let mut a = root.derive("alpha");
        let mut b = root.derive("beta");
        let sa: HashSet<u64> = (0..1_000_000).map(|_| a.next_u64()).collect();
        let overlap = (0..1_000_000).filter(|_| sa.contains(&b.next_u64())).count();
        assert_eq!(overlap, 0);
    }

    #[test]
    fn normal_moments() {
        let mut r = RngStream::new(1).derive("normal-test");
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {}", mean);
        assert!((var - 1.0).abs() < 0.03, "var {}", var);
    }

    #[test]
    fn uniform_in_range() {
        let mut r = RngStream::new(9).derive("u");
        for _ in 0..1000 {
            let x = r.uniform_range(-1.0, 1.0);
            assert!((-1.0..1.0).contains(&x));
        }
    }
}

//! Diagonal Gaussian distributions, in plain-value and graph-node form.

use super::graph::{Graph, NodeId};
use super::rng::RngStream;
use super::tensor::{Scalar, Tensor};

/// Diagonal Gaussian over a tensor of values.
#[derive(Clone, Debug)]
pub struct DiagGaussian<F: Scalar> {
    pub mean: Tensor<F>,
    pub std: Tensor<F>,
}

impl<F: Scalar> DiagGaussian<F> {
    pub fn new(mean: Tensor<F>, std: Tensor<F>) -> Self {
        assert_eq!(mean.shape(), std.shape(), "mean/std shape mismatch");
        assert!(
            std.data().iter().all(|&s| s > F::zero()),
            "non-positive std"
        );
        Self { mean, std }
    }

    /// Reparameterized sample: mean + std * unit noise.
    pub fn sample(&self, rng: &mut RngStream) -> Tensor<F> {
        let noise: Tensor<F> = rng.normal_tensor(self.mean.shape());
        self.mean.add(&self.std.mul(&noise))
    }
}

/// Closed-form KL(q || p) for diagonal Gaussians, summed over dimensions:
/// sum log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2.
pub fn gaussian_kl<F: Scalar>(q: &DiagGaussian<F>, p: &DiagGaussian<F>) -> F {
    assert_eq!(q.mean.shape(), p.mean.shape(), "KL shape mismatch");
    let mut acc = 0.0;
    for i in 0..q.mean.numel() {
        let (mq, sq) = (q.mean.data()[i].to_f64(), q.std.data()[i].to_f64());
        let (mp, sp) = (p.mean.data()[i].to_f64(), p.std.data()[i].to_f64());
        acc += (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5;
    }
    F::from_f64(acc)
}

/// Graph-node Gaussian: mean and std are tape nodes, so sampling and KL stay
/// differentiable w.r.t. both.
#[derive(Clone, Copy, Debug)]
pub struct GaussNode {
    pub mean: NodeId,
    pub std: NodeId,
}

impl GaussNode {
    /// Reparameterized sample; the noise enters as a constant, so gradient
    /// flows to mean and std but never to the noise.
    pub fn sample<F: Scalar>(&self, g: &mut Graph<F>, rng: &mut RngStream) -> NodeId {
        let noise = rng.normal_tensor::<F>(g.value(self.mean).shape());
        let noise = g.constant(noise);
        let scaled = g.mul(self.std, noise);
        g.add(self.mean, scaled)
    }

    /// KL(q || p) summed over all elements, as a scalar node.
    pub fn kl_to<F: Scalar>(&self, g: &mut Graph<F>, p: &GaussNode) -> NodeId {
        let q = *self;
        let log_sp = g.ln(p.std);
        let log_sq = g.ln(q.std);
        let log_ratio = g.sub(log_sp, log_sq);
        let sq2 = g.square(q.std);
        let dmean = g.sub(q.mean, p.mean);
        let dmean2 = g.square(dmean);
        let num = g.add(sq2, dmean2);
        let sp2 = g.square(p.std);
        let two_sp2 = g.scale(sp2, F::from_f64(2.0));
        let frac = g.div(num, two_sp2);
        let sum_terms = g.add(log_ratio, frac);
        let shifted = g.add_scalar(sum_terms, F::from_f64(-0.5));
        g.sum(shifted)
    }

    /// Entropy summed over elements: sum log std + d/2 log(2 pi e).
    pub fn entropy<F: Scalar>(&self, g: &mut Graph<F>) -> NodeId {
        let d = g.value(self.std).numel() as f64;
        let log_s = g.ln(self.std);
        let s = g.sum(log_s);
        let c = 0.5 * d * (std::f64::consts::TAU * std::f64::consts::E).ln();
        g.add_scalar(s, F::from_f64(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1(mean: f64, std: f64) -> DiagGaussian<f64> {
        DiagGaussian::new(Tensor::scalar(mean), Tensor::scalar(std))
    }

    #[test]
    fn kl_identical_is_zero() {
        let q = g1(0.3, 1.2);
        assert!(gaussian_kl(&q, &q).abs() < 1e-12);
    }

    #[test]
    fn kl_unit_mean_shift() {
        // KL(N(0,1) || N(1,1)) = 1/2
        let kl = gaussian_kl(&g1(0.0, 1.0), &g1(1.0, 1.0));
        assert!((kl - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_std_two() {
        // KL(N(0,2) || N(0,1)) = 3/2 - ln 2
        let kl = gaussian_kl(&g1(0.0, 2.0), &g1(0.0, 1.0));
        assert!((kl - (1.5 - 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn graph_kl_matches_closed_form() {
        let q = DiagGaussian::new(
            Tensor::from_vec(vec![3], vec![0.1, -0.4, 2.0]),
            Tensor::from_vec(vec![3], vec![0.5, 1.5, 0.9]),
        );
        let p = DiagGaussian::new(
            Tensor::from_vec(vec![3], vec![1.0, 0.0, 1.5]),
            Tensor::from_vec(vec![3], vec![1.0, 0.7, 2.0]),
        );
        let expect = gaussian_kl(&q, &p);
        let mut g = Graph::new();
        let qn = GaussNode {
            mean: g.constant(q.mean.clone()),
            std: g.constant(q.std.clone()),
        };
        let pn = GaussNode {
            mean: g.constant(p.mean.clone()),
            std: g.constant(p.std.clone()),
        };
        let kl = qn.kl_to(&mut g, &pn);
        assert!((g.value(kl).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn degenerate_std_sample_is_mean() {
        let d = DiagGaussian::new(Tensor::scalar(0.7), Tensor::scalar(1e-12));
        let mut rng = RngStream::new(5).derive("s");
        let s = d.sample(&mut rng);
        assert!((s.item() - 0.7f64).abs() < 1e-9);
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let d = DiagGaussian::new(Tensor::zeros(&[100_000]), Tensor::full(&[100_000], 1.0f64));
        let mut rng = RngStream::new(11).derive("mc");
        let s = d.sample(&mut rng);
        let n = s.numel() as f64;
        let mean = s.sum() / n;
        let var = s.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.03);
        let mut rng2 = RngStream::new(11).derive("mc");
        let s2 = d.sample(&mut rng2);
        assert_eq!(s.data(), s2.data());
    }

    #[test]
    #[should_panic]
    fn nonpositive_std_rejected() {
        let _ = DiagGaussian::new(Tensor::scalar(0.0), Tensor::scalar(0.0f64));
    }
}

//! Task-label inference and test-time adaptation for an unlabeled episode.
//!
//! Inference scores every mixture component by filtering the first half of
//! the episode under that label, forecasting the second half open-loop, and
//! picking the component with the smallest pixel error. Adaptation fine-tunes
//! a copy of the model on the episode itself under the inferred label.

use crate::envs::Trajectory;
use crate::substrate::{RngStream, Scalar, Tensor};
use crate::worldmodel::WorldModel;
use anyhow::Result;

/// Sum of squared pixel errors between prediction and target frames.
fn frame_sse<F: Scalar>(pred: &[Tensor<F>], target: &[Tensor<F>]) -> f64 {
    assert_eq!(pred.len(), target.len());
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            p.data()
                .iter()
                .zip(t.data())
                .map(|(&a, &b)| {
                    let d = a.to_f64() - b.to_f64();
                    d * d
                })
                .sum::<f64>()
        })
        .sum()
}

/// Forecast error of the episode's second half under component `k`.
pub fn forecast_error<F: Scalar>(model: &WorldModel<F>, traj: &Trajectory<F>, k: usize) -> f64 {
    let split = traj.len() / 2;
    assert!(split >= 1 && split < traj.len(), "episode too short to split");
    let pred = model.rollout_forecast(&traj.obs[..split], &traj.actions, k, traj.len() - split);
    frame_sse(&pred, &traj.obs[split..])
}

/// Most plausible task label: argmin of [`forecast_error`] over all
/// components, ties resolved toward the smallest label.
pub fn infer_task<F: Scalar>(model: &WorldModel<F>, traj: &Trajectory<F>) -> usize {
    let mut best_k = 1;
    let mut best = f64::INFINITY;
    for k in 1..=model.cfg.num_tasks {
        let err = forecast_error(model, traj, k);
        if err < best {
            best = err;
            best_k = k;
        }
    }
    best_k
}

/// Fine-tune a copy of the model on the episode under label `k_hat` with a
/// few Adam steps on the world loss. The original model is untouched.
pub fn test_time_adapt<F: Scalar>(
    model: &WorldModel<F>,
    traj: &Trajectory<F>,
    k_hat: usize,
    steps: usize,
    lr: f64,
    alpha: f64,
    rng: &mut RngStream,
) -> Result<WorldModel<F>> {
    let mut adapted = model.frozen_copy();
    let mut episode = traj.clone();
    episode.k = k_hat;
    let batch = [episode];
    for _ in 0..steps {
        let mut g = crate::substrate::Graph::new();
        let loss = adapted.world_loss_graph(&mut g, &batch, alpha, rng);
        let grads = g.backward(loss.total);
        g.accumulate_param_grads(&grads, &mut adapted.store, |_| true);
        adapted.store.adam_step(lr, 0.9, 0.999, 1e-8)?;
    }
    Ok(adapted)
}

//! Predictive experience replay: instead of storing old trajectories, a
//! frozen snapshot of the previous agent regenerates them. The generator
//! dreams an opening frame, the policy (mixed with uniform exploration)
//! chooses actions, and the world model rolls the episode out in pixel
//! space, re-encoding each decoded frame so the latent stays consistent
//! with what a later learner would infer from the pixels.

use crate::behavior::Actor;
use crate::behavior::Critic;
use crate::envs::Trajectory;
use crate::generator::Generator;
use crate::substrate::{RngStream, Scalar};
use crate::worldmodel::{LatentState, WorldModel};
use std::collections::BTreeMap;

/// Probability of replacing the snapshot policy's action with Uniform(-1,1)^2.
pub const EPSILON_EXPLORE: f64 = 0.2;

/// Frozen previous-task agent used to regenerate experience.
pub struct AgentSnapshot<F: Scalar> {
    pub model: WorldModel<F>,
    pub generator: Generator<F>,
    pub actor: Actor<F>,
    pub critic: Critic<F>,
}

impl<F: Scalar> AgentSnapshot<F> {
    pub fn capture(
        model: &WorldModel<F>,
        generator: &Generator<F>,
        actor: &Actor<F>,
        critic: &Critic<F>,
    ) -> Self {
        AgentSnapshot {
            model: model.frozen_copy(),
            generator: generator.frozen_copy(),
            actor: actor.frozen_copy(),
            critic: critic.renamed_copy("vprev"),
        }
    }
}

/// A regenerated episode plus the posterior-mean latents that produced it,
/// kept so augmented rewards can be recomputed against the same states.
#[derive(Clone, Debug)]
pub struct ReplayedTrajectory<F: Scalar> {
    pub traj: Trajectory<F>,
    pub latents: Vec<LatentState<F>>,
    /// Steps whose action came from the uniform branch.
    pub explore_steps: usize,
}

/// Dream `n` episodes of task `k` from the snapshot. Episodes follow the
/// action-first layout: `actions[0]` is zero and `obs[0]` comes from the
/// generator; every later frame is decoded from the model prior.
pub fn replay_trajectories<F: Scalar>(
    snap: &AgentSnapshot<F>,
    k: usize,
    n: usize,
    horizon: usize,
    epsilon: f64,
    rng: &mut RngStream,
) -> Vec<ReplayedTrajectory<F>> {
    assert!(horizon >= 1);
    let model = &snap.model;
    (0..n)
        .map(|_| {
            let o0 = snap.generator.sample(k, rng).cast::<F>();
            let a0 = [0.0, 0.0];
            let init = model.initial_latent(1);
            let mut lat = model.posterior_mean_step(&[o0.clone()], &init, &[a0], &[k]);
            let mut obs = vec![o0];
            let mut actions = vec![a0];
            let mut rewards = vec![model.reward_values(&lat, &[k])[0]];
            let mut latents = vec![lat.clone()];
            let mut explore_steps = 0;
            for _ in 1..horizon {
                let a = if rng.uniform() < epsilon {
                    explore_steps += 1;
                    [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)]
                } else {
                    snap.actor.act(model, &lat, k, true, rng)
                };
                let (prior, carried) = model.prior(&lat, &[a], &[k]);
                let pred = LatentState { z: prior.mean.clone(), h: carried.h.clone() };
                let (frames, rews) = model.decode(&pred, &[k]);
                let frame = frames.into_iter().next().unwrap();
                // latents stay tied to pixels: re-encode the decoded frame
                lat = model.posterior_mean_step(&[frame.clone()], &lat, &[a], &[k]);
                obs.push(frame);
                actions.push(a);
                rewards.push(rews[0]);
                latents.push(lat.clone());
            }
            ReplayedTrajectory {
                traj: Trajectory { k, obs, actions, rewards },
                latents,
                explore_steps,
            }
        })
        .collect()
}

/// Action-shuffled companions for the augmented reward objective: actions at
/// steps >= 1 are globally permuted across the given episodes, and rewards
/// are recomputed by stepping the snapshot model's prior from the original
/// episodes' latents under the swapped actions. Observations are kept.
pub fn shuffle_augment<F: Scalar>(
    snap: &AgentSnapshot<F>,
    replayed: &[ReplayedTrajectory<F>],
    rng: &mut RngStream,
) -> Vec<Trajectory<F>> {
    let mut pool: Vec<[f64; 2]> = replayed
        .iter()
        .flat_map(|r| r.traj.actions[1..].iter().copied())
        .collect();
    rng.shuffle(&mut pool);
    let mut cursor = 0;
    replayed
        .iter()
        .map(|r| {
            let k = r.traj.k;
            let horizon = r.traj.len();
            let mut actions = vec![r.traj.actions[0]];
            let mut rewards = vec![r.traj.rewards[0]];
            for t in 1..horizon {
                let a = pool[cursor];
                cursor += 1;
                let (prior, carried) = snap.model.prior(&r.latents[t - 1], &[a], &[k]);
                let pred = LatentState { z: prior.mean.clone(), h: carried.h.clone() };
                actions.push(a);
                rewards.push(snap.model.reward_values(&pred, &[k])[0]);
            }
            Trajectory { k, obs: r.traj.obs.clone(), actions, rewards }
        })
        .collect()
}

/// Stratified batch over the current task's real episodes and one replay
/// pool per previous task: `batch` is split exactly evenly across the
/// `1 + |pools|` sources, the current task absorbing the remainder first.
pub fn mix_batch<F: Scalar>(
    real: &[Trajectory<F>],
    replay_pools: &BTreeMap<usize, Vec<Trajectory<F>>>,
    batch: usize,
    rng: &mut RngStream,
) -> Vec<Trajectory<F>> {
    assert!(!real.is_empty());
    let sources = 1 + replay_pools.len();
    let base = batch / sources;
    let rem = batch % sources;
    let mut out = Vec::with_capacity(batch);
    let mut draw = |pool: &[Trajectory<F>], n: usize, out: &mut Vec<Trajectory<F>>| {
        assert!(!pool.is_empty());
        for _ in 0..n {
            out.push(pool[rng.usize_below(pool.len())].clone());
        }
    };
    draw(real, base + rem, &mut out);
    for pool in replay_pools.values() {
        draw(pool, base, &mut out);
    }
    out
}

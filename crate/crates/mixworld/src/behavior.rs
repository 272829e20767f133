//! Behavior learning in imagination: a tanh-squashed Gaussian actor and a
//! scalar critic trained on latent rollouts of the world model, with
//! lambda-returns and an optional conservative min against the critic kept
//! from the previous task.
//!
//! Imagined rollouts never decode pixels; they run the recurrent core and
//! prior head only, so a behavior update touches `pi/*` and `v/*` parameters
//! exclusively while gradients still flow through the model dynamics.

use crate::nets::{dense, dense_elu, init_dense, split_gaussian};
use crate::substrate::{Graph, NodeId, ParamStore, RngStream, Scalar};
use crate::worldmodel::{LatentNodes, LatentState, WorldModel};
use anyhow::Result;

/// Pre-squash action means are bounded to (-MEAN_SCALE, MEAN_SCALE).
pub const MEAN_SCALE: f64 = 5.0;

/// L2 penalty on the raw mean-head output in the actor loss. Without it the
/// head grows until the bounding tanh saturates, the actor gradient vanishes,
/// and the policy locks onto a constant state- and task-independent action.
pub const MEAN_PENALTY: f64 = 1e-2;

/// Imagined rewards are clamped to [-REWARD_CLAMP_LO, REWARD_CLAMP_HI].
pub const REWARD_CLAMP_LO: f64 = 1.5;
pub const REWARD_CLAMP_HI: f64 = 1.1;

#[derive(Clone, Debug)]
pub struct BehaviorConfig {
    /// Imagination horizon L.
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub entropy_weight: f64,
    /// Imagined rollouts per update.
    pub batch: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    /// Action std floor for the pre-squash Gaussian.
    pub std_floor: f64,
    /// Bootstrap the final lambda-return with the value of one extra imagined
    /// state instead of the value of the last rewarded state.
    pub successor_bootstrap: bool,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

impl BehaviorConfig {
    pub fn desk() -> Self {
        BehaviorConfig {
            horizon: 10,
            // 0.99 makes the critic bootstrap dominate the 10-step lambda
            // targets; critic extrapolation error then steers the actor off the
            // model's reward gradient. 0.9 matches the desk imagination horizon.
            gamma: 0.9,
            lambda: 0.95,
            entropy_weight: 1e-3,
            batch: 16,
            actor_hidden: 64,
            critic_hidden: 64,
            std_floor: 0.1,
            successor_bootstrap: false,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
        }
    }

    pub fn tiny() -> Self {
        BehaviorConfig {
            horizon: 3,
            gamma: 0.9,
            lambda: 0.8,
            entropy_weight: 1e-3,
            batch: 2,
            actor_hidden: 6,
            critic_hidden: 6,
            std_floor: 0.1,
            successor_bootstrap: false,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
        }
    }
}

/// Tanh-squashed diagonal-Gaussian policy over actions in (-1, 1)^2.
pub struct Actor<F: Scalar> {
    pub store: ParamStore<F>,
    pub action_dim: usize,
    pub std_floor: f64,
}

impl<F: Scalar> Actor<F> {
    pub fn new(input_dim: usize, action_dim: usize, cfg: &BehaviorConfig, rng: &RngStream) -> Self {
        let r = rng.derive("actor");
        let mut store = ParamStore::new();
        init_dense(&mut store, "pi/l0", input_dim, cfg.actor_hidden, &r);
        init_dense(&mut store, "pi/l1", cfg.actor_hidden, 2 * action_dim, &r);
        Actor { store, action_dim, std_floor: cfg.std_floor }
    }

    pub fn frozen_copy(&self) -> Self {
        Actor {
            store: self.store.frozen_copy(),
            action_dim: self.action_dim,
            std_floor: self.std_floor,
        }
    }

    /// Pre-squash Gaussian over actions given latent and task embedding.
    pub fn dist(
        &self,
        g: &mut Graph<F>,
        lat: LatentNodes,
        emb: NodeId,
    ) -> crate::substrate::GaussNode {
        self.dist_raw(g, lat, emb).0
    }

    /// As `dist`, also returning the raw (unbounded) mean-head output so the
    /// actor loss can keep it inside the responsive zone of the bounding tanh.
    pub fn dist_raw(
        &self,
        g: &mut Graph<F>,
        lat: LatentNodes,
        emb: NodeId,
    ) -> (crate::substrate::GaussNode, NodeId) {
        let x = g.concat_cols(&[lat.z, lat.h, emb]);
        let h = dense_elu(g, &self.store, "pi/l0", x);
        let out = dense(g, &self.store, "pi/l1", h);
        let raw = split_gaussian(g, out, self.action_dim, self.std_floor);
        // bound the pre-squash mean (Dreamer's 5 tanh(m/5)) so a few bad
        // updates cannot push the policy into a zero-gradient tanh plateau
        let scaled = g.scale(raw.mean, F::from_f64(1.0 / MEAN_SCALE));
        let squashed = g.tanh(scaled);
        let mean = g.scale(squashed, F::from_f64(MEAN_SCALE));
        (crate::substrate::GaussNode { mean, std: raw.std }, raw.mean)
    }

    /// Environment-facing action for a single latent; samples when `explore`.
    pub fn act(
        &self,
        model: &WorldModel<F>,
        lat: &LatentState<F>,
        k: usize,
        explore: bool,
        rng: &mut RngStream,
    ) -> [f64; 2] {
        assert_eq!(self.action_dim, 2);
        let mut g = Graph::new();
        let emb = model.embed_node(&mut g, &[k]);
        let nodes = LatentNodes { z: g.constant(lat.z.clone()), h: g.constant(lat.h.clone()) };
        let dist = self.dist(&mut g, nodes, emb);
        let pre = if explore { dist.sample(&mut g, rng) } else { dist.mean };
        let a = g.tanh(pre);
        let v = g.value(a);
        [v.data()[0].to_f64(), v.data()[1].to_f64()]
    }
}

/// Scalar state-value head; `prefix` keeps a frozen snapshot's parameters
/// distinct from the live critic inside one graph.
pub struct Critic<F: Scalar> {
    pub store: ParamStore<F>,
    pub prefix: String,
}

impl<F: Scalar> Critic<F> {
    pub fn new(input_dim: usize, cfg: &BehaviorConfig, rng: &RngStream) -> Self {
        let r = rng.derive("critic");
        let mut store = ParamStore::new();
        init_dense(&mut store, "v/l0", input_dim, cfg.critic_hidden, &r);
        init_dense(&mut store, "v/l1", cfg.critic_hidden, 1, &r);
        Critic { store, prefix: "v".to_string() }
    }

    /// Frozen copy whose parameters live under `new_prefix/` instead of `v/`.
    pub fn renamed_copy(&self, new_prefix: &str) -> Self {
        let mut store = ParamStore::new();
        for (name, t) in self.store.iter_values() {
            let tail = name.strip_prefix(&self.prefix).expect("critic param outside prefix");
            store.insert(&format!("{}{}", new_prefix, tail), t.clone());
        }
        Critic { store, prefix: new_prefix.to_string() }
    }

    pub fn value_node(&self, g: &mut Graph<F>, lat: LatentNodes, emb: NodeId) -> NodeId {
        let x = g.concat_cols(&[lat.z, lat.h, emb]);
        let h = dense_elu(g, &self.store, &format!("{}/l0", self.prefix), x);
        dense(g, &self.store, &format!("{}/l1", self.prefix), h)
    }

    /// Plain value of a single latent state.
    pub fn value(&self, model: &WorldModel<F>, lat: &LatentState<F>, k: usize) -> f64 {
        let mut g = Graph::new();
        let emb = model.embed_node(&mut g, &[k]);
        let nodes = LatentNodes { z: g.constant(lat.z.clone()), h: g.constant(lat.h.clone()) };
        let v = self.value_node(&mut g, nodes, emb);
        g.value(v).item().to_f64()
    }
}

/// One imagined batch rollout; `states[t]` is the latent after action `t`,
/// `rewards[t]` its predicted reward, all nodes batched `[B, .]`.
pub struct ImaginedRollout {
    pub states: Vec<LatentNodes>,
    pub rewards: Vec<NodeId>,
    pub entropies: Vec<NodeId>,
    /// Per-step mean of the squared raw mean-head output.
    pub mean_sq: Vec<NodeId>,
    pub emb: NodeId,
}

/// Roll the actor through the model prior for `horizon` steps starting from
/// detached latents. Gradients flow into actor parameters via reparameterized
/// action and prior samples.
/// Elementwise clamp of `x` to [lo, hi] built from min ops.
fn clamp_node<F: Scalar>(g: &mut Graph<F>, x: NodeId, lo: f64, hi: f64) -> NodeId {
    let shape = g.value(x).shape().to_vec();
    let hi_t = g.constant(crate::substrate::Tensor::full(&shape, F::from_f64(hi)));
    let neg_lo = g.constant(crate::substrate::Tensor::full(&shape, F::from_f64(-lo)));
    let capped = g.minimum(x, hi_t);
    let neg = g.neg(capped);
    let floored = g.minimum(neg, neg_lo);
    g.neg(floored)
}

pub fn imagine<F: Scalar>(
    g: &mut Graph<F>,
    model: &WorldModel<F>,
    actor: &Actor<F>,
    start: &LatentState<F>,
    ks: &[usize],
    horizon: usize,
    rng: &mut RngStream,
) -> ImaginedRollout {
    assert_eq!(start.batch(), ks.len());
    let emb = model.embed_node(g, ks);
    let mut lat = LatentNodes { z: g.constant(start.z.clone()), h: g.constant(start.h.clone()) };
    let mut states = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut entropies = Vec::with_capacity(horizon);
    let mut mean_sq = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (dist, raw_mean) = actor.dist_raw(g, lat, emb);
        let raw2 = g.square(raw_mean);
        mean_sq.push(g.mean(raw2));
        let pre = dist.sample(g, rng);
        let a = g.tanh(pre);
        entropies.push(dist.entropy(g));
        let h2 = model.recurrent(g, lat, a, emb);
        let prior = model.prior_head(g, h2, emb);
        let z2 = prior.sample(g, rng);
        lat = LatentNodes { z: z2, h: h2 };
        states.push(lat);
        // The reward head extrapolates badly on off-distribution imagined
        // latents; unbounded predictions blow up the critic targets. Clamp to
        // the known range of the dense distance reward plus goal bonus.
        let raw = model.reward_node(g, lat, emb);
        rewards.push(clamp_node(g, raw, -REWARD_CLAMP_LO, REWARD_CLAMP_HI));
    }
    ImaginedRollout { states, rewards, entropies, mean_sq, emb }
}

/// Lambda-returns by backward recursion. `values[t]` is the bootstrap value
/// paired with `rewards[t]`; the caller decides whether `values[L-1]` is the
/// value of the last rewarded state or of a successor state.
///
/// `V_t = r_t + gamma * ((1 - lambda) * values[t] + lambda * V_{t+1})`,
/// `V_{L-1} = r_{L-1} + gamma * values[L-1]`.
pub fn lambda_returns_f64(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    let l = rewards.len();
    assert!(l > 0);
    let mut out = vec![0.0; l];
    out[l - 1] = rewards[l - 1] + gamma * values[l - 1];
    for t in (0..l - 1).rev() {
        out[t] = rewards[t] + gamma * ((1.0 - lambda) * values[t] + lambda * out[t + 1]);
    }
    out
}

/// In-graph twin of [`lambda_returns_f64`] on batched `[B, 1]` nodes.
pub fn lambda_returns_nodes<F: Scalar>(
    g: &mut Graph<F>,
    rewards: &[NodeId],
    values: &[NodeId],
    gamma: f64,
    lambda: f64,
) -> Vec<NodeId> {
    assert_eq!(rewards.len(), values.len());
    let l = rewards.len();
    assert!(l > 0);
    let gam = F::from_f64(gamma);
    let mut out = vec![NodeId::default(); l];
    let bv = g.scale(values[l - 1], gam);
    out[l - 1] = g.add(rewards[l - 1], bv);
    for t in (0..l - 1).rev() {
        let vw = g.scale(values[t], F::from_f64(gamma * (1.0 - lambda)));
        let nw = g.scale(out[t + 1], F::from_f64(gamma * lambda));
        let boot = g.add(vw, nw);
        out[t] = g.add(rewards[t], boot);
    }
    out
}

/// Element-wise conservative targets `min(V, Vtilde)`; on ties the gradient
/// routes to the retained-critic branch.
pub fn conservative_targets<F: Scalar>(
    g: &mut Graph<F>,
    v: &[NodeId],
    vtilde: &[NodeId],
) -> Vec<NodeId> {
    assert_eq!(v.len(), vtilde.len());
    v.iter().zip(vtilde).map(|(&a, &b)| g.minimum(a, b)).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct BehaviorStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub mean_target: f64,
    /// Mean amount the conservative min cut off the fresh lambda-returns.
    pub mean_overestimate: f64,
}

/// One joint actor / critic update from a batch of start latents.
///
/// The actor maximizes (conservative) lambda-returns through the model
/// dynamics plus an entropy bonus; the critic regresses to stopped targets on
/// detached latents. Only `pi/*` and `v/*` parameters move.
pub fn actor_critic_update<F: Scalar>(
    model: &WorldModel<F>,
    actor: &mut Actor<F>,
    critic: &mut Critic<F>,
    prev_critic: Option<&Critic<F>>,
    start: &LatentState<F>,
    ks: &[usize],
    replayed: Option<&[bool]>,
    cfg: &BehaviorConfig,
    rng: &mut RngStream,
) -> Result<BehaviorStats> {
    let mut g = Graph::new();
    let extra = usize::from(cfg.successor_bootstrap);
    let roll = imagine(&mut g, model, actor, start, ks, cfg.horizon + extra, rng);
    let l = cfg.horizon;
    let rewards = &roll.rewards[..l];
    // values[t] bootstraps rewards[t]: successor state when available,
    // otherwise the last rewarded state itself
    // Bootstrap values are clamped to the feasible return range implied by
    // the reward clamp; without this the actor hunts down the critic's
    // optimistic extrapolations and the bootstrap runs away.
    let vlo = -REWARD_CLAMP_LO / (1.0 - cfg.gamma).max(1e-2);
    let vhi = REWARD_CLAMP_HI / (1.0 - cfg.gamma).max(1e-2);
    let mut values = Vec::with_capacity(l);
    for t in 0..l {
        let idx = if t + 1 < roll.states.len() { t + 1 } else { t };
        let v = critic.value_node(&mut g, roll.states[idx], roll.emb);
        values.push(clamp_node(&mut g, v, vlo, vhi));
    }
    let fresh = lambda_returns_nodes(&mut g, rewards, &values, cfg.gamma, cfg.lambda);
    let (targets, overest) = match prev_critic {
        Some(pc) => {
            assert_ne!(pc.prefix, critic.prefix, "previous critic must be renamed");
            let vt: Vec<NodeId> = (0..l)
                .map(|t| {
                    let idx = if t + 1 < roll.states.len() { t + 1 } else { t };
                    let v = pc.value_node(&mut g, roll.states[idx], roll.emb);
                    clamp_node(&mut g, v, vlo, vhi)
                })
                .collect();
            let tilde = lambda_returns_nodes(&mut g, rewards, &vt, cfg.gamma, cfg.lambda);
            let cons = conservative_targets(&mut g, &fresh, &tilde);
            // the clamp applies only to replayed rows; current-task rows keep
            // the fresh target so new-task learning is never suppressed
            let cons: Vec<NodeId> = match replayed {
                Some(mask) => {
                    assert_eq!(mask.len(), ks.len());
                    let shape = g.value(cons[0]).shape().to_vec();
                    let per_row: Vec<F> =
                        mask.iter().map(|&m| F::from_f64(if m { 1.0 } else { 0.0 })).collect();
                    let numel: usize = shape.iter().product();
                    let reps = numel / mask.len();
                    let data: Vec<F> =
                        per_row.iter().flat_map(|&v| std::iter::repeat(v).take(reps)).collect();
                    let m = g.constant(crate::substrate::Tensor::from_vec(shape.clone(), data.clone()));
                    let inv_data: Vec<F> = data.iter().map(|&v| F::from_f64(1.0) - v).collect();
                    let inv = g.constant(crate::substrate::Tensor::from_vec(shape, inv_data));
                    cons.iter()
                        .zip(&fresh)
                        .map(|(&c, &f)| {
                            let a = g.mul(m, c);
                            let b = g.mul(inv, f);
                            g.add(a, b)
                        })
                        .collect()
                }
                None => cons,
            };
            let mut cut = 0.0;
            for (f, c) in fresh.iter().zip(&cons) {
                let fv = g.value(*f).clone();
                let cv = g.value(*c).clone();
                cut += fv.sub(&cv).sum().to_f64() / fv.numel() as f64;
            }
            (cons, cut / l as f64)
        }
        None => (fresh.clone(), 0.0),
    };

    // actor objective: maximize mean target plus entropy bonus
    let mut mean_terms = Vec::with_capacity(l);
    for &t in &targets {
        mean_terms.push(g.mean(t));
    }
    let mut ent_terms = Vec::with_capacity(l);
    for &e in &roll.entropies[..l] {
        mean_terms_push_scaled(&mut g, &mut ent_terms, e, start.batch());
    }
    let target_mean = mean_of(&mut g, &mean_terms);
    let ent_mean = mean_of(&mut g, &ent_terms);
    let ent_w = g.scale(ent_mean, F::from_f64(cfg.entropy_weight));
    let gain = g.add(target_mean, ent_w);
    let neg_gain = g.neg(gain);
    let msq = mean_of(&mut g, &roll.mean_sq[..l].to_vec());
    let pen = g.scale(msq, F::from_f64(MEAN_PENALTY));
    let actor_loss = g.add(neg_gain, pen);

    // critic regression on detached latents and stopped targets
    let mut crit_terms = Vec::with_capacity(l);
    for t in 0..l {
        let z = g.stop_gradient(roll.states[t].z);
        let h = g.stop_gradient(roll.states[t].h);
        let emb_sg = g.stop_gradient(roll.emb);
        let v = critic.value_node(&mut g, LatentNodes { z, h }, emb_sg);
        let tgt = g.stop_gradient(targets[t]);
        let d = g.sub(v, tgt);
        let sq = g.square(d);
        let m = g.mean(sq);
        crit_terms.push(g.scale(m, F::from_f64(0.5)));
    }
    let critic_loss = mean_of(&mut g, &crit_terms);

    let a_grads = g.backward(actor_loss);
    g.accumulate_param_grads(&a_grads, &mut actor.store, |n| n.starts_with("pi/"));
    actor.store.adam_step(cfg.actor_lr, 0.9, 0.999, 1e-8)?;
    let c_grads = g.backward(critic_loss);
    g.accumulate_param_grads(&c_grads, &mut critic.store, |n| n.starts_with("v/"));
    critic.store.adam_step(cfg.critic_lr, 0.9, 0.999, 1e-8)?;

    Ok(BehaviorStats {
        actor_loss: g.value(actor_loss).item().to_f64(),
        critic_loss: g.value(critic_loss).item().to_f64(),
        mean_target: g.value(target_mean).item().to_f64(),
        mean_overestimate: overest,
    })
}

fn mean_of<F: Scalar>(g: &mut Graph<F>, terms: &[NodeId]) -> NodeId {
    assert!(!terms.is_empty());
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    g.scale(acc, F::from_f64(1.0 / terms.len() as f64))
}

fn mean_terms_push_scaled<F: Scalar>(
    g: &mut Graph<F>,
    out: &mut Vec<NodeId>,
    ent_sum: NodeId,
    batch: usize,
) {
    out.push(g.scale(ent_sum, F::from_f64(1.0 / batch as f64)));
}

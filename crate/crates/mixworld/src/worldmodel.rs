//! Task-conditioned mixture world model over an RSSM-lite latent.
//!
//! Four heads share a recurrent core: a representation (posterior) module,
//! a transition (prior) module, an observation decoder, and a reward
//! predictor. Every head is conditioned on a learned per-task embedding, so
//! the latent priors form a K-component Gaussian mixture indexed by the
//! task label. With `mixture` disabled the embedding table collapses to a
//! single shared row and the model reduces to a plain single-task learner.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::envs::Trajectory;
use crate::nets;
use crate::substrate::{
    DiagGaussian, GaussNode, Graph, NodeId, ParamStore, RngStream, Scalar, Tensor,
};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub obs_pixels: usize,
    pub z_dim: usize,
    pub h_dim: usize,
    pub embed_dim: usize,
    pub enc_hidden: [usize; 2],
    pub head_hidden: usize,
    pub num_tasks: usize,
    pub action_dim: usize,
    pub std_floor: f64,
    /// Task-mixture conditioning; disabled for the no-mixture baseline.
    pub mixture: bool,
}

impl ModelConfig {
    /// Desk-scale defaults: 16x16 observations, z 8, h 32.
    pub fn desk(num_tasks: usize) -> Self {
        Self {
            obs_pixels: crate::envs::OBS_PIXELS,
            z_dim: 8,
            h_dim: 32,
            embed_dim: 4,
            enc_hidden: [256, 128],
            head_hidden: 128,
            num_tasks,
            action_dim: 2,
            std_floor: 0.1,
            mixture: true,
        }
    }

    /// Tiny sizes for 64-bit finite-difference checks.
    pub fn tiny(num_tasks: usize) -> Self {
        Self {
            obs_pixels: 16,
            z_dim: 3,
            h_dim: 6,
            embed_dim: 2,
            enc_hidden: [12, 10],
            head_hidden: 8,
            num_tasks,
            action_dim: 2,
            std_floor: 0.1,
            mixture: true,
        }
    }

    /// Rows of the embedding table.
    pub fn num_components(&self) -> usize {
        if self.mixture {
            self.num_tasks
        } else {
            1
        }
    }

    /// Map a 1-based task label onto an embedding row.
    pub fn component(&self, k: usize) -> usize {
        assert!((1..=self.num_tasks).contains(&k), "task label {} out of 1..={}", k, self.num_tasks);
        if self.mixture {
            k - 1
        } else {
            0
        }
    }
}

/// Stochastic sample plus deterministic recurrent state, batched `[B, d]`.
#[derive(Clone, Debug)]
pub struct LatentState<F: Scalar> {
    pub z: Tensor<F>,
    pub h: Tensor<F>,
}

impl<F: Scalar> LatentState<F> {
    pub fn batch(&self) -> usize {
        self.z.rows()
    }

    /// Row `i` as a batch-1 latent.
    pub fn row(&self, i: usize) -> LatentState<F> {
        LatentState {
            z: Tensor::from_vec(vec![1, self.z.cols()], self.z.row(i).to_vec()),
            h: Tensor::from_vec(vec![1, self.h.cols()], self.h.row(i).to_vec()),
        }
    }
}

/// In-graph latent.
#[derive(Clone, Copy, Debug)]
pub struct LatentNodes {
    pub z: NodeId,
    pub h: NodeId,
}

pub struct WorldModel<F: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<F>,
    decode_calls: AtomicU64,
}

/// Parts of the world-model objective, as graph nodes.
pub struct WorldLoss {
    pub total: NodeId,
    pub recon: NodeId,
    pub reward: NodeId,
    pub kl: NodeId,
}

impl<F: Scalar> WorldModel<F> {
    /// Wrap an existing parameter store (checkpoint restore, grad checks).
    pub fn with_store(cfg: ModelConfig, store: ParamStore<F>) -> Self {
        Self {
            cfg,
            store,
            decode_calls: AtomicU64::new(0),
        }
    }

    pub fn new(cfg: ModelConfig, rng: &RngStream) -> Self {
        let rng = rng.derive("wm-init");
        let mut store = ParamStore::new();
        let emb_rows = cfg.num_components();
        store.insert(
            "wm/embed",
            rng.derive("embed")
                .normal_tensor::<F>(&[emb_rows, cfg.embed_dim])
                .scale(F::from_f64(0.5)),
        );
        let [e0, e1] = cfg.enc_hidden;
        nets::init_dense(&mut store, "wm/enc/l0", cfg.obs_pixels, e0, &rng);
        nets::init_dense(&mut store, "wm/enc/l1", e0, e1, &rng);
        let gru_in = cfg.z_dim + cfg.action_dim + cfg.embed_dim;
        nets::init_gru(&mut store, "wm/gru", gru_in, cfg.h_dim, &rng);
        let prior_in = cfg.h_dim + cfg.embed_dim;
        nets::init_dense(&mut store, "wm/prior/l0", prior_in, cfg.head_hidden, &rng);
        nets::init_dense(&mut store, "wm/prior/l1", cfg.head_hidden, 2 * cfg.z_dim, &rng);
        let post_in = cfg.h_dim + e1 + cfg.embed_dim;
        nets::init_dense(&mut store, "wm/post/l0", post_in, cfg.head_hidden, &rng);
        nets::init_dense(&mut store, "wm/post/l1", cfg.head_hidden, 2 * cfg.z_dim, &rng);
        let dec_in = cfg.z_dim + cfg.h_dim + cfg.embed_dim;
        nets::init_dense(&mut store, "wm/obs/l0", dec_in, cfg.head_hidden, &rng);
        nets::init_dense(&mut store, "wm/obs/l1", cfg.head_hidden, cfg.head_hidden, &rng);
        nets::init_dense(&mut store, "wm/obs/l2", cfg.head_hidden, cfg.obs_pixels, &rng);
        nets::init_dense(&mut store, "wm/rew/l0", dec_in, cfg.head_hidden, &rng);
        nets::init_dense(&mut store, "wm/rew/l1", cfg.head_hidden, cfg.head_hidden, &rng);
        nets::init_dense(&mut store, "wm/rew/l2", cfg.head_hidden, 1, &rng);
        Self {
            cfg,
            store,
            decode_calls: AtomicU64::new(0),
        }
    }

    /// Deep copy of parameters only; optimizer state is dropped.
    pub fn frozen_copy(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            store: self.store.frozen_copy(),
            decode_calls: AtomicU64::new(0),
        }
    }

    pub fn decode_call_count(&self) -> u64 {
        self.decode_calls.load(Ordering::Relaxed)
    }

    pub fn initial_latent(&self, batch: usize) -> LatentState<F> {
        LatentState {
            z: Tensor::zeros(&[batch, self.cfg.z_dim]),
            h: Tensor::zeros(&[batch, self.cfg.h_dim]),
        }
    }

    // ---- graph-level pieces ----

    pub fn embed_node(&self, g: &mut Graph<F>, ks: &[usize]) -> NodeId {
        let rows: Vec<usize> = ks.iter().map(|&k| self.cfg.component(k)).collect();
        let table = g.param("wm/embed", &self.store);
        g.select_rows(table, &rows)
    }

    pub fn encode_obs(&self, g: &mut Graph<F>, obs: NodeId) -> NodeId {
        let h0 = nets::dense_elu(g, &self.store, "wm/enc/l0", obs);
        nets::dense_elu(g, &self.store, "wm/enc/l1", h0)
    }

    /// Shared recurrent core: `h' = GRU(h, [z, a, embed])`.
    pub fn recurrent(&self, g: &mut Graph<F>, prev: LatentNodes, a: NodeId, emb: NodeId) -> NodeId {
        let x = g.concat_cols(&[prev.z, a, emb]);
        nets::gru_step(g, &self.store, "wm/gru", x, prev.h)
    }

    pub fn prior_head(&self, g: &mut Graph<F>, h: NodeId, emb: NodeId) -> GaussNode {
        let x = g.concat_cols(&[h, emb]);
        let l0 = nets::dense_elu(g, &self.store, "wm/prior/l0", x);
        let out = nets::dense(g, &self.store, "wm/prior/l1", l0);
        nets::split_gaussian(g, out, self.cfg.z_dim, self.cfg.std_floor)
    }

    pub fn posterior_head(
        &self,
        g: &mut Graph<F>,
        h: NodeId,
        obs_code: NodeId,
        emb: NodeId,
    ) -> GaussNode {
        let x = g.concat_cols(&[h, obs_code, emb]);
        let l0 = nets::dense_elu(g, &self.store, "wm/post/l0", x);
        let out = nets::dense(g, &self.store, "wm/post/l1", l0);
        nets::split_gaussian(g, out, self.cfg.z_dim, self.cfg.std_floor)
    }

    pub fn decode_obs_node(&self, g: &mut Graph<F>, lat: LatentNodes, emb: NodeId) -> NodeId {
        self.decode_calls.fetch_add(1, Ordering::Relaxed);
        let x = g.concat_cols(&[lat.z, lat.h, emb]);
        let l0 = nets::dense_elu(g, &self.store, "wm/obs/l0", x);
        let l1 = nets::dense_elu(g, &self.store, "wm/obs/l1", l0);
        let out = nets::dense(g, &self.store, "wm/obs/l2", l1);
        g.sigmoid(out)
    }

    pub fn reward_node(&self, g: &mut Graph<F>, lat: LatentNodes, emb: NodeId) -> NodeId {
        let x = g.concat_cols(&[lat.z, lat.h, emb]);
        let l0 = nets::dense_elu(g, &self.store, "wm/rew/l0", x);
        let l1 = nets::dense_elu(g, &self.store, "wm/rew/l1", l0);
        nets::dense(g, &self.store, "wm/rew/l2", l1)
    }

    // ---- plain-value single-step API ----

    /// Transition module: updated recurrent state and the prior over z.
    /// The returned latent keeps the previous stochastic sample.
    pub fn prior(
        &self,
        prev: &LatentState<F>,
        a_prev: &[[f64; 2]],
        ks: &[usize],
    ) -> (DiagGaussian<F>, LatentState<F>) {
        let mut g = Graph::new();
        let (prior, _, h) = self.prior_nodes(&mut g, prev, a_prev, ks);
        (
            DiagGaussian::new(g.value(prior.mean).clone(), g.value(prior.std).clone()),
            LatentState {
                z: prev.z.clone(),
                h: g.value(h).clone(),
            },
        )
    }

    fn prior_nodes(
        &self,
        g: &mut Graph<F>,
        prev: &LatentState<F>,
        a_prev: &[[f64; 2]],
        ks: &[usize],
    ) -> (GaussNode, NodeId, NodeId) {
        let emb = self.embed_node(g, ks);
        let z = g.constant(prev.z.clone());
        let h = g.constant(prev.h.clone());
        let a = g.constant(actions_tensor(a_prev));
        let h2 = self.recurrent(g, LatentNodes { z, h }, a, emb);
        let prior = self.prior_head(g, h2, emb);
        (prior, emb, h2)
    }

    /// Representation module: posterior distribution and a reparameterized
    /// sampled latent. Shares the recurrent update with the prior.
    pub fn posterior(
        &self,
        obs: &[Tensor<F>],
        prev: &LatentState<F>,
        a_prev: &[[f64; 2]],
        ks: &[usize],
        rng: &mut RngStream,
    ) -> (DiagGaussian<F>, LatentState<F>) {
        let mut g = Graph::new();
        let (_, emb, h2) = self.prior_nodes(&mut g, prev, a_prev, ks);
        let obs_node = g.constant(obs_matrix(obs, self.cfg.obs_pixels));
        let code = self.encode_obs(&mut g, obs_node);
        let q = self.posterior_head(&mut g, h2, code, emb);
        let dist = DiagGaussian::new(g.value(q.mean).clone(), g.value(q.std).clone());
        let z = dist.sample(rng);
        (
            dist,
            LatentState {
                z,
                h: g.value(h2).clone(),
            },
        )
    }

    /// Posterior update using the distribution mean (deterministic).
    pub fn posterior_mean_step(
        &self,
        obs: &[Tensor<F>],
        prev: &LatentState<F>,
        a_prev: &[[f64; 2]],
        ks: &[usize],
    ) -> LatentState<F> {
        let mut g = Graph::new();
        let (_, emb, h2) = self.prior_nodes(&mut g, prev, a_prev, ks);
        let obs_node = g.constant(obs_matrix(obs, self.cfg.obs_pixels));
        let code = self.encode_obs(&mut g, obs_node);
        let q = self.posterior_head(&mut g, h2, code, emb);
        LatentState {
            z: g.value(q.mean).clone(),
            h: g.value(h2).clone(),
        }
    }

    /// Observation and reward heads on a batched latent.
    pub fn decode(&self, lat: &LatentState<F>, ks: &[usize]) -> (Vec<Tensor<F>>, Vec<f64>) {
        let mut g = Graph::new();
        let emb = self.embed_node(&mut g, ks);
        let z = g.constant(lat.z.clone());
        let h = g.constant(lat.h.clone());
        let nodes = LatentNodes { z, h };
        let obs = self.decode_obs_node(&mut g, nodes, emb);
        let rew = self.reward_node(&mut g, nodes, emb);
        let b = lat.batch();
        let obs_v = g.value(obs);
        let obs_out = (0..b)
            .map(|i| Tensor::from_vec(vec![self.cfg.obs_pixels], obs_v.row(i).to_vec()))
            .collect();
        let rew_out = (0..b).map(|i| g.value(rew).row(i)[0].to_f64()).collect();
        (obs_out, rew_out)
    }

    /// Reward head only; leaves the decoder call counter untouched.
    pub fn reward_values(&self, lat: &LatentState<F>, ks: &[usize]) -> Vec<f64> {
        let mut g = Graph::new();
        let emb = self.embed_node(&mut g, ks);
        let z = g.constant(lat.z.clone());
        let h = g.constant(lat.h.clone());
        let rew = self.reward_node(&mut g, LatentNodes { z, h }, emb);
        (0..lat.batch()).map(|i| g.value(rew).row(i)[0].to_f64()).collect()
    }

    // ---- losses ----

    /// Posterior-filter a batch inside `g`, returning per-step pieces.
    /// All trajectories must share one length H >= 1.
    fn filter_in_graph(
        &self,
        g: &mut Graph<F>,
        batch: &[Trajectory<F>],
        rng: &mut RngStream,
    ) -> FilterOut {
        assert!(!batch.is_empty());
        let horizon = batch[0].len();
        assert!(batch.iter().all(|t| t.len() == horizon), "trajectory length mismatch");
        let b = batch.len();
        let ks: Vec<usize> = batch.iter().map(|t| t.k).collect();
        let emb = self.embed_node(g, &ks);
        let mut z = g.constant(Tensor::zeros(&[b, self.cfg.z_dim]));
        let mut h = g.constant(Tensor::zeros(&[b, self.cfg.h_dim]));
        let mut steps = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let acts: Vec<[f64; 2]> = batch.iter().map(|tr| tr.actions[t]).collect();
            let a = g.constant(actions_tensor(&acts));
            let h2 = self.recurrent(g, LatentNodes { z, h }, a, emb);
            let prior = self.prior_head(g, h2, emb);
            let obs_vec: Vec<Tensor<F>> = batch.iter().map(|tr| tr.obs[t].clone()).collect();
            let obs = g.constant(obs_matrix(&obs_vec, self.cfg.obs_pixels));
            let code = self.encode_obs(g, obs);
            let q = self.posterior_head(g, h2, code, emb);
            let zt = q.sample(g, rng);
            steps.push(FilterStep {
                prior,
                posterior: q,
                lat: LatentNodes { z: zt, h: h2 },
                obs,
            });
            z = zt;
            h = h2;
        }
        FilterOut { emb, steps }
    }

    /// World-model objective: reconstruction + reward regression + alpha-KL,
    /// mean over batch and time. Log-likelihoods are unit-variance Gaussian,
    /// i.e. half squared error with constants dropped.
    pub fn world_loss_graph(
        &self,
        g: &mut Graph<F>,
        batch: &[Trajectory<F>],
        alpha: f64,
        rng: &mut RngStream,
    ) -> WorldLoss {
        let filt = self.filter_in_graph(g, batch, rng);
        let b = batch.len();
        let horizon = batch[0].len();
        let mut recon_terms = Vec::new();
        let mut rew_terms = Vec::new();
        let mut kl_terms = Vec::new();
        for (t, step) in filt.steps.iter().enumerate() {
            let dec = self.decode_obs_node(g, step.lat, filt.emb);
            let diff = g.sub(dec, step.obs);
            let sq = g.square(diff);
            recon_terms.push(g.sum(sq));
            let rhat = self.reward_node(g, step.lat, filt.emb);
            let rews: Vec<f64> = batch.iter().map(|tr| tr.rewards[t]).collect();
            let r = g.constant(rewards_tensor(&rews));
            let rdiff = g.sub(rhat, r);
            let rsq = g.square(rdiff);
            rew_terms.push(g.sum(rsq));
            kl_terms.push(step.posterior.kl_to(g, &step.prior));
        }
        let norm = 1.0 / (b * horizon) as f64;
        let recon_sum = sum_nodes(g, &recon_terms);
        let recon = g.scale(recon_sum, F::from_f64(0.5 * norm));
        let rew_sum = sum_nodes(g, &rew_terms);
        let reward = g.scale(rew_sum, F::from_f64(0.5 * norm));
        let kl_sum = sum_nodes(g, &kl_terms);
        let kl = g.scale(kl_sum, F::from_f64(norm));
        let rr = g.add(recon, reward);
        let akl = g.scale(kl, F::from_f64(alpha));
        let total = g.add(rr, akl);
        WorldLoss {
            total,
            recon,
            reward,
            kl,
        }
    }

    /// Convenience scalar evaluation of the world loss.
    pub fn world_loss(&self, batch: &[Trajectory<F>], alpha: f64, rng: &mut RngStream) -> f64 {
        let mut g = Graph::new();
        let loss = self.world_loss_graph(&mut g, batch, alpha, rng);
        g.value(loss.total).item().to_f64()
    }

    /// Augmented objective on action-shuffled trajectories: the plain world
    /// loss plus `delta * 1/2 (r_head(sg(z~), k) - r~)^2`. The stop-gradient
    /// keeps representation and transition parameters out of the extra term.
    pub fn world_loss_augmented_graph(
        &self,
        g: &mut Graph<F>,
        tau2: &[Trajectory<F>],
        alpha: f64,
        delta: f64,
        rng: &mut RngStream,
    ) -> WorldLoss {
        let base = self.world_loss_graph(g, tau2, alpha, rng);
        if delta == 0.0 {
            return base;
        }
        let aug = self.augmented_reward_term(g, tau2, delta);
        let total = g.add(base.total, aug);
        WorldLoss { total, ..base }
    }

    /// The reward-relabel term alone: `delta/2 * mean (r_head(sg(z~), k) - r~)^2`
    /// over a batch of action-shuffled trajectories. Latents are refiltered
    /// deterministically (posterior means) and entered as constants, and the
    /// embedding is stopped, so only `wm/rew/*` receives gradient.
    pub fn augmented_reward_term(
        &self,
        g: &mut Graph<F>,
        tau2: &[Trajectory<F>],
        delta: f64,
    ) -> NodeId {
        let b = tau2.len();
        let horizon = tau2[0].len();
        let ks: Vec<usize> = tau2.iter().map(|t| t.k).collect();
        let emb = self.embed_node(g, &ks);
        let emb_sg = g.stop_gradient(emb);
        let lat_means = self.filter_posterior_means(tau2);
        let mut terms = Vec::new();
        for (t, lat) in lat_means.iter().enumerate() {
            let z_sg = g.constant(lat.z.clone());
            let h_sg = g.constant(lat.h.clone());
            let rhat = self.reward_node(g, LatentNodes { z: z_sg, h: h_sg }, emb_sg);
            let rews: Vec<f64> = tau2.iter().map(|tr| tr.rewards[t]).collect();
            let r = g.constant(rewards_tensor(&rews));
            let diff = g.sub(rhat, r);
            let sq = g.square(diff);
            terms.push(g.sum(sq));
        }
        let aug_sum = sum_nodes(g, &terms);
        g.scale(aug_sum, F::from_f64(0.5 * delta / (b * horizon) as f64))
    }

    /// Deterministic posterior-mean latents for each step of a batch.
    pub fn filter_posterior_means(&self, batch: &[Trajectory<F>]) -> Vec<LatentState<F>> {
        let horizon = batch[0].len();
        let b = batch.len();
        let ks: Vec<usize> = batch.iter().map(|t| t.k).collect();
        let mut lat = self.initial_latent(b);
        let mut out = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let obs: Vec<Tensor<F>> = batch.iter().map(|tr| tr.obs[t].clone()).collect();
            let acts: Vec<[f64; 2]> = batch.iter().map(|tr| tr.actions[t]).collect();
            lat = self.posterior_mean_step(&obs, &lat, &acts, &ks);
            out.push(lat.clone());
        }
        out
    }

    /// Posterior-sampled latents for each step (used as imagination starts).
    pub fn filter_posterior_samples(
        &self,
        batch: &[Trajectory<F>],
        rng: &mut RngStream,
    ) -> Vec<LatentState<F>> {
        let mut g = Graph::new();
        let filt = self.filter_in_graph(&mut g, batch, rng);
        filt.steps
            .iter()
            .map(|s| LatentState {
                z: g.value(s.lat.z).clone(),
                h: g.value(s.lat.h).clone(),
            })
            .collect()
    }

    /// Filter the context with posterior means, then roll the prior mean
    /// open-loop and decode each predicted frame. Fully deterministic.
    pub fn rollout_forecast(
        &self,
        context_obs: &[Tensor<F>],
        actions: &[[f64; 2]],
        k: usize,
        h_pred: usize,
    ) -> Vec<Tensor<F>> {
        assert!(!context_obs.is_empty(), "empty forecast context");
        let ks = [k];
        let mut lat = self.initial_latent(1);
        for (t, obs) in context_obs.iter().enumerate() {
            let a = [*actions.get(t).unwrap_or(&[0.0; 2])];
            lat = self.posterior_mean_step(std::slice::from_ref(obs), &lat, &a, &ks);
        }
        let mut out = Vec::with_capacity(h_pred);
        for i in 0..h_pred {
            let t = context_obs.len() + i;
            let a = [*actions.get(t).unwrap_or(&[0.0; 2])];
            let (p, with_h) = self.prior(&lat, &a, &ks);
            lat = LatentState {
                z: p.mean.clone(),
                h: with_h.h,
            };
            let (obs_hat, _) = self.decode(&lat, &ks);
            out.push(obs_hat.into_iter().next().unwrap());
        }
        out
    }
}

struct FilterStep {
    prior: GaussNode,
    posterior: GaussNode,
    lat: LatentNodes,
    obs: NodeId,
}

struct FilterOut {
    emb: NodeId,
    steps: Vec<FilterStep>,
}

fn sum_nodes<F: Scalar>(g: &mut Graph<F>, nodes: &[NodeId]) -> NodeId {
    let mut acc = nodes[0];
    for &n in &nodes[1..] {
        acc = g.add(acc, n);
    }
    acc
}

/// Flatten a batch of observations into `[B, P]`.
pub fn obs_matrix<F: Scalar>(obs: &[Tensor<F>], pixels: usize) -> Tensor<F> {
    let b = obs.len();
    let mut data = Vec::with_capacity(b * pixels);
    for o in obs {
        assert_eq!(o.numel(), pixels, "observation has {} pixels, expected {}", o.numel(), pixels);
        data.extend_from_slice(o.data());
    }
    Tensor::from_vec(vec![b, pixels], data)
}

pub fn actions_tensor<F: Scalar>(actions: &[[f64; 2]]) -> Tensor<F> {
    let data: Vec<F> = actions
        .iter()
        .flatten()
        .map(|&a| F::from_f64(a))
        .collect();
    Tensor::from_vec(vec![actions.len(), 2], data)
}

pub fn rewards_tensor<F: Scalar>(rewards: &[f64]) -> Tensor<F> {
    let data: Vec<F> = rewards.iter().map(|&r| F::from_f64(r)).collect();
    Tensor::from_vec(vec![rewards.len(), 1], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use crate::substrate::gradcheck::grad_check;

    fn tiny_model() -> WorldModel<f64> {
        WorldModel::new(ModelConfig::tiny(2), &RngStream::new(3))
    }

    /// Random trajectories matching the tiny config.
    fn tiny_batch(model: &WorldModel<f64>, b: usize, h: usize, seed: u64) -> Vec<Trajectory<f64>> {
        let mut rng = RngStream::new(seed).derive("tiny-batch");
        (0..b)
            .map(|i| {
                let k = 1 + i % model.cfg.num_tasks;
                Trajectory {
                    k,
                    obs: (0..h)
                        .map(|_| rng.uniform_tensor::<f64>(&[model.cfg.obs_pixels], 0.0, 1.0))
                        .collect(),
                    actions: (0..h)
                        .map(|_| [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)])
                        .collect(),
                    rewards: (0..h).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn initial_latent_is_zero_and_stable() {
        let m = tiny_model();
        let a = m.initial_latent(2);
        let b = m.initial_latent(2);
        assert!(a.z.data().iter().all(|&v| v == 0.0));
        assert!(a.h.data().iter().all(|&v| v == 0.0));
        assert_eq!(a.z, b.z);
        // feeding it to prior() is valid
        let _ = m.prior(&a, &[[0.0; 2]; 2], &[1, 2]);
    }

    #[test]
    fn prior_is_deterministic_with_floored_std() {
        let m = tiny_model();
        let lat = m.initial_latent(1);
        let (d1, l1) = m.prior(&lat, &[[0.3, -0.2]], &[1]);
        let (d2, _) = m.prior(&lat, &[[0.3, -0.2]], &[1]);
        assert_eq!(d1.mean, d2.mean);
        assert_eq!(d1.std, d2.std);
        assert!(d1.std.data().iter().all(|&s| s >= 0.1));
        assert_ne!(l1.h, lat.h); // recurrent state moved
        assert_eq!(l1.z, lat.z); // stochastic part untouched
    }

    #[test]
    fn posterior_sample_is_seed_deterministic() {
        let m = tiny_model();
        let lat = m.initial_latent(1);
        let obs = vec![RngStream::new(1).derive("o").uniform_tensor::<f64>(&[16], 0.0, 1.0)];
        let mut r1 = RngStream::new(9).derive("post");
        let mut r2 = RngStream::new(9).derive("post");
        let (q1, s1) = m.posterior(&obs, &lat, &[[0.0; 2]], &[1], &mut r1);
        let (q2, s2) = m.posterior(&obs, &lat, &[[0.0; 2]], &[1], &mut r2);
        assert_eq!(s1.z, s2.z);
        assert_eq!(q1.mean, q2.mean);
        assert!(q1.std.data().iter().all(|&s| s >= 0.1));
    }

    #[test]
    fn decode_outputs_strictly_inside_unit_interval() {
        let m = tiny_model();
        let lat = m.initial_latent(3);
        let (obs, rew) = m.decode(&lat, &[1, 2, 1]);
        for o in &obs {
            assert!(o.data().iter().all(|&p| p > 0.0 && p < 1.0));
        }
        assert!(rew.iter().all(|r| r.is_finite()));
        // deterministic
        let (obs2, rew2) = m.decode(&lat, &[1, 2, 1]);
        assert_eq!(obs, obs2);
        assert_eq!(rew, rew2);
    }

    #[test]
    fn reward_and_obs_heads_are_disjoint() {
        let m = tiny_model();
        let mut g = Graph::new();
        let emb = m.embed_node(&mut g, &[1]);
        let z = g.constant(Tensor::zeros(&[1, m.cfg.z_dim]));
        let h = g.constant(Tensor::zeros(&[1, m.cfg.h_dim]));
        let r = m.reward_node(&mut g, LatentNodes { z, h }, emb);
        let loss = g.sum(r);
        let grads = g.backward(loss);
        assert!(g.param_grad(&grads, "wm/obs/l0/w").is_none());
        assert!(g.param_grad(&grads, "wm/rew/l0/w").is_some());
    }

    #[test]
    fn task_embedding_rows_are_isolated() {
        let mut m = tiny_model();
        let mut batch = tiny_batch(&m, 2, 3, 5);
        for tr in &mut batch {
            tr.k = 1; // task-1-only batch
        }
        let before = m.store.value("wm/embed").clone();
        let mut g = Graph::new();
        let mut rng = RngStream::new(2).derive("loss");
        let loss = m.world_loss_graph(&mut g, &batch, 1.0, &mut rng);
        g.backprop(loss.total, &mut m.store);
        let grad = m.store.grad("wm/embed").clone();
        let d = m.cfg.embed_dim;
        assert!(grad.data()[..d].iter().any(|&v| v != 0.0), "row 0 should receive gradient");
        assert!(grad.data()[d..].iter().all(|&v| v == 0.0), "row 1 must stay untouched");
        m.store.adam_step(1e-3, 0.9, 0.999, 1e-8).unwrap();
        let after = m.store.value("wm/embed");
        assert_eq!(&before.data()[d..], &after.data()[d..]);
        assert_ne!(&before.data()[..d], &after.data()[..d]);
    }

    #[test]
    fn kl_term_nonnegative_and_alpha_scales() {
        let m = tiny_model();
        let batch = tiny_batch(&m, 2, 3, 7);
        let mut g = Graph::new();
        let mut rng = RngStream::new(4).derive("l");
        let parts = m.world_loss_graph(&mut g, &batch, 1.0, &mut rng);
        let kl = g.value(parts.kl).item();
        assert!(kl >= 0.0);
        let total = g.value(parts.total).item();
        let recon = g.value(parts.recon).item();
        let reward = g.value(parts.reward).item();
        assert!((total - (recon + reward + kl)).abs() < 1e-10);
        // alpha = 0 drops the KL term
        let mut g0 = Graph::new();
        let mut rng0 = RngStream::new(4).derive("l");
        let p0 = m.world_loss_graph(&mut g0, &batch, 0.0, &mut rng0);
        assert!((g0.value(p0.total).item() - (recon + reward)).abs() < 1e-10);
    }

    #[test]
    fn world_loss_grad_check() {
        let mut m = tiny_model();
        let batch = tiny_batch(&m, 2, 3, 11);
        let mut g = Graph::new();
        let mut rng = RngStream::new(8).derive("gc");
        let loss = m.world_loss_graph(&mut g, &batch, 1.0, &mut rng);
        let grads = g.backward(loss.total);
        let mut analytic = BTreeMap::new();
        for name in m.store.names().map(|s| s.to_string()).collect::<Vec<_>>() {
            if let Some(t) = g.param_grad(&grads, &name) {
                analytic.insert(name, t.clone());
            }
        }
        let cfg = m.cfg.clone();
        let batch_c = batch.clone();
        let err = grad_check(&mut m.store, &analytic, |s| {
            let model = WorldModel::with_store(cfg.clone(), s.frozen_copy());
            let mut rng = RngStream::new(8).derive("gc");
            model.world_loss(&batch_c, 1.0, &mut rng)
        });
        assert!(err < 1e-4, "max relative error {}", err);
    }

    #[test]
    fn augmented_loss_reduces_to_base_at_delta_zero() {
        let m = tiny_model();
        let batch = tiny_batch(&m, 2, 3, 13);
        let mut ga = Graph::new();
        let mut ra = RngStream::new(1).derive("x");
        let a = m.world_loss_augmented_graph(&mut ga, &batch, 1.0, 0.0, &mut ra);
        let mut gb = Graph::new();
        let mut rb = RngStream::new(1).derive("x");
        let b = m.world_loss_graph(&mut gb, &batch, 1.0, &mut rb);
        assert_eq!(ga.value(a.total).item(), gb.value(b.total).item());
    }

    #[test]
    fn augmented_term_stops_encoder_gradient() {
        let mut m = tiny_model();
        let batch = tiny_batch(&m, 2, 3, 17);
        let grads_for = |m: &WorldModel<f64>, delta: f64| {
            let mut g = Graph::new();
            let mut rng = RngStream::new(6).derive("a");
            let loss = m.world_loss_augmented_graph(&mut g, &batch, 1.0, delta, &mut rng);
            let grads = g.backward(loss.total);
            let enc = g.param_grad(&grads, "wm/enc/l0/w").unwrap().clone();
            let rew = g.param_grad(&grads, "wm/rew/l2/w").unwrap().clone();
            (enc, rew)
        };
        let (enc0, rew0) = grads_for(&m, 0.0);
        let (enc1, rew1) = grads_for(&m, 0.5);
        // encoder gradient identical: the augmented term contributes zero
        for (a, b) in enc0.data().iter().zip(enc1.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // reward head feels the extra term
        let diff: f64 = rew0
            .data()
            .iter()
            .zip(rew1.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-8);
        // and the full augmented loss still grad-checks
        let mut g = Graph::new();
        let mut rng = RngStream::new(6).derive("a");
        let loss = m.world_loss_augmented_graph(&mut g, &batch, 1.0, 0.5, &mut rng);
        let grads = g.backward(loss.total);
        // only the reward head grad-checks against the full loss: for encoder /
        // transition params finite differences feel the delta-term through the
        // filtered latents, a path the stop-gradient removes analytically
        let mut analytic = BTreeMap::new();
        for name in m.store.names().map(|s| s.to_string()).collect::<Vec<_>>() {
            if !name.starts_with("wm/rew/") {
                continue;
            }
            if let Some(t) = g.param_grad(&grads, &name) {
                analytic.insert(name, t.clone());
            }
        }
        let cfg = m.cfg.clone();
        let batch_c = batch.clone();
        let err = grad_check(&mut m.store, &analytic, |s| {
            let model = WorldModel::with_store(cfg.clone(), s.frozen_copy());
            let mut g = Graph::new();
            let mut rng = RngStream::new(6).derive("a");
            let l = model.world_loss_augmented_graph(&mut g, &batch_c, 1.0, 0.5, &mut rng);
            g.value(l.total).item()
        });
        assert!(err < 1e-4, "max relative error {}", err);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_loss_bitwise_f32() {
        use crate::substrate::checkpoint;
        let cfg = ModelConfig::tiny(2);
        let m: WorldModel<f32> = WorldModel::new(cfg.clone(), &RngStream::new(21));
        let mut rngb = RngStream::new(30).derive("b32");
        let batch: Vec<Trajectory<f32>> = (0..2)
            .map(|i| Trajectory {
                k: 1 + i % 2,
                obs: (0..3)
                    .map(|_| rngb.uniform_tensor::<f32>(&[cfg.obs_pixels], 0.0, 1.0))
                    .collect(),
                actions: vec![[0.1, -0.4]; 3],
                rewards: vec![0.3; 3],
            })
            .collect();
        let entries = checkpoint::entries_from_stores(&[&m.store]);
        let mut buf = Vec::new();
        checkpoint::write_entries(&mut buf, &entries).unwrap();
        let back = checkpoint::read_entries(&mut &buf[..]).unwrap();
        let mut m2: WorldModel<f32> = WorldModel::new(cfg, &RngStream::new(999));
        checkpoint::load_into_store(&back, &mut m2.store).unwrap();
        let mut r1 = RngStream::new(2).derive("cl");
        let mut r2 = RngStream::new(2).derive("cl");
        let l1 = m.world_loss(&batch, 1.0, &mut r1) as f32;
        let l2 = m2.world_loss(&batch, 1.0, &mut r2) as f32;
        assert_eq!(l1.to_bits(), l2.to_bits());
    }

    #[test]
    fn forecast_rollout_contract() {
        let m = tiny_model();
        let mut rng = RngStream::new(14).derive("ctx");
        let ctx: Vec<Tensor<f64>> = (0..3)
            .map(|_| rng.uniform_tensor::<f64>(&[16], 0.0, 1.0))
            .collect();
        assert!(m.rollout_forecast(&ctx, &[], 1, 0).is_empty());
        let a = m.rollout_forecast(&ctx, &[], 1, 4);
        let b = m.rollout_forecast(&ctx, &[], 1, 4);
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
        }
    }
}

//! Initial-frame generator: a compact VAE whose latent prior is a per-task
//! Gaussian, so sampling conditioned on a task label reproduces that task's
//! opening frame distribution without storing raw pixels forever.
//!
//! The encoder sees the frame together with the task embedding; the decoder
//! maps a latent plus embedding back to pixels through a sigmoid. Each task
//! owns one row in the `gen/prior_mean` / `gen/prior_rawstd` tables, and the
//! KL in the loss is taken against that row, pulling the aggregate posterior
//! for a task onto its own prior component.

use crate::nets::{dense, dense_elu, init_dense, split_gaussian};
use crate::substrate::{DiagGaussian, GaussNode, Graph, NodeId, ParamStore, RngStream, Scalar, Tensor};
use crate::worldmodel::obs_matrix;
use std::collections::BTreeMap;

/// Real first frames retained per task for generator rehearsal.
pub const FRAMES_PER_TASK: usize = 200;

/// KL weight in the generator loss.
pub const GEN_BETA: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub obs_pixels: usize,
    pub e_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub num_tasks: usize,
    pub std_floor: f64,
}

impl GenConfig {
    pub fn desk(num_tasks: usize) -> Self {
        GenConfig {
            obs_pixels: crate::envs::OBS_PIXELS,
            e_dim: 8,
            embed_dim: 4,
            hidden: 128,
            num_tasks,
            std_floor: 0.05,
        }
    }

    /// Scaled-down config for finite-difference tests.
    pub fn tiny(num_tasks: usize) -> Self {
        GenConfig {
            obs_pixels: 16,
            e_dim: 3,
            embed_dim: 2,
            hidden: 10,
            num_tasks,
            std_floor: 0.05,
        }
    }

    /// Map a 1-based task label onto a prior / embedding row.
    pub fn component(&self, k: usize) -> usize {
        assert!(
            (1..=self.num_tasks).contains(&k),
            "task label {} out of 1..={}",
            k,
            self.num_tasks
        );
        k - 1
    }
}

/// A homogeneous group of first frames sharing one task label.
#[derive(Clone, Debug)]
pub struct FrameGroup<F: Scalar> {
    pub k: usize,
    pub frames: Vec<Tensor<F>>,
}

#[derive(Clone, Copy, Debug)]
pub struct GenLoss {
    pub total: NodeId,
    pub recon: NodeId,
    pub kl: NodeId,
}

pub struct Generator<F: Scalar> {
    pub cfg: GenConfig,
    pub store: ParamStore<F>,
}

impl<F: Scalar> Generator<F> {
    pub fn new(cfg: GenConfig, rng: &RngStream) -> Self {
        let r = rng.derive("generator");
        let mut store = ParamStore::new();
        let emb: Tensor<F> = r
            .derive("embed")
            .normal_tensor::<F>(&[cfg.num_tasks, cfg.embed_dim])
            .scale(F::from_f64(0.5));
        store.insert("gen/embed", emb);
        store.insert("gen/prior_mean", Tensor::zeros(&[cfg.num_tasks, cfg.e_dim]));
        store.insert("gen/prior_rawstd", Tensor::zeros(&[cfg.num_tasks, cfg.e_dim]));
        init_dense(&mut store, "gen/enc/l0", cfg.obs_pixels + cfg.embed_dim, cfg.hidden, &r);
        init_dense(&mut store, "gen/enc/l1", cfg.hidden, 2 * cfg.e_dim, &r);
        init_dense(&mut store, "gen/dec/l0", cfg.e_dim + cfg.embed_dim, cfg.hidden, &r);
        init_dense(&mut store, "gen/dec/l1", cfg.hidden, cfg.obs_pixels, &r);
        Generator { cfg, store }
    }

    pub fn with_store(cfg: GenConfig, store: ParamStore<F>) -> Self {
        Generator { cfg, store }
    }

    pub fn frozen_copy(&self) -> Self {
        Generator { cfg: self.cfg.clone(), store: self.store.frozen_copy() }
    }

    pub fn embed_node(&self, g: &mut Graph<F>, ks: &[usize]) -> NodeId {
        let table = g.param("gen/embed", &self.store);
        let rows: Vec<usize> = ks.iter().map(|&k| self.cfg.component(k)).collect();
        g.select_rows(table, &rows)
    }

    /// Per-task prior rows as an in-graph Gaussian.
    pub fn prior_nodes(&self, g: &mut Graph<F>, ks: &[usize]) -> GaussNode {
        let rows: Vec<usize> = ks.iter().map(|&k| self.cfg.component(k)).collect();
        let mean_t = g.param("gen/prior_mean", &self.store);
        let raw_t = g.param("gen/prior_rawstd", &self.store);
        let mean = g.select_rows(mean_t, &rows);
        let raw = g.select_rows(raw_t, &rows);
        let sp = g.softplus(raw);
        let std = g.add_scalar(sp, F::from_f64(self.cfg.std_floor));
        GaussNode { mean, std }
    }

    pub fn encode(&self, g: &mut Graph<F>, obs: NodeId, emb: NodeId) -> GaussNode {
        let x = g.concat_cols(&[obs, emb]);
        let h = dense_elu(g, &self.store, "gen/enc/l0", x);
        let out = dense(g, &self.store, "gen/enc/l1", h);
        split_gaussian(g, out, self.cfg.e_dim, self.cfg.std_floor)
    }

    pub fn decode_node(&self, g: &mut Graph<F>, e: NodeId, emb: NodeId) -> NodeId {
        let x = g.concat_cols(&[e, emb]);
        let h = dense_elu(g, &self.store, "gen/dec/l0", x);
        let out = dense(g, &self.store, "gen/dec/l1", h);
        g.sigmoid(out)
    }

    /// Reconstruction + beta-weighted KL to the per-task prior, each group
    /// contributing the mean over its frames; groups are summed.
    pub fn gen_loss_graph(
        &self,
        g: &mut Graph<F>,
        groups: &[FrameGroup<F>],
        beta: f64,
        rng: &mut RngStream,
    ) -> GenLoss {
        assert!(!groups.is_empty(), "gen loss needs at least one frame group");
        let mut recon_terms = Vec::new();
        let mut kl_terms = Vec::new();
        for group in groups {
            let b = group.frames.len();
            assert!(b > 0, "empty frame group for task {}", group.k);
            let obs = g.constant(obs_matrix(&group.frames, self.cfg.obs_pixels));
            let ks = vec![group.k; b];
            let emb = self.embed_node(g, &ks);
            let q = self.encode(g, obs, emb);
            let e = q.sample(g, rng);
            let dec = self.decode_node(g, e, emb);
            let err = g.sub(dec, obs);
            let sq = g.square(err);
            let sse = g.sum(sq);
            let recon = g.scale(sse, F::from_f64(0.5 / b as f64));
            recon_terms.push(recon);
            let prior = self.prior_nodes(g, &ks);
            let kl_sum = q.kl_to(g, &prior);
            kl_terms.push(g.scale(kl_sum, F::from_f64(1.0 / b as f64)));
        }
        let recon = sum_terms(g, &recon_terms);
        let kl = sum_terms(g, &kl_terms);
        let kl_w = g.scale(kl, F::from_f64(beta));
        let total = g.add(recon, kl_w);
        GenLoss { total, recon, kl }
    }

    /// Draw one frame for task `k` from the per-task prior.
    pub fn sample(&self, k: usize, rng: &mut RngStream) -> Tensor<F> {
        let row = self.cfg.component(k);
        let mean_row = self.store.value("gen/prior_mean").row(row).to_vec();
        let raw_row = self.store.value("gen/prior_rawstd").row(row).to_vec();
        let std_row: Vec<F> = raw_row
            .iter()
            .map(|&r| {
                let x = r.to_f64();
                let sp = if x > 30.0 { x } else { (1.0 + x.exp()).ln() };
                F::from_f64(sp + self.cfg.std_floor)
            })
            .collect();
        let prior = DiagGaussian::new(
            Tensor::from_vec(vec![1, self.cfg.e_dim], mean_row),
            Tensor::from_vec(vec![1, self.cfg.e_dim], std_row),
        );
        let e = prior.sample(rng);
        let mut g = Graph::new();
        let e_node = g.constant(e);
        let emb = self.embed_node(&mut g, &[k]);
        let dec = self.decode_node(&mut g, e_node, emb);
        g.value(dec).clone()
    }
}

fn sum_terms<F: Scalar>(g: &mut Graph<F>, terms: &[NodeId]) -> NodeId {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    acc
}

/// Bounded per-task store of real opening frames; the first
/// [`FRAMES_PER_TASK`] frames seen for each task are kept.
#[derive(Clone, Debug, Default)]
pub struct FrameBuffer<F: Scalar> {
    per_task: BTreeMap<usize, Vec<Tensor<F>>>,
    cap: usize,
}

impl<F: Scalar> FrameBuffer<F> {
    pub fn new(cap: usize) -> Self {
        FrameBuffer { per_task: BTreeMap::new(), cap }
    }

    pub fn push(&mut self, k: usize, frame: Tensor<F>) {
        let slot = self.per_task.entry(k).or_default();
        if slot.len() < self.cap {
            slot.push(frame);
        }
    }

    pub fn len(&self, k: usize) -> usize {
        self.per_task.get(&k).map_or(0, Vec::len)
    }

    pub fn tasks(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_task.keys().copied()
    }

    /// Uniform sample with replacement of `n` frames for task `k`.
    pub fn sample_group(&self, k: usize, n: usize, rng: &mut RngStream) -> FrameGroup<F> {
        let slot = self.per_task.get(&k).expect("no frames stored for task");
        assert!(!slot.is_empty());
        let frames = (0..n).map(|_| slot[rng.usize_below(slot.len())].clone()).collect();
        FrameGroup { k, frames }
    }
}

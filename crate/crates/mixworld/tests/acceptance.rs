//! Acceptance gate: one test per headline claim, each printing a single
//! PASS line with the measured numbers. Empirical criteria train real agents
//! at desk scale and are the slowest tests in the workspace; run them with
//! `cargo test --test acceptance -- --nocapture` to watch the numbers.

use mixworld::behavior::{
    conservative_targets, lambda_returns_f64, lambda_returns_nodes, Actor, BehaviorConfig, Critic,
};
use mixworld::envs::{gen_forecast_dataset, make_motion_stream, make_task_stream, Trajectory};
use mixworld::generator::{FrameGroup, GenConfig, Generator};
use mixworld::inference::{infer_task, test_time_adapt};
use mixworld::metrics::read_csv;
use mixworld::pipeline;
use mixworld::replay::{replay_trajectories, AgentSnapshot};
use mixworld::substrate::{
    gaussian_kl, gradcheck::grad_check, DiagGaussian, Graph, NodeId, ParamStore, RngStream, Tensor,
};
use mixworld::training::{
    train_continual, train_forecast, Ablation, ContinualConfig, ContinualOutcome, ForecastConfig,
    ForecastOutcome,
};
use mixworld::worldmodel::{LatentState, ModelConfig, WorldModel};
use std::collections::BTreeMap;
use std::time::Instant;

const SEEDS: [u64; 3] = [0, 1, 2];

fn final_task1_return<F: mixworld::substrate::Scalar>(
    out: &ContinualOutcome<F>,
    last_task: usize,
) -> f64 {
    out.returns[&(last_task, 1)]
}

fn final_average_return<F: mixworld::substrate::Scalar>(
    out: &ContinualOutcome<F>,
    last_task: usize,
) -> f64 {
    let vals: Vec<f64> = (1..=last_task).map(|j| out.returns[&(last_task, j)]).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_control_forgetting() {
    let t0 = Instant::now();
    let tasks = make_task_stream("slope4", 4, 0).unwrap();
    let mut cpl_t1 = Vec::new();
    let mut cpl_avg = Vec::new();
    let mut base_t1 = Vec::new();
    let mut base_avg = Vec::new();
    for &seed in &SEEDS {
        let full = ContinualConfig::desk(4, Ablation::full());
        let naive = ContinualConfig::desk(4, Ablation::none());
        let a: ContinualOutcome<f32> = train_continual(&full, &tasks, seed, None).unwrap();
        let b: ContinualOutcome<f32> = train_continual(&naive, &tasks, seed, None).unwrap();
        cpl_t1.push(final_task1_return(&a, 4));
        cpl_avg.push(final_average_return(&a, 4));
        base_t1.push(final_task1_return(&b, 4));
        base_avg.push(final_average_return(&b, 4));
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let (ct1, ca, bt1, ba) = (mean(&cpl_t1), mean(&cpl_avg), mean(&base_t1), mean(&base_avg));
    assert!(
        ct1 >= 1.5 * bt1,
        "task-1 return: CPL {:.2} vs 1.5x baseline {:.2}",
        ct1,
        1.5 * bt1
    );
    assert!(
        ca >= 1.3 * ba,
        "4-task average: CPL {:.2} vs 1.3x baseline {:.2}",
        ca,
        1.3 * ba
    );
    assert!(elapsed <= 45.0 * 60.0, "runtime {:.0}s over 45 min budget", elapsed);
    println!(
        "criterion 1 PASS: task-1 final return CPL {:.2} vs naive {:.2} (bar 1.5x), \
         4-task avg {:.2} vs {:.2} (bar 1.3x), {:.0}s",
        ct1, bt1, ca, ba, elapsed
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_forecast_forgetting() {
    let t0 = Instant::now();
    let motions = make_motion_stream(3);
    let mut full_t1 = Vec::new();
    let mut base_t1 = Vec::new();
    for &seed in &SEEDS {
        let full = ForecastConfig::desk(3, Ablation::full());
        let base = ForecastConfig::desk(3, Ablation::none());
        let a: ForecastOutcome<f32> = train_forecast(&full, &motions, seed, None).unwrap();
        let b: ForecastOutcome<f32> = train_forecast(&base, &motions, seed, None).unwrap();
        full_t1.push(a.psnr[&(3, 1)]);
        base_t1.push(b.psnr[&(3, 1)]);
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let (f, b) = (mean(&full_t1), mean(&base_t1));
    assert!(f >= b + 2.0, "task-1 PSNR after final task: full {:.2} vs base {:.2} (need +2dB)", f, b);
    assert!(elapsed <= 15.0 * 60.0, "runtime {:.0}s over 15 min budget", elapsed);
    println!(
        "criterion 2 PASS: task-1 PSNR after final task, full {:.2} dB vs base {:.2} dB \
         (gap {:.2} >= 2), {:.0}s",
        f, b, f - b, elapsed
    );
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_ablation_ordering() {
    let tasks = make_task_stream("slope4", 4, 0).unwrap();
    let no_replay = Ablation { mixture: true, replay: false, eps_explore: false, action_aug: false, v_reg: false };
    let replay_only = Ablation { replay: true, ..no_replay };
    let replay_eps_aaug = Ablation { eps_explore: true, action_aug: true, ..replay_only };
    let full = Ablation::full();
    let mut means = Vec::new();
    for abl in [no_replay, replay_only, replay_eps_aaug, full] {
        let per_seed: Vec<f64> = SEEDS
            .iter()
            .map(|&seed| {
                let cfg = ContinualConfig::desk(4, abl.clone());
                let out: ContinualOutcome<f32> = train_continual(&cfg, &tasks, seed, None).unwrap();
                final_average_return(&out, 4)
            })
            .collect();
        means.push(mean(&per_seed));
    }
    let (m_none, m_rep, m_aug, m_full) = (means[0], means[1], means[2], means[3]);
    assert!(m_rep >= m_none, "replay-only {:.2} < no-replay {:.2}", m_rep, m_none);
    assert!(m_aug >= m_rep, "replay+eps+aAug {:.2} < replay-only {:.2}", m_aug, m_rep);
    assert!(m_full >= m_aug, "full {:.2} < replay+eps+aAug {:.2}", m_full, m_aug);
    assert!(m_full > m_rep, "full {:.2} not strictly above replay-only {:.2}", m_full, m_rep);
    println!(
        "criterion 3 PASS: seed-mean final average returns full {:.2} >= replay+eps+aAug {:.2} \
         >= replay-only {:.2} >= no-replay {:.2}",
        m_full, m_aug, m_rep, m_none
    );
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_value_overestimation() {
    let tasks = make_task_stream("slope4", 2, 0).unwrap();
    let without = Ablation { v_reg: false, ..Ablation::full() };
    let with = Ablation::full();
    let mut excess_off = Vec::new();
    let mut excess_on = Vec::new();
    for &seed in &SEEDS {
        let mut pair = Vec::new();
        for abl in [without.clone(), with.clone()] {
            let cfg = ContinualConfig::desk(2, abl);
            let out: ContinualOutcome<f32> = train_continual(&cfg, &tasks, seed, None).unwrap();
            let snap1 = &out.snapshots[0];
            // 100 task-1 states dreamed from the frozen end-of-task-1 agent
            let mut rng = RngStream::new(seed ^ 0xc4).derive("states");
            let eps = replay_trajectories(snap1, 1, 4, 26, 0.2, &mut rng);
            let states: Vec<_> = eps.iter().flat_map(|e| e.latents.iter()).take(100).collect();
            assert_eq!(states.len(), 100);
            let live = mean(
                &states.iter().map(|s| out.agent.critic.value(&out.agent.model, s, 1)).collect::<Vec<_>>(),
            );
            let frozen = mean(
                &states.iter().map(|s| snap1.critic.value(&snap1.model, s, 1)).collect::<Vec<_>>(),
            );
            pair.push(live - frozen);
        }
        excess_off.push(pair[0]);
        excess_on.push(pair[1]);
    }
    let off_mean = mean(&excess_off);
    assert!(
        off_mean > 0.0,
        "without new_value the post-task-2 critic must overestimate: excess {:?}",
        excess_off
    );
    for (i, (&on, &off)) in excess_on.iter().zip(&excess_off).enumerate() {
        assert!(on < off, "seed {}: regularised excess {:.3} not below {:.3}", SEEDS[i], on, off);
    }

    // clamped targets never exceed frozen-critic targets, exact and elementwise
    let cfg = ContinualConfig::desk(2, with);
    let out: ContinualOutcome<f32> = train_continual(&cfg, &tasks, 0, None).unwrap();
    let snap1 = &out.snapshots[0];
    let prev = snap1.critic.renamed_copy("vprev2");
    let bcfg = &cfg.behavior;
    let mut rng = RngStream::new(99).derive("clamp");
    let mut g: Graph<f32> = Graph::new();
    let starts = LatentState {
        z: rng.normal_tensor(&[8, cfg.model.z_dim]),
        h: rng.normal_tensor(&[8, cfg.model.h_dim]),
    };
    let ks = vec![1usize; 8];
    let roll = mixworld::behavior::imagine(
        &mut g, &out.agent.model, &out.agent.actor, &starts, &ks, bcfg.horizon, &mut rng,
    );
    let values: Vec<NodeId> = (0..bcfg.horizon)
        .map(|t| {
            let idx = if t + 1 < roll.states.len() { t + 1 } else { t };
            out.agent.critic.value_node(&mut g, roll.states[idx], roll.emb)
        })
        .collect();
    let tilde_values: Vec<NodeId> = (0..bcfg.horizon)
        .map(|t| {
            let idx = if t + 1 < roll.states.len() { t + 1 } else { t };
            prev.value_node(&mut g, roll.states[idx], roll.emb)
        })
        .collect();
    let live_t = lambda_returns_nodes(&mut g, &roll.rewards, &values, bcfg.gamma, bcfg.lambda);
    let tilde_t = lambda_returns_nodes(&mut g, &roll.rewards, &tilde_values, bcfg.gamma, bcfg.lambda);
    let clamped = conservative_targets(&mut g, &live_t, &tilde_t);
    for t in 0..bcfg.horizon {
        let c = g.value(clamped[t]).clone();
        let f = g.value(tilde_t[t]).clone();
        for (a, b) in c.data().iter().zip(f.data()) {
            assert!(a <= b, "clamped target {} exceeds frozen target {}", a, b);
        }
    }

    println!(
        "criterion 4 PASS: value drift on 100 replayed task-1 states, seed excesses \
         without new_value {:?} vs with {:?}; clamp <= frozen elementwise",
        excess_off.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
        excess_on.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_task_inference() {
    let motions = make_motion_stream(3);
    let cfg = ForecastConfig::desk(3, Ablation::full());
    let out: ForecastOutcome<f32> = train_forecast(&cfg, &motions, 0, None).unwrap();

    // 100 held-out sequences, roughly balanced over the three tasks
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut held: Vec<Trajectory<f32>> = Vec::new();
    for (i, spec) in motions.iter().enumerate() {
        let n = if i == 0 { 34 } else { 33 };
        for traj in gen_forecast_dataset::<f32>(spec, n, cfg.seq_total, 0xbeef + i as u64) {
            if infer_task(&out.model, &traj) == spec.k {
                correct += 1;
            }
            held.push(traj);
            total += 1;
        }
    }
    assert_eq!(total, 100);
    let acc = correct as f64 / total as f64;
    assert!(acc >= 0.9, "task inference accuracy {:.2} below 0.9", acc);

    // one adaptation step non-increases the sequence loss in >= 90% of trials
    let mut non_increase = 0usize;
    let trials = 30usize;
    for (i, traj) in held.iter().take(trials).enumerate() {
        let k_hat = infer_task(&out.model, traj);
        let seq = std::slice::from_ref(traj);
        let loss_of = |m: &WorldModel<f32>| {
            let mut g = Graph::new();
            let mut r = RngStream::new(500 + i as u64).derive("eval");
            let l = m.world_loss_graph(&mut g, seq, cfg.alpha as f64, &mut r);
            g.value(l.total).item() as f64
        };
        let before = loss_of(&out.model);
        let mut r = RngStream::new(900 + i as u64).derive("adapt");
        let adapted =
            test_time_adapt(&out.model, traj, k_hat, 1, cfg.model_lr, cfg.alpha, &mut r).unwrap();
        let after = loss_of(&adapted);
        if after <= before {
            non_increase += 1;
        }
    }
    let frac = non_increase as f64 / trials as f64;
    assert!(frac >= 0.9, "adaptation non-increase fraction {:.2} below 0.9", frac);
    println!(
        "criterion 7 PASS: task inference {}/{} correct, adaptation non-increase {}/{} trials",
        correct, total, non_increase, trials
    );
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_oracle_equivalence_suite() {
    // gaussian_kl vs closed form evaluated independently
    let mut rng = RngStream::new(5).derive("kl");
    for _ in 0..200 {
        let d = 1 + rng.usize_below(6);
        let mq: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let mp: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let sq: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.2, 2.0)).collect();
        let sp: Vec<f64> = (0..d).map(|_| rng.uniform_range(0.2, 2.0)).collect();
        let q = DiagGaussian::new(
            Tensor::from_vec(vec![d], mq.clone()),
            Tensor::from_vec(vec![d], sq.clone()),
        );
        let p = DiagGaussian::new(
            Tensor::from_vec(vec![d], mp.clone()),
            Tensor::from_vec(vec![d], sp.clone()),
        );
        let got: f64 = gaussian_kl(&q, &p);
        let want: f64 = (0..d)
            .map(|i| {
                (sp[i] / sq[i]).ln()
                    + (sq[i] * sq[i] + (mq[i] - mp[i]) * (mq[i] - mp[i])) / (2.0 * sp[i] * sp[i])
                    - 0.5
            })
            .sum();
        assert!((got - want).abs() < 1e-9, "KL {} vs {}", got, want);
    }

    // lambda returns vs the non-recursive expansion, 1000 random instances
    let mut rng = RngStream::new(6).derive("lam");
    for _ in 0..1000 {
        let l = 1 + rng.usize_below(10);
        let gamma = rng.uniform_range(0.8, 1.0);
        let lambda = rng.uniform_range(0.0, 1.0);
        let rewards: Vec<f64> = (0..l).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let values: Vec<f64> = (0..l).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let rec = lambda_returns_f64(&rewards, &values, gamma, lambda);
        for t in 0..l {
            let mut want = 0.0;
            for n in t..l {
                want += (gamma * lambda).powi((n - t) as i32)
                    * (rewards[n] + gamma * (1.0 - lambda) * values[n]);
            }
            want += (gamma * lambda).powi((l - 1 - t) as i32) * gamma * lambda * values[l - 1];
            assert!((rec[t] - want).abs() < 1e-10, "lambda return {} vs {}", rec[t], want);
        }
    }

    // conservative targets == elementwise min, exact
    let mut rng = RngStream::new(7).derive("min");
    let mut g: Graph<f64> = Graph::new();
    let a_vals: Vec<f64> = (0..64).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
    let b_vals: Vec<f64> = (0..64).map(|i| if i % 5 == 0 { a_vals[i] } else { rng.uniform_range(-3.0, 3.0) }).collect();
    let a = g.constant(Tensor::from_vec(vec![8, 8], a_vals.clone()));
    let b = g.constant(Tensor::from_vec(vec![8, 8], b_vals.clone()));
    let m = conservative_targets(&mut g, &[a], &[b]);
    for (i, got) in g.value(m[0]).data().iter().enumerate() {
        assert_eq!(*got, a_vals[i].min(b_vals[i]));
    }

    // epsilon-greedy rate inside the binomial 99% CI at 0, 0.2, 1
    let snap = tiny_snapshot(71);
    for &(eps, lo, hi) in &[(0.0, 0usize, 0usize), (0.2, 346, 438usize), (1.0, 1960, 1960)] {
        // N = 40 episodes x 49 decisions = 1960; z=2.576, sd=sqrt(N p q)
        let mut rng = RngStream::new(8).derive("eps");
        let eps_runs = replay_trajectories(&snap, 1, 40, 50, eps, &mut rng);
        let got: usize = eps_runs.iter().map(|r| r.explore_steps).sum();
        assert!(
            (lo..=hi).contains(&got),
            "epsilon {}: {} uniform draws outside 99% CI [{}, {}]",
            eps,
            got,
            lo,
            hi
        );
    }

    println!("criterion 5 PASS: KL<1e-9, lambda<1e-10 (1000 cases), min exact, eps-rate in 99% CI");
}

// ---------------------------------------------------------------- criterion 6

fn collect_grads(
    g: &Graph<f64>,
    grads: &[Option<Tensor<f64>>],
    store: &ParamStore<f64>,
    filter: impl Fn(&str) -> bool,
) -> BTreeMap<String, Tensor<f64>> {
    let mut out = BTreeMap::new();
    for name in store.names().map(|s| s.to_string()).collect::<Vec<_>>() {
        if !filter(&name) {
            continue;
        }
        if let Some(t) = g.param_grad(grads, &name) {
            out.insert(name, t.clone());
        }
    }
    out
}

fn tiny_batch(model: &WorldModel<f64>, b: usize, h: usize, seed: u64) -> Vec<Trajectory<f64>> {
    let mut r = RngStream::new(seed).derive("batch");
    (0..b)
        .map(|i| Trajectory {
            k: 1 + i % model.cfg.num_tasks,
            obs: (0..h)
                .map(|_| r.uniform_tensor::<f64>(&[model.cfg.obs_pixels], 0.0, 1.0))
                .collect(),
            actions: (0..h)
                .map(|_| [r.uniform_range(-1.0, 1.0), r.uniform_range(-1.0, 1.0)])
                .collect(),
            rewards: (0..h).map(|_| r.uniform_range(-1.0, 1.0)).collect(),
        })
        .collect()
}

fn tiny_snapshot(seed: u64) -> AgentSnapshot<f64> {
    let mcfg = ModelConfig::tiny(2);
    let model: WorldModel<f64> = WorldModel::new(mcfg.clone(), &RngStream::new(seed));
    let mut gcfg = GenConfig::tiny(2);
    gcfg.obs_pixels = mcfg.obs_pixels;
    let generator = Generator::new(gcfg, &RngStream::new(seed + 1));
    let bcfg = BehaviorConfig::tiny();
    let input = mcfg.z_dim + mcfg.h_dim + mcfg.embed_dim;
    let actor = Actor::new(input, mcfg.action_dim, &bcfg, &RngStream::new(seed + 2));
    let critic = Critic::new(input, &bcfg, &RngStream::new(seed + 3));
    AgentSnapshot::capture(&model, &generator, &actor, &critic)
}

#[test]
fn criterion_6_gradient_suite() {
    let cfg = ModelConfig::tiny(2);
    let mut worst: f64 = 0.0;

    // Eq. dynamic: full world loss
    {
        let mut model: WorldModel<f64> = WorldModel::new(cfg.clone(), &RngStream::new(20));
        let batch = tiny_batch(&model, 2, 3, 21);
        let mut g = Graph::new();
        let mut rng = RngStream::new(22).derive("wl");
        let loss = model.world_loss_graph(&mut g, &batch, 1.0, &mut rng);
        let grads = g.backward(loss.total);
        let analytic = collect_grads(&g, &grads, &model.store, |_| true);
        let mcfg = model.cfg.clone();
        let bc = batch.clone();
        let err = grad_check(&mut model.store, &analytic, |s| {
            let m = WorldModel::with_store(mcfg.clone(), s.frozen_copy());
            let mut g = Graph::new();
            let mut rng = RngStream::new(22).derive("wl");
            let l = m.world_loss_graph(&mut g, &bc, 1.0, &mut rng);
            g.value(l.total).item()
        });
        assert!(err < 1e-4, "world loss grad error {}", err);
        worst = worst.max(err);
    }

    // Eq. dynamic_replay: reward head grad-checks against the augmented loss,
    // and the stop-gradient keeps encoder/transition gradients exactly equal
    // to the delta=0 case
    {
        let mut model: WorldModel<f64> = WorldModel::new(cfg.clone(), &RngStream::new(23));
        let batch = tiny_batch(&model, 2, 3, 24);
        let grads_at = |model: &WorldModel<f64>, delta: f64| {
            let mut g = Graph::new();
            let mut rng = RngStream::new(25).derive("aug");
            let loss = model.world_loss_augmented_graph(&mut g, &batch, 1.0, delta, &mut rng);
            let grads = g.backward(loss.total);
            let all = collect_grads(&g, &grads, &model.store, |_| true);
            all
        };
        let g0 = grads_at(&model, 0.0);
        let g1 = grads_at(&model, 0.5);
        for (name, a) in &g0 {
            if name.starts_with("wm/rew/") {
                continue;
            }
            let b = &g1[name];
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12, "{}: stop-gradient leak {} vs {}", name, x, y);
            }
        }
        let rew_moved = g0["wm/rew/l2/w"]
            .data()
            .iter()
            .zip(g1["wm/rew/l2/w"].data())
            .any(|(a, b)| (a - b).abs() > 1e-10);
        assert!(rew_moved, "delta term must reach the reward head");

        let mut g = Graph::new();
        let mut rng = RngStream::new(25).derive("aug");
        let loss = model.world_loss_augmented_graph(&mut g, &batch, 1.0, 0.5, &mut rng);
        let grads = g.backward(loss.total);
        let analytic = collect_grads(&g, &grads, &model.store, |n| n.starts_with("wm/rew/"));
        let mcfg = model.cfg.clone();
        let bc = batch.clone();
        let err = grad_check(&mut model.store, &analytic, |s| {
            let m = WorldModel::with_store(mcfg.clone(), s.frozen_copy());
            let mut g = Graph::new();
            let mut rng = RngStream::new(25).derive("aug");
            let l = m.world_loss_augmented_graph(&mut g, &bc, 1.0, 0.5, &mut rng);
            g.value(l.total).item()
        });
        assert!(err < 1e-4, "augmented loss grad error {}", err);
        worst = worst.max(err);
    }

    // Eq. G_loss
    {
        let mut gcfg = GenConfig::tiny(3);
        gcfg.obs_pixels = 16;
        let mut gen: Generator<f64> = Generator::new(gcfg, &RngStream::new(26));
        let mut r = RngStream::new(27).derive("gf");
        let groups: Vec<FrameGroup<f64>> = [1usize, 2]
            .iter()
            .map(|&k| FrameGroup {
                k,
                frames: (0..2).map(|_| r.uniform_tensor::<f64>(&[16], 0.0, 1.0)).collect(),
            })
            .collect();
        let mut g = Graph::new();
        let mut rng = RngStream::new(28).derive("gl");
        let loss = gen.gen_loss_graph(&mut g, &groups, 0.1, &mut rng);
        let grads = g.backward(loss.total);
        let analytic = collect_grads(&g, &grads, &gen.store, |_| true);
        let cfg_c = gen.cfg.clone();
        let groups_c = groups.clone();
        let err = grad_check(&mut gen.store, &analytic, |s| {
            let m = Generator::with_store(cfg_c.clone(), s.frozen_copy());
            let mut g = Graph::new();
            let mut rng = RngStream::new(28).derive("gl");
            let l = m.gen_loss_graph(&mut g, &groups_c, 0.1, &mut rng);
            g.value(l.total).item()
        });
        assert!(err < 1e-4, "generator loss grad error {}", err);
        worst = worst.max(err);
    }

    // actor and critic losses
    {
        let model: WorldModel<f64> = WorldModel::new(cfg.clone(), &RngStream::new(29));
        let bcfg = BehaviorConfig::tiny();
        let input = cfg.z_dim + cfg.h_dim + cfg.embed_dim;
        let mut actor = Actor::new(input, cfg.action_dim, &bcfg, &RngStream::new(30));
        let mut critic = Critic::new(input, &bcfg, &RngStream::new(31));
        let mut sr = RngStream::new(32).derive("st");
        let starts = LatentState {
            z: sr.normal_tensor(&[2, cfg.z_dim]),
            h: sr.normal_tensor(&[2, cfg.h_dim]),
        };
        let ks = vec![1usize, 2];

        let actor_loss = |actor: &Actor<f64>, critic: &Critic<f64>, g: &mut Graph<f64>| {
            let mut rng = RngStream::new(33).derive("im");
            let roll = mixworld::behavior::imagine(g, &model, actor, &starts, &ks, bcfg.horizon, &mut rng);
            let l = bcfg.horizon;
            let values: Vec<NodeId> = (0..l)
                .map(|t| {
                    let idx = if t + 1 < roll.states.len() { t + 1 } else { t };
                    critic.value_node(g, roll.states[idx], roll.emb)
                })
                .collect();
            let targets = lambda_returns_nodes(g, &roll.rewards[..l], &values, bcfg.gamma, bcfg.lambda);
            let means: Vec<NodeId> = targets.iter().map(|&t| g.mean(t)).collect();
            let mut acc = means[0];
            for &m in &means[1..] {
                acc = g.add(acc, m);
            }
            let s = g.scale(acc, 1.0 / means.len() as f64);
            (g.neg(s), targets, roll)
        };

        // actor gradient
        let mut g = Graph::new();
        let (aloss, _, _) = actor_loss(&actor, &critic, &mut g);
        let grads = g.backward(aloss);
        let analytic = collect_grads(&g, &grads, &actor.store, |_| true);
        let ad = actor.action_dim;
        let floor = actor.std_floor;
        let critic_ref = &critic;
        let err = grad_check(&mut actor.store, &analytic, |s| {
            let a = Actor { store: s.frozen_copy(), action_dim: ad, std_floor: floor };
            let mut g = Graph::new();
            let (l, _, _) = actor_loss(&a, critic_ref, &mut g);
            g.value(l).item()
        });
        assert!(err < 1e-4, "actor loss grad error {}", err);
        worst = worst.max(err);

        // critic gradient: the stop-gradient makes the training loss a plain
        // regression onto constant targets, so pin the targets as tensors
        let mut tr = RngStream::new(34).derive("tg");
        let pin_z = tr.normal_tensor::<f64>(&[4, cfg.z_dim]);
        let pin_h = tr.normal_tensor::<f64>(&[4, cfg.h_dim]);
        let pin_emb = tr.normal_tensor::<f64>(&[4, cfg.embed_dim]);
        let pin_tgt = tr.normal_tensor::<f64>(&[4, 1]);
        let critic_loss = |critic: &Critic<f64>, g: &mut Graph<f64>| {
            let z = g.constant(pin_z.clone());
            let h = g.constant(pin_h.clone());
            let emb = g.constant(pin_emb.clone());
            let v = critic.value_node(g, mixworld::worldmodel::LatentNodes { z, h }, emb);
            let tgt = g.constant(pin_tgt.clone());
            let d = g.sub(v, tgt);
            let sq = g.square(d);
            let m = g.mean(sq);
            g.scale(m, 0.5)
        };
        let mut g = Graph::new();
        let closs = critic_loss(&critic, &mut g);
        let grads = g.backward(closs);
        let analytic = collect_grads(&g, &grads, &critic.store, |_| true);
        let err = grad_check(&mut critic.store, &analytic, |s| {
            let c = Critic { store: s.frozen_copy(), prefix: "v".into() };
            let mut g = Graph::new();
            let l = critic_loss(&c, &mut g);
            g.value(l).item()
        });
        assert!(err < 1e-4, "critic loss grad error {}", err);
        worst = worst.max(err);
    }

    println!("criterion 6 PASS: all losses grad-check at 64-bit, max relative error {:.2e}", worst);
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_reproducibility() {
    let text = r#"{"version":1,"pipeline":"control","seed":11,"num_tasks":2,
        "model":{"z_dim":3,"h_dim":6,"embed_dim":2,"enc_hidden":[32,16],"head_hidden":16,"std_floor":0.1},
        "control":{"env_steps_per_task":300,"episode_length":20,"train_every":100,
                   "batch_size":4,"seq_len":5,"eval_episodes":2,"recent_buffer":8,"horizon":3}}"#;
    let cfg = mixworld::config::RunConfig::from_json(text).unwrap();
    let d1 = std::env::temp_dir().join("mixworld-acc8-a");
    let d2 = std::env::temp_dir().join("mixworld-acc8-b");
    let _ = std::fs::remove_dir_all(&d1);
    let _ = std::fs::remove_dir_all(&d2);
    pipeline::execute(&cfg, text, &d1, false).unwrap();
    pipeline::execute(&cfg, text, &d2, false).unwrap();
    let a = std::fs::read(d1.join("seed11/metrics.csv")).unwrap();
    let b = std::fs::read(d2.join("seed11/metrics.csv")).unwrap();
    assert_eq!(a, b, "metrics CSV must be byte-identical across repeated runs");
    let rows = read_csv(&d1.join("seed11/metrics.csv")).unwrap();
    assert!(!rows.is_empty());
    let _ = std::fs::remove_dir_all(&d1);
    let _ = std::fs::remove_dir_all(&d2);
    println!("criterion 8 PASS: repeated run produced byte-identical metrics CSV ({} bytes)", a.len());
}

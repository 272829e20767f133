//! Scratch probe: actor-critic learning against a frozen, well-trained world
//! model. If predicted targets rise while real returns fall, the actor is
//! exploiting the model; if targets fall, the update direction is wrong.

use mixworld::behavior::{
    actor_critic_update, imagine, lambda_returns_nodes, Actor, BehaviorConfig, Critic,
};
use mixworld::envs::{make_task_stream, reset_state, step, Trajectory};
use mixworld::substrate::{Graph, RngStream};
use mixworld::worldmodel::{LatentState, ModelConfig, WorldModel};

fn random_episode(spec: &mixworld::envs::TaskSpec, len: usize, rng: &mut RngStream) -> Trajectory<f32> {
    let mut state = reset_state(rng);
    let (mut obs, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..len {
        let a = if t == 0 {
            [0.0, 0.0]
        } else if t % 5 == 1 || actions.is_empty() {
            [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)]
        } else {
            *actions.last().unwrap()
        };
        let (next, o, r) = step::<f32>(&state, a, spec);
        state = next;
        obs.push(o);
        actions.push(a);
        rewards.push(r);
    }
    Trajectory { k: 1, obs, actions, rewards }
}

fn eval_policy(
    model: &WorldModel<f32>,
    actor: &Actor<f32>,
    spec: &mixworld::envs::TaskSpec,
    rng: &mut RngStream,
) -> f64 {
    let mut total = 0.0;
    for _ in 0..5 {
        let mut state = reset_state(rng);
        let mut lat = model.initial_latent(1);
        for t in 0..50 {
            let a = if t == 0 { [0.0, 0.0] } else { actor.act(model, &lat, 1, false, rng) };
            let (next, o, r) = step::<f32>(&state, a, spec);
            lat = model.posterior_mean_step(std::slice::from_ref(&o), &lat, &[a], &[1]);
            state = next;
            total += r;
        }
    }
    total / 5.0
}

fn main() {
    let which: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let tasks = make_task_stream("slope4", 4, 0).unwrap();
    let mut spec = tasks[which - 1].clone();
    spec.k = 1;
    let mut rng = RngStream::new(9).derive("prb3");
    let data: Vec<Trajectory<f32>> = (0..100).map(|_| random_episode(&spec, 50, &mut rng)).collect();

    // world model: 800 offline updates on random data
    let mut model: WorldModel<f32> = WorldModel::new(ModelConfig::desk(1), &rng.derive("init"));
    for u in 0..1500 {
        let mut ur = rng.derive(&format!("u{}", u));
        let batch: Vec<Trajectory<f32>> = (0..16)
            .map(|_| {
                let e = &data[ur.usize_below(data.len())];
                let s = ur.usize_below(e.len() - 10);
                e.slice(s, 10)
            })
            .collect();
        let mut g = Graph::new();
        let loss = model.world_loss_graph(&mut g, &batch, 0.03, &mut ur.derive("l"));
        let grads = g.backward(loss.total);
        g.accumulate_param_grads(&grads, &mut model.store, |_| true);
        model.store.adam_step(1e-3, 0.9, 0.999, 1e-8).unwrap();
    }
    println!("model trained");

    // fixed evaluation starts for tracking the in-model objective
    let fixed = {
        let mut fr = rng.derive("fixed");
        let batch: Vec<Trajectory<f32>> = (0..16)
            .map(|_| {
                let e = &data[fr.usize_below(data.len())];
                let s = fr.usize_below(e.len() - 10);
                e.slice(s, 10)
            })
            .collect();
        let lat_steps = model.filter_posterior_samples(&batch, &mut fr.derive("f"));
        let (mut z, mut h) = (Vec::new(), Vec::new());
        for i in 0..16 {
            let t = fr.usize_below(lat_steps.len());
            z.extend_from_slice(lat_steps[t].z.row(i));
            h.extend_from_slice(lat_steps[t].h.row(i));
        }
        LatentState {
            z: mixworld::substrate::Tensor::from_vec(vec![16, model.cfg.z_dim], z),
            h: mixworld::substrate::Tensor::from_vec(vec![16, model.cfg.h_dim], h),
        }
    };
    let mut bcfg = BehaviorConfig::desk();
    if let Some(g) = std::env::args().nth(2) { bcfg.gamma = g.parse().unwrap(); }
    if let Some(lr) = std::env::args().nth(3) { bcfg.actor_lr = lr.parse().unwrap(); bcfg.critic_lr = lr.parse().unwrap(); }
    let input = model.cfg.z_dim + model.cfg.h_dim + model.cfg.embed_dim;
    let mut actor = Actor::new(input, 2, &bcfg, &rng.derive("actor"));
    let mut critic = Critic::new(input, &bcfg, &rng.derive("critic"));

    for u in 0..600 {
        let mut ur = rng.derive(&format!("b{}", u));
        // diverse starts: posterior samples from random-data slices
        let batch: Vec<Trajectory<f32>> = (0..16)
            .map(|_| {
                let e = &data[ur.usize_below(data.len())];
                let s = ur.usize_below(e.len() - 10);
                e.slice(s, 10)
            })
            .collect();
        let lat_steps = model.filter_posterior_samples(&batch, &mut ur.derive("f"));
        let (mut z, mut h, mut ks) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..bcfg.batch {
            let t = ur.usize_below(lat_steps.len());
            let row = ur.usize_below(batch.len());
            z.extend_from_slice(lat_steps[t].z.row(row));
            h.extend_from_slice(lat_steps[t].h.row(row));
            ks.push(1usize);
        }
        let start = LatentState {
            z: mixworld::substrate::Tensor::from_vec(vec![bcfg.batch, model.cfg.z_dim], z),
            h: mixworld::substrate::Tensor::from_vec(vec![bcfg.batch, model.cfg.h_dim], h),
        };
        let stats = actor_critic_update(
            &model, &mut actor, &mut critic, None, &start, &ks, None, &bcfg, &mut ur.derive("acu"),
        )
        .unwrap();
        if u % 100 == 0 {
            let ret = eval_policy(&model, &actor, &spec, &mut rng.derive(&format!("e{}", u)));
            // in-model objective on the fixed batch: mean imagined reward sum
            // (critic-free, so actor progress is not confounded by critic drift)
            let mut g = Graph::new();
            let mut fr = rng.derive("fixedeval");
            let ks16 = vec![1usize; 16];
            let roll = imagine(&mut g, &model, &actor, &fixed, &ks16, bcfg.horizon, &mut fr);
            let mut acc = 0.0;
            for &r in &roll.rewards {
                let v = g.value(r).clone();
                acc += v.sum() as f64 / 16.0;
            }
            let vals: Vec<_> = (0..bcfg.horizon)
                .map(|t| critic.value_node(&mut g, roll.states[t], roll.emb))
                .collect();
            let tg = lambda_returns_nodes(&mut g, &roll.rewards, &vals, bcfg.gamma, bcfg.lambda);
            let t0 = g.value(tg[0]).clone();
            println!(
                "upd {:3} mean_target {:7.2} critic_loss {:8.4} imag_reward_sum {:7.2} fixed_t0 {:7.2} real_return {:7.1}",
                u, stats.mean_target, stats.critic_loss, acc,
                t0.sum() as f64 / 16.0, ret
            );
        }
    }
    let ret = eval_policy(&model, &actor, &spec, &mut rng.derive("fin"));
    println!("final real return {:.1}", ret);

    // model-based action ranking from a known state: does the model prefer
    // moving toward the goal, and does the actor agree?
    let cands: [[f64; 2]; 5] = [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
    for &pos in &[[0.5, 0.3], [0.8, 0.8], [0.2, 0.2]] {
        let mut st = mixworld::envs::EnvState::new(pos);
        let mut lat = model.initial_latent(1);
        // warm up the filter at rest so the latent encodes the position
        for _ in 0..5 {
            let (next, o, _r) = step::<f32>(&st, [0.0, 0.0], &spec);
            lat = model.posterior_mean_step(std::slice::from_ref(&o), &lat, &[[0.0, 0.0]], &[1]);
            st = next;
        }
        print!("pos {:?} goal {:?}:", pos, spec.goal);
        for a in cands {
            let mut l = lat.clone();
            let mut acc = 0.0;
            for _ in 0..10 {
                let (pd, wh) = model.prior(&l, &[a], &[1]);
                l = LatentState { z: pd.mean.clone(), h: wh.h };
                acc += model.reward_values(&l, &[1])[0];
            }
            print!(" ({:+.0},{:+.0})={:6.2}", a[0], a[1], acc);
        }
        let chosen = actor.act(&model, &lat, 1, false, &mut rng.derive("act"));
        println!("  actor ({:+.2},{:+.2})", chosen[0], chosen[1]);
    }
}

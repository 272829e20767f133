//! Scratch probe: offline world-model fit on random-policy data for one task.

use mixworld::envs::{make_task_stream, reset_state, step, Trajectory};
use mixworld::substrate::RngStream;
use mixworld::worldmodel::{ModelConfig, WorldModel};

fn random_episode(spec: &mixworld::envs::TaskSpec, len: usize, rng: &mut RngStream) -> Trajectory<f32> {
    let mut state = reset_state(rng);
    let (mut obs, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..len {
        let a = if t == 0 {
            [0.0, 0.0]
        } else {
            [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)]
        };
        let (next, o, r) = step::<f32>(&state, a, spec);
        state = next;
        obs.push(o);
        actions.push(a);
        rewards.push(r);
    }
    Trajectory { k: 1, obs, actions, rewards }
}

fn main() {
    let which: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let updates: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let alpha: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let free: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let tasks = make_task_stream("slope4", 4, 0).unwrap();
    let mut spec = tasks[which - 1].clone();
    spec.k = 1;
    let mut rng = RngStream::new(7).derive("prb2");
    let data: Vec<Trajectory<f32>> = (0..100).map(|_| random_episode(&spec, 50, &mut rng)).collect();

    let _ = free;
    let mut model: WorldModel<f32> = WorldModel::new(ModelConfig::desk(1), &rng.derive("init"));
    for u in 0..updates {
        let mut ur = rng.derive(&format!("u{}", u));
        let batch: Vec<Trajectory<f32>> = (0..16)
            .map(|_| {
                let e = &data[ur.usize_below(data.len())];
                let s = ur.usize_below(e.len() - 10);
                e.slice(s, 10)
            })
            .collect();
        let mut g = mixworld::substrate::Graph::new();
        let loss = model.world_loss_graph(&mut g, &batch, alpha, &mut ur.derive("l"));
        let grads = g.backward(loss.total);
        g.accumulate_param_grads(&grads, &mut model.store, |_| true);
        model.store.adam_step(1e-3, 0.9, 0.999, 1e-8).unwrap();
        if u % 100 == 0 {
            println!(
                "upd {:4} total {:.3} recon {:.3} reward {:.4} kl {:.4}",
                u,
                g.value(loss.total).item(),
                g.value(loss.recon).item(),
                g.value(loss.reward).item(),
                g.value(loss.kl).item()
            );
        }
    }

    // correlation between predicted and true reward along held-out episodes
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for _ in 0..10 {
        let e = random_episode(&spec, 50, &mut rng);
        let mut lat = model.initial_latent(1);
        for t in 0..e.len() {
            lat = model.posterior_mean_step(
                std::slice::from_ref(&e.obs[t]),
                &lat,
                &[e.actions[t]],
                &[1],
            );
            xs.push(model.reward_values(&lat, &[1])[0]);
            ys.push(e.rewards[t]);
        }
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
    let (vx, vy) = (
        xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n,
        ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n,
    );
    println!(
        "reward corr {:.3} rmse {:.3} (reward std {:.3})",
        cov / (vx.sqrt() * vy.sqrt()),
        xs.iter().zip(&ys).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n,
        vy.sqrt()
    );

    // open-loop prior quality: encode 5 frames, imagine 5 with true actions
    let (mut oxs, mut oys) = (Vec::new(), Vec::new());
    for _ in 0..20 {
        let e = random_episode(&spec, 12, &mut rng);
        let mut lat = model.initial_latent(1);
        for t in 0..5 {
            lat = model.posterior_mean_step(
                std::slice::from_ref(&e.obs[t]),
                &lat,
                &[e.actions[t]],
                &[1],
            );
        }
        for t in 5..10 {
            let (pd, wh) = model.prior(&lat, &[e.actions[t]], &[1]);
            lat = mixworld::worldmodel::LatentState { z: pd.mean.clone(), h: wh.h };
            oxs.push(model.reward_values(&lat, &[1])[0]);
            oys.push(e.rewards[t]);
        }
    }
    let n = oxs.len() as f64;
    let (mx, my) = (oxs.iter().sum::<f64>() / n, oys.iter().sum::<f64>() / n);
    let cov: f64 = oxs.iter().zip(&oys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
    let (vx, vy) = (
        oxs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n,
        oys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n,
    );
    println!(
        "open-loop reward corr {:.3} mse {:.4}",
        cov / (vx.sqrt() * vy.sqrt()),
        oxs.iter().zip(&oys).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n
    );
}

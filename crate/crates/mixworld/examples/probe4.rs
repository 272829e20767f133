//! Scratch: single-task full-pipeline training on a chosen slope4 task.
use mixworld::envs::{make_task_stream, reset_state, step, TaskSpec, Trajectory};
use mixworld::substrate::RngStream;
use mixworld::training::{train_continual, Ablation, ContinualConfig};
use mixworld::worldmodel::WorldModel;

fn reward_corr(model: &WorldModel<f32>, spec: &TaskSpec, rng: &mut RngStream) -> f64 {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for _ in 0..10 {
        let mut state = reset_state(rng);
        let mut lat = model.initial_latent(1);
        let mut prev = [0.0, 0.0];
        for t in 0..50 {
            let a = if t == 0 { [0.0, 0.0] } else { [rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)] };
            let (next, o, r) = step::<f32>(&state, a, spec);
            state = next;
            lat = model.posterior_mean_step(std::slice::from_ref(&o), &lat, &[a], &[spec.k]);
            xs.push(model.reward_values(&lat, &[spec.k])[0]);
            ys.push(r);
            prev = a;
        }
        let _ = prev;
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
    let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
    let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
    cov / (vx.sqrt() * vy.sqrt())
}

fn main() -> anyhow::Result<()> {
    let idxs: Vec<usize> = std::env::args()
        .nth(1)
        .unwrap_or("1".into())
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    let seed: u64 = std::env::args().nth(2).unwrap_or("0".into()).parse()?;
    let mode = std::env::args().nth(3).unwrap_or_default();
    let mut ab = Ablation::full();
    if mode == "noreplay" { ab.replay = false; }
    if mode == "noaug" { ab.action_aug = false; }
    if mode == "novreg" { ab.v_reg = false; }
    let mut cfg = ContinualConfig::desk(4, ab);
    if let Some(b) = std::env::args().nth(4) { cfg.batch_size = b.parse()?; }
    if let Some(e) = std::env::args().nth(5) { cfg.behavior.entropy_weight = e.parse()?; }
    if let Some(h) = std::env::args().nth(6) {
        let h: usize = h.parse()?;
        cfg.behavior.actor_hidden = h;
        cfg.behavior.critic_hidden = h;
    }
    if let Some(lr) = std::env::args().nth(7) { cfg.behavior.critic_lr = lr.parse()?; }
    let tasks = make_task_stream("slope4", 4, 0)?;
    let one: Vec<_> = idxs.iter().map(|&i| tasks[i].clone()).collect();
    let out = train_continual::<f32>(&cfg, &one, seed, None)?;
    let ep: Vec<f64> = out
        .rows
        .iter()
        .filter(|r| r.metric == "episode_return")
        .map(|r| r.value)
        .collect();
    let n = (ep.len() / 8).max(1);
    for i in (0..ep.len()).step_by(n) {
        let c = &ep[i..(i + n).min(ep.len())];
        println!("ep {:3} mean {:.1}", i, c.iter().sum::<f64>() / c.len() as f64);
    }
    for (k, v) in &out.returns {
        println!("eval {:?}: {:?}", k, v);
    }
    let mut drng = RngStream::new(99).derive("diag");
    // greedy rollout trace on each task with the final agent
    let snap = out.snapshots.last().unwrap();
    for spec in &one {
        let mut state = reset_state(&mut drng);
        let mut lat = snap.model.initial_latent(1);
        print!("task {} goal {:?} trace:", spec.k, spec.goal);
        for t in 0..12 {
            let a = if t == 0 {
                [0.0, 0.0]
            } else {
                snap.actor.act(&snap.model, &lat, spec.k, false, &mut drng)
            };
            let (next, o, _r) = step::<f32>(&state, a, spec);
            lat = snap.model.posterior_mean_step(std::slice::from_ref(&o), &lat, &[a], &[spec.k]);
            print!(" p({:.2},{:.2})a({:+.2},{:+.2})", state.pos[0], state.pos[1], a[0], a[1]);
            state = next;
        }
        println!();
    }
    for spec in &one {
        let snap = out.snapshots.last().unwrap();
        println!(
            "final model reward corr task {}: {:.3}",
            spec.k,
            reward_corr(&snap.model, spec, &mut drng)
        );
    }
    Ok(())
}

//! Scratch probe: single-task learning on each slope4 task in isolation.

use mixworld::envs::{make_task_stream, reset_state, step};
use mixworld::substrate::RngStream;
use mixworld::training::{train_continual, Ablation, ContinualConfig, ContinualOutcome};

fn main() {
    let tasks = make_task_stream("slope4", 4, 0).unwrap();
    let which: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut spec = tasks[which - 1].clone();
    spec.k = 1; // train it as component 1 so a 1-component config fits
    let mut cfg = ContinualConfig::desk(1, Ablation::full());
    if let Some(ew) = std::env::args().nth(2).and_then(|s| s.parse().ok()) {
        cfg.behavior.entropy_weight = ew;
    }
    let out: ContinualOutcome<f32> = train_continual(&cfg, &[spec], 0, None).unwrap();
    let er: Vec<f64> = out
        .rows
        .iter()
        .filter(|r| r.metric == "episode_return")
        .map(|r| r.value)
        .collect();
    let c = er.len() / 8;
    for i in (0..er.len() - c + 1).step_by(c) {
        let m: f64 = er[i..i + c].iter().sum::<f64>() / c as f64;
        println!("ep {:3} mean {:.1}", i, m);
    }
    let mt: Vec<f64> = out
        .rows
        .iter()
        .filter(|r| r.metric == "mean_target")
        .map(|r| r.value)
        .collect();
    let c = mt.len() / 8;
    for i in (0..mt.len() - c + 1).step_by(c) {
        let m: f64 = mt[i..i + c].iter().sum::<f64>() / c as f64;
        println!("upd {:3} mean_target {:.2}", i, m);
    }
    println!("final eval {:.2}", out.returns[&(1, 1)]);

    // greedy rollout trace
    let spec = {
        let tasks = make_task_stream("slope4", 4, 0).unwrap();
        let mut sp = tasks[which - 1].clone();
        sp.k = 1;
        sp
    };
    let mut rng = RngStream::new(123).derive("trace");
    let mut state = reset_state(&mut rng);
    let mut lat = out.agent.model.initial_latent(1);
    println!("goal {:?}", spec.goal);
    for t in 0..50 {
        let a = if t == 0 {
            [0.0, 0.0]
        } else {
            out.agent.actor.act(&out.agent.model, &lat, 1, false, &mut rng)
        };
        let (next, o, r) = step::<f32>(&state, a, &spec);
        lat = out.agent.model.posterior_mean_step(std::slice::from_ref(&o), &lat, &[a], &[1]);
        state = next;
        if t % 5 == 0 {
            println!(
                "t {:2} pos ({:.2},{:.2}) vel ({:.2},{:.2}) a ({:.2},{:.2}) r {:.2}",
                t, state.pos[0], state.pos[1], state.vel[0], state.vel[1], a[0], a[1], r
            );
            let rhat = out.agent.model.reward_values(&lat, &[1])[0];
            let v = out.agent.critic.value(&out.agent.model, &lat, 1);
            println!("      rhat {:.2} v {:.2}", rhat, v);
        }
    }
}

//! Experiment runner: takes a validated [`RunConfig`] and produces an
//! artifact directory containing a manifest, per-seed metrics CSVs, summary
//! JSONs, and checkpoints. All heavy lifting lives in the training module;
//! this file only orchestrates seeds, variants, and files.

use crate::config::{config_hash, Pipeline, RunConfig};
use crate::envs::{make_motion_stream, make_task_stream};
use crate::metrics::{forgetting, metric_matrix, read_csv, write_csv, MetricRow};
use crate::training::{train_continual, train_forecast, Ablation, ContinualOutcome, ForecastOutcome};
use anyhow::{Context, Result};
use serde_json::json;
use std::collections::BTreeMap;
use std::path::Path;

/// The ablation table rows, cumulative from the no-replay agent to the full
/// method: baseline, +Replay, +epsilon, +actionAug, +vReg.
pub fn table_ablations() -> Vec<(&'static str, Ablation)> {
    let off = Ablation {
        mixture: true,
        replay: false,
        eps_explore: false,
        action_aug: false,
        v_reg: false,
    };
    vec![
        ("baseline", off),
        ("replay", Ablation { replay: true, ..off }),
        ("replay_eps", Ablation { replay: true, eps_explore: true, ..off }),
        (
            "replay_eps_aaug",
            Ablation { replay: true, eps_explore: true, action_aug: true, ..off },
        ),
        ("full", Ablation::full()),
    ]
}

fn matrix_json(m: &BTreeMap<(usize, usize), f64>) -> serde_json::Value {
    let entries: Vec<serde_json::Value> = m
        .iter()
        .map(|(&(i, j), &v)| json!({"trained_task": i, "eval_task": j, "value": v}))
        .collect();
    json!(entries)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn emit_plot_data(dir: &Path, rows: &[MetricRow]) -> Result<()> {
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let curves: Vec<MetricRow> =
        rows.iter().filter(|r| r.metric == "episode_return").cloned().collect();
    write_csv(&plots.join("reward_curves.csv"), &curves)?;
    let drift: Vec<MetricRow> =
        rows.iter().filter(|r| r.metric == "overestimate").cloned().collect();
    write_csv(&plots.join("value_drift.csv"), &drift)?;
    Ok(())
}

fn run_control_seed(
    cfg: &RunConfig,
    ablation: Ablation,
    seed: u64,
    dir: &Path,
    emit_plots: bool,
) -> Result<ContinualOutcome<f32>> {
    std::fs::create_dir_all(dir)?;
    let tasks = make_task_stream(&cfg.preset, cfg.num_tasks, seed)?;
    let ccfg = cfg.continual(ablation);
    let out = train_continual::<f32>(&ccfg, &tasks, seed, Some(dir))?;
    write_csv(&dir.join("metrics.csv"), &out.rows)?;
    let final_task = tasks.last().unwrap().k;
    let avg: f64 = tasks.iter().map(|t| out.returns[&(final_task, t.k)]).sum::<f64>()
        / tasks.len() as f64;
    let forg = forgetting(&out.returns, cfg.num_tasks);
    write_json(
        &dir.join("summary.json"),
        &json!({
            "pipeline": "control",
            "seed": seed,
            "returns": matrix_json(&out.returns),
            "final_average_return": avg,
            "forgetting": forg,
        }),
    )?;
    if emit_plots {
        emit_plot_data(dir, &out.rows)?;
    }
    Ok(out)
}

fn run_forecast_seed(
    cfg: &RunConfig,
    ablation: Ablation,
    seed: u64,
    dir: &Path,
    emit_plots: bool,
) -> Result<ForecastOutcome<f32>> {
    std::fs::create_dir_all(dir)?;
    let motions = make_motion_stream(cfg.num_tasks);
    let fcfg = cfg.forecasting(ablation);
    let out = train_forecast::<f32>(&fcfg, &motions, seed, Some(dir))?;
    write_csv(&dir.join("metrics.csv"), &out.rows)?;
    write_json(
        &dir.join("summary.json"),
        &json!({
            "pipeline": "forecast",
            "seed": seed,
            "psnr": matrix_json(&out.psnr),
        }),
    )?;
    if emit_plots {
        emit_plot_data(dir, &out.rows)?;
    }
    Ok(out)
}

/// Execute the configured pipeline into `out`; `config_text` is the
/// post-override JSON actually used, stored verbatim for reproducibility.
pub fn execute(cfg: &RunConfig, config_text: &str, out: &Path, emit_plots: bool) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.json"), config_text)?;
    let seeds = cfg.all_seeds();
    write_json(
        &out.join("manifest.json"),
        &json!({
            "version": crate::config::CONFIG_VERSION,
            "pipeline": format!("{:?}", cfg.pipeline).to_lowercase(),
            "config_hash": format!("{:016x}", config_hash(config_text)),
            "seeds": seeds,
        }),
    )?;

    match cfg.pipeline {
        Pipeline::Control => {
            for &seed in &seeds {
                let dir = out.join(format!("seed{}", seed));
                run_control_seed(cfg, cfg.ablation.clone().into(), seed, &dir, emit_plots)?;
            }
        }
        Pipeline::Forecast => {
            for &seed in &seeds {
                let dir = out.join(format!("seed{}", seed));
                run_forecast_seed(cfg, cfg.ablation.clone().into(), seed, &dir, emit_plots)?;
            }
        }
        Pipeline::Ablation => {
            let mut summary = Vec::new();
            for (name, ablation) in table_ablations() {
                let mut avgs = Vec::new();
                for &seed in &seeds {
                    let dir = out.join(format!("variant_{}", name)).join(format!("seed{}", seed));
                    run_control_seed(cfg, ablation, seed, &dir, emit_plots)?;
                    let rows = read_csv(&dir.join("metrics.csv"))?;
                    let m = metric_matrix(&rows, "eval", "return");
                    let finals: Vec<f64> = (1..=cfg.num_tasks)
                        .filter_map(|j| m.get(&(cfg.num_tasks, j)).copied())
                        .collect();
                    avgs.push(finals.iter().sum::<f64>() / finals.len() as f64);
                }
                let mean = avgs.iter().sum::<f64>() / avgs.len() as f64;
                summary.push(json!({
                    "variant": name,
                    "per_seed_final_average_return": avgs,
                    "mean_final_average_return": mean,
                }));
            }
            write_json(&out.join("summary.json"), &json!({"ablations": summary}))?;
        }
    }
    Ok(())
}

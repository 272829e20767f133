//! Evaluation metrics and the run log format.
//!
//! All quantitative results flow through [`MetricRow`] records and a flat
//! CSV file with the fixed header `phase,trained_task,eval_task,seed,step,
//! metric,value`; floats are written with Rust's shortest round-trip
//! formatting so a parsed file reproduces the values bit for bit.

use crate::envs::OBS_SIZE;
use crate::substrate::{Scalar, Tensor};
use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// PSNR in dB for frames in [0, 1]; clamped to 99 dB for near-exact matches.
pub fn psnr<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> f64 {
    assert_eq!(pred.numel(), target.numel());
    let n = pred.numel() as f64;
    let mse: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| {
            let d = a.to_f64() - b.to_f64();
            d * d
        })
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        99.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WINDOW: usize = 8;

/// Mean SSIM over non-overlapping 8x8 windows of a 16x16 frame.
pub fn ssim<F: Scalar>(pred: &Tensor<F>, target: &Tensor<F>) -> f64 {
    assert_eq!(pred.numel(), OBS_SIZE * OBS_SIZE);
    assert_eq!(target.numel(), pred.numel());
    let windows = OBS_SIZE / SSIM_WINDOW;
    let mut acc = 0.0;
    for wy in 0..windows {
        for wx in 0..windows {
            let mut xs = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
            let mut ys = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let idx = (wy * SSIM_WINDOW + dy) * OBS_SIZE + wx * SSIM_WINDOW + dx;
                    xs.push(pred.data()[idx].to_f64());
                    ys.push(target.data()[idx].to_f64());
                }
            }
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let vx = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n;
            let vy = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n;
            let cov =
                xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
            acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
    }
    acc / (windows * windows) as f64
}

pub const CSV_HEADER: &str = "phase,trained_task,eval_task,seed,step,metric,value";

/// One logged measurement; `eval_task` 0 means "not task specific".
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub phase: String,
    pub trained_task: usize,
    pub eval_task: usize,
    pub seed: u64,
    pub step: usize,
    pub metric: String,
    pub value: f64,
}

pub fn rows_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        assert!(!r.phase.contains(',') && !r.metric.contains(','), "no commas in labels");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.phase, r.trained_task, r.eval_task, r.seed, r.step, r.metric, r.value
        ));
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => bail!("bad metrics header: {:?}", other),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            bail!("line {}: expected 7 fields, got {}", i + 2, parts.len());
        }
        rows.push(MetricRow {
            phase: parts[0].to_string(),
            trained_task: parts[1].parse().context("trained_task")?,
            eval_task: parts[2].parse().context("eval_task")?,
            seed: parts[3].parse().context("seed")?,
            step: parts[4].parse().context("step")?,
            metric: parts[5].to_string(),
            value: parts[6].parse().context("value")?,
        });
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    std::fs::write(path, rows_to_csv(rows))
        .with_context(|| format!("writing metrics to {}", path.display()))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading metrics from {}", path.display()))?;
    rows_from_csv(&text)
}

/// Seed-averaged value of `metric` in `phase`, keyed by
/// `(trained_task, eval_task)`.
pub fn metric_matrix(
    rows: &[MetricRow],
    phase: &str,
    metric: &str,
) -> BTreeMap<(usize, usize), f64> {
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for r in rows {
        if r.phase == phase && r.metric == metric {
            let e = acc.entry((r.trained_task, r.eval_task)).or_insert((0.0, 0));
            e.0 += r.value;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Per-task forgetting after sequential training over `num_tasks` tasks:
/// best performance on task `j` at any earlier checkpoint minus the final
/// performance on task `j`. Positive means the skill degraded.
pub fn forgetting(
    matrix: &BTreeMap<(usize, usize), f64>,
    num_tasks: usize,
) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for j in 1..=num_tasks {
        let final_v = match matrix.get(&(num_tasks, j)) {
            Some(&v) => v,
            None => continue,
        };
        let best = (j..=num_tasks)
            .filter_map(|i| matrix.get(&(i, j)).copied())
            .fold(f64::NEG_INFINITY, f64::max);
        out.insert(j, best - final_v);
    }
    out
}

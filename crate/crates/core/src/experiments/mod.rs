//! Reproducible experiment runners.
//!
//! Each runner consumes a resolved [`ExperimentConfig`](crate::config::ExperimentConfig),
//! trains deterministically from the config seed, and returns a
//! [`RunResult`] carrying the logged trajectory and a flat metrics map.
//! Disk output is separate: `write_run_outputs` emits `trajectory.csv`,
//! `metrics.json`, and `config.json` atomically (write to a temp file,
//! then rename), so an interrupted run never leaves partial files behind.

mod dynamics;
mod oscillation;
mod routing;
mod spurious;

pub use dynamics::{measure_alignment, run_dynamics};
pub use oscillation::{run_oscillation, OscillationPoint, OscillationResult};
pub use routing::{run_routing, RoutingOutcome};
pub use spurious::{run_spurious_sweep, SpuriousCell, SpuriousSweepResult};

use crate::config::ExperimentConfig;
use crate::error::Result;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

/// One logged training step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: u64,
    /// Flow time, `step * learning_rate` for flow-discretization runs.
    pub time: f64,
    pub loss: f64,
    /// Singular values of the product map (or of the hidden layer for the
    /// routing task), descending.
    pub singular_values: Vec<f64>,
    /// `||V^T V - U U^T||_F` where defined.
    pub balancedness_gap: Option<f64>,
    /// Per-hidden-row projections onto the two leading right singular
    /// vectors of the teacher, when alignment recording is on.
    pub alignment: Option<Vec<(f64, f64)>>,
}

/// Whether a run finished or was cut short by a numerical blowup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Training produced non-finite values; the trajectory retains the
    /// last finite record.
    Diverged { at_step: u64 },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

/// Everything a runner produces.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub fingerprint: String,
    pub status: RunStatus,
    pub trajectory: Vec<TrajectoryRecord>,
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock seconds; informational only, never serialized.
    pub wall_time: f64,
}

impl RunResult {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write a file atomically: the content lands under a temporary name in
/// the same directory and is renamed into place.
pub fn atomic_write(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let unique = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp.{}.{unique}", std::process::id()));
    std::fs::write(&tmp, content)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Hard ceiling on CSV rows; longer trajectories are downsampled.
const MAX_CSV_RECORDS: usize = 100_000;

/// Render a trajectory as CSV with one sigma column per mode.
///
/// Trajectories beyond 1e5 records are strided down, always keeping the
/// final record.
pub fn trajectory_to_csv(trajectory: &[TrajectoryRecord]) -> String {
    let stride = trajectory.len().div_ceil(MAX_CSV_RECORDS).max(1);
    let downsampled: Vec<&TrajectoryRecord> = trajectory
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || *i == trajectory.len() - 1)
        .map(|(_, r)| r)
        .collect();
    let modes = trajectory
        .first()
        .map(|r| r.singular_values.len())
        .unwrap_or(0);
    let mut out = String::new();
    let mut header = vec!["step".to_string(), "time".to_string(), "loss".to_string()];
    header.extend((0..modes).map(|k| format!("sigma_{k}")));
    header.push("balancedness_gap".to_string());
    out.push_str(&header.join(","));
    out.push('\n');
    for rec in downsampled {
        let mut row = vec![
            rec.step.to_string(),
            format!("{}", rec.time),
            format!("{}", rec.loss),
        ];
        for k in 0..modes {
            let v = rec.singular_values.get(k).copied().unwrap_or(0.0);
            row.push(format!("{v}"));
        }
        row.push(match rec.balancedness_gap {
            Some(g) => format!("{g}"),
            None => String::new(),
        });
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Per-hidden-row alignment projections in long CSV form, if any record
/// carries them.
pub fn alignment_to_csv(trajectory: &[TrajectoryRecord]) -> Option<String> {
    if trajectory.iter().all(|r| r.alignment.is_none()) {
        return None;
    }
    let mut out = String::from("step,row,proj_r1,proj_r2\n");
    for rec in trajectory {
        if let Some(points) = &rec.alignment {
            for (row, (p1, p2)) in points.iter().enumerate() {
                out.push_str(&format!("{},{row},{p1},{p2}\n", rec.step));
            }
        }
    }
    Some(out)
}

/// Write the standard per-run artifacts into `dir`.
pub fn write_run_outputs(dir: &Path, config: &ExperimentConfig, result: &RunResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    atomic_write(&dir.join("trajectory.csv"), &trajectory_to_csv(&result.trajectory))?;
    if let Some(alignment) = alignment_to_csv(&result.trajectory) {
        atomic_write(&dir.join("alignment.csv"), &alignment)?;
    }
    let metrics = serde_json::json!({
        "fingerprint": result.fingerprint,
        "status": match &result.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Diverged { at_step } => format!("diverged_at_{at_step}"),
        },
        "metrics": result.metrics,
    });
    atomic_write(
        &dir.join("metrics.json"),
        &format!("{:#}\n", metrics),
    )?;
    let config_json = serde_json::to_string_pretty(config)
        .map_err(|e| crate::error::Error::config(format!("cannot serialize config: {e}")))?;
    atomic_write(&dir.join("config.json"), &format!("{config_json}\n"))?;
    Ok(())
}

/// Count flat stretches of a loss curve.
///
/// The curve is normalized to [0, 1] over the run; a plateau is a maximal
/// stretch of at least `min_duration` (in time units) whose normalized
/// slope magnitude stays below `slope_threshold` (per time unit), and
/// plateaus at indistinguishable loss levels are merged.
pub fn detect_plateaus(
    times: &[f64],
    losses: &[f64],
    slope_threshold: f64,
    min_duration: f64,
    level_resolution: f64,
) -> usize {
    assert_eq!(times.len(), losses.len());
    if times.len() < 3 {
        return 0;
    }
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(f64::MIN_POSITIVE);

    let mut plateaus: Vec<(f64, f64, f64)> = Vec::new(); // (start, end, level)
    let mut current: Option<(f64, f64, f64)> = None; // (start, level_sum, count)
    for i in 0..times.len() - 1 {
        let dt = times[i + 1] - times[i];
        if dt <= 0.0 {
            continue;
        }
        let slope = ((losses[i + 1] - losses[i]) / range / dt).abs();
        if slope < slope_threshold {
            let norm_level = (losses[i] - lo) / range;
            match &mut current {
                Some((_, level_sum, count)) => {
                    *level_sum += norm_level;
                    *count += 1.0;
                }
                None => current = Some((times[i], norm_level, 1.0)),
            }
        } else if let Some((start, level_sum, count)) = current.take() {
            let end = times[i];
            if end - start >= min_duration {
                plateaus.push((start, end, level_sum / count));
            }
        }
    }
    if let Some((start, level_sum, count)) = current.take() {
        let end = *times.last().unwrap();
        if end - start >= min_duration {
            plateaus.push((start, end, level_sum / count));
        }
    }

    // Merge plateaus at the same level: consecutive saddle visits count
    // once.
    let mut distinct: Vec<f64> = Vec::new();
    for (_, _, level) in plateaus {
        if distinct
            .iter()
            .all(|l| (l - level).abs() > level_resolution)
        {
            distinct.push(level);
        }
    }
    distinct.len()
}

/// Linear interpolation of the first time a sampled curve reaches
/// `target` from below.
pub fn first_crossing(times: &[f64], values: &[f64], target: f64) -> Option<f64> {
    for i in 0..values.len() {
        if values[i] >= target {
            if i == 0 {
                return Some(times[0]);
            }
            let (t0, t1) = (times[i - 1], times[i]);
            let (v0, v1) = (values[i - 1], values[i]);
            if v1 > v0 {
                let w = (target - v0) / (v1 - v0);
                return Some(t0 + w.clamp(0.0, 1.0) * (t1 - t0));
            }
            return Some(t1);
        }
    }
    None
}

//! Oscillation study: amplitude of the post-saturation jitter of a
//! learned singular value under spectral updates, across learning rates
//! and with or without momentum.
//!
//! After a mode saturates, the remaining residual in its direction is
//! tiny, but orthogonalization rescales that direction to a unit step, so
//! the mode oscillates around its target with amplitude set by the
//! learning rate rather than by the residual. Momentum does not remove
//! the effect.

use crate::config::{ExperimentConfig, GradientMode};
use crate::datagen::{designed_teacher, gaussian_regression, Rng};
use crate::error::Result;
use crate::experiments::{RunStatus, TrajectoryRecord};
use crate::linalg::svd_compact;
use crate::models::{dln_batch_loss_grads, dln_population_grads};
use crate::optim::{Hyperparams, Optimizer, OptimizerKind};
use std::time::Instant;

/// Amplitude measurement at one grid point.
#[derive(Debug, Clone)]
pub struct OscillationPoint {
    pub eta: f64,
    pub momentum: f64,
    /// max |sigma_k(t) - s_k| over the post-saturation window, for the
    /// second spectrum mode.
    pub amplitude: f64,
    pub status: RunStatus,
}

/// Full grid of amplitudes.
#[derive(Debug, Clone)]
pub struct OscillationResult {
    pub fingerprint: String,
    pub points: Vec<OscillationPoint>,
    pub wall_time: f64,
    /// Trajectory of the last run, for inspection.
    pub last_trajectory: Vec<TrajectoryRecord>,
}

impl OscillationResult {
    pub fn amplitude_at(&self, eta: f64, momentum: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.eta == eta && p.momentum == momentum)
            .map(|p| p.amplitude)
    }

    pub fn metrics(&self) -> std::collections::BTreeMap<String, f64> {
        let mut m = std::collections::BTreeMap::new();
        for p in &self.points {
            m.insert(format!("amplitude_eta_{}_mu_{}", p.eta, p.momentum), p.amplitude);
        }
        m
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("eta,momentum,amplitude\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.eta, p.momentum, p.amplitude));
        }
        out
    }
}

/// Run the learning-rate/momentum grid.
///
/// The dataset and the initialization are drawn once from the config seed
/// and shared by every grid point, so amplitudes are comparable across
/// the grid.
pub fn run_oscillation(cfg: &ExperimentConfig) -> Result<OscillationResult> {
    let start = Instant::now();
    cfg.validate()?;
    let rng = Rng::new(cfg.seed);
    let spectrum = &cfg.data.spectrum;
    let stats = designed_teacher(&rng, cfg.model.d_in, cfg.model.d_out, spectrum)?;
    let sample = match cfg.data.mode {
        GradientMode::Population => None,
        GradientMode::Sample => {
            let mut data_rng = rng.clone();
            let (xs, ys, _) = gaussian_regression(
                &mut data_rng,
                cfg.data.sample_n,
                cfg.model.d_in,
                cfg.model.d_out,
                spectrum,
                cfg.data.noise,
            )?;
            Some((xs, ys))
        }
    };
    let init = super::dynamics::init_network(cfg, &rng, &stats)?;

    // Track the second mode: the first one to saturate under spectral
    // updates on a two-value spectrum.
    let mode = 1;
    let target = spectrum[mode];

    let mut points = Vec::new();
    let mut last_trajectory = Vec::new();
    for &eta in &cfg.oscillation.eta_grid {
        for &mu in &cfg.oscillation.momentum_values {
            let kind = if mu == 0.0 {
                OptimizerKind::SpectralGd
            } else {
                OptimizerKind::SpectralMomentumGd
            };
            let hp = Hyperparams {
                learning_rate: eta,
                momentum: mu,
                rank_cutoff: cfg.optimizer.rank_cutoff,
                ..Hyperparams::default()
            };
            let steps = (cfg.oscillation.total_time / eta).ceil() as u64;
            let mut net = init.clone();
            let mut optimizer = Optimizer::new(kind, hp)?;
            let mut amplitude: f64 = 0.0;
            let mut status = RunStatus::Completed;
            let mut trajectory = Vec::new();
            for step in 0..=steps {
                let time = step as f64 * eta;
                let w = net.product_map();
                let svd = svd_compact(&w, 0.0)?;
                let sigma = svd.s.get(mode).copied().unwrap_or(0.0);
                if time >= cfg.oscillation.window_start_time {
                    amplitude = amplitude.max((sigma - target).abs());
                }
                let (loss, grad_u, grad_v) = match &sample {
                    None => dln_population_grads(&net, &stats)?,
                    Some((xs, ys)) => dln_batch_loss_grads(&net, xs, ys)?,
                };
                if step % cfg.log_interval as u64 == 0 || step == steps {
                    trajectory.push(TrajectoryRecord {
                        step,
                        time,
                        loss,
                        singular_values: svd.s.clone(),
                        balancedness_gap: None,
                        alignment: None,
                    });
                }
                if step == steps {
                    break;
                }
                if !loss.is_finite()
                    || grad_u.check_finite().is_err()
                    || grad_v.check_finite().is_err()
                {
                    status = RunStatus::Diverged { at_step: step };
                    break;
                }
                let grads = [grad_u, grad_v];
                let mut params = [&mut net.u, &mut net.v];
                optimizer.step(&mut params, &grads)?;
                if net.u.check_finite().is_err() || net.v.check_finite().is_err() {
                    status = RunStatus::Diverged { at_step: step + 1 };
                    break;
                }
            }
            points.push(OscillationPoint {
                eta,
                momentum: mu,
                amplitude,
                status,
            });
            last_trajectory = trajectory;
        }
    }

    Ok(OscillationResult {
        fingerprint: cfg.fingerprint(),
        points,
        wall_time: start.elapsed().as_secs_f64(),
        last_trajectory,
    })
}

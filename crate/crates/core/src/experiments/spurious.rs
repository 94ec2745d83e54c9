//! Spurious-feature sweep: train the 2-layer linear network on data whose
//! last input coordinate is a clean shortcut channel, and compare eval
//! curves with and without that coordinate across optimizers and shortcut
//! amplitudes.
//!
//! Reported per cell: the step at which the two eval curves separate (the
//! model has started exploiting the shortcut), the best
//! without-shortcut loss reached during training, and the best
//! without-shortcut sign accuracy on the core channel.

use crate::config::ExperimentConfig;
use crate::datagen::{spurious_dataset, Rng, SpuriousData};
use crate::error::Result;
use crate::experiments::RunStatus;
use crate::linalg::Matrix;
use crate::models::{dln_batch_loss_grads, DeepLinearNet};
use crate::optim::{Hyperparams, Optimizer, OptimizerKind};
use std::time::Instant;

/// One evaluation sample along a cell's training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub with_loss: f64,
    pub without_loss: f64,
    pub without_acc: f64,
}

/// One (strength, optimizer) cell of the sweep.
#[derive(Debug, Clone)]
pub struct SpuriousCell {
    pub strength: f64,
    pub optimizer: OptimizerKind,
    /// First step at which the with/without eval losses differ by more
    /// than the configured relative threshold.
    pub separation_step: Option<u64>,
    /// Minimum without-shortcut eval loss over training.
    pub min_eval_without_loss: f64,
    /// Maximum without-shortcut sign accuracy over training.
    pub max_eval_without_acc: f64,
    pub final_eval_with_loss: f64,
    pub final_eval_without_loss: f64,
    pub status: RunStatus,
    /// Eval curve sampled at the eval interval.
    pub curve: Vec<EvalPoint>,
}

impl SpuriousCell {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("step,eval_with_loss,eval_without_loss,eval_without_acc\n");
        for p in &self.curve {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.step, p.with_loss, p.without_loss, p.without_acc
            ));
        }
        out
    }
}

/// Full sweep output.
#[derive(Debug, Clone)]
pub struct SpuriousSweepResult {
    pub fingerprint: String,
    pub cells: Vec<SpuriousCell>,
    pub wall_time: f64,
}

impl SpuriousSweepResult {
    pub fn cell(&self, strength: f64, optimizer: OptimizerKind) -> Option<&SpuriousCell> {
        self.cells
            .iter()
            .find(|c| c.strength == strength && c.optimizer == optimizer)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "strength,optimizer,separation_step,min_eval_without_loss,max_eval_without_acc,final_eval_with_loss,final_eval_without_loss,status\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.strength,
                c.optimizer.name(),
                c.separation_step.map(|s| s.to_string()).unwrap_or_default(),
                c.min_eval_without_loss,
                c.max_eval_without_acc,
                c.final_eval_with_loss,
                c.final_eval_without_loss,
                match c.status {
                    RunStatus::Completed => "completed",
                    RunStatus::Diverged { .. } => "diverged",
                }
            ));
        }
        out
    }

    pub fn metrics(&self) -> std::collections::BTreeMap<String, f64> {
        let mut m = std::collections::BTreeMap::new();
        for c in &self.cells {
            let key = format!("{}_s{}", c.optimizer.name(), c.strength);
            m.insert(format!("{key}_min_eval_without_loss"), c.min_eval_without_loss);
            m.insert(format!("{key}_max_eval_without_acc"), c.max_eval_without_acc);
            if let Some(step) = c.separation_step {
                m.insert(format!("{key}_separation_step"), step as f64);
            }
        }
        m
    }
}

/// Run the (strength x optimizer) grid, optionally across `jobs` worker
/// threads. Results are merged in grid order regardless of scheduling.
pub fn run_spurious_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SpuriousSweepResult> {
    let start = Instant::now();
    cfg.validate()?;
    let grid: Vec<(f64, OptimizerKind)> = cfg
        .spurious
        .strength_grid
        .iter()
        .flat_map(|&s| cfg.spurious.optimizers.iter().map(move |&o| (s, o)))
        .collect();

    let jobs = jobs.max(1).min(grid.len().max(1));
    let mut cells: Vec<Option<SpuriousCell>> = vec![None; grid.len()];
    if jobs == 1 {
        for (i, &(strength, kind)) in grid.iter().enumerate() {
            cells[i] = Some(run_cell(cfg, strength, kind)?);
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results: Vec<std::sync::Mutex<Option<Result<SpuriousCell>>>> =
            grid.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= grid.len() {
                        break;
                    }
                    let (strength, kind) = grid[i];
                    let cell = run_cell(cfg, strength, kind);
                    *results[i].lock().unwrap() = Some(cell);
                });
            }
        });
        for (i, slot) in results.into_iter().enumerate() {
            cells[i] = Some(slot.into_inner().unwrap().expect("worker finished")?);
        }
    }

    Ok(SpuriousSweepResult {
        fingerprint: cfg.fingerprint(),
        cells: cells.into_iter().map(|c| c.unwrap()).collect(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Train one cell and collect its eval curves.
fn run_cell(cfg: &ExperimentConfig, strength: f64, kind: OptimizerKind) -> Result<SpuriousCell> {
    let sp = &cfg.spurious;
    let rng = Rng::new(cfg.seed);
    let spec = sp.spec_for(strength);
    let mut data_rng = rng.substream(40);
    let data = spurious_dataset(&mut data_rng, &spec, sp.train_n, sp.eval_n)?;

    let mut init_rng = rng.substream(41);
    let u = init_rng.normal_matrix(sp.hidden, sp.d_in, sp.init_scale);
    let v = init_rng.normal_matrix(sp.d_out, sp.hidden, sp.init_scale);
    let mut net = DeepLinearNet::new(u, v)?;

    let hp = Hyperparams {
        learning_rate: cfg.optimizer.learning_rate,
        momentum: cfg.optimizer.momentum,
        adam_beta1: cfg.optimizer.adam_beta1,
        adam_beta2: cfg.optimizer.adam_beta2,
        adam_eps: cfg.optimizer.adam_eps,
        ns_iterations: cfg.optimizer.ns_iterations,
        rank_cutoff: cfg.optimizer.rank_cutoff,
    };
    let mut optimizer = Optimizer::new(kind, hp)?;
    let steps = cfg.steps() as u64;

    let mut separation_step = None;
    let mut min_eval_without_loss = f64::INFINITY;
    let mut max_eval_without_acc: f64 = 0.0;
    let mut final_with = f64::NAN;
    let mut final_without = f64::NAN;
    let mut status = RunStatus::Completed;
    let mut curve = Vec::new();

    for step in 0..=steps {
        if step % sp.eval_interval as u64 == 0 || step == steps {
            let (with_loss, without_loss, without_acc) = evaluate(&net, &data)?;
            curve.push(EvalPoint {
                step,
                with_loss,
                without_loss,
                without_acc,
            });
            final_with = with_loss;
            final_without = without_loss;
            min_eval_without_loss = min_eval_without_loss.min(without_loss);
            max_eval_without_acc = max_eval_without_acc.max(without_acc);
            if separation_step.is_none() {
                let scale = with_loss.max(without_loss).max(1e-12);
                if (with_loss - without_loss).abs() > sp.separation_threshold * scale {
                    separation_step = Some(step);
                }
            }
        }
        if step == steps {
            break;
        }
        let (loss, grad_u, grad_v) = dln_batch_loss_grads(&net, &data.train_xs, &data.train_ys)?;
        if !loss.is_finite() || grad_u.check_finite().is_err() || grad_v.check_finite().is_err() {
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

    Ok(SpuriousCell {
        strength,
        optimizer: kind,
        separation_step,
        min_eval_without_loss,
        max_eval_without_acc,
        final_eval_with_loss: final_with,
        final_eval_without_loss: final_without,
        status,
        curve,
    })
}

/// Eval losses on both sets plus the sign accuracy of the core channel on
/// the without-shortcut set.
fn evaluate(net: &DeepLinearNet, data: &SpuriousData) -> Result<(f64, f64, f64)> {
    let w = net.product_map();
    let with_loss = mse_loss(&w, &data.eval_with_xs, &data.eval_ys);
    let without_loss = mse_loss(&w, &data.eval_without_xs, &data.eval_ys);

    // Sign accuracy: the core latent projects on the core output
    // direction; a prediction is counted correct when its projection has
    // the right sign.
    let n = data.eval_without_xs.rows();
    let mut correct = 0usize;
    for i in 0..n {
        let pred = w.matvec(data.eval_without_xs.row(i));
        let mut pred_proj = 0.0;
        let mut true_proj = 0.0;
        for (a, &q) in data.output_core.iter().enumerate() {
            pred_proj += pred[a] * q;
            true_proj += data.eval_ys.get(i, a) * q;
        }
        if pred_proj.signum() == true_proj.signum() && pred_proj != 0.0 {
            correct += 1;
        }
    }
    Ok((with_loss, without_loss, correct as f64 / n as f64))
}

fn mse_loss(w: &Matrix, xs: &Matrix, ys: &Matrix) -> f64 {
    let n = xs.rows();
    let mut loss = 0.0;
    for i in 0..n {
        let pred = w.matvec(xs.row(i));
        for (a, p) in pred.iter().enumerate() {
            let r = p - ys.get(i, a);
            loss += 0.5 * r * r;
        }
    }
    loss / n as f64
}

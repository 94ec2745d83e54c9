//! Routing-task runner: train the gated network on the cyclic subset of
//! source pairs and measure generalization to the pairs never seen.
//!
//! The diagnostic output is the sources x sources generalization matrix:
//! for every (input source, output source) pair, the mean MSE and the
//! nearest-target accuracy over all task numbers, plus the effective rank
//! of the shared hidden layer. A solution that learned the shared
//! representation solves unseen pairs and keeps the hidden layer at the
//! task's intrinsic rank; a memorizing solution does neither.

use crate::config::{default_routing_targets, ExperimentConfig};
use crate::datagen::{make_source_encodings, routing_sample_batch, Rng};
use crate::error::Result;
use crate::experiments::{RunResult, RunStatus, TrajectoryRecord};
use crate::linalg::{effective_rank, svd_compact, Matrix};
use crate::models::{routing_batch_grads, routing_forward, RoutingNet};
use crate::optim::Optimizer;
use std::collections::BTreeMap;
use std::time::Instant;

/// Run result plus the dense generalization matrices.
#[derive(Debug, Clone)]
pub struct RoutingOutcome {
    pub result: RunResult,
    /// accuracy[(j, o)]: fraction of numbers mapped to the nearest-target
    /// answer for pair (j, o).
    pub gen_accuracy: Matrix,
    /// mse[(j, o)]: mean squared error over the numbers for pair (j, o).
    pub gen_mse: Matrix,
    pub net: RoutingNet,
    shifts: usize,
}

impl RoutingOutcome {
    pub fn generalization_csv(&self) -> String {
        let m = self.gen_accuracy.rows();
        let mut out = String::from("in_src,out_src,seen,accuracy,mse\n");
        for j in 0..m {
            for o in 0..m {
                let seen = self.seen(j, o);
                out.push_str(&format!(
                    "{j},{o},{},{},{}\n",
                    seen as u8,
                    self.gen_accuracy.get(j, o),
                    self.gen_mse.get(j, o)
                ));
            }
        }
        out
    }

    pub fn seen(&self, j: usize, o: usize) -> bool {
        let m = self.gen_accuracy.rows();
        let shift = (o + m - j) % m;
        shift < self.shifts
    }

    pub fn unseen_mean_accuracy(&self) -> f64 {
        let m = self.gen_accuracy.rows();
        let mut sum = 0.0;
        let mut count = 0.0;
        for j in 0..m {
            for o in 0..m {
                if !self.seen(j, o) {
                    sum += self.gen_accuracy.get(j, o);
                    count += 1.0;
                }
            }
        }
        if count > 0.0 {
            sum / count
        } else {
            f64::NAN
        }
    }
}

/// Train the routing network per the config.
pub fn run_routing(cfg: &ExperimentConfig) -> Result<RoutingOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let r = &cfg.routing;
    let rng = Rng::new(cfg.seed);

    let mut enc_rng = rng.substream(1);
    let encodings = make_source_encodings(&mut enc_rng, r.sources, r.numbers, r.input_dim)?;
    let targets = r
        .targets
        .clone()
        .unwrap_or_else(|| default_routing_targets(r.numbers, r.output_dim));

    let mut init_rng = rng.substream(2);
    let encoders: Vec<Matrix> = (0..r.sources)
        .map(|_| init_rng.normal_matrix(r.hidden_dim, r.input_dim, r.init_scale))
        .collect();
    let hidden = init_rng.normal_matrix(r.hidden_dim, r.hidden_dim, r.init_scale);
    let decoders: Vec<Matrix> = (0..r.sources)
        .map(|_| init_rng.normal_matrix(r.output_dim, r.hidden_dim, r.init_scale))
        .collect();
    let mut net = RoutingNet::new(encoders, hidden, decoders)?;

    let mut batch_rng = rng.substream(3);
    let mut optimizer = Optimizer::new(cfg.optimizer.kind, cfg.hyperparams())?;
    let eta = cfg.optimizer.learning_rate;
    let steps = cfg.steps() as u64;

    let mut trajectory = Vec::new();
    let mut status = RunStatus::Completed;
    let mut min_train_loss = f64::INFINITY;
    let mut steps_run = 0;

    for step in 0..=steps {
        let log_now = step % cfg.log_interval as u64 == 0 || step == steps;
        let mut stop = false;
        if log_now {
            let train_loss = full_train_loss(&net, &encodings, &targets, r.shifts)?;
            min_train_loss = min_train_loss.min(train_loss);
            let svd = svd_compact(&net.hidden, 0.0)?;
            trajectory.push(TrajectoryRecord {
                step,
                time: step as f64 * eta,
                loss: train_loss,
                singular_values: svd.s.clone(),
                balancedness_gap: None,
                alignment: None,
            });
            stop = train_loss < r.loss_stop;
        }
        steps_run = step;
        if step == steps || stop {
            break;
        }

        let batch = routing_sample_batch(
            &mut batch_rng,
            r.sources,
            r.shifts,
            r.numbers,
            &encodings,
            &targets,
        )?;
        let (batch_loss, grads) = routing_batch_grads(&net, &batch)?;
        let grads = grads.flatten();
        if !batch_loss.is_finite() || grads.iter().any(|g| g.check_finite().is_err()) {
            status = RunStatus::Diverged { at_step: step };
            break;
        }
        let mut params = net.params_mut();
        optimizer.step(&mut params, &grads)?;
        let broken = net.hidden.check_finite().is_err()
            || net.encoders.iter().any(|e| e.check_finite().is_err())
            || net.decoders.iter().any(|d| d.check_finite().is_err());
        if broken {
            status = RunStatus::Diverged { at_step: step + 1 };
            break;
        }
    }

    // Generalization matrices over every source pair and number.
    let m = r.sources;
    let mut gen_accuracy = Matrix::zeros(m, m);
    let mut gen_mse = Matrix::zeros(m, m);
    for j in 0..m {
        for o in 0..m {
            let mut correct = 0usize;
            let mut mse = 0.0;
            for i in 0..r.numbers {
                let x: Vec<f64> = (0..r.input_dim).map(|row| encodings[j].get(row, i)).collect();
                let pred = routing_forward(&net, &x, j, o)?;
                mse += squared_distance(&pred, &targets[i]) / r.numbers as f64;
                if nearest_target(&pred, &targets) == i {
                    correct += 1;
                }
            }
            gen_accuracy.set(j, o, correct as f64 / r.numbers as f64);
            gen_mse.set(j, o, mse);
        }
    }

    let mut metrics: BTreeMap<String, f64> = BTreeMap::new();
    let mut seen_acc_min = f64::INFINITY;
    let mut seen_acc_sum = 0.0;
    let mut seen_count: f64 = 0.0;
    let mut unseen_acc_sum = 0.0;
    let mut unseen_count = 0.0;
    let mut unseen_perfect = 0.0;
    for j in 0..m {
        for o in 0..m {
            let acc = gen_accuracy.get(j, o);
            metrics.insert(format!("acc_{j}_{o}"), acc);
            metrics.insert(format!("mse_{j}_{o}"), gen_mse.get(j, o));
            let shift = (o + m - j) % m;
            if shift < r.shifts {
                seen_acc_min = seen_acc_min.min(acc);
                seen_acc_sum += acc;
                seen_count += 1.0;
            } else {
                unseen_acc_sum += acc;
                unseen_count += 1.0;
                if acc == 1.0 {
                    unseen_perfect += 1.0;
                }
            }
        }
    }
    metrics.insert("seen_min_accuracy".to_string(), seen_acc_min);
    metrics.insert("seen_mean_accuracy".to_string(), seen_acc_sum / seen_count.max(1.0));
    metrics.insert(
        "unseen_mean_accuracy".to_string(),
        if unseen_count > 0.0 {
            unseen_acc_sum / unseen_count
        } else {
            f64::NAN
        },
    );
    metrics.insert("unseen_perfect_pairs".to_string(), unseen_perfect);
    metrics.insert("unseen_pair_count".to_string(), unseen_count);
    let (rank_threshold, rank_entropy) = effective_rank(&net.hidden, 0.01)?;
    metrics.insert("hidden_rank_threshold".to_string(), rank_threshold as f64);
    metrics.insert("hidden_rank_entropy".to_string(), rank_entropy);
    metrics.insert("min_train_loss".to_string(), min_train_loss);
    metrics.insert(
        "final_train_loss".to_string(),
        trajectory.last().map(|r| r.loss).unwrap_or(f64::NAN),
    );
    metrics.insert("steps_run".to_string(), steps_run as f64);

    let result = RunResult {
        fingerprint: cfg.fingerprint(),
        status,
        trajectory,
        metrics,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(RoutingOutcome {
        result,
        gen_accuracy,
        gen_mse,
        net,
        shifts: r.shifts,
    })
}

/// Deterministic loss over the full training task: every seen pair maps
/// every number.
fn full_train_loss(
    net: &RoutingNet,
    encodings: &[Matrix],
    targets: &[Vec<f64>],
    shifts: usize,
) -> Result<f64> {
    let m = net.sources();
    let mut loss = 0.0;
    let mut count = 0.0;
    for j in 0..m {
        for s in 0..shifts {
            let o = (j + s) % m;
            for (i, target) in targets.iter().enumerate() {
                let x: Vec<f64> = (0..net.input_dim()).map(|row| encodings[j].get(row, i)).collect();
                let pred = routing_forward(net, &x, j, o)?;
                loss += 0.5 * squared_distance(&pred, target);
                count += 1.0;
            }
        }
    }
    Ok(loss / count)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the target nearest to the prediction; ties resolve to the
/// smallest index.
fn nearest_target(pred: &[f64], targets: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, t) in targets.iter().enumerate() {
        let d = squared_distance(pred, t);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;
    use crate::optim::OptimizerKind;

    fn small_routing_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::minimal(ExperimentKind::Routing, 1);
        cfg.routing.sources = 3;
        cfg.routing.hidden_dim = 16;
        cfg.routing.init_scale = 0.02;
        cfg.optimizer.kind = OptimizerKind::MomentumGd;
        cfg.optimizer.learning_rate = 0.05;
        cfg.steps = Some(3000);
        cfg.log_interval = 50;
        cfg
    }

    #[test]
    fn seen_pairs_are_learned_on_a_small_instance() {
        let out = run_routing(&small_routing_config()).unwrap();
        assert!(out.result.status.is_completed());
        let seen_min = out.result.metric("seen_min_accuracy").unwrap();
        assert_eq!(seen_min, 1.0, "seen pairs not solved: {seen_min}");
        let final_loss = out.result.metric("final_train_loss").unwrap();
        assert!(final_loss < 1e-3, "train loss {final_loss}");
    }

    #[test]
    fn unused_pair_metrics_cover_the_whole_grid() {
        let out = run_routing(&small_routing_config()).unwrap();
        let m = 3;
        let seen: usize = (0..m)
            .flat_map(|j| (0..m).map(move |o| (j, o)))
            .filter(|&(j, o)| out.seen(j, o))
            .count();
        assert_eq!(seen, m * 2);
        assert_eq!(out.result.metric("unseen_pair_count").unwrap() as usize, m * m - seen);
    }

    #[test]
    fn routing_runs_are_deterministic() {
        let cfg = small_routing_config();
        let a = run_routing(&cfg).unwrap();
        let b = run_routing(&cfg).unwrap();
        assert_eq!(a.result.trajectory, b.result.trajectory);
        assert_eq!(a.gen_accuracy, b.gen_accuracy);
    }
}

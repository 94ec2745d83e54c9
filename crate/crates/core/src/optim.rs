//! Optimizer update rules as explicit state machines.
//!
//! Six rules are implemented. GD and momentum GD move along the raw
//! (accumulated) gradient. The spectral variants orthogonalize the update
//! direction first, so every retained singular direction moves at the full
//! learning rate regardless of its gradient magnitude: Spectral GD
//! orthogonalizes the instantaneous gradient exactly, Spectral momentum GD
//! orthogonalizes the heavy-ball buffer exactly, and Muon orthogonalizes
//! the heavy-ball buffer approximately via Newton-Schulz. Adam is the
//! standard bias-corrected baseline.
//!
//! Momentum is heavy-ball accumulation `g <- mu*g + grad` (no dampening,
//! no Nesterov). Each matrix parameter is orthogonalized independently.

use crate::error::{Error, Result};
use crate::linalg::{newton_schulz_orthogonalize, orthogonalize_exact, Matrix};
use serde::{Deserialize, Serialize};

/// Which update rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd,
    MomentumGd,
    SpectralGd,
    SpectralMomentumGd,
    Muon,
    Adam,
}

impl OptimizerKind {
    pub fn uses_momentum_buffer(self) -> bool {
        matches!(
            self,
            OptimizerKind::MomentumGd | OptimizerKind::SpectralMomentumGd | OptimizerKind::Muon
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::MomentumGd => "momentum_gd",
            OptimizerKind::SpectralGd => "spectral_gd",
            OptimizerKind::SpectralMomentumGd => "spectral_momentum_gd",
            OptimizerKind::Muon => "muon",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Hyperparameters shared across the optimizer family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ns_iterations: usize,
    pub rank_cutoff: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 1e-3,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ns_iterations: 5,
            rank_cutoff: crate::linalg::DEFAULT_RANK_CUTOFF,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps must be positive"));
        }
        if self.ns_iterations == 0 {
            return Err(Error::invalid("ns_iterations must be positive"));
        }
        if self.rank_cutoff < 0.0 {
            return Err(Error::invalid("rank_cutoff must be non-negative"));
        }
        Ok(())
    }
}

/// Per-parameter buffers, allocated lazily on the first step.
#[derive(Debug, Clone)]
struct Slot {
    momentum: Matrix,
    adam_m: Matrix,
    adam_v: Matrix,
}

/// Mutable optimizer state: one instance drives one training run.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    hp: Hyperparams,
    slots: Vec<Slot>,
    step_count: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        Ok(Optimizer {
            kind,
            hp,
            slots: Vec::new(),
            step_count: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Momentum buffer of parameter `idx`, if the rule keeps one and a step
    /// has been taken.
    pub fn momentum_buffer(&self, idx: usize) -> Option<&Matrix> {
        self.slots.get(idx).map(|s| &s.momentum)
    }

    fn init_slots(&mut self, params: &[&mut Matrix]) {
        if !self.slots.is_empty() {
            return;
        }
        self.slots = params
            .iter()
            .map(|p| Slot {
                momentum: Matrix::zeros(p.rows(), p.cols()),
                adam_m: Matrix::zeros(p.rows(), p.cols()),
                adam_v: Matrix::zeros(p.rows(), p.cols()),
            })
            .collect();
    }

    /// Apply one update to every parameter in place.
    ///
    /// Spectral rules skip a parameter when its update direction (gradient
    /// or momentum buffer) is exactly zero: the compact SVD of a zero
    /// matrix is empty, so the orthogonalized update is zero.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        self.init_slots(params);
        if self.slots.len() != params.len() {
            return Err(Error::invalid(
                "parameter count changed between optimizer steps",
            ));
        }
        for (i, (param, grad)) in params.iter().zip(grads.iter()).enumerate() {
            if !param.same_shape(grad) {
                return Err(Error::ShapeMismatch {
                    expected_rows: param.rows(),
                    expected_cols: param.cols(),
                    got_rows: grad.rows(),
                    got_cols: grad.cols(),
                    context: "gradient vs parameter",
                });
            }
            if !self.slots[i].momentum.same_shape(param) {
                return Err(Error::invalid("parameter shape changed between steps"));
            }
            grad.check_finite()?;
        }

        self.step_count += 1;
        let eta = self.hp.learning_rate;
        let mu = self.hp.momentum;

        for (i, grad) in grads.iter().enumerate() {
            let slot = &mut self.slots[i];
            let param = &mut *params[i];
            match self.kind {
                OptimizerKind::Gd => {
                    param.add_scaled(-eta, grad);
                }
                OptimizerKind::MomentumGd => {
                    slot.momentum.decay_accumulate(mu, grad);
                    param.add_scaled(-eta, &slot.momentum);
                }
                OptimizerKind::SpectralGd => {
                    if grad.is_zero() {
                        continue;
                    }
                    let direction = orthogonalize_exact(grad, self.hp.rank_cutoff)?;
                    param.add_scaled(-eta, &direction);
                }
                OptimizerKind::SpectralMomentumGd => {
                    slot.momentum.decay_accumulate(mu, grad);
                    if slot.momentum.is_zero() {
                        continue;
                    }
                    let direction = orthogonalize_exact(&slot.momentum, self.hp.rank_cutoff)?;
                    param.add_scaled(-eta, &direction);
                }
                OptimizerKind::Muon => {
                    slot.momentum.decay_accumulate(mu, grad);
                    if slot.momentum.is_zero() {
                        continue;
                    }
                    let direction =
                        newton_schulz_orthogonalize(&slot.momentum, self.hp.ns_iterations)?;
                    param.add_scaled(-eta, &direction);
                }
                OptimizerKind::Adam => {
                    let b1 = self.hp.adam_beta1;
                    let b2 = self.hp.adam_beta2;
                    let t = self.step_count as i32;
                    let bias1 = 1.0 - b1.powi(t);
                    let bias2 = 1.0 - b2.powi(t);
                    for k in 0..grad.data().len() {
                        let g = grad.data()[k];
                        let m = b1 * slot.adam_m.data()[k] + (1.0 - b1) * g;
                        let v = b2 * slot.adam_v.data()[k] + (1.0 - b2) * g * g;
                        slot.adam_m.data_mut()[k] = m;
                        slot.adam_v.data_mut()[k] = v;
                        let m_hat = m / bias1;
                        let v_hat = v / bias2;
                        param.data_mut()[k] -= eta * m_hat / (v_hat.sqrt() + self.hp.adam_eps);
                    }
                }
            }
        }
        Ok(())
    }
}

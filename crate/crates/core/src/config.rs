//! Strict JSON experiment configuration.
//!
//! A config file fully determines a run: `parse` applies defaults, rejects
//! unknown fields, validates every section against its consumer's
//! preconditions, and the resolved value round-trips through JSON
//! unchanged. The SHA-256 fingerprint of the resolved config identifies a
//! run (seed included).

use crate::datagen::{InitMode, SpuriousSpec};
use crate::error::{Error, Result};
use crate::optim::{Hyperparams, OptimizerKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Which runner a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Dynamics,
    Oscillation,
    Routing,
    #[serde(alias = "spurious_sweep")]
    SpuriousSweep,
    Oracle,
    Orthogonalize,
}

impl ExperimentKind {
    fn default_steps(self) -> usize {
        match self {
            ExperimentKind::Dynamics => 20_000,
            ExperimentKind::Oscillation => 20_000,
            ExperimentKind::Routing => 100_000,
            ExperimentKind::SpuriousSweep => 4_000,
            ExperimentKind::Oracle | ExperimentKind::Orthogonalize => 0,
        }
    }
}

/// Optimizer choice plus hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ns_iterations: usize,
    pub rank_cutoff: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        OptimizerConfig {
            kind: OptimizerKind::Gd,
            learning_rate: hp.learning_rate,
            momentum: hp.momentum,
            adam_beta1: hp.adam_beta1,
            adam_beta2: hp.adam_beta2,
            adam_eps: hp.adam_eps,
            ns_iterations: hp.ns_iterations,
            rank_cutoff: hp.rank_cutoff,
        }
    }
}

impl OptimizerConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            ns_iterations: self.ns_iterations,
            rank_cutoff: self.rank_cutoff,
        }
    }

    pub fn with_kind(kind: OptimizerKind) -> Self {
        OptimizerConfig {
            kind,
            ..Default::default()
        }
    }
}

/// Deep-linear-network dimensions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_in: 2,
            d_out: 2,
            hidden: 100,
        }
    }
}

/// Whether gradients come from exact statistics or a finite sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Population,
    Sample,
}

/// Regression-data section for the dynamics-style experiments.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub spectrum: Vec<f64>,
    pub noise: f64,
    pub mode: GradientMode,
    pub sample_n: usize,
    pub init_scale: f64,
    pub init_mode: InitMode,
    /// Also write the generated dataset as dataset.csv.
    pub dump_csv: bool,
    /// Record per-hidden-row alignment projections in the trajectory.
    pub record_alignment: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            spectrum: vec![2.0, 1.0],
            noise: 0.0,
            mode: GradientMode::Population,
            sample_n: 512,
            init_scale: 0.01,
            init_mode: InitMode::Gaussian,
            dump_csv: false,
            record_alignment: false,
        }
    }
}

/// Learning-rate grid for the oscillation study.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OscillationConfig {
    pub eta_grid: Vec<f64>,
    pub momentum_values: Vec<f64>,
    /// Flow time at which the post-saturation window opens.
    pub window_start_time: f64,
    /// Total flow time simulated per learning rate.
    pub total_time: f64,
}

impl Default for OscillationConfig {
    fn default() -> Self {
        OscillationConfig {
            eta_grid: vec![1e-3, 3e-3, 1e-2, 3e-2],
            momentum_values: vec![0.0, 0.9],
            window_start_time: 2.0,
            total_time: 4.0,
        }
    }
}

/// Routing-task section.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingConfig {
    pub sources: usize,
    pub shifts: usize,
    pub numbers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub init_scale: f64,
    /// Stop once the full training loss drops below this.
    pub loss_stop: f64,
    /// Target vector per number; defaults to the built-in set.
    pub targets: Option<Vec<Vec<f64>>>,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            sources: 7,
            shifts: 2,
            numbers: 4,
            input_dim: 4,
            hidden_dim: 64,
            output_dim: 7,
            init_scale: 1e-3,
            loss_stop: 1e-6,
            targets: None,
        }
    }
}

/// Default routing targets: one-hot on the leading coordinates plus a
/// distinct structured tail, so the four outputs are well separated
/// without being axis-aligned.
pub fn default_routing_targets(numbers: usize, output_dim: usize) -> Vec<Vec<f64>> {
    (0..numbers)
        .map(|i| {
            let mut t = vec![0.0; output_dim];
            t[i % output_dim] = 1.0;
            for (offset, value) in [(1usize, 0.5), (2, 0.25)] {
                let idx = (i + numbers + offset * (i + 1)) % output_dim;
                t[idx] += value;
            }
            t
        })
        .collect()
}

/// Spurious-feature sweep section.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SpuriousSweepConfig {
    pub core_strength: f64,
    pub strength_grid: Vec<f64>,
    pub noise_level: f64,
    pub d_in: usize,
    pub d_out: usize,
    pub hidden: usize,
    pub train_n: usize,
    pub eval_n: usize,
    pub eval_interval: usize,
    pub init_scale: f64,
    pub optimizers: Vec<OptimizerKind>,
    /// Relative gap between the two eval losses that counts as separation.
    pub separation_threshold: f64,
}

impl Default for SpuriousSweepConfig {
    fn default() -> Self {
        SpuriousSweepConfig {
            core_strength: 1.0,
            strength_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            noise_level: 0.0,
            d_in: 8,
            d_out: 4,
            hidden: 32,
            train_n: 1024,
            eval_n: 1024,
            eval_interval: 25,
            init_scale: 1e-3,
            optimizers: vec![
                OptimizerKind::MomentumGd,
                OptimizerKind::SpectralGd,
                OptimizerKind::Muon,
                OptimizerKind::Adam,
            ],
            separation_threshold: 0.1,
        }
    }
}

impl SpuriousSweepConfig {
    pub fn spec_for(&self, strength: f64) -> SpuriousSpec {
        SpuriousSpec {
            core_strength: self.core_strength,
            spurious_strength: strength,
            noise_level: self.noise_level,
            d_in: self.d_in,
            d_out: self.d_out,
        }
    }
}

/// Closed-form curve emission section.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub t_max: f64,
    pub dt: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            t_max: 3.0,
            dt: 0.01,
        }
    }
}

/// Matrix-orthogonalization pass-through section.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OrthogonalizeConfig {
    pub input: Option<String>,
    pub output: Option<String>,
    pub method: OrthogonalizeMethod,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrthogonalizeMethod {
    #[default]
    Exact,
    NewtonSchulz,
}

/// A fully-resolved experiment description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    /// Step budget; defaults depend on the experiment kind.
    #[serde(default)]
    pub steps: Option<usize>,
    pub seed: u64,
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub oscillation: OscillationConfig,
    #[serde(default)]
    pub routing: RoutingConfig,
    #[serde(default)]
    pub spurious: SpuriousSweepConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub orthogonalize: OrthogonalizeConfig,
}

fn default_log_interval() -> usize {
    10
}

impl ExperimentConfig {
    /// Minimal config for an experiment kind; everything else defaulted.
    pub fn minimal(experiment: ExperimentKind, seed: u64) -> Self {
        let mut cfg = ExperimentConfig {
            experiment,
            optimizer: OptimizerConfig::default(),
            model: ModelConfig::default(),
            data: DataConfig::default(),
            steps: None,
            seed,
            log_interval: default_log_interval(),
            out_dir: None,
            oscillation: OscillationConfig::default(),
            routing: RoutingConfig::default(),
            spurious: SpuriousSweepConfig::default(),
            oracle: OracleConfig::default(),
            orthogonalize: OrthogonalizeConfig::default(),
        };
        cfg.resolve();
        cfg
    }

    /// Fill kind-dependent defaults.
    pub fn resolve(&mut self) {
        if self.steps.is_none() {
            self.steps = Some(self.experiment.default_steps());
        }
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or_else(|| self.experiment.default_steps())
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.optimizer.hyperparams()
    }

    /// Semantic validation; error messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        self.optimizer
            .hyperparams()
            .validate()
            .map_err(|e| Error::config(format!("optimizer: {e}")))?;
        if self.log_interval == 0 {
            return Err(Error::config("log_interval must be positive"));
        }
        if self.model.d_in == 0 || self.model.d_out == 0 || self.model.hidden == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.data.spectrum.is_empty() {
            return Err(Error::config("data.spectrum must be nonempty"));
        }
        if self.data.spectrum.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::config("data.spectrum must be non-increasing"));
        }
        if self
            .data
            .spectrum
            .iter()
            .any(|s| !s.is_finite() || *s < 0.0)
        {
            return Err(Error::config("data.spectrum values must be finite and >= 0"));
        }
        if self.data.spectrum.len() > self.model.d_in.min(self.model.d_out) {
            return Err(Error::config(
                "data.spectrum longer than min(model.d_in, model.d_out)",
            ));
        }
        if !(self.data.init_scale > 0.0) {
            return Err(Error::config("data.init_scale must be positive"));
        }
        if self.data.mode == GradientMode::Sample && self.data.sample_n == 0 {
            return Err(Error::config("data.sample_n must be positive in sample mode"));
        }
        match self.experiment {
            ExperimentKind::Oscillation => {
                let osc = &self.oscillation;
                if osc.eta_grid.is_empty() || osc.eta_grid.iter().any(|e| !(*e > 0.0)) {
                    return Err(Error::config("oscillation.eta_grid must be positive"));
                }
                if osc.momentum_values.iter().any(|m| !(0.0..1.0).contains(m)) {
                    return Err(Error::config(
                        "oscillation.momentum_values must lie in [0, 1)",
                    ));
                }
                if !(osc.total_time > osc.window_start_time) {
                    return Err(Error::config(
                        "oscillation.total_time must exceed window_start_time",
                    ));
                }
                if self.data.spectrum.len() < 2 {
                    return Err(Error::config(
                        "oscillation needs a spectrum with at least two values",
                    ));
                }
            }
            ExperimentKind::Routing => {
                let r = &self.routing;
                if r.sources == 0 || r.shifts == 0 || r.shifts > r.sources {
                    return Err(Error::config("routing: need 0 < shifts <= sources"));
                }
                if r.numbers == 0 || r.numbers > r.input_dim {
                    return Err(Error::config("routing: need 0 < numbers <= input_dim"));
                }
                if r.hidden_dim == 0 || r.output_dim == 0 {
                    return Err(Error::config("routing dimensions must be positive"));
                }
                if let Some(targets) = &r.targets {
                    if targets.len() != r.numbers
                        || targets.iter().any(|t| t.len() != r.output_dim)
                    {
                        return Err(Error::config(
                            "routing.targets must be numbers x output_dim",
                        ));
                    }
                }
                if !(r.init_scale > 0.0) {
                    return Err(Error::config("routing.init_scale must be positive"));
                }
            }
            ExperimentKind::SpuriousSweep => {
                let s = &self.spurious;
                s.spec_for(s.strength_grid.first().copied().unwrap_or(0.0))
                    .validate()
                    .map_err(|e| Error::config(format!("spurious: {e}")))?;
                if s.strength_grid.is_empty() {
                    return Err(Error::config("spurious.strength_grid must be nonempty"));
                }
                if s.strength_grid.iter().any(|v| *v < 0.0) {
                    return Err(Error::config("spurious strengths must be >= 0"));
                }
                if s.optimizers.is_empty() {
                    return Err(Error::config("spurious.optimizers must be nonempty"));
                }
                if s.train_n == 0 || s.eval_n == 0 || s.eval_interval == 0 {
                    return Err(Error::config("spurious sample counts must be positive"));
                }
                if s.hidden == 0 || !(s.init_scale > 0.0) {
                    return Err(Error::config("spurious model settings invalid"));
                }
            }
            ExperimentKind::Oracle => {
                if !(self.oracle.t_max > 0.0) || !(self.oracle.dt > 0.0) {
                    return Err(Error::config("oracle.t_max and oracle.dt must be positive"));
                }
            }
            ExperimentKind::Orthogonalize => {
                if self.orthogonalize.input.is_none() || self.orthogonalize.output.is_none() {
                    return Err(Error::config(
                        "orthogonalize.input and orthogonalize.output are required",
                    ));
                }
                if self.orthogonalize.iterations == 0 {
                    return Err(Error::config("orthogonalize.iterations must be positive"));
                }
            }
            ExperimentKind::Dynamics => {}
        }
        // The dynamics-style experiments need the init below the smallest
        // positive spectrum value so the flow starts in the small-init
        // regime.
        if matches!(
            self.experiment,
            ExperimentKind::Dynamics | ExperimentKind::Oscillation | ExperimentKind::Oracle
        ) {
            let min_positive = self
                .data
                .spectrum
                .iter()
                .copied()
                .filter(|&s| s > 0.0)
                .fold(f64::INFINITY, f64::min);
            if self.data.init_scale >= min_positive {
                return Err(Error::config(
                    "data.init_scale must be below the smallest positive spectrum value",
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the resolved JSON serialization.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parse a JSON value into a resolved, validated config.
///
/// The `optimizer` field may be given as a bare string naming the kind; it
/// is normalized to the object form before strict parsing.
pub fn parse_config_value(mut value: serde_json::Value) -> Result<ExperimentConfig> {
    normalize_optimizer(&mut value);
    let mut cfg: ExperimentConfig = serde_json::from_value(value)
        .map_err(|e| Error::config(format!("invalid config: {e}")))?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a JSON string (see [`parse_config_value`]).
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::config(format!("malformed JSON: {e}")))?;
    parse_config_value(value)
}

/// Load and parse a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

fn normalize_optimizer(value: &mut serde_json::Value) {
    if let Some(obj) = value.as_object_mut() {
        if let Some(opt) = obj.get_mut("optimizer") {
            if opt.is_string() {
                let kind = opt.clone();
                *opt = serde_json::json!({ "kind": kind });
            }
        }
    }
}

/// Apply one `--set key.path=value` override to a raw JSON value.
///
/// The raw value is parsed as JSON when possible and falls back to a
/// string, so `--set optimizer.learning_rate=0.01` and
/// `--set optimizer.kind=gd` both work.
pub fn apply_override(value: &mut serde_json::Value, path: &str, raw: &str) -> Result<()> {
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad override path {path:?}")));
    }
    // A bare-string optimizer section must become an object before a
    // dotted path can descend into it.
    normalize_optimizer(cursor);
    for part in &parts[..parts.len() - 1] {
        if !cursor.is_object() {
            return Err(Error::config(format!(
                "override path {path:?} descends into a non-object"
            )));
        }
        cursor = cursor
            .as_object_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    match cursor.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), parsed);
            Ok(())
        }
        None => Err(Error::config(format!(
            "override path {path:?} descends into a non-object"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg =
            parse_config_str(r#"{"experiment":"dynamics","optimizer":"spectral_gd","seed":1}"#)
                .unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Dynamics);
        assert_eq!(cfg.optimizer.kind, OptimizerKind::SpectralGd);
        assert!((cfg.optimizer.learning_rate - 1e-3).abs() < 1e-15);
        assert_eq!(cfg.data.spectrum, vec![2.0, 1.0]);
        assert!((cfg.data.init_scale - 0.01).abs() < 1e-15);
        assert_eq!(cfg.steps(), 20_000);
        assert_eq!(cfg.seed, 1);
    }

    #[test]
    fn unknown_fields_are_rejected_by_name() {
        let err = parse_config_str(
            r#"{"experiment":"dynamics","optimizer":{"kind":"gd","learning_rte":0.1},"seed":1}"#,
        )
        .unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("learning_rte"), "message was: {msg}");
    }

    #[test]
    fn roundtrip_is_identity_on_resolved_configs() {
        let cfg = parse_config_str(
            r#"{"experiment":"routing","optimizer":"momentum_gd","seed":5,"steps":1234}"#,
        )
        .unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let again = parse_config_str(&json).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.fingerprint(), again.fingerprint());
    }

    #[test]
    fn fingerprint_depends_on_seed() {
        let a = ExperimentConfig::minimal(ExperimentKind::Dynamics, 1);
        let b = ExperimentConfig::minimal(ExperimentKind::Dynamics, 2);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let mut value: serde_json::Value = serde_json::from_str(
            r#"{"experiment":"dynamics","optimizer":"spectral_gd","seed":1}"#,
        )
        .unwrap();
        apply_override(&mut value, "optimizer.kind", "gd").unwrap();
        apply_override(&mut value, "optimizer.learning_rate", "0.05").unwrap();
        apply_override(&mut value, "data.spectrum", "[4,1]").unwrap();
        let cfg = parse_config_value(value).unwrap();
        assert_eq!(cfg.optimizer.kind, OptimizerKind::Gd);
        assert!((cfg.optimizer.learning_rate - 0.05).abs() < 1e-15);
        assert_eq!(cfg.data.spectrum, vec![4.0, 1.0]);
    }

    #[test]
    fn validation_names_offending_fields() {
        let err = parse_config_str(
            r#"{"experiment":"dynamics","optimizer":{"kind":"gd","learning_rate":-1.0},"seed":1}"#,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("learning_rate"));

        let err = parse_config_str(
            r#"{"experiment":"dynamics","seed":1,"data":{"spectrum":[1.0,2.0]}}"#,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("spectrum"));
    }

    #[test]
    fn init_scale_must_stay_below_spectrum() {
        let err = parse_config_str(
            r#"{"experiment":"dynamics","seed":1,"data":{"spectrum":[2.0,1.0],"init_scale":1.5}}"#,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("init_scale"));
    }

    #[test]
    fn spurious_sweep_kind_accepts_both_spellings() {
        for name in ["spurious-sweep", "spurious_sweep"] {
            let cfg = parse_config_str(&format!(r#"{{"experiment":"{name}","seed":1}}"#)).unwrap();
            assert_eq!(cfg.experiment, ExperimentKind::SpuriousSweep);
        }
    }

    #[test]
    fn default_targets_are_distinct() {
        let targets = default_routing_targets(4, 7);
        assert_eq!(targets.len(), 4);
        for i in 0..4 {
            for j in i + 1..4 {
                let dist: f64 = targets[i]
                    .iter()
                    .zip(&targets[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                assert!(dist > 0.1, "targets {i} and {j} too close");
            }
        }
    }
}

//! Closed-form dynamics oracles.
//!
//! Under gradient flow from small balanced aligned initialization, each
//! singular value of the product map follows an independent logistic ODE
//! `sigma' = 2 sigma (s - sigma)`, so large modes saturate first and learn
//! times scale like ln(s/sigma0) / s. Under spectral (orthogonalized)
//! gradient flow from zero initialization the layer factors grow linearly
//! in time, giving `sigma_k(t) = min(t^2, s_k)`: every mode grows at the
//! same speed and the small ones saturate first. These closed forms are
//! the reference trajectories the simulation runners are checked against.
//!
//! The module also integrates the two coupled gating-race ODEs describing
//! how pathway multiplicity sets the growth rate of gated modes.

use crate::error::{Error, Result};

/// A designed teacher spectrum plus the scalar initialization scale.
#[derive(Debug, Clone)]
pub struct SpectrumSpec {
    /// Non-increasing, non-negative singular values `s_1 >= ... >= s_D`.
    pub singular_values: Vec<f64>,
    /// Initial singular value sigma_k(0), shared across modes.
    pub init_scale: f64,
}

impl SpectrumSpec {
    pub fn new(singular_values: Vec<f64>, init_scale: f64) -> Result<Self> {
        if singular_values.is_empty() {
            return Err(Error::invalid("spectrum must be nonempty"));
        }
        if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("singular values must be finite and >= 0"));
        }
        if singular_values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("spectrum must be non-increasing"));
        }
        if !(init_scale > 0.0) {
            return Err(Error::invalid("init_scale must be positive"));
        }
        let min_positive = singular_values
            .iter()
            .copied()
            .filter(|&s| s > 0.0)
            .fold(f64::INFINITY, f64::min);
        if init_scale >= min_positive {
            return Err(Error::invalid(
                "init_scale must be below the smallest positive singular value",
            ));
        }
        Ok(SpectrumSpec {
            singular_values,
            init_scale,
        })
    }

    pub fn modes(&self) -> usize {
        self.singular_values.len()
    }

    fn check_mode(&self, k: usize) -> Result<f64> {
        self.singular_values
            .get(k)
            .copied()
            .ok_or_else(|| Error::invalid(format!("mode index {k} out of range")))
    }
}

/// Logistic trajectory of mode `k` under gradient flow:
/// `sigma_k(t) = s_k / (1 + (s_k/sigma0 - 1) e^(-2 s_k t))`.
///
/// A zero target value is stationary (returns sigma0), and sigma0 = 0 is a
/// fixed point of the flow (handled by construction since init_scale > 0).
pub fn gd_sigma_trajectory(spec: &SpectrumSpec, k: usize, t: f64) -> Result<f64> {
    let s = spec.check_mode(k)?;
    if t < 0.0 {
        return Err(Error::invalid("time must be non-negative"));
    }
    let sigma0 = spec.init_scale;
    if s == 0.0 {
        return Ok(sigma0);
    }
    Ok(s / (1.0 + (s / sigma0 - 1.0) * (-2.0 * s * t).exp()))
}

/// Logistic trajectory with an explicit initial value, used when fitting
/// an effective sigma0 to a measured trajectory.
pub fn gd_sigma_trajectory_from(s: f64, sigma0: f64, t: f64) -> f64 {
    if s == 0.0 || sigma0 == 0.0 {
        return sigma0;
    }
    s / (1.0 + (s / sigma0 - 1.0) * (-2.0 * s * t).exp())
}

/// Invert the logistic at one observation: the sigma0 for which the
/// trajectory passes through (t_obs, sigma_obs).
pub fn gd_fit_sigma0(s: f64, t_obs: f64, sigma_obs: f64) -> Option<f64> {
    if !(s > 0.0) || !(sigma_obs > 0.0) || sigma_obs >= s {
        return None;
    }
    let growth = (2.0 * s * t_obs).exp();
    Some(s / (1.0 + (s / sigma_obs - 1.0) * growth))
}

/// Time at which the gradient-flow trajectory reaches `fraction * s_k`:
/// `t = ln((s/sigma0 - 1) * f/(1-f)) / (2 s)`.
pub fn gd_learn_time(spec: &SpectrumSpec, k: usize, fraction: f64) -> Result<f64> {
    let s = spec.check_mode(k)?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("fraction must lie in (0, 1)"));
    }
    if s == 0.0 {
        return Err(Error::invalid("mode with zero singular value never learns"));
    }
    let sigma0 = spec.init_scale;
    let ratio = (s / sigma0 - 1.0) * fraction / (1.0 - fraction);
    Ok(ratio.ln() / (2.0 * s))
}

/// Spectral-flow trajectory from zero initialization:
/// `sigma_k(t) = min(t^2, s_k)`.
pub fn spectral_sigma_trajectory(spec: &SpectrumSpec, k: usize, t: f64) -> Result<f64> {
    let s = spec.check_mode(k)?;
    if t < 0.0 {
        return Err(Error::invalid("time must be non-negative"));
    }
    Ok((t * t).min(s))
}

/// `min((t + t0)^2, s)`: the zero-init closed form with a time offset that
/// absorbs a small nonzero initialization.
pub fn spectral_sigma_trajectory_offset(s: f64, t0: f64, t: f64) -> f64 {
    let shifted = (t + t0).max(0.0);
    (shifted * shifted).min(s)
}

/// Offset t0 such that the shifted trajectory passes through
/// (t_obs, sigma_obs).
pub fn spectral_fit_offset(t_obs: f64, sigma_obs: f64) -> Option<f64> {
    if sigma_obs < 0.0 {
        return None;
    }
    Some(sigma_obs.sqrt() - t_obs)
}

/// One phase of the spectral-flow schedule: while `active` modes grow,
/// every other mode holds at its saturated value.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPhase {
    /// Number of modes still growing during this phase.
    pub active_count: usize,
    /// Indices (into the spectrum) of the growing modes.
    pub active: Vec<usize>,
    /// Flow time at which the phase begins.
    pub entry_time: f64,
    /// Flow time at which the phase ends (the next saturation).
    pub exit_time: f64,
}

/// Phase schedule of the zero-init spectral flow.
///
/// All modes grow together as t^2; mode k saturates at sqrt(s_k), so the
/// smallest distinct value saturates first and ties saturate together.
/// Phase boundaries are the square roots of the distinct positive values.
pub fn spectral_phase_schedule(spec: &SpectrumSpec) -> Vec<SpectralPhase> {
    // Distinct positive values, ascending.
    let mut levels: Vec<f64> = spec
        .singular_values
        .iter()
        .copied()
        .filter(|&s| s > 0.0)
        .collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();

    let mut phases = Vec::new();
    let mut prev_level: f64 = 0.0;
    for &level in &levels {
        let active: Vec<usize> = spec
            .singular_values
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s >= level)
            .map(|(k, _)| k)
            .collect();
        phases.push(SpectralPhase {
            active_count: active.len(),
            active,
            entry_time: prev_level.sqrt(),
            exit_time: level.sqrt(),
        });
        prev_level = level;
    }
    phases
}

/// Gradient-flow saddle-escape schedule: per-mode learn times, returned in
/// the order modes saturate (larger singular values first).
pub fn gd_phase_schedule(spec: &SpectrumSpec, fraction: f64) -> Result<Vec<(usize, f64)>> {
    let mut times = Vec::with_capacity(spec.modes());
    for k in 0..spec.modes() {
        if spec.singular_values[k] > 0.0 {
            times.push((k, gd_learn_time(spec, k, fraction)?));
        }
    }
    times.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(times)
}

/// Parameters of the two coupled gating-race ODEs.
#[derive(Debug, Clone)]
pub struct GatingParams {
    /// Pathway count through the gated unit (P <= M^2).
    pub pathways: usize,
    /// Source count M.
    pub sources: usize,
    /// Data statistic S.
    pub s_stat: f64,
    /// Data statistic D.
    pub d_stat: f64,
    /// Initial mode strengths.
    pub b1_0: f64,
    pub b2_0: f64,
}

impl GatingParams {
    pub fn validate(&self) -> Result<()> {
        if self.sources == 0 || self.pathways == 0 {
            return Err(Error::invalid("pathways and sources must be positive"));
        }
        if self.pathways > self.sources * self.sources {
            return Err(Error::invalid("pathways cannot exceed sources^2"));
        }
        if !(self.s_stat > 0.0 && self.d_stat > 0.0) {
            return Err(Error::invalid("data statistics must be positive"));
        }
        Ok(())
    }

    fn derivatives(&self, b1: f64, b2: f64) -> (f64, f64) {
        let m2 = (self.sources * self.sources) as f64;
        let p = self.pathways as f64;
        let bracket = self.s_stat - b2 * b1 * b1 * self.d_stat;
        let db1 = (p.sqrt() / m2) * b2 * b1 * bracket;
        let db2 = (p / m2) * b1 * b1 * bracket;
        (db1, db2)
    }
}

/// One sample of the gating-race trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingState {
    pub t: f64,
    pub b1: f64,
    pub b2: f64,
}

impl GatingState {
    /// The mode strength whose equilibrium is S/D.
    pub fn composite(&self) -> f64 {
        self.b2 * self.b1 * self.b1
    }
}

/// Integrate the gating-race ODEs with fixed-step RK4.
///
/// Stops at `t_max` or as soon as `B2 B1^2` is within 1e-9 of the
/// equilibrium value S/D. Errors if the state leaves the finite range.
pub fn gating_race_integrate(
    params: &GatingParams,
    dt: f64,
    t_max: f64,
) -> Result<Vec<GatingState>> {
    params.validate()?;
    if !(dt > 0.0) || !(t_max >= 0.0) {
        return Err(Error::invalid("dt must be positive and t_max non-negative"));
    }
    let equilibrium = params.s_stat / params.d_stat;
    let mut b1 = params.b1_0;
    let mut b2 = params.b2_0;
    let mut t = 0.0;
    let mut out = vec![GatingState { t, b1, b2 }];
    while t < t_max {
        let (k1a, k1b) = params.derivatives(b1, b2);
        let (k2a, k2b) = params.derivatives(b1 + 0.5 * dt * k1a, b2 + 0.5 * dt * k1b);
        let (k3a, k3b) = params.derivatives(b1 + 0.5 * dt * k2a, b2 + 0.5 * dt * k2b);
        let (k4a, k4b) = params.derivatives(b1 + dt * k3a, b2 + dt * k3b);
        b1 += dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
        b2 += dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b);
        t += dt;
        if !b1.is_finite() || !b2.is_finite() {
            return Err(Error::numerical("gating-race integration diverged"));
        }
        let state = GatingState { t, b1, b2 };
        out.push(state);
        if (state.composite() - equilibrium).abs() <= 1e-9 {
            break;
        }
    }
    Ok(out)
}

/// First trajectory time at which `B2 B1^2` reaches `fraction` of the
/// equilibrium S/D, linearly interpolated between samples.
pub fn gating_time_to_fraction(trajectory: &[GatingState], params: &GatingParams, fraction: f64) -> Option<f64> {
    let target = fraction * params.s_stat / params.d_stat;
    let mut prev: Option<&GatingState> = None;
    for state in trajectory {
        if state.composite() >= target {
            if let Some(p) = prev {
                let (c0, c1) = (p.composite(), state.composite());
                if c1 > c0 {
                    let w = (target - c0) / (c1 - c0);
                    return Some(p.t + w * (state.t - p.t));
                }
            }
            return Some(state.t);
        }
        prev = Some(state);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(values: &[f64], init: f64) -> SpectrumSpec {
        SpectrumSpec::new(values.to_vec(), init).unwrap()
    }

    #[test]
    fn logistic_fixed_point_at_target() {
        // sigma0 = s is a fixed point of the logistic flow.
        let s = SpectrumSpec {
            singular_values: vec![2.0],
            init_scale: 2.0,
        };
        for t in [0.0, 0.5, 3.0, 100.0] {
            let v = gd_sigma_trajectory(&s, 0, t).unwrap();
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logistic_asymptote() {
        let s = spec(&[1.0], 0.01);
        let v = gd_sigma_trajectory(&s, 0, 1e6).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_monotone_in_time() {
        let s = spec(&[2.0, 1.0], 1e-3);
        let mut prev = 0.0;
        for i in 0..100 {
            let v = gd_sigma_trajectory(&s, 0, i as f64 * 0.1).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn zero_singular_value_is_stationary() {
        let s = SpectrumSpec {
            singular_values: vec![1.0, 0.0],
            init_scale: 0.01,
        };
        assert_eq!(gd_sigma_trajectory(&s, 1, 5.0).unwrap(), 0.01);
    }

    #[test]
    fn learn_time_half_fraction_closed_form() {
        // At fraction 1/2 the inversion reduces to ln(s/sigma0 - 1)/(2s).
        let s = spec(&[2.0], 1e-4);
        let t = gd_learn_time(&s, 0, 0.5).unwrap();
        let expect = (2.0 / 1e-4 - 1.0_f64).ln() / 4.0;
        assert!((t - expect).abs() < 1e-12);
        // And the trajectory indeed passes through s/2 there.
        let v = gd_sigma_trajectory(&s, 0, t).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn learn_time_zero_when_already_there() {
        // sigma0 = fraction * s gives t = 0.
        let s = SpectrumSpec {
            singular_values: vec![2.0],
            init_scale: 1.0,
        };
        let t = gd_learn_time(&s, 0, 0.5).unwrap();
        assert!(t.abs() < 1e-12);
    }

    #[test]
    fn doubling_the_singular_value_nearly_halves_the_learn_time() {
        // Exact relation: t(2s) - t(s)/2 = ln(2 + 1/(s/sigma0 - 1)) / (4s),
        // which is positive but below ln(3)/(4s) whenever sigma0 <= s/2.
        // So the time is "half plus a logarithmic correction".
        let sigma0 = 1e-4;
        for s_val in [0.5, 1.0, 2.0, 8.0] {
            let tv = gd_learn_time(&spec(&[s_val], sigma0), 0, 0.5).unwrap();
            let t2 = gd_learn_time(&spec(&[2.0 * s_val], sigma0), 0, 0.5).unwrap();
            assert!(t2 > 0.5 * tv, "learn time fell below half");
            assert!(
                t2 < 0.5 * tv + 3.0_f64.ln() / (4.0 * s_val),
                "learn time exceeded half plus the log correction"
            );
            let exact_gap = (2.0 + 1.0 / (s_val / sigma0 - 1.0)).ln() / (4.0 * s_val);
            assert!((t2 - 0.5 * tv - exact_gap).abs() < 1e-10);
        }
    }

    #[test]
    fn learn_time_rejects_bad_fraction() {
        let s = spec(&[1.0], 1e-3);
        assert!(gd_learn_time(&s, 0, 0.0).is_err());
        assert!(gd_learn_time(&s, 0, 1.0).is_err());
    }

    #[test]
    fn spectral_trajectory_values() {
        let s4 = spec(&[4.0], 1e-3);
        assert_eq!(spectral_sigma_trajectory(&s4, 0, 0.0).unwrap(), 0.0);
        assert!((spectral_sigma_trajectory(&s4, 0, 1.5).unwrap() - 2.25).abs() < 1e-15);
        assert_eq!(spectral_sigma_trajectory(&s4, 0, 3.0).unwrap(), 4.0);
    }

    #[test]
    fn spectral_trajectory_saturates_exactly() {
        let s = spec(&[2.0, 1.0], 1e-3);
        let sat = 1.0_f64; // sqrt(s_2)
        for dt in [0.0, 0.1, 5.0] {
            assert_eq!(spectral_sigma_trajectory(&s, 1, sat + dt).unwrap(), 1.0);
        }
    }

    #[test]
    fn spectral_phase_schedule_single_mode() {
        let phases = spectral_phase_schedule(&spec(&[4.0], 1e-3));
        assert_eq!(phases.len(), 1);
        assert_eq!(phases[0].active, vec![0]);
        assert_eq!(phases[0].entry_time, 0.0);
        assert!((phases[0].exit_time - 2.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_phase_schedule_two_distinct_modes() {
        // s = [4, 1]: the small mode saturates at t=1, the large at t=2;
        // in between only the large one grows.
        let phases = spectral_phase_schedule(&spec(&[4.0, 1.0], 1e-3));
        assert_eq!(phases.len(), 2);
        assert_eq!(phases[0].active, vec![0, 1]);
        assert!((phases[0].exit_time - 1.0).abs() < 1e-15);
        assert_eq!(phases[1].active, vec![0]);
        assert!((phases[1].entry_time - 1.0).abs() < 1e-15);
        assert!((phases[1].exit_time - 2.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_phase_schedule_ties_saturate_together() {
        let phases = spectral_phase_schedule(&spec(&[4.0, 4.0], 1e-3));
        assert_eq!(phases.len(), 1);
        assert_eq!(phases[0].active, vec![0, 1]);
        assert!((phases[0].exit_time - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gd_schedule_orders_large_modes_first() {
        let s = spec(&[2.0, 1.0], 1e-4);
        let schedule = gd_phase_schedule(&s, 0.99).unwrap();
        assert_eq!(schedule[0].0, 0);
        assert!(schedule[0].1 < schedule[1].1);
        // Equal values learn at equal times.
        let tied = gd_phase_schedule(&spec(&[1.5, 1.5], 1e-4), 0.99).unwrap();
        assert!((tied[0].1 - tied[1].1).abs() < 1e-12);
    }

    #[test]
    fn phase_orders_of_the_two_flows_are_reversed() {
        let s = spec(&[5.0, 2.0, 0.5], 1e-4);
        let gd = gd_phase_schedule(&s, 0.99).unwrap();
        let gd_order: Vec<usize> = gd.iter().map(|&(k, _)| k).collect();
        assert_eq!(gd_order, vec![0, 1, 2]);
        let spectral = spectral_phase_schedule(&s);
        // Spectral saturation order is the reverse: last phase still has
        // mode 0 growing, first phase everything.
        assert_eq!(spectral.last().unwrap().active, vec![0]);
        assert_eq!(spectral[0].active, vec![0, 1, 2]);
    }

    #[test]
    fn gating_zero_state_is_a_fixed_point() {
        let params = GatingParams {
            pathways: 49,
            sources: 7,
            s_stat: 1.0,
            d_stat: 1.0,
            b1_0: 0.0,
            b2_0: 0.0,
        };
        let traj = gating_race_integrate(&params, 1e-2, 5.0).unwrap();
        for state in traj {
            assert_eq!(state.b1, 0.0);
            assert_eq!(state.b2, 0.0);
        }
    }

    #[test]
    fn gating_equilibrium_has_vanishing_derivatives() {
        let params = GatingParams {
            pathways: 7,
            sources: 7,
            s_stat: 2.0,
            d_stat: 0.5,
            b1_0: 1.0,
            b2_0: 4.0, // b2 * b1^2 = 4 = S/D
        };
        let (db1, db2) = params.derivatives(params.b1_0, params.b2_0);
        assert!(db1.abs() < 1e-12);
        assert!(db2.abs() < 1e-12);
    }

    #[test]
    fn more_pathways_win_the_race() {
        let base = GatingParams {
            pathways: 1,
            sources: 7,
            s_stat: 1.0,
            d_stat: 1.0,
            b1_0: 1e-3,
            b2_0: 1e-3,
        };
        let mut times = Vec::new();
        for p in [1usize, 49] {
            let params = GatingParams {
                pathways: p,
                ..base.clone()
            };
            let traj = gating_race_integrate(&params, 1e-2, 5e4).unwrap();
            let t = gating_time_to_fraction(&traj, &params, 0.5).expect("race never finished");
            times.push(t);
        }
        assert!(
            times[1] < times[0],
            "P=49 should reach half-equilibrium before P=1 ({} vs {})",
            times[1],
            times[0]
        );
    }

    #[test]
    fn gating_rejects_too_many_pathways() {
        let params = GatingParams {
            pathways: 50,
            sources: 7,
            s_stat: 1.0,
            d_stat: 1.0,
            b1_0: 0.1,
            b2_0: 0.1,
        };
        assert!(params.validate().is_err());
    }
}

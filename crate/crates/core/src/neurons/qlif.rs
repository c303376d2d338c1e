//! Quantum leaky integrate-and-fire neuron.
//!
//! A single qubit is re-prepared each step with a rotation whose angle
//! recovers the previous excitation probability, integrates positive input
//! current linearly, and leaks otherwise with an exponential decay. The
//! excitation probability is the membrane-potential analogue; a spike fires
//! when it crosses the threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

use super::compute_currents;

/// Probability readout: closed form, or an empirical mean of repeated
/// single-qubit measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QlifMode {
    Exact,
    Shots(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QlifConfig<T: Scalar> {
    /// Firing threshold in `[0, 1]`.
    pub threshold: T,
    /// Leak scaling factor, positive.
    pub beta: T,
    /// Decay time constant, positive.
    pub t1: T,
    pub mode: QlifMode,
}

impl<T: Scalar> QlifConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.threshold < T::zero() || self.threshold > T::one() {
            return Err(CoreError::config("threshold must lie in [0, 1]"));
        }
        if self.beta <= T::zero() || self.t1 <= T::zero() {
            return Err(CoreError::config("beta and T1 must be positive"));
        }
        Ok(())
    }
}

/// Two weight vectors over the presynaptic sources: one driving integration,
/// one driving leakage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QlifParams<T: Scalar> {
    pub w_s: Vec<T>,
    pub w_o: Vec<T>,
}

impl<T: Scalar> QlifParams<T> {
    pub fn init(fan_in: usize, rng: &mut impl Rng) -> Self {
        let scale = if fan_in > 0 { 1.0 / (fan_in as f64).sqrt() } else { 0.0 };
        let mut draw = || {
            (0..fan_in)
                .map(|_| T::from_f64_lit((rng.gen::<f64>() * 2.0 - 1.0) * scale))
                .collect::<Vec<_>>()
        };
        QlifParams { w_s: draw(), w_o: draw() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_s.len() != self.w_o.len() {
            return Err(CoreError::config("w_s and w_o must have equal length"));
        }
        if self.w_s.iter().chain(self.w_o.iter()).any(|v| !v.is_finite()) {
            return Err(CoreError::invalid("weights must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QlifState<T: Scalar> {
    /// Excitation probability carried from the previous step.
    pub alpha_prev: T,
    pub spike_prev: bool,
}

impl<T: Scalar> Default for QlifState<T> {
    fn default() -> Self {
        QlifState { alpha_prev: T::zero(), spike_prev: false }
    }
}

/// Excitation probability retained after the previous step: the previous
/// probability if the neuron stayed silent, zero after a spike (the phase
/// reset discards the membrane state, so the leak acts on the reset value).
pub fn retained_alpha<T: Scalar>(state: &QlifState<T>) -> T {
    if state.spike_prev {
        T::zero()
    } else {
        state.alpha_prev
    }
}

/// Rotation angle recovering probability `alpha`: `2 asin(sqrt(alpha))`.
pub fn recovery_phase<T: Scalar>(alpha: T) -> T {
    let two = T::from_f64_lit(2.0);
    two * alpha.max(T::zero()).min(T::one()).sqrt().asin()
}

/// Deterministic part of a step: the rotation angle and exact probability.
pub fn qlif_phase<T: Scalar>(
    cfg: &QlifConfig<T>,
    state: &QlifState<T>,
    z_s: T,
    z_o: T,
) -> (T, T) {
    let retained = retained_alpha(state);
    let phase_recovered = recovery_phase(retained);
    let drive = if z_s > T::zero() {
        T::PI() * z_s
    } else {
        -recovery_phase(retained * (-cfg.beta * z_o.abs() / cfg.t1).exp())
    };
    let phi = phase_recovered + drive;
    let half = phi / T::from_f64_lit(2.0);
    (phi, half.sin() * half.sin())
}

/// One step: returns the spike, the probability used for thresholding, and
/// the new state. In shots mode both the readout and the carried state use
/// the empirical probability, mirroring the hardware estimate.
pub fn qlif_step<T: Scalar>(
    cfg: &QlifConfig<T>,
    params: &QlifParams<T>,
    state: &QlifState<T>,
    spikes_in: &[u8],
    rng: &mut impl Rng,
) -> Result<(bool, T, QlifState<T>)> {
    cfg.validate()?;
    let fan_in = params.w_s.len();
    let z_s = compute_currents(&params.w_s, spikes_in, 1, fan_in)?[0];
    let z_o = compute_currents(&params.w_o, spikes_in, 1, fan_in)?[0];
    let (_, alpha_exact) = qlif_phase(cfg, state, z_s, z_o);
    let alpha = match cfg.mode {
        QlifMode::Exact => alpha_exact,
        QlifMode::Shots(shots) => {
            let hits = (0..shots)
                .filter(|_| T::from_f64_lit(rng.gen::<f64>()) < alpha_exact)
                .count();
            T::from_f64_lit(hits as f64) / T::from_f64_lit(shots as f64)
        }
    };
    let spike = alpha > cfg.threshold;
    Ok((spike, alpha, QlifState { alpha_prev: alpha, spike_prev: spike }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cfg(threshold: f64) -> QlifConfig<f64> {
        QlifConfig { threshold, beta: 1.0, t1: 1.0, mode: QlifMode::Exact }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn fresh_state_integrates_linearly() {
        // z_s = 0.5 gives phi = pi/2 and alpha = 0.5.
        let params = QlifParams { w_s: vec![0.5], w_o: vec![0.0] };
        let (spike, alpha, _) =
            qlif_step(&cfg(0.6), &params, &QlifState::default(), &[1], &mut rng()).unwrap();
        assert!((alpha - 0.5).abs() < 1e-12);
        assert!(!spike);
    }

    #[test]
    fn spike_fires_above_threshold_and_resets_phase() {
        let params = QlifParams { w_s: vec![0.56], w_o: vec![0.0] };
        let (spike, alpha, state) =
            qlif_step(&cfg(0.5), &params, &QlifState::default(), &[1], &mut rng()).unwrap();
        assert!(alpha > 0.5 && spike);
        // Next step starts from a reset phase: silent input keeps alpha at 0.
        let (spike2, alpha2, _) = qlif_step(&cfg(0.5), &params, &state, &[0], &mut rng()).unwrap();
        assert!(!spike2);
        assert!(alpha2.abs() < 1e-12);
    }

    #[test]
    fn leak_case_matches_hand_evaluation() {
        // alpha_prev = 0.5, no prior spike, z_s <= 0, beta |z_o| / T1 = ln 2:
        // phi_o = pi/2, drive = -pi/3, phi = pi/6, alpha = sin^2(pi/12).
        let c = cfg(0.9);
        let state = QlifState { alpha_prev: 0.5, spike_prev: false };
        let (phi, alpha) = qlif_phase(&c, &state, 0.0, std::f64::consts::LN_2);
        assert!((phi - PI / 6.0).abs() < 1e-12);
        let expect = (PI / 12.0).sin().powi(2);
        assert!((alpha - expect).abs() < 1e-12);
        assert!((alpha - 0.0669872981077806).abs() < 1e-9);
    }

    #[test]
    fn phase_recovery_round_trip_preserves_alpha() {
        for alpha in [0.0f64, 0.1, 0.25, 0.5, 0.77, 1.0] {
            let phi = recovery_phase::<f64>(alpha);
            let rt = (phi / 2.0).sin().powi(2);
            assert!((rt - alpha).abs() < 1e-12);
        }
    }

    #[test]
    fn silent_input_after_spike_keeps_alpha_zero() {
        let params = QlifParams { w_s: vec![0.9], w_o: vec![0.3] };
        let state = QlifState { alpha_prev: 0.8, spike_prev: true };
        let (_, alpha, _) = qlif_step(&cfg(0.5), &params, &state, &[0], &mut rng()).unwrap();
        assert_eq!(alpha, 0.0);
    }

    #[test]
    fn shots_mode_estimates_probability() {
        let c: QlifConfig<f64> =
            QlifConfig { threshold: 0.5, beta: 1.0, t1: 1.0, mode: QlifMode::Shots(4000) };
        let params = QlifParams { w_s: vec![0.5], w_o: vec![0.0] };
        let (_, alpha, _) =
            qlif_step(&c, &params, &QlifState::default(), &[1], &mut rng()).unwrap();
        assert!((alpha - 0.5).abs() < 0.05, "empirical alpha {alpha}");
    }
}

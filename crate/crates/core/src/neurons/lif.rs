//! Classical leaky integrate-and-fire baseline.
//!
//! Soft reset by gating: `u_t = decay * u_{t-1} * (1 - s_{t-1}) + w . x_t`,
//! spike when the potential exceeds the threshold.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

use super::compute_currents;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifParams<T: Scalar> {
    pub weights: Vec<T>,
    /// Membrane decay per step, in `(0, 1)`.
    pub decay: T,
    pub threshold: T,
}

impl<T: Scalar> LifParams<T> {
    pub fn init(fan_in: usize, rng: &mut impl Rng) -> Self {
        let scale = if fan_in > 0 { 1.0 / (fan_in as f64).sqrt() } else { 0.0 };
        LifParams {
            weights: (0..fan_in)
                .map(|_| T::from_f64_lit((rng.gen::<f64>() * 2.0 - 1.0) * scale))
                .collect(),
            decay: T::from_f64_lit(0.9),
            threshold: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.decay <= T::zero() || self.decay >= T::one() {
            return Err(CoreError::config("decay must lie in (0, 1)"));
        }
        if self.weights.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::invalid("weights must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifState<T: Scalar> {
    pub potential: T,
    pub spike_prev: bool,
}

impl<T: Scalar> Default for LifState<T> {
    fn default() -> Self {
        LifState { potential: T::zero(), spike_prev: false }
    }
}

/// One step: returns the spike, the membrane potential, and the new state.
pub fn lif_step<T: Scalar>(
    params: &LifParams<T>,
    state: &LifState<T>,
    spikes_in: &[u8],
) -> Result<(bool, T, LifState<T>)> {
    params.validate()?;
    let drive = compute_currents(&params.weights, spikes_in, 1, params.weights.len())?[0];
    let gate = if state.spike_prev { T::zero() } else { T::one() };
    let potential = params.decay * state.potential * gate + drive;
    let spike = potential > params.threshold;
    Ok((spike, potential, LifState { potential, spike_prev: spike }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: f64) -> LifParams<f64> {
        LifParams { weights: vec![w], decay: 0.9, threshold: 1.0 }
    }

    #[test]
    fn strong_drive_spikes_immediately() {
        let (spike, u, _) = lif_step(&params(2.0), &LifState::default(), &[1]).unwrap();
        assert!(spike && u > 1.0);
    }

    #[test]
    fn silence_never_spikes() {
        let mut state = LifState::default();
        for _ in 0..50 {
            let (spike, _, next) = lif_step(&params(2.0), &state, &[0]).unwrap();
            assert!(!spike);
            state = next;
        }
    }

    #[test]
    fn weak_constant_drive_crosses_threshold_at_step_seven() {
        // Iterating u_t = 0.9 u_{t-1} + 0.2: u_6 = 0.9371, u_7 = 1.0434 is
        // the first value above threshold 1.
        let mut state = LifState::default();
        let mut first_spike = None;
        for t in 1..=20 {
            let (spike, u, next) = lif_step(&params(0.2), &state, &[1]).unwrap();
            if t == 7 {
                assert!((u - 1.0434062).abs() < 1e-6);
            }
            if spike && first_spike.is_none() {
                first_spike = Some(t);
            }
            state = next;
        }
        assert_eq!(first_spike, Some(7));
    }

    #[test]
    fn decay_outside_unit_interval_is_rejected() {
        let p = LifParams { weights: vec![0.1], decay: 1.0, threshold: 1.0 };
        assert!(lif_step(&p, &LifState::default(), &[0]).is_err());
    }
}

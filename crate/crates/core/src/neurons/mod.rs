//! Spiking neuron models over a shared per-step interface:
//! (incoming spikes, internal state) -> (outgoing spikes, probability record,
//! new state).
//!
//! Three models are provided: the stochastic quantum spiking neuron
//! ([`sqs`]), the quantum leaky integrate-and-fire emulation ([`qlif`]), and
//! a classical leaky integrate-and-fire baseline ([`lif`]).

pub mod lif;
pub mod qlif;
pub mod sqs;

pub use lif::{lif_step, LifParams, LifState};
pub use qlif::{qlif_step, QlifConfig, QlifMode, QlifParams, QlifState};
pub use sqs::{
    build_step_unitary, sqs_step, sqs_step_forced, AnsatzGate, AnsatzSpec, GateKind, SqsConfig,
    SqsParams, SqsState, SqsStepOutput, StepMode,
};

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Count of event-driven operations (synaptic accumulations and embedding
/// rotations) since the last reset. Cost must track the spike count, not the
/// fan-in; tests assert against this counter.
static EVENT_OPS: AtomicU64 = AtomicU64::new(0);

pub fn event_ops() -> u64 {
    EVENT_OPS.load(Ordering::Relaxed)
}

pub fn reset_event_ops() {
    EVENT_OPS.store(0, Ordering::Relaxed);
}

fn record_event_ops(n: u64) {
    if n > 0 {
        EVENT_OPS.fetch_add(n, Ordering::Relaxed);
    }
}

/// Input currents `z^n = sum_p w^n_p x^n_p` from binary presynaptic spikes.
///
/// `weights` and `spikes` are `channels x fan_in`, row-major. Zero entries
/// of `spikes` are skipped, so the accumulation work is proportional to the
/// number of incoming spikes.
pub fn compute_currents<T: Scalar>(
    weights: &[T],
    spikes: &[u8],
    channels: usize,
    fan_in: usize,
) -> Result<Vec<T>> {
    if weights.len() != channels * fan_in || spikes.len() != channels * fan_in {
        return Err(CoreError::invalid(format!(
            "current shapes disagree: weights {}, spikes {}, expected {}x{}",
            weights.len(),
            spikes.len(),
            channels,
            fan_in
        )));
    }
    let mut ops = 0u64;
    let mut currents = Vec::with_capacity(channels);
    for n in 0..channels {
        let row = n * fan_in;
        let mut acc = T::zero();
        for p in 0..fan_in {
            if spikes[row + p] != 0 {
                acc += weights[row + p];
                ops += 1;
            }
        }
        currents.push(acc);
    }
    record_event_ops(ops);
    Ok(currents)
}

/// Embedding angles `phi^n = pi * z^n` for positive currents, `0` otherwise.
///
/// Non-positive currents emit no rotation, so downstream circuits skip those
/// qubits entirely. Angles are not wrapped or clipped; training is expected
/// to keep currents modest.
pub fn embed_angles<T: Scalar>(currents: &[T]) -> Vec<T> {
    let mut rotations = 0u64;
    let out = currents
        .iter()
        .map(|&z| {
            if z > T::zero() {
                rotations += 1;
                T::PI() * z
            } else {
                T::zero()
            }
        })
        .collect();
    record_event_ops(rotations);
    out
}

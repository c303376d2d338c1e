//! Training engines and the exhaustive-enumeration oracle.
//!
//! [`local`] implements the local zeroth-order rule: a constant number of
//! global forward passes per example, scalar feedback to every hidden
//! neuron, and per-neuron gradient estimation from one-step local replays
//! (simultaneous-perturbation estimates for synaptic weights, the
//! parameter-shift rule for circuit angles). [`surrogate`] implements the
//! backpropagation trainer with a differentiable stand-in for spike
//! sampling. [`oracle`] enumerates tiny networks exactly and grounds both.

pub mod local;
pub mod oracle;
pub mod replay;
pub mod surrogate;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{spikes_for_item, Dataset, EncoderConfig};
use crate::error::{CoreError, Result};
use crate::network::{forward, rate_decode, ForwardOptions, NetworkGraph, OutputMode};
use crate::neurons::{SqsConfig, SqsParams, SqsState, StepMode};
use crate::qcore::BitString;
use crate::rng::{Purpose, RngFactory};
use crate::Real;

pub use local::{
    assemble_hidden_gradient, assemble_output_gradient, global_forward_batch, local_item_gradient,
    local_train_step, psr_theta_gradient, spsa_weight_gradient, FeedbackSignal,
};
pub use oracle::{enumerate_likelihood, enumerated_hidden_gradient};
pub use replay::{exact_log_grad, replay_prob, ReplayCtx};
pub use surrogate::{
    build_anchor, surrogate_item_gradient, surrogate_loss, surrogate_loss_and_grad,
    surrogate_train_step, SurrogateAnchor,
};

/// Probability estimation mode for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Exact,
    Shots,
}

/// How local log-probability gradients are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalGradients {
    /// Simultaneous perturbations for weights, parameter shifts for angles.
    Estimated,
    /// Closed-form one-step gradients (the idealized rule).
    Exact,
}

/// Pairing between the per-step feedback signal and per-step scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    /// Feedback at step t multiplies the score at the same t.
    Stepwise,
    /// Score at step t multiplies the accumulated feedback over t' >= t,
    /// which recovers the likelihood-bound gradient.
    Cumulative,
}

/// Hyperparameters shared by both trainers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Global forward passes per example.
    pub global_passes: usize,
    /// Weight-perturbation count per replay context.
    pub m_syn: usize,
    /// Shift evaluations per circuit angle.
    pub m_som: usize,
    /// Shots per expectation estimate in shots mode.
    pub m_p: usize,
    /// Perturbation magnitude for the weight estimator.
    pub epsilon: Real,
    pub lr_w: Real,
    pub lr_theta: Real,
    pub mode: TrainMode,
    /// Probability clamp applied inside every logarithm.
    pub p_floor: Real,
    /// Spike-rate regularizer strength.
    pub lambda: Real,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_local_gradients")]
    pub local_gradients: LocalGradients,
    #[serde(default = "default_feedback")]
    pub feedback: FeedbackMode,
    /// Optional temperature for the surrogate sigmoid (1 = as written).
    #[serde(default = "default_temperature")]
    pub surrogate_temperature: Real,
}

fn default_local_gradients() -> LocalGradients {
    LocalGradients::Estimated
}

fn default_feedback() -> FeedbackMode {
    FeedbackMode::Stepwise
}

fn default_temperature() -> Real {
    1.0
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            global_passes: 1,
            m_syn: 5,
            m_som: 1,
            m_p: 5,
            epsilon: 1e-3,
            lr_w: 0.05,
            lr_theta: 0.05,
            mode: TrainMode::Exact,
            p_floor: 1e-12,
            lambda: 0.0,
            batch_size: 32,
            seed: 0,
            local_gradients: LocalGradients::Estimated,
            feedback: FeedbackMode::Stepwise,
            surrogate_temperature: 1.0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_passes < 1 || self.m_syn < 1 || self.m_som < 1 || self.m_p < 1 {
            return Err(CoreError::config("pass and shot counts must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(CoreError::config("epsilon must be positive"));
        }
        if !(self.p_floor > 0.0 && self.p_floor <= 1e-3) {
            return Err(CoreError::config("p_floor must lie in (0, 1e-3]"));
        }
        if self.batch_size < 1 {
            return Err(CoreError::config("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn step_mode(&self) -> StepMode {
        match self.mode {
            TrainMode::Exact => StepMode::Exact,
            TrainMode::Shots => StepMode::Shots { m_p: self.m_p },
        }
    }

    /// Natural log with the configured probability floor.
    pub fn clamped_ln(&self, p: Real) -> Real {
        p.max(self.p_floor).ln()
    }
}

/// Instrumentation for the cost contract: global passes, single local
/// expectation evaluations, and individual measurement shots.
#[derive(Debug, Default)]
pub struct Counters {
    pub global_passes: AtomicU64,
    pub local_evals: AtomicU64,
    pub local_shots: AtomicU64,
}

impl Counters {
    pub fn new() -> Self {
        Counters::default()
    }

    pub fn snapshot(&self) -> (u64, u64, u64) {
        (
            self.global_passes.load(Ordering::Relaxed),
            self.local_evals.load(Ordering::Relaxed),
            self.local_shots.load(Ordering::Relaxed),
        )
    }

    pub(crate) fn add_global(&self, n: u64) {
        self.global_passes.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_evals(&self, n: u64) {
        self.local_evals.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_shots(&self, n: u64) {
        self.local_shots.fetch_add(n, Ordering::Relaxed);
    }
}

/// Per-neuron gradient buffers matching the parameter shapes.
#[derive(Debug, Clone)]
pub struct GradientAccumulator {
    pub d_weights: Vec<Vec<Real>>,
    pub d_theta: Vec<Vec<Real>>,
}

impl GradientAccumulator {
    pub fn zeros(graph: &NetworkGraph) -> Self {
        let mut d_weights = Vec::with_capacity(graph.num_neurons());
        let mut d_theta = Vec::with_capacity(graph.num_neurons());
        for kind in graph.neurons() {
            match kind {
                crate::network::NeuronKind::Sqs { params, .. } => {
                    d_weights.push(vec![0.0; params.weights.len()]);
                    d_theta.push(vec![0.0; params.theta.len()]);
                }
                crate::network::NeuronKind::Qlif { params, .. } => {
                    d_weights.push(vec![0.0; params.w_s.len() + params.w_o.len()]);
                    d_theta.push(Vec::new());
                }
                crate::network::NeuronKind::Lif { params } => {
                    d_weights.push(vec![0.0; params.weights.len()]);
                    d_theta.push(Vec::new());
                }
            }
        }
        GradientAccumulator { d_weights, d_theta }
    }

    pub fn add_scaled(&mut self, other: &GradientAccumulator, scale: Real) {
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (a, b) in self.d_theta.iter_mut().zip(&other.d_theta) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    /// Plain gradient-descent update of every neuron's parameters.
    pub fn apply(&self, graph: &mut NetworkGraph, lr_w: Real, lr_theta: Real) {
        for i in 0..graph.num_neurons() {
            match graph.neuron_mut(i) {
                crate::network::NeuronKind::Sqs { params, .. } => {
                    for (w, g) in params.weights.iter_mut().zip(&self.d_weights[i]) {
                        *w -= lr_w * g;
                    }
                    for (t, g) in params.theta.iter_mut().zip(&self.d_theta[i]) {
                        *t -= lr_theta * g;
                    }
                }
                crate::network::NeuronKind::Qlif { params, .. } => {
                    let p = params.w_s.len();
                    for (k, g) in self.d_weights[i].iter().enumerate() {
                        if k < p {
                            params.w_s[k] -= lr_w * g;
                        } else {
                            params.w_o[k - p] -= lr_w * g;
                        }
                    }
                }
                crate::network::NeuronKind::Lif { params } => {
                    for (w, g) in params.weights.iter_mut().zip(&self.d_weights[i]) {
                        *w -= lr_w * g;
                    }
                }
            }
        }
    }
}

/// Log-probability of one observed outcome for a single step of an SQS
/// neuron, clamped before the logarithm. Returns `(ln p, p)` where `p` is
/// exact in exact mode and an `m_p`-shot empirical frequency otherwise.
pub fn step_log_prob(
    cfg: &SqsConfig,
    params: &SqsParams<Real>,
    state: &SqsState<Real>,
    spikes_in: &[u8],
    observed: &BitString,
    mode: StepMode,
    p_floor: Real,
    rng: &mut impl Rng,
) -> Result<(Real, Real)> {
    let ctx = ReplayCtx { cfg, pre_memory: &state.memory, spikes_in, outcome: observed };
    let p = replay_prob(&ctx, &params.weights, &params.theta, mode, rng)?;
    Ok((p.max(p_floor).ln(), p))
}

/// Spike-rate regularizer: per step and per group,
/// `(sum_i u_i)^2 / sum_i u_i^2`, scaled by `lambda / T`. Groups with no
/// activity contribute zero.
///
/// `values` is indexed `[t][group][member]`; `u` is the spike probability
/// for quantum neurons and the membrane potential for the classical one.
pub fn regularizer(values: &[Vec<Vec<Real>>], lambda: Real) -> Real {
    if lambda == 0.0 || values.is_empty() {
        return 0.0;
    }
    let t_len = values.len() as Real;
    let mut total = 0.0;
    for slice in values {
        for group in slice {
            let sum: Real = group.iter().sum();
            let sq: Real = group.iter().map(|u| u * u).sum();
            if sq > 0.0 {
                total += sum * sum / sq;
            }
        }
    }
    lambda / t_len * total
}

/// Gradient of [`regularizer`] with respect to each `u`, same shape.
pub fn regularizer_gradient(values: &[Vec<Vec<Real>>], lambda: Real) -> Vec<Vec<Vec<Real>>> {
    let t_len = values.len().max(1) as Real;
    values
        .iter()
        .map(|slice| {
            slice
                .iter()
                .map(|group| {
                    let sum: Real = group.iter().sum();
                    let sq: Real = group.iter().map(|u| u * u).sum();
                    group
                        .iter()
                        .map(|&u| {
                            if lambda == 0.0 || sq <= 0.0 {
                                0.0
                            } else {
                                lambda / t_len * (2.0 * sum * sq - sum * sum * 2.0 * u) / (sq * sq)
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Evaluation summary over a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Real,
    /// Aggregate spike count across the whole network per time step,
    /// averaged over items.
    pub spikes_per_step: Real,
    pub items: usize,
}

/// Free-running evaluation: encode each item, sample a forward pass, and
/// rate-decode the output spikes.
pub fn evaluate(
    graph: &NetworkGraph,
    dataset: &Dataset,
    enc: &EncoderConfig,
    factory: &RngFactory,
    eval_tag: u64,
) -> Result<EvalReport> {
    let mut correct = 0usize;
    let mut spikes = 0.0;
    for (k, item) in dataset.items.iter().enumerate() {
        let mut enc_rng = factory.stream(Purpose::Encode, &[eval_tag, k as u64]);
        let input = spikes_for_item(item, enc, &mut enc_rng)?;
        let rec = forward(
            graph,
            &input,
            factory,
            &[eval_tag, k as u64],
            OutputMode::Sample,
            &ForwardOptions::default(),
        )?;
        let decoded = rate_decode(&rec.output_spikes(graph))?;
        if decoded == item.label {
            correct += 1;
        }
        spikes += rec.spikes_per_step();
    }
    let n = dataset.items.len().max(1);
    Ok(EvalReport {
        accuracy: correct as Real / n as Real,
        spikes_per_step: spikes / n as Real,
        items: dataset.items.len(),
    })
}

/// Deterministic batch of item indices for one iteration.
pub fn batch_indices(
    n_items: usize,
    batch_size: usize,
    iteration: u64,
    factory: &RngFactory,
) -> Vec<usize> {
    let mut rng = factory.stream(Purpose::Batch, &[iteration]);
    (0..batch_size.min(n_items).max(1)).map(|_| rng.gen_range(0..n_items)).collect()
}

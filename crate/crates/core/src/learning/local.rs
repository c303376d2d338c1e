//! Local zeroth-order learning rule.
//!
//! Per example: a constant number `M` of global forward passes with hidden
//! sampling and teacher-forced outputs; per-step feedback signals broadcast
//! to every hidden neuron; then purely local per-neuron gradient estimation
//! from one-step replays (simultaneous perturbations for the synaptic
//! weights, parameter shifts for the circuit angles), assembled into one
//! gradient-descent update.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::network::{forward, ForwardOptions, NetworkGraph, NeuronKind, OutputMode, SpikeTrain, TrajectoryRecord};
use crate::neurons::SqsParams;
use crate::qcore::BitString;
use crate::rng::{Purpose, RngFactory};
use crate::Real;

use super::replay::{exact_log_grad, replay_prob, ReplayCtx};
use super::{Counters, FeedbackMode, GradientAccumulator, LocalGradients, TrainMode, TrainerConfig};

/// Per-pass, per-step global feedback: the summed clamped log-loss of the
/// output neurons' target spikes.
#[derive(Debug, Clone)]
pub struct FeedbackSignal {
    /// Indexed `[pass][t]`.
    pub ell: Vec<Vec<Real>>,
}

impl FeedbackSignal {
    /// Feedback paired with the score at step `t` under the given mode.
    pub fn effective(&self, pass: usize, t: usize, mode: FeedbackMode) -> Real {
        match mode {
            FeedbackMode::Stepwise => self.ell[pass][t],
            FeedbackMode::Cumulative => self.ell[pass][t..].iter().sum(),
        }
    }

    /// Monte-Carlo estimate of the per-example loss bound.
    pub fn mean_loss(&self) -> Real {
        if self.ell.is_empty() {
            return 0.0;
        }
        self.ell.iter().map(|pass| pass.iter().sum::<Real>()).sum::<Real>() / self.ell.len() as Real
    }
}

/// `M` teacher-forced forward passes plus their feedback signals.
pub fn global_forward_batch(
    graph: &NetworkGraph,
    input: &SpikeTrain,
    target: &SpikeTrain,
    tcfg: &TrainerConfig,
    factory: &RngFactory,
    base_tags: &[u64],
    counters: &Counters,
) -> Result<(Vec<TrajectoryRecord>, FeedbackSignal)> {
    let opts = ForwardOptions {
        mode: tcfg.step_mode(),
        p_floor: tcfg.p_floor,
        record_memory: true,
    };
    let mut records = Vec::with_capacity(tcfg.global_passes);
    let mut ell = Vec::with_capacity(tcfg.global_passes);
    for m in 0..tcfg.global_passes {
        let mut tags = base_tags.to_vec();
        tags.push(m as u64);
        let rec = forward(graph, input, factory, &tags, OutputMode::Forced(target), &opts)?;
        counters.add_global(1);
        let mut pass_ell = Vec::with_capacity(input.t_len());
        for t in 0..input.t_len() {
            let mut l = 0.0;
            for (pos, &i) in graph.output().iter().enumerate() {
                let p_hat = match tcfg.mode {
                    TrainMode::Exact => rec.realized_prob[t][i],
                    TrainMode::Shots => {
                        let bits = BitString::new(target.at(t)[pos].clone())?;
                        rec.tables[t][i].prob(&bits)
                    }
                };
                l -= tcfg.clamped_ln(p_hat);
            }
            pass_ell.push(l);
        }
        ell.push(pass_ell);
        records.push(rec);
    }
    Ok((records, FeedbackSignal { ell }))
}

/// Simultaneous-perturbation estimate of the weight block of
/// `grad ln Tr(rho S)` for one replay context.
///
/// Each of the `m_syn` perturbations draws a Rademacher direction, evaluates
/// the outcome probability at `w +/- epsilon * delta` (clamped before the
/// log), and averages the symmetric difference quotients. In shots mode the
/// two evaluations share measurement randomness to cut variance.
pub fn spsa_weight_gradient(
    ctx: &ReplayCtx,
    params: &SqsParams<Real>,
    tcfg: &TrainerConfig,
    perturb_rng: &mut ChaCha8Rng,
    counters: &Counters,
) -> Result<Vec<Real>> {
    let dim = params.weights.len();
    let mut grad = vec![0.0; dim];
    for _ in 0..tcfg.m_syn {
        let delta: Vec<Real> =
            (0..dim).map(|_| if perturb_rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let mut plus = params.weights.clone();
        let mut minus = params.weights.clone();
        for k in 0..dim {
            plus[k] += tcfg.epsilon * delta[k];
            minus[k] -= tcfg.epsilon * delta[k];
        }
        let crn_seed = perturb_rng.gen::<u64>();
        let mut rng_plus = ChaCha8Rng::seed_from_u64(crn_seed);
        let mut rng_minus = ChaCha8Rng::seed_from_u64(crn_seed);
        let o_plus = replay_prob(ctx, &plus, &params.theta, tcfg.step_mode(), &mut rng_plus)?;
        let o_minus = replay_prob(ctx, &minus, &params.theta, tcfg.step_mode(), &mut rng_minus)?;
        counters.add_evals(2);
        if matches!(tcfg.mode, TrainMode::Shots) {
            counters.add_shots(2 * tcfg.m_p as u64);
        }
        let diff = (tcfg.clamped_ln(o_plus) - tcfg.clamped_ln(o_minus)) / (2.0 * tcfg.epsilon);
        for k in 0..dim {
            grad[k] += diff * delta[k];
        }
    }
    for g in grad.iter_mut() {
        *g /= tcfg.m_syn as Real;
    }
    Ok(grad)
}

/// Parameter-shift estimate of `d Tr(rho S) / d theta_j`: the mean over
/// `m_som` repetitions of `(O^+ - O^-) / 2` evaluated at `theta_j +/- pi/2`.
pub fn psr_theta_shift(
    ctx: &ReplayCtx,
    params: &SqsParams<Real>,
    j: usize,
    tcfg: &TrainerConfig,
    shot_rng: &mut ChaCha8Rng,
    counters: &Counters,
) -> Result<Real> {
    let mut acc = 0.0;
    for _ in 0..tcfg.m_som {
        let mut plus = params.theta.clone();
        let mut minus = params.theta.clone();
        plus[j] += std::f64::consts::FRAC_PI_2;
        minus[j] -= std::f64::consts::FRAC_PI_2;
        let o_plus = replay_prob(ctx, &params.weights, &plus, tcfg.step_mode(), shot_rng)?;
        let o_minus = replay_prob(ctx, &params.weights, &minus, tcfg.step_mode(), shot_rng)?;
        counters.add_evals(2);
        if matches!(tcfg.mode, TrainMode::Shots) {
            counters.add_shots(2 * tcfg.m_p as u64);
        }
        acc += (o_plus - o_minus) / 2.0;
    }
    Ok(acc / tcfg.m_som as Real)
}

/// Parameter-shift estimate of `d ln Tr(rho S) / d theta_j`: the raw shift
/// divided by the clamped unshifted probability.
pub fn psr_theta_gradient(
    ctx: &ReplayCtx,
    params: &SqsParams<Real>,
    j: usize,
    unshifted_prob: Real,
    tcfg: &TrainerConfig,
    shot_rng: &mut ChaCha8Rng,
    counters: &Counters,
) -> Result<Real> {
    let raw = psr_theta_shift(ctx, params, j, tcfg, shot_rng, counters)?;
    Ok(raw / unshifted_prob.max(tcfg.p_floor))
}

/// Local estimate of `grad ln Tr(rho S)` for one replay context, by the
/// configured method.
pub fn local_log_grad(
    ctx: &ReplayCtx,
    params: &SqsParams<Real>,
    unshifted_prob: Real,
    tcfg: &TrainerConfig,
    perturb_rng: &mut ChaCha8Rng,
    shot_rng: &mut ChaCha8Rng,
    counters: &Counters,
) -> Result<(Vec<Real>, Vec<Real>)> {
    match tcfg.local_gradients {
        LocalGradients::Exact => exact_log_grad(ctx, params, tcfg.p_floor),
        LocalGradients::Estimated => {
            let gw = spsa_weight_gradient(ctx, params, tcfg, perturb_rng, counters)?;
            let mut gt = Vec::with_capacity(params.theta.len());
            for j in 0..params.theta.len() {
                gt.push(psr_theta_gradient(ctx, params, j, unshifted_prob, tcfg, shot_rng, counters)?);
            }
            Ok((gw, gt))
        }
    }
}

/// Output-neuron reduction: the negated mean over passes of the summed
/// per-step local gradients.
pub fn assemble_output_gradient(
    per_pass_step_grads: &[Vec<(Vec<Real>, Vec<Real>)>],
) -> (Vec<Real>, Vec<Real>) {
    let m = per_pass_step_grads.len().max(1) as Real;
    let (wn, tn) = grad_shape(per_pass_step_grads);
    let mut gw = vec![0.0; wn];
    let mut gt = vec![0.0; tn];
    for pass in per_pass_step_grads {
        for (w, t) in pass {
            for (a, b) in gw.iter_mut().zip(w) {
                *a -= b / m;
            }
            for (a, b) in gt.iter_mut().zip(t) {
                *a -= b / m;
            }
        }
    }
    (gw, gt)
}

/// Hidden-neuron reduction: the mean over passes of feedback-weighted
/// per-step local gradients.
pub fn assemble_hidden_gradient(
    per_pass_step_grads: &[Vec<(Vec<Real>, Vec<Real>)>],
    feedback: &FeedbackSignal,
    mode: FeedbackMode,
) -> (Vec<Real>, Vec<Real>) {
    let m = per_pass_step_grads.len().max(1) as Real;
    let (wn, tn) = grad_shape(per_pass_step_grads);
    let mut gw = vec![0.0; wn];
    let mut gt = vec![0.0; tn];
    for (pass, grads) in per_pass_step_grads.iter().enumerate() {
        for (t, (w, th)) in grads.iter().enumerate() {
            let l = feedback.effective(pass, t, mode);
            for (a, b) in gw.iter_mut().zip(w) {
                *a += l * b / m;
            }
            for (a, b) in gt.iter_mut().zip(th) {
                *a += l * b / m;
            }
        }
    }
    (gw, gt)
}

fn grad_shape(per_pass: &[Vec<(Vec<Real>, Vec<Real>)>]) -> (usize, usize) {
    per_pass
        .iter()
        .flat_map(|p| p.iter())
        .next()
        .map(|(w, t)| (w.len(), t.len()))
        .unwrap_or((0, 0))
}

/// One local-rule update over a batch of `(input, target)` pairs. Returns
/// the mean per-example Monte-Carlo loss.
pub fn local_train_step(
    graph: &mut NetworkGraph,
    batch: &[(SpikeTrain, SpikeTrain)],
    tcfg: &TrainerConfig,
    factory: &RngFactory,
    iteration: u64,
    counters: &Counters,
) -> Result<Real> {
    tcfg.validate()?;
    if graph.neurons().iter().any(|k| !matches!(k, NeuronKind::Sqs { .. })) {
        return Err(CoreError::config(
            "the local rule replays quantum neurons; train other models with the surrogate engine",
        ));
    }
    if batch.is_empty() {
        return Err(CoreError::invalid("empty batch"));
    }
    let mut total = GradientAccumulator::zeros(graph);
    let mut loss_sum = 0.0;
    for (slot, (input, target)) in batch.iter().enumerate() {
        let (item, loss) =
            local_item_gradient(graph, input, target, tcfg, factory, &[iteration, slot as u64], counters)?;
        loss_sum += loss;
        total.add_scaled(&item, 1.0 / batch.len() as Real);
    }
    total.apply(graph, tcfg.lr_w, tcfg.lr_theta);
    Ok(loss_sum / batch.len() as Real)
}

/// Gradient and Monte-Carlo loss of one example under the local rule,
/// without touching the parameters. Items are independent given their tags,
/// so callers may fan them out across threads.
pub fn local_item_gradient(
    graph: &NetworkGraph,
    input: &SpikeTrain,
    target: &SpikeTrain,
    tcfg: &TrainerConfig,
    factory: &RngFactory,
    base_tags: &[u64],
    counters: &Counters,
) -> Result<(GradientAccumulator, Real)> {
    let (records, feedback) =
        global_forward_batch(graph, input, target, tcfg, factory, base_tags, counters)?;
    let grad =
        item_gradient(graph, input, target, &records, &feedback, tcfg, factory, base_tags, counters)?;
    Ok((grad, feedback.mean_loss()))
}

/// Per-example gradient assembly across all neurons, passes, and steps.
#[allow(clippy::too_many_arguments)]
fn item_gradient(
    graph: &NetworkGraph,
    input: &SpikeTrain,
    target: &SpikeTrain,
    records: &[TrajectoryRecord],
    feedback: &FeedbackSignal,
    tcfg: &TrainerConfig,
    factory: &RngFactory,
    base_tags: &[u64],
    counters: &Counters,
) -> Result<GradientAccumulator> {
    let t_len = input.t_len();
    let mut acc = GradientAccumulator::zeros(graph);
    for i in 0..graph.num_neurons() {
        let (cfg, params) = match graph.neuron(i) {
            NeuronKind::Sqs { cfg, params } => (cfg, params),
            _ => unreachable!("checked in local_train_step"),
        };
        let is_output = graph.output().contains(&i);
        let out_pos = graph.output().iter().position(|&o| o == i);
        let mut per_pass: Vec<Vec<(Vec<Real>, Vec<Real>)>> = Vec::with_capacity(records.len());
        for (m, rec) in records.iter().enumerate() {
            let mut per_step = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let x = graph.gather_input(i, t, input, if t == 0 { None } else { Some(rec.spikes.at(t - 1)) });
                let outcome = match out_pos {
                    Some(pos) => BitString::new(target.at(t)[pos].clone())?,
                    None => BitString::new(rec.spikes.at(t)[i].clone())?,
                };
                let pre_memory = rec.pre_memory[t][i]
                    .as_ref()
                    .ok_or_else(|| CoreError::invalid("trajectory lacks memory snapshots"))?;
                let ctx = ReplayCtx { cfg, pre_memory, spikes_in: &x, outcome: &outcome };
                let unshifted = match tcfg.mode {
                    TrainMode::Exact => rec.realized_prob[t][i],
                    TrainMode::Shots => rec.tables[t][i].prob(&outcome),
                };
                let mut tags = base_tags.to_vec();
                tags.extend([m as u64, t as u64, i as u64]);
                let mut perturb_rng = factory.stream(Purpose::Perturb, &tags);
                let mut shot_rng = factory.stream(Purpose::Shots, &tags);
                per_step.push(local_log_grad(
                    &ctx,
                    params,
                    unshifted,
                    tcfg,
                    &mut perturb_rng,
                    &mut shot_rng,
                    counters,
                )?);
            }
            per_pass.push(per_step);
        }
        let (gw, gt) = if is_output {
            assemble_output_gradient(&per_pass)
        } else {
            assemble_hidden_gradient(&per_pass, feedback, tcfg.feedback)
        };
        acc.d_weights[i] = gw;
        acc.d_theta[i] = gt;
    }
    Ok(acc)
}

//! Exhaustive enumeration over hidden trajectories.
//!
//! Ground truth for desk-scale networks: the exact marginal likelihood of a
//! target train, the expectation-form upper bound on its negative log, the
//! full joint trajectory distribution, and the exact expectation of the
//! hidden-neuron score-function gradient estimator.

use crate::error::{CoreError, Result};
use crate::network::{forward_forced, NetworkGraph, NeuronKind, SpikeTrain, TrajectoryRecord};
use crate::qcore::BitString;
use crate::Real;

use super::replay::{exact_log_grad, ReplayCtx};
use super::FeedbackMode;

/// Hard cap on enumerable hidden bits (`|H| * N * T`).
pub const ENUMERATION_CAP: usize = 20;

/// Bit sites of a subset of neurons in canonical order
/// `(t, neuron, channel)`; the first site is the most significant bit.
fn bit_sites(graph: &NetworkGraph, subset: &[usize], t_len: usize) -> Vec<(usize, usize, usize)> {
    let mut sites = Vec::new();
    for t in 0..t_len {
        for &i in subset {
            for ch in 0..graph.neuron(i).channels() {
                sites.push((t, i, ch));
            }
        }
    }
    sites
}

fn check_cap(bits: usize) -> Result<()> {
    if bits > ENUMERATION_CAP {
        return Err(CoreError::Capacity(format!(
            "{bits} trajectory bits exceed the enumeration cap of {ENUMERATION_CAP}"
        )));
    }
    Ok(())
}

/// Forced train over all neurons: `subset` bits from `assignment`, output
/// neurons from `target` (when given).
fn forced_train(
    graph: &NetworkGraph,
    sites: &[(usize, usize, usize)],
    assignment: usize,
    target: Option<&SpikeTrain>,
    t_len: usize,
) -> SpikeTrain {
    let mut forced: Vec<Vec<Vec<u8>>> = (0..t_len)
        .map(|_| graph.neurons().iter().map(|k| vec![0u8; k.channels()]).collect())
        .collect();
    for (k, &(t, i, ch)) in sites.iter().enumerate() {
        forced[t][i][ch] = ((assignment >> (sites.len() - 1 - k)) & 1) as u8;
    }
    if let Some(target) = target {
        for (pos, &i) in graph.output().iter().enumerate() {
            for t in 0..t_len {
                forced[t][i].copy_from_slice(&target.at(t)[pos]);
            }
        }
    }
    SpikeTrain::new(forced).expect("binary by construction")
}

/// Probability of the hidden assignment under the model: the product of the
/// recorded per-step conditional probabilities of the hidden neurons.
fn hidden_prob(graph: &NetworkGraph, rec: &TrajectoryRecord, t_len: usize) -> Real {
    let mut p = 1.0;
    for t in 0..t_len {
        for &i in graph.hidden() {
            p *= rec.realized_prob[t][i];
        }
    }
    p
}

/// Per-step feedback: the summed clamped log-loss of the forced targets.
fn feedback_steps(graph: &NetworkGraph, rec: &TrajectoryRecord, t_len: usize, p_floor: Real) -> Vec<Real> {
    (0..t_len)
        .map(|t| {
            graph
                .output()
                .iter()
                .map(|&i| -rec.realized_prob[t][i].max(p_floor).ln())
                .sum()
        })
        .collect()
}

/// Exact `-ln p(target)` by marginalizing over every hidden trajectory, and
/// the expectation-form upper bound `L` on it. Per-step target probabilities
/// are clamped at `p_floor` inside both quantities, which keeps the bound
/// ordering intact.
pub fn enumerate_likelihood(
    graph: &NetworkGraph,
    input: &SpikeTrain,
    target: &SpikeTrain,
    p_floor: Real,
) -> Result<(Real, Real)> {
    let t_len = input.t_len();
    let sites = bit_sites(graph, graph.hidden(), t_len);
    check_cap(sites.len())?;
    let mut marginal = 0.0;
    let mut bound = 0.0;
    for assignment in 0..(1usize << sites.len()) {
        let forced = forced_train(graph, &sites, assignment, Some(target), t_len);
        let rec = forward_forced(graph, input, &forced, false)?;
        let p_h = hidden_prob(graph, &rec, t_len);
        let ell: Real = feedback_steps(graph, &rec, t_len, p_floor).iter().sum();
        marginal += p_h * (-ell).exp();
        bound += p_h * ell;
    }
    Ok((-marginal.ln(), bound))
}

/// Exact joint distribution over every neuron's trajectory bits, indexed by
/// the canonical `(t, neuron, channel)` bit order.
pub fn enumerate_joint_distribution(graph: &NetworkGraph, input: &SpikeTrain) -> Result<Vec<Real>> {
    let t_len = input.t_len();
    let all: Vec<usize> = (0..graph.num_neurons()).collect();
    let sites = bit_sites(graph, &all, t_len);
    check_cap(sites.len())?;
    let mut dist = Vec::with_capacity(1 << sites.len());
    for assignment in 0..(1usize << sites.len()) {
        let forced = forced_train(graph, &sites, assignment, None, t_len);
        let rec = forward_forced(graph, input, &forced, false)?;
        let mut p = 1.0;
        for t in 0..t_len {
            for i in 0..graph.num_neurons() {
                p *= rec.realized_prob[t][i];
            }
        }
        dist.push(p);
    }
    Ok(dist)
}

/// Canonical trajectory index of a sampled record, for comparison against
/// [`enumerate_joint_distribution`].
pub fn trajectory_index(graph: &NetworkGraph, rec: &TrajectoryRecord) -> usize {
    let t_len = rec.spikes.t_len();
    let all: Vec<usize> = (0..graph.num_neurons()).collect();
    let sites = bit_sites(graph, &all, t_len);
    sites
        .iter()
        .fold(0usize, |acc, &(t, i, ch)| (acc << 1) | rec.spikes.get(t, i, ch) as usize)
}

/// Exact expectation of the hidden-neuron score-function gradient
/// estimator: for each hidden neuron, the enumeration-weighted sum of
/// feedback-paired exact one-step scores. With cumulative feedback and
/// memoryless neurons this equals the gradient of the enumerated bound.
///
/// Returns `(neuron id, weight grad, angle grad)` per hidden neuron.
pub fn enumerated_hidden_gradient(
    graph: &NetworkGraph,
    input: &SpikeTrain,
    target: &SpikeTrain,
    mode: FeedbackMode,
    p_floor: Real,
) -> Result<Vec<(usize, Vec<Real>, Vec<Real>)>> {
    let t_len = input.t_len();
    let sites = bit_sites(graph, graph.hidden(), t_len);
    check_cap(sites.len())?;
    let mut grads: Vec<(usize, Vec<Real>, Vec<Real>)> = graph
        .hidden()
        .iter()
        .map(|&i| match graph.neuron(i) {
            NeuronKind::Sqs { params, .. } => {
                (i, vec![0.0; params.weights.len()], vec![0.0; params.theta.len()])
            }
            _ => (i, Vec::new(), Vec::new()),
        })
        .collect();
    for assignment in 0..(1usize << sites.len()) {
        let forced = forced_train(graph, &sites, assignment, Some(target), t_len);
        let rec = forward_forced(graph, input, &forced, true)?;
        let p_h = hidden_prob(graph, &rec, t_len);
        if p_h == 0.0 {
            continue;
        }
        let ell = feedback_steps(graph, &rec, t_len, p_floor);
        for (slot, &i) in graph.hidden().iter().enumerate() {
            let (cfg, params) = match graph.neuron(i) {
                NeuronKind::Sqs { cfg, params } => (cfg, params),
                _ => continue,
            };
            for t in 0..t_len {
                let weight = match mode {
                    FeedbackMode::Stepwise => ell[t],
                    FeedbackMode::Cumulative => ell[t..].iter().sum(),
                };
                if weight == 0.0 {
                    continue;
                }
                let x = graph.gather_input(
                    i,
                    t,
                    input,
                    if t == 0 { None } else { Some(rec.spikes.at(t - 1)) },
                );
                let outcome = BitString::new(rec.spikes.at(t)[i].clone())?;
                let pre_memory = rec.pre_memory[t][i].as_ref().expect("memory recorded");
                let ctx = ReplayCtx { cfg, pre_memory, spikes_in: &x, outcome: &outcome };
                let (gw, gt) = exact_log_grad(&ctx, params, p_floor)?;
                for (a, b) in grads[slot].1.iter_mut().zip(&gw) {
                    *a += p_h * weight * b;
                }
                for (a, b) in grads[slot].2.iter_mut().zip(&gt) {
                    *a += p_h * weight * b;
                }
            }
        }
    }
    Ok(grads)
}

//! One-step local replays.
//!
//! A replay context freezes everything a neuron saw at one recorded step:
//! the pre-step memory state, the presynaptic spikes, and the realized
//! outcome. Local gradient estimation re-executes just that step under
//! perturbed parameters, so the cost of an evaluation is independent of the
//! sequence length and of the parameter count.

use num_complex::Complex;
use rand::Rng;

use crate::error::Result;
use crate::neurons::{build_step_unitary, compute_currents, embed_angles, SqsConfig, SqsParams, StepMode};
use crate::qcore::{BitString, Unitary};
use crate::{DensityMatrix, Real};

/// Frozen single-step context of one SQS neuron.
#[derive(Debug, Clone, Copy)]
pub struct ReplayCtx<'a> {
    pub cfg: &'a SqsConfig,
    /// Memory state entering the step.
    pub pre_memory: &'a DensityMatrix,
    /// Presynaptic spikes, `n_io x fan_in` row-major.
    pub spikes_in: &'a [u8],
    /// Outcome whose probability is being differentiated.
    pub outcome: &'a BitString,
}

/// Exact probability of the frozen outcome under the given parameters.
pub fn replay_prob_exact(ctx: &ReplayCtx, weights: &[Real], theta: &[Real]) -> Result<Real> {
    let cfg = ctx.cfg;
    let currents = compute_currents(weights, ctx.spikes_in, cfg.n_io, cfg.fan_in)?;
    let angles = embed_angles(&currents);
    let u = build_step_unitary(&angles, theta, &cfg.ansatz, cfg.n_io, cfg.n_mem)?;
    let rho_in = DensityMatrix::ground(cfg.n_io).kron(ctx.pre_memory)?;
    let rho_im = rho_in.evolve(&u)?;
    Ok(outcome_block_trace(&rho_im, cfg, ctx.outcome))
}

/// Probability of the frozen outcome: exact, or an `m_p`-shot empirical
/// frequency drawn from the exact value.
pub fn replay_prob(
    ctx: &ReplayCtx,
    weights: &[Real],
    theta: &[Real],
    mode: StepMode,
    rng: &mut impl Rng,
) -> Result<Real> {
    let p = replay_prob_exact(ctx, weights, theta)?;
    Ok(match mode {
        StepMode::Exact => p,
        StepMode::Shots { m_p } => {
            let hits = (0..m_p).filter(|_| rng.gen::<Real>() < p).count();
            hits as Real / m_p as Real
        }
    })
}

/// Sum of the density-matrix diagonal over the block where the input-output
/// qubits read `outcome` (the Born probability of that outcome).
pub fn outcome_block_trace(rho_im: &DensityMatrix, cfg: &SqsConfig, outcome: &BitString) -> Real {
    let mem_dim = 1usize << cfg.n_mem;
    let base = outcome.index() * mem_dim;
    (0..mem_dim).map(|m| rho_im.get(base + m, base + m).re).sum()
}

/// Exact gradient of `ln max(q, p_floor)` with respect to the weights and
/// circuit angles, where `q` is the frozen outcome's probability.
///
/// Derivation: `q = tr(P U rho_in U^dagger)` with `P` the outcome projector,
/// so `dq/dp = 2 Re tr(P (dU/dp) rho_in U^dagger)` because `P` and `rho_in`
/// are Hermitian. Inside the clamp the gradient is zero.
pub fn exact_log_grad(
    ctx: &ReplayCtx,
    params: &SqsParams<Real>,
    p_floor: Real,
) -> Result<(Vec<Real>, Vec<Real>)> {
    let cfg = ctx.cfg;
    let n_tot = cfg.n_tot();
    let currents = compute_currents(&params.weights, ctx.spikes_in, cfg.n_io, cfg.fan_in)?;
    let angles = embed_angles(&currents);
    let embedding = build_step_unitary(&angles, &[], &crate::neurons::AnsatzSpec::empty(), cfg.n_io, cfg.n_mem)?;
    let v = cfg.ansatz.build(&params.theta, n_tot)?;
    let u = v.matmul(&embedding)?;
    let rho_in = DensityMatrix::ground(cfg.n_io).kron(ctx.pre_memory)?;
    let q = outcome_block_trace(&rho_in.evolve(&u)?, cfg, ctx.outcome);

    let mut grad_w = vec![0.0; params.weights.len()];
    let mut grad_theta = vec![0.0; params.theta.len()];
    if q <= p_floor {
        return Ok((grad_w, grad_theta));
    }
    // B = rho_in U^dagger, shared by every directional derivative.
    let b = right_multiply_adjoint(&rho_in, &u);
    let dim = 1usize << n_tot;
    let mem_dim = 1usize << cfg.n_mem;
    let block = ctx.outcome.index() * mem_dim;
    let directional = |d: &Unitary<Real>| -> Real {
        // 2 Re sum over the outcome block of diag(D B).
        let mut acc = 0.0;
        for i in block..block + mem_dim {
            let mut entry = Complex::new(0.0, 0.0);
            for k in 0..dim {
                entry += d.get(i, k) * b[k * dim + i];
            }
            acc += entry.re;
        }
        2.0 * acc / q
    };
    for j in 0..params.theta.len() {
        let dv = cfg.ansatz.build_derivative(&params.theta, n_tot, j)?;
        grad_theta[j] = directional(&dv.matmul(&embedding)?);
    }
    for (n, &phi) in angles.iter().enumerate() {
        if phi == 0.0 {
            continue;
        }
        // Embedding with the n-th rotation replaced by its derivative.
        let mut de = Unitary::rx_derivative(phi).embed(&[n], n_tot)?;
        for (n2, &phi2) in angles.iter().enumerate() {
            if n2 != n && phi2 != 0.0 {
                de = Unitary::rx(phi2)?.embed(&[n2], n_tot)?.matmul(&de)?;
            }
        }
        let dq_dphi = directional(&v.matmul(&de)?);
        for p in 0..cfg.fan_in {
            let x = ctx.spikes_in[n * cfg.fan_in + p];
            if x != 0 {
                grad_w[n * cfg.fan_in + p] += dq_dphi * std::f64::consts::PI;
            }
        }
    }
    Ok((grad_w, grad_theta))
}

/// Row-major data of `rho * U^dagger`.
fn right_multiply_adjoint(rho: &DensityMatrix, u: &Unitary<Real>) -> Vec<Complex<Real>> {
    let d = rho.dim();
    let mut out = vec![Complex::new(0.0, 0.0); d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = Complex::new(0.0, 0.0);
            for k in 0..d {
                // (U^dagger)_{kj} = conj(U_{jk})
                acc += rho.get(i, k) * u.get(j, k).conj();
            }
            out[i * d + j] = acc;
        }
    }
    out
}

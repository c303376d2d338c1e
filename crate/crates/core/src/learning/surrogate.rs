//! Surrogate-gradient trainer.
//!
//! Spike sampling is not differentiable, so training anchors a smooth
//! stand-in at each sampled trajectory: every discrete decision (sampled
//! outcomes, rotation-gate openings, leak branches) is frozen, and each
//! spike value becomes `s + sig(v) - sig(v0)`, where `v` is the neuron's
//! activity variable (spike probability, excitation probability, or
//! membrane potential), `v0` its value at the anchor, and `sig` a logistic.
//! At the anchor the stand-in equals the binary sample while its derivative
//! is `sig'(v)`; away from it the stand-in is an ordinary differentiable
//! function, which is what the finite-difference oracle evaluates.
//!
//! The backward pass is reverse-mode accumulation through the time-unrolled
//! state recursion; for quantum neurons the adjoints of the five kernel
//! steps (embedding, evolution, marginal readout, projection, memory
//! re-insertion) are hand-derived on the density matrix.

use num_complex::Complex;

use crate::error::{CoreError, Result};
use crate::network::{
    forward, ForwardOptions, NetworkGraph, NeuronKind, OutputMode, Source, SpikeTrain,
};
use crate::neurons::{build_step_unitary, AnsatzSpec, SqsConfig, SqsParams, StepMode};
use crate::qcore::BitString;
use crate::rng::RngFactory;
use crate::{DensityMatrix, Real, Unitary};

use super::{GradientAccumulator, TrainMode, TrainerConfig};

const RATE_CLAMP: Real = 1e-6;
// Denominator guard for the rate regularizer inside the smooth loss; the
// unguarded ratio is scale invariant and its gradient blows up as a layer's
// activity approaches zero.
const REG_DELTA: Real = 1e-9;

fn smooth_regularizer(values: &[Vec<Vec<Real>>], lambda: Real) -> Real {
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
                total += sum * sum / (sq + REG_DELTA);
            }
        }
    }
    lambda / t_len * total
}

fn smooth_regularizer_gradient(values: &[Vec<Vec<Real>>], lambda: Real) -> Vec<Vec<Vec<Real>>> {
    let t_len = values.len().max(1) as Real;
    values
        .iter()
        .map(|slice| {
            slice
                .iter()
                .map(|group| {
                    let sum: Real = group.iter().sum();
                    let sq: Real = group.iter().map(|u| u * u).sum();
                    let denom = sq + REG_DELTA;
                    group
                        .iter()
                        .map(|&u| {
                            if lambda == 0.0 || sq <= 0.0 {
                                0.0
                            } else {
                                lambda / t_len * (2.0 * sum * denom - sum * sum * 2.0 * u)
                                    / (denom * denom)
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn sig(x: Real, tau: Real) -> Real {
    1.0 / (1.0 + (-x / tau).exp())
}

fn sig_deriv(x: Real, tau: Real) -> Real {
    let s = sig(x, tau);
    s * (1.0 - s) / tau
}

/// Frozen discrete skeleton of one sampled trajectory.
#[derive(Debug, Clone)]
pub struct SurrogateAnchor {
    pub input: SpikeTrain,
    /// Sampled binary spikes of every neuron.
    pub spikes: SpikeTrain,
    /// Anchor activity values per `[t][neuron][channel]`: spike-probability
    /// marginals, excitation probability, or membrane potential.
    pub refs: Vec<Vec<Vec<Real>>>,
    /// Which embedding rotations were applied (positive current) per step.
    pub gates_open: Vec<Vec<Vec<bool>>>,
    /// QLIF integrate-vs-leak branch per step.
    pub fs_branch: Vec<Vec<bool>>,
}

/// Sample a trajectory at the current parameters and freeze its skeleton.
pub fn build_anchor(
    graph: &NetworkGraph,
    input: &SpikeTrain,
    factory: &RngFactory,
    pass_tags: &[u64],
) -> Result<SurrogateAnchor> {
    let opts = ForwardOptions { mode: StepMode::Exact, ..ForwardOptions::default() };
    let rec = forward(graph, input, factory, pass_tags, OutputMode::Sample, &opts)?;
    let t_len = input.t_len();
    let mut gates_open = Vec::with_capacity(t_len);
    let mut fs_branch = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let prev = if t == 0 { None } else { Some(rec.spikes.at(t - 1)) };
        let mut gate_slice = Vec::with_capacity(graph.num_neurons());
        let mut fs_slice = Vec::with_capacity(graph.num_neurons());
        for i in 0..graph.num_neurons() {
            let x = graph.gather_input(i, t, input, prev);
            match graph.neuron(i) {
                NeuronKind::Sqs { cfg, params } => {
                    let gates = (0..cfg.n_io)
                        .map(|n| {
                            let z: Real = (0..cfg.fan_in)
                                .map(|p| params.weights[n * cfg.fan_in + p] * x[n * cfg.fan_in + p] as Real)
                                .sum();
                            z > 0.0
                        })
                        .collect();
                    gate_slice.push(gates);
                    fs_slice.push(false);
                }
                NeuronKind::Qlif { params, .. } => {
                    let z_s: Real =
                        params.w_s.iter().zip(&x).map(|(w, &b)| w * b as Real).sum();
                    gate_slice.push(Vec::new());
                    fs_slice.push(z_s > 0.0);
                }
                NeuronKind::Lif { .. } => {
                    gate_slice.push(Vec::new());
                    fs_slice.push(false);
                }
            }
        }
        gates_open.push(gate_slice);
        fs_branch.push(fs_slice);
    }
    Ok(SurrogateAnchor {
        input: input.clone(),
        spikes: rec.spikes,
        refs: rec.marginals,
        gates_open,
        fs_branch,
    })
}

// Per-step tape of the smooth pass.
enum Tape {
    Sqs {
        x_tilde: Vec<Real>,
        u_mat: Unitary,
        rho_in: DensityMatrix,
        q: Real,
        p: Vec<Real>,
    },
    Qlif {
        x_tilde: Vec<Real>,
        z_o: Real,
        retained: Real,
        decayed: Real,
        phi: Real,
        alpha: Real,
        alpha_prev: Real,
        s_prev: Real,
    },
    Lif {
        x_tilde: Vec<Real>,
        potential: Real,
        potential_prev: Real,
        s_prev: Real,
    },
}

struct SmoothPass {
    tapes: Vec<Vec<Tape>>,
    s_tilde: Vec<Vec<Vec<Real>>>,
    activity: Vec<Vec<Vec<Real>>>,
    loss: Real,
    d_rate: Vec<Vec<Real>>,
}

/// The anchored smooth loss at the graph's current parameters, optionally
/// with the tape needed for the backward pass.
fn smooth_forward(
    graph: &NetworkGraph,
    anchor: &SurrogateAnchor,
    target: &SpikeTrain,
    tcfg: &TrainerConfig,
) -> Result<SmoothPass> {
    let t_len = anchor.input.t_len();
    let tau = tcfg.surrogate_temperature;
    let n = graph.num_neurons();
    if target.units() != graph.output().len() || target.t_len() != t_len {
        return Err(CoreError::invalid("target shape does not match output set"));
    }
    let mut tapes: Vec<Vec<Tape>> = Vec::with_capacity(t_len);
    let mut s_tilde: Vec<Vec<Vec<Real>>> = Vec::with_capacity(t_len);
    let mut activity: Vec<Vec<Vec<Real>>> = Vec::with_capacity(t_len);
    // Evolving smooth state per neuron.
    let mut mems: Vec<Option<DensityMatrix>> = graph
        .neurons()
        .iter()
        .map(|k| match k {
            NeuronKind::Sqs { cfg, .. } => Some(DensityMatrix::ground(cfg.n_mem)),
            _ => None,
        })
        .collect();
    let mut alphas = vec![0.0; n];
    let mut potentials = vec![0.0; n];
    for t in 0..t_len {
        let mut tape_slice = Vec::with_capacity(n);
        let mut s_slice: Vec<Vec<Real>> = Vec::with_capacity(n);
        let mut act_slice: Vec<Vec<Real>> = Vec::with_capacity(n);
        for i in 0..n {
            let channels = graph.neuron(i).channels();
            let fan_in = graph.parents(i).len();
            // Real-valued presynaptic block from upstream stand-ins.
            let mut x_tilde = vec![0.0; channels * fan_in];
            for (k, src) in graph.parents(i).iter().enumerate() {
                for ch in 0..channels {
                    x_tilde[ch * fan_in + k] = match *src {
                        Source::Input(c) => {
                            let unit = &anchor.input.at(t)[c];
                            unit[if unit.len() == 1 { 0 } else { ch.min(unit.len() - 1) }] as Real
                        }
                        Source::Neuron(j) => {
                            if t == 0 {
                                0.0
                            } else {
                                let unit = &s_tilde[t - 1][j];
                                unit[if unit.len() == 1 { 0 } else { ch.min(unit.len() - 1) }]
                            }
                        }
                    };
                }
            }
            match graph.neuron(i) {
                NeuronKind::Sqs { cfg, params } => {
                    let angles: Vec<Real> = (0..cfg.n_io)
                        .map(|ch| {
                            if anchor.gates_open[t][i][ch] {
                                let z: Real = (0..fan_in)
                                    .map(|p| params.weights[ch * fan_in + p] * x_tilde[ch * fan_in + p])
                                    .sum();
                                std::f64::consts::PI * z
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let u_mat = step_unitary_open(&angles, &params.theta, &cfg.ansatz, cfg)?;
                    let rho_in = DensityMatrix::ground(cfg.n_io).kron(mems[i].as_ref().unwrap())?;
                    let rho_im = rho_in.evolve(&u_mat)?;
                    let outcome = BitString::new(anchor.spikes.at(t)[i].clone())?;
                    let mem_dim = 1usize << cfg.n_mem;
                    let base = outcome.index() * mem_dim;
                    let q: Real = (0..mem_dim).map(|m| rho_im.get(base + m, base + m).re).sum();
                    let denom = q.max(tcfg.p_floor);
                    let mut mem_data = vec![Complex::new(0.0, 0.0); mem_dim * mem_dim];
                    for a in 0..mem_dim {
                        for b in 0..mem_dim {
                            mem_data[a * mem_dim + b] =
                                rho_im.get(base + a, base + b) / Complex::new(denom, 0.0);
                        }
                    }
                    mems[i] = Some(DensityMatrix::from_data(cfg.n_mem, mem_data)?);
                    let exact = rho_im.born_distribution(&cfg.io_qubits())?;
                    let p: Vec<Real> = (0..cfg.n_io).map(|ch| exact.marginal_one(ch)).collect();
                    let s_vals: Vec<Real> = (0..cfg.n_io)
                        .map(|ch| {
                            anchor.spikes.get(t, i, ch) as Real + sig(p[ch], tau)
                                - sig(anchor.refs[t][i][ch], tau)
                        })
                        .collect();
                    act_slice.push(p.clone());
                    s_slice.push(s_vals);
                    tape_slice.push(Tape::Sqs { x_tilde, u_mat, rho_in, q, p });
                }
                NeuronKind::Qlif { cfg, params } => {
                    let z_s: Real =
                        params.w_s.iter().zip(&x_tilde).map(|(w, x)| w * x).sum();
                    let z_o: Real =
                        params.w_o.iter().zip(&x_tilde).map(|(w, x)| w * x).sum();
                    // The reset gate stays frozen at the anchor's binary
                    // spike; flowing gradient through it would put a
                    // square-root cusp right at every post-spike step.
                    let s_prev = if t == 0 { 0.0 } else { anchor.spikes.get(t - 1, i, 0) as Real };
                    let alpha_prev = alphas[i];
                    let retained = alpha_prev * (1.0 - s_prev);
                    let phi_o = 2.0 * retained.clamp(0.0, 1.0).sqrt().asin();
                    let decayed = retained * (-cfg.beta * z_o.abs() / cfg.t1).exp();
                    let drive = if anchor.fs_branch[t][i] {
                        std::f64::consts::PI * z_s
                    } else {
                        -2.0 * decayed.clamp(0.0, 1.0).sqrt().asin()
                    };
                    let phi = phi_o + drive;
                    let alpha = (phi / 2.0).sin().powi(2);
                    let s_val = anchor.spikes.get(t, i, 0) as Real
                        + sig(alpha - cfg.threshold, tau)
                        - sig(anchor.refs[t][i][0] - cfg.threshold, tau);
                    alphas[i] = alpha;
                    act_slice.push(vec![alpha]);
                    s_slice.push(vec![s_val]);
                    tape_slice.push(Tape::Qlif {
                        x_tilde,
                        z_o,
                        retained,
                        decayed,
                        phi,
                        alpha,
                        alpha_prev,
                        s_prev,
                    });
                }
                NeuronKind::Lif { params } => {
                    let drive: Real =
                        params.weights.iter().zip(&x_tilde).map(|(w, x)| w * x).sum();
                    let s_prev = if t == 0 { 0.0 } else { s_tilde[t - 1][i][0] };
                    let potential_prev = potentials[i];
                    let potential = params.decay * potential_prev * (1.0 - s_prev) + drive;
                    let s_val = anchor.spikes.get(t, i, 0) as Real
                        + sig(potential - params.threshold, tau)
                        - sig(anchor.refs[t][i][0] - params.threshold, tau);
                    potentials[i] = potential;
                    act_slice.push(vec![potential]);
                    s_slice.push(vec![s_val]);
                    tape_slice.push(Tape::Lif { x_tilde, potential, potential_prev, s_prev });
                }
            }
        }
        tapes.push(tape_slice);
        s_tilde.push(s_slice);
        activity.push(act_slice);
    }
    // Cross-entropy between output spike rates and targets.
    let outputs = graph.output();
    let mut rates: Vec<Vec<Real>> = Vec::with_capacity(outputs.len());
    for (pos, &i) in outputs.iter().enumerate() {
        let _ = pos;
        let channels = graph.neuron(i).channels();
        let r: Vec<Real> = (0..channels)
            .map(|ch| (0..t_len).map(|t| s_tilde[t][i][ch]).sum::<Real>() / t_len as Real)
            .collect();
        rates.push(r);
    }
    let mut data_loss = 0.0;
    let mut d_rate: Vec<Vec<Real>> = rates.iter().map(|r| vec![0.0; r.len()]).collect();
    let channels_per_output = graph.neuron(outputs[0]).channels();
    let norm = (outputs.len() * channels_per_output * t_len) as Real;
    for (pos, r) in rates.iter().enumerate() {
        for (ch, &rv) in r.iter().enumerate() {
            let rc = rv.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP);
            let clamped = rv < RATE_CLAMP || rv > 1.0 - RATE_CLAMP;
            for t in 0..t_len {
                let o = target.get(t, pos, ch.min(target.at(t)[pos].len() - 1)) as Real;
                data_loss += (-o * rc.ln() - (1.0 - o) * (1.0 - rc).ln()) / norm;
                if !clamped {
                    d_rate[pos][ch] += (-o / rc + (1.0 - o) / (1.0 - rc)) / norm;
                }
            }
        }
    }
    // Per-layer rate regularizer on the activity measure.
    let groups = graph.layer_groups();
    let reg_values: Vec<Vec<Vec<Real>>> = (0..t_len)
        .map(|t| {
            groups
                .iter()
                .map(|g| g.iter().map(|&i| mean(&activity[t][i])).collect())
                .collect()
        })
        .collect();
    let loss = data_loss + smooth_regularizer(&reg_values, tcfg.lambda);
    Ok(SmoothPass { tapes, s_tilde, activity, loss, d_rate })
}

fn mean(v: &[Real]) -> Real {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<Real>() / v.len() as Real
    }
}

/// Step unitary with an explicit gate-open mask already applied to the
/// angles (closed gates carry an exact zero angle and are skipped).
fn step_unitary_open(
    angles: &[Real],
    theta: &[Real],
    ansatz: &AnsatzSpec,
    cfg: &SqsConfig,
) -> Result<Unitary> {
    build_step_unitary(angles, theta, ansatz, cfg.n_io, cfg.n_mem)
}

/// Value of the anchored smooth loss at the graph's current parameters.
pub fn surrogate_loss(
    graph: &NetworkGraph,
    anchor: &SurrogateAnchor,
    target: &SpikeTrain,
    tcfg: &TrainerConfig,
) -> Result<Real> {
    Ok(smooth_forward(graph, anchor, target, tcfg)?.loss)
}

/// Loss and exact gradient of the anchored smooth loss.
pub fn surrogate_loss_and_grad(
    graph: &NetworkGraph,
    anchor: &SurrogateAnchor,
    target: &SpikeTrain,
    tcfg: &TrainerConfig,
) -> Result<(Real, GradientAccumulator)> {
    let pass = smooth_forward(graph, anchor, target, tcfg)?;
    let t_len = anchor.input.t_len();
    let tau = tcfg.surrogate_temperature;
    let n = graph.num_neurons();
    let groups = graph.layer_groups();
    let mut grad = GradientAccumulator::zeros(graph);

    // Spike-value cotangents, seeded by the rate term.
    let mut s_bar: Vec<Vec<Vec<Real>>> = (0..t_len)
        .map(|t| (0..n).map(|i| vec![0.0; pass.s_tilde[t][i].len()]).collect())
        .collect();
    for (pos, &i) in graph.output().iter().enumerate() {
        for ch in 0..pass.d_rate[pos].len() {
            for t in 0..t_len {
                s_bar[t][i][ch] += pass.d_rate[pos][ch] / t_len as Real;
            }
        }
    }
    // Activity cotangents from the regularizer (direct, no sigmoid).
    let reg_values: Vec<Vec<Vec<Real>>> = (0..t_len)
        .map(|t| {
            groups
                .iter()
                .map(|g| g.iter().map(|&i| mean(&pass.activity[t][i])).collect())
                .collect()
        })
        .collect();
    let reg_grad = smooth_regularizer_gradient(&reg_values, tcfg.lambda);
    let mut act_bar: Vec<Vec<Vec<Real>>> = (0..t_len)
        .map(|t| (0..n).map(|i| vec![0.0; pass.activity[t][i].len()]).collect())
        .collect();
    for t in 0..t_len {
        for (gi, g) in groups.iter().enumerate() {
            for (slot, &i) in g.iter().enumerate() {
                let channels = pass.activity[t][i].len().max(1);
                for ch in 0..pass.activity[t][i].len() {
                    act_bar[t][i][ch] += reg_grad[t][gi][slot] / channels as Real;
                }
            }
        }
    }

    // Per-neuron state cotangents flowing backward in time.
    let mut mem_bar: Vec<Option<Vec<Complex<Real>>>> = graph
        .neurons()
        .iter()
        .map(|k| match k {
            NeuronKind::Sqs { cfg, .. } => {
                let d = 1usize << cfg.n_mem;
                Some(vec![Complex::new(0.0, 0.0); d * d])
            }
            _ => None,
        })
        .collect();
    let mut alpha_bar = vec![0.0; n];
    let mut potential_bar = vec![0.0; n];

    for t in (0..t_len).rev() {
        for i in 0..n {
            match (&pass.tapes[t][i], graph.neuron(i)) {
                (Tape::Sqs { x_tilde, u_mat, rho_in, q, p }, NeuronKind::Sqs { cfg, params }) => {
                    let dim = 1usize << cfg.n_tot();
                    let mem_dim = 1usize << cfg.n_mem;
                    let outcome = BitString::new(anchor.spikes.at(t)[i].clone()).unwrap();
                    let base = outcome.index() * mem_dim;
                    let denom = q.max(tcfg.p_floor);
                    // rho_im cotangent from the marginal readouts.
                    let mut g_bar = vec![Complex::new(0.0, 0.0); dim * dim];
                    for ch in 0..cfg.n_io {
                        let pb = s_bar[t][i][ch] * sig_deriv(p[ch], tau) + act_bar[t][i][ch];
                        if pb == 0.0 {
                            continue;
                        }
                        for idx in 0..dim {
                            let io_bits = idx >> cfg.n_mem;
                            if (io_bits >> (cfg.n_io - 1 - ch)) & 1 == 1 {
                                g_bar[idx * dim + idx] += Complex::new(pb, 0.0);
                            }
                        }
                    }
                    // ... and from the projected memory handed to t+1.
                    let sbar_mem = mem_bar[i].take().unwrap();
                    let mut inner = 0.0;
                    if *q > tcfg.p_floor {
                        for a in 0..mem_dim {
                            for b in 0..mem_dim {
                                // sigma = block / denom
                                let sigma_ab = pass_tape_block(rho_in, u_mat, base, a, b, denom);
                                inner += (sbar_mem[a * mem_dim + b].conj() * sigma_ab).re;
                            }
                        }
                    }
                    for a in 0..mem_dim {
                        for b in 0..mem_dim {
                            g_bar[(base + a) * dim + (base + b)] +=
                                sbar_mem[a * mem_dim + b] / Complex::new(denom, 0.0);
                        }
                    }
                    if *q > tcfg.p_floor {
                        for m in 0..mem_dim {
                            let idx = base + m;
                            g_bar[idx * dim + idx] -= Complex::new(inner / denom, 0.0);
                        }
                    }
                    // Pull back through the evolution and collect parameter
                    // gradients: dL/dp = 2 Re tr(Gbar dU/dp rho_in U^dag).
                    let b_mat = rho_times_udag(rho_in, u_mat);
                    let embedding = {
                        let angles = current_angles(&anchor.gates_open[t][i], x_tilde, params, cfg);
                        build_step_unitary(&angles, &[], &AnsatzSpec::empty(), cfg.n_io, cfg.n_mem)?
                    };
                    let v = cfg.ansatz.build(&params.theta, cfg.n_tot())?;
                    for j in 0..params.theta.len() {
                        let dv = cfg.ansatz.build_derivative(&params.theta, cfg.n_tot(), j)?;
                        let d = dv.matmul(&embedding)?;
                        grad.d_theta[i][j] += directional(&g_bar, &d, &b_mat, dim);
                    }
                    let angles = current_angles(&anchor.gates_open[t][i], x_tilde, params, cfg);
                    for ch in 0..cfg.n_io {
                        if !anchor.gates_open[t][i][ch] {
                            continue;
                        }
                        let mut de = Unitary::rx_derivative(angles[ch]).embed(&[ch], cfg.n_tot())?;
                        for (c2, &a2) in angles.iter().enumerate() {
                            if c2 != ch && a2 != 0.0 {
                                de = Unitary::rx(a2)?.embed(&[c2], cfg.n_tot())?.matmul(&de)?;
                            }
                        }
                        let d = v.matmul(&de)?;
                        let phi_bar = directional(&g_bar, &d, &b_mat, dim);
                        let z_bar = std::f64::consts::PI * phi_bar;
                        for (k, src) in graph.parents(i).iter().enumerate() {
                            let w = params.weights[ch * cfg.fan_in + k];
                            grad.d_weights[i][ch * cfg.fan_in + k] += z_bar * x_tilde[ch * cfg.fan_in + k];
                            route_spike_bar(graph, src, i, ch, t, z_bar * w, &mut s_bar);
                        }
                    }
                    // rho_in cotangent -> previous memory block.
                    let rho_in_bar = conjugate_by_adjoint(&g_bar, u_mat, dim);
                    let prev_bar = mem_bar[i].get_or_insert_with(|| {
                        vec![Complex::new(0.0, 0.0); mem_dim * mem_dim]
                    });
                    for a in 0..mem_dim {
                        for b in 0..mem_dim {
                            prev_bar[a * mem_dim + b] = rho_in_bar[a * dim + b];
                        }
                    }
                }
                (
                    Tape::Qlif { x_tilde, z_o, retained, decayed, phi, alpha, alpha_prev, s_prev },
                    NeuronKind::Qlif { cfg, params },
                ) => {
                    let a_bar = s_bar[t][i][0] * sig_deriv(alpha - cfg.threshold, tau)
                        + act_bar[t][i][0]
                        + alpha_bar[i];
                    alpha_bar[i] = 0.0;
                    // alpha = sin^2(phi / 2)
                    let phi_bar = a_bar * (phi.sin() / 2.0);
                    let mut retained_bar = 0.0;
                    // phi_o = 2 asin(sqrt(retained))
                    if *retained > 1e-12 && *retained < 1.0 - 1e-12 {
                        retained_bar += phi_bar / (retained * (1.0 - retained)).sqrt();
                    }
                    let mut zs_bar = 0.0;
                    let mut zo_bar = 0.0;
                    if anchor.fs_branch[t][i] {
                        zs_bar += phi_bar * std::f64::consts::PI;
                    } else if *decayed > 1e-12 && *decayed < 1.0 - 1e-12 {
                        // drive = -2 asin(sqrt(decayed))
                        let d_bar = -phi_bar / (decayed * (1.0 - decayed)).sqrt();
                        let k = (-cfg.beta * z_o.abs() / cfg.t1).exp();
                        retained_bar += d_bar * k;
                        zo_bar += d_bar * retained * k * (-cfg.beta / cfg.t1) * z_o.signum();
                    }
                    // retained = alpha_prev * (1 - s_prev), gate frozen.
                    let _ = alpha_prev;
                    alpha_bar[i] += retained_bar * (1.0 - s_prev);
                    for (k, src) in graph.parents(i).iter().enumerate() {
                        grad.d_weights[i][k] += zs_bar * x_tilde[k];
                        grad.d_weights[i][params.w_s.len() + k] += zo_bar * x_tilde[k];
                        let upstream = zs_bar * params.w_s[k] + zo_bar * params.w_o[k];
                        route_spike_bar(graph, src, i, 0, t, upstream, &mut s_bar);
                    }
                }
                (
                    Tape::Lif { x_tilde, potential, potential_prev, s_prev },
                    NeuronKind::Lif { params },
                ) => {
                    let u_bar = s_bar[t][i][0] * sig_deriv(potential - params.threshold, tau)
                        + act_bar[t][i][0]
                        + potential_bar[i];
                    potential_bar[i] = u_bar * params.decay * (1.0 - s_prev);
                    if t > 0 {
                        s_bar[t - 1][i][0] -= u_bar * params.decay * potential_prev;
                    }
                    for (k, src) in graph.parents(i).iter().enumerate() {
                        grad.d_weights[i][k] += u_bar * x_tilde[k];
                        route_spike_bar(graph, src, i, 0, t, u_bar * params.weights[k], &mut s_bar);
                    }
                }
                _ => unreachable!("tape kind tracks neuron kind"),
            }
        }
    }
    Ok((pass.loss, grad))
}

fn current_angles(
    gates_open: &[bool],
    x_tilde: &[Real],
    params: &SqsParams<Real>,
    cfg: &SqsConfig,
) -> Vec<Real> {
    (0..cfg.n_io)
        .map(|ch| {
            if gates_open[ch] {
                let z: Real = (0..cfg.fan_in)
                    .map(|p| params.weights[ch * cfg.fan_in + p] * x_tilde[ch * cfg.fan_in + p])
                    .sum();
                std::f64::consts::PI * z
            } else {
                0.0
            }
        })
        .collect()
}

/// One entry of the projected memory `sigma = block(U rho U^dag) / denom`.
fn pass_tape_block(
    rho_in: &DensityMatrix,
    u: &Unitary,
    base: usize,
    a: usize,
    b: usize,
    denom: Real,
) -> Complex<Real> {
    let dim = rho_in.dim();
    let mut acc = Complex::new(0.0, 0.0);
    for k in 0..dim {
        let mut inner = Complex::new(0.0, 0.0);
        for l in 0..dim {
            inner += rho_in.get(k, l) * u.get(base + b, l).conj();
        }
        acc += u.get(base + a, k) * inner;
    }
    acc / Complex::new(denom, 0.0)
}

/// `rho * U^dagger` as raw data.
fn rho_times_udag(rho: &DensityMatrix, u: &Unitary) -> Vec<Complex<Real>> {
    let d = rho.dim();
    let mut out = vec![Complex::new(0.0, 0.0); d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = Complex::new(0.0, 0.0);
            for k in 0..d {
                acc += rho.get(i, k) * u.get(j, k).conj();
            }
            out[i * d + j] = acc;
        }
    }
    out
}

/// `2 Re tr(Gbar D B)` for a Hermitian cotangent `Gbar`.
fn directional(g_bar: &[Complex<Real>], d: &Unitary, b: &[Complex<Real>], dim: usize) -> Real {
    let mut acc = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let g = g_bar[i * dim + j];
            if g.re == 0.0 && g.im == 0.0 {
                continue;
            }
            let mut db = Complex::new(0.0, 0.0);
            for k in 0..dim {
                db += d.get(j, k) * b[k * dim + i];
            }
            acc += (g * db).re;
        }
    }
    2.0 * acc
}

/// `U^dagger G U` as raw data.
fn conjugate_by_adjoint(g: &[Complex<Real>], u: &Unitary, dim: usize) -> Vec<Complex<Real>> {
    let mut tmp = vec![Complex::new(0.0, 0.0); dim * dim];
    let mut out = vec![Complex::new(0.0, 0.0); dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = Complex::new(0.0, 0.0);
            for k in 0..dim {
                acc += u.get(k, i).conj() * g[k * dim + j];
            }
            tmp[i * dim + j] = acc;
        }
    }
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = Complex::new(0.0, 0.0);
            for k in 0..dim {
                acc += tmp[i * dim + k] * u.get(k, j);
            }
            out[i * dim + j] = acc;
        }
    }
    out
}

/// Add an upstream spike cotangent onto the producing neuron at `t - 1`.
fn route_spike_bar(
    graph: &NetworkGraph,
    src: &Source,
    _consumer: usize,
    consumer_ch: usize,
    t: usize,
    value: Real,
    s_bar: &mut [Vec<Vec<Real>>],
) {
    if value == 0.0 || t == 0 {
        return;
    }
    if let Source::Neuron(j) = *src {
        let channels = graph.neuron(j).channels();
        let ch = if channels == 1 { 0 } else { consumer_ch.min(channels - 1) };
        s_bar[t - 1][j][ch] += value;
    }
}

/// One surrogate update over a batch of `(input, target)` pairs; returns
/// the mean anchored loss.
pub fn surrogate_train_step(
    graph: &mut NetworkGraph,
    batch: &[(SpikeTrain, SpikeTrain)],
    tcfg: &TrainerConfig,
    factory: &RngFactory,
    iteration: u64,
) -> Result<Real> {
    tcfg.validate()?;
    if !matches!(tcfg.mode, TrainMode::Exact) {
        return Err(CoreError::config("the surrogate trainer needs exact probabilities"));
    }
    if batch.is_empty() {
        return Err(CoreError::invalid("empty batch"));
    }
    let mut total = GradientAccumulator::zeros(graph);
    let mut loss_sum = 0.0;
    for (slot, (input, target)) in batch.iter().enumerate() {
        let (item_grad, loss) =
            surrogate_item_gradient(graph, input, target, tcfg, factory, &[iteration, slot as u64])?;
        loss_sum += loss;
        total.add_scaled(&item_grad, 1.0 / batch.len() as Real);
    }
    total.apply(graph, tcfg.lr_w, tcfg.lr_theta);
    Ok(loss_sum / batch.len() as Real)
}

/// Anchored gradient and loss of one example, without touching the
/// parameters. Items are independent given their tags.
pub fn surrogate_item_gradient(
    graph: &NetworkGraph,
    input: &SpikeTrain,
    target: &SpikeTrain,
    tcfg: &TrainerConfig,
    factory: &RngFactory,
    base_tags: &[u64],
) -> Result<(GradientAccumulator, Real)> {
    let anchor = build_anchor(graph, input, factory, base_tags)?;
    let (loss, grad) = surrogate_loss_and_grad(graph, &anchor, target, tcfg)?;
    Ok((grad, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::encode_target;
    use crate::network::{build_feedforward, LayerSpec, LayeredSpec, NeuronModelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn train(pattern: &[&[u8]]) -> SpikeTrain {
        SpikeTrain::new(
            pattern.iter().map(|s| s.iter().map(|&b| vec![b]).collect()).collect(),
        )
        .unwrap()
    }

    /// Flat list of mutable parameter slots across the graph.
    fn param_count(graph: &NetworkGraph) -> Vec<(usize, usize, bool)> {
        let mut slots = Vec::new();
        for i in 0..graph.num_neurons() {
            match graph.neuron(i) {
                NeuronKind::Sqs { params, .. } => {
                    for k in 0..params.weights.len() {
                        slots.push((i, k, true));
                    }
                    for k in 0..params.theta.len() {
                        slots.push((i, k, false));
                    }
                }
                NeuronKind::Qlif { params, .. } => {
                    for k in 0..params.w_s.len() + params.w_o.len() {
                        slots.push((i, k, true));
                    }
                }
                NeuronKind::Lif { params } => {
                    for k in 0..params.weights.len() {
                        slots.push((i, k, true));
                    }
                }
            }
        }
        slots
    }

    fn nudge(graph: &mut NetworkGraph, slot: (usize, usize, bool), h: Real) {
        let (i, k, is_w) = slot;
        match graph.neuron_mut(i) {
            NeuronKind::Sqs { params, .. } => {
                if is_w {
                    params.weights[k] += h;
                } else {
                    params.theta[k] += h;
                }
            }
            NeuronKind::Qlif { params, .. } => {
                let p = params.w_s.len();
                if k < p {
                    params.w_s[k] += h;
                } else {
                    params.w_o[k - p] += h;
                }
            }
            NeuronKind::Lif { params } => params.weights[k] += h,
        }
    }

    fn grad_slot(grad: &GradientAccumulator, slot: (usize, usize, bool)) -> Real {
        let (i, k, is_w) = slot;
        if is_w {
            grad.d_weights[i][k]
        } else {
            grad.d_theta[i][k]
        }
    }

fn six_step_input() -> SpikeTrain {
        train(&[
            &[1, 1, 0],
            &[0, 1, 1],
            &[1, 0, 1],
            &[1, 1, 1],
            &[0, 1, 0],
            &[1, 0, 0],
        ])
    }

    fn fd_matches_backward(graph: &NetworkGraph, input: &SpikeTrain, target: &SpikeTrain, tcfg: &TrainerConfig, tol: Real) {
        let factory = RngFactory::new(93);
        let anchor = build_anchor(graph, input, &factory, &[0]).unwrap();
        // Anchors on the cross-entropy clamp boundary would make the probe
        // measure the clamp kink instead of the gradient.
        let t_len = input.t_len();
        for &i in graph.output() {
            for ch in 0..graph.neuron(i).channels() {
                let r: Real = (0..t_len)
                    .map(|t| anchor.spikes.get(t, i, ch) as Real)
                    .sum::<Real>()
                    / t_len as Real;
                assert!(
                    r > 0.0 && r < 1.0,
                    "test setup: pick a seed whose output rates are interior (neuron {i} rate {r})"
                );
            }
        }
        let (_, grad) = surrogate_loss_and_grad(graph, &anchor, target, tcfg).unwrap();
        let h = 1e-5;
        for slot in param_count(graph) {
            let mut gp = graph.clone();
            nudge(&mut gp, slot, h);
            let lp = surrogate_loss(&gp, &anchor, target, tcfg).unwrap();
            let mut gm = graph.clone();
            nudge(&mut gm, slot, -h);
            let lm = surrogate_loss(&gm, &anchor, target, tcfg).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let bp = grad_slot(&grad, slot);
            let denom = fd.abs().max(1e-6);
            assert!(
                (bp - fd).abs() / denom < tol,
                "slot {slot:?}: backward {bp} vs fd {fd}"
            );
        }
    }

    #[test]
    fn sqs_single_layer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = LayeredSpec {
            input_dim: 3,
            layers: vec![LayerSpec { size: 2, model: NeuronModelSpec::Sqs { n_io: 1, n_mem: 1 } }],
            self_synapse: false,
        };
        let graph = build_feedforward(&spec, &mut rng).unwrap();
        let target = encode_target(0, 2, 6, 1).unwrap();
        fd_matches_backward(&graph, &six_step_input(), &target, &TrainerConfig::default(), 1e-4);
    }

    #[test]
    fn sqs_two_layer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = LayeredSpec {
            input_dim: 3,
            layers: vec![
                LayerSpec { size: 2, model: NeuronModelSpec::Sqs { n_io: 1, n_mem: 1 } },
                LayerSpec { size: 2, model: NeuronModelSpec::Sqs { n_io: 1, n_mem: 1 } },
            ],
            self_synapse: false,
        };
        let graph = build_feedforward(&spec, &mut rng).unwrap();
        let target = encode_target(1, 2, 6, 1).unwrap();
        let tcfg = TrainerConfig { lambda: 0.3, ..TrainerConfig::default() };
        fd_matches_backward(&graph, &six_step_input(), &target, &tcfg, 1e-3);
    }

    #[test]
    fn qlif_network_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let spec = LayeredSpec {
            input_dim: 3,
            layers: vec![
                LayerSpec {
                    size: 2,
                    model: NeuronModelSpec::Qlif { threshold: 0.3, beta: 1.0, t1: 1.0, shots: None },
                },
                LayerSpec {
                    size: 2,
                    model: NeuronModelSpec::Qlif { threshold: 0.3, beta: 1.0, t1: 1.0, shots: None },
                },
            ],
            self_synapse: false,
        };
        let graph = build_feedforward(&spec, &mut rng).unwrap();
        let target = encode_target(0, 2, 6, 1).unwrap();
        let tcfg = TrainerConfig { lambda: 0.2, ..TrainerConfig::default() };
        fd_matches_backward(&graph, &six_step_input(), &target, &tcfg, 1e-3);
    }

    #[test]
    fn lif_network_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = LayeredSpec {
            input_dim: 3,
            layers: vec![
                LayerSpec { size: 2, model: NeuronModelSpec::Lif { decay: 0.9, threshold: 0.3 } },
                LayerSpec { size: 2, model: NeuronModelSpec::Lif { decay: 0.9, threshold: 0.3 } },
            ],
            self_synapse: false,
        };
        let graph = build_feedforward(&spec, &mut rng).unwrap();
        let target = encode_target(1, 2, 6, 1).unwrap();
        let tcfg = TrainerConfig { lambda: 0.1, ..TrainerConfig::default() };
        fd_matches_backward(&graph, &six_step_input(), &target, &tcfg, 1e-3);
    }

    #[test]
    fn matched_rates_have_zero_data_gradient() {
        // A unit-weight relay spikes exactly when its input does; an input
        // active on half the steps makes the rate 0.5, the cross-entropy
        // minimizer for a target with the same rate.
        let cfg = crate::neurons::SqsConfig::new(1, 1, 2, AnsatzSpec::crx_rx(1, 1)).unwrap();
        let params = SqsParams { weights: vec![1.0, 1.0], theta: vec![0.0, 0.0, 0.0] };
        let graph = NetworkGraph::new(
            vec![
                NeuronKind::Sqs { cfg: cfg.clone(), params: params.clone() },
                NeuronKind::Sqs { cfg, params },
            ],
            vec![],
            vec![(0, 0), (1, 0), (0, 1), (1, 1)],
            vec![],
            vec![0, 1],
            2,
            false,
        )
        .unwrap();
        let input = train(&[&[1, 1], &[0, 0], &[1, 1], &[0, 0]]);
        let target = train(&[&[1, 1], &[0, 0], &[1, 1], &[0, 0]]);
        let tcfg = TrainerConfig::default();
        let factory = RngFactory::new(7);
        let anchor = build_anchor(&graph, &input, &factory, &[0]).unwrap();
        let (_, grad) = surrogate_loss_and_grad(&graph, &anchor, &target, &tcfg).unwrap();
        for i in 0..2 {
            for g in grad.d_weights[i].iter().chain(grad.d_theta[i].iter()) {
                assert!(g.abs() < 1e-12, "expected stationary gradient, got {g}");
            }
        }
    }

    #[test]
    fn training_step_reduces_loss_on_simple_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let spec = LayeredSpec {
            input_dim: 4,
            layers: vec![LayerSpec { size: 2, model: NeuronModelSpec::Sqs { n_io: 1, n_mem: 1 } }],
            self_synapse: false,
        };
        let mut graph = build_feedforward(&spec, &mut rng).unwrap();
        let row: &[u8] = &[1, 1, 0, 0];
        let input = train(&[row, row, row, row, row, row]);
        let target = encode_target(0, 2, 6, 1).unwrap();
        let tcfg = TrainerConfig { lr_w: 0.3, lr_theta: 0.3, ..TrainerConfig::default() };
        let factory = RngFactory::new(9);
        let batch = vec![(input, target)];
        let first: Real = (0..5)
            .map(|it| surrogate_train_step(&mut graph, &batch, &tcfg, &factory, it).unwrap())
            .sum::<Real>()
            / 5.0;
        for it in 5..40 {
            surrogate_train_step(&mut graph, &batch, &tcfg, &factory, it).unwrap();
        }
        let final_loss: Real = (40..45)
            .map(|it| surrogate_train_step(&mut graph, &batch, &tcfg, &factory, it).unwrap())
            .sum::<Real>()
            / 5.0;
        assert!(final_loss < first, "loss did not improve: {first} -> {final_loss}");
    }

    #[test]
    fn surrogate_requires_exact_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let spec = LayeredSpec {
            input_dim: 2,
            layers: vec![LayerSpec { size: 2, model: NeuronModelSpec::Sqs { n_io: 1, n_mem: 0 } }],
            self_synapse: false,
        };
        let mut graph = build_feedforward(&spec, &mut rng).unwrap();
        let tcfg = TrainerConfig { mode: TrainMode::Shots, ..TrainerConfig::default() };
        let batch = vec![(train(&[&[1, 0]]), encode_target(0, 2, 1, 1).unwrap())];
        assert!(surrogate_train_step(&mut graph, &batch, &tcfg, &RngFactory::new(0), 0).is_err());
    }
}

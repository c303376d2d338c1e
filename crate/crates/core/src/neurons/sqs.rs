//! Stochastic quantum spiking neuron.
//!
//! Per time step: presynaptic spikes are weighted into currents, embedded as
//! X-rotations on the input-output qubits, jointly evolved with the memory
//! qubits through a parameterized circuit, and the input-output qubits are
//! measured once. The unmeasured memory qubits carry state to the next step.
//!
//! Register layout: input-output qubits occupy indices `0..N` (most
//! significant), memory qubits `N..N+N_mem`.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::qcore::{BitString, DensityMatrix, ProbTable, Unitary, MAX_QUBITS};
use crate::scalar::Scalar;

use super::{compute_currents, embed_angles};

/// Gate vocabulary for the trainable circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    Rx,
    Crx,
}

/// One gate of the trainable circuit: kind, register qubits (control first
/// for `Crx`), and the index of its angle in the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzGate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub param: usize,
}

/// Ordered gate list defining the trainable unitary `V(theta)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    gates: Vec<AnsatzGate>,
    num_params: usize,
}

impl AnsatzSpec {
    /// Validates gate arities and that parameter indices cover `0..G`
    /// contiguously (a parameter may be shared by several gates).
    pub fn new(gates: Vec<AnsatzGate>) -> Result<Self> {
        let mut max_param = None;
        for g in &gates {
            let arity = match g.kind {
                GateKind::Rx => 1,
                GateKind::Crx => 2,
            };
            if g.qubits.len() != arity {
                return Err(CoreError::config(format!(
                    "{:?} gate takes {arity} qubit(s), got {}",
                    g.kind,
                    g.qubits.len()
                )));
            }
            max_param = Some(max_param.map_or(g.param, |m: usize| m.max(g.param)));
        }
        let num_params = max_param.map_or(0, |m| m + 1);
        let mut used = vec![false; num_params];
        for g in &gates {
            used[g.param] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(CoreError::config("ansatz parameter indices must be contiguous"));
        }
        Ok(AnsatzSpec { gates, num_params })
    }

    /// No trainable gates; the step unitary reduces to the embedding.
    pub fn empty() -> Self {
        AnsatzSpec { gates: Vec::new(), num_params: 0 }
    }

    /// Entangler-plus-rotations circuit: one CRX from each input-output
    /// qubit to a memory qubit, followed by an RX on every qubit. For one
    /// input-output and one memory qubit this is the three-parameter
    /// circuit used throughout the experiments.
    pub fn crx_rx(n_io: usize, n_mem: usize) -> Self {
        let mut gates = Vec::new();
        let mut param = 0;
        if n_mem > 0 {
            for n in 0..n_io {
                gates.push(AnsatzGate {
                    kind: GateKind::Crx,
                    qubits: vec![n, n_io + (n % n_mem)],
                    param,
                });
                param += 1;
            }
        }
        for q in 0..(n_io + n_mem) {
            gates.push(AnsatzGate { kind: GateKind::Rx, qubits: vec![q], param });
            param += 1;
        }
        AnsatzSpec { gates, num_params: param }
    }

    pub fn gates(&self) -> &[AnsatzGate] {
        &self.gates
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    fn gate_matrix<T: Scalar>(&self, gate: &AnsatzGate, theta: &[T], n_tot: usize) -> Result<Unitary<T>> {
        let angle = theta[gate.param];
        let small = match gate.kind {
            GateKind::Rx => Unitary::rx(angle)?,
            GateKind::Crx => Unitary::crx(angle)?,
        };
        small.embed(&gate.qubits, n_tot).map_err(|e| match e {
            CoreError::InvalidArgument(m) => CoreError::config(format!("ansatz gate out of range: {m}")),
            other => other,
        })
    }

    fn gate_derivative_matrix<T: Scalar>(
        &self,
        gate: &AnsatzGate,
        theta: &[T],
        n_tot: usize,
    ) -> Result<Unitary<T>> {
        let angle = theta[gate.param];
        let small = match gate.kind {
            GateKind::Rx => Unitary::rx_derivative(angle),
            GateKind::Crx => Unitary::crx_derivative(angle),
        };
        small.embed(&gate.qubits, n_tot)
    }

    /// `V(theta)` on an `n_tot`-qubit register; gates apply in list order.
    pub fn build<T: Scalar>(&self, theta: &[T], n_tot: usize) -> Result<Unitary<T>> {
        if theta.len() != self.num_params {
            return Err(CoreError::config(format!(
                "ansatz expects {} parameters, got {}",
                self.num_params,
                theta.len()
            )));
        }
        let mut v = Unitary::identity(n_tot);
        for gate in &self.gates {
            v = self.gate_matrix(gate, theta, n_tot)?.matmul(&v)?;
        }
        Ok(v)
    }

    /// `dV/dtheta_j`, summing over every gate that shares parameter `j`.
    pub fn build_derivative<T: Scalar>(&self, theta: &[T], n_tot: usize, j: usize) -> Result<Unitary<T>> {
        let dim = 1usize << n_tot;
        let mut total = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        for (k, gate) in self.gates.iter().enumerate() {
            if gate.param != j {
                continue;
            }
            let mut v = Unitary::identity(n_tot);
            for (idx, g) in self.gates.iter().enumerate() {
                let m = if idx == k {
                    self.gate_derivative_matrix(g, theta, n_tot)?
                } else {
                    self.gate_matrix(g, theta, n_tot)?
                };
                v = m.matmul(&v)?;
            }
            for (t, s) in total.iter_mut().zip(v.data()) {
                *t += *s;
            }
        }
        Unitary::from_data(dim, total)
    }
}

/// Static shape of a stochastic quantum spiking neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqsConfig {
    /// Input-output qubit count `N`.
    pub n_io: usize,
    /// Memory qubit count `N_mem` (zero makes the neuron memoryless).
    pub n_mem: usize,
    /// Presynaptic source count `P`.
    pub fan_in: usize,
    pub ansatz: AnsatzSpec,
}

impl SqsConfig {
    pub fn new(n_io: usize, n_mem: usize, fan_in: usize, ansatz: AnsatzSpec) -> Result<Self> {
        let cfg = SqsConfig { n_io, n_mem, fan_in, ansatz };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_io < 1 {
            return Err(CoreError::config("at least one input-output qubit required"));
        }
        if self.n_io + self.n_mem > MAX_QUBITS {
            return Err(CoreError::Capacity(format!(
                "register of {} qubits exceeds cap {MAX_QUBITS}",
                self.n_io + self.n_mem
            )));
        }
        for gate in self.ansatz.gates() {
            if gate.qubits.iter().any(|&q| q >= self.n_io + self.n_mem) {
                return Err(CoreError::config("ansatz gate references qubit outside register"));
            }
        }
        Ok(())
    }

    pub fn n_tot(&self) -> usize {
        self.n_io + self.n_mem
    }

    /// Qubit indices measured each step.
    pub fn io_qubits(&self) -> Vec<usize> {
        (0..self.n_io).collect()
    }
}

/// Trainable parameters: synaptic weights (`n_io x fan_in`, row-major) and
/// circuit angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqsParams<T: Scalar> {
    pub weights: Vec<T>,
    pub theta: Vec<T>,
}

impl<T: Scalar> SqsParams<T> {
    pub fn zeros(cfg: &SqsConfig) -> Self {
        SqsParams {
            weights: vec![T::zero(); cfg.n_io * cfg.fan_in],
            theta: vec![T::zero(); cfg.ansatz.num_params()],
        }
    }

    /// Weights uniform on `[-1/sqrt(P), 1/sqrt(P)]`, angles uniform on
    /// `[0, pi)`.
    pub fn init(cfg: &SqsConfig, rng: &mut impl Rng) -> Self {
        let scale = if cfg.fan_in > 0 { 1.0 / (cfg.fan_in as f64).sqrt() } else { 0.0 };
        let weights = (0..cfg.n_io * cfg.fan_in)
            .map(|_| T::from_f64_lit((rng.gen::<f64>() * 2.0 - 1.0) * scale))
            .collect();
        let theta = (0..cfg.ansatz.num_params())
            .map(|_| T::from_f64_lit(rng.gen::<f64>() * std::f64::consts::PI))
            .collect();
        SqsParams { weights, theta }
    }

    pub fn validate(&self, cfg: &SqsConfig) -> Result<()> {
        if self.weights.len() != cfg.n_io * cfg.fan_in {
            return Err(CoreError::config("weight shape does not match config"));
        }
        if self.theta.len() != cfg.ansatz.num_params() {
            return Err(CoreError::config("theta length does not match ansatz"));
        }
        if self.weights.iter().chain(self.theta.iter()).any(|v| !v.is_finite()) {
            return Err(CoreError::invalid("parameters must be finite"));
        }
        Ok(())
    }
}

/// Evolving state: memory density matrix and the time index.
#[derive(Debug, Clone, PartialEq)]
pub struct SqsState<T: Scalar> {
    pub memory: DensityMatrix<T>,
    pub t: usize,
}

impl<T: Scalar> SqsState<T> {
    /// Memory in the ground state at `t = 0` (before the first step).
    pub fn fresh(cfg: &SqsConfig) -> Self {
        SqsState { memory: DensityMatrix::ground(cfg.n_mem), t: 0 }
    }
}

/// Probability estimation mode for a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepMode {
    /// Exact Born probabilities from the density matrix.
    Exact,
    /// Probability tables estimated from `m_p` single-shot draws. The
    /// emitted spike is still one exact draw; empirical tables exist only
    /// for training-time estimation.
    Shots { m_p: usize },
}

/// Everything one step produces.
#[derive(Debug, Clone)]
pub struct SqsStepOutput<T: Scalar> {
    /// Sampled (or forced) outgoing spikes over the input-output qubits.
    pub spikes: BitString,
    /// Born table per the step mode: exact, or the `m_p`-shot estimate.
    pub table: ProbTable<T>,
    /// Exact probability of the realized outcome (the projection weight).
    pub realized_prob: T,
    /// Pre-measurement joint state of the full register.
    pub rho_im: DensityMatrix<T>,
    pub state: SqsState<T>,
}

/// Step unitary `U = V(theta) . (RX(phi_1) x ... x RX(phi_N) x I)`.
/// Zero angles skip their rotation entirely.
pub fn build_step_unitary<T: Scalar>(
    angles: &[T],
    theta: &[T],
    ansatz: &AnsatzSpec,
    n_io: usize,
    n_mem: usize,
) -> Result<Unitary<T>> {
    if angles.len() != n_io {
        return Err(CoreError::invalid("one embedding angle per input-output qubit"));
    }
    let n_tot = n_io + n_mem;
    let mut u = Unitary::identity(n_tot);
    for (n, &phi) in angles.iter().enumerate() {
        if phi != T::zero() {
            u = Unitary::rx(phi)?.embed(&[n], n_tot)?.matmul(&u)?;
        }
    }
    ansatz.build(theta, n_tot)?.matmul(&u)
}

/// Joint pre-measurement state and its exact Born table over the
/// input-output qubits.
pub fn sqs_evolve<T: Scalar>(
    cfg: &SqsConfig,
    params: &SqsParams<T>,
    state: &SqsState<T>,
    spikes_in: &[u8],
) -> Result<(DensityMatrix<T>, ProbTable<T>)> {
    let currents = compute_currents(&params.weights, spikes_in, cfg.n_io, cfg.fan_in)?;
    let angles = embed_angles(&currents);
    let u = build_step_unitary(&angles, &params.theta, &cfg.ansatz, cfg.n_io, cfg.n_mem)?;
    let rho_in = DensityMatrix::ground(cfg.n_io).kron(&state.memory)?;
    let rho_im = rho_in.evolve(&u)?;
    let table = rho_im.born_distribution(&cfg.io_qubits())?;
    Ok((rho_im, table))
}

fn finish_step<T: Scalar>(
    cfg: &SqsConfig,
    state: &SqsState<T>,
    rho_im: DensityMatrix<T>,
    exact: ProbTable<T>,
    outcome: BitString,
    forced: bool,
    mode: StepMode,
    p_floor: T,
    rng: &mut impl Rng,
) -> Result<SqsStepOutput<T>> {
    let realized_prob = exact.prob(&outcome);
    let memory = match rho_im.project_memory(&outcome, &cfg.io_qubits(), p_floor) {
        Ok((mem, _)) => mem,
        Err(CoreError::ZeroProbabilityBranch(msg)) if forced => {
            // A forced (teacher) outcome can have vanishing probability;
            // fall back to the unconditional memory marginal so the
            // recursion stays well defined. The log-loss is clamped anyway.
            let _ = msg;
            if cfg.n_mem == 0 {
                DensityMatrix::ground(0)
            } else {
                rho_im.partial_trace(&(cfg.n_io..cfg.n_tot()).collect::<Vec<_>>())?
            }
        }
        Err(e) => return Err(e),
    };
    let table = match mode {
        StepMode::Exact => exact,
        StepMode::Shots { m_p } => exact.empirical(m_p, rng),
    };
    Ok(SqsStepOutput {
        spikes: outcome,
        table,
        realized_prob,
        rho_im,
        state: SqsState { memory, t: state.t + 1 },
    })
}

/// One step with a single-shot sampled outcome.
pub fn sqs_step<T: Scalar>(
    cfg: &SqsConfig,
    params: &SqsParams<T>,
    state: &SqsState<T>,
    spikes_in: &[u8],
    mode: StepMode,
    p_floor: T,
    rng: &mut impl Rng,
) -> Result<SqsStepOutput<T>> {
    let (rho_im, exact) = sqs_evolve(cfg, params, state, spikes_in)?;
    let outcome = exact.sample(rng);
    finish_step(cfg, state, rho_im, exact, outcome, false, mode, p_floor, rng)
}

/// One step with the outcome clamped to `forced` (teacher forcing). The
/// returned `realized_prob` is the exact probability of that outcome.
pub fn sqs_step_forced<T: Scalar>(
    cfg: &SqsConfig,
    params: &SqsParams<T>,
    state: &SqsState<T>,
    spikes_in: &[u8],
    forced: &BitString,
    mode: StepMode,
    p_floor: T,
    rng: &mut impl Rng,
) -> Result<SqsStepOutput<T>> {
    let (rho_im, exact) = sqs_evolve(cfg, params, state, spikes_in)?;
    finish_step(cfg, state, rho_im, exact, forced.clone(), true, mode, p_floor, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::DEFAULT_P_FLOOR;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn fig_cfg(fan_in: usize) -> SqsConfig {
        SqsConfig::new(1, 1, fan_in, AnsatzSpec::crx_rx(1, 1)).unwrap()
    }

    #[test]
    fn default_ansatz_has_three_params_for_one_plus_one() {
        assert_eq!(AnsatzSpec::crx_rx(1, 1).num_params(), 3);
        assert_eq!(AnsatzSpec::crx_rx(2, 2).num_params(), 6);
    }

    #[test]
    fn ansatz_rejects_gapped_param_indices() {
        let gates = vec![AnsatzGate { kind: GateKind::Rx, qubits: vec![0], param: 1 }];
        assert!(AnsatzSpec::new(gates).is_err());
    }

    #[test]
    fn config_rejects_out_of_range_gate() {
        let gates = vec![AnsatzGate { kind: GateKind::Rx, qubits: vec![5], param: 0 }];
        let ansatz = AnsatzSpec::new(gates).unwrap();
        assert!(SqsConfig::new(1, 1, 1, ansatz).is_err());
    }

    #[test]
    fn all_zero_angles_and_theta_build_identity() {
        let u = build_step_unitary(&[0.0], &[0.0, 0.0, 0.0], &AnsatzSpec::crx_rx(1, 1), 1, 1).unwrap();
        assert_eq!(u, Unitary::identity(2));
    }

    #[test]
    fn empty_ansatz_reduces_to_embedding_rotation() {
        let u = build_step_unitary(&[PI], &[], &AnsatzSpec::empty(), 1, 0).unwrap();
        let rx = Unitary::rx(PI).unwrap();
        for (a, b) in u.data().iter().zip(rx.data()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn step_unitary_is_unitary_for_random_inputs() {
        let mut r = rng(3);
        use rand::Rng;
        let ansatz = AnsatzSpec::crx_rx(2, 1);
        for _ in 0..100 {
            let angles = [r.gen::<f64>() * PI, r.gen::<f64>() * PI];
            let theta: Vec<f64> = (0..ansatz.num_params()).map(|_| r.gen::<f64>() * PI).collect();
            let u = build_step_unitary(&angles, &theta, &ansatz, 2, 1).unwrap();
            assert!(u.unitarity_defect() < 1e-10);
        }
    }

    #[test]
    fn ansatz_derivative_matches_finite_differences() {
        let ansatz = AnsatzSpec::crx_rx(1, 1);
        let theta = [0.7, -0.3, 1.9];
        let h = 1e-6;
        for j in 0..3 {
            let d = ansatz.build_derivative(&theta, 2, j).unwrap();
            let mut tp = theta;
            tp[j] += h;
            let mut tm = theta;
            tm[j] -= h;
            let vp = ansatz.build(&tp, 2).unwrap();
            let vm = ansatz.build(&tm, 2).unwrap();
            for (k, dv) in d.data().iter().enumerate() {
                let fd = (vp.data()[k] - vm.data()[k]) / Complex::new(2.0 * h, 0.0);
                assert!((dv - fd).norm() < 1e-8, "param {j} entry {k}");
            }
        }
    }

    #[test]
    fn unit_current_with_identity_circuit_spikes_surely() {
        // theta = 0 makes every ansatz gate vanish; z = 1 embeds RX(pi).
        let cfg = fig_cfg(1);
        let params = SqsParams { weights: vec![1.0], theta: vec![0.0, 0.0, 0.0] };
        let out = sqs_step(
            &cfg,
            &params,
            &SqsState::fresh(&cfg),
            &[1],
            StepMode::Exact,
            DEFAULT_P_FLOOR,
            &mut rng(0),
        )
        .unwrap();
        assert_eq!(out.spikes.bits(), &[1]);
        assert!((out.realized_prob - 1.0).abs() < 1e-12);
        assert!((out.state.memory.get(0, 0).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_positive_current_stays_silent() {
        let cfg = fig_cfg(1);
        let params = SqsParams { weights: vec![-0.4], theta: vec![0.0, 0.0, 0.0] };
        let out = sqs_step(
            &cfg,
            &params,
            &SqsState::fresh(&cfg),
            &[1],
            StepMode::Exact,
            DEFAULT_P_FLOOR,
            &mut rng(0),
        )
        .unwrap();
        assert_eq!(out.spikes.bits(), &[0]);
        assert!((out.table.probs()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crx_pi_entangles_input_and_memory() {
        // 4x4 density-matrix arithmetic: z = 0.5 and a pi CRX produce a
        // Bell-like state; spike probability 1/2 and outcome-conditioned
        // memories |0><0| and |1><1|.
        let cfg = fig_cfg(1);
        let params = SqsParams { weights: vec![0.5], theta: vec![PI, 0.0, 0.0] };
        let state = SqsState::fresh(&cfg);
        let (rho_im, table) = sqs_evolve(&cfg, &params, &state, &[1]).unwrap();
        assert!((table.probs()[1] - 0.5).abs() < 1e-12);
        let (mem0, p0) = rho_im
            .project_memory(&BitString::from_index(1, 0), &[0], DEFAULT_P_FLOOR)
            .unwrap();
        let (mem1, p1) = rho_im
            .project_memory(&BitString::from_index(1, 1), &[0], DEFAULT_P_FLOOR)
            .unwrap();
        assert!((p0 - 0.5).abs() < 1e-12 && (p1 - 0.5).abs() < 1e-12);
        assert!((mem0.get(0, 0).re - 1.0).abs() < 1e-12);
        assert!((mem1.get(1, 1).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn memoryless_neuron_ignores_history() {
        // With no memory qubits the per-step distribution depends only on
        // the current input, whatever history preceded it.
        let ansatz = AnsatzSpec::new(vec![AnsatzGate { kind: GateKind::Rx, qubits: vec![0], param: 0 }]).unwrap();
        let cfg = SqsConfig::new(1, 0, 2, ansatz).unwrap();
        let params = SqsParams { weights: vec![0.4, 0.3], theta: vec![0.8] };
        let histories: [&[&[u8]]; 3] = [
            &[&[1, 0], &[0, 1], &[1, 1]],
            &[&[0, 1], &[1, 1], &[1, 1]],
            &[&[1, 1], &[1, 0], &[1, 1]],
        ];
        let mut finals = Vec::new();
        for hist in histories {
            let mut state = SqsState::fresh(&cfg);
            let mut table = None;
            for x in hist {
                let out = sqs_step(&cfg, &params, &state, x, StepMode::Exact, DEFAULT_P_FLOOR, &mut rng(1)).unwrap();
                table = Some(out.table.clone());
                state = out.state;
            }
            finals.push(table.unwrap());
        }
        for t in &finals[1..] {
            for (a, b) in t.probs().iter().zip(finals[0].probs()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forced_step_reports_forced_outcome_probability() {
        let cfg = fig_cfg(1);
        let params = SqsParams { weights: vec![0.5], theta: vec![0.0, 0.0, 0.0] };
        let out = sqs_step_forced(
            &cfg,
            &params,
            &SqsState::fresh(&cfg),
            &[1],
            &BitString::from_index(1, 1),
            StepMode::Exact,
            DEFAULT_P_FLOOR,
            &mut rng(0),
        )
        .unwrap();
        assert_eq!(out.spikes.bits(), &[1]);
        assert!((out.realized_prob - 0.5).abs() < 1e-12);
    }

    #[test]
    fn forced_zero_probability_outcome_falls_back_to_marginal_memory() {
        let cfg = fig_cfg(1);
        // Silent input and identity circuit: spiking has probability zero.
        let params = SqsParams { weights: vec![0.0], theta: vec![0.0, 0.0, 0.0] };
        let out = sqs_step_forced(
            &cfg,
            &params,
            &SqsState::fresh(&cfg),
            &[0],
            &BitString::from_index(1, 1),
            StepMode::Exact,
            DEFAULT_P_FLOOR,
            &mut rng(0),
        )
        .unwrap();
        assert_eq!(out.realized_prob, 0.0);
        assert!((out.state.memory.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shots_mode_still_emits_single_draw_and_empirical_table() {
        let cfg = fig_cfg(1);
        let params = SqsParams { weights: vec![0.5], theta: vec![0.0, 0.0, 0.0] };
        let out = sqs_step(
            &cfg,
            &params,
            &SqsState::fresh(&cfg),
            &[1],
            StepMode::Shots { m_p: 400 },
            DEFAULT_P_FLOOR,
            &mut rng(5),
        )
        .unwrap();
        // Empirical table is a frequency over 400 draws of a fair coin.
        assert!((out.table.probs()[1] - 0.5).abs() < 0.1);
        assert!((out.realized_prob - 0.5).abs() < 1e-12);
        assert!(out.spikes.len() == 1);
    }

    #[test]
    fn same_seed_reproduces_trajectory() {
        let cfg = fig_cfg(2);
        let mut r = rng(9);
        let params = SqsParams::init(&cfg, &mut r);
        let run = |seed| {
            let mut state = SqsState::fresh(&cfg);
            let mut spikes = Vec::new();
            let mut r = rng(seed);
            for _ in 0..16 {
                let out = sqs_step(&cfg, &params, &state, &[1, 1], StepMode::Exact, DEFAULT_P_FLOOR, &mut r).unwrap();
                spikes.push(out.spikes.index());
                state = out.state;
            }
            spikes
        };
        assert_eq!(run(3), run(3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn step_distribution_is_normalized(w in -1.5f64..1.5, t0 in 0.0f64..PI, t1 in 0.0f64..PI, t2 in 0.0f64..PI) {
            let cfg = fig_cfg(1);
            let params = SqsParams { weights: vec![w], theta: vec![t0, t1, t2] };
            let state = SqsState::fresh(&cfg);
            let (_, table) = sqs_evolve(&cfg, &params, &state, &[1]).unwrap();
            let sum: f64 = table.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-10);
        }
    }
}

//! Randomized self-checks against the exhaustive oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sqsnn_core::encoding::encode_target;
use sqsnn_core::learning::{
    enumerate_likelihood, enumerated_hidden_gradient, oracle, FeedbackMode,
};
use sqsnn_core::network::{
    build_feedforward, forward, ForwardOptions, LayerSpec, LayeredSpec, NetworkGraph,
    NeuronModelSpec, OutputMode, SpikeTrain,
};
use sqsnn_core::qcore::{random_density, random_unitary, BitString, Tolerances};
use sqsnn_core::rng::RngFactory;
use sqsnn_core::{Cplx, DensityMatrix, Real};

const FLOOR: Real = 1e-12;

pub struct CheckReport {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

fn tiny_net(seed: u64, hidden: usize, n_mem: usize) -> NetworkGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = LayeredSpec {
        input_dim: 2,
        layers: vec![
            LayerSpec { size: hidden, model: NeuronModelSpec::Sqs { n_io: 1, n_mem } },
            LayerSpec { size: 1, model: NeuronModelSpec::Sqs { n_io: 1, n_mem } },
        ],
        self_synapse: false,
    };
    build_feedforward(&spec, &mut rng).unwrap()
}

fn two_step_input() -> SpikeTrain {
    SpikeTrain::new(vec![vec![vec![1], vec![0]], vec![vec![0], vec![1]]]).unwrap()
}

fn check_kernel(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = Tolerances::default();
    for n in 1..=4usize {
        for case in 0..cases {
            let rho = random_density::<Real>(n, &mut rng);
            let u = random_unitary::<Real>(n, &mut rng);
            let evolved = rho.evolve(&u).map_err(|e| e.to_string())?;
            evolved
                .validate(&tol)
                .map_err(|e| format!("size {n} case {case}: {e}"))?;
            let born = evolved
                .born_distribution(&(0..n).collect::<Vec<_>>())
                .map_err(|e| format!("size {n} case {case}: {e}"))?;
            let sum: Real = born.probs().iter().sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(format!("size {n} case {case}: born sum {sum}"));
            }
            if n >= 2 {
                let keep: Vec<usize> = (1..n).collect();
                let marginal = evolved.partial_trace(&keep).map_err(|e| e.to_string())?;
                let mut mix =
                    vec![Cplx::new(0.0, 0.0); marginal.dim() * marginal.dim()];
                for outcome in 0..2usize {
                    let b = BitString::from_index(1, outcome);
                    if let Ok((mem, prob)) = evolved.project_memory(&b, &[0], FLOOR) {
                        for (m, x) in mix.iter_mut().zip(mem.data()) {
                            *m += x * Cplx::new(prob, 0.0);
                        }
                    }
                }
                let err: Real = mix
                    .iter()
                    .zip(marginal.data())
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<Real>()
                    .sqrt();
                if err > 1e-9 {
                    return Err(format!("size {n} case {case}: projection mixture error {err}"));
                }
            }
        }
    }
    Ok(())
}

fn check_psr_rx() -> Result<(), String> {
    use sqsnn_core::learning::{psr_theta_gradient, Counters, TrainerConfig};
    use sqsnn_core::learning::ReplayCtx;
    use sqsnn_core::neurons::{AnsatzGate, AnsatzSpec, GateKind, SqsConfig, SqsParams};
    let ansatz =
        AnsatzSpec::new(vec![AnsatzGate { kind: GateKind::Rx, qubits: vec![0], param: 0 }])
            .map_err(|e| e.to_string())?;
    let cfg = SqsConfig::new(1, 0, 1, ansatz).map_err(|e| e.to_string())?;
    let mem = DensityMatrix::ground(0);
    let outcome = BitString::from_index(1, 1);
    let ctx = ReplayCtx { cfg: &cfg, pre_memory: &mem, spikes_in: &[0], outcome: &outcome };
    let tcfg = TrainerConfig::default();
    let counters = Counters::new();
    for k in 0..50 {
        let theta = 0.05 + 3.0 * k as Real / 50.0;
        let params = SqsParams { weights: vec![0.0], theta: vec![theta] };
        let p = (theta / 2.0).sin().powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grad = psr_theta_gradient(&ctx, &params, 0, p, &tcfg, &mut rng, &counters)
            .map_err(|e| e.to_string())?;
        let expect = theta.sin() / 2.0 / p.max(FLOOR);
        if (grad - expect).abs() > 1e-9 {
            return Err(format!("theta {theta}: shift gradient {grad}, analytic {expect}"));
        }
    }
    Ok(())
}

fn check_jensen(seed: u64, nets: u64, inject: bool) -> Result<(), String> {
    let input = two_step_input();
    let target = encode_target(0, 1, 2, 1).map_err(|e| e.to_string())?;
    for k in 0..nets {
        let graph = tiny_net(seed.wrapping_add(k), 2, 1);
        let (neg_log_p, bound) =
            enumerate_likelihood(&graph, &input, &target, FLOOR).map_err(|e| e.to_string())?;
        let mut margin = bound - neg_log_p;
        if inject {
            margin = -margin - 1.0;
        }
        if margin < -1e-12 {
            return Err(format!("net {k}: bound {bound} below -log p {neg_log_p}"));
        }
    }
    Ok(())
}

fn check_factorization(seed: u64, samples: u64) -> Result<(), String> {
    let graph = tiny_net(seed, 2, 1);
    let input = two_step_input();
    let dist = oracle::enumerate_joint_distribution(&graph, &input).map_err(|e| e.to_string())?;
    let factory = RngFactory::new(seed);
    for k in 0..samples {
        let rec = forward(&graph, &input, &factory, &[k], OutputMode::Sample, &ForwardOptions::default())
            .map_err(|e| e.to_string())?;
        let product: Real = (0..2)
            .map(|t| (0..graph.num_neurons()).map(|i| rec.realized_prob[t][i]).product::<Real>())
            .product();
        let idx = oracle::trajectory_index(&graph, &rec);
        if (product - dist[idx]).abs() > 1e-9 * dist[idx].max(1e-12) {
            return Err(format!("sample {k}: conditional product {product} vs joint {}", dist[idx]));
        }
    }
    Ok(())
}

fn check_sampling_law(seed: u64, samples: u64) -> Result<(), String> {
    let graph = tiny_net(seed, 2, 1);
    let input = two_step_input();
    let dist = oracle::enumerate_joint_distribution(&graph, &input).map_err(|e| e.to_string())?;
    let factory = RngFactory::new(seed ^ 0x5a5a);
    let mut counts = vec![0usize; dist.len()];
    for k in 0..samples {
        let rec = forward(&graph, &input, &factory, &[k], OutputMode::Sample, &ForwardOptions::default())
            .map_err(|e| e.to_string())?;
        counts[oracle::trajectory_index(&graph, &rec)] += 1;
    }
    let tv: Real = dist
        .iter()
        .zip(&counts)
        .map(|(p, &c)| (p - c as Real / samples as Real).abs())
        .sum::<Real>()
        / 2.0;
    if tv > 0.08 {
        return Err(format!("total variation {tv} after {samples} samples"));
    }
    Ok(())
}

fn check_score_function(seed: u64) -> Result<(), String> {
    // Memoryless net: the enumerated cumulative score-function gradient
    // must match central finite differences of the enumerated bound.
    let graph = tiny_net(seed, 2, 0);
    let input = two_step_input();
    let target = encode_target(0, 1, 2, 1).map_err(|e| e.to_string())?;
    let grads = enumerated_hidden_gradient(&graph, &input, &target, FeedbackMode::Cumulative, FLOOR)
        .map_err(|e| e.to_string())?;
    let h = 1e-6;
    for (i, gw, _) in &grads {
        for (k, &g) in gw.iter().enumerate() {
            let eval = |delta: Real| {
                let mut gph = graph.clone();
                if let sqsnn_core::network::NeuronKind::Sqs { params, .. } = gph.neuron_mut(*i) {
                    params.weights[k] += delta;
                }
                enumerate_likelihood(&gph, &input, &target, FLOOR).unwrap().1
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            if (g - fd).abs() > 1e-6 {
                return Err(format!("neuron {i} weight {k}: score {g} vs bound slope {fd}"));
            }
        }
    }
    Ok(())
}

/// Run every oracle check; `fault` artificially violates the named
/// invariant so the failure path itself can be exercised.
pub fn run_checks(seed: u64, quick: bool, fault: Option<&str>) -> Vec<CheckReport> {
    let kernel_cases = if quick { 50 } else { 250 };
    let jensen_nets = if quick { 10 } else { 30 };
    let samples = if quick { 2000 } else { 6000 };
    vec![
        CheckReport { name: "kernel-invariants", outcome: check_kernel(seed, kernel_cases) },
        CheckReport { name: "psr-exactness", outcome: check_psr_rx() },
        CheckReport { name: "jensen-bound", outcome: check_jensen(seed, jensen_nets, fault == Some("jensen")) },
        CheckReport { name: "factorization", outcome: check_factorization(seed, 10) },
        CheckReport { name: "sampling-law", outcome: check_sampling_law(seed, samples) },
        CheckReport { name: "score-function", outcome: check_score_function(seed) },
    ]
}

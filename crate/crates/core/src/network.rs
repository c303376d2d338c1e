//! Directed spiking-network graphs and time-stepped execution.
//!
//! Neurons condition only on spikes emitted at the previous step, so any
//! per-step evaluation order yields the same trajectory; external input
//! channels act as virtual presynaptic sources delivering spikes at the
//! current step. Output neurons have no outgoing edges.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::neurons::{
    lif_step, qlif_step, sqs_step, sqs_step_forced, AnsatzSpec, LifParams, LifState, QlifConfig,
    QlifParams, QlifState, SqsConfig, SqsParams, SqsState, SqsStepOutput, StepMode,
};
use crate::qcore::BitString;
use crate::rng::{Purpose, RngFactory};
use crate::{DensityMatrix, ProbTable, Real};

/// Binary spike tensor indexed `[time][unit][channel]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeTrain {
    steps: Vec<Vec<Vec<u8>>>,
}

impl SpikeTrain {
    pub fn new(steps: Vec<Vec<Vec<u8>>>) -> Result<Self> {
        for slice in &steps {
            for unit in slice {
                if unit.iter().any(|&b| b > 1) {
                    return Err(CoreError::invalid("spike entries must be 0 or 1"));
                }
            }
        }
        Ok(SpikeTrain { steps })
    }

    pub fn empty(t_len: usize, units: usize, channels: usize) -> Self {
        SpikeTrain { steps: vec![vec![vec![0; channels]; units]; t_len] }
    }

    pub fn t_len(&self) -> usize {
        self.steps.len()
    }

    pub fn units(&self) -> usize {
        self.steps.first().map_or(0, |s| s.len())
    }

    pub fn at(&self, t: usize) -> &[Vec<u8>] {
        &self.steps[t]
    }

    pub fn get(&self, t: usize, unit: usize, channel: usize) -> u8 {
        self.steps[t][unit][channel]
    }

    pub fn set(&mut self, t: usize, unit: usize, channel: usize, v: u8) {
        self.steps[t][unit][channel] = v;
    }

    pub fn steps(&self) -> &[Vec<Vec<u8>>] {
        &self.steps
    }

    /// Total spikes emitted by one unit over all steps and channels.
    pub fn unit_count(&self, unit: usize) -> usize {
        self.steps.iter().map(|s| s[unit].iter().map(|&b| b as usize).sum::<usize>()).sum()
    }

    /// Total spikes in the whole train.
    pub fn total_count(&self) -> usize {
        (0..self.units()).map(|u| self.unit_count(u)).sum()
    }
}

/// Neuron model plus its trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NeuronKind {
    Sqs { cfg: SqsConfig, params: SqsParams<Real> },
    Qlif { cfg: QlifConfig<Real>, params: QlifParams<Real> },
    Lif { params: LifParams<Real> },
}

impl NeuronKind {
    /// Spiking channels this neuron emits per step.
    pub fn channels(&self) -> usize {
        match self {
            NeuronKind::Sqs { cfg, .. } => cfg.n_io,
            _ => 1,
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            NeuronKind::Sqs { cfg, .. } => cfg.fan_in,
            NeuronKind::Qlif { params, .. } => params.w_s.len(),
            NeuronKind::Lif { params } => params.weights.len(),
        }
    }
}

/// A presynaptic source: an external input channel or another neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Input(usize),
    Neuron(usize),
}

/// Directed graph of spiking neurons with hidden and output subsets.
///
/// Parent lists are ordered (input channels first, then neurons by id, then
/// the optional explicit self-synapse); synaptic weight columns follow that
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    neurons: Vec<NeuronKind>,
    edges: Vec<(usize, usize)>,
    input_edges: Vec<(usize, usize)>,
    hidden: Vec<usize>,
    output: Vec<usize>,
    input_dim: usize,
    self_synapse: bool,
    parents: Vec<Vec<Source>>,
    layer_groups: Option<Vec<Vec<usize>>>,
}

impl NetworkGraph {
    pub fn new(
        neurons: Vec<NeuronKind>,
        edges: Vec<(usize, usize)>,
        input_edges: Vec<(usize, usize)>,
        hidden: Vec<usize>,
        output: Vec<usize>,
        input_dim: usize,
        self_synapse: bool,
    ) -> Result<Self> {
        let parents = derive_parents(neurons.len(), &edges, &input_edges, self_synapse);
        let graph = NetworkGraph {
            neurons,
            edges,
            input_edges,
            hidden,
            output,
            input_dim,
            self_synapse,
            parents,
            layer_groups: None,
        };
        let violations = graph.validate();
        if !violations.is_empty() {
            return Err(CoreError::config(format!("invalid graph: {}", violations.join("; "))));
        }
        Ok(graph)
    }

    /// Structural diagnostics; empty when the graph is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.neurons.len();
        for &(i, j) in &self.edges {
            if i >= n || j >= n {
                v.push(format!("dangling edge ({i}, {j})"));
                continue;
            }
            if i == j {
                v.push(format!("self-edge at neuron {i}"));
            }
            if self.output.contains(&i) {
                v.push(format!(
                    "output neuron {i} has an outgoing edge (parent sets must avoid the output set)"
                ));
            }
        }
        for &(ch, j) in &self.input_edges {
            if ch >= self.input_dim || j >= n {
                v.push(format!("dangling input edge ({ch}, {j})"));
            }
        }
        for i in 0..n {
            let in_h = self.hidden.contains(&i);
            let in_o = self.output.contains(&i);
            if in_h && in_o {
                v.push(format!("neuron {i} is both hidden and output"));
            }
            if !in_h && !in_o {
                v.push(format!("neuron {i} is in neither the hidden nor the output set"));
            }
            if self.parents[i].len() != self.neurons[i].fan_in() {
                v.push(format!(
                    "neuron {i} fan-in {} does not match its {} parents",
                    self.neurons[i].fan_in(),
                    self.parents[i].len()
                ));
            }
        }
        for &i in self.hidden.iter().chain(self.output.iter()) {
            if i >= n {
                v.push(format!("subset references missing neuron {i}"));
            }
        }
        v
    }

    pub fn neurons(&self) -> &[NeuronKind] {
        &self.neurons
    }

    pub fn neuron(&self, i: usize) -> &NeuronKind {
        &self.neurons[i]
    }

    pub fn neuron_mut(&mut self, i: usize) -> &mut NeuronKind {
        &mut self.neurons[i]
    }

    pub fn num_neurons(&self) -> usize {
        self.neurons.len()
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn output(&self) -> &[usize] {
        &self.output
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parents(&self, i: usize) -> &[Source] {
        &self.parents[i]
    }

    /// Neuron groups the rate regularizer sums over separately. Layered
    /// builders record their layers; otherwise the whole network is one
    /// group.
    pub fn layer_groups(&self) -> Vec<Vec<usize>> {
        self.layer_groups
            .clone()
            .unwrap_or_else(|| vec![(0..self.neurons.len()).collect()])
    }

    pub fn set_layer_groups(&mut self, groups: Vec<Vec<usize>>) {
        self.layer_groups = Some(groups);
    }

    /// Presynaptic spike block for neuron `i` at step `t` (0-based):
    /// neuron parents contribute their spikes from `t - 1`, input channels
    /// their value at `t`. Layout is `channels x fan_in`, row-major.
    ///
    /// One-channel parents broadcast to every channel of a multi-channel
    /// neuron; multi-channel parents feed their channel `n` into channel `n`.
    pub fn gather_input(
        &self,
        i: usize,
        t: usize,
        input: &SpikeTrain,
        prev_spikes: Option<&[Vec<u8>]>,
    ) -> Vec<u8> {
        let channels = self.neurons[i].channels();
        let parents = &self.parents[i];
        let mut x = vec![0u8; channels * parents.len()];
        for (k, src) in parents.iter().enumerate() {
            for n in 0..channels {
                let bit = match *src {
                    Source::Input(ch) => pick_channel(&input.at(t)[ch], n),
                    Source::Neuron(j) => match prev_spikes {
                        Some(prev) => pick_channel(&prev[j], n),
                        None => 0,
                    },
                };
                x[n * parents.len() + k] = bit;
            }
        }
        x
    }
}

fn pick_channel(unit: &[u8], n: usize) -> u8 {
    if unit.len() == 1 {
        unit[0]
    } else {
        unit[n.min(unit.len() - 1)]
    }
}

fn derive_parents(
    n: usize,
    edges: &[(usize, usize)],
    input_edges: &[(usize, usize)],
    self_synapse: bool,
) -> Vec<Vec<Source>> {
    let mut parents: Vec<Vec<Source>> = vec![Vec::new(); n];
    let mut sorted_inputs = input_edges.to_vec();
    sorted_inputs.sort_unstable();
    for &(ch, j) in &sorted_inputs {
        if j < n {
            parents[j].push(Source::Input(ch));
        }
    }
    let mut sorted_edges = edges.to_vec();
    sorted_edges.sort_unstable_by_key(|&(i, j)| (j, i));
    for &(i, j) in &sorted_edges {
        if j < n {
            parents[j].push(Source::Neuron(i));
        }
    }
    if self_synapse {
        for (j, p) in parents.iter_mut().enumerate() {
            p.push(Source::Neuron(j));
        }
    }
    parents
}

/// Layered feedforward architecture description. The final layer is the
/// output set; earlier layers are hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub self_synapse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub size: usize,
    pub model: NeuronModelSpec,
}

/// Per-layer neuron model selector with its static configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "neuron", rename_all = "lowercase")]
pub enum NeuronModelSpec {
    Sqs { n_io: usize, n_mem: usize },
    Qlif { threshold: Real, beta: Real, t1: Real, shots: Option<usize> },
    Lif { decay: Real, threshold: Real },
}

/// Densely connected feedforward graph with initialized parameters.
pub fn build_feedforward(spec: &LayeredSpec, rng: &mut impl Rng) -> Result<NetworkGraph> {
    if spec.layers.is_empty() {
        return Err(CoreError::config("at least one layer required"));
    }
    if spec.layers.iter().any(|l| l.size == 0) {
        return Err(CoreError::config("layer sizes must be at least 1"));
    }
    if spec.input_dim == 0 {
        return Err(CoreError::config("input dimension must be at least 1"));
    }
    let mut neurons = Vec::new();
    let mut edges = Vec::new();
    let mut input_edges = Vec::new();
    let mut prev_layer: Vec<usize> = Vec::new();
    let mut hidden = Vec::new();
    for (l, layer) in spec.layers.iter().enumerate() {
        let mut this_layer = Vec::new();
        for _ in 0..layer.size {
            let id = neurons.len();
            let fan_in = if l == 0 { spec.input_dim } else { prev_layer.len() }
                + usize::from(spec.self_synapse);
            let kind = match layer.model {
                NeuronModelSpec::Sqs { n_io, n_mem } => {
                    let cfg = SqsConfig::new(n_io, n_mem, fan_in, AnsatzSpec::crx_rx(n_io, n_mem))?;
                    let params = SqsParams::init(&cfg, rng);
                    NeuronKind::Sqs { cfg, params }
                }
                NeuronModelSpec::Qlif { threshold, beta, t1, shots } => NeuronKind::Qlif {
                    cfg: QlifConfig {
                        threshold,
                        beta,
                        t1,
                        mode: shots
                            .map_or(crate::neurons::QlifMode::Exact, crate::neurons::QlifMode::Shots),
                    },
                    params: QlifParams::init(fan_in, rng),
                },
                NeuronModelSpec::Lif { decay, threshold } => {
                    let mut params = LifParams::init(fan_in, rng);
                    params.decay = decay;
                    params.threshold = threshold;
                    NeuronKind::Lif { params }
                }
            };
            neurons.push(kind);
            if l == 0 {
                for ch in 0..spec.input_dim {
                    input_edges.push((ch, id));
                }
            } else {
                for &p in &prev_layer {
                    edges.push((p, id));
                }
            }
            this_layer.push(id);
        }
        if l + 1 < spec.layers.len() {
            hidden.extend(this_layer.iter().copied());
        }
        prev_layer = this_layer;
    }
    let output = prev_layer;
    let mut groups = Vec::new();
    let mut start = 0usize;
    for layer in &spec.layers {
        groups.push((start..start + layer.size).collect());
        start += layer.size;
    }
    let mut graph = NetworkGraph::new(
        neurons,
        edges,
        input_edges,
        hidden,
        output,
        spec.input_dim,
        spec.self_synapse,
    )?;
    graph.set_layer_groups(groups);
    Ok(graph)
}

/// Per-neuron evolving state during a forward run.
#[derive(Debug, Clone)]
pub enum NeuronState {
    Sqs(SqsState<Real>),
    Qlif(QlifState<Real>),
    Lif(LifState<Real>),
}

/// How the output neurons' spikes are chosen during a run.
#[derive(Debug, Clone, Copy)]
pub enum OutputMode<'a> {
    /// Sample outputs from the model (inference).
    Sample,
    /// Clamp output spikes to a target train over the output units
    /// (teacher forcing during training).
    Forced(&'a SpikeTrain),
}

#[derive(Debug, Clone)]
pub struct ForwardOptions {
    pub mode: StepMode,
    pub p_floor: Real,
    /// Record per-step pre-step memory snapshots (needed for local replay).
    pub record_memory: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            mode: StepMode::Exact,
            p_floor: crate::qcore::DEFAULT_P_FLOOR,
            record_memory: false,
        }
    }
}

/// Everything a forward run records.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Spikes of every network neuron, `[t][neuron][channel]`.
    pub spikes: SpikeTrain,
    /// Per-step outcome tables (exact, or shot estimates per the step mode).
    pub tables: Vec<Vec<ProbTable>>,
    /// Exact probability of each neuron's realized (or forced) outcome.
    pub realized_prob: Vec<Vec<Real>>,
    /// Exact per-channel spike-probability marginals (the activity measure;
    /// membrane potential for the classical baseline).
    pub marginals: Vec<Vec<Vec<Real>>>,
    /// Pre-step memory snapshots for SQS neurons, when recorded.
    pub pre_memory: Vec<Vec<Option<DensityMatrix>>>,
}

impl TrajectoryRecord {
    /// Spike train restricted to the graph's output neurons, in output order.
    pub fn output_spikes(&self, graph: &NetworkGraph) -> SpikeTrain {
        let steps = self
            .spikes
            .steps()
            .iter()
            .map(|slice| graph.output().iter().map(|&i| slice[i].clone()).collect())
            .collect();
        SpikeTrain { steps }
    }

    /// Aggregate spike count across the network divided by the step count.
    pub fn spikes_per_step(&self) -> Real {
        if self.spikes.t_len() == 0 {
            return 0.0;
        }
        self.spikes.total_count() as Real / self.spikes.t_len() as Real
    }
}

/// Time-stepped execution of the whole graph for `input.t_len()` steps.
///
/// Every neuron draws from its own `(pass_tags..., neuron, t)` stream, so
/// trajectories are reproducible under any evaluation order; `pass_tags`
/// distinguishes items, passes, and iterations.
pub fn forward(
    graph: &NetworkGraph,
    input: &SpikeTrain,
    factory: &RngFactory,
    pass_tags: &[u64],
    output_mode: OutputMode,
    opts: &ForwardOptions,
) -> Result<TrajectoryRecord> {
    let order: Vec<usize> = (0..graph.num_neurons()).collect();
    forward_ordered(graph, input, factory, pass_tags, output_mode, opts, &order)
}

/// [`forward`] with an explicit per-step evaluation order (the result must
/// not depend on it; exposed so tests can assert that).
#[doc(hidden)]
pub fn forward_ordered(
    graph: &NetworkGraph,
    input: &SpikeTrain,
    factory: &RngFactory,
    pass_tags: &[u64],
    output_mode: OutputMode,
    opts: &ForwardOptions,
    order: &[usize],
) -> Result<TrajectoryRecord> {
    let t_len = input.t_len();
    if t_len == 0 {
        return Err(CoreError::invalid("input train must cover at least one step"));
    }
    if input.units() != graph.input_dim() {
        return Err(CoreError::invalid(format!(
            "input has {} channels, graph expects {}",
            input.units(),
            graph.input_dim()
        )));
    }
    if let OutputMode::Forced(target) = output_mode {
        if target.t_len() != t_len || target.units() != graph.output().len() {
            return Err(CoreError::invalid("target shape does not match output set"));
        }
    }
    let n = graph.num_neurons();
    let mut states: Vec<NeuronState> = graph
        .neurons()
        .iter()
        .map(|k| match k {
            NeuronKind::Sqs { cfg, .. } => NeuronState::Sqs(SqsState::fresh(cfg)),
            NeuronKind::Qlif { .. } => NeuronState::Qlif(QlifState::default()),
            NeuronKind::Lif { .. } => NeuronState::Lif(LifState::default()),
        })
        .collect();
    let mut spikes: Vec<Vec<Vec<u8>>> = Vec::with_capacity(t_len);
    let mut tables = Vec::with_capacity(t_len);
    let mut realized = Vec::with_capacity(t_len);
    let mut marginals = Vec::with_capacity(t_len);
    let mut pre_memory = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let prev = spikes.last();
        let mut slice: Vec<Vec<u8>> = vec![Vec::new(); n];
        let mut table_slice: Vec<Option<ProbTable>> = vec![None; n];
        let mut realized_slice = vec![0.0; n];
        let mut marg_slice: Vec<Vec<Real>> = vec![Vec::new(); n];
        let mut mem_slice: Vec<Option<DensityMatrix>> = vec![None; n];
        for &i in order {
            let x = graph.gather_input(i, t, input, prev.map(|p| p.as_slice()));
            let mut rng = factory.stream(Purpose::Sample, &tags(pass_tags, i, t));
            match (&graph.neurons()[i], &states[i]) {
                (NeuronKind::Sqs { cfg, params }, NeuronState::Sqs(state)) => {
                    if opts.record_memory {
                        mem_slice[i] = Some(state.memory.clone());
                    }
                    let forced_bits = match output_mode {
                        OutputMode::Forced(target) => graph
                            .output()
                            .iter()
                            .position(|&o| o == i)
                            .map(|pos| BitString::new(target.at(t)[pos].clone())),
                        OutputMode::Sample => None,
                    };
                    let out: SqsStepOutput<Real> = match forced_bits {
                        Some(bits) => sqs_step_forced(
                            cfg, params, state, &x, &bits?, opts.mode, opts.p_floor, &mut rng,
                        )?,
                        None => {
                            sqs_step(cfg, params, state, &x, opts.mode, opts.p_floor, &mut rng)?
                        }
                    };
                    let exact = out.rho_im.born_distribution(&cfg.io_qubits())?;
                    marg_slice[i] = (0..cfg.n_io).map(|ch| exact.marginal_one(ch)).collect();
                    slice[i] = out.spikes.bits().to_vec();
                    realized_slice[i] = out.realized_prob;
                    table_slice[i] = Some(out.table);
                    states[i] = NeuronState::Sqs(out.state);
                }
                (NeuronKind::Qlif { cfg, params }, NeuronState::Qlif(state)) => {
                    let (spike, alpha, next) = qlif_step(cfg, params, state, &x, &mut rng)?;
                    let forced = forced_bit(graph, i, t, &output_mode);
                    let emitted = forced.unwrap_or(u8::from(spike));
                    realized_slice[i] = if emitted == 1 { alpha } else { 1.0 - alpha };
                    marg_slice[i] = vec![alpha];
                    table_slice[i] = Some(ProbTable::new(1, vec![1.0 - alpha, alpha])?);
                    slice[i] = vec![emitted];
                    states[i] = NeuronState::Qlif(QlifState {
                        alpha_prev: next.alpha_prev,
                        spike_prev: emitted == 1,
                    });
                }
                (NeuronKind::Lif { params }, NeuronState::Lif(state)) => {
                    let (spike, potential, next) = lif_step(params, state, &x)?;
                    let forced = forced_bit(graph, i, t, &output_mode);
                    let emitted = forced.unwrap_or(u8::from(spike));
                    let p: Real = if spike { 1.0 } else { 0.0 };
                    realized_slice[i] = if emitted == 1 { p } else { 1.0 - p };
                    // Membrane potential stands in for spiking probability
                    // as this model's activity measure.
                    marg_slice[i] = vec![potential];
                    table_slice[i] = Some(ProbTable::new(1, vec![1.0 - p, p])?);
                    slice[i] = vec![emitted];
                    states[i] = NeuronState::Lif(LifState {
                        potential: next.potential,
                        spike_prev: emitted == 1,
                    });
                }
                _ => unreachable!("state kind tracks neuron kind"),
            }
        }
        spikes.push(slice);
        tables.push(table_slice.into_iter().map(|t| t.expect("every neuron stepped")).collect());
        realized.push(realized_slice);
        marginals.push(marg_slice);
        pre_memory.push(mem_slice);
    }
    Ok(TrajectoryRecord {
        spikes: SpikeTrain { steps: spikes },
        tables,
        realized_prob: realized,
        marginals,
        pre_memory,
    })
}

/// Deterministic run with every neuron's outcome clamped to `forced`
/// (`[t][neuron][channel]`, covering the whole network). Exact per-step
/// probabilities of the forced outcomes are recorded; nothing is sampled.
pub fn forward_forced(
    graph: &NetworkGraph,
    input: &SpikeTrain,
    forced: &SpikeTrain,
    record_memory: bool,
) -> Result<TrajectoryRecord> {
    let t_len = input.t_len();
    if forced.t_len() != t_len || forced.units() != graph.num_neurons() {
        return Err(CoreError::invalid("forced train must cover every neuron and step"));
    }
    let n = graph.num_neurons();
    let factory = RngFactory::new(0);
    let opts = ForwardOptions { mode: StepMode::Exact, p_floor: crate::qcore::DEFAULT_P_FLOOR, record_memory };
    let mut states: Vec<NeuronState> = graph
        .neurons()
        .iter()
        .map(|k| match k {
            NeuronKind::Sqs { cfg, .. } => NeuronState::Sqs(SqsState::fresh(cfg)),
            NeuronKind::Qlif { .. } => NeuronState::Qlif(QlifState::default()),
            NeuronKind::Lif { .. } => NeuronState::Lif(LifState::default()),
        })
        .collect();
    let mut spikes: Vec<Vec<Vec<u8>>> = Vec::with_capacity(t_len);
    let mut tables = Vec::with_capacity(t_len);
    let mut realized = Vec::with_capacity(t_len);
    let mut marginals = Vec::with_capacity(t_len);
    let mut pre_memory = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let prev = spikes.last();
        let mut slice: Vec<Vec<u8>> = vec![Vec::new(); n];
        let mut table_slice: Vec<Option<ProbTable>> = vec![None; n];
        let mut realized_slice = vec![0.0; n];
        let mut marg_slice: Vec<Vec<Real>> = vec![Vec::new(); n];
        let mut mem_slice: Vec<Option<DensityMatrix>> = vec![None; n];
        for i in 0..n {
            let x = graph.gather_input(i, t, input, prev.map(|p| p.as_slice()));
            let mut rng = factory.stream(Purpose::Sample, &tags(&[], i, t));
            let bits = forced.at(t)[i].clone();
            match (&graph.neurons()[i], &states[i]) {
                (NeuronKind::Sqs { cfg, params }, NeuronState::Sqs(state)) => {
                    if record_memory {
                        mem_slice[i] = Some(state.memory.clone());
                    }
                    let out = sqs_step_forced(
                        cfg,
                        params,
                        state,
                        &x,
                        &BitString::new(bits)?,
                        StepMode::Exact,
                        opts.p_floor,
                        &mut rng,
                    )?;
                    let exact = out.rho_im.born_distribution(&cfg.io_qubits())?;
                    marg_slice[i] = (0..cfg.n_io).map(|ch| exact.marginal_one(ch)).collect();
                    slice[i] = out.spikes.bits().to_vec();
                    realized_slice[i] = out.realized_prob;
                    table_slice[i] = Some(out.table);
                    states[i] = NeuronState::Sqs(out.state);
                }
                (NeuronKind::Qlif { cfg, params }, NeuronState::Qlif(state)) => {
                    let (_, alpha, next) = qlif_step(cfg, params, state, &x, &mut rng)?;
                    let emitted = bits[0];
                    realized_slice[i] = if emitted == 1 { alpha } else { 1.0 - alpha };
                    marg_slice[i] = vec![alpha];
                    table_slice[i] = Some(ProbTable::new(1, vec![1.0 - alpha, alpha])?);
                    slice[i] = vec![emitted];
                    states[i] = NeuronState::Qlif(QlifState {
                        alpha_prev: next.alpha_prev,
                        spike_prev: emitted == 1,
                    });
                }
                (NeuronKind::Lif { params }, NeuronState::Lif(state)) => {
                    let (spike, potential, _) = lif_step(params, state, &x)?;
                    let emitted = bits[0];
                    let p: Real = if spike { 1.0 } else { 0.0 };
                    realized_slice[i] = if emitted == 1 { p } else { 1.0 - p };
                    marg_slice[i] = vec![potential];
                    table_slice[i] = Some(ProbTable::new(1, vec![1.0 - p, p])?);
                    slice[i] = vec![emitted];
                    states[i] = NeuronState::Lif(LifState { potential, spike_prev: emitted == 1 });
                }
                _ => unreachable!("state kind tracks neuron kind"),
            }
        }
        spikes.push(slice);
        tables.push(table_slice.into_iter().map(|t| t.expect("every neuron stepped")).collect());
        realized.push(realized_slice);
        marginals.push(marg_slice);
        pre_memory.push(mem_slice);
    }
    Ok(TrajectoryRecord {
        spikes: SpikeTrain { steps: spikes },
        tables,
        realized_prob: realized,
        marginals,
        pre_memory,
    })
}

fn tags(pass_tags: &[u64], neuron: usize, t: usize) -> Vec<u64> {
    let mut v = Vec::with_capacity(pass_tags.len() + 2);
    v.extend_from_slice(pass_tags);
    v.push(neuron as u64);
    v.push(t as u64);
    v
}

fn forced_bit(graph: &NetworkGraph, i: usize, t: usize, mode: &OutputMode) -> Option<u8> {
    match mode {
        OutputMode::Forced(target) => graph
            .output()
            .iter()
            .position(|&o| o == i)
            .map(|pos| target.at(t)[pos][0]),
        OutputMode::Sample => None,
    }
}

/// Class with the largest total output spike count; ties break toward the
/// lowest index.
pub fn rate_decode(output_spikes: &SpikeTrain) -> Result<usize> {
    let units = output_spikes.units();
    if units < 2 {
        return Err(CoreError::invalid("rate decoding needs at least two output neurons"));
    }
    let mut best = 0usize;
    let mut best_count = output_spikes.unit_count(0);
    for u in 1..units {
        let c = output_spikes.unit_count(u);
        if c > best_count {
            best = u;
            best_count = c;
        }
    }
    Ok(best)
}

/// Serialized form of a [`NetworkGraph`]; the on-disk JSON schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDoc {
    pub version: u32,
    pub input_dim: usize,
    pub self_synapse: bool,
    pub neurons: Vec<NeuronDoc>,
    pub edges: Vec<(usize, usize)>,
    pub input_edges: Vec<(usize, usize)>,
    pub hidden: Vec<usize>,
    pub output: Vec<usize>,
    #[serde(default)]
    pub layers: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuronDoc {
    pub id: usize,
    #[serde(flatten)]
    pub kind: NeuronKind,
}

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

impl NetworkGraph {
    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            version: GRAPH_SCHEMA_VERSION,
            input_dim: self.input_dim,
            self_synapse: self.self_synapse,
            neurons: self
                .neurons
                .iter()
                .enumerate()
                .map(|(id, kind)| NeuronDoc { id, kind: kind.clone() })
                .collect(),
            edges: self.edges.clone(),
            input_edges: self.input_edges.clone(),
            hidden: self.hidden.clone(),
            output: self.output.clone(),
            layers: self.layer_groups.clone(),
        }
    }

    pub fn from_doc(doc: GraphDoc) -> Result<Self> {
        if doc.version != GRAPH_SCHEMA_VERSION {
            return Err(CoreError::format(format!(
                "unsupported graph schema version {}",
                doc.version
            )));
        }
        let mut neurons = doc.neurons;
        neurons.sort_by_key(|n| n.id);
        if neurons.iter().enumerate().any(|(k, n)| n.id != k) {
            return Err(CoreError::format("neuron ids must be 0..n without gaps"));
        }
        let mut graph = NetworkGraph::new(
            neurons.into_iter().map(|n| n.kind).collect(),
            doc.edges,
            doc.input_edges,
            doc.hidden,
            doc.output,
            doc.input_dim,
            doc.self_synapse,
        )?;
        if let Some(groups) = doc.layers {
            graph.set_layer_groups(groups);
        }
        Ok(graph)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: GraphDoc =
            serde_json::from_str(s).map_err(|e| CoreError::format(format!("graph json: {e}")))?;
        Self::from_doc(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sqs_spec(n_io: usize, n_mem: usize) -> NeuronModelSpec {
        NeuronModelSpec::Sqs { n_io, n_mem }
    }

    fn single_layer_spec(input_dim: usize, outputs: usize) -> LayeredSpec {
        LayeredSpec {
            input_dim,
            layers: vec![LayerSpec { size: outputs, model: sqs_spec(1, 1) }],
            self_synapse: false,
        }
    }

    fn input_train(pattern: &[&[u8]]) -> SpikeTrain {
        SpikeTrain::new(
            pattern.iter().map(|slice| slice.iter().map(|&b| vec![b]).collect()).collect(),
        )
        .unwrap()
    }

    /// Unit-weight, identity-circuit SQS neuron: spikes iff any input spikes.
    fn relay_neuron(fan_in: usize) -> NeuronKind {
        let cfg = SqsConfig::new(1, 1, fan_in, AnsatzSpec::crx_rx(1, 1)).unwrap();
        let params = SqsParams { weights: vec![1.0; fan_in], theta: vec![0.0, 0.0, 0.0] };
        NeuronKind::Sqs { cfg, params }
    }

    #[test]
    fn single_layer_network_has_input_fanin() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = build_feedforward(&single_layer_spec(4, 2), &mut rng).unwrap();
        assert_eq!(g.num_neurons(), 2);
        assert_eq!(g.output(), &[0, 1]);
        assert!(g.hidden().is_empty());
        for i in 0..2 {
            assert_eq!(g.neuron(i).fan_in(), 4);
            assert!(g.parents(i).iter().all(|s| matches!(s, Source::Input(_))));
        }
    }

    #[test]
    fn two_layer_network_has_expected_fanins() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = LayeredSpec {
            input_dim: 4,
            layers: vec![
                LayerSpec { size: 3, model: sqs_spec(1, 1) },
                LayerSpec { size: 2, model: sqs_spec(1, 1) },
            ],
            self_synapse: false,
        };
        let g = build_feedforward(&spec, &mut rng).unwrap();
        assert_eq!(g.hidden(), &[0, 1, 2]);
        assert_eq!(g.output(), &[3, 4]);
        // 4 input channels into each of 3 hidden, 3 hidden into each of 2 outputs.
        let synapses: usize = (0..5).map(|i| g.neuron(i).fan_in()).sum();
        assert_eq!(synapses, 4 * 3 + 3 * 2);
        assert!(g.validate().is_empty());
    }

    #[test]
    fn builder_rejects_empty_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = LayeredSpec {
            input_dim: 2,
            layers: vec![LayerSpec { size: 0, model: sqs_spec(1, 0) }],
            self_synapse: false,
        };
        assert!(matches!(build_feedforward(&spec, &mut rng), Err(CoreError::Config(_))));
    }

    #[test]
    fn validate_flags_output_out_edges_and_overlap() {
        let neurons = vec![relay_neuron(1), relay_neuron(1)];
        let g = NetworkGraph {
            neurons,
            edges: vec![(1, 0)],
            input_edges: vec![(0, 0)],
            hidden: vec![0],
            output: vec![0, 1],
            input_dim: 1,
            self_synapse: false,
            parents: derive_parents(2, &[(1, 0)], &[(0, 0)], false),
            layer_groups: None,
        };
        let violations = g.validate();
        assert!(violations.iter().any(|v| v.contains("outgoing edge")));
        assert!(violations.iter().any(|v| v.contains("both hidden and output")));
        assert!(violations.iter().any(|v| v.contains("fan-in")));
    }

    #[test]
    fn deterministic_network_is_seed_invariant() {
        let g = NetworkGraph::new(
            vec![relay_neuron(1), relay_neuron(1)],
            vec![(0, 1)],
            vec![(0, 0)],
            vec![0],
            vec![1],
            1,
            false,
        )
        .unwrap();
        let input = input_train(&[&[1], &[0], &[1], &[1]]);
        let run = |seed| {
            let f = RngFactory::new(seed);
            forward(&g, &input, &f, &[0], OutputMode::Sample, &ForwardOptions::default())
                .unwrap()
                .spikes
        };
        assert_eq!(run(1), run(999));
    }

    #[test]
    fn relay_neuron_spikes_with_its_input() {
        let g = NetworkGraph::new(vec![relay_neuron(1)], vec![], vec![(0, 0)], vec![], vec![0], 1, false)
            .unwrap();
        let input = input_train(&[&[1], &[0]]);
        let f = RngFactory::new(3);
        let rec =
            forward(&g, &input, &f, &[0], OutputMode::Sample, &ForwardOptions::default()).unwrap();
        assert_eq!(rec.spikes.get(0, 0, 0), 1);
        assert_eq!(rec.spikes.get(1, 0, 0), 0);
        assert!((rec.realized_prob[0][0] - 1.0).abs() < 1e-12);
        assert!((rec.marginals[0][0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_order_does_not_change_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = LayeredSpec {
            input_dim: 3,
            layers: vec![
                LayerSpec { size: 3, model: sqs_spec(1, 1) },
                LayerSpec { size: 2, model: sqs_spec(1, 1) },
            ],
            self_synapse: false,
        };
        let g = build_feedforward(&spec, &mut rng).unwrap();
        let input = input_train(&[&[1, 0, 1], &[0, 1, 1], &[1, 1, 0]]);
        let f = RngFactory::new(11);
        let opts = ForwardOptions::default();
        let natural: Vec<usize> = (0..5).collect();
        let shuffled = vec![4, 2, 0, 3, 1];
        let a = forward_ordered(&g, &input, &f, &[0], OutputMode::Sample, &opts, &natural).unwrap();
        let b = forward_ordered(&g, &input, &f, &[0], OutputMode::Sample, &opts, &shuffled).unwrap();
        assert_eq!(a.spikes, b.spikes);
    }

    #[test]
    fn removing_output_neurons_preserves_hidden_trajectories() {
        // Hidden neurons never read outputs, so seed-matched runs agree.
        let with_outputs = NetworkGraph::new(
            vec![relay_neuron(1), relay_neuron(1), relay_neuron(2)],
            vec![(0, 2), (1, 2)],
            vec![(0, 0), (0, 1)],
            vec![0, 1],
            vec![2],
            1,
            false,
        )
        .unwrap();
        let hidden_only = NetworkGraph::new(
            vec![relay_neuron(1), relay_neuron(1)],
            vec![],
            vec![(0, 0), (0, 1)],
            vec![0, 1],
            vec![],
            1,
            false,
        )
        .unwrap();
        let input = input_train(&[&[1], &[1], &[0], &[1]]);
        let f = RngFactory::new(21);
        let opts = ForwardOptions::default();
        let a = forward(&with_outputs, &input, &f, &[0], OutputMode::Sample, &opts).unwrap();
        let b = forward(&hidden_only, &input, &f, &[0], OutputMode::Sample, &opts).unwrap();
        for t in 0..input.t_len() {
            for i in 0..2 {
                assert_eq!(a.spikes.get(t, i, 0), b.spikes.get(t, i, 0));
            }
        }
    }

    #[test]
    fn rate_decode_picks_largest_count_with_low_index_ties() {
        let mk = |counts: &[usize]| {
            let t_len = 6;
            let mut train = SpikeTrain::empty(t_len, counts.len(), 1);
            for (u, &c) in counts.iter().enumerate() {
                for t in 0..c {
                    train.set(t, u, 0, 1);
                }
            }
            train
        };
        assert_eq!(rate_decode(&mk(&[3, 1])).unwrap(), 0);
        assert_eq!(rate_decode(&mk(&[2, 2])).unwrap(), 0);
        assert_eq!(rate_decode(&mk(&[0, 5, 4])).unwrap(), 1);
        assert!(rate_decode(&mk(&[3])).is_err());
    }

    #[test]
    fn graph_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = LayeredSpec {
            input_dim: 3,
            layers: vec![
                LayerSpec { size: 2, model: sqs_spec(1, 1) },
                LayerSpec { size: 2, model: sqs_spec(1, 1) },
            ],
            self_synapse: false,
        };
        let g = build_feedforward(&spec, &mut rng).unwrap();
        let json = g.to_json();
        let back = NetworkGraph::from_json(&json).unwrap();
        assert_eq!(g, back);
        assert!(json.contains("\"hidden\""));
        assert!(json.contains("\"kind\""));
    }

    #[test]
    fn teacher_forcing_clamps_output_spikes() {
        let g = NetworkGraph::new(vec![relay_neuron(1)], vec![], vec![(0, 0)], vec![], vec![0], 1, false)
            .unwrap();
        let input = input_train(&[&[0], &[0]]);
        let target = input_train(&[&[1], &[1]]);
        let f = RngFactory::new(0);
        let rec =
            forward(&g, &input, &f, &[0], OutputMode::Forced(&target), &ForwardOptions::default())
                .unwrap();
        assert_eq!(rec.spikes.get(0, 0, 0), 1);
        // The forced outcome has probability zero under a silent relay.
        assert_eq!(rec.realized_prob[0][0], 0.0);
    }

    #[test]
    fn self_synapse_flag_adds_own_past_spikes() {
        let g = NetworkGraph::new(
            vec![relay_neuron(2)],
            vec![],
            vec![(0, 0)],
            vec![],
            vec![0],
            1,
            true,
        )
        .unwrap();
        assert_eq!(g.parents(0), &[Source::Input(0), Source::Neuron(0)]);
        // One input kick, then the self-loop keeps it spiking.
        let input = input_train(&[&[1], &[0], &[0]]);
        let f = RngFactory::new(2);
        let rec =
            forward(&g, &input, &f, &[0], OutputMode::Sample, &ForwardOptions::default()).unwrap();
        assert_eq!(rec.spikes.get(0, 0, 0), 1);
        assert_eq!(rec.spikes.get(1, 0, 0), 1);
        assert_eq!(rec.spikes.get(2, 0, 0), 1);
    }
}

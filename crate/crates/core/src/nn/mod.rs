//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Two fixed topologies are supported: a plain chain of dense layers, and a
//! dueling network whose shared trunk feeds a scalar value stream and a
//! per-action advantage stream recombined by an [`AggregatorKind`].

mod checkpoint;

use std::fmt;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dueling::{self, AggregatorKind, DuelingOutputs};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};

/// Global gradient-norm bound used by the training loops.
pub const DEFAULT_CLIP_NORM: f64 = 10.0;

/// Central finite-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Rectifier,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Rectifier => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    SingleStream,
    /// `shared_layers` dense layers form the trunk; the remaining widths are
    /// replicated into a value stream (output width forced to 1) and an
    /// advantage stream.
    Dueling {
        shared_layers: usize,
        aggregator: AggregatorKind,
    },
}

impl Topology {
    pub fn is_dueling(&self) -> bool {
        matches!(self, Topology::Dueling { .. })
    }
}

/// Identifies which part of the network a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Trunk,
    Value,
    Advantage,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Trunk, Stream::Value, Stream::Advantage];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Trunk => "trunk",
            Stream::Value => "value",
            Stream::Advantage => "advantage",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One affine layer followed by an activation. Weights are stored row-major
/// as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Returns the pre-activation `W x + b`. Sparse inputs (one-hot states,
    /// rectified hidden units) only touch their non-zero columns.
    fn affine(&self, input: &[f64]) -> Vec<f64> {
        let nz: Vec<usize> = nonzero_indices(input);
        let mut pre = self.bias.clone();
        if nz.len() * 2 < self.in_dim {
            for (i, out) in pre.iter_mut().enumerate() {
                let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
                *out += nz.iter().map(|&j| row[j] * input[j]).sum::<f64>();
            }
        } else {
            for (i, out) in pre.iter_mut().enumerate() {
                let row = &self.weights[i * self.in_dim..(i + 1) * self.in_dim];
                *out += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            }
        }
        pre
    }
}

fn sum_squares(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum()
}

/// True when no entry is NaN or infinite. `x * 0.0` is NaN exactly for
/// non-finite `x`, which keeps the loop branch-free.
fn all_finite(xs: &[f64]) -> bool {
    xs.iter().fold(0.0, |acc, x| acc + x * 0.0) == 0.0
}

/// `p -= lr * d` in place; returns whether every result is finite.
fn descend(params: &mut [f64], grads: &[f64], lr: f64) -> bool {
    let mut probe = 0.0;
    for (p, d) in params.iter_mut().zip(grads) {
        *p -= lr * d;
        probe += *p * 0.0;
    }
    probe == 0.0
}

fn nonzero_indices(x: &[f64]) -> Vec<usize> {
    x.iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// A dense network: a single chain (`trunk` only) or a dueling network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    topology: Topology,
    trunk: Vec<Layer>,
    value: Vec<Layer>,
    advantage: Vec<Layer>,
}

/// Per-parameter gradients, congruent with a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub trunk: Vec<LayerGrad>,
    pub value: Vec<LayerGrad>,
    pub advantage: Vec<LayerGrad>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    input: Vec<f64>,
    pre: Vec<f64>,
}

/// Activations recorded by [`DenseNet::forward`], consumed by the backward
/// pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input_dim: usize,
    trunk: Vec<LayerTrace>,
    value: Vec<LayerTrace>,
    advantage: Vec<LayerTrace>,
    dueling: Option<DuelingOutputs>,
}

impl Trace {
    pub fn dueling_outputs(&self) -> Option<&DuelingOutputs> {
        self.dueling.as_ref()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BackwardOptions {
    /// Scale the gradient entering the shared trunk by 1/sqrt(2) (dueling
    /// nets only).
    pub junction_rescale: bool,
    /// Also compute the gradient with respect to the network input.
    pub input_grad: bool,
}

impl BackwardOptions {
    /// Settings used by the training loops.
    pub fn training() -> Self {
        BackwardOptions {
            junction_rescale: true,
            input_grad: false,
        }
    }

    /// True gradient of every parameter and of the input.
    pub fn exact() -> Self {
        BackwardOptions {
            junction_rescale: false,
            input_grad: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub grads: GradientSet,
    /// Empty unless requested through [`BackwardOptions::input_grad`].
    pub input_grad: Vec<f64>,
    /// How many times the junction rescale was applied during this pass.
    pub junction_rescales: usize,
}

/// Builds a network with fan-in scaled uniform weights and zero biases.
///
/// `dims` lists layer widths from input to output. For a dueling topology the
/// first `shared_layers` layers form the trunk and both streams reuse the
/// remaining widths, with the value stream's output narrowed to one unit.
pub fn init_net(dims: &[usize], topology: Topology, seed: u64) -> Result<DenseNet> {
    if dims.is_empty() {
        return Err(Error::InvalidSpec("empty layer spec".into()));
    }
    if dims.len() < 2 {
        return Err(Error::InvalidSpec(format!(
            "need at least an input and an output width, got {dims:?}"
        )));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidSpec(format!("width at position {pos} is zero")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = match topology {
        Topology::SingleStream => DenseNet {
            topology,
            trunk: chain(dims, Activation::Identity),
            value: Vec::new(),
            advantage: Vec::new(),
        },
        Topology::Dueling { shared_layers, .. } => {
            let n_layers = dims.len() - 1;
            if shared_layers == 0 || shared_layers >= n_layers {
                return Err(Error::InvalidSpec(format!(
                    "dueling net with {n_layers} layers cannot share {shared_layers}"
                )));
            }
            let trunk = chain(&dims[..=shared_layers], Activation::Rectifier);
            let adv_dims = &dims[shared_layers..];
            let mut value_dims = adv_dims.to_vec();
            *value_dims.last_mut().unwrap() = 1;
            DenseNet {
                topology,
                trunk,
                value: chain(&value_dims, Activation::Identity),
                advantage: chain(adv_dims, Activation::Identity),
            }
        }
    };
    for stream in Stream::ALL {
        for layer in net.stream_mut(stream) {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in layer.weights.iter_mut() {
                *w = dist.sample(&mut rng);
            }
        }
    }
    Ok(net)
}

/// Rectifiers between adjacent layers, `last` on the final one.
fn chain(dims: &[usize], last: Activation) -> Vec<Layer> {
    let n = dims.len() - 1;
    (0..n)
        .map(|k| {
            let act = if k + 1 == n { last } else { Activation::Rectifier };
            Layer::zeros(dims[k], dims[k + 1], act)
        })
        .collect()
}

impl DenseNet {
    /// Assembles a network from explicit layers, validating dimension
    /// chaining and finiteness.
    pub fn from_layers(
        topology: Topology,
        trunk: Vec<Layer>,
        value: Vec<Layer>,
        advantage: Vec<Layer>,
    ) -> Result<Self> {
        let net = DenseNet {
            topology,
            trunk,
            value,
            advantage,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.trunk.is_empty() {
            return Err(Error::InvalidSpec("network has no trunk layers".into()));
        }
        for stream in Stream::ALL {
            for (k, layer) in self.stream(stream).iter().enumerate() {
                if layer.in_dim == 0 || layer.out_dim == 0 {
                    return Err(Error::InvalidSpec(format!("{stream}[{k}] has a zero width")));
                }
                if layer.weights.len() != layer.in_dim * layer.out_dim
                    || layer.bias.len() != layer.out_dim
                {
                    return Err(Error::Shape(format!(
                        "{stream}[{k}] storage does not match {}x{}",
                        layer.out_dim, layer.in_dim
                    )));
                }
                if let Some(prev) = k.checked_sub(1).map(|p| &self.stream(stream)[p]) {
                    if prev.out_dim != layer.in_dim {
                        return Err(Error::Shape(format!(
                            "{stream}[{k}] expects {} inputs but {stream}[{}] emits {}",
                            layer.in_dim,
                            k - 1,
                            prev.out_dim
                        )));
                    }
                }
            }
        }
        match self.topology {
            Topology::SingleStream => {
                if !self.value.is_empty() || !self.advantage.is_empty() {
                    return Err(Error::InvalidSpec(
                        "single-stream network carries stream layers".into(),
                    ));
                }
            }
            Topology::Dueling { shared_layers, .. } => {
                if shared_layers != self.trunk.len() {
                    return Err(Error::InvalidSpec(format!(
                        "topology declares {shared_layers} shared layers, found {}",
                        self.trunk.len()
                    )));
                }
                let junction = self.trunk.last().unwrap().out_dim;
                for stream in [Stream::Value, Stream::Advantage] {
                    let layers = self.stream(stream);
                    let first = layers.first().ok_or_else(|| {
                        Error::InvalidSpec(format!("dueling network has an empty {stream} stream"))
                    })?;
                    if first.in_dim != junction {
                        return Err(Error::Shape(format!(
                            "{stream} stream expects {} inputs, trunk emits {junction}",
                            first.in_dim
                        )));
                    }
                }
                if self.value.last().unwrap().out_dim != 1 {
                    return Err(Error::Shape("value stream must end in one unit".into()));
                }
            }
        }
        self.check_finite()
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn aggregator(&self) -> Option<AggregatorKind> {
        match self.topology {
            Topology::Dueling { aggregator, .. } => Some(aggregator),
            Topology::SingleStream => None,
        }
    }

    pub fn stream(&self, stream: Stream) -> &[Layer] {
        match stream {
            Stream::Trunk => &self.trunk,
            Stream::Value => &self.value,
            Stream::Advantage => &self.advantage,
        }
    }

    /// Mutable access to a stream's layers. Shapes must not be changed.
    pub fn stream_mut(&mut self, stream: Stream) -> &mut [Layer] {
        match stream {
            Stream::Trunk => &mut self.trunk,
            Stream::Value => &mut self.value,
            Stream::Advantage => &mut self.advantage,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = (Stream, usize, &Layer)> {
        Stream::ALL.into_iter().flat_map(move |s| {
            self.stream(s)
                .iter()
                .enumerate()
                .map(move |(k, l)| (s, k, l))
        })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk[0].in_dim
    }

    /// Width of the Q-value output.
    pub fn output_dim(&self) -> usize {
        match self.topology {
            Topology::SingleStream => self.trunk.last().unwrap().out_dim,
            Topology::Dueling { .. } => self.advantage.last().unwrap().out_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|(_, _, l)| l.param_count()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (stream, k, layer) in self.layers() {
            if !all_finite(&layer.weights) || !all_finite(&layer.bias) {
                return Err(Error::NonFinite(format!("parameters of {stream}[{k}]")));
            }
        }
        Ok(())
    }

    /// Evaluates the network, returning the Q-values and the trace needed by
    /// [`DenseNet::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Trace)> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let (junction, trunk) = run_chain(&self.trunk, input.to_vec());
        let mut trace = Trace {
            input_dim: input.len(),
            trunk,
            value: Vec::new(),
            advantage: Vec::new(),
            dueling: None,
        };
        match self.topology {
            Topology::SingleStream => Ok((junction, trace)),
            Topology::Dueling { aggregator, .. } => {
                let (v, value) = run_chain(&self.value, junction.clone());
                let (adv, advantage) = run_chain(&self.advantage, junction);
                let q = dueling::aggregate(aggregator, v[0], &adv)?;
                trace.value = value;
                trace.advantage = advantage;
                trace.dueling = Some(DuelingOutputs {
                    v: v[0],
                    adv,
                    q: q.clone(),
                });
                Ok((q, trace))
            }
        }
    }

    /// Q-values only.
    pub fn q_values(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(|(q, _)| q)
    }

    /// Exact reverse-mode derivatives of `output_grad . output`.
    pub fn backward(&self, trace: &Trace, output_grad: &[f64]) -> Result<Backward> {
        self.backward_with(trace, output_grad, BackwardOptions::exact())
    }

    pub fn backward_with(
        &self,
        trace: &Trace,
        output_grad: &[f64],
        opts: BackwardOptions,
    ) -> Result<Backward> {
        let mut grads = GradientSet::zeros_like(self);
        let (input_grad, junction_rescales) =
            self.accumulate_backward(trace, output_grad, opts, &mut grads)?;
        Ok(Backward {
            grads,
            input_grad,
            junction_rescales,
        })
    }

    /// Adds the gradient of `output_grad . output` into `grads`. Returns the
    /// input gradient (empty unless requested) and the number of junction
    /// rescales applied.
    pub fn accumulate_backward(
        &self,
        trace: &Trace,
        output_grad: &[f64],
        opts: BackwardOptions,
        grads: &mut GradientSet,
    ) -> Result<(Vec<f64>, usize)> {
        self.check_trace(trace)?;
        grads.check_congruent(self)?;
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "output gradient has length {}, network emits {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        match self.topology {
            Topology::SingleStream => {
                let input_grad = back_chain(
                    &self.trunk,
                    &trace.trunk,
                    output_grad.to_vec(),
                    &mut grads.trunk,
                    opts.input_grad,
                );
                Ok((input_grad, 0))
            }
            Topology::Dueling { aggregator, .. } => {
                let outputs = trace.dueling.as_ref().ok_or_else(|| {
                    Error::Shape("trace was not produced by a dueling network".into())
                })?;
                let (dv, dadv) = dueling::aggregate_backward(aggregator, &outputs.adv, output_grad)?;
                self.streams_backward(trace, dv, &dadv, opts, grads)
            }
        }
    }

    /// Backpropagates gradients given directly on the value output and the
    /// advantage outputs, bypassing the aggregator.
    pub(crate) fn streams_backward(
        &self,
        trace: &Trace,
        dv: f64,
        dadv: &[f64],
        opts: BackwardOptions,
        grads: &mut GradientSet,
    ) -> Result<(Vec<f64>, usize)> {
        self.check_trace(trace)?;
        if !self.topology.is_dueling() {
            return Err(Error::UnsupportedTopology(
                "stream gradients require a dueling network".into(),
            ));
        }
        let mut junction =
            back_chain(&self.value, &trace.value, vec![dv], &mut grads.value, true);
        let from_adv = back_chain(
            &self.advantage,
            &trace.advantage,
            dadv.to_vec(),
            &mut grads.advantage,
            true,
        );
        for (j, a) in junction.iter_mut().zip(&from_adv) {
            *j += a;
        }
        let mut rescales = 0;
        if opts.junction_rescale {
            dueling::junction_rescale(&mut junction);
            rescales += 1;
        }
        let input_grad = back_chain(
            &self.trunk,
            &trace.trunk,
            junction,
            &mut grads.trunk,
            opts.input_grad,
        );
        Ok((input_grad, rescales))
    }

    fn check_trace(&self, trace: &Trace) -> Result<()> {
        let congruent = |layers: &[Layer], recorded: &[LayerTrace]| {
            layers.len() == recorded.len()
                && layers
                    .iter()
                    .zip(recorded)
                    .all(|(l, t)| l.in_dim == t.input.len() && l.out_dim == t.pre.len())
        };
        if trace.input_dim != self.input_dim()
            || !congruent(&self.trunk, &trace.trunk)
            || !congruent(&self.value, &trace.value)
            || !congruent(&self.advantage, &trace.advantage)
        {
            return Err(Error::Shape("trace does not belong to this network".into()));
        }
        Ok(())
    }

    /// Plain gradient descent: every parameter `p` becomes `p - lr * g`.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        grads.check_congruent(self)?;
        grads.check_finite()?;
        if !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {lr}")));
        }
        let mut overflow = false;
        for stream in Stream::ALL {
            for (layer, g) in self.stream_mut(stream).iter_mut().zip(grads.stream(stream)) {
                overflow |= !descend(&mut layer.weights, &g.weights, lr);
                overflow |= !descend(&mut layer.bias, &g.bias, lr);
            }
        }
        if overflow {
            self.check_finite()?;
        }
        Ok(())
    }

    /// Overwrites all parameters with those of `other`.
    pub fn copy_from(&mut self, other: &DenseNet) -> Result<()> {
        if self.topology != other.topology || !self.same_shape(other) {
            return Err(Error::Shape("cannot copy between differently shaped networks".into()));
        }
        self.clone_from(other);
        Ok(())
    }

    fn same_shape(&self, other: &DenseNet) -> bool {
        self.layers().count() == other.layers().count()
            && self.layers().zip(other.layers()).all(|((s1, _, a), (s2, _, b))| {
                s1 == s2
                    && a.in_dim == b.in_dim
                    && a.out_dim == b.out_dim
                    && a.activation == b.activation
            })
    }

    /// Flattened parameters in layer order (trunk, value, advantage), weights
    /// before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|(_, _, l)| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        let layers = self.trunk.iter_mut().chain(&mut self.value).chain(&mut self.advantage);
        for layer in layers {
            let n = layer.weights.len();
            if index < n {
                return &mut layer.weights[index];
            }
            index -= n;
            if index < layer.bias.len() {
                return &mut layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }
}

fn run_chain(layers: &[Layer], mut x: Vec<f64>) -> (Vec<f64>, Vec<LayerTrace>) {
    let mut trace = Vec::with_capacity(layers.len());
    for layer in layers {
        let pre = layer.affine(&x);
        let out = pre.iter().map(|&p| layer.activation.apply(p)).collect();
        trace.push(LayerTrace { input: x, pre });
        x = out;
    }
    (x, trace)
}

/// Backpropagates `grad` (w.r.t. the chain's output) through `layers`,
/// accumulating parameter gradients. Returns the gradient w.r.t. the chain
/// input when `want_input` is set, otherwise an empty vector.
fn back_chain(
    layers: &[Layer],
    trace: &[LayerTrace],
    mut grad: Vec<f64>,
    out: &mut [LayerGrad],
    want_input: bool,
) -> Vec<f64> {
    for k in (0..layers.len()).rev() {
        let layer = &layers[k];
        let rec = &trace[k];
        let g = &mut out[k];
        for (d, &p) in grad.iter_mut().zip(&rec.pre) {
            *d *= layer.activation.derivative(p);
        }
        let nz = nonzero_indices(&rec.input);
        for (i, &d) in grad.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g.bias[i] += d;
            let row = &mut g.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
            for &j in &nz {
                row[j] += d * rec.input[j];
            }
        }
        if k == 0 && !want_input {
            return Vec::new();
        }
        let mut next = vec![0.0; layer.in_dim];
        for (i, &d) in grad.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &layer.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
            for (n, w) in next.iter_mut().zip(row) {
                *n += d * w;
            }
        }
        grad = next;
    }
    grad
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNet) -> Self {
        let zeros = |layers: &[Layer]| {
            layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect()
        };
        GradientSet {
            trunk: zeros(&net.trunk),
            value: zeros(&net.value),
            advantage: zeros(&net.advantage),
        }
    }

    pub fn stream(&self, stream: Stream) -> &[LayerGrad] {
        match stream {
            Stream::Trunk => &self.trunk,
            Stream::Value => &self.value,
            Stream::Advantage => &self.advantage,
        }
    }

    pub fn stream_mut(&mut self, stream: Stream) -> &mut [LayerGrad] {
        match stream {
            Stream::Trunk => &mut self.trunk,
            Stream::Value => &mut self.value,
            Stream::Advantage => &mut self.advantage,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = (Stream, usize, &LayerGrad)> {
        Stream::ALL.into_iter().flat_map(move |s| {
            self.stream(s)
                .iter()
                .enumerate()
                .map(move |(k, l)| (s, k, l))
        })
    }

    /// Flattened in the same order as [`DenseNet::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|(_, _, g)| g.weights.iter().chain(&g.bias).copied())
            .collect()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.slices_mut().flatten()
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.trunk
            .iter_mut()
            .chain(self.value.iter_mut())
            .chain(self.advantage.iter_mut())
            .flat_map(|g| [&mut g.weights[..], &mut g.bias[..]])
    }

    pub fn global_norm(&self) -> f64 {
        self.layers()
            .map(|(_, _, g)| sum_squares(&g.weights) + sum_squares(&g.bias))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for xs in self.slices_mut() {
            xs.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn set_zero(&mut self) {
        for xs in self.slices_mut() {
            xs.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("gradient sets are not congruent".into()));
        }
        for (a, b) in self.values_mut().zip(other.flatten()) {
            *a += b;
        }
        Ok(())
    }

    fn same_shape(&self, other: &GradientSet) -> bool {
        Stream::ALL.into_iter().all(|s| {
            let (a, b) = (self.stream(s), other.stream(s));
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.weights.len() == y.weights.len() && x.bias.len() == y.bias.len()
                })
        })
    }

    pub fn check_congruent(&self, net: &DenseNet) -> Result<()> {
        for stream in Stream::ALL {
            let (layers, grads) = (net.stream(stream), self.stream(stream));
            if layers.len() != grads.len() {
                return Err(Error::Shape(format!(
                    "{stream} has {} layers, gradients have {}",
                    layers.len(),
                    grads.len()
                )));
            }
            for (k, (l, g)) in layers.iter().zip(grads).enumerate() {
                if l.weights.len() != g.weights.len() || l.bias.len() != g.bias.len() {
                    return Err(Error::Shape(format!("gradient for {stream}[{k}] has wrong size")));
                }
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (stream, k, g) in self.layers() {
            if !all_finite(&g.weights) || !all_finite(&g.bias) {
                return Err(Error::NonFinite(format!("gradient of {stream}[{k}]")));
            }
        }
        Ok(())
    }

    /// Largest per-entry relative error against `other`, with relative error
    /// `|a - b| / max(|a|, |b|, floor)`.
    pub fn max_relative_error(&self, other: &GradientSet, floor: f64) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
            .fold(0.0, f64::max)
    }
}

/// Scales `grads` in place so that their global L2 norm does not exceed
/// `max_norm`. Gradients already within the bound are left untouched, which
/// makes the operation idempotent.
pub fn clip_grad_norm(grads: &mut GradientSet, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument(format!("clip norm must be positive, got {max_norm}")));
    }
    let norm = grads.global_norm();
    if norm <= max_norm || !norm.is_finite() {
        return Ok(norm);
    }
    let original = grads.clone();
    let mut factor = max_norm / norm;
    // Rounding can leave the scaled norm a few ulps above the bound; step the
    // factor down until it is not.
    loop {
        grads.clone_from(&original);
        grads.scale(factor);
        if grads.global_norm() <= max_norm {
            return Ok(norm);
        }
        factor = f64::from_bits(factor.to_bits() - 1);
    }
}

/// Central-difference estimate of d loss(net(input)) / d theta for every
/// parameter.
pub fn finite_diff_grad<F>(net: &DenseNet, input: &[f64], loss: F, step: f64) -> Result<GradientSet>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = net.clone();
    let mut flat = Vec::with_capacity(net.param_count());
    for index in 0..net.param_count() {
        let original = *probe.param_mut(index);
        *probe.param_mut(index) = original + step;
        let up = loss(&probe.q_values(input)?);
        *probe.param_mut(index) = original - step;
        let down = loss(&probe.q_values(input)?);
        *probe.param_mut(index) = original;
        flat.push((up - down) / (2.0 * step));
    }
    let mut grads = GradientSet::zeros_like(net);
    for (slot, v) in grads.values_mut().zip(flat) {
        *slot = v;
    }
    Ok(grads)
}

/// Central-difference estimate of the Jacobian-vector product
/// `d f(net(input)) / d input`.
pub fn finite_diff_input_grad<F>(net: &DenseNet, input: &[f64], f: F, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&DenseNet, &[f64]) -> Result<f64>,
{
    let mut x = input.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let original = x[i];
        x[i] = original + step;
        let up = f(net, &x)?;
        x[i] = original - step;
        let down = f(net, &x)?;
        x[i] = original;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

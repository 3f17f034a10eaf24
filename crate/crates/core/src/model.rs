//! Model construction, parameter accounting and the forward pass.
//!
//! Both [`count_params`] and [`build_model`] walk the same parameter
//! enumeration derived from an [`ArchitectureSpec`], so the declared budget of
//! a spec and the scalars of a built model cannot drift apart. Weight sharing
//! is expressed through parameter *names*: share-group recurrent matrices are
//! enumerated once under a `shared.g{n}` name and every member stream resolves
//! to the same storage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, CrossKey, Modality, StreamKey, Variant, RECURRENT_DEPTH};
use crate::error::{Error, Result};
use crate::init::{init, Init};
use crate::lstm::{lstm_layer_forward, LstmLayerNodes, GATES};
use crate::rng::Rng;
use crate::tensor::{Activation, Graph, NodeId, Tensor};

/// Build-time knobs that are not part of the architecture itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Inverted dropout on input-to-hidden transitions during training.
    pub dropout_p: f64,
    /// Batch normalization on the hidden head layers (off by default; the
    /// recurrent paths never use it).
    pub head_batch_norm: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            dropout_p: 0.1,
            head_batch_norm: false,
        }
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
struct ParamDef {
    name: String,
    shape: Vec<usize>,
    scheme: Init,
}

/// One named trainable tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Per-stream `(d_in, d_out)` of the three recurrent layers.
fn stream_layer_dims(spec: &ArchitectureSpec, m: Modality) -> [(usize, usize); RECURRENT_DEPTH] {
    let w = &spec.stream_widths[&StreamKey::from(m)];
    let d0 = spec.modality_input_dims[&m];
    let mut l3_in = w[1];
    match spec.variant {
        Variant::XlstmA => {
            for (k, &cw) in &spec.cross_widths {
                if k.dst == m {
                    l3_in += cw;
                }
            }
        }
        Variant::XlstmB => {
            for src in spec.stream_modalities() {
                if src != m {
                    l3_in += spec.stream_widths[&StreamKey::from(src)][0];
                }
            }
        }
        _ => {}
    }
    [(d0, w[0]), (w[0], w[1]), (l3_in, w[2])]
}

/// Width of the concatenated feature vector entering the head.
fn head_input_dim(spec: &ArchitectureSpec) -> usize {
    let features = match spec.variant {
        Variant::Lstm => spec.stream_widths[&StreamKey::All][RECURRENT_DEPTH - 1],
        Variant::Dnn => *spec.dnn_hidden().last().unwrap(),
        _ => spec
            .stream_modalities()
            .iter()
            .map(|&m| spec.stream_widths[&StreamKey::from(m)][RECURRENT_DEPTH - 1])
            .sum(),
    };
    features + spec.static_dim
}

fn push_lstm_defs(
    defs: &mut Vec<ParamDef>,
    seen: &mut std::collections::BTreeSet<String>,
    prefix: &str,
    wy_prefix: &str,
    d_in: usize,
    d_out: usize,
) {
    for gate in GATES {
        defs.push(ParamDef {
            name: format!("{prefix}.wx{gate}"),
            shape: vec![d_in, d_out],
            scheme: Init::Xavier,
        });
    }
    for gate in GATES {
        let name = format!("{wy_prefix}.wy{gate}");
        if seen.insert(name.clone()) {
            defs.push(ParamDef {
                name,
                shape: vec![d_out, d_out],
                scheme: Init::Xavier,
            });
        }
    }
    for gate in GATES {
        defs.push(ParamDef {
            name: format!("{prefix}.b{gate}"),
            shape: vec![1, d_out],
            scheme: if gate == "f" { Init::Ones } else { Init::Zeros },
        });
    }
}

fn param_defs(spec: &ArchitectureSpec, opts: &ModelOptions) -> Result<Vec<ParamDef>> {
    spec.validate()?;
    let mut defs = Vec::new();
    let mut seen = std::collections::BTreeSet::new();

    match spec.variant {
        Variant::Lstm => {
            let widths = &spec.stream_widths[&StreamKey::All];
            let mut d_in = spec.total_input_dim();
            for (l, &d_out) in widths.iter().enumerate() {
                let prefix = format!("stack.l{l}");
                push_lstm_defs(&mut defs, &mut seen, &prefix, &prefix, d_in, d_out);
                d_in = d_out;
            }
        }
        Variant::Dnn => {
            let mut d_in = spec.total_input_dim() * spec.dnn_last_days();
            for (l, &d_out) in spec.dnn_hidden().iter().enumerate() {
                defs.push(ParamDef {
                    name: format!("dnn.h{l}.w"),
                    shape: vec![d_in, d_out],
                    scheme: Init::He,
                });
                defs.push(ParamDef {
                    name: format!("dnn.h{l}.b"),
                    shape: vec![1, d_out],
                    scheme: Init::Zeros,
                });
                d_in = d_out;
            }
        }
        _ => {
            for m in spec.stream_modalities() {
                let dims = stream_layer_dims(spec, m);
                for (l, &(d_in, d_out)) in dims.iter().enumerate() {
                    let prefix = format!("stream.{m}.l{l}");
                    let wy_prefix = match spec.share_group_of(m) {
                        Some(g) => format!("shared.g{g}.l{l}"),
                        None => prefix.clone(),
                    };
                    push_lstm_defs(&mut defs, &mut seen, &prefix, &wy_prefix, d_in, d_out);
                }
            }
            if spec.variant == Variant::XlstmA {
                for (k, &cw) in &spec.cross_widths {
                    let d_in = spec.stream_widths[&StreamKey::from(k.src)][0];
                    let prefix = format!("cross.{k}");
                    push_lstm_defs(&mut defs, &mut seen, &prefix, &prefix, d_in, cw);
                }
            }
        }
    }

    let mut d_in = head_input_dim(spec);
    let n_head = spec.head_widths.len();
    for (l, &d_out) in spec.head_widths.iter().enumerate() {
        defs.push(ParamDef {
            name: format!("head.{l}.w"),
            shape: vec![d_in, d_out],
            scheme: Init::He,
        });
        defs.push(ParamDef {
            name: format!("head.{l}.b"),
            shape: vec![1, d_out],
            scheme: Init::Zeros,
        });
        if opts.head_batch_norm && l + 1 < n_head {
            defs.push(ParamDef {
                name: format!("head.{l}.bn.gamma"),
                shape: vec![1, d_out],
                scheme: Init::Ones,
            });
            defs.push(ParamDef {
                name: format!("head.{l}.bn.beta"),
                shape: vec![1, d_out],
                scheme: Init::Zeros,
            });
        }
        d_in = d_out;
    }
    Ok(defs)
}

/// Trainable scalars of a model built from `spec` with default options:
/// `4 (d_in d_out + d_out^2 + d_out)` per LSTM layer and `d_in d_out + d_out`
/// per fully-connected layer, shared recurrent matrices counted once.
pub fn count_params(spec: &ArchitectureSpec) -> Result<usize> {
    count_params_with(spec, &ModelOptions::default())
}

pub fn count_params_with(spec: &ArchitectureSpec, opts: &ModelOptions) -> Result<usize> {
    Ok(param_defs(spec, opts)?
        .iter()
        .map(|d| d.shape.iter().product::<usize>())
        .sum())
}

/// Running batch-norm statistics of one head layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// A built model: spec, options, and the parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ArchitectureSpec,
    pub opts: ModelOptions,
    params: Vec<NamedParam>,
    index: BTreeMap<String, usize>,
    bn_running: Vec<BnRunning>,
}

/// A forward pass: the graph plus handles into it.
pub struct ForwardPass {
    pub graph: Graph,
    /// Pre-sigmoid output, `batch x 1`.
    pub logit: NodeId,
    /// Success probability, `batch x 1`.
    pub prob: NodeId,
    /// Leaf node of every model parameter, aligned with the parameter store.
    pub param_nodes: Vec<NodeId>,
    /// Final recurrent frame (or last hidden activation) per stream.
    pub stream_finals: Vec<(String, NodeId)>,
    bn_nodes: Vec<(usize, NodeId)>,
}

impl ForwardPass {
    pub fn probabilities(&self) -> Vec<f64> {
        self.graph.value(self.prob).data().to_vec()
    }

    /// Parameter gradients flattened in store order (zeros where untouched).
    pub fn flat_grads(&self) -> Vec<f64> {
        self.param_nodes
            .iter()
            .flat_map(|&id| self.graph.grad_tensor(id).data().to_vec())
            .collect()
    }
}

/// Constant per-step inputs for a batch of equal-length sequences.
#[derive(Debug, Clone)]
pub struct BatchInput {
    /// One `batch x total_input_dim` matrix per timestep.
    pub steps: Vec<Tensor>,
    /// `batch x static_dim`.
    pub statics: Tensor,
}

/// Constructs the parameter store for a spec. Xavier initialization for LSTM
/// weights, He for fully-connected weights, forget biases one, other biases
/// zero; deterministic per `(spec, rng)`.
pub fn build_model(spec: &ArchitectureSpec, rng: &mut Rng) -> Result<Model> {
    build_model_with(spec, &ModelOptions::default(), rng)
}

pub fn build_model_with(
    spec: &ArchitectureSpec,
    opts: &ModelOptions,
    rng: &mut Rng,
) -> Result<Model> {
    let defs = param_defs(spec, opts)?;
    let mut params = Vec::with_capacity(defs.len());
    let mut index = BTreeMap::new();
    for def in defs {
        let value = init(&def.shape, def.scheme, rng);
        index.insert(def.name.clone(), params.len());
        params.push(NamedParam {
            name: def.name,
            shape: def.shape,
            data: value.data().to_vec(),
        });
    }
    let bn_running = if opts.head_batch_norm {
        spec.head_widths[..spec.head_widths.len() - 1]
            .iter()
            .map(|&w| BnRunning {
                mean: vec![0.0; w],
                var: vec![1.0; w],
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(Model {
        spec: spec.clone(),
        opts: *opts,
        params,
        index,
        bn_running,
    })
}

struct NetNodes {
    by_index: Vec<NodeId>,
}

impl NetNodes {
    fn lstm(&self, model: &Model, prefix: &str, wy_prefix: &str) -> LstmLayerNodes {
        let get = |name: String| self.by_index[model.index[&name]];
        let mut wx = [None; 4];
        let mut wy = [None; 4];
        let mut b = [None; 4];
        for (i, gate) in GATES.iter().enumerate() {
            wx[i] = Some(get(format!("{prefix}.wx{gate}")));
            wy[i] = Some(get(format!("{wy_prefix}.wy{gate}")));
            b[i] = Some(get(format!("{prefix}.b{gate}")));
        }
        LstmLayerNodes {
            wx: wx.map(|n| n.unwrap()),
            wy: wy.map(|n| n.unwrap()),
            b: b.map(|n| n.unwrap()),
        }
    }

    fn dense(&self, model: &Model, prefix: &str) -> (NodeId, NodeId) {
        (
            self.by_index[model.index[&format!("{prefix}.w")]],
            self.by_index[model.index[&format!("{prefix}.b")]],
        )
    }
}

impl Model {
    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn param_named(&self, name: &str) -> Option<&NamedParam> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_named_mut(&mut self, name: &str) -> Option<&mut NamedParam> {
        match self.index.get(name) {
            Some(&i) => Some(&mut self.params[i]),
            None => None,
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data.clone()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_scalars());
        let mut off = 0;
        for p in &mut self.params {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    fn leaf_params(&self, g: &mut Graph, requires_grad: bool) -> Result<Vec<NodeId>> {
        self.params
            .iter()
            .map(|p| {
                Ok(g.leaf(
                    Tensor::new(p.shape.clone(), p.data.clone())?,
                    requires_grad,
                ))
            })
            .collect()
    }

    /// Forward over constant inputs. `training` enables dropout (and batch
    /// statistics when head batch norm is on); parameters become
    /// gradient-carrying leaves.
    pub fn forward_batch(
        &self,
        input: &BatchInput,
        training: bool,
        rng: &mut Rng,
    ) -> Result<ForwardPass> {
        let mut g = Graph::new();
        let param_nodes = self.leaf_params(&mut g, true)?;
        let steps: Vec<NodeId> = input
            .steps
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let statics = g.constant(input.statics.clone());
        self.forward_on(g, param_nodes, &steps, statics, training, rng)
    }

    /// Forward where the per-step inputs are existing graph nodes (the dream
    /// generator differentiates with respect to them). Parameters are leafed
    /// without gradients.
    pub fn forward_nodes(
        &self,
        mut g: Graph,
        steps: &[NodeId],
        statics: NodeId,
        rng: &mut Rng,
    ) -> Result<ForwardPass> {
        let param_nodes = self.leaf_params(&mut g, false)?;
        self.forward_on(g, param_nodes, steps, statics, false, rng)
    }

    fn forward_on(
        &self,
        mut g: Graph,
        param_nodes: Vec<NodeId>,
        steps: &[NodeId],
        statics: NodeId,
        training: bool,
        rng: &mut Rng,
    ) -> Result<ForwardPass> {
        if steps.is_empty() {
            return Err(Error::contract("forward on an empty sequence"));
        }
        let total = self.spec.total_input_dim();
        for &s in steps {
            if g.value(s).cols() != total {
                return Err(Error::Shape {
                    op: "forward",
                    left: g.value(s).shape().to_vec(),
                    right: vec![g.value(s).rows(), total],
                });
            }
        }
        if g.value(statics).cols() != self.spec.static_dim {
            return Err(Error::Shape {
                op: "forward",
                left: g.value(statics).shape().to_vec(),
                right: vec![g.value(statics).rows(), self.spec.static_dim],
            });
        }
        let nodes = NetNodes {
            by_index: param_nodes.clone(),
        };
        let p = self.opts.dropout_p;

        // column offset of each modality within the step input
        let mut offsets = BTreeMap::new();
        let mut off = 0;
        for m in self.spec.present_modalities() {
            offsets.insert(m, off);
            off += self.spec.modality_input_dims[&m];
        }

        let mut stream_finals = Vec::new();
        let features = match self.spec.variant {
            Variant::Lstm => {
                let mut xs = steps.to_vec();
                for l in 0..RECURRENT_DEPTH {
                    let prefix = format!("stack.l{l}");
                    let layer = nodes.lstm(self, &prefix, &prefix);
                    xs = lstm_layer_forward(&mut g, &layer, &xs, p, training, rng)?;
                }
                let last = *xs.last().unwrap();
                stream_finals.push(("all".to_string(), last));
                last
            }
            Variant::Dnn => {
                let l_days = self.spec.dnn_last_days();
                if steps.len() < l_days {
                    return Err(Error::contract(format!(
                        "dnn needs at least {l_days} days, got {}",
                        steps.len()
                    )));
                }
                let tail = &steps[steps.len() - l_days..];
                let mut h = g.concat(tail)?;
                for l in 0..self.spec.dnn_hidden().len() {
                    if training && p > 0.0 {
                        h = self.dropout(&mut g, h, rng)?;
                    }
                    let (w, b) = nodes.dense(self, &format!("dnn.h{l}"));
                    let z = g.matmul(h, w)?;
                    let z = g.add_row(z, b)?;
                    h = g.apply(Activation::Relu, z);
                }
                stream_finals.push(("dnn".to_string(), h));
                h
            }
            _ => {
                let mods = self.spec.stream_modalities();
                // per-modality input sequences
                let mut inputs: BTreeMap<Modality, Vec<NodeId>> = BTreeMap::new();
                for &m in &mods {
                    let o = offsets[&m];
                    let d = self.spec.modality_input_dims[&m];
                    let seq: Result<Vec<NodeId>> =
                        steps.iter().map(|&s| g.slice_cols(s, o, d)).collect();
                    inputs.insert(m, seq?);
                }

                let layer_of = |model: &Model, m: Modality, l: usize| -> LstmLayerNodes {
                    let prefix = format!("stream.{m}.l{l}");
                    let wy_prefix = match model.spec.share_group_of(m) {
                        Some(gid) => format!("shared.g{gid}.l{l}"),
                        None => prefix.clone(),
                    };
                    nodes.lstm(model, &prefix, &wy_prefix)
                };

                // layer 1
                let mut h1: BTreeMap<Modality, Vec<NodeId>> = BTreeMap::new();
                for &m in &mods {
                    let layer = layer_of(self, m, 0);
                    h1.insert(
                        m,
                        lstm_layer_forward(&mut g, &layer, &inputs[&m], p, training, rng)?,
                    );
                }
                // layer 2 main paths
                let mut h2: BTreeMap<Modality, Vec<NodeId>> = BTreeMap::new();
                for &m in &mods {
                    let layer = layer_of(self, m, 1);
                    h2.insert(
                        m,
                        lstm_layer_forward(&mut g, &layer, &h1[&m], p, training, rng)?,
                    );
                }
                // cross paths into each destination
                let mut crosses: BTreeMap<CrossKey, Vec<NodeId>> = BTreeMap::new();
                match self.spec.variant {
                    Variant::XlstmA => {
                        for key in self.spec.cross_widths.keys() {
                            let prefix = format!("cross.{key}");
                            let layer = nodes.lstm(self, &prefix, &prefix);
                            crosses.insert(
                                *key,
                                lstm_layer_forward(&mut g, &layer, &h1[&key.src], p, training, rng)?,
                            );
                        }
                    }
                    Variant::XlstmB => {
                        // identity crosses carry the source's layer-1 sequence
                        for &dst in &mods {
                            for &src in &mods {
                                if src != dst {
                                    crosses.insert(CrossKey::new(src, dst), h1[&src].clone());
                                }
                            }
                        }
                    }
                    _ => {}
                }
                // layer 3 over concat(main, incoming crosses)
                let t_len = steps.len();
                let mut finals = Vec::new();
                for &m in &mods {
                    let layer = layer_of(self, m, 2);
                    let mut seq = Vec::with_capacity(t_len);
                    for t in 0..t_len {
                        let mut parts = vec![h2[&m][t]];
                        for &src in &mods {
                            if src != m {
                                if let Some(path) = crosses.get(&CrossKey::new(src, m)) {
                                    parts.push(path[t]);
                                }
                            }
                        }
                        seq.push(if parts.len() == 1 {
                            parts[0]
                        } else {
                            g.concat(&parts)?
                        });
                    }
                    let h3 = lstm_layer_forward(&mut g, &layer, &seq, p, training, rng)?;
                    let last = *h3.last().unwrap();
                    stream_finals.push((m.to_string(), last));
                    finals.push(last);
                }
                if finals.len() == 1 {
                    finals[0]
                } else {
                    g.concat(&finals)?
                }
            }
        };

        // head: features || statics -> relu layers -> logistic output
        let mut h = g.concat(&[features, statics])?;
        let n_head = self.spec.head_widths.len();
        let mut bn_nodes = Vec::new();
        let mut logit = None;
        for l in 0..n_head {
            let (w, b) = nodes.dense(self, &format!("head.{l}"));
            let z = g.matmul(h, w)?;
            let mut z = g.add_row(z, b)?;
            if l + 1 == n_head {
                logit = Some(z);
                break;
            }
            if self.opts.head_batch_norm {
                z = self.apply_head_bn(&mut g, &nodes, l, z, training, &mut bn_nodes)?;
            }
            h = g.apply(Activation::Relu, z);
        }
        let logit = logit.unwrap();
        let prob = g.apply(Activation::Logistic, logit);
        Ok(ForwardPass {
            graph: g,
            logit,
            prob,
            param_nodes,
            stream_finals,
            bn_nodes,
        })
    }

    fn dropout(&self, g: &mut Graph, x: NodeId, rng: &mut Rng) -> Result<NodeId> {
        let p = self.opts.dropout_p;
        let (n, d) = (g.value(x).rows(), g.value(x).cols());
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..n * d)
            .map(|_| if rng.bernoulli(p) { 0.0 } else { scale })
            .collect();
        let mask = g.constant(Tensor::matrix(n, d, mask)?);
        g.mul(x, mask)
    }

    fn apply_head_bn(
        &self,
        g: &mut Graph,
        nodes: &NetNodes,
        layer: usize,
        z: NodeId,
        training: bool,
        bn_nodes: &mut Vec<(usize, NodeId)>,
    ) -> Result<NodeId> {
        let gamma = nodes.by_index[self.index[&format!("head.{layer}.bn.gamma")]];
        let beta = nodes.by_index[self.index[&format!("head.{layer}.bn.beta")]];
        if training {
            let bn = g.batch_norm(z, gamma, beta, BN_EPS)?;
            bn_nodes.push((layer, bn));
            Ok(bn)
        } else {
            // affine with frozen running statistics
            let run = &self.bn_running[layer];
            let (n, d) = (g.value(z).rows(), g.value(z).cols());
            let scale_row: Vec<f64> = run.var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let shift_row: Vec<f64> = run
                .mean
                .iter()
                .zip(&scale_row)
                .map(|(&m, &s)| -m * s)
                .collect();
            let mut tiled = Vec::with_capacity(n * d);
            for _ in 0..n {
                tiled.extend_from_slice(&scale_row);
            }
            let scale = g.constant(Tensor::matrix(n, d, tiled)?);
            let shift = g.constant(Tensor::row(shift_row));
            let xc = g.mul(z, scale)?;
            let xhat = g.add_row(xc, shift)?;
            let gv = g.value(gamma).data().to_vec();
            let mut gt = Vec::with_capacity(n * d);
            for _ in 0..n {
                gt.extend_from_slice(&gv);
            }
            let gtiled = g.constant(Tensor::matrix(n, d, gt)?);
            let gz = g.mul(xhat, gtiled)?;
            g.add_row(gz, beta)
        }
    }

    /// Folds the batch statistics recorded in a training pass into the
    /// running batch-norm state.
    pub fn absorb_bn_stats(&mut self, pass: &ForwardPass) {
        for &(layer, node) in &pass.bn_nodes {
            if let Some((mean, var)) = pass.graph.batch_stats(node) {
                let run = &mut self.bn_running[layer];
                for (r, b) in run.mean.iter_mut().zip(&mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
                for (r, b) in run.var.iter_mut().zip(&var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }

    /// Inference probabilities for a batch.
    pub fn predict(&self, input: &BatchInput) -> Result<Vec<f64>> {
        let mut rng = Rng::new(0);
        let pass = self.forward_batch(input, false, &mut rng)?;
        Ok(pass.probabilities())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.spec.clone(),
            opts: self.opts,
            params: self.params.clone(),
            bn_running: self.bn_running.clone(),
        }
    }

    pub fn from_checkpoint(cp: Checkpoint) -> Result<Model> {
        let defs = param_defs(&cp.spec, &cp.opts)?;
        if defs.len() != cp.params.len() {
            return Err(Error::data(format!(
                "checkpoint has {} parameters, spec implies {}",
                cp.params.len(),
                defs.len()
            )));
        }
        let mut index = BTreeMap::new();
        for (def, p) in defs.iter().zip(&cp.params) {
            if def.name != p.name || def.shape != p.shape {
                return Err(Error::data(format!(
                    "checkpoint parameter `{}` {:?} does not match spec entry `{}` {:?}",
                    p.name, p.shape, def.name, def.shape
                )));
            }
            if p.data.len() != p.shape.iter().product::<usize>() {
                return Err(Error::data(format!("bad data length for `{}`", p.name)));
            }
            index.insert(p.name.clone(), index.len());
        }
        Ok(Model {
            spec: cp.spec,
            opts: cp.opts,
            params: cp.params,
            index,
            bn_running: cp.bn_running,
        })
    }
}

/// Serialized model state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ArchitectureSpec,
    pub opts: ModelOptions,
    pub params: Vec<NamedParam>,
    pub bn_running: Vec<BnRunning>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::MODALITIES;
    use crate::gradcheck::finite_diff_check_sweep;

    fn tiny_batch(spec: &ArchitectureSpec, t_len: usize, batch: usize, seed: u64) -> BatchInput {
        let mut rng = Rng::new(seed);
        let total = spec.total_input_dim();
        let steps = (0..t_len)
            .map(|_| {
                Tensor::matrix(
                    batch,
                    total,
                    (0..batch * total).map(|_| rng.normal()).collect(),
                )
                .unwrap()
            })
            .collect();
        let statics = Tensor::matrix(
            batch,
            spec.static_dim,
            (0..batch * spec.static_dim).map(|_| rng.normal()).collect(),
        )
        .unwrap();
        BatchInput { steps, statics }
    }

    fn table1_xlstm_b() -> ArchitectureSpec {
        let widths: BTreeMap<Modality, Vec<usize>> = [
            (Modality::Wt, vec![15, 29, 57]),
            (Modality::Sl, vec![12, 24, 48]),
            (Modality::St, vec![2, 3, 5]),
        ]
        .into_iter()
        .collect();
        ArchitectureSpec::xlstm(Variant::XlstmB, widths, BTreeMap::new())
    }

    #[test]
    fn baseline_counts() {
        let spec = ArchitectureSpec::baseline_lstm();
        let total = count_params(&spec).unwrap();
        // 2688 + 10752 + 42672 (stack) + 11392 + 8256 + 65 (head)
        assert_eq!(total, 75825);
        let paper = 76377.0;
        assert!((total as f64 - paper).abs() / paper < 0.02);
    }

    #[test]
    fn head_layer_count() {
        // 88 -> 128 dense: 88*128 + 128
        let spec = ArchitectureSpec::baseline_lstm();
        let mut rng = Rng::new(1);
        let model = build_model(&spec, &mut rng).unwrap();
        let head = model.param_named("head.0.w").unwrap();
        assert_eq!(head.shape, vec![88, 128]);
        assert_eq!(
            head.data.len() + model.param_named("head.0.b").unwrap().data.len(),
            11392
        );
    }

    #[test]
    fn baseline_builds_single_stream() {
        let spec = ArchitectureSpec::baseline_lstm();
        let mut rng = Rng::new(2);
        let model = build_model(&spec, &mut rng).unwrap();
        assert_eq!(model.n_scalars(), count_params(&spec).unwrap());
        let input = tiny_batch(&spec, 4, 2, 3);
        let pass = model
            .forward_batch(&input, false, &mut Rng::new(0))
            .unwrap();
        assert_eq!(pass.stream_finals.len(), 1);
    }

    #[test]
    fn table1_widths_wire_layer3_input() {
        let spec = table1_xlstm_b();
        let mut rng = Rng::new(3);
        let model = build_model(&spec, &mut rng).unwrap();
        let wxi = model.param_named("stream.wt.l2.wxi").unwrap();
        assert_eq!(wxi.shape, vec![29 + 12 + 2, 57]);
    }

    fn rep_specs() -> Vec<ArchitectureSpec> {
        let small = |m: Modality| (m, vec![2, 3, 4]);
        let stream_widths: BTreeMap<Modality, Vec<usize>> = MODALITIES.map(small).into();
        let mut crosses = BTreeMap::new();
        for src in MODALITIES {
            for dst in MODALITIES {
                if src != dst {
                    crosses.insert(CrossKey::new(src, dst), 2);
                }
            }
        }
        let sh_widths: BTreeMap<Modality, Vec<usize>> =
            MODALITIES.map(|m| (m, vec![3, 4, 5])).into();
        let cut_widths: BTreeMap<Modality, Vec<usize>> = [Modality::Wt, Modality::Sl]
            .map(|m| (m, vec![3, 4, 5]))
            .into();
        vec![
            ArchitectureSpec::lstm([3, 4, 5]).with_head(vec![6, 3, 1]),
            ArchitectureSpec::xlstm(Variant::XlstmA, stream_widths.clone(), crosses)
                .with_head(vec![6, 3, 1]),
            ArchitectureSpec::xlstm(Variant::XlstmB, stream_widths.clone(), BTreeMap::new())
                .with_head(vec![6, 3, 1]),
            ArchitectureSpec::xlstm(Variant::XlstmN, stream_widths, BTreeMap::new())
                .with_head(vec![6, 3, 1]),
            ArchitectureSpec::sh(Variant::ShAll, sh_widths.clone()).with_head(vec![6, 3, 1]),
            ArchitectureSpec::sh(Variant::ShWsl, sh_widths).with_head(vec![6, 3, 1]),
            ArchitectureSpec::sh(Variant::ShCut, cut_widths).with_head(vec![6, 3, 1]),
            ArchitectureSpec::dnn(3, vec![8, 8]).with_head(vec![6, 3, 1]),
        ]
    }

    #[test]
    fn count_equals_built_scalars_for_all_variants() {
        for spec in rep_specs() {
            let mut rng = Rng::new(7);
            let model = build_model(&spec, &mut rng).unwrap();
            assert_eq!(
                model.n_scalars(),
                count_params(&spec).unwrap(),
                "variant {}",
                spec.variant
            );
        }
    }

    #[test]
    fn forward_probability_in_unit_interval_and_deterministic() {
        for spec in rep_specs() {
            let mut rng = Rng::new(11);
            let model = build_model(&spec, &mut rng).unwrap();
            let input = tiny_batch(&spec, 4, 2, 5);
            let p1 = model.predict(&input).unwrap();
            let p2 = model.predict(&input).unwrap();
            assert_eq!(p1, p2, "variant {}", spec.variant);
            for p in p1 {
                assert!(p > 0.0 && p < 1.0, "variant {}: p={p}", spec.variant);
            }
        }
    }

    #[test]
    fn shared_weights_are_one_storage_and_touch_every_stream() {
        let widths: BTreeMap<Modality, Vec<usize>> = MODALITIES.map(|m| (m, vec![3, 4, 5])).into();
        let spec = ArchitectureSpec::sh(Variant::ShAll, widths).with_head(vec![6, 3, 1]);
        let mut rng = Rng::new(13);
        let mut model = build_model(&spec, &mut rng).unwrap();
        assert!(model.param_named("shared.g0.l0.wyi").is_some());
        assert!(model.param_named("stream.wt.l0.wyi").is_none());

        let input = tiny_batch(&spec, 4, 1, 6);
        let before: Vec<Vec<f64>> = {
            let pass = model
                .forward_batch(&input, false, &mut Rng::new(0))
                .unwrap();
            pass.stream_finals
                .iter()
                .map(|(_, id)| pass.graph.value(*id).data().to_vec())
                .collect()
        };
        model.param_named_mut("shared.g0.l1.wyj").unwrap().data[0] += 0.5;
        let after: Vec<Vec<f64>> = {
            let pass = model
                .forward_batch(&input, false, &mut Rng::new(0))
                .unwrap();
            pass.stream_finals
                .iter()
                .map(|(_, id)| pass.graph.value(*id).data().to_vec())
                .collect()
        };
        for (i, (b, a)) in before.iter().zip(&after).enumerate() {
            assert_ne!(b, a, "stream {i} unaffected by shared weight change");
        }
    }

    #[test]
    fn reversed_sequence_changes_output() {
        let spec = ArchitectureSpec::lstm([3, 4, 5]).with_head(vec![6, 3, 1]);
        let mut rng = Rng::new(17);
        let model = build_model(&spec, &mut rng).unwrap();
        let input = tiny_batch(&spec, 5, 1, 8);
        let p_fwd = model.predict(&input).unwrap()[0];
        let rev = BatchInput {
            steps: input.steps.iter().rev().cloned().collect(),
            statics: input.statics.clone(),
        };
        let p_rev = model.predict(&rev).unwrap()[0];
        assert!((p_fwd - p_rev).abs() > 1e-12);
    }

    #[test]
    fn zeroed_streams_make_output_independent_of_their_inputs() {
        let widths: BTreeMap<Modality, Vec<usize>> = [
            (Modality::Wt, vec![4, 4, 4]),
            (Modality::Sl, vec![1, 1, 1]),
            (Modality::St, vec![1, 1, 1]),
        ]
        .into_iter()
        .collect();
        let spec = ArchitectureSpec::xlstm(Variant::XlstmN, widths, BTreeMap::new())
            .with_head(vec![6, 3, 1]);
        let mut rng = Rng::new(19);
        let mut model = build_model(&spec, &mut rng).unwrap();
        for m in [Modality::Sl, Modality::St] {
            for l in 0..RECURRENT_DEPTH {
                for gate in GATES {
                    for kind in ["wx", "wy"] {
                        let name = format!("stream.{m}.l{l}.{kind}{gate}");
                        model.param_named_mut(&name).unwrap().data.fill(0.0);
                    }
                    let name = format!("stream.{m}.l{l}.b{gate}");
                    model.param_named_mut(&name).unwrap().data.fill(0.0);
                }
            }
        }
        let input = tiny_batch(&spec, 4, 1, 21);
        let p0 = model.predict(&input).unwrap()[0];
        // scramble the sleep and steps columns (wt occupies column 0)
        let mut scrambled = input.clone();
        for step in &mut scrambled.steps {
            for j in 1..10 {
                step.data_mut()[j] += 3.7;
            }
        }
        let p1 = model.predict(&scrambled).unwrap()[0];
        assert_eq!(p0, p1);
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        // One representative per variant; the acceptance suite repeats this
        // over multiple seeds.
        for (vi, spec) in rep_specs().into_iter().enumerate() {
            let mut rng = Rng::new(200 + vi as u64);
            let mut model = build_model(&spec, &mut rng).unwrap();
            let input = tiny_batch(&spec, 3, 2, 1200 + vi as u64);
            let targets = [1.0, 0.0];
            let weights = [1.2, 0.9];

            let theta0 = model.flat_params();
            let pass = model
                .forward_batch(&input, false, &mut Rng::new(0))
                .unwrap();
            let mut graph = pass.graph;
            let loss = graph
                .weighted_bce_mean(pass.prob, &targets, &weights)
                .unwrap();
            graph.backward(loss).unwrap();
            let analytic: Vec<f64> = pass
                .param_nodes
                .iter()
                .flat_map(|&id| graph.grad_tensor(id).data().to_vec())
                .collect();

            let err = finite_diff_check_sweep(
                |theta| {
                    model.set_flat_params(theta);
                    let pass = model
                        .forward_batch(&input, false, &mut Rng::new(0))
                        .unwrap();
                    let mut g = pass.graph;
                    let loss = g.weighted_bce_mean(pass.prob, &targets, &weights).unwrap();
                    g.scalar_value(loss)
                },
                &theta0,
                &analytic,
                &[1e-5, 1e-4, 1e-3],
            );
            model.set_flat_params(&theta0);
            assert!(err < 1e-4, "variant {}: gradcheck {err}", spec.variant);
        }
    }

    #[test]
    fn head_batch_norm_counts_and_gradchecks() {
        let spec = ArchitectureSpec::lstm([2, 3, 3]).with_head(vec![4, 3, 1]);
        let opts = ModelOptions {
            dropout_p: 0.0,
            head_batch_norm: true,
        };
        let with_bn = count_params_with(&spec, &opts).unwrap();
        let without = count_params(&spec).unwrap();
        assert_eq!(with_bn, without + 2 * (4 + 3));

        let mut rng = Rng::new(29);
        let mut model = build_model_with(&spec, &opts, &mut rng).unwrap();
        assert_eq!(model.n_scalars(), with_bn);

        let input = tiny_batch(&spec, 3, 4, 37);
        let targets = [1.0, 0.0, 0.0, 1.0];
        let weights = [1.0; 4];
        let theta0 = model.flat_params();
        let pass = model
            .forward_batch(&input, true, &mut Rng::new(0))
            .unwrap();
        let mut graph = pass.graph;
        let loss = graph
            .weighted_bce_mean(pass.prob, &targets, &weights)
            .unwrap();
        graph.backward(loss).unwrap();
        let analytic: Vec<f64> = pass
            .param_nodes
            .iter()
            .flat_map(|&id| graph.grad_tensor(id).data().to_vec())
            .collect();
        let err = finite_diff_check_sweep(
            |theta| {
                model.set_flat_params(theta);
                let pass = model
                    .forward_batch(&input, true, &mut Rng::new(0))
                    .unwrap();
                let mut g = pass.graph;
                let loss = g.weighted_bce_mean(pass.prob, &targets, &weights).unwrap();
                g.scalar_value(loss)
            },
            &theta0,
            &analytic,
            &[1e-5, 1e-4, 1e-3],
        );
        assert!(err < 1e-4, "bn gradcheck: {err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = table1_xlstm_b();
        let mut rng = Rng::new(31);
        let model = build_model(&spec, &mut rng).unwrap();
        let json = serde_json::to_string(&model.to_checkpoint()).unwrap();
        let cp: Checkpoint = serde_json::from_str(&json).unwrap();
        let restored = Model::from_checkpoint(cp).unwrap();
        assert_eq!(model.flat_params(), restored.flat_params());

        let input = tiny_batch(&spec, 4, 2, 41);
        assert_eq!(
            model.predict(&input).unwrap(),
            restored.predict(&input).unwrap()
        );
    }
}

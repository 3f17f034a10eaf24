//! LSTM cell and layer as graph-building functions.
//!
//! One cell step computes
//!
//! ```text
//! i_t = tanh(Wxi x_t + Wyi y_{t-1} + bi)
//! {j,f,o}_t = hard_sigmoid(Wx* x_t + Wy* y_{t-1} + b*)
//! c_t = c_{t-1} ⊗ f_t + i_t ⊗ j_t
//! y_t = tanh(c_t) ⊗ o_t
//! ```
//!
//! Weights are stored input-major (`d_in x d_out`), so a step over a batch of
//! rows is a single `x_t · W` product per gate.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Activation, Graph, NodeId, Tensor};

pub const GATES: [&str; 4] = ["i", "j", "f", "o"];

/// Node handles for the eight weight matrices and four bias vectors of one
/// layer, in gate order `i, j, f, o`.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayerNodes {
    pub wx: [NodeId; 4],
    pub wy: [NodeId; 4],
    pub b: [NodeId; 4],
}

/// Trainable scalars of one LSTM layer: `4 (d_in d_out + d_out^2 + d_out)`.
pub fn lstm_layer_param_count(d_in: usize, d_out: usize) -> usize {
    4 * (d_in * d_out + d_out * d_out + d_out)
}

/// One step of the cell. `x_t` is `batch x d_in`; `y_prev`, `c_prev` are
/// `batch x d_out`. Returns `(y_t, c_t)`.
pub fn lstm_cell_step(
    g: &mut Graph,
    p: &LstmLayerNodes,
    x_t: NodeId,
    y_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let mut gates = [None; 4];
    for (gi, slot) in gates.iter_mut().enumerate() {
        let xz = g.matmul(x_t, p.wx[gi])?;
        let yz = g.matmul(y_prev, p.wy[gi])?;
        let pre = g.add(xz, yz)?;
        let pre = g.add_row(pre, p.b[gi])?;
        let act = if gi == 0 {
            Activation::Tanh
        } else {
            Activation::HardSigmoid
        };
        *slot = Some(g.apply(act, pre));
    }
    let [i, j, f, o] = gates.map(|n| n.unwrap());
    let keep = g.mul(c_prev, f)?;
    let write = g.mul(i, j)?;
    let c_t = g.add(keep, write)?;
    let squashed = g.apply(Activation::Tanh, c_t);
    let y_t = g.mul(squashed, o)?;
    Ok((y_t, c_t))
}

/// Unrolls the cell over a sequence of per-step inputs (`batch x d_in` each)
/// with `y_0 = c_0 = 0`. During training an inverted-dropout mask with scale
/// `1/(1-p)` is applied to `x_t` only — never to `y_{t-1}` — and resampled at
/// every timestep. Returns the hidden sequence `y_1..y_T`.
pub fn lstm_layer_forward(
    g: &mut Graph,
    p: &LstmLayerNodes,
    xs: &[NodeId],
    dropout_p: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Vec<NodeId>> {
    if xs.is_empty() {
        return Err(Error::contract("lstm_layer_forward on an empty sequence"));
    }
    let batch = g.value(xs[0]).rows();
    let d_out = g.value(p.wy[0]).rows();
    let mut y = g.constant(Tensor::zeros(batch, d_out));
    let mut c = g.constant(Tensor::zeros(batch, d_out));
    let mut out = Vec::with_capacity(xs.len());
    for &x in xs {
        let x_in = if training && dropout_p > 0.0 {
            let d_in = g.value(x).cols();
            let scale = 1.0 / (1.0 - dropout_p);
            let mask: Vec<f64> = (0..batch * d_in)
                .map(|_| if rng.bernoulli(dropout_p) { 0.0 } else { scale })
                .collect();
            let mask = g.constant(Tensor::matrix(batch, d_in, mask)?);
            g.mul(x, mask)?
        } else {
            x
        };
        let (y_t, c_t) = lstm_cell_step(g, p, x_in, y, c)?;
        y = y_t;
        c = c_t;
        out.push(y_t);
    }
    Ok(out)
}

/// Fresh randomly initialized layer parameters as graph leaves (Xavier
/// weights, zero biases except forget bias = 1). Mainly for tests; models
/// own their parameters in a [`crate::model::Model`].
pub fn fresh_layer(g: &mut Graph, d_in: usize, d_out: usize, rng: &mut Rng) -> LstmLayerNodes {
    use crate::init::{init, Init};
    let mut wx = [None; 4];
    let mut wy = [None; 4];
    let mut b = [None; 4];
    for gi in 0..4 {
        wx[gi] = Some(g.leaf(init(&[d_in, d_out], Init::Xavier, rng), true));
        wy[gi] = Some(g.leaf(init(&[d_out, d_out], Init::Xavier, rng), true));
        let scheme = if GATES[gi] == "f" { Init::Ones } else { Init::Zeros };
        b[gi] = Some(g.leaf(init(&[1, d_out], scheme, rng), true));
    }
    LstmLayerNodes {
        wx: wx.map(|n| n.unwrap()),
        wy: wy.map(|n| n.unwrap()),
        b: b.map(|n| n.unwrap()),
    }
}

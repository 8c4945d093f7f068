//! Reusable blocks: LSTM cell, additive attention, two-layer perceptron and
//! word embedding.
//!
//! Parameter containers are generic over their storage: `Tensor` when held by
//! the model or a checkpoint, `Var` once bound to a tape for a forward pass.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Half-width of the uniform initialization interval.
pub const INIT_RANGE: f64 = 0.08;
pub const FORGET_BIAS_INIT: f64 = 1.0;

macro_rules! param_fields {
    ($name:ident { $($field:ident),+ $(,)? }) => {
        impl<T> $name<T> {
            pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> $name<U> {
                $name {
                    $($field: f(&format!("{}.{}", prefix, stringify!($field)), &self.$field)),+
                }
            }

            pub fn for_each<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
                $(f(format!("{}.{}", prefix, stringify!($field)), &self.$field);)+
            }

            pub fn for_each_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
                $(f(format!("{}.{}", prefix, stringify!($field)), &mut self.$field);)+
            }
        }
    };
}

/// LSTM weights. Gate blocks of `weight` are stacked (input, forget,
/// output, cell) from top to bottom; columns are `[context; hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    /// `[4H × (Z + H)]`
    pub weight: T,
    /// `[4H]`
    pub bias: T,
}
param_fields!(LstmParams { weight, bias });

/// Two fully-connected layers with a tanh in between; the output is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp2Params<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}
param_fields!(Mlp2Params { w1, b1, w2, b2 });

/// Two-layer scorer of `(x_i, h)`: `score · tanh(W_x x_i + W_h h + b)`.
/// The first layer's weight is stored split by input so the feature half
/// can be applied once per sequence. The scalar output bias is omitted
/// because softmax is invariant to it.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    /// `[A × D]`
    pub w_feature: T,
    /// `[A × H]`
    pub w_query: T,
    /// `[A]`
    pub bias: T,
    /// `[A]`
    pub score: T,
}
param_fields!(AttentionParams { w_feature, w_query, bias, score });

pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-INIT_RANGE..INIT_RANGE));
    t
}

impl LstmParams<Tensor> {
    pub fn init<R: Rng>(rng: &mut R, context: usize, hidden: usize) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(FORGET_BIAS_INIT);
        LstmParams {
            weight: uniform(rng, &[4 * hidden, context + hidden]),
            bias,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.bias.len() / 4
    }
}

impl Mlp2Params<Tensor> {
    pub fn init<R: Rng>(rng: &mut R, input: usize, hidden: usize, output: usize) -> Self {
        Mlp2Params {
            w1: uniform(rng, &[hidden, input]),
            b1: Tensor::zeros(&[hidden]),
            w2: uniform(rng, &[output, hidden]),
            b2: Tensor::zeros(&[output]),
        }
    }
}

impl AttentionParams<Tensor> {
    pub fn init<R: Rng>(rng: &mut R, feature: usize, query: usize, hidden: usize) -> Self {
        AttentionParams {
            w_feature: uniform(rng, &[hidden, feature]),
            w_query: uniform(rng, &[hidden, query]),
            bias: Tensor::zeros(&[hidden]),
            score: uniform(rng, &[hidden]),
        }
    }
}

/// One LSTM step: returns `(h_t, c_t)`.
pub fn lstm_cell_step(
    tape: &mut Tape,
    context: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams<Var>,
) -> Result<(Var, Var)> {
    let hidden = tape.shape(h_prev)[0];
    let rows = tape.shape(p.weight)[0];
    if rows != 4 * hidden || tape.shape(c_prev) != [hidden] {
        return Err(Error::ShapeMismatch {
            op: "lstm_cell_step",
            left: tape.shape(p.weight).to_vec(),
            right: vec![hidden],
        });
    }
    let x = tape.concat(&[context, h_prev], 0)?;
    let wx = tape.matvec(p.weight, x)?;
    let pre = tape.add(wx, p.bias)?;
    let i_pre = tape.slice(pre, 0, hidden)?;
    let f_pre = tape.slice(pre, hidden, hidden)?;
    let o_pre = tape.slice(pre, 2 * hidden, hidden)?;
    let g_pre = tape.slice(pre, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i_pre);
    let f = tape.sigmoid(f_pre);
    let o = tape.sigmoid(o_pre);
    let g = tape.tanh(g_pre);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h = tape.mul(o, c_act)?;
    Ok((h, c))
}

/// Attention inputs prepared once per sequence: the stacked features, their
/// first-layer projection and the optional validity mask.
#[derive(Clone, Debug)]
pub struct AttentionKeys {
    pub features: Var,
    projected: Var,
    pub mask: Option<Vec<bool>>,
}

impl AttentionKeys {
    pub fn new(tape: &mut Tape, features: Var, p: &AttentionParams<Var>, mask: Option<Vec<bool>>) -> Result<Self> {
        let n = match tape.shape(features) {
            [n, _] => *n,
            other => {
                return Err(Error::ShapeMismatch {
                    op: "attention features",
                    left: other.to_vec(),
                    right: vec![],
                })
            }
        };
        if let Some(m) = &mask {
            if m.len() != n {
                return Err(Error::ShapeMismatch {
                    op: "attention mask",
                    left: vec![n],
                    right: vec![m.len()],
                });
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::AllMasked("attention"));
            }
        }
        let projected = tape.matmul_nt(features, p.w_feature)?;
        Ok(AttentionKeys {
            features,
            projected,
            mask,
        })
    }

    /// Stacks a list of feature vectors first.
    pub fn from_list(tape: &mut Tape, features: &[Var], p: &AttentionParams<Var>, mask: Option<Vec<bool>>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyInput("attention"));
        }
        let stacked = tape.stack(features)?;
        AttentionKeys::new(tape, stacked, p, mask)
    }

    pub fn len(&self, tape: &Tape) -> usize {
        tape.shape(self.features)[0]
    }
}

/// Attended feature and the attention weights for query `h_prev`.
pub fn attend(tape: &mut Tape, keys: &AttentionKeys, h_prev: Var, p: &AttentionParams<Var>) -> Result<(Var, Var)> {
    let q = tape.matvec(p.w_query, h_prev)?;
    let q = tape.add(q, p.bias)?;
    let pre = tape.add_rows(keys.projected, q)?;
    let act = tape.tanh(pre);
    let scores = tape.matvec(act, p.score)?;
    let weights = tape.softmax(scores, keys.mask.as_deref())?;
    let context = tape.vecmat(weights, keys.features)?;
    Ok((context, weights))
}

/// Two-layer perceptron over the concatenation of `inputs`.
pub fn mlp2(tape: &mut Tape, inputs: &[Var], p: &Mlp2Params<Var>) -> Result<Var> {
    let x = match inputs {
        [single] => *single,
        _ => tape.concat(inputs, 0)?,
    };
    let h = tape.matvec(p.w1, x)?;
    let h = tape.add(h, p.b1)?;
    let h = tape.tanh(h);
    let out = tape.matvec(p.w2, h)?;
    tape.add(out, p.b2)
}

/// Row lookup in an embedding table.
pub fn embed(tape: &mut Tape, table: Var, id: usize) -> Result<Var> {
    let rows = tape.shape(table)[0];
    if id >= rows {
        return Err(Error::IndexOutOfRange {
            what: "word id",
            index: id,
            len: rows,
        });
    }
    tape.row(table, id)
}

//! Standard LSTM cell with fused gate matrices.
//!
//! Gate columns are laid out as `[input | forget | candidate | output]`:
//!
//! ```text
//! i = σ(x W_i + h U_i + b_i)    f = σ(x W_f + h U_f + b_f)
//! g = tanh(x W_g + h U_g + b_g) o = σ(x W_o + h U_o + b_o)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::params::{glorot_uniform, Params};
use crate::tensor::Tensor;

/// Initial value of the forget-gate bias.
pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Parameter names of one cell under a common prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmCellParams {
    pub input_weight: String,
    pub hidden_weight: String,
    pub bias: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCellParams {
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        LstmCellParams {
            input_weight: format!("{prefix}.w_ih"),
            hidden_weight: format!("{prefix}.w_hh"),
            bias: format!("{prefix}.bias"),
            input_dim,
            hidden_dim,
        }
    }

    /// Glorot-uniform weights, zero biases except the forget gate.
    pub fn init(&self, params: &mut Params, rng: &mut impl Rng) {
        let h = self.hidden_dim;
        params.insert(&self.input_weight, glorot_uniform(self.input_dim, 4 * h, rng));
        params.insert(&self.hidden_weight, glorot_uniform(h, 4 * h, rng));
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].fill(FORGET_BIAS_INIT);
        params.insert(&self.bias, Tensor::vector(bias));
    }

    pub fn init_zeros(&self, params: &mut Params) {
        let h = self.hidden_dim;
        params.insert(&self.input_weight, Tensor::zeros(&[self.input_dim, 4 * h]));
        params.insert(&self.hidden_weight, Tensor::zeros(&[h, 4 * h]));
        params.insert(&self.bias, Tensor::zeros(&[4 * h]));
    }

    pub fn bind(&self, params: &Params, tape: &mut Tape, trainable: bool) -> Result<LstmNodes> {
        let mut put = |name: &str| -> Result<NodeId> {
            let t = params.expect(name)?.clone();
            if trainable {
                tape.param(name, t)
            } else {
                Ok(tape.constant(t))
            }
        };
        Ok(LstmNodes {
            input_weight: put(&self.input_weight)?,
            hidden_weight: put(&self.hidden_weight)?,
            bias: put(&self.bias)?,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
        })
    }
}

/// A cell's weights bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub input_weight: NodeId,
    pub hidden_weight: NodeId,
    pub bias: NodeId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// One LSTM step on row vectors; returns `(h_t, c_t)`.
pub fn lstm_cell(
    tape: &mut Tape,
    cell: &LstmNodes,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hd = cell.hidden_dim;
    let x_cols = tape.value(x).cols();
    if x_cols != cell.input_dim {
        return Err(Error::arg(format!(
            "lstm input has {x_cols} entries, cell expects {}",
            cell.input_dim
        )));
    }
    for (what, id) in [("hidden", h_prev), ("cell", c_prev)] {
        let cols = tape.value(id).cols();
        if cols != hd {
            return Err(Error::arg(format!(
                "lstm {what} state has {cols} entries, cell expects {hd}"
            )));
        }
    }
    let xw = tape.matmul(x, cell.input_weight)?;
    let hu = tape.matmul(h_prev, cell.hidden_weight)?;
    let pre = tape.add(xw, hu)?;
    let pre = tape.add_bias(pre, cell.bias)?;

    let i = tape.slice_cols(pre, 0, hd)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice_cols(pre, hd, hd)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice_cols(pre, 2 * hd, hd)?;
    let g = tape.tanh(g)?;
    let o = tape.slice_cols(pre, 3 * hd, hd)?;
    let o = tape.sigmoid(o)?;

    let kept = tape.mul(f, c_prev)?;
    let written = tape.mul(i, g)?;
    let c = tape.add(kept, written)?;
    let squashed = tape.tanh(c)?;
    let h = tape.mul(o, squashed)?;
    Ok((h, c))
}

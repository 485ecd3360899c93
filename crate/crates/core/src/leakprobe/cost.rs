//! Communication cost of training a CNN entirely inside generic MPC,
//! counted as one communicated 128-bit value per secret multiplication.
//!
//! Backward passes: the first convolution is scaled by the measured
//! forward:backward proportion 900k : 4000k; every later layer needs an
//! input gradient and a weight gradient, each as expensive as its forward.

use serde::{Deserialize, Serialize};

use super::LeakError;

pub const FIRST_LAYER_BACKWARD_RATIO: f64 = 4000.0 / 900.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Valid padding, stride 1.
    Conv {
        h_in: usize,
        w_in: usize,
        c_in: usize,
        k_h: usize,
        k_w: usize,
        c_out: usize,
    },
    /// Non-overlapping max pooling; costs nothing under this convention.
    Pool { size: usize },
    Dense { n_in: usize, n_out: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passes {
    pub forward: bool,
    pub backward: bool,
}

impl Passes {
    pub const TRAINING: Passes = Passes {
        forward: true,
        backward: true,
    };
    pub const FORWARD: Passes = Passes {
        forward: true,
        backward: false,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: Layer,
    pub forward: u64,
    pub backward: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    /// Communicated values per training iteration.
    pub total: u64,
}

pub fn conv_forward(h_in: usize, w_in: usize, c_in: usize, k_h: usize, k_w: usize, c_out: usize) -> Result<u64, LeakError> {
    if k_h == 0 || k_w == 0 || k_h > h_in || k_w > w_in || c_in == 0 || c_out == 0 {
        return Err(LeakError::Dimension(format!(
            "{k_h}x{k_w} kernel on {h_in}x{w_in}x{c_in} input with {c_out} channels"
        )));
    }
    let (h_out, w_out) = (h_in - k_h + 1, w_in - k_w + 1);
    Ok((h_out * w_out * c_out * k_h * k_w * c_in) as u64)
}

pub fn estimate_generic_mpc_cost(layers: &[Layer], passes: Passes) -> Result<CostReport, LeakError> {
    let mut out = Vec::with_capacity(layers.len());
    let mut first_weighted = true;
    for &layer in layers {
        let fwd = match layer {
            Layer::Conv {
                h_in,
                w_in,
                c_in,
                k_h,
                k_w,
                c_out,
            } => conv_forward(h_in, w_in, c_in, k_h, k_w, c_out)?,
            Layer::Dense { n_in, n_out } => {
                if n_in == 0 || n_out == 0 {
                    return Err(LeakError::Dimension("empty dense layer".into()));
                }
                (n_in * n_out) as u64
            }
            Layer::Pool { size } => {
                if size == 0 {
                    return Err(LeakError::Dimension("zero pooling size".into()));
                }
                0
            }
        };
        let bwd = if fwd == 0 {
            0
        } else if first_weighted {
            first_weighted = false;
            (fwd as f64 * FIRST_LAYER_BACKWARD_RATIO).round() as u64
        } else {
            2 * fwd
        };
        out.push(LayerCost {
            layer,
            forward: if passes.forward { fwd } else { 0 },
            backward: if passes.backward { bwd } else { 0 },
        });
    }
    let total = out.iter().map(|l| l.forward + l.backward).sum();
    Ok(CostReport { layers: out, total })
}

/// The LeNet-style gaze CNN: 36x60 grey eye image, two 5x5 convolutions
/// (20 and 50 channels) each followed by 2x2 pooling, a 500-unit hidden
/// layer and a 2-unit output.
pub fn reference_cnn() -> Vec<Layer> {
    vec![
        Layer::Conv {
            h_in: 36,
            w_in: 60,
            c_in: 1,
            k_h: 5,
            k_w: 5,
            c_out: 20,
        },
        Layer::Pool { size: 2 },
        Layer::Conv {
            h_in: 16,
            w_in: 28,
            c_in: 20,
            k_h: 5,
            k_w: 5,
            c_out: 50,
        },
        Layer::Pool { size: 2 },
        Layer::Dense {
            n_in: 6 * 12 * 50,
            n_out: 500,
        },
        Layer::Dense { n_in: 500, n_out: 2 },
    ]
}

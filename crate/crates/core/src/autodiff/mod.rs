//! Minimal reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! A [`Tape`] records every operation in creation order; [`Tape::backward`]
//! walks it in exact reverse, accumulating gradients additively across
//! fan-out. Each forward pass owns its tape, so independent samples can be
//! differentiated on separate tapes.

mod rng;
mod tape;
mod tensor;

pub use rng::DropoutRng;
pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`
pub fn gelu_scalar(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

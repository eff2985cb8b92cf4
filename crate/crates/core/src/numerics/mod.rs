//! Dense tensors, a reverse-mode tape, and Adam.

mod adam;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use params::Params;
pub use scalar::Scalar;
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{leaky_relu, masked_softmax_slice};

/// Negative slope used by every LeakyReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Softmax over masked-in entries of a plain slice (no recording).
///
/// Returns the distribution and whether the support was empty.
pub fn masked_softmax<T: Scalar>(scores: &[T], mask: &[bool]) -> (Vec<T>, bool) {
    let empty = !mask.iter().any(|&m| m);
    (masked_softmax_slice(scores, mask), empty)
}

#[cfg(test)]
mod tests;

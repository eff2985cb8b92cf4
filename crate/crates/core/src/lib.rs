//! Stock movement prediction over a bi-typed market knowledge graph.
//!
//! Each trading day, every stock's recent price and news signals are fused
//! and encoded by a recurrent network; the resulting embeddings exchange
//! messages over company and executive relations through a dual attention
//! network, and a small head predicts whether the stock closes up.
//!
//! The numeric core is generic over [`numerics::Scalar`] (`f32` or `f64`);
//! the aliases below fix it to `f64`.

pub mod attention;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod signals;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};

pub type Tensor64 = numerics::Tensor<f64>;
pub type Params64 = numerics::Params<f64>;
pub type Tape64 = numerics::Tape<f64>;
pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;

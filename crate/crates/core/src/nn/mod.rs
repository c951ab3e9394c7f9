//! Reverse-mode differentiation substrate and the layers the classifier
//! needs.

mod adam;
pub mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{
    focal_loss, glorot, grl, orthogonal, softmax, vector_proj, BiLstm, Dense, Lstm, SelfAttention,
    StackedBiLstm,
};
pub use params::{ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, Tape, Var, EPS_LOG, EPS_PROJ};
pub use tensor::{dot, Tensor};

#[cfg(test)]
mod tests;

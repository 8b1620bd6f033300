//! Occupancy networks, latent-code tables and their autodiff engine.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod model;
pub mod tape;

pub use adam::{Adam, OptimizerState, RowAdam};
pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint};
pub use mlp::{BoundMlp, Mlp, MlpConfig};
pub use model::{
    bce, compose_fracture, compose_restoration, record_occupancies, AutodecoderModel, ModelConfig,
    Occupancies, Profile, BCE_EPS,
};
pub use tape::{Gradients, Real, Tape, Var};

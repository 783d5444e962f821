//! Partial-SMILES validation, PSV tables and PSV-PPO training for a small
//! recurrent SMILES generator.

pub mod losses;
pub mod model;
pub mod psv;
pub mod replay;
pub mod scalar;
pub mod tasks;
pub mod trainer;
pub mod validator;
pub mod vocab;

pub use scalar::Scalar;

pub type Policy64 = model::Policy<f64>;
pub type Policy32 = model::Policy<f32>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type Trainer32 = trainer::Trainer<f32>;

/// The molecules the default model is pretrained on, one SMILES per line.
pub const BUNDLED_CORPUS: &str = include_str!("../data/corpus.smi");

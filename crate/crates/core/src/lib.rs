//! Robust graph attention networks.
//!
//! A graph attention network whose attention coefficients are rescaled by a
//! learned edge-weight matrix. Edge weights and node features are revised by
//! projected gradient steps that trade fidelity to the observed (possibly
//! poisoned) graph against Laplacian feature smoothness, alternating with
//! ordinary parameter training.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below name the common instantiations.

pub mod attacks;
pub mod error;
pub mod gat;
pub mod graph;
pub mod rogat;
pub mod scalar;
pub mod tensor;

pub use attacks::{apply_perturbation, dice_attack, random_attack, DiceMode, Perturbation};
pub use error::{Error, Result};
pub use gat::{train_gat, GatConfig, GatParams, GatRun, Trainer};
pub use graph::{EdgeIndex, FeatureNorm, Graph, LinkStats, Masks, SbmSpec};
pub use rogat::{train_rogat, RevisedState, RogatConfig, RogatRun};
pub use scalar::Scalar;
pub use tensor::{Adam, AdamConfig, Tape, Var, WeightDecay};

pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type Tape64 = Tape<f64>;
pub type Tape32 = Tape<f32>;
pub type GatParams64 = GatParams<f64>;
pub type GatParams32 = GatParams<f32>;

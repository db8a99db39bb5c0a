//! IQP-circuit Born machines under the MMD loss.
//!
//! Model correlators `z_A`, target correlators `t_A`, the loss in exact and
//! sampled forms, initialization strategies, variance and curvature analysis,
//! and a training loop. Bit strings use `0 ↦ +1`, `1 ↦ -1` for parities and
//! qubit indices are 0-based throughout.

pub mod analysis;
pub mod correlators;
pub mod datasets;
pub mod error;
pub mod init;
pub mod mmd;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod topology;
pub mod train;

pub use correlators::{
    d2_z, grad_z, grad_z_exact, z_exact, z_light_cone, z_mc, z_product, CorrelatorEstimate,
    EstimatorBudget, ParamVector, ZEngine,
};
pub use datasets::{BitDataset, Half, SynthSpec, TargetStats};
pub use error::{Error, Result};
pub use init::{InitStrategy, InitVariant, PatchDraw, PatchSampler};
pub use mmd::{LossEngine, LossEstimate, MmdConfig};
pub use oracle::{DistributionTable, StateVector};
pub use topology::{GeneratorIndex, GeneratorLabel, GraphKind, InteractionGraph, QubitSubset};
pub use train::{TrainConfig, TrainTrace};

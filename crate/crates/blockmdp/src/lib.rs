//! Block MDPs with a rich-observation emission layer, exact oracles for their
//! coverage coefficients, access-protocol enforcement, and three learners:
//! PSDP, a deterministic-dynamics emulator learner, and the general
//! pushforward-coverage emulator learner.

pub mod access;
pub mod envs;
pub mod model;
pub mod oracle;
pub mod plhr;
pub mod plhr_det;
pub mod psdp;
pub mod suites;

pub use model::{Action, BlockMdp, LatentMdp, Obs, Policy, PolicyClass, Reward};

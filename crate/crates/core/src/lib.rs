//! Learning λ schedules for the (1+(λ,λ)) genetic algorithm on OneMax.

pub mod ddqn;
pub mod encoding;
pub mod env;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod onemax;
pub mod policy;
pub mod ppo;
pub mod reward;
pub mod seeds;
pub mod training;

pub use error::{Error, Result};

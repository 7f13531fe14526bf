//! Keyed drifting policies: a one-step conditional trajectory generator
//! trained with a keyed attraction/repulsion drift field, plus the planner,
//! a DDPM baseline and toy environments used to evaluate it.

mod binio;
pub mod bc;
pub mod diffuser;
pub mod drift;
pub mod envs;
pub mod error;
pub mod model;
pub mod numkit;
pub mod planner;
pub mod rng;
pub mod scorer;
pub mod stats;
pub mod trainer;
pub mod trajkit;

pub use error::{Error, FormatError, Result};

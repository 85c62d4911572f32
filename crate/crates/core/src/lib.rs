pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod pairing;
pub mod projection;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

pub mod auction;
pub mod dera;
pub mod error;
pub mod net_model;
pub mod prosumer;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};

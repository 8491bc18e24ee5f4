pub mod config;
pub mod error;
pub mod fem;
pub mod io;
pub mod linalg;
pub mod lstm;
pub mod metrics;
pub mod pipeline;
pub mod pod;
pub mod scenario;
pub mod session;
pub mod training;

pub use config::{Geometry, Loading, ParamRange, ScenarioConfig};
pub use error::{Error, Result};
pub use linalg::Matrix;

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod params;
pub mod record;
pub mod spatial;
pub mod temporal;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use tensor::Tensor;
pub use model::{Model, ModelConfig, Network, Variant};

pub mod dodd;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod odeco_tt2;
pub mod symm_tt2;
pub mod symm_ttl;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::DenseTensor;
pub use train::{assemble_train, Carriage, OdecoCarriage, SymmetricCarriage, TrainDecomposition};

pub mod bench;
pub mod ctm;
pub mod error;
pub mod forward;
pub mod gap;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod param;
pub mod scene;
pub mod tensor;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub mod attention;
pub mod autograd;
pub mod backbone;
pub mod error;
pub mod pooling;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};

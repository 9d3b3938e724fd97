//! Reverse-mode automatic differentiation, Adam, and weight initialization.

mod adam;
mod init;
mod tape;

pub use adam::Adam;
pub use init::glorot_init;
pub use tape::{attention_rows, softplus_inverse, NodeId, Tape, TapeError};

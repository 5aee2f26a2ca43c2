pub mod cli;
pub mod error;
pub mod inverse_hex;
pub mod inverse_square;
pub mod lattice;
pub mod oracle;
pub mod recovery;
pub mod sturm;
pub mod vertex_op;

pub use error::{Error, Result};

//! High-order Taylor expansion of feed-forward networks by backward
//! propagation of derivative stacks.

pub mod activation;
pub mod analysis;
pub mod chain;
pub mod error;
pub mod faa_di_bruno;
pub mod format;
pub mod layers;
pub mod network;
pub mod oracle;
pub mod random;
pub mod taylor;
pub mod tensor;

pub use activation::Activation;
pub use chain::{DerivStack, MixedDerivStack};
pub use error::{Error, ErrorCategory, Result};
pub use layers::{ModuleSpec, Shape};
pub use network::{Exactness, NetworkSpec};
pub use taylor::{expand, Mode, MultiIndex, TaylorPolynomial};
pub use tensor::Matrix;

// Negated comparisons are deliberate: they reject NaN too. Approximation coefficients keep every digit.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod bayes;
pub mod error;
pub mod exec;
pub mod frequentist;
pub mod gmodel;
pub mod ledger;
pub mod normal;
pub mod posterior;
pub mod records;
pub mod sim;
pub mod synth;
pub mod trial;

pub use error::{Error, Result};
pub use exec::Execution;

//! Region-wise correspondence between unannotated line art images.

pub mod annoserve;
pub mod autolabel;
pub mod cli;
pub mod corr;
pub mod error;
pub mod imaging;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod patchsim;
pub mod pipeline;
pub mod regionize;
pub mod regionmatch;
pub mod regionmap;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};

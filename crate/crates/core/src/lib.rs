//! Continual learning of sequential classification tasks by pseudo-recursal:
//! a GAN supplies pseudo-items, labelled by the frozen classifier, that are
//! rehearsed alongside each new task, and the GAN is itself rehearsed on its
//! own samples so one generator covers every task learnt so far.

pub mod autodiff;
pub mod checks;
pub mod data;
pub mod error;
pub mod harness;
pub mod kv;
pub mod losses;
pub mod nn;
pub mod profile;
pub mod replay;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use profile::Profile;

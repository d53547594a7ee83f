//! Numerical continuation of homoclinic solutions for nonautonomous difference
//! equations `x_{t+1} = f_t(x_t, λ)`.

pub mod admiss;
pub mod branchcont;
pub mod cli;
pub mod error;
pub mod homsolve;
pub mod linalg;
pub mod lindich;
pub mod models;
pub mod seqspace;

pub use error::{Error, Result};

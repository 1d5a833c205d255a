#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Joint channel estimation and device activity detection for grant-free
//! massive MIMO-OTFS uplinks to LEO satellites.
//!
//! The crate provides the OTFS frame model and pilot operator ([`frame`]),
//! a multipath LEO channel generator ([`channel`]), the pilot measurement
//! model with a sampled time-domain reference chain ([`measurement`]),
//! matrix-free solvers ([`linalg`]), the two estimators ([`tdsbl`] and
//! [`gamp`]) and a Monte-Carlo experiment runner ([`harness`]).

pub mod channel;
pub mod error;
mod fft;
pub mod frame;
pub mod gamp;
pub mod harness;
pub mod linalg;
pub mod matrix;
pub mod measurement;
pub mod rng;
pub mod tdsbl;

pub use error::{Error, Result};

//! Time-varying internal-model contouring control.
//!
//! Pipeline: a rotational master signal is converted to a monotone angle,
//! each slave reference is generated by a position-domain exosystem, a
//! two-module internal model regenerates it, and a gain-scheduled stabilizer
//! with a reduced-order observer closes the loop.

// `!(x >= y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod contour_signals;
pub mod exosystem;
pub mod internal_model;
pub mod plant;
pub mod sdp;
pub mod simulation;
pub mod stabilizer;

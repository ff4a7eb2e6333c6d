//! Edge-offloaded security functions for constrained IoT devices.
//!
//! Devices hand the expensive half of a security function to a nearby
//! security agent (SA) while keeping their data and session keys to
//! themselves. This crate contains the pairing-based functions (BBS group
//! signatures and key-policy ABE), the two offload protocols, a
//! deterministic discrete-event harness to run them, and the analytical
//! cost and queueing model used to size SA load.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abe;
pub mod codec;
pub mod crypto_suite;
pub mod group_sig;
pub mod harness;
pub mod perf_model;
pub mod policy;
pub mod protocol;

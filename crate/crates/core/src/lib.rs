//! Query-conditioned multi-image vision encoding, the crop/re-encode
//! reasoning protocol, and the reward and policy-optimization machinery
//! used to train a policy that drives it.
//!
//! The crate is `no_std` with `alloc`; file formats, configuration and the
//! command-line front end live in the `vilavt` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod numerics;
pub mod encoder;
pub mod image;
pub mod protocol;
pub mod orchestrator;
pub mod training;
pub mod synth;

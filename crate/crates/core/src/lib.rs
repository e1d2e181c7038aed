//! Speculative decoding verifiers over explicit token-probability tables.
//!
//! The crate has four layers:
//!
//! * [`prob`]: distributions, residuals, log-space prefix joints, seeded sampling.
//! * [`model`]: order-m Markov tables standing in for the draft and target models.
//! * [`verify`]: single-draft SD, SpecTr's K-SEQ, GBV and the multi-draft block
//!   verifier SpecTr-GBV, plus the target modification carried between iterations.
//! * [`oracle`]: exact enumeration of the verifiers' event trees at tiny scale.
//!
//! [`harness`] drives end-to-end decoding and writes experiment reports.

pub mod prob;
pub mod model;
pub mod verify;
pub mod oracle;
pub mod harness;

//! Query-efficient imitation learning on a deterministic lane-driving world.
//!
//! The crate contains a curvilinear 2D driving simulator ([`sim`]), a
//! rasterised forward view and privileged label extractor ([`perception`]),
//! a rule-based reference driver ([`reference`]), a small feed-forward
//! network trainer ([`nn`]), the primary/safety policies ([`policies`]), the
//! supervised, DAgger and SafeDAgger training loops ([`imitation`]) and the
//! evaluation harness ([`eval`]).

pub mod error;
pub mod eval;
pub mod imitation;
pub mod nn;
pub mod perception;
pub mod policies;
pub mod reference;
pub mod sim;

pub use error::{Error, Result};

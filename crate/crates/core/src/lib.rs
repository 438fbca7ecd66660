//! Exact multistage sampling plans for estimating a binomial proportion.
//!
//! A plan fixes a margin `eps`, a risk `delta` and a stopping rule applied at
//! a sequence of sample sizes. The crate computes stopping distributions
//! exactly, certifies that coverage `Pr{|p_hat - p| < eps}` is at least
//! `1 - delta` for every `p`, and tunes the rule's scaling parameter `zeta`.

pub mod bounds;
pub mod conduct;
pub mod decimal;
pub mod error;
pub mod exact;
pub mod mathkern;
pub mod rules;
pub mod tune;
pub mod verify;

pub use decimal::ExactDecimal;
pub use error::{Error, Result};

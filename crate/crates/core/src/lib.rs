//! Privacy-preserving evaluation of a knowledge-graph purchase.
//!
//! A Buyer learns how much a Seller's graph would add to their own (shared
//! statements, entropy gain, a random sample) without either side handing
//! over its graph, and can afterwards check that the Seller played fair.

pub mod blindsig;
pub mod bloom;
pub mod entropy;
pub mod kg;
pub mod leak;
pub mod net;
pub mod ot;
pub mod partition;
pub mod protocol;
pub mod psi;
pub mod role;
pub mod wire;

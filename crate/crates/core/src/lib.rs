//! Self-supervised in-plane visual servoing for peg-in-hole insertion.
//!
//! The crate covers the whole lifecycle on a simulated robot cell:
//! error-direction geometry and least-squares error reconstruction
//! ([`geometry`]), isometric-grid spiral search ([`search`]), the simulated
//! cell and renderer ([`sim`]), trainable regressors ([`perception`]), the
//! servo loop ([`servoing`]), autonomous data collection and deployment
//! gating ([`pipeline`]) and the insertion-time benchmark ([`bench`]).

pub mod bench;
pub mod cli;
pub mod geometry;
pub mod perception;
pub mod pipeline;
pub mod search;
pub mod seeds;
pub mod servoing;
pub mod sim;

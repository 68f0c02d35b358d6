//! Simulation and verification toolkit for multi-round blackboard protocols
//! over combinatorial auctions with XOS bidders.
//!
//! The crate builds hard input distributions for the number-in-hand blackboard
//! model, runs protocols against them, measures welfare gaps exactly at desk
//! scale, and checks the information-theoretic facts (direct sum, product
//! structure, round embedding) that make those distributions hard.
//!
//! Module map:
//! - [`model`]: parameters, clauses, valuations, instances, ground truth.
//! - [`family`]: bounded-intersection set families and their verification.
//! - [`distributions`]: samplers for the level-1 and level-r hard distributions.
//! - [`welfare`]: exact welfare oracles and approximation accounting.
//! - [`simulator`]: the blackboard execution engine.
//! - [`protocols`]: concrete protocols and the name registry.
//! - [`infotools`]: exact entropy/divergence calculators over finite joints.
//! - [`reduction`]: round-elimination embedding and product-structure checks.
//! - [`experiments`]: seeded experiment drivers shared by tests and the CLI.

pub mod bits;
pub mod distributions;
pub mod experiments;
pub mod family;
pub mod infotools;
pub mod model;
pub mod protocols;
pub mod reduction;
pub mod rng;
pub mod simulator;
#[cfg(test)]
pub(crate) mod testutil;
pub mod welfare;

//! Privacy-preserving discovery of maximal parent sets under the MDL score.
//!
//! Data owners hold horizontal shards of a categorical table. They secret-share
//! per-shard joint counts with a set of computing parties, which run a
//! subset-lattice traversal over additively shared scores and open only the
//! records that end up in the output plus one comparison bit per branch.
//!
//! * [`field`]: GF(2^127 - 1) and fixed-point encoding.
//! * [`sharing`]: additive shares and dealer material.
//! * [`mpc`]: opening, multiplication, comparison and oblivious lookup.
//! * [`scoring`]: schema, counts and the plaintext MDL scores.
//! * [`lattice`]: the traversal engine, plaintext backends and the brute-force oracle.
//! * [`session`]: party roles and the secure scoring backend.
//! * [`wire`] and [`transport`]: message framing, in-process channels and TCP.
//! * [`transcript`]: the log of opened values and its leakage audit.

pub mod error;
pub mod field;
pub mod lattice;
pub mod mpc;
pub mod scoring;
pub mod session;
pub mod sharing;
pub mod transcript;
pub mod transport;
pub mod wire;

pub use error::{Error, Result};
pub use field::{Fe, FieldParams, FixedPoint};
pub use lattice::{LatticeConfig, Mode, PGStructure};
pub use scoring::{DataTable, Schema};

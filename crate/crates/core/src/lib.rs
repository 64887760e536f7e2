//! Turns per-image face-analysis records into natural-language appearance
//! captions and packages them as sharded, resumable training manifests.
//!
//! Stages, in pipeline order: [`filter`] rejects unusable images,
//! [`derive`] computes descriptors, [`debias`] drops correlated labels,
//! [`bow`] builds the shuffled phrase lists, [`fusion`] turns them into
//! captions, and [`dataset`] persists everything.

pub mod bow;
pub mod config;
pub mod dataset;
pub mod debias;
pub mod derive;
pub mod filter;
pub mod fusion;
pub mod pipeline;
pub mod schema;
pub mod seed;

#[cfg(test)]
mod testutil;

pub use schema::{parse_record, serialize_record, AttributeRecord, SchemaError};

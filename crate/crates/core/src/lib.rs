//! newsalpha: a backfill-first news-to-features-to-policy research pipeline.
//!
//! The crate is organized along the data path:
//!
//! - [`backfill`]: append-only event store with strict information boundaries
//! - [`synthmarket`]: deterministic synthetic market with plantable alpha
//! - [`extract`]: pluggable text-to-features extraction with caching
//! - [`metrics`]: cross-sectional signal quality (IC, hit rate, spreads)
//! - [`promptopt`]: prompt mutation / evaluation / selection loop with gates
//! - [`tradenv`]: cost-aware multi-ticker trading environment
//! - [`ppo`]: from-scratch actor-critic with clipped-surrogate updates
//! - [`bench`]: multi-seed ablations, regime splits, cost sweeps, reports

pub mod backfill;
pub mod bench;
pub mod extract;
pub mod fsio;
pub mod hash;
pub mod metrics;
pub mod ppo;
pub mod promptopt;
pub mod rng;
pub mod synthmarket;
pub mod time;
pub mod tradenv;

//! Cooperative chunk placement for video-on-demand caches with overlapping
//! coverage.
//!
//! Caches sit at base stations whose disks overlap. Videos are cut into
//! chunks by layered coding ([`Mechanism::Lc`]) or multiple description coding
//! ([`Mechanism::Mdc`]). Each cache repeatedly best-responds to its
//! neighbors to lower the residual backhaul bandwidth; the dynamics form a
//! potential game and stop at a Nash equilibrium.

pub mod catalog;
pub mod config;
pub mod error;
pub mod experiment;
pub mod game;
pub mod geometry;
pub mod objective;
pub mod oracle;
pub mod solver;

pub use catalog::{Chunking, DemandModel, Mechanism, QualityTable, Trend};
pub use error::{Error, Result};
pub use game::{is_nash, robr, run_async_agents, Interleaving, Trace, TraceRecord};
pub use geometry::{build_coverage, CacheSite, CoverageModel, Region, SamplerConfig};
pub use objective::{ChunkMatrix, CostBreakdown, Instance, Placement, PlacementView};
pub use solver::{best_response, brute_force_best_response, most_popular_placement};

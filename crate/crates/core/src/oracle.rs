//! Random small instances and the greedy-versus-exhaustive cross-check.
//!
//! Probabilities are drawn as integer compositions of a power of two, so
//! every region, popularity and quality probability is dyadic. Combined with
//! integer chunk sizes this keeps the objective sums exact in floating point,
//! which makes "equal cost" a meaningful test.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::catalog::{Chunking, DemandModel, LcChunking, Mechanism};
use crate::error::Result;
use crate::geometry::{CoverageModel, Region};
use crate::objective::{ChunkMatrix, Instance, Placement};
use crate::solver::{best_response, brute_force_best_response};

/// Size bounds for generated instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmallInstanceSpec {
    pub max_caches: usize,
    pub max_videos: usize,
    pub max_chunks: usize,
    /// Every chunk costs one byte (LC layer or MDC description).
    pub unit_sizes: bool,
}

impl SmallInstanceSpec {
    /// Bounds under which the greedy solvers are checked against enumeration.
    pub const ORACLE: SmallInstanceSpec = SmallInstanceSpec {
        max_caches: 3,
        max_videos: 3,
        max_chunks: 3,
        unit_sizes: true,
    };
}

/// Splits `total` into `parts` nonnegative integers (positive if `positive`).
fn composition(rng: &mut impl Rng, total: u32, parts: usize, positive: bool) -> Vec<u32> {
    let mut cuts: Vec<u32> = if positive {
        sample(rng, total as usize - 1, parts - 1)
            .into_iter()
            .map(|c| c as u32 + 1)
            .collect()
    } else {
        (0..parts - 1).map(|_| rng.gen_range(0..=total)).collect()
    };
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        out.push(c - prev);
        prev = c;
    }
    out
}

fn dyadic(parts: &[u32], total: u32) -> Vec<f64> {
    parts.iter().map(|&p| p as f64 / total as f64).collect()
}

/// Random coverage over `caches` caches with dyadic region probabilities.
pub fn random_coverage(rng: &mut impl Rng, caches: usize) -> CoverageModel {
    let subsets = (1u64 << caches) - 1;
    let count = rng.gen_range(1..=subsets as usize);
    let mut masks: Vec<u64> = sample(rng, subsets as usize, count)
        .into_iter()
        .map(|m| m as u64 + 1)
        .collect();
    masks.sort_unstable();
    let weights = dyadic(&composition(rng, 64, masks.len(), true), 64);
    let regions = masks
        .iter()
        .zip(weights)
        .map(|(&mask, p)| {
            let members: Vec<usize> = (0..caches).filter(|c| mask >> c & 1 == 1).collect();
            Region::new(&members, p).expect("valid members")
        })
        .collect();
    CoverageModel::from_regions(caches, regions).expect("valid regions")
}

/// Random instance within `spec` for the given mechanism.
pub fn random_instance(
    rng: &mut impl Rng,
    mechanism: Mechanism,
    spec: SmallInstanceSpec,
) -> Instance {
    let caches = rng.gen_range(1..=spec.max_caches);
    let videos = rng.gen_range(1..=spec.max_videos);
    let chunks = rng.gen_range(1..=spec.max_chunks);
    let coverage = random_coverage(rng, caches);

    let mut popularity = composition(rng, 64, videos, true);
    popularity.sort_unstable_by(|a, b| b.cmp(a));
    let popularity = dyadic(&popularity, 64);

    let (chunking, levels) = match mechanism {
        Mechanism::Lc => {
            let per_video = (0..videos)
                .map(|_| LcChunking {
                    layer_sizes: (0..chunks)
                        .map(|_| {
                            if spec.unit_sizes {
                                1
                            } else {
                                rng.gen_range(1..=4)
                            }
                        })
                        .collect(),
                })
                .collect();
            (Chunking::layered(per_video).expect("valid layers"), chunks)
        }
        Mechanism::Mdc => {
            let levels = rng.gen_range(1..=chunks);
            let mut required: Vec<usize> = sample(rng, chunks - 1, levels - 1)
                .into_iter()
                .map(|d| d + 1)
                .collect();
            required.sort_unstable();
            required.push(chunks);
            let sizes = (0..videos)
                .map(|_| {
                    if spec.unit_sizes {
                        chunks as u64
                    } else {
                        rng.gen_range(1..=4 * chunks as u64)
                    }
                })
                .collect();
            (
                Chunking::described(sizes, chunks, required).expect("valid descriptions"),
                levels,
            )
        }
    };

    let quality = (0..coverage.regions().len())
        .map(|_| dyadic(&composition(rng, 16, levels, false), 16))
        .collect();
    let demand = DemandModel::new(popularity, quality).expect("valid demand");
    let total: u64 = (0..videos).map(|j| chunking.video_size(j)).sum();
    let capacity = rng.gen_range(0..=total * caches as u64);
    let capacity = capacity.min(total);
    Instance::new(coverage, demand, chunking, capacity).expect("consistent instance")
}

/// Random matrix for `cache`, with chunks dropped until it fits.
pub fn random_matrix(rng: &mut impl Rng, inst: &Instance) -> ChunkMatrix {
    let mut m = inst.empty_matrix();
    for j in 0..inst.videos() {
        for q in 0..inst.chunks() {
            m.set(j, q, rng.gen_bool(0.5));
        }
    }
    let mut stored: Vec<(usize, usize)> = m.stored().collect();
    while inst.capacity_units(&m) > inst.budget() {
        let k = rng.gen_range(0..stored.len());
        let (j, q) = stored.swap_remove(k);
        m.set(j, q, false);
    }
    m
}

pub fn random_placement(rng: &mut impl Rng, inst: &Instance) -> Placement {
    let matrices = (0..inst.caches())
        .map(|_| random_matrix(rng, inst))
        .collect();
    Placement::from_matrices(matrices).expect("uniform shapes")
}

/// A greedy response that lost to enumeration.
#[derive(Debug, Clone, Serialize)]
pub struct OracleMismatch {
    pub instance: usize,
    pub mechanism: Mechanism,
    pub cache: usize,
    pub greedy: f64,
    pub exhaustive: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub instances: usize,
    pub seed: u64,
    pub mismatches: Vec<OracleMismatch>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compares greedy and exhaustive best responses on `instances` random
/// instances per mechanism, each with random placements for the other caches.
pub fn cross_check(instances: usize, seed: u64, spec: SmallInstanceSpec) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = Vec::new();
    for i in 0..instances {
        for mechanism in Mechanism::ALL {
            let inst = random_instance(&mut rng, mechanism, spec);
            let placement = random_placement(&mut rng, &inst);
            let cache = rng.gen_range(0..inst.caches());
            let greedy = best_response(&inst, &placement, cache)?;
            let exhaustive = brute_force_best_response(&inst, &placement, cache)?;
            let g = inst.local_total(&placement, cache, &greedy);
            let e = inst.local_total(&placement, cache, &exhaustive);
            if g != e || inst.capacity_units(&greedy) > inst.budget() {
                mismatches.push(OracleMismatch {
                    instance: i,
                    mechanism,
                    cache,
                    greedy: g,
                    exhaustive: e,
                });
            }
        }
    }
    Ok(OracleReport {
        instances,
        seed,
        mismatches,
    })
}

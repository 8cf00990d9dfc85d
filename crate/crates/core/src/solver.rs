//! Per-cache best responses.
//!
//! Given what every other cache stores, a cache picks the capacity-feasible
//! chunk matrix minimizing its local residual bandwidth. Layered coding has
//! static per-chunk weights, so one sorted greedy pass suffices. For multiple
//! description coding the value of a description depends on how many of the
//! same video the cache already holds, so the greedy re-prices after each pick.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::catalog::Mechanism;
use crate::error::{Error, Result};
use crate::objective::{ChunkMatrix, Instance, Placement, PlacementView};

/// Enumeration limit for [`brute_force_best_response`].
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Relative slack below which two local costs count as equal.
pub const COST_TOLERANCE: f64 = 1e-12;

/// One `(video, chunk)` candidate with its marginal saving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedTuple {
    pub video: usize,
    pub chunk: usize,
    /// Reduction of the local residual bandwidth (bytes/request) if stored.
    pub weight: f64,
    /// Capacity units consumed.
    pub cost: u64,
}

impl RankedTuple {
    fn density(&self) -> f64 {
        self.weight / self.cost as f64
    }

    /// Highest saving per capacity unit first, then smaller video, then smaller chunk.
    fn rank(&self, other: &Self) -> Ordering {
        other
            .density()
            .total_cmp(&self.density())
            .then(self.video.cmp(&other.video))
            .then(self.chunk.cmp(&other.chunk))
    }
}

/// True when `candidate` is cheaper than `incumbent` by more than the tolerance.
pub fn improves(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent - COST_TOLERANCE * incumbent.abs().max(1.0)
}

/// Best response of `cache` for the instance's mechanism.
pub fn best_response(
    inst: &Instance,
    view: &impl PlacementView,
    cache: usize,
) -> Result<ChunkMatrix> {
    match inst.mechanism() {
        Mechanism::Lc => best_response_lc(inst, view, cache),
        Mechanism::Mdc => best_response_mdc(inst, view, cache),
    }
}

/// Layered best response.
///
/// Every chunk `(j, q)` gets the weight
/// `sum_{s contains m} sum_{rho >= q} p_s a_{j,rho,s} w_{j,q} zeta^(m)(j, q)`;
/// chunks are taken in decreasing weight per byte, skipping those that do not
/// fit, and zero-weight chunks are never stored. If the current matrix of
/// `cache` is strictly cheaper, it is returned unchanged.
pub fn best_response_lc(
    inst: &Instance,
    view: &impl PlacementView,
    cache: usize,
) -> Result<ChunkMatrix> {
    check_cache(inst, view, cache, Mechanism::Lc)?;
    let ranked = lc_weights(inst, view, cache);
    let mut out = inst.empty_matrix();
    let mut used = 0u128;
    for t in ranked.iter().filter(|t| t.weight > 0.0) {
        if used + t.cost as u128 <= inst.budget() {
            used += t.cost as u128;
            out.set(t.video, t.chunk, true);
        }
    }
    Ok(keep_better(inst, view, cache, out))
}

/// Layered tuples of `cache`, sorted in greedy order.
pub fn lc_weights(inst: &Instance, view: &impl PlacementView, cache: usize) -> Vec<RankedTuple> {
    let q_count = inst.chunks();
    let full = inst.full_row();
    let mut weight = vec![0.0; inst.videos() * q_count];
    for &s in inst.coverage().regions_of(cache) {
        for j in 0..inst.videos() {
            let open = full & !inst.region_union(view, s, j, Some(cache));
            for q in (0..q_count).filter(|q| open >> q & 1 == 1) {
                weight[j * q_count + q] += inst.layer_weight(s, j, q);
            }
        }
    }
    let chunking = inst.chunking();
    let mut ranked: Vec<RankedTuple> = weight
        .into_iter()
        .enumerate()
        .map(|(i, weight)| {
            let (video, chunk) = (i / q_count, i % q_count);
            RankedTuple {
                video,
                chunk,
                weight,
                cost: chunking.chunk_cost(video, chunk),
            }
        })
        .collect();
    ranked.sort_by(RankedTuple::rank);
    ranked
}

/// Multiple description best response.
///
/// Storing description `q` of video `j` saves, in every region `s` containing
/// `m` where no other member holds `q`,
/// `p_s a_j (w_j / Q) sum_rho f_s(rho) 1(D_rho - Q + missing_s(j) > 0)`.
/// The highest saving per capacity unit is taken first and the savings of the
/// same video are re-priced after each pick. Savings only shrink as the cache
/// fills, so stale heap entries are upper bounds and can be refreshed lazily.
pub fn best_response_mdc(
    inst: &Instance,
    view: &impl PlacementView,
    cache: usize,
) -> Result<ChunkMatrix> {
    check_cache(inst, view, cache, Mechanism::Mdc)?;
    let regions = inst.coverage().regions_of(cache);
    let full = inst.full_row();
    // open[r][j]: descriptions of j not held by the other members of regions[r]
    let open: Vec<Vec<u64>> = regions
        .iter()
        .map(|&s| {
            (0..inst.videos())
                .map(|j| full & !inst.region_union(view, s, j, Some(cache)))
                .collect()
        })
        .collect();
    let mut out = inst.empty_matrix();

    let saving = |out: &ChunkMatrix, j: usize, q: usize| -> f64 {
        let mut total = 0.0;
        for (r, &s) in regions.iter().enumerate() {
            let open_here = open[r][j];
            if open_here >> q & 1 == 0 {
                continue;
            }
            let missing = (open_here & !out.row(j)).count_ones() as usize;
            let (coef, gain) = inst.description_gain(s, j);
            total += coef * gain[missing];
        }
        total
    };

    let mut heap = BinaryHeap::new();
    for j in 0..inst.videos() {
        let reachable = open.iter().fold(0, |acc, row| acc | row[j]);
        for q in (0..inst.chunks()).filter(|q| reachable >> q & 1 == 1) {
            let t = RankedTuple {
                video: j,
                chunk: q,
                weight: saving(&out, j, q),
                cost: inst.chunking().chunk_cost(j, q),
            };
            if t.weight > 0.0 {
                heap.push(Ranked(t));
            }
        }
    }

    let mut used = 0u128;
    while let Some(Ranked(top)) = heap.pop() {
        let fresh = saving(&out, top.video, top.chunk);
        if fresh <= 0.0 {
            continue;
        }
        if fresh < top.weight {
            heap.push(Ranked(RankedTuple {
                weight: fresh,
                ..top
            }));
            continue;
        }
        if used + top.cost as u128 <= inst.budget() {
            used += top.cost as u128;
            out.set(top.video, top.chunk, true);
        }
    }
    Ok(keep_better(inst, view, cache, out))
}

/// Max-heap adapter: the greatest element is the first in greedy order.
struct Ranked(RankedTuple);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.rank(&self.0)
    }
}

fn keep_better(
    inst: &Instance,
    view: &impl PlacementView,
    cache: usize,
    candidate: ChunkMatrix,
) -> ChunkMatrix {
    let incumbent = view.matrix(cache);
    if inst.capacity_units(incumbent) <= inst.budget() {
        let current = inst.local_total(view, cache, incumbent);
        let proposed = inst.local_total(view, cache, &candidate);
        if improves(current, proposed) {
            return incumbent.clone();
        }
    }
    candidate
}

fn check_cache(
    inst: &Instance,
    view: &impl PlacementView,
    cache: usize,
    mechanism: Mechanism,
) -> Result<()> {
    inst.check_shape(view)?;
    if cache >= inst.caches() {
        return Err(Error::Lookup {
            kind: "cache",
            index: cache,
            len: inst.caches(),
        });
    }
    if inst.mechanism() != mechanism {
        return Err(Error::Precondition(format!(
            "{mechanism} best response on a {} instance",
            inst.mechanism()
        )));
    }
    Ok(())
}

/// Exhaustive best response for small instances.
///
/// Enumerates every feasible matrix of `cache` in increasing order of its bit
/// index (`j * Q + q`) and keeps the first one with the smallest local cost.
pub fn brute_force_best_response(
    inst: &Instance,
    view: &impl PlacementView,
    cache: usize,
) -> Result<ChunkMatrix> {
    check_cache(inst, view, cache, inst.mechanism())?;
    let vars = inst.videos() * inst.chunks();
    if vars > BRUTE_FORCE_LIMIT {
        return Err(Error::OracleScope {
            limit: BRUTE_FORCE_LIMIT,
            requested: vars,
        });
    }
    let mut best: Option<(f64, ChunkMatrix)> = None;
    for bits in 0..1u64 << vars {
        let candidate = ChunkMatrix::from_bits(inst.videos(), inst.chunks(), bits);
        if inst.capacity_units(&candidate) > inst.budget() {
            continue;
        }
        let cost = inst.local_total(view, cache, &candidate);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, candidate));
        }
    }
    Ok(best.expect("the empty matrix is always feasible").1)
}

/// Every cache fills up with whole videos in popularity order, skipping
/// chunks that no longer fit. All caches end up identical.
pub fn most_popular_placement(inst: &Instance) -> Placement {
    let mut matrix = inst.empty_matrix();
    let mut order: Vec<usize> = (0..inst.videos()).collect();
    let popularity = inst.demand().popularity();
    order.sort_by(|&a, &b| popularity[b].total_cmp(&popularity[a]).then(a.cmp(&b)));
    let mut used = 0u128;
    for j in order {
        for q in 0..inst.chunks() {
            let cost = inst.chunking().chunk_cost(j, q) as u128;
            if used + cost <= inst.budget() {
                used += cost;
                matrix.set(j, q, true);
            }
        }
    }
    Placement::from_matrices(vec![matrix; inst.caches()]).expect("uniform shapes")
}

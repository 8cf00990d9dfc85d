//! Reference implementations used to check the library from the outside.
//!
//! Everything here is written for clarity rather than speed and recomputes
//! costs straight from the chunk tables, without the library's precomputed
//! weights.

#![allow(dead_code)]

use coopcache::{ChunkMatrix, Chunking, Instance, Placement};
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Bytes a request for (video, level) in `region` must fetch from the backhaul.
pub fn request_cost(
    inst: &Instance,
    placement: &Placement,
    region: usize,
    video: usize,
    level: usize,
) -> f64 {
    let members = inst.coverage().regions()[region].members();
    let held = |q: usize| members.iter().any(|&c| placement.cache(c).get(video, q));
    match inst.chunking() {
        Chunking::Layered { layers } => (0..=level)
            .filter(|&q| !held(q))
            .map(|q| layers[video][q] as f64)
            .sum(),
        Chunking::Described {
            video_sizes,
            descriptions,
            required,
        } => {
            let have = (0..*descriptions).filter(|&q| held(q)).count();
            let missing = required[level].saturating_sub(have);
            missing as f64 * video_sizes[video] as f64 / *descriptions as f64
        }
    }
}

fn region_cost(inst: &Instance, placement: &Placement, region: usize) -> f64 {
    let p = inst.coverage().regions()[region].probability;
    let demand = inst.demand();
    let mut total = 0.0;
    for j in 0..inst.videos() {
        for (rho, f) in demand.quality(region).iter().enumerate() {
            total += p * demand.popularity()[j] * f * request_cost(inst, placement, region, j, rho);
        }
    }
    total
}

pub fn global_cost(inst: &Instance, placement: &Placement) -> f64 {
    (0..inst.coverage().regions().len())
        .map(|s| region_cost(inst, placement, s))
        .sum()
}

/// Residual cost of the regions that contain `cache`.
pub fn local_cost(inst: &Instance, placement: &Placement, cache: usize) -> f64 {
    inst.coverage()
        .regions()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.contains(cache))
        .map(|(s, _)| region_cost(inst, placement, s))
        .sum()
}

/// Whether `matrix` fits in one cache. MDC sizes are compared multiplied by
/// Q so that fractional description sizes stay exact.
pub fn fits(inst: &Instance, matrix: &ChunkMatrix) -> bool {
    let capacity = inst.capacity() as u128;
    match inst.chunking() {
        Chunking::Layered { layers } => {
            let used: u128 = matrix.stored().map(|(j, q)| layers[j][q] as u128).sum();
            used <= capacity
        }
        Chunking::Described {
            video_sizes,
            descriptions,
            ..
        } => {
            let used: u128 = matrix.stored().map(|(j, _)| video_sizes[j] as u128).sum();
            used <= capacity * *descriptions as u128
        }
    }
}

/// Smallest local cost `cache` can reach by changing only its own matrix.
pub fn exhaustive_local_min(inst: &Instance, placement: &Placement, cache: usize) -> f64 {
    let vars = inst.videos() * inst.chunks();
    assert!(vars <= 24, "enumeration too large");
    (0..1u64 << vars)
        .map(|bits| ChunkMatrix::from_bits(inst.videos(), inst.chunks(), bits))
        .filter(|m| fits(inst, m))
        .map(|m| local_cost(inst, &placement.with_cache(cache, m), cache))
        .fold(f64::INFINITY, f64::min)
}

/// Simulates `draws` requests: region by coverage probability, video by
/// popularity, level by the region's quality pmf. Returns the sample mean of
/// the fetched bytes and its standard error.
pub fn simulate(inst: &Instance, placement: &Placement, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regions = inst.coverage().regions();
    let region_dist = WeightedIndex::new(regions.iter().map(|r| r.probability)).unwrap();
    let video_dist = WeightedIndex::new(inst.demand().popularity()).unwrap();
    let level_dists: Vec<WeightedIndex<f64>> = (0..regions.len())
        .map(|s| WeightedIndex::new(inst.demand().quality(s)).unwrap())
        .collect();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..draws {
        let s = region_dist.sample(&mut rng);
        let j = video_dist.sample(&mut rng);
        let rho = level_dists[s].sample(&mut rng);
        let c = request_cost(inst, placement, s, j, rho);
        sum += c;
        sum_sq += c * c;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Area of the intersection of two disks of radius `r` at distance `d`.
pub fn lens_area(r: f64, d: f64) -> f64 {
    if d >= 2.0 * r {
        return 0.0;
    }
    2.0 * r * r * (d / (2.0 * r)).acos() - 0.5 * d * (4.0 * r * r - d * d).sqrt()
}

/// Exact membership probabilities for intervals `[c - r, c + r]` on a line,
/// for a point uniform on their union. Returns (sorted members, probability).
pub fn interval_regions(intervals: &[(f64, f64)]) -> Vec<(Vec<usize>, f64)> {
    let mut cuts: Vec<f64> = intervals
        .iter()
        .flat_map(|&(c, r)| [c - r, c + r])
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut pieces: Vec<(Vec<usize>, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let members: Vec<usize> = intervals
            .iter()
            .enumerate()
            .filter(|(_, &(c, r))| (mid - c).abs() <= r)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        match pieces.iter_mut().find(|(m, _)| *m == members) {
            Some(piece) => piece.1 += w[1] - w[0],
            None => pieces.push((members, w[1] - w[0])),
        }
    }
    let total: f64 = pieces.iter().map(|(_, l)| l).sum();
    for piece in &mut pieces {
        piece.1 /= total;
    }
    pieces
}

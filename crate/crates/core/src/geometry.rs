//! Planar coverage model.
//!
//! Every cache covers a disk. A user standing at a point can reach exactly the
//! set of caches whose disks contain that point, so the covered area splits
//! into regions labelled by cache subsets. Region probabilities are the area
//! fractions of those cells, estimated by Monte Carlo sampling over the union
//! of disks. Only subsets actually hit by a sample are materialized.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard limit on the number of caches; region member sets are 64-bit masks.
pub const MAX_CACHES: usize = 64;

const SAMPLES_PER_BLOCK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// A base station with a cache and a circular coverage disk. Lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheSite {
    /// External identifier, 1-based and contiguous.
    pub id: u32,
    pub center: Point,
    pub radius: f64,
}

impl CacheSite {
    pub fn new(id: u32, x: f64, y: f64, radius: f64) -> Self {
        CacheSite {
            id,
            center: Point::new(x, y),
            radius,
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.center.dist2(p) <= self.radius * self.radius
    }
}

/// Checks ids are `1..=N` in order and radii are positive and finite.
pub fn validate_sites(sites: &[CacheSite]) -> Result<()> {
    if sites.is_empty() {
        return Err(Error::config(
            "topology.sites",
            "at least one cache site is required",
        ));
    }
    if sites.len() > MAX_CACHES {
        return Err(Error::config(
            "topology.sites",
            format!(
                "at most {MAX_CACHES} caches are supported, got {}",
                sites.len()
            ),
        ));
    }
    for (i, site) in sites.iter().enumerate() {
        if site.id as usize != i + 1 {
            return Err(Error::config(
                format!("topology.sites[{i}].id"),
                format!(
                    "site ids must be contiguous from 1, expected {} got {}",
                    i + 1,
                    site.id
                ),
            ));
        }
        if !(site.radius > 0.0 && site.radius.is_finite()) {
            return Err(Error::config(
                format!("topology.sites[{i}].radius"),
                format!("radius must be positive, got {}", site.radius),
            ));
        }
        if !(site.center.x.is_finite() && site.center.y.is_finite()) {
            return Err(Error::config(
                format!("topology.sites[{i}]"),
                "center coordinates must be finite",
            ));
        }
    }
    Ok(())
}

/// Cell of the coverage partition: the caches in `members` and no others.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    members: Vec<usize>,
    mask: u64,
    pub probability: f64,
}

impl Region {
    /// `members` are 0-based cache indices.
    pub fn new(members: &[usize], probability: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Precondition(
                "region member set must be nonempty".into(),
            ));
        }
        let mut mask = 0u64;
        for &m in members {
            if m >= MAX_CACHES {
                return Err(Error::Lookup {
                    kind: "cache",
                    index: m,
                    len: MAX_CACHES,
                });
            }
            mask |= 1 << m;
        }
        Ok(Region::from_mask(mask, probability))
    }

    fn from_mask(mask: u64, probability: f64) -> Self {
        let members = (0..MAX_CACHES).filter(|&i| mask >> i & 1 == 1).collect();
        Region {
            members,
            mask,
            probability,
        }
    }

    /// Sorted 0-based cache indices.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn cardinality(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, cache: usize) -> bool {
        cache < MAX_CACHES && self.mask >> cache & 1 == 1
    }

    /// `members` rendered with 1-based ids joined by '+', e.g. `1+3`.
    pub fn label(&self) -> String {
        self.members
            .iter()
            .map(|m| (m + 1).to_string())
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub samples: u64,
    pub seed: u64,
}

impl SamplerConfig {
    pub const DEFAULT_SAMPLES: u64 = 1_000_000;

    pub fn new(samples: u64, seed: u64) -> Self {
        SamplerConfig { samples, seed }
    }
}

#[derive(Debug, Clone)]
pub struct CoverageModel {
    caches: usize,
    sites: Vec<CacheSite>,
    regions: Vec<Region>,
    neighbor_sets: Vec<Vec<usize>>,
    regions_of: Vec<Vec<usize>>,
}

impl CoverageModel {
    /// Builds a model from an explicit region table, e.g. for synthetic test
    /// instances. Probabilities must sum to one within `1e-9`.
    pub fn from_regions(caches: usize, regions: Vec<Region>) -> Result<Self> {
        if caches == 0 || caches > MAX_CACHES {
            return Err(Error::Precondition(format!(
                "cache count must be in 1..={MAX_CACHES}, got {caches}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let mut total = 0.0;
        for r in &regions {
            if let Some(&bad) = r.members.iter().find(|&&m| m >= caches) {
                return Err(Error::Lookup {
                    kind: "cache",
                    index: bad,
                    len: caches,
                });
            }
            if !(0.0..=1.0).contains(&r.probability) {
                return Err(Error::Domain(format!(
                    "region {} has probability {}",
                    r.label(),
                    r.probability
                )));
            }
            if !seen.insert(r.mask) {
                return Err(Error::Precondition(format!(
                    "duplicate region {}",
                    r.label()
                )));
            }
            total += r.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "region probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self::assemble(caches, Vec::new(), regions))
    }

    fn assemble(caches: usize, sites: Vec<CacheSite>, regions: Vec<Region>) -> Self {
        let mut adjacency = vec![0u64; caches];
        let mut regions_of = vec![Vec::new(); caches];
        for (idx, r) in regions.iter().enumerate() {
            for &m in &r.members {
                adjacency[m] |= r.mask & !(1 << m);
                regions_of[m].push(idx);
            }
        }
        let neighbor_sets = adjacency
            .iter()
            .map(|&mask| (0..caches).filter(|&i| mask >> i & 1 == 1).collect())
            .collect();
        CoverageModel {
            caches,
            sites,
            regions,
            neighbor_sets,
            regions_of,
        }
    }

    pub fn cache_count(&self) -> usize {
        self.caches
    }

    /// Sites the model was built from; empty when built from a region table.
    pub fn sites(&self) -> &[CacheSite] {
        &self.sites
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Indices into [`regions`](Self::regions) of the regions containing `cache`.
    pub fn regions_of(&self, cache: usize) -> &[usize] {
        &self.regions_of[cache]
    }

    /// Caches sharing at least one materialized region with `cache`.
    pub fn neighbors(&self, cache: usize) -> Result<&[usize]> {
        self.neighbor_sets
            .get(cache)
            .map(Vec::as_slice)
            .ok_or(Error::Lookup {
                kind: "cache",
                index: cache,
                len: self.caches,
            })
    }

    pub fn are_neighbors(&self, a: usize, b: usize) -> bool {
        self.neighbor_sets
            .get(a)
            .is_some_and(|n| n.binary_search(&b).is_ok())
    }

    /// Unweighted mean of `|s|` over the materialized regions.
    pub fn mean_cardinality(&self) -> f64 {
        if self.regions.is_empty() {
            return 0.0;
        }
        let sum: usize = self.regions.iter().map(Region::cardinality).sum();
        sum as f64 / self.regions.len() as f64
    }

    /// Writes the region table as CSV with columns `members`, `p`.
    pub fn write_regions_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["members", "p"])?;
        for r in &self.regions {
            w.write_record([r.label(), format!("{:.12}", r.probability)])?;
        }
        w.flush().map_err(|e| Error::io("<regions csv>", e))?;
        Ok(())
    }
}

/// Estimates the coverage partition by sampling points uniformly over the
/// union of the disks.
///
/// Points are drawn from the bounding box of all disks and rejected when no
/// disk covers them. Sampling runs in fixed-size blocks, each with its own
/// ChaCha stream, so the result depends only on `sampler` and not on the
/// thread count.
pub fn build_coverage(sites: &[CacheSite], sampler: SamplerConfig) -> Result<CoverageModel> {
    validate_sites(sites)?;
    if sampler.samples == 0 {
        return Err(Error::config(
            "sampler.samples",
            "sample count must be positive",
        ));
    }
    let (lo, hi) = bounding_box(sites);
    let counts = sample_masks(sites, sampler, |rng| {
        Point::new(rng.gen_range(lo.x..=hi.x), rng.gen_range(lo.y..=hi.y))
    });
    Ok(CoverageModel::assemble(
        sites.len(),
        sites.to_vec(),
        regions_from_counts(counts, sampler.samples),
    ))
}

/// Same estimator as [`build_coverage`], restricted to the line through the
/// centers of collinear sites. Comparable to [`region_probabilities_exact_1d`].
pub fn sample_line_regions(sites: &[CacheSite], sampler: SamplerConfig) -> Result<Vec<Region>> {
    validate_sites(sites)?;
    let line = CenterLine::fit(sites)?;
    let (lo, hi) = line.extent(sites);
    let counts = sample_masks(sites, sampler, |rng| line.at(rng.gen_range(lo..=hi)));
    Ok(regions_from_counts(counts, sampler.samples))
}

fn bounding_box(sites: &[CacheSite]) -> (Point, Point) {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in sites {
        lo.x = lo.x.min(s.center.x - s.radius);
        lo.y = lo.y.min(s.center.y - s.radius);
        hi.x = hi.x.max(s.center.x + s.radius);
        hi.y = hi.y.max(s.center.y + s.radius);
    }
    (lo, hi)
}

fn covering_mask(sites: &[CacheSite], p: &Point) -> u64 {
    sites
        .iter()
        .enumerate()
        .filter(|(_, s)| s.contains(p))
        .fold(0, |mask, (i, _)| mask | 1 << i)
}

fn sample_masks<F>(sites: &[CacheSite], sampler: SamplerConfig, draw: F) -> BTreeMap<u64, u64>
where
    F: Fn(&mut ChaCha8Rng) -> Point + Sync,
{
    let blocks = sampler.samples.div_ceil(SAMPLES_PER_BLOCK);
    let partial: Vec<HashMap<u64, u64>> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
            rng.set_stream(block);
            let quota = SAMPLES_PER_BLOCK.min(sampler.samples - block * SAMPLES_PER_BLOCK);
            let mut counts = HashMap::new();
            let mut accepted = 0;
            while accepted < quota {
                let p = draw(&mut rng);
                let mask = covering_mask(sites, &p);
                if mask != 0 {
                    *counts.entry(mask).or_insert(0u64) += 1;
                    accepted += 1;
                }
            }
            counts
        })
        .collect();
    let mut merged = BTreeMap::new();
    for counts in partial {
        for (mask, n) in counts {
            *merged.entry(mask).or_insert(0) += n;
        }
    }
    merged
}

fn regions_from_counts(counts: BTreeMap<u64, u64>, total: u64) -> Vec<Region> {
    let mut regions: Vec<Region> = counts
        .into_iter()
        .map(|(mask, n)| Region::from_mask(mask, n as f64 / total as f64))
        .collect();
    regions.sort_by(|a, b| (a.cardinality(), &a.members).cmp(&(b.cardinality(), &b.members)));
    regions
}

struct CenterLine {
    origin: Point,
    dir: Point,
}

impl CenterLine {
    fn fit(sites: &[CacheSite]) -> Result<Self> {
        let origin = sites[0].center;
        let far = sites
            .iter()
            .map(|s| s.center)
            .max_by(|a, b| origin.dist2(a).total_cmp(&origin.dist2(b)))
            .unwrap_or(origin);
        let len = origin.dist2(&far).sqrt();
        let dir = if len > 0.0 {
            Point::new((far.x - origin.x) / len, (far.y - origin.y) / len)
        } else {
            Point::new(1.0, 0.0)
        };
        let scale = sites.iter().map(|s| s.radius).fold(len, f64::max);
        for (i, s) in sites.iter().enumerate() {
            let (dx, dy) = (s.center.x - origin.x, s.center.y - origin.y);
            let off = (dx * dir.y - dy * dir.x).abs();
            if off > 1e-9 * scale.max(1.0) {
                return Err(Error::Precondition(format!(
                    "site {} is {off} m off the line through the other centers",
                    i + 1
                )));
            }
        }
        Ok(CenterLine { origin, dir })
    }

    fn project(&self, p: &Point) -> f64 {
        (p.x - self.origin.x) * self.dir.x + (p.y - self.origin.y) * self.dir.y
    }

    fn at(&self, t: f64) -> Point {
        Point::new(
            self.origin.x + t * self.dir.x,
            self.origin.y + t * self.dir.y,
        )
    }

    fn extent(&self, sites: &[CacheSite]) -> (f64, f64) {
        sites
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                let t = self.project(&s.center);
                (lo.min(t - s.radius), hi.max(t + s.radius))
            })
    }
}

/// Exact region measures along the line through collinear site centers.
///
/// Each disk meets the line in an interval; the covered length is cut at
/// every interval endpoint and each piece is credited to the set of intervals
/// containing it. Probabilities are lengths relative to the covered length.
pub fn region_probabilities_exact_1d(sites: &[CacheSite]) -> Result<Vec<Region>> {
    validate_sites(sites)?;
    let line = CenterLine::fit(sites)?;
    let intervals: Vec<(f64, f64)> = sites
        .iter()
        .map(|s| {
            let t = line.project(&s.center);
            (t - s.radius, t + s.radius)
        })
        .collect();
    let mut cuts: Vec<f64> = intervals.iter().flat_map(|&(a, b)| [a, b]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut lengths: BTreeMap<u64, f64> = BTreeMap::new();
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let mask = intervals
            .iter()
            .enumerate()
            .filter(|(_, &(a, b))| a <= mid && mid <= b)
            .fold(0u64, |m, (i, _)| m | 1 << i);
        if mask != 0 {
            *lengths.entry(mask).or_insert(0.0) += w[1] - w[0];
        }
    }
    let covered: f64 = lengths.values().sum();
    let mut regions: Vec<Region> = lengths
        .into_iter()
        .map(|(mask, len)| Region::from_mask(mask, len / covered))
        .collect();
    regions.sort_by(|a, b| (a.cardinality(), &a.members).cmp(&(b.cardinality(), &b.members)));
    Ok(regions)
}

/// `count` sites placed uniformly at random in `[0, width] x [0, height]`.
pub fn synthetic_sites(
    count: usize,
    width: f64,
    height: f64,
    radius: f64,
    seed: u64,
) -> Vec<CacheSite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let x = rng.gen_range(0.0..=width);
            let y = rng.gen_range(0.0..=height);
            CacheSite::new(i as u32 + 1, x, y, radius)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probability_of(regions: &[Region], members: &[usize]) -> f64 {
        regions
            .iter()
            .find(|r| r.members() == members)
            .map_or(0.0, |r| r.probability)
    }

    #[test]
    fn single_disk_is_one_region() {
        let sites = [CacheSite::new(1, 3.0, -2.0, 7.5)];
        let model = build_coverage(&sites, SamplerConfig::new(10_000, 1)).unwrap();
        assert_eq!(model.regions().len(), 1);
        assert_eq!(model.regions()[0].members(), &[0]);
        assert_eq!(model.regions()[0].probability, 1.0);
        assert!(model.neighbors(0).unwrap().is_empty());
    }

    #[test]
    fn disjoint_disks_split_evenly() {
        let sites = [
            CacheSite::new(1, 0.0, 0.0, 1.0),
            CacheSite::new(2, 5.0, 0.0, 1.0),
        ];
        let samples = 200_000;
        let model = build_coverage(&sites, SamplerConfig::new(samples, 9)).unwrap();
        let tol = 3.0 / (samples as f64).sqrt();
        assert_eq!(model.regions().len(), 2);
        assert!((probability_of(model.regions(), &[0]) - 0.5).abs() < tol);
        assert!((probability_of(model.regions(), &[1]) - 0.5).abs() < tol);
        assert!(model.neighbors(0).unwrap().is_empty());
    }

    #[test]
    fn overlapping_disks_are_neighbors() {
        let sites = [
            CacheSite::new(1, 0.0, 0.0, 1.0),
            CacheSite::new(2, 1.0, 0.0, 1.0),
        ];
        let model = build_coverage(&sites, SamplerConfig::new(50_000, 2)).unwrap();
        assert_eq!(model.neighbors(0).unwrap(), &[1]);
        assert_eq!(model.neighbors(1).unwrap(), &[0]);
    }

    #[test]
    fn chain_neighbors() {
        let sites = [
            CacheSite::new(1, 0.0, 0.0, 1.0),
            CacheSite::new(2, 1.5, 0.0, 1.0),
            CacheSite::new(3, 3.0, 0.0, 1.0),
        ];
        let model = build_coverage(&sites, SamplerConfig::new(100_000, 3)).unwrap();
        assert_eq!(model.neighbors(1).unwrap(), &[0, 2]);
        assert_eq!(model.neighbors(0).unwrap(), &[1]);
        assert_eq!(model.neighbors(2).unwrap(), &[1]);
    }

    #[test]
    fn unknown_cache_lookup_fails() {
        let sites = [CacheSite::new(1, 0.0, 0.0, 1.0)];
        let model = build_coverage(&sites, SamplerConfig::new(100, 3)).unwrap();
        assert!(matches!(model.neighbors(1), Err(Error::Lookup { .. })));
    }

    #[test]
    fn empty_sites_rejected() {
        assert!(matches!(
            build_coverage(&[], SamplerConfig::new(10, 0)),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn non_contiguous_ids_rejected() {
        let sites = [
            CacheSite::new(1, 0.0, 0.0, 1.0),
            CacheSite::new(3, 1.0, 0.0, 1.0),
        ];
        assert!(build_coverage(&sites, SamplerConfig::new(10, 0)).is_err());
    }

    #[test]
    fn exact_1d_examples() {
        let two = [
            CacheSite::new(1, 0.0, 0.0, 1.0),
            CacheSite::new(2, 1.0, 0.0, 1.0),
        ];
        let r = region_probabilities_exact_1d(&two).unwrap();
        for members in [&[0][..], &[1], &[0, 1]] {
            assert!((probability_of(&r, members) - 1.0 / 3.0).abs() < 1e-12);
        }

        let one = [CacheSite::new(1, 4.0, 4.0, 2.0)];
        let r = region_probabilities_exact_1d(&one).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].probability, 1.0);

        let apart = [
            CacheSite::new(1, 0.0, 0.0, 1.0),
            CacheSite::new(2, 3.0, 0.0, 1.0),
        ];
        let r = region_probabilities_exact_1d(&apart).unwrap();
        assert!((probability_of(&r, &[0]) - 0.5).abs() < 1e-12);
        assert!((probability_of(&r, &[1]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exact_1d_rejects_non_collinear() {
        let sites = [
            CacheSite::new(1, 0.0, 0.0, 1.0),
            CacheSite::new(2, 1.0, 0.0, 1.0),
            CacheSite::new(3, 0.5, 1.0, 1.0),
        ];
        assert!(matches!(
            region_probabilities_exact_1d(&sites),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn from_regions_validates() {
        let ok = CoverageModel::from_regions(
            2,
            vec![
                Region::new(&[0], 0.25).unwrap(),
                Region::new(&[0, 1], 0.75).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(ok.neighbors(1).unwrap(), &[0]);
        assert_eq!(ok.regions_of(0), &[0, 1]);

        let bad_sum = CoverageModel::from_regions(1, vec![Region::new(&[0], 0.5).unwrap()]);
        assert!(matches!(bad_sum, Err(Error::Domain(_))));
        let out_of_range = CoverageModel::from_regions(1, vec![Region::new(&[1], 1.0).unwrap()]);
        assert!(matches!(out_of_range, Err(Error::Lookup { .. })));
    }

    #[test]
    fn regions_csv_format() {
        let model = CoverageModel::from_regions(
            3,
            vec![
                Region::new(&[0], 0.5).unwrap(),
                Region::new(&[0, 2], 0.5).unwrap(),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        model.write_regions_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "members,p\n1,0.500000000000\n1+3,0.500000000000\n");
    }

    #[test]
    fn mean_cardinality_is_unweighted() {
        let model = CoverageModel::from_regions(
            2,
            vec![
                Region::new(&[0], 0.9).unwrap(),
                Region::new(&[0, 1], 0.1).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(model.mean_cardinality(), 1.5);
    }
}

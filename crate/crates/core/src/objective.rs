//! Placements and residual bandwidth.
//!
//! The residual bandwidth is the expected number of bytes per request that
//! have to come from the gateway because no cache reachable by the user holds
//! the needed chunks. Costs are reported in bytes per request.

use std::io::{Read, Write};

use serde::Serialize;

use crate::catalog::{Chunking, DemandModel, Mechanism};
use crate::error::{Error, Result};
use crate::geometry::CoverageModel;

/// Binary chunk matrix of one cache: bit `q` of `rows[j]` is `b_{j,q}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChunkMatrix {
    chunks: usize,
    rows: Vec<u64>,
}

impl ChunkMatrix {
    pub fn empty(videos: usize, chunks: usize) -> Self {
        assert!(chunks <= 64, "at most 64 chunks per video");
        ChunkMatrix {
            chunks,
            rows: vec![0; videos],
        }
    }

    pub fn full(videos: usize, chunks: usize) -> Self {
        let mut m = Self::empty(videos, chunks);
        let all = m.full_row();
        m.rows.iter_mut().for_each(|r| *r = all);
        m
    }

    /// Builds from a bit index `j * chunks + q`, used for enumeration.
    pub fn from_bits(videos: usize, chunks: usize, bits: u64) -> Self {
        let mut m = Self::empty(videos, chunks);
        for j in 0..videos {
            m.rows[j] = (bits >> (j * chunks)) & m.full_row();
        }
        m
    }

    pub fn videos(&self) -> usize {
        self.rows.len()
    }

    pub fn chunks(&self) -> usize {
        self.chunks
    }

    pub fn full_row(&self) -> u64 {
        if self.chunks == 64 {
            u64::MAX
        } else {
            (1u64 << self.chunks) - 1
        }
    }

    pub fn get(&self, video: usize, chunk: usize) -> bool {
        self.rows[video] >> chunk & 1 == 1
    }

    pub fn set(&mut self, video: usize, chunk: usize, stored: bool) {
        if stored {
            self.rows[video] |= 1 << chunk;
        } else {
            self.rows[video] &= !(1 << chunk);
        }
    }

    pub fn row(&self, video: usize) -> u64 {
        self.rows[video]
    }

    pub fn stored_count(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|&r| r == 0)
    }

    /// Stored `(video, chunk)` pairs in video-major order.
    pub fn stored(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().enumerate().flat_map(move |(j, &row)| {
            (0..self.chunks)
                .filter(move |&q| row >> q & 1 == 1)
                .map(move |q| (j, q))
        })
    }
}

/// Read access to cache contents. Lets best responses run against a view that
/// exposes only part of the network.
pub trait PlacementView {
    fn cache_count(&self) -> usize;
    fn matrix(&self, cache: usize) -> &ChunkMatrix;
}

/// Network-wide placement: one [`ChunkMatrix`] per cache.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Placement {
    caches: Vec<ChunkMatrix>,
}

impl Placement {
    pub fn empty(caches: usize, videos: usize, chunks: usize) -> Self {
        Placement {
            caches: vec![ChunkMatrix::empty(videos, chunks); caches],
        }
    }

    pub fn from_matrices(caches: Vec<ChunkMatrix>) -> Result<Self> {
        if let Some(first) = caches.first() {
            if caches
                .iter()
                .any(|c| c.videos() != first.videos() || c.chunks() != first.chunks())
            {
                return Err(Error::Shape(
                    "all caches must share one matrix shape".into(),
                ));
            }
        }
        Ok(Placement { caches })
    }

    pub fn caches(&self) -> &[ChunkMatrix] {
        &self.caches
    }

    pub fn cache(&self, cache: usize) -> &ChunkMatrix {
        &self.caches[cache]
    }

    /// Copy of `self` with `cache` replaced.
    pub fn with_cache(&self, cache: usize, matrix: ChunkMatrix) -> Self {
        let mut next = self.clone();
        next.set_cache(cache, matrix);
        next
    }

    pub fn set_cache(&mut self, cache: usize, matrix: ChunkMatrix) {
        self.caches[cache] = matrix;
    }
}

impl PlacementView for Placement {
    fn cache_count(&self) -> usize {
        self.caches.len()
    }

    fn matrix(&self, cache: usize) -> &ChunkMatrix {
        &self.caches[cache]
    }
}

/// Residual bandwidth with its split over regions and videos.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub total: f64,
    /// Indexed like `CoverageModel::regions`; zero for regions not summed.
    pub per_region: Vec<f64>,
    pub per_video: Vec<f64>,
}

/// Everything needed to price a placement, with the per-region request
/// weights precomputed.
#[derive(Debug, Clone)]
pub struct Instance {
    coverage: CoverageModel,
    demand: DemandModel,
    chunking: Chunking,
    capacity: u64,
    budget: u128,
    terms: Terms,
}

#[derive(Debug, Clone)]
enum Terms {
    /// `weight[s][j * Q + q] = p_s a_j w_{j,q} sum_{rho >= q} f_s(rho)`.
    Layered { weight: Vec<Vec<f64>> },
    /// `coef[s][j] = p_s a_j w_j / Q`,
    /// `shortfall[s][x] = sum_rho f_s(rho) max(0, D_rho - Q + x)` for `x` missing descriptions,
    /// `gain[s][x] = sum_rho f_s(rho) 1(D_rho - Q + x > 0)`, the drop in shortfall from `x` to `x - 1`.
    Described {
        coef: Vec<Vec<f64>>,
        shortfall: Vec<Vec<f64>>,
        gain: Vec<Vec<f64>>,
    },
}

impl Instance {
    /// `capacity` is the per-cache capacity `K` in bytes.
    pub fn new(
        coverage: CoverageModel,
        demand: DemandModel,
        chunking: Chunking,
        capacity: u64,
    ) -> Result<Self> {
        if demand.regions() != coverage.regions().len() {
            return Err(Error::Shape(format!(
                "demand has {} region pmfs but coverage has {} regions",
                demand.regions(),
                coverage.regions().len()
            )));
        }
        if demand.videos() != chunking.videos() {
            return Err(Error::Shape(format!(
                "demand covers {} videos, chunking {}",
                demand.videos(),
                chunking.videos()
            )));
        }
        if demand.levels() != chunking.levels() {
            return Err(Error::Shape(format!(
                "demand has {} quality levels, chunking {}",
                demand.levels(),
                chunking.levels()
            )));
        }
        let terms = Terms::build(&coverage, &demand, &chunking);
        let budget = chunking.budget(capacity);
        Ok(Instance {
            coverage,
            demand,
            chunking,
            capacity,
            budget,
            terms,
        })
    }

    pub fn coverage(&self) -> &CoverageModel {
        &self.coverage
    }

    pub fn demand(&self) -> &DemandModel {
        &self.demand
    }

    pub fn chunking(&self) -> &Chunking {
        &self.chunking
    }

    pub fn mechanism(&self) -> Mechanism {
        self.chunking.mechanism()
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Capacity in chunk-cost units (see [`Chunking::chunk_cost`]).
    pub fn budget(&self) -> u128 {
        self.budget
    }

    pub fn caches(&self) -> usize {
        self.coverage.cache_count()
    }

    pub fn videos(&self) -> usize {
        self.chunking.videos()
    }

    pub fn chunks(&self) -> usize {
        self.chunking.chunks()
    }

    pub fn empty_placement(&self) -> Placement {
        Placement::empty(self.caches(), self.videos(), self.chunks())
    }

    pub fn empty_matrix(&self) -> ChunkMatrix {
        ChunkMatrix::empty(self.videos(), self.chunks())
    }

    pub fn capacity_units(&self, matrix: &ChunkMatrix) -> u128 {
        matrix
            .stored()
            .map(|(j, q)| self.chunking.chunk_cost(j, q) as u128)
            .sum()
    }

    /// Bytes held by `matrix`.
    pub fn capacity_used(&self, matrix: &ChunkMatrix) -> f64 {
        self.chunking.units_to_bytes(self.capacity_units(matrix))
    }

    pub fn check_shape(&self, view: &impl PlacementView) -> Result<()> {
        if view.cache_count() != self.caches() {
            return Err(Error::Shape(format!(
                "placement has {} caches, instance {}",
                view.cache_count(),
                self.caches()
            )));
        }
        Ok(())
    }

    fn check_matrix(&self, cache: usize, matrix: &ChunkMatrix) -> Result<()> {
        if matrix.videos() != self.videos() || matrix.chunks() != self.chunks() {
            return Err(Error::Shape(format!(
                "cache {cache} matrix is {}x{}, expected {}x{}",
                matrix.chunks(),
                matrix.videos(),
                self.chunks(),
                self.videos()
            )));
        }
        let used = self.capacity_units(matrix);
        if used > self.budget {
            return Err(Error::Capacity {
                cache,
                used,
                budget: self.budget,
            });
        }
        Ok(())
    }

    pub fn check_feasible(&self, placement: &Placement) -> Result<()> {
        self.check_shape(placement)?;
        placement
            .caches()
            .iter()
            .enumerate()
            .try_for_each(|(m, b)| self.check_matrix(m, b))
    }

    /// `zeta^(m)(j, q)`: true iff no cache of `region` other than `cache` stores `(j, q)`.
    pub fn zeta(
        &self,
        view: &impl PlacementView,
        cache: usize,
        region: usize,
        video: usize,
        chunk: usize,
    ) -> Result<bool> {
        let r = self.coverage.regions().get(region).ok_or(Error::Lookup {
            kind: "region",
            index: region,
            len: self.coverage.regions().len(),
        })?;
        if !r.contains(cache) {
            return Err(Error::Precondition(format!(
                "cache {} is not a member of region {}",
                cache + 1,
                r.label()
            )));
        }
        Ok(r.members()
            .iter()
            .filter(|&&l| l != cache)
            .all(|&l| !view.matrix(l).get(video, chunk)))
    }

    /// OR of the rows for `video` over the caches of `region`, skipping `skip`.
    pub(crate) fn region_union(
        &self,
        view: &impl PlacementView,
        region: usize,
        video: usize,
        skip: Option<usize>,
    ) -> u64 {
        self.coverage.regions()[region]
            .members()
            .iter()
            .filter(|&&l| Some(l) != skip)
            .fold(0, |acc, &l| acc | view.matrix(l).row(video))
    }

    pub(crate) fn full_row(&self) -> u64 {
        if self.chunks() == 64 {
            u64::MAX
        } else {
            (1u64 << self.chunks()) - 1
        }
    }

    /// Cost of region `s`, video `j` given the mask of chunks nobody in `s` holds.
    pub(crate) fn term(&self, region: usize, video: usize, uncovered: u64) -> f64 {
        match &self.terms {
            Terms::Layered { weight } => {
                let q = self.chunks();
                let w = &weight[region][video * q..(video + 1) * q];
                (0..q)
                    .filter(|&i| uncovered >> i & 1 == 1)
                    .map(|i| w[i])
                    .sum()
            }
            Terms::Described {
                coef, shortfall, ..
            } => coef[region][video] * shortfall[region][uncovered.count_ones() as usize],
        }
    }

    /// Layered weight of layer `chunk` of `video` in `region`.
    pub(crate) fn layer_weight(&self, region: usize, video: usize, chunk: usize) -> f64 {
        match &self.terms {
            Terms::Layered { weight } => weight[region][video * self.chunks() + chunk],
            Terms::Described { .. } => 0.0,
        }
    }

    /// `(coef, gain)` for description-coded terms; see [`Terms::Described`].
    pub(crate) fn description_gain(&self, region: usize, video: usize) -> (f64, &[f64]) {
        match &self.terms {
            Terms::Described { coef, gain, .. } => (coef[region][video], &gain[region]),
            Terms::Layered { .. } => (0.0, &[]),
        }
    }

    /// Global residual bandwidth `f(B)` for the instance's mechanism.
    pub fn residual(&self, placement: &Placement) -> Result<CostBreakdown> {
        self.check_feasible(placement)?;
        let regions = self.coverage.regions().len();
        let mut out = CostBreakdown::zeros(regions, self.videos());
        let full = self.full_row();
        for s in 0..regions {
            for j in 0..self.videos() {
                let uncovered = full & !self.region_union(placement, s, j, None);
                out.add(s, j, self.term(s, j, uncovered));
            }
        }
        out.finish();
        Ok(out)
    }

    pub fn residual_lc(&self, placement: &Placement) -> Result<CostBreakdown> {
        self.expect(Mechanism::Lc)?;
        self.residual(placement)
    }

    pub fn residual_mdc(&self, placement: &Placement) -> Result<CostBreakdown> {
        self.expect(Mechanism::Mdc)?;
        self.residual(placement)
    }

    /// Local residual bandwidth `f^(m)`: the regions containing `cache`, with
    /// each chunk priced by `(1 - b^(m)) * zeta^(m)`.
    pub fn local(&self, view: &impl PlacementView, cache: usize) -> Result<CostBreakdown> {
        self.check_shape(view)?;
        if cache >= self.caches() {
            return Err(Error::Lookup {
                kind: "cache",
                index: cache,
                len: self.caches(),
            });
        }
        self.check_matrix(cache, view.matrix(cache))?;
        Ok(self.local_unchecked(view, cache, view.matrix(cache)))
    }

    pub fn local_lc(&self, view: &impl PlacementView, cache: usize) -> Result<CostBreakdown> {
        self.expect(Mechanism::Lc)?;
        self.local(view, cache)
    }

    pub fn local_mdc(&self, view: &impl PlacementView, cache: usize) -> Result<CostBreakdown> {
        self.expect(Mechanism::Mdc)?;
        self.local(view, cache)
    }

    /// Local cost of `cache` if it held `own` instead of its current matrix.
    pub(crate) fn local_unchecked(
        &self,
        view: &impl PlacementView,
        cache: usize,
        own: &ChunkMatrix,
    ) -> CostBreakdown {
        let mut out = CostBreakdown::zeros(self.coverage.regions().len(), self.videos());
        let full = self.full_row();
        for &s in self.coverage.regions_of(cache) {
            for j in 0..self.videos() {
                let open = full & !self.region_union(view, s, j, Some(cache));
                out.add(s, j, self.term(s, j, open & !own.row(j)));
            }
        }
        out.finish();
        out
    }

    pub(crate) fn local_total(
        &self,
        view: &impl PlacementView,
        cache: usize,
        own: &ChunkMatrix,
    ) -> f64 {
        self.local_unchecked(view, cache, own).total
    }

    /// Expected size of a request: the residual bandwidth with every cache empty.
    pub fn expected_request_size(&self) -> f64 {
        let mut total = 0.0;
        for (s, region) in self.coverage.regions().iter().enumerate() {
            let pmf = self.demand.quality(s);
            for (j, a) in self.demand.popularity().iter().enumerate() {
                let size: f64 = pmf
                    .iter()
                    .enumerate()
                    .map(|(rho, f)| f * self.chunking.requested_size(j, rho))
                    .sum();
                total += region.probability * a * size;
            }
        }
        total
    }

    fn expect(&self, mechanism: Mechanism) -> Result<()> {
        if self.mechanism() != mechanism {
            return Err(Error::Precondition(format!(
                "instance uses {} chunking, {} objective requested",
                self.mechanism(),
                mechanism
            )));
        }
        Ok(())
    }
}

impl Terms {
    fn build(coverage: &CoverageModel, demand: &DemandModel, chunking: &Chunking) -> Self {
        let regions = coverage.regions();
        let popularity = demand.popularity();
        match chunking {
            Chunking::Layered { layers } => {
                let q = chunking.chunks();
                let weight = regions
                    .iter()
                    .enumerate()
                    .map(|(s, r)| {
                        let pmf = demand.quality(s);
                        // tail[q] = P(rho >= q)
                        let mut tail = vec![0.0; q + 1];
                        for i in (0..q).rev() {
                            tail[i] = tail[i + 1] + pmf[i];
                        }
                        let mut row = Vec::with_capacity(popularity.len() * q);
                        for (j, a) in popularity.iter().enumerate() {
                            for i in 0..q {
                                row.push(r.probability * a * layers[j][i] as f64 * tail[i]);
                            }
                        }
                        row
                    })
                    .collect();
                Terms::Layered { weight }
            }
            Chunking::Described {
                video_sizes,
                descriptions,
                required,
            } => {
                let q = *descriptions;
                let coef = regions
                    .iter()
                    .map(|r| {
                        popularity
                            .iter()
                            .zip(video_sizes)
                            .map(|(a, &w)| r.probability * a * w as f64 / q as f64)
                            .collect()
                    })
                    .collect();
                let shortfall = (0..regions.len())
                    .map(|s| {
                        let pmf = demand.quality(s);
                        (0..=q)
                            .map(|missing| {
                                pmf.iter()
                                    .zip(required)
                                    .map(|(f, &d)| f * (d + missing).saturating_sub(q) as f64)
                                    .sum()
                            })
                            .collect()
                    })
                    .collect();
                let gain = (0..regions.len())
                    .map(|s| {
                        let pmf = demand.quality(s);
                        (0..=q)
                            .map(|missing| {
                                pmf.iter()
                                    .zip(required)
                                    .map(|(f, &d)| if d + missing > q { *f } else { 0.0 })
                                    .sum()
                            })
                            .collect()
                    })
                    .collect();
                Terms::Described {
                    coef,
                    shortfall,
                    gain,
                }
            }
        }
    }
}

impl CostBreakdown {
    fn zeros(regions: usize, videos: usize) -> Self {
        CostBreakdown {
            total: 0.0,
            per_region: vec![0.0; regions],
            per_video: vec![0.0; videos],
        }
    }

    fn add(&mut self, region: usize, video: usize, value: f64) {
        self.per_region[region] += value;
        self.per_video[video] += value;
    }

    fn finish(&mut self) {
        self.total = self.per_region.iter().sum();
    }
}

/// Writes stored chunks as CSV rows `cache,video,chunk` with 1-based indices.
pub fn write_placement_csv<W: Write>(placement: &Placement, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cache", "video", "chunk"])?;
    for (m, matrix) in placement.caches().iter().enumerate() {
        for (j, q) in matrix.stored() {
            w.write_record([
                (m + 1).to_string(),
                (j + 1).to_string(),
                (q + 1).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<placement csv>", e))?;
    Ok(())
}

pub fn read_placement_csv<R: Read>(
    input: R,
    caches: usize,
    videos: usize,
    chunks: usize,
) -> Result<Placement> {
    #[derive(serde::Deserialize)]
    struct Row {
        cache: usize,
        video: usize,
        chunk: usize,
    }
    let mut placement = Placement::empty(caches, videos, chunks);
    for row in csv::Reader::from_reader(input).deserialize() {
        let Row {
            cache,
            video,
            chunk,
        } = row?;
        for (kind, v, n) in [
            ("cache", cache, caches),
            ("video", video, videos),
            ("chunk", chunk, chunks),
        ] {
            if v == 0 || v > n {
                return Err(Error::Lookup {
                    kind,
                    index: v,
                    len: n + 1,
                });
            }
        }
        placement.caches[cache - 1].set(video - 1, chunk - 1, true);
    }
    Ok(placement)
}

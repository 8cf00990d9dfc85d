//! Random order best response dynamics.
//!
//! The global residual bandwidth is an exact potential for the placement
//! game: a unilateral change moves it by the same amount as the mover's local
//! cost. Installing only strict local improvements therefore strictly lowers
//! the potential, and since there are finitely many placements the loop stops
//! at a profile where no cache can improve, i.e. a Nash equilibrium.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::Mechanism;
use crate::error::{Error, Result};
use crate::objective::{ChunkMatrix, Instance, Placement, PlacementView};
use crate::solver::{best_response, improves};

/// Scheduler PRNG, recorded in trace metadata.
pub const SCHEDULER_RNG: &str = "ChaCha8Rng/rand_chacha-0.3/gen_range-rand-0.8";

pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

/// Relative tolerance used when checking a trace.
pub const TRACE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    /// 0-based; written 1-based to CSV.
    pub cache: usize,
    pub f_global_before: f64,
    pub f_global_after: f64,
    pub f_local_before: f64,
    pub f_local_after: f64,
    /// Bytes held by `cache` after the step.
    pub capacity_used: f64,
}

impl TraceRecord {
    pub fn installed(&self) -> bool {
        self.f_local_after != self.f_local_before
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub mechanism: Mechanism,
    pub rng: String,
    pub policy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub meta: RunMetadata,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    /// Updates that changed a placement.
    pub fn effective_updates(&self) -> usize {
        self.records.iter().filter(|r| r.installed()).count()
    }

    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn final_cost(&self) -> Option<f64> {
        self.records.last().map(|r| r.f_global_after)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_trace_csv(&self.records, out)
    }
}

/// Placements, improvement flags and scheduler state of one run.
#[derive(Debug, Clone)]
pub struct GameState<'a> {
    inst: &'a Instance,
    placement: Placement,
    improvable: Vec<bool>,
    rng: ChaCha8Rng,
    iteration: u64,
    global: f64,
}

impl<'a> GameState<'a> {
    pub fn new(inst: &'a Instance, initial: Placement, seed: u64) -> Result<Self> {
        inst.check_feasible(&initial)?;
        let global = inst.residual(&initial)?.total;
        Ok(GameState {
            inst,
            placement: initial,
            improvable: vec![true; inst.caches()],
            rng: ChaCha8Rng::seed_from_u64(seed),
            iteration: 0,
            global,
        })
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn flags(&self) -> &[bool] {
        &self.improvable
    }

    pub fn converged(&self) -> bool {
        self.improvable.iter().all(|f| !f)
    }

    pub fn global_cost(&self) -> f64 {
        self.global
    }

    /// Schedules one uniformly drawn cache and applies its best response if
    /// that strictly lowers its local cost.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let cache = self.rng.gen_range(0..self.inst.caches());
        self.iteration += 1;
        self.improvable[cache] = false;
        let response = best_response(self.inst, &self.placement, cache)?;
        let before = self
            .inst
            .local_total(&self.placement, cache, self.placement.cache(cache));
        let after = self.inst.local_total(&self.placement, cache, &response);
        self.apply(cache, response, before, after)
    }

    fn apply(
        &mut self,
        cache: usize,
        response: ChunkMatrix,
        before: f64,
        after: f64,
    ) -> Result<TraceRecord> {
        let global_before = self.global;
        let (local_after, global_after) = if improves(after, before) {
            self.placement.set_cache(cache, response);
            self.global = self.inst.residual(&self.placement)?.total;
            self.improvable[cache] = true;
            for &n in self.inst.coverage().neighbors(cache)? {
                self.improvable[n] = true;
            }
            (after, self.global)
        } else {
            (before, global_before)
        };
        Ok(TraceRecord {
            iteration: self.iteration,
            cache,
            f_global_before: global_before,
            f_global_after: global_after,
            f_local_before: before,
            f_local_after: local_after,
            capacity_used: self.inst.capacity_used(self.placement.cache(cache)),
        })
    }
}

/// Random Order Best Response from `initial` until no cache can improve.
///
/// After an installed update the mover and all its neighbors are flagged for
/// another look; the run ends when every flag is clear.
pub fn robr(inst: &Instance, initial: Placement, seed: u64) -> Result<(Placement, Trace)> {
    robr_bounded(inst, initial, seed, DEFAULT_MAX_STEPS)
}

pub fn robr_bounded(
    inst: &Instance,
    initial: Placement,
    seed: u64,
    max_steps: u64,
) -> Result<(Placement, Trace)> {
    let mut state = GameState::new(inst, initial, seed)?;
    let mut records = Vec::new();
    while !state.converged() {
        if state.iteration >= max_steps {
            return Err(Error::NonConvergence {
                steps: state.iteration,
            });
        }
        records.push(state.step()?);
    }
    let meta = RunMetadata {
        seed,
        mechanism: inst.mechanism(),
        rng: SCHEDULER_RNG.into(),
        policy: "robr".into(),
        config_hash: None,
    };
    Ok((state.placement, Trace { meta, records }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashReport {
    pub is_nash: bool,
    /// First cache with a strictly improving best response and the change in
    /// its local cost (negative).
    pub witness: Option<(usize, f64)>,
}

/// Checks that no cache's best response strictly lowers its local cost.
pub fn is_nash(inst: &Instance, placement: &Placement) -> Result<NashReport> {
    inst.check_feasible(placement)?;
    for m in 0..inst.caches() {
        let response = best_response(inst, placement, m)?;
        let before = inst.local_total(placement, m, placement.cache(m));
        let after = inst.local_total(placement, m, &response);
        if improves(after, before) {
            return Ok(NashReport {
                is_nash: false,
                witness: Some((m, after - before)),
            });
        }
    }
    Ok(NashReport {
        is_nash: true,
        witness: None,
    })
}

/// Which caches act together in one step.
#[derive(Debug, Clone, PartialEq)]
pub enum Interleaving {
    /// One uniformly drawn cache per step; same draws as [`robr`].
    SingletonUniform,
    /// Cycle through the given batches; each batch must be an independent set
    /// of the neighbor graph and every cache must appear in some batch.
    Rounds(Vec<Vec<usize>>),
    /// Greedy coloring of the neighbor graph in index order, cycled.
    Coloring,
}

impl Interleaving {
    fn name(&self) -> String {
        match self {
            Interleaving::SingletonUniform => "singleton-uniform".into(),
            Interleaving::Rounds(r) => format!("rounds{r:?}"),
            Interleaving::Coloring => "coloring".into(),
        }
    }
}

/// Read access restricted to one cache and its neighbors. Reading any other
/// cache panics.
pub struct ScopedView<'a> {
    inner: &'a Placement,
    owner: usize,
    allowed: u64,
}

impl<'a> ScopedView<'a> {
    pub fn new(inst: &Instance, inner: &'a Placement, owner: usize) -> Result<Self> {
        let allowed = inst
            .coverage()
            .neighbors(owner)?
            .iter()
            .fold(1u64 << owner, |acc, &n| acc | 1 << n);
        Ok(ScopedView {
            inner,
            owner,
            allowed,
        })
    }
}

impl PlacementView for ScopedView<'_> {
    fn cache_count(&self) -> usize {
        self.inner.cache_count()
    }

    fn matrix(&self, cache: usize) -> &ChunkMatrix {
        assert!(
            cache < 64 && self.allowed >> cache & 1 == 1,
            "cache {} read the placement of non-neighbor cache {}",
            self.owner + 1,
            cache + 1
        );
        self.inner.matrix(cache)
    }
}

/// Greedy coloring of the neighbor graph; each color class is an independent set.
pub fn color_classes(inst: &Instance) -> Result<Vec<Vec<usize>>> {
    let n = inst.caches();
    let mut color = vec![usize::MAX; n];
    for m in 0..n {
        let taken: Vec<usize> = inst
            .coverage()
            .neighbors(m)?
            .iter()
            .map(|&l| color[l])
            .collect();
        color[m] = (0..).find(|c| !taken.contains(c)).expect("unbounded range");
    }
    let classes = color.iter().copied().max().map_or(0, |c| c + 1);
    Ok((0..classes)
        .map(|c| (0..n).filter(|&m| color[m] == c).collect())
        .collect())
}

fn validate_rounds(inst: &Instance, rounds: &[Vec<usize>]) -> Result<()> {
    let n = inst.caches();
    let mut seen = vec![false; n];
    for (r, batch) in rounds.iter().enumerate() {
        if batch.is_empty() {
            return Err(Error::Scheduling(format!("batch {r} is empty")));
        }
        for (i, &a) in batch.iter().enumerate() {
            if a >= n {
                return Err(Error::Scheduling(format!(
                    "batch {r} names unknown cache index {a}"
                )));
            }
            seen[a] = true;
            for &b in &batch[i + 1..] {
                if a == b || inst.coverage().are_neighbors(a, b) {
                    return Err(Error::Scheduling(format!(
                        "caches {} and {} in batch {r} overlap and cannot update together",
                        a + 1,
                        b + 1
                    )));
                }
            }
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Scheduling(format!(
            "cache {} is never scheduled",
            missing + 1
        )));
    }
    Ok(())
}

/// Asynchronous variant: caches in a batch compute best responses in
/// parallel against one snapshot, each through a [`ScopedView`] of its
/// neighborhood, and the results are installed one after another.
pub fn run_async_agents(
    inst: &Instance,
    initial: Placement,
    policy: &Interleaving,
    seed: u64,
) -> Result<(Placement, Trace)> {
    let rounds = match policy {
        Interleaving::SingletonUniform => None,
        Interleaving::Rounds(r) => {
            validate_rounds(inst, r)?;
            Some(r.clone())
        }
        Interleaving::Coloring => Some(color_classes(inst)?),
    };
    let mut state = GameState::new(inst, initial, seed)?;
    let mut records = Vec::new();
    let mut round = 0usize;
    while !state.converged() {
        if state.iteration >= DEFAULT_MAX_STEPS {
            return Err(Error::NonConvergence {
                steps: state.iteration,
            });
        }
        let batch: Vec<usize> = match &rounds {
            None => vec![state.rng.gen_range(0..inst.caches())],
            Some(r) => {
                let b = r[round % r.len()]
                    .iter()
                    .copied()
                    .filter(|&m| state.improvable[m])
                    .collect();
                round += 1;
                b
            }
        };
        if batch.is_empty() {
            continue;
        }
        state.iteration += 1;
        for &m in &batch {
            state.improvable[m] = false;
        }
        let snapshot = &state.placement;
        let responses = batch
            .par_iter()
            .map(|&m| {
                let view = ScopedView::new(inst, snapshot, m)?;
                let response = best_response(inst, &view, m)?;
                let before = inst.local_total(&view, m, view.matrix(m));
                let after = inst.local_total(&view, m, &response);
                Ok((m, response, before, after))
            })
            .collect::<Result<Vec<_>>>()?;
        for (m, response, before, after) in responses {
            records.push(state.apply(m, response, before, after)?);
        }
    }
    let meta = RunMetadata {
        seed,
        mechanism: inst.mechanism(),
        rng: SCHEDULER_RNG.into(),
        policy: policy.name(),
        config_hash: None,
    };
    Ok((state.placement, Trace { meta, records }))
}

const TRACE_HEADER: [&str; 7] = [
    "iteration",
    "cache",
    "f_global_before",
    "f_global_after",
    "f_local_before",
    "f_local_after",
    "capacity_used",
];

pub fn write_trace_csv<W: Write>(records: &[TraceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.iteration.to_string(),
            (r.cache + 1).to_string(),
            r.f_global_before.to_string(),
            r.f_global_after.to_string(),
            r.f_local_before.to_string(),
            r.f_local_after.to_string(),
            r.capacity_used.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trace csv>", e))?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Trace {
            record: 0,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<TraceRecord>().enumerate() {
        let mut r = row?;
        if r.cache == 0 {
            return Err(Error::Trace {
                record: i + 1,
                message: "cache ids are 1-based".into(),
            });
        }
        r.cache -= 1;
        records.push(r);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceCheck {
    pub records: usize,
    pub effective_updates: usize,
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
}

/// Re-validates a trace: each record's global delta matches its local delta,
/// the global cost never rises, and consecutive records chain.
pub fn verify_trace(records: &[TraceRecord]) -> Result<TraceCheck> {
    let fail = |i: usize, message: String| Error::Trace {
        record: i + 1,
        message,
    };
    for (i, r) in records.iter().enumerate() {
        let scale = r.f_global_before.abs().max(1.0);
        if r.f_global_after > r.f_global_before + TRACE_TOLERANCE * scale {
            return Err(fail(
                i,
                format!(
                    "global cost rose from {} to {}",
                    r.f_global_before, r.f_global_after
                ),
            ));
        }
        let global_delta = r.f_global_after - r.f_global_before;
        let local_delta = r.f_local_after - r.f_local_before;
        if (global_delta - local_delta).abs() > TRACE_TOLERANCE * scale {
            return Err(fail(
                i,
                format!("global delta {global_delta} differs from local delta {local_delta}"),
            ));
        }
        if let Some(next) = records.get(i + 1) {
            if (next.f_global_before - r.f_global_after).abs() > TRACE_TOLERANCE * scale {
                return Err(fail(
                    i + 1,
                    format!(
                        "starts at {} but the previous record ended at {}",
                        next.f_global_before, r.f_global_after
                    ),
                ));
            }
            if next.iteration < r.iteration {
                return Err(fail(i + 1, "iteration counter went backwards".into()));
            }
        }
    }
    Ok(TraceCheck {
        records: records.len(),
        effective_updates: records.iter().filter(|r| r.installed()).count(),
        initial_cost: records.first().map(|r| r.f_global_before),
        final_cost: records.last().map(|r| r.f_global_after),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Chunking, DemandModel, LcChunking};
    use crate::geometry::{CoverageModel, Region};

    fn chain_lc(capacity: u64) -> Instance {
        let coverage = CoverageModel::from_regions(
            3,
            vec![
                Region::new(&[0], 0.2).unwrap(),
                Region::new(&[1], 0.1).unwrap(),
                Region::new(&[2], 0.2).unwrap(),
                Region::new(&[0, 1], 0.25).unwrap(),
                Region::new(&[1, 2], 0.25).unwrap(),
            ],
        )
        .unwrap();
        let demand = DemandModel::new(vec![0.5, 0.3, 0.2], vec![vec![0.6, 0.4]; 5]).unwrap();
        let chunking = Chunking::layered(vec![
            LcChunking {
                layer_sizes: vec![1, 1]
            };
            3
        ])
        .unwrap();
        Instance::new(coverage, demand, chunking, capacity).unwrap()
    }

    #[test]
    fn single_cache_converges_in_two_steps() {
        let coverage =
            CoverageModel::from_regions(1, vec![Region::new(&[0], 1.0).unwrap()]).unwrap();
        let demand = DemandModel::new(vec![0.7, 0.3], vec![vec![0.5, 0.5]]).unwrap();
        let chunking = Chunking::layered(vec![
            LcChunking {
                layer_sizes: vec![1, 1]
            };
            2
        ])
        .unwrap();
        let inst = Instance::new(coverage, demand, chunking, 2).unwrap();
        let (b, trace) = robr(&inst, inst.empty_placement(), 5).unwrap();
        assert_eq!(trace.steps(), 2);
        assert_eq!(trace.effective_updates(), 1);
        assert!(is_nash(&inst, &b).unwrap().is_nash);
    }

    #[test]
    fn enough_capacity_stores_everything() {
        let inst = chain_lc(6);
        let (b, trace) = robr(&inst, inst.empty_placement(), 1).unwrap();
        assert_eq!(trace.final_cost(), Some(0.0));
        assert_eq!(inst.residual(&b).unwrap().total, 0.0);
    }

    #[test]
    fn empty_start_is_not_nash() {
        let inst = chain_lc(2);
        let report = is_nash(&inst, &inst.empty_placement()).unwrap();
        assert!(!report.is_nash);
        let (m, delta) = report.witness.unwrap();
        assert_eq!(m, 0);
        assert!(delta < 0.0);
    }

    #[test]
    fn full_storage_is_nash() {
        let inst = chain_lc(6);
        let b = Placement::from_matrices(vec![ChunkMatrix::full(3, 2); 3]).unwrap();
        assert!(is_nash(&inst, &b).unwrap().is_nash);
    }

    #[test]
    fn robr_is_seed_deterministic() {
        let inst = chain_lc(2);
        let (b1, t1) = robr(&inst, inst.empty_placement(), 42).unwrap();
        let (b2, t2) = robr(&inst, inst.empty_placement(), 42).unwrap();
        assert_eq!(b1, b2);
        assert_eq!(t1, t2);
        verify_trace(&t1.records).unwrap();
    }

    #[test]
    fn infeasible_start_rejected() {
        let inst = chain_lc(1);
        let b = Placement::from_matrices(vec![ChunkMatrix::full(3, 2); 3]).unwrap();
        assert!(matches!(robr(&inst, b, 0), Err(Error::Capacity { .. })));
    }

    #[test]
    fn singleton_policy_matches_robr() {
        let inst = chain_lc(3);
        let (b1, t1) = robr(&inst, inst.empty_placement(), 9).unwrap();
        let (b2, t2) = run_async_agents(
            &inst,
            inst.empty_placement(),
            &Interleaving::SingletonUniform,
            9,
        )
        .unwrap();
        assert_eq!(b1, b2);
        assert_eq!(t1.records, t2.records);
    }

    #[test]
    fn chain_rounds_converge() {
        let inst = chain_lc(2);
        let policy = Interleaving::Rounds(vec![vec![0, 2], vec![1]]);
        let (b, trace) = run_async_agents(&inst, inst.empty_placement(), &policy, 0).unwrap();
        assert!(is_nash(&inst, &b).unwrap().is_nash);
        verify_trace(&trace.records).unwrap();
        assert_eq!(color_classes(&inst).unwrap(), vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn overlapping_batch_rejected() {
        let inst = chain_lc(2);
        for bad in [
            vec![vec![0, 1], vec![2]],
            vec![vec![0, 2]],
            vec![vec![0, 5], vec![1]],
        ] {
            let r = run_async_agents(&inst, inst.empty_placement(), &Interleaving::Rounds(bad), 0);
            assert!(matches!(r, Err(Error::Scheduling(_))));
        }
    }

    #[test]
    #[should_panic(expected = "non-neighbor")]
    fn scoped_view_blocks_non_neighbors() {
        let inst = chain_lc(2);
        let b = inst.empty_placement();
        let view = ScopedView::new(&inst, &b, 0).unwrap();
        let _ = view.matrix(1);
        let _ = view.matrix(2);
    }

    #[test]
    fn trace_csv_round_trip_and_verify() {
        let inst = chain_lc(2);
        let (_, trace) = robr(&inst, inst.empty_placement(), 3).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(back, trace.records);
        let check = verify_trace(&back).unwrap();
        assert_eq!(check.effective_updates, trace.effective_updates());
    }

    #[test]
    fn verify_rejects_rising_cost() {
        let r = TraceRecord {
            iteration: 1,
            cache: 0,
            f_global_before: 1.0,
            f_global_after: 2.0,
            f_local_before: 1.0,
            f_local_after: 2.0,
            capacity_used: 0.0,
        };
        assert!(matches!(verify_trace(&[r]), Err(Error::Trace { .. })));
        let mismatch = TraceRecord {
            f_global_after: 0.5,
            f_local_after: 0.9,
            ..r
        };
        assert!(verify_trace(&[mismatch]).is_err());
    }
}

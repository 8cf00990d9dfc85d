//! Scenario runner for the two coding mechanisms under the three quality
//! trends, comparing the most-popular baseline with the ROBR equilibrium.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{
    lc_partition, mdc_partition, zipf_popularity, Chunking, DemandModel, Mechanism, Trend,
    TREND_LEVELS,
};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::game::{is_nash, robr, Trace};
use crate::geometry::{build_coverage, CoverageModel};
use crate::objective::{write_placement_csv, Instance, Placement};
use crate::solver::most_popular_placement;

/// One row of the experiment summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub mechanism: Mechanism,
    pub trend: Trend,
    /// Expected bytes per request with empty caches.
    pub expected_request_size: f64,
    pub baseline_f: f64,
    pub equilibrium_f: Option<f64>,
    pub steps: Option<usize>,
    pub effective_updates: Option<usize>,
    pub is_nash: Option<bool>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed_game: u64,
    pub seed_sampler: u64,
    pub samples: u64,
    pub caches: usize,
    pub rows: Vec<SummaryRow>,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub row: SummaryRow,
    pub baseline: Placement,
    pub equilibrium: Option<(Placement, Trace)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub coverage: CoverageModel,
    pub summary: Summary,
    pub scenarios: Vec<ScenarioOutcome>,
}

pub fn coverage_for(config: &ExperimentConfig) -> Result<CoverageModel> {
    build_coverage(&config.topology.sites(), config.sampler)
}

/// Chunking of the configured catalog under `mechanism`.
pub fn chunking_for(config: &ExperimentConfig, mechanism: Mechanism) -> Result<Chunking> {
    let table = &config.catalog.quality;
    match mechanism {
        Mechanism::Lc => Chunking::layered_uniform(&lc_partition(table), config.catalog.videos),
        Mechanism::Mdc => Chunking::described_uniform(
            &mdc_partition(table, &config.catalog.mdc)?,
            config.catalog.videos,
        ),
    }
}

pub fn instance_for(
    config: &ExperimentConfig,
    coverage: &CoverageModel,
    mechanism: Mechanism,
    trend: Trend,
) -> Result<Instance> {
    if config.catalog.quality.levels() != TREND_LEVELS {
        return Err(Error::config(
            "catalog.rates_mb_per_min",
            format!("quality trends are defined for {TREND_LEVELS} levels"),
        ));
    }
    let popularity = zipf_popularity(config.catalog.videos, config.catalog.zipf)?;
    let demand = DemandModel::from_trend(popularity, trend, coverage, TREND_LEVELS)?;
    Instance::new(
        coverage.clone(),
        demand,
        chunking_for(config, mechanism)?,
        config.capacity,
    )
}

/// Evaluates the baseline and, if `equilibrium` is set, runs ROBR from empty
/// caches.
pub fn run_scenario(
    config: &ExperimentConfig,
    coverage: &CoverageModel,
    mechanism: Mechanism,
    trend: Trend,
    equilibrium: bool,
) -> Result<ScenarioOutcome> {
    let started = Instant::now();
    let inst = instance_for(config, coverage, mechanism, trend)?;
    let baseline = most_popular_placement(&inst);
    let baseline_f = inst.residual(&baseline)?.total;
    let mut row = SummaryRow {
        mechanism,
        trend,
        expected_request_size: inst.expected_request_size(),
        baseline_f,
        equilibrium_f: None,
        steps: None,
        effective_updates: None,
        is_nash: None,
        wall_time_s: 0.0,
    };
    let equilibrium = if equilibrium {
        let (placement, mut trace) = robr(&inst, inst.empty_placement(), config.game_seed)?;
        trace.meta.config_hash = Some(config.content_hash());
        row.equilibrium_f = Some(inst.residual(&placement)?.total);
        row.steps = Some(trace.steps());
        row.effective_updates = Some(trace.effective_updates());
        row.is_nash = Some(is_nash(&inst, &placement)?.is_nash);
        Some((placement, trace))
    } else {
        None
    };
    row.wall_time_s = started.elapsed().as_secs_f64();
    Ok(ScenarioOutcome {
        row,
        baseline,
        equilibrium,
    })
}

/// Runs every configured (mechanism, trend) pair in parallel and writes all
/// outputs under `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_all(config, true)
}

/// Baseline-only variant of [`run_experiment`].
pub fn run_baseline(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_all(config, false)
}

fn run_all(config: &ExperimentConfig, equilibrium: bool) -> Result<ExperimentResult> {
    let coverage = coverage_for(config)?;
    let scenarios = config
        .scenarios()
        .into_par_iter()
        .map(|(m, t)| run_scenario(config, &coverage, m, t, equilibrium))
        .collect::<Result<Vec<_>>>()?;
    let summary = Summary {
        config_hash: config.content_hash(),
        seed_game: config.game_seed,
        seed_sampler: config.sampler.seed,
        samples: config.sampler.samples,
        caches: coverage.cache_count(),
        rows: scenarios.iter().map(|s| s.row.clone()).collect(),
    };
    let result = ExperimentResult {
        coverage,
        summary,
        scenarios,
    };
    write_outputs(&config.out, &result)?;
    Ok(result)
}

pub fn scenario_stem(mechanism: Mechanism, trend: Trend) -> String {
    format!("{mechanism}_{trend}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_coverage(dir: &Path, coverage: &CoverageModel) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("coverage.csv");
    let mut w = create(&path)?;
    coverage.write_regions_csv(&mut w)?;
    flush(w, &path)?;
    Ok(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    flush(w, path)
}

fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    write_coverage(dir, &result.coverage)?;
    for s in &result.scenarios {
        let stem = scenario_stem(s.row.mechanism, s.row.trend);
        let path = dir.join(format!("baseline_{stem}.csv"));
        let mut w = create(&path)?;
        write_placement_csv(&s.baseline, &mut w)?;
        flush(w, &path)?;
        if let Some((placement, trace)) = &s.equilibrium {
            let path = dir.join(format!("trace_{stem}.csv"));
            let mut w = create(&path)?;
            trace.write_csv(&mut w)?;
            flush(w, &path)?;
            write_json(&dir.join(format!("trace_{stem}.meta.json")), &trace.meta)?;
            let path = dir.join(format!("placement_{stem}.csv"));
            let mut w = create(&path)?;
            write_placement_csv(placement, &mut w)?;
            flush(w, &path)?;
        }
    }
    write_json(&dir.join("summary.json"), &result.summary)?;
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for row in &result.summary.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, Overrides};

    fn small(extra: &str, dir: &Path) -> ExperimentConfig {
        let text = format!(
            "[seeds]\ngame = 3\nsampler = 4\n[catalog]\nvideos = 12\n[sampler]\nsamples = 20000\n\
             [topology.synthetic]\ncount = 4\n{extra}"
        );
        let o = Overrides {
            out: Some(dir.to_path_buf()),
            ..Overrides::default()
        };
        parse_config(&text, Path::new("."), &o).unwrap()
    }

    #[test]
    fn zero_capacity_leaves_everything_to_the_backhaul() {
        let dir = tempfile::tempdir().unwrap();
        let config = small("[run]\ncapacity = 0\n", dir.path());
        let result = run_experiment(&config).unwrap();
        assert_eq!(result.summary.rows.len(), 6);
        for row in &result.summary.rows {
            let rel =
                (row.baseline_f - row.expected_request_size).abs() / row.expected_request_size;
            assert!(rel < 1e-12, "{rel}");
            assert_eq!(row.equilibrium_f, Some(row.baseline_f));
            assert_eq!(row.effective_updates, Some(0));
        }
    }

    #[test]
    fn writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let config = small(
            "[run]\ncapacity = \"2 GB\"\nmechanism = \"mdc\"\ntrend = \"linear\"\n",
            dir.path(),
        );
        let result = run_experiment(&config).unwrap();
        assert_eq!(result.summary.rows.len(), 1);
        assert_eq!(result.summary.rows[0].is_nash, Some(true));
        for name in [
            "coverage.csv",
            "summary.json",
            "summary.csv",
            "baseline_mdc_linear.csv",
            "trace_mdc_linear.csv",
            "trace_mdc_linear.meta.json",
            "placement_mdc_linear.csv",
        ] {
            assert!(dir.path().join(name).is_file(), "{name} missing");
        }
    }

    #[test]
    fn summary_values_are_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_experiment(&small("[run]\ncapacity = \"1 GB\"\n", a.path())).unwrap();
        let rb = run_experiment(&small("[run]\ncapacity = \"1 GB\"\n", b.path())).unwrap();
        for (x, y) in ra.summary.rows.iter().zip(&rb.summary.rows) {
            assert_eq!(x.baseline_f.to_bits(), y.baseline_f.to_bits());
            assert_eq!(
                x.equilibrium_f.map(f64::to_bits),
                y.equilibrium_f.map(f64::to_bits)
            );
            assert_eq!(x.steps, y.steps);
        }
    }
}

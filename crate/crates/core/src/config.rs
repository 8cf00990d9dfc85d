//! Experiment configuration.
//!
//! Configs are TOML. Only the two seeds are mandatory; everything else falls
//! back to the reference scenario (12 synthetic sites in a 1.95 x 1.74 km box
//! with 700 m coverage, 200 Zipf(1) videos of 40 minutes, five quality levels,
//! 6.54 GB caches). Sizes and lengths accept a bare number (bytes, meters) or
//! a string with a unit such as `"6.54 GB"` or `"1.95 km"`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{
    MdcRule, Mechanism, QualityTable, Trend, MAX_CHUNKS, REFERENCE_DURATION_MIN,
    REFERENCE_RATES_MB_PER_MIN,
};
use crate::error::{Error, Result};
use crate::geometry::{synthetic_sites, validate_sites, CacheSite, SamplerConfig};

pub const DEFAULT_SITE_COUNT: usize = 12;
pub const DEFAULT_BOX_WIDTH_M: f64 = 1950.0;
pub const DEFAULT_BOX_HEIGHT_M: f64 = 1740.0;
pub const DEFAULT_RADIUS_M: f64 = 700.0;
pub const DEFAULT_TOPOLOGY_SEED: u64 = 2019;
pub const DEFAULT_VIDEOS: usize = 200;
pub const DEFAULT_ZIPF: f64 = 1.0;
pub const DEFAULT_CAPACITY_BYTES: u64 = 6_540_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismChoice {
    Lc,
    Mdc,
    Both,
}

impl MechanismChoice {
    pub fn expand(self) -> Vec<Mechanism> {
        match self {
            MechanismChoice::Lc => vec![Mechanism::Lc],
            MechanismChoice::Mdc => vec![Mechanism::Mdc],
            MechanismChoice::Both => Mechanism::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendChoice {
    Uniform,
    Linear,
    Inverse,
    All,
}

impl TrendChoice {
    pub fn expand(self) -> Vec<Trend> {
        match self {
            TrendChoice::Uniform => vec![Trend::Uniform],
            TrendChoice::Linear => vec![Trend::Linear],
            TrendChoice::Inverse => vec![Trend::Inverse],
            TrendChoice::All => Trend::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Topology {
    Sites {
        sites: Vec<CacheSite>,
    },
    Synthetic {
        count: usize,
        width: f64,
        height: f64,
        radius: f64,
        seed: u64,
    },
}

impl Topology {
    pub fn sites(&self) -> Vec<CacheSite> {
        match self {
            Topology::Sites { sites } => sites.clone(),
            Topology::Synthetic {
                count,
                width,
                height,
                radius,
                seed,
            } => synthetic_sites(*count, *width, *height, *radius, *seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogConfig {
    pub videos: usize,
    pub zipf: f64,
    pub duration_min: f64,
    pub rates_mb_per_min: Vec<f64>,
    pub quality: QualityTable,
    pub mdc: MdcRule,
}

/// Fully resolved configuration: units are bytes and meters, sites loaded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub topology: Topology,
    pub catalog: CatalogConfig,
    pub sampler: SamplerConfig,
    pub game_seed: u64,
    pub capacity: u64,
    pub mechanism: MechanismChoice,
    pub trend: TrendChoice,
    #[serde(skip)]
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn scenarios(&self) -> Vec<(Mechanism, Trend)> {
        self.mechanism
            .expand()
            .into_iter()
            .flat_map(|m| self.trend.expand().into_iter().map(move |t| (m, t)))
            .collect()
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed_game: Option<u64>,
    pub seed_sampler: Option<u64>,
    pub out: Option<PathBuf>,
    pub mechanism: Option<MechanismChoice>,
    pub trend: Option<TrendChoice>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seeds: Option<RawSeeds>,
    topology: Option<RawTopology>,
    catalog: Option<RawCatalog>,
    sampler: Option<RawSampler>,
    run: Option<RawRun>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeeds {
    game: Option<u64>,
    sampler: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    sites: Option<Vec<RawSite>>,
    sites_file: Option<PathBuf>,
    synthetic: Option<RawSynthetic>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSite {
    id: u32,
    x: Quantity,
    y: Quantity,
    radius: Quantity,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSiteFile {
    sites: Vec<RawSite>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthetic {
    count: Option<usize>,
    width: Option<Quantity>,
    height: Option<Quantity>,
    radius: Option<Quantity>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    videos: Option<usize>,
    zipf: Option<f64>,
    duration_min: Option<f64>,
    rates_mb_per_min: Option<Vec<f64>>,
    mdc_granularity: Option<Quantity>,
    mdc_tolerance: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampler {
    samples: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    capacity: Option<Quantity>,
    mechanism: Option<MechanismChoice>,
    trend: Option<TrendChoice>,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Quantity {
    Number(f64),
    Text(String),
}

const BYTE_UNITS: [(&str, f64); 9] = [
    ("b", 1.0),
    ("kb", 1e3),
    ("mb", 1e6),
    ("gb", 1e9),
    ("tb", 1e12),
    ("kib", 1024.0),
    ("mib", 1024.0 * 1024.0),
    ("gib", 1024.0 * 1024.0 * 1024.0),
    ("bytes", 1.0),
];

const LENGTH_UNITS: [(&str, f64); 2] = [("m", 1.0), ("km", 1e3)];

fn split_unit(text: &str) -> Option<(f64, String)> {
    let text = text.trim();
    let split = text
        .find(|c: char| c.is_ascii_alphabetic())
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    let value = num.trim().parse::<f64>().ok()?;
    Some((value, unit.trim().to_ascii_lowercase()))
}

fn quantity(path: &str, q: &Quantity, units: &[(&str, f64)], kind: &str) -> Result<f64> {
    let value = match q {
        Quantity::Number(v) => *v,
        Quantity::Text(text) => {
            let (value, unit) = split_unit(text)
                .ok_or_else(|| Error::config(path, format!("cannot parse `{text}` as a {kind}")))?;
            if unit.is_empty() {
                value
            } else {
                let scale = units
                    .iter()
                    .find(|(u, _)| *u == unit)
                    .map(|(_, s)| *s)
                    .ok_or_else(|| {
                        Error::config(path, format!("unit `{unit}` is not a {kind} unit"))
                    })?;
                value * scale
            }
        }
    };
    if !value.is_finite() {
        return Err(Error::config(path, format!("{kind} must be finite")));
    }
    Ok(value)
}

fn bytes(path: &str, q: &Quantity) -> Result<u64> {
    let v = quantity(path, q, &BYTE_UNITS, "size")?;
    if v < 0.0 {
        return Err(Error::config(path, "size must be nonnegative"));
    }
    Ok(v.round() as u64)
}

fn meters(path: &str, q: &Quantity) -> Result<f64> {
    quantity(path, q, &LENGTH_UNITS, "length")
}

/// Reads, validates and normalizes a config file.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    load_config(path, &Overrides::default())
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, overrides)
}

/// Parses config text; relative file references resolve against `base`.
pub fn parse_config(text: &str, base: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let location = e
            .span()
            .map(|span| {
                let line = text[..span.start].matches('\n').count() + 1;
                format!("line {line}")
            })
            .unwrap_or_else(|| "<document>".into());
        Error::config(location, message)
    })?;
    normalize(raw, base, overrides)
}

fn normalize(raw: RawConfig, base: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let seeds = raw.seeds.unwrap_or_default();
    let game_seed = overrides.seed_game.or(seeds.game).ok_or_else(|| {
        Error::config(
            "seeds.game",
            "a game seed is required (config or --seed-game)",
        )
    })?;
    let sampler_seed = overrides.seed_sampler.or(seeds.sampler).ok_or_else(|| {
        Error::config(
            "seeds.sampler",
            "a sampler seed is required (config or --seed-sampler)",
        )
    })?;

    let topology = normalize_topology(raw.topology.unwrap_or_default(), base)?;
    let catalog = normalize_catalog(raw.catalog.unwrap_or_default())?;

    let samples = raw
        .sampler
        .and_then(|s| s.samples)
        .unwrap_or(SamplerConfig::DEFAULT_SAMPLES);
    if samples == 0 {
        return Err(Error::config(
            "sampler.samples",
            "sample count must be positive",
        ));
    }

    let run = raw.run.unwrap_or_default();
    let capacity = match &run.capacity {
        Some(q) => bytes("run.capacity", q)?,
        None => DEFAULT_CAPACITY_BYTES,
    };
    Ok(ExperimentConfig {
        topology,
        catalog,
        sampler: SamplerConfig::new(samples, sampler_seed),
        game_seed,
        capacity,
        mechanism: overrides
            .mechanism
            .or(run.mechanism)
            .unwrap_or(MechanismChoice::Both),
        trend: overrides.trend.or(run.trend).unwrap_or(TrendChoice::All),
        out: overrides
            .out
            .clone()
            .or(run.out)
            .unwrap_or_else(|| PathBuf::from("out")),
    })
}

fn normalize_sites(raw: &[RawSite], path: &str) -> Result<Vec<CacheSite>> {
    let sites = raw
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(CacheSite::new(
                s.id,
                meters(&format!("{path}[{i}].x"), &s.x)?,
                meters(&format!("{path}[{i}].y"), &s.y)?,
                meters(&format!("{path}[{i}].radius"), &s.radius)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_sites(&sites)?;
    Ok(sites)
}

fn normalize_topology(raw: RawTopology, base: &Path) -> Result<Topology> {
    let given = [
        raw.sites.is_some(),
        raw.sites_file.is_some(),
        raw.synthetic.is_some(),
    ];
    if given.iter().filter(|g| **g).count() > 1 {
        return Err(Error::config(
            "topology",
            "give only one of `sites`, `sites_file` and `synthetic`",
        ));
    }
    if let Some(sites) = raw.sites {
        return Ok(Topology::Sites {
            sites: normalize_sites(&sites, "topology.sites")?,
        });
    }
    if let Some(file) = raw.sites_file {
        let path = base.join(&file);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let parsed: RawSiteFile = toml::from_str(&text).map_err(|e| {
            Error::config(
                format!("topology.sites_file ({})", path.display()),
                e.message().to_string(),
            )
        })?;
        return Ok(Topology::Sites {
            sites: normalize_sites(&parsed.sites, "sites")?,
        });
    }
    let syn = raw.synthetic.unwrap_or_default();
    let count = syn.count.unwrap_or(DEFAULT_SITE_COUNT);
    let width = syn
        .width
        .map(|q| meters("topology.synthetic.width", &q))
        .transpose()?
        .unwrap_or(DEFAULT_BOX_WIDTH_M);
    let height = syn
        .height
        .map(|q| meters("topology.synthetic.height", &q))
        .transpose()?
        .unwrap_or(DEFAULT_BOX_HEIGHT_M);
    let radius = syn
        .radius
        .map(|q| meters("topology.synthetic.radius", &q))
        .transpose()?
        .unwrap_or(DEFAULT_RADIUS_M);
    if count == 0 || count > crate::geometry::MAX_CACHES {
        return Err(Error::config(
            "topology.synthetic.count",
            format!("site count must be in 1..={}", crate::geometry::MAX_CACHES),
        ));
    }
    if !(width >= 0.0 && height >= 0.0) {
        return Err(Error::config(
            "topology.synthetic",
            "box dimensions must be nonnegative",
        ));
    }
    if radius <= 0.0 {
        return Err(Error::config(
            "topology.synthetic.radius",
            "radius must be positive",
        ));
    }
    Ok(Topology::Synthetic {
        count,
        width,
        height,
        radius,
        seed: syn.seed.unwrap_or(DEFAULT_TOPOLOGY_SEED),
    })
}

fn normalize_catalog(raw: RawCatalog) -> Result<CatalogConfig> {
    let videos = raw.videos.unwrap_or(DEFAULT_VIDEOS);
    if videos == 0 {
        return Err(Error::config(
            "catalog.videos",
            "catalog must contain at least one video",
        ));
    }
    let zipf = raw.zipf.unwrap_or(DEFAULT_ZIPF);
    if !(zipf > 0.0 && zipf.is_finite()) {
        return Err(Error::Domain(format!(
            "catalog.zipf: Zipf exponent must be positive, got {zipf}"
        )));
    }
    let duration_min = raw.duration_min.unwrap_or(REFERENCE_DURATION_MIN);
    let rates = raw
        .rates_mb_per_min
        .unwrap_or_else(|| REFERENCE_RATES_MB_PER_MIN.to_vec());
    let quality = QualityTable::from_rates(&rates, duration_min).map_err(|e| match e {
        Error::Domain(m) => Error::Domain(format!("catalog.rates_mb_per_min: {m}")),
        other => other,
    })?;
    if quality.levels() > MAX_CHUNKS {
        return Err(Error::config(
            "catalog.rates_mb_per_min",
            "too many quality levels",
        ));
    }
    let defaults = MdcRule::default();
    let granularity = raw
        .mdc_granularity
        .map(|q| bytes("catalog.mdc_granularity", &q))
        .transpose()?
        .unwrap_or(defaults.granularity);
    if granularity == 0 {
        return Err(Error::config(
            "catalog.mdc_granularity",
            "granularity must be at least one byte",
        ));
    }
    let tolerance = raw.mdc_tolerance.unwrap_or(defaults.tolerance);
    if !(0.0..0.5).contains(&tolerance) {
        return Err(Error::config(
            "catalog.mdc_tolerance",
            "tolerance must lie in [0, 0.5)",
        ));
    }
    Ok(CatalogConfig {
        videos,
        zipf,
        duration_min,
        rates_mb_per_min: rates,
        quality,
        mdc: MdcRule {
            granularity,
            tolerance,
            max_descriptions: defaults.max_descriptions,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config(text, Path::new("."), &Overrides::default())
    }

    const MINIMAL: &str = "[seeds]\ngame = 1\nsampler = 2\n";

    #[test]
    fn minimal_config_uses_reference_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(
            c.topology,
            Topology::Synthetic {
                count: 12,
                width: 1950.0,
                height: 1740.0,
                radius: 700.0,
                seed: DEFAULT_TOPOLOGY_SEED,
            }
        );
        assert_eq!(c.catalog.videos, 200);
        assert_eq!(c.catalog.zipf, 1.0);
        assert_eq!(c.catalog.quality, QualityTable::reference());
        assert_eq!(c.catalog.mdc, MdcRule::default());
        assert_eq!(c.capacity, 6_540_000_000);
        assert_eq!(c.sampler, SamplerConfig::new(1_000_000, 2));
        assert_eq!(c.game_seed, 1);
        assert_eq!(c.scenarios().len(), 6);
    }

    #[test]
    fn missing_seed_is_an_error() {
        let err = parse("[seeds]\ngame = 1\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref path, .. } if path == "seeds.sampler"),
            "{err}"
        );
        assert!(parse("").is_err());
    }

    #[test]
    fn overrides_supply_seeds() {
        let o = Overrides {
            seed_game: Some(5),
            seed_sampler: Some(6),
            mechanism: Some(MechanismChoice::Lc),
            ..Overrides::default()
        };
        let c = parse_config("", Path::new("."), &o).unwrap();
        assert_eq!((c.game_seed, c.sampler.seed), (5, 6));
        assert_eq!(c.scenarios().len(), 3);
    }

    #[test]
    fn zero_zipf_is_a_domain_error() {
        let err = parse(&format!("{MINIMAL}[catalog]\nzipf = 0.0\n")).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse(&format!("{MINIMAL}[run]\ncapcity = 5\n")).unwrap_err();
        assert!(err.to_string().contains("capcity"), "{err}");
    }

    #[test]
    fn units_are_normalized() {
        let c = parse(&format!(
            "{MINIMAL}[run]\ncapacity = \"1.5 GB\"\n[topology.synthetic]\nwidth = \"2 km\"\nradius = 300\n"
        ))
        .unwrap();
        assert_eq!(c.capacity, 1_500_000_000);
        match c.topology {
            Topology::Synthetic { width, radius, .. } => {
                assert_eq!((width, radius), (2000.0, 300.0))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unit_mismatch_is_rejected() {
        let err = parse(&format!("{MINIMAL}[run]\ncapacity = \"700 m\"\n")).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path == "run.capacity"));
        let err = parse(&format!(
            "{MINIMAL}[topology.synthetic]\nradius = \"3 GB\"\n"
        ))
        .unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn inline_sites() {
        let c = parse(&format!(
            "{MINIMAL}[topology]\nsites = [{{ id = 1, x = 0, y = 0, radius = 10 }}, {{ id = 2, x = \"0.01 km\", y = 0, radius = 10 }}]\n"
        ))
        .unwrap();
        let sites = c.topology.sites();
        assert_eq!(sites.len(), 2);
        assert_eq!(sites[1].center.x, 10.0);
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.content_hash(), b.content_hash());
        let c = parse(&format!("{MINIMAL}[catalog]\nvideos = 20\n")).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }
}

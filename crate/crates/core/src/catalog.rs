//! Video library, request statistics and chunking.
//!
//! Sizes are integer bytes throughout (1 MB = 10^6 bytes). A [`QualityTable`]
//! lists the full size of a video at each quality level; layered coding cuts
//! it into one increment per level, multiple description coding into `Q`
//! equal descriptions of which `D_rho` are needed for level `rho`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CoverageModel;

pub const BYTES_PER_MB: f64 = 1e6;

/// Upper bound on chunks per video; a cache row is one 64-bit mask per video.
pub const MAX_CHUNKS: usize = 64;

/// Base sizes in MB per minute for 240p, 360p, 480p, 720p and 1080p.
pub const REFERENCE_RATES_MB_PER_MIN: [f64; 5] = [2.56, 4.30, 6.79, 15.49, 32.70];
pub const REFERENCE_DURATION_MIN: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Lc,
    Mdc,
}

impl Mechanism {
    pub const ALL: [Mechanism; 2] = [Mechanism::Lc, Mechanism::Mdc];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Lc => "lc",
            Mechanism::Mdc => "mdc",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lc" => Ok(Mechanism::Lc),
            "mdc" => Ok(Mechanism::Mdc),
            other => Err(Error::config(
                "mechanism",
                format!("unknown mechanism `{other}`"),
            )),
        }
    }
}

/// Cumulative video size per quality level, lowest quality first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityTable {
    sizes: Vec<u64>,
}

impl QualityTable {
    pub fn from_bytes(sizes: Vec<u64>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Domain(
                "quality table needs at least one level".into(),
            ));
        }
        if sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!(
                "quality sizes must be positive and strictly increasing, got {sizes:?}"
            )));
        }
        Ok(QualityTable { sizes })
    }

    /// Sizes from per-minute rates in MB/min and a duration in minutes.
    pub fn from_rates(rates_mb_per_min: &[f64], duration_min: f64) -> Result<Self> {
        if !(duration_min > 0.0 && duration_min.is_finite()) {
            return Err(Error::Domain(format!(
                "duration must be positive, got {duration_min}"
            )));
        }
        let sizes = rates_mb_per_min
            .iter()
            .map(|&rate| {
                if rate > 0.0 && rate.is_finite() {
                    Ok((rate * duration_min * BYTES_PER_MB).round() as u64)
                } else {
                    Err(Error::Domain(format!("rate must be positive, got {rate}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bytes(sizes)
    }

    /// 40-minute videos at the reference rates.
    pub fn reference() -> Self {
        Self::from_rates(&REFERENCE_RATES_MB_PER_MIN, REFERENCE_DURATION_MIN)
            .expect("reference table is valid")
    }

    pub fn levels(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn full_size(&self) -> u64 {
        *self.sizes.last().expect("nonempty")
    }
}

/// Layered partition: layer `q` is the increment from level `q - 1` to `q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LcChunking {
    pub layer_sizes: Vec<u64>,
}

pub fn lc_partition(table: &QualityTable) -> LcChunking {
    let mut prev = 0;
    let layer_sizes = table
        .sizes
        .iter()
        .map(|&s| {
            let layer = s - prev;
            prev = s;
            layer
        })
        .collect();
    LcChunking { layer_sizes }
}

/// Equal-size descriptions; any `required[rho]` distinct ones give level `rho`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MdcChunking {
    pub descriptions: usize,
    pub video_size: u64,
    pub required: Vec<usize>,
}

impl MdcChunking {
    /// `video_size / descriptions`; not necessarily a whole number of bytes.
    pub fn description_size(&self) -> f64 {
        self.video_size as f64 / self.descriptions as f64
    }
}

/// How the description count is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdcRule {
    /// Sizes are quantized to this many bytes before matching.
    pub granularity: u64,
    /// Largest accepted relative gap between a quality size and the nearest
    /// whole number of descriptions.
    pub tolerance: f64,
    pub max_descriptions: usize,
}

impl Default for MdcRule {
    fn default() -> Self {
        MdcRule {
            granularity: 10_000,
            tolerance: 0.02,
            max_descriptions: MAX_CHUNKS,
        }
    }
}

/// Picks the smallest description count `Q` for which every quality size is
/// within `rule.tolerance` of a whole number of descriptions, with the
/// resulting counts `D` strictly increasing from at least one. `D_R = Q`.
///
/// With zero tolerance this is the exact common-divisor partition:
/// `Q = size_R / gcd(sizes)` in granularity units.
pub fn mdc_partition(table: &QualityTable, rule: &MdcRule) -> Result<MdcChunking> {
    if rule.granularity == 0 {
        return Err(Error::Domain("MDC granularity must be positive".into()));
    }
    if !(rule.tolerance >= 0.0 && rule.tolerance < 0.5) {
        return Err(Error::Domain(format!(
            "MDC tolerance must lie in [0, 0.5), got {}",
            rule.tolerance
        )));
    }
    let units: Vec<u128> = table
        .sizes
        .iter()
        .map(|&s| ((s + rule.granularity / 2) / rule.granularity) as u128)
        .collect();
    if units[0] == 0 {
        return Err(Error::Partition(format!(
            "smallest quality size {} bytes is below the {} byte granularity",
            table.sizes[0], rule.granularity
        )));
    }
    let full = *units.last().expect("nonempty");
    'search: for q in 1..=rule.max_descriptions {
        let q_wide = q as u128;
        let mut required = Vec::with_capacity(units.len());
        for &u in &units {
            // nearest integer to u * q / full, halves rounded up
            let d = (2 * u * q_wide + full) / (2 * full);
            let gap = (d * full).abs_diff(u * q_wide) as f64;
            if d == 0 || gap > rule.tolerance * (u * q_wide) as f64 {
                continue 'search;
            }
            if required.last().is_some_and(|&prev| prev >= d as usize) {
                continue 'search;
            }
            required.push(d as usize);
        }
        return Ok(MdcChunking {
            descriptions: q,
            video_size: table.full_size(),
            required,
        });
    }
    Err(Error::Partition(format!(
        "no description count up to {} matches sizes {:?} within tolerance {}",
        rule.max_descriptions, table.sizes, rule.tolerance
    )))
}

/// Chunk layout of the whole library for one coding mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum Chunking {
    /// `layers[j][q]`: size of layer `q` of video `j`; `Q = R`.
    Layered { layers: Vec<Vec<u64>> },
    /// Every description of video `j` has size `video_sizes[j] / descriptions`.
    Described {
        video_sizes: Vec<u64>,
        descriptions: usize,
        required: Vec<usize>,
    },
}

impl Chunking {
    pub fn layered(per_video: Vec<LcChunking>) -> Result<Self> {
        let layers: Vec<Vec<u64>> = per_video.into_iter().map(|c| c.layer_sizes).collect();
        let q = layers.first().map_or(0, Vec::len);
        if layers.is_empty() || q == 0 {
            return Err(Error::Domain(
                "layered chunking needs videos and layers".into(),
            ));
        }
        if layers.iter().any(|l| l.len() != q) {
            return Err(Error::Shape(
                "every video needs the same number of layers".into(),
            ));
        }
        if layers.iter().flatten().any(|&w| w == 0) {
            return Err(Error::Domain("layer sizes must be positive".into()));
        }
        check_chunk_limit(q)?;
        Ok(Chunking::Layered { layers })
    }

    pub fn layered_uniform(lc: &LcChunking, videos: usize) -> Result<Self> {
        Self::layered(vec![lc.clone(); videos])
    }

    pub fn described(
        video_sizes: Vec<u64>,
        descriptions: usize,
        required: Vec<usize>,
    ) -> Result<Self> {
        if video_sizes.is_empty() || video_sizes.contains(&0) {
            return Err(Error::Domain(
                "description chunking needs positive video sizes".into(),
            ));
        }
        if required.is_empty()
            || required[0] == 0
            || required.windows(2).any(|w| w[0] >= w[1])
            || *required.last().unwrap() != descriptions
        {
            return Err(Error::Domain(format!(
                "required counts must increase strictly from 1 up to Q = {descriptions}, got {required:?}"
            )));
        }
        check_chunk_limit(descriptions)?;
        Ok(Chunking::Described {
            video_sizes,
            descriptions,
            required,
        })
    }

    pub fn described_uniform(mdc: &MdcChunking, videos: usize) -> Result<Self> {
        Self::described(
            vec![mdc.video_size; videos],
            mdc.descriptions,
            mdc.required.clone(),
        )
    }

    pub fn mechanism(&self) -> Mechanism {
        match self {
            Chunking::Layered { .. } => Mechanism::Lc,
            Chunking::Described { .. } => Mechanism::Mdc,
        }
    }

    pub fn videos(&self) -> usize {
        match self {
            Chunking::Layered { layers } => layers.len(),
            Chunking::Described { video_sizes, .. } => video_sizes.len(),
        }
    }

    /// Chunks per video (`Q`).
    pub fn chunks(&self) -> usize {
        match self {
            Chunking::Layered { layers } => layers[0].len(),
            Chunking::Described { descriptions, .. } => *descriptions,
        }
    }

    /// Quality levels (`R`).
    pub fn levels(&self) -> usize {
        match self {
            Chunking::Layered { layers } => layers[0].len(),
            Chunking::Described { required, .. } => required.len(),
        }
    }

    pub fn video_size(&self, video: usize) -> u64 {
        match self {
            Chunking::Layered { layers } => layers[video].iter().sum(),
            Chunking::Described { video_sizes, .. } => video_sizes[video],
        }
    }

    /// Cost of chunk `(video, chunk)` in capacity units.
    ///
    /// LC units are bytes. MDC units are bytes times `Q`, so a description of
    /// video `j` costs exactly `w_j` and the budget is `K * Q`; no rounding.
    pub fn chunk_cost(&self, video: usize, chunk: usize) -> u64 {
        match self {
            Chunking::Layered { layers } => layers[video][chunk],
            Chunking::Described { video_sizes, .. } => video_sizes[video],
        }
    }

    /// Cache capacity in bytes converted to capacity units.
    pub fn budget(&self, capacity_bytes: u64) -> u128 {
        match self {
            Chunking::Layered { .. } => capacity_bytes as u128,
            Chunking::Described { descriptions, .. } => {
                capacity_bytes as u128 * *descriptions as u128
            }
        }
    }

    pub fn units_to_bytes(&self, units: u128) -> f64 {
        match self {
            Chunking::Layered { .. } => units as f64,
            Chunking::Described { descriptions, .. } => units as f64 / *descriptions as f64,
        }
    }

    /// Bytes of chunk `(video, chunk)`.
    pub fn chunk_bytes(&self, video: usize, chunk: usize) -> f64 {
        self.units_to_bytes(self.chunk_cost(video, chunk) as u128)
    }

    /// Bytes fetched for a request of `video` at `level` when nothing is cached.
    pub fn requested_size(&self, video: usize, level: usize) -> f64 {
        match self {
            Chunking::Layered { layers } => layers[video][..=level].iter().sum::<u64>() as f64,
            Chunking::Described {
                video_sizes,
                descriptions,
                required,
            } => video_sizes[video] as f64 * required[level] as f64 / *descriptions as f64,
        }
    }
}

fn check_chunk_limit(q: usize) -> Result<()> {
    if q > MAX_CHUNKS {
        return Err(Error::Partition(format!(
            "{q} chunks per video exceeds the supported maximum of {MAX_CHUNKS}"
        )));
    }
    Ok(())
}

/// `a_j = j^-gamma / sum_i i^-gamma` for `j = 1..=videos`.
pub fn zipf_popularity(videos: usize, gamma: f64) -> Result<Vec<f64>> {
    if videos == 0 {
        return Err(Error::Domain(
            "catalog must contain at least one video".into(),
        ));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!(
            "Zipf exponent must be positive, got {gamma}"
        )));
    }
    let raw: Vec<f64> = (1..=videos).map(|j| (j as f64).powf(-gamma)).collect();
    let norm: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|x| x / norm).collect())
}

/// Location dependence of the requested quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Uniform,
    /// Users reachable by more caches than average ask for higher quality.
    Linear,
    /// Users reachable by more caches than average ask for lower quality.
    Inverse,
}

impl Trend {
    pub const ALL: [Trend; 3] = [Trend::Uniform, Trend::Linear, Trend::Inverse];

    pub fn name(self) -> &'static str {
        match self {
            Trend::Uniform => "uniform",
            Trend::Linear => "linear",
            Trend::Inverse => "inverse",
        }
    }
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Trend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Trend::Uniform),
            "linear" => Ok(Trend::Linear),
            "inverse" => Ok(Trend::Inverse),
            other => Err(Error::config("trend", format!("unknown trend `{other}`"))),
        }
    }
}

pub const TREND_LEVELS: usize = 5;

/// `f(rho) = (1 + t_rho * theta) / (5 + 10 * theta)` over five levels, with
/// `theta = 0.1 * | |s| - E|s| |` and `t_rho` rising (`rho - 1`) or falling
/// (`5 - rho`) depending on the trend and on which side of the mean `|s|` is.
pub fn quality_pmf(
    trend: Trend,
    cardinality: usize,
    mean_cardinality: f64,
    levels: usize,
) -> Result<Vec<f64>> {
    if levels != TREND_LEVELS {
        return Err(Error::config(
            "catalog.rates_mb_per_min",
            format!("quality trends are defined for {TREND_LEVELS} levels, got {levels}; supply explicit pmfs"),
        ));
    }
    let diff = cardinality as f64 - mean_cardinality;
    let theta = match trend {
        Trend::Uniform => 0.0,
        Trend::Linear | Trend::Inverse => 0.1 * diff.abs(),
    };
    let rising = match trend {
        Trend::Uniform | Trend::Linear => diff > 0.0,
        Trend::Inverse => diff < 0.0,
    };
    let norm = 5.0 + 10.0 * theta;
    Ok((1..=TREND_LEVELS)
        .map(|rho| {
            let t = if rising { rho - 1 } else { TREND_LEVELS - rho } as f64;
            (1.0 + t * theta) / norm
        })
        .collect())
}

/// Request statistics: video popularity times a per-region quality pmf.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel {
    popularity: Vec<f64>,
    quality: Vec<Vec<f64>>,
}

impl DemandModel {
    /// `quality[s]` is the pmf over levels for region `s`.
    pub fn new(popularity: Vec<f64>, quality: Vec<Vec<f64>>) -> Result<Self> {
        check_pmf("popularity", &popularity)?;
        if popularity.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Domain(
                "popularity must be nonincreasing in the video index".into(),
            ));
        }
        let levels = quality.first().map_or(0, Vec::len);
        for (s, pmf) in quality.iter().enumerate() {
            if pmf.len() != levels {
                return Err(Error::Shape(format!(
                    "quality pmf of region {s} has {} levels",
                    pmf.len()
                )));
            }
            check_pmf("quality pmf", pmf)?;
        }
        Ok(DemandModel {
            popularity,
            quality,
        })
    }

    pub fn from_trend(
        popularity: Vec<f64>,
        trend: Trend,
        coverage: &CoverageModel,
        levels: usize,
    ) -> Result<Self> {
        let mean = coverage.mean_cardinality();
        let quality = coverage
            .regions()
            .iter()
            .map(|r| quality_pmf(trend, r.cardinality(), mean, levels))
            .collect::<Result<Vec<_>>>()?;
        Self::new(popularity, quality)
    }

    pub fn videos(&self) -> usize {
        self.popularity.len()
    }

    pub fn levels(&self) -> usize {
        self.quality.first().map_or(0, Vec::len)
    }

    pub fn regions(&self) -> usize {
        self.quality.len()
    }

    pub fn popularity(&self) -> &[f64] {
        &self.popularity
    }

    pub fn quality(&self, region: usize) -> &[f64] {
        &self.quality[region]
    }

    /// `a_{j,rho,s} = a_j * f^(s)(rho)`.
    pub fn request_probability(&self, video: usize, level: usize, region: usize) -> Result<f64> {
        let a = self.popularity.get(video).ok_or(Error::Lookup {
            kind: "video",
            index: video,
            len: self.videos(),
        })?;
        let pmf = self.quality.get(region).ok_or(Error::Lookup {
            kind: "region",
            index: region,
            len: self.regions(),
        })?;
        let f = pmf.get(level).ok_or(Error::Lookup {
            kind: "quality level",
            index: level,
            len: pmf.len(),
        })?;
        Ok(a * f)
    }
}

fn check_pmf(what: &str, pmf: &[f64]) -> Result<()> {
    if pmf.is_empty() {
        return Err(Error::Domain(format!("{what} is empty")));
    }
    if pmf.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Domain(format!("{what} has entries outside [0, 1]")));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("{what} sums to {total}")));
    }
    Ok(())
}

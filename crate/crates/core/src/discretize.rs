//! Canonical output spaces: a target law quantized to a finite set of numeric
//! strings with induced masses.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dist::{DistributionSpec, Law};
use crate::error::DiscretizeError;
use crate::rng::open_unit;

/// Quantile range of the discretized interval.
pub const QUANTILE_RANGE: (f64, f64) = (0.001, 0.999);
pub const MAX_DECIMALS: u32 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub canonical: String,
    pub mass: f64,
    pub center: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpaceRecord {
    entries: Vec<OutputEntry>,
    decimals: u32,
    max_bins: usize,
    bounds: (f64, f64),
    is_discrete: bool,
}

/// Ordered canonical outputs with masses summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpaceRecord", into = "SpaceRecord")]
pub struct OutputSpace {
    entries: Vec<OutputEntry>,
    decimals: u32,
    max_bins: usize,
    bounds: (f64, f64),
    is_discrete: bool,
    cumulative: Vec<f64>,
}

impl From<SpaceRecord> for OutputSpace {
    fn from(r: SpaceRecord) -> Self {
        OutputSpace::from_parts(r.entries, r.decimals, r.max_bins, r.bounds, r.is_discrete)
    }
}

impl From<OutputSpace> for SpaceRecord {
    fn from(s: OutputSpace) -> Self {
        SpaceRecord {
            entries: s.entries,
            decimals: s.decimals,
            max_bins: s.max_bins,
            bounds: s.bounds,
            is_discrete: s.is_discrete,
        }
    }
}

impl OutputSpace {
    pub fn from_parts(
        entries: Vec<OutputEntry>,
        decimals: u32,
        max_bins: usize,
        bounds: (f64, f64),
        is_discrete: bool,
    ) -> Self {
        let mut acc = 0.0;
        let cumulative = entries
            .iter()
            .map(|e| {
                acc += e.mass;
                acc
            })
            .collect();
        OutputSpace {
            entries,
            decimals,
            max_bins,
            bounds,
            is_discrete,
            cumulative,
        }
    }

    /// Space over explicit `(canonical, mass)` pairs; centers are parsed from
    /// the strings. Used for hand-built test spaces.
    pub fn from_masses(pairs: &[(&str, f64)]) -> Self {
        let entries: Vec<OutputEntry> = pairs
            .iter()
            .map(|(c, m)| OutputEntry {
                canonical: c.to_string(),
                mass: *m,
                center: c.parse().unwrap_or(f64::NAN),
            })
            .collect();
        let decimals = pairs
            .iter()
            .filter_map(|(c, _)| c.split_once('.').map(|(_, f)| f.len() as u32))
            .max()
            .unwrap_or(0);
        let lo = entries.first().map_or(0.0, |e| e.center);
        let hi = entries.last().map_or(0.0, |e| e.center);
        OutputSpace::from_parts(entries, decimals, pairs.len().max(2), (lo, hi), decimals == 0)
    }

    pub fn entries(&self) -> &[OutputEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn decimals(&self) -> u32 {
        self.decimals
    }

    pub fn max_bins(&self) -> usize {
        self.max_bins
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn is_discrete(&self) -> bool {
        self.is_discrete
    }

    pub fn total_mass(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn mass_of(&self, canonical: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.canonical == canonical)
            .map(|e| e.mass)
    }

    /// Entry index selected by a uniform variate (inverse CDF over the
    /// cumulative masses).
    pub fn index_for_uniform(&self, u: f64) -> usize {
        let target = u * self.total_mass();
        let idx = self.cumulative.partition_point(|&c| c <= target);
        idx.min(self.entries.len() - 1)
    }

    pub fn sample_canonical<R: RngCore + ?Sized>(&self, rng: &mut R) -> &str {
        &self.entries[self.index_for_uniform(open_unit(rng))].canonical
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("output space serializes")
    }
}

/// Renders `units * 10^-decimals` in fixed point with exactly `decimals`
/// fractional digits. Zero never carries a sign.
pub fn format_fixed(units: i64, decimals: u32) -> String {
    let neg = units < 0;
    let abs = units.unsigned_abs();
    let scale = 10u64.pow(decimals);
    let int = abs / scale;
    let frac = abs % scale;
    let sign = if neg { "-" } else { "" };
    if decimals == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac:0width$}", width = decimals as usize)
    }
}

pub fn build_output_space(
    spec: &DistributionSpec,
    decimals: u32,
    max_bins: usize,
) -> Result<OutputSpace, DiscretizeError> {
    if decimals > MAX_DECIMALS {
        return Err(DiscretizeError::Decimals(decimals));
    }
    if max_bins < 2 {
        return Err(DiscretizeError::MaxBins(max_bins));
    }
    let law = spec.law()?;
    if law.is_discrete() {
        discrete_space(&law, decimals, max_bins)
    } else {
        continuous_space(&law, decimals, max_bins)
    }
}

fn discrete_space(law: &Law, decimals: u32, max_bins: usize) -> Result<OutputSpace, DiscretizeError> {
    let (lower, upper) = law.bounds();
    let entry = |k: i64, mass: f64| OutputEntry {
        canonical: k.to_string(),
        mass,
        center: k as f64,
    };
    let entries: Vec<OutputEntry> = if lower.is_finite() && upper.is_finite() {
        let (lo, hi) = (lower as i64, upper as i64);
        let pmf: Vec<f64> = (lo..=hi).map(|k| law.density(k as f64)).collect();
        let keep = pmf.len().min(max_bins);
        let mut masses = pmf[..keep].to_vec();
        let overflow: f64 = pmf[keep..].iter().sum();
        masses[keep - 1] += overflow;
        masses
            .into_iter()
            .enumerate()
            .map(|(i, m)| entry(lo + i as i64, m))
            .collect()
    } else {
        let lo = law.ppf(QUANTILE_RANGE.0).max(lower) as i64;
        let hi = law.ppf(QUANTILE_RANGE.1) as i64;
        if hi < lo {
            return Err(DiscretizeError::Degenerate {
                lower: lo as f64,
                upper: hi as f64,
            });
        }
        let count = ((hi - lo + 1) as usize).min(max_bins);
        let last = lo + count as i64 - 1;
        let mut prev = 0.0;
        (lo..=last)
            .map(|k| {
                let upper_cdf = if k == last { 1.0 } else { law.cdf(k as f64) };
                let mass = (upper_cdf - prev).max(0.0);
                prev = upper_cdf;
                entry(k, mass)
            })
            .collect()
    };
    let bounds = (
        entries.first().map_or(0.0, |e| e.center),
        entries.last().map_or(0.0, |e| e.center),
    );
    Ok(OutputSpace::from_parts(entries, decimals, max_bins, bounds, true))
}

fn continuous_space(law: &Law, decimals: u32, max_bins: usize) -> Result<OutputSpace, DiscretizeError> {
    let (lower, upper) = law.bounds();
    let lo = law.ppf(QUANTILE_RANGE.0).max(lower);
    let hi = law.ppf(QUANTILE_RANGE.1).min(upper);
    // also rejects NaN quantiles
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(DiscretizeError::Degenerate { lower: lo, upper: hi });
    }
    let scale = 10f64.powi(decimals as i32);
    // Grid points within 1e-9 units of the interval edge count as inside.
    let snap = |x: f64| 1e-9 * x.abs().max(1.0);
    let first = (lo * scale - snap(lo * scale)).ceil() as i64;
    let last = (hi * scale + snap(hi * scale)).floor() as i64;
    if last < first {
        return Err(DiscretizeError::Degenerate { lower: lo, upper: hi });
    }
    let grid = (last - first + 1) as u128;
    let bins = max_bins as u128;
    let units: Vec<i64> = if grid <= bins {
        (first..=last).collect()
    } else {
        // round(j (G-1) / (B-1)), half up
        (0..bins)
            .map(|j| {
                let num = 2 * j * (grid - 1) + (bins - 1);
                first + (num / (2 * (bins - 1))) as i64
            })
            .collect()
    };
    let n = units.len();
    let mut prev = 0.0;
    let entries = units
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let upper_cdf = if i + 1 == n {
                1.0
            } else {
                law.cdf((u + units[i + 1]) as f64 / (2.0 * scale))
            };
            let mass = (upper_cdf - prev).max(0.0);
            prev = upper_cdf.max(prev);
            OutputEntry {
                canonical: format_fixed(u, decimals),
                mass,
                center: u as f64 / scale,
            }
        })
        .collect();
    Ok(OutputSpace::from_parts(entries, decimals, max_bins, (lo, hi), false))
}

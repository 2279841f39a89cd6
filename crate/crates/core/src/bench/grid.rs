//! Benchmark families, parameter regions and train/test splits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dist::{DistributionSpec, Family};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    UnseenParamTest,
    OodTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::UnseenParamTest, Split::OodTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::UnseenParamTest => "unseen-param-test",
            Split::OodTest => "ood-test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown split `{s}`"))
    }
}

/// Training region of one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Axis {
    /// Closed interval discretized on an even grid.
    Range(f64, f64),
    /// Listed values, taken verbatim.
    Values(&'static [f64]),
}

impl Axis {
    pub fn values(&self, resolution: usize) -> Vec<f64> {
        match *self {
            Axis::Values(v) => v.to_vec(),
            Axis::Range(lo, hi) if resolution <= 1 => vec![round5(0.5 * (lo + hi))],
            Axis::Range(lo, hi) => (0..resolution)
                .map(|i| round5(lo + (hi - lo) * i as f64 / (resolution - 1) as f64))
                .collect(),
        }
    }

    pub fn is_range(&self) -> bool {
        matches!(self, Axis::Range(..))
    }
}

/// Grid values are kept at the precision prompts can express.
fn round5(x: f64) -> f64 {
    let r = (x * 1e5).round() / 1e5;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Training axes (empty for held-out families) and test configurations.
#[derive(Debug, Clone)]
pub struct FamilyRow {
    pub family: Family,
    pub train: Vec<(&'static str, Axis)>,
    pub test: Vec<Vec<(&'static str, f64)>>,
}

const P_GRID: &[f64] = &[0.2, 0.25, 0.3, 0.35, 0.4, 0.5, 0.6, 0.65, 0.7, 0.75, 0.8];

/// The 30-family benchmark table.
pub fn benchmark_table() -> Vec<FamilyRow> {
    use Axis::{Range as R, Values as V};
    use Family::*;
    let row = |family, train: Vec<(&'static str, Axis)>, test: Vec<Vec<(&'static str, f64)>>| FamilyRow {
        family,
        train,
        test,
    };
    vec![
        row(Uniform, vec![("a", R(-5.0, 2.0)), ("w", R(1.0, 5.0))], vec![vec![("a", 3.5), ("w", 7.0)]]),
        row(Norm, vec![("mu", R(-2.0, 2.0)), ("sigma", R(0.5, 2.0))], vec![vec![("mu", 3.5), ("sigma", 3.0)]]),
        row(Bernoulli, vec![], vec![vec![("p", 0.1)], vec![("p", 0.5)], vec![("p", 0.9)]]),
        row(Beta, vec![("alpha", R(0.5, 5.0)), ("beta", R(0.5, 5.0))], vec![vec![("alpha", 7.0), ("beta", 7.0)]]),
        row(Binom, vec![("n", V(&[5.0, 10.0, 15.0, 20.0])), ("p", V(P_GRID))], vec![vec![("n", 25.0), ("p", 0.5)]]),
        row(Expon, vec![("lambda", R(0.5, 5.0))], vec![vec![("lambda", 7.0)]]),
        row(
            Geom,
            vec![("p", V(&[0.2, 0.225, 0.25, 0.3, 0.35, 0.4, 0.5, 0.6, 0.65, 0.7, 0.75, 0.775, 0.8]))],
            vec![vec![("p", 0.125)]],
        ),
        row(Nbinom, vec![("r", V(&[3.0, 5.0, 8.0, 12.0])), ("p", V(P_GRID))], vec![vec![("r", 15.0), ("p", 0.15)]]),
        row(Lognorm, vec![("mu", R(-1.0, 1.5)), ("sigma", R(0.25, 1.25))], vec![vec![("mu", 2.5), ("sigma", 2.0)]]),
        row(
            Triang,
            vec![("a", R(-3.0, 1.0)), ("w", R(1.0, 5.0)), ("f_mode", V(&[0.1, 0.3, 0.5, 0.7, 0.9]))],
            vec![vec![("a", 2.5), ("w", 7.0), ("f_mode", 0.5)]],
        ),
        row(Rayleigh, vec![("sigma", R(0.5, 2.0))], vec![vec![("sigma", 3.0)]]),
        row(Poisson, vec![], vec![vec![("lambda", 1.0)], vec![("lambda", 4.0)], vec![("lambda", 12.0)]]),
        row(Maxwell, vec![], vec![vec![("sigma", 0.75)], vec![("sigma", 1.5)], vec![("sigma", 2.5)]]),
        row(Cauchy, vec![("x0", R(-2.0, 2.0)), ("gamma", R(0.5, 2.0))], vec![vec![("x0", 3.5), ("gamma", 3.0)]]),
        row(
            T,
            vec![("nu", V(&[2.5, 2.75, 3.0, 3.5, 4.0, 4.5, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]))],
            vec![vec![("nu", 16.0)]],
        ),
        row(Chi, vec![], vec![vec![("nu", 2.0)], vec![("nu", 5.0)], vec![("nu", 10.0)]]),
        row(
            Chi2,
            vec![("nu", V(&[2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0]))],
            vec![vec![("nu", 32.0)]],
        ),
        row(
            F,
            vec![("d1", V(&[3.0, 5.0, 7.0, 10.0])), ("d2", V(&[5.0, 10.0, 15.0, 20.0]))],
            vec![vec![("d1", 12.0), ("d2", 24.0)]],
        ),
        row(Gamma, vec![("alpha", R(1.0, 5.0)), ("beta", R(1.0, 5.0))], vec![vec![("alpha", 7.0), ("beta", 7.0)]]),
        row(
            WeibullMin,
            vec![],
            vec![
                vec![("k", 0.5), ("lambda", 0.5)],
                vec![("k", 1.5), ("lambda", 1.5)],
                vec![("k", 3.0), ("lambda", 3.0)],
            ],
        ),
        row(
            Truncnorm,
            vec![],
            vec![
                vec![("mu", 0.0), ("sigma", 1.0), ("a", -1.0), ("b", 1.0)],
                vec![("mu", 0.0), ("sigma", 1.0), ("a", -2.0), ("b", 2.0)],
                vec![("mu", 1.0), ("sigma", 1.5), ("a", -1.0), ("b", 2.0)],
            ],
        ),
        row(Laplace, vec![("mu", R(-2.0, 2.0)), ("b", R(0.5, 2.0))], vec![vec![("mu", 3.5), ("b", 3.0)]]),
        row(Logistic, vec![("mu", R(-2.0, 2.0)), ("s", R(0.5, 2.0))], vec![vec![("mu", 3.5), ("s", 3.0)]]),
        row(
            Pareto,
            vec![("alpha", V(&[2.0, 2.25, 2.5, 2.75, 3.0, 3.5, 4.0, 4.5, 5.0])), ("x_m", R(0.5, 2.0))],
            vec![vec![("alpha", 6.5), ("x_m", 3.5)]],
        ),
        row(
            Hypergeom,
            vec![
                ("M", V(&[30.0, 50.0, 80.0])),
                ("N", V(&[5.0, 10.0, 15.0])),
                ("K/M", V(&[0.2, 0.35, 0.5, 0.65, 0.8])),
            ],
            vec![vec![("M", 100.0), ("N", 20.0), ("K/M", 0.5)]],
        ),
        row(GumbelR, vec![("mu", R(-2.0, 2.0)), ("beta", R(0.5, 2.0))], vec![vec![("mu", 3.5), ("beta", 3.0)]]),
        row(Skellam, vec![("mu1", R(1.0, 8.0)), ("mu2", R(1.0, 8.0))], vec![vec![("mu1", 10.5), ("mu2", 10.5)]]),
        row(
            Betabinom,
            vec![("n", V(&[10.0, 20.0, 30.0])), ("alpha", R(0.5, 5.0)), ("beta", R(0.5, 5.0))],
            vec![vec![("n", 40.0), ("alpha", 6.5), ("beta", 6.5)]],
        ),
        row(Lomax, vec![("alpha", R(1.5, 4.0)), ("lambda", R(0.5, 3.0))], vec![vec![("alpha", 6.0), ("lambda", 4.5)]]),
        row(Invgauss, vec![("mu", R(0.5, 3.0)), ("lambda", R(0.5, 5.0))], vec![vec![("mu", 5.0), ("lambda", 7.0)]]),
    ]
}

/// Number of points per continuous range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridResolution {
    pub default: usize,
    #[serde(default)]
    pub per_family: BTreeMap<Family, usize>,
}

impl Default for GridResolution {
    fn default() -> Self {
        GridResolution {
            default: DEFAULT_RESOLUTION,
            per_family: BTreeMap::new(),
        }
    }
}

/// 9 points per continuous range gives 1906 training configurations.
pub const DEFAULT_RESOLUTION: usize = 9;

impl GridResolution {
    pub fn for_family(&self, f: Family) -> usize {
        self.per_family.get(&f).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub id: String,
    pub split: Split,
    pub spec: DistributionSpec,
    pub prompt: String,
}

impl PromptConfig {
    pub fn new(id: String, split: Split, spec: DistributionSpec) -> Self {
        let prompt = render_prompt(&spec);
        PromptConfig { id, split, spec, prompt }
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }
}

/// Natural-language prompt for a configuration.
pub fn render_prompt(spec: &DistributionSpec) -> String {
    let params: Vec<String> = spec.ordered_params().iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!(
        "Generate exactly ONE random number from a {} distribution with parameters {}. Output ONLY the number.",
        spec.family.display_name(),
        params.join(", ")
    )
}

fn cartesian(axes: &[(&'static str, Vec<f64>)]) -> Vec<Vec<(&'static str, f64)>> {
    axes.iter().fold(vec![Vec::new()], |acc, (name, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push((*name, v));
                    p
                })
            })
            .collect()
    })
}

/// Deterministic enumeration of every configuration of the selected
/// families (all when `families` is empty): train grids, then unseen-parameter
/// tests, then held-out family tests.
pub fn generate_benchmark(resolution: &GridResolution, families: &[Family]) -> Vec<PromptConfig> {
    let table = benchmark_table();
    let selected = |f: Family| families.is_empty() || families.contains(&f);
    let mut out = Vec::new();
    for split in Split::ALL {
        for row in table.iter().filter(|r| selected(r.family)) {
            let tuples: Vec<Vec<(&str, f64)>> = match split {
                Split::Train => {
                    if row.train.is_empty() {
                        continue;
                    }
                    let r = resolution.for_family(row.family);
                    let axes: Vec<(&'static str, Vec<f64>)> =
                        row.train.iter().map(|(n, a)| (*n, a.values(r))).collect();
                    cartesian(&axes)
                }
                Split::UnseenParamTest if !row.family.is_ood() => row.test.clone(),
                Split::OodTest if row.family.is_ood() => row.test.clone(),
                _ => continue,
            };
            for (i, t) in tuples.iter().enumerate() {
                let id = format!("{}/{}/{:04}", split.name(), row.family.scipy_name(), i);
                out.push(PromptConfig::new(id, split, DistributionSpec::new(row.family, t)));
            }
        }
    }
    out
}

/// Closed-form training-config count for a uniform resolution.
pub fn train_count(resolution: usize) -> usize {
    benchmark_table()
        .iter()
        .filter(|r| !r.train.is_empty())
        .map(|r| r.train.iter().map(|(_, a)| a.values(resolution).len()).product::<usize>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_resolution_count() {
        let g = generate_benchmark(&GridResolution::default(), &[]);
        let train = g.iter().filter(|c| c.split == Split::Train).count();
        assert_eq!(train, 1906);
        assert_eq!(train_count(9), 187 + 20 * 81 + 11 * 9);
        assert_eq!(g.iter().filter(|c| c.split == Split::OodTest).count(), 18);
        assert_eq!(g.iter().filter(|c| c.split == Split::UnseenParamTest).count(), 24);
    }

    #[test]
    fn rendering() {
        let spec = DistributionSpec::new(Family::Norm, &[("mu", 3.5), ("sigma", 3.0)]);
        assert_eq!(
            render_prompt(&spec),
            "Generate exactly ONE random number from a Gaussian distribution with parameters mu=3.5, sigma=3. Output ONLY the number."
        );
        let b = render_prompt(&DistributionSpec::new(Family::Bernoulli, &[("p", 0.5)]));
        assert!(b.contains("from a Bernoulli distribution with parameters p=0.5."));
    }

    #[test]
    fn range_axes_include_endpoints() {
        assert_eq!(Axis::Range(-5.0, 2.0).values(3), vec![-5.0, -1.5, 2.0]);
        assert_eq!(Axis::Range(0.5, 2.0).values(1), vec![1.25]);
    }
}

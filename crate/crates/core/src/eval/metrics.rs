//! Pure sample-level metrics.

use crate::dist::{Law, SupportInfo};

/// Value of a bare, finite decimal or scientific-notation literal.
pub fn parse_numeric(text: &str) -> Option<f64> {
    let s = text.trim();
    if s.is_empty()
        || !s.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E'))
        || !s.bytes().any(|b| b.is_ascii_digit())
    {
        return None;
    }
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Order-statistic W1 against the target quantile grid:
/// (1/N) sum_i |x_(i) - ppf((i - 0.5)/N)|. `None` for no samples.
pub fn wasserstein_w1(samples: &[f64], law: &Law) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let total: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (x - law.ppf((i as f64 + 0.5) / n)).abs())
        .sum();
    Some(total / n)
}

/// W1 divided by the target's Q95 - Q05 width; `None` for a degenerate width.
pub fn normalized_w1(w1: f64, law: &Law) -> Option<f64> {
    let width = law.ppf(0.95) - law.ppf(0.05);
    (width > 0.0).then(|| w1 / width)
}

/// Fraction of generations that parse and lie in the target support.
pub fn valid_rate<S: AsRef<str>>(generations: &[S], support: &SupportInfo) -> f64 {
    if generations.is_empty() {
        return 0.0;
    }
    let ok = generations
        .iter()
        .filter(|g| parse_numeric(g.as_ref()).is_some_and(|x| support.contains(x)))
        .count();
    ok as f64 / generations.len() as f64
}

/// Total variation between empirical frequencies and the uniform law over
/// the K positions.
pub fn tv_uniform(counts: &[u64]) -> Option<f64> {
    let total: u64 = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return None;
    }
    let k = counts.len() as f64;
    let t = total as f64;
    Some(0.5 * counts.iter().map(|&c| (c as f64 / t - 1.0 / k).abs()).sum::<f64>())
}

/// Smallest number of highest-probability tokens whose mass reaches
/// `threshold`. Ties are taken in ascending token order.
pub fn support_size_top_mass(probs: &[f64], threshold: f64) -> usize {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut cum = 0.0;
    for (n, &i) in order.iter().enumerate() {
        cum += probs[i];
        if cum >= threshold - 1e-12 {
            return n + 1;
        }
    }
    probs.len()
}

/// Distinct samples after trimming and case folding, over the sample count.
pub fn unique_fraction<S: AsRef<str>>(samples: &[S]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let distinct: std::collections::HashSet<String> =
        samples.iter().map(|s| s.as_ref().trim().to_lowercase()).collect();
    Some(distinct.len() as f64 / samples.len() as f64)
}

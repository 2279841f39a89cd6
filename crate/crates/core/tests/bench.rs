use std::collections::{BTreeMap, HashSet};

use calft_core::bench::{
    benchmark_table, generate_benchmark, render_prompt, train_count, Axis, GridResolution, RunConfig, Split,
};
use calft_core::dist::Family;
use calft_core::vocab::Vocabulary;

fn full() -> Vec<calft_core::bench::PromptConfig> {
    generate_benchmark(&GridResolution::default(), &[])
}

fn key(params: &BTreeMap<String, f64>) -> Vec<(String, u64)> {
    params.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect()
}

#[test]
fn split_counts_and_ood_families() {
    let all = full();
    let count = |s: Split| all.iter().filter(|c| c.split == s).count();
    assert_eq!(count(Split::Train), train_count(9));
    assert_eq!(count(Split::Train), 1906);
    assert_eq!(count(Split::OodTest), 18);
    let ood: HashSet<Family> = all.iter().filter(|c| c.split == Split::OodTest).map(|c| c.family()).collect();
    let want: HashSet<Family> = [
        Family::Bernoulli,
        Family::Poisson,
        Family::Maxwell,
        Family::Truncnorm,
        Family::Chi,
        Family::WeibullMin,
    ]
    .into();
    assert_eq!(ood, want);
    let mut bern: Vec<f64> = all
        .iter()
        .filter(|c| c.split == Split::OodTest && c.family() == Family::Bernoulli)
        .map(|c| c.spec.params["p"])
        .collect();
    bern.sort_by(f64::total_cmp);
    assert_eq!(bern, [0.1, 0.5, 0.9]);
}

#[test]
fn split_hygiene() {
    let all = full();
    let train: Vec<_> = all.iter().filter(|c| c.split == Split::Train).collect();
    assert!(train.iter().all(|c| !c.family().is_ood()));
    let train_keys: HashSet<(Family, Vec<(String, u64)>)> =
        train.iter().map(|c| (c.family(), key(&c.spec.params))).collect();
    for c in all.iter().filter(|c| c.split == Split::UnseenParamTest) {
        assert!(!c.family().is_ood(), "{}", c.id);
        assert!(!train_keys.contains(&(c.family(), key(&c.spec.params))), "{} leaks into train", c.id);
    }
    for c in all.iter().filter(|c| c.split == Split::OodTest) {
        assert!(c.family().is_ood(), "{}", c.id);
    }
}

#[test]
fn train_configs_lie_in_their_regions() {
    let table = benchmark_table();
    for c in full().iter().filter(|c| c.split == Split::Train) {
        let row = table.iter().find(|r| r.family == c.family()).unwrap();
        for (name, axis) in &row.train {
            let v = c.spec.params[*name];
            match axis {
                Axis::Range(lo, hi) => assert!(*lo <= v && v <= *hi, "{} {name}={v}", c.id),
                Axis::Values(vals) => assert!(vals.contains(&v), "{} {name}={v}", c.id),
            }
        }
        assert_eq!(c.spec.params.len(), row.train.len());
        assert!(c.spec.law().is_ok(), "{}", c.id);
    }
}

#[test]
fn every_config_is_a_valid_law_and_ids_are_unique() {
    let all = full();
    let ids: HashSet<&str> = all.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids.len(), all.len());
    for c in &all {
        assert!(c.spec.law().is_ok(), "{}", c.id);
        assert!(c.id.starts_with(c.split.name()));
    }
}

#[test]
fn rendering_and_encoding_are_injective() {
    let v = Vocabulary::standard();
    let all = full();
    let prompts: HashSet<&str> = all.iter().map(|c| c.prompt.as_str()).collect();
    let specs: HashSet<(Family, Vec<(String, u64)>)> =
        all.iter().map(|c| (c.family(), key(&c.spec.params))).collect();
    assert_eq!(prompts.len(), specs.len());
    let encoded: HashSet<Vec<u32>> = all.iter().map(|c| v.encode_prompt(&c.spec).unwrap()).collect();
    assert_eq!(encoded.len(), specs.len());
    for c in &all {
        assert_eq!(c.prompt, render_prompt(&c.spec));
        assert!(c.prompt.starts_with("Generate exactly ONE random number from a "));
        assert!(c.prompt.ends_with(". Output ONLY the number."));
    }
}

#[test]
fn count_is_a_deterministic_function_of_resolution() {
    for r in [1, 2, 3, 5, 9, 12] {
        let res = GridResolution {
            default: r,
            ..Default::default()
        };
        let a = generate_benchmark(&res, &[]);
        let b = generate_benchmark(&res, &[]);
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|c| c.split == Split::Train).count(), train_count(r));
    }
    let mut res = GridResolution::default();
    res.per_family.insert(Family::Norm, 3);
    let n = generate_benchmark(&res, &[Family::Norm]);
    assert_eq!(n.iter().filter(|c| c.split == Split::Train).count(), 9);
}

#[test]
fn unknown_family_is_a_config_error() {
    let err = RunConfig::from_toml("schema_version = 1\n[grid]\nfamilies = [\"zipf\"]\n").unwrap_err();
    assert!(err.contains("zipf"), "{err}");
}

#[test]
fn shipped_default_profile_matches_built_in_defaults() {
    let text = include_str!("../../../profiles/default.toml");
    assert_eq!(RunConfig::from_toml(text).unwrap(), RunConfig::default());
}

mod common;

use std::collections::{BTreeMap, BTreeSet};

use adamel::data::{self, AlignedSchema, EntityRecord, PairRecord, Partition};
use adamel::eval::{self, PrMethod};
use adamel::features;
use adamel::synth::{self, SynthConfig};
use proptest::prelude::*;

fn schema() -> AlignedSchema {
    AlignedSchema::new(vec!["artist".into(), "title".into(), "year".into()]).unwrap()
}

fn pair_strategy() -> impl Strategy<Value = PairRecord> {
    let value = "[a-zA-Z0-9 ,\"\n]{0,12}";
    (
        "[a-z0-9-]{1,8}",
        "[a-z]{1,5}",
        "[a-z]{1,5}",
        proptest::collection::vec(value, 6),
        proptest::option::of(any::<bool>()),
    )
        .prop_map(|(id, ls, rs, values, label)| {
            let schema = schema();
            let side = |src: String, vals: &[String]| {
                EntityRecord::new(src, &schema, schema.attributes().iter().cloned().zip(vals.iter().cloned())).unwrap()
            };
            PairRecord {
                pair_id: id,
                left: side(ls, &values[..3]),
                right: side(rs, &values[3..]),
                label,
            }
        })
}

proptest! {
    #[test]
    fn pair_files_round_trip(pairs in proptest::collection::vec(pair_strategy(), 0..20)) {
        let mut bytes = Vec::new();
        data::write_pairs_to(&mut bytes, &schema(), &pairs).unwrap();
        let back = data::read_pairs(bytes.as_slice(), "mem".as_ref(), &schema(), Partition::Target).unwrap();
        prop_assert_eq!(back, pairs);
    }

    #[test]
    fn prauc_matches_threshold_enumeration(
        raw in proptest::collection::vec((0u8..8, any::<bool>()), 2..50),
    ) {
        let scores: Vec<f64> = raw.iter().map(|(s, _)| f64::from(*s) / 8.0).collect();
        let mut labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
        labels[0] = true;
        labels[1] = false;
        let (ap, trap) = common::brute_force_prauc(&scores, &labels);
        let got = eval::prauc(&scores, &labels, PrMethod::AveragePrecision).unwrap().prauc;
        prop_assert!((got - ap).abs() <= 1e-12);
        let got = eval::prauc(&scores, &labels, PrMethod::Trapezoid).unwrap().prauc;
        prop_assert!((got - trap).abs() <= 1e-12);
    }
}

fn challenge_free(seed: u64) -> SynthConfig {
    let mut c = SynthConfig {
        seed,
        shift_strength: 0.0,
        new_attributes: Vec::new(),
        ..Default::default()
    };
    for a in &mut c.attributes {
        a.missing_source = 0.0;
        a.missing_target = 0.0;
    }
    c
}

#[test]
fn shared_token_count_separates_classes_on_challenge_free_corpus() {
    for seed in 0..3 {
        let config = challenge_free(seed);
        let corpus = synth::generate(&config).unwrap();
        let shared_attrs: Vec<&str> = config
            .attributes
            .iter()
            .filter(|a| a.signal == synth::Signal::Shared && a.informativeness > 0.0)
            .map(|a| a.name.as_str())
            .collect();
        let scores: Vec<f64> = corpus
            .test
            .iter()
            .map(|p| {
                shared_attrs
                    .iter()
                    .map(|a| features::contrastive_features(p.left.value(a), p.right.value(a)).0.len() as f64)
                    .sum()
            })
            .collect();
        let labels: Vec<bool> = corpus.test.iter().map(|p| p.label == Some(true)).collect();
        let auc = eval::prauc(&scores, &labels, PrMethod::AveragePrecision).unwrap().prauc;
        assert!(auc > 0.95, "seed {seed}: PRAUC {auc}");
    }
}

fn total_variation(a: &BTreeMap<String, usize>, b: &BTreeMap<String, usize>) -> f64 {
    let na: usize = a.values().sum();
    let nb: usize = b.values().sum();
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .map(|k| {
            let pa = *a.get(k).unwrap_or(&0) as f64 / na as f64;
            let pb = *b.get(k).unwrap_or(&0) as f64 / nb as f64;
            (pa - pb).abs()
        })
        .sum::<f64>()
        / 2.0
}

#[test]
fn token_shift_grows_with_shift_strength() {
    let strengths = [0.0, 0.25, 0.5, 0.75, 1.0];
    let mean_tv: Vec<f64> = strengths
        .iter()
        .map(|&shift| {
            (0..4)
                .map(|seed| {
                    let corpus = synth::generate(&SynthConfig {
                        shift_strength: shift,
                        n_source_pairs: 1500,
                        n_target_pairs: 1500,
                        ..challenge_free(seed)
                    })
                    .unwrap();
                    let pairs: Vec<PairRecord> = corpus.partitions.source.iter().chain(&corpus.partitions.target).cloned().collect();
                    let seen = synth::token_histogram(&pairs, "title", false);
                    let unseen = synth::token_histogram(&pairs, "title", true);
                    total_variation(&seen, &unseen)
                })
                .sum::<f64>()
                / 4.0
        })
        .collect();
    for w in mean_tv.windows(2) {
        assert!(w[1] >= w[0], "{mean_tv:?}");
    }
    assert!(mean_tv[4] > mean_tv[0] + 0.2, "{mean_tv:?}");
}

#[test]
fn challenge_stats_reproducible_under_seed() {
    let config = SynthConfig { seed: 9, ..Default::default() };
    let a = synth::corpus_stats(&synth::generate(&config).unwrap());
    let b = synth::corpus_stats(&synth::generate(&config).unwrap());
    assert_eq!(a, b);
}

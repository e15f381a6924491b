//! Synthetic multi-source pair corpora with controllable missing values,
//! target-only attributes and source/target distribution shift.
//!
//! Tokens of each attribute follow a Zipf law over a per-attribute
//! vocabulary. Records from unseen (target) sources draw from a mixture of
//! that law and a rank-permuted copy of it, weighted by `shift_strength`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{self, AlignedSchema, DatasetManifest, DatasetPartitions, EntityRecord, PairRecord};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Where an attribute's match signal lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    /// Matching pairs share tokens; non-matching values are independent.
    #[default]
    Shared,
    /// Both records always share a base token; non-matches add an extra
    /// token on one side, so only the unique-token feature separates classes.
    Unique,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthAttribute {
    pub name: String,
    pub vocab_size: usize,
    #[serde(default = "default_tokens")]
    pub tokens_per_value: usize,
    /// Probability that a matching pair keeps each token (shared signal) or
    /// that a non-matching pair gets a distinguishing token (unique signal).
    pub informativeness: f64,
    #[serde(default)]
    pub signal: Signal,
    #[serde(default)]
    pub missing_source: f64,
    #[serde(default)]
    pub missing_target: f64,
}

fn default_tokens() -> usize {
    3
}

impl SynthAttribute {
    pub fn new(name: &str, vocab_size: usize, informativeness: f64) -> Self {
        Self {
            name: name.into(),
            vocab_size,
            tokens_per_value: default_tokens(),
            informativeness,
            signal: Signal::Shared,
            missing_source: 0.0,
            missing_target: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sources_seen: usize,
    pub n_sources_unseen: usize,
    pub n_source_pairs: usize,
    pub n_target_pairs: usize,
    /// Balanced labeled support set size (even).
    pub n_support: usize,
    pub n_test_pairs: usize,
    pub pos_rate: f64,
    pub attributes: Vec<SynthAttribute>,
    /// Attributes populated only in records from unseen sources.
    pub new_attributes: Vec<String>,
    pub shift_strength: f64,
    pub zipf_exponent: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut version = SynthAttribute::new("version", 12, 0.8);
        version.signal = Signal::Unique;
        let mut artist = SynthAttribute::new("artist", 150, 0.7);
        artist.missing_target = 0.3;
        let mut label = SynthAttribute::new("label", 80, 0.8);
        label.tokens_per_value = 2;
        Self {
            seed: 0,
            n_sources_seen: 3,
            n_sources_unseen: 5,
            n_source_pairs: 600,
            n_target_pairs: 600,
            n_support: 100,
            n_test_pairs: 600,
            pos_rate: 0.4,
            attributes: vec![SynthAttribute::new("title", 300, 0.8), artist, version, label],
            new_attributes: vec!["label".into()],
            shift_strength: 0.8,
            zipf_exponent: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleConfig(m));
        if self.attributes.len() < 2 {
            return bad("at least 2 attributes are required".into());
        }
        let mut names = HashSet::new();
        for a in &self.attributes {
            if !names.insert(a.name.as_str()) {
                return bad(format!("duplicate attribute `{}`", a.name));
            }
            if a.vocab_size < 2 {
                return bad(format!("attribute `{}` needs a vocabulary of at least 2", a.name));
            }
            if a.tokens_per_value == 0 {
                return bad(format!("attribute `{}` needs at least one token per value", a.name));
            }
            for (what, v) in [
                ("informativeness", a.informativeness),
                ("missing_source", a.missing_source),
                ("missing_target", a.missing_target),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("{what} of `{}` is {v}, outside [0, 1]", a.name));
                }
            }
        }
        if let Some(n) = self.new_attributes.iter().find(|n| !names.contains(n.as_str())) {
            return bad(format!("new attribute `{n}` is not declared"));
        }
        if !(self.shift_strength >= 0.0 && self.shift_strength.is_finite()) {
            return bad(format!("shift_strength {} must be finite and ≥ 0", self.shift_strength));
        }
        if !(self.pos_rate > 0.0 && self.pos_rate < 1.0) {
            return bad(format!("pos_rate {} must be in (0, 1)", self.pos_rate));
        }
        if self.n_sources_seen == 0 || self.n_sources_unseen == 0 {
            return bad("need at least one seen and one unseen source".into());
        }
        if !self.n_support.is_multiple_of(2) {
            return bad(format!("support size {} must be even", self.n_support));
        }
        if self.n_source_pairs == 0 {
            return bad("source domain is empty".into());
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and ≥ 0".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<AlignedSchema> {
        data::align_ontology(&[self.attributes.iter().map(|a| a.name.clone()).collect::<Vec<_>>()])
    }

    /// Weight of the rank-permuted component in target distributions.
    pub fn mixture_weight(&self) -> f64 {
        self.shift_strength.min(1.0)
    }
}

/// Generated partitions, held-out labeled target test set and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub schema: AlignedSchema,
    pub partitions: DatasetPartitions,
    pub test: Vec<PairRecord>,
    /// Informativeness per schema attribute, in schema order.
    pub informativeness: Vec<f64>,
}

/// Per-attribute token sampler for seen and unseen sources.
struct TokenModel {
    prefix: String,
    weights: WeightedIndex<f64>,
    permutation: Vec<usize>,
    shift: f64,
}

impl TokenModel {
    fn new(attr: &SynthAttribute, exponent: f64, shift: f64, rng: &mut Rng) -> Self {
        let weights: Vec<f64> = (0..attr.vocab_size)
            .map(|r| 1.0 / ((r + 1) as f64).powf(exponent))
            .collect();
        let mut permutation: Vec<usize> = (0..attr.vocab_size).collect();
        permutation.shuffle(rng);
        Self {
            prefix: attr.name.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase(),
            weights: WeightedIndex::new(weights).expect("positive weights"),
            permutation,
            shift,
        }
    }

    fn rank(&self, unseen: bool, rng: &mut Rng) -> usize {
        let r = self.weights.sample(rng);
        if unseen && self.shift > 0.0 && rng.gen::<f64>() < self.shift {
            self.permutation[r]
        } else {
            r
        }
    }

    fn token(&self, unseen: bool, rng: &mut Rng) -> String {
        format!("{}{}", self.prefix, self.rank(unseen, rng))
    }

    fn value(&self, n: usize, unseen: bool, rng: &mut Rng) -> Vec<String> {
        (0..n).map(|_| self.token(unseen, rng)).collect()
    }
}

#[derive(Clone, Copy)]
enum PairDomain {
    Source,
    Target,
}

struct Generator<'a> {
    config: &'a SynthConfig,
    models: Vec<TokenModel>,
    new_attr: Vec<bool>,
    rng: Rng,
}

impl Generator<'_> {
    fn source_name(seen: bool, i: usize) -> String {
        if seen {
            format!("seen{i}")
        } else {
            format!("unseen{i}")
        }
    }

    fn pick_sources(&mut self, domain: PairDomain) -> ((String, bool), (String, bool)) {
        let c = self.config;
        match domain {
            PairDomain::Source => {
                let l = self.rng.gen_range(0..c.n_sources_seen);
                let r = self.rng.gen_range(0..c.n_sources_seen);
                ((Self::source_name(true, l), true), (Self::source_name(true, r), true))
            }
            PairDomain::Target => {
                let total = c.n_sources_seen + c.n_sources_unseen;
                let l = self.rng.gen_range(0..total);
                let left = if l < c.n_sources_seen {
                    (Self::source_name(true, l), true)
                } else {
                    (Self::source_name(false, l - c.n_sources_seen), false)
                };
                let r = self.rng.gen_range(0..c.n_sources_unseen);
                (left, (Self::source_name(false, r), false))
            }
        }
    }

    fn pair(&mut self, pair_id: String, domain: PairDomain, label: bool, schema: &AlignedSchema) -> Result<PairRecord> {
        let ((ls, l_seen), (rs, r_seen)) = self.pick_sources(domain);
        let mut left_vals = Vec::with_capacity(self.config.attributes.len());
        let mut right_vals = Vec::with_capacity(self.config.attributes.len());
        for (k, attr) in self.config.attributes.iter().enumerate() {
            let m = &self.models[k];
            let rng = &mut self.rng;
            let n = attr.tokens_per_value;
            let (left, right) = match attr.signal {
                Signal::Shared => {
                    let left = m.value(n, !l_seen, rng);
                    let right = if label {
                        left.iter()
                            .map(|t| {
                                if rng.gen::<f64>() < attr.informativeness {
                                    t.clone()
                                } else {
                                    m.token(!r_seen, rng)
                                }
                            })
                            .collect()
                    } else {
                        m.value(n, !r_seen, rng)
                    };
                    (left, right)
                }
                Signal::Unique => {
                    let base = m.value(n, !l_seen, rng);
                    let mut right = base.clone();
                    if !label && rng.gen::<f64>() < attr.informativeness {
                        let extra = m.token(!r_seen, rng);
                        if !base.contains(&extra) {
                            right.push(extra);
                        }
                    }
                    (base, right)
                }
            };
            let missing = match domain {
                PairDomain::Source => attr.missing_source,
                PairDomain::Target => attr.missing_target,
            };
            let mut render = |tokens: Vec<String>, seen: bool| {
                let dropped = rng.gen::<f64>() < missing;
                if dropped || (seen && self.new_attr[k]) {
                    String::new()
                } else {
                    tokens.join(" ")
                }
            };
            left_vals.push((attr.name.clone(), render(left, l_seen)));
            right_vals.push((attr.name.clone(), render(right, r_seen)));
        }
        Ok(PairRecord {
            pair_id,
            left: EntityRecord::new(ls, schema, left_vals)?,
            right: EntityRecord::new(rs, schema, right_vals)?,
            label: Some(label),
        })
    }

    fn pairs(&mut self, prefix: &str, n: usize, domain: PairDomain, schema: &AlignedSchema) -> Result<Vec<PairRecord>> {
        (0..n)
            .map(|i| {
                let label = self.rng.gen::<f64>() < self.config.pos_rate;
                self.pair(format!("{prefix}-{i}"), domain, label, schema)
            })
            .collect()
    }

    fn balanced(&mut self, prefix: &str, n: usize, schema: &AlignedSchema) -> Result<Vec<PairRecord>> {
        (0..n)
            .map(|i| self.pair(format!("{prefix}-{i}"), PairDomain::Target, i % 2 == 0, schema))
            .collect()
    }
}

/// Generates a corpus; bit-reproducible from `config`.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let schema = config.schema()?;
    let mut vocab_rng = rng::stream(config.seed, "synth-vocab");
    let models = config
        .attributes
        .iter()
        .map(|a| TokenModel::new(a, config.zipf_exponent, config.mixture_weight(), &mut vocab_rng))
        .collect();
    let new_attr = config
        .attributes
        .iter()
        .map(|a| config.new_attributes.contains(&a.name))
        .collect();
    let mut g = Generator {
        config,
        models,
        new_attr,
        rng: rng::stream(config.seed, "synth"),
    };
    let source = g.pairs("src", config.n_source_pairs, PairDomain::Source, &schema)?;
    let target = g
        .pairs("tgt", config.n_target_pairs, PairDomain::Target, &schema)?
        .into_iter()
        .map(PairRecord::without_label)
        .collect();
    let support = g.balanced("sup", config.n_support, &schema)?;
    let test = g.pairs("test", config.n_test_pairs, PairDomain::Target, &schema)?;

    let informativeness = schema
        .attributes()
        .iter()
        .map(|name| {
            config
                .attributes
                .iter()
                .find(|a| &a.name == name)
                .map(|a| a.informativeness)
                .unwrap_or(0.0)
        })
        .collect();
    Ok(SynthCorpus {
        schema,
        partitions: DatasetPartitions { source, target, support },
        test,
        informativeness,
    })
}

/// Manifest written next to a generated corpus: the dataset manifest plus the
/// generating config and the ground-truth informativeness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    #[serde(flatten)]
    pub dataset: DatasetManifest,
    pub synth_config: SynthConfig,
    pub informativeness: Vec<(String, f64)>,
}

/// Writes the partition files, test set and manifest into `dir`.
pub fn write_corpus(corpus: &SynthCorpus, config: &SynthConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let files = [
        ("source.csv", &corpus.partitions.source),
        ("target.csv", &corpus.partitions.target),
        ("support.csv", &corpus.partitions.support),
        ("test.csv", &corpus.test),
    ];
    for (name, pairs) in files {
        data::write_pairs(dir.join(name), &corpus.schema, pairs)?;
    }
    let manifest = SynthManifest {
        dataset: DatasetManifest {
            schema: corpus.schema.clone(),
            source: "source.csv".into(),
            target: Some("target.csv".into()),
            support: Some("support.csv".into()),
            test: Some("test.csv".into()),
        },
        synth_config: config.clone(),
        informativeness: corpus
            .schema
            .attributes()
            .iter()
            .cloned()
            .zip(corpus.informativeness.iter().copied())
            .collect(),
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Fraction of pairs whose two records both have a value, per attribute and domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeStat {
    pub attribute: String,
    pub source: f64,
    pub target: f64,
}

fn complete_fraction(pairs: &[PairRecord], attribute: &str) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let complete = pairs
        .iter()
        .filter(|p| !p.left.value(attribute).trim().is_empty() && !p.right.value(attribute).trim().is_empty())
        .count();
    complete as f64 / pairs.len() as f64
}

/// Non-missing-pair fractions for source pairs and target-domain pairs.
pub fn challenge_stats(schema: &AlignedSchema, source: &[PairRecord], target: &[PairRecord]) -> Vec<ChallengeStat> {
    schema
        .attributes()
        .iter()
        .map(|a| ChallengeStat {
            attribute: a.clone(),
            source: complete_fraction(source, a),
            target: complete_fraction(target, a),
        })
        .collect()
}

/// Stats for a generated corpus; the target domain covers target, support and test pairs.
pub fn corpus_stats(corpus: &SynthCorpus) -> Vec<ChallengeStat> {
    let target: Vec<PairRecord> = corpus
        .partitions
        .target
        .iter()
        .chain(&corpus.partitions.support)
        .chain(&corpus.test)
        .cloned()
        .collect();
    challenge_stats(&corpus.schema, &corpus.partitions.source, &target)
}

pub fn write_stats_tsv<W: std::io::Write>(mut writer: W, stats: &[ChallengeStat]) -> Result<()> {
    writeln!(writer, "attribute\tsource\ttarget")?;
    for s in stats {
        writeln!(writer, "{}\t{:.4}\t{:.4}", s.attribute, s.source, s.target)?;
    }
    Ok(())
}

/// Empirical token histogram of one attribute over records from seen or
/// unseen sources.
pub fn token_histogram(pairs: &[PairRecord], attribute: &str, unseen: bool) -> std::collections::BTreeMap<String, usize> {
    let mut hist = std::collections::BTreeMap::new();
    for p in pairs {
        for r in [&p.left, &p.right] {
            if r.source_id.starts_with("unseen") == unseen {
                for t in crate::features::tokenize(r.value(attribute)) {
                    *hist.entry(t).or_insert(0) += 1;
                }
            }
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_source_pairs: 200,
            n_target_pairs: 200,
            n_support: 20,
            n_test_pairs: 200,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let c = small();
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
        let other = SynthConfig { seed: 1, ..c.clone() };
        assert_ne!(generate(&c).unwrap().partitions.source, generate(&other).unwrap().partitions.source);
    }

    #[test]
    fn partition_shapes() {
        let c = small();
        let corpus = generate(&c).unwrap();
        let p = &corpus.partitions;
        assert_eq!(p.source.len(), 200);
        assert_eq!(p.target.len(), 200);
        assert_eq!(p.support.len(), 20);
        assert_eq!(p.support.iter().filter(|x| x.label == Some(true)).count(), 10);
        assert!(p.target.iter().all(|x| x.label.is_none()));
        assert!(p.source.iter().all(|x| x.left.source_id.starts_with("seen")));
        assert!(p.target.iter().all(|x| x.right.source_id.starts_with("unseen")));
        p.validate(&corpus.schema).unwrap();
        let train_ids: HashSet<_> = p.source.iter().chain(&p.target).chain(&p.support).map(|x| &x.pair_id).collect();
        assert!(corpus.test.iter().all(|x| !train_ids.contains(&x.pair_id)));
    }

    #[test]
    fn challenge_free_domains_match() {
        let mut c = small();
        c.shift_strength = 0.0;
        c.new_attributes.clear();
        for a in &mut c.attributes {
            a.missing_source = 0.0;
            a.missing_target = 0.0;
        }
        let corpus = generate(&c).unwrap();
        for s in corpus_stats(&corpus) {
            assert_eq!((s.source, s.target), (1.0, 1.0));
        }
    }

    #[test]
    fn full_missing_rate_empties_target_attribute() {
        let mut c = small();
        c.attributes[0].missing_target = 1.0;
        let corpus = generate(&c).unwrap();
        let name = &c.attributes[0].name;
        for p in corpus.partitions.target.iter().chain(&corpus.test) {
            assert_eq!(p.left.value(name), "");
            assert_eq!(p.right.value(name), "");
        }
    }

    #[test]
    fn missing_rate_is_respected() {
        let mut c = small();
        c.n_source_pairs = 500;
        c.attributes[0].missing_source = 0.3;
        let corpus = generate(&c).unwrap();
        let name = &c.attributes[0].name;
        let records: Vec<&EntityRecord> = corpus.partitions.source.iter().flat_map(|p| [&p.left, &p.right]).collect();
        assert_eq!(records.len(), 1000);
        let missing = records.iter().filter(|r| r.value(name).is_empty()).count() as f64 / 1000.0;
        assert!((missing - 0.3).abs() < 0.05, "missing fraction {missing}");
    }

    #[test]
    fn new_attribute_absent_from_source() {
        let corpus = generate(&small()).unwrap();
        let stats = corpus_stats(&corpus);
        let label = stats.iter().find(|s| s.attribute == "label").unwrap();
        assert_eq!(label.source, 0.0);
        assert!(label.target > 0.0);
        assert!(stats.iter().all(|s| (0.0..=1.0).contains(&s.source) && (0.0..=1.0).contains(&s.target)));
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let mut c = small();
        c.attributes[0].vocab_size = 1;
        assert!(matches!(generate(&c), Err(Error::InfeasibleConfig(_))));
        let mut c = small();
        c.attributes.truncate(1);
        assert!(generate(&c).is_err());
        let mut c = small();
        c.new_attributes.push("nope".into());
        assert!(generate(&c).is_err());
        let c = SynthConfig { n_support: 3, ..small() };
        assert!(generate(&c).is_err());
    }

    #[test]
    fn class_balance_tracks_pos_rate() {
        let c = SynthConfig { n_source_pairs: 2000, ..small() };
        let corpus = generate(&c).unwrap();
        let pos = corpus.partitions.source.iter().filter(|p| p.label == Some(true)).count() as f64 / 2000.0;
        // 4 binomial standard deviations
        let sd = (c.pos_rate * (1.0 - c.pos_rate) / 2000.0).sqrt();
        assert!((pos - c.pos_rate).abs() < 4.0 * sd);
    }

    #[test]
    fn corpus_files_round_trip() {
        let c = small();
        let corpus = generate(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = write_corpus(&corpus, &c, dir.path()).unwrap();
        let (manifest, base) = DatasetManifest::read(&manifest_path).unwrap();
        let loaded = manifest.load(&base).unwrap();
        assert_eq!(loaded, corpus.partitions);
        assert_eq!(manifest.load_test(&base).unwrap().unwrap(), corpus.test);
        let full: SynthManifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
        assert_eq!(full.synth_config, c);
    }
}

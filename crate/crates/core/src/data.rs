//! Record and pair data model, ontology alignment and pair-file ingestion.
//!
//! Pair files are UTF-8 CSV with the header
//! `pair_id,source_left,source_right,label,left_<attr>,right_<attr>,...`
//! in schema order. Missing values are empty cells.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Ordered union of attribute names across all sources.
///
/// Feature `2k` is the shared-token feature of attribute `k` and feature
/// `2k + 1` its unique-token feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AlignedSchema {
    attributes: Vec<String>,
}

impl AlignedSchema {
    /// Builds a schema from attribute names in the given order.
    pub fn new(attributes: Vec<String>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::EmptySchema);
        }
        let mut seen = HashSet::new();
        for a in &attributes {
            if !seen.insert(a.as_str()) {
                return Err(Error::DuplicateAttribute(a.clone()));
            }
        }
        Ok(Self { attributes })
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Number of contrastive features, two per attribute.
    pub fn feature_count(&self) -> usize {
        2 * self.attributes.len()
    }

    pub fn index_of(&self, attribute: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == attribute)
    }

    /// Display name of feature `j`, e.g. `title_shared` or `title_unique`.
    pub fn feature_name(&self, j: usize) -> String {
        let kind = if j.is_multiple_of(2) { "shared" } else { "unique" };
        format!("{}_{}", self.attributes[j / 2], kind)
    }
}

impl TryFrom<Vec<String>> for AlignedSchema {
    type Error = Error;

    fn try_from(value: Vec<String>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<AlignedSchema> for Vec<String> {
    fn from(value: AlignedSchema) -> Self {
        value.attributes
    }
}

/// Unions per-source attribute lists into one lexicographically ordered schema.
pub fn align_ontology<S: AsRef<str>>(schemas: &[Vec<S>]) -> Result<AlignedSchema> {
    let union: BTreeSet<String> = schemas
        .iter()
        .flatten()
        .map(|a| a.as_ref().to_string())
        .filter(|a| !a.is_empty())
        .collect();
    AlignedSchema::new(union.into_iter().collect())
}

/// One record from one data source. Missing values are empty strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub source_id: String,
    pub values: BTreeMap<String, String>,
}

impl EntityRecord {
    /// Builds a record conforming to `schema`; attributes not listed in
    /// `values` are filled with the empty string.
    pub fn new<I, K, V>(source_id: impl Into<String>, schema: &AlignedSchema, values: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut map: BTreeMap<String, String> = schema
            .attributes()
            .iter()
            .map(|a| (a.clone(), String::new()))
            .collect();
        for (k, v) in values {
            let k = k.into();
            match map.get_mut(&k) {
                Some(slot) => *slot = v.into(),
                None => {
                    return Err(Error::DimensionMismatch(format!(
                        "attribute `{k}` is not part of the schema"
                    )))
                }
            }
        }
        Ok(Self {
            source_id: source_id.into(),
            values: map,
        })
    }

    pub fn value(&self, attribute: &str) -> &str {
        self.values.get(attribute).map(String::as_str).unwrap_or("")
    }

    pub fn conforms_to(&self, schema: &AlignedSchema) -> bool {
        self.values.len() == schema.len()
            && schema.attributes().iter().all(|a| self.values.contains_key(a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub left: EntityRecord,
    pub right: EntityRecord,
    /// `Some(true)` for a match, `Some(false)` for a non-match.
    pub label: Option<bool>,
}

impl PairRecord {
    /// Label as a float target, if present.
    pub fn target(&self) -> Option<f64> {
        self.label.map(|l| if l { 1.0 } else { 0.0 })
    }

    pub fn without_label(mut self) -> Self {
        self.label = None;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Source,
    Target,
    Support,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Source => "source",
            Partition::Target => "target",
            Partition::Support => "support",
        }
    }

    fn requires_label(self) -> bool {
        !matches!(self, Partition::Target)
    }
}

/// Labeled source domain, unlabeled target domain and labeled support set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetPartitions {
    pub source: Vec<PairRecord>,
    pub target: Vec<PairRecord>,
    pub support: Vec<PairRecord>,
}

impl DatasetPartitions {
    /// Checks labels, pair-id disjointness, schema conformance, and that the
    /// support set only draws on target-domain sources.
    pub fn validate(&self, schema: &AlignedSchema) -> Result<()> {
        for (pairs, partition) in [
            (&self.source, Partition::Source),
            (&self.support, Partition::Support),
        ] {
            if let Some(p) = pairs.iter().find(|p| p.label.is_none()) {
                return Err(Error::UnlabeledPair {
                    pair_id: p.pair_id.clone(),
                    partition: partition.name(),
                });
            }
        }
        let mut ids = HashSet::new();
        for p in self.source.iter().chain(&self.target).chain(&self.support) {
            if !ids.insert(p.pair_id.as_str()) {
                return Err(Error::PartitionOverlap(p.pair_id.clone()));
            }
            if !p.left.conforms_to(schema) || !p.right.conforms_to(schema) {
                return Err(Error::DimensionMismatch(format!(
                    "pair `{}` does not conform to the schema",
                    p.pair_id
                )));
            }
        }
        if !self.target.is_empty() {
            let target_sources = source_ids(&self.target);
            if let Some(p) = self.support.iter().find(|p| {
                !target_sources.contains(&p.left.source_id)
                    || !target_sources.contains(&p.right.source_id)
            }) {
                return Err(Error::DimensionMismatch(format!(
                    "support pair `{}` uses a source absent from the target domain",
                    p.pair_id
                )));
            }
        }
        Ok(())
    }
}

fn source_ids(pairs: &[PairRecord]) -> HashSet<String> {
    pairs
        .iter()
        .flat_map(|p| [p.left.source_id.clone(), p.right.source_id.clone()])
        .collect()
}

const FIXED_COLUMNS: [&str; 4] = ["pair_id", "source_left", "source_right", "label"];

fn header(schema: &AlignedSchema) -> Vec<String> {
    let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for a in schema.attributes() {
        cols.push(format!("left_{a}"));
        cols.push(format!("right_{a}"));
    }
    cols
}

/// Reads pairs from a pair file at `path`.
pub fn load_pairs(path: impl AsRef<Path>, schema: &AlignedSchema, partition: Partition) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_pairs(file, path, schema, partition)
}

/// Reads pairs from any reader; `origin` is used in error messages.
pub fn read_pairs<R: Read>(
    reader: R,
    origin: &Path,
    schema: &AlignedSchema,
    partition: Partition,
) -> Result<Vec<PairRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let required = |name: &str| {
        col(name).ok_or_else(|| Error::MissingColumn {
            path: origin.to_path_buf(),
            column: name.to_string(),
        })
    };
    let source_left = required("source_left")?;
    let source_right = required("source_right")?;
    let pair_id_col = col("pair_id");
    let label_col = col("label");
    let attr_cols: Vec<(Option<usize>, Option<usize>)> = schema
        .attributes()
        .iter()
        .map(|a| (col(&format!("left_{a}")), col(&format!("right_{a}"))))
        .collect();

    let mut out = Vec::new();
    for (index, row) in rdr.records().enumerate() {
        let row_no = index + 1;
        let malformed = |message: String| Error::MalformedRow {
            path: origin.to_path_buf(),
            row: row_no,
            message,
        };
        let record = row.map_err(|e| malformed(e.to_string()))?;
        let cell = |c: Option<usize>| c.and_then(|c| record.get(c)).unwrap_or("");

        let label = match cell(label_col).trim() {
            "" => None,
            "1" => Some(true),
            "0" => Some(false),
            other => return Err(malformed(format!("label `{other}` is not 0 or 1"))),
        };
        let pair_id = match cell(pair_id_col) {
            "" => index.to_string(),
            id => id.to_string(),
        };
        if label.is_none() && partition.requires_label() {
            return Err(Error::UnlabeledPair {
                pair_id,
                partition: partition.name(),
            });
        }
        let side = |source: usize, right: bool| {
            let values = schema
                .attributes()
                .iter()
                .zip(&attr_cols)
                .map(|(a, &(l, r))| (a.clone(), cell(if right { r } else { l }).to_string()));
            EntityRecord::new(cell(Some(source)), schema, values)
        };
        out.push(PairRecord {
            pair_id,
            left: side(source_left, false)?,
            right: side(source_right, true)?,
            label,
        });
    }
    Ok(out)
}

/// Attribute names declared by a pair file's `left_<attr>`/`right_<attr>` columns.
pub fn read_attribute_columns(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_reader(File::open(path.as_ref())?);
    let names: BTreeSet<String> = rdr
        .headers()?
        .iter()
        .filter_map(|h| h.strip_prefix("left_").or_else(|| h.strip_prefix("right_")))
        .map(str::to_string)
        .collect();
    Ok(names.into_iter().collect())
}

/// Writes pairs in the pair-file format.
pub fn write_pairs(path: impl AsRef<Path>, schema: &AlignedSchema, pairs: &[PairRecord]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_pairs_to(file, schema, pairs)
}

pub fn write_pairs_to<W: Write>(writer: W, schema: &AlignedSchema, pairs: &[PairRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(header(schema))?;
    for p in pairs {
        let mut row = vec![
            p.pair_id.clone(),
            p.left.source_id.clone(),
            p.right.source_id.clone(),
            match p.label {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            },
        ];
        for a in schema.attributes() {
            row.push(p.left.value(a).to_string());
            row.push(p.right.value(a).to_string());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Draws a balanced labeled support set of size `n` from labeled target
/// pairs. The remaining pairs are returned with labels stripped, in their
/// original order.
pub fn split_support(
    target_pairs: Vec<PairRecord>,
    n: usize,
    seed: u64,
) -> Result<(Vec<PairRecord>, Vec<PairRecord>)> {
    if !n.is_multiple_of(2) {
        return Err(Error::OddSupportSize(n));
    }
    let half = n / 2;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, p) in target_pairs.iter().enumerate() {
        match p.label {
            Some(true) => positives.push(i),
            Some(false) => negatives.push(i),
            None => {
                return Err(Error::UnlabeledPair {
                    pair_id: p.pair_id.clone(),
                    partition: "support",
                })
            }
        }
    }
    for (pool, class) in [(&positives, "positives"), (&negatives, "negatives")] {
        if pool.len() < half {
            return Err(Error::InsufficientPairs {
                class,
                needed: half,
                available: pool.len(),
            });
        }
    }
    let mut rng = rng::stream(seed, "support");
    let chosen_pos: Vec<usize> = positives.choose_multiple(&mut rng, half).copied().collect();
    let chosen_neg: Vec<usize> = negatives.choose_multiple(&mut rng, half).copied().collect();

    let mut selected = vec![false; target_pairs.len()];
    for &i in chosen_pos.iter().chain(&chosen_neg) {
        selected[i] = true;
    }
    let mut slots: Vec<Option<PairRecord>> = target_pairs.into_iter().map(Some).collect();
    let support = chosen_pos
        .iter()
        .chain(&chosen_neg)
        .map(|&i| slots[i].take().expect("index selected once"))
        .collect();
    let remaining = slots
        .into_iter()
        .zip(selected)
        .filter(|(_, s)| !s)
        .filter_map(|(p, _)| p.map(PairRecord::without_label))
        .collect();
    Ok((support, remaining))
}

/// JSON manifest naming the partition files of one dataset.
///
/// Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: AlignedSchema,
    pub source: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let manifest: Self = serde_json::from_reader(File::open(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = File::create(path)?;
        serde_json::to_writer_pretty(&mut file, self)?;
        writeln!(file)?;
        Ok(())
    }

    /// Loads every partition listed in the manifest.
    pub fn load(&self, base: &Path) -> Result<DatasetPartitions> {
        let load = |p: &Option<PathBuf>, part| -> Result<Vec<PairRecord>> {
            match p {
                Some(p) => load_pairs(base.join(p), &self.schema, part),
                None => Ok(Vec::new()),
            }
        };
        let parts = DatasetPartitions {
            source: load_pairs(base.join(&self.source), &self.schema, Partition::Source)?,
            target: load(&self.target, Partition::Target)?
                .into_iter()
                .map(PairRecord::without_label)
                .collect(),
            support: load(&self.support, Partition::Support)?,
        };
        parts.validate(&self.schema)?;
        Ok(parts)
    }

    pub fn load_test(&self, base: &Path) -> Result<Option<Vec<PairRecord>>> {
        self.test
            .as_ref()
            .map(|p| load_pairs(base.join(p), &self.schema, Partition::Support))
            .transpose()
    }
}

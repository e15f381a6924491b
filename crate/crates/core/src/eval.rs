//! Precision–recall area and attention reporting.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::PairRecord;
use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::losses::mean_attention;
use crate::model::{self, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrMethod {
    /// Σ ΔRecall × Precision over descending thresholds (step interpolation).
    #[default]
    AveragePrecision,
    /// Trapezoidal rule over the same operating points.
    Trapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, by descending threshold.
    pub points: Vec<PrPoint>,
    pub prauc: f64,
    pub method: PrMethod,
}

/// Operating points of a ranking; tied scores form a single point.
pub fn pr_points(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::DimensionMismatch("scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold,
        });
    }
    Ok(points)
}

fn area(points: &[PrPoint], method: PrMethod) -> f64 {
    let mut prev_recall = 0.0;
    let mut prev_precision = points.first().map(|p| p.precision).unwrap_or(0.0);
    let mut total = 0.0;
    for p in points {
        let dr = p.recall - prev_recall;
        total += match method {
            PrMethod::AveragePrecision => dr * p.precision,
            PrMethod::Trapezoid => dr * 0.5 * (p.precision + prev_precision),
        };
        prev_recall = p.recall;
        prev_precision = p.precision;
    }
    total
}

/// Area under the precision–recall curve.
///
/// The trapezoid starts at recall 0 with the precision of the highest
/// threshold, so constant scores give the positive prevalence under both
/// methods.
pub fn prauc(scores: &[f64], labels: &[bool], method: PrMethod) -> Result<PrCurve> {
    let points = pr_points(scores, labels)?;
    let prauc = area(&points, method);
    Ok(PrCurve { points, prauc, method })
}

pub fn write_pr_curve<W: Write>(writer: W, curve: &PrCurve) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["threshold", "recall", "precision"])?;
    for p in &curve.points {
        wtr.write_record(&[p.threshold.to_string(), p.recall.to_string(), p.precision.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Contents of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub prauc_average_precision: f64,
    pub prauc_trapezoid: f64,
    pub default_method: PrMethod,
    pub pairs: usize,
    pub positives: usize,
    pub negatives: usize,
    pub config_hash: String,
    pub timestamp: String,
}

impl Metrics {
    pub fn compute(scores: &[f64], labels: &[bool], config_hash: String, timestamp: String) -> Result<Self> {
        let positives = labels.iter().filter(|&&l| l).count();
        Ok(Self {
            prauc_average_precision: prauc(scores, labels, PrMethod::AveragePrecision)?.prauc,
            prauc_trapezoid: prauc(scores, labels, PrMethod::Trapezoid)?.prauc,
            default_method: PrMethod::AveragePrecision,
            pairs: labels.len(),
            positives,
            negatives: labels.len() - positives,
            config_hash,
            timestamp,
        })
    }
}

/// Mean attention per feature, highest first, truncated to `k` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub rows: Vec<(String, f64)>,
    pub k: usize,
}

impl AttentionReport {
    /// Builds a report from a full mean-attention vector. `k` is clamped to F.
    pub fn from_mean(names: &[String], mean: &[f64], k: usize) -> Self {
        let mut rows: Vec<(String, f64)> = names.iter().cloned().zip(mean.iter().copied()).collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1));
        let k = k.min(rows.len());
        rows.truncate(k);
        Self { rows, k }
    }

    pub fn write_tsv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "feature\tattention")?;
        for (name, score) in &self.rows {
            writeln!(writer, "{name}\t{score:.4}")?;
        }
        Ok(())
    }
}

/// Top-`k` features by attention averaged over `pairs`.
pub fn attention_report(
    params: &ModelParams,
    pairs: &[PairRecord],
    featurizer: &Featurizer,
    k: usize,
) -> Result<AttentionReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("pair set"));
    }
    let vectors = pairs
        .iter()
        .map(|p| Ok(model::forward(&featurizer.featurize(p)?, params)?.attention.0))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mean = mean_attention(vectors.iter().map(Vec::as_slice))?;
    Ok(AttentionReport::from_mean(&featurizer.feature_names(), &mean, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// One exported row: pair id, domain tag and attention vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub pair_id: String,
    pub domain: Domain,
    pub attention: Vec<f64>,
}

/// Writes source and target attention vectors as CSV
/// (`pair_id,domain,g_1..g_F`).
pub fn export_attention_vectors(
    params: &ModelParams,
    source: &[PairRecord],
    target: &[PairRecord],
    featurizer: &Featurizer,
    path: impl AsRef<Path>,
) -> Result<()> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("attention export partition"));
    }
    let mut rows = attention_rows(params, source, Domain::Source, featurizer)?;
    rows.extend(attention_rows(params, target, Domain::Target, featurizer)?);
    write_attention_rows(std::fs::File::create(path)?, &rows)
}

/// Attention vectors of `pairs`, tagged with `domain`.
pub fn attention_rows(
    params: &ModelParams,
    pairs: &[PairRecord],
    domain: Domain,
    featurizer: &Featurizer,
) -> Result<Vec<AttentionRow>> {
    pairs
        .iter()
        .map(|p| {
            Ok(AttentionRow {
                pair_id: p.pair_id.clone(),
                domain,
                attention: model::forward(&featurizer.featurize(p)?, params)?.attention.0,
            })
        })
        .collect()
}

pub fn write_attention_rows<W: Write>(writer: W, rows: &[AttentionRow]) -> Result<()> {
    let f = rows.first().map(|r| r.attention.len()).unwrap_or(0);
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["pair_id".to_string(), "domain".to_string()];
    header.extend((1..=f).map(|j| format!("g_{j}")));
    wtr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.pair_id.clone(),
            match r.domain {
                Domain::Source => "source".into(),
                Domain::Target => "target".into(),
            },
        ];
        rec.extend(r.attention.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_attention_rows<R: Read>(reader: R) -> Result<Vec<AttentionRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| Error::MalformedRow {
            path: "attention export".into(),
            row: i + 1,
            message,
        };
        let domain = match rec.get(1) {
            Some("source") => Domain::Source,
            Some("target") => Domain::Target,
            other => return Err(bad(format!("bad domain {other:?}"))),
        };
        let attention = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<f64>>>()?;
        out.push(AttentionRow {
            pair_id: rec.get(0).unwrap_or_default().to_string(),
            domain,
            attention,
        });
    }
    Ok(out)
}

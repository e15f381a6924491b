//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use adamel::features::PairFeatures;
use adamel::model::ModelParams;
use rand::Rng;

/// Central finite differences of `loss` with respect to every parameter.
pub fn finite_difference<F>(params: &ModelParams, step: f64, mut loss: F) -> Vec<f64>
where
    F: FnMut(&ModelParams) -> f64,
{
    let mut probe = params.clone();
    (0..params.as_slice().len())
        .map(|i| {
            let x = params.as_slice()[i];
            probe.as_mut_slice()[i] = x + step;
            let up = loss(&probe);
            probe.as_mut_slice()[i] = x - step;
            let down = loss(&probe);
            probe.as_mut_slice()[i] = x;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest entrywise relative error; magnitudes below `floor` are compared
/// against `floor` instead.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// PRAUC by enumerating every distinct score as a threshold
/// (predict positive iff score ≥ threshold).
///
/// Returns (average precision, trapezoid area); the trapezoid starts at
/// recall 0 with the precision of the highest threshold.
pub fn brute_force_prauc(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut ap = 0.0;
    let mut trap = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for t in thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let precision = tp / (tp + fp);
        let recall = tp / positives;
        let (r0, p0) = prev.unwrap_or((0.0, precision));
        ap += (recall - r0) * precision;
        trap += (recall - r0) * (precision + p0) / 2.0;
        prev = Some((recall, precision));
    }
    (ap, trap)
}

/// Pair features with entries uniform in [-1, 1].
pub fn random_features<R: Rng>(rng: &mut R, features: usize, dim: usize) -> PairFeatures {
    PairFeatures {
        features,
        dim,
        h: (0..features * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        missing_mask: vec![false; features],
    }
}

/// A point of the probability simplex with every entry ≥ `min / n`.
pub fn random_simplex<R: Rng>(rng: &mut R, n: usize, min: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(min..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

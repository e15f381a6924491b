//! Loss terms and the batch objective.
//!
//! * base: mean binary cross-entropy over labeled source pairs.
//! * target: mean KL divergence `KL(f̄ ‖ g_i)` between the target-domain
//!   mean attention `f̄` and each source pair's attention `g_i`.
//! * support: centroid-distance weighted negative log-likelihood over the
//!   labeled support pairs.
//!
//! `f̄` and the class centroids are population statistics computed before a
//! batch and held constant during backprop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::PairFeatures;
use crate::model::{self, AttentionVector, Gradients, ModelParams};

/// Probability clamp for logarithms.
pub const PROB_EPS: f64 = 1e-12;
/// Floor applied to mean centroid distances.
pub const DIST_FLOOR: f64 = 1e-12;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn clamped(p: f64) -> bool {
    !(PROB_EPS..=1.0 - PROB_EPS).contains(&p)
}

fn log_likelihood(y_hat: f64, y: f64) -> f64 {
    let p = clamp_prob(y_hat);
    y * p.ln() + (1.0 - y) * (1.0 - p).ln()
}

/// Mean binary cross-entropy.
pub fn loss_base(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("prediction batch"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let n = predictions.len() as f64;
    Ok(-predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| log_likelihood(p, y))
        .sum::<f64>()
        / n)
}

/// Elementwise mean of attention vectors.
pub fn mean_attention<'a, I>(vectors: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for v in vectors {
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyInput("target batch"));
    }
    Ok(acc.into_iter().map(|a| a / n as f64).collect())
}

/// `f̄`: mean attention over the given target-domain pairs.
pub fn mean_target_attention(target: &[PairFeatures], params: &ModelParams) -> Result<Vec<f64>> {
    let vectors = target
        .iter()
        .map(|h| model::forward(h, params).map(|p| p.attention))
        .collect::<Result<Vec<AttentionVector>>>()?;
    mean_attention(vectors.iter().map(|g| g.as_slice()))
}

/// `(1/B) Σ_i Σ_j f̄_j ln(f̄_j / g_ij)` with `g` clamped at [`PROB_EPS`].
pub fn loss_target(source_attentions: &[&[f64]], mean_target: &[f64]) -> f64 {
    if source_attentions.is_empty() {
        return 0.0;
    }
    let b = source_attentions.len() as f64;
    source_attentions
        .iter()
        .map(|g| kl(mean_target, g))
        .sum::<f64>()
        / b
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pj, _)| pj > 0.0)
        .map(|(&pj, &qj)| pj * (pj / qj.max(PROB_EPS)).ln())
        .sum()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidHyperparameter(format!("λ={lambda} is outside [0, 1]")));
    }
    Ok(())
}

fn check_phi(phi: f64) -> Result<()> {
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(Error::InvalidHyperparameter(format!("φ={phi} is outside (0, 1]")));
    }
    Ok(())
}

/// `(1−λ)·base + λ·target`.
pub fn loss_un(base: f64, target: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok((1.0 - lambda) * base + lambda * target)
}

/// `base + φ·support`.
pub fn loss_ssl(base: f64, support: f64, phi: f64) -> Result<f64> {
    check_phi(phi)?;
    Ok(base + phi * support)
}

/// `(1−λ)·base + λ·target + φ·support`.
pub fn loss_hybrid(base: f64, target: f64, support: f64, lambda: f64, phi: f64) -> Result<f64> {
    check_lambda(lambda)?;
    check_phi(phi)?;
    Ok((1.0 - lambda) * base + lambda * target + phi * support)
}

/// Per-class attention centroids of the source domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    /// Mean distance of positive pairs to `positive`, floored.
    pub mean_dist_positive: f64,
    pub mean_dist_negative: f64,
}

impl Centroids {
    fn for_label(&self, y: f64) -> (&[f64], f64) {
        if y >= 0.5 {
            (&self.positive, self.mean_dist_positive)
        } else {
            (&self.negative, self.mean_dist_negative)
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Centroids and mean centroid distances from labeled attention vectors.
pub fn compute_centroids<V: AsRef<[f64]>>(labeled: &[(V, bool)]) -> Result<Centroids> {
    let class = |want: bool| -> Result<(Vec<f64>, f64)> {
        let members: Vec<&[f64]> = labeled
            .iter()
            .filter(|(_, y)| *y == want)
            .map(|(g, _)| g.as_ref())
            .collect();
        let centroid = mean_attention(members.iter().copied()).map_err(|_| Error::InsufficientPairs {
            class: if want { "positives" } else { "negatives" },
            needed: 1,
            available: 0,
        })?;
        let mean = members.iter().map(|g| euclidean(g, &centroid)).sum::<f64>() / members.len() as f64;
        Ok((centroid, mean.max(DIST_FLOOR)))
    };
    let (positive, mean_dist_positive) = class(true)?;
    let (negative, mean_dist_negative) = class(false)?;
    Ok(Centroids {
        positive,
        negative,
        mean_dist_positive,
        mean_dist_negative,
    })
}

/// One support pair's attention, prediction and label.
#[derive(Debug, Clone, Copy)]
pub struct SupportTerm<'a> {
    pub attention: &'a [f64],
    pub y_hat: f64,
    pub y: f64,
}

/// `−(1/|S|) Σ (d(g_i, c_y) / d̄_y) · ln p(y_i)`.
pub fn loss_support(terms: &[SupportTerm<'_>], centroids: &Centroids) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::EmptyInput("support set"));
    }
    let n = terms.len() as f64;
    Ok(-terms
        .iter()
        .map(|t| {
            let (c, dbar) = centroids.for_label(t.y);
            euclidean(t.attention, c) / dbar * log_likelihood(t.y_hat, t.y)
        })
        .sum::<f64>()
        / n)
}

/// Coefficients of the three loss terms in the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub base: f64,
    pub target: f64,
    pub support: f64,
}

impl Objective {
    pub fn base() -> Self {
        Self {
            base: 1.0,
            target: 0.0,
            support: 0.0,
        }
    }

    pub fn un(lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            base: 1.0 - lambda,
            target: lambda,
            support: 0.0,
        })
    }

    pub fn ssl(phi: f64) -> Result<Self> {
        check_phi(phi)?;
        Ok(Self {
            base: 1.0,
            target: 0.0,
            support: phi,
        })
    }

    pub fn hybrid(lambda: f64, phi: f64) -> Result<Self> {
        check_lambda(lambda)?;
        check_phi(phi)?;
        Ok(Self {
            base: 1.0 - lambda,
            target: lambda,
            support: phi,
        })
    }
}

/// Loss of one batch, total and per component.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub base: f64,
    pub target: f64,
    pub support: f64,
}

/// Inputs to one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    /// Labeled source pairs and their 0/1 targets.
    pub source: &'a [(&'a PairFeatures, f64)],
    /// Labeled support pairs; ignored when the support coefficient is 0.
    pub support: &'a [(&'a PairFeatures, f64)],
    /// `f̄`, required when the target coefficient is non-zero.
    pub mean_target: Option<&'a [f64]>,
    /// Required when the support coefficient is non-zero.
    pub centroids: Option<&'a Centroids>,
}

/// Evaluates the objective on `batch`; when `grads` is given, accumulates the
/// gradient of the total into it.
pub fn evaluate(
    objective: &Objective,
    batch: &Batch<'_>,
    params: &ModelParams,
    mut grads: Option<&mut Gradients>,
) -> Result<LossValue> {
    if batch.source.is_empty() && (objective.base != 0.0 || objective.target != 0.0) {
        return Err(Error::EmptyInput("source batch"));
    }
    let use_target = objective.target != 0.0;
    let use_support = objective.support != 0.0;
    let mean_target = match (use_target, batch.mean_target) {
        (true, None) => return Err(Error::MissingPartition("target")),
        (_, m) => m,
    };
    let centroids = match (use_support, batch.centroids) {
        (true, None) => return Err(Error::MissingPartition("support")),
        (_, c) => c,
    };
    if use_support && batch.support.is_empty() {
        return Err(Error::EmptyInput("support set"));
    }

    let n = batch.source.len().max(1) as f64;
    let mut value = LossValue::default();
    for &(h, y) in batch.source {
        let pass = model::forward(h, params)?;
        value.base -= log_likelihood(pass.y_hat, y) / n;
        let g = pass.attention.as_slice();
        let mut d_g = vec![0.0; g.len()];
        if let Some(fbar) = mean_target {
            value.target += kl(fbar, g) / n;
            for ((d, &f), &gj) in d_g.iter_mut().zip(fbar).zip(g) {
                if gj > PROB_EPS {
                    *d = -objective.target * f / gj / n;
                }
            }
        }
        if let Some(grads) = grads.as_deref_mut() {
            let d_logit = if clamped(pass.y_hat) {
                0.0
            } else {
                objective.base * (pass.y_hat - y) / n
            };
            model::backward(h, &pass, params, d_logit, &d_g, grads);
        }
    }

    if let (true, Some(c)) = (use_support, centroids) {
        let s = batch.support.len() as f64;
        for &(h, y) in batch.support {
            let pass = model::forward(h, params)?;
            let g = pass.attention.as_slice();
            let (centroid, dbar) = c.for_label(y);
            let dist = euclidean(g, centroid);
            let ll = log_likelihood(pass.y_hat, y);
            let weight = dist / dbar;
            value.support -= weight * ll / s;
            if let Some(grads) = grads.as_deref_mut() {
                let d_logit = if clamped(pass.y_hat) {
                    0.0
                } else {
                    objective.support * weight * (pass.y_hat - y) / s
                };
                let d_g: Vec<f64> = if dist > 0.0 {
                    g.iter()
                        .zip(centroid)
                        .map(|(gj, cj)| -objective.support * ll * (gj - cj) / (dist * dbar) / s)
                        .collect()
                } else {
                    vec![0.0; g.len()]
                };
                model::backward(h, &pass, params, d_logit, &d_g, grads);
            }
        }
    }

    value.total = objective.base * value.base + objective.target * value.target + objective.support * value.support;
    if let Some(grads) = grads {
        if let Some(t) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(t.name().to_string()));
        }
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn base_examples() {
        assert!(close(loss_base(&[0.5], &[1.0]).unwrap(), 2f64.ln(), 1e-15));
        assert!(loss_base(&[1.0 - 1e-12], &[1.0]).unwrap() < 1e-11);
        let v = loss_base(&[0.9, 0.2], &[1.0, 0.0]).unwrap();
        assert!(close(v, -0.5 * (0.9f64.ln() + 0.8f64.ln()), 1e-15));
        assert!(close(v, 0.164_252_033_486_018, 1e-12));
        assert!(matches!(loss_base(&[], &[]), Err(Error::EmptyInput(_))));
        assert!(loss_base(&[0.0, 1.0], &[1.0, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn mean_attention_examples() {
        let g = [0.3, 0.7];
        assert_eq!(mean_attention([&g[..]]).unwrap(), g);
        let m = mean_attention([&[0.25, 0.75][..], &[0.75, 0.25][..]]).unwrap();
        assert_eq!(m, [0.5, 0.5]);
        assert!(mean_attention(std::iter::empty::<&[f64]>()).is_err());
    }

    #[test]
    fn target_examples() {
        let fbar = [0.5, 0.5];
        assert_eq!(loss_target(&[&fbar[..], &fbar[..]], &fbar), 0.0);
        let v = loss_target(&[&[0.25, 0.75][..]], &fbar);
        assert!(close(v, 0.5 * 2f64.ln() + 0.5 * (0.5f64 / 0.75).ln(), 1e-15));
        assert!(close(v, 0.143_841_036_225_890, 1e-12));
        assert!(loss_target(&[&[1.0, 0.0][..]], &fbar).is_finite());
    }

    #[test]
    fn combination_examples() {
        assert_eq!(loss_un(1.3, 2.7, 0.0).unwrap(), 1.3);
        assert_eq!(loss_un(1.3, 2.7, 1.0).unwrap(), 2.7);
        assert!(close(loss_un(1.0, 2.0, 0.98).unwrap(), 1.98, 1e-12));
        assert!(loss_un(1.0, 2.0, 1.5).is_err());
        assert!(close(loss_ssl(0.5, 0.3, 1.0).unwrap(), 0.8, 1e-15));
        assert_eq!(loss_ssl(0.5, 0.0, 0.4).unwrap(), 0.5);
        assert!(close(loss_ssl(0.5, 0.3, 1e-300).unwrap(), 0.5, 1e-15));
        assert!(loss_ssl(0.5, 0.3, 0.0).is_err());
        assert!(close(loss_hybrid(1.0, 2.0, 0.5, 0.98, 1.0).unwrap(), 2.48, 1e-12));
        assert_eq!(loss_hybrid(1.0, 2.0, 0.5, 0.0, 1.0).unwrap(), loss_ssl(1.0, 0.5, 1.0).unwrap());
        assert!(close(
            loss_hybrid(1.0, 2.0, 0.5, 0.3, 1e-300).unwrap(),
            loss_un(1.0, 2.0, 0.3).unwrap(),
            1e-15
        ));
        assert!(loss_hybrid(1.0, 2.0, 0.5, 0.3, 1.1).is_err());
    }

    #[test]
    fn centroid_examples() {
        let c = compute_centroids(&[(vec![0.2, 0.8], true), (vec![0.4, 0.6], true), (vec![0.5, 0.5], false)]).unwrap();
        assert!(close(c.positive[0], 0.3, 1e-15) && close(c.positive[1], 0.7, 1e-15));
        assert!(close(c.mean_dist_positive, 0.02f64.sqrt(), 1e-12));
        assert_eq!(c.negative, [0.5, 0.5]);
        assert_eq!(c.mean_dist_negative, DIST_FLOOR);
        assert!(compute_centroids(&[(vec![0.5, 0.5], true)]).is_err());
    }

    fn centroids(dbar: f64) -> Centroids {
        Centroids {
            positive: vec![0.5, 0.5],
            negative: vec![0.5, 0.5],
            mean_dist_positive: dbar,
            mean_dist_negative: dbar,
        }
    }

    #[test]
    fn support_examples() {
        let c = centroids(0.1);
        let at_centroid = [0.5, 0.5];
        let t = SupportTerm { attention: &at_centroid, y_hat: 0.3, y: 1.0 };
        assert_eq!(loss_support(&[t], &c).unwrap(), 0.0);

        // d = dbar: weight 1, plain log-loss term
        let g = [0.6, 0.4];
        let d = euclidean(&g, &c.positive);
        let c1 = centroids(d);
        let t = SupportTerm { attention: &g, y_hat: 0.5, y: 1.0 };
        assert!(close(loss_support(&[t, t], &c1).unwrap(), 2f64.ln(), 1e-15));

        let c2 = centroids(d / 2.0);
        let t = SupportTerm { attention: &g, y_hat: 0.9, y: 1.0 };
        assert!(close(loss_support(&[t], &c2).unwrap(), -2.0 * 0.9f64.ln(), 1e-12));
        assert!(close(loss_support(&[t], &c2).unwrap(), 0.210_721_031_315_652, 1e-12));
        assert!(loss_support(&[], &c).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn simplex(raw: Vec<f64>) -> Vec<f64> {
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        }

        proptest! {
            #[test]
            fn kl_is_nonnegative(p in proptest::collection::vec(0.01f64..1.0, 5), q in proptest::collection::vec(0.01f64..1.0, 5)) {
                let (p, q) = (simplex(p), simplex(q));
                prop_assert!(loss_target(&[&q[..]], &p) >= 0.0);
                prop_assert!(loss_target(&[&p[..]], &p).abs() < 1e-12);
            }

            #[test]
            fn un_is_affine_in_lambda(b in -5.0f64..5.0, t in -5.0f64..5.0, l1 in 0.0f64..1.0, l2 in 0.0f64..1.0) {
                let mid = 0.5 * (l1 + l2);
                let lhs = loss_un(b, t, mid).unwrap();
                let rhs = 0.5 * (loss_un(b, t, l1).unwrap() + loss_un(b, t, l2).unwrap());
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }

            #[test]
            fn hybrid_is_affine_in_phi(b in -5.0f64..5.0, t in -5.0f64..5.0, s in -5.0f64..5.0, l in 0.0f64..1.0, p1 in 0.01f64..1.0, p2 in 0.01f64..1.0) {
                let mid = 0.5 * (p1 + p2);
                let lhs = loss_hybrid(b, t, s, l, mid).unwrap();
                let rhs = 0.5 * (loss_hybrid(b, t, s, l, p1).unwrap() + loss_hybrid(b, t, s, l, p2).unwrap());
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }
}

//! Cross-dataset consistency of regulatory edges.
//!
//! Each edge gets one Pearson correlation per expression dataset. The
//! consistency score is the proportion of correlations sharing the sign of
//! their mean, divided by `1 + population std`. Edges scoring at or above a
//! threshold (default 0.75) are stable.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExpressionDataset, GeneId, RegulatoryNetwork};

pub const DEFAULT_STABILITY_THRESHOLD: f64 = 0.75;

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSeries);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Same-sign proportion over `1 + population std`.
///
/// Zero entries match either sign. When the mean is exactly zero the larger
/// of the non-negative and non-positive proportions is used, which keeps the
/// score invariant under negating every entry.
pub fn consistency_score(correlations: &[f64]) -> Result<f64> {
    if correlations.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: correlations.len() });
    }
    if correlations.iter().any(|c| !c.is_finite()) {
        return Err(Error::Value("correlations must be finite".into()));
    }
    let n = correlations.len() as f64;
    let mean = correlations.iter().sum::<f64>() / n;
    let nonneg = correlations.iter().filter(|&&c| c >= 0.0).count() as f64 / n;
    let nonpos = correlations.iter().filter(|&&c| c <= 0.0).count() as f64 / n;
    let proportion = if mean > 0.0 {
        nonneg
    } else if mean < 0.0 {
        nonpos
    } else {
        nonneg.max(nonpos)
    };
    let var = correlations.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    Ok(proportion / (1.0 + var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeConsistency {
    pub source: GeneId,
    pub target: GeneId,
    /// One entry per dataset; `None` where the correlation is undefined.
    pub correlations: Vec<Option<f64>>,
    /// `None` when fewer than two correlations are defined.
    pub score: Option<f64>,
    pub stable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeConsistencyReport {
    pub edges: Vec<EdgeConsistency>,
    pub stable_fraction: f64,
}

/// How the stable set is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum StabilityRule {
    /// Stable iff score ≥ threshold.
    Threshold(f64),
    /// The top `fraction` of scored edges; ties at the cut are all stable.
    TopQuantile(f64),
}

impl Default for StabilityRule {
    fn default() -> Self {
        StabilityRule::Threshold(DEFAULT_STABILITY_THRESHOLD)
    }
}

/// Pearson correlation of `source` and `target` over every cell present for
/// both genes.
pub fn edge_correlation(ds: &ExpressionDataset, source: &GeneId, target: &GeneId) -> Option<f64> {
    let (s, t) = (ds.gene_index(source)?, ds.gene_index(target)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for c in 0..ds.codes().len() {
        for ti in 0..ds.times().len() {
            for r in 0..ds.replicates().len() {
                if let (Some(a), Some(b)) = (ds.value(s, c, ti, r), ds.value(t, c, ti, r)) {
                    xs.push(a);
                    ys.push(b);
                }
            }
        }
    }
    pearson(&xs, &ys).ok()
}

/// Scores every network edge against a set of datasets.
pub fn score_edges(net: &RegulatoryNetwork, datasets: &[ExpressionDataset], rule: StabilityRule) -> EdgeConsistencyReport {
    let ensembles: Vec<(GeneId, GeneId, Vec<Option<f64>>)> = net
        .edges()
        .par_iter()
        .map(|e| {
            let corr = datasets.iter().map(|ds| edge_correlation(ds, &e.source, &e.target)).collect();
            (e.source.clone(), e.target.clone(), corr)
        })
        .collect();
    report_from_correlations(ensembles, rule)
}

/// Builds a report from precomputed correlation ensembles.
pub fn report_from_correlations(
    ensembles: Vec<(GeneId, GeneId, Vec<Option<f64>>)>,
    rule: StabilityRule,
) -> EdgeConsistencyReport {
    let mut edges: Vec<EdgeConsistency> = ensembles
        .into_iter()
        .map(|(source, target, correlations)| {
            let defined: Vec<f64> = correlations.iter().flatten().copied().collect();
            let score = consistency_score(&defined).ok();
            EdgeConsistency { source, target, correlations, score, stable: false }
        })
        .collect();
    let scores: Vec<Option<f64>> = edges.iter().map(|e| e.score).collect();
    let part = classify_edges(&scores, rule);
    for &i in &part.stable {
        edges[i].stable = true;
    }
    EdgeConsistencyReport { edges, stable_fraction: part.stable_fraction }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgePartition {
    pub stable: Vec<usize>,
    pub dynamic: Vec<usize>,
    /// Stable count over all edges (unscored edges count as dynamic).
    pub stable_fraction: f64,
}

/// Splits edges (by position in `scores`) into stable and dynamic.
pub fn classify_edges(scores: &[Option<f64>], rule: StabilityRule) -> EdgePartition {
    let cut = match rule {
        StabilityRule::Threshold(t) => t,
        StabilityRule::TopQuantile(fraction) => {
            let mut sorted: Vec<f64> = scores.iter().flatten().copied().collect();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let k = ((fraction * sorted.len() as f64).round() as usize).min(sorted.len());
            if k == 0 {
                f64::INFINITY
            } else {
                sorted[k - 1]
            }
        }
    };
    let (mut stable, mut dynamic) = (Vec::new(), Vec::new());
    for (i, s) in scores.iter().enumerate() {
        match s {
            Some(v) if *v >= cut => stable.push(i),
            _ => dynamic.push(i),
        }
    }
    let stable_fraction = if scores.is_empty() { 0.0 } else { stable.len() as f64 / scores.len() as f64 };
    EdgePartition { stable, dynamic, stable_fraction }
}

pub type EdgeKey = (GeneId, GeneId);

/// Intersection sizes of per-condition stable sets: every singleton, the
/// full intersection, and each requested combination.
pub fn stable_overlap(
    sets: &BTreeMap<u32, BTreeSet<EdgeKey>>,
    requested: &[Vec<u32>],
) -> Result<BTreeMap<Vec<u32>, usize>> {
    if sets.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut combos: BTreeSet<Vec<u32>> = sets.keys().map(|&k| vec![k]).collect();
    combos.insert(sets.keys().copied().collect());
    for r in requested {
        let mut r = r.clone();
        r.sort_unstable();
        r.dedup();
        if r.is_empty() {
            continue;
        }
        if let Some(missing) = r.iter().find(|k| !sets.contains_key(k)) {
            return Err(Error::UnknownIndex { axis: "code", value: missing.to_string() });
        }
        combos.insert(r);
    }
    let mut out = BTreeMap::new();
    for combo in combos {
        let first = &sets[&combo[0]];
        let n = first
            .iter()
            .filter(|e| combo[1..].iter().all(|k| sets[k].contains(*e)))
            .count();
        out.insert(combo, n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_cases() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        // dx = (-1,0,1), dy = (-1,1,0): Σdxdy = 1, Σdx² = Σdy² = 2
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err(), Error::DegenerateSeries);
    }

    fn pop_std(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn score_examples() {
        assert_eq!(consistency_score(&[1.0; 5]).unwrap(), 1.0);

        let v = [0.8, 0.7, 0.9, 0.8, 0.75];
        let expected = 1.0 / (1.0 + pop_std(&v));
        assert!((pop_std(&v) - 0.0663).abs() < 1e-4);
        assert!((consistency_score(&v).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.9378).abs() < 1e-4);

        let v = [0.5, -0.5, 0.5, -0.5, 0.5];
        let expected = 0.6 / (1.0 + pop_std(&v));
        assert!((consistency_score(&v).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.4027).abs() < 1e-4);

        assert_eq!(consistency_score(&[0.5]).unwrap_err().name(), "TooFewSamples");
    }

    #[test]
    fn zero_mean_is_sign_symmetric() {
        let v = [0.5, 0.5, -1.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(consistency_score(&v).unwrap(), consistency_score(&neg).unwrap());
    }

    #[test]
    fn classify_threshold() {
        let p = classify_edges(&[Some(1.0), Some(1.0)], StabilityRule::Threshold(0.75));
        assert_eq!(p.stable_fraction, 1.0);
        let p = classify_edges(&[Some(0.9), Some(0.5)], StabilityRule::Threshold(0.75));
        assert_eq!(p.stable, vec![0]);
        assert_eq!(p.stable_fraction, 0.5);
    }

    #[test]
    fn classify_quantile() {
        let scores: Vec<Option<f64>> = (0..10).map(|i| Some(i as f64 / 10.0)).collect();
        let p = classify_edges(&scores, StabilityRule::TopQuantile(0.3));
        assert_eq!(p.stable, vec![7, 8, 9]);
    }

    fn key(a: &str, b: &str) -> EdgeKey {
        (a.into(), b.into())
    }

    #[test]
    fn overlap_counts() {
        let a: BTreeSet<EdgeKey> = [key("e", "1"), key("e", "2"), key("e", "3")].into();
        let b: BTreeSet<EdgeKey> = [key("e", "2"), key("e", "3"), key("e", "4")].into();
        let sets = BTreeMap::from([(1, a.clone()), (2, b)]);
        let out = stable_overlap(&sets, &[]).unwrap();
        assert_eq!(out[&vec![1, 2]], 2);
        assert_eq!(out[&vec![1]], 3);

        let same = BTreeMap::from([(1, a.clone()), (2, a.clone())]);
        assert_eq!(stable_overlap(&same, &[]).unwrap()[&vec![1, 2]], a.len());

        let c: BTreeSet<EdgeKey> = [key("x", "y")].into();
        let disjoint = BTreeMap::from([(1, a), (3, c)]);
        assert_eq!(stable_overlap(&disjoint, &[vec![3, 1]]).unwrap()[&vec![1, 3]], 0);
    }
}

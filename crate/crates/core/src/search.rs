//! Output-gene search over an expression dataset.
//!
//! * calculation tasks: fold changes relative to the base code must match the
//!   expected map within a tolerance, in every replicate; best = least total
//!   deviation.
//! * classification tasks: target codes strictly above the gene's mean
//!   expression and the rest at or below it, in every replicate; best =
//!   widest margin around the mean (or the narrowest, in `score-min` mode).
//! * binary-encoded tasks: threshold each profile at the midpoint of its
//!   largest gap and require the exact bit pattern in every replicate; best =
//!   widest gap.
//!
//! Ties always resolve to the lexicographically smallest gene, then the
//! earliest timepoint.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExpressionDataset, GeneId, RegulatoryNetwork, SubGrnn};
use crate::tasks::TaskSpec;

pub const DEFAULT_DEPTH_LIMIT: usize = 4;
pub const DEFAULT_INPUT_FALLBACK_K: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub gene: GeneId,
    pub timepoint: u32,
    /// Total deviation δ (calculation) or separation / margin
    /// (classification, binary).
    pub score: f64,
    /// Per-replicate decision thresholds; empty for calculation tasks.
    pub thresholds: Vec<f64>,
    /// Per-replicate contributions to `score`.
    pub per_replicate: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    MinimizeDeviation,
    MaximizeSeparation,
    MinimizeScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub objective: Objective,
    /// Sorted by gene id, then timepoint.
    pub entries: Vec<MatchEntry>,
    pub best: Option<MatchEntry>,
    /// Genes skipped at some timepoint because their base expression is zero.
    pub zero_base_genes: usize,
}

impl MatchSet {
    fn assemble(objective: Objective, mut entries: Vec<MatchEntry>, zero_base_genes: usize) -> Self {
        entries.sort_by(|a, b| a.gene.cmp(&b.gene).then(a.timepoint.cmp(&b.timepoint)));
        let best = pick_best(&entries, objective).cloned();
        MatchSet { objective, entries, best, zero_base_genes }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of distinct genes matching at `timepoint`.
    pub fn count_at(&self, timepoint: u32) -> usize {
        self.entries.iter().filter(|e| e.timepoint == timepoint).count()
    }

    pub fn best_at(&self, timepoint: u32) -> Option<&MatchEntry> {
        let at: Vec<MatchEntry> = self.entries.iter().filter(|e| e.timepoint == timepoint).cloned().collect();
        let best = pick_best(&at, self.objective)?;
        self.entries
            .iter()
            .find(|e| e.gene == best.gene && e.timepoint == best.timepoint)
    }
}

fn tie_break(a: &MatchEntry, b: &MatchEntry) -> Ordering {
    a.gene.cmp(&b.gene).then(a.timepoint.cmp(&b.timepoint))
}

fn pick_best(entries: &[MatchEntry], objective: Objective) -> Option<&MatchEntry> {
    entries.iter().min_by(|a, b| {
        let primary = match objective {
            Objective::MinimizeDeviation | Objective::MinimizeScore => a.score.total_cmp(&b.score),
            Objective::MaximizeSeparation => b.score.total_cmp(&a.score),
        };
        primary.then_with(|| tie_break(a, b))
    })
}

fn code_positions(ds: &ExpressionDataset, codes: &[u32]) -> Result<Vec<usize>> {
    codes
        .iter()
        .map(|&c| {
            ds.code_index(c).ok_or(Error::UnknownIndex { axis: "code", value: c.to_string() })
        })
        .collect()
}

/// Fold-change matching against a calculation spec.
pub fn search_calculation(ds: &ExpressionDataset, spec: &TaskSpec) -> Result<MatchSet> {
    let TaskSpec::Calculation { expected_fold, tolerance, base_code } = spec else {
        return Err(Error::Spec("search_calculation needs a calculation task".into()));
    };
    if tolerance.is_nan() || *tolerance < 0.0 {
        return Err(Error::Spec("tolerance must be non-negative".into()));
    }
    let base = ds
        .code_index(*base_code)
        .ok_or(Error::UnknownIndex { axis: "code", value: base_code.to_string() })?;
    let codes: Vec<u32> = expected_fold.keys().copied().collect();
    let positions = code_positions(ds, &codes)?;
    let folds: Vec<f64> = expected_fold.values().copied().collect();
    let eps = *tolerance;

    let per_gene: Vec<(Vec<MatchEntry>, bool)> = (0..ds.n_genes())
        .into_par_iter()
        .map(|g| {
            let mut found = Vec::new();
            let mut zero_base = false;
            'time: for (ti, &time) in ds.times().iter().enumerate() {
                let mut per_rep = Vec::with_capacity(ds.replicates().len());
                for r in 0..ds.replicates().len() {
                    let Some(xb) = ds.value(g, base, ti, r) else { continue 'time };
                    if xb == 0.0 {
                        zero_base = true;
                        continue 'time;
                    }
                    let mut delta = 0.0;
                    for (&c, &f) in positions.iter().zip(&folds) {
                        let Some(x) = ds.value(g, c, ti, r) else { continue 'time };
                        let diff = (x / xb - f).abs();
                        if !(diff <= eps) {
                            continue 'time;
                        }
                        delta += diff;
                    }
                    per_rep.push(delta);
                }
                found.push(MatchEntry {
                    gene: ds.genes()[g].clone(),
                    timepoint: time,
                    score: per_rep.iter().sum(),
                    thresholds: Vec::new(),
                    per_replicate: per_rep,
                });
            }
            (found, zero_base)
        })
        .collect();

    let zero_base_genes = per_gene.iter().filter(|(_, z)| *z).count();
    let entries = per_gene.into_iter().flat_map(|(e, _)| e).collect();
    Ok(MatchSet::assemble(Objective::MinimizeDeviation, entries, zero_base_genes))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub gene: GeneId,
    pub timepoint: u32,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn class_spec(spec: &TaskSpec) -> Result<(&[u32], Vec<bool>)> {
    let TaskSpec::Classification { codes, targets } = spec else {
        return Err(Error::Spec("expected a classification task".into()));
    };
    if targets.is_empty() || targets.len() >= codes.len() {
        return Err(Error::Spec("targets must be a non-empty proper subset of codes".into()));
    }
    Ok((codes, TaskSpec::classification_pattern(codes, targets)))
}

/// Genes (and timepoints) whose target codes lie strictly above the gene's
/// mean expression and whose other codes lie at or below it, in every
/// replicate. The mean is taken per (gene, timepoint, replicate).
pub fn search_classification_candidates(ds: &ExpressionDataset, spec: &TaskSpec) -> Result<Vec<Candidate>> {
    let (codes, pattern) = class_spec(spec)?;
    let positions = code_positions(ds, codes)?;
    let out: Vec<Vec<Candidate>> = (0..ds.n_genes())
        .into_par_iter()
        .map(|g| {
            let mut found = Vec::new();
            for (ti, &time) in ds.times().iter().enumerate() {
                let ok = (0..ds.replicates().len()).all(|r| {
                    let Some(xs) = ds.profile(g, &positions, ti, r) else { return false };
                    let theta = mean(&xs);
                    xs.iter().zip(&pattern).all(|(&x, &target)| if target { x > theta } else { x <= theta })
                });
                if ok {
                    found.push(Candidate { gene: ds.genes()[g].clone(), timepoint: time });
                }
            }
            found
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Pick the candidate with the widest margin around its mean.
    #[default]
    MarginMax,
    /// Pick the smallest margin sum.
    ScoreMin,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "margin-max" => Ok(SelectionMode::MarginMax),
            "score-min" => Ok(SelectionMode::ScoreMin),
            _ => Err(Error::Value(format!("unknown selection mode {s:?}"))),
        }
    }
}

/// Margin of one profile around its mean: the sum of distances from the mean
/// to the closest value above and the closest value at or below, plus the
/// midpoint of those two values.
pub fn margin_around_mean(xs: &[f64]) -> Option<(f64, f64)> {
    let theta = mean(xs);
    let above = xs.iter().copied().filter(|&x| x > theta).fold(f64::INFINITY, f64::min);
    let below = xs.iter().copied().filter(|&x| x <= theta).fold(f64::NEG_INFINITY, f64::max);
    if !above.is_finite() || !below.is_finite() {
        return None;
    }
    Some(((above - theta) + (theta - below), 0.5 * (above + below)))
}

fn score_candidate(ds: &ExpressionDataset, positions: &[usize], c: &Candidate) -> Option<MatchEntry> {
    let g = ds.gene_index(&c.gene)?;
    let ti = ds.time_index(c.timepoint)?;
    let mut per_rep = Vec::new();
    let mut thresholds = Vec::new();
    for r in 0..ds.replicates().len() {
        let xs = ds.profile(g, positions, ti, r)?;
        let (margin, mid) = margin_around_mean(&xs)?;
        per_rep.push(margin);
        thresholds.push(mid);
    }
    Some(MatchEntry {
        gene: c.gene.clone(),
        timepoint: c.timepoint,
        score: per_rep.iter().sum(),
        thresholds,
        per_replicate: per_rep,
    })
}

/// Scores candidates by margin and picks one according to `mode`; the
/// returned entry carries per-replicate midpoint thresholds.
pub fn select_best_classifier(
    ds: &ExpressionDataset,
    spec: &TaskSpec,
    candidates: &[Candidate],
    mode: SelectionMode,
) -> Result<MatchEntry> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let (codes, _) = class_spec(spec)?;
    let positions = code_positions(ds, codes)?;
    let scored: Vec<MatchEntry> = candidates.iter().filter_map(|c| score_candidate(ds, &positions, c)).collect();
    pick_best(&scored, objective_for(mode)).cloned().ok_or(Error::EmptyCandidates)
}

fn objective_for(mode: SelectionMode) -> Objective {
    match mode {
        SelectionMode::MarginMax => Objective::MaximizeSeparation,
        SelectionMode::ScoreMin => Objective::MinimizeScore,
    }
}

/// Candidate search followed by scoring of every candidate.
pub fn search_classification(ds: &ExpressionDataset, spec: &TaskSpec, mode: SelectionMode) -> Result<MatchSet> {
    let candidates = search_classification_candidates(ds, spec)?;
    let (codes, _) = class_spec(spec)?;
    let positions = code_positions(ds, codes)?;
    let entries = candidates.iter().filter_map(|c| score_candidate(ds, &positions, c)).collect();
    Ok(MatchSet::assemble(objective_for(mode), entries, 0))
}

/// Midpoint of the widest gap between adjacent sorted values, with the gap's
/// endpoints `(threshold, lower, upper)`. The first of equally wide gaps wins.
pub fn gap_threshold(xs: &[f64]) -> Option<(f64, f64, f64)> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut best_gap, mut lo, mut hi) = (0.0, 0.0, 0.0);
    for w in sorted.windows(2) {
        let gap = w[1] - w[0];
        if gap > best_gap {
            best_gap = gap;
            lo = w[0];
            hi = w[1];
        }
    }
    if best_gap > 0.0 {
        Some((0.5 * (lo + hi), lo, hi))
    } else {
        None
    }
}

/// Same as [`gap_threshold`] for a single named profile, erroring on
/// constant input.
pub fn profile_gap_threshold(gene: &GeneId, xs: &[f64]) -> Result<(f64, f64, f64)> {
    gap_threshold(xs).ok_or_else(|| Error::DegenerateProfile(gene.to_string()))
}

/// Binary-pattern matching. Constant profiles never match. The entry score is
/// the smaller of the per-replicate separations `x⁺ − x⁻`.
pub fn search_binary_pattern(ds: &ExpressionDataset, codes: &[u32], pattern: &[bool]) -> Result<MatchSet> {
    if codes.len() != pattern.len() {
        return Err(Error::LengthMismatch(codes.len(), pattern.len()));
    }
    let positions = code_positions(ds, codes)?;
    let out: Vec<Vec<MatchEntry>> = (0..ds.n_genes())
        .into_par_iter()
        .map(|g| {
            let mut found = Vec::new();
            'time: for (ti, &time) in ds.times().iter().enumerate() {
                let mut seps = Vec::new();
                let mut mids = Vec::new();
                for r in 0..ds.replicates().len() {
                    let Some(xs) = ds.profile(g, &positions, ti, r) else { continue 'time };
                    let Some((theta, lo, hi)) = gap_threshold(&xs) else { continue 'time };
                    if xs.iter().zip(pattern).any(|(&x, &b)| (x > theta) != b) {
                        continue 'time;
                    }
                    seps.push(hi - lo);
                    mids.push(0.5 * (hi + lo));
                }
                found.push(MatchEntry {
                    gene: ds.genes()[g].clone(),
                    timepoint: time,
                    score: seps.iter().copied().fold(f64::INFINITY, f64::min),
                    thresholds: mids,
                    per_replicate: seps,
                });
            }
            found
        })
        .collect();
    Ok(MatchSet::assemble(Objective::MaximizeSeparation, out.into_iter().flatten().collect(), 0))
}

/// One match set per bit of a binary-encoded task.
pub fn search_binary_task(ds: &ExpressionDataset, spec: &TaskSpec) -> Result<Vec<MatchSet>> {
    let TaskSpec::BinaryEncoded { codes, bit_patterns } = spec else {
        return Err(Error::Spec("expected a binary-encoded task".into()));
    };
    bit_patterns.iter().map(|p| search_binary_pattern(ds, codes, p)).collect()
}

/// Picks a timepoint at which every bit has a match (the one with the largest
/// summed best separation, earliest on ties) and the best gene per bit there.
pub fn select_binary_bank(per_bit: &[MatchSet]) -> Option<(u32, Vec<MatchEntry>)> {
    let mut times: Vec<u32> = per_bit.first()?.entries.iter().map(|e| e.timepoint).collect();
    times.sort_unstable();
    times.dedup();
    let mut best: Option<(f64, u32, Vec<MatchEntry>)> = None;
    for t in times {
        let bank: Option<Vec<MatchEntry>> = per_bit.iter().map(|m| m.best_at(t).cloned()).collect();
        let Some(bank) = bank else { continue };
        let total: f64 = bank.iter().map(|e| e.score).sum();
        if best.as_ref().is_none_or(|(s, _, _)| total > *s) {
            best = Some((total, t, bank));
        }
    }
    best.map(|(_, t, bank)| (t, bank))
}

/// Number of matching sub-networks per timepoint: the product over bits of the
/// per-bit match counts for binary tasks, the match count otherwise.
pub fn count_matching_networks(
    ds: &ExpressionDataset,
    spec: &TaskSpec,
) -> Result<BTreeMap<u32, u128>> {
    let mut out = BTreeMap::new();
    match spec {
        TaskSpec::Calculation { .. } => {
            let m = search_calculation(ds, spec)?;
            for &t in ds.times() {
                out.insert(t, m.count_at(t) as u128);
            }
        }
        TaskSpec::Classification { .. } => {
            let c = search_classification_candidates(ds, spec)?;
            for &t in ds.times() {
                out.insert(t, c.iter().filter(|c| c.timepoint == t).count() as u128);
            }
        }
        TaskSpec::BinaryEncoded { .. } => {
            let per_bit = search_binary_task(ds, spec)?;
            for &t in ds.times() {
                let n = per_bit
                    .iter()
                    .map(|m| m.count_at(t) as u128)
                    .fold(1u128, |acc, k| acc.saturating_mul(k));
                out.insert(t, n);
            }
        }
    }
    Ok(out)
}

/// Traces upstream from `outputs`, stopping at input genes or after
/// `depth_limit` reverse steps, then keeps only nodes lying on an
/// input → output path. Outputs no input reaches are listed in
/// `unreachable`.
pub fn extract_subgrnn(
    net: &RegulatoryNetwork,
    outputs: &[GeneId],
    input_genes: &[GeneId],
    depth_limit: usize,
) -> Result<SubGrnn> {
    let out_idx: Vec<usize> = outputs
        .iter()
        .map(|g| net.node_index(g).ok_or_else(|| Error::UnknownGene(g.to_string())))
        .collect::<Result<_>>()?;
    let is_input: HashSet<usize> = input_genes.iter().filter_map(|g| net.node_index(g)).collect();
    let is_output: HashSet<usize> = out_idx.iter().copied().collect();

    let mut visited: HashSet<usize> = HashSet::new();
    let mut reached_inputs: HashSet<usize> = HashSet::new();
    let mut unreachable = Vec::new();
    for (k, &o) in out_idx.iter().enumerate() {
        let mut seen = HashSet::from([o]);
        let mut queue = VecDeque::from([(o, 0usize)]);
        let mut hit = false;
        while let Some((v, d)) = queue.pop_front() {
            if d >= depth_limit {
                continue;
            }
            for &e in net.in_edges(v) {
                let (u, _) = net.edge_endpoints(e);
                if u == v || !seen.insert(u) {
                    continue;
                }
                if is_input.contains(&u) {
                    hit = true;
                    reached_inputs.insert(u);
                } else {
                    queue.push_back((u, d + 1));
                }
            }
        }
        if !hit {
            unreachable.push(outputs[k].clone());
        }
        visited.extend(seen);
    }

    // forward pass from reached inputs within the visited region
    let mut on_path: HashSet<usize> = reached_inputs.clone();
    let mut queue: VecDeque<usize> = reached_inputs.iter().copied().collect();
    while let Some(v) = queue.pop_front() {
        if is_output.contains(&v) && !is_input.contains(&v) {
            continue;
        }
        for &e in net.out_edges(v) {
            let (_, w) = net.edge_endpoints(e);
            if visited.contains(&w) && on_path.insert(w) {
                queue.push_back(w);
            }
        }
    }
    let mut keep: HashSet<usize> = on_path;
    keep.extend(out_idx.iter().copied());

    let mut hidden = Vec::new();
    let mut inputs = Vec::new();
    for (i, g) in net.nodes().iter().enumerate() {
        if !keep.contains(&i) || is_output.contains(&i) {
            continue;
        }
        if is_input.contains(&i) {
            inputs.push(g.clone());
        } else {
            hidden.push(g.clone());
        }
    }
    hidden.sort();
    inputs.sort();
    let edges = net
        .edges()
        .iter()
        .enumerate()
        .filter(|(e, _)| {
            let (s, t) = net.edge_endpoints(*e);
            keep.contains(&s) && keep.contains(&t)
        })
        .map(|(_, e)| e.clone())
        .collect();
    Ok(SubGrnn {
        output_genes: outputs.to_vec(),
        hidden_genes: hidden,
        input_genes: inputs,
        edges,
        timepoint: 0,
        thresholds: Vec::new(),
        task: String::new(),
        unreachable,
    })
}

/// Fallback input-responsive genes: the `k` genes whose expression varies
/// most across codes (per-code mean over timepoints and replicates).
/// Ties resolve by gene id.
pub fn top_variance_genes(ds: &ExpressionDataset, k: usize, candidates: Option<&HashSet<GeneId>>) -> Vec<GeneId> {
    let mut scored: Vec<(f64, &GeneId)> = ds
        .genes()
        .iter()
        .enumerate()
        .filter(|(_, g)| candidates.is_none_or(|c| c.contains(*g)))
        .filter_map(|(g, id)| {
            let means: Vec<f64> = (0..ds.codes().len())
                .map(|c| {
                    let vals: Vec<f64> = (0..ds.times().len())
                        .flat_map(|t| (0..ds.replicates().len()).map(move |r| (t, r)))
                        .filter_map(|(t, r)| ds.value(g, c, t, r))
                        .collect();
                    if vals.is_empty() { None } else { Some(mean(&vals)) }
                })
                .collect::<Option<_>>()?;
            let m = mean(&means);
            Some((means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / means.len() as f64, id))
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, g)| g.clone()).collect()
}

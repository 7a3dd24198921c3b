//! Perturbation propagation and reliability metrics.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyed::{keyed_rng, KeyPart};
use crate::model::{min_max_expression, min_max_expression_replicate, ExpressionDataset, GeneId, RegulatoryNetwork};
use crate::tasks::TaskSpec;

/// Lower bound on mean R² in the calculation criticality ratio.
pub const R2_FLOOR: f64 = 1e-6;
/// Lower bound on the perturbed base expression in fold computations.
pub const BASE_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub alphas: Vec<f64>,
    pub sigma2: f64,
    pub d_max: usize,
    pub seed: u64,
    /// Sampling bounds per replicate instead of pooled across replicates.
    #[serde(default)]
    pub per_replicate_bounds: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig { alphas: vec![1.0, 2.0, 3.0, 4.0, 5.0], sigma2: 0.1, d_max: 3, seed: 0, per_replicate_bounds: false }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::Value("at least one alpha is required".into()));
        }
        if let Some(&a) = self.alphas.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::NonPositiveAlpha(a));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Value(format!("sigma2 must be a finite value >= 0, got {}", self.sigma2)));
        }
        if self.d_max == 0 {
            return Err(Error::Value("d_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fills unknown edge correlations with Uniform(−1, 1) draws keyed by the
/// edge endpoints.
pub fn assign_missing_correlations(net: &RegulatoryNetwork, seed: u64) -> RegulatoryNetwork {
    net.map_correlations(|_, e| {
        e.correlation.or_else(|| {
            let mut rng = keyed_rng(seed, "missing-rho", &[e.source.as_str().into(), e.target.as_str().into()]);
            Some(rng.random_range(-1.0..1.0))
        })
    })
}

/// Influence of a perturbation at `source` on every gene it reaches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationRow {
    pub source: GeneId,
    pub weights: BTreeMap<GeneId, f64>,
}

impl PropagationRow {
    pub fn weight(&self, g: &GeneId) -> f64 {
        self.weights.get(g).copied().unwrap_or(0.0)
    }
}

/// Enumerates simple paths of length ≤ `d_max` from `source`; each reached
/// gene gets the mean of the correlation products along its paths, clamped
/// to [−1, 1]. Products are summed in sorted order so the result does not
/// depend on traversal order.
pub fn propagation_row(net: &RegulatoryNetwork, source: &GeneId, d_max: usize) -> Result<PropagationRow> {
    let p = net.node_index(source).ok_or_else(|| Error::UnknownGene(source.to_string()))?;
    let mut products: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut on_path = vec![false; net.n_nodes()];
    on_path[p] = true;
    walk(net, p, 1.0, 0, d_max, &mut on_path, &mut products)?;

    let mut weights = BTreeMap::new();
    for (v, mut prods) in products {
        prods.sort_by(f64::total_cmp);
        let mean = prods.iter().sum::<f64>() / prods.len() as f64;
        weights.insert(net.nodes()[v].clone(), mean.clamp(-1.0, 1.0));
    }
    weights.insert(source.clone(), 1.0);
    Ok(PropagationRow { source: source.clone(), weights })
}

fn walk(
    net: &RegulatoryNetwork,
    v: usize,
    product: f64,
    depth: usize,
    d_max: usize,
    on_path: &mut [bool],
    products: &mut BTreeMap<usize, Vec<f64>>,
) -> Result<()> {
    if depth >= d_max {
        return Ok(());
    }
    for &e in net.out_edges(v) {
        let (_, w) = net.edge_endpoints(e);
        if on_path[w] {
            continue;
        }
        let edge = &net.edges()[e];
        let rho = edge.correlation.ok_or_else(|| {
            Error::Value(format!("edge {} -> {} has no correlation", edge.source, edge.target))
        })?;
        let next = product * rho;
        products.entry(w).or_default().push(next);
        on_path[w] = true;
        walk(net, w, next, depth + 1, d_max, on_path, products)?;
        on_path[w] = false;
    }
    Ok(())
}

/// One draw of `N(0,1)·σ²·U(x_min(1−α), x_max(1+α))`.
pub fn sample_perturbation<R: Rng>(alpha: f64, sigma2: f64, bounds: (f64, f64), rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let lo = bounds.0 * (1.0 - alpha);
    let hi = bounds.1 * (1.0 + alpha);
    let u: f64 = rng.random();
    z * sigma2 * (lo + (hi - lo) * u)
}

/// Cell-wise perturbation source: one gene's propagation row plus its
/// expression bounds, indexed by `code * n_replicates + replicate`.
struct Source {
    gene: GeneId,
    row: Vec<(usize, f64)>,
    bounds: Vec<(f64, f64)>,
}

fn prepare_source(ds: &ExpressionDataset, net: &RegulatoryNetwork, p: &GeneId, cfg: &PerturbationConfig) -> Result<Source> {
    let row = propagation_row(net, p, cfg.d_max)?;
    let targets = row.weights.iter().filter_map(|(g, &w)| ds.gene_index(g).map(|i| (i, w))).collect();
    let nr = ds.replicates().len();
    let mut bounds = Vec::with_capacity(ds.codes().len() * nr);
    for &c in ds.codes() {
        if ds.gene_index(p).is_none() {
            bounds.extend(std::iter::repeat_n((0.0, 0.0), nr));
        } else if cfg.per_replicate_bounds {
            for &r in ds.replicates() {
                bounds.push(min_max_expression_replicate(ds, p, c, r)?);
            }
        } else {
            bounds.extend(std::iter::repeat_n(min_max_expression(ds, p, c)?, nr));
        }
    }
    Ok(Source { gene: p.clone(), row: targets, bounds })
}

fn perturb_with(ds: &ExpressionDataset, sources: &[Source], alpha_idx: usize, alpha: f64, cfg: &PerturbationConfig) -> ExpressionDataset {
    let mut out = ds.clone();
    if cfg.sigma2 == 0.0 {
        return out;
    }
    let (nc, nt, nr) = (ds.codes().len(), ds.times().len(), ds.replicates().len());
    let mut delta: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for src in sources {
        for c in 0..nc {
            for t in 0..nt {
                for r in 0..nr {
                    let mut rng = keyed_rng(
                        cfg.seed,
                        "perturb",
                        &[
                            KeyPart::Str(src.gene.as_str()),
                            alpha_idx.into(),
                            ds.codes()[c].into(),
                            ds.times()[t].into(),
                            ds.replicates()[r].into(),
                        ],
                    );
                    let u = sample_perturbation(alpha, cfg.sigma2, src.bounds[c * nr + r], &mut rng);
                    for &(v, w) in &src.row {
                        delta.entry(v).or_insert_with(|| vec![0.0; nc * nt * nr])[(c * nt + t) * nr + r] += w * u;
                    }
                }
            }
        }
    }
    for (v, d) in delta {
        for c in 0..nc {
            for t in 0..nt {
                for r in 0..nr {
                    out.add_clamped(v, c, t, r, d[(c * nt + t) * nr + r]);
                }
            }
        }
    }
    out
}

fn prepare_sources(
    ds: &ExpressionDataset,
    net: &RegulatoryNetwork,
    set: &[GeneId],
    cfg: &PerturbationConfig,
) -> Result<Vec<Source>> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let unique: BTreeSet<&GeneId> = set.iter().collect();
    unique.into_iter().map(|p| prepare_source(ds, net, p, cfg)).collect()
}

/// Perturbed copies of `ds`, one per fold factor, for a single perturbed gene.
/// Missing correlations must already be assigned.
pub fn apply_genewise(
    ds: &ExpressionDataset,
    net: &RegulatoryNetwork,
    p: &GeneId,
    cfg: &PerturbationConfig,
) -> Result<Vec<ExpressionDataset>> {
    apply_collective(ds, net, std::slice::from_ref(p), cfg)
}

/// Perturbed copies of `ds`, one per fold factor, with independent draws per
/// perturbed gene summed at every target.
pub fn apply_collective(
    ds: &ExpressionDataset,
    net: &RegulatoryNetwork,
    set: &[GeneId],
    cfg: &PerturbationConfig,
) -> Result<Vec<ExpressionDataset>> {
    let sources = prepare_sources(ds, net, set, cfg)?;
    Ok(cfg
        .alphas
        .par_iter()
        .enumerate()
        .map(|(ai, &a)| perturb_with(ds, &sources, ai, a, cfg))
        .collect())
}

/// What the expected fold of each code is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldReference {
    /// The folds observed in the unperturbed data.
    #[default]
    Unperturbed,
    /// The task's nominal folds.
    Task,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldError {
    pub code: u32,
    pub replicate: u32,
    pub expected: f64,
    pub actual: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalcMetrics {
    pub errors: Vec<FoldError>,
    pub ess: f64,
    pub variance: f64,
    pub r_squared: f64,
}

/// Fold errors, ESS, output variance and R² of one perturbed run. Sums run
/// over the task's codes and all replicates at `time`; the variance is of
/// the unperturbed output around its per-replicate mean across those codes.
pub fn calc_metrics(
    unperturbed: &ExpressionDataset,
    perturbed: &ExpressionDataset,
    output: &GeneId,
    spec: &TaskSpec,
    time: u32,
    reference: FoldReference,
) -> Result<CalcMetrics> {
    let TaskSpec::Calculation { expected_fold, base_code, .. } = spec else {
        return Err(Error::Spec("calc_metrics needs a calculation task".into()));
    };
    let mut errors = Vec::new();
    let mut variance = 0.0;
    for &rep in unperturbed.replicates() {
        let base0 = unperturbed.expression_at(output, *base_code, time, rep)?;
        if base0 == 0.0 {
            return Err(Error::DivisionByZeroBase { gene: output.to_string(), code: *base_code, time, replicate: rep });
        }
        let base1 = perturbed.expression_at(output, *base_code, time, rep)?.max(BASE_FLOOR);
        let mut xs = Vec::with_capacity(expected_fold.len());
        for (&code, &fold) in expected_fold {
            let x0 = unperturbed.expression_at(output, code, time, rep)?;
            let x1 = perturbed.expression_at(output, code, time, rep)?;
            xs.push(x0);
            let expected = match reference {
                FoldReference::Unperturbed => x0 / base0,
                FoldReference::Task => fold,
            };
            let actual = x1 / base1;
            errors.push(FoldError { code, replicate: rep, expected, actual, error: (expected - actual).abs() });
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        variance += xs.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    if variance == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ess = errors.iter().map(|e| e.error * e.error).sum::<f64>();
    Ok(CalcMetrics { errors, ess, variance, r_squared: 1.0 - ess / variance })
}

pub fn mean_r_squared(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Out-degree normalised by the number of other nodes.
pub fn outward_centrality(net: &RegulatoryNetwork, g: &GeneId) -> Result<f64> {
    let deg = net.out_degree(g)?;
    if net.n_nodes() < 2 {
        return Err(Error::SingletonNetwork);
    }
    Ok(deg as f64 / (net.n_nodes() - 1) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criticality {
    pub value: f64,
    /// Set when the mean R² was below the floor.
    pub floored: bool,
}

pub fn criticality_calc(centrality: f64, mean_r2: f64) -> Criticality {
    let floored = !(mean_r2 >= R2_FLOOR);
    let denom = if floored { R2_FLOOR } else { mean_r2 };
    Criticality { value: centrality / denom, floored }
}

pub fn hamming(y: &[bool], y_hat: &[bool]) -> Result<usize> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch(y.len(), y_hat.len()));
    }
    Ok(y.iter().zip(y_hat).filter(|(a, b)| a != b).count())
}

pub fn criticality_class(centrality: f64, hamming_per_alpha: &[usize]) -> f64 {
    centrality * hamming_per_alpha.iter().sum::<usize>() as f64
}

/// A classification output gene with its per-replicate thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdedOutput {
    pub gene: GeneId,
    pub thresholds: Vec<f64>,
}

/// Number of codes whose decoded class changes between the two datasets. A
/// code counts once if any output bit flips in any replicate.
pub fn class_hamming(
    unperturbed: &ExpressionDataset,
    perturbed: &ExpressionDataset,
    outputs: &[ThresholdedOutput],
    codes: &[u32],
    time: u32,
) -> Result<usize> {
    let mut flips = 0;
    for &code in codes {
        let mut flipped = false;
        for out in outputs {
            if out.thresholds.len() != unperturbed.replicates().len() {
                return Err(Error::LengthMismatch(out.thresholds.len(), unperturbed.replicates().len()));
            }
            for (&rep, &theta) in unperturbed.replicates().iter().zip(&out.thresholds) {
                let y = unperturbed.expression_at(&out.gene, code, time, rep)? > theta;
                let y_hat = perturbed.expression_at(&out.gene, code, time, rep)? > theta;
                flipped |= y != y_hat;
            }
        }
        flips += usize::from(flipped);
    }
    Ok(flips)
}

/// How one perturbed dataset is scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Evaluator {
    Calculation { output: GeneId, spec: TaskSpec, time: u32, reference: FoldReference },
    Classification { outputs: Vec<ThresholdedOutput>, codes: Vec<u32>, time: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamming: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub errors: Vec<FoldError>,
}

impl Evaluator {
    pub fn evaluate(&self, unperturbed: &ExpressionDataset, perturbed: &ExpressionDataset, alpha: f64) -> Result<LevelMetrics> {
        match self {
            Evaluator::Calculation { output, spec, time, reference } => {
                let m = calc_metrics(unperturbed, perturbed, output, spec, *time, *reference)?;
                Ok(LevelMetrics { alpha, ess: Some(m.ess), r_squared: Some(m.r_squared), hamming: None, errors: m.errors })
            }
            Evaluator::Classification { outputs, codes, time } => {
                let hd = class_hamming(unperturbed, perturbed, outputs, codes, *time)?;
                Ok(LevelMetrics { alpha, ess: None, r_squared: None, hamming: Some(hd), errors: Vec::new() })
            }
        }
    }

    fn is_calculation(&self) -> bool {
        matches!(self, Evaluator::Calculation { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneReliability {
    pub gene: GeneId,
    pub centrality: f64,
    pub levels: Vec<LevelMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_r_squared: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_hamming: Option<usize>,
    pub criticality: f64,
    pub floored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub config: PerturbationConfig,
    pub genes: Vec<GeneReliability>,
    /// Genes by decreasing criticality, ties by gene id.
    pub ranking: Vec<GeneId>,
}

/// Perturbs each gene in `genes` on its own and scores it at every fold
/// factor. Centrality is measured in `net`.
pub fn genewise_report(
    ds: &ExpressionDataset,
    net: &RegulatoryNetwork,
    genes: &[GeneId],
    evaluator: &Evaluator,
    cfg: &PerturbationConfig,
) -> Result<ReliabilityReport> {
    cfg.validate()?;
    let rows: Vec<GeneReliability> = genes
        .par_iter()
        .map(|p| {
            let centrality = outward_centrality(net, p)?;
            let perturbed = apply_genewise(ds, net, p, cfg)?;
            let levels = perturbed
                .iter()
                .zip(&cfg.alphas)
                .map(|(pd, &a)| evaluator.evaluate(ds, pd, a))
                .collect::<Result<Vec<_>>>()?;
            let (mean_r2, total_hd, crit) = if evaluator.is_calculation() {
                let r2: Vec<f64> = levels.iter().filter_map(|l| l.r_squared).collect();
                let m = mean_r_squared(&r2)?;
                (Some(m), None, criticality_calc(centrality, m))
            } else {
                let hds: Vec<usize> = levels.iter().filter_map(|l| l.hamming).collect();
                let c = criticality_class(centrality, &hds);
                (None, Some(hds.iter().sum()), Criticality { value: c, floored: false })
            };
            Ok(GeneReliability {
                gene: p.clone(),
                centrality,
                levels,
                mean_r_squared: mean_r2,
                total_hamming: total_hd,
                criticality: crit.value,
                floored: crit.floored,
            })
        })
        .collect::<Result<_>>()?;
    let mut ranked: Vec<&GeneReliability> = rows.iter().collect();
    ranked.sort_by(|a, b| b.criticality.total_cmp(&a.criticality).then(a.gene.cmp(&b.gene)));
    let ranking = ranked.into_iter().map(|g| g.gene.clone()).collect();
    Ok(ReliabilityReport { config: cfg.clone(), genes: rows, ranking })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamming: Option<usize>,
}

/// Collective perturbation of the top-k ranked genes for k = 1..=k_max.
pub fn collective_sweep(
    ds: &ExpressionDataset,
    net: &RegulatoryNetwork,
    ranked: &[GeneId],
    k_max: usize,
    evaluator: &Evaluator,
    cfg: &PerturbationConfig,
) -> Result<Vec<SweepPoint>> {
    if k_max > ranked.len() {
        return Err(Error::Value(format!("k_max {k_max} exceeds the {} ranked genes", ranked.len())));
    }
    let per_k: Vec<Vec<SweepPoint>> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let perturbed = apply_collective(ds, net, &ranked[..k], cfg)?;
            perturbed
                .iter()
                .zip(&cfg.alphas)
                .map(|(pd, &a)| {
                    let m = evaluator.evaluate(ds, pd, a)?;
                    Ok(SweepPoint { k, alpha: a, r_squared: m.r_squared, hamming: m.hamming })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_k.into_iter().flatten().collect())
}

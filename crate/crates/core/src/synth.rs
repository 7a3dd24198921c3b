//! Synthetic benchmarks with planted task-solving genes.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyed::keyed_rng;
use crate::model::{Edge, ExpressionDataset, GeneId, RegulatoryNetwork};
use crate::tasks::{TableTask, TaskSpec};

const BACKGROUND: (f64, f64) = (1.0, 1000.0);
const LOW: (f64, f64) = (10.0, 20.0);
const HIGH: (f64, f64) = (10_000.0, 12_000.0);
const CALC_BASES: [f64; 3] = [16.0, 32.0, 64.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTaskSpec {
    pub task: TableTask,
    /// Ids for the planted gene(s); generated when empty.
    #[serde(default)]
    pub genes: Vec<GeneId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSpec {
    pub n_genes: usize,
    pub n_hidden_layers: usize,
    pub layer_width: usize,
    pub n_inputs: usize,
    pub edge_density: f64,
    /// Random edges among genes outside the planted sub-network.
    pub background_edges: usize,
    pub missing_correlation_fraction: f64,
    pub tasks: Vec<PlantedTaskSpec>,
    /// Relative std of multiplicative noise on planted genes.
    pub expression_noise: f64,
    /// Calculation tolerance the decoys are placed outside of.
    pub tolerance: f64,
    pub decoys_per_task: usize,
    pub base_code: u32,
    pub codes: Vec<u32>,
    pub times: Vec<u32>,
    pub replicates: Vec<u32>,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            n_genes: 4000,
            n_hidden_layers: 2,
            layer_width: 6,
            n_inputs: 8,
            edge_density: 0.3,
            background_edges: 4000,
            missing_correlation_fraction: 0.05,
            tasks: TableTask::all().into_iter().map(|task| PlantedTaskSpec { task, genes: Vec::new() }).collect(),
            expression_noise: 0.0,
            tolerance: 0.01,
            decoys_per_task: 2,
            base_code: 0,
            codes: (1..=7).collect(),
            times: vec![6, 30, 70],
            replicates: vec![1, 2],
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    fn n_planted(&self) -> usize {
        self.tasks.iter().map(|t| planted_width(t.task)).sum()
    }

    fn n_decoys(&self) -> usize {
        self.tasks.iter().filter(|t| t.task.is_calculation()).count() * self.decoys_per_task
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if !(self.edge_density > 0.0 && self.edge_density <= 1.0) {
            return bad(format!("edge_density must lie in (0, 1], got {}", self.edge_density));
        }
        if !(self.expression_noise >= 0.0) || !self.expression_noise.is_finite() {
            return bad("expression_noise must be finite and >= 0".into());
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.missing_correlation_fraction) {
            return bad("missing_correlation_fraction must lie in [0, 1]".into());
        }
        if self.codes.is_empty() || self.codes.contains(&self.base_code) {
            return bad("codes must be non-empty and exclude the base code".into());
        }
        if self.n_inputs == 0 || self.layer_width == 0 {
            return bad("n_inputs and layer_width must be positive".into());
        }
        let needed = self.n_planted() + self.n_decoys() + self.n_inputs + self.n_hidden_layers * self.layer_width;
        if needed > self.n_genes {
            return bad(format!("{needed} genes needed for the planted structure, n_genes is {}", self.n_genes));
        }
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.task) {
                return bad(format!("task {} planted twice", t.task));
            }
            if !t.genes.is_empty() && t.genes.len() != planted_width(t.task) {
                return bad(format!("task {} needs {} gene ids", t.task, planted_width(t.task)));
            }
        }
        let ids: Vec<&GeneId> = self.tasks.iter().flat_map(|t| &t.genes).collect();
        if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
            return bad("planted gene ids must be distinct".into());
        }
        for t in &self.tasks {
            t.task.spec(&self.codes, self.base_code, self.tolerance).map_err(|e| Error::Spec(e.to_string()))?;
        }
        Ok(())
    }
}

fn planted_width(task: TableTask) -> usize {
    if task == TableTask::Collatz {
        crate::tasks::COLLATZ_BITS as usize
    } else {
        1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedRecord {
    pub task: TableTask,
    pub spec: TaskSpec,
    pub genes: Vec<GeneId>,
    pub timepoint: u32,
    /// Base-code expression of a calculation gene.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_value: Option<f64>,
    /// `thresholds[k][r]` for classification and binary genes.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub thresholds: Vec<Vec<f64>>,
    /// Expected high/low state per gene over the task codes.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub patterns: Vec<Vec<bool>>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub decoys: Vec<GeneId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub seed: u64,
    pub n_genes: usize,
    pub base_code: u32,
    pub codes: Vec<u32>,
    pub times: Vec<u32>,
    pub replicates: Vec<u32>,
    pub input_genes: Vec<GeneId>,
    pub hidden_layers: Vec<Vec<GeneId>>,
    pub planted: Vec<PlantedRecord>,
    pub n_edges: usize,
}

impl BenchmarkManifest {
    pub fn record(&self, task: TableTask) -> Option<&PlantedRecord> {
        self.planted.iter().find(|p| p.task == task)
    }
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub dataset: ExpressionDataset,
    pub network: RegulatoryNetwork,
    pub manifest: BenchmarkManifest,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..hi)
}

struct Planter<'a> {
    spec: &'a BenchmarkSpec,
    rng: ChaCha8Rng,
    values: Vec<f64>,
    nc: usize,
    nt: usize,
    nr: usize,
    all_codes: Vec<u32>,
}

impl Planter<'_> {
    fn cell(&self, g: usize, c: usize, t: usize, r: usize) -> usize {
        ((g * self.nc + c) * self.nt + t) * self.nr + r
    }

    fn code_pos(&self, code: u32) -> usize {
        self.all_codes.iter().position(|&c| c == code).expect("known code")
    }

    fn noisy(&mut self, x: f64) -> f64 {
        if self.spec.expression_noise == 0.0 {
            return x;
        }
        let z: f64 = self.rng.sample(StandardNormal);
        (x * (1.0 + self.spec.expression_noise * z)).max(0.0)
    }

    /// Exact folds × base at one timepoint, in every replicate.
    fn plant_folds(&mut self, g: usize, t: usize, base: f64, folds: &BTreeMap<u32, f64>) {
        let bc = self.code_pos(self.spec.base_code);
        for r in 0..self.nr {
            let b = self.noisy(base);
            let i = self.cell(g, bc, t, r);
            self.values[i] = b;
            for (&code, &f) in folds {
                let x = self.noisy(base * f);
                let i = self.cell(g, self.code_pos(code), t, r);
                self.values[i] = x;
            }
        }
    }

    /// Low/high levels following `pattern` over the task codes; returns the
    /// per-replicate midpoint between the highest low and the lowest high.
    fn plant_pattern(&mut self, g: usize, t: usize, codes: &[u32], pattern: &[bool]) -> Vec<f64> {
        let bc = self.code_pos(self.spec.base_code);
        let mut thresholds = Vec::with_capacity(self.nr);
        for r in 0..self.nr {
            let base = uniform(&mut self.rng, LOW);
            let i = self.cell(g, bc, t, r);
            self.values[i] = base;
            let (mut max_low, mut min_high) = (f64::NEG_INFINITY, f64::INFINITY);
            for (&code, &high) in codes.iter().zip(pattern) {
                let raw = uniform(&mut self.rng, if high { HIGH } else { LOW });
                let x = self.noisy(raw);
                let i = self.cell(g, self.code_pos(code), t, r);
                self.values[i] = x;
                if high {
                    min_high = min_high.min(x);
                } else {
                    max_low = max_low.max(x);
                }
            }
            thresholds.push(match (max_low.is_finite(), min_high.is_finite()) {
                (true, true) => 0.5 * (max_low + min_high),
                (true, false) => max_low,
                _ => 0.5 * min_high,
            });
        }
        thresholds
    }
}

/// Bit patterns of the Collatz step counts over `codes`: gene `b` is high
/// under code `i` exactly when bit `b` of the step count of `i` is set.
pub fn collatz_bank_patterns(codes: &[u32]) -> Result<Vec<Vec<bool>>> {
    match TableTask::Collatz.spec(codes, 0, 1.0)? {
        TaskSpec::BinaryEncoded { bit_patterns, .. } => Ok(bit_patterns),
        _ => unreachable!("collatz is binary-encoded"),
    }
}

/// Plants the five Collatz bit genes at one shared timepoint and returns
/// their per-replicate thresholds.
pub fn plant_collatz_bank(
    ds: &mut ExpressionDataset,
    genes: &[GeneId],
    codes: &[u32],
    time: u32,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let patterns = collatz_bank_patterns(codes)?;
    if genes.len() != patterns.len() {
        return Err(Error::LengthMismatch(genes.len(), patterns.len()));
    }
    let ti = ds.time_index(time).ok_or(Error::UnknownIndex { axis: "time", value: time.to_string() })?;
    let mut rng = keyed_rng(seed, "collatz-bank", &[]);
    let mut out = Vec::new();
    for (g, pattern) in genes.iter().zip(&patterns) {
        let gi = ds.gene_index(g).ok_or_else(|| Error::UnknownGene(g.to_string()))?;
        let mut per_rep = Vec::new();
        for ri in 0..ds.replicates().len() {
            let mut max_low = f64::NEG_INFINITY;
            let mut min_high = f64::INFINITY;
            for (&code, &high) in codes.iter().zip(pattern) {
                let ci = ds.code_index(code).ok_or(Error::UnknownIndex { axis: "code", value: code.to_string() })?;
                let x = rng.random_range(if high { HIGH.0..HIGH.1 } else { LOW.0..LOW.1 });
                ds.set(gi, ci, ti, ri, x)?;
                if high {
                    min_high = min_high.min(x);
                } else {
                    max_low = max_low.max(x);
                }
            }
            per_rep.push(if min_high.is_finite() { 0.5 * (max_low + min_high) } else { max_low });
        }
        out.push(per_rep);
    }
    Ok(out)
}

/// Generates the dataset, network and ground-truth manifest.
pub fn generate_benchmark(spec: &BenchmarkSpec) -> Result<Benchmark> {
    spec.validate()?;
    let mut rng = keyed_rng(spec.seed, "synth", &[]);
    let mut all_codes = vec![spec.base_code];
    all_codes.extend(&spec.codes);
    let (nc, nt, nr) = (all_codes.len(), spec.times.len(), spec.replicates.len());

    let mut ids: Vec<GeneId> = (0..spec.n_genes).map(|i| GeneId::new(format!("g{i:05}")).expect("non-empty")).collect();
    let mut order: Vec<usize> = (0..spec.n_genes).collect();
    order.shuffle(&mut rng);
    let mut take = order.into_iter();

    // background expression
    let mut values = vec![0.0; spec.n_genes * nc * nt * nr];
    for v in values.iter_mut() {
        *v = uniform(&mut rng, BACKGROUND);
    }
    let mut planter = Planter { spec, rng, values, nc, nt, nr, all_codes: all_codes.clone() };

    let shared_time = planter.rng.random_range(0..nt);
    let mut planted = Vec::new();
    let mut outputs = Vec::new();
    for pt in &spec.tasks {
        let task_spec = pt.task.spec(&spec.codes, spec.base_code, spec.tolerance)?;
        let width = planted_width(pt.task);
        let idx: Vec<usize> = (0..width).map(|_| take.next().expect("validated size")).collect();
        for (k, &i) in idx.iter().enumerate() {
            if let Some(id) = pt.genes.get(k) {
                ids[i] = id.clone();
            }
        }
        let t = if pt.task == TableTask::Collatz { shared_time } else { planter.rng.random_range(0..nt) };
        let mut rec = PlantedRecord {
            task: pt.task,
            spec: task_spec.clone(),
            genes: idx.iter().map(|&i| ids[i].clone()).collect(),
            timepoint: spec.times[t],
            base_value: None,
            thresholds: Vec::new(),
            patterns: Vec::new(),
            decoys: Vec::new(),
        };
        match &task_spec {
            TaskSpec::Calculation { expected_fold, tolerance, .. } => {
                let base = CALC_BASES[planter.rng.random_range(0..CALC_BASES.len())];
                planter.plant_folds(idx[0], t, base, expected_fold);
                rec.base_value = Some(base);
                for _ in 0..spec.decoys_per_task {
                    let d = take.next().expect("validated size");
                    let mut folds = expected_fold.clone();
                    let codes: Vec<u32> = folds.keys().copied().collect();
                    let shifted = codes[planter.rng.random_range(0..codes.len())];
                    *folds.get_mut(&shifted).expect("present") += 2.0 * tolerance + 0.25;
                    let base = CALC_BASES[planter.rng.random_range(0..CALC_BASES.len())];
                    planter.plant_folds(d, t, base, &folds);
                    rec.decoys.push(ids[d].clone());
                }
            }
            TaskSpec::Classification { codes, targets } => {
                let pattern = TaskSpec::classification_pattern(codes, targets);
                rec.thresholds.push(planter.plant_pattern(idx[0], t, codes, &pattern));
                rec.patterns.push(pattern);
            }
            TaskSpec::BinaryEncoded { codes, bit_patterns } => {
                for (&i, pattern) in idx.iter().zip(bit_patterns) {
                    rec.thresholds.push(planter.plant_pattern(i, t, codes, pattern));
                    rec.patterns.push(pattern.clone());
                }
            }
        }
        outputs.extend(idx.iter().copied());
        planted.push(rec);
    }

    let inputs: Vec<usize> = (0..spec.n_inputs).map(|_| take.next().expect("validated size")).collect();
    let layers: Vec<Vec<usize>> = (0..spec.n_hidden_layers)
        .map(|_| (0..spec.layer_width).map(|_| take.next().expect("validated size")).collect())
        .collect();
    let background: Vec<usize> = take.collect();

    let Planter { mut rng, values, .. } = planter;
    let mut ds = ExpressionDataset::new(ids.clone(), all_codes, spec.times.clone(), spec.replicates.clone())?;
    for g in 0..spec.n_genes {
        for c in 0..nc {
            for t in 0..nt {
                for r in 0..nr {
                    ds.set(g, c, t, r, values[((g * nc + c) * nt + t) * nr + r])?;
                }
            }
        }
    }

    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut tiers: Vec<&[usize]> = vec![&inputs];
    tiers.extend(layers.iter().map(Vec::as_slice));
    tiers.push(&outputs);
    for pair in tiers.windows(2) {
        let (from, to) = (pair[0], pair[1]);
        for &v in to {
            let before = edges.len();
            for &u in from {
                if rng.random::<f64>() < spec.edge_density {
                    edges.push((u, v));
                }
            }
            if edges.len() == before {
                edges.push((from[rng.random_range(0..from.len())], v));
            }
        }
    }
    if background.len() >= 2 {
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut attempts = 0;
        while seen.len() < spec.background_edges && attempts < spec.background_edges * 20 {
            attempts += 1;
            let u = background[rng.random_range(0..background.len())];
            let v = background[rng.random_range(0..background.len())];
            if u != v && seen.insert((u, v)) {
                edges.push((u, v));
            }
        }
    }
    let edges: Vec<Edge> = edges
        .into_iter()
        .map(|(u, v)| {
            let magnitude = rng.random_range(0.2..0.95);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let missing = rng.random::<f64>() < spec.missing_correlation_fraction;
            Edge { source: ids[u].clone(), target: ids[v].clone(), correlation: (!missing).then_some(sign * magnitude) }
        })
        .collect();
    let n_edges = edges.len();
    let network = RegulatoryNetwork::new(Vec::new(), edges)?;

    let manifest = BenchmarkManifest {
        seed: spec.seed,
        n_genes: spec.n_genes,
        base_code: spec.base_code,
        codes: spec.codes.clone(),
        times: spec.times.clone(),
        replicates: spec.replicates.clone(),
        input_genes: inputs.iter().map(|&i| ids[i].clone()).collect(),
        hidden_layers: layers.iter().map(|l| l.iter().map(|&i| ids[i].clone()).collect()).collect(),
        planted,
        n_edges,
    };
    Ok(Benchmark { dataset: ds, network, manifest })
}

/// Per-edge correlations across several datasets, with a known stable subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEnsemble {
    /// `correlations[e][d]`: correlation of edge `e` in dataset `d`.
    pub correlations: Vec<Vec<f64>>,
    pub stable: Vec<bool>,
}

/// Builds correlation ensembles in which exactly `round(fraction·n_edges)`
/// edges are stable: same sign everywhere with small spread. The remaining
/// edges get a near-even split of signs and wide magnitudes.
pub fn plant_stable_fraction(n_edges: usize, n_datasets: usize, fraction: f64, seed: u64) -> Result<CorrelationEnsemble> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Spec(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    if n_datasets < 2 {
        return Err(Error::Spec("at least two datasets are needed".into()));
    }
    let mut rng = keyed_rng(seed, "stable-fraction", &[]);
    let n_stable = (fraction * n_edges as f64).round() as usize;
    let mut stable = vec![false; n_edges];
    let mut idx: Vec<usize> = (0..n_edges).collect();
    idx.shuffle(&mut rng);
    for &i in &idx[..n_stable] {
        stable[i] = true;
    }
    let correlations = stable
        .iter()
        .map(|&is_stable| {
            if is_stable {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let centre = rng.random_range(0.5..0.9);
                (0..n_datasets)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        sign * (centre + 0.02 * z).clamp(0.05, 1.0)
                    })
                    .collect()
            } else {
                let n_pos = n_datasets.div_ceil(2);
                let mut signs: Vec<f64> = (0..n_datasets).map(|d| if d < n_pos { 1.0 } else { -1.0 }).collect();
                if rng.random::<bool>() {
                    signs.iter_mut().for_each(|s| *s = -*s);
                }
                signs.shuffle(&mut rng);
                signs.into_iter().map(|s| s * rng.random_range(0.2..0.9)).collect()
            }
        })
        .collect();
    Ok(CorrelationEnsemble { correlations, stable })
}

//! Shared data types: gene identifiers, the expression tensor, the regulatory
//! network and extracted sub-networks.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GeneId(String);

impl GeneId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Value("gene id must be non-empty".into()));
        }
        Ok(GeneId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GeneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GeneId {
    /// Panics on an empty string; use [`GeneId::new`] for untrusted input.
    fn from(s: &str) -> Self {
        GeneId::new(s).expect("empty gene id")
    }
}

/// Dense expression tensor indexed by (gene, input code, timepoint, replicate).
///
/// Cells are `None` when missing; zero is a legal expression level.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionDataset {
    genes: Vec<GeneId>,
    gene_index: HashMap<GeneId, usize>,
    codes: Vec<u32>,
    times: Vec<u32>,
    replicates: Vec<u32>,
    values: Vec<Option<f64>>,
}

fn check_axis(name: &'static str, axis: &[u32]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::Schema(format!("{name} axis is empty")));
    }
    let mut seen = axis.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != axis.len() {
        return Err(Error::Schema(format!("{name} axis has duplicates")));
    }
    Ok(())
}

impl ExpressionDataset {
    /// An all-missing dataset with the given axes.
    pub fn new(
        genes: Vec<GeneId>,
        codes: Vec<u32>,
        times: Vec<u32>,
        replicates: Vec<u32>,
    ) -> Result<Self> {
        check_axis("code", &codes)?;
        check_axis("time", &times)?;
        check_axis("replicate", &replicates)?;
        let mut gene_index = HashMap::with_capacity(genes.len());
        for (i, g) in genes.iter().enumerate() {
            if gene_index.insert(g.clone(), i).is_some() {
                return Err(Error::DuplicateGene(g.to_string()));
            }
        }
        let n = genes.len() * codes.len() * times.len() * replicates.len();
        Ok(ExpressionDataset {
            genes,
            gene_index,
            codes,
            times,
            replicates,
            values: vec![None; n],
        })
    }

    /// Builds a dataset by evaluating `f(gene, code, time, replicate)` on
    /// index positions.
    pub fn from_fn<F>(
        genes: Vec<GeneId>,
        codes: Vec<u32>,
        times: Vec<u32>,
        replicates: Vec<u32>,
        mut f: F,
    ) -> Result<Self>
    where
        F: FnMut(usize, usize, usize, usize) -> Option<f64>,
    {
        let mut ds = Self::new(genes, codes, times, replicates)?;
        for g in 0..ds.genes.len() {
            for c in 0..ds.codes.len() {
                for t in 0..ds.times.len() {
                    for r in 0..ds.replicates.len() {
                        if let Some(v) = f(g, c, t, r) {
                            ds.set(g, c, t, r, v)?;
                        }
                    }
                }
            }
        }
        Ok(ds)
    }

    #[inline]
    fn offset(&self, g: usize, c: usize, t: usize, r: usize) -> usize {
        ((g * self.codes.len() + c) * self.times.len() + t) * self.replicates.len() + r
    }

    pub fn genes(&self) -> &[GeneId] {
        &self.genes
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn times(&self) -> &[u32] {
        &self.times
    }

    pub fn replicates(&self) -> &[u32] {
        &self.replicates
    }

    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn gene_index(&self, g: &GeneId) -> Option<usize> {
        self.gene_index.get(g).copied()
    }

    pub fn code_index(&self, code: u32) -> Option<usize> {
        self.codes.iter().position(|&c| c == code)
    }

    pub fn time_index(&self, time: u32) -> Option<usize> {
        self.times.iter().position(|&t| t == time)
    }

    pub fn replicate_index(&self, rep: u32) -> Option<usize> {
        self.replicates.iter().position(|&r| r == rep)
    }

    /// Raw positional lookup.
    #[inline]
    pub fn value(&self, g: usize, c: usize, t: usize, r: usize) -> Option<f64> {
        self.values[self.offset(g, c, t, r)]
    }

    /// Stores a value; negative or non-finite values are rejected.
    pub fn set(&mut self, g: usize, c: usize, t: usize, r: usize, v: f64) -> Result<()> {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Value(format!(
                "expression of {} must be finite and non-negative, got {v}",
                self.genes[g]
            )));
        }
        let o = self.offset(g, c, t, r);
        self.values[o] = Some(v);
        Ok(())
    }

    pub fn set_missing(&mut self, g: usize, c: usize, t: usize, r: usize) {
        let o = self.offset(g, c, t, r);
        self.values[o] = None;
    }

    /// Adds `delta` to a present cell, clamping the result at zero.
    /// Missing cells stay missing.
    pub(crate) fn add_clamped(&mut self, g: usize, c: usize, t: usize, r: usize, delta: f64) {
        let o = self.offset(g, c, t, r);
        if let Some(v) = self.values[o] {
            self.values[o] = Some((v + delta).max(0.0));
        }
    }

    fn indices(&self, g: &GeneId, code: u32, time: u32, rep: u32) -> Result<[usize; 4]> {
        let gi = self.gene_index(g).ok_or_else(|| Error::UnknownGene(g.to_string()))?;
        let ci = self.code_index(code).ok_or(Error::UnknownIndex {
            axis: "code",
            value: code.to_string(),
        })?;
        let ti = self.time_index(time).ok_or(Error::UnknownIndex {
            axis: "time",
            value: time.to_string(),
        })?;
        let ri = self.replicate_index(rep).ok_or(Error::UnknownIndex {
            axis: "replicate",
            value: rep.to_string(),
        })?;
        Ok([gi, ci, ti, ri])
    }

    pub fn expression_at(&self, g: &GeneId, code: u32, time: u32, rep: u32) -> Result<f64> {
        let [gi, ci, ti, ri] = self.indices(g, code, time, rep)?;
        self.value(gi, ci, ti, ri).ok_or_else(|| Error::MissingCell {
            gene: g.to_string(),
            code,
            time,
            replicate: rep,
        })
    }

    /// Copy restricted to `genes` (in the given order); unknown and repeated
    /// genes are skipped.
    pub fn subset(&self, genes: &[GeneId]) -> Self {
        let block = self.codes.len() * self.times.len() * self.replicates.len();
        let mut seen = std::collections::HashSet::new();
        let kept: Vec<usize> = genes
            .iter()
            .filter_map(|g| self.gene_index(g))
            .filter(|&g| seen.insert(g))
            .collect();
        let mut values = Vec::with_capacity(kept.len() * block);
        for &g in &kept {
            values.extend_from_slice(&self.values[g * block..(g + 1) * block]);
        }
        let ids: Vec<GeneId> = kept.iter().map(|&g| self.genes[g].clone()).collect();
        let gene_index = ids.iter().cloned().enumerate().map(|(i, g)| (g, i)).collect();
        ExpressionDataset {
            genes: ids,
            gene_index,
            codes: self.codes.clone(),
            times: self.times.clone(),
            replicates: self.replicates.clone(),
            values,
        }
    }

    /// Values of one gene over the given code positions at a fixed time and
    /// replicate; `None` if any cell is missing.
    pub fn profile(&self, g: usize, code_idx: &[usize], t: usize, r: usize) -> Option<Vec<f64>> {
        code_idx.iter().map(|&c| self.value(g, c, t, r)).collect()
    }
}

/// Ratio of expression under `code` to expression under `base_code`.
pub fn fold_change(
    ds: &ExpressionDataset,
    g: &GeneId,
    code: u32,
    base_code: u32,
    time: u32,
    rep: u32,
) -> Result<f64> {
    let x = ds.expression_at(g, code, time, rep)?;
    let base = ds.expression_at(g, base_code, time, rep)?;
    if base == 0.0 {
        return Err(Error::DivisionByZeroBase {
            gene: g.to_string(),
            code: base_code,
            time,
            replicate: rep,
        });
    }
    Ok(x / base)
}

/// Min/max over timepoints of one gene under one code, pooled across
/// replicates.
pub fn min_max_expression(ds: &ExpressionDataset, g: &GeneId, code: u32) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &rep in ds.replicates() {
        let (a, b) = min_max_expression_replicate(ds, g, code, rep)?;
        lo = lo.min(a);
        hi = hi.max(b);
    }
    Ok((lo, hi))
}

/// Min/max over timepoints for a single replicate.
pub fn min_max_expression_replicate(
    ds: &ExpressionDataset,
    g: &GeneId,
    code: u32,
    rep: u32,
) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &t in ds.times() {
        let v = ds.expression_at(g, code, t, rep)?;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: GeneId,
    pub target: GeneId,
    /// `None` when the correlation is unknown.
    pub correlation: Option<f64>,
}

/// Directed regulatory graph with optional per-edge correlations.
#[derive(Clone, Debug, PartialEq)]
pub struct RegulatoryNetwork {
    nodes: Vec<GeneId>,
    node_index: HashMap<GeneId, usize>,
    edges: Vec<Edge>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
}

impl RegulatoryNetwork {
    /// Nodes are the union of `nodes` and all edge endpoints, in first-seen
    /// order.
    pub fn new(nodes: impl IntoIterator<Item = GeneId>, edges: Vec<Edge>) -> Result<Self> {
        let mut net = RegulatoryNetwork {
            nodes: Vec::new(),
            node_index: HashMap::new(),
            edges: Vec::with_capacity(edges.len()),
            succ: Vec::new(),
            pred: Vec::new(),
        };
        for n in nodes {
            net.intern(n);
        }
        let mut seen = std::collections::HashSet::new();
        for e in edges {
            if let Some(rho) = e.correlation {
                if !(-1.0..=1.0).contains(&rho) {
                    return Err(Error::Value(format!(
                        "correlation {rho} of edge {}->{} outside [-1,1]",
                        e.source, e.target
                    )));
                }
            }
            let s = net.intern(e.source.clone());
            let t = net.intern(e.target.clone());
            if !seen.insert((s, t)) {
                return Err(Error::Schema(format!("duplicate edge {}->{}", e.source, e.target)));
            }
            let idx = net.edges.len();
            net.edges.push(e);
            net.succ[s].push(idx);
            net.pred[t].push(idx);
        }
        Ok(net)
    }

    fn intern(&mut self, g: GeneId) -> usize {
        if let Some(&i) = self.node_index.get(&g) {
            return i;
        }
        let i = self.nodes.len();
        self.node_index.insert(g.clone(), i);
        self.nodes.push(g);
        self.succ.push(Vec::new());
        self.pred.push(Vec::new());
        i
    }

    pub fn nodes(&self) -> &[GeneId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_index(&self, g: &GeneId) -> Option<usize> {
        self.node_index.get(g).copied()
    }

    pub fn contains(&self, g: &GeneId) -> bool {
        self.node_index.contains_key(g)
    }

    /// Indices into [`Self::edges`] of edges leaving node `n`.
    pub fn out_edges(&self, n: usize) -> &[usize] {
        &self.succ[n]
    }

    /// Indices into [`Self::edges`] of edges entering node `n`.
    pub fn in_edges(&self, n: usize) -> &[usize] {
        &self.pred[n]
    }

    pub fn edge_endpoints(&self, e: usize) -> (usize, usize) {
        let edge = &self.edges[e];
        (self.node_index[&edge.source], self.node_index[&edge.target])
    }

    pub fn out_degree(&self, g: &GeneId) -> Result<usize> {
        let i = self.node_index(g).ok_or_else(|| Error::UnknownGene(g.to_string()))?;
        Ok(self.succ[i].len())
    }

    /// Copy with every correlation replaced by `f(edge_index, edge)`.
    pub fn map_correlations<F>(&self, mut f: F) -> Self
    where
        F: FnMut(usize, &Edge) -> Option<f64>,
    {
        let mut out = self.clone();
        for (i, e) in out.edges.iter_mut().enumerate() {
            e.correlation = f(i, &self.edges[i]);
        }
        out
    }

    /// Sub-network induced by `keep`, retaining node order.
    pub fn induced(&self, keep: &std::collections::HashSet<GeneId>) -> Self {
        let nodes: Vec<GeneId> = self.nodes.iter().filter(|n| keep.contains(*n)).cloned().collect();
        let edges: Vec<Edge> = self
            .edges
            .iter()
            .filter(|e| keep.contains(&e.source) && keep.contains(&e.target))
            .cloned()
            .collect();
        RegulatoryNetwork::new(nodes, edges).expect("induced subgraph of a valid network")
    }
}

/// A subnetwork traced upstream from its output gene(s).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubGrnn {
    pub output_genes: Vec<GeneId>,
    pub hidden_genes: Vec<GeneId>,
    pub input_genes: Vec<GeneId>,
    pub edges: Vec<Edge>,
    pub timepoint: u32,
    /// `thresholds[k][r]`: decision threshold of output `k` in replicate `r`.
    /// Empty for calculation tasks.
    pub thresholds: Vec<Vec<f64>>,
    pub task: String,
    /// Outputs that no input gene reaches within the depth limit.
    pub unreachable: Vec<GeneId>,
}

impl SubGrnn {
    pub fn all_genes(&self) -> impl Iterator<Item = &GeneId> {
        self.output_genes
            .iter()
            .chain(self.hidden_genes.iter())
            .chain(self.input_genes.iter())
    }

    /// The sub-network as a standalone graph.
    pub fn network(&self) -> RegulatoryNetwork {
        RegulatoryNetwork::new(self.all_genes().cloned(), self.edges.clone())
            .expect("sub-network edges are unique")
    }
}

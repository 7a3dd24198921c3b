//! Readers and writers for the expression, edge-list and count file formats,
//! plus count → TPM normalization.
//!
//! All files are UTF-8, comma-delimited, with a header row. Sample columns of
//! an expression file are named `c{code}_t{time}_r{replicate}`; an empty
//! field marks a missing cell.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{Edge, ExpressionDataset, GeneId, RegulatoryNetwork};

/// Parses a `c{code}_t{time}_r{rep}` column name.
pub fn parse_sample_name(name: &str) -> Option<(u32, u32, u32)> {
    let mut parts = name.split('_');
    let c = parts.next()?.strip_prefix('c')?.parse().ok()?;
    let t = parts.next()?.strip_prefix('t')?.parse().ok()?;
    let r = parts.next()?.strip_prefix('r')?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((c, t, r))
}

pub fn sample_name(code: u32, time: u32, rep: u32) -> String {
    format!("c{code}_t{time}_r{rep}")
}

fn push_unique(axis: &mut Vec<u32>, v: u32) -> usize {
    match axis.iter().position(|&x| x == v) {
        Some(i) => i,
        None => {
            axis.push(v);
            axis.len() - 1
        }
    }
}

fn parse_number(field: &str, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Value(format!("{what}: cannot parse {field:?} as a number")))?;
    if !v.is_finite() {
        return Err(Error::Value(format!("{what}: non-finite value {field:?}")));
    }
    Ok(v)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Reads an expression table. Axis order follows first appearance in the
/// header.
pub fn parse_expression_table<R: Read>(input: R) -> Result<ExpressionDataset> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("gene") {
        return Err(Error::Schema("first column must be `gene`".into()));
    }
    let (mut codes, mut times, mut reps) = (Vec::new(), Vec::new(), Vec::new());
    let mut columns = Vec::with_capacity(header.len() - 1);
    let mut seen = std::collections::HashSet::new();
    for name in header.iter().skip(1) {
        let (c, t, r) = parse_sample_name(name)
            .ok_or_else(|| Error::Schema(format!("bad sample column {name:?}")))?;
        if !seen.insert((c, t, r)) {
            return Err(Error::Schema(format!("duplicate sample column {name:?}")));
        }
        columns.push((push_unique(&mut codes, c), push_unique(&mut times, t), push_unique(&mut reps, r)));
    }
    if columns.is_empty() {
        return Err(Error::Schema("no sample columns".into()));
    }

    let mut genes = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut gene_seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let gene = GeneId::new(rec.get(0).unwrap_or_default())?;
        if !gene_seen.insert(gene.clone()) {
            return Err(Error::DuplicateGene(gene.to_string()));
        }
        if rec.len() != header.len() {
            return Err(Error::Schema(format!("row for {gene} has {} fields, expected {}", rec.len(), header.len())));
        }
        let mut row = Vec::with_capacity(columns.len());
        for field in rec.iter().skip(1) {
            if field.is_empty() {
                row.push(None);
                continue;
            }
            let v = parse_number(field, gene.as_str())?;
            if v < 0.0 {
                return Err(Error::Value(format!("{gene}: negative expression {v}")));
            }
            row.push(Some(v));
        }
        genes.push(gene);
        rows.push(row);
    }

    let mut ds = ExpressionDataset::new(genes, codes, times, reps)?;
    for (g, row) in rows.into_iter().enumerate() {
        for (&(c, t, r), v) in columns.iter().zip(row) {
            if let Some(v) = v {
                ds.set(g, c, t, r, v)?;
            }
        }
    }
    Ok(ds)
}

/// Writes every (code, time, replicate) column in axis order. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_expression_table<W: Write>(ds: &ExpressionDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["gene".to_string()];
    let mut cols = Vec::new();
    for (ci, &c) in ds.codes().iter().enumerate() {
        for (ti, &t) in ds.times().iter().enumerate() {
            for (ri, &r) in ds.replicates().iter().enumerate() {
                header.push(sample_name(c, t, r));
                cols.push((ci, ti, ri));
            }
        }
    }
    w.write_record(&header)?;
    for (g, gene) in ds.genes().iter().enumerate() {
        let mut rec = Vec::with_capacity(header.len());
        rec.push(gene.to_string());
        for &(c, t, r) in &cols {
            rec.push(ds.value(g, c, t, r).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `source,target,correlation`; an empty correlation is missing.
pub fn parse_edge_list<R: Read>(input: R) -> Result<RegulatoryNetwork> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 2 || names[0] != "source" || names[1] != "target" || names.get(2).is_some_and(|n| *n != "correlation") {
        return Err(Error::Schema("edge file header must be `source,target,correlation`".into()));
    }
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let source = GeneId::new(rec.get(0).unwrap_or_default())?;
        let target = GeneId::new(rec.get(1).unwrap_or_default())?;
        let correlation = match rec.get(2) {
            None | Some("") => None,
            Some(s) => {
                let rho = parse_number(s, "correlation")?;
                if !(-1.0..=1.0).contains(&rho) {
                    return Err(Error::Value(format!("correlation {rho} of {source}->{target} outside [-1,1]")));
                }
                Some(rho)
            }
        };
        edges.push(Edge { source, target, correlation });
    }
    RegulatoryNetwork::new(Vec::new(), edges)
}

pub fn write_edge_list<W: Write>(net: &RegulatoryNetwork, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "target", "correlation"])?;
    for e in net.edges() {
        let rho = e.correlation.map(|r| r.to_string()).unwrap_or_default();
        w.write_record([e.source.as_str(), e.target.as_str(), rho.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountRow {
    pub gene: GeneId,
    pub length_bp: u64,
    pub counts: Vec<u64>,
}

/// Raw read counts; `rows[g].counts[s]` belongs to `samples[s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    pub samples: Vec<String>,
    pub rows: Vec<CountRow>,
}

/// Reads `gene,length_bp,{sample}...`.
pub fn parse_count_table<R: Read>(input: R) -> Result<CountTable> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("gene") || header.get(1) != Some("length_bp") {
        return Err(Error::Schema("count file header must start with `gene,length_bp`".into()));
    }
    let samples: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    if samples.is_empty() {
        return Err(Error::Schema("no sample columns".into()));
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let gene = GeneId::new(rec.get(0).unwrap_or_default())?;
        if !seen.insert(gene.clone()) {
            return Err(Error::DuplicateGene(gene.to_string()));
        }
        if rec.len() != header.len() {
            return Err(Error::Schema(format!("row for {gene} has {} fields, expected {}", rec.len(), header.len())));
        }
        let length_bp: u64 = rec[1]
            .parse()
            .map_err(|_| Error::Value(format!("{gene}: bad length {:?}", &rec[1])))?;
        if length_bp == 0 {
            return Err(Error::Value(format!("{gene}: transcript length must be positive")));
        }
        let counts = rec
            .iter()
            .skip(2)
            .map(|f| f.parse::<u64>().map_err(|_| Error::Value(format!("{gene}: bad count {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(CountRow { gene, length_bp, counts });
    }
    Ok(CountTable { samples, rows })
}

/// Gene × sample TPM values.
#[derive(Clone, Debug, PartialEq)]
pub struct TpmMatrix {
    pub genes: Vec<GeneId>,
    pub samples: Vec<String>,
    /// `values[g][s]`
    pub values: Vec<Vec<f64>>,
}

impl TpmMatrix {
    pub fn column(&self, s: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(move |row| row[s])
    }

    /// Reinterprets the matrix as an expression dataset; every sample name
    /// must follow the `c{code}_t{time}_r{rep}` convention.
    pub fn to_dataset(&self) -> Result<ExpressionDataset> {
        let (mut codes, mut times, mut reps) = (Vec::new(), Vec::new(), Vec::new());
        let mut cols = Vec::new();
        for s in &self.samples {
            let (c, t, r) = parse_sample_name(s)
                .ok_or_else(|| Error::Schema(format!("sample {s:?} is not of the form c<code>_t<time>_r<rep>")))?;
            cols.push((push_unique(&mut codes, c), push_unique(&mut times, t), push_unique(&mut reps, r)));
        }
        let mut ds = ExpressionDataset::new(self.genes.clone(), codes, times, reps)?;
        for (g, row) in self.values.iter().enumerate() {
            for (&(c, t, r), &v) in cols.iter().zip(row) {
                ds.set(g, c, t, r, v)?;
            }
        }
        Ok(ds)
    }
}

/// Per sample: `RPK = count / (length_bp / 1000)`,
/// `TPM = RPK / Σ RPK × 10⁶`.
pub fn tpm_normalize(ct: &CountTable) -> Result<TpmMatrix> {
    let n_samples = ct.samples.len();
    let rpk: Vec<Vec<f64>> = ct
        .rows
        .iter()
        .map(|row| {
            let kb = row.length_bp as f64 / 1000.0;
            row.counts.iter().map(|&c| c as f64 / kb).collect()
        })
        .collect();
    let mut totals = vec![0.0; n_samples];
    for row in &rpk {
        for (t, v) in totals.iter_mut().zip(row) {
            *t += v;
        }
    }
    for (s, &total) in totals.iter().enumerate() {
        if total <= 0.0 {
            return Err(Error::EmptySample(ct.samples[s].clone()));
        }
    }
    let values = rpk
        .into_iter()
        .map(|row| row.into_iter().zip(&totals).map(|(v, &t)| v / t * 1e6).collect())
        .collect();
    Ok(TpmMatrix {
        genes: ct.rows.iter().map(|r| r.gene.clone()).collect(),
        samples: ct.samples.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_table() {
        let ds = parse_expression_table("gene,c1_t6_r1\nb0001,2.5\n".as_bytes()).unwrap();
        assert_eq!(ds.expression_at(&"b0001".into(), 1, 6, 1).unwrap(), 2.5);
    }

    #[test]
    fn empty_field_is_missing() {
        let ds = parse_expression_table("gene,c1_t6_r1,c2_t6_r1\nb0001,,3\n".as_bytes()).unwrap();
        assert_eq!(ds.expression_at(&"b0001".into(), 1, 6, 1).unwrap_err().name(), "MissingCell");
        assert_eq!(ds.expression_at(&"b0001".into(), 2, 6, 1).unwrap(), 3.0);
    }

    #[test]
    fn table_errors() {
        let dup = "gene,c1_t6_r1\nb1,1\nb1,2\n";
        assert_eq!(parse_expression_table(dup.as_bytes()).unwrap_err().name(), "DuplicateGene");
        let bad = "gene,cx_t6_r1\nb1,1\n";
        assert_eq!(parse_expression_table(bad.as_bytes()).unwrap_err().name(), "SchemaError");
        let neg = "gene,c1_t6_r1\nb1,-1\n";
        assert_eq!(parse_expression_table(neg.as_bytes()).unwrap_err().name(), "ValueError");
        let nan = "gene,c1_t6_r1\nb1,NaN\n";
        assert_eq!(parse_expression_table(nan.as_bytes()).unwrap_err().name(), "ValueError");
        let text = "gene,c1_t6_r1\nb1,abc\n";
        assert_eq!(parse_expression_table(text.as_bytes()).unwrap_err().name(), "ValueError");
    }

    #[test]
    fn edge_list_parsing() {
        let net = parse_edge_list("source,target,correlation\na,b,0.5\nb,c,\n".as_bytes()).unwrap();
        assert_eq!(net.edges()[0].correlation, Some(0.5));
        assert_eq!(net.edges()[1].correlation, None);
        let err = parse_edge_list("source,target,correlation\na,b,1.5\n".as_bytes()).unwrap_err();
        assert_eq!(err.name(), "ValueError");
    }

    #[test]
    fn tpm_single_gene_is_one_million() {
        let ct = CountTable {
            samples: vec!["s".into()],
            rows: vec![CountRow { gene: "g".into(), length_bp: 1234, counts: vec![17] }],
        };
        assert_eq!(tpm_normalize(&ct).unwrap().values[0][0], 1e6);
    }

    #[test]
    fn tpm_two_genes_hand_arithmetic() {
        // RPK = (10, 5) → TPM = (2/3, 1/3) × 10⁶
        let ct = CountTable {
            samples: vec!["s".into()],
            rows: vec![
                CountRow { gene: "a".into(), length_bp: 1000, counts: vec![10] },
                CountRow { gene: "b".into(), length_bp: 2000, counts: vec![10] },
            ],
        };
        let tpm = tpm_normalize(&ct).unwrap();
        assert!((tpm.values[0][0] - 666_666.666_666_666_7).abs() < 1e-6);
        assert!((tpm.values[1][0] - 333_333.333_333_333_3).abs() < 1e-6);
    }

    #[test]
    fn tpm_empty_sample() {
        let ct = CountTable {
            samples: vec!["s".into()],
            rows: vec![CountRow { gene: "a".into(), length_bp: 1000, counts: vec![0] }],
        };
        assert_eq!(tpm_normalize(&ct).unwrap_err().name(), "EmptySample");
    }

    #[test]
    fn count_table_to_dataset() {
        let text = "gene,length_bp,c1_t6_r1,c2_t6_r1\na,1000,10,3\nb,2000,10,9\n";
        let ct = parse_count_table(text.as_bytes()).unwrap();
        let ds = tpm_normalize(&ct).unwrap().to_dataset().unwrap();
        let v = ds.expression_at(&"a".into(), 1, 6, 1).unwrap();
        assert!((v - 666_666.666_666_666_7).abs() < 1e-6);
    }
}

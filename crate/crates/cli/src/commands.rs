use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use grnn_core::ingest::{parse_count_table, parse_edge_list, parse_expression_table, tpm_normalize, write_edge_list, write_expression_table};
use grnn_core::lyapunov::{
    critical_s_closed_form, critical_s_numeric, stability_profile, trajectory, ClosedFormLevel, CriticalLevel, LyapunovTrajectory,
    ProfileTask, StabilityProfile, TrajectoryParams,
};
use grnn_core::perturb::{
    assign_missing_correlations, collective_sweep, genewise_report, Evaluator, FoldReference, PerturbationConfig, ReliabilityReport,
    SweepPoint, ThresholdedOutput,
};
use grnn_core::search::{
    count_matching_networks, extract_subgrnn, search_binary_task, search_calculation, search_classification, select_binary_bank,
    top_variance_genes, MatchSet, SelectionMode,
};
use grnn_core::stability::{score_edges, StabilityRule};
use grnn_core::synth::{generate_benchmark, BenchmarkManifest};
use grnn_core::tasks::{decode_bit_patterns, TableTask, TaskSpec};
use grnn_core::{Error, ExpressionDataset, GeneId, RegulatoryNetwork, Result, SubGrnn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::report::{num, opt_num, OutDir, RunManifest};
use crate::*;

pub(crate) fn dispatch(cmd: &Command) -> Result<String> {
    let name = cmd.name();
    match cmd {
        Command::Normalize(a) => normalize(name, a),
        Command::StableEdges(a) => stable_edges(name, a),
        Command::Tasks(TasksCommand::Show(a)) => tasks_show(name, a),
        Command::Search(SearchCommand::Calc(a)) => search(name, a, Kind::Calculation),
        Command::Search(SearchCommand::Class(a)) => search(name, a, Kind::Classification),
        Command::Search(SearchCommand::Binary(a)) => search(name, a, Kind::Binary),
        Command::Extract(a) => extract(name, a),
        Command::Perturb(PerturbCommand::Gene(a)) => perturb_gene(name, a),
        Command::Perturb(PerturbCommand::Collective(a)) => perturb_collective(name, a),
        Command::Lyapunov(a) => lyapunov(name, a),
        Command::Synth(a) => synth(name, a),
        Command::Pipeline(a) => crate::pipeline::run(name, a),
    }
}

pub(crate) fn config_of<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

pub(crate) fn load_expression(m: &mut RunManifest, p: &Path) -> Result<ExpressionDataset> {
    parse_expression_table(&m.read_input(p)?[..])
}

pub(crate) fn load_network(m: &mut RunManifest, p: &Path) -> Result<RegulatoryNetwork> {
    parse_edge_list(&m.read_input(p)?[..])
}

pub(crate) fn load_json<T: DeserializeOwned>(m: &mut RunManifest, p: &Path) -> Result<T> {
    serde_json::from_slice(&m.read_input(p)?).map_err(|e| Error::Schema(format!("{}: {e}", p.display())))
}

fn gene_ids(names: &[String]) -> Result<Vec<GeneId>> {
    names.iter().map(|n| GeneId::new(n.trim())).collect()
}

fn done(out: &OutDir) -> String {
    format!("wrote {}", out.path.display())
}

fn normalize(name: &str, a: &NormalizeArgs) -> Result<String> {
    let mut m = RunManifest::new(name, None, config_of(a));
    let counts = parse_count_table(&m.read_input(&a.counts)?[..])?;
    let tpm = tpm_normalize(&counts)?;
    let out = OutDir::create(&a.out.out)?;
    let mut header = vec!["gene"];
    header.extend(tpm.samples.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = tpm
        .genes
        .iter()
        .zip(&tpm.values)
        .map(|(g, row)| std::iter::once(g.to_string()).chain(row.iter().map(|&v| num(v))).collect())
        .collect();
    out.csv("tpm.csv", &header, &rows)?;
    m.finish(&out)?;
    Ok(done(&out))
}

fn stable_edges(name: &str, a: &StableEdgesArgs) -> Result<String> {
    let mut m = RunManifest::new(name, None, config_of(a));
    let net = load_network(&mut m, &a.network)?;
    if a.expression.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: a.expression.len() });
    }
    let datasets = a.expression.iter().map(|p| load_expression(&mut m, p)).collect::<Result<Vec<_>>>()?;
    let rule = match (a.threshold, a.top_fraction) {
        (_, Some(f)) if !(0.0..=1.0).contains(&f) => return Err(Error::Value(format!("top fraction {f} outside [0, 1]"))),
        (_, Some(f)) => StabilityRule::TopQuantile(f),
        (Some(t), None) => StabilityRule::Threshold(t),
        (None, None) => StabilityRule::default(),
    };
    let report = score_edges(&net, &datasets, rule);
    let out = OutDir::create(&a.out.out)?;
    let rows: Vec<Vec<String>> = report
        .edges
        .iter()
        .map(|e| vec![e.source.to_string(), e.target.to_string(), opt_num(e.score), e.stable.to_string()])
        .collect();
    out.csv("edges.csv", &["source", "target", "score", "stable"], &rows)?;
    out.json("edge_stability.json", &report)?;
    m.finish(&out)?;
    Ok(format!("{} of {} edges stable; {}", rows.iter().filter(|r| r[3] == "true").count(), rows.len(), done(&out)))
}

fn tasks_show(name: &str, a: &TasksShowArgs) -> Result<String> {
    let m = RunManifest::new(name, None, config_of(a));
    let tasks = a.task.map_or_else(TableTask::all, |t| vec![t]);
    let outputs: Vec<_> = tasks.iter().map(TableTask::expected_output).collect();
    let out = OutDir::create(&a.out.out)?;
    out.json("tasks.json", &outputs)?;
    m.finish(&out)?;
    serde_json::to_string_pretty(&outputs).map_err(|e| Error::Io(e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub(crate) enum Kind {
    Calculation,
    Classification,
    Binary,
}

impl Kind {
    fn of(spec: &TaskSpec) -> Kind {
        match spec {
            TaskSpec::Calculation { .. } => Kind::Calculation,
            TaskSpec::Classification { .. } => Kind::Classification,
            TaskSpec::BinaryEncoded { .. } => Kind::Binary,
        }
    }
}

/// Output gene(s) chosen by a search, with their decision thresholds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Selection {
    pub outputs: Vec<GeneId>,
    pub timepoint: u32,
    /// `thresholds[k][r]`; empty for calculation tasks.
    pub thresholds: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct SearchOutcome {
    pub task: TableTask,
    pub kind: Kind,
    pub base_code: u32,
    pub tolerance: f64,
    pub spec: TaskSpec,
    pub selection: Option<Selection>,
    /// Values read back from the selected binary bank, one per code.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub decoded: Option<Vec<u64>>,
    pub network_counts: BTreeMap<u32, u128>,
    /// One set per output bit.
    pub matches: Vec<MatchSet>,
}

pub(crate) fn search_stage(
    ds: &ExpressionDataset,
    task: TableTask,
    base_code: u32,
    tolerance: f64,
    selection_mode: SelectionMode,
) -> Result<SearchOutcome> {
    let spec = task.spec(ds.codes(), base_code, tolerance)?;
    let kind = Kind::of(&spec);
    let (matches, selection, decoded) = match &spec {
        TaskSpec::Calculation { .. } => {
            let m = search_calculation(ds, &spec)?;
            let sel = m.best.as_ref().map(|b| Selection { outputs: vec![b.gene.clone()], timepoint: b.timepoint, thresholds: Vec::new() });
            (vec![m], sel, None)
        }
        TaskSpec::Classification { .. } => {
            let m = search_classification(ds, &spec, selection_mode)?;
            let sel = m.best.as_ref().map(|b| Selection {
                outputs: vec![b.gene.clone()],
                timepoint: b.timepoint,
                thresholds: vec![b.thresholds.clone()],
            });
            (vec![m], sel, None)
        }
        TaskSpec::BinaryEncoded { codes, .. } => {
            let per_bit = search_binary_task(ds, &spec)?;
            match select_binary_bank(&per_bit) {
                Some((t, bank)) => {
                    let rep = ds.replicates()[0];
                    let bits = bank
                        .iter()
                        .map(|e| codes.iter().map(|&c| Ok(ds.expression_at(&e.gene, c, t, rep)? > e.thresholds[0])).collect())
                        .collect::<Result<Vec<Vec<bool>>>>()?;
                    let sel = Selection {
                        outputs: bank.iter().map(|e| e.gene.clone()).collect(),
                        timepoint: t,
                        thresholds: bank.iter().map(|e| e.thresholds.clone()).collect(),
                    };
                    (per_bit, Some(sel), Some(decode_bit_patterns(&bits)))
                }
                None => (per_bit, None, None),
            }
        }
    };
    Ok(SearchOutcome {
        task,
        kind,
        base_code,
        tolerance,
        network_counts: count_matching_networks(ds, &spec)?,
        spec,
        selection,
        decoded,
        matches,
    })
}

pub(crate) fn write_search(out: &OutDir, outcome: &SearchOutcome) -> Result<()> {
    out.json("matchset.json", outcome)?;
    let binary = outcome.kind == Kind::Binary;
    let mut rows = Vec::new();
    for (bit, set) in outcome.matches.iter().enumerate() {
        for e in &set.entries {
            let mut row = vec![e.gene.to_string(), e.timepoint.to_string(), num(e.score)];
            if binary {
                row.insert(0, bit.to_string());
            }
            rows.push(row);
        }
    }
    let header: &[&str] = if binary { &["bit", "gene", "timepoint", "score"] } else { &["gene", "timepoint", "score"] };
    out.csv("matches.csv", header, &rows)
}

fn search(name: &str, a: &SearchArgs, want: Kind) -> Result<String> {
    let mut m = RunManifest::new(name, None, config_of(a));
    let ds = load_expression(&mut m, &a.expression)?;
    let spec = a.task.task.spec(ds.codes(), a.task.base_code, a.task.tolerance)?;
    if Kind::of(&spec) != want {
        return Err(Error::Spec(format!("task {} is not a {:?} task", a.task.task, want).to_lowercase()));
    }
    let outcome = search_stage(&ds, a.task.task, a.task.base_code, a.task.tolerance, a.selection)?;
    let out = OutDir::create(&a.out.out)?;
    write_search(&out, &outcome)?;
    m.finish(&out)?;
    let found = match &outcome.selection {
        Some(s) => format!("best {} at t={}", s.outputs.iter().map(GeneId::to_string).collect::<Vec<_>>().join(","), s.timepoint),
        None => "no match".into(),
    };
    Ok(format!("{found}; {}", done(&out)))
}

/// Input genes: explicit list, else benchmark inputs, else the most variable
/// network genes other than the outputs.
pub(crate) fn choose_inputs(
    explicit: &[String],
    benchmark: Option<&BenchmarkManifest>,
    ds: Option<&ExpressionDataset>,
    net: &RegulatoryNetwork,
    outputs: &[GeneId],
    k: usize,
) -> Result<Vec<GeneId>> {
    if !explicit.is_empty() {
        return gene_ids(explicit);
    }
    if let Some(b) = benchmark {
        return Ok(b.input_genes.clone());
    }
    let Some(ds) = ds else {
        return Err(Error::Value("no input genes: pass --inputs, --benchmark or --expression".into()));
    };
    let pool: HashSet<GeneId> = net.nodes().iter().filter(|g| !outputs.contains(g)).cloned().collect();
    Ok(top_variance_genes(ds, k, Some(&pool)))
}

pub(crate) fn extract_stage(net: &RegulatoryNetwork, outcome: &SearchOutcome, inputs: &[GeneId], depth: usize) -> Result<SubGrnn> {
    let sel = outcome.selection.as_ref().ok_or(Error::EmptyCandidates)?;
    let mut sub = extract_subgrnn(net, &sel.outputs, inputs, depth)?;
    sub.timepoint = sel.timepoint;
    sub.thresholds = sel.thresholds.clone();
    sub.task = outcome.task.to_string();
    Ok(sub)
}

fn extract(name: &str, a: &ExtractArgs) -> Result<String> {
    let mut m = RunManifest::new(name, None, config_of(a));
    let net = load_network(&mut m, &a.network)?;
    let outcome: SearchOutcome = load_json(&mut m, &a.matchset)?;
    let bench: Option<BenchmarkManifest> = a.benchmark.as_deref().map(|p| load_json(&mut m, p)).transpose()?;
    let ds = a.expression.as_deref().map(|p| load_expression(&mut m, p)).transpose()?;
    let outputs = outcome.selection.as_ref().map(|s| s.outputs.clone()).unwrap_or_default();
    let inputs = choose_inputs(&a.inputs, bench.as_ref(), ds.as_ref(), &net, &outputs, a.input_k)?;
    let sub = extract_stage(&net, &outcome, &inputs, a.depth_limit)?;
    let out = OutDir::create(&a.out.out)?;
    out.json("subgrnn.json", &sub)?;
    m.finish(&out)?;
    Ok(format!(
        "{} inputs, {} hidden, {} outputs ({} unreachable); {}",
        sub.input_genes.len(),
        sub.hidden_genes.len(),
        sub.output_genes.len(),
        sub.unreachable.len(),
        done(&out)
    ))
}

pub(crate) fn perturbation_config(o: &PerturbOpts) -> PerturbationConfig {
    PerturbationConfig {
        alphas: o.alphas.clone(),
        sigma2: o.sigma2,
        d_max: o.d_max,
        seed: o.seed,
        per_replicate_bounds: o.per_replicate_bounds,
    }
}

/// Scoring rule and Lyapunov form matching the sub-network's task.
pub(crate) fn evaluator_for(
    sub: &SubGrnn,
    ds: &ExpressionDataset,
    base_code: u32,
    reference: FoldReference,
) -> Result<(TaskSpec, Evaluator, ProfileTask)> {
    let task: TableTask = sub.task.parse()?;
    let spec = task.spec(ds.codes(), base_code, 0.01)?;
    let first = sub.output_genes.first().ok_or(Error::EmptySet)?.clone();
    Ok(match &spec {
        TaskSpec::Calculation { .. } => {
            let ev = Evaluator::Calculation { output: first, spec: spec.clone(), time: sub.timepoint, reference };
            (spec, ev, ProfileTask::Calculation)
        }
        TaskSpec::Classification { codes, .. } | TaskSpec::BinaryEncoded { codes, .. } => {
            if sub.thresholds.len() != sub.output_genes.len() {
                return Err(Error::LengthMismatch(sub.thresholds.len(), sub.output_genes.len()));
            }
            let outputs: Vec<ThresholdedOutput> = sub
                .output_genes
                .iter()
                .zip(&sub.thresholds)
                .map(|(g, t)| ThresholdedOutput { gene: g.clone(), thresholds: t.clone() })
                .collect();
            let thresholds = outputs.iter().map(|o| (o.gene.clone(), o.thresholds.clone())).collect();
            let ev = Evaluator::Classification { outputs, codes: codes.clone(), time: sub.timepoint };
            (spec.clone(), ev, ProfileTask::Classification { thresholds })
        }
    })
}

pub(crate) fn task_codes(spec: &TaskSpec) -> Vec<u32> {
    match spec {
        TaskSpec::Calculation { expected_fold, .. } => expected_fold.keys().copied().collect(),
        TaskSpec::Classification { codes, .. } | TaskSpec::BinaryEncoded { codes, .. } => codes.clone(),
    }
}

/// Sub-network data with missing correlations filled in.
pub(crate) struct SubContext {
    pub genes: Vec<GeneId>,
    pub ds: ExpressionDataset,
    pub net: RegulatoryNetwork,
}

pub(crate) fn sub_context(sub: &SubGrnn, ds: &ExpressionDataset, seed: u64) -> SubContext {
    let mut genes: Vec<GeneId> = sub.all_genes().cloned().collect();
    genes.sort();
    genes.dedup();
    SubContext { ds: ds.subset(&genes), net: assign_missing_correlations(&sub.network(), seed), genes }
}

pub(crate) fn write_reliability(out: &OutDir, report: &ReliabilityReport) -> Result<()> {
    out.json("reliability.json", report)?;
    let rows: Vec<Vec<String>> = report
        .genes
        .iter()
        .flat_map(|g| {
            g.levels.iter().map(move |l| {
                vec![
                    g.gene.to_string(),
                    num(l.alpha),
                    opt_num(l.r_squared),
                    opt_num(l.ess),
                    l.hamming.map(|h| h.to_string()).unwrap_or_default(),
                ]
            })
        })
        .collect();
    out.csv("metrics.csv", &["gene", "alpha", "r_squared", "ess", "hamming"], &rows)
}

pub(crate) fn write_sweep(out: &OutDir, sweep: &[SweepPoint]) -> Result<()> {
    out.json("sweep.json", &sweep)?;
    let rows: Vec<Vec<String>> = sweep
        .iter()
        .map(|p| vec![p.k.to_string(), num(p.alpha), opt_num(p.r_squared), p.hamming.map(|h| h.to_string()).unwrap_or_default()])
        .collect();
    out.csv("sweep.csv", &["k", "alpha", "r_squared", "hamming"], &rows)
}

fn perturb_gene(name: &str, a: &PerturbGeneArgs) -> Result<String> {
    let mut m = RunManifest::new(name, Some(a.opts.seed), config_of(a));
    let ds = load_expression(&mut m, &a.inputs.expression)?;
    let sub: SubGrnn = load_json(&mut m, &a.inputs.subgrnn)?;
    let ctx = sub_context(&sub, &ds, a.opts.seed);
    let (_, evaluator, _) = evaluator_for(&sub, &ctx.ds, a.inputs.base_code, a.opts.fold_reference)?;
    let report = genewise_report(&ctx.ds, &ctx.net, &ctx.genes, &evaluator, &perturbation_config(&a.opts))?;
    let out = OutDir::create(&a.out.out)?;
    write_reliability(&out, &report)?;
    m.finish(&out)?;
    Ok(format!("most critical: {}; {}", report.ranking.first().map(GeneId::to_string).unwrap_or_default(), done(&out)))
}

fn perturb_collective(name: &str, a: &PerturbCollectiveArgs) -> Result<String> {
    let mut m = RunManifest::new(name, Some(a.opts.seed), config_of(a));
    let ds = load_expression(&mut m, &a.inputs.expression)?;
    let sub: SubGrnn = load_json(&mut m, &a.inputs.subgrnn)?;
    let ranking = if a.genes.is_empty() {
        let p = a.reliability.as_deref().ok_or(Error::EmptySet)?;
        load_json::<ReliabilityReport>(&mut m, p)?.ranking
    } else {
        gene_ids(&a.genes)?
    };
    let ctx = sub_context(&sub, &ds, a.opts.seed);
    let (_, evaluator, _) = evaluator_for(&sub, &ctx.ds, a.inputs.base_code, a.opts.fold_reference)?;
    let sweep = collective_sweep(&ctx.ds, &ctx.net, &ranking, a.k_max, &evaluator, &perturbation_config(&a.opts))?;
    let out = OutDir::create(&a.out.out)?;
    write_sweep(&out, &sweep)?;
    m.finish(&out)?;
    Ok(done(&out))
}

pub(crate) fn trajectory_params(o: &TrajectoryOpts, delta_norm: f64) -> TrajectoryParams {
    TrajectoryParams { alpha0: o.alpha0, sigma0: o.sigma0, k: o.k, l: o.l, delta_norm, epsilon_tol: o.epsilon_tol, zeta: o.zeta }
}

pub(crate) fn s_grid(o: &TrajectoryOpts) -> Result<Vec<f64>> {
    if o.samples == 0 || !o.s_max.is_finite() || o.s_max < 0.0 {
        return Err(Error::Value("need samples >= 1 and a finite s_max >= 0".into()));
    }
    if o.samples == 1 {
        return Ok(vec![0.0]);
    }
    let n = (o.samples - 1) as f64;
    Ok((0..o.samples).map(|i| o.s_max * i as f64 / n).collect())
}

pub(crate) fn write_trajectory(out: &OutDir, t: &LyapunovTrajectory) -> Result<()> {
    let rows: Vec<Vec<String>> =
        t.samples.iter().map(|p| vec![num(p.s), num(p.alpha), num(p.sigma), num(p.v), num(p.dv_ds)]).collect();
    out.csv("trajectory.csv", &["s", "alpha", "sigma", "V", "dV_ds"], &rows)
}

#[derive(Serialize)]
struct LyapunovSummary<'a> {
    params: TrajectoryParams,
    criticality: f64,
    sum_sq: f64,
    critical: CriticalLevel,
    closed_form: Option<ClosedFormLevel>,
    s2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    profile: Option<&'a StabilityProfile>,
}

fn lyapunov(name: &str, a: &LyapunovArgs) -> Result<String> {
    let mut m = RunManifest::new(name, Some(a.seed), config_of(a));
    let (mut delta_norm, mut sum_sq) = (a.delta_norm, a.sum_sq);
    let profile = match (&a.gene, &a.expression, &a.subgrnn) {
        (Some(gene), Some(e), Some(s)) => {
            let ds = load_expression(&mut m, e)?;
            let sub: SubGrnn = load_json(&mut m, s)?;
            let ctx = sub_context(&sub, &ds, a.seed);
            let (spec, _, task) = evaluator_for(&sub, &ctx.ds, a.base_code, FoldReference::default())?;
            let params = trajectory_params(&a.trajectory, a.delta_norm);
            let gene = GeneId::new(gene.trim())?;
            let p = stability_profile(&sub, &ctx.ds, &ctx.net, &gene, a.criticality, &params, &task, &task_codes(&spec), a.d_max)?;
            if let Some(b) = &p.bound {
                delta_norm = b.delta_norm;
                sum_sq = b.sum_sq_delta;
            }
            Some(p)
        }
        _ => None,
    };
    let params = trajectory_params(&a.trajectory, delta_norm);
    let critical = critical_s_numeric(&params)?;
    let closed_form = critical_s_closed_form(&params).ok();
    let traj = trajectory(&params, a.criticality, sum_sq, &s_grid(&a.trajectory)?)?;
    let out = OutDir::create(&a.out.out)?;
    write_trajectory(&out, &traj)?;
    let s1 = critical.s1;
    out.json(
        "lyapunov.json",
        &LyapunovSummary { params, criticality: a.criticality, sum_sq, critical, closed_form, s2: params.s2(), profile: profile.as_ref() },
    )?;
    m.finish(&out)?;
    Ok(format!("s1 = {s1}; {}", done(&out)))
}

fn synth(name: &str, a: &SynthArgs) -> Result<String> {
    let m = RunManifest::new(name, Some(a.synth.seed), config_of(a));
    let bench = generate_benchmark(&a.synth.spec())?;
    let out = OutDir::create(&a.out.out)?;
    let mut buf = Vec::new();
    write_expression_table(&bench.dataset, &mut buf)?;
    out.raw("expression.csv", &buf)?;
    let mut buf = Vec::new();
    write_edge_list(&bench.network, &mut buf)?;
    out.raw("network.csv", &buf)?;
    out.json("manifest.json", &bench.manifest)?;
    m.finish(&out)?;
    Ok(format!("{} genes, {} edges; {}", bench.dataset.n_genes(), bench.network.edges().len(), done(&out)))
}

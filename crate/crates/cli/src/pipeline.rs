//! The `pipeline` subcommand: every analysis stage against one dataset.

use grnn_core::lyapunov::{stability_profile, trajectory, StabilityProfile};
use grnn_core::perturb::{assign_missing_correlations, collective_sweep, genewise_report};
use grnn_core::synth::{generate_benchmark, BenchmarkSpec};
use grnn_core::{Error, Result};
use serde::Serialize;

use crate::commands::*;
use crate::report::{OutDir, RunManifest};
use crate::PipelineArgs;

#[derive(Serialize)]
struct StabilitySummary<'a> {
    profile: &'a StabilityProfile,
    s1: Option<f64>,
    s2: f64,
    alpha_star: Option<f64>,
    sigma_star: Option<f64>,
}

pub(crate) fn run(name: &str, a: &PipelineArgs) -> Result<String> {
    let seed = a.perturb.seed;
    let mut m = RunManifest::new(name, Some(seed), config_of(a));
    let (ds, net, bench) = match (&a.expression, &a.network) {
        (Some(e), Some(n)) => (load_expression(&mut m, e)?, load_network(&mut m, n)?, None),
        _ => {
            let b = generate_benchmark(&BenchmarkSpec { n_genes: a.n_genes, seed, ..Default::default() })?;
            (b.dataset, b.network, Some(b.manifest))
        }
    };
    let net = assign_missing_correlations(&net, seed);

    let outcome = search_stage(&ds, a.task, a.base_code, a.tolerance, a.selection)?;
    let outputs = outcome.selection.as_ref().ok_or(Error::EmptyCandidates)?.outputs.clone();
    let inputs = choose_inputs(&a.inputs, bench.as_ref(), Some(&ds), &net, &outputs, a.input_k)?;
    let sub = extract_stage(&net, &outcome, &inputs, a.depth_limit)?;

    let ctx = sub_context(&sub, &ds, seed);
    let (spec, evaluator, profile_task) = evaluator_for(&sub, &ctx.ds, a.base_code, a.perturb.fold_reference)?;
    let cfg = perturbation_config(&a.perturb);
    let report = genewise_report(&ctx.ds, &ctx.net, &ctx.genes, &evaluator, &cfg)?;
    let sweep = collective_sweep(&ctx.ds, &ctx.net, &report.ranking, a.k_max.min(report.ranking.len()), &evaluator, &cfg)?;

    let top = report.genes.iter().find(|g| Some(&g.gene) == report.ranking.first()).ok_or(Error::EmptySet)?;
    let profile = stability_profile(
        &sub,
        &ctx.ds,
        &ctx.net,
        &top.gene,
        top.criticality,
        &trajectory_params(&a.trajectory, 1.0),
        &profile_task,
        &task_codes(&spec),
        cfg.d_max,
    )?;
    let (delta_norm, sum_sq) = profile.bound.as_ref().map_or((1.0, 0.0), |b| (b.delta_norm, b.sum_sq_delta));
    let traj = trajectory(&trajectory_params(&a.trajectory, delta_norm), top.criticality, sum_sq, &s_grid(&a.trajectory)?)?;

    let out = OutDir::create(&a.out.out)?;
    write_search(&out, &outcome)?;
    out.json("subgrnn.json", &sub)?;
    write_reliability(&out, &report)?;
    write_sweep(&out, &sweep)?;
    out.json(
        "stability.json",
        &StabilitySummary { profile: &profile, s1: traj.s1, s2: traj.s2, alpha_star: traj.alpha_star, sigma_star: traj.sigma_star },
    )?;
    write_trajectory(&out, &traj)?;
    if let Some(b) = &bench {
        out.json("benchmark.json", b)?;
    }
    m.finish(&out)?;
    Ok(format!(
        "outputs {}; {} sub-network genes; most critical {}; {}",
        outputs.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        ctx.genes.len(),
        top.gene,
        format_args!("wrote {}", out.path.display())
    ))
}

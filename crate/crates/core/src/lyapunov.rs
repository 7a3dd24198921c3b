//! Lyapunov stability of a sub-network under a growing perturbation.
//!
//! The perturbation level follows the line `α(s) = α₀ + k·s`,
//! `σ(s) = σ₀ + l·s`. Along it the Lyapunov value is
//!
//! ```text
//! V = (ε + σ²C² / (α(1 + C²))) · Σ_q ‖Δ_q‖²
//! ```
//!
//! and instability sets in where the derivative
//! `σC²/(α(1+C²)) · (2l − kσ/(α³·‖Δ‖)) · Σ‖Δ‖²` turns non-negative. The
//! bracket vanishes on the roots of a cubic in `s`, solved here by
//! bracketing and bisection.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{min_max_expression, ExpressionDataset, GeneId, RegulatoryNetwork, SubGrnn};
use crate::perturb::propagation_row;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub alpha0: f64,
    pub sigma0: f64,
    pub k: f64,
    pub l: f64,
    pub delta_norm: f64,
    pub epsilon_tol: f64,
    pub zeta: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        TrajectoryParams { alpha0: 0.1, sigma0: 0.1, k: 10.0, l: 1.0, delta_norm: 1.0, epsilon_tol: 0.0, zeta: 1e-9 }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Value(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("k", self.k)?;
        positive("l", self.l)?;
        positive("delta_norm", self.delta_norm)?;
        positive("zeta", self.zeta)?;
        if !(self.epsilon_tol >= 0.0) {
            return Err(Error::Value(format!("epsilon_tol must be >= 0, got {}", self.epsilon_tol)));
        }
        if !self.alpha0.is_finite() || !self.sigma0.is_finite() {
            return Err(Error::Value("alpha0 and sigma0 must be finite".into()));
        }
        Ok(())
    }

    pub fn alpha(&self, s: f64) -> f64 {
        self.alpha0 + self.k * s
    }

    /// Exactly zero at [`Self::s2`], where the affine form can round off.
    pub fn sigma(&self, s: f64) -> f64 {
        if s == self.s2() {
            0.0
        } else {
            self.sigma0 + self.l * s
        }
    }

    /// Level at which the noise scale vanishes.
    pub fn s2(&self) -> f64 {
        -self.sigma0 / self.l
    }
}

/// `α·(x_max − x_min)·σ²·η` times each propagation weight.
pub fn delta_x(alpha: f64, sigma2: f64, bounds: (f64, f64), eta: f64, weights: &[f64]) -> Vec<f64> {
    let scale = alpha * (bounds.1 - bounds.0) * sigma2 * eta;
    weights.iter().map(|w| scale * w).collect()
}

/// `1 + max(0, (current − base)/(base + ζ))`.
pub fn weight_factor_calc(current: f64, base: f64, zeta: f64) -> f64 {
    1.0 + ((current - base) / (base + zeta)).max(0.0)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveAlpha(alpha))
    }
}

/// `σ²C²/(α(1+C²))`.
pub fn prefactor(criticality: f64, alpha: f64, sigma: f64) -> f64 {
    let c2 = criticality * criticality;
    sigma * sigma * c2 / (alpha * (1.0 + c2))
}

/// d/ds of [`prefactor`] along the trajectory, by the chain rule.
pub fn prefactor_ds(criticality: f64, alpha: f64, sigma: f64, k: f64, l: f64) -> f64 {
    let c2 = criticality * criticality;
    c2 / (1.0 + c2) * (2.0 * sigma * l / alpha - sigma * sigma * k / (alpha * alpha))
}

/// A neighbour's contribution: weight factor and deviation vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalcNeighbor {
    pub weight: f64,
    pub delta: Vec<f64>,
}

impl CalcNeighbor {
    pub fn norm_sq(&self) -> f64 {
        self.weight * self.weight * self.delta.iter().map(|d| d * d).sum::<f64>()
    }
}

/// Compact calculation Lyapunov value.
pub fn lyapunov_calc(criticality: f64, neighbors: &[CalcNeighbor], alpha: f64, sigma: f64, epsilon_tol: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let sum: f64 = neighbors.iter().map(CalcNeighbor::norm_sq).sum();
    Ok(lyapunov_from_sum(criticality, sum, alpha, sigma, epsilon_tol))
}

fn lyapunov_from_sum(criticality: f64, sum_sq: f64, alpha: f64, sigma: f64, epsilon_tol: f64) -> f64 {
    (epsilon_tol + prefactor(criticality, alpha, sigma)) * sum_sq
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTerms {
    pub y: bool,
    pub y_hat: bool,
    pub r: f64,
    pub dist: f64,
    pub sign_err: f64,
    pub beta: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn classification_terms(x_start: f64, x_perturbed: f64, theta: f64) -> ClassTerms {
    let y = x_start > theta;
    let y_hat = x_perturbed > theta;
    let dist = (x_perturbed - theta).abs();
    let sign_err = sign((x_perturbed - theta) * (x_start - theta));
    ClassTerms {
        y,
        y_hat,
        r: if y != y_hat { 1.0 } else { 0.0 },
        dist,
        sign_err,
        beta: (1.0 - sign_err) / (1.0 + dist),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassNeighbor {
    pub weight: f64,
    pub beta: f64,
    pub r: f64,
}

/// Classification Lyapunov value with the σ² prefactor cancelled against
/// the 1/σ² inside the norm: `C²/((1+C²)α²) · Σ w²(β + r)²`. Zero noise
/// leaves every label in place, so σ = 0 gives 0.
pub fn lyapunov_class(criticality: f64, neighbors: &[ClassNeighbor], alpha: f64, sigma: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let c2 = criticality * criticality;
    let sum: f64 = neighbors.iter().map(|n| (n.weight * (n.beta + n.r)).powi(2)).sum();
    Ok(c2 / ((1.0 + c2) * alpha * alpha) * sum)
}

/// Lyapunov derivative along the trajectory with Σ‖Δ‖² held fixed.
#[allow(non_snake_case)]
pub fn dV_ds_paper(
    criticality: f64,
    sum_sq: f64,
    alpha: f64,
    sigma: f64,
    k: f64,
    l: f64,
    delta_norm: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let c2 = criticality * criticality;
    let bracket = 2.0 * l - k * sigma / (alpha.powi(3) * delta_norm);
    Ok(sigma * c2 / (alpha * (1.0 + c2)) * bracket * sum_sq)
}

/// Central finite difference of V along the trajectory, Σ‖Δ‖² held fixed.
pub fn dv_ds_finite_difference(params: &TrajectoryParams, criticality: f64, sum_sq: f64, s: f64, h: f64) -> Result<f64> {
    let v = |s: f64| -> Result<f64> {
        let a = params.alpha(s);
        check_alpha(a)?;
        Ok(lyapunov_from_sum(criticality, sum_sq, a, params.sigma(s), params.epsilon_tol))
    };
    Ok((v(s + h)? - v(s - h)?) / (2.0 * h))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub s: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub v: f64,
    pub dv_ds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovTrajectory {
    pub samples: Vec<TrajectorySample>,
    pub s1: Option<f64>,
    pub s2: f64,
    pub alpha_star: Option<f64>,
    pub sigma_star: Option<f64>,
}

/// Samples V and dV/ds on `s_grid` for a fixed criticality and Σ‖Δ‖².
pub fn trajectory(params: &TrajectoryParams, criticality: f64, sum_sq: f64, s_grid: &[f64]) -> Result<LyapunovTrajectory> {
    params.validate()?;
    if s_grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Value("s grid must be sorted".into()));
    }
    let samples = s_grid
        .iter()
        .map(|&s| {
            let alpha = params.alpha(s);
            if !(alpha > 0.0) {
                return Err(Error::AlphaNonPositiveOnGrid(s));
            }
            let sigma = params.sigma(s);
            Ok(TrajectorySample {
                s,
                alpha,
                sigma,
                v: lyapunov_from_sum(criticality, sum_sq, alpha, sigma, params.epsilon_tol),
                dv_ds: dV_ds_paper(criticality, sum_sq, alpha, sigma, params.k, params.l, params.delta_norm)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let s1 = match critical_s_numeric(params) {
        Ok(c) => Some(c.s1),
        Err(Error::NoPositiveRoot) => None,
        Err(e) => return Err(e),
    };
    Ok(LyapunovTrajectory {
        samples,
        s1,
        s2: params.s2(),
        alpha_star: s1.map(|s| params.alpha(s)),
        sigma_star: s1.map(|s| params.sigma(s)),
    })
}

/// Coefficients `[c0, c1, c2, c3]` of the cubic whose roots zero the
/// derivative bracket: `2l·‖Δ‖·(α₀ + ks)³ − k(σ₀ + ls)`.
pub fn critical_cubic(params: &TrajectoryParams) -> [f64; 4] {
    let TrajectoryParams { alpha0: a, sigma0: s0, k, l, delta_norm: d, .. } = *params;
    let m = 2.0 * l * d;
    [m * a.powi(3) - k * s0, 3.0 * m * k * a * a - k * l, 3.0 * m * k * k * a, m * k.powi(3)]
}

pub fn eval_cubic(c: &[f64; 4], s: f64) -> f64 {
    ((c[3] * s + c[2]) * s + c[1]) * s + c[0]
}

fn bisect(c: &[f64; 4], mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = eval_cubic(c, lo);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = eval_cubic(c, mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    if eval_cubic(c, lo).abs() <= eval_cubic(c, hi).abs() {
        lo
    } else {
        hi
    }
}

/// Real roots of a cubic with `c[3] != 0`, ascending, found by bisection on
/// the monotone pieces between critical points.
pub fn real_cubic_roots(c: &[f64; 4]) -> Vec<(f64, (f64, f64))> {
    let bound = 1.0 + (0..3).map(|i| (c[i] / c[3]).abs()).fold(0.0, f64::max);
    let mut knots = vec![-bound];
    // critical points of 3c3 s² + 2c2 s + c1
    let (qa, qb, qc) = (3.0 * c[3], 2.0 * c[2], c[1]);
    let disc = qb * qb - 4.0 * qa * qc;
    if disc > 0.0 {
        let r = disc.sqrt();
        let mut cps = [(-qb - r) / (2.0 * qa), (-qb + r) / (2.0 * qa)];
        cps.sort_by(f64::total_cmp);
        knots.extend(cps);
    }
    knots.push(bound);
    let mut roots = Vec::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (eval_cubic(c, a), eval_cubic(c, b));
        if fa == 0.0 {
            roots.push((a, (a, a)));
        } else if (fa < 0.0) != (fb < 0.0) && fb != 0.0 {
            roots.push((bisect(c, a, b), (a, b)));
        }
    }
    if eval_cubic(c, bound) == 0.0 {
        roots.push((bound, (bound, bound)));
    }
    roots.dedup_by(|x, y| x.0 == y.0);
    roots
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalLevel {
    pub s1: f64,
    pub alpha_star: f64,
    pub sigma_star: f64,
    /// |cubic(s1)|.
    pub residual: f64,
    /// Largest coefficient magnitude of the cubic.
    pub scale: f64,
    /// Sign-change interval the root was bisected in.
    pub bracket: (f64, f64),
    /// Remaining roots as (re, im).
    pub other_roots: Vec<(f64, f64)>,
}

/// Smallest positive real root of the critical cubic.
pub fn critical_s_numeric(params: &TrajectoryParams) -> Result<CriticalLevel> {
    params.validate()?;
    let c = critical_cubic(params);
    let roots = real_cubic_roots(&c);
    let (s1, bracket) = roots.iter().copied().find(|(r, _)| *r > 0.0).ok_or(Error::NoPositiveRoot)?;
    // deflate: c3 s² + b s + q
    let b = c[2] + c[3] * s1;
    let q = c[1] + b * s1;
    let disc = b * b - 4.0 * c[3] * q;
    let other_roots = if disc >= 0.0 {
        let r = disc.sqrt();
        vec![((-b - r) / (2.0 * c[3]), 0.0), ((-b + r) / (2.0 * c[3]), 0.0)]
    } else {
        let re = -b / (2.0 * c[3]);
        let im = (-disc).sqrt() / (2.0 * c[3]);
        vec![(re, -im), (re, im)]
    };
    Ok(CriticalLevel {
        s1,
        alpha_star: params.alpha(s1),
        sigma_star: params.sigma(s1),
        residual: eval_cubic(&c, s1).abs(),
        scale: c.iter().fold(0.0, |m, x| m.max(x.abs())),
        bracket,
        other_roots,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormLevel {
    pub a: f64,
    pub s1: f64,
    /// |closed form − numeric root| when a numeric root exists.
    pub consistency: Option<f64>,
}

/// The published closed-form estimate of s₁, using the real cube root.
/// Advisory only; compare against [`critical_s_numeric`].
pub fn critical_s_closed_form(params: &TrajectoryParams) -> Result<ClosedFormLevel> {
    params.validate()?;
    let (k, l) = (params.k, params.l);
    let radicand = 0.03 / (k.powi(4) * l * l) - 0.02 / (k.powi(5) * l * l) + 1.0 / k.powi(6);
    if radicand < 0.0 {
        return Err(Error::Value(format!("closed-form radicand is negative ({radicand})")));
    }
    let a = radicand.sqrt() - 0.12 / (k * k * l) + 0.12 / k.powi(3);
    if a == 0.0 {
        return Err(Error::DegenerateA);
    }
    let cbrt = a.cbrt();
    let s1 = 1.23 * (cbrt + 1.0 / (k * k * cbrt)) - 0.1 / (k * params.delta_norm);
    let consistency = critical_s_numeric(params).ok().map(|n| (s1 - n.s1).abs());
    Ok(ClosedFormLevel { a, s1, consistency })
}

/// Which Lyapunov form a stability profile uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileTask {
    Calculation,
    /// Per-replicate thresholds of the output gene(s).
    Classification { thresholds: BTreeMap<GeneId, Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeStability {
    pub code: u32,
    pub sum_sq_delta: f64,
    pub delta_norm: f64,
    pub v0: f64,
    pub s1: Option<f64>,
    pub alpha_star: Option<f64>,
    pub sigma_star: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityProfile {
    pub gene: GeneId,
    pub criticality: f64,
    pub per_code: Vec<CodeStability>,
    /// Code with the smallest s₁.
    pub bound: Option<CodeStability>,
}

/// Per-code critical levels for perturbations at `gene`.
///
/// Neighbourhood = `gene` and its direct successors in the sub-network.
/// Deviations are evaluated at the trajectory start with a unit noise draw,
/// and each code's critical cubic uses that code's `sqrt(Σ‖Δ‖²)` as the
/// deviation norm. Codes with no deviation report no critical level.
#[allow(clippy::too_many_arguments)]
pub fn stability_profile(
    sub: &SubGrnn,
    ds: &ExpressionDataset,
    net: &RegulatoryNetwork,
    gene: &GeneId,
    criticality: f64,
    params: &TrajectoryParams,
    task: &ProfileTask,
    codes: &[u32],
    d_max: usize,
) -> Result<StabilityProfile> {
    params.validate()?;
    check_alpha(params.alpha0)?;
    let sub_net = sub.network();
    let p = sub_net.node_index(gene).ok_or_else(|| Error::UnknownGene(gene.to_string()))?;
    let mut hood = vec![gene.clone()];
    for &e in sub_net.out_edges(p) {
        let (_, q) = sub_net.edge_endpoints(e);
        if q != p {
            hood.push(sub_net.nodes()[q].clone());
        }
    }
    hood.sort();
    hood.dedup();
    let sub_genes: Vec<GeneId> = sub.all_genes().cloned().collect();
    let rows: BTreeMap<GeneId, Vec<f64>> = hood
        .iter()
        .map(|q| {
            let row = propagation_row(net, q, d_max)?;
            Ok((q.clone(), sub_genes.iter().map(|g| row.weight(g)).collect()))
        })
        .collect::<Result<_>>()?;
    let source_row = propagation_row(net, gene, d_max)?;
    let time = sub.timepoint;
    let (a0, s0) = (params.alpha0, params.sigma0);

    let per_code: Vec<CodeStability> = codes
        .par_iter()
        .map(|&code| {
            let (sum_sq, v0) = match task {
                ProfileTask::Calculation => {
                    let mut neighbors = Vec::with_capacity(hood.len());
                    for q in &hood {
                        let (lo, hi) = min_max_expression(ds, q, code)?;
                        let range = hi - lo;
                        let w_row = &rows[q];
                        let base = delta_x(a0, s0 * s0, (lo, hi), 1.0, w_row);
                        let norm = base.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let weight = weight_factor_calc(norm, norm, params.zeta);
                        let delta = w_row.iter().map(|w| range * w / (1.0 + (range * w).abs())).collect();
                        neighbors.push(CalcNeighbor { weight, delta });
                    }
                    let sum: f64 = neighbors.iter().map(CalcNeighbor::norm_sq).sum();
                    (sum, lyapunov_calc(criticality, &neighbors, a0, s0, params.epsilon_tol)?)
                }
                ProfileTask::Classification { thresholds } => {
                    let (lo, hi) = min_max_expression(ds, gene, code)?;
                    let push = a0 * (hi - lo) * s0 * s0;
                    let mut neighbors = Vec::with_capacity(hood.len());
                    for q in &hood {
                        let x_start = mean_over_replicates(ds, q, code, time)?;
                        let theta = match thresholds.get(q) {
                            Some(t) if !t.is_empty() => t.iter().sum::<f64>() / t.len() as f64,
                            _ => mean_over_codes(ds, q, time)?,
                        };
                        let terms = classification_terms(x_start, x_start + push * source_row.weight(q), theta);
                        neighbors.push(ClassNeighbor { weight: 1.0, beta: terms.beta, r: terms.r });
                    }
                    let sum = if s0 == 0.0 {
                        0.0
                    } else {
                        neighbors.iter().map(|n| (n.weight * (n.beta + n.r)).powi(2)).sum::<f64>() / (a0 * s0 * s0)
                    };
                    (sum, lyapunov_class(criticality, &neighbors, a0, s0)?)
                }
            };
            let delta_norm = sum_sq.sqrt();
            let crit = if sum_sq > 0.0 {
                match critical_s_numeric(&TrajectoryParams { delta_norm, ..*params }) {
                    Ok(c) => Some(c),
                    Err(Error::NoPositiveRoot) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            Ok(CodeStability {
                code,
                sum_sq_delta: sum_sq,
                delta_norm,
                v0,
                s1: crit.as_ref().map(|c| c.s1),
                alpha_star: crit.as_ref().map(|c| c.alpha_star),
                sigma_star: crit.as_ref().map(|c| c.sigma_star),
            })
        })
        .collect::<Result<_>>()?;
    let bound = per_code
        .iter()
        .filter(|c| c.s1.is_some())
        .min_by(|a, b| a.s1.unwrap().total_cmp(&b.s1.unwrap()).then(a.code.cmp(&b.code)))
        .cloned();
    Ok(StabilityProfile { gene: gene.clone(), criticality, per_code, bound })
}

fn mean_over_replicates(ds: &ExpressionDataset, g: &GeneId, code: u32, time: u32) -> Result<f64> {
    let vals = ds
        .replicates()
        .iter()
        .map(|&r| ds.expression_at(g, code, time, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

fn mean_over_codes(ds: &ExpressionDataset, g: &GeneId, time: u32) -> Result<f64> {
    let vals = ds
        .codes()
        .iter()
        .map(|&c| mean_over_replicates(ds, g, c, time))
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

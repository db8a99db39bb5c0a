//! Variance and curvature experiments, closed-form predictions and bounds.

use rayon::prelude::*;
use serde::Serialize;

use crate::correlators::{evaluate, ParamVector, ZEngine};
use crate::datasets::{for_each_combination, TargetStats};
use crate::error::{check_dim, Error, Result};
use crate::init::{InitStrategy, InitVariant, PatchSampler};
use crate::mmd::{
    curvature, curvature_identity_closed, curvature_marginal_closed, curvature_unbiased_closed,
    loss, CurvatureReport, LossEngine, MmdConfig,
};
use crate::rng;
use crate::stats::SampleMoments;
use crate::topology::{light_cone, GeneratorIndex, InteractionGraph, QubitSubset};

/// `Var_θ[z_A] = 2^{-d_A}` under full-angle draws.
pub fn var_correlator_predicted(g: &InteractionGraph, a: &QubitSubset) -> Result<f64> {
    Ok((-(light_cone(g, a)? as f64)).exp2())
}

/// Correlator values `z_{A_i}(θ_d)` for each draw `d` from `sampler`.
///
/// Draw `d` uses the parameter stream `(seed, d)`; Monte-Carlo correlators
/// use an independent stream per (draw, subset).
pub fn sample_correlators(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    sampler: &PatchSampler,
    subsets: &[QubitSubset],
    draws: usize,
    seed: u64,
    engine: &ZEngine,
) -> Result<Vec<Vec<f64>>> {
    idx.check(g)?;
    for a in subsets {
        check_dim(g.n(), a.n())?;
    }
    (0..draws as u64)
        .into_par_iter()
        .map(|d| {
            let th = sampler.sample(rng::derive_seed(seed, &[rng::TAG_DRAW, d]));
            subsets
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let zs = rng::derive_seed(seed, &[rng::TAG_Z, d, i as u64]);
                    Ok(evaluate(g, idx, &th, a, engine, zs, false)?.value)
                })
                .collect()
        })
        .collect()
}

/// Mean and variance of `z_A` over `draws` full-angle parameter draws.
pub fn var_correlator_empirical(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    a: &QubitSubset,
    draws: usize,
    seed: u64,
    engine: &ZEngine,
) -> Result<SampleMoments> {
    if draws < 2 {
        return Err(Error::Config("need at least 2 draws".into()));
    }
    let sampler = PatchSampler::new(&InitStrategy::full_angle(), g, idx, None)?;
    let z = sample_correlators(
        g,
        idx,
        &sampler,
        std::slice::from_ref(a),
        draws,
        seed,
        engine,
    )?;
    let v: Vec<f64> = z.into_iter().map(|r| r[0]).collect();
    Ok(SampleMoments::from_slice(&v))
}

/// Moments of the products `z_A z_B` and `z_A² z_B` under full-angle draws.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossTerms {
    pub zazb: SampleMoments,
    pub za2zb: SampleMoments,
}

pub fn cross_terms(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    a: &QubitSubset,
    b: &QubitSubset,
    draws: usize,
    seed: u64,
    engine: &ZEngine,
) -> Result<CrossTerms> {
    let sampler = PatchSampler::new(&InitStrategy::full_angle(), g, idx, None)?;
    let z = sample_correlators(
        g,
        idx,
        &sampler,
        &[a.clone(), b.clone()],
        draws,
        seed,
        engine,
    )?;
    let ab: Vec<f64> = z.iter().map(|r| r[0] * r[1]).collect();
    let a2b: Vec<f64> = z.iter().map(|r| r[0] * r[0] * r[1]).collect();
    Ok(CrossTerms {
        zazb: SampleMoments::from_slice(&ab),
        za2zb: SampleMoments::from_slice(&a2b),
    })
}

/// `Var[L] <= 5 / 2^n` for full-angle draws.
pub fn mmd_concentration_bound(n: usize) -> f64 {
    5.0 * (-(n as f64)).exp2()
}

/// Partial lower bound `Σ_{1<=|A|<=k_max} 4 w_A² t_A² 2^{-d}` on `Var[L]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopologyFloor {
    pub k_max: usize,
    /// Maximum degree `K` of the graph.
    pub degree: usize,
    /// With `d = min(n, (K+1)|A|)`.
    pub floor: f64,
    /// With the exact light cone `d = d_A` (never smaller than `floor`).
    pub floor_light_cone: f64,
}

pub fn restricted_topology_floor(
    g: &InteractionGraph,
    target: &TargetStats,
    cfg: &MmdConfig,
    k_max: usize,
) -> Result<TopologyFloor> {
    check_dim(g.n(), target.n())?;
    check_dim(g.n(), cfg.n())?;
    let n = g.n();
    let degree = (0..n).map(|q| g.degree(q)).max().unwrap_or(0);
    let mut floor = Vec::new();
    let mut floor_lc = Vec::new();
    for k in 1..=k_max.min(n) {
        let w = cfg.weight(k);
        let d_reg = n.min((degree + 1) * k) as f64;
        let mut err = Ok(());
        for_each_combination(n, k, |c| {
            if err.is_err() {
                return;
            }
            let a = QubitSubset::from_indices(n, c.iter().copied()).expect("in range");
            match (target.t_of_uncached(&a), light_cone(g, &a)) {
                (Ok(t), Ok(d)) => {
                    let base = 4.0 * w * w * t * t;
                    floor.push(base * (-d_reg).exp2());
                    floor_lc.push(base * (-(d as f64)).exp2());
                }
                (Err(e), _) | (_, Err(e)) => err = Err(e),
            }
        });
        err?;
    }
    Ok(TopologyFloor {
        k_max,
        degree,
        floor: crate::stats::pairwise_sum(&floor),
        floor_light_cone: crate::stats::pairwise_sum(&floor_lc),
    })
}

/// `c = -2 ln(sinc 2)` with `sinc x = sin x / x`.
pub fn identity_patch_constant() -> f64 {
    -2.0 * (2f64.sin() / 2.0).ln()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// `(16 r⁴ m_A / 45) e^{-c m_A r²}`, valid for `r ∈ [0, 1]`.
pub fn identity_patch_floor(m_a: usize, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!(
            "identity patch floor needs r in [0, 1], got {r}"
        )));
    }
    if m_a == 0 {
        return Err(Error::Domain("identity patch floor needs m_A >= 1".into()));
    }
    let m = m_a as f64;
    Ok(16.0 * r.powi(4) * m / 45.0 * (-identity_patch_constant() * m * r * r).exp())
}

/// Exact `Var[z_A]` for `θ ~ Unif[-r, r]^m` around the identity:
/// `((1 + sinc 4r)/2)^{m_A} - sinc(2r)^{2 m_A}`.
pub fn identity_patch_variance(m_a: usize, r: f64) -> f64 {
    let m = m_a as i32;
    ((1.0 + sinc(4.0 * r)) / 2.0).powi(m) - sinc(2.0 * r).powi(2 * m)
}

/// Constants and admissible radius of the curvature-based patch bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatchBound {
    Guarantee {
        a: f64,
        gamma: f64,
        beta1: f64,
        beta2: f64,
        delta: f64,
        c_alpha: f64,
        r_max: f64,
    },
    NoGuarantee {
        reason: String,
    },
}

impl PatchBound {
    /// `(1 - Δ) r⁴ c_α² / 45` for `r <= r_max`; `None` outside the admissible range.
    pub fn floor(&self, r: f64) -> Option<f64> {
        match *self {
            PatchBound::Guarantee {
                delta,
                c_alpha,
                r_max,
                ..
            } if (0.0..=r_max).contains(&r) => {
                Some((1.0 - delta) * r.powi(4) / 45.0 * c_alpha * c_alpha)
            }
            _ => None,
        }
    }

    pub fn r_max(&self) -> Option<f64> {
        match *self {
            PatchBound::Guarantee { r_max, .. } => Some(r_max),
            PatchBound::NoGuarantee { .. } => None,
        }
    }
}

/// `a = 4p(1-p)`, `γ = 4`, `β₁ = 192(m-1)p²(1-p)²`, `β₂ = a²γ⁶/6`;
/// `r_max = min(sqrt(Δ c² / (2β₁c + β₂)), 3/(2γ))`.
pub fn curvature_patch_bound(
    cfg: &MmdConfig,
    m: usize,
    c_alpha: f64,
    delta: f64,
) -> Result<PatchBound> {
    if !(delta > 0.0 && delta <= 0.375) {
        return Err(Error::Domain(format!(
            "Δ must lie in (0, 3/8], got {delta}"
        )));
    }
    if m == 0 {
        return Err(Error::Domain("m must be positive".into()));
    }
    if !(c_alpha > 0.0) {
        return Ok(PatchBound::NoGuarantee {
            reason: format!("curvature c_α = {c_alpha} is not positive"),
        });
    }
    let p = cfg.p_sigma();
    let gamma: f64 = 4.0;
    let a = 4.0 * p * (1.0 - p);
    let beta1 = 192.0 * (m as f64 - 1.0) * p * p * (1.0 - p) * (1.0 - p);
    let beta2 = a * a * gamma.powi(6) / 6.0;
    let r_max = (delta * c_alpha * c_alpha / (2.0 * beta1 * c_alpha + beta2))
        .sqrt()
        .min(3.0 / (2.0 * gamma));
    Ok(PatchBound::Guarantee {
        a,
        gamma,
        beta1,
        beta2,
        delta,
        c_alpha,
        r_max,
    })
}

/// One row of a variance-vs-scale scan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleRow {
    pub scale: f64,
    pub draws: usize,
    pub mean: f64,
    pub var: f64,
    /// Distribution-free `sqrt((m4 - v²)/N)`.
    pub se: f64,
    /// Normal-theory `v sqrt(2/(N-1))`.
    pub se_normal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceScan {
    pub strategy: InitVariant,
    pub n: usize,
    pub engine: LossEngine,
    pub seed: u64,
    pub rows: Vec<ScaleRow>,
    pub argmax_scale: f64,
    pub max_var: f64,
}

impl VarianceScan {
    /// `strategy,n,scale,draws,var,se`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,n,scale,draws,var,se\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:e},{},{:e},{:e}\n",
                self.strategy, self.n, r.scale, r.draws, r.var, r.se
            ));
        }
        s
    }
}

/// Loss values `L(θ_d)` for `draws` patch draws.
///
/// Draw `d` uses the parameter stream `(seed, d)` and, for stochastic
/// engines, the estimator seed `(seed, d)` under a separate tag.
pub fn sample_losses(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    sampler: &PatchSampler,
    target: &TargetStats,
    cfg: &MmdConfig,
    draws: usize,
    engine: &LossEngine,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..draws as u64)
        .into_par_iter()
        .map(|d| {
            let th = sampler.sample(rng::derive_seed(seed, &[rng::TAG_DRAW, d]));
            let es = rng::derive_seed(seed, &[rng::TAG_EVAL, d]);
            Ok(loss(g, idx, &th, target, cfg, engine, es)?.value)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn variance_scan(
    variant: InitVariant,
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    target: &TargetStats,
    cfg: &MmdConfig,
    scales: &[f64],
    draws_per_scale: usize,
    engine: &LossEngine,
    seed: u64,
) -> Result<VarianceScan> {
    if draws_per_scale < 2 {
        return Err(Error::Config("need at least 2 draws per scale".into()));
    }
    if scales.is_empty() {
        return Err(Error::Config("empty scale grid".into()));
    }
    let mut rows = Vec::with_capacity(scales.len());
    for (i, &s) in scales.iter().enumerate() {
        let strategy = InitStrategy::new(variant, s)?;
        let sampler = PatchSampler::new(&strategy, g, idx, Some(target))?;
        let sub = rng::derive_seed(seed, &[i as u64]);
        let v = sample_losses(g, idx, &sampler, target, cfg, draws_per_scale, engine, sub)?;
        let m = SampleMoments::from_slice(&v);
        rows.push(ScaleRow {
            scale: strategy.scale,
            draws: draws_per_scale,
            mean: m.mean,
            var: m.variance,
            se: m.se_variance,
            se_normal: m.se_variance_normal,
        });
    }
    let best = rows
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.var > rows[b].var { i } else { b });
    Ok(VarianceScan {
        strategy: variant,
        n: g.n(),
        engine: *engine,
        seed,
        argmax_scale: rows[best].scale,
        max_var: rows[best].var,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvatureSweep {
    pub center: InitVariant,
    pub reports: Vec<CurvatureReport>,
    /// Index into `reports` of the largest `|total|`.
    pub argmax: usize,
    /// Closed-form totals at this center, when one exists.
    pub closed_form: Option<Vec<f64>>,
    pub max_closed_form_deviation: Option<f64>,
}

impl CurvatureSweep {
    /// `alpha,total,mismatch,sensitivity`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,total,mismatch,sensitivity\n");
        for r in &self.reports {
            s.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                r.alpha, r.total, r.mismatch, r.sensitivity
            ));
        }
        s
    }
}

/// Generic curvature for every single-qubit parameter at a strategy's center.
pub fn curvature_report_sweep(
    variant: InitVariant,
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    target: &TargetStats,
    cfg: &MmdConfig,
) -> Result<CurvatureSweep> {
    let strategy = InitStrategy::new(variant, 0.0)?;
    let th: ParamVector = crate::init::center(&strategy, g, idx, Some(target))?;
    let n = g.n();
    let reports: Vec<CurvatureReport> = (0..n)
        .map(|a| curvature(g, idx, &th, target, cfg, a))
        .collect::<Result<_>>()?;
    let closed: Option<Vec<f64>> = match variant {
        InitVariant::Identity | InitVariant::FullAngle => Some(
            (0..n)
                .map(|a| Ok(curvature_identity_closed(target, cfg, a, None)?.total))
                .collect::<Result<_>>()?,
        ),
        InitVariant::Unbiased => Some(
            (0..n)
                .map(|a| curvature_unbiased_closed(cfg, a).total)
                .collect(),
        ),
        InitVariant::MarginalMatch | InitVariant::Covariance => Some(
            (0..n)
                .map(|a| Ok(curvature_marginal_closed(target, cfg, a, None)?.total))
                .collect::<Result<_>>()?,
        ),
    };
    let dev = closed.as_ref().map(|c| {
        c.iter()
            .zip(&reports)
            .map(|(x, r)| (x - r.total).abs())
            .fold(0.0, f64::max)
    });
    let argmax = reports.iter().enumerate().fold(0, |b, (i, r)| {
        if r.total.abs() > reports[b].total.abs() {
            i
        } else {
            b
        }
    });
    Ok(CurvatureSweep {
        center: variant,
        reports,
        argmax,
        closed_form: closed,
        max_closed_form_deviation: dev,
    })
}

/// A prediction or bound compared against an empirical value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub predicted: f64,
    pub empirical: f64,
    pub se: f64,
    pub rule: String,
    pub verdict: bool,
}

impl BoundReport {
    /// `|empirical - predicted| <= k·se`.
    pub fn within(
        name: impl Into<String>,
        predicted: f64,
        empirical: f64,
        se: f64,
        k: f64,
    ) -> Self {
        Self {
            name: name.into(),
            predicted,
            empirical,
            se,
            rule: format!("|empirical - predicted| <= {k}·se"),
            verdict: (empirical - predicted).abs() <= k * se,
        }
    }

    /// `empirical <= bound + k·se`.
    pub fn below(name: impl Into<String>, bound: f64, empirical: f64, se: f64, k: f64) -> Self {
        Self {
            name: name.into(),
            predicted: bound,
            empirical,
            se,
            rule: format!("empirical <= bound + {k}·se"),
            verdict: empirical <= bound + k * se,
        }
    }

    /// `empirical >= floor - k·se`.
    pub fn above(name: impl Into<String>, floor: f64, empirical: f64, se: f64, k: f64) -> Self {
        Self {
            name: name.into(),
            predicted: floor,
            empirical,
            se,
            rule: format!("empirical >= floor - {k}·se"),
            verdict: empirical >= floor - k * se,
        }
    }
}

/// Number of generators anti-commuting with `Z_A` for `|A| = k` on the all-to-all graph.
pub fn all_to_all_m_a(n: usize, k: usize) -> usize {
    k * (n + 1 - k)
}

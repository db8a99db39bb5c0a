//! MMD loss with a Gaussian kernel on bit strings.
//!
//! `L(θ) = Σ_A w_A (z_A - t_A)^2` with `w_A = (1-p)^{n-|A|} p^{|A|}` and
//! `p = (1 - e^{-1/(2σ²)}) / 2`. The same value is `d·K·d` with `d = p_model -
//! p_target` and a kernel that factorizes per bit (1 for equal bits, `1 - 2p`
//! otherwise).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlators::{evaluate_anti, ParamVector, ZEngine};
use crate::datasets::{Half, TargetStats};
use crate::error::{check_dim, Error, Result};
use crate::oracle::{build_state, DistributionTable, StateVector};
use crate::rng;
use crate::stats::pairwise_sum;
use crate::topology::{AntiSet, GeneratorIndex, GeneratorLabel, InteractionGraph, QubitSubset};

/// Largest `n` for which the `2^n` subset sum is attempted.
pub const EXACT_SUBSET_LIMIT: usize = 14;

/// Kernel bandwidth and register size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdConfig {
    sigma: f64,
    n: usize,
}

impl MmdConfig {
    pub fn new(sigma: f64, n: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {sigma}"
            )));
        }
        if n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        Ok(Self { sigma, n })
    }

    /// `σ = √n`.
    pub fn low_body(n: usize) -> Result<Self> {
        Self::new((n as f64).sqrt(), n)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p_sigma(&self) -> f64 {
        -(-1.0 / (2.0 * self.sigma * self.sigma)).exp_m1() / 2.0
    }

    /// `w_A` for `|A| = k`.
    pub fn weight(&self, k: usize) -> f64 {
        let p = self.p_sigma();
        if k > self.n {
            return 0.0;
        }
        (1.0 - p).powi((self.n - k) as i32) * p.powi(k as i32)
    }

    /// Kernel value between bit strings differing in one position.
    pub fn kernel_factor(&self) -> f64 {
        (-1.0 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

pub fn weight(cfg: &MmdConfig, k: usize) -> f64 {
    cfg.weight(k)
}

/// A loss value with its standard error and an optional per-order breakdown.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_subsets: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<Vec<f64>>,
}

impl LossEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_subsets: 0,
            breakdown: None,
        }
    }
}

/// JSON record of one loss, gradient or curvature evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
    pub sigma: f64,
    pub p_sigma: f64,
    pub seed: u64,
}

impl LossReport {
    pub fn new(est: &LossEstimate, cfg: &MmdConfig, seed: u64) -> Self {
        Self {
            value: est.value,
            std_error: est.std_error,
            n: cfg.n(),
            sigma: cfg.sigma(),
            p_sigma: cfg.p_sigma(),
            seed,
        }
    }
}

/// How the loss is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossEngine {
    /// All `2^n` subsets with exact correlators.
    ExactSubsets,
    /// Statevector and kernel form against the target table.
    ExactKernel,
    /// Bernoulli(p_σ) subset sampling with two independent replicas per subset.
    Stochastic { subsets: u64, z: ZEngine },
}

impl LossEngine {
    pub fn is_exact(&self) -> bool {
        !matches!(self, LossEngine::Stochastic { .. })
    }
}

fn check_problem(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
) -> Result<()> {
    idx.check(g)?;
    check_dim(idx.m(), theta.len())?;
    check_dim(g.n(), target.n())?;
    check_dim(g.n(), cfg.n())
}

fn pairs_zero(idx: &GeneratorIndex, theta: &ParamVector) -> bool {
    theta.as_slice()[idx.n()..].iter().all(|&t| t == 0.0)
}

/// Exact `z_A` and (optionally) its sparse gradient for subset sums.
fn z_with_grad(
    g: &InteractionGraph,
    theta: &ParamVector,
    a: &QubitSubset,
    want_gradient: bool,
) -> Result<(f64, Option<(Vec<usize>, Vec<f64>)>)> {
    let anti = AntiSet::new(g, a)?;
    let ev = evaluate_anti(
        g.n(),
        theta,
        a,
        &anti,
        &ZEngine::LightCone,
        0,
        want_gradient,
    )?;
    Ok((ev.value, ev.gradient.map(|s| (s.positions, s.values))))
}

fn check_subset_capacity(n: usize) -> Result<()> {
    if n > EXACT_SUBSET_LIMIT {
        return Err(Error::Capacity {
            what: "exact subset-sum loss",
            n,
            limit: EXACT_SUBSET_LIMIT,
        });
    }
    Ok(())
}

/// `Σ_A w_A (z_A - t_A)^2` over every subset.
pub fn loss_exact_subsets(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
) -> Result<f64> {
    Ok(loss_exact_subsets_detailed(g, idx, theta, target, cfg, None)?.value)
}

/// Subset-sum loss restricted to `|A| <= max_order`, with a per-order breakdown.
pub fn loss_exact_subsets_detailed(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
    max_order: Option<usize>,
) -> Result<LossEstimate> {
    check_problem(g, idx, theta, target, cfg)?;
    let n = g.n();
    check_subset_capacity(n)?;
    let kmax = max_order.unwrap_or(n);
    let product = pairs_zero(idx, theta);
    let terms: Vec<(usize, f64)> = (1u64..1 << n)
        .into_par_iter()
        .map(|mask| -> Result<(usize, f64)> {
            let k = mask.count_ones() as usize;
            if k > kmax {
                return Ok((k, 0.0));
            }
            let a = QubitSubset::from_mask(n, mask);
            let z = if product {
                a.iter().map(|j| (2.0 * theta[j]).cos()).product()
            } else {
                z_with_grad(g, theta, &a, false)?.0
            };
            let d = z - target.t_of_uncached(&a)?;
            Ok((k, cfg.weight(k) * d * d))
        })
        .collect::<Result<_>>()?;
    let mut by_order = vec![Vec::new(); n + 1];
    for (k, v) in terms {
        by_order[k].push(v);
    }
    let breakdown: Vec<f64> = by_order.iter().map(|v| pairwise_sum(v)).collect();
    Ok(LossEstimate {
        value: pairwise_sum(&breakdown),
        std_error: 0.0,
        n_subsets: 0,
        breakdown: Some(breakdown),
    })
}

/// Applies the bit-factorized kernel in place: `v ← K v`.
fn apply_kernel(v: &mut [f64], n: usize, c: f64) {
    for j in 0..n {
        let h = 1usize << j;
        for base in (0..v.len()).step_by(2 * h) {
            for x in base..base + h {
                let (a, b) = (v[x], v[x + h]);
                v[x] = a + c * b;
                v[x + h] = c * a + b;
            }
        }
    }
}

/// `Σ_{x,y} (p(x) - q(x)) k(x, y) (p(y) - q(y))`.
pub fn loss_exact_kernel(
    p_model: &DistributionTable,
    p_target: &DistributionTable,
    cfg: &MmdConfig,
) -> Result<f64> {
    check_dim(p_model.n(), p_target.n())?;
    check_dim(cfg.n(), p_model.n())?;
    let d: Vec<f64> = p_model
        .probs()
        .iter()
        .zip(p_target.probs())
        .map(|(a, b)| a - b)
        .collect();
    let mut kd = d.clone();
    apply_kernel(&mut kd, cfg.n(), cfg.kernel_factor());
    let terms: Vec<f64> = d.iter().zip(&kd).map(|(a, b)| a * b).collect();
    Ok(pairwise_sum(&terms))
}

/// Draws `A` with each qubit included independently with probability `p`.
pub fn sample_subset<R: Rng>(n: usize, p: f64, r: &mut R) -> QubitSubset {
    let mut a = QubitSubset::empty(n);
    if p <= 0.0 {
        return a;
    }
    if p >= 1.0 {
        return QubitSubset::full(n);
    }
    let log_q = (-p).ln_1p();
    let mut pos = 0usize;
    loop {
        let u: f64 = 1.0 - r.gen::<f64>();
        let skip = (u.ln() / log_q).floor();
        if skip >= (n - pos) as f64 {
            return a;
        }
        pos += skip as usize;
        a.insert(pos);
        pos += 1;
        if pos >= n {
            return a;
        }
    }
}

/// Estimated `(z - t)` factors of one sampled subset, from two independent replicas.
struct SubsetTerm {
    value: f64,
    grad: Option<Vec<(usize, f64)>>,
}

#[allow(clippy::too_many_arguments)]
fn stochastic_term(
    g: &InteractionGraph,
    theta: &ParamVector,
    target: &TargetStats,
    p: f64,
    z_engine: &ZEngine,
    seed: u64,
    k: u64,
    want_gradient: bool,
) -> Result<SubsetTerm> {
    let n = g.n();
    let mut r = rng::stream(seed, &[rng::TAG_SUBSET, k]);
    let a = sample_subset(n, p, &mut r);
    if a.is_empty() {
        return Ok(SubsetTerm {
            value: 0.0,
            grad: want_gradient.then(Vec::new),
        });
    }
    let anti = AntiSet::new(g, &a)?;
    let seed1 = rng::derive_seed(seed, &[rng::TAG_Z, k, 0]);
    let seed2 = rng::derive_seed(seed, &[rng::TAG_Z, k, 1]);
    let e1 = evaluate_anti(n, theta, &a, &anti, z_engine, seed1, want_gradient)?;
    let e2 = if z_engine.is_exact() {
        e1.clone()
    } else {
        evaluate_anti(n, theta, &a, &anti, z_engine, seed2, want_gradient)?
    };
    let r1 = e1.value - target.t_of_half(&a, Half::A)?;
    let r2 = e2.value - target.t_of_half(&a, Half::B)?;
    let grad = want_gradient.then(|| {
        let g1 = e1.gradient.as_ref().expect("gradient");
        let g2 = e2.gradient.as_ref().expect("gradient");
        g1.positions
            .iter()
            .zip(g1.values.iter().zip(&g2.values))
            .map(|(&pos, (a1, a2))| (pos, a1 * r2 + a2 * r1))
            .collect()
    });
    Ok(SubsetTerm {
        value: r1 * r2,
        grad,
    })
}

fn check_stochastic(target: &TargetStats, subsets: u64) -> Result<()> {
    if subsets == 0 {
        return Err(Error::Config(
            "stochastic loss needs at least one subset".into(),
        ));
    }
    if let Some(d) = target.dataset() {
        if d.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
    }
    Ok(())
}

/// Subset-sampling estimate of the loss.
///
/// Each sampled subset contributes `(ẑ₁ - t̂₁)(ẑ₂ - t̂₂)`, where the two factors
/// use independent z-batches and the two disjoint halves of an empirical
/// target. The result is unbiased and may be slightly negative.
#[allow(clippy::too_many_arguments)]
pub fn loss_mc(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
    subsets: u64,
    z_engine: &ZEngine,
    seed: u64,
) -> Result<LossEstimate> {
    Ok(stochastic(g, idx, theta, target, cfg, subsets, z_engine, seed, false)?.0)
}

const SUBSET_CHUNK: u64 = 64;

#[allow(clippy::too_many_arguments)]
fn stochastic(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
    subsets: u64,
    z_engine: &ZEngine,
    seed: u64,
    want_gradient: bool,
) -> Result<(LossEstimate, Option<GradientEstimate>)> {
    check_problem(g, idx, theta, target, cfg)?;
    check_stochastic(target, subsets)?;
    let p = cfg.p_sigma();
    let m = idx.m();
    let nchunks = subsets.div_ceil(SUBSET_CHUNK);
    let chunks: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..nchunks)
        .into_par_iter()
        .map(|c| -> Result<_> {
            let mut vals = Vec::new();
            let (mut gs, mut gq) = if want_gradient {
                (vec![0.0; m], vec![0.0; m])
            } else {
                (vec![], vec![])
            };
            for k in c * SUBSET_CHUNK..((c + 1) * SUBSET_CHUNK).min(subsets) {
                let t = stochastic_term(g, theta, target, p, z_engine, seed, k, want_gradient)?;
                vals.push(t.value);
                if let Some(gr) = t.grad {
                    for (pos, v) in gr {
                        gs[pos] += v;
                        gq[pos] += v * v;
                    }
                }
            }
            Ok((vals, gs, gq))
        })
        .collect::<Result<_>>()?;
    let mut vals = Vec::with_capacity(subsets as usize);
    let mut gsum = vec![0.0; if want_gradient { m } else { 0 }];
    let mut gsq = gsum.clone();
    for (v, gs, gq) in chunks {
        vals.extend(v);
        for i in 0..gs.len() {
            gsum[i] += gs[i];
            gsq[i] += gq[i];
        }
    }
    let nf = subsets as f64;
    let value = pairwise_sum(&vals) / nf;
    let se_of = |mean: f64, sum_sq: f64| {
        if subsets < 2 {
            0.0
        } else {
            (((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) / nf).sqrt()
        }
    };
    let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
    let loss = LossEstimate {
        value,
        std_error: se_of(value, pairwise_sum(&sq)),
        n_subsets: subsets,
        breakdown: None,
    };
    let grad = want_gradient.then(|| {
        let values: Vec<f64> = gsum.iter().map(|s| s / nf).collect();
        let std_errors = values
            .iter()
            .zip(&gsq)
            .map(|(&mu, &q)| se_of(mu, q))
            .collect();
        GradientEstimate { values, std_errors }
    });
    Ok((loss, grad))
}

/// Gradient of the loss with per-component standard errors (0 when exact).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientEstimate {
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl GradientEstimate {
    fn exact(values: Vec<f64>) -> Self {
        let std_errors = vec![0.0; values.len()];
        Self { values, std_errors }
    }
}

fn grad_exact_subsets(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
) -> Result<Vec<f64>> {
    let n = g.n();
    check_subset_capacity(n)?;
    let parts: Vec<Vec<(usize, f64)>> = (1u64..1 << n)
        .into_par_iter()
        .map(|mask| -> Result<Vec<(usize, f64)>> {
            let a = QubitSubset::from_mask(n, mask);
            let (z, gr) = z_with_grad(g, theta, &a, true)?;
            let f = 2.0 * cfg.weight(a.len()) * (z - target.t_of_uncached(&a)?);
            let (pos, vals) = gr.expect("gradient");
            Ok(pos.into_iter().zip(vals).map(|(p, v)| (p, f * v)).collect())
        })
        .collect::<Result<_>>()?;
    let mut per_param = vec![Vec::new(); idx.m()];
    for part in parts {
        for (p, v) in part {
            per_param[p].push(v);
        }
    }
    Ok(per_param.iter().map(|v| pairwise_sum(v)).collect())
}

/// Support of generator `pos` as a bit mask (for `X_b ψ(x) = ψ(x ⊕ b)`).
fn generator_mask(idx: &GeneratorIndex, pos: usize) -> usize {
    match idx.label(pos) {
        GeneratorLabel::Single(j) => 1 << j,
        GeneratorLabel::Pair(j, k) => (1 << j) | (1 << k),
    }
}

/// `∂L/∂θ_α = -4 Σ_x Im(ψ̄(x) ψ(x ⊕ b_α)) (K d)(x)`.
fn grad_exact_kernel(
    idx: &GeneratorIndex,
    state: &StateVector,
    p_target: &DistributionTable,
    cfg: &MmdConfig,
) -> Result<Vec<f64>> {
    check_dim(state.n(), p_target.n())?;
    let amps = state.amplitudes();
    let mut kd: Vec<f64> = amps
        .iter()
        .zip(p_target.probs())
        .map(|(a, q)| a.norm_sqr() - q)
        .collect();
    apply_kernel(&mut kd, cfg.n(), cfg.kernel_factor());
    Ok((0..idx.m())
        .into_par_iter()
        .map(|pos| {
            let b = generator_mask(idx, pos);
            let terms: Vec<f64> = (0..amps.len())
                .map(|x| (amps[x].conj() * amps[x ^ b]).im * kd[x])
                .collect();
            -4.0 * pairwise_sum(&terms)
        })
        .collect())
}

/// Loss gradient with the chosen engine; `seed` is read by the stochastic engine.
pub fn loss_gradient(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
    engine: &LossEngine,
    seed: u64,
) -> Result<GradientEstimate> {
    Ok(loss_and_gradient(g, idx, theta, target, cfg, engine, seed)?.1)
}

/// Loss evaluation with the chosen engine.
pub fn loss(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
    engine: &LossEngine,
    seed: u64,
) -> Result<LossEstimate> {
    match *engine {
        LossEngine::ExactSubsets => loss_exact_subsets_detailed(g, idx, theta, target, cfg, None),
        LossEngine::ExactKernel => {
            check_problem(g, idx, theta, target, cfg)?;
            let model = crate::oracle::model_distribution(&build_state(g, idx, theta)?);
            Ok(LossEstimate::exact(loss_exact_kernel(
                &model,
                &target.to_table()?,
                cfg,
            )?))
        }
        LossEngine::Stochastic { subsets, z } => {
            loss_mc(g, idx, theta, target, cfg, subsets, &z, seed)
        }
    }
}

/// Loss and gradient from one engine call (shared subsets for the stochastic engine).
pub fn loss_and_gradient(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
    engine: &LossEngine,
    seed: u64,
) -> Result<(LossEstimate, GradientEstimate)> {
    check_problem(g, idx, theta, target, cfg)?;
    match *engine {
        LossEngine::ExactSubsets => {
            let l = loss_exact_subsets_detailed(g, idx, theta, target, cfg, None)?;
            let gr = grad_exact_subsets(g, idx, theta, target, cfg)?;
            Ok((l, GradientEstimate::exact(gr)))
        }
        LossEngine::ExactKernel => {
            let state = build_state(g, idx, theta)?;
            let table = target.to_table()?;
            let model = crate::oracle::model_distribution(&state);
            let l = loss_exact_kernel(&model, &table, cfg)?;
            let gr = grad_exact_kernel(idx, &state, &table, cfg)?;
            Ok((LossEstimate::exact(l), GradientEstimate::exact(gr)))
        }
        LossEngine::Stochastic { subsets, z } => {
            let (l, gr) = stochastic(g, idx, theta, target, cfg, subsets, &z, seed, true)?;
            Ok((l, gr.expect("gradient requested")))
        }
    }
}

/// `∂²L/∂θ_α²` split into its data-mismatch and model-sensitivity parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvatureReport {
    pub alpha: usize,
    pub total: f64,
    pub mismatch: f64,
    pub sensitivity: f64,
}

/// `Σ_{A: α∈𝒜_A} 2 w_A [4 z_A (t_A - z_A) + (∂_α z_A)^2]` over all subsets.
pub fn curvature(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
    alpha: usize,
) -> Result<CurvatureReport> {
    curvature_with(g, idx, theta, target, cfg, alpha, None)
}

/// [`curvature`] restricted to subsets with `|A| <= max_order`.
pub fn curvature_with(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    target: &TargetStats,
    cfg: &MmdConfig,
    alpha: usize,
    max_order: Option<usize>,
) -> Result<CurvatureReport> {
    check_problem(g, idx, theta, target, cfg)?;
    let n = g.n();
    check_subset_capacity(n)?;
    if alpha >= idx.m() {
        return Err(Error::Config(format!(
            "parameter index {alpha} out of range (m = {})",
            idx.m()
        )));
    }
    let label = idx.label(alpha);
    let kmax = max_order.unwrap_or(n);
    let terms: Vec<(f64, f64)> = (1u64..1 << n)
        .into_par_iter()
        .map(|mask| -> Result<(f64, f64)> {
            let a = QubitSubset::from_mask(n, mask);
            if a.len() > kmax || !label.anticommutes_with(&a) {
                return Ok((0.0, 0.0));
            }
            let (z, gr) = z_with_grad(g, theta, &a, true)?;
            let (pos, vals) = gr.expect("gradient");
            let ga = pos
                .iter()
                .position(|&p| p == alpha)
                .map_or(0.0, |i| vals[i]);
            let w = cfg.weight(a.len());
            let t = target.t_of_uncached(&a)?;
            Ok((8.0 * w * z * (t - z), 2.0 * w * ga * ga))
        })
        .collect::<Result<_>>()?;
    let mm: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let ss: Vec<f64> = terms.iter().map(|t| t.1).collect();
    let mismatch = pairwise_sum(&mm);
    let sensitivity = pairwise_sum(&ss);
    Ok(CurvatureReport {
        alpha,
        total: mismatch + sensitivity,
        mismatch,
        sensitivity,
    })
}

/// Calls `f(A)` for every `A ∋ α` with `|A| <= kmax`, enumerated over the other qubits.
fn for_each_superset(
    n: usize,
    alpha: usize,
    kmax: usize,
    mut f: impl FnMut(&QubitSubset) -> Result<()>,
) -> Result<()> {
    if n - 1 > 62 && kmax >= n {
        return Err(Error::Capacity {
            what: "closed-form curvature enumeration",
            n,
            limit: 63,
        });
    }
    for k in 0..kmax.min(n) {
        let mut err = Ok(());
        crate::datasets::for_each_combination(n - 1, k, |c| {
            if err.is_err() {
                return;
            }
            let mut a = QubitSubset::singleton(n, alpha);
            for &i in c {
                a.insert(if i >= alpha { i + 1 } else { i });
            }
            err = f(&a);
        });
        err?;
    }
    Ok(())
}

fn check_single(cfg: &MmdConfig, target: &TargetStats, alpha: usize) -> Result<()> {
    check_dim(cfg.n(), target.n())?;
    if alpha >= cfg.n() {
        return Err(Error::Config(format!(
            "closed forms cover single-qubit generators; α = {alpha} >= n = {}",
            cfg.n()
        )));
    }
    Ok(())
}

/// Identity center: `-Σ_{A∋α, |A|<=kmax} 8 w_A (1 - t_A)`.
pub fn curvature_identity_closed(
    target: &TargetStats,
    cfg: &MmdConfig,
    alpha: usize,
    max_order: Option<usize>,
) -> Result<CurvatureReport> {
    check_single(cfg, target, alpha)?;
    let mut terms = Vec::new();
    for_each_superset(cfg.n(), alpha, max_order.unwrap_or(cfg.n()), |a| {
        terms.push(-8.0 * cfg.weight(a.len()) * (1.0 - target.t_of_uncached(a)?));
        Ok(())
    })?;
    let total = pairwise_sum(&terms);
    Ok(CurvatureReport {
        alpha,
        total,
        mismatch: total,
        sensitivity: 0.0,
    })
}

/// Unbiased center: `8 w_{α}`.
pub fn curvature_unbiased_closed(cfg: &MmdConfig, alpha: usize) -> CurvatureReport {
    let total = 8.0 * cfg.weight(1);
    CurvatureReport {
        alpha,
        total,
        mismatch: 0.0,
        sensitivity: total,
    }
}

/// Marginal-matched center: `Σ_{A∋α} 8 w_A (M_A + S_A)` with
/// `M_A = (t_A - Π t_j) Π t_j` and `S_A = (1 - t_α²) Π_{j≠α} t_j²`.
pub fn curvature_marginal_closed(
    target: &TargetStats,
    cfg: &MmdConfig,
    alpha: usize,
    max_order: Option<usize>,
) -> Result<CurvatureReport> {
    check_single(cfg, target, alpha)?;
    let t = target.marginals();
    let mut mm = Vec::new();
    let mut ss = Vec::new();
    for_each_superset(cfg.n(), alpha, max_order.unwrap_or(cfg.n()), |a| {
        let w = 8.0 * cfg.weight(a.len());
        let prod: f64 = a.iter().map(|j| t[j]).product();
        let rest: f64 = a
            .iter()
            .filter(|&j| j != alpha)
            .map(|j| t[j] * t[j])
            .product();
        mm.push(w * (target.t_of_uncached(a)? - prod) * prod);
        ss.push(w * (1.0 - t[alpha] * t[alpha]) * rest);
        Ok(())
    })?;
    let mismatch = pairwise_sum(&mm);
    let sensitivity = pairwise_sum(&ss);
    Ok(CurvatureReport {
        alpha,
        total: mismatch + sensitivity,
        mismatch,
        sensitivity,
    })
}

/// Center used by the weight-2 truncated closed forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncatedCenter {
    Identity,
    Marginal,
}

/// Curvature of the loss truncated to `|A| <= 2`.
///
/// Identity: the magnitude `8p(1-p)^{n-1}(1-t_α) + 8p²(1-p)^{n-2} Σ_{j≠α}(1-t_αj)`
/// (the signed value is its negative). Marginal:
/// `8p(1-p)^{n-1}(1-t_α²) + 8p²(1-p)^{n-2} Σ_{j≠α}[(t_αj - t_α t_j) t_α t_j + (1-t_α²) t_j²]`.
pub fn curvature_truncated2(
    target: &TargetStats,
    cfg: &MmdConfig,
    alpha: usize,
    center: TruncatedCenter,
) -> Result<f64> {
    check_single(cfg, target, alpha)?;
    let n = cfg.n();
    let p = cfg.p_sigma();
    let w1 = 8.0 * p * (1.0 - p).powi(n as i32 - 1);
    let w2 = if n >= 2 {
        8.0 * p * p * (1.0 - p).powi(n as i32 - 2)
    } else {
        0.0
    };
    let t = target.marginals();
    let ta = t[alpha];
    let mut pair_terms = Vec::with_capacity(n.saturating_sub(1));
    for j in (0..n).filter(|&j| j != alpha) {
        let taj = target.t_of_uncached(&QubitSubset::from_indices(n, [alpha, j])?)?;
        if !taj.is_finite() {
            return Err(Error::Data(format!(
                "missing pair statistic t_{{{alpha},{j}}}"
            )));
        }
        pair_terms.push(match center {
            TruncatedCenter::Identity => 1.0 - taj,
            TruncatedCenter::Marginal => {
                (taj - ta * t[j]) * ta * t[j] + (1.0 - ta * ta) * t[j] * t[j]
            }
        });
    }
    let first = match center {
        TruncatedCenter::Identity => 1.0 - ta,
        TruncatedCenter::Marginal => 1.0 - ta * ta,
    };
    Ok(w1 * first + w2 * pairwise_sum(&pair_terms))
}

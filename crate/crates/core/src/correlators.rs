//! Model correlators `z_A(θ) = <Z_A>` and their parameter derivatives.
//!
//! Only the generators anti-commuting with `Z_A` enter the correlator:
//! `z_A = 2^-n Σ_z cos(2 Σ_{b∈𝒜_A} θ_b (-1)^{b·z})`. Four engines evaluate it:
//! full enumeration of `z`, the closed product form at zero pair angles,
//! Monte-Carlo over uniform `z`, and a light-cone sum over sign patterns on
//! `A` that is exact at any `n` and costs `O(2^|A| · |N_E(A)| · |A|)`.

use std::collections::BTreeMap;
use std::ops::Index;
use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;
use crate::stats::pairwise_sum;
use crate::topology::{AntiSet, GeneratorIndex, InteractionGraph, QubitSubset};

pub const DEFAULT_EXACT_LIMIT: usize = 22;
pub const LIGHT_CONE_LIMIT: usize = 26;

/// One angle per generator, in [`GeneratorIndex`] order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("parameter {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn for_index(idx: &GeneratorIndex, values: Vec<f64>) -> Result<Self> {
        check_dim(idx.m(), values.len())?;
        Self::new(values)
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// One angle per line.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.0.len() * 24);
        for v in &self.0 {
            s.push_str(&format!("{v:e}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut vals = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            vals.push(
                t.parse::<f64>()
                    .map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?,
            );
        }
        Self::new(vals)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Sample budget of a Monte-Carlo estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorBudget {
    pub n_samples: u64,
    pub seed: u64,
    pub chunk: u64,
}

impl EstimatorBudget {
    pub fn new(n_samples: u64, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            chunk: 4096,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.chunk == 0 {
            return Err(Error::Config(
                "estimator budget needs n_samples >= 1 and chunk >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A correlator value with its standard error (0 for exact engines).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorrelatorEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
}

impl CorrelatorEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_samples: 0,
        }
    }
}

/// Engine used to evaluate a correlator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZEngine {
    /// Sum over all `2^n` bit strings.
    Enumerate { limit: usize },
    /// Exact sum over sign patterns on `A` and its external neighborhood.
    LightCone,
    /// Uniform-`z` sampling; the seed is supplied per call.
    MonteCarlo { n_samples: u64, chunk: u64 },
}

impl ZEngine {
    pub fn exact() -> Self {
        ZEngine::Enumerate {
            limit: DEFAULT_EXACT_LIMIT,
        }
    }

    pub fn monte_carlo(n_samples: u64) -> Self {
        ZEngine::MonteCarlo {
            n_samples,
            chunk: 4096,
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, ZEngine::MonteCarlo { .. })
    }
}

/// Gradient restricted to the anti-commuting generators of `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGradient {
    pub positions: Vec<usize>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl SparseGradient {
    pub fn to_dense(&self, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; m];
        for (&p, &v) in self.positions.iter().zip(&self.values) {
            out[p] = v;
        }
        out
    }

    pub fn get(&self, pos: usize) -> f64 {
        self.positions
            .iter()
            .position(|&p| p == pos)
            .map_or(0.0, |i| self.values[i])
    }
}

/// Correlator value (and optionally its gradient) from one engine call.
#[derive(Clone, Debug, PartialEq)]
pub struct ZEvaluation {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub gradient: Option<SparseGradient>,
}

pub(crate) fn check_inputs(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    a: &QubitSubset,
) -> Result<()> {
    idx.check(g)?;
    check_dim(idx.m(), theta.len())?;
    check_dim(g.n(), a.n())
}

/// Evaluates `z_A` with the chosen engine. `seed` is only read by the
/// Monte-Carlo engine.
pub fn evaluate(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    a: &QubitSubset,
    engine: &ZEngine,
    seed: u64,
    want_gradient: bool,
) -> Result<ZEvaluation> {
    check_inputs(g, idx, theta, a)?;
    let anti = AntiSet::new(g, a)?;
    evaluate_anti(g.n(), theta, a, &anti, engine, seed, want_gradient)
}

pub(crate) fn evaluate_anti(
    n: usize,
    theta: &ParamVector,
    a: &QubitSubset,
    anti: &AntiSet,
    engine: &ZEngine,
    seed: u64,
    want_gradient: bool,
) -> Result<ZEvaluation> {
    if anti.is_empty() {
        return Ok(ZEvaluation {
            value: 1.0,
            std_error: 0.0,
            n_samples: 0,
            gradient: want_gradient.then(|| SparseGradient {
                positions: vec![],
                values: vec![],
                std_errors: vec![],
            }),
        });
    }
    match *engine {
        ZEngine::Enumerate { limit } => {
            if n > limit || n > 63 {
                return Err(Error::Capacity {
                    what: "exact correlator enumeration",
                    n,
                    limit: limit.min(63),
                });
            }
            let (value, grad) = enumerate(n, theta, anti, want_gradient);
            Ok(exact_eval(anti, value, grad))
        }
        ZEngine::LightCone => {
            let (value, grad) = light_cone_sum(theta, a, anti, want_gradient)?;
            Ok(exact_eval(anti, value, grad))
        }
        ZEngine::MonteCarlo { n_samples, chunk } => {
            let budget = EstimatorBudget {
                n_samples,
                seed,
                chunk,
            };
            budget.validate()?;
            Ok(monte_carlo(n, theta, anti, &budget, want_gradient))
        }
    }
}

fn exact_eval(anti: &AntiSet, value: f64, grad: Option<Vec<f64>>) -> ZEvaluation {
    ZEvaluation {
        value,
        std_error: 0.0,
        n_samples: 0,
        gradient: grad.map(|values| SparseGradient {
            positions: anti.positions.clone(),
            std_errors: vec![0.0; values.len()],
            values,
        }),
    }
}

#[inline]
fn bit(z: &[u64], q: usize) -> u64 {
    (z[q >> 6] >> (q & 63)) & 1
}

const ENUM_BLOCK_BITS: usize = 12;

fn enumerate(
    n: usize,
    theta: &ParamVector,
    anti: &AntiSet,
    want_gradient: bool,
) -> (f64, Option<Vec<f64>>) {
    let masks: Vec<u64> = anti
        .first
        .iter()
        .zip(&anti.second)
        .map(|(&f, &s)| (1u64 << f) | if s == usize::MAX { 0 } else { 1u64 << s })
        .collect();
    let angles: Vec<f64> = anti.positions.iter().map(|&p| theta[p]).collect();
    let total = 1u64 << n;
    let block = 1u64 << ENUM_BLOCK_BITS.min(n);
    let nblocks = total / block;
    let k = angles.len();
    let run = |b: u64| {
        let mut vals = Vec::with_capacity(block as usize);
        let mut grad = if want_gradient { vec![0.0; k] } else { vec![] };
        for z in b * block..(b + 1) * block {
            let mut phase = 0.0;
            for (m, t) in masks.iter().zip(&angles) {
                if (z & m).count_ones() & 1 == 0 {
                    phase += t;
                } else {
                    phase -= t;
                }
            }
            vals.push((2.0 * phase).cos());
            if want_gradient {
                let s = -2.0 * (2.0 * phase).sin();
                for (gb, m) in grad.iter_mut().zip(&masks) {
                    if (z & m).count_ones() & 1 == 0 {
                        *gb += s;
                    } else {
                        *gb -= s;
                    }
                }
            }
        }
        (pairwise_sum(&vals), grad)
    };
    let parts: Vec<(f64, Vec<f64>)> = if nblocks > 1 {
        (0..nblocks).into_par_iter().map(run).collect()
    } else {
        vec![run(0)]
    };
    let scale = 1.0 / total as f64;
    let sums: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let value = pairwise_sum(&sums) * scale;
    let grad = want_gradient.then(|| {
        let mut g = vec![0.0; k];
        for (_, pg) in &parts {
            for (a, b) in g.iter_mut().zip(pg) {
                *a += b;
            }
        }
        g.iter_mut().for_each(|x| *x *= scale);
        g
    });
    (value, grad)
}

fn monte_carlo(
    n: usize,
    theta: &ParamVector,
    anti: &AntiSet,
    budget: &EstimatorBudget,
    want_gradient: bool,
) -> ZEvaluation {
    let angles: Vec<f64> = anti.positions.iter().map(|&p| theta[p]).collect();
    let k = angles.len();
    let nw = n.div_ceil(64);
    let nchunks = budget.n_samples.div_ceil(budget.chunk);
    let run = |c: u64| {
        let mut r = rng::stream(budget.seed, &[rng::TAG_Z, c]);
        let start = c * budget.chunk;
        let end = ((c + 1) * budget.chunk).min(budget.n_samples);
        let mut z = vec![0u64; nw];
        let mut vals = Vec::with_capacity((end - start) as usize);
        let mut sin_sq = 0.0;
        let mut grad = if want_gradient { vec![0.0; k] } else { vec![] };
        let mut signs = vec![0.0f64; k];
        for _ in start..end {
            for w in z.iter_mut() {
                *w = r.next_u64();
            }
            let mut phase = 0.0;
            for i in 0..k {
                let mut p = bit(&z, anti.first[i]);
                if anti.second[i] != usize::MAX {
                    p ^= bit(&z, anti.second[i]);
                }
                let s = 1.0 - 2.0 * p as f64;
                signs[i] = s;
                phase += s * angles[i];
            }
            vals.push((2.0 * phase).cos());
            if want_gradient {
                let sn = (2.0 * phase).sin();
                sin_sq += sn * sn;
                let f = -2.0 * sn;
                for (gb, s) in grad.iter_mut().zip(&signs) {
                    *gb += f * s;
                }
            }
        }
        let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
        (pairwise_sum(&vals), pairwise_sum(&sq), sin_sq, grad)
    };
    let parts: Vec<_> = if nchunks > 1 {
        (0..nchunks).into_par_iter().map(run).collect()
    } else {
        vec![run(0)]
    };
    let nf = budget.n_samples as f64;
    let (mut sum, mut sum_sq, mut sin_sq) = (0.0, 0.0, 0.0);
    let mut grad = vec![0.0; if want_gradient { k } else { 0 }];
    for (s, q, sn, pg) in &parts {
        sum += s;
        sum_sq += q;
        sin_sq += sn;
        for (a, b) in grad.iter_mut().zip(pg) {
            *a += b;
        }
    }
    let se = |total: f64, total_sq: f64| {
        if budget.n_samples < 2 {
            return 0.0;
        }
        let mean = total / nf;
        (((total_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) / nf).sqrt()
    };
    let value = sum / nf;
    let std_error = se(sum, sum_sq);
    let gradient = want_gradient.then(|| {
        let std_errors = grad.iter().map(|&gsum| se(gsum, 4.0 * sin_sq)).collect();
        SparseGradient {
            positions: anti.positions.clone(),
            values: grad.iter().map(|g| g / nf).collect(),
            std_errors,
        }
    });
    ZEvaluation {
        value,
        std_error,
        n_samples: budget.n_samples,
        gradient,
    }
}

/// `z_A = 2^-|A| Σ_{s∈{±1}^A} cos(2 Σ_{j∈A} s_j θ_j) Π_{k∈N_E(A)} cos(2 Σ_{j∈A,(j,k)∈E} s_j θ_jk)`.
fn light_cone_sum(
    theta: &ParamVector,
    a: &QubitSubset,
    anti: &AntiSet,
    want_gradient: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let members = a.to_vec();
    let na = members.len();
    if na > LIGHT_CONE_LIMIT {
        return Err(Error::Capacity {
            what: "light-cone correlator (|A|)",
            n: na,
            limit: LIGHT_CONE_LIMIT,
        });
    }
    let member_of = |q: usize| members.binary_search(&q).ok();
    // singles[i] = anti index of Single(members[i]); outside qubit -> [(member, anti index)]
    let mut singles = vec![usize::MAX; na];
    let mut outside: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for e in 0..anti.len() {
        let (f, s) = (anti.first[e], anti.second[e]);
        if s == usize::MAX {
            singles[member_of(f).expect("single in A")] = e;
        } else if let Some(i) = member_of(f) {
            outside.entry(s).or_default().push((i, e));
        } else {
            outside
                .entry(f)
                .or_default()
                .push((member_of(s).expect("pair endpoint in A"), e));
        }
    }
    let groups: Vec<Vec<(usize, f64, usize)>> = outside
        .into_values()
        .map(|v| {
            v.into_iter()
                .map(|(i, e)| (i, theta[anti.positions[e]], e))
                .collect()
        })
        .collect();
    let single_angles: Vec<f64> = singles.iter().map(|&e| theta[anti.positions[e]]).collect();
    let nk = groups.len();
    let mut grad = vec![0.0; if want_gradient { anti.len() } else { 0 }];
    let mut value = 0.0;
    let mut psi = vec![0.0; nk];
    let mut cosk = vec![0.0; nk];
    let mut prefix = vec![1.0; nk + 1];
    let mut sign = vec![0.0; na];
    // The summand is even under s -> -s, so fix s_0 = +1 and double.
    let half = 1u64 << (na - 1);
    for pat in 0..half {
        for (i, s) in sign.iter_mut().enumerate() {
            *s = if i > 0 && (pat >> (i - 1)) & 1 == 1 {
                -1.0
            } else {
                1.0
            };
        }
        let phi: f64 = sign.iter().zip(&single_angles).map(|(s, t)| s * t).sum();
        for (k, grp) in groups.iter().enumerate() {
            psi[k] = grp.iter().map(|&(i, t, _)| sign[i] * t).sum();
            cosk[k] = (2.0 * psi[k]).cos();
            prefix[k + 1] = prefix[k] * cosk[k];
        }
        let prod = prefix[nk];
        let c = (2.0 * phi).cos();
        value += c * prod;
        if want_gradient {
            let sn = (2.0 * phi).sin();
            for i in 0..na {
                grad[singles[i]] += -2.0 * sign[i] * sn * prod;
            }
            let mut suffix = 1.0;
            for k in (0..nk).rev() {
                let others = prefix[k] * suffix;
                let d = -2.0 * (2.0 * psi[k]).sin() * c * others;
                for &(i, _, e) in &groups[k] {
                    grad[e] += sign[i] * d;
                }
                suffix *= cosk[k];
            }
        }
    }
    let scale = 1.0 / half as f64;
    value *= scale;
    grad.iter_mut().for_each(|x| *x *= scale);
    Ok((value, want_gradient.then_some(grad)))
}

/// Exact correlator by enumerating all `2^n` bit strings.
pub fn z_exact(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    a: &QubitSubset,
) -> Result<f64> {
    z_exact_with_limit(g, idx, theta, a, DEFAULT_EXACT_LIMIT)
}

pub fn z_exact_with_limit(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    a: &QubitSubset,
    limit: usize,
) -> Result<f64> {
    Ok(evaluate(g, idx, theta, a, &ZEngine::Enumerate { limit }, 0, false)?.value)
}

/// Exact correlator through the light-cone sum; usable at any `n`.
pub fn z_light_cone(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    a: &QubitSubset,
) -> Result<f64> {
    Ok(evaluate(g, idx, theta, a, &ZEngine::LightCone, 0, false)?.value)
}

/// `Π_{j∈A} cos(2θ_j)`; requires every pair angle to be exactly zero.
pub fn z_product(idx: &GeneratorIndex, theta: &ParamVector, a: &QubitSubset) -> Result<f64> {
    check_dim(idx.m(), theta.len())?;
    check_dim(idx.n(), a.n())?;
    if let Some(p) = (idx.n()..idx.m()).find(|&p| theta[p] != 0.0) {
        return Err(Error::Precondition(format!(
            "product form needs zero pair angles; {} = {}",
            idx.label(p),
            theta[p]
        )));
    }
    Ok(a.iter().map(|j| (2.0 * theta[j]).cos()).product())
}

/// Monte-Carlo estimate of `z_A` from uniform bit strings.
pub fn z_mc(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    a: &QubitSubset,
    budget: &EstimatorBudget,
) -> Result<CorrelatorEstimate> {
    let engine = ZEngine::MonteCarlo {
        n_samples: budget.n_samples,
        chunk: budget.chunk,
    };
    let ev = evaluate(g, idx, theta, a, &engine, budget.seed, false)?;
    Ok(CorrelatorEstimate {
        value: ev.value,
        std_error: ev.std_error,
        n_samples: ev.n_samples,
    })
}

/// Dense gradient `∂z_A/∂θ_α` for all `m` parameters.
pub fn grad_z(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    a: &QubitSubset,
    engine: &ZEngine,
    seed: u64,
) -> Result<Vec<CorrelatorEstimate>> {
    let ev = evaluate(g, idx, theta, a, engine, seed, true)?;
    let sg = ev.gradient.expect("gradient requested");
    let mut out = vec![
        CorrelatorEstimate {
            value: 0.0,
            std_error: 0.0,
            n_samples: ev.n_samples,
        };
        idx.m()
    ];
    for ((&p, &v), &se) in sg.positions.iter().zip(&sg.values).zip(&sg.std_errors) {
        out[p].value = v;
        out[p].std_error = se;
    }
    Ok(out)
}

/// Exact dense gradient by enumeration.
pub fn grad_z_exact(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    a: &QubitSubset,
) -> Result<Vec<f64>> {
    let ev = evaluate(g, idx, theta, a, &ZEngine::exact(), 0, true)?;
    Ok(ev.gradient.expect("gradient requested").to_dense(idx.m()))
}

/// `∂²z_A/∂θ_α² = -4 z_A` when generator `α` anti-commutes with `Z_A`, else 0.
pub fn d2_z(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    a: &QubitSubset,
    alpha: usize,
) -> Result<f64> {
    check_inputs(g, idx, theta, a)?;
    if alpha >= idx.m() {
        return Err(Error::Config(format!(
            "parameter index {alpha} out of range (m = {})",
            idx.m()
        )));
    }
    if idx.label(alpha).anticommutes_with(a) {
        Ok(-4.0 * z_exact(g, idx, theta, a)?)
    } else {
        Ok(0.0)
    }
}

//! Brute-force statevector simulation for small registers.
//!
//! The circuit `H^n · diag(e^{iφ(z)}) · H^n |0…0>` with
//! `φ(z) = Σ_b θ_b (-1)^{b·z}` equals `exp(i Σ_b θ_b X_b)|0…0>`. Basis index
//! bit `i` is qubit `i`.

use std::ops::{Add, Sub};

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::correlators::ParamVector;
use crate::datasets::BitDataset;
use crate::error::{check_dim, Error, Result};
use crate::rng;
use crate::topology::{GeneratorIndex, InteractionGraph, QubitSubset};

pub const DEFAULT_ORACLE_LIMIT: usize = 20;

/// In-place unnormalized Walsh-Hadamard transform.
pub fn fwht<T: Copy + Add<Output = T> + Sub<Output = T>>(v: &mut [T]) {
    let len = v.len();
    debug_assert!(len.is_power_of_two());
    let mut h = 1;
    while h < len {
        for block in v.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

fn check_capacity(n: usize, limit: usize) -> Result<()> {
    if n > limit {
        Err(Error::Capacity {
            what: "statevector oracle",
            n,
            limit,
        })
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Probabilities over `2^n` bit strings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistributionTable {
    n: usize,
    probs: Vec<f64>,
}

impl DistributionTable {
    pub fn new(n: usize, probs: Vec<f64>) -> Result<Self> {
        check_dim(1usize << n, probs.len())?;
        if probs.iter().any(|&p| !(p >= -1e-15) || !p.is_finite()) {
            return Err(Error::Data("negative or non-finite probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Data(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { n, probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            n,
            probs: vec![1.0 / (1u64 << n) as f64; 1 << n],
        }
    }

    pub fn delta(n: usize, index: usize) -> Self {
        let mut probs = vec![0.0; 1 << n];
        probs[index] = 1.0;
        Self { n, probs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// All correlators `Σ_x p(x) (-1)^{A·x}` indexed by the mask of `A`,
    /// clamped to `[-1, 1]` against rounding.
    pub fn correlators(&self) -> Vec<f64> {
        let mut v = self.probs.clone();
        fwht(&mut v);
        v.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
        v
    }
}

/// `U(θ)|0…0>` by Hadamard conjugation of a diagonal phase.
pub fn build_state(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
) -> Result<StateVector> {
    build_state_with_limit(g, idx, theta, DEFAULT_ORACLE_LIMIT)
}

pub fn build_state_with_limit(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    theta: &ParamVector,
    limit: usize,
) -> Result<StateVector> {
    idx.check(g)?;
    check_dim(idx.m(), theta.len())?;
    let n = g.n();
    check_capacity(n, limit)?;
    let dim = 1usize << n;
    // couplings[i] = [(neighbor, parameter position)]
    let couplings: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| {
            g.neighbors(i)
                .iter()
                .map(|&k| (k, n + g.edge_position(i, k).expect("edge")))
                .collect()
        })
        .collect();
    let full_phase = |z: usize| -> f64 {
        let mut ph = 0.0;
        for j in 0..n {
            ph += theta[j] * if (z >> j) & 1 == 0 { 1.0 } else { -1.0 };
        }
        for (e, &(j, k)) in g.edges().iter().enumerate() {
            let par = ((z >> j) ^ (z >> k)) & 1;
            ph += theta[n + e] * if par == 0 { 1.0 } else { -1.0 };
        }
        ph
    };
    // Walk the bit strings in Gray-code order, updating the phase per flip.
    let mut amps = vec![Complex64::new(0.0, 0.0); dim];
    let mut sign = vec![1.0f64; n];
    let mut gray = 0usize;
    let mut phase = full_phase(0);
    amps[0] = Complex64::from_polar(1.0, phase);
    for t in 1..dim {
        let i = t.trailing_zeros() as usize;
        let mut local = theta[i];
        for &(k, p) in &couplings[i] {
            local += theta[p] * sign[k];
        }
        phase -= 2.0 * sign[i] * local;
        sign[i] = -sign[i];
        gray ^= 1 << i;
        if t % 4096 == 0 {
            phase = full_phase(gray);
        }
        amps[gray] = Complex64::from_polar(1.0, phase);
    }
    fwht(&mut amps);
    let scale = 1.0 / dim as f64;
    for a in &mut amps {
        *a *= scale;
    }
    Ok(StateVector {
        n,
        amplitudes: amps,
    })
}

/// `Σ_z (-1)^{A·z} |ψ(z)|²`.
#[allow(non_snake_case)]
pub fn expval_zA(state: &StateVector, a: &QubitSubset) -> Result<f64> {
    check_dim(state.n, a.n())?;
    let mask = a.mask() as usize;
    Ok(state
        .amplitudes
        .iter()
        .enumerate()
        .map(|(z, amp)| {
            let p = amp.norm_sqr();
            if (z & mask).count_ones() & 1 == 0 {
                p
            } else {
                -p
            }
        })
        .sum())
}

pub fn model_distribution(state: &StateVector) -> DistributionTable {
    DistributionTable {
        n: state.n,
        probs: state.amplitudes.iter().map(|a| a.norm_sqr()).collect(),
    }
}

/// Inverse-CDF sampling from the table; deterministic per seed.
pub fn sample(dist: &DistributionTable, count: usize, seed: u64) -> Result<BitDataset> {
    let mut cdf = Vec::with_capacity(dist.probs.len());
    let mut acc = 0.0;
    for &p in &dist.probs {
        acc += p.max(0.0);
        cdf.push(acc);
    }
    let total = acc;
    let mut r = rng::stream(seed, &[rng::TAG_SAMPLE]);
    let last_nonzero = dist.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let u = r.gen::<f64>() * total;
        let i = cdf.partition_point(|&c| c <= u).min(last_nonzero);
        rows.push(i as u64);
    }
    BitDataset::from_indices(dist.n, &rows, format!("oracle-sample(seed={seed})"))
}

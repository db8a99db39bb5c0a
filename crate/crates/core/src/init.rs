//! Initialization centers and patch draws.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correlators::{z_product, ParamVector};
use crate::datasets::{covariances, TargetStats};
use crate::error::{check_dim, Error, Result};
use crate::rng;
use crate::topology::{GeneratorIndex, GeneratorLabel, InteractionGraph, QubitSubset};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitVariant {
    FullAngle,
    Identity,
    Unbiased,
    MarginalMatch,
    Covariance,
}

impl InitVariant {
    pub const ALL: [InitVariant; 5] = [
        InitVariant::FullAngle,
        InitVariant::Identity,
        InitVariant::Unbiased,
        InitVariant::MarginalMatch,
        InitVariant::Covariance,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InitVariant::FullAngle => "full",
            InitVariant::Identity => "identity",
            InitVariant::Unbiased => "unbiased",
            InitVariant::MarginalMatch => "marginal",
            InitVariant::Covariance => "covariance",
        }
    }

    pub fn needs_target(&self) -> bool {
        matches!(self, InitVariant::MarginalMatch | InitVariant::Covariance)
    }
}

impl fmt::Display for InitVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_angle" => Ok(InitVariant::FullAngle),
            "identity" => Ok(InitVariant::Identity),
            "unbiased" => Ok(InitVariant::Unbiased),
            "marginal" | "marginal_match" => Ok(InitVariant::MarginalMatch),
            "covariance" => Ok(InitVariant::Covariance),
            other => Err(Error::Config(format!(
                "unknown init strategy {other:?} (full|identity|unbiased|marginal|covariance)"
            ))),
        }
    }
}

/// A center rule plus a scale `s`; the patch half-width is `r = (π/2) s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitStrategy {
    pub variant: InitVariant,
    pub scale: f64,
}

impl InitStrategy {
    /// `FullAngle` always uses `s = 1` whatever `scale` says.
    pub fn new(variant: InitVariant, scale: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&scale) {
            return Err(Error::Config(format!(
                "scale must lie in [0, 1], got {scale}"
            )));
        }
        let scale = if variant == InitVariant::FullAngle {
            1.0
        } else {
            scale
        };
        Ok(Self { variant, scale })
    }

    pub fn full_angle() -> Self {
        Self {
            variant: InitVariant::FullAngle,
            scale: 1.0,
        }
    }

    pub fn half_width(&self) -> f64 {
        FRAC_PI_2 * self.scale
    }
}

/// `θ_j* = arccos(t_j) / 2` on the branch `[0, π/2]`.
fn matched_angle(j: usize, t: f64) -> Result<f64> {
    if !(t.abs() <= 1.0) {
        return Err(Error::Data(format!("marginal t_{j} = {t} outside [-1, 1]")));
    }
    Ok(t.acos() / 2.0)
}

pub fn center(
    strategy: &InitStrategy,
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    target: Option<&TargetStats>,
) -> Result<ParamVector> {
    idx.check(g)?;
    let n = g.n();
    let mut th = ParamVector::zeros(idx.m());
    match strategy.variant {
        InitVariant::FullAngle | InitVariant::Identity => {}
        InitVariant::Unbiased => th.as_mut_slice()[..n].fill(FRAC_PI_4),
        InitVariant::MarginalMatch | InitVariant::Covariance => {
            let target = target.ok_or_else(|| {
                Error::Config(format!(
                    "{} initialization needs a target",
                    strategy.variant
                ))
            })?;
            check_dim(n, target.n())?;
            for (j, t) in target.marginals().into_iter().enumerate() {
                th.as_mut_slice()[j] = matched_angle(j, t)?;
            }
        }
    }
    Ok(th)
}

/// A center and one point drawn from its patch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatchDraw {
    pub center: ParamVector,
    pub sample: ParamVector,
    pub seed: u64,
    /// Per-component half-widths.
    pub radii: Vec<f64>,
}

/// Precomputed center and half-widths, reused across many draws.
#[derive(Clone, Debug)]
pub struct PatchSampler {
    pub strategy: InitStrategy,
    pub center: ParamVector,
    pub radii: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PatchSampler {
    pub fn new(
        strategy: &InitStrategy,
        g: &InteractionGraph,
        idx: &GeneratorIndex,
        target: Option<&TargetStats>,
    ) -> Result<Self> {
        let c = center(strategy, g, idx, target)?;
        Self::with_center(strategy, idx, c, target)
    }

    /// Uses a caller-supplied center (for example a previously saved one).
    pub fn with_center(
        strategy: &InitStrategy,
        idx: &GeneratorIndex,
        center: ParamVector,
        target: Option<&TargetStats>,
    ) -> Result<Self> {
        check_dim(idx.m(), center.len())?;
        let r = strategy.half_width();
        let mut warnings = Vec::new();
        let radii = if strategy.variant == InitVariant::Covariance {
            let target = target
                .ok_or_else(|| Error::Config("covariance initialization needs a target".into()))?;
            check_dim(idx.n(), target.n())?;
            let cov = covariances(target)?;
            if cov.c_max == 0.0 {
                warnings.push("C_max = 0: every pair angle stays at 0".into());
            }
            idx.labels()
                .iter()
                .map(|l| match *l {
                    GeneratorLabel::Single(_) => 0.0,
                    GeneratorLabel::Pair(j, k) if cov.c_max > 0.0 => {
                        r * cov.get(j, k).abs() / cov.c_max
                    }
                    GeneratorLabel::Pair(..) => 0.0,
                })
                .collect()
        } else {
            vec![r; idx.m()]
        };
        Ok(Self {
            strategy: *strategy,
            center,
            radii,
            warnings,
        })
    }

    /// `θ = θ* + Unif[-r_i, r_i]` componentwise; deterministic per seed.
    pub fn draw(&self, seed: u64) -> PatchDraw {
        PatchDraw {
            center: self.center.clone(),
            sample: self.sample(seed),
            seed,
            radii: self.radii.clone(),
        }
    }

    /// The drawn parameters only.
    pub fn sample(&self, seed: u64) -> ParamVector {
        let mut r = rng::stream(seed, &[rng::TAG_DRAW]);
        let v = self
            .center
            .as_slice()
            .iter()
            .zip(&self.radii)
            .map(|(&c, &h)| {
                let u: f64 = r.gen_range(-1.0..=1.0);
                c + h * u
            })
            .collect();
        ParamVector::new(v).expect("finite draw")
    }
}

pub fn draw(
    strategy: &InitStrategy,
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    target: Option<&TargetStats>,
    seed: u64,
) -> Result<PatchDraw> {
    Ok(PatchSampler::new(strategy, g, idx, target)?.draw(seed))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalMatchReport {
    pub pass: bool,
    pub tolerance: f64,
    pub max_deviation: f64,
    /// Qubits whose single-qubit model correlator misses `t_j`.
    pub offending: Vec<usize>,
}

/// Checks `z_{j}(θ*) = t_j` for every qubit with the product form.
pub fn verify_marginal_match(
    g: &InteractionGraph,
    idx: &GeneratorIndex,
    center: &ParamVector,
    target: &TargetStats,
    tolerance: f64,
) -> Result<MarginalMatchReport> {
    idx.check(g)?;
    check_dim(g.n(), target.n())?;
    let n = g.n();
    let t = target.marginals();
    let mut offending = Vec::new();
    let mut max_deviation = 0.0f64;
    for (j, &tj) in t.iter().enumerate() {
        let z = z_product(idx, center, &QubitSubset::singleton(n, j))?;
        let d = (z - tj).abs();
        max_deviation = max_deviation.max(d);
        if !(d <= tolerance) {
            offending.push(j);
        }
    }
    Ok(MarginalMatchReport {
        pass: offending.is_empty(),
        tolerance,
        max_deviation,
        offending,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_pairwise, PlantedFlip};
    use crate::oracle::DistributionTable;
    use crate::topology::{make_graph, GraphKind};
    use std::f64::consts::FRAC_PI_6;

    fn all_to_all(n: usize) -> (InteractionGraph, GeneratorIndex) {
        let g = make_graph(&GraphKind::AllToAll, n).unwrap();
        let idx = GeneratorIndex::from_graph(&g);
        (g, idx)
    }

    #[test]
    fn centers() {
        let (g, idx) = all_to_all(3);
        let target = TargetStats::product(vec![1.0, 0.0, 0.5]).unwrap();
        let id = center(
            &InitStrategy::new(InitVariant::Identity, 0.2).unwrap(),
            &g,
            &idx,
            None,
        )
        .unwrap();
        assert!(id.as_slice().iter().all(|&x| x == 0.0));
        let ub = center(
            &InitStrategy::new(InitVariant::Unbiased, 0.2).unwrap(),
            &g,
            &idx,
            None,
        )
        .unwrap();
        assert_eq!(&ub.as_slice()[..3], &[FRAC_PI_4; 3]);
        assert!(ub.as_slice()[3..].iter().all(|&x| x == 0.0));
        let mm = InitStrategy::new(InitVariant::MarginalMatch, 0.1).unwrap();
        let c = center(&mm, &g, &idx, Some(&target)).unwrap();
        assert_eq!(c[0], 0.0);
        assert!((c[1] - FRAC_PI_4).abs() < 1e-15);
        assert!((c[2] - FRAC_PI_6).abs() < 1e-15);
        assert!(center(&mm, &g, &idx, None).is_err());
    }

    #[test]
    fn draws_stay_in_patch() {
        let (g, idx) = all_to_all(4);
        let s = InitStrategy::new(InitVariant::Unbiased, 0.3).unwrap();
        let ps = PatchSampler::new(&s, &g, &idx, None).unwrap();
        for seed in 0..50 {
            let d = ps.draw(seed);
            for i in 0..idx.m() {
                assert!((d.sample[i] - d.center[i]).abs() <= d.radii[i]);
            }
        }
        assert_eq!(ps.draw(7), ps.draw(7));
        assert_ne!(ps.draw(7).sample, ps.draw(8).sample);
        let zero = PatchSampler::new(
            &InitStrategy::new(InitVariant::Identity, 0.0).unwrap(),
            &g,
            &idx,
            None,
        )
        .unwrap();
        assert_eq!(zero.draw(3).sample, zero.center);
        let full = PatchSampler::new(
            &InitStrategy::new(InitVariant::FullAngle, 0.1).unwrap(),
            &g,
            &idx,
            None,
        )
        .unwrap();
        assert_eq!(full.strategy.scale, 1.0);
        assert!(full
            .draw(1)
            .sample
            .as_slice()
            .iter()
            .all(|x| x.abs() <= FRAC_PI_2));
        assert!(InitStrategy::new(InitVariant::Identity, 1.5).is_err());
    }

    #[test]
    fn covariance_radii() {
        let (g, idx) = all_to_all(4);
        let b = vec![0.5; 4];
        let flips = vec![PlantedFlip {
            qubits: vec![0, 1],
            strength: 0.25,
        }];
        let target = TargetStats::product(b.clone()).unwrap();
        let s = InitStrategy::new(InitVariant::Covariance, 0.5).unwrap();
        let ps = PatchSampler::new(&s, &g, &idx, Some(&target)).unwrap();
        assert_eq!(ps.warnings.len(), 1);
        assert!(ps.draw(2).sample.as_slice()[4..].iter().all(|&x| x == 0.0));

        let data = synth_pairwise(4, &b, &flips, 20_000, 1).unwrap();
        let emp = TargetStats::empirical(data).unwrap();
        let ps = PatchSampler::new(&s, &g, &idx, Some(&emp)).unwrap();
        let d = ps.draw(5);
        // singles stay at the center, the strongest pair gets the full half-width
        assert_eq!(&d.sample.as_slice()[..4], &d.center.as_slice()[..4]);
        let max_r = ps.radii[4..].iter().cloned().fold(0.0, f64::max);
        assert!((max_r - s.half_width()).abs() < 1e-15);
        assert_eq!(ps.radii[4], max_r);
    }

    #[test]
    fn marginal_match_reports() {
        let (g, idx) = all_to_all(3);
        let target = TargetStats::product(vec![0.3, -0.9, 0.0]).unwrap();
        let mm = InitStrategy::new(InitVariant::MarginalMatch, 0.0).unwrap();
        let c = center(&mm, &g, &idx, Some(&target)).unwrap();
        assert!(
            verify_marginal_match(&g, &idx, &c, &target, 1e-12)
                .unwrap()
                .pass
        );
        let zero = ParamVector::zeros(idx.m());
        let rep = verify_marginal_match(&g, &idx, &zero, &target, 1e-12).unwrap();
        assert_eq!(rep.offending, vec![0, 1, 2]);
        let uni = TargetStats::exact(DistributionTable::uniform(3));
        let ub = center(
            &InitStrategy::new(InitVariant::Unbiased, 0.0).unwrap(),
            &g,
            &idx,
            None,
        )
        .unwrap();
        assert!(
            verify_marginal_match(&g, &idx, &ub, &uni, 1e-12)
                .unwrap()
                .pass
        );
    }
}

use std::f64::consts::PI;
use std::path::Path;

use clap::Args;
use iqpbm::analysis::{
    all_to_all_m_a, identity_patch_floor, identity_patch_variance, mmd_concentration_bound,
    sample_losses,
};
use iqpbm::correlators::z_exact;
use iqpbm::mmd::{curvature, loss_exact_kernel, loss_exact_subsets, loss_gradient};
use iqpbm::oracle::{build_state, expval_zA, model_distribution};
use iqpbm::rng::derive_seed;
use iqpbm::stats::SampleMoments;
use iqpbm::topology::make_graph;
use iqpbm::{
    DistributionTable, GeneratorIndex, GraphKind, InitStrategy, InteractionGraph, LossEngine,
    MmdConfig, ParamVector, PatchSampler, QubitSubset, TargetStats,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::{write_output, CliError, Outcome};

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// correlators, mmd, gradients or bounds.
    #[arg(long, default_value = "correlators")]
    pub scope: String,
    #[arg(long, default_value_t = 2)]
    pub n_min: usize,
    /// Defaults to 10 for correlators and 8 otherwise.
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Random instances per n.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct Report {
    scope: String,
    checks: usize,
    max_deviation: f64,
    tolerance: f64,
    pass: bool,
    first_failure: Option<Value>,
}

struct Tally {
    checks: usize,
    worst: f64,
    tol: f64,
    first_failure: Option<Value>,
}

impl Tally {
    fn new(tol: f64) -> Self {
        Self {
            checks: 0,
            worst: 0.0,
            tol,
            first_failure: None,
        }
    }

    fn record(&mut self, dev: f64, case: impl FnOnce() -> Value) {
        self.checks += 1;
        self.worst = self.worst.max(dev);
        if !(dev <= self.tol) && self.first_failure.is_none() {
            self.first_failure = Some(case());
        }
    }
}

fn random_graph(n: usize, r: &mut ChaCha8Rng) -> Result<InteractionGraph, CliError> {
    let kind = match r.gen_range(0..3) {
        0 => GraphKind::AllToAll,
        1 => GraphKind::Ring,
        _ => GraphKind::Explicit(
            (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .filter(|_| r.gen_bool(0.5))
                .collect(),
        ),
    };
    Ok(make_graph(&kind, n)?)
}

fn random_theta(m: usize, r: &mut ChaCha8Rng) -> ParamVector {
    ParamVector::new((0..m).map(|_| r.gen_range(-PI..PI)).collect()).expect("finite")
}

fn random_subset(n: usize, r: &mut ChaCha8Rng) -> QubitSubset {
    QubitSubset::from_indices(n, (0..n).filter(|_| r.gen_bool(0.5))).expect("in range")
}

fn random_table(n: usize, r: &mut ChaCha8Rng) -> Result<DistributionTable, CliError> {
    let w: Vec<f64> = (0..1usize << n).map(|_| r.gen::<f64>().powi(3)).collect();
    let s: f64 = w.iter().sum();
    Ok(DistributionTable::new(
        n,
        w.iter().map(|x| x / s).collect(),
    )?)
}

fn case(n: usize, trial: usize, g: &InteractionGraph, th: &ParamVector, extra: Value) -> Value {
    json!({ "n": n, "trial": trial, "edges": g.edges(), "theta": th.as_slice(), "detail": extra })
}

pub fn run(a: &VerifyArgs, out: &Path) -> Result<Outcome, CliError> {
    let n_max = a
        .n_max
        .unwrap_or(if a.scope == "correlators" { 10 } else { 8 });
    if a.n_min < 1 || a.n_min > n_max {
        return Err(CliError::config(
            "n-min",
            format!("need 1 <= n-min <= n-max, got {}..{n_max}", a.n_min),
        ));
    }
    if a.trials == 0 {
        return Err(CliError::config("trials", "must be at least 1"));
    }
    let limit = match a.scope.as_str() {
        "correlators" => 20,
        "mmd" | "gradients" | "bounds" => 12,
        s => {
            return Err(CliError::config(
                "scope",
                format!("expected correlators, mmd, gradients or bounds, got {s:?}"),
            ))
        }
    };
    if n_max > limit {
        return Err(CliError::Capacity(format!(
            "verify --scope {} supports n <= {limit}",
            a.scope
        )));
    }
    let ns = a.n_min..=n_max;
    let tally = match a.scope.as_str() {
        "correlators" => correlators(ns, a.trials, a.seed)?,
        "mmd" => mmd_forms(ns, a.trials, a.seed)?,
        "gradients" => gradients(ns, a.trials, a.seed)?,
        _ => bounds(ns, a.trials, a.seed)?,
    };
    let report = Report {
        scope: a.scope.clone(),
        checks: tally.checks,
        max_deviation: tally.worst,
        tolerance: tally.tol,
        pass: tally.first_failure.is_none(),
        first_failure: tally.first_failure,
    };
    let mut outputs = Vec::new();
    write_output(
        out,
        "verify.json",
        &serde_json::to_string_pretty(&report)?,
        &mut outputs,
    )?;
    Ok(Outcome {
        pass: report.pass,
        config: json!({ "scope": a.scope, "n_min": a.n_min, "n_max": n_max, "trials": a.trials }),
        seeds: json!({ "master": a.seed }),
        summary: serde_json::to_value(&report)?,
        outputs,
    })
}

fn correlators(
    ns: std::ops::RangeInclusive<usize>,
    trials: usize,
    seed: u64,
) -> Result<Tally, CliError> {
    let mut t = Tally::new(1e-9);
    for n in ns {
        for trial in 0..trials {
            let mut r = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, n as u64, trial as u64]));
            let g = random_graph(n, &mut r)?;
            let idx = GeneratorIndex::from_graph(&g);
            let th = random_theta(idx.m(), &mut r);
            let state = build_state(&g, &idx, &th)?;
            let a = random_subset(n, &mut r);
            let (z, e) = (z_exact(&g, &idx, &th, &a)?, expval_zA(&state, &a)?);
            t.record((z - e).abs(), || {
                case(
                    n,
                    trial,
                    &g,
                    &th,
                    json!({ "subset": a.to_vec(), "z_exact": z, "expval": e }),
                )
            });
        }
    }
    Ok(t)
}

fn mmd_forms(
    ns: std::ops::RangeInclusive<usize>,
    trials: usize,
    seed: u64,
) -> Result<Tally, CliError> {
    let mut t = Tally::new(1e-9);
    for n in ns {
        for trial in 0..trials {
            let mut r = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, n as u64, trial as u64]));
            let g = random_graph(n, &mut r)?;
            let idx = GeneratorIndex::from_graph(&g);
            let th = random_theta(idx.m(), &mut r);
            let table = random_table(n, &mut r)?;
            let cfg = MmdConfig::new(r.gen_range(0.5..3.0), n)?;
            let target = TargetStats::exact(table.clone());
            let subsets = loss_exact_subsets(&g, &idx, &th, &target, &cfg)?;
            let kernel = loss_exact_kernel(
                &model_distribution(&build_state(&g, &idx, &th)?),
                &table,
                &cfg,
            )?;
            t.record((subsets - kernel).abs(), || {
                case(
                    n,
                    trial,
                    &g,
                    &th,
                    json!({ "sigma": cfg.sigma(), "subsets": subsets, "kernel": kernel }),
                )
            });
        }
    }
    Ok(t)
}

fn gradients(
    ns: std::ops::RangeInclusive<usize>,
    trials: usize,
    seed: u64,
) -> Result<Tally, CliError> {
    let h = 1e-4;
    let mut t = Tally::new(1e-5);
    for n in ns {
        for trial in 0..trials {
            let mut r = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3, n as u64, trial as u64]));
            let g = random_graph(n, &mut r)?;
            let idx = GeneratorIndex::from_graph(&g);
            let th = random_theta(idx.m(), &mut r);
            let target = TargetStats::exact(random_table(n, &mut r)?);
            let cfg = MmdConfig::new(r.gen_range(0.5..3.0), n)?;
            let l = |p: &ParamVector| loss_exact_subsets(&g, &idx, p, &target, &cfg);
            let l0 = l(&th)?;
            let grad = loss_gradient(&g, &idx, &th, &target, &cfg, &LossEngine::ExactSubsets, 0)?;
            let alpha = r.gen_range(0..idx.m());
            let shifted = |d: f64| {
                let mut p = th.clone();
                p.as_mut_slice()[alpha] += d;
                p
            };
            let (lp, lm) = (l(&shifted(h))?, l(&shifted(-h))?);
            let fd1 = (lp - lm) / (2.0 * h);
            let fd2 = (lp - 2.0 * l0 + lm) / (h * h);
            let c = curvature(&g, &idx, &th, &target, &cfg, alpha)?.total;
            let dev = (grad.values[alpha] - fd1).abs().max((c - fd2).abs());
            t.record(dev, || {
                case(
                    n,
                    trial,
                    &g,
                    &th,
                    json!({
                        "alpha": alpha, "gradient": grad.values[alpha], "fd_gradient": fd1,
                        "curvature": c, "fd_curvature": fd2,
                    }),
                )
            });
        }
    }
    Ok(t)
}

/// Identity-patch floor below the exact patch variance on a radius grid, and
/// full-angle loss variance below `5/2^n` (deviations are in units of SE).
fn bounds(
    ns: std::ops::RangeInclusive<usize>,
    trials: usize,
    seed: u64,
) -> Result<Tally, CliError> {
    let mut t = Tally::new(0.0);
    for n in ns {
        for k in 1..=n {
            let m_a = all_to_all_m_a(n, k);
            for i in 1..=100 {
                let r = i as f64 / 100.0;
                let floor = identity_patch_floor(m_a, r)?;
                let exact = identity_patch_variance(m_a, r);
                let excess = (floor - exact - 1e-9 * exact).max(0.0);
                t.record(excess, || json!({ "kind": "identity_patch", "n": n, "k": k, "r": r, "floor": floor, "exact": exact }));
            }
        }
        let g = make_graph(&GraphKind::AllToAll, n)?;
        let idx = GeneratorIndex::from_graph(&g);
        let mut r = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[4, n as u64]));
        let target = TargetStats::exact(random_table(n, &mut r)?);
        let cfg = MmdConfig::low_body(n)?;
        let sampler = PatchSampler::new(&InitStrategy::full_angle(), &g, &idx, None)?;
        let draws = (20 * trials).max(2);
        let v = sample_losses(
            &g,
            &idx,
            &sampler,
            &target,
            &cfg,
            draws,
            &LossEngine::ExactKernel,
            derive_seed(seed, &[5, n as u64]),
        )?;
        let m = SampleMoments::from_slice(&v);
        let bound = mmd_concentration_bound(n);
        let excess = ((m.variance - bound) / m.se_variance.max(f64::MIN_POSITIVE) - 3.0).max(0.0);
        t.record(excess, || json!({ "kind": "concentration", "n": n, "var": m.variance, "se": m.se_variance, "bound": bound }));
    }
    Ok(t)
}

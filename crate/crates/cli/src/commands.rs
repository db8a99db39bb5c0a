use std::path::{Path, PathBuf};

use clap::{Args, Parser};
use iqpbm::analysis::{
    curvature_patch_bound, curvature_report_sweep, variance_scan, CurvatureSweep,
};
use iqpbm::datasets::{check_assumption1, check_assumption2, covariances};
use iqpbm::init::center;
use iqpbm::mmd::{
    curvature_identity_closed, curvature_marginal_closed, curvature_unbiased_closed,
    curvature_with, CurvatureReport, EXACT_SUBSET_LIMIT,
};
use iqpbm::oracle::{build_state, model_distribution, sample as sample_model};
use iqpbm::topology::{anticommuting_generators, light_cone};
use iqpbm::train::{train as run_training, Optimizer};
use iqpbm::{InitStrategy, InitVariant, ParamVector, PatchSampler, QubitSubset, TrainConfig};
use serde_json::{json, Value};

use crate::opts::{parse_engine, parse_graph, parse_scales, ProblemArgs};
use crate::{write_output, Cli, CliError, Outcome, RunManifest};

fn parse_variant(field: &str, s: &str) -> Result<InitVariant, CliError> {
    s.parse().map_err(|_| {
        CliError::config(
            field,
            format!("expected full, identity, unbiased, marginal or covariance, got {s:?}"),
        )
    })
}

fn problem_config(p: &ProblemArgs, built: &crate::opts::Problem) -> Value {
    json!({
        "args": p,
        "n": built.g.n(),
        "m": built.idx.m(),
        "edges": built.g.edges().len(),
        "sigma": built.cfg.sigma(),
        "p_sigma": built.cfg.p_sigma(),
        "target": built.target.kind(),
        "provenance": built.target.dataset().map(|d| d.provenance().to_string()),
    })
}

#[derive(Args, Debug)]
pub struct VarScanArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Initialization strategy.
    #[arg(long, default_value = "marginal")]
    pub init: String,
    /// Scale grid: log:a..b[:k], lin:a..b[:k] or a comma list.
    #[arg(long, default_value = "log:1e-3..1:20")]
    pub scales: String,
    /// Parameter draws per scale.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// exact-kernel, exact-subsets, stochastic:<K>[:<z>] or auto.
    #[arg(long, default_value = "auto")]
    pub engine: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn var_scan(a: &VarScanArgs, out: &Path) -> Result<Outcome, CliError> {
    let variant = parse_variant("init", &a.init)?;
    let scales = parse_scales(&a.scales)?;
    if a.draws < 2 {
        return Err(CliError::config("draws", "must be at least 2"));
    }
    let p = a.problem.build()?;
    let engine = parse_engine(&a.engine, p.g.n())?;
    let scan = variance_scan(
        variant, &p.g, &p.idx, &p.target, &p.cfg, &scales, a.draws, &engine, a.seed,
    )?;
    let mut outputs = Vec::new();
    write_output(out, "var_scan.csv", &scan.to_csv(), &mut outputs)?;
    Ok(Outcome {
        pass: true,
        config: json!({
            "problem": problem_config(&a.problem, &p),
            "init": variant,
            "scales": scales,
            "draws": a.draws,
            "engine": engine,
        }),
        seeds: json!({ "master": a.seed }),
        summary: json!({
            "strategy": variant,
            "n": scan.n,
            "argmax_scale": scan.argmax_scale,
            "max_var": scan.max_var,
        }),
        outputs,
    })
}

#[derive(Args, Debug)]
pub struct CurvatureArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Center: identity, unbiased, marginal or covariance.
    #[arg(long, default_value = "marginal")]
    pub center: String,
    /// Keep only subsets with |A| <= k; required above n = 14 (defaults to 2 there).
    #[arg(long)]
    pub max_order: Option<usize>,
    /// Δ of the patch bound evaluated at the largest curvature.
    #[arg(long, default_value_t = 0.25)]
    pub delta: f64,
}

fn closed_form(
    variant: InitVariant,
    p: &crate::opts::Problem,
    alpha: usize,
    k: Option<usize>,
) -> Result<CurvatureReport, CliError> {
    Ok(match variant {
        InitVariant::FullAngle | InitVariant::Identity => {
            curvature_identity_closed(&p.target, &p.cfg, alpha, k)?
        }
        InitVariant::Unbiased => curvature_unbiased_closed(&p.cfg, alpha),
        InitVariant::MarginalMatch | InitVariant::Covariance => {
            curvature_marginal_closed(&p.target, &p.cfg, alpha, k)?
        }
    })
}

pub fn curvature(a: &CurvatureArgs, out: &Path) -> Result<Outcome, CliError> {
    let variant = parse_variant("center", &a.center)?;
    let p = a.problem.build()?;
    let n = p.g.n();
    let max_order = match a.max_order {
        Some(0) => return Err(CliError::config("max-order", "must be at least 1")),
        None if n > EXACT_SUBSET_LIMIT => Some(2),
        k => k,
    };
    let (sweep, method) = match max_order {
        None => (
            curvature_report_sweep(variant, &p.g, &p.idx, &p.target, &p.cfg)?,
            "generic",
        ),
        Some(k) if n <= EXACT_SUBSET_LIMIT => {
            let th = center(
                &InitStrategy::new(variant, 0.0)?,
                &p.g,
                &p.idx,
                Some(&p.target),
            )?;
            let reports: Vec<CurvatureReport> = (0..n)
                .map(|al| curvature_with(&p.g, &p.idx, &th, &p.target, &p.cfg, al, Some(k)))
                .collect::<Result<_, _>>()?;
            let closed: Vec<f64> = (0..n)
                .map(|al| Ok(closed_form(variant, &p, al, Some(k))?.total))
                .collect::<Result<_, CliError>>()?;
            let dev = closed
                .iter()
                .zip(&reports)
                .map(|(c, r)| (c - r.total).abs())
                .fold(0.0, f64::max);
            let argmax = argmax_abs(&reports);
            (
                CurvatureSweep {
                    center: variant,
                    reports,
                    argmax,
                    closed_form: Some(closed),
                    max_closed_form_deviation: Some(dev),
                },
                "generic-truncated",
            )
        }
        Some(k) => {
            let reports: Vec<CurvatureReport> = (0..n)
                .map(|al| closed_form(variant, &p, al, Some(k)))
                .collect::<Result<_, _>>()?;
            let argmax = argmax_abs(&reports);
            (
                CurvatureSweep {
                    center: variant,
                    reports,
                    argmax,
                    closed_form: None,
                    max_closed_form_deviation: None,
                },
                "closed-form-truncated",
            )
        }
    };
    let best = &sweep.reports[sweep.argmax];
    let bound = curvature_patch_bound(&p.cfg, p.idx.m(), best.total, a.delta)?;
    let r_half = bound.r_max().map(|r| r / 2.0);
    let mut outputs = Vec::new();
    write_output(out, "curvature.csv", &sweep.to_csv(), &mut outputs)?;
    let dev = sweep.max_closed_form_deviation;
    Ok(Outcome {
        pass: dev.is_none_or(|d| d <= 1e-9),
        config: json!({
            "problem": problem_config(&a.problem, &p),
            "center": variant,
            "max_order": max_order,
            "method": method,
            "delta": a.delta,
        }),
        seeds: json!({}),
        summary: json!({
            "center": variant,
            "method": method,
            "argmax_alpha": best.alpha,
            "c_alpha": best.total,
            "max_closed_form_deviation": dev,
            "patch_bound": bound,
            "floor_at_half_r_max": r_half.and_then(|r| bound.floor(r)),
        }),
        outputs,
    })
}

fn argmax_abs(reports: &[CurvatureReport]) -> usize {
    reports.iter().enumerate().fold(0, |b, (i, r)| {
        if r.total.abs() > reports[b].total.abs() {
            i
        } else {
            b
        }
    })
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Initialization strategy.
    #[arg(long, default_value = "marginal")]
    pub init: String,
    /// Initialization scale s in [0, 1]; defaults to 1/√m.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Start from this parameter file (one angle per line) instead of a patch draw.
    #[arg(long, conflicts_with_all = ["scale"])]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// gd or adam.
    #[arg(long, default_value = "gd")]
    pub optimizer: String,
    /// Update engine: exact-kernel, exact-subsets, stochastic:<K>[:<z>] or auto.
    #[arg(long, default_value = "auto")]
    pub engine: String,
    /// Engine for logged losses, evaluated with --eval-seed at every log.
    #[arg(long)]
    pub eval_engine: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    /// Seed of the update estimator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the initial patch draw; defaults to --seed.
    #[arg(long)]
    pub draw_seed: Option<u64>,
}

pub fn train(a: &TrainArgs, out: &Path) -> Result<Outcome, CliError> {
    let variant = parse_variant("init", &a.init)?;
    let optimizer = match a.optimizer.as_str() {
        "gd" => Optimizer::Gd,
        "adam" => Optimizer::adam(),
        o => {
            return Err(CliError::config(
                "optimizer",
                format!("expected gd or adam, got {o:?}"),
            ))
        }
    };
    let p = a.problem.build()?;
    let n = p.g.n();
    let scale = a.scale.unwrap_or(1.0 / (p.idx.m() as f64).sqrt());
    let strategy = InitStrategy::new(variant, scale)?;
    let draw_seed = a.draw_seed.unwrap_or(a.seed);
    let sampler = match &a.params {
        Some(path) => PatchSampler::with_center(
            &InitStrategy::new(variant, 0.0)?,
            &p.idx,
            ParamVector::read(path)?,
            Some(&p.target),
        )?,
        None => PatchSampler::new(&strategy, &p.g, &p.idx, Some(&p.target))?,
    };
    let init = sampler.draw(draw_seed);
    let mut tc = TrainConfig::new(parse_engine(&a.engine, n)?, a.seed);
    tc.steps = a.steps;
    tc.learning_rate = a.lr;
    tc.optimizer = optimizer;
    tc.eval_engine = a
        .eval_engine
        .as_deref()
        .map(|e| parse_engine(e, n))
        .transpose()?;
    tc.eval_seed = a.eval_seed;
    tc.eval_every = a.eval_every;
    tc.validate()?;
    let config = json!({
        "problem": problem_config(&a.problem, &p),
        "init": variant,
        "scale": if a.params.is_some() { None } else { Some(strategy.scale) },
        "params": a.params,
        "train": tc,
        "warnings": sampler.warnings,
    });
    let seeds = json!({ "update": a.seed, "draw": draw_seed, "eval": a.eval_seed });
    let mut outputs = Vec::new();
    let (trace, failure) = match run_training(&p.g, &p.idx, &init, &p.target, &p.cfg, &tc) {
        Ok(t) => (t, None),
        Err(iqpbm::Error::Diverged(f)) => (
            f.trace.clone(),
            Some(format!("step {}: {}", f.step, f.reason)),
        ),
        Err(e) => return Err(e.into()),
    };
    write_output(out, "trace.csv", &trace.to_csv(), &mut outputs)?;
    write_output(
        out,
        "final_params.txt",
        &trace.final_params.to_text(),
        &mut outputs,
    )?;
    let sidecar =
        json!({ "config": config, "seeds": seeds, "records": trace.records, "failure": failure });
    write_output(
        out,
        "trace.json",
        &serde_json::to_string_pretty(&sidecar)?,
        &mut outputs,
    )?;
    let first = trace.records.first().map(|r| r.loss);
    let last = trace.final_loss();
    Ok(Outcome {
        pass: failure.is_none(),
        config,
        seeds,
        summary: json!({
            "init": variant,
            "steps": a.steps,
            "initial_loss": first,
            "final_loss": last,
            "failure": failure,
        }),
        outputs,
    })
}

#[derive(Args, Debug)]
pub struct CheckTargetArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Largest correlator order tested against the product of marginals.
    #[arg(long, default_value_t = 3)]
    pub kmax: usize,
    /// Constant C of the decay bound (C/n)^{k/2}; defaults to n/2.
    #[arg(long)]
    pub c: Option<f64>,
}

pub fn check_target(a: &CheckTargetArgs, out: &Path) -> Result<Outcome, CliError> {
    let target = a.problem.load_target()?;
    let n = target.n();
    if a.kmax < 2 {
        return Err(CliError::config("kmax", "must be at least 2"));
    }
    let c = a.c.unwrap_or(n as f64 / 2.0);
    let a1 = check_assumption1(&target, n, c, a.kmax)?;
    let a2 = check_assumption2(&target);
    let cov = covariances(&target)?;
    let mut csv = String::from("j,k,cov\n");
    for j in 0..n {
        for k in j + 1..n {
            csv.push_str(&format!("{j},{k},{:e}\n", cov.get(j, k)));
        }
    }
    let mut outputs = Vec::new();
    write_output(out, "covariances.csv", &csv, &mut outputs)?;
    let mut orders = String::from("order,max_deviation,bound,pass\n");
    for o in &a1.orders {
        orders.push_str(&format!(
            "{},{:e},{:e},{}\n",
            o.order, o.max_deviation, o.bound, o.pass
        ));
    }
    write_output(out, "assumption1.csv", &orders, &mut outputs)?;
    let non_saturated = a2.max_value > 0.0;
    Ok(Outcome {
        pass: a1.pass && non_saturated,
        config: json!({ "problem": a.problem, "n": n, "kmax": a.kmax, "c": c, "target": target.kind() }),
        seeds: json!({}),
        summary: json!({
            "assumption1": a1,
            "assumption2": { "max_value": a2.max_value, "argmax": a2.argmax, "pass": non_saturated },
            "c_max": cov.c_max,
        }),
        outputs,
    })
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Parameter file (one angle per line); otherwise a patch draw is used.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value = "marginal")]
    pub init: String,
    #[arg(long, default_value_t = 0.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn sample(a: &SampleArgs, out: &Path) -> Result<Outcome, CliError> {
    let p = a.problem.build()?;
    let theta = match &a.params {
        Some(path) => ParamVector::read(path)?,
        None => {
            let st = InitStrategy::new(parse_variant("init", &a.init)?, a.scale)?;
            PatchSampler::new(&st, &p.g, &p.idx, Some(&p.target))?.sample(a.seed)
        }
    };
    let dist = model_distribution(&build_state(&p.g, &p.idx, &theta)?);
    let data = sample_model(&dist, a.count, a.seed)?;
    let mut outputs = Vec::new();
    write_output(out, "samples.txt", &data.to_text(), &mut outputs)?;
    write_output(out, "params.txt", &theta.to_text(), &mut outputs)?;
    let empirical = iqpbm::TargetStats::empirical(data)?.marginals();
    let model: Vec<f64> = dist
        .correlators()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| i.is_power_of_two())
        .map(|(_, v)| v)
        .collect();
    Ok(Outcome {
        pass: true,
        config: json!({
            "problem": problem_config(&a.problem, &p),
            "params": a.params,
            "init": a.init,
            "scale": a.scale,
            "count": a.count,
        }),
        seeds: json!({ "draw": a.seed, "sample": a.seed }),
        summary: json!({ "count": a.count, "model_marginals": model, "sample_marginals": empirical }),
        outputs,
    })
}

#[derive(Args, Debug)]
pub struct GraphInfoArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "all_to_all")]
    pub graph: String,
    /// Subset to report (comma-separated qubits); repeatable.
    #[arg(long)]
    pub subset: Vec<String>,
}

pub fn graph_info(a: &GraphInfoArgs, out: &Path) -> Result<Outcome, CliError> {
    let g = parse_graph(&a.graph, a.n)?;
    let idx = iqpbm::GeneratorIndex::from_graph(&g);
    let degrees: Vec<usize> = (0..a.n).map(|q| g.degree(q)).collect();
    let mut subsets = Vec::new();
    for s in &a.subset {
        let qubits: Vec<usize> = s
            .split(',')
            .map(|q| {
                q.trim()
                    .parse()
                    .map_err(|_| CliError::config("subset", format!("bad qubit list {s:?}")))
            })
            .collect::<Result<_, _>>()?;
        let set = QubitSubset::from_indices(a.n, qubits.iter().copied())?;
        let d = light_cone(&g, &set)?;
        subsets.push(json!({
            "subset": qubits,
            "light_cone": d,
            "anticommuting_generators": anticommuting_generators(&g, &set)?.len(),
            "full_angle_variance": (-(d as f64)).exp2(),
        }));
    }
    let mut outputs = Vec::new();
    write_output(out, "graph.txt", &g.to_text(), &mut outputs)?;
    Ok(Outcome {
        pass: true,
        config: json!({ "n": a.n, "graph": a.graph, "subsets": a.subset }),
        seeds: json!({}),
        summary: json!({
            "n": a.n,
            "edges": g.edges().len(),
            "m": idx.m(),
            "min_degree": degrees.iter().min(),
            "max_degree": degrees.iter().max(),
            "subsets": subsets,
        }),
        outputs,
    })
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
}

/// Re-parses the recorded command line, writing into `out`.
pub fn replay(a: &ReplayArgs, out: &Path, workers: Option<usize>) -> Result<u8, CliError> {
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(&a.manifest)?)?;
    let mut cli =
        Cli::try_parse_from(&m.argv).map_err(|e| CliError::config("manifest", e.to_string()))?;
    if matches!(cli.command, crate::Command::Replay(_)) {
        return Err(CliError::config("manifest", "refusing to replay a replay"));
    }
    cli.out = out.to_path_buf();
    if workers.is_some() {
        cli.workers = workers;
    }
    crate::run(cli, m.argv)
}

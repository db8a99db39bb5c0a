use iqpbm::mmd::{loss_exact_subsets, loss_gradient, loss_mc};
use iqpbm::stats::SampleMoments;
use iqpbm::topology::make_graph;
use iqpbm::train::train;
use iqpbm::{
    GeneratorIndex, GraphKind, InitStrategy, InitVariant, InteractionGraph, LossEngine, MmdConfig,
    ParamVector, PatchSampler, SynthSpec, TargetStats, TrainConfig, ZEngine,
};

fn problem(n: usize) -> (InteractionGraph, GeneratorIndex, ParamVector, TargetStats) {
    let g = make_graph(&GraphKind::AllToAll, n).unwrap();
    let idx = GeneratorIndex::from_graph(&g);
    let th = ParamVector::new(
        (0..idx.m())
            .map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5)
            .collect(),
    )
    .unwrap();
    let data = SynthSpec::parse("pairwise:default", Some(n))
        .unwrap()
        .with_columns(n)
        .unwrap()
        .generate()
        .unwrap();
    (g, idx, th, TargetStats::empirical(data).unwrap())
}

#[test]
fn stochastic_loss_is_unbiased() {
    let (g, idx, th, target) = problem(6);
    let cfg = MmdConfig::new(1.0, 6).unwrap();
    let exact = loss_exact_subsets(&g, &idx, &th, &target, &cfg).unwrap();
    for z in [ZEngine::LightCone, ZEngine::monte_carlo(64)] {
        let v: Vec<f64> = (0..400)
            .map(|s| {
                loss_mc(&g, &idx, &th, &target, &cfg, 200, &z, s)
                    .unwrap()
                    .value
            })
            .collect();
        let m = SampleMoments::from_slice(&v);
        let se = m.se_mean;
        assert!(
            (m.mean - exact).abs() < 4.0 * se,
            "{z:?}: {} vs {exact} (se {se})",
            m.mean
        );
    }
}

#[test]
fn reported_standard_error_matches_spread() {
    let (g, idx, th, target) = problem(6);
    let cfg = MmdConfig::new(1.0, 6).unwrap();
    let runs: Vec<_> = (0..300)
        .map(|s| {
            loss_mc(
                &g,
                &idx,
                &th,
                &target,
                &cfg,
                500,
                &ZEngine::LightCone,
                1000 + s,
            )
            .unwrap()
        })
        .collect();
    let v: Vec<f64> = runs.iter().map(|r| r.value).collect();
    let spread = SampleMoments::from_slice(&v).variance.sqrt();
    let reported = runs.iter().map(|r| r.std_error).sum::<f64>() / runs.len() as f64;
    assert!(
        (reported / spread - 1.0).abs() < 0.2,
        "{reported} vs {spread}"
    );
}

#[test]
fn stochastic_gradient_is_unbiased() {
    let (g, idx, th, target) = problem(5);
    let cfg = MmdConfig::new(1.0, 5).unwrap();
    let exact = loss_gradient(&g, &idx, &th, &target, &cfg, &LossEngine::ExactSubsets, 0).unwrap();
    let engine = LossEngine::Stochastic {
        subsets: 300,
        z: ZEngine::LightCone,
    };
    let draws: Vec<Vec<f64>> = (0..300)
        .map(|s| {
            loss_gradient(&g, &idx, &th, &target, &cfg, &engine, s)
                .unwrap()
                .values
        })
        .collect();
    for alpha in 0..idx.m() {
        let col: Vec<f64> = draws.iter().map(|d| d[alpha]).collect();
        let m = SampleMoments::from_slice(&col);
        let se = m.se_mean;
        assert!(
            (m.mean - exact.values[alpha]).abs() < 4.5 * se + 1e-12,
            "alpha {alpha}"
        );
    }
}

#[test]
fn training_is_reproducible_and_descends() {
    let (g, idx, _, target) = problem(6);
    let cfg = MmdConfig::low_body(6).unwrap();
    let s = PatchSampler::new(
        &InitStrategy::new(InitVariant::MarginalMatch, 0.2).unwrap(),
        &g,
        &idx,
        Some(&target),
    )
    .unwrap();
    let init = s.draw(9);
    let mut tcfg = TrainConfig::new(
        LossEngine::Stochastic {
            subsets: 200,
            z: ZEngine::LightCone,
        },
        4,
    );
    tcfg.steps = 60;
    tcfg.learning_rate = 1.0;
    tcfg.eval_engine = Some(LossEngine::ExactKernel);
    tcfg.eval_every = 20;
    let a = train(&g, &idx, &init, &target, &cfg, &tcfg).unwrap();
    let b = train(&g, &idx, &init, &target, &cfg, &tcfg).unwrap();
    assert_eq!(a.final_params, b.final_params);
    let la: Vec<f64> = a.records.iter().map(|r| r.loss).collect();
    let lb: Vec<f64> = b.records.iter().map(|r| r.loss).collect();
    assert_eq!(la, lb);
    assert_eq!(
        a.records.iter().map(|r| r.step).collect::<Vec<_>>(),
        vec![0, 20, 40, 60]
    );
    assert!(la.last().unwrap() < &la[0]);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let c = pool.install(|| train(&g, &idx, &init, &target, &cfg, &tcfg).unwrap());
    assert_eq!(a.final_params, c.final_params);
}

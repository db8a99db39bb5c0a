//! Python bindings: graphs, targets, correlators, the MMD loss and its
//! derivatives, initialization patches, variance scans and training.

use iqpbm_core as core;
use iqpbm_core::{
    GeneratorIndex, GraphKind, InitStrategy, InitVariant, InteractionGraph, LossEngine, MmdConfig,
    ParamVector, PatchSampler, QubitSubset, SynthSpec, TargetStats, TrainConfig, ZEngine,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::Diverged(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn engine_from(desc: &str) -> PyResult<LossEngine> {
    let bad = || PyValueError::new_err(format!("unknown engine {desc:?}"));
    match desc {
        "exact-subsets" => Ok(LossEngine::ExactSubsets),
        "exact-kernel" => Ok(LossEngine::ExactKernel),
        _ => {
            let parts: Vec<&str> = desc.split(':').collect();
            if parts[0] != "stochastic" || !(2..=3).contains(&parts.len()) {
                return Err(bad());
            }
            let subsets = parts[1].parse().map_err(|_| bad())?;
            let z = match parts.get(2).copied().unwrap_or("light-cone") {
                "light-cone" => ZEngine::LightCone,
                "exact" => ZEngine::exact(),
                mc => ZEngine::monte_carlo(
                    mc.strip_prefix("mc")
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(bad)?,
                ),
            };
            Ok(LossEngine::Stochastic { subsets, z })
        }
    }
}

fn subset(n: usize, qubits: Vec<usize>) -> PyResult<QubitSubset> {
    QubitSubset::from_indices(n, qubits).map_err(err)
}

/// Interaction graph with its generator ordering (singles, then edges).
#[pyclass(module = "iqpbm", frozen)]
struct Graph {
    g: InteractionGraph,
    idx: GeneratorIndex,
}

impl Graph {
    fn wrap(g: InteractionGraph) -> Self {
        let idx = GeneratorIndex::from_graph(&g);
        Self { g, idx }
    }

    fn theta(&self, theta: Vec<f64>) -> PyResult<ParamVector> {
        ParamVector::for_index(&self.idx, theta).map_err(err)
    }
}

#[pymethods]
impl Graph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(Self::wrap(InteractionGraph::new(n, &edges).map_err(err)?))
    }

    /// `all_to_all`, `ring`, `edgeless` or `kregular` (with `degree`, `seed`).
    #[staticmethod]
    #[pyo3(signature = (kind, n, degree=None, seed=0))]
    fn make(kind: &str, n: usize, degree: Option<usize>, seed: u64) -> PyResult<Self> {
        let kind = match kind {
            "all_to_all" => GraphKind::AllToAll,
            "ring" => GraphKind::Ring,
            "edgeless" => GraphKind::Edgeless,
            "kregular" => GraphKind::KRegular {
                degree: degree.ok_or_else(|| PyValueError::new_err("kregular needs degree"))?,
                seed,
            },
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown graph kind {other:?}"
                )))
            }
        };
        Ok(Self::wrap(
            core::topology::make_graph(&kind, n).map_err(err)?,
        ))
    }

    #[getter]
    fn n(&self) -> usize {
        self.g.n()
    }

    /// Number of parameters `n + |E|`.
    #[getter]
    fn m(&self) -> usize {
        self.idx.m()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.g.edges().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, edges={})", self.g.n(), self.g.edges().len())
    }
}

/// Target statistics `t_A`.
#[pyclass(module = "iqpbm", frozen)]
struct Target {
    t: TargetStats,
}

#[pymethods]
impl Target {
    /// Empirical target from 0/1 rows.
    #[staticmethod]
    fn from_rows(rows: Vec<Vec<u8>>) -> PyResult<Self> {
        let n = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| PyValueError::new_err("no rows"))?;
        let text: String = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&b| if b == 0 { '0' } else { '1' })
                    .chain(['\n'])
                    .collect::<String>()
            })
            .collect();
        let data =
            core::BitDataset::from_text(&format!("#n={n}\n{text}"), "python").map_err(err)?;
        Ok(Self {
            t: TargetStats::empirical(data).map_err(err)?,
        })
    }

    /// Exact target from a probability table indexed by bit string (qubit 0 is bit 0).
    #[staticmethod]
    fn from_table(n: usize, probs: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            t: TargetStats::exact(core::DistributionTable::new(n, probs).map_err(err)?),
        })
    }

    /// Independent bits with `<Z_j> = marginals[j]`.
    #[staticmethod]
    fn product(marginals: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            t: TargetStats::product(marginals).map_err(err)?,
        })
    }

    /// Synthetic data from a descriptor such as `product:t=0.3,n=6` or `pairwise:default`.
    #[staticmethod]
    #[pyo3(signature = (desc, n=None))]
    fn synth(desc: &str, n: Option<usize>) -> PyResult<Self> {
        let mut data = SynthSpec::parse(desc, n)
            .map_err(err)?
            .generate()
            .map_err(err)?;
        if let Some(k) = n {
            if k < data.n() {
                data = data.prefix_columns(k).map_err(err)?;
            }
        }
        Ok(Self {
            t: TargetStats::empirical(data).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.t.n()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.t.kind()
    }

    fn t(&self, qubits: Vec<usize>) -> PyResult<f64> {
        self.t.t_of(&subset(self.t.n(), qubits)?).map_err(err)
    }

    fn marginals(&self) -> Vec<f64> {
        self.t.marginals()
    }

    /// Table of the exact or histogram distribution; product targets expand to `2^n`.
    fn to_table(&self) -> PyResult<Vec<f64>> {
        Ok(self.t.to_table().map_err(err)?.probs().to_vec())
    }
}

/// `<Z_A>` of the IQP circuit. `engine` is `light-cone`, `exact` or `mc<N>`.
#[pyfunction]
#[pyo3(signature = (graph, theta, qubits, engine="light-cone", seed=0))]
fn z(
    graph: &Graph,
    theta: Vec<f64>,
    qubits: Vec<usize>,
    engine: &str,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let th = graph.theta(theta)?;
    let a = subset(graph.g.n(), qubits)?;
    let eng = match engine {
        "light-cone" => ZEngine::LightCone,
        "exact" => ZEngine::exact(),
        mc => ZEngine::monte_carlo(
            mc.strip_prefix("mc")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| PyValueError::new_err(format!("unknown engine {mc:?}")))?,
        ),
    };
    let ev = core::correlators::evaluate(&graph.g, &graph.idx, &th, &a, &eng, seed, false)
        .map_err(err)?;
    Ok((ev.value, ev.std_error))
}

/// Full output distribution of the circuit (statevector; small `n` only).
#[pyfunction]
fn model_distribution(graph: &Graph, theta: Vec<f64>) -> PyResult<Vec<f64>> {
    let state =
        core::oracle::build_state(&graph.g, &graph.idx, &graph.theta(theta)?).map_err(err)?;
    Ok(core::oracle::model_distribution(&state).probs().to_vec())
}

/// Bit strings sampled from the circuit, as 0/1 rows.
#[pyfunction]
#[pyo3(signature = (graph, theta, count, seed=0))]
fn sample(graph: &Graph, theta: Vec<f64>, count: usize, seed: u64) -> PyResult<Vec<Vec<u8>>> {
    let state =
        core::oracle::build_state(&graph.g, &graph.idx, &graph.theta(theta)?).map_err(err)?;
    let data = core::oracle::sample(&core::oracle::model_distribution(&state), count, seed)
        .map_err(err)?;
    let n = data.n();
    Ok((0..data.rows())
        .map(|r| (0..n).map(|j| data.bit(r, j) as u8).collect())
        .collect())
}

fn mmd_cfg(sigma: Option<f64>, n: usize) -> PyResult<MmdConfig> {
    match sigma {
        Some(s) => MmdConfig::new(s, n),
        None => MmdConfig::low_body(n),
    }
    .map_err(err)
}

/// Loss value and standard error. `sigma` defaults to `sqrt(n)`.
#[pyfunction]
#[pyo3(signature = (graph, theta, target, sigma=None, engine="exact-subsets", seed=0))]
fn loss(
    graph: &Graph,
    theta: Vec<f64>,
    target: &Target,
    sigma: Option<f64>,
    engine: &str,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let cfg = mmd_cfg(sigma, graph.g.n())?;
    let est = core::mmd::loss(
        &graph.g,
        &graph.idx,
        &graph.theta(theta)?,
        &target.t,
        &cfg,
        &engine_from(engine)?,
        seed,
    )
    .map_err(err)?;
    Ok((est.value, est.std_error))
}

/// Gradient values and per-component standard errors.
#[pyfunction]
#[pyo3(signature = (graph, theta, target, sigma=None, engine="exact-subsets", seed=0))]
fn gradient(
    graph: &Graph,
    theta: Vec<f64>,
    target: &Target,
    sigma: Option<f64>,
    engine: &str,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = mmd_cfg(sigma, graph.g.n())?;
    let g = core::mmd::loss_gradient(
        &graph.g,
        &graph.idx,
        &graph.theta(theta)?,
        &target.t,
        &cfg,
        &engine_from(engine)?,
        seed,
    )
    .map_err(err)?;
    Ok((g.values, g.std_errors))
}

/// `(total, mismatch, sensitivity)` of `∂²L/∂θ_α²`.
#[pyfunction]
#[pyo3(signature = (graph, theta, target, alpha, sigma=None))]
fn curvature(
    graph: &Graph,
    theta: Vec<f64>,
    target: &Target,
    alpha: usize,
    sigma: Option<f64>,
) -> PyResult<(f64, f64, f64)> {
    let cfg = mmd_cfg(sigma, graph.g.n())?;
    let c = core::mmd::curvature(
        &graph.g,
        &graph.idx,
        &graph.theta(theta)?,
        &target.t,
        &cfg,
        alpha,
    )
    .map_err(err)?;
    Ok((c.total, c.mismatch, c.sensitivity))
}

fn strategy(name: &str, scale: f64) -> PyResult<InitStrategy> {
    let v: InitVariant = name.parse().map_err(err)?;
    InitStrategy::new(v, scale).map_err(err)
}

fn sampler(
    graph: &Graph,
    name: &str,
    scale: f64,
    target: Option<&Target>,
) -> PyResult<PatchSampler> {
    PatchSampler::new(
        &strategy(name, scale)?,
        &graph.g,
        &graph.idx,
        target.map(|t| &t.t),
    )
    .map_err(err)
}

/// Center of an initialization strategy (`full`, `identity`, `unbiased`, `marginal`, `covariance`).
#[pyfunction]
#[pyo3(signature = (graph, strategy, target=None))]
fn init_center(graph: &Graph, strategy: &str, target: Option<&Target>) -> PyResult<Vec<f64>> {
    Ok(sampler(graph, strategy, 0.0, target)?.center.into_vec())
}

/// One uniform draw from the patch of half-width `(π/2) scale` around the center.
#[pyfunction]
#[pyo3(signature = (graph, strategy, scale, target=None, seed=0))]
fn init_draw(
    graph: &Graph,
    strategy: &str,
    scale: f64,
    target: Option<&Target>,
    seed: u64,
) -> PyResult<Vec<f64>> {
    Ok(sampler(graph, strategy, scale, target)?
        .sample(seed)
        .into_vec())
}

/// Rows `(scale, mean, var, se)` of loss variance over patch draws.
#[pyfunction]
#[pyo3(signature = (graph, target, strategy, scales, draws, sigma=None, engine="exact-kernel", seed=0))]
#[allow(clippy::too_many_arguments)]
fn variance_scan(
    graph: &Graph,
    target: &Target,
    strategy: &str,
    scales: Vec<f64>,
    draws: usize,
    sigma: Option<f64>,
    engine: &str,
    seed: u64,
) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let cfg = mmd_cfg(sigma, graph.g.n())?;
    let v: InitVariant = strategy.parse().map_err(err)?;
    let scan = core::analysis::variance_scan(
        v,
        &graph.g,
        &graph.idx,
        &target.t,
        &cfg,
        &scales,
        draws,
        &engine_from(engine)?,
        seed,
    )
    .map_err(err)?;
    Ok(scan
        .rows
        .iter()
        .map(|r| (r.scale, r.mean, r.var, r.se))
        .collect())
}

/// Gradient descent from `theta`; returns `(trace, final_theta)` with trace rows `(step, loss, se)`.
#[pyfunction]
#[pyo3(signature = (graph, theta, target, steps=300, learning_rate=0.05, sigma=None, engine="exact-kernel", adam=false, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train(
    graph: &Graph,
    theta: Vec<f64>,
    target: &Target,
    steps: usize,
    learning_rate: f64,
    sigma: Option<f64>,
    engine: &str,
    adam: bool,
    seed: u64,
) -> PyResult<(Vec<(usize, f64, f64)>, Vec<f64>)> {
    let cfg = mmd_cfg(sigma, graph.g.n())?;
    let th = graph.theta(theta)?;
    let init = core::PatchDraw {
        center: th.clone(),
        sample: th,
        seed,
        radii: vec![0.0; graph.idx.m()],
    };
    let mut tcfg = TrainConfig::new(engine_from(engine)?, seed);
    tcfg.steps = steps;
    tcfg.learning_rate = learning_rate;
    if adam {
        tcfg.optimizer = core::train::Optimizer::adam();
    }
    let trace =
        core::train::train(&graph.g, &graph.idx, &init, &target.t, &cfg, &tcfg).map_err(err)?;
    Ok((
        trace
            .records
            .iter()
            .map(|r| (r.step, r.loss, r.se))
            .collect(),
        trace.final_params.into_vec(),
    ))
}

#[pymodule]
fn iqpbm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_class::<Target>()?;
    m.add_function(wrap_pyfunction!(z, m)?)?;
    m.add_function(wrap_pyfunction!(model_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(curvature, m)?)?;
    m.add_function(wrap_pyfunction!(init_center, m)?)?;
    m.add_function(wrap_pyfunction!(init_draw, m)?)?;
    m.add_function(wrap_pyfunction!(variance_scan, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

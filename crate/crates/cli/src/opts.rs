use std::path::PathBuf;

use clap::Args;
use iqpbm::{
    BitDataset, GeneratorIndex, GraphKind, InteractionGraph, LossEngine, MmdConfig, SynthSpec,
    TargetStats, ZEngine,
};
use serde::Serialize;

use crate::CliError;

/// Register width of a `product:` synthetic target given without `n`.
pub const DEFAULT_PRODUCT_N: usize = 8;

#[derive(Args, Clone, Debug, Serialize)]
pub struct ProblemArgs {
    /// Number of qubits (leading data columns); defaults to the data width.
    #[arg(long)]
    pub n: Option<usize>,
    /// all_to_all, ring, edgeless, kregular:<k>[:<seed>] or file:<path>.
    #[arg(long, default_value = "all_to_all")]
    pub graph: String,
    /// Bit-string file: optional `#n=<n>` header, one row of 0/1 per line.
    #[arg(long, conflicts_with = "synth")]
    pub data: Option<PathBuf>,
    /// product:t=<v>[,n=..,rows=..,seed=..], product:low=<a>,high=<b>[,...],
    /// pairwise:default[,...] or pairwise:profile=<path>[,...].
    /// Without --data or --synth the shipped pairwise profile is used.
    #[arg(long)]
    pub synth: Option<String>,
    /// Target statistics backend: empirical, exact (histogram table) or product.
    #[arg(long, default_value = "empirical")]
    pub backend: String,
    /// Kernel bandwidth: sqrt (σ = √n), const:<v> or a number.
    #[arg(long, default_value = "sqrt")]
    pub sigma: String,
}

pub struct Problem {
    pub g: InteractionGraph,
    pub idx: GeneratorIndex,
    pub target: TargetStats,
    pub cfg: MmdConfig,
}

impl ProblemArgs {
    pub fn load_data(&self) -> Result<BitDataset, CliError> {
        let data = match (&self.data, &self.synth) {
            (Some(p), _) => BitDataset::read(p)?,
            (None, desc) => {
                let desc = desc.as_deref().unwrap_or("pairwise:default");
                let default_n = match self.n {
                    Some(n) => Some(n),
                    None if desc.starts_with("product") => Some(DEFAULT_PRODUCT_N),
                    None => None,
                };
                SynthSpec::parse(desc, default_n)?.generate()?
            }
        };
        let n = self.n.unwrap_or(data.n());
        if n == 0 {
            return Err(CliError::config("n", "must be at least 1"));
        }
        if n > data.n() {
            return Err(CliError::config(
                "n",
                format!("data has only {} columns, asked for {n}", data.n()),
            ));
        }
        Ok(if n < data.n() {
            data.prefix_columns(n)?
        } else {
            data
        })
    }

    pub fn load_target(&self) -> Result<TargetStats, CliError> {
        let data = self.load_data()?;
        match self.backend.as_str() {
            "empirical" => Ok(TargetStats::empirical(data)?),
            "exact" => Ok(TargetStats::exact(data.histogram()?)),
            "product" => {
                let t = TargetStats::empirical(data)?.marginals();
                Ok(TargetStats::product(t)?)
            }
            other => Err(CliError::config(
                "backend",
                format!("expected empirical, exact or product, got {other:?}"),
            )),
        }
    }

    pub fn build(&self) -> Result<Problem, CliError> {
        let target = self.load_target()?;
        let n = target.n();
        let g = parse_graph(&self.graph, n)?;
        let idx = GeneratorIndex::from_graph(&g);
        let cfg = parse_sigma(&self.sigma, n)?;
        Ok(Problem {
            g,
            idx,
            target,
            cfg,
        })
    }
}

pub fn parse_graph(desc: &str, n: usize) -> Result<InteractionGraph, CliError> {
    let kind = match desc.split(':').collect::<Vec<_>>().as_slice() {
        ["all_to_all"] | ["all-to-all"] => GraphKind::AllToAll,
        ["ring"] => GraphKind::Ring,
        ["edgeless"] => GraphKind::Edgeless,
        ["kregular", k] | ["kregular", k, _] => {
            let degree = k
                .parse()
                .map_err(|e| CliError::config("graph", format!("degree {k:?}: {e}")))?;
            let seed = match desc.splitn(3, ':').nth(2) {
                Some(s) => s
                    .parse()
                    .map_err(|e| CliError::config("graph", format!("seed {s:?}: {e}")))?,
                None => 0,
            };
            GraphKind::KRegular { degree, seed }
        }
        ["file", ..] => {
            let path = &desc["file:".len()..];
            let g = InteractionGraph::read(path)?;
            if g.n() != n {
                return Err(CliError::config(
                    "graph",
                    format!("graph file has n = {}, target has n = {n}", g.n()),
                ));
            }
            return Ok(g);
        }
        _ => {
            return Err(CliError::config(
                "graph",
                format!("unknown graph {desc:?} (all_to_all, ring, edgeless, kregular:<k>[:<seed>], file:<path>)"),
            ))
        }
    };
    Ok(iqpbm::topology::make_graph(&kind, n)?)
}

pub fn parse_sigma(desc: &str, n: usize) -> Result<MmdConfig, CliError> {
    if desc == "sqrt" {
        return Ok(MmdConfig::low_body(n)?);
    }
    let v = desc.strip_prefix("const:").unwrap_or(desc);
    let sigma: f64 = v.parse().map_err(|_| {
        CliError::config(
            "sigma",
            format!("expected sqrt, const:<v> or a number, got {desc:?}"),
        )
    })?;
    Ok(MmdConfig::new(sigma, n)?)
}

/// `log:a..b[:k]` or `lin:a..b[:k]`, `k` defaulting to 20, or a comma list.
pub fn parse_scales(desc: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::config("scales", format!("{why} in {desc:?}"));
    let (kind, rest) = match desc.split_once(':') {
        Some((k @ ("log" | "lin"), r)) => (k, r),
        _ => {
            return desc
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| bad("bad number")))
                .collect();
        }
    };
    let (range, k) = match rest.rsplit_once(':') {
        Some((r, k)) => (r, k.parse::<usize>().map_err(|_| bad("bad point count"))?),
        None => (rest, 20),
    };
    let (a, b) = range.split_once("..").ok_or_else(|| bad("missing `..`"))?;
    let a: f64 = a.parse().map_err(|_| bad("bad lower end"))?;
    let b: f64 = b.parse().map_err(|_| bad("bad upper end"))?;
    if k < 1 || !(a <= b) {
        return Err(bad("need k >= 1 and a <= b"));
    }
    if kind == "log" && !(a > 0.0) {
        return Err(bad("log grid needs a positive lower end"));
    }
    let frac = |i: usize| {
        if k == 1 {
            0.0
        } else {
            i as f64 / (k - 1) as f64
        }
    };
    Ok((0..k)
        .map(|i| match kind {
            "log" => (a.ln() + (b.ln() - a.ln()) * frac(i)).exp(),
            _ => a + (b - a) * frac(i),
        })
        .collect())
}

/// `exact-subsets`, `exact-kernel`, `stochastic:<K>[:<z>]` with `z` one of
/// `light-cone` (default), `exact` or `mc<N>`; `auto` picks by `n`.
pub fn parse_engine(desc: &str, n: usize) -> Result<LossEngine, CliError> {
    let bad = |why: String| CliError::config("engine", why);
    match desc {
        "exact-subsets" => Ok(LossEngine::ExactSubsets),
        "exact-kernel" => Ok(LossEngine::ExactKernel),
        "auto" if n <= iqpbm::mmd::EXACT_SUBSET_LIMIT => Ok(LossEngine::ExactKernel),
        "auto" => Ok(LossEngine::Stochastic {
            subsets: 1000,
            z: ZEngine::LightCone,
        }),
        _ => {
            let parts: Vec<&str> = desc.split(':').collect();
            if parts[0] != "stochastic" || parts.len() < 2 || parts.len() > 3 {
                return Err(bad(format!("unknown engine {desc:?}")));
            }
            let subsets: u64 = parts[1]
                .parse()
                .map_err(|_| bad(format!("bad subset count {:?}", parts[1])))?;
            let z = match parts.get(2).copied().unwrap_or("light-cone") {
                "light-cone" => ZEngine::LightCone,
                "exact" => ZEngine::exact(),
                mc => {
                    let k = mc
                        .strip_prefix("mc")
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(format!("bad correlator engine {mc:?}")))?;
                    ZEngine::monte_carlo(k)
                }
            };
            Ok(LossEngine::Stochastic { subsets, z })
        }
    }
}

//! Bit-string datasets, target correlators and synthetic targets.
//!
//! Bit value `b` contributes `(-1)^b` to a parity, so `0 ↦ +1`. For an
//! empirical target, half `A` holds the even-numbered rows and half `B` the
//! odd-numbered ones.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{OnceLock, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::oracle::{fwht, DistributionTable};
use crate::rng;
use crate::topology::QubitSubset;

/// Rows of `n` bits, packed row-major into 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitDataset {
    n: usize,
    words_per_row: usize,
    data: Vec<u64>,
    provenance: String,
}

impl BitDataset {
    pub fn new(n: usize, provenance: impl Into<String>) -> Self {
        Self {
            n,
            words_per_row: n.div_ceil(64),
            data: Vec::new(),
            provenance: provenance.into(),
        }
    }

    /// Rows given as integers (bit `i` is qubit `i`); requires `n <= 64`.
    pub fn from_indices(n: usize, rows: &[u64], provenance: impl Into<String>) -> Result<Self> {
        if n > 64 {
            return Err(Error::Config("integer rows need n <= 64".into()));
        }
        let mut d = Self::new(n, provenance);
        for &r in rows {
            if n < 64 && r >> n != 0 {
                return Err(Error::Data(format!("row {r} has bits beyond n = {n}")));
            }
            d.data.push(r);
        }
        Ok(d)
    }

    pub fn push_row(&mut self, words: &[u64]) -> Result<()> {
        check_dim(self.words_per_row, words.len())?;
        self.data.extend_from_slice(words);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        if self.words_per_row == 0 {
            0
        } else {
            self.data.len() / self.words_per_row
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows() == 0
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn set_provenance(&mut self, p: impl Into<String>) {
        self.provenance = p.into();
    }

    pub fn row(&self, r: usize) -> &[u64] {
        &self.data[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    pub fn row_index(&self, r: usize) -> u64 {
        self.row(r)[0]
    }

    pub fn bit(&self, r: usize, j: usize) -> bool {
        (self.row(r)[j >> 6] >> (j & 63)) & 1 == 1
    }

    /// Dataset restricted to the first `k` columns.
    pub fn prefix_columns(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n {
            return Err(Error::Config(format!(
                "cannot keep {k} of {} columns",
                self.n
            )));
        }
        let mut out = Self::new(k, format!("{}[:{k}]", self.provenance));
        let wk = k.div_ceil(64);
        let mut buf = vec![0u64; wk];
        for r in 0..self.rows() {
            buf.copy_from_slice(&self.row(r)[..wk]);
            if k % 64 != 0 {
                buf[wk - 1] &= (1u64 << (k % 64)) - 1;
            }
            out.data.extend_from_slice(&buf);
        }
        Ok(out)
    }

    /// Empirical distribution over `2^n` strings.
    pub fn histogram(&self) -> Result<DistributionTable> {
        if self.n > crate::oracle::DEFAULT_ORACLE_LIMIT {
            return Err(Error::Capacity {
                what: "dataset histogram",
                n: self.n,
                limit: crate::oracle::DEFAULT_ORACLE_LIMIT,
            });
        }
        if self.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        let mut probs = vec![0.0; 1 << self.n];
        let w = 1.0 / self.rows() as f64;
        for r in 0..self.rows() {
            probs[self.row_index(r) as usize] += w;
        }
        DistributionTable::new(self.n, probs)
    }

    /// Text format: optional `#n=<int>` line, then one `0`/`1` string per row.
    pub fn from_text(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let mut declared: Option<usize> = None;
        let mut rows: Vec<&str> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix("#n=") {
                if i == 0 || rows.is_empty() {
                    declared = Some(
                        rest.trim()
                            .parse()
                            .map_err(|e| Error::Data(format!("bad header: {e}")))?,
                    );
                    continue;
                }
            }
            if t.starts_with('#') {
                continue;
            }
            rows.push(t);
        }
        let n = match (declared, rows.first()) {
            (Some(n), _) => n,
            (None, Some(r)) => r.len(),
            (None, None) => return Err(Error::Data("dataset has no rows".into())),
        };
        if n == 0 {
            return Err(Error::Data("dataset width is zero".into()));
        }
        let mut d = Self::new(n, provenance);
        let mut buf = vec![0u64; d.words_per_row];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Data(format!(
                    "row {} has length {}, expected {n}",
                    r + 1,
                    row.len()
                )));
            }
            buf.fill(0);
            for (j, c) in row.bytes().enumerate() {
                match c {
                    b'0' => {}
                    b'1' => buf[j >> 6] |= 1 << (j & 63),
                    _ => {
                        return Err(Error::Data(format!(
                            "row {} contains {:?}",
                            r + 1,
                            c as char
                        )))
                    }
                }
            }
            d.data.extend_from_slice(&buf);
        }
        Ok(d)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.rows() * (self.n + 1) + 16);
        s.push_str(&format!("#n={}\n", self.n));
        for r in 0..self.rows() {
            for j in 0..self.n {
                s.push(if self.bit(r, j) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        Self::from_text(&std::fs::read_to_string(p)?, p.display().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Which rows of an empirical target a query uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Half {
    Full,
    A,
    B,
}

/// Column-major bit matrix: one bitset over rows per qubit.
#[derive(Debug)]
struct Columns {
    rows: usize,
    words: usize,
    bits: Vec<u64>,
}

impl Columns {
    fn build(data: &BitDataset, parity: Option<usize>) -> Self {
        let picked: Vec<usize> = (0..data.rows())
            .filter(|r| parity.is_none_or(|p| r % 2 == p))
            .collect();
        let rows = picked.len();
        let words = rows.div_ceil(64).max(1);
        let mut bits = vec![0u64; words * data.n()];
        for (i, &r) in picked.iter().enumerate() {
            let row = data.row(r);
            for j in 0..data.n() {
                if (row[j >> 6] >> (j & 63)) & 1 == 1 {
                    bits[j * words + (i >> 6)] |= 1 << (i & 63);
                }
            }
        }
        Self { rows, words, bits }
    }

    /// Number of rows whose parity over `A` is odd.
    fn odd_count(&self, a: &QubitSubset) -> u64 {
        let mut acc = vec![0u64; self.words];
        for j in a.iter() {
            let col = &self.bits[j * self.words..(j + 1) * self.words];
            for (x, c) in acc.iter_mut().zip(col) {
                *x ^= c;
            }
        }
        acc.iter().map(|w| w.count_ones() as u64).sum()
    }
}

enum Backend {
    Empirical {
        data: BitDataset,
        half_a: Columns,
        half_b: Columns,
        memo: RwLock<HashMap<QubitSubset, (u64, u64)>>,
    },
    Exact {
        table: DistributionTable,
        correlators: OnceLock<Vec<f64>>,
    },
    Product(Vec<f64>),
}

/// Provider of target correlators `t_A`.
pub struct TargetStats {
    n: usize,
    backend: Backend,
}

impl std::fmt::Debug for TargetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TargetStats({}, n = {})", self.kind(), self.n)
    }
}

impl TargetStats {
    pub fn empirical(data: BitDataset) -> Result<Self> {
        if data.rows() < 2 {
            return Err(Error::Data(format!(
                "empirical target needs at least 2 rows, got {}",
                data.rows()
            )));
        }
        Ok(Self {
            n: data.n(),
            backend: Backend::Empirical {
                half_a: Columns::build(&data, Some(0)),
                half_b: Columns::build(&data, Some(1)),
                data,
                memo: RwLock::new(HashMap::new()),
            },
        })
    }

    pub fn exact(table: DistributionTable) -> Self {
        Self {
            n: table.n(),
            backend: Backend::Exact {
                table,
                correlators: OnceLock::new(),
            },
        }
    }

    pub fn product(marginals: Vec<f64>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::Data(
                "product target needs at least one marginal".into(),
            ));
        }
        if let Some(j) = marginals.iter().position(|t| !(t.abs() <= 1.0)) {
            return Err(Error::Data(format!(
                "marginal t_{j} = {} outside [-1, 1]",
                marginals[j]
            )));
        }
        Ok(Self {
            n: marginals.len(),
            backend: Backend::Product(marginals),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &'static str {
        match self.backend {
            Backend::Empirical { .. } => "empirical",
            Backend::Exact { .. } => "exact",
            Backend::Product(_) => "product",
        }
    }

    pub fn dataset(&self) -> Option<&BitDataset> {
        match &self.backend {
            Backend::Empirical { data, .. } => Some(data),
            _ => None,
        }
    }

    /// `t_A` over the full target.
    pub fn t_of(&self, a: &QubitSubset) -> Result<f64> {
        self.t_of_half(a, Half::Full)
    }

    /// `t_A` over one half of an empirical target; other backends ignore `half`.
    pub fn t_of_half(&self, a: &QubitSubset, half: Half) -> Result<f64> {
        check_dim(self.n, a.n())?;
        if a.is_empty() {
            return Ok(1.0);
        }
        match &self.backend {
            Backend::Product(t) => Ok(a.iter().map(|j| t[j]).product()),
            Backend::Exact { table, correlators } => {
                let c = correlators.get_or_init(|| table.correlators());
                Ok(c[a.mask() as usize])
            }
            Backend::Empirical {
                half_a,
                half_b,
                memo,
                ..
            } => {
                let cached = memo.read().expect("memo lock").get(a).copied();
                let (oa, ob) = match cached {
                    Some(v) => v,
                    None => {
                        let v = (half_a.odd_count(a), half_b.odd_count(a));
                        memo.write().expect("memo lock").insert(a.clone(), v);
                        v
                    }
                };
                let (odd, rows) = match half {
                    Half::Full => (oa + ob, half_a.rows + half_b.rows),
                    Half::A => (oa, half_a.rows),
                    Half::B => (ob, half_b.rows),
                };
                Ok(1.0 - 2.0 * odd as f64 / rows as f64)
            }
        }
    }

    /// `t_A` without touching the memo table (for bulk enumeration).
    pub fn t_of_uncached(&self, a: &QubitSubset) -> Result<f64> {
        check_dim(self.n, a.n())?;
        match &self.backend {
            Backend::Empirical { half_a, half_b, .. } if !a.is_empty() => {
                let odd = half_a.odd_count(a) + half_b.odd_count(a);
                Ok(1.0 - 2.0 * odd as f64 / (half_a.rows + half_b.rows) as f64)
            }
            _ => self.t_of(a),
        }
    }

    /// One-body correlators `t_j`.
    pub fn marginals(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| {
                self.t_of(&QubitSubset::singleton(self.n, j))
                    .expect("in range")
            })
            .collect()
    }

    /// The target as a probability table (small `n` only).
    pub fn to_table(&self) -> Result<DistributionTable> {
        match &self.backend {
            Backend::Exact { table, .. } => Ok(table.clone()),
            Backend::Empirical { data, .. } => data.histogram(),
            Backend::Product(t) => {
                let n = t.len();
                if n > crate::oracle::DEFAULT_ORACLE_LIMIT {
                    return Err(Error::Capacity {
                        what: "product target table",
                        n,
                        limit: crate::oracle::DEFAULT_ORACLE_LIMIT,
                    });
                }
                let mut probs = vec![1.0; 1 << n];
                for (x, p) in probs.iter_mut().enumerate() {
                    for (j, tj) in t.iter().enumerate() {
                        *p *= if (x >> j) & 1 == 0 {
                            (1.0 + tj) / 2.0
                        } else {
                            (1.0 - tj) / 2.0
                        };
                    }
                }
                DistributionTable::new(n, probs)
            }
        }
    }

    /// Correlators of every subset, indexed by mask (small `n` only).
    pub fn all_correlators(&self) -> Result<Vec<f64>> {
        match &self.backend {
            Backend::Exact { table, correlators } => {
                Ok(correlators.get_or_init(|| table.correlators()).clone())
            }
            _ => {
                let mut v = self.to_table()?.probs().to_vec();
                fwht(&mut v);
                Ok(v)
            }
        }
    }
}

/// `C_jk = t_jk - t_j t_k` for all pairs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceMatrix {
    pub n: usize,
    pub values: Vec<f64>,
    pub c_max: f64,
}

impl CovarianceMatrix {
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.n + k]
    }
}

pub fn covariances(stats: &TargetStats) -> Result<CovarianceMatrix> {
    let n = stats.n();
    let t = stats.marginals();
    let mut values = vec![0.0; n * n];
    let mut c_max = 0.0f64;
    for j in 0..n {
        for k in j + 1..n {
            let a = QubitSubset::from_indices(n, [j, k])?;
            let c = stats.t_of_uncached(&a)? - t[j] * t[k];
            values[j * n + k] = c;
            values[k * n + j] = c;
            c_max = c_max.max(c.abs());
        }
    }
    Ok(CovarianceMatrix { n, values, c_max })
}

/// Result of testing `|t_A - Π t_j| <= (C/n)^{|A|/2}` at one order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderCheck {
    pub order: usize,
    pub max_deviation: f64,
    pub worst_subset: Vec<usize>,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assumption1Report {
    pub c_const: f64,
    pub n: usize,
    pub orders: Vec<OrderCheck>,
    pub pass: bool,
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order.
pub fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        f(&c);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if c[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

pub fn check_assumption1(
    stats: &TargetStats,
    n: usize,
    c_const: f64,
    k_max: usize,
) -> Result<Assumption1Report> {
    check_dim(stats.n(), n)?;
    if !(c_const > 0.0) {
        return Err(Error::Config(
            "assumption constant C must be positive".into(),
        ));
    }
    let t = stats.marginals();
    let mut orders = Vec::new();
    for k in 2..=k_max.min(n) {
        let mut worst = (0.0f64, Vec::new());
        let mut err = None;
        for_each_combination(n, k, |c| {
            if err.is_some() {
                return;
            }
            let a = QubitSubset::from_indices(n, c.iter().copied()).expect("in range");
            match stats.t_of_uncached(&a) {
                Ok(ta) => {
                    let prod: f64 = c.iter().map(|&j| t[j]).product();
                    let d = (ta - prod).abs();
                    if d > worst.0 || worst.1.is_empty() {
                        worst = (d, c.to_vec());
                    }
                }
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let bound = (c_const / n as f64).powf(k as f64 / 2.0);
        orders.push(OrderCheck {
            order: k,
            max_deviation: worst.0,
            worst_subset: worst.1,
            bound,
            pass: worst.0 <= bound,
        });
    }
    let pass = orders.iter().all(|o| o.pass);
    Ok(Assumption1Report {
        c_const,
        n,
        orders,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assumption2Report {
    /// `1 - t_j^2` per qubit.
    pub values: Vec<f64>,
    pub max_value: f64,
    pub argmax: usize,
}

pub fn check_assumption2(stats: &TargetStats) -> Assumption2Report {
    let values: Vec<f64> = stats.marginals().iter().map(|t| 1.0 - t * t).collect();
    let (argmax, max_value) =
        values
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (j, v)| {
                    if v > acc.1 {
                        (j, v)
                    } else {
                        acc
                    }
                },
            );
    Assumption2Report {
        values,
        max_value,
        argmax,
    }
}

/// A planted correlated flip: one coin per row flips every listed bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedFlip {
    pub qubits: Vec<usize>,
    pub strength: f64,
}

fn validate_marginals(n: usize, t: &[f64]) -> Result<()> {
    if t.len() != n {
        return Err(Error::Config(format!(
            "expected {n} marginals, got {}",
            t.len()
        )));
    }
    if let Some(j) = t.iter().position(|x| !(x.abs() <= 1.0)) {
        return Err(Error::Config(format!(
            "marginal t_{j} = {} outside [-1, 1]",
            t[j]
        )));
    }
    Ok(())
}

/// Independent bits: bit `j` is 0 with probability `(1 + t_j) / 2`.
pub fn synth_product(n: usize, marginals: &[f64], rows: usize, seed: u64) -> Result<BitDataset> {
    synth_pairwise(n, marginals, &[], rows, seed).map(|mut d| {
        d.set_provenance(format!("synth-product(n={n},rows={rows},seed={seed})"));
        d
    })
}

/// Product base rows followed by planted XOR flips.
///
/// With base marginals `b_j` and flip probabilities `q_G`, the target
/// correlators are `t_A = Π_{j∈A} b_j · Π_{G: |G∩A| odd} (1 - 2 q_G)`.
pub fn synth_pairwise(
    n: usize,
    marginals: &[f64],
    planted: &[PlantedFlip],
    rows: usize,
    seed: u64,
) -> Result<BitDataset> {
    validate_marginals(n, marginals)?;
    for f in planted {
        if !(0.0..=1.0).contains(&f.strength) {
            return Err(Error::Config(format!(
                "flip strength {} outside [0, 1]",
                f.strength
            )));
        }
        if f.qubits.iter().any(|&q| q >= n) {
            return Err(Error::Config("planted flip references a qubit >= n".into()));
        }
    }
    let zero_prob: Vec<f64> = marginals.iter().map(|t| (1.0 + t) / 2.0).collect();
    let flip_masks: Vec<QubitSubset> = planted
        .iter()
        .map(|f| QubitSubset::from_indices(n, f.qubits.iter().copied()))
        .collect::<Result<_>>()?;
    let mut data = BitDataset::new(
        n,
        format!(
            "synth-pairwise(n={n},rows={rows},seed={seed},flips={})",
            planted.len()
        ),
    );
    let mut buf = vec![0u64; n.div_ceil(64)];
    let mut r = rng::stream(seed, &[rng::TAG_SYNTH]);
    for _ in 0..rows {
        buf.fill(0);
        for (j, &p0) in zero_prob.iter().enumerate() {
            if r.gen::<f64>() >= p0 {
                buf[j >> 6] |= 1 << (j & 63);
            }
        }
        for (f, mask) in planted.iter().zip(&flip_masks) {
            if r.gen::<f64>() < f.strength {
                for (b, m) in buf.iter_mut().zip(mask.words()) {
                    *b ^= m;
                }
            }
        }
        data.data.extend_from_slice(&buf);
    }
    Ok(data)
}

/// Exact correlator of the planted-flip model.
pub fn planted_correlator(marginals: &[f64], planted: &[PlantedFlip], a: &QubitSubset) -> f64 {
    let mut t: f64 = a.iter().map(|j| marginals[j]).product();
    for f in planted {
        let inside = f.qubits.iter().filter(|&&q| a.contains(q)).count();
        if inside % 2 == 1 {
            t *= 1.0 - 2.0 * f.strength;
        }
    }
    t
}

/// How marginals of a synthetic target are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalSpec {
    Constant { value: f64 },
    Uniform { low: f64, high: f64, seed: u64 },
    Explicit { values: Vec<f64> },
}

impl MarginalSpec {
    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        let v = match self {
            MarginalSpec::Constant { value } => vec![*value; n],
            MarginalSpec::Uniform { low, high, seed } => {
                if !(low <= high) {
                    return Err(Error::Config("marginal range has low > high".into()));
                }
                let mut r = rng::stream(*seed, &[rng::TAG_SYNTH, 1]);
                (0..n)
                    .map(|_| low + (high - low) * r.gen::<f64>())
                    .collect()
            }
            MarginalSpec::Explicit { values } => values.clone(),
        };
        validate_marginals(n, &v)?;
        Ok(v)
    }
}

/// Planted flips, either listed or tiled as windows of consecutive qubits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantedSpec {
    Flip {
        qubits: Vec<usize>,
        strength: f64,
    },
    Windows {
        width: usize,
        stride: usize,
        offset: usize,
        strength: f64,
    },
}

impl PlantedSpec {
    fn resolve(&self, n: usize, out: &mut Vec<PlantedFlip>) -> Result<()> {
        match self {
            PlantedSpec::Flip { qubits, strength } => out.push(PlantedFlip {
                qubits: qubits.clone(),
                strength: *strength,
            }),
            PlantedSpec::Windows {
                width,
                stride,
                offset,
                strength,
            } => {
                if *width < 2 || *stride == 0 {
                    return Err(Error::Config(
                        "windows need width >= 2 and stride >= 1".into(),
                    ));
                }
                let mut s = *offset;
                while s + 1 < n {
                    out.push(PlantedFlip {
                        qubits: (s..(s + width).min(n)).collect(),
                        strength: *strength,
                    });
                    s += stride;
                }
            }
        }
        Ok(())
    }
}

/// A synthetic target descriptor, serialized into every result for provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthSpec {
    Product {
        n: usize,
        marginals: MarginalSpec,
        rows: usize,
        seed: u64,
    },
    Pairwise {
        n: usize,
        marginals: MarginalSpec,
        planted: Vec<PlantedSpec>,
        rows: usize,
        seed: u64,
        /// Keep only the first `columns` qubits of the generated rows.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        columns: Option<usize>,
    },
}

/// The shipped default profile for the correlated synthetic target.
pub const DEFAULT_PAIRWISE_PROFILE: &str = include_str!("../../../profiles/pairwise_default.json");

impl SynthSpec {
    pub fn default_pairwise() -> Self {
        serde_json::from_str(DEFAULT_PAIRWISE_PROFILE).expect("bundled profile parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Qubit count of the generated target.
    pub fn n(&self) -> usize {
        match self {
            SynthSpec::Product { n, .. } => *n,
            SynthSpec::Pairwise { n, columns, .. } => columns.unwrap_or(*n),
        }
    }

    /// Restricts the target to its first `k` qubits.
    pub fn with_columns(mut self, k: usize) -> Result<Self> {
        match &mut self {
            SynthSpec::Product { n, marginals, .. } => {
                let full = marginals.resolve(*n)?;
                if k == 0 || k > full.len() {
                    return Err(Error::Config(format!("cannot keep {k} of {n} columns")));
                }
                *marginals = MarginalSpec::Explicit {
                    values: full[..k].to_vec(),
                };
                *n = k;
            }
            SynthSpec::Pairwise { n, columns, .. } => {
                if k == 0 || k > *n {
                    return Err(Error::Config(format!("cannot keep {k} of {n} columns")));
                }
                *columns = Some(k);
            }
        }
        Ok(self)
    }

    pub fn with_rows(mut self, r: usize) -> Self {
        match &mut self {
            SynthSpec::Product { rows, .. } | SynthSpec::Pairwise { rows, .. } => *rows = r,
        }
        self
    }

    pub fn with_seed(mut self, s: u64) -> Self {
        match &mut self {
            SynthSpec::Product { seed, .. } | SynthSpec::Pairwise { seed, .. } => *seed = s,
        }
        self
    }

    /// Base marginals and planted flips of the full (unrestricted) model.
    pub fn model(&self) -> Result<(Vec<f64>, Vec<PlantedFlip>)> {
        match self {
            SynthSpec::Product { n, marginals, .. } => Ok((marginals.resolve(*n)?, vec![])),
            SynthSpec::Pairwise {
                n,
                marginals,
                planted,
                ..
            } => {
                let mut flips = Vec::new();
                for p in planted {
                    p.resolve(*n, &mut flips)?;
                }
                Ok((marginals.resolve(*n)?, flips))
            }
        }
    }

    /// Exact correlator of the generating model, on the (restricted) register.
    pub fn exact_correlator(&self, a: &QubitSubset) -> Result<f64> {
        check_dim(self.n(), a.n())?;
        let (b, flips) = self.model()?;
        let full_n = b.len();
        let lifted = QubitSubset::from_indices(full_n, a.iter())?;
        Ok(planted_correlator(&b, &flips, &lifted))
    }

    pub fn generate(&self) -> Result<BitDataset> {
        let (b, flips) = self.model()?;
        match self {
            SynthSpec::Product { n, rows, seed, .. } => synth_product(*n, &b, *rows, *seed),
            SynthSpec::Pairwise {
                n,
                rows,
                seed,
                columns,
                ..
            } => {
                let d = synth_pairwise(*n, &b, &flips, *rows, *seed)?;
                match columns {
                    Some(k) if *k < *n => d.prefix_columns(*k),
                    _ => Ok(d),
                }
            }
        }
    }

    /// Parses `product:t=<v>[,n=..][,rows=..][,seed=..]`,
    /// `product:low=<a>,high=<b>[,...]`, `pairwise:default[,...]` or
    /// `pairwise:profile=<path>[,...]`.
    pub fn parse(desc: &str, default_n: Option<usize>) -> Result<Self> {
        let (kind, rest) = desc.split_once(':').unwrap_or((desc, ""));
        let mut kv: HashMap<&str, &str> = HashMap::new();
        let mut flags = Vec::new();
        for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.split_once('=') {
                Some((k, v)) => {
                    kv.insert(k.trim(), v.trim());
                }
                None => flags.push(item),
            }
        }
        let num = |k: &str| -> Result<Option<f64>> {
            kv.get(k)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::Config(format!("synth field {k}: {e}")))
                })
                .transpose()
        };
        let int = |k: &str| -> Result<Option<u64>> {
            kv.get(k)
                .map(|v| {
                    v.parse::<u64>()
                        .map_err(|e| Error::Config(format!("synth field {k}: {e}")))
                })
                .transpose()
        };
        match kind {
            "product" => {
                let n = int("n")?
                    .map(|v| v as usize)
                    .or(default_n)
                    .ok_or_else(|| Error::Config("product target needs n".into()))?;
                let marginals = match (num("t")?, num("low")?, num("high")?) {
                    (Some(t), None, None) => MarginalSpec::Constant { value: t },
                    (None, Some(low), Some(high)) => MarginalSpec::Uniform {
                        low,
                        high,
                        seed: int("mseed")?.unwrap_or(0),
                    },
                    _ => {
                        return Err(Error::Config(
                            "product target needs t=<v> or low=<a>,high=<b>".into(),
                        ))
                    }
                };
                Ok(SynthSpec::Product {
                    n,
                    marginals,
                    rows: int("rows")?.unwrap_or(20_000) as usize,
                    seed: int("seed")?.unwrap_or(0),
                })
            }
            "pairwise" => {
                if let Some(f) = flags.iter().find(|&&f| f != "default") {
                    return Err(Error::Config(format!("unknown pairwise option {f:?}")));
                }
                let mut spec = match kv.get("profile") {
                    Some(p) => Self::from_json(&std::fs::read_to_string(p)?)?,
                    None => Self::default_pairwise(),
                };
                if let Some(r) = int("rows")? {
                    spec = spec.with_rows(r as usize);
                }
                if let Some(s) = int("seed")? {
                    spec = spec.with_seed(s);
                }
                if let Some(k) = int("n")?.map(|v| v as usize).or(default_n) {
                    if k != spec.n() {
                        spec = spec.with_columns(k)?;
                    }
                }
                Ok(spec)
            }
            other => Err(Error::Config(format!(
                "unknown synthetic target kind {other:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlators::ParamVector;
    use crate::oracle::{build_state, expval_zA, model_distribution};
    use crate::topology::{make_graph, GeneratorIndex, GraphKind};

    #[test]
    fn text_round_trip() {
        let d = BitDataset::from_text("#n=3\n010\n111\n\n000\n", "mem").unwrap();
        assert_eq!(d.rows(), 3);
        assert!(d.bit(0, 1) && !d.bit(0, 0));
        let back = BitDataset::from_text(&d.to_text(), "mem").unwrap();
        assert_eq!(back.rows(), 3);
        assert_eq!(back.row_index(1), 0b111);
        assert!(BitDataset::from_text("01\n011\n", "x").is_err());
        assert!(BitDataset::from_text("0a1\n", "x").is_err());
        assert!(BitDataset::from_text("#n=3\n01\n", "x").is_err());
        let wide = "1".repeat(70) + "\n" + &"0".repeat(70) + "\n";
        let w = BitDataset::from_text(&wide, "w").unwrap();
        assert!(w.bit(0, 69) && !w.bit(1, 69));
        let p = w.prefix_columns(65).unwrap();
        assert_eq!(p.n(), 65);
        assert!(p.bit(0, 64));
    }

    #[test]
    fn empirical_basics() {
        let zeros = BitDataset::from_indices(4, &[0; 10], "z").unwrap();
        let s = TargetStats::empirical(zeros).unwrap();
        for mask in 0..16 {
            assert_eq!(s.t_of(&QubitSubset::from_mask(4, mask)).unwrap(), 1.0);
        }
        let d = BitDataset::from_indices(2, &[0b01, 0b11, 0b00, 0b10], "d").unwrap();
        let s = TargetStats::empirical(d).unwrap();
        let a0 = QubitSubset::singleton(2, 0);
        assert_eq!(s.t_of(&a0).unwrap(), 0.0);
        // half A = rows 0, 2 = {01, 00}; half B = rows 1, 3 = {11, 10}
        assert_eq!(s.t_of_half(&a0, Half::A).unwrap(), 0.0);
        let both = QubitSubset::full(2);
        assert_eq!(s.t_of_half(&both, Half::A).unwrap(), 0.0);
        assert_eq!(s.t_of_half(&both, Half::B).unwrap(), 0.0);
        assert_eq!(
            s.t_of_half(&QubitSubset::singleton(2, 1), Half::B).unwrap(),
            -1.0
        );
        assert_eq!(s.t_of(&QubitSubset::empty(2)).unwrap(), 1.0);
        assert!(TargetStats::empirical(BitDataset::new(3, "e")).is_err());
    }

    #[test]
    fn exact_backend_matches_oracle() {
        let g = make_graph(&GraphKind::AllToAll, 5).unwrap();
        let idx = GeneratorIndex::from_graph(&g);
        let th = ParamVector::new((0..idx.m()).map(|p| 0.1 * p as f64 - 0.6).collect()).unwrap();
        let st = build_state(&g, &idx, &th).unwrap();
        let stats = TargetStats::exact(model_distribution(&st));
        for mask in 0..32 {
            let a = QubitSubset::from_mask(5, mask);
            assert!((stats.t_of(&a).unwrap() - expval_zA(&st, &a).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn product_backend_and_table() {
        let s = TargetStats::product(vec![0.5, -0.2, 0.9]).unwrap();
        let a = QubitSubset::from_indices(3, [0, 2]).unwrap();
        assert!((s.t_of(&a).unwrap() - 0.45).abs() < 1e-15);
        let via_table = TargetStats::exact(s.to_table().unwrap());
        for mask in 0..8 {
            let a = QubitSubset::from_mask(3, mask);
            assert!((via_table.t_of(&a).unwrap() - s.t_of(&a).unwrap()).abs() < 1e-14);
        }
        assert!(TargetStats::product(vec![1.2]).is_err());
    }

    #[test]
    fn product_sampler_audit() {
        let rows = 100_000;
        let t = [0.0, 0.8, -0.3];
        let d = synth_product(3, &t, rows, 7).unwrap();
        let s = TargetStats::empirical(d).unwrap();
        for (j, &tj) in t.iter().enumerate() {
            let est = s.t_of(&QubitSubset::singleton(3, j)).unwrap();
            let se = ((1.0 - tj * tj) / rows as f64).sqrt();
            assert!((est - tj).abs() <= 4.0 * se, "j={j} est={est}");
        }
        let m = s.marginals();
        let pair = s
            .t_of(&QubitSubset::from_indices(3, [0, 1]).unwrap())
            .unwrap();
        let se = ((1.0 - pair * pair) / rows as f64).sqrt();
        assert!((pair - m[0] * m[1]).abs() <= 4.0 * se);
        assert!(synth_product(2, &[0.5, 1.5], 10, 0).is_err());
    }

    #[test]
    fn pairwise_sampler_matches_model() {
        let b = vec![0.6, 0.4, 0.8, 0.2];
        let flips = vec![
            PlantedFlip {
                qubits: vec![0, 1],
                strength: 0.2,
            },
            PlantedFlip {
                qubits: vec![1, 2, 3],
                strength: 0.1,
            },
        ];
        let rows = 200_000;
        let s = TargetStats::empirical(synth_pairwise(4, &b, &flips, rows, 3).unwrap()).unwrap();
        for mask in 1..16 {
            let a = QubitSubset::from_mask(4, mask);
            let exact = planted_correlator(&b, &flips, &a);
            let se = ((1.0 - exact * exact) / rows as f64).sqrt();
            assert!((s.t_of(&a).unwrap() - exact).abs() <= 4.5 * se, "A={a}");
        }
        let cov = covariances(&s).unwrap();
        // strong planted pair (0,1) stands out
        assert!(cov.get(0, 1) > 0.05);
        assert_eq!(cov.get(0, 1), cov.get(1, 0));
        let t = s.marginals();
        let t01 = s
            .t_of(&QubitSubset::from_indices(4, [0, 1]).unwrap())
            .unwrap();
        assert!((cov.get(0, 1) - (t01 - t[0] * t[1])).abs() < 1e-12);
    }

    #[test]
    fn assumption_checks() {
        let p = TargetStats::product(vec![0.6; 6]).unwrap();
        let r = check_assumption1(&p, 6, 0.5, 3).unwrap();
        assert!(r.pass);
        assert!(r.orders.iter().all(|o| o.max_deviation < 1e-15));
        let a2 = check_assumption2(&p);
        assert!((a2.max_value - 0.64).abs() < 1e-15);

        let delta = TargetStats::exact(DistributionTable::delta(4, 0b0110));
        assert!(check_assumption1(&delta, 4, 0.1, 4).unwrap().pass);
        assert_eq!(check_assumption2(&delta).max_value, 0.0);

        let uni = TargetStats::exact(DistributionTable::uniform(3));
        assert!(check_assumption2(&uni).values.iter().all(|&v| v == 1.0));

        let b = vec![0.9; 6];
        let flips = vec![PlantedFlip {
            qubits: vec![0, 1],
            strength: 0.3,
        }];
        let rows = 50_000;
        let s = TargetStats::empirical(synth_pairwise(6, &b, &flips, rows, 1).unwrap()).unwrap();
        let r = check_assumption1(&s, 6, 0.3, 2).unwrap();
        assert!(!r.orders[0].pass);
        assert_eq!(r.orders[0].worst_subset, vec![0, 1]);
    }

    #[test]
    fn combinations() {
        let mut seen = Vec::new();
        for_each_combination(4, 2, |c| seen.push(c.to_vec()));
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 1]);
        assert_eq!(seen[5], vec![2, 3]);
        let mut count = 0;
        for_each_combination(10, 3, |_| count += 1);
        assert_eq!(count, 120);
        let mut k0 = 0;
        for_each_combination(3, 0, |c| {
            assert!(c.is_empty());
            k0 += 1
        });
        assert_eq!(k0, 1);
    }

    #[test]
    fn synth_spec_parsing() {
        let s = SynthSpec::parse("product:t=0.3,n=5,rows=100,seed=2", None).unwrap();
        assert_eq!(s.n(), 5);
        let d = s.generate().unwrap();
        assert_eq!((d.n(), d.rows()), (5, 100));
        assert!(SynthSpec::parse("product:t=0.3", None).is_err());
        assert!(SynthSpec::parse("nope:x=1", Some(3)).is_err());
        let def = SynthSpec::parse("pairwise:default", None).unwrap();
        let small = SynthSpec::parse("pairwise:default,n=8,rows=500", None).unwrap();
        assert_eq!(small.n(), 8);
        let full = def.clone().with_rows(500).generate().unwrap();
        let cut = small.generate().unwrap();
        assert_eq!(cut, {
            let mut p = full.prefix_columns(8).unwrap();
            p.set_provenance(cut.provenance());
            p
        });
        let json = serde_json::to_string(&def).unwrap();
        assert_eq!(SynthSpec::from_json(&json).unwrap(), def);
    }
}

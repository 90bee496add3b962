//! `M_min` scans: the smallest number of snapshots for which a
//! reconstruction has zero entry errors against the true grid.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use anyhow::{anyhow, bail, Context, Result};
use gridrecon_core::dc::{add_noise, derive_seed, gen_type1, gen_type2};
use gridrecon_core::grid::build_susceptance;
use gridrecon_core::reconstruction::{reconstruct_iterative, reconstruct_rowwise, verify_against_truth};
use gridrecon_core::{
    GridTopology, KnowledgeMask, MeasurementSet, ReconstructionReport, SuccessPolicy, SusceptanceMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataType {
    /// Angles uniform in `[-pi/8, pi/8]`.
    Type1,
    /// Gaussian injections, angles from the DC solve.
    Type2,
}

impl FromStr for DataType {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type1" | "I" | "1" => Ok(DataType::Type1),
            "type2" | "II" | "2" => Ok(DataType::Type2),
            _ => bail!("unknown data type {s:?} (expected type1 or type2)"),
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataType::Type1 => "type1",
            DataType::Type2 => "type2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Rowwise,
    Iterative,
}

impl FromStr for Algorithm {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rowwise" => Ok(Algorithm::Rowwise),
            "iterative" => Ok(Algorithm::Iterative),
            _ => bail!("unknown algorithm {s:?} (expected rowwise or iterative)"),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Rowwise => "rowwise",
            Algorithm::Iterative => "iterative",
        })
    }
}

/// Partially known network handed to the iterative algorithm.
#[derive(Debug, Clone)]
pub struct Prior {
    pub b: SusceptanceMatrix,
    pub known: KnowledgeMask,
}

/// Run a reconstruction. A prior is only meaningful for the iterative
/// algorithm.
pub fn reconstruct(
    ms: &MeasurementSet,
    algorithm: Algorithm,
    policy: &SuccessPolicy,
    prior: Option<&Prior>,
) -> Result<ReconstructionReport> {
    let n = ms.n();
    let report = match (algorithm, prior) {
        (Algorithm::Rowwise, Some(_)) => bail!("the row-wise algorithm does not use prior knowledge"),
        (Algorithm::Rowwise, None) => reconstruct_rowwise(ms)?,
        (Algorithm::Iterative, Some(p)) => reconstruct_iterative(ms, &p.b, &p.known, policy)?,
        (Algorithm::Iterative, None) => {
            reconstruct_iterative(ms, &SusceptanceMatrix::zeros(n), &KnowledgeMask::none(n), policy)?
        }
    };
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub grid: GridTopology,
    pub data_type: DataType,
    pub m_range: RangeInclusive<usize>,
    pub seeds: Vec<u64>,
    pub algorithm: Algorithm,
    pub policy: SuccessPolicy,
    pub prior: Option<Prior>,
    /// Verification tolerance; `None` uses `1e-3 * max |B|`.
    pub epsilon: Option<f64>,
    pub noise_phi: f64,
    pub noise_p: f64,
}

impl ExperimentConfig {
    /// Defaults: `M` from 1 to `N`, seeds 0..10, no prior, no noise.
    pub fn new(grid: GridTopology, data_type: DataType, algorithm: Algorithm) -> Self {
        let n = grid.n_buses();
        Self {
            grid,
            data_type,
            m_range: 1..=n,
            seeds: (0..10).collect(),
            algorithm,
            policy: SuccessPolicy::default(),
            prior: None,
            epsilon: None,
            noise_phi: 0.0,
            noise_p: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_range.is_empty() || *self.m_range.start() == 0 {
            bail!("m range {:?} must be nonempty and start at 1 or above", self.m_range);
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if let Some(p) = &self.prior {
            if self.algorithm == Algorithm::Rowwise {
                bail!("the row-wise algorithm does not use prior knowledge");
            }
            if p.b.n() != self.grid.n_buses() || p.known.n() != self.grid.n_buses() {
                bail!("prior covers {} buses, grid has {}", p.b.n(), self.grid.n_buses());
            }
        }
        if !(self.noise_phi >= 0.0 && self.noise_p >= 0.0) {
            bail!("noise levels must be >= 0");
        }
        Ok(())
    }

    /// Data for one `(seed, M)` cell; every cell draws from its own stream.
    pub fn generate(&self, m: usize, seed: u64) -> Result<MeasurementSet> {
        let stream = derive_seed(seed, m as u64);
        let ms = match self.data_type {
            DataType::Type1 => gen_type1(&build_susceptance(&self.grid), m, stream),
            DataType::Type2 => gen_type2(&self.grid, m, None, stream)?,
        };
        Ok(if self.noise_phi > 0.0 || self.noise_p > 0.0 {
            add_noise(&ms, self.noise_phi, self.noise_p, derive_seed(stream, u64::MAX))
        } else {
            ms
        })
    }

    /// Entry error count of one run.
    pub fn error_count(&self, truth: &SusceptanceMatrix, m: usize, seed: u64) -> Result<usize> {
        let ms = self.generate(m, seed)?;
        let report = reconstruct(&ms, self.algorithm, &self.policy, self.prior.as_ref())?;
        Ok(verify_against_truth(&report, truth, self.epsilon)?.error_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    /// `None` when no `M` in the range gave zero errors.
    pub m_min: Option<usize>,
    /// `(M, error count)` for every `M` tried, including the `M_min + 1`
    /// check.
    pub errors: Vec<(usize, usize)>,
}

impl SeedResult {
    /// Error count at `M_min + 1`, if it was checked.
    pub fn errors_above(&self) -> Option<usize> {
        let m = self.m_min? + 1;
        self.errors.iter().find(|e| e.0 == m).map(|e| e.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MminResult {
    pub n: usize,
    pub m_max: usize,
    pub seeds: Vec<SeedResult>,
}

impl MminResult {
    pub fn table(&self) -> MminTable {
        MminTable::new(
            self.n,
            self.m_max,
            self.seeds.iter().map(|s| (s.seed, s.m_min)).collect(),
        )
    }

    /// Per-`M` error counts as CSV `N,seed,M,errors`.
    pub fn errors_csv(&self) -> String {
        let mut out = String::from("N,seed,M,errors\n");
        for s in &self.seeds {
            for (m, e) in &s.errors {
                out.push_str(&format!("{},{},{m},{e}\n", self.n, s.seed));
            }
        }
        out
    }
}

/// Per-seed `M_min` values and their summaries, the content of the scan CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MminTable {
    pub n: usize,
    pub m_max: usize,
    pub per_seed: Vec<(u64, Option<usize>)>,
    /// Undefined when any seed exhausted the range.
    pub mean: Option<f64>,
    /// Exhausted seeds count as `+inf`; undefined when the median falls on
    /// one of them.
    pub median: Option<f64>,
}

impl MminTable {
    pub fn new(n: usize, m_max: usize, per_seed: Vec<(u64, Option<usize>)>) -> Self {
        let (mean, median) = summarize(&per_seed);
        Self {
            n,
            m_max,
            per_seed,
            mean,
            median,
        }
    }

    pub fn to_csv(&self) -> String {
        let exhausted = format!(">{}", self.m_max);
        let mut out = String::from("N,seed,M_min\n");
        for (seed, m) in &self.per_seed {
            let cell = m.map_or_else(|| exhausted.clone(), |m| m.to_string());
            out.push_str(&format!("{},{seed},{cell}\n", self.n));
        }
        let summary = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |v| ryu::Buffer::new().format(v).to_owned());
        out.push_str(&format!("{},mean,{}\n", self.n, summary(self.mean)));
        out.push_str(&format!("{},median,{}\n", self.n, summary(self.median)));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("N,seed,M_min") {
            bail!("missing N,seed,M_min header");
        }
        let mut n = None;
        let mut m_max = None;
        let mut per_seed = Vec::new();
        let mut mean = None;
        let mut median = None;
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            let [n_field, key, value] = fields[..] else {
                bail!("line {}: expected 3 fields", i + 2);
            };
            let row_n: usize = n_field.parse().with_context(|| format!("line {}: N", i + 2))?;
            if *n.get_or_insert(row_n) != row_n {
                bail!("line {}: mixed grid sizes", i + 2);
            }
            let summary = || -> Result<Option<f64>> { Ok(if value == "NA" { None } else { Some(value.parse()?) }) };
            match key {
                "mean" => mean = Some(summary()?),
                "median" => median = Some(summary()?),
                seed => {
                    let seed: u64 = seed.parse().with_context(|| format!("line {}: seed", i + 2))?;
                    let m = match value.strip_prefix('>') {
                        Some(max) => {
                            m_max = Some(max.parse()?);
                            None
                        }
                        None => Some(value.parse().with_context(|| format!("line {}: M_min", i + 2))?),
                    };
                    per_seed.push((seed, m));
                }
            }
        }
        let n = n.ok_or_else(|| anyhow!("no data rows"))?;
        let m_max = m_max.unwrap_or_else(|| per_seed.iter().filter_map(|s| s.1).max().unwrap_or(0));
        Ok(Self {
            n,
            m_max,
            per_seed,
            mean: mean.ok_or_else(|| anyhow!("missing mean row"))?,
            median: median.ok_or_else(|| anyhow!("missing median row"))?,
        })
    }
}

fn summarize(per_seed: &[(u64, Option<usize>)]) -> (Option<f64>, Option<f64>) {
    if per_seed.is_empty() {
        return (None, None);
    }
    let found: Vec<f64> = per_seed.iter().filter_map(|s| s.1.map(|m| m as f64)).collect();
    let mean = (found.len() == per_seed.len()).then(|| found.iter().sum::<f64>() / found.len() as f64);
    let mut sorted: Vec<f64> = per_seed
        .iter()
        .map(|s| s.1.map_or(f64::INFINITY, |m| m as f64))
        .collect();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    (mean, median.is_finite().then_some(median))
}

/// Scan one seed upward through the range; the first `M` with zero errors is
/// `M_min`, and `M_min + 1` is run as a check.
pub fn scan_seed(config: &ExperimentConfig, truth: &SusceptanceMatrix, seed: u64) -> Result<SeedResult> {
    let mut errors = Vec::new();
    for m in config.m_range.clone() {
        let e = config.error_count(truth, m, seed)?;
        errors.push((m, e));
        if e == 0 {
            let above = config.error_count(truth, m + 1, seed)?;
            errors.push((m + 1, above));
            if above != 0 {
                log::warn!("seed {seed}: zero errors at M={m} but {above} at M={}", m + 1);
            }
            return Ok(SeedResult {
                seed,
                m_min: Some(m),
                errors,
            });
        }
    }
    Ok(SeedResult {
        seed,
        m_min: None,
        errors,
    })
}

/// Run the scan for every seed on a pool of worker threads.
pub fn run_mmin_scan(config: &ExperimentConfig) -> Result<MminResult> {
    config.validate()?;
    let truth = build_susceptance(&config.grid);
    let workers = thread::available_parallelism()
        .map_or(1, |p| p.get())
        .min(config.seeds.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SeedResult>>>> = Mutex::new((0..config.seeds.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = config.seeds.get(i) else {
                    break;
                };
                let r = scan_seed(config, &truth, seed);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    let seeds = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every seed scanned"))
        .collect::<Result<Vec<_>>>()?;
    Ok(MminResult {
        n: config.grid.n_buses(),
        m_max: *config.m_range.end(),
        seeds,
    })
}

//! Runtime and memory benchmarking of the simulator itself.
//!
//! Static cost is the noiseless baseline (it depends on branch count, not
//! on the address space); dynamic cost is the noisy overhead
//! ΔCost = Cost_noisy − Cost_noiseless. Memory is simulator-internal
//! accounting (branch footprints plus the classical table), deterministic
//! and machine-independent; wall time is a median over repetitions of a
//! monotonic clock. The (n, p) plane splits into three regimes by
//! x = n²·p·2^n: noise-free (x < 1), transitional (1 ≤ x ≤ 256) and
//! noise-dominated (x > 256).

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    estimate_fidelity, run_noiseless, run_noisy, state_bytes, CostMeter, FidelityMetric, Mode,
    QueryContext,
};
use crate::error::{CoreError, Result};
use crate::fit::linear_fit;
use crate::noise::NoiseSpec;
use crate::schedule::build_schedule;
use crate::state::SparseState;
use crate::table::DataTable;
use crate::topology::TreeShape;

/// Cost regimes classified by x = n²·p·2^n. The transitional regime's upper
/// edge is 256 (the alternative reading 10² is recorded in run metadata).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    I,
    II,
    III,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Region::I => write!(f, "I"),
            Region::II => write!(f, "II"),
            Region::III => write!(f, "III"),
        }
    }
}

pub const REGION_II_UPPER: f64 = 256.0;

pub fn classify_region(n: u8, p: f64) -> Region {
    let x = (n as f64) * (n as f64) * p * (1u64 << n) as f64;
    if x < 1.0 {
        Region::I
    } else if x <= REGION_II_UPPER {
        Region::II
    } else {
        Region::III
    }
}

/// One benchmark measurement row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSample {
    pub n: u8,
    pub branch_count: u64,
    pub epsilon: f64,
    pub gamma: f64,
    pub mode: Mode,
    /// Median wall time of one query, seconds.
    pub wall_time: f64,
    /// Mean peak simulator footprint, bytes (branches + overlay + faults +
    /// classical table).
    pub peak_memory: u64,
    /// Branch-storage part of the peak.
    pub branch_memory: u64,
    /// Classical table bytes.
    pub table_memory: u64,
    /// Mean unreliable-address count per shot.
    pub unreliable_branches: f64,
    pub region: Region,
    pub seed: u64,
}

impl CostSample {
    pub fn csv_header() -> &'static str {
        "n,branch_count,epsilon,gamma,mode,wall_time_s,peak_memory_bytes,branch_memory_bytes,table_memory_bytes,unreliable_branches,region,seed"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.branch_count,
            self.epsilon,
            self.gamma,
            match self.mode {
                Mode::Full => "full",
                Mode::Pruned => "pruned",
            },
            self.wall_time,
            self.peak_memory,
            self.branch_memory,
            self.table_memory,
            self.unreliable_branches,
            self.region,
            self.seed
        )
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn bench_input(shape: TreeShape, branch_size: u64) -> SparseState {
    SparseState::uniform_over(0..branch_size.min(shape.cells()))
}

fn bench_context(n: u8, k: u8, noise: NoiseSpec, seed: u64) -> Result<QueryContext> {
    let shape = TreeShape::new(n, k)?;
    let schedule = build_schedule(shape)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xD1CE);
    let table = DataTable::random(shape, &mut rng);
    QueryContext::new(schedule, table, noise)
}

/// Noiseless baselines over an (n, branch size) grid. Per cell: median wall
/// time over `repetitions` runs and the memory split between branch storage
/// and the classical table.
pub fn measure_static(
    n_range: &[u8],
    branch_sizes: &[u64],
    repetitions: u32,
    k: u8,
    seed: u64,
) -> Result<Vec<CostSample>> {
    if repetitions == 0 {
        return Ok(Vec::new());
    }
    let mut samples = Vec::new();
    for &n in n_range {
        let ctx = bench_context(n, k, NoiseSpec::noiseless(), seed)?;
        for &branch_size in branch_sizes {
            if branch_size > ctx.schedule.shape.cells() {
                continue;
            }
            let input = bench_input(ctx.schedule.shape, branch_size);
            let mut times = Vec::with_capacity(repetitions as usize);
            let mut branch_memory = 0u64;
            for _ in 0..repetitions {
                let start = Instant::now();
                let out = run_noiseless(&input, &ctx.table, &ctx.schedule)?;
                times.push(start.elapsed().as_secs_f64());
                branch_memory = state_bytes(&out.branches);
            }
            let table_memory = ctx.table.storage_bytes();
            samples.push(CostSample {
                n,
                branch_count: input.branch_count() as u64,
                epsilon: 0.0,
                gamma: 0.0,
                mode: Mode::Full,
                wall_time: median(&mut times),
                peak_memory: branch_memory + table_memory,
                branch_memory,
                table_memory,
                unreliable_branches: 0.0,
                region: Region::I,
                seed,
            });
        }
    }
    Ok(samples)
}

/// Noisy measurement with the static delta attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicCostSample {
    pub sample: CostSample,
    pub delta_time: f64,
    pub delta_memory: f64,
}

/// Noise grid cell: depolarizing rate `p` plus optional damping rate γ.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseCell {
    pub p: f64,
    pub gamma: f64,
}

/// Noisy cost over an (n, noise) grid, relative to the provided static
/// baselines (matched on `(n, branch_count)`); errors if a baseline row is
/// missing. Per cell: median wall time and mean peak memory over `shots`.
pub fn measure_dynamic(
    baselines: &[CostSample],
    n_range: &[u8],
    noise_grid: &[NoiseCell],
    branch_size: u64,
    shots: u64,
    mode: Mode,
    k: u8,
    seed: u64,
) -> Result<Vec<DynamicCostSample>> {
    let mut out = Vec::new();
    for &n in n_range {
        for cell in noise_grid {
            let noise = NoiseSpec {
                depolarizing: cell.p,
                damping: cell.gamma,
                ..NoiseSpec::noiseless()
            };
            let ctx = bench_context(n, k, noise, seed)?;
            let input = bench_input(ctx.schedule.shape, branch_size);
            let branch_count = input.branch_count() as u64;
            let baseline = baselines
                .iter()
                .find(|s| s.n == n && s.branch_count == branch_count)
                .ok_or_else(|| {
                    CoreError::config(format!(
                        "missing static baseline for n={n}, branch_count={branch_count}"
                    ))
                })?;

            let mut times = Vec::with_capacity(shots as usize);
            let mut peaks = 0u64;
            let mut branch_peaks = 0u64;
            let mut unreliable = 0.0f64;
            for shot in 0..shots {
                let mut meter = CostMeter::default();
                let start = Instant::now();
                let outcome = run_noisy(
                    &ctx,
                    &input,
                    mode,
                    seed,
                    shot,
                    None,
                    FidelityMetric::Bus,
                    Some(&mut meter),
                )?;
                times.push(start.elapsed().as_secs_f64());
                branch_peaks += meter.peak_state_bytes;
                peaks += meter.peak_state_bytes + ctx.table.storage_bytes();
                unreliable +=
                    (ctx.schedule.shape.cells() - outcome.reliable.count()) as f64;
            }
            let wall_time = median(&mut times);
            let peak_memory = peaks / shots;
            let sample = CostSample {
                n,
                branch_count,
                epsilon: cell.p,
                gamma: cell.gamma,
                mode,
                wall_time,
                peak_memory,
                branch_memory: branch_peaks / shots,
                table_memory: ctx.table.storage_bytes(),
                unreliable_branches: unreliable / shots as f64,
                region: classify_region(n, cell.p.max(cell.gamma)),
                seed,
            };
            out.push(DynamicCostSample {
                delta_time: wall_time - baseline.wall_time,
                delta_memory: peak_memory as f64 - baseline.peak_memory as f64,
                sample,
            });
        }
    }
    Ok(out)
}

/// Per-cell pruned/full cost ratios over matched `(n, epsilon, gamma, seed)`
/// cells. Unmatched cells are skipped and reported in the warning list.
pub fn compare_modes(
    full: &[CostSample],
    pruned: &[CostSample],
) -> (Vec<ModeRatio>, Vec<String>) {
    let mut ratios = Vec::new();
    let mut warnings = Vec::new();
    for f in full {
        match pruned.iter().find(|p| {
            p.n == f.n
                && p.epsilon == f.epsilon
                && p.gamma == f.gamma
                && p.branch_count == f.branch_count
                && p.seed == f.seed
        }) {
            Some(p) => ratios.push(ModeRatio {
                n: f.n,
                epsilon: f.epsilon,
                gamma: f.gamma,
                region: f.region,
                time_ratio: p.wall_time / f.wall_time,
                memory_ratio: p.peak_memory as f64 / f.peak_memory as f64,
            }),
            None => warnings.push(format!(
                "no pruned cell matches n={} eps={} gamma={} seed={}",
                f.n, f.epsilon, f.gamma, f.seed
            )),
        }
    }
    (ratios, warnings)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModeRatio {
    pub n: u8,
    pub epsilon: f64,
    pub gamma: f64,
    pub region: Region,
    pub time_ratio: f64,
    pub memory_ratio: f64,
}

impl ModeRatio {
    pub fn csv_header() -> &'static str {
        "n,epsilon,gamma,region,time_ratio,memory_ratio"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.n, self.epsilon, self.gamma, self.region, self.time_ratio, self.memory_ratio
        )
    }
}

/// Regression summary emitted next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSummary {
    pub schema_version: u32,
    /// log-log slope of static wall time vs n at fixed branch size.
    pub static_time_slope: Option<f64>,
    /// slope and R² of (noisy/noiseless memory − 1) vs p.
    pub memory_ratio_slope: Option<f64>,
    pub memory_ratio_r2: Option<f64>,
    /// log2(unreliable count) vs n slope.
    pub unreliable_log2_slope: Option<f64>,
    pub region_ii_upper: f64,
    /// The main-text alternative to the regime boundary, recorded alongside.
    pub region_ii_upper_alternative: f64,
}

impl BenchSummary {
    pub fn new() -> Self {
        BenchSummary {
            schema_version: 1,
            static_time_slope: None,
            memory_ratio_slope: None,
            memory_ratio_r2: None,
            unreliable_log2_slope: None,
            region_ii_upper: REGION_II_UPPER,
            region_ii_upper_alternative: 100.0,
        }
    }
}

impl Default for BenchSummary {
    fn default() -> Self {
        Self::new()
    }
}

/// log-log slope of wall time vs n over static samples at one branch size.
pub fn static_time_slope(samples: &[CostSample], branch_count: u64) -> Result<f64> {
    let points: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.branch_count == branch_count && s.wall_time > 0.0)
        .map(|s| ((s.n as f64).ln(), s.wall_time.ln()))
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (slope, _, _) = linear_fit(&xs, &ys)?;
    Ok(slope)
}

/// Mean-fidelity helper the CLI exposes; re-exported here so the benchmark
/// and query paths share one implementation.
pub use crate::engine::FidelityEstimate;

/// Convenience wrapper building a context and estimating fidelity.
#[allow(clippy::too_many_arguments)]
pub fn fidelity_scan(
    n: u8,
    k: u8,
    noise: NoiseSpec,
    branch_size: u64,
    shots: u64,
    mode: Mode,
    metric: FidelityMetric,
    seed: u64,
) -> Result<FidelityEstimate> {
    let ctx = bench_context(n, k, noise, seed)?;
    let input = bench_input(ctx.schedule.shape, branch_size);
    estimate_fidelity(&ctx, &input, mode, metric, shots, seed)
}

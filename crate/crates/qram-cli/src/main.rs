//! `qram` — command-line surface of the sparse bucket-brigade memory
//! simulator.
//!
//! Subcommands: `query` (one memory access, JSON result), `ef` (error
//! filtration sweep, CSV), `bench` (cost benchmarks, CSV + JSON summary),
//! `validate` (oracle and analytic suites), `fit` (power-law fit and
//! progressive-filtration feasibility).
//!
//! Exit codes: 0 ok, 1 validation failure, 2 configuration error,
//! 3 runtime error. `QRAMBENCH_WORKERS` overrides the worker count.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{
    noise_spec, parse_f64_list, parse_input, parse_n_range, parse_u8_list, ChannelSelect,
    EligibilitySelect, FileConfig, InputSelect, MetricSelect, ScopeSelect,
};
use qram_core::{CoreError, Result};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "qram", version, about = "Sparse noisy bucket-brigade memory simulator")]
struct Cli {
    /// Worker threads for shot parallelism (QRAMBENCH_WORKERS overrides).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one noisy memory query and print a JSON result.
    Query(QueryArgs),
    /// Error-filtration sweep; emits one CSV row per filtration level.
    Ef(EfArgs),
    /// Static/dynamic cost benchmarks; CSV rows plus a JSON summary.
    Bench(BenchArgs),
    /// Run the dense-oracle and analytic validation suites.
    Validate(ValidateArgs),
    /// Fit a power law to an infidelity curve and locate the feasible sizes.
    Fit(FitArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_workers(cli.workers);
    let outcome = match cli.command {
        Command::Query(args) => cmd_query(args),
        Command::Ef(args) => cmd_ef(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Fit(args) => cmd_fit(args),
    };
    match outcome {
        Ok(code) => code,
        Err(CoreError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(3)
        }
    }
}

fn init_workers(flag: Option<usize>) {
    let workers = std::env::var("QRAMBENCH_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .or(flag);
    if let Some(w) = workers {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
}

fn write_or_print(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, content)?;
            Ok(())
        }
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> (u64, bool) {
    match flag.or(file) {
        Some(s) => (s, false),
        None => (rand::random::<u64>(), true),
    }
}

// ---------------------------------------------------------------- query

#[derive(Args)]
struct QueryArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<u8>,
    #[arg(long)]
    k: Option<u8>,
    #[arg(long, value_enum)]
    channel: Option<ChannelSelect>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// full | pruned
    #[arg(long)]
    mode: Option<String>,
    /// uniform | uniform:N | haar:N | amps:FILE
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, value_enum)]
    metric: Option<MetricSelect>,
    #[arg(long, value_enum)]
    scope: Option<ScopeSelect>,
    #[arg(long, value_enum)]
    eligibility: Option<EligibilitySelect>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct QueryOutput {
    schema_version: u32,
    n: u8,
    k: u8,
    channel: ChannelSelect,
    epsilon: f64,
    gamma: f64,
    shots: u64,
    seed: u64,
    seed_autogenerated: bool,
    mode: String,
    metric: MetricSelect,
    input: String,
    table: String,
    fidelity_mean: f64,
    fidelity_std_error: f64,
    mean_reliable_fraction: f64,
    mean_unreliable_branches: f64,
    shot0: ShotSummary,
}

#[derive(Serialize)]
struct ShotSummary {
    fidelity: f64,
    branch_count: usize,
    fault_log: Vec<FaultRow>,
    top_branches: Vec<BranchRow>,
}

#[derive(Serialize)]
struct FaultRow {
    timestep: u32,
    layer: u8,
    pos: u32,
    register: String,
    channel: String,
    resolution: String,
}

#[derive(Serialize)]
struct BranchRow {
    address: u64,
    data: u64,
    weight: f64,
    tree_idle: bool,
}

fn cmd_query(args: QueryArgs) -> Result<ExitCode> {
    use qram_core::{
        build_schedule, estimate_fidelity, run_noisy, FidelityMetric, Mode, QueryContext,
        TreeShape,
    };

    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let n = args.n.or(file.n).ok_or_else(|| CoreError::config("--n is required".to_string()))?;
    let k = args.k.or(file.k).unwrap_or(1);
    let channel = args.channel.or(file.channel).unwrap_or(ChannelSelect::Depolarizing);
    let epsilon = args.epsilon.or(file.epsilon).unwrap_or(0.0);
    let gamma = args.gamma.or(file.gamma);
    let shots = args.shots.or(file.shots).unwrap_or(1).max(1);
    let (seed, seed_auto) = resolve_seed(args.seed, file.seed);
    let mode: Mode = args.mode.or(file.mode).unwrap_or_else(|| "pruned".into()).parse()?;
    let metric = args.metric.or(file.metric).unwrap_or(MetricSelect::Bus);
    let scope = args.scope.or(file.scope).unwrap_or(ScopeSelect::AllQudits);
    let eligibility = args.eligibility.or(file.eligibility).unwrap_or(EligibilitySelect::Gates);
    let input_text = args.input.or(file.input).unwrap_or_else(|| "uniform".into());
    let table_path = args.table.or(file.table);

    let shape = TreeShape::new(n, k)?;
    let noise = noise_spec(channel, epsilon, gamma, scope, eligibility)?;
    let schedule = build_schedule(shape)?;
    let (table, table_desc) = load_table(table_path.as_deref(), shape, seed)?;
    let ctx = QueryContext::new(schedule, table, noise)?;
    let input = build_input(&input_text, shape, seed)?;
    let engine_metric = match metric {
        MetricSelect::Bus => FidelityMetric::Bus,
        MetricSelect::Full => FidelityMetric::FullOverlap,
    };

    let estimate = estimate_fidelity(&ctx, &input, mode, engine_metric, shots, seed)?;
    let shot0 = run_noisy(&ctx, &input, mode, seed, 0, None, engine_metric, None)?;

    let mut weighted: Vec<&qram_core::Branch> = shot0.final_state.branches.iter().collect();
    weighted.sort_by(|a, b| {
        b.amplitude
            .norm_sqr()
            .partial_cmp(&a.amplitude.norm_sqr())
            .unwrap()
            .then(a.label.cmp(&b.label))
    });
    let top_branches = weighted
        .iter()
        .take(8)
        .map(|b| BranchRow {
            address: b.label.bus_address,
            data: b.label.bus_data,
            weight: b.amplitude.norm_sqr(),
            tree_idle: b.label.tree_is_idle(),
        })
        .collect();
    let fault_log = shot0
        .faults
        .iter()
        .map(|e| FaultRow {
            timestep: e.site.timestep,
            layer: e.site.node.layer,
            pos: e.site.node.pos,
            register: format!("{:?}", e.site.register),
            channel: format!("{:?}", e.channel),
            resolution: format!("{:?}", e.resolution),
        })
        .collect();

    let out = QueryOutput {
        schema_version: SCHEMA_VERSION,
        n,
        k,
        channel,
        epsilon,
        gamma: gamma.unwrap_or(0.0),
        shots,
        seed,
        seed_autogenerated: seed_auto,
        mode: format!("{mode:?}").to_lowercase(),
        metric,
        input: input_text,
        table: table_desc,
        fidelity_mean: estimate.mean,
        fidelity_std_error: estimate.std_error,
        mean_reliable_fraction: estimate.mean_reliable_fraction,
        mean_unreliable_branches: estimate.mean_unreliable_branches,
        shot0: ShotSummary {
            fidelity: shot0.fidelity,
            branch_count: shot0.final_state.branch_count(),
            fault_log,
            top_branches,
        },
    };
    let json = serde_json::to_string_pretty(&out)
        .map_err(|e| CoreError::config(format!("serialize: {e}")))?;
    write_or_print(args.output.as_deref(), &json)?;
    Ok(ExitCode::SUCCESS)
}

fn load_table(
    path: Option<&Path>,
    shape: qram_core::TreeShape,
    seed: u64,
) -> Result<(qram_core::DataTable, String)> {
    use qram_core::DataTable;
    match path {
        Some(p) => {
            if !p.exists() {
                return Err(CoreError::config(format!("table {} does not exist", p.display())));
            }
            Ok((DataTable::load(p, shape)?, p.display().to_string()))
        }
        None => {
            let mut rng = qram_core::rng::shot_rng(seed, 0, qram_core::rng::Stream::Input);
            Ok((DataTable::random(shape, &mut rng), format!("random(seed={seed})")))
        }
    }
}

fn build_input(
    text: &str,
    shape: qram_core::TreeShape,
    seed: u64,
) -> Result<qram_core::SparseState> {
    use qram_core::SparseState;
    match parse_input(text)? {
        InputSelect::Uniform { count } => {
            let count = count.unwrap_or_else(|| shape.cells()).min(shape.cells());
            if count == 0 {
                return Err(CoreError::config("empty input".to_string()));
            }
            Ok(SparseState::uniform_over(0..count))
        }
        InputSelect::Haar { count } => {
            let count = count.min(shape.cells()).max(1);
            // spread the active addresses evenly across the tree
            let stride = (shape.cells() / count).max(1);
            let mut rng = qram_core::rng::shot_rng(seed, 1, qram_core::rng::Stream::Input);
            SparseState::haar_random_over((0..count).map(|i| (i * stride, 0u64)), &mut rng)
        }
        InputSelect::Amplitudes { path } => {
            if !path.exists() {
                return Err(CoreError::config(format!(
                    "amplitude file {} does not exist",
                    path.display()
                )));
            }
            let text = std::fs::read_to_string(&path)?;
            let mut rows = Vec::new();
            for (no, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || (no == 0 && line.starts_with("address")) {
                    continue;
                }
                let parts: Vec<&str> = line.split(',').map(str::trim).collect();
                if parts.len() != 4 {
                    return Err(CoreError::config(format!(
                        "{}:{}: expected address,data,re,im",
                        path.display(),
                        no + 1
                    )));
                }
                let parse_err =
                    |what: &str| CoreError::config(format!("{}:{}: bad {what}", path.display(), no + 1));
                let address: u64 = parts[0].parse().map_err(|_| parse_err("address"))?;
                let data: u64 = parts[1].parse().map_err(|_| parse_err("data"))?;
                let re: f64 = parts[2].parse().map_err(|_| parse_err("re"))?;
                let im: f64 = parts[3].parse().map_err(|_| parse_err("im"))?;
                if address >= shape.cells() {
                    return Err(parse_err("address range"));
                }
                rows.push((address, data, qram_core::Complex64::new(re, im)));
            }
            let mut state = SparseState::from_bus(rows);
            state.normalize()?;
            Ok(state)
        }
    }
}

// ---------------------------------------------------------------- ef

#[derive(Args)]
struct EfArgs {
    /// identity | cnot | qram
    #[arg(long, default_value = "identity")]
    op: String,
    /// Register width for identity (cnot is always 2).
    #[arg(long, default_value_t = 1)]
    qubits: u8,
    #[arg(long)]
    n: Option<u8>,
    #[arg(long, default_value_t = 1)]
    k: u8,
    #[arg(long, value_enum, default_value = "depolarizing")]
    channel: ChannelSelect,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long)]
    gamma: Option<f64>,
    /// Filtration levels, e.g. `1,2,3,4`.
    #[arg(long = "t", default_value = "1")]
    t_levels: String,
    /// Random input states per level.
    #[arg(long, default_value_t = 100)]
    states: u64,
    /// Shots per state.
    #[arg(long, default_value_t = 1000)]
    shots: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Memory branches of the haar-random query input (qram op).
    #[arg(long, default_value_t = 16)]
    branches: u64,
    #[arg(long, value_enum, default_value = "all-qudits")]
    scope: ScopeSelect,
    #[arg(long)]
    table: Option<PathBuf>,
    /// Draw the ancilla input independently instead of copying the memory.
    #[arg(long)]
    independent_ancilla: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn cmd_ef(args: EfArgs) -> Result<ExitCode> {
    use qram_core::ef::{
        ef_bounds, run_ef, run_unfiltered, EfConfig, EfOperation, EfSweepRow, RegisterNoise,
    };
    use qram_core::{build_schedule, Mode, QueryContext, SparseState, TreeShape};

    let t_levels = parse_u8_list(&args.t_levels)?;
    if t_levels.iter().any(|&t| t == 0) {
        return Err(CoreError::config("filtration level T must be >= 1".to_string()));
    }
    let (seed, _) = resolve_seed(args.seed, None);
    let states = args.states.max(1);

    // the operation under filtration
    enum OpKind {
        Identity,
        Cnot,
        Qram(Box<QueryContext>),
    }
    let (kind, n_col) = match args.op.as_str() {
        "identity" => (OpKind::Identity, 0u8),
        "cnot" => (OpKind::Cnot, 0u8),
        "qram" => {
            let n = args
                .n
                .ok_or_else(|| CoreError::config("--n is required for --op qram".to_string()))?;
            let shape = TreeShape::new(n, args.k)?;
            let noise = noise_spec(
                args.channel,
                args.epsilon,
                args.gamma,
                args.scope,
                EligibilitySelect::Gates,
            )?;
            let schedule = build_schedule(shape)?;
            let (table, _) = load_table(args.table.as_deref(), shape, seed)?;
            (OpKind::Qram(Box::new(QueryContext::new(schedule, table, noise)?)), n)
        }
        other => return Err(CoreError::config(format!("unknown op `{other}`"))),
    };

    let state_labels = |kind: &OpKind| -> Vec<(u64, u64)> {
        match kind {
            OpKind::Identity => (0..(1u64 << args.qubits)).map(|d| (0, d)).collect(),
            OpKind::Cnot => (0..4u64).map(|d| (0, d)).collect(),
            OpKind::Qram(ctx) => {
                let cells = ctx.schedule.shape.cells();
                (0..args.branches.min(cells)).map(|a| (a, 0)).collect()
            }
        }
    };

    let mut lines = vec![EfSweepRow::csv_header().to_string()];
    for &t in &t_levels {
        let mut cfg = EfConfig::new(t)?;
        cfg.ancilla_equals_memory = !args.independent_ancilla;
        let mut f0_sum = 0.0;
        let mut ft_sum = 0.0;
        let mut ps_sum = 0.0;
        for s in 0..states {
            let mut rng = qram_core::rng::shot_rng(seed, s, qram_core::rng::Stream::Input);
            let psi = SparseState::haar_random_over(state_labels(&kind).into_iter(), &mut rng)?;
            let phi = if args.independent_ancilla {
                SparseState::haar_random_over(state_labels(&kind).into_iter(), &mut rng)?
            } else {
                psi.clone()
            };
            let noise = RegisterNoise::Depolarizing { p: args.epsilon };
            let op = match &kind {
                OpKind::Identity => EfOperation::Identity { qubits: args.qubits, noise },
                OpKind::Cnot => EfOperation::Cnot { noise },
                OpKind::Qram(ctx) => {
                    EfOperation::Qram { ctx: ctx.as_ref(), invocation_mode: Mode::Pruned }
                }
            };
            let state_seed = seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(s + 1));
            let (f0, _) = run_unfiltered(&psi, &op, args.shots, state_seed)?;
            let out = run_ef(&psi, &phi, &op, &cfg, args.shots, state_seed ^ 0xEF)?;
            f0_sum += f0;
            ft_sum += out.f_t;
            ps_sum += out.p_s;
        }
        let f0 = f0_sum / states as f64;
        let ft = ft_sum / states as f64;
        let ps = ps_sum / states as f64;
        let ratio = if ft < 1.0 { (1.0 - f0) / (1.0 - ft) } else { f64::INFINITY };
        let eps_eff = (1.0 - f0).clamp(0.0, 0.5);
        let bounds = ef_bounds(eps_eff, t)?;
        lines.push(
            EfSweepRow {
                n: n_col,
                epsilon: args.epsilon,
                t,
                f0,
                ft,
                ratio,
                ps,
                bound_worst: bounds.worst,
                bound_original: bounds.original,
                bound_refined: bounds.refined,
                shots: args.shots * states,
                seed,
            }
            .to_csv_row(),
        );
    }
    write_or_print(args.output.as_deref(), &lines.join("\n"))?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- bench

#[derive(Args)]
struct BenchArgs {
    /// Address sizes: `6..18` or `6,10,14`.
    #[arg(long, default_value = "6..12")]
    n: String,
    /// Depolarizing rates, comma separated.
    #[arg(long, default_value = "1e-6,1e-5,1e-4")]
    p: String,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Branch sizes for the static baseline.
    #[arg(long, default_value = "1,32,1024")]
    branch_sizes: String,
    /// Branch size of the dynamic runs.
    #[arg(long, default_value_t = 32)]
    branch_size: u64,
    #[arg(long, default_value_t = 20)]
    shots: u64,
    #[arg(long, default_value_t = 5)]
    reps: u32,
    #[arg(long, default_value_t = 1)]
    k: u8,
    #[arg(long)]
    seed: Option<u64>,
    /// full | pruned | both
    #[arg(long, default_value = "both")]
    modes: String,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Where to write the JSON regression summary.
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    use qram_core::cost::{
        classify_region, compare_modes, measure_dynamic, measure_static, static_time_slope,
        BenchSummary, CostSample, NoiseCell,
    };
    use qram_core::fit::linear_fit;
    use qram_core::Mode;

    let ns = parse_n_range(&args.n)?;
    let ps = parse_f64_list(&args.p)?;
    let branch_sizes: Vec<u64> = parse_f64_list(&args.branch_sizes)?
        .into_iter()
        .map(|b| b as u64)
        .collect();
    let (seed, _) = resolve_seed(args.seed, None);
    let modes: Vec<Mode> = match args.modes.as_str() {
        "full" => vec![Mode::Full],
        "pruned" => vec![Mode::Pruned],
        "both" => vec![Mode::Full, Mode::Pruned],
        other => return Err(CoreError::config(format!("unknown modes `{other}`"))),
    };
    let grid: Vec<NoiseCell> = ps.iter().map(|&p| NoiseCell { p, gamma: args.gamma }).collect();

    let mut all_sizes = branch_sizes.clone();
    if !all_sizes.contains(&args.branch_size) {
        all_sizes.push(args.branch_size);
    }
    let static_samples = measure_static(&ns, &all_sizes, args.reps, args.k, seed)?;

    let mut rows = vec![CostSample::csv_header().to_string()];
    for s in &static_samples {
        rows.push(s.to_csv_row());
    }

    let mut per_mode: Vec<(Mode, Vec<CostSample>)> = Vec::new();
    for &mode in &modes {
        let dynamic = measure_dynamic(
            &static_samples,
            &ns,
            &grid,
            args.branch_size,
            args.shots,
            mode,
            args.k,
            seed,
        )?;
        let samples: Vec<CostSample> = dynamic.iter().map(|d| d.sample.clone()).collect();
        for s in &samples {
            rows.push(s.to_csv_row());
        }
        per_mode.push((mode, samples));
    }
    write_or_print(args.output.as_deref(), &rows.join("\n"))?;

    // regression summary
    let mut summary = BenchSummary::new();
    summary.static_time_slope = static_time_slope(&static_samples, args.branch_size).ok();
    if let Some((_, full)) = per_mode.iter().find(|(m, _)| *m == Mode::Full) {
        let n_max = *ns.iter().max().unwrap();
        if let Some(baseline) = static_samples
            .iter()
            .find(|s| s.n == n_max && s.branch_count == args.branch_size)
        {
            let pts: Vec<(f64, f64)> = full
                .iter()
                .filter(|s| s.n == n_max)
                .map(|s| (s.epsilon, s.peak_memory as f64 / baseline.peak_memory as f64 - 1.0))
                .collect();
            if pts.len() >= 2 {
                let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
                if let Ok((slope, _, r2)) = linear_fit(&xs, &ys) {
                    summary.memory_ratio_slope = Some(slope);
                    summary.memory_ratio_r2 = Some(r2);
                }
            }
        }
        let p_max = ps.iter().cloned().fold(f64::MIN, f64::max);
        let pts: Vec<(f64, f64)> = full
            .iter()
            .filter(|s| s.epsilon == p_max && s.unreliable_branches > 0.0)
            .map(|s| (f64::from(s.n), s.unreliable_branches.log2()))
            .collect();
        if pts.len() >= 2 {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            summary.unreliable_log2_slope = linear_fit(&xs, &ys).ok().map(|f| f.0);
        }
    }

    #[derive(Serialize)]
    struct FullSummary {
        #[serde(flatten)]
        regressions: BenchSummary,
        mode_ratios: Vec<qram_core::cost::ModeRatio>,
        warnings: Vec<String>,
        regions: Vec<String>,
    }
    let (ratios, warnings) = match (
        per_mode.iter().find(|(m, _)| *m == Mode::Full),
        per_mode.iter().find(|(m, _)| *m == Mode::Pruned),
    ) {
        (Some((_, f)), Some((_, p))) => compare_modes(f, p),
        _ => (Vec::new(), Vec::new()),
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let regions = ns
        .iter()
        .flat_map(|&n| {
            ps.iter()
                .map(move |&p| format!("n={n} p={p}: region {}", classify_region(n, p)))
        })
        .collect();
    let full = FullSummary { regressions: summary, mode_ratios: ratios, warnings, regions };
    let json = serde_json::to_string_pretty(&full)
        .map_err(|e| CoreError::config(format!("serialize: {e}")))?;
    match &args.summary {
        Some(path) => std::fs::write(path, json)?,
        None => eprintln!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- validate

#[derive(Args)]
struct ValidateArgs {
    /// Smaller Monte Carlo sizes.
    #[arg(long)]
    quick: bool,
    /// Also write the report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn cmd_validate(args: ValidateArgs) -> Result<ExitCode> {
    let report = qram_core::validate::run_all(args.quick)?;
    for c in &report.checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(path) = &args.json {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| CoreError::config(format!("serialize: {e}")))?;
        std::fs::write(path, json)?;
    }
    if report.all_passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

// ---------------------------------------------------------------- fit

#[derive(Args)]
struct FitArgs {
    /// CSV with columns `n,infidelity` (header optional).
    #[arg(long)]
    input: PathBuf,
    /// Cap of the feasible-n search.
    #[arg(long, default_value_t = 4096)]
    n_cap: u32,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct FitOutput {
    schema_version: u32,
    exponent: f64,
    prefactor: f64,
    r_squared: f64,
    eps_max_original: f64,
    eps_max_refined: f64,
    n_max_original: u32,
    n_max_refined: u32,
}

fn cmd_fit(args: FitArgs) -> Result<ExitCode> {
    use qram_core::ef::progressive_limit;
    use qram_core::fit::{fit_power_law, max_feasible_n};

    if !args.input.exists() {
        return Err(CoreError::config(format!("{} does not exist", args.input.display())));
    }
    let text = std::fs::read_to_string(&args.input)?;
    let mut points = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (no == 0 && line.chars().next().is_some_and(char::is_alphabetic)) {
            continue;
        }
        let mut parts = line.split(',');
        let (n, y) = match (parts.next(), parts.next()) {
            (Some(n), Some(y)) => (n.trim(), y.trim()),
            _ => {
                return Err(CoreError::config(format!(
                    "{}:{}: expected `n,infidelity`",
                    args.input.display(),
                    no + 1
                )))
            }
        };
        let n: f64 = n
            .parse()
            .map_err(|_| CoreError::config(format!("{}:{}: bad n", args.input.display(), no + 1)))?;
        let y: f64 = y.parse().map_err(|_| {
            CoreError::config(format!("{}:{}: bad infidelity", args.input.display(), no + 1))
        })?;
        points.push((n, y));
    }
    let fit = fit_power_law(&points)?;
    let eps_max_original = progressive_limit(4.0);
    let eps_max_refined = progressive_limit(2.0);
    let out = FitOutput {
        schema_version: SCHEMA_VERSION,
        exponent: fit.exponent,
        prefactor: fit.prefactor,
        r_squared: fit.r_squared,
        eps_max_original,
        eps_max_refined,
        n_max_original: max_feasible_n(&fit, eps_max_original, args.n_cap),
        n_max_refined: max_feasible_n(&fit, eps_max_refined, args.n_cap),
    };
    let json = serde_json::to_string_pretty(&out)
        .map_err(|e| CoreError::config(format!("serialize: {e}")))?;
    write_or_print(args.output.as_deref(), &json)?;
    Ok(ExitCode::SUCCESS)
}

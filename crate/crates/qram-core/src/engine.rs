//! Query execution: noiseless fast path, full-mode noisy stepping, and
//! pruned-mode stepping.
//!
//! Faults are sampled before a shot runs. With an empty fault list both
//! modes reduce to the noiseless fast path, so a clean shot costs exactly a
//! noiseless query. Full mode steps every branch through every timestep and
//! applies fault events where sampled. Pruned mode simulates only the
//! branches inside the union of the per-fault affected intervals; every
//! other branch provably ends as |i⟩|j ⊕ d_i⟩ with one shared tree
//! configuration, which is reconstructed from a single ghost overlay of the
//! fault subtrees evolved once per shot. For mixed-unitary channels the two
//! modes agree amplitude-for-amplitude: fault phases are replayed onto
//! reliable branches in event order so even the floating-point sequence
//! matches.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::noise::{
    omega_pow, sample_fault_locations, ChannelKind, ChannelName, ErrorUnitary, FaultEvent,
    KrausChannel, NoiseLayout, NoiseSpec, QuasiOp, Resolution,
};
use crate::rng::{shot_rng, Stream};
use crate::schedule::{QuerySchedule, TreeOp};
use crate::state::{bus_fidelity, overlap, Branch, BranchLabel, QutritValue, SparseState};
use crate::table::DataTable;
use crate::topology::{unreliable_set, AddressSet, FaultSite, Register};

/// Simulation mode for noisy shots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Full,
    Pruned,
}

impl std::str::FromStr for Mode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "pruned" => Ok(Mode::Pruned),
            other => Err(CoreError::config(format!("invalid mode `{other}`"))),
        }
    }
}

/// Which fidelity is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FidelityMetric {
    /// Tree, control and ancilla registers traced out (default).
    Bus,
    /// |⟨ideal|state⟩|² of the full labelled state; diagnostics only.
    FullOverlap,
}

/// Result of one noisy shot.
#[derive(Debug, Clone)]
pub struct ShotOutcome {
    pub final_state: SparseState,
    pub faults: Vec<FaultEvent>,
    /// Addresses outside every fault's affected interval.
    pub reliable: AddressSet,
    pub fidelity: f64,
    pub mode: Mode,
}

/// Deterministic, machine-independent memory accounting. Branch cost is a
/// fixed header plus per-entry costs of the sparse maps; the classical table
/// is accounted separately by the caller.
pub fn label_bytes(label: &BranchLabel) -> u64 {
    let env: u64 = label
        .env
        .iter()
        .map(|(_, a, d)| 24 + 8 * a.len() as u64 + 16 * d.len() as u64)
        .sum();
    64 + 8 * label.tree_address.len() as u64 + 16 * label.tree_data.len() as u64 + env
}

pub fn state_bytes(branches: &[Branch]) -> u64 {
    branches.iter().map(|b| label_bytes(&b.label)).sum()
}

const FAULT_EVENT_BYTES: u64 = 48;

/// Tracks the peak simulator-internal footprint over a shot.
#[derive(Debug, Clone, Copy, Default)]
pub struct CostMeter {
    pub peak_state_bytes: u64,
}

impl CostMeter {
    pub fn observe(&mut self, bytes: u64) {
        self.peak_state_bytes = self.peak_state_bytes.max(bytes);
    }
}

/// Everything fixed across the shots of one run.
#[derive(Debug, Clone)]
pub struct QueryContext {
    pub schedule: QuerySchedule,
    pub table: DataTable,
    pub noise: NoiseSpec,
    pub layout: NoiseLayout,
    addr_channels: Vec<KrausChannel>,
    data_channels: Vec<KrausChannel>,
}

impl QueryContext {
    pub fn new(schedule: QuerySchedule, table: DataTable, noise: NoiseSpec) -> Result<Self> {
        if table.shape() != schedule.shape {
            return Err(CoreError::config(
                "data table and schedule disagree on (n, k)".to_string(),
            ));
        }
        let layout = NoiseLayout::new(&schedule, noise.eligibility);
        let addr_channels = noise.address_channels()?;
        let data_channels = noise.data_channels()?;
        Ok(QueryContext { schedule, table, noise, layout, addr_channels, data_channels })
    }

    pub fn channel(&self, name: ChannelName) -> &KrausChannel {
        self.addr_channels
            .iter()
            .chain(self.data_channels.iter())
            .find(|c| c.name == name)
            .expect("event refers to an active channel")
    }
}

/// The ideal memory transform |i⟩|j⟩ ↦ |i⟩|j ⊕ d_i⟩ applied directly; trees
/// stay idle and spectator labels are untouched.
pub fn run_noiseless(
    input: &SparseState,
    table: &DataTable,
    schedule: &QuerySchedule,
) -> Result<SparseState> {
    if table.shape() != schedule.shape {
        return Err(CoreError::config(
            "data table and schedule disagree on (n, k)".to_string(),
        ));
    }
    let cells = schedule.shape.cells();
    let mut out = input.clone();
    for branch in &mut out.branches {
        debug_assert!(branch.label.tree_is_idle());
        if branch.label.bus_address >= cells {
            return Err(CoreError::domain(format!(
                "bus address {} out of range",
                branch.label.bus_address
            )));
        }
        branch.label.bus_data ^= table.get(branch.label.bus_address);
    }
    out.merge_duplicates();
    Ok(out)
}

fn event_node_value(label: &BranchLabel, site: FaultSite, data_bit: u8) -> usize {
    match site.register {
        Register::Address => label.addr_get(site.node).index(),
        Register::Data => ((label.data_get(site.node) >> data_bit) & 1) as usize,
    }
}

fn set_event_node_value(label: &mut BranchLabel, site: FaultSite, data_bit: u8, value: u8) {
    match site.register {
        Register::Address => label.addr_set(site.node, QutritValue::from_index(value as usize)),
        Register::Data => {
            let word =
                (label.data_get(site.node) & !(1u64 << data_bit)) | (u64::from(value) << data_bit);
            label.data_set(site.node, word);
        }
    }
}

/// Apply one error unitary to one label; returns the amplitude factor.
fn apply_unitary_to_label(
    label: &mut BranchLabel,
    site: FaultSite,
    data_bit: u8,
    unitary: ErrorUnitary,
) -> Complex64 {
    match unitary {
        ErrorUnitary::QutritWeyl { shift, phase } => {
            let idx = label.addr_get(site.node).index();
            let factor = omega_pow(u32::from(phase) * idx as u32);
            if shift > 0 {
                label.addr_set(site.node, QutritValue::from_index(idx + shift as usize));
            }
            factor
        }
        ErrorUnitary::PauliX => {
            let word = label.data_get(site.node) ^ (1u64 << data_bit);
            label.data_set(site.node, word);
            Complex64::new(1.0, 0.0)
        }
        ErrorUnitary::PauliY => {
            let old = (label.data_get(site.node) >> data_bit) & 1;
            let word = label.data_get(site.node) ^ (1u64 << data_bit);
            label.data_set(site.node, word);
            if old == 0 {
                Complex64::new(0.0, 1.0)
            } else {
                Complex64::new(0.0, -1.0)
            }
        }
        ErrorUnitary::PauliZ => {
            let bit = (label.data_get(site.node) >> data_bit) & 1;
            if bit == 1 {
                Complex64::new(-1.0, 0.0)
            } else {
                Complex64::new(1.0, 0.0)
            }
        }
    }
}

fn apply_unitary_to_branches(
    branches: &mut [Branch],
    site: FaultSite,
    data_bit: u8,
    unitary: ErrorUnitary,
) {
    for b in branches {
        let factor = apply_unitary_to_label(&mut b.label, site, data_bit, unitary);
        b.amplitude *= factor;
    }
}

/// Sample an operator of a mixed-unitary channel from its full distribution
/// and apply it (index 0 is the scaled identity). Norm is preserved exactly.
pub fn apply_mixed_unitary(
    state: &mut SparseState,
    site: FaultSite,
    data_bit: u8,
    channel: &KrausChannel,
    rng: &mut impl Rng,
) -> Result<usize> {
    if channel.kind != ChannelKind::MixedUnitary {
        return Err(CoreError::contract(
            "apply_mixed_unitary needs a mixed-unitary channel".to_string(),
        ));
    }
    let probs = channel.probabilities();
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut index = probs.len() - 1;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            index = i;
            break;
        }
    }
    if index > 0 {
        apply_unitary_to_branches(
            &mut state.branches,
            site,
            data_bit,
            channel.error_unitary((index - 1) as u8),
        );
    }
    Ok(index)
}

/// Outcome weights of a quasi-measurement over live branches plus an
/// optional aggregated reliable component sitting at `overlay_value`.
fn quasi_weights(
    ops: &[QuasiOp],
    branches: &[Branch],
    site: FaultSite,
    data_bit: u8,
    reliable: Option<(f64, usize)>,
) -> Vec<f64> {
    let mut weights = vec![0.0; ops.len()];
    for b in branches {
        let v = event_node_value(&b.label, site, data_bit);
        let w = b.amplitude.norm_sqr();
        for (i, op) in ops.iter().enumerate() {
            weights[i] += w * op.weight_on(v);
        }
    }
    if let Some((w_rel, v_rel)) = reliable {
        for (i, op) in ops.iter().enumerate() {
            weights[i] += w_rel * op.weight_on(v_rel);
        }
    }
    weights
}

fn pick_outcome(weights: &[f64], rng: &mut impl Rng) -> Result<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(CoreError::numerical(
            "quasi-measurement: all outcome weights vanish".to_string(),
        ));
    }
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc && w > 0.0 {
            return Ok(i);
        }
    }
    Ok(weights.iter().rposition(|&w| w > 0.0).unwrap())
}

fn apply_quasi_to_branches(
    branches: &mut Vec<Branch>,
    site: FaultSite,
    data_bit: u8,
    op: &QuasiOp,
) {
    for b in branches.iter_mut() {
        let v = event_node_value(&b.label, site, data_bit);
        match op.map[v] {
            None => b.amplitude = Complex64::new(0.0, 0.0),
            Some((out, factor)) => {
                if factor != 1.0 {
                    b.amplitude *= factor;
                }
                if out as usize != v {
                    set_event_node_value(&mut b.label, site, data_bit, out);
                }
            }
        }
    }
    branches.retain(|b| b.amplitude.norm_sqr() > 0.0);
}

/// Resolve one biased-channel noise spot on a state: quasi-measure over the
/// conditional operators, apply the sampled one, renormalize. Returns the
/// outcome probability (the pre-normalization squared norm).
pub fn quasi_measure(
    state: &mut SparseState,
    site: FaultSite,
    data_bit: u8,
    channel: &KrausChannel,
    rng: &mut impl Rng,
) -> Result<(usize, f64)> {
    if channel.kind != ChannelKind::Biased {
        return Err(CoreError::contract(
            "quasi_measure needs a biased channel".to_string(),
        ));
    }
    let ops = channel.quasi_ops();
    let weights = quasi_weights(&ops, &state.branches, site, data_bit, None);
    let total: f64 = weights.iter().sum();
    let outcome = pick_outcome(&weights, rng)?;
    apply_quasi_to_branches(&mut state.branches, site, data_bit, &ops[outcome]);
    state.normalize()?;
    Ok((outcome, weights[outcome] / total))
}

fn apply_ops(step: &[TreeOp], branches: &mut [Branch], ctx: &QueryContext) {
    for op in step {
        for b in branches.iter_mut() {
            op.apply(&mut b.label, ctx.schedule.shape, &ctx.table);
        }
    }
}

/// Full-mode execution: every branch stepped through every timestep.
fn execute_full(
    ctx: &QueryContext,
    branches: &mut Vec<Branch>,
    events: &mut [FaultEvent],
    quasi_rng: &mut impl Rng,
    meter: Option<&mut CostMeter>,
) -> Result<()> {
    let mut meter = meter;
    let mut ev = 0usize;
    for (ts, step) in ctx.schedule.timesteps.iter().enumerate() {
        apply_ops(&step.ops, branches, ctx);
        while ev < events.len() && events[ev].site.timestep == ts as u32 {
            let event = &mut events[ev];
            let channel = ctx.channel(event.channel);
            match channel.kind {
                ChannelKind::MixedUnitary => {
                    let index = match event.resolution {
                        Resolution::SampledUnitary(i) => i,
                        _ => {
                            let i = quasi_rng.gen_range(0..channel.conditional_error_count());
                            event.resolution = Resolution::SampledUnitary(i);
                            i
                        }
                    };
                    apply_unitary_to_branches(
                        branches,
                        event.site,
                        event.data_bit,
                        channel.error_unitary(index),
                    );
                }
                ChannelKind::Biased => {
                    let ops = channel.quasi_ops();
                    let weights =
                        quasi_weights(&ops, branches, event.site, event.data_bit, None);
                    let outcome = pick_outcome(&weights, quasi_rng)?;
                    event.resolution = Resolution::QuasiMeasured(outcome as u8);
                    apply_quasi_to_branches(branches, event.site, event.data_bit, &ops[outcome]);
                    let norm_sq: f64 = branches.iter().map(|b| b.amplitude.norm_sqr()).sum();
                    if norm_sq <= 0.0 {
                        return Err(CoreError::numerical(
                            "state annihilated by quasi-measurement".to_string(),
                        ));
                    }
                    let inv = 1.0 / norm_sq.sqrt();
                    for b in branches.iter_mut() {
                        b.amplitude *= inv;
                    }
                }
            }
            ev += 1;
        }
        if let Some(m) = meter.as_deref_mut() {
            m.observe(state_bytes(branches) + events.len() as u64 * FAULT_EVENT_BYTES);
        }
    }
    Ok(())
}

/// Ghost overlay: evolution of the fault subtrees shared by every reliable
/// branch. Bus-coupled operations and the root absorb act on branch paths,
/// never on the overlay (a root fault leaves no reliable branches).
#[derive(Debug, Clone, Default)]
struct Overlay {
    label: BranchLabel,
}

impl Overlay {
    fn apply_op(&mut self, op: TreeOp, ctx: &QueryContext) {
        match op {
            TreeOp::BusAddressSwap { .. } | TreeOp::BusDataSwap => {}
            TreeOp::InternalSwap { layer: 0 } => {}
            other => other.apply(&mut self.label, ctx.schedule.shape, &ctx.table),
        }
    }
}

/// Pruned-mode execution over the unreliable branches plus the overlay.
#[allow(clippy::too_many_arguments)]
fn execute_pruned(
    ctx: &QueryContext,
    live: &mut Vec<Branch>,
    kept_weight: f64,
    events: &mut [FaultEvent],
    quasi_rng: &mut impl Rng,
    mut meter: Option<&mut CostMeter>,
    kept_bytes: u64,
) -> Result<(Overlay, Vec<Complex64>, f64, bool)> {
    let mut overlay = Overlay::default();
    let mut phase_log: Vec<Complex64> = Vec::new();
    let mut rel_scale = 1.0f64;
    let mut rel_alive = kept_weight > 0.0;
    let mut ev = 0usize;
    for (ts, step) in ctx.schedule.timesteps.iter().enumerate() {
        for op in &step.ops {
            for b in live.iter_mut() {
                op.apply(&mut b.label, ctx.schedule.shape, &ctx.table);
            }
            overlay.apply_op(*op, ctx);
        }
        while ev < events.len() && events[ev].site.timestep == ts as u32 {
            let event = &mut events[ev];
            let channel = ctx.channel(event.channel);
            match channel.kind {
                ChannelKind::MixedUnitary => {
                    let index = match event.resolution {
                        Resolution::SampledUnitary(i) => i,
                        _ => {
                            let i = quasi_rng.gen_range(0..channel.conditional_error_count());
                            event.resolution = Resolution::SampledUnitary(i);
                            i
                        }
                    };
                    let unitary = channel.error_unitary(index);
                    apply_unitary_to_branches(live, event.site, event.data_bit, unitary);
                    let factor = apply_unitary_to_label(
                        &mut overlay.label,
                        event.site,
                        event.data_bit,
                        unitary,
                    );
                    phase_log.push(factor);
                }
                ChannelKind::Biased => {
                    let ops = channel.quasi_ops();
                    let rel = if rel_alive {
                        Some((
                            kept_weight * rel_scale * rel_scale,
                            event_node_value(&overlay.label, event.site, event.data_bit),
                        ))
                    } else {
                        None
                    };
                    let weights = quasi_weights(&ops, live, event.site, event.data_bit, rel);
                    let outcome = pick_outcome(&weights, quasi_rng)?;
                    event.resolution = Resolution::QuasiMeasured(outcome as u8);
                    apply_quasi_to_branches(live, event.site, event.data_bit, &ops[outcome]);
                    if rel_alive {
                        let v = event_node_value(&overlay.label, event.site, event.data_bit);
                        match ops[outcome].map[v] {
                            None => rel_alive = false,
                            Some((out, factor)) => {
                                rel_scale *= factor;
                                set_event_node_value(
                                    &mut overlay.label,
                                    event.site,
                                    event.data_bit,
                                    out,
                                );
                            }
                        }
                    }
                    let mut norm_sq: f64 =
                        live.iter().map(|b| b.amplitude.norm_sqr()).sum();
                    if rel_alive {
                        norm_sq += kept_weight * rel_scale * rel_scale;
                    }
                    if norm_sq <= 0.0 {
                        return Err(CoreError::numerical(
                            "state annihilated by quasi-measurement".to_string(),
                        ));
                    }
                    let inv = 1.0 / norm_sq.sqrt();
                    for b in live.iter_mut() {
                        b.amplitude *= inv;
                    }
                    rel_scale *= inv;
                }
            }
            ev += 1;
        }
        if let Some(m) = meter.as_deref_mut() {
            m.observe(
                state_bytes(live)
                    + kept_bytes
                    + label_bytes(&overlay.label)
                    + events.len() as u64 * FAULT_EVENT_BYTES,
            );
        }
    }
    Ok((overlay, phase_log, rel_scale, rel_alive))
}

/// Canonical final form: branches sorted by (label, amplitude bits) before
/// merging, so coincident labels sum in a mode-independent order.
fn canonicalize(state: &mut SparseState) {
    state.branches.sort_by(|a, b| {
        a.label.cmp(&b.label).then_with(|| {
            (a.amplitude.re.to_bits(), a.amplitude.im.to_bits())
                .cmp(&(b.amplitude.re.to_bits(), b.amplitude.im.to_bits()))
        })
    });
    let mut merged: Vec<Branch> = Vec::with_capacity(state.branches.len());
    for b in state.branches.drain(..) {
        match merged.last_mut() {
            Some(last) if last.label == b.label => last.amplitude += b.amplitude,
            _ => merged.push(b),
        }
    }
    merged.retain(|b| {
        b.amplitude.norm_sqr() > crate::state::DROP_THRESHOLD * crate::state::DROP_THRESHOLD
    });
    state.branches = merged;
}

/// Evolve a state in place through one noisy query with an explicit fault
/// list, resolving any outcome left `Pending` from `quasi_rng`. With an
/// empty fault list this is exactly the noiseless fast path in either mode.
pub fn evolve_with_faults(
    ctx: &QueryContext,
    state: &mut SparseState,
    events: &mut Vec<FaultEvent>,
    mode: Mode,
    quasi_rng: &mut impl Rng,
    mut meter: Option<&mut CostMeter>,
) -> Result<()> {
    if events.is_empty() {
        let out = run_noiseless(state, &ctx.table, &ctx.schedule)?;
        *state = out;
        if let Some(m) = meter.as_deref_mut() {
            m.observe(state_bytes(&state.branches));
        }
        return Ok(());
    }
    match mode {
        Mode::Full => {
            execute_full(ctx, &mut state.branches, events, quasi_rng, meter.as_deref_mut())?;
        }
        Mode::Pruned => {
            let shape = ctx.schedule.shape;
            let sites: Vec<FaultSite> = events.iter().map(|e| e.site).collect();
            let unreliable = unreliable_set(&sites, shape)?;
            let mut live: Vec<Branch> = Vec::new();
            let mut kept: Vec<Branch> = Vec::new();
            for b in state.branches.drain(..) {
                if unreliable.contains(b.label.bus_address) {
                    live.push(b);
                } else {
                    kept.push(b);
                }
            }
            let kept_weight: f64 = kept.iter().map(|b| b.amplitude.norm_sqr()).sum();
            let kept_bytes = state_bytes(&kept);
            let (overlay, phase_log, rel_scale, rel_alive) = execute_pruned(
                ctx,
                &mut live,
                kept_weight,
                events,
                quasi_rng,
                meter.as_deref_mut(),
                kept_bytes,
            )?;
            if rel_alive {
                for mut b in kept {
                    b.label.bus_data ^= ctx.table.get(b.label.bus_address);
                    b.label.tree_address = overlay.label.tree_address.clone();
                    b.label.tree_data = overlay.label.tree_data.clone();
                    for f in &phase_log {
                        b.amplitude *= f;
                    }
                    if rel_scale != 1.0 {
                        b.amplitude *= rel_scale;
                    }
                    live.push(b);
                }
            }
            state.branches = live;
        }
    }
    Ok(())
}

/// Run one noisy shot with an explicit fault list (the forced-fault API).
/// `quasi_rng` resolves any outcome left `Pending`.
pub fn run_with_faults(
    ctx: &QueryContext,
    input: &SparseState,
    mut events: Vec<FaultEvent>,
    mode: Mode,
    quasi_rng: &mut impl Rng,
    ideal: Option<&SparseState>,
    metric: FidelityMetric,
    mut meter: Option<&mut CostMeter>,
) -> Result<ShotOutcome> {
    let shape = ctx.schedule.shape;
    let cells = shape.cells();
    let sites: Vec<FaultSite> = events.iter().map(|e| e.site).collect();
    let unreliable = unreliable_set(&sites, shape)?;
    let reliable = complement(&unreliable, cells);

    let mut final_state = input.clone();
    evolve_with_faults(
        ctx,
        &mut final_state,
        &mut events,
        mode,
        quasi_rng,
        meter.as_deref_mut(),
    )?;

    canonicalize(&mut final_state);

    let fidelity = match ideal {
        Some(ideal) => compute_fidelity(&final_state, ideal, metric),
        None => {
            let ideal = run_noiseless(input, &ctx.table, &ctx.schedule)?;
            compute_fidelity(&final_state, &ideal, metric)
        }
    };

    Ok(ShotOutcome { final_state, faults: events, reliable, fidelity, mode })
}

fn complement(set: &AddressSet, cells: u64) -> AddressSet {
    let mut ranges = Vec::new();
    let mut cursor = 0u64;
    for r in set.intervals() {
        if r.lo > cursor {
            ranges.push(crate::topology::AddressRange { lo: cursor, hi: r.lo - 1 });
        }
        cursor = r.hi + 1;
    }
    if cursor < cells {
        ranges.push(crate::topology::AddressRange { lo: cursor, hi: cells - 1 });
    }
    AddressSet::from_ranges(ranges)
}

pub fn compute_fidelity(state: &SparseState, ideal: &SparseState, metric: FidelityMetric) -> f64 {
    match metric {
        FidelityMetric::Bus => bus_fidelity(state, ideal),
        FidelityMetric::FullOverlap => overlap(ideal, state).norm_sqr(),
    }
}

/// Run one seeded noisy shot: sample the fault configuration, then execute.
pub fn run_noisy(
    ctx: &QueryContext,
    input: &SparseState,
    mode: Mode,
    seed: u64,
    shot: u64,
    ideal: Option<&SparseState>,
    metric: FidelityMetric,
    meter: Option<&mut CostMeter>,
) -> Result<ShotOutcome> {
    let mut fault_rng = shot_rng(seed, shot, Stream::Faults);
    let events = sample_fault_locations(&ctx.layout, &ctx.noise, &mut fault_rng)?;
    let mut quasi_rng = shot_rng(seed, shot, Stream::Quasi);
    run_with_faults(ctx, input, events, mode, &mut quasi_rng, ideal, metric, meter)
}

/// Monte Carlo fidelity estimate over independent shots.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub mean_reliable_fraction: f64,
    pub mean_unreliable_branches: f64,
    pub shots: u64,
}

pub fn estimate_fidelity(
    ctx: &QueryContext,
    input: &SparseState,
    mode: Mode,
    metric: FidelityMetric,
    shots: u64,
    seed: u64,
) -> Result<FidelityEstimate> {
    use rayon::prelude::*;
    let ideal = run_noiseless(input, &ctx.table, &ctx.schedule)?;
    let mut addresses: Vec<u64> = input.branches.iter().map(|b| b.label.bus_address).collect();
    addresses.sort_unstable();
    addresses.dedup();

    let rows: Result<Vec<(f64, f64, f64)>> = (0..shots)
        .into_par_iter()
        .map(|shot| {
            let outcome = run_noisy(
                ctx,
                input,
                mode,
                seed,
                shot,
                Some(&ideal),
                metric,
                None,
            )?;
            let reliable_hits = addresses
                .iter()
                .filter(|&&a| outcome.reliable.contains(a))
                .count();
            let unreliable_total =
                ctx.schedule.shape.cells() - outcome.reliable.count();
            Ok((
                outcome.fidelity,
                reliable_hits as f64 / addresses.len() as f64,
                unreliable_total as f64,
            ))
        })
        .collect();
    let rows = rows?;

    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / n.max(1.0);
    let std_error = if rows.len() > 1 { (var / n).sqrt() } else { 0.0 };
    let mean_reliable = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_unreliable = rows.iter().map(|r| r.2).sum::<f64>() / n;
    Ok(FidelityEstimate {
        mean,
        std_error,
        mean_reliable_fraction: mean_reliable,
        mean_unreliable_branches: mean_unreliable,
        shots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_schedule;
    use crate::topology::{NodeId, TreeShape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn context(n: u8, noise: NoiseSpec, table_seed: u64) -> QueryContext {
        let shape = TreeShape::new(n, 1).unwrap();
        let schedule = build_schedule(shape).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(table_seed);
        let table = DataTable::random(shape, &mut rng);
        QueryContext::new(schedule, table, noise).unwrap()
    }

    /// Step the schedule gate by gate (no fast path) and check the ideal
    /// transform plus tree disentanglement.
    #[test]
    fn stepped_schedule_matches_ideal_transform() {
        for n in 1..=6u8 {
            let ctx = context(n, NoiseSpec::noiseless(), 11 + u64::from(n));
            let input = SparseState::uniform_over(0..ctx.schedule.shape.cells());
            let mut branches = input.branches.clone();
            execute_full(
                &ctx,
                &mut branches,
                &mut [],
                &mut ChaCha12Rng::seed_from_u64(0),
                None,
            )
            .unwrap();
            let mut stepped = SparseState { branches };
            canonicalize(&mut stepped);
            for b in &stepped.branches {
                assert!(
                    b.label.tree_is_idle(),
                    "residual tree entanglement at n={n}: {:?}",
                    b.label
                );
            }
            let ideal = run_noiseless(&input, &ctx.table, &ctx.schedule).unwrap();
            let mut ideal = ideal;
            canonicalize(&mut ideal);
            assert_eq!(stepped.branches.len(), ideal.branches.len());
            for (a, b) in stepped.branches.iter().zip(ideal.branches.iter()) {
                assert_eq!(a.label, b.label);
                assert_eq!(a.amplitude, b.amplitude);
            }
        }
    }

    #[test]
    fn xor_involution_round_trip() {
        for n in [2u8, 5, 10] {
            let ctx = context(n, NoiseSpec::noiseless(), 3 + u64::from(n));
            let mut rng = ChaCha12Rng::seed_from_u64(99);
            let addresses: Vec<u64> = (0..ctx.schedule.shape.cells()).collect();
            let input = SparseState::from_bus(addresses.iter().map(|&a| {
                (
                    a,
                    rng.gen::<u64>() & 1,
                    Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                )
            }));
            let mut input = input;
            input.normalize().unwrap();
            let once = run_noiseless(&input, &ctx.table, &ctx.schedule).unwrap();
            let twice = run_noiseless(&once, &ctx.table, &ctx.schedule).unwrap();
            let mut twice = twice;
            canonicalize(&mut twice);
            let mut orig = input.clone();
            canonicalize(&mut orig);
            assert_eq!(twice.branches.len(), orig.branches.len());
            for (a, b) in twice.branches.iter().zip(orig.branches.iter()) {
                assert_eq!(a.label, b.label);
                assert!((a.amplitude - b.amplitude).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn single_address_query_examples() {
        let ctx = context(3, NoiseSpec::noiseless(), 17);
        // |i=5, j=0> -> |5, d5>, then |5, d5 ^ d5 = 0 ... via involution
        let d5 = ctx.table.get(5);
        let input = SparseState::from_bus([(5u64, 0u64, Complex64::new(1.0, 0.0))]);
        let out = run_noiseless(&input, &ctx.table, &ctx.schedule).unwrap();
        assert_eq!(out.branches[0].label.bus_data, d5);
        let input = SparseState::from_bus([(5u64, 1u64, Complex64::new(1.0, 0.0))]);
        let out = run_noiseless(&input, &ctx.table, &ctx.schedule).unwrap();
        assert_eq!(out.branches[0].label.bus_data, 1 ^ d5);
    }

    #[test]
    fn noiseless_shot_is_fast_path_and_reliable_everywhere() {
        let ctx = context(4, NoiseSpec::depolarizing(0.0), 5);
        let input = SparseState::uniform_over(0..16u64);
        let out = run_noisy(&ctx, &input, Mode::Pruned, 1, 0, None, FidelityMetric::Bus, None)
            .unwrap();
        assert!(out.faults.is_empty());
        assert_eq!(out.fidelity, 1.0);
        assert_eq!(out.reliable.count(), 16);
    }

    #[test]
    fn pruned_equals_full_bit_for_bit_mixed_unitary() {
        for n in [3u8, 5, 8] {
            for &eps in &[1e-3, 1e-2, 5e-2] {
                let ctx = context(n, NoiseSpec::depolarizing(eps), 23 + u64::from(n));
                let input = SparseState::uniform_over(0..ctx.schedule.shape.cells());
                for shot in 0..12u64 {
                    let full = run_noisy(
                        &ctx, &input, Mode::Full, 77, shot, None, FidelityMetric::Bus, None,
                    )
                    .unwrap();
                    let pruned = run_noisy(
                        &ctx, &input, Mode::Pruned, 77, shot, None, FidelityMetric::Bus, None,
                    )
                    .unwrap();
                    assert_eq!(full.final_state.branches.len(), pruned.final_state.branches.len());
                    for (a, b) in full
                        .final_state
                        .branches
                        .iter()
                        .zip(pruned.final_state.branches.iter())
                    {
                        assert_eq!(a.label, b.label, "n={n} eps={eps} shot={shot}");
                        assert_eq!(
                            (a.amplitude.re.to_bits(), a.amplitude.im.to_bits()),
                            (b.amplitude.re.to_bits(), b.amplitude.im.to_bits()),
                            "n={n} eps={eps} shot={shot}"
                        );
                    }
                    assert_eq!(full.fidelity, pruned.fidelity);
                }
            }
        }
    }

    #[test]
    fn pruned_matches_full_for_biased_channels() {
        let noise = NoiseSpec {
            depolarizing: 0.0,
            damping: 2e-3,
            heating: 1e-3,
            scope: crate::noise::NoiseScope::AllQudits,
            eligibility: crate::noise::NoiseEligibility::GateAttached,
        };
        let ctx = context(5, noise, 41);
        let input = SparseState::uniform_over(0..32u64);
        for shot in 0..40u64 {
            let full =
                run_noisy(&ctx, &input, Mode::Full, 5, shot, None, FidelityMetric::Bus, None)
                    .unwrap();
            let pruned =
                run_noisy(&ctx, &input, Mode::Pruned, 5, shot, None, FidelityMetric::Bus, None)
                    .unwrap();
            assert_eq!(full.final_state.branches.len(), pruned.final_state.branches.len());
            for (a, b) in full
                .final_state
                .branches
                .iter()
                .zip(pruned.final_state.branches.iter())
            {
                assert_eq!(a.label, b.label);
                assert!((a.amplitude - b.amplitude).norm() < 1e-12, "shot {shot}");
            }
            assert!((full.fidelity - pruned.fidelity).abs() < 1e-12);
        }
    }

    #[test]
    fn reliable_branches_carry_correct_data_and_shared_tree() {
        let ctx = context(6, NoiseSpec::depolarizing(3e-3), 7);
        let input = SparseState::uniform_over(0..64u64);
        for shot in 0..30u64 {
            let out = run_noisy(
                &ctx, &input, Mode::Pruned, 13, shot, None, FidelityMetric::Bus, None,
            )
            .unwrap();
            if out.faults.is_empty() {
                continue;
            }
            let mut shared_tree: Option<(Vec<(NodeId, QutritValue)>, Vec<(NodeId, u64)>)> = None;
            for b in &out.final_state.branches {
                let addr = b.label.bus_address;
                if out.reliable.contains(addr) && b.label.bus_data == ctx.table.get(addr) {
                    let tree =
                        (b.label.tree_address.clone(), b.label.tree_data.clone());
                    match &shared_tree {
                        None => shared_tree = Some(tree),
                        Some(existing) => assert_eq!(*existing, tree, "shot {shot}"),
                    }
                }
            }
        }
    }

    #[test]
    fn forced_leaf_fault_prunes_single_address() {
        let ctx = context(2, NoiseSpec::depolarizing(1e-3), 2);
        // force one shift fault on router (1, 0)'s address qutrit mid-schedule
        let event = FaultEvent {
            site: FaultSite {
                node: NodeId { layer: 1, pos: 0 },
                register: Register::Address,
                timestep: 3,
            },
            channel: ChannelName::QutritDepolarizing,
            data_bit: 0,
            slot_index: 0,
            channel_rank: 0,
            resolution: Resolution::SampledUnitary(0),
        };
        let input = SparseState::uniform_over(0..4u64);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let out = run_with_faults(
            &ctx,
            &input,
            vec![event],
            Mode::Pruned,
            &mut rng,
            None,
            FidelityMetric::Bus,
            None,
        )
        .unwrap();
        assert_eq!(out.reliable.iter().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn mixed_unitary_preserves_norm() {
        let ctx = context(3, NoiseSpec::depolarizing(0.3), 3);
        let input = SparseState::uniform_over(0..8u64);
        for shot in 0..20u64 {
            let out =
                run_noisy(&ctx, &input, Mode::Full, 3, shot, None, FidelityMetric::Bus, None)
                    .unwrap();
            assert!((out.final_state.norm_sq() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn apply_mixed_unitary_identity_leaves_state() {
        let channel = crate::noise::qutrit_depolarizing(0.05).unwrap();
        let site = FaultSite {
            node: NodeId::root(),
            register: Register::Address,
            timestep: 0,
        };
        let mut state = SparseState::uniform_over(0..4u64);
        let before = state.branches.clone();
        // u = first f64 of this stream is > 0.05 for this seed, so the
        // scaled identity is sampled
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let idx = apply_mixed_unitary(&mut state, site, 0, &channel, &mut rng).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(state.branches, before);
    }

    #[test]
    fn mixed_unitary_shift_inserts_node_key() {
        let channel = crate::noise::qutrit_depolarizing(1.0).unwrap();
        let site = FaultSite {
            node: NodeId { layer: 1, pos: 1 },
            register: Register::Address,
            timestep: 0,
        };
        let mut state = SparseState::uniform_over(0..4u64);
        // operator index 0 = A1: W -> 0 on an idle node
        apply_unitary_to_branches(
            &mut state.branches,
            site,
            0,
            channel.error_unitary(0),
        );
        for b in &state.branches {
            assert_eq!(b.label.addr_get(site.node), QutritValue::Zero);
        }
        // A2 on a node holding |1>: amplitude picks up omega^2
        let mut state = SparseState::uniform_over(0..2u64);
        for b in &mut state.branches {
            b.label.addr_set(site.node, QutritValue::One);
        }
        let before = state.branches[0].amplitude;
        apply_unitary_to_branches(&mut state.branches, site, 0, channel.error_unitary(1));
        let expected = before * omega_pow(2);
        assert!((state.branches[0].amplitude - expected).norm() < 1e-15);
    }

    #[test]
    fn quasi_measure_examples() {
        let channel = crate::noise::qubit_damping(1.0).unwrap();
        let site = FaultSite {
            node: NodeId::root(),
            register: Register::Data,
            timestep: 0,
        };
        // qudit surely in |0>: E0 outcome, state unchanged
        let mut state = SparseState::from_bus([(0, 0, Complex64::new(1.0, 0.0))]);
        state.branches[0].label.data_set(NodeId::root(), 0);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let (outcome, p) = quasi_measure(&mut state, site, 0, &channel, &mut rng).unwrap();
        assert_eq!(outcome, 0);
        assert!((p - 1.0).abs() < 1e-12);

        // (|0> + |1>)/sqrt(2), gamma = 1: outcome E1 w.p. 1/2, post-state |0>
        let mut hits = 0usize;
        let shots = 20_000;
        for s in 0..shots {
            let mut state = SparseState::new(vec![
                Branch {
                    amplitude: Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
                    label: BranchLabel::bus(0, 0),
                },
                Branch {
                    amplitude: Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0),
                    label: {
                        let mut l = BranchLabel::bus(0, 0);
                        l.data_set(NodeId::root(), 1);
                        l
                    },
                },
            ]);
            let mut rng = ChaCha12Rng::seed_from_u64(1000 + s as u64);
            let (outcome, p) = quasi_measure(&mut state, site, 0, &channel, &mut rng).unwrap();
            assert!((p - 0.5).abs() < 1e-12);
            if outcome == 1 {
                hits += 1;
                assert_eq!(state.branches.len(), 1);
                assert_eq!(state.branches[0].label.data_get(NodeId::root()), 0);
            }
        }
        let freq = hits as f64 / shots as f64;
        assert!((freq - 0.5).abs() < 3.0 * (0.25f64 / shots as f64).sqrt());
    }

    #[test]
    fn branch_count_never_increases_under_schedule() {
        let ctx = context(5, NoiseSpec::depolarizing(1e-2), 31);
        let input = SparseState::uniform_over(0..32u64);
        for shot in 0..10u64 {
            let out =
                run_noisy(&ctx, &input, Mode::Full, 9, shot, None, FidelityMetric::Bus, None)
                    .unwrap();
            assert!(out.final_state.branch_count() <= input.branch_count());
        }
    }
}

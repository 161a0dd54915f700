//! Error filtration: level-T controlled repetition with post-selection,
//! plus the analytic bound and suppression-ratio toolkit.
//!
//! A T-qubit control register coordinates 2^T calls to a noisy operation.
//! Control value c places the memory register in the operated slot during
//! invocation c; the ancilla register occupies the slot for the remaining
//! invocations. Kraus resolutions are sampled once per invocation and act
//! on the physical slot across the whole superposition, which is what makes
//! the erroneous components distinguishable by the final control
//! measurement. Post-selecting the all-zero control outcome removes them at
//! the cost of a success probability P_S^(T); to first order the
//! suppression ratio is (1 − F₀)/(1 − F_T) = 2^T · P_S^(T).

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{evolve_with_faults, run_noiseless, Mode, QueryContext};
use crate::error::{CoreError, Result};
use crate::noise::sample_fault_locations;
use crate::rng::{shot_rng, Stream};
use crate::state::{bus_fidelity, Branch, SparseState};

/// How per-shot pass statistics are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    /// Record the all-zero projection weight of every shot (default; same
    /// expectation as sampling the measurement, strictly lower variance).
    WeightAccumulation,
    /// Sample the control measurement and keep passing shots only.
    SampledOutcome,
}

/// Filtration configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EfConfig {
    /// Filtration level T >= 1; the circuit makes 2^T noisy invocations.
    pub t_level: u8,
    pub estimator: Estimator,
    /// Require the ancilla input to equal the memory input (the refined
    /// bound's assumption).
    pub ancilla_equals_memory: bool,
}

impl EfConfig {
    pub fn new(t_level: u8) -> Result<Self> {
        if t_level < 1 || t_level > 16 {
            return Err(CoreError::config(format!("EF level T={t_level} out of range")));
        }
        Ok(EfConfig {
            t_level,
            estimator: Estimator::WeightAccumulation,
            ancilla_equals_memory: true,
        })
    }

    pub fn invocations(&self) -> u64 {
        1u64 << self.t_level
    }
}

/// One step of the controlled-repetition circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfStep {
    /// Hadamard layer on the control register.
    ControlHadamards,
    /// Controlled-SWAP layer moving the memory into the operated slot for
    /// branches with control = `invocation` (and the ancilla otherwise).
    DispatchSwap { invocation: u8 },
    /// The noisy operation applied to the operated slot.
    NoisyInvocation { invocation: u8 },
    /// Controlled-SWAP layer restoring the register placement.
    RestoreSwap { invocation: u8 },
    /// Measure the control register and keep the all-zero outcome.
    PostSelectControl,
}

/// The level-T circuit skeleton: for T = 1 this is H, 0-controlled-SWAP,
/// noisy op, 0-controlled-SWAP, 1-controlled-SWAP, noisy op,
/// 1-controlled-SWAP, H, post-selection; general T runs one invocation per
/// control value.
#[derive(Debug, Clone)]
pub struct EfSchedule {
    pub t_level: u8,
    pub steps: Vec<EfStep>,
}

impl EfSchedule {
    pub fn invocations(&self) -> u64 {
        self.steps
            .iter()
            .filter(|s| matches!(s, EfStep::NoisyInvocation { .. }))
            .count() as u64
    }

    pub fn controlled_swap_layers(&self) -> u64 {
        self.steps
            .iter()
            .filter(|s| matches!(s, EfStep::DispatchSwap { .. } | EfStep::RestoreSwap { .. }))
            .count() as u64
    }

    pub fn hadamard_layers(&self) -> u64 {
        self.steps
            .iter()
            .filter(|s| matches!(s, EfStep::ControlHadamards))
            .count() as u64
    }
}

/// Build the level-T schedule, checking that the noisy operation's register
/// shape matches the ancilla register it will be swapped with.
pub fn build_ef_schedule(
    t_level: u8,
    memory_qubits: u8,
    ancilla_qubits: u8,
) -> Result<EfSchedule> {
    if memory_qubits != ancilla_qubits {
        return Err(CoreError::contract(format!(
            "register shape mismatch: memory {memory_qubits} qubits vs ancilla {ancilla_qubits}"
        )));
    }
    let cfg = EfConfig::new(t_level)?;
    let mut steps = vec![EfStep::ControlHadamards];
    for invocation in 0..cfg.invocations() as u8 {
        steps.push(EfStep::DispatchSwap { invocation });
        steps.push(EfStep::NoisyInvocation { invocation });
        steps.push(EfStep::RestoreSwap { invocation });
    }
    steps.push(EfStep::ControlHadamards);
    steps.push(EfStep::PostSelectControl);
    Ok(EfSchedule { t_level, steps })
}

/// Noise attached to a plain register operation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum RegisterNoise {
    /// Independent single-qubit depolarizing after the gate, rate `p`.
    Depolarizing { p: f64 },
    /// K₀ = √(1−ε)·U, K₁ = √ε·V with V = X on qubit 0: the arbitrary
    /// erroneous-unitary model behind the analytic bounds.
    ErroneousUnitary { eps: f64 },
}

/// The noisy operation under filtration.
#[derive(Debug, Clone, Copy)]
pub enum EfOperation<'a> {
    /// Identity on `qubits` register qubits.
    Identity { qubits: u8, noise: RegisterNoise },
    /// CNOT (control qubit 0, target qubit 1) on a two-qubit register.
    Cnot { noise: RegisterNoise },
    /// One full memory query; fresh fault sampling per invocation and the
    /// tree re-idled afterwards.
    Qram { ctx: &'a QueryContext, invocation_mode: Mode },
}

impl<'a> EfOperation<'a> {
    pub fn register_qubits(&self) -> u8 {
        match self {
            EfOperation::Identity { qubits, .. } => *qubits,
            EfOperation::Cnot { .. } => 2,
            EfOperation::Qram { .. } => 0,
        }
    }

    /// Ideal transform on bus labels, for fidelity references.
    pub fn apply_ideal(&self, state: &SparseState) -> Result<SparseState> {
        match self {
            EfOperation::Identity { .. } => Ok(state.clone()),
            EfOperation::Cnot { .. } => {
                let mut out = state.clone();
                for b in &mut out.branches {
                    if b.label.bus_data & 1 == 1 {
                        b.label.bus_data ^= 2;
                    }
                }
                out.merge_duplicates();
                Ok(out)
            }
            EfOperation::Qram { ctx, .. } => run_noiseless(state, &ctx.table, &ctx.schedule),
        }
    }
}

fn apply_pauli_to_slot(state: &mut SparseState, bit: u8, pauli: u8) {
    for b in &mut state.branches {
        let old = (b.label.bus_data >> bit) & 1;
        match pauli {
            0 => b.label.bus_data ^= 1u64 << bit,
            1 => {
                b.label.bus_data ^= 1u64 << bit;
                b.amplitude *= if old == 0 {
                    Complex64::new(0.0, 1.0)
                } else {
                    Complex64::new(0.0, -1.0)
                };
            }
            _ => {
                if old == 1 {
                    b.amplitude *= Complex64::new(-1.0, 0.0);
                }
            }
        }
    }
}

/// One noisy invocation applied to the operated slot (the bus registers).
fn apply_noisy_invocation(
    state: &mut SparseState,
    op: &EfOperation,
    fault_rng: &mut impl Rng,
    quasi_rng: &mut impl Rng,
    invocation: u8,
) -> Result<bool> {
    match op {
        EfOperation::Identity { qubits, noise } => {
            apply_register_noise(state, *qubits, *noise, fault_rng);
            Ok(false)
        }
        EfOperation::Cnot { noise } => {
            for b in &mut state.branches {
                if b.label.bus_data & 1 == 1 {
                    b.label.bus_data ^= 2;
                }
            }
            apply_register_noise(state, 2, *noise, fault_rng);
            Ok(false)
        }
        EfOperation::Qram { ctx, invocation_mode } => {
            let mut events = sample_fault_locations(&ctx.layout, &ctx.noise, fault_rng)?;
            let faulty = !events.is_empty();
            evolve_with_faults(ctx, state, &mut events, *invocation_mode, quasi_rng, None)?;
            // fold any residual tree configuration into the environment
            // record and re-idle the tree for the next invocation
            if faulty {
                for b in &mut state.branches {
                    if !b.label.tree_is_idle() {
                        let addr = std::mem::take(&mut b.label.tree_address);
                        let data = std::mem::take(&mut b.label.tree_data);
                        b.label.env.push((invocation, addr, data));
                    }
                }
            }
            Ok(faulty)
        }
    }
}

fn apply_register_noise(
    state: &mut SparseState,
    qubits: u8,
    noise: RegisterNoise,
    rng: &mut impl Rng,
) {
    match noise {
        RegisterNoise::Depolarizing { p } => {
            for q in 0..qubits {
                if rng.gen::<f64>() < p {
                    let pauli = rng.gen_range(0..3u8);
                    apply_pauli_to_slot(state, q, pauli);
                }
            }
        }
        RegisterNoise::ErroneousUnitary { eps } => {
            if rng.gen::<f64>() < eps {
                apply_pauli_to_slot(state, 0, 0);
            }
        }
    }
}

/// Swap the memory and ancilla slots of every branch whose control value
/// differs from `invocation` (the binary-counter controlled dispatch).
fn dispatch_slot(state: &mut SparseState, invocation: u8) {
    for b in &mut state.branches {
        if b.label.control != u64::from(invocation) {
            std::mem::swap(&mut b.label.bus_address, &mut b.label.aux_address);
            std::mem::swap(&mut b.label.bus_data, &mut b.label.aux_data);
        }
    }
}

/// Project the control register onto the uniform outcome (H^⊗T then all
/// zeros). Returns the pass weight and the normalized post-selected state.
fn project_uniform_control(state: &SparseState, t_level: u8) -> (f64, SparseState) {
    let scale = 1.0 / ((1u64 << t_level) as f64).sqrt();
    let mut projected: Vec<Branch> = state
        .branches
        .iter()
        .map(|b| {
            let mut label = b.label.clone();
            label.control = 0;
            Branch { amplitude: b.amplitude * scale, label }
        })
        .collect();
    let mut post = SparseState { branches: Vec::new() };
    projected.sort_by(|a, b| {
        a.label.cmp(&b.label).then_with(|| {
            (a.amplitude.re.to_bits(), a.amplitude.im.to_bits())
                .cmp(&(b.amplitude.re.to_bits(), b.amplitude.im.to_bits()))
        })
    });
    for b in projected {
        match post.branches.last_mut() {
            Some(last) if last.label == b.label => last.amplitude += b.amplitude,
            _ => post.branches.push(b),
        }
    }
    let pass_weight: f64 = post.branches.iter().map(|b| b.amplitude.norm_sqr()).sum();
    if pass_weight > 0.0 {
        let inv = 1.0 / pass_weight.sqrt();
        for b in &mut post.branches {
            b.amplitude *= inv;
        }
    }
    (pass_weight, post)
}

/// Per-shot record.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EfShotRecord {
    /// Squared norm of the all-zero-control projection.
    pub pass_weight: f64,
    /// Fidelity of the post-selected memory state; meaningful only when
    /// `pass_weight > 0`.
    pub conditional_fidelity: f64,
    /// Number of faulty invocations in this shot.
    pub faulty_invocations: u32,
}

/// Aggregated filtration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfRunResult {
    pub p_s: f64,
    pub p_s_err: f64,
    pub f_t: f64,
    pub f_t_err: f64,
    pub shots: u64,
    pub passed_shots: u64,
    #[serde(skip)]
    pub records: Vec<EfShotRecord>,
}

/// Run the level-T filtration circuit.
///
/// Per shot: prepare control ⊗ (memory = ψ) ⊗ (ancilla = φ) over the 2^T
/// control values, make the 2^T controlled invocations, project the control
/// onto all zeros, and score the post-selected memory state against the
/// ideal output. Estimates: P_S = mean pass weight, F_T = Σ(w·F)/Σw.
pub fn run_ef(
    psi: &SparseState,
    phi: &SparseState,
    op: &EfOperation,
    cfg: &EfConfig,
    shots: u64,
    seed: u64,
) -> Result<EfRunResult> {
    if cfg.ancilla_equals_memory {
        let diff = (crate::state::overlap(psi, phi) - Complex64::new(1.0, 0.0)).norm();
        if diff > 1e-9 {
            return Err(CoreError::config(
                "ancilla_equals_memory set but φ differs from ψ".to_string(),
            ));
        }
    }
    if shots == 0 {
        return Err(CoreError::config("shots must be >= 1".to_string()));
    }
    let ideal = op.apply_ideal(psi)?;
    let t = cfg.t_level;
    let calls = cfg.invocations() as u8;

    // initial joint state over control values
    let control_scale = 1.0 / ((1u64 << t) as f64).sqrt();
    let mut template: Vec<Branch> = Vec::new();
    for c in 0..u64::from(calls) {
        for m in &psi.branches {
            for a in &phi.branches {
                let mut label = m.label.clone();
                label.control = c;
                label.aux_address = a.label.bus_address;
                label.aux_data = a.label.bus_data;
                template.push(Branch {
                    amplitude: m.amplitude * a.amplitude * control_scale,
                    label,
                });
            }
        }
    }

    let records: Result<Vec<EfShotRecord>> = (0..shots)
        .into_par_iter()
        .map(|shot| {
            let mut fault_rng = shot_rng(seed, shot, Stream::Faults);
            let mut quasi_rng = shot_rng(seed, shot, Stream::Quasi);
            let mut state = SparseState { branches: template.clone() };
            let mut faulty = 0u32;
            for invocation in 0..calls {
                dispatch_slot(&mut state, invocation);
                let had_fault = apply_noisy_invocation(
                    &mut state,
                    op,
                    &mut fault_rng,
                    &mut quasi_rng,
                    invocation,
                )?;
                dispatch_slot(&mut state, invocation);
                if had_fault {
                    faulty += 1;
                    state.merge_duplicates();
                }
            }
            let (pass_weight, post) = project_uniform_control(&state, t);
            let conditional_fidelity = if pass_weight > 0.0 {
                bus_fidelity(&post, &ideal)
            } else {
                0.0
            };
            Ok(EfShotRecord { pass_weight, conditional_fidelity, faulty_invocations: faulty })
        })
        .collect();
    let records = records?;

    let result = match cfg.estimator {
        Estimator::WeightAccumulation => reduce_weighted(&records, shots),
        Estimator::SampledOutcome => reduce_sampled(&records, shots, seed),
    };
    if result.passed_shots == 0 {
        return Err(CoreError::numerical(
            "estimation failure: every shot had zero pass weight".to_string(),
        ));
    }
    Ok(result)
}

fn reduce_weighted(records: &[EfShotRecord], shots: u64) -> EfRunResult {
    let n = records.len() as f64;
    let p_s = records.iter().map(|r| r.pass_weight).sum::<f64>() / n;
    let p_var = records.iter().map(|r| (r.pass_weight - p_s).powi(2)).sum::<f64>() / n;
    let p_s_err = (p_var / n).sqrt();

    let w_sum: f64 = records.iter().map(|r| r.pass_weight).sum();
    let wf_sum: f64 = records.iter().map(|r| r.pass_weight * r.conditional_fidelity).sum();
    let f_t = if w_sum > 0.0 { wf_sum / w_sum } else { 0.0 };
    // delta-method error of the ratio estimator
    let resid: f64 = records
        .iter()
        .map(|r| (r.pass_weight * (r.conditional_fidelity - f_t)).powi(2))
        .sum::<f64>()
        / n;
    let f_t_err = if w_sum > 0.0 { (resid * n).sqrt() / w_sum } else { 0.0 };

    EfRunResult {
        p_s,
        p_s_err,
        f_t,
        f_t_err,
        shots,
        passed_shots: records.iter().filter(|r| r.pass_weight > 0.0).count() as u64,
        records: records.to_vec(),
    }
}

fn reduce_sampled(records: &[EfShotRecord], shots: u64, seed: u64) -> EfRunResult {
    let mut passes = 0u64;
    let mut f_values: Vec<f64> = Vec::new();
    for (shot, r) in records.iter().enumerate() {
        let mut rng = shot_rng(seed, shot as u64, Stream::Estimator);
        if rng.gen::<f64>() < r.pass_weight {
            passes += 1;
            f_values.push(r.conditional_fidelity);
        }
    }
    let n = records.len() as f64;
    let p_s = passes as f64 / n;
    let p_s_err = (p_s * (1.0 - p_s) / n).sqrt();
    let f_t = if f_values.is_empty() {
        0.0
    } else {
        f_values.iter().sum::<f64>() / f_values.len() as f64
    };
    let f_var = if f_values.len() > 1 {
        f_values.iter().map(|f| (f - f_t).powi(2)).sum::<f64>() / f_values.len() as f64
    } else {
        0.0
    };
    EfRunResult {
        p_s,
        p_s_err,
        f_t,
        f_t_err: (f_var / f_values.len().max(1) as f64).sqrt(),
        shots,
        passed_shots: passes,
        records: records.to_vec(),
    }
}

/// Unfiltered baseline: one noisy invocation applied to ψ directly.
pub fn run_unfiltered(
    psi: &SparseState,
    op: &EfOperation,
    shots: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    let ideal = op.apply_ideal(psi)?;
    let rows: Result<Vec<f64>> = (0..shots)
        .into_par_iter()
        .map(|shot| {
            let mut fault_rng = shot_rng(seed, shot, Stream::Faults);
            let mut quasi_rng = shot_rng(seed, shot, Stream::Quasi);
            let mut state = psi.clone();
            apply_noisy_invocation(&mut state, op, &mut fault_rng, &mut quasi_rng, 0)?;
            Ok(bus_fidelity(&state, &ideal))
        })
        .collect();
    let rows = rows?;
    let n = rows.len() as f64;
    let mean = rows.iter().sum::<f64>() / n;
    let var = rows.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, (var / n).sqrt()))
}

/// Analytic lower bounds on the post-selection probability.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EfBounds {
    /// Worst case: 1 − 2^T ε (every error rejects).
    pub worst: f64,
    /// Original bound: 1 − 4ε + ε/2^T.
    pub original: f64,
    /// Refined bound under ψ = φ: 1 − 2ε, independent of T.
    pub refined: f64,
    /// Dynamic form of the refined bound: 1 − 2ε(1 − 2^{−T}).
    pub dynamic_refined: f64,
}

pub fn ef_bounds(eps: f64, t_level: u8) -> Result<EfBounds> {
    if !(0.0..=0.5).contains(&eps) {
        return Err(CoreError::domain(format!("eps = {eps} outside [0, 0.5]")));
    }
    if t_level < 1 {
        return Err(CoreError::domain("EF level must be >= 1".to_string()));
    }
    let two_t = (1u64 << t_level) as f64;
    Ok(EfBounds {
        worst: 1.0 - two_t * eps,
        original: 1.0 - 4.0 * eps + eps / two_t,
        refined: 1.0 - 2.0 * eps,
        dynamic_refined: 1.0 - 2.0 * eps * (1.0 - 1.0 / two_t),
    })
}

impl EfBounds {
    /// Check a measured P_S against the refined bound with a 3σ allowance.
    pub fn check_refined(&self, p_s_measured: f64, sigma: f64) -> bool {
        p_s_measured >= self.refined - 3.0 * sigma
    }
}

/// Measured suppression ratio (1 − F₀)/(1 − F_T). `Err` flags F_T = 1
/// (infinite ratio).
pub fn suppression_ratio(f0: f64, ft: f64) -> Result<f64> {
    if ft >= 1.0 {
        return Err(CoreError::numerical(
            "suppression ratio is infinite: F_T = 1".to_string(),
        ));
    }
    Ok((1.0 - f0) / (1.0 - ft))
}

/// First-order prediction 2^T · P_S^(T).
pub fn predicted_ratio(t_level: u8, p_s: f64) -> f64 {
    (1u64 << t_level) as f64 * p_s
}

/// Progressive filtration condition 2^T P_S^(T) ≥ 2^(T−1) under a
/// T-independent bound P_S ≥ 1 − C·ε gives ε ≤ 1/(2C).
pub fn progressive_limit(c_bound: f64) -> f64 {
    1.0 / (2.0 * c_bound)
}

/// One row of the filtration sweep CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfSweepRow {
    pub n: u8,
    pub epsilon: f64,
    pub t: u8,
    pub f0: f64,
    pub ft: f64,
    pub ratio: f64,
    pub ps: f64,
    pub bound_worst: f64,
    pub bound_original: f64,
    pub bound_refined: f64,
    pub shots: u64,
    pub seed: u64,
}

impl EfSweepRow {
    pub fn csv_header() -> &'static str {
        "n,epsilon,T,F0,FT,ratio,PS,bound_worst,bound_original,bound_refined,shots,seed"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.epsilon,
            self.t,
            self.f0,
            self.ft,
            self.ratio,
            self.ps,
            self.bound_worst,
            self.bound_original,
            self.bound_refined,
            self.shots,
            self.seed
        )
    }
}

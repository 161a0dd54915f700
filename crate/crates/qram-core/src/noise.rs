//! Kraus noise channels and fault-location sampling.
//!
//! Routing qutrits see the qutrit channels built from the shift operator
//! A₁ (W→0→1→W cyclic) and the phase operator A₂ = diag(1, ω, ω²) with
//! ω = e^{i2π/3}; data registers see their qubit analogues. Mixed-unitary
//! channels are unraveled exactly: fault spots fire at the channel's error
//! mass and one error unitary is drawn from the conditional distribution.
//! Biased (non-unitary) channels designate the high-probability Kraus
//! operator as the default, applied for free outside spots; each spot is
//! resolved by a quasi-measurement over the conditional error operators.
//!
//! Noise locations are attached to the circuit: every qudit a scheduled gate
//! instance touches is one eligible slot per timestep. The literal
//! all-qudits × all-timesteps eligibility is available as a configuration
//! option. Sampling walks the slot sequence with geometric skips, so its
//! cost is O(faults), not O(slots).

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::schedule::{QuerySchedule, TreeOp};
use crate::topology::{FaultSite, NodeId, Register, TreeShape};

/// ω = e^{i2π/3}, kept in closed form.
pub fn omega() -> Complex64 {
    let theta = 2.0 * std::f64::consts::PI / 3.0;
    Complex64::new(theta.cos(), theta.sin())
}

pub fn omega_pow(power: u32) -> Complex64 {
    match power % 3 {
        0 => Complex64::new(1.0, 0.0),
        1 => omega(),
        _ => omega() * omega(),
    }
}

/// Dense matrix of a single Kraus operator (top-left `dim` block used).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrausMatrix {
    pub dim: usize,
    pub m: [[Complex64; 3]; 3],
}

impl KrausMatrix {
    pub fn zeros(dim: usize) -> Self {
        KrausMatrix { dim, m: [[Complex64::new(0.0, 0.0); 3]; 3] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut out = Self::zeros(dim);
        for i in 0..dim {
            out.m[i][i] = Complex64::new(1.0, 0.0);
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        for row in out.m.iter_mut() {
            for entry in row.iter_mut() {
                *entry *= factor;
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &KrausMatrix) -> KrausMatrix {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..self.dim {
                    acc += self.m[i][l] * rhs.m[l][j];
                }
                out.m[i][j] = acc;
            }
        }
        out
    }

    pub fn dagger(&self) -> KrausMatrix {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.m[i][j] = self.m[j][i].conj();
            }
        }
        out
    }

    /// Column `j` of a non-branching operator: its single (row, entry) pair,
    /// or None if the column annihilates.
    pub fn column_action(&self, j: usize) -> Option<(usize, Complex64)> {
        (0..self.dim)
            .map(|i| (i, self.m[i][j]))
            .find(|(_, e)| e.norm_sqr() > 0.0)
    }
}

/// Cyclic shift A₁: |W⟩→|0⟩→|1⟩→|W⟩.
pub fn qutrit_shift() -> KrausMatrix {
    let mut a1 = KrausMatrix::zeros(3);
    a1.m[1][0] = Complex64::new(1.0, 0.0);
    a1.m[2][1] = Complex64::new(1.0, 0.0);
    a1.m[0][2] = Complex64::new(1.0, 0.0);
    a1
}

/// Phase operator A₂ = diag(1, ω, ω²).
pub fn qutrit_phase() -> KrausMatrix {
    let mut a2 = KrausMatrix::zeros(3);
    a2.m[0][0] = Complex64::new(1.0, 0.0);
    a2.m[1][1] = omega();
    a2.m[2][2] = omega_pow(2);
    a2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    MixedUnitary,
    Biased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelName {
    QutritDepolarizing,
    QutritDamping,
    QutritHeating,
    QubitDepolarizing,
    QubitDamping,
    QubitHeating,
}

/// Structural form of one sampled error unitary of a mixed-unitary channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorUnitary {
    /// A₁^shift · A₂^phase acting on a qutrit: multiply the amplitude by
    /// ω^(phase · index(v)), then shift the value by `shift` levels.
    QutritWeyl { shift: u8, phase: u8 },
    /// Pauli on one data bit.
    PauliX,
    PauliY,
    PauliZ,
}

/// One conditional operator of a biased channel, as its action per input
/// basis index: `None` annihilates, `Some((out, factor))` relabels and
/// scales. Operator 0 is the conditional default.
#[derive(Debug, Clone, Copy)]
pub struct QuasiOp {
    pub map: [Option<(u8, f64)>; 3],
}

impl QuasiOp {
    /// Squared norm of the operator applied to basis index `v`.
    pub fn weight_on(&self, v: usize) -> f64 {
        self.map[v].map_or(0.0, |(_, f)| f * f)
    }
}

/// A noise channel in Kraus form plus the structural data the sparse engine
/// uses to apply it.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    pub name: ChannelName,
    pub kind: ChannelKind,
    pub dim: usize,
    /// Error probability mass ε (or γ): the per-slot spot rate.
    pub strength: f64,
    pub operators: Vec<KrausMatrix>,
}

fn check_rate(rate: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(CoreError::domain(format!("{what} = {rate} outside [0, 1]")));
    }
    Ok(())
}

/// Qutrit depolarizing channel: {√(1−ε) I, √(ε/8) A₁^a A₂^b} over the eight
/// (a, b) ≠ (0, 0) Weyl words, in the order A₁, A₂, A₁², A₂², A₁A₂, A₁²A₂,
/// A₁A₂², A₁²A₂².
pub fn qutrit_depolarizing(eps: f64) -> Result<KrausChannel> {
    check_rate(eps, "epsilon")?;
    let a1 = qutrit_shift();
    let a2 = qutrit_phase();
    let a1a1 = a1.matmul(&a1);
    let a2a2 = a2.matmul(&a2);
    let words: Vec<KrausMatrix> = vec![
        a1,
        a2,
        a1a1,
        a2a2,
        a1.matmul(&a2),
        a1a1.matmul(&a2),
        a1.matmul(&a2a2),
        a1a1.matmul(&a2a2),
    ];
    let mut operators = vec![KrausMatrix::identity(3).scaled((1.0 - eps).sqrt())];
    if eps > 0.0 {
        let w = (eps / 8.0).sqrt();
        operators.extend(words.into_iter().map(|m| m.scaled(w)));
    }
    Ok(KrausChannel {
        name: ChannelName::QutritDepolarizing,
        kind: ChannelKind::MixedUnitary,
        dim: 3,
        strength: eps,
        operators,
    })
}

/// Qutrit damping: {|W⟩⟨W| + √(1−ε)(|0⟩⟨0| + |1⟩⟨1|), √ε|W⟩⟨0|, √ε|W⟩⟨1|}.
pub fn qutrit_damping(eps: f64) -> Result<KrausChannel> {
    check_rate(eps, "epsilon")?;
    let mut k0 = KrausMatrix::zeros(3);
    k0.m[0][0] = Complex64::new(1.0, 0.0);
    k0.m[1][1] = Complex64::new((1.0 - eps).sqrt(), 0.0);
    k0.m[2][2] = Complex64::new((1.0 - eps).sqrt(), 0.0);
    let mut operators = vec![k0];
    if eps > 0.0 {
        let mut k1 = KrausMatrix::zeros(3);
        k1.m[0][1] = Complex64::new(eps.sqrt(), 0.0);
        let mut k2 = KrausMatrix::zeros(3);
        k2.m[0][2] = Complex64::new(eps.sqrt(), 0.0);
        operators.push(k1);
        operators.push(k2);
    }
    Ok(KrausChannel {
        name: ChannelName::QutritDamping,
        kind: ChannelKind::Biased,
        dim: 3,
        strength: eps,
        operators,
    })
}

/// Qutrit heating: {|0⟩⟨0| + |1⟩⟨1| + √(1−ε)|W⟩⟨W|, √(ε/2)|0⟩⟨W|, √(ε/2)|1⟩⟨W|}.
pub fn qutrit_heating(eps: f64) -> Result<KrausChannel> {
    check_rate(eps, "epsilon")?;
    let mut k0 = KrausMatrix::zeros(3);
    k0.m[0][0] = Complex64::new((1.0 - eps).sqrt(), 0.0);
    k0.m[1][1] = Complex64::new(1.0, 0.0);
    k0.m[2][2] = Complex64::new(1.0, 0.0);
    let mut operators = vec![k0];
    if eps > 0.0 {
        let w = (eps / 2.0).sqrt();
        let mut k1 = KrausMatrix::zeros(3);
        k1.m[1][0] = Complex64::new(w, 0.0);
        let mut k2 = KrausMatrix::zeros(3);
        k2.m[2][0] = Complex64::new(w, 0.0);
        operators.push(k1);
        operators.push(k2);
    }
    Ok(KrausChannel {
        name: ChannelName::QutritHeating,
        kind: ChannelKind::Biased,
        dim: 3,
        strength: eps,
        operators,
    })
}

/// Single-qubit depolarizing: {√(1−p) I, √(p/3) X, √(p/3) Y, √(p/3) Z}.
pub fn qubit_depolarizing(p: f64) -> Result<KrausChannel> {
    check_rate(p, "p")?;
    let mut operators = vec![KrausMatrix::identity(2).scaled((1.0 - p).sqrt())];
    if p > 0.0 {
        let w = (p / 3.0).sqrt();
        let mut x = KrausMatrix::zeros(2);
        x.m[0][1] = Complex64::new(1.0, 0.0);
        x.m[1][0] = Complex64::new(1.0, 0.0);
        let mut y = KrausMatrix::zeros(2);
        y.m[0][1] = Complex64::new(0.0, -1.0);
        y.m[1][0] = Complex64::new(0.0, 1.0);
        let mut z = KrausMatrix::identity(2);
        z.m[1][1] = Complex64::new(-1.0, 0.0);
        operators.push(x.scaled(w));
        operators.push(y.scaled(w));
        operators.push(z.scaled(w));
    }
    Ok(KrausChannel {
        name: ChannelName::QubitDepolarizing,
        kind: ChannelKind::MixedUnitary,
        dim: 2,
        strength: p,
        operators,
    })
}

/// Qubit amplitude damping: {|0⟩⟨0| + √(1−γ)|1⟩⟨1|, √γ|0⟩⟨1|}.
pub fn qubit_damping(gamma: f64) -> Result<KrausChannel> {
    check_rate(gamma, "gamma")?;
    let mut k0 = KrausMatrix::zeros(2);
    k0.m[0][0] = Complex64::new(1.0, 0.0);
    k0.m[1][1] = Complex64::new((1.0 - gamma).sqrt(), 0.0);
    let mut operators = vec![k0];
    if gamma > 0.0 {
        let mut k1 = KrausMatrix::zeros(2);
        k1.m[0][1] = Complex64::new(gamma.sqrt(), 0.0);
        operators.push(k1);
    }
    Ok(KrausChannel {
        name: ChannelName::QubitDamping,
        kind: ChannelKind::Biased,
        dim: 2,
        strength: gamma,
        operators,
    })
}

/// Qubit heating (excitation): {√(1−γ)|0⟩⟨0| + |1⟩⟨1|, √γ|1⟩⟨0|}.
pub fn qubit_heating(gamma: f64) -> Result<KrausChannel> {
    check_rate(gamma, "gamma")?;
    let mut k0 = KrausMatrix::zeros(2);
    k0.m[0][0] = Complex64::new((1.0 - gamma).sqrt(), 0.0);
    k0.m[1][1] = Complex64::new(1.0, 0.0);
    let mut operators = vec![k0];
    if gamma > 0.0 {
        let mut k1 = KrausMatrix::zeros(2);
        k1.m[1][0] = Complex64::new(gamma.sqrt(), 0.0);
        operators.push(k1);
    }
    Ok(KrausChannel {
        name: ChannelName::QubitHeating,
        kind: ChannelKind::Biased,
        dim: 2,
        strength: gamma,
        operators,
    })
}

impl KrausChannel {
    /// Probability weights of the full Kraus set (Σ = 1 for mixed-unitary).
    pub fn probabilities(&self) -> Vec<f64> {
        match self.name {
            ChannelName::QutritDepolarizing => {
                let mut p = vec![1.0 - self.strength];
                p.extend(std::iter::repeat(self.strength / 8.0).take(self.operators.len() - 1));
                p
            }
            ChannelName::QubitDepolarizing => {
                let mut p = vec![1.0 - self.strength];
                p.extend(std::iter::repeat(self.strength / 3.0).take(self.operators.len() - 1));
                p
            }
            _ => Vec::new(),
        }
    }

    /// max |Σ K†K − I| over matrix entries.
    pub fn completeness_defect(&self) -> f64 {
        let mut acc = KrausMatrix::zeros(self.dim);
        for k in &self.operators {
            let kk = k.dagger().matmul(k);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    acc.m[i][j] += kk.m[i][j];
                }
            }
        }
        let id = KrausMatrix::identity(self.dim);
        let mut defect = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                defect = defect.max((acc.m[i][j] - id.m[i][j]).norm());
            }
        }
        defect
    }

    /// Structural form of conditional error unitary `index` (mixed-unitary).
    pub fn error_unitary(&self, index: u8) -> ErrorUnitary {
        match self.name {
            ChannelName::QutritDepolarizing => {
                // order: A1, A2, A1², A2², A1A2, A1²A2, A1A2², A1²A2²
                const WORDS: [(u8, u8); 8] =
                    [(1, 0), (0, 1), (2, 0), (0, 2), (1, 1), (2, 1), (1, 2), (2, 2)];
                let (shift, phase) = WORDS[index as usize];
                ErrorUnitary::QutritWeyl { shift, phase }
            }
            ChannelName::QubitDepolarizing => match index {
                0 => ErrorUnitary::PauliX,
                1 => ErrorUnitary::PauliY,
                _ => ErrorUnitary::PauliZ,
            },
            _ => unreachable!("error_unitary on a biased channel"),
        }
    }

    pub fn conditional_error_count(&self) -> u8 {
        match self.name {
            ChannelName::QutritDepolarizing => 8,
            ChannelName::QubitDepolarizing => 3,
            _ => 0,
        }
    }

    /// Conditional operators of a biased channel given a spot fired;
    /// index 0 is the conditional default (projector onto the favored
    /// subspace), the rest are the scaled error operators.
    pub fn quasi_ops(&self) -> Vec<QuasiOp> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self.name {
            ChannelName::QutritDamping => vec![
                QuasiOp { map: [Some((0, 1.0)), None, None] },
                QuasiOp { map: [None, Some((0, 1.0)), None] },
                QuasiOp { map: [None, None, Some((0, 1.0))] },
            ],
            ChannelName::QutritHeating => vec![
                QuasiOp { map: [None, Some((1, 1.0)), Some((2, 1.0))] },
                QuasiOp { map: [Some((1, s)), None, None] },
                QuasiOp { map: [Some((2, s)), None, None] },
            ],
            ChannelName::QubitDamping => vec![
                QuasiOp { map: [Some((0, 1.0)), None, None] },
                QuasiOp { map: [None, Some((0, 1.0)), None] },
            ],
            ChannelName::QubitHeating => vec![
                QuasiOp { map: [None, Some((1, 1.0)), None] },
                QuasiOp { map: [Some((1, 1.0)), None, None] },
            ],
            _ => unreachable!("quasi_ops on a mixed-unitary channel"),
        }
    }
}

/// Which tree qudits carry noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseScope {
    AddressOnly,
    AllQudits,
    /// Data registers only; used by the plain qubit-depolarizing channel.
    DataOnly,
}

/// Which (qudit, timestep) pairs are fault-eligible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseEligibility {
    /// Qudits touched by each scheduled gate instance (default).
    GateAttached,
    /// Every router qudit at every timestep.
    AllQuditsAllTimesteps,
}

/// Noise configuration of one run. Rates may be combined; each active
/// channel samples its own spots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub depolarizing: f64,
    pub damping: f64,
    pub heating: f64,
    pub scope: NoiseScope,
    pub eligibility: NoiseEligibility,
}

impl NoiseSpec {
    pub fn depolarizing(eps: f64) -> Self {
        NoiseSpec {
            depolarizing: eps,
            damping: 0.0,
            heating: 0.0,
            scope: NoiseScope::AllQudits,
            eligibility: NoiseEligibility::GateAttached,
        }
    }

    pub fn noiseless() -> Self {
        NoiseSpec::depolarizing(0.0)
    }

    pub fn is_noiseless(&self) -> bool {
        self.depolarizing == 0.0 && self.damping == 0.0 && self.heating == 0.0
    }

    /// Largest active rate; drives the cost-region classification.
    pub fn max_rate(&self) -> f64 {
        self.depolarizing.max(self.damping).max(self.heating)
    }

    pub fn address_channels(&self) -> Result<Vec<KrausChannel>> {
        if self.scope == NoiseScope::DataOnly {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        if self.depolarizing > 0.0 {
            out.push(qutrit_depolarizing(self.depolarizing)?);
        }
        if self.damping > 0.0 {
            out.push(qutrit_damping(self.damping)?);
        }
        if self.heating > 0.0 {
            out.push(qutrit_heating(self.heating)?);
        }
        Ok(out)
    }

    pub fn data_channels(&self) -> Result<Vec<KrausChannel>> {
        if self.scope == NoiseScope::AddressOnly {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        if self.depolarizing > 0.0 {
            out.push(qubit_depolarizing(self.depolarizing)?);
        }
        if self.damping > 0.0 {
            out.push(qubit_damping(self.damping)?);
        }
        if self.heating > 0.0 {
            out.push(qubit_heating(self.heating)?);
        }
        Ok(out)
    }
}

/// How a sampled fault gets resolved during execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Pending,
    SampledUnitary(u8),
    QuasiMeasured(u8),
}

/// One sampled noise event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultEvent {
    pub site: FaultSite,
    pub channel: ChannelName,
    /// Bit within the data word struck by a data-register fault.
    pub data_bit: u8,
    /// Position within the register's slot sequence; part of the
    /// deterministic application order.
    pub slot_index: u64,
    pub channel_rank: u8,
    pub resolution: Resolution,
}

/// One homogeneous run of slots in the eligibility sequence.
#[derive(Debug, Clone)]
struct SlotSegment {
    base: u64,
    per_instance: u32,
    instance_count: u64,
    timestep: u32,
    decode: SegmentDecode,
}

#[derive(Debug, Clone)]
enum SegmentDecode {
    Gate { op: TreeOp, register: Register },
    Uniform,
}

/// Indexable slot sequence for one register family.
#[derive(Debug, Clone, Default)]
pub struct SlotSequence {
    segments: Vec<SlotSegment>,
    pub total: u64,
}

impl SlotSequence {
    fn push(&mut self, per_instance: u32, instance_count: u64, timestep: u32, decode: SegmentDecode) {
        if per_instance == 0 || instance_count == 0 {
            return;
        }
        self.segments.push(SlotSegment {
            base: self.total,
            per_instance,
            instance_count,
            timestep,
            decode,
        });
        self.total += u64::from(per_instance) * instance_count;
    }

    fn decode(&self, index: u64, shape: TreeShape) -> (u32, NodeId) {
        let seg_idx = self
            .segments
            .partition_point(|s| s.base + u64::from(s.per_instance) * s.instance_count <= index);
        let seg = &self.segments[seg_idx];
        let offset = index - seg.base;
        let instance = offset / u64::from(seg.per_instance);
        let within = (offset % u64::from(seg.per_instance)) as u32;
        match &seg.decode {
            SegmentDecode::Uniform => {
                // instance enumerates router nodes in flat order
                let flat = instance;
                let layer = (64 - (flat + 1).leading_zeros() - 1) as u8;
                let pos = (flat + 1 - (1u64 << layer)) as u32;
                (seg.timestep, NodeId { layer, pos })
            }
            SegmentDecode::Gate { op, register } => {
                let node = match op {
                    TreeOp::BusAddressSwap { .. } | TreeOp::BusDataSwap => NodeId::root(),
                    TreeOp::Routing { layer } | TreeOp::InternalSwap { layer } => NodeId {
                        layer: *layer,
                        pos: instance as u32,
                    },
                    TreeOp::MemoryAccess => NodeId {
                        layer: shape.n - 1,
                        pos: instance as u32,
                    },
                };
                let slot = op
                    .touched_qudits(node, shape)
                    .into_iter()
                    .filter(|(_, r)| r == register)
                    .nth(within as usize)
                    .expect("slot index within pattern");
                (seg.timestep, slot.0)
            }
        }
    }
}

/// The full fault-eligibility layout of a schedule.
#[derive(Debug, Clone)]
pub struct NoiseLayout {
    pub shape: TreeShape,
    pub address: SlotSequence,
    pub data: SlotSequence,
}

impl NoiseLayout {
    pub fn new(schedule: &QuerySchedule, eligibility: NoiseEligibility) -> Self {
        let shape = schedule.shape;
        let mut address = SlotSequence::default();
        let mut data = SlotSequence::default();
        match eligibility {
            NoiseEligibility::AllQuditsAllTimesteps => {
                let routers = shape.router_count();
                for ts in 0..schedule.len() as u32 {
                    address.push(1, routers, ts, SegmentDecode::Uniform);
                    data.push(1, routers, ts, SegmentDecode::Uniform);
                }
            }
            NoiseEligibility::GateAttached => {
                for (ts, step) in schedule.timesteps.iter().enumerate() {
                    for op in &step.ops {
                        let (instances, probe) = match op {
                            TreeOp::BusAddressSwap { .. } | TreeOp::BusDataSwap => {
                                (1u64, NodeId::root())
                            }
                            TreeOp::Routing { layer } | TreeOp::InternalSwap { layer } => {
                                (1u64 << layer, NodeId { layer: *layer, pos: 0 })
                            }
                            TreeOp::MemoryAccess => (
                                1u64 << (shape.n - 1),
                                NodeId { layer: shape.n - 1, pos: 0 },
                            ),
                        };
                        let pattern = op.touched_qudits(probe, shape);
                        let addr_slots =
                            pattern.iter().filter(|(_, r)| *r == Register::Address).count() as u32;
                        let data_slots =
                            pattern.iter().filter(|(_, r)| *r == Register::Data).count() as u32;
                        address.push(
                            addr_slots,
                            instances,
                            ts as u32,
                            SegmentDecode::Gate { op: *op, register: Register::Address },
                        );
                        data.push(
                            data_slots,
                            instances,
                            ts as u32,
                            SegmentDecode::Gate { op: *op, register: Register::Data },
                        );
                    }
                }
            }
        }
        NoiseLayout { shape, address, data }
    }

    /// Expected fault count per shot for the given noise configuration.
    pub fn expected_faults(&self, noise: &NoiseSpec) -> f64 {
        let addr_rate: f64 = noise
            .address_channels()
            .map(|cs| cs.iter().map(|c| c.strength).sum())
            .unwrap_or(0.0);
        let data_rate: f64 = noise
            .data_channels()
            .map(|cs| cs.iter().map(|c| c.strength).sum())
            .unwrap_or(0.0);
        self.address.total as f64 * addr_rate + self.data.total as f64 * data_rate
    }
}

/// Geometric gap for Bernoulli(rate) skip-sampling.
fn geometric_skip(rng: &mut impl Rng, rate: f64) -> u64 {
    if rate >= 1.0 {
        return 0;
    }
    let u: f64 = rng.gen();
    let skip = ((1.0 - u).ln() / (1.0 - rate).ln()).floor();
    if skip.is_finite() && skip >= 0.0 {
        skip.min(u64::MAX as f64 / 2.0) as u64
    } else {
        u64::MAX / 2
    }
}

fn sample_register(
    out: &mut Vec<FaultEvent>,
    seq: &SlotSequence,
    shape: TreeShape,
    register: Register,
    channels: &[KrausChannel],
    k: u8,
    rng: &mut impl Rng,
) {
    for (rank, channel) in channels.iter().enumerate() {
        let rate = channel.strength;
        if rate <= 0.0 || seq.total == 0 {
            continue;
        }
        let mut index = geometric_skip(rng, rate);
        while index < seq.total {
            let (timestep, node) = seq.decode(index, shape);
            let data_bit = if register == Register::Data && k > 1 {
                rng.gen_range(0..k)
            } else {
                0
            };
            let resolution = if channel.kind == ChannelKind::MixedUnitary {
                Resolution::SampledUnitary(rng.gen_range(0..channel.conditional_error_count()))
            } else {
                Resolution::Pending
            };
            out.push(FaultEvent {
                site: FaultSite { node, register, timestep },
                channel: channel.name,
                data_bit,
                slot_index: index,
                channel_rank: rank as u8,
                resolution,
            });
            index = index + 1 + geometric_skip(rng, rate);
        }
    }
}

/// Sample one shot's fault events over the schedule's eligibility layout.
///
/// Events come back in deterministic application order: by timestep, then
/// address register before data, then slot position, then channel rank.
pub fn sample_fault_locations(
    layout: &NoiseLayout,
    noise: &NoiseSpec,
    rng: &mut impl Rng,
) -> Result<Vec<FaultEvent>> {
    let mut events = Vec::new();
    sample_register(
        &mut events,
        &layout.address,
        layout.shape,
        Register::Address,
        &noise.address_channels()?,
        layout.shape.k,
        rng,
    );
    sample_register(
        &mut events,
        &layout.data,
        layout.shape,
        Register::Data,
        &noise.data_channels()?,
        layout.shape.k,
        rng,
    );
    events.sort_by_key(|e| {
        (
            e.site.timestep,
            e.site.register,
            e.slot_index,
            e.channel_rank,
        )
    });
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_schedule;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn depolarizing_structure() {
        let ch = qutrit_depolarizing(0.0).unwrap();
        assert_eq!(ch.operators.len(), 1);

        let ch = qutrit_depolarizing(0.08).unwrap();
        assert_eq!(ch.operators.len(), 9);
        let probs = ch.probabilities();
        for &p in &probs[1..] {
            assert!((p - 0.01).abs() < 1e-15);
        }
        assert!(ch.completeness_defect() < 1e-10);

        let ch = qutrit_depolarizing(0.3).unwrap();
        assert!(ch.completeness_defect() < 1e-10);
    }

    #[test]
    fn weyl_shift_is_cyclic_w_to_zero() {
        let a1 = qutrit_shift();
        // |W> -> |0>
        assert_eq!(a1.column_action(0), Some((1, Complex64::new(1.0, 0.0))));
        // |1> -> |W>
        assert_eq!(a1.column_action(2), Some((0, Complex64::new(1.0, 0.0))));
    }

    #[test]
    fn biased_channel_examples() {
        let ch = qutrit_damping(0.0).unwrap();
        assert_eq!(ch.operators.len(), 1);
        assert_eq!(
            ch.operators[0].column_action(1),
            Some((1, Complex64::new(1.0, 0.0)))
        );

        // damping applied to |0> with eps = 0.36: error outcome |W> w.p. 0.36
        let ch = qutrit_damping(0.36).unwrap();
        let k1 = &ch.operators[1];
        let (row, entry) = k1.column_action(1).unwrap();
        assert_eq!(row, 0);
        assert!((entry.norm_sqr() - 0.36).abs() < 1e-15);

        // heating on |W> with eps = 0.5: outcomes |0> and |1> each w.p. 0.25
        let ch = qutrit_heating(0.5).unwrap();
        for (op, target) in [(1usize, 1usize), (2, 2)] {
            let (row, entry) = ch.operators[op].column_action(0).unwrap();
            assert_eq!(row, target);
            assert!((entry.norm_sqr() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn completeness_on_rate_grid() {
        for &rate in &[0.0, 0.01, 0.1, 0.5, 1.0] {
            for ch in [
                qutrit_depolarizing(rate).unwrap(),
                qutrit_damping(rate).unwrap(),
                qutrit_heating(rate).unwrap(),
                qubit_depolarizing(rate).unwrap(),
                qubit_damping(rate).unwrap(),
                qubit_heating(rate).unwrap(),
            ] {
                assert!(
                    ch.completeness_defect() < 1e-10,
                    "{:?} at rate {rate}",
                    ch.name
                );
            }
        }
    }

    #[test]
    fn quasi_ops_resolve_the_masses() {
        let ch = qutrit_damping(0.2).unwrap();
        let ops = ch.quasi_ops();
        // equal superposition over {W,0,1}: weights (1/3, 1/3, 1/3)
        let weights: Vec<f64> = ops
            .iter()
            .map(|op| (0..3).map(|v| op.weight_on(v) / 3.0).sum::<f64>())
            .collect();
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((weights[1] - 1.0 / 3.0).abs() < 1e-15);

        let ch = qutrit_heating(0.2).unwrap();
        let ops = ch.quasi_ops();
        let total: f64 = ops.iter().map(|op| (0..3).map(|v| op.weight_on(v) / 3.0).sum::<f64>()).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sampling_rate_extremes() {
        let shape = TreeShape::new(3, 1).unwrap();
        let schedule = build_schedule(shape).unwrap();
        let layout = NoiseLayout::new(&schedule, NoiseEligibility::GateAttached);
        let mut rng = ChaCha12Rng::seed_from_u64(0);

        let none = sample_fault_locations(&layout, &NoiseSpec::noiseless(), &mut rng).unwrap();
        assert!(none.is_empty());

        let all = sample_fault_locations(&layout, &NoiseSpec::depolarizing(1.0), &mut rng).unwrap();
        assert_eq!(all.len() as u64, layout.address.total + layout.data.total);
        // sorted application order
        let mut keys: Vec<_> = all
            .iter()
            .map(|e| (e.site.timestep, e.site.register, e.slot_index, e.channel_rank))
            .collect();
        let sorted = {
            let mut s = keys.clone();
            s.sort();
            s
        };
        assert_eq!(keys, sorted);
        keys.dedup();
        assert_eq!(keys.len(), all.len());
    }

    #[test]
    fn empirical_mean_matches_expectation() {
        let shape = TreeShape::new(8, 1).unwrap();
        let schedule = build_schedule(shape).unwrap();
        assert_eq!(schedule.len(), 89);
        let layout = NoiseLayout::new(&schedule, NoiseEligibility::GateAttached);
        let noise = NoiseSpec::depolarizing(1e-4);
        let expected = layout.expected_faults(&noise);

        // independent recount of the eligible slots straight off the schedule
        let mut recount = 0u64;
        for step in &schedule.timesteps {
            for op in &step.ops {
                for (node, _) in op.instances(shape) {
                    recount += op.touched_qudits(node, shape).len() as u64;
                }
            }
        }
        assert_eq!(recount, layout.address.total + layout.data.total);
        assert!((expected - recount as f64 * 1e-4).abs() < 1e-12);

        let shots = 10_000;
        let mut total = 0usize;
        for shot in 0..shots {
            let mut rng = ChaCha12Rng::seed_from_u64(1000 + shot);
            total += sample_fault_locations(&layout, &noise, &mut rng).unwrap().len();
        }
        let mean = total as f64 / shots as f64;
        // 3 sigma band around the Poisson-like expectation
        let sigma = (expected / shots as f64).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * sigma,
            "mean {mean} vs expected {expected} (sigma {sigma})"
        );
    }

    #[test]
    fn all_qudits_eligibility_counts() {
        let shape = TreeShape::new(4, 1).unwrap();
        let schedule = build_schedule(shape).unwrap();
        let layout = NoiseLayout::new(&schedule, NoiseEligibility::AllQuditsAllTimesteps);
        let expected = shape.router_count() * schedule.len() as u64;
        assert_eq!(layout.address.total, expected);
        assert_eq!(layout.data.total, expected);

        // decode round-trips over the whole sequence
        for idx in 0..layout.address.total {
            let (ts, node) = layout.address.decode(idx, shape);
            assert!(ts < schedule.len() as u32);
            assert!(node.layer < shape.n);
            assert!(u64::from(node.pos) < (1u64 << node.layer));
        }
    }
}

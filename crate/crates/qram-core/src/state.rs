//! Sparse branch representation of the joint bus ⊗ tree pure state.
//!
//! A branch is one computational-basis component: a complex amplitude plus
//! the basis labels of every register. Tree registers are stored as sorted
//! sparse maps holding only non-idle nodes (address idle = W, data idle = 0),
//! so a branch costs O(path length) rather than one slot per tree node. All
//! scheduled gates are non-branching (at most one nonzero entry per row), so
//! they act as label permutations — possibly phased — and never increase the
//! branch count.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::topology::NodeId;

/// Amplitudes with squared modulus below this are dropped; removes exact
/// zeros produced by annihilating Kraus operators without touching physics.
pub const DROP_THRESHOLD: f64 = 1e-12;

/// Tolerance on `|norm² - 1|` outside quasi-measurement and post-selection.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Basis levels of a routing qutrit. `W` is the idle/wait state.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub enum QutritValue {
    #[default]
    W,
    Zero,
    One,
}

impl QutritValue {
    /// Basis index in the ordering {|W⟩, |0⟩, |1⟩}.
    pub fn index(self) -> usize {
        match self {
            QutritValue::W => 0,
            QutritValue::Zero => 1,
            QutritValue::One => 2,
        }
    }

    pub fn from_index(index: usize) -> QutritValue {
        match index % 3 {
            0 => QutritValue::W,
            1 => QutritValue::Zero,
            _ => QutritValue::One,
        }
    }

    pub fn from_bit(bit: u64) -> QutritValue {
        if bit & 1 == 0 {
            QutritValue::Zero
        } else {
            QutritValue::One
        }
    }

    /// Direction bit of a routing value; `None` for the idle state.
    pub fn direction(self) -> Option<u8> {
        match self {
            QutritValue::W => None,
            QutritValue::Zero => Some(0),
            QutritValue::One => Some(1),
        }
    }
}

/// Residual tree configuration left behind by one noisy invocation inside an
/// error-filtration circuit: (invocation index, address map, data map).
/// Idle configurations are not recorded.
pub type EnvEntry = (u8, Vec<(NodeId, QutritValue)>, Vec<(NodeId, u64)>);

/// Full basis label of a branch.
///
/// `control`, `aux_*` and `env` are all-zero/empty outside error filtration:
/// `control` holds the T-bit control register, `aux_*` the ancilla bus slot,
/// and `env` the per-invocation residual tree records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct BranchLabel {
    pub bus_address: u64,
    pub bus_data: u64,
    pub control: u64,
    pub aux_address: u64,
    pub aux_data: u64,
    pub tree_address: Vec<(NodeId, QutritValue)>,
    pub tree_data: Vec<(NodeId, u64)>,
    pub env: Vec<EnvEntry>,
}

impl BranchLabel {
    pub fn bus(address: u64, data: u64) -> Self {
        BranchLabel {
            bus_address: address,
            bus_data: data,
            ..Default::default()
        }
    }

    pub fn tree_is_idle(&self) -> bool {
        self.tree_address.is_empty() && self.tree_data.is_empty()
    }

    pub fn addr_get(&self, node: NodeId) -> QutritValue {
        match self.tree_address.binary_search_by_key(&node, |e| e.0) {
            Ok(i) => self.tree_address[i].1,
            Err(_) => QutritValue::W,
        }
    }

    pub fn addr_set(&mut self, node: NodeId, value: QutritValue) {
        match self.tree_address.binary_search_by_key(&node, |e| e.0) {
            Ok(i) => {
                if value == QutritValue::W {
                    self.tree_address.remove(i);
                } else {
                    self.tree_address[i].1 = value;
                }
            }
            Err(i) => {
                if value != QutritValue::W {
                    self.tree_address.insert(i, (node, value));
                }
            }
        }
    }

    pub fn data_get(&self, node: NodeId) -> u64 {
        match self.tree_data.binary_search_by_key(&node, |e| e.0) {
            Ok(i) => self.tree_data[i].1,
            Err(_) => 0,
        }
    }

    pub fn data_set(&mut self, node: NodeId, value: u64) {
        match self.tree_data.binary_search_by_key(&node, |e| e.0) {
            Ok(i) => {
                if value == 0 {
                    self.tree_data.remove(i);
                } else {
                    self.tree_data[i].1 = value;
                }
            }
            Err(i) => {
                if value != 0 {
                    self.tree_data.insert(i, (node, value));
                }
            }
        }
    }

    /// Nodes at `layer` whose address qutrit is active, with their values.
    pub fn active_addr_at_layer(&self, layer: u8) -> Vec<(NodeId, QutritValue)> {
        let lo = self
            .tree_address
            .partition_point(|e| e.0 < NodeId { layer, pos: 0 });
        self.tree_address[lo..]
            .iter()
            .take_while(|e| e.0.layer == layer)
            .copied()
            .collect()
    }

    /// Grouping key for everything except the bus registers; used when the
    /// bus-reduced state is compared against an ideal bus state.
    fn non_bus_key(&self) -> BranchLabel {
        BranchLabel {
            bus_address: 0,
            bus_data: 0,
            ..self.clone()
        }
    }
}

/// One weighted basis branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub amplitude: Complex64,
    pub label: BranchLabel,
}

/// Pure state as a collection of weighted branches.
///
/// Duplicate labels are merged by amplitude addition whenever a state is
/// (re)assembled, so interference between coinciding labels is exact.
#[derive(Debug, Clone, Default)]
pub struct SparseState {
    pub branches: Vec<Branch>,
}

impl SparseState {
    pub fn new(branches: Vec<Branch>) -> Self {
        let mut state = SparseState { branches };
        state.merge_duplicates();
        state
    }

    /// Build a bus-only state from `(address, data, amplitude)` rows.
    pub fn from_bus(rows: impl IntoIterator<Item = (u64, u64, Complex64)>) -> Self {
        SparseState::new(
            rows.into_iter()
                .map(|(a, d, amp)| Branch {
                    amplitude: amp,
                    label: BranchLabel::bus(a, d),
                })
                .collect(),
        )
    }

    /// Uniform superposition over the given addresses with data register 0.
    pub fn uniform_over(addresses: impl IntoIterator<Item = u64>) -> Self {
        let addresses: Vec<u64> = addresses.into_iter().collect();
        let amp = Complex64::new(1.0 / (addresses.len() as f64).sqrt(), 0.0);
        SparseState::from_bus(addresses.into_iter().map(move |a| (a, 0, amp)))
    }

    /// Haar-random state over the span of the given bus labels: i.i.d.
    /// complex Gaussian amplitudes, normalized.
    pub fn haar_random_over(
        labels: impl Iterator<Item = (u64, u64)>,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        let gauss = |rng: &mut dyn rand::RngCore| -> f64 {
            // Box-Muller from two uniforms
            let u1: f64 = rand::Rng::gen_range(&mut *rng, f64::MIN_POSITIVE..1.0);
            let u2: f64 = rand::Rng::gen(&mut *rng);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let branches: Vec<Branch> = labels
            .map(|(a, d)| Branch {
                amplitude: Complex64::new(gauss(rng), gauss(rng)),
                label: BranchLabel::bus(a, d),
            })
            .collect();
        let mut state = SparseState::new(branches);
        state.normalize()?;
        Ok(state)
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.branches.iter().map(|b| b.amplitude.norm_sqr()).sum()
    }

    /// Sort branches into canonical label order and merge duplicates.
    pub fn merge_duplicates(&mut self) {
        self.branches.sort_by(|a, b| a.label.cmp(&b.label));
        let mut merged: Vec<Branch> = Vec::with_capacity(self.branches.len());
        for branch in self.branches.drain(..) {
            match merged.last_mut() {
                Some(last) if last.label == branch.label => {
                    last.amplitude += branch.amplitude;
                }
                _ => merged.push(branch),
            }
        }
        merged.retain(|b| b.amplitude.norm_sqr() > DROP_THRESHOLD * DROP_THRESHOLD);
        self.branches = merged;
    }

    /// Canonical order without merging; branch labels are unique while a
    /// schedule runs (permutations are injective), so sorting suffices there.
    pub fn sort_canonical(&mut self) {
        self.branches.sort_by(|a, b| a.label.cmp(&b.label));
    }

    /// Rescale to unit norm; returns the squared norm before rescaling.
    pub fn normalize(&mut self) -> Result<f64> {
        let norm_sq = self.norm_sq();
        if norm_sq <= 0.0 || !norm_sq.is_finite() {
            return Err(CoreError::numerical("cannot normalize a zero state"));
        }
        let inv = 1.0 / norm_sq.sqrt();
        for b in &mut self.branches {
            b.amplitude *= inv;
        }
        Ok(norm_sq)
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sq() - 1.0).abs() <= NORM_TOLERANCE
    }
}

/// Inner product ⟨a|b⟩ over shared labels.
pub fn overlap(a: &SparseState, b: &SparseState) -> Complex64 {
    let mut lhs = a.branches.clone();
    let mut rhs = b.branches.clone();
    lhs.sort_by(|x, y| x.label.cmp(&y.label));
    rhs.sort_by(|x, y| x.label.cmp(&y.label));
    let mut acc = Complex64::new(0.0, 0.0);
    let (mut i, mut j) = (0usize, 0usize);
    while i < lhs.len() && j < rhs.len() {
        match lhs[i].label.cmp(&rhs[j].label) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += lhs[i].amplitude.conj() * rhs[j].amplitude;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Fidelity of the bus-reduced state against an ideal bus state.
///
/// Everything that is not the bus (tree registers, control, ancilla slot,
/// environment records) is traced out: branches are grouped by those labels
/// and each group contributes `|Σ conj(ideal(bus)) · amplitude|²`.
pub fn bus_fidelity(state: &SparseState, ideal_bus: &SparseState) -> f64 {
    debug_assert!(
        ideal_bus.branches.iter().all(|b| b.label.tree_is_idle()),
        "ideal bus state must have empty tree maps"
    );
    let mut ideal: Vec<((u64, u64), Complex64)> = ideal_bus
        .branches
        .iter()
        .map(|b| ((b.label.bus_address, b.label.bus_data), b.amplitude.conj()))
        .collect();
    ideal.sort_by_key(|e| e.0);

    let lookup = |addr: u64, data: u64| -> Complex64 {
        match ideal.binary_search_by_key(&(addr, data), |e| e.0) {
            Ok(i) => ideal[i].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    };

    let mut keyed: Vec<(BranchLabel, usize)> = state
        .branches
        .iter()
        .enumerate()
        .map(|(i, b)| (b.label.non_bus_key(), i))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut fidelity = 0.0;
    let mut idx = 0;
    while idx < keyed.len() {
        let mut group_sum = Complex64::new(0.0, 0.0);
        let start_key = &keyed[idx].0;
        let mut j = idx;
        while j < keyed.len() && keyed[j].0 == *start_key {
            let b = &state.branches[keyed[j].1];
            group_sum += lookup(b.label.bus_address, b.label.bus_data) * b.amplitude;
            j += 1;
        }
        fidelity += group_sum.norm_sqr();
        idx = j;
    }
    fidelity
}

/// Bit coordinates addressable by the generic permutation gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitCoord {
    BusAddress(u8),
    BusData(u8),
    TreeData { node: NodeId, bit: u8 },
}

fn get_bit(label: &BranchLabel, coord: BitCoord) -> u64 {
    match coord {
        BitCoord::BusAddress(b) => (label.bus_address >> b) & 1,
        BitCoord::BusData(b) => (label.bus_data >> b) & 1,
        BitCoord::TreeData { node, bit } => (label.data_get(node) >> bit) & 1,
    }
}

fn set_bit(label: &mut BranchLabel, coord: BitCoord, value: u64) {
    match coord {
        BitCoord::BusAddress(b) => {
            label.bus_address = (label.bus_address & !(1 << b)) | (value << b);
        }
        BitCoord::BusData(b) => {
            label.bus_data = (label.bus_data & !(1 << b)) | (value << b);
        }
        BitCoord::TreeData { node, bit } => {
            let word = (label.data_get(node) & !(1 << bit)) | (value << bit);
            label.data_set(node, word);
        }
    }
}

/// Non-branching gates: label permutations, optionally phased.
#[derive(Debug, Clone)]
pub enum PermutationGate {
    /// X on one bit coordinate.
    NotBit(BitCoord),
    /// SWAP of two bit coordinates.
    SwapBits(BitCoord, BitCoord),
    /// SWAP of two bit coordinates conditioned on a routing qutrit value.
    ControlledSwapBits {
        control: NodeId,
        when: QutritValue,
        a: BitCoord,
        b: BitCoord,
    },
    /// CZ-type mark: multiply the amplitude by `phase` when the bit is 1.
    PhaseIfOne(BitCoord, Complex64),
}

impl PermutationGate {
    fn apply(&self, branch: &mut Branch) {
        match *self {
            PermutationGate::NotBit(c) => {
                let v = get_bit(&branch.label, c);
                set_bit(&mut branch.label, c, v ^ 1);
            }
            PermutationGate::SwapBits(a, b) => {
                let (va, vb) = (get_bit(&branch.label, a), get_bit(&branch.label, b));
                set_bit(&mut branch.label, a, vb);
                set_bit(&mut branch.label, b, va);
            }
            PermutationGate::ControlledSwapBits { control, when, a, b } => {
                if branch.label.addr_get(control) == when {
                    let (va, vb) = (get_bit(&branch.label, a), get_bit(&branch.label, b));
                    set_bit(&mut branch.label, a, vb);
                    set_bit(&mut branch.label, b, va);
                }
            }
            PermutationGate::PhaseIfOne(c, phase) => {
                if get_bit(&branch.label, c) == 1 {
                    branch.amplitude *= phase;
                }
            }
        }
    }
}

/// Apply a permutation gate to every branch independently. Branch count
/// never increases; the squared norm is preserved.
pub fn apply_permutation(state: &mut SparseState, gate: &PermutationGate) {
    for branch in &mut state.branches {
        gate.apply(branch);
    }
}

/// Reject matrices with more than one nonzero entry per row — those would
/// split basis states and cannot be handled by the sparse branch engine.
pub fn validate_non_branching(matrix: &[Vec<Complex64>]) -> Result<()> {
    for (i, row) in matrix.iter().enumerate() {
        let nonzero = row.iter().filter(|c| c.norm_sqr() > 0.0).count();
        if nonzero > 1 {
            return Err(CoreError::contract(format!(
                "branching gate: row {i} has {nonzero} nonzero entries"
            )));
        }
    }
    Ok(())
}

//! Brute-force dense simulator for tiny instances.
//!
//! This is the independent oracle: it stores the complete amplitude vector
//! over bus ⊗ router qudits and walks the same schedule with naive index
//! loops, sharing nothing with the sparse engine's label machinery. The
//! trajectory mode consumes identical randomness (same fault list, same
//! quasi-measurement draws), so seed-matched runs must agree label by label.
//! The exact-channel mode evolves the full density matrix through every
//! noise slot without sampling.

use num_complex::Complex64;
use rand::Rng;

use crate::engine::QueryContext;
use crate::error::{CoreError, Result};
use crate::noise::{
    ChannelKind, ErrorUnitary, FaultEvent, KrausChannel, KrausMatrix, Resolution,
};
use crate::schedule::TreeOp;
use crate::state::{Branch, BranchLabel, QutritValue, SparseState};
use crate::topology::{NodeId, Register, TreeShape};

/// Dense amplitude vector over bus(2^n · 2^k) ⊗ routers((3·2^k)^(2^n − 1)).
#[derive(Debug, Clone)]
pub struct DenseState {
    pub shape: TreeShape,
    pub amps: Vec<Complex64>,
}

/// Basis layout helper. Router nodes are ordered by flat index; each
/// contributes one digit of base 3 · 2^k (address qutrit × data word).
#[derive(Debug, Clone, Copy)]
struct Layout {
    shape: TreeShape,
    routers: usize,
    digit_base: u64,
    dim: u64,
}

impl Layout {
    fn new(shape: TreeShape, max_routers: u64) -> Result<Self> {
        let routers = shape.router_count();
        if routers > max_routers {
            return Err(CoreError::domain(format!(
                "dense oracle cannot hold n={} ({} routers)",
                shape.n, routers
            )));
        }
        let digit_base = 3u64 << shape.k;
        let dim = (shape.cells() << shape.k) * digit_base.pow(routers as u32);
        if dim > 6_000_000 {
            return Err(CoreError::domain(format!("dense dimension {dim} too large")));
        }
        Ok(Layout { shape, routers: routers as usize, digit_base, dim })
    }

    fn router_index(&self, node: NodeId) -> usize {
        node.flat_index() as usize
    }

    fn decode(&self, mut index: u64) -> (u64, u64, Vec<(u8, u64)>) {
        let mut digits = vec![(0u8, 0u64); self.routers];
        for slot in (0..self.routers).rev() {
            let digit = index % self.digit_base;
            index /= self.digit_base;
            digits[slot] = ((digit >> self.shape.k) as u8, digit & ((1 << self.shape.k) - 1));
        }
        let data = index & ((1 << self.shape.k) - 1);
        let address = index >> self.shape.k;
        (address, data, digits)
    }

    fn encode(&self, address: u64, data: u64, digits: &[(u8, u64)]) -> u64 {
        let mut index = (address << self.shape.k) | data;
        for &(a, d) in digits {
            index = index * self.digit_base + ((u64::from(a) << self.shape.k) | d);
        }
        index
    }
}

/// Permutation image of one basis state under a scheduled operation,
/// written directly from the gate definitions.
fn op_image(
    layout: &Layout,
    op: TreeOp,
    table: &crate::table::DataTable,
    address: u64,
    data: u64,
    digits: &mut Vec<(u8, u64)>,
) -> (u64, u64) {
    let shape = layout.shape;
    let n = u32::from(shape.n);
    match op {
        TreeOp::BusAddressSwap { bit } => {
            let root = layout.router_index(NodeId::root());
            let shift = n - 1 - u32::from(bit);
            let bus_bit = (address >> shift) & 1;
            let root_bit = digits[root].1 & 1;
            let address = (address & !(1u64 << shift)) | (root_bit << shift);
            digits[root].1 = (digits[root].1 & !1) | bus_bit;
            (address, data)
        }
        TreeOp::BusDataSwap => {
            let root = layout.router_index(NodeId::root());
            let word = digits[root].1;
            digits[root].1 = data;
            (address, word)
        }
        TreeOp::Routing { layer } => {
            for pos in 0..(1u32 << layer) {
                let node = NodeId { layer, pos };
                let slot = layout.router_index(node);
                let dir = match digits[slot].0 {
                    1 => 0u8,
                    2 => 1u8,
                    _ => continue,
                };
                let child = layout.router_index(node.child(dir));
                digits.swap_data(slot, child);
            }
            (address, data)
        }
        TreeOp::InternalSwap { layer } => {
            if layer == 0 {
                absorb_digit(&mut digits[layout.router_index(NodeId::root())]);
            } else {
                for pos in 0..(1u32 << (layer - 1)) {
                    let parent = NodeId { layer: layer - 1, pos };
                    let dir = match digits[layout.router_index(parent)].0 {
                        1 => 0u8,
                        2 => 1u8,
                        _ => continue,
                    };
                    let child = layout.router_index(parent.child(dir));
                    absorb_digit(&mut digits[child]);
                }
            }
            (address, data)
        }
        TreeOp::MemoryAccess => {
            for pos in 0..(1u32 << (shape.n - 1)) {
                let node = NodeId { layer: shape.n - 1, pos };
                let slot = layout.router_index(node);
                let dir = match digits[slot].0 {
                    1 => 0u8,
                    2 => 1u8,
                    _ => continue,
                };
                let cell = u64::from(pos) * 2 + u64::from(dir);
                digits[slot].1 ^= table.get(cell);
            }
            (address, data)
        }
    }
}

trait SwapData {
    fn swap_data(&mut self, a: usize, b: usize);
}

impl SwapData for Vec<(u8, u64)> {
    fn swap_data(&mut self, a: usize, b: usize) {
        let tmp = self[a].1;
        self[a].1 = self[b].1;
        self[b].1 = tmp;
    }
}

/// Carrier exchange on one digit: (W, d) ↔ (d, 0) for d ∈ {0, 1}.
fn absorb_digit(digit: &mut (u8, u64)) {
    *digit = match *digit {
        (0, 0) => (1, 0),
        (0, 1) => (2, 0),
        (1, 0) => (0, 0),
        (2, 0) => (0, 1),
        other => other,
    };
}

fn apply_op_dense(
    layout: &Layout,
    state: &mut Vec<Complex64>,
    op: TreeOp,
    table: &crate::table::DataTable,
) {
    let mut out = vec![Complex64::new(0.0, 0.0); state.len()];
    for (index, amp) in state.iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let (address, data, mut digits) = layout.decode(index as u64);
        let (address, data) = op_image(layout, op, table, address, data, &mut digits);
        let image = layout.encode(address, data, &digits);
        out[image as usize] = *amp;
    }
    *state = out;
}

/// Value of the struck qudit in one basis state.
fn slot_value(layout: &Layout, digits: &[(u8, u64)], site: crate::topology::FaultSite, bit: u8) -> usize {
    let slot = layout.router_index(site.node);
    match site.register {
        Register::Address => digits[slot].0 as usize,
        Register::Data => ((digits[slot].1 >> bit) & 1) as usize,
    }
}

fn set_slot_value(
    layout: &Layout,
    digits: &mut [(u8, u64)],
    site: crate::topology::FaultSite,
    bit: u8,
    value: usize,
) {
    let slot = layout.router_index(site.node);
    match site.register {
        Register::Address => digits[slot].0 = value as u8,
        Register::Data => {
            digits[slot].1 = (digits[slot].1 & !(1u64 << bit)) | ((value as u64 & 1) << bit);
        }
    }
}

fn apply_unitary_dense(
    layout: &Layout,
    state: &mut Vec<Complex64>,
    site: crate::topology::FaultSite,
    bit: u8,
    unitary: ErrorUnitary,
) {
    let mut out = vec![Complex64::new(0.0, 0.0); state.len()];
    for (index, amp) in state.iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let (address, data, mut digits) = layout.decode(index as u64);
        let v = slot_value(layout, &digits, site, bit);
        let factor = match unitary {
            ErrorUnitary::QutritWeyl { shift, phase } => {
                let f = crate::noise::omega_pow(u32::from(phase) * v as u32);
                set_slot_value(layout, &mut digits, site, bit, (v + shift as usize) % 3);
                f
            }
            ErrorUnitary::PauliX => {
                set_slot_value(layout, &mut digits, site, bit, v ^ 1);
                Complex64::new(1.0, 0.0)
            }
            ErrorUnitary::PauliY => {
                set_slot_value(layout, &mut digits, site, bit, v ^ 1);
                if v == 0 {
                    Complex64::new(0.0, 1.0)
                } else {
                    Complex64::new(0.0, -1.0)
                }
            }
            ErrorUnitary::PauliZ => {
                if v == 1 {
                    Complex64::new(-1.0, 0.0)
                } else {
                    Complex64::new(1.0, 0.0)
                }
            }
        };
        let image = layout.encode(address, data, &digits);
        out[image as usize] = *amp * factor;
    }
    *state = out;
}

/// Expand a sparse state into the dense basis.
pub fn expand(state: &SparseState, shape: TreeShape) -> Result<DenseState> {
    let layout = Layout::new(shape, 7)?;
    let mut amps = vec![Complex64::new(0.0, 0.0); layout.dim as usize];
    for b in &state.branches {
        if b.label.control != 0 || b.label.aux_address != 0 || b.label.aux_data != 0 {
            return Err(CoreError::domain(
                "dense oracle covers bus ⊗ tree states only".to_string(),
            ));
        }
        let mut digits = vec![(0u8, 0u64); layout.routers];
        for &(node, v) in &b.label.tree_address {
            digits[layout.router_index(node)].0 = v.index() as u8;
        }
        for &(node, w) in &b.label.tree_data {
            digits[layout.router_index(node)].1 = w;
        }
        let index = layout.encode(b.label.bus_address, b.label.bus_data, &digits);
        amps[index as usize] += b.amplitude;
    }
    Ok(DenseState { shape, amps })
}

/// Collapse a dense vector back into sparse branches (exact zeros dropped).
pub fn collapse(dense: &DenseState) -> Result<SparseState> {
    let layout = Layout::new(dense.shape, 7)?;
    let mut branches = Vec::new();
    for (index, amp) in dense.amps.iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let (address, data, digits) = layout.decode(index as u64);
        let mut label = BranchLabel::bus(address, data);
        for (slot, &(a, d)) in digits.iter().enumerate() {
            let node = flat_to_node(slot as u64);
            if a != 0 {
                label.addr_set(node, QutritValue::from_index(a as usize));
            }
            if d != 0 {
                label.data_set(node, d);
            }
        }
        branches.push(Branch { amplitude: *amp, label });
    }
    Ok(SparseState { branches })
}

fn flat_to_node(flat: u64) -> NodeId {
    let layer = (64 - (flat + 1).leading_zeros() - 1) as u8;
    NodeId { layer, pos: (flat + 1 - (1u64 << layer)) as u32 }
}

/// Trajectory mode: walk the schedule densely with the given fault list,
/// resolving quasi-measurements from `quasi_rng` exactly like the sparse
/// engine does.
pub fn dense_trajectory(
    ctx: &QueryContext,
    input: &SparseState,
    mut events: Vec<FaultEvent>,
    quasi_rng: &mut impl Rng,
) -> Result<DenseState> {
    let shape = ctx.schedule.shape;
    if shape.n > 3 {
        return Err(CoreError::domain("dense trajectory capped at n = 3".to_string()));
    }
    let layout = Layout::new(shape, 7)?;
    let mut state = expand(input, shape)?.amps;

    let mut ev = 0usize;
    for (ts, step) in ctx.schedule.timesteps.iter().enumerate() {
        for op in &step.ops {
            apply_op_dense(&layout, &mut state, *op, &ctx.table);
        }
        while ev < events.len() && events[ev].site.timestep == ts as u32 {
            let event = &mut events[ev];
            let channel = ctx.channel(event.channel);
            match channel.kind {
                ChannelKind::MixedUnitary => {
                    let index = match event.resolution {
                        Resolution::SampledUnitary(i) => i,
                        _ => quasi_rng.gen_range(0..channel.conditional_error_count()),
                    };
                    apply_unitary_dense(
                        &layout,
                        &mut state,
                        event.site,
                        event.data_bit,
                        channel.error_unitary(index),
                    );
                }
                ChannelKind::Biased => {
                    let ops = channel.quasi_ops();
                    let mut weights = vec![0.0; ops.len()];
                    for (index, amp) in state.iter().enumerate() {
                        let w = amp.norm_sqr();
                        if w == 0.0 {
                            continue;
                        }
                        let (_, _, digits) = layout.decode(index as u64);
                        let v = slot_value(&layout, &digits, event.site, event.data_bit);
                        for (i, op) in ops.iter().enumerate() {
                            weights[i] += w * op.weight_on(v);
                        }
                    }
                    let total: f64 = weights.iter().sum();
                    if total <= 0.0 {
                        return Err(CoreError::numerical("dense quasi weights vanish".to_string()));
                    }
                    let u: f64 = quasi_rng.gen::<f64>() * total;
                    let mut acc = 0.0;
                    let mut outcome = weights.iter().rposition(|&w| w > 0.0).unwrap();
                    for (i, &w) in weights.iter().enumerate() {
                        acc += w;
                        if u < acc && w > 0.0 {
                            outcome = i;
                            break;
                        }
                    }
                    let mut out = vec![Complex64::new(0.0, 0.0); state.len()];
                    for (index, amp) in state.iter().enumerate() {
                        if amp.norm_sqr() == 0.0 {
                            continue;
                        }
                        let (address, data, mut digits) = layout.decode(index as u64);
                        let v = slot_value(&layout, &digits, event.site, event.data_bit);
                        if let Some((to, factor)) = ops[outcome].map[v] {
                            set_slot_value(&layout, &mut digits, event.site, event.data_bit, to as usize);
                            let image = layout.encode(address, data, &digits);
                            out[image as usize] += *amp * factor;
                        }
                    }
                    let norm_sq: f64 = out.iter().map(|a| a.norm_sqr()).sum();
                    if norm_sq <= 0.0 {
                        return Err(CoreError::numerical("dense state annihilated".to_string()));
                    }
                    let inv = 1.0 / norm_sq.sqrt();
                    for a in out.iter_mut() {
                        *a *= inv;
                    }
                    state = out;
                }
            }
            ev += 1;
        }
    }
    Ok(DenseState { shape, amps: state })
}

/// Which per-slot channel the exact evolution applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelForm {
    /// The channel's true Kraus operators.
    TrueKraus,
    /// The unraveled form the trajectory sampler realizes:
    /// (1-ε)ρ + ε Σ K̃ᵢ ρ K̃ᵢ† over the conditional operators.
    Unraveled,
}

fn slot_kraus(channel: &KrausChannel, form: ChannelForm) -> Vec<Vec<Option<(usize, Complex64)>>> {
    // per operator: action per basis value
    match form {
        ChannelForm::TrueKraus => channel
            .operators
            .iter()
            .map(|k| (0..channel.dim).map(|j| k.column_action(j)).collect())
            .collect(),
        ChannelForm::Unraveled => {
            let mut ops: Vec<Vec<Option<(usize, Complex64)>>> = Vec::new();
            let survive = (1.0 - channel.strength).sqrt();
            ops.push(
                (0..channel.dim)
                    .map(|j| Some((j, Complex64::new(survive, 0.0))))
                    .collect(),
            );
            match channel.kind {
                ChannelKind::MixedUnitary => {
                    let count = channel.conditional_error_count();
                    let weight = (channel.strength / f64::from(count)).sqrt();
                    for i in 0..count {
                        let mat = unitary_matrix(channel.error_unitary(i), channel.dim);
                        ops.push(
                            (0..channel.dim)
                                .map(|j| mat.column_action(j).map(|(r, e)| (r, e * weight)))
                                .collect(),
                        );
                    }
                }
                ChannelKind::Biased => {
                    let weight = channel.strength.sqrt();
                    for q in channel.quasi_ops() {
                        ops.push(
                            (0..channel.dim)
                                .map(|j| {
                                    q.map[j].map(|(r, f)| {
                                        (r as usize, Complex64::new(f * weight, 0.0))
                                    })
                                })
                                .collect(),
                        );
                    }
                }
            }
            ops
        }
    }
}

fn unitary_matrix(unitary: ErrorUnitary, dim: usize) -> KrausMatrix {
    let mut m = KrausMatrix::zeros(dim);
    match unitary {
        ErrorUnitary::QutritWeyl { shift, phase } => {
            for v in 0..3usize {
                m.m[(v + shift as usize) % 3][v] = crate::noise::omega_pow(u32::from(phase) * v as u32);
            }
        }
        ErrorUnitary::PauliX => {
            m.m[0][1] = Complex64::new(1.0, 0.0);
            m.m[1][0] = Complex64::new(1.0, 0.0);
        }
        ErrorUnitary::PauliY => {
            m.m[0][1] = Complex64::new(0.0, -1.0);
            m.m[1][0] = Complex64::new(0.0, 1.0);
        }
        ErrorUnitary::PauliZ => {
            m.m[0][0] = Complex64::new(1.0, 0.0);
            m.m[1][1] = Complex64::new(-1.0, 0.0);
        }
    }
    m
}

/// Exact channel evolution of the density matrix through the schedule, and
/// the bus fidelity of the result against the noiseless output.
pub fn dense_channel_fidelity(
    ctx: &QueryContext,
    input: &SparseState,
    form: ChannelForm,
) -> Result<f64> {
    let shape = ctx.schedule.shape;
    if shape.n > 2 {
        return Err(CoreError::domain("dense channel mode capped at n = 2".to_string()));
    }
    let layout = Layout::new(shape, 3)?;
    let dim = layout.dim as usize;
    let psi = expand(input, shape)?.amps;
    // rho = |psi><psi|
    let mut rho: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            rho[i * dim + j] = psi[i] * psi[j].conj();
        }
    }

    let addr_channels = ctx.noise.address_channels()?;
    let data_channels = ctx.noise.data_channels()?;

    for (ts, step) in ctx.schedule.timesteps.iter().enumerate() {
        for op in &step.ops {
            // permutation conjugation: rho <- P rho P†
            let mut perm = vec![0usize; dim];
            for index in 0..dim {
                let (address, data, mut digits) = layout.decode(index as u64);
                let (address, data) = op_image(&layout, *op, &ctx.table, address, data, &mut digits);
                perm[index] = layout.encode(address, data, &digits) as usize;
            }
            let mut out = vec![Complex64::new(0.0, 0.0); dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    out[perm[i] * dim + perm[j]] = rho[i * dim + j];
                }
            }
            rho = out;
        }
        // every eligible slot of this timestep sees its channels
        for register in [Register::Address, Register::Data] {
            let channels = match register {
                Register::Address => &addr_channels,
                Register::Data => &data_channels,
            };
            if channels.is_empty() {
                continue;
            }
            let slots = slots_at_timestep(ctx, ts as u32, register);
            for node in slots {
                for channel in channels {
                    for bit in 0..bits_for(register, shape.k) {
                        let site = crate::topology::FaultSite { node, register, timestep: ts as u32 };
                        apply_channel_dense(&layout, &mut rho, site, bit, channel, form)?;
                    }
                }
            }
        }
    }

    // bus fidelity: F = Tr[(|ideal><ideal| ⊗ I_tree) rho]
    let ideal = crate::engine::run_noiseless(input, &ctx.table, &ctx.schedule)?;
    let ideal_dense = expand(&ideal, shape)?.amps;
    let tree_dim = layout.digit_base.pow(layout.routers as u32) as usize;
    let bus_dim = dim / tree_dim;
    let mut fidelity = 0.0;
    for q in 0..tree_dim {
        // v_Q index list: bus index b maps to dense index b * tree_dim + q
        let mut acc = Complex64::new(0.0, 0.0);
        for b1 in 0..bus_dim {
            let c1 = ideal_dense[b1 * tree_dim];
            if c1.norm_sqr() == 0.0 {
                continue;
            }
            for b2 in 0..bus_dim {
                let c2 = ideal_dense[b2 * tree_dim];
                if c2.norm_sqr() == 0.0 {
                    continue;
                }
                acc += c1.conj() * rho[(b1 * tree_dim + q) * dim + (b2 * tree_dim + q)] * c2;
            }
        }
        fidelity += acc.re;
    }
    Ok(fidelity)
}

fn bits_for(register: Register, k: u8) -> u8 {
    match register {
        Register::Address => 1,
        Register::Data => k,
    }
}

/// Nodes whose `register` qudit is gate-attached noise-eligible at timestep
/// `ts`, with multiplicity, in slot order.
fn slots_at_timestep(ctx: &QueryContext, ts: u32, register: Register) -> Vec<NodeId> {
    let mut nodes = Vec::new();
    let shape = ctx.schedule.shape;
    for op in &ctx.schedule.timesteps[ts as usize].ops {
        for (node, _) in op.instances(shape) {
            for (slot_node, slot_register) in op.touched_qudits(node, shape) {
                if slot_register == register {
                    nodes.push(slot_node);
                }
            }
        }
    }
    nodes
}

fn apply_channel_dense(
    layout: &Layout,
    rho: &mut Vec<Complex64>,
    site: crate::topology::FaultSite,
    bit: u8,
    channel: &KrausChannel,
    form: ChannelForm,
) -> Result<()> {
    let dim = layout.dim as usize;
    let kraus = slot_kraus(channel, form);
    // per-basis-index action of each Kraus op on the struck qudit
    let mut out = vec![Complex64::new(0.0, 0.0); dim * dim];
    let mut actions: Vec<Vec<Option<(usize, Complex64)>>> = Vec::with_capacity(kraus.len());
    for op in &kraus {
        let mut act = vec![None; dim];
        for index in 0..dim {
            let (address, data, mut digits) = layout.decode(index as u64);
            let v = slot_value(layout, &digits, site, bit);
            if let Some((to, factor)) = op[v] {
                set_slot_value(layout, &mut digits, site, bit, to);
                let image = layout.encode(address, data, &digits) as usize;
                act[index] = Some((image, factor));
            }
        }
        actions.push(act);
    }
    for act in &actions {
        for i in 0..dim {
            let Some((ti, fi)) = act[i] else { continue };
            for j in 0..dim {
                let Some((tj, fj)) = act[j] else { continue };
                let val = rho[i * dim + j];
                if val.norm_sqr() == 0.0 {
                    continue;
                }
                out[ti * dim + tj] += fi * val * fj.conj();
            }
        }
    }
    *rho = out;
    Ok(())
}

/// Single-qudit helpers used to validate the trajectory unraveling against
/// the exact channel action, away from any schedule.
pub mod single {
    use super::*;

    /// Exact action of the channel on a single-qudit density matrix.
    pub fn exact_channel(
        rho: &[[Complex64; 3]; 3],
        channel: &KrausChannel,
        form: ChannelForm,
    ) -> [[Complex64; 3]; 3] {
        let d = channel.dim;
        let ops = slot_kraus(channel, form);
        let mut out = [[Complex64::new(0.0, 0.0); 3]; 3];
        for op in &ops {
            for i in 0..d {
                let Some((ti, fi)) = op[i] else { continue };
                for j in 0..d {
                    let Some((tj, fj)) = op[j] else { continue };
                    out[ti][tj] += fi * rho[i][j] * fj.conj();
                }
            }
        }
        out
    }

    /// One trajectory sample of the unraveled channel on a pure qudit state.
    pub fn sample_trajectory(
        psi: &[Complex64; 3],
        channel: &KrausChannel,
        rng: &mut impl Rng,
    ) -> [Complex64; 3] {
        let spot: f64 = rng.gen();
        if spot >= channel.strength {
            return *psi;
        }
        match channel.kind {
            ChannelKind::MixedUnitary => {
                let idx = rng.gen_range(0..channel.conditional_error_count());
                let m = unitary_matrix(channel.error_unitary(idx), channel.dim);
                let mut out = [Complex64::new(0.0, 0.0); 3];
                for i in 0..channel.dim {
                    for j in 0..channel.dim {
                        out[i] += m.m[i][j] * psi[j];
                    }
                }
                out
            }
            ChannelKind::Biased => {
                let ops = channel.quasi_ops();
                let weights: Vec<f64> = ops
                    .iter()
                    .map(|op| {
                        (0..channel.dim)
                            .map(|v| psi[v].norm_sqr() * op.weight_on(v))
                            .sum()
                    })
                    .collect();
                let total: f64 = weights.iter().sum();
                let u: f64 = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut outcome = weights.iter().rposition(|&w| w > 0.0).unwrap();
                for (i, &w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc && w > 0.0 {
                        outcome = i;
                        break;
                    }
                }
                let mut out = [Complex64::new(0.0, 0.0); 3];
                for v in 0..channel.dim {
                    if let Some((to, f)) = ops[outcome].map[v] {
                        out[to as usize] += psi[v] * f;
                    }
                }
                let norm = out.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
                for a in out.iter_mut() {
                    *a /= norm;
                }
                out
            }
        }
    }
}

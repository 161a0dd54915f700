//! Deterministic query schedule for one bucket-brigade memory access.
//!
//! A query has three stages. Address setting sends address bit `t` down the
//! tree: it rides the node data registers for `t` routing steps, then an
//! internal swap absorbs it into the layer-`t` address qutrit (bit `t`
//! occupies `t + 1` timesteps). Data fetching injects the bus word, routes it
//! to the addressed cell, XORs the cell contents in, and routes it back
//! (`2n + 1` timesteps). Uncomputing replays address setting in reverse.
//! Total: τ(n) = n² + 3n + 1 timesteps.
//!
//! Every operation is layer-wise (one instruction covers all nodes of a
//! depth) and an involution, so reversing a stage is just reversing its
//! operation list.

use crate::error::Result;
use crate::state::{BranchLabel, QutritValue};
use crate::table::DataTable;
use crate::topology::{AddressRange, NodeId, Register, TreeShape};

/// Layer-wise scheduled operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeOp {
    /// Swap address bit `bit` of the bus with bit 0 of the root data register.
    BusAddressSwap { bit: u8 },
    /// Swap the k-bit bus data word with the root data register.
    BusDataSwap,
    /// At every layer-`layer` node: swap its data register with the left or
    /// right child's, selected by the node's address qutrit (W routes nothing).
    Routing { layer: u8 },
    /// At every layer-`layer` node (conditioned on the parent qutrit pointing
    /// at it; unconditioned at the root): exchange a carrier bit between the
    /// data register and the idle/occupied address qutrit.
    InternalSwap { layer: u8 },
    /// At every layer-`n-1` node: XOR the cell selected by the node's address
    /// qutrit into the node's data register.
    MemoryAccess,
}

impl TreeOp {
    /// Apply the operation to one branch label.
    pub fn apply(&self, label: &mut BranchLabel, shape: TreeShape, table: &DataTable) {
        match *self {
            TreeOp::BusAddressSwap { bit } => {
                let shift = u32::from(shape.n) - 1 - u32::from(bit);
                let bus_bit = (label.bus_address >> shift) & 1;
                let word = label.data_get(NodeId::root());
                let root_bit = word & 1;
                label.bus_address =
                    (label.bus_address & !(1u64 << shift)) | (root_bit << shift);
                label.data_set(NodeId::root(), (word & !1) | bus_bit);
            }
            TreeOp::BusDataSwap => {
                let word = label.data_get(NodeId::root());
                let bus = label.bus_data;
                label.bus_data = word;
                label.data_set(NodeId::root(), bus);
            }
            TreeOp::Routing { layer } => {
                for (node, value) in label.active_addr_at_layer(layer) {
                    if let Some(dir) = value.direction() {
                        let child = node.child(dir);
                        let up = label.data_get(node);
                        let down = label.data_get(child);
                        if up != down {
                            label.data_set(node, down);
                            label.data_set(child, up);
                        }
                    }
                }
            }
            TreeOp::InternalSwap { layer } => {
                if layer == 0 {
                    absorb(label, NodeId::root());
                } else {
                    for (parent, value) in label.active_addr_at_layer(layer - 1) {
                        if let Some(dir) = value.direction() {
                            absorb(label, parent.child(dir));
                        }
                    }
                }
            }
            TreeOp::MemoryAccess => {
                for (node, value) in label.active_addr_at_layer(shape.n - 1) {
                    if let Some(dir) = value.direction() {
                        let cell = u64::from(node.pos) * 2 + u64::from(dir);
                        let word = label.data_get(node) ^ table.get(cell);
                        label.data_set(node, word);
                    }
                }
            }
        }
    }

    /// Gate instances of this layer-wise operation, each with the address
    /// interval its node can influence (precomputed for pruning arithmetic).
    pub fn instances(&self, shape: TreeShape) -> Vec<(NodeId, AddressRange)> {
        let layer = match *self {
            TreeOp::BusAddressSwap { .. } | TreeOp::BusDataSwap => {
                let root = NodeId::root();
                return vec![(
                    root,
                    AddressRange { lo: 0, hi: shape.cells() - 1 },
                )];
            }
            TreeOp::Routing { layer } | TreeOp::InternalSwap { layer } => layer,
            TreeOp::MemoryAccess => shape.n - 1,
        };
        let span = 1u64 << (shape.n - layer);
        (0..(1u32 << layer))
            .map(|pos| {
                let lo = span * u64::from(pos);
                (
                    NodeId { layer, pos },
                    AddressRange { lo, hi: lo + span - 1 },
                )
            })
            .collect()
    }

    /// Tree qudits a single gate instance touches, in a fixed order. These
    /// are the noise-eligible slots attached to this gate.
    pub fn touched_qudits(&self, node: NodeId, shape: TreeShape) -> Vec<(NodeId, Register)> {
        match *self {
            TreeOp::BusAddressSwap { .. } | TreeOp::BusDataSwap => {
                vec![(NodeId::root(), Register::Data)]
            }
            TreeOp::Routing { .. } => vec![
                (node, Register::Address),
                (node, Register::Data),
                (node.child(0), Register::Data),
                (node.child(1), Register::Data),
            ],
            TreeOp::InternalSwap { .. } => {
                let mut slots = Vec::with_capacity(3);
                if let Some(parent) = node.parent() {
                    slots.push((parent, Register::Address));
                }
                slots.push((node, Register::Address));
                slots.push((node, Register::Data));
                slots
            }
            TreeOp::MemoryAccess => {
                let _ = shape;
                vec![(node, Register::Address), (node, Register::Data)]
            }
        }
    }
}

/// Carrier exchange between a node's data register and its address qutrit:
/// (W, d) ↔ (d, 0) for d ∈ {0, 1}; every other configuration is fixed.
fn absorb(label: &mut BranchLabel, node: NodeId) {
    let addr = label.addr_get(node);
    let data = label.data_get(node);
    match (addr, data) {
        (QutritValue::W, 0) => {
            label.addr_set(node, QutritValue::Zero);
        }
        (QutritValue::W, 1) => {
            label.addr_set(node, QutritValue::One);
            label.data_set(node, 0);
        }
        (QutritValue::Zero, 0) => {
            label.addr_set(node, QutritValue::W);
        }
        (QutritValue::One, 0) => {
            label.addr_set(node, QutritValue::W);
            label.data_set(node, 1);
        }
        _ => {}
    }
}

/// One timestep: operations applied in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timestep {
    pub ops: Vec<TreeOp>,
}

/// The full query timeline plus its stage boundaries.
#[derive(Debug, Clone)]
pub struct QuerySchedule {
    pub shape: TreeShape,
    pub timesteps: Vec<Timestep>,
    /// Half-open timestep ranges of [address setting, data fetch, uncompute].
    pub stages: [std::ops::Range<usize>; 3],
}

impl QuerySchedule {
    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    /// Flattened operation list of one stage.
    pub fn stage_ops(&self, stage: usize) -> Vec<TreeOp> {
        self.timesteps[self.stages[stage].clone()]
            .iter()
            .flat_map(|ts| ts.ops.iter().copied())
            .collect()
    }
}

/// Reference timestep count τ(n) = n² + 3n + 1.
pub fn schedule_length(n: u8) -> u32 {
    let n = u32::from(n);
    n * n + 3 * n + 1
}

/// Build the deterministic schedule for one query.
pub fn build_schedule(shape: TreeShape) -> Result<QuerySchedule> {
    let n = shape.n;
    let mut timesteps: Vec<Timestep> = Vec::with_capacity(schedule_length(n) as usize);

    // Stage 1: address setting. Bit t: t routing steps, then one internal
    // swap; the bus injection shares the first timestep of the round.
    for t in 0..n {
        if t == 0 {
            timesteps.push(Timestep {
                ops: vec![TreeOp::BusAddressSwap { bit: 0 }, TreeOp::InternalSwap { layer: 0 }],
            });
        } else {
            timesteps.push(Timestep {
                ops: vec![TreeOp::BusAddressSwap { bit: t }, TreeOp::Routing { layer: 0 }],
            });
            for l in 1..t {
                timesteps.push(Timestep { ops: vec![TreeOp::Routing { layer: l }] });
            }
            timesteps.push(Timestep { ops: vec![TreeOp::InternalSwap { layer: t }] });
        }
    }
    let stage1 = 0..timesteps.len();

    // Stage 2: data fetch, self-inverse around the memory access.
    timesteps.push(Timestep { ops: vec![TreeOp::BusDataSwap] });
    for l in 0..n.saturating_sub(1) {
        timesteps.push(Timestep { ops: vec![TreeOp::Routing { layer: l }] });
    }
    timesteps.push(Timestep { ops: vec![TreeOp::MemoryAccess] });
    for l in (0..n.saturating_sub(1)).rev() {
        timesteps.push(Timestep { ops: vec![TreeOp::Routing { layer: l }] });
    }
    timesteps.push(Timestep { ops: vec![TreeOp::BusDataSwap] });
    let stage2 = stage1.end..timesteps.len();

    // Stage 3: exact reverse of stage 1 (all operations are involutions).
    let mut stage3_steps: Vec<Timestep> = timesteps[stage1.clone()]
        .iter()
        .rev()
        .map(|ts| Timestep { ops: ts.ops.iter().rev().copied().collect() })
        .collect();
    let stage3_start = timesteps.len();
    timesteps.append(&mut stage3_steps);
    let stage3 = stage3_start..timesteps.len();

    debug_assert_eq!(timesteps.len(), schedule_length(n) as usize);
    Ok(QuerySchedule { shape, timesteps, stages: [stage1, stage2, stage3] })
}

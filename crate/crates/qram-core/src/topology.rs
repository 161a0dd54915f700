//! Binary-tree addressing for the bucket-brigade memory.
//!
//! Nodes are labelled `(layer, pos)` with the root at `(0, 0)`; layer `l`
//! holds `2^l` nodes and flat indices start at `2^l - 1`. Layers `0..n-1`
//! carry the quantum routers; layer `n` labels the classical cells hanging
//! below them. A fault at `(l, p)` can disturb exactly the addresses whose
//! routing path enters that node's subtree, which is the contiguous interval
//! `[p * 2^(n-l), (p + 1) * 2^(n-l) - 1]` — the arithmetic behind branch
//! pruning.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// One node of the addressing tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    /// Depth below the root (root = 0).
    pub layer: u8,
    /// Left-to-right position within the layer.
    pub pos: u32,
}

impl NodeId {
    pub fn new(layer: u8, pos: u32) -> Result<Self> {
        if layer > 62 || u64::from(pos) >= (1u64 << layer) {
            return Err(CoreError::domain(format!(
                "node ({layer}, {pos}) outside the tree"
            )));
        }
        Ok(NodeId { layer, pos })
    }

    pub const fn root() -> Self {
        NodeId { layer: 0, pos: 0 }
    }

    /// Flat index of the node: `2^layer - 1 + pos`.
    pub fn flat_index(self) -> u64 {
        (1u64 << self.layer) - 1 + u64::from(self.pos)
    }

    pub fn parent(self) -> Option<NodeId> {
        if self.layer == 0 {
            None
        } else {
            Some(NodeId {
                layer: self.layer - 1,
                pos: self.pos / 2,
            })
        }
    }

    /// Child in the given direction; bit 0 = left, bit 1 = right.
    pub fn child(self, direction: u8) -> NodeId {
        NodeId {
            layer: self.layer + 1,
            pos: self.pos * 2 + u32::from(direction & 1),
        }
    }

    /// Direction bit this node occupies below its parent.
    pub fn direction_from_parent(self) -> u8 {
        (self.pos & 1) as u8
    }
}

/// Flat index of a node, validating the `(layer, pos)` invariants first.
pub fn flat_index(node: NodeId) -> Result<u64> {
    let node = NodeId::new(node.layer, node.pos)?;
    Ok(node.flat_index())
}

/// Geometry of one memory instance: `n` routing layers serve `2^n` cells of
/// `k`-bit words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeShape {
    pub n: u8,
    pub k: u8,
}

impl TreeShape {
    pub fn new(n: u8, k: u8) -> Result<Self> {
        if n < 1 || n > 30 {
            return Err(CoreError::domain(format!("address size n={n} out of range")));
        }
        if k < 1 || k > 56 {
            return Err(CoreError::domain(format!("data width k={k} out of range")));
        }
        Ok(TreeShape { n, k })
    }

    /// Number of memory cells, `2^n`.
    pub fn cells(&self) -> u64 {
        1u64 << self.n
    }

    /// Total node count including the cell layer: `2^(n+1) - 1`.
    pub fn node_count(&self) -> u64 {
        (1u64 << (self.n + 1)) - 1
    }

    /// Number of router nodes carrying qudits (layers `0..n-1`): `2^n - 1`.
    pub fn router_count(&self) -> u64 {
        (1u64 << self.n) - 1
    }

    pub fn contains_address(&self, address: u64) -> bool {
        address < self.cells()
    }
}

/// Which of a node's two qudits a fault strikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Register {
    /// The routing qutrit holding {W, 0, 1}.
    Address,
    /// The k-bit data register.
    Data,
}

/// A located fault: which qudit, and at which point of the query schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaultSite {
    pub node: NodeId,
    pub register: Register,
    pub timestep: u32,
}

/// Closed interval of addresses, `lo..=hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressRange {
    pub lo: u64,
    pub hi: u64,
}

impl AddressRange {
    pub fn len(&self) -> u64 {
        self.hi - self.lo + 1
    }

    pub fn contains(&self, address: u64) -> bool {
        self.lo <= address && address <= self.hi
    }
}

/// Routing path of an address: for each layer `t`, the node the path reaches
/// and the direction bit `a_t` taken there. Bit `a_0` is the most significant
/// address bit and steers the root.
pub fn routing_path(address: u64, shape: TreeShape) -> Result<Vec<(NodeId, u8)>> {
    if !shape.contains_address(address) {
        return Err(CoreError::domain(format!(
            "address {address} out of range for n={}",
            shape.n
        )));
    }
    let n = u32::from(shape.n);
    let mut path = Vec::with_capacity(shape.n as usize);
    for t in 0..n {
        let pos = (address >> (n - t)) as u32;
        let bit = ((address >> (n - 1 - t)) & 1) as u8;
        path.push((
            NodeId {
                layer: t as u8,
                pos,
            },
            bit,
        ));
    }
    Ok(path)
}

/// Addresses whose routing path traverses the fault node or its subtree.
pub fn affected_range(fault: FaultSite, shape: TreeShape) -> Result<AddressRange> {
    affected_range_of_node(fault.node, shape)
}

/// Subtree-containment interval of a node: `[p * 2^(n-l), (p+1) * 2^(n-l) - 1]`.
pub fn affected_range_of_node(node: NodeId, shape: TreeShape) -> Result<AddressRange> {
    if node.layer > shape.n {
        return Err(CoreError::domain(format!(
            "fault layer {} deeper than cell layer {}",
            node.layer, shape.n
        )));
    }
    let span = 1u64 << (shape.n - node.layer);
    let lo = span * u64::from(node.pos);
    Ok(AddressRange { lo, hi: lo + span - 1 })
}

/// A set of addresses stored as sorted, disjoint, maximal intervals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AddressSet {
    intervals: Vec<AddressRange>,
}

impl AddressSet {
    pub fn empty() -> Self {
        AddressSet { intervals: Vec::new() }
    }

    pub fn from_ranges(ranges: impl IntoIterator<Item = AddressRange>) -> Self {
        let mut ranges: Vec<AddressRange> = ranges.into_iter().collect();
        ranges.sort_by_key(|r| (r.lo, r.hi));
        let mut merged: Vec<AddressRange> = Vec::with_capacity(ranges.len());
        for r in ranges {
            match merged.last_mut() {
                Some(last) if r.lo <= last.hi.saturating_add(1) => {
                    last.hi = last.hi.max(r.hi);
                }
                _ => merged.push(r),
            }
        }
        AddressSet { intervals: merged }
    }

    pub fn contains(&self, address: u64) -> bool {
        self.intervals
            .binary_search_by(|r| {
                if address < r.lo {
                    std::cmp::Ordering::Greater
                } else if address > r.hi {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .is_ok()
    }

    pub fn count(&self) -> u64 {
        self.intervals.iter().map(AddressRange::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn intervals(&self) -> &[AddressRange] {
        &self.intervals
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.intervals.iter().flat_map(|r| r.lo..=r.hi)
    }
}

/// Addresses that must be simulated individually under a given fault set:
/// the union of the per-fault affected intervals. The complement is the set
/// of reliable branches, which keep the correct data and a shared tree state.
pub fn unreliable_set(faults: &[FaultSite], shape: TreeShape) -> Result<AddressSet> {
    let mut ranges = Vec::with_capacity(faults.len());
    for f in faults {
        ranges.push(affected_range(*f, shape)?);
    }
    Ok(AddressSet::from_ranges(ranges))
}

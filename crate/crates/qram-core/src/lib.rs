//! Sparse simulator for noisy bucket-brigade quantum memory, with branch
//! pruning, an error-filtration layer, a brute-force dense oracle, and a
//! cost benchmarking harness.
//!
//! The state is a sparse collection of weighted basis branches; one query is
//! a deterministic layer-wise schedule of non-branching gates, so branch
//! count never grows. Noise is unraveled per trajectory: mixed-unitary
//! channels sample an error unitary per fault spot, biased channels resolve
//! spots by quasi-measurement. Pruning simulates only the branches whose
//! routing paths enter a fault subtree and reconstructs the rest from a
//! shared ghost overlay.

pub mod cost;
pub mod dense;
pub mod ef;
pub mod engine;
pub mod error;
pub mod fit;
pub mod noise;
pub mod rng;
pub mod schedule;
pub mod state;
pub mod table;
pub mod topology;
pub mod validate;

pub use engine::{
    apply_mixed_unitary, estimate_fidelity, quasi_measure, run_noiseless, run_noisy,
    run_with_faults, CostMeter, FidelityEstimate, FidelityMetric, Mode, QueryContext, ShotOutcome,
};
pub use error::{CoreError, Result};
pub use noise::{
    qubit_damping, qubit_depolarizing, qubit_heating, qutrit_damping, qutrit_depolarizing,
    qutrit_heating, ChannelKind, ChannelName, FaultEvent, KrausChannel, NoiseEligibility,
    NoiseLayout, NoiseScope, NoiseSpec, Resolution,
};
pub use schedule::{build_schedule, schedule_length, QuerySchedule, TreeOp};
pub use state::{
    apply_permutation, bus_fidelity, overlap, validate_non_branching, Branch, BranchLabel,
    PermutationGate, QutritValue, SparseState,
};
pub use table::DataTable;
pub use topology::{
    affected_range, flat_index, routing_path, unreliable_set, AddressRange, AddressSet, FaultSite,
    NodeId, Register, TreeShape,
};
pub use num_complex::Complex64;

//! Heterogeneous DeGroot opinion dynamics with conformist and rebel agents.
//!
//! Conformists average their neighbors' opinions; rebels adopt the
//! complement of that average. This crate holds the learning topology and
//! its structural analysis ([`topology`]), the spectral machinery that
//! turns convergence conditions into checkable predictions ([`spectral`]),
//! and the simulation engine with its closed-form oracle ([`dynamics`]).

pub mod dynamics;
pub mod mat;
pub mod spectral;
pub mod topology;

pub use dynamics::{
    fixed_point_direct, replay_check, run, step, Confidence, DynamicsError, OpinionState,
    RunParams, Trajectory, TrajectoryVerdict,
};
pub use spectral::{
    eigenvalues, has_minus_one_eigenvalue, has_one_in_signed, iteration_matrix, predict,
    predict_for, predicted_rate, signed_update_matrix, spectral_report, ConditionTag, Prediction,
    SpectralError, SpectralReport, Verdict,
};
pub use topology::{
    closed_groups, cyclic_partition, enumerate_cycles, generate_random, is_strongly_connected,
    load_topology, period, rebel_bipartite, save_topology, structure_report, AgentType,
    AgentTypes, CycleList, GraphError, StructureReport, Topology, ValidationError,
};

//! Semi-tensor-product toolkit for jointly optimal control of switched
//! linear plants driven by logical networks.
//!
//! The pipeline: compile per-node update rules into structure matrices
//! ([`logic`]), lift the switched plant into one augmented bilinear system
//! ([`augment`]), run Riccati-type backward recursions over switching
//! sequences ([`det`]) or rule-set distributions ([`stoch`]), and evaluate
//! the resulting controllers in simulation ([`sim`]). The [`stp`] module
//! supplies the semi-tensor product and its logical-matrix fast paths;
//! [`oracle`] holds independent reference solvers used by the test suite.

pub mod augment;
pub mod cli;
pub mod config;
pub mod det;
pub mod error;
pub mod linalg;
pub mod logic;
pub mod oracle;
pub mod sim;
pub mod stoch;
pub mod stp;
pub mod verify;

pub use augment::{AugmentedSystem, HybridState, SwitchedPlant};
pub use config::{Problem, ProblemConfig};
pub use det::{precompute_tree, select_sequence, solve, DetSolution, SequenceSolution, SolutionTree};
pub use error::{Error, Result};
pub use sim::{
    derive_seed, monte_carlo, rollout_deterministic, rollout_stochastic,
    rollout_stochastic_fixed, sig12, write_report_csv, write_trajectory_csv, GaussianSource,
    McConfig, McController, MonteCarloReport, Trajectory, TrajectoryStep, TrialResult,
};
pub use stoch::{
    expected_total_cost, precompute_stochastic, receding_step, select_stochastic,
    solve_stochastic, RecedingChoice, StochSolution, StochasticSolution, StochasticTree,
};
pub use verify::{
    enumerate_noise_constant, verify_deterministic, verify_stochastic, CheckOutcome,
};
pub use logic::{
    network_structure_matrix, node_structure_matrix, parse_rule, step_logical, truth_table,
    CompiledLogic, Expr, LogicalNetwork, UpdateRule,
};
pub use oracle::{oracle_brute_force, oracle_mjls, oracle_per_mode_lqr};
pub use stp::{
    khatri_rao, kron, power_reducing, stp, stp_linear_grad, stp_quadratic_grad, swap_matrix,
    CanonicalVector, LogicalMatrix, Matrix,
};

//! Problem ingestion: one TOML document describes the logical network,
//! the per-mode plant matrices, the horizon, and the evaluation settings.
//!
//! The schema is strict (unknown keys are rejected) and fully validated
//! before any numerics run: arities, rule counts, matrix shapes, and
//! cross-field dimension consistency (`N = Π arities` must equal the mode
//! count when modes are given). Update rules come in three
//! interchangeable forms — an expression string, an explicit truth table,
//! or an explicit structure matrix — so a compiled network can be
//! re-ingested losslessly.

use std::fs;
use std::io;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::augment::{AugmentedSystem, HybridState, SwitchedPlant};
use crate::det;
use crate::error::{Error, Result};
use crate::logic::{
    network_structure_matrix, node_structure_matrix, parse_rule, CompiledLogic, LogicalNetwork,
    UpdateRule,
};
use crate::sim::McConfig;
use crate::stp::{matrix_from_rows, LogicalMatrix, Matrix};

/// Continuous-layer dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    /// Continuous state dimension `n`.
    pub n: usize,
    /// Continuous input dimension `m`.
    pub m: usize,
    /// Noise dimension `r` (required exactly when modes carry `f`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
}

/// One update rule in any of its three forms; exactly one field is set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixSpec>,
}

/// A structure matrix in column-index form: `rows` row count, `cols` the
/// 1-based index of the nonzero row per column.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub rows: usize,
    pub cols: Vec<usize>,
}

/// One rule set: an update rule per state node plus its selection
/// probability (1 for deterministic networks).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSetSpec {
    #[serde(default = "default_prob")]
    pub prob: f64,
    pub rules: Vec<RuleSpec>,
}

fn default_prob() -> f64 {
    1.0
}

/// The logical layer: node arities and `ℓ ≥ 1` rule sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogicalSpec {
    pub state_arities: Vec<usize>,
    #[serde(default)]
    pub control_arities: Vec<usize>,
    #[serde(rename = "set")]
    pub sets: Vec<RuleSetSpec>,
}

/// One continuous mode: dense matrices as nested row arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

/// Horizon length and the planning-tree size cap.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    pub steps: usize,
    #[serde(default = "default_cap")]
    pub max_sequences: u64,
}

fn default_cap() -> u64 {
    det::DEFAULT_MAX_SEQUENCES
}

/// Initial hybrid state: per-node logical values (1-based) and `x₀`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub theta: Vec<usize>,
    pub x: Vec<f64>,
}

/// Monte-Carlo settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub trials: usize,
    pub x0_min: f64,
    pub x0_max: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_horizon: Option<usize>,
}

/// Default output paths; command-line flags override them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<String>,
}

/// The full problem document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub system: SystemSpec,
    pub logical: LogicalSpec,
    #[serde(default, rename = "mode", skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeSpec>,
    pub horizon: HorizonSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

impl ProblemConfig {
    /// Parse a TOML document (parse errors carry line/column positions).
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read and parse a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Serialize back to TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// A validated problem: the network and its compiled structure matrices,
/// plus the plant when the config defines modes.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ProblemConfig,
    pub network: LogicalNetwork,
    pub logic: CompiledLogic,
    pub plant: Option<SwitchedPlant>,
}

fn dense(name: &str, mode: usize, rows: &[Vec<f64>]) -> Result<Matrix> {
    matrix_from_rows(rows).map_err(|e| {
        Error::Config(format!(
            "mode {mode}, matrix {name}: {e}"
        ))
    })
}

fn check_shape(name: &str, mode: usize, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Config(format!(
            "mode {mode}, matrix {name}: expected {rows}×{cols}, found {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl Problem {
    /// Validate a parsed config and build the network, compiled logic, and
    /// (when modes are present) the plant.
    pub fn build(config: ProblemConfig) -> Result<Self> {
        let spec = &config.logical;
        let p = spec.state_arities.len();
        // A rule-less skeleton with the right arities lets rule
        // expressions resolve node names before the real network exists.
        let m_times_n: usize = spec
            .state_arities
            .iter()
            .chain(spec.control_arities.iter())
            .product();
        let skeleton = LogicalNetwork::stochastic(
            spec.state_arities.clone(),
            spec.control_arities.clone(),
            vec![vec![UpdateRule::Table(vec![1; m_times_n]); p]],
            vec![1.0],
        )?;
        let mut rule_sets = Vec::with_capacity(spec.sets.len());
        let mut probs = Vec::with_capacity(spec.sets.len());
        for (s, set) in spec.sets.iter().enumerate() {
            if set.rules.len() < p {
                return Err(Error::Config(format!(
                    "rule set {} is missing the update rule for state node t{}",
                    s + 1,
                    set.rules.len() + 1
                )));
            }
            if set.rules.len() > p {
                return Err(Error::Config(format!(
                    "rule set {} has {} rules but only {p} state nodes",
                    s + 1,
                    set.rules.len()
                )));
            }
            let mut rules = Vec::with_capacity(p);
            for (i, rule) in set.rules.iter().enumerate() {
                rules.push(build_rule(rule, &skeleton, s + 1, i + 1)?);
            }
            rule_sets.push(rules);
            probs.push(set.prob);
        }
        let network = LogicalNetwork::stochastic(
            spec.state_arities.clone(),
            spec.control_arities.clone(),
            rule_sets,
            probs,
        )?;
        let logic = network_structure_matrix(&network)?;
        let plant = if config.modes.is_empty() {
            None
        } else {
            Some(build_plant(&config, network.n_states())?)
        };
        if let Some(initial) = &config.initial {
            network.mode_index(&initial.theta)?;
            if initial.x.len() != config.system.n {
                return Err(Error::Config(format!(
                    "initial.x has {} components, expected n = {}",
                    initial.x.len(),
                    config.system.n
                )));
            }
        }
        if let Some(mc) = &config.montecarlo {
            if mc.trials == 0 {
                return Err(Error::Config("montecarlo.trials must be ≥ 1".into()));
            }
            if !(mc.x0_min <= mc.x0_max) {
                return Err(Error::Config(format!(
                    "montecarlo initial box [{}, {}] is empty",
                    mc.x0_min, mc.x0_max
                )));
            }
        }
        Ok(Self {
            config,
            network,
            logic,
            plant,
        })
    }

    /// Load, parse, and validate a config file.
    pub fn load(path: &Path) -> Result<Self> {
        Self::build(ProblemConfig::load(path)?)
    }

    fn plant(&self) -> Result<&SwitchedPlant> {
        self.plant
            .as_ref()
            .ok_or_else(|| Error::Config("config defines no [[mode]] blocks".into()))
    }

    /// Augmented build for the deterministic solver (`ℓ = 1`).
    pub fn deterministic_system(&self) -> Result<AugmentedSystem> {
        AugmentedSystem::build_deterministic(&self.logic, self.plant()?, self.network.m_controls())
    }

    /// Augmented build for the stochastic solver (noise required).
    pub fn stochastic_system(&self) -> Result<AugmentedSystem> {
        AugmentedSystem::build_stochastic(&self.logic, self.plant()?, self.network.m_controls())
    }

    /// The configured initial hybrid state.
    pub fn initial_state(&self) -> Result<HybridState> {
        let initial = self
            .config
            .initial
            .as_ref()
            .ok_or_else(|| Error::Config("config defines no [initial] block".into()))?;
        Ok(HybridState {
            theta: self.network.mode_index(&initial.theta)?,
            x: Array1::from_vec(initial.x.clone()),
        })
    }

    /// The configured Monte-Carlo settings.
    pub fn mc_config(&self) -> Result<McConfig> {
        let mc = self
            .config
            .montecarlo
            .as_ref()
            .ok_or_else(|| Error::Config("config defines no [montecarlo] block".into()))?;
        Ok(McConfig {
            trials: mc.trials,
            x0_min: mc.x0_min,
            x0_max: mc.x0_max,
            seed: mc.seed,
            sim_horizon: mc.sim_horizon,
        })
    }

    /// A copy of the config with every rule replaced by its compiled nodal
    /// structure matrix — re-ingesting it reproduces the network exactly.
    pub fn with_matrix_rules(&self) -> Result<ProblemConfig> {
        let mut config = self.config.clone();
        for (s, set) in config.logical.sets.iter_mut().enumerate() {
            let rules = &self.network.rule_sets()[s];
            set.rules.clear();
            for (i, rule) in rules.iter().enumerate() {
                let nodal = node_structure_matrix(rule, &self.network, i + 1)?;
                set.rules.push(RuleSpec {
                    matrix: Some(MatrixSpec {
                        rows: nodal.rows(),
                        cols: nodal.col_indices().to_vec(),
                    }),
                    ..RuleSpec::default()
                });
            }
        }
        Ok(config)
    }
}

fn build_rule(
    rule: &RuleSpec,
    skeleton: &LogicalNetwork,
    set: usize,
    node: usize,
) -> Result<UpdateRule> {
    match (&rule.expr, &rule.table, &rule.matrix) {
        (Some(text), None, None) => parse_rule(text, skeleton),
        (None, Some(table), None) => Ok(UpdateRule::Table(table.clone())),
        (None, None, Some(matrix)) => Ok(UpdateRule::Matrix(LogicalMatrix::new(
            matrix.rows,
            matrix.cols.clone(),
        )?)),
        _ => Err(Error::Config(format!(
            "rule set {set}, state node t{node}: give exactly one of expr, table, matrix"
        ))),
    }
}

fn build_plant(config: &ProblemConfig, n_states: usize) -> Result<SwitchedPlant> {
    let sys = &config.system;
    if config.modes.len() != n_states {
        return Err(Error::Config(format!(
            "{} [[mode]] blocks but the arities give N = {n_states} joint states",
            config.modes.len()
        )));
    }
    let with_f = config.modes.iter().filter(|m| m.f.is_some()).count();
    if with_f != 0 && with_f != config.modes.len() {
        return Err(Error::Config(
            "either every mode defines f or none does".into(),
        ));
    }
    if with_f > 0 && sys.r.is_none() {
        return Err(Error::Config(
            "modes define noise matrices f but [system] lacks r".into(),
        ));
    }
    if with_f == 0 && sys.r.is_some() {
        return Err(Error::Config(
            "[system] defines r but no mode has a noise matrix f".into(),
        ));
    }
    let (n, m) = (sys.n, sys.m);
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut f = Vec::new();
    let mut c = Vec::new();
    let mut d = Vec::new();
    let mut q = Vec::new();
    for (idx, mode) in config.modes.iter().enumerate() {
        let i = idx + 1;
        let am = dense("a", i, &mode.a)?;
        check_shape("a", i, &am, n, n)?;
        let bm = dense("b", i, &mode.b)?;
        check_shape("b", i, &bm, n, m)?;
        if let Some(rows) = &mode.f {
            let fm = dense("f", i, rows)?;
            check_shape("f", i, &fm, n, sys.r.expect("checked above"))?;
            f.push(fm);
        }
        let cm = dense("c", i, &mode.c)?;
        check_shape("c", i, &cm, n, n)?;
        let dm = dense("d", i, &mode.d)?;
        check_shape("d", i, &dm, m, m)?;
        let qm = dense("q", i, &mode.q)?;
        check_shape("q", i, &qm, n, n)?;
        a.push(am);
        b.push(bm);
        c.push(cm);
        d.push(dm);
        q.push(qm);
    }
    SwitchedPlant::new(a, b, (!f.is_empty()).then_some(f), c, d, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODE: &str = r#"
        [system]
        n = 1
        m = 1

        [logical]
        state_arities = [2, 2]
        control_arities = [2]

        [[logical.set]]
        rules = [{ expr = "t1 & g1" }, { expr = "t2 | g1" }]

        [horizon]
        steps = 2
    "#;

    #[test]
    fn parses_and_compiles_expression_rules() {
        let config = ProblemConfig::from_toml(TWO_NODE).unwrap();
        let problem = Problem::build(config).unwrap();
        assert_eq!(problem.network.n_states(), 4);
        assert_eq!(problem.network.m_controls(), 2);
        assert_eq!(
            problem.logic.single().col_indices(),
            &[1, 1, 3, 3, 3, 4, 3, 4]
        );
        assert!(problem.plant.is_none());
        assert!(problem.deterministic_system().is_err());
    }

    #[test]
    fn missing_rule_error_names_the_node() {
        let text = TWO_NODE.replace(r#", { expr = "t2 | g1" }"#, "");
        let config = ProblemConfig::from_toml(&text).unwrap();
        let err = Problem::build(config).unwrap_err();
        assert!(
            err.to_string().contains("state node t2"),
            "unexpected message: {err}"
        );
    }

    #[test]
    fn unknown_keys_and_syntax_errors_carry_positions() {
        let err = ProblemConfig::from_toml("[system]\nn = 1\nm = 1\nbogus = 3\n[logical]\nstate_arities=[2]\n[[logical.set]]\nrules=[]\n[horizon]\nsteps=1")
            .unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = ProblemConfig::from_toml("[system\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn rule_with_two_forms_is_rejected() {
        let text = TWO_NODE.replace(
            r#"{ expr = "t1 & g1" }"#,
            r#"{ expr = "t1 & g1", table = [1, 1, 1, 1, 1, 1, 1, 1] }"#,
        );
        let config = ProblemConfig::from_toml(&text).unwrap();
        let err = Problem::build(config).unwrap_err();
        assert!(err.to_string().contains("exactly one"), "{err}");
    }

    #[test]
    fn matrix_rule_round_trip_reproduces_structure_matrix() {
        let config = ProblemConfig::from_toml(TWO_NODE).unwrap();
        let problem = Problem::build(config).unwrap();
        let original = problem.logic.single().col_indices().to_vec();
        let rewritten = problem.with_matrix_rules().unwrap();
        let text = rewritten.to_toml().unwrap();
        let reloaded = Problem::build(ProblemConfig::from_toml(&text).unwrap()).unwrap();
        assert_eq!(
            reloaded.logic.single().col_indices(),
            original.as_slice()
        );
    }

    #[test]
    fn mode_count_must_match_joint_state_count() {
        let text = format!(
            "{TWO_NODE}\n[[mode]]\na=[[1.0]]\nb=[[1.0]]\nc=[[1.0]]\nd=[[1.0]]\nq=[[1.0]]\n"
        );
        let config = ProblemConfig::from_toml(&text).unwrap();
        let err = Problem::build(config).unwrap_err();
        assert!(err.to_string().contains("N = 4"), "{err}");
    }

    #[test]
    fn mixed_noise_definition_is_rejected() {
        let mode = "a=[[1.0]]\nb=[[1.0]]\nc=[[1.0]]\nd=[[1.0]]\nq=[[1.0]]";
        let text = format!(
            "[system]\nn=1\nm=1\nr=1\n[logical]\nstate_arities=[2]\ncontrol_arities=[2]\n\
             [[logical.set]]\nrules=[{{ expr = \"g1\" }}]\n[horizon]\nsteps=1\n\
             [[mode]]\n{mode}\nf=[[0.1]]\n[[mode]]\n{mode}\n"
        );
        let config = ProblemConfig::from_toml(&text).unwrap();
        let err = Problem::build(config).unwrap_err();
        assert!(err.to_string().contains("every mode"), "{err}");
    }

    #[test]
    fn initial_block_is_validated() {
        let text = format!("{TWO_NODE}\n[initial]\ntheta = [1, 3]\nx = [0.0]\n");
        let config = ProblemConfig::from_toml(&text).unwrap();
        assert!(Problem::build(config).is_err());
        let text = format!("{TWO_NODE}\n[initial]\ntheta = [1, 2]\nx = [0.0]\n");
        let problem = Problem::build(ProblemConfig::from_toml(&text).unwrap()).unwrap();
        let state = problem.initial_state().unwrap();
        assert_eq!(state.theta, 2);
    }
}

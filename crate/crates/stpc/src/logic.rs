//! Logical control networks: rule parsing, truth-table enumeration, and
//! structure-matrix compilation.
//!
//! A network has `p` state nodes with arities `k₁..k_p` (each ≥ 2) and `q`
//! control nodes with arities `h₁..h_q`, giving `N = Πkᵢ` joint states and
//! `M = Πhⱼ` joint controls. Each state node carries an update rule — a
//! Boolean expression, an explicit output table, or an explicit logical
//! matrix — and compiles to a nodal structure matrix `M_{fⁱ} ∈ L_{kᵢ×MN}`.
//! The Khatri–Rao product of the nodal matrices is the network structure
//! matrix `L ∈ L_{N×MN}`, which drives the vector-form update
//! `θ⃗_{t+1} = L ⋉ γ⃗_t ⋉ θ⃗_t`. Randomly switched networks carry `ℓ` rule
//! sets with probabilities and compile to `ℓ` structure matrices.
//!
//! Logical values use the convention `1 = TRUE = δ₂¹`, `2 = FALSE = δ₂²`.
//! Inside a joint input index, controls sit outermost (most significant),
//! then states, each group in declaration order — matching `γ⃗_t ⋉ θ⃗_t`.

use crate::error::{Error, Result};
use crate::stp::{CanonicalVector, LogicalMatrix};

/// Expression AST over Boolean state variables `t1..tp` and control
/// variables `g1..gq`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    /// State node reference (1-based).
    State(usize),
    /// Control node reference (1-based).
    Control(usize),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Xor(Box<Expr>, Box<Expr>),
    Xnor(Box<Expr>, Box<Expr>),
}

/// Update rule of one state node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UpdateRule {
    /// Parsed Boolean expression (all referenced nodes must be 2-valued).
    Expression(Expr),
    /// Explicit output table of length `M·N`, entries in `[1, kᵢ]`, ordered
    /// controls-outermost. The only way to define multi-valued updates.
    Table(Vec<usize>),
    /// Explicit nodal structure matrix of shape `kᵢ × MN`.
    Matrix(LogicalMatrix),
}

/// Controlled logical network: arities plus `ℓ ≥ 1` rule sets. Deterministic
/// networks have a single rule set with probability 1; stochastic networks
/// pick rule set `σ_t = i` independently each step with probability `pᵢ`.
#[derive(Debug, Clone)]
pub struct LogicalNetwork {
    state_arities: Vec<usize>,
    control_arities: Vec<usize>,
    rule_sets: Vec<Vec<UpdateRule>>,
    probs: Vec<f64>,
}

/// Compiled structure matrices: one `N × MN` logical matrix per rule set,
/// with the selection probabilities.
#[derive(Debug, Clone)]
pub struct CompiledLogic {
    pub matrices: Vec<LogicalMatrix>,
    pub probs: Vec<f64>,
}

impl CompiledLogic {
    /// Number of rule sets `ℓ`.
    pub fn ell(&self) -> usize {
        self.matrices.len()
    }

    /// The single structure matrix of a deterministic network.
    /// Panics if the network is stochastic — callers branch on `ell()` first.
    pub fn single(&self) -> &LogicalMatrix {
        assert_eq!(self.matrices.len(), 1, "network has multiple rule sets");
        &self.matrices[0]
    }
}

impl LogicalNetwork {
    /// Deterministic network: one rule per state node.
    pub fn deterministic(
        state_arities: Vec<usize>,
        control_arities: Vec<usize>,
        rules: Vec<UpdateRule>,
    ) -> Result<Self> {
        Self::stochastic(state_arities, control_arities, vec![rules], vec![1.0])
    }

    /// Randomly switched network: `ℓ` rule sets with selection probabilities.
    pub fn stochastic(
        state_arities: Vec<usize>,
        control_arities: Vec<usize>,
        rule_sets: Vec<Vec<UpdateRule>>,
        probs: Vec<f64>,
    ) -> Result<Self> {
        if state_arities.is_empty() {
            return Err(Error::Config("network needs at least one state node".into()));
        }
        if let Some(&k) = state_arities.iter().find(|&&k| k < 2) {
            return Err(Error::Config(format!(
                "state node arities must be ≥ 2, found {k}"
            )));
        }
        if let Some(&h) = control_arities.iter().find(|&&h| h < 1) {
            return Err(Error::Config(format!(
                "control node arities must be ≥ 1, found {h}"
            )));
        }
        if rule_sets.is_empty() {
            return Err(Error::Config("network needs at least one rule set".into()));
        }
        if rule_sets.len() != probs.len() {
            return Err(Error::BadDistribution {
                message: format!(
                    "{} rule sets but {} probabilities",
                    rule_sets.len(),
                    probs.len()
                ),
            });
        }
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p) || !p.is_finite()) {
            return Err(Error::BadDistribution {
                message: "probabilities must lie in [0, 1]".into(),
            });
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::BadDistribution {
                message: format!("probabilities sum to {total}, expected 1"),
            });
        }
        let p = state_arities.len();
        for (s, set) in rule_sets.iter().enumerate() {
            if set.len() != p {
                return Err(Error::Config(format!(
                    "rule set {} has {} rules, expected one per state node ({p})",
                    s + 1,
                    set.len()
                )));
            }
        }
        Ok(Self {
            state_arities,
            control_arities,
            rule_sets,
            probs,
        })
    }

    pub fn state_arities(&self) -> &[usize] {
        &self.state_arities
    }

    pub fn control_arities(&self) -> &[usize] {
        &self.control_arities
    }

    pub fn rule_sets(&self) -> &[Vec<UpdateRule>] {
        &self.rule_sets
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Joint state count `N = Π kᵢ`.
    pub fn n_states(&self) -> usize {
        self.state_arities.iter().product()
    }

    /// Joint control count `M = Π hⱼ` (1 when there are no control nodes).
    pub fn m_controls(&self) -> usize {
        self.control_arities.iter().product()
    }

    /// Mode index `ι(θ) = Σᵢ (θⁱ−1)·Π_{j>i} kⱼ + 1` of a per-node valuation.
    pub fn mode_index(&self, theta: &[usize]) -> Result<usize> {
        if theta.len() != self.state_arities.len() {
            return Err(Error::DimensionMismatch {
                context: "mode_index",
                expected: format!("{} state values", self.state_arities.len()),
                found: theta.len().to_string(),
            });
        }
        let mut idx = 0usize;
        for (v, &k) in theta.iter().zip(&self.state_arities) {
            if *v == 0 || *v > k {
                return Err(Error::DimensionMismatch {
                    context: "mode_index",
                    expected: format!("state value in [1, {k}]"),
                    found: v.to_string(),
                });
            }
            idx = idx * k + (v - 1);
        }
        Ok(idx + 1)
    }

    /// Inverse of `mode_index`: per-node valuation of a joint state index.
    pub fn decode_state(&self, index: usize) -> Vec<usize> {
        let mut rem = index - 1;
        let mut out = vec![0usize; self.state_arities.len()];
        for (slot, &k) in out.iter_mut().zip(&self.state_arities).rev() {
            *slot = rem % k + 1;
            rem /= k;
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Rule parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    State(usize),
    Control(usize),
    Not,
    And,
    Or,
    Xor,
    Xnor,
    LParen,
    RParen,
}

struct Lexer<'a> {
    text: &'a str,
    tokens: Vec<(Token, usize)>,
}

impl<'a> Lexer<'a> {
    fn run(text: &'a str) -> Result<Vec<(Token, usize)>> {
        let mut lx = Lexer {
            text,
            tokens: Vec::new(),
        };
        lx.tokenize()?;
        Ok(lx.tokens)
    }

    fn tokenize(&mut self) -> Result<()> {
        let bytes = self.text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            match c {
                ' ' | '\t' => i += 1,
                '&' => {
                    self.tokens.push((Token::And, i));
                    i += 1;
                }
                '|' => {
                    self.tokens.push((Token::Or, i));
                    i += 1;
                }
                '!' => {
                    self.tokens.push((Token::Not, i));
                    i += 1;
                }
                '^' => {
                    self.tokens.push((Token::Xor, i));
                    i += 1;
                }
                '(' => {
                    self.tokens.push((Token::LParen, i));
                    i += 1;
                }
                ')' => {
                    self.tokens.push((Token::RParen, i));
                    i += 1;
                }
                '<' => {
                    if self.text[i..].starts_with("<->") {
                        self.tokens.push((Token::Xnor, i));
                        i += 3;
                    } else {
                        return Err(Error::SyntaxError {
                            position: i,
                            message: "expected `<->`".into(),
                        });
                    }
                }
                't' | 'g' => {
                    let start = i;
                    i += 1;
                    let digits_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == digits_start {
                        return Err(Error::SyntaxError {
                            position: start,
                            message: format!("identifier `{c}` needs a 1-based node number"),
                        });
                    }
                    let num: usize =
                        self.text[digits_start..i]
                            .parse()
                            .map_err(|_| Error::SyntaxError {
                                position: digits_start,
                                message: "node number out of range".into(),
                            })?;
                    let tok = if c == 't' {
                        Token::State(num)
                    } else {
                        Token::Control(num)
                    };
                    self.tokens.push((tok, start));
                }
                other => {
                    return Err(Error::SyntaxError {
                        position: i,
                        message: format!("unexpected character `{other}`"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Recursive-descent parser. Precedence, tightest first:
/// `!`, `&`, `^`, `|`, `<->`; binary operators associate left.
struct Parser<'a> {
    tokens: &'a [(Token, usize)],
    pos: usize,
    text_len: usize,
    network: &'a LogicalNetwork,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(Token, usize)> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn end_position(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or(self.text_len)
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        self.parse_xnor()
    }

    fn parse_xnor(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_or()?;
        while matches!(self.peek(), Some((Token::Xnor, _))) {
            self.bump();
            let rhs = self.parse_or()?;
            lhs = Expr::Xnor(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_or(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_xor()?;
        while matches!(self.peek(), Some((Token::Or, _))) {
            self.bump();
            let rhs = self.parse_xor()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_xor(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_and()?;
        while matches!(self.peek(), Some((Token::Xor, _))) {
            self.bump();
            let rhs = self.parse_and()?;
            lhs = Expr::Xor(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_and(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_unary()?;
        while matches!(self.peek(), Some((Token::And, _))) {
            self.bump();
            let rhs = self.parse_unary()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr> {
        if matches!(self.peek(), Some((Token::Not, _))) {
            self.bump();
            let inner = self.parse_unary()?;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<Expr> {
        match self.bump() {
            Some((Token::State(i), pos)) => {
                let p = self.network.state_arities().len();
                if i == 0 || i > p {
                    return Err(Error::UnknownVariable {
                        name: format!("t{i}"),
                        position: pos,
                    });
                }
                let arity = self.network.state_arities()[i - 1];
                if arity != 2 {
                    return Err(Error::NonBooleanVariable {
                        name: format!("t{i}"),
                        arity,
                    });
                }
                Ok(Expr::State(i))
            }
            Some((Token::Control(j), pos)) => {
                let q = self.network.control_arities().len();
                if j == 0 || j > q {
                    return Err(Error::UnknownVariable {
                        name: format!("g{j}"),
                        position: pos,
                    });
                }
                let arity = self.network.control_arities()[j - 1];
                if arity != 2 {
                    return Err(Error::NonBooleanVariable {
                        name: format!("g{j}"),
                        arity,
                    });
                }
                Ok(Expr::Control(j))
            }
            Some((Token::LParen, _)) => {
                let inner = self.parse_expr()?;
                match self.bump() {
                    Some((Token::RParen, _)) => Ok(inner),
                    other => Err(Error::SyntaxError {
                        position: other.map(|(_, p)| p).unwrap_or(self.text_len),
                        message: "expected `)`".into(),
                    }),
                }
            }
            Some((tok, pos)) => Err(Error::SyntaxError {
                position: pos,
                message: format!("expected a variable, `!`, or `(`, found {tok:?}"),
            }),
            None => Err(Error::SyntaxError {
                position: self.text_len,
                message: "unexpected end of rule".into(),
            }),
        }
    }
}

/// Parse an infix Boolean rule (`&` AND, `|` OR, `!` NOT, `^` XOR,
/// `<->` XNOR, parentheses, variables `t1..tp` / `g1..gq`) against a
/// network's declarations.
pub fn parse_rule(text: &str, network: &LogicalNetwork) -> Result<UpdateRule> {
    let tokens = Lexer::run(text)?;
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        text_len: text.len(),
        network,
    };
    let expr = parser.parse_expr()?;
    if parser.pos != tokens.len() {
        return Err(Error::SyntaxError {
            position: parser.end_position(),
            message: "unexpected trailing input".into(),
        });
    }
    Ok(UpdateRule::Expression(expr))
}

// ---------------------------------------------------------------------------
// Evaluation and compilation
// ---------------------------------------------------------------------------

/// Evaluate an expression on a joint assignment (`1 = TRUE`, `2 = FALSE`).
/// XNOR is equality of logical values, XOR is inequality.
fn eval_expr(expr: &Expr, controls: &[usize], states: &[usize]) -> usize {
    let truthy = |v: usize| v == 1;
    let as_val = |b: bool| if b { 1 } else { 2 };
    match expr {
        Expr::State(i) => states[i - 1],
        Expr::Control(j) => controls[j - 1],
        Expr::Not(e) => as_val(!truthy(eval_expr(e, controls, states))),
        Expr::And(a, b) => as_val(
            truthy(eval_expr(a, controls, states)) && truthy(eval_expr(b, controls, states)),
        ),
        Expr::Or(a, b) => as_val(
            truthy(eval_expr(a, controls, states)) || truthy(eval_expr(b, controls, states)),
        ),
        Expr::Xor(a, b) => {
            as_val(eval_expr(a, controls, states) != eval_expr(b, controls, states))
        }
        Expr::Xnor(a, b) => {
            as_val(eval_expr(a, controls, states) == eval_expr(b, controls, states))
        }
    }
}

/// Decode joint input index `c ∈ [0, MN)` into per-node values
/// (controls outermost, then states, declaration order).
fn decode_input(network: &LogicalNetwork, c: usize) -> (Vec<usize>, Vec<usize>) {
    let arities: Vec<usize> = network
        .control_arities()
        .iter()
        .chain(network.state_arities())
        .copied()
        .collect();
    let mut rem = c;
    let mut digits = vec![0usize; arities.len()];
    for (slot, &k) in digits.iter_mut().zip(&arities).rev() {
        *slot = rem % k + 1;
        rem /= k;
    }
    let q = network.control_arities().len();
    let controls = digits[..q].to_vec();
    let states = digits[q..].to_vec();
    (controls, states)
}

/// Output table of a rule for state node `node` (1-based): length `MN`,
/// entries in `[1, k_node]`, inputs ordered controls-outermost. Expression
/// rules are evaluated on every assignment; explicit tables/matrices are
/// validated and passed through.
pub fn truth_table(
    rule: &UpdateRule,
    network: &LogicalNetwork,
    node: usize,
) -> Result<Vec<usize>> {
    let k_i = network.state_arities()[node - 1];
    let mn = network.m_controls() * network.n_states();
    match rule {
        UpdateRule::Expression(expr) => Ok((0..mn)
            .map(|c| {
                let (controls, states) = decode_input(network, c);
                eval_expr(expr, &controls, &states)
            })
            .collect()),
        UpdateRule::Table(table) => {
            if table.len() != mn {
                return Err(Error::BadTable {
                    node,
                    message: format!("table length {} ≠ M·N = {mn}", table.len()),
                });
            }
            if let Some(&bad) = table.iter().find(|&&v| v == 0 || v > k_i) {
                return Err(Error::BadTable {
                    node,
                    message: format!("entry {bad} outside [1, {k_i}]"),
                });
            }
            Ok(table.clone())
        }
        UpdateRule::Matrix(m) => {
            if m.rows() != k_i || m.cols() != mn {
                return Err(Error::BadTable {
                    node,
                    message: format!(
                        "matrix is {}×{}, expected {k_i}×{mn}",
                        m.rows(),
                        m.cols()
                    ),
                });
            }
            Ok(m.col_indices().to_vec())
        }
    }
}

/// Nodal structure matrix `M_{fⁱ} ∈ L_{kᵢ×MN}`: column `c` is
/// `δ_{kᵢ}^{table[c]}`, so `θ⃗ⁱ_{t+1} = M_{fⁱ} ⋉ γ⃗_t ⋉ θ⃗_t` on every input.
pub fn node_structure_matrix(
    rule: &UpdateRule,
    network: &LogicalNetwork,
    node: usize,
) -> Result<LogicalMatrix> {
    let table = truth_table(rule, network, node)?;
    LogicalMatrix::new(network.state_arities()[node - 1], table)
}

/// Compile every rule set into its network structure matrix
/// `L = M_{f¹} ∗ M_{f²} ∗ ⋯ ∗ M_{f^p}` (Khatri–Rao over nodes in
/// declaration order). Returns one matrix per rule set with the selection
/// probabilities.
pub fn network_structure_matrix(network: &LogicalNetwork) -> Result<CompiledLogic> {
    let mut matrices = Vec::with_capacity(network.rule_sets().len());
    for rules in network.rule_sets() {
        let mut acc: Option<LogicalMatrix> = None;
        for (i, rule) in rules.iter().enumerate() {
            let nodal = node_structure_matrix(rule, network, i + 1)?;
            acc = Some(match acc {
                None => nodal,
                Some(prev) => prev.khatri_rao_logical(&nodal)?,
            });
        }
        matrices.push(acc.expect("validated: at least one state node"));
    }
    Ok(CompiledLogic {
        matrices,
        probs: network.probs().to_vec(),
    })
}

/// One step of the vector-form update `θ⃗_{t+1} = L ⋉ γ⃗_t ⋉ θ⃗_t`:
/// pure index lookup `δ_N^{L col ((γ−1)N + θ)}`.
pub fn step_logical(
    l: &LogicalMatrix,
    gamma: &CanonicalVector,
    theta: &CanonicalVector,
) -> Result<CanonicalVector> {
    let n = l.rows();
    if theta.dim() != n || l.cols() != gamma.dim() * n {
        return Err(Error::DimensionMismatch {
            context: "step_logical",
            expected: format!("L of shape {n}×{} for θ ∈ Δ_{n}", gamma.dim() * n),
            found: format!(
                "L {}×{}, γ ∈ Δ_{}, θ ∈ Δ_{}",
                l.rows(),
                l.cols(),
                gamma.dim(),
                theta.dim()
            ),
        });
    }
    CanonicalVector::new(n, l.col((gamma.index() - 1) * n + theta.index()))
}

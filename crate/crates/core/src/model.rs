//! Parametrized Mealy hidden Markov models.
//!
//! A model is an alphabet, a list of hidden states, one transition matrix
//! `T^(x)` per symbol whose entries are [`Expr`]s, and an initial condition.
//! [`ParamHmm::instantiate`] evaluates everything (values and exact first
//! derivatives) at a parameter point and returns a [`NumericHmm`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, ExprError, ParamPoint, Scalar};
use crate::graph;

/// Tolerance for row sums and initial-vector normalization.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("duplicate transition {from} -{symbol}-> {to}")]
    DuplicateTransition {
        from: String,
        symbol: String,
        to: String,
    },
    #[error("expression references undeclared parameter `{0}`")]
    UndeclaredParameter(String),
    #[error("parameter `{0}` declared twice")]
    DuplicateParameter(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("initial vector has {got} entries, expected {expected}")]
    InitialLength { got: usize, expected: usize },
    #[error("chain has {0} attractors; an explicit initial distribution is required")]
    MultipleAttractors(usize),
    #[error("stationary equations are singular")]
    SingularStationary,
    #[error("model is invalid at this parameter point: {0}")]
    Invalid(String),
}

/// Declared Markov order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Finite(usize),
    Infinite,
}

/// Optional declared structure, used only for diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markov_order: Option<Order>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cryptic_order: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unifilar: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attractors: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    /// Start from the stationary distribution of `T` at the working point.
    Stationary,
    Explicit(Vec<Expr>),
}

/// One nonzero entry of a labeled transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub symbol: usize,
    pub to: usize,
    pub prob: Expr,
}

#[derive(Debug, Clone)]
pub struct ParamHmm {
    alphabet: Vec<String>,
    states: Vec<String>,
    parameters: Vec<String>,
    transitions: Vec<Transition>,
    /// `d_probs[k][m]` is the derivative of `transitions[k]` wrt parameter `m`.
    d_probs: Vec<Vec<Expr>>,
    initial: Initial,
    d_initial: Vec<Vec<Expr>>,
    metadata: Metadata,
}

fn check_unique(labels: &[String]) -> Result<(), ModelError> {
    for (i, a) in labels.iter().enumerate() {
        if labels[..i].contains(a) {
            return Err(ModelError::DuplicateLabel(a.clone()));
        }
    }
    Ok(())
}

impl ParamHmm {
    /// Builds a model from labeled transitions given as `(from, symbol, to, prob)`.
    pub fn new(
        alphabet: &[impl AsRef<str>],
        states: &[impl AsRef<str>],
        parameters: &[impl AsRef<str>],
        transitions: Vec<(String, String, String, Expr)>,
        initial: Initial,
        metadata: Metadata,
    ) -> Result<Self, ModelError> {
        fn own(v: &[impl AsRef<str>]) -> Vec<String> {
            v.iter().map(|s| s.as_ref().to_string()).collect()
        }
        let alphabet = own(alphabet);
        let states = own(states);
        let parameters = own(parameters);
        check_unique(&alphabet)?;
        check_unique(&states)?;
        for (i, p) in parameters.iter().enumerate() {
            if parameters[..i].contains(p) {
                return Err(ModelError::DuplicateParameter(p.clone()));
            }
        }
        let state_ix = |s: &str| {
            states
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| ModelError::UnknownState(s.to_string()))
        };
        let symbol_ix = |s: &str| {
            alphabet
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| ModelError::UnknownSymbol(s.to_string()))
        };
        let check_params = |e: &Expr| -> Result<(), ModelError> {
            for p in e.parameters() {
                if !parameters.contains(&p) {
                    return Err(ModelError::UndeclaredParameter(p));
                }
            }
            Ok(())
        };

        let mut resolved: Vec<Transition> = Vec::with_capacity(transitions.len());
        for (from, symbol, to, prob) in transitions {
            check_params(&prob)?;
            let t = Transition {
                from: state_ix(&from)?,
                symbol: symbol_ix(&symbol)?,
                to: state_ix(&to)?,
                prob,
            };
            if resolved
                .iter()
                .any(|r| r.from == t.from && r.symbol == t.symbol && r.to == t.to)
            {
                return Err(ModelError::DuplicateTransition { from, symbol, to });
            }
            resolved.push(t);
        }
        let d_probs = resolved
            .iter()
            .map(|t| parameters.iter().map(|p| t.prob.diff(p)).collect())
            .collect();

        let d_initial = match &initial {
            Initial::Stationary => Vec::new(),
            Initial::Explicit(v) => {
                if v.len() != states.len() {
                    return Err(ModelError::InitialLength {
                        got: v.len(),
                        expected: states.len(),
                    });
                }
                for e in v {
                    check_params(e)?;
                }
                parameters
                    .iter()
                    .map(|p| v.iter().map(|e| e.diff(p)).collect())
                    .collect()
            }
        };

        Ok(Self {
            alphabet,
            states,
            parameters,
            transitions: resolved,
            d_probs,
            initial,
            d_initial,
            metadata,
        })
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn parameters(&self) -> &[String] {
        &self.parameters
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn initial(&self) -> &Initial {
        &self.initial
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn symbol_index(&self, symbol: &str) -> Result<usize, ModelError> {
        self.alphabet
            .iter()
            .position(|x| x == symbol)
            .ok_or_else(|| ModelError::UnknownSymbol(symbol.to_string()))
    }

    fn labeled_values(&self, theta: &ParamPoint) -> Result<Vec<DMatrix<f64>>, ModelError> {
        let n = self.states.len();
        let mut mats = vec![DMatrix::zeros(n, n); self.alphabet.len()];
        for t in &self.transitions {
            mats[t.symbol][(t.from, t.to)] = t.prob.eval(theta)?;
        }
        Ok(mats)
    }

    /// Structural report at `theta`; never fails; expression errors are
    /// recorded as problems.
    pub fn validate(&self, theta: &ParamPoint) -> Diagnostics {
        let n = self.states.len();
        let mut diag = Diagnostics::default();
        for p in &self.parameters {
            if theta.get(p).is_none() {
                diag.problems.push(format!("parameter `{p}` is unbound"));
            }
        }
        let mats = match self.labeled_values(theta) {
            Ok(m) => m,
            Err(e) => {
                diag.problems.push(e.to_string());
                return diag;
            }
        };
        let mut net = DMatrix::<f64>::zeros(n, n);
        for (x, m) in mats.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    let v = m[(i, j)];
                    if !(-STOCHASTIC_TOL..=1.0 + STOCHASTIC_TOL).contains(&v) {
                        diag.out_of_range.push(EntryIssue {
                            symbol: self.alphabet[x].clone(),
                            from: self.states[i].clone(),
                            to: self.states[j].clone(),
                            value: v,
                        });
                    }
                }
            }
            net += m;
        }
        diag.row_residuals = (0..n).map(|i| net.row(i).sum() - 1.0).collect();
        for (i, r) in diag.row_residuals.iter().enumerate() {
            if r.abs() > STOCHASTIC_TOL {
                diag.problems.push(format!(
                    "row `{}` sums to {} (residual {r:e})",
                    self.states[i],
                    1.0 + r
                ));
            }
        }
        for e in &diag.out_of_range {
            diag.problems.push(format!(
                "entry {} -{}-> {} = {} outside [0,1]",
                e.from, e.symbol, e.to, e.value
            ));
        }
        if let Initial::Explicit(v) = &self.initial {
            let mut sum = 0.0;
            for (i, e) in v.iter().enumerate() {
                match e.eval(theta) {
                    Ok(x) => {
                        if x < -STOCHASTIC_TOL {
                            diag.problems
                                .push(format!("initial probability of `{}` is {x}", self.states[i]));
                        }
                        sum += x;
                    }
                    Err(err) => diag.problems.push(err.to_string()),
                }
            }
            diag.initial_residual = Some(sum - 1.0);
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                diag.problems.push(format!("initial vector sums to {sum}"));
            }
        }
        let edges = support_edges(&net);
        diag.components = graph::strongly_connected(n, &edges);
        diag.closed_classes = graph::closed_classes(n, &edges);
        diag
    }

    /// Evaluates the model and its first derivatives at `theta`.
    pub fn instantiate(&self, theta: &ParamPoint) -> Result<NumericHmm, ModelError> {
        let diag = self.validate(theta);
        if !diag.is_valid() {
            return Err(ModelError::Invalid(diag.problems.join("; ")));
        }
        let n = self.states.len();
        let labeled = self.labeled_values(theta)?;
        let mut d_labeled = vec![vec![DMatrix::zeros(n, n); self.alphabet.len()]; self.parameters.len()];
        for (t, dt) in self.transitions.iter().zip(&self.d_probs) {
            for (m, d) in dt.iter().enumerate() {
                if !d.is_zero() {
                    d_labeled[m][t.symbol][(t.from, t.to)] = d.eval(theta)?;
                }
            }
        }
        let (initial, d_initial) = match &self.initial {
            Initial::Explicit(v) => {
                let init = DVector::from_vec(
                    v.iter().map(|e| e.eval(theta)).collect::<Result<Vec<_>, _>>()?,
                );
                let d = self
                    .d_initial
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|e| e.eval(theta))
                            .collect::<Result<Vec<_>, _>>()
                            .map(DVector::from_vec)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                (init, d)
            }
            Initial::Stationary => {
                if diag.attractors() != 1 {
                    return Err(ModelError::MultipleAttractors(diag.attractors()));
                }
                let net: DMatrix<f64> = labeled.iter().sum();
                let lu = stationary_system(&net).lu();
                let pi = lu
                    .solve(&unit_last(n, 1.0))
                    .ok_or(ModelError::SingularStationary)?;
                // Differentiating pi (I - T) = 0, pi 1 = 1 gives the same
                // system with right-hand side (pi dT) and zero sum.
                let d = d_labeled
                    .iter()
                    .map(|dm| {
                        let dnet: DMatrix<f64> = dm.iter().sum();
                        let mut rhs = (pi.transpose() * dnet).transpose();
                        rhs[n - 1] = 0.0;
                        lu.solve(&rhs).ok_or(ModelError::SingularStationary)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                (pi, d)
            }
        };
        Ok(NumericHmm {
            labeled,
            d_labeled,
            initial,
            d_initial,
        })
    }

    /// Labeled matrices and initial distribution at `theta` without
    /// derivatives or graph diagnostics. Cheap enough for likelihood search;
    /// fails on negative entries, rows off one, or a singular stationary system.
    pub fn evaluate(&self, theta: &ParamPoint) -> Result<(Vec<DMatrix<f64>>, DVector<f64>), ModelError> {
        let labeled = self.labeled_values(theta)?;
        let net: DMatrix<f64> = labeled.iter().sum();
        let n = net.nrows();
        let bad_entry = labeled.iter().any(|m| m.iter().any(|&v| v < 0.0 || !v.is_finite()));
        let bad_row = (0..n).any(|i| (net.row(i).sum() - 1.0).abs() > STOCHASTIC_TOL);
        if bad_entry || bad_row {
            return Err(ModelError::Invalid("matrices are not stochastic at this point".into()));
        }
        let initial = match &self.initial {
            Initial::Explicit(v) => DVector::from_vec(v.iter().map(|e| e.eval(theta)).collect::<Result<Vec<_>, _>>()?),
            Initial::Stationary => stationary_system(&net)
                .lu()
                .solve(&unit_last(n, 1.0))
                .ok_or(ModelError::SingularStationary)?,
        };
        Ok((labeled, initial))
    }

    /// Stationary distribution `pi_T` of the net transition matrix.
    pub fn stationary_distribution(&self, theta: &ParamPoint) -> Result<DVector<f64>, ModelError> {
        let diag = self.validate(theta);
        if !diag.is_valid() {
            return Err(ModelError::Invalid(diag.problems.join("; ")));
        }
        if diag.attractors() != 1 {
            return Err(ModelError::MultipleAttractors(diag.attractors()));
        }
        let net: DMatrix<f64> = self.labeled_values(theta)?.iter().sum();
        let n = net.nrows();
        stationary_system(&net)
            .lu()
            .solve(&unit_last(n, 1.0))
            .ok_or(ModelError::SingularStationary)
    }

    /// `Pr(w) = mu T^(w) 1` for a word given as symbol labels.
    pub fn word_probability<S: AsRef<str>>(
        &self,
        theta: &ParamPoint,
        word: &[S],
    ) -> Result<f64, ModelError> {
        let ix = word
            .iter()
            .map(|s| self.symbol_index(s.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.instantiate(theta)?.word_probability(&ix))
    }

    /// Word probability over any [`Scalar`] type, with the stationary
    /// initial condition solved by Gaussian elimination in that type.
    pub fn word_probability_over<T: Scalar>(
        &self,
        lookup: &dyn Fn(&str) -> Option<T>,
        word: &[usize],
    ) -> Result<T, ModelError> {
        let n = self.states.len();
        let zero = || T::from_f64(0.0);
        let mut mats = vec![vec![vec![zero(); n]; n]; self.alphabet.len()];
        for t in &self.transitions {
            mats[t.symbol][t.from][t.to] = t.prob.eval_with(lookup)?;
        }
        let mut row: Vec<T> = match &self.initial {
            Initial::Explicit(v) => v
                .iter()
                .map(|e| e.eval_with(lookup))
                .collect::<Result<_, _>>()?,
            Initial::Stationary => {
                // A[i][j] = (I - T)[j][i], last equation replaced by sum = 1.
                let mut a = vec![vec![zero(); n]; n];
                for (i, row) in a.iter_mut().enumerate() {
                    for (j, cell) in row.iter_mut().enumerate() {
                        let mut t = zero();
                        for m in &mats {
                            t = t + m[j][i].clone();
                        }
                        let id = if i == j { 1.0 } else { 0.0 };
                        *cell = T::from_f64(id) - t;
                    }
                }
                for cell in a[n - 1].iter_mut() {
                    *cell = T::from_f64(1.0);
                }
                let mut b = vec![zero(); n];
                b[n - 1] = T::from_f64(1.0);
                gauss_solve(a, b).ok_or(ModelError::SingularStationary)?
            }
        };
        for &x in word {
            let m = mats.get(x).ok_or_else(|| ModelError::UnknownSymbol(x.to_string()))?;
            row = (0..n)
                .map(|j| {
                    let mut acc = zero();
                    for i in 0..n {
                        acc = acc + row[i].clone() * m[i][j].clone();
                    }
                    acc
                })
                .collect();
        }
        Ok(row.into_iter().fold(zero(), |a, b| a + b))
    }
}

fn gauss_solve<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .real()
                .abs()
                .total_cmp(&a[j][col].real().abs())
        })?;
        if a[pivot][col].real().abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col].clone();
        for r in col + 1..n {
            let factor = a[r][col].clone() / pivot_row[col].clone();
            for (cell, p) in a[r].iter_mut().zip(&pivot_row).skip(col) {
                *cell = cell.clone() - factor.clone() * p.clone();
            }
            let v = b[r].clone() - factor * b[col].clone();
            b[r] = v;
        }
    }
    let mut x = vec![T::from_f64(0.0); n];
    for r in (0..n).rev() {
        let mut acc = b[r].clone();
        for c in r + 1..n {
            acc = acc - a[r][c].clone() * x[c].clone();
        }
        x[r] = acc / a[r][r].clone();
    }
    Some(x)
}

/// Transposed stationary equations `(I - T)^T` with the last row replaced by
/// the normalization constraint. Nonsingular iff `T` has one closed class.
fn stationary_system(net: &DMatrix<f64>) -> DMatrix<f64> {
    let n = net.nrows();
    let mut a = (DMatrix::identity(n, n) - net).transpose();
    a.row_mut(n - 1).fill(1.0);
    a
}

fn unit_last(n: usize, v: f64) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[n - 1] = v;
    e
}

pub(crate) fn support_edges(m: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] > 0.0 {
                edges.push((i, j));
            }
        }
    }
    edges
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryIssue {
    pub symbol: String,
    pub from: String,
    pub to: String,
    pub value: f64,
}

/// Result of [`ParamHmm::validate`].
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    /// `sum_j T_ij - 1` per state.
    pub row_residuals: Vec<f64>,
    pub out_of_range: Vec<EntryIssue>,
    pub initial_residual: Option<f64>,
    /// Strongly connected components of the support graph of `T`.
    pub components: Vec<Vec<usize>>,
    pub closed_classes: Vec<Vec<usize>>,
    pub problems: Vec<String>,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn attractors(&self) -> usize {
        self.closed_classes.len()
    }

    pub fn is_irreducible(&self) -> bool {
        self.components.len() == 1
    }
}

/// A model evaluated at one parameter point.
#[derive(Debug, Clone)]
pub struct NumericHmm {
    /// `T^(x)` per symbol.
    pub labeled: Vec<DMatrix<f64>>,
    /// `d_labeled[m][x]` = derivative of `T^(x)` wrt parameter `m`.
    pub d_labeled: Vec<Vec<DMatrix<f64>>>,
    /// Initial distribution `mu` (stationary or declared).
    pub initial: DVector<f64>,
    /// `d_initial[m]` = derivative of `mu` wrt parameter `m`.
    pub d_initial: Vec<DVector<f64>>,
}

impl NumericHmm {
    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_params(&self) -> usize {
        self.d_labeled.len()
    }

    pub fn net(&self) -> DMatrix<f64> {
        self.labeled.iter().sum()
    }

    /// `mu T^(w) 1` for a word of symbol indices.
    pub fn word_probability(&self, word: &[usize]) -> f64 {
        let mut row = self.initial.transpose();
        for &x in word {
            row *= &self.labeled[x];
        }
        row.sum()
    }
}

//! Mixed-state presentation: the unifilar dynamic over observer beliefs.
//!
//! Starting from the initial distribution, every positive-probability symbol
//! maps a belief `eta` to `eta T^(x) / (eta T^(x) 1)`. States are discovered
//! breadth first and identified when both the belief and its parameter
//! tangent agree within `dedup_tol`. Tangents are carried exactly through the
//! quotient rule, so emission gradients need no finite differencing.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector, RowDVector};
use serde_json::json;
use thiserror::Error;

use crate::graph;
use crate::model::NumericHmm;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MspError {
    #[error("symbol {symbol} has probability {prob:e} from this belief")]
    ZeroProbabilitySymbol { symbol: usize, prob: f64 },
    #[error("mixed-state presentation is truncated at depth {0}")]
    TruncatedMsp(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MspOptions {
    /// Max-norm tolerance for identifying `(belief, tangent)` pairs.
    pub dedup_tol: f64,
    pub max_states: usize,
    pub max_depth: usize,
    /// Symbols below this probability are not expanded.
    pub emission_floor: f64,
}

impl Default for MspOptions {
    fn default() -> Self {
        Self {
            dedup_tol: 1e-9,
            max_states: 10_000,
            max_depth: 64,
            emission_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MixedState {
    pub belief: RowDVector<f64>,
    /// One row per parameter: derivative of the belief.
    pub tangent: DMatrix<f64>,
    /// Shortest word (symbol indices) reaching this state.
    pub witness: Vec<usize>,
    pub depth: usize,
    /// False for truncated frontier states whose successors were not built.
    pub expanded: bool,
}

/// Probability of a symbol from a state and its gradient over parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub prob: f64,
    pub grad: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    Closed,
    /// Some states were left unexpanded; the value is the exact horizon,
    /// the depth of the shallowest unexpanded state.
    Truncated(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkovOrder {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkovStructure {
    pub markov_order: MarkovOrder,
    /// Longest path through transient states (equal to the order when finite).
    pub transient_depth: Option<usize>,
}

/// One unifilar step with exact tangent propagation. Returns the successor
/// belief, its tangent and the symbol probability.
pub fn mixed_state_step(
    hmm: &NumericHmm,
    belief: &RowDVector<f64>,
    tangent: &DMatrix<f64>,
    symbol: usize,
    floor: f64,
) -> Result<(RowDVector<f64>, DMatrix<f64>, f64), MspError> {
    let t = &hmm.labeled[symbol];
    let u = belief * t;
    let prob = u.sum();
    if prob <= floor {
        return Err(MspError::ZeroProbabilitySymbol { symbol, prob });
    }
    let next = &u / prob;
    let mut d_next = DMatrix::zeros(tangent.nrows(), tangent.ncols());
    for m in 0..tangent.nrows() {
        let du = tangent.row(m) * t + belief * &hmm.d_labeled[m][symbol];
        let dp = du.sum();
        d_next.set_row(m, &((du - &next * dp) / prob));
    }
    Ok((next, d_next, prob))
}

fn emission(hmm: &NumericHmm, belief: &RowDVector<f64>, tangent: &DMatrix<f64>, symbol: usize) -> Emission {
    let t = &hmm.labeled[symbol];
    let prob = (belief * t).sum();
    let grad = DVector::from_iterator(
        tangent.nrows(),
        (0..tangent.nrows()).map(|m| (tangent.row(m) * t).sum() + (belief * &hmm.d_labeled[m][symbol]).sum()),
    );
    Emission { prob, grad }
}

/// The mixed-state presentation at one parameter point.
#[derive(Debug, Clone)]
pub struct Msp {
    n_params: usize,
    states: Vec<MixedState>,
    /// `emissions[s][x]`, available for every state including the frontier.
    emissions: Vec<Vec<Emission>>,
    /// `next[s][x]`: successor under symbol `x`, if expanded and allowed.
    next: Vec<Vec<Option<usize>>>,
    recurrent: Vec<bool>,
    classes: Vec<Vec<usize>>,
    closure: Closure,
    warnings: Vec<String>,
}

/// Buckets beliefs by a fixed linear projection so candidate duplicates are
/// found without scanning every state.
struct DedupIndex {
    weights: Vec<f64>,
    width: f64,
    buckets: BTreeMap<i64, Vec<usize>>,
}

impl DedupIndex {
    fn new(n: usize, tol: f64) -> Self {
        let weights: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_75).fract()).collect();
        let spread: f64 = weights.iter().sum();
        Self {
            weights,
            width: (4.0 * tol * spread).max(1e-15),
            buckets: BTreeMap::new(),
        }
    }

    fn key(&self, belief: &RowDVector<f64>) -> i64 {
        let h: f64 = belief.iter().zip(&self.weights).map(|(b, w)| b * w).sum();
        (h / self.width).floor() as i64
    }

    fn candidates(&self, belief: &RowDVector<f64>) -> impl Iterator<Item = usize> + '_ {
        let k = self.key(belief);
        (k - 1..=k + 1).flat_map(move |b| self.buckets.get(&b).into_iter().flatten().copied())
    }

    fn insert(&mut self, belief: &RowDVector<f64>, idx: usize) {
        let k = self.key(belief);
        self.buckets.entry(k).or_default().push(idx);
    }
}

fn max_abs_diff<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

impl Msp {
    /// Breadth-first closure from the model's initial distribution.
    pub fn build(hmm: &NumericHmm, opts: &MspOptions) -> Self {
        let n_params = hmm.n_params();
        let n_sym = hmm.n_symbols();
        let init_belief = hmm.initial.transpose();
        let mut init_tangent = DMatrix::zeros(n_params, hmm.n_states());
        for (m, d) in hmm.d_initial.iter().enumerate() {
            init_tangent.set_row(m, &d.transpose());
        }

        let mut msp = Msp {
            n_params,
            states: Vec::new(),
            emissions: Vec::new(),
            next: Vec::new(),
            recurrent: Vec::new(),
            classes: Vec::new(),
            closure: Closure::Closed,
            warnings: Vec::new(),
        };
        let mut index = DedupIndex::new(hmm.n_states(), opts.dedup_tol);
        msp.push_state(hmm, init_belief, init_tangent, Vec::new(), 0, &mut index);

        let mut queue = VecDeque::from([0usize]);
        let mut capped = false;
        while let Some(s) = queue.pop_front() {
            if msp.states[s].depth >= opts.max_depth || capped {
                continue;
            }
            if msp.states.len() + n_sym > opts.max_states {
                capped = true;
                continue;
            }
            msp.states[s].expanded = true;
            for x in 0..n_sym {
                let (belief, tangent) = (&msp.states[s].belief, &msp.states[s].tangent);
                let Ok((nb, nt, _)) = mixed_state_step(hmm, belief, tangent, x, opts.emission_floor) else {
                    continue;
                };
                let found = msp.find(&nb, &nt, &index, opts.dedup_tol);
                let target = match found {
                    Some(t) => t,
                    None => {
                        let mut witness = msp.states[s].witness.clone();
                        witness.push(x);
                        let depth = msp.states[s].depth + 1;
                        let t = msp.push_state(hmm, nb, nt, witness, depth, &mut index);
                        queue.push_back(t);
                        t
                    }
                };
                msp.next[s][x] = Some(target);
            }
        }

        let horizon = msp
            .states
            .iter()
            .filter(|st| !st.expanded)
            .map(|st| st.depth)
            .min();
        msp.closure = horizon.map_or(Closure::Closed, Closure::Truncated);
        msp.classify();
        msp
    }

    fn find(&mut self, belief: &RowDVector<f64>, tangent: &DMatrix<f64>, index: &DedupIndex, tol: f64) -> Option<usize> {
        let mut belief_only = None;
        for c in index.candidates(belief) {
            let st = &self.states[c];
            if max_abs_diff(st.belief.iter(), belief.iter()) <= tol {
                if max_abs_diff(st.tangent.iter(), tangent.iter()) <= tol {
                    return Some(c);
                }
                belief_only = Some(c);
            }
        }
        if let Some(c) = belief_only {
            if self.warnings.len() < 32 {
                self.warnings.push(format!(
                    "belief of a new state matches state {c} but its tangent differs; kept separate"
                ));
            }
        }
        None
    }

    fn push_state(
        &mut self,
        hmm: &NumericHmm,
        belief: RowDVector<f64>,
        tangent: DMatrix<f64>,
        witness: Vec<usize>,
        depth: usize,
        index: &mut DedupIndex,
    ) -> usize {
        let idx = self.states.len();
        index.insert(&belief, idx);
        let emissions = (0..hmm.n_symbols()).map(|x| emission(hmm, &belief, &tangent, x)).collect();
        self.states.push(MixedState {
            belief,
            tangent,
            witness,
            depth,
            expanded: false,
        });
        self.emissions.push(emissions);
        self.next.push(vec![None; hmm.n_symbols()]);
        idx
    }

    /// Support edges among expanded states (edges into the frontier dropped).
    fn internal_edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (s, row) in self.next.iter().enumerate() {
            for t in row.iter().flatten() {
                if self.states[*t].expanded {
                    edges.push((s, *t));
                }
            }
        }
        edges
    }

    fn classify(&mut self) {
        let n = self.states.len();
        let edges = self.internal_edges();
        let mut has_edge = vec![false; n];
        for &(a, _) in &edges {
            has_edge[a] = true;
        }
        self.classes = graph::closed_classes(n, &edges)
            .into_iter()
            .filter(|c| c.iter().all(|&s| self.states[s].expanded && has_edge[s]))
            .collect();
        self.recurrent = vec![false; n];
        for c in &self.classes {
            for &s in c {
                self.recurrent[s] = true;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_symbols(&self) -> usize {
        self.next.first().map_or(0, Vec::len)
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn states(&self) -> &[MixedState] {
        &self.states
    }

    pub fn closure(&self) -> Closure {
        self.closure
    }

    pub fn is_closed(&self) -> bool {
        self.closure == Closure::Closed
    }

    /// Exact horizon for myopic quantities: unbounded when closed.
    pub fn horizon(&self) -> Option<usize> {
        match self.closure {
            Closure::Closed => None,
            Closure::Truncated(d) => Some(d),
        }
    }

    pub fn recurrent_mask(&self) -> &[bool] {
        &self.recurrent
    }

    /// Closed communicating classes (provisional when truncated).
    pub fn recurrent_classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn emissions(&self, s: usize) -> &[Emission] {
        &self.emissions[s]
    }

    pub fn successor(&self, s: usize, symbol: usize) -> Option<usize> {
        self.next[s][symbol]
    }

    /// Outgoing edges of `s` as `(symbol, target, probability)`.
    pub fn edges(&self, s: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.next[s]
            .iter()
            .enumerate()
            .filter_map(move |(x, t)| t.map(|t| (x, t, self.emissions[s][x].prob)))
    }

    /// Number of states discovered at each BFS depth.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let max = self.states.iter().map(|s| s.depth).max().unwrap_or(0);
        let mut out = vec![0; max + 1];
        for s in &self.states {
            out[s.depth] += 1;
        }
        out
    }

    /// Dense `W^(x)`.
    pub fn labeled_matrix(&self, symbol: usize) -> DMatrix<f64> {
        let n = self.len();
        let mut w = DMatrix::zeros(n, n);
        for s in 0..n {
            if let Some(t) = self.next[s][symbol] {
                w[(s, t)] += self.emissions[s][symbol].prob;
            }
        }
        w
    }

    /// Dense net matrix `W = sum_x W^(x)`.
    pub fn net_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut w = DMatrix::zeros(n, n);
        for s in 0..n {
            for (_, t, p) in self.edges(s) {
                w[(s, t)] += p;
            }
        }
        w
    }

    /// Sparse row-vector product `v W`.
    pub fn apply_row(&self, v: &RowDVector<f64>) -> RowDVector<f64> {
        let mut out = RowDVector::zeros(self.len());
        for (s, &vs) in v.iter().enumerate() {
            if vs != 0.0 {
                for (_, t, p) in self.edges(s) {
                    out[t] += vs * p;
                }
            }
        }
        out
    }

    /// State reached from the start by following `word`, if every step exists.
    pub fn state_after(&self, word: &[usize]) -> Option<usize> {
        word.iter().try_fold(self.start(), |s, &x| self.next[s][x])
    }

    /// Probability of a word along the unifilar path from the start state.
    pub fn word_probability(&self, word: &[usize]) -> f64 {
        let mut s = self.start();
        let mut prob = 1.0;
        for &x in word {
            match self.next[s][x] {
                Some(t) => {
                    prob *= self.emissions[s][x].prob;
                    s = t;
                }
                None => return if self.states[s].expanded { 0.0 } else { f64::NAN },
            }
        }
        prob
    }

    /// Markov order from the transient structure: finite iff the transient
    /// states form an acyclic graph, in which case the order is the length of
    /// the longest transient path.
    pub fn markov_structure(&self) -> Result<MarkovStructure, MspError> {
        if let Closure::Truncated(d) = self.closure {
            return Err(MspError::TruncatedMsp(d));
        }
        let n = self.len();
        let transient: Vec<bool> = self.recurrent.iter().map(|r| !r).collect();
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|s| self.edges(s).map(move |(_, t, _)| (s, t)))
            .filter(|&(a, b)| transient[a] && transient[b])
            .collect();
        let cyclic = edges.iter().any(|&(a, b)| a == b)
            || graph::strongly_connected(n, &edges).iter().any(|c| c.len() > 1);
        if cyclic {
            return Ok(MarkovStructure {
                markov_order: MarkovOrder::Infinite,
                transient_depth: None,
            });
        }
        // Longest path counted in transient states visited, by memoized DFS
        // over the acyclic transient graph.
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a].push(b);
        }
        let mut memo = vec![None; n];
        fn longest(s: usize, adj: &[Vec<usize>], memo: &mut [Option<usize>]) -> usize {
            if let Some(v) = memo[s] {
                return v;
            }
            let v = 1 + adj[s].iter().map(|&t| longest(t, adj, memo)).max().unwrap_or(0);
            memo[s] = Some(v);
            v
        }
        let depth = (0..n)
            .filter(|&s| transient[s])
            .map(|s| longest(s, &adj, &mut memo))
            .max()
            .unwrap_or(0);
        Ok(MarkovStructure {
            markov_order: MarkovOrder::Finite(depth),
            transient_depth: Some(depth),
        })
    }

    /// Deterministic JSON graph: nodes in discovery order, edges by source
    /// then symbol.
    pub fn to_json(&self, alphabet: &[String], parameters: &[String]) -> serde_json::Value {
        let word = |w: &[usize]| w.iter().map(|&x| alphabet[x].as_str()).collect::<Vec<_>>().join("");
        let nodes: Vec<_> = self
            .states
            .iter()
            .enumerate()
            .map(|(i, st)| {
                json!({
                    "index": i,
                    "witness": word(&st.witness),
                    "depth": st.depth,
                    "belief": st.belief.iter().collect::<Vec<_>>(),
                    "recurrent": self.recurrent[i],
                    "expanded": st.expanded,
                })
            })
            .collect();
        let edges: Vec<_> = (0..self.len())
            .flat_map(|s| {
                self.edges(s).map(move |(x, t, p)| {
                    json!({"from": s, "to": t, "symbol": alphabet[x], "prob": p})
                })
            })
            .collect();
        let closure = match self.closure {
            Closure::Closed => json!({"status": "closed"}),
            Closure::Truncated(d) => json!({"status": "truncated", "horizon": d}),
        };
        json!({
            "alphabet": alphabet,
            "parameters": parameters,
            "closure": closure,
            "start": self.start(),
            "states": nodes,
            "edges": edges,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{get_model, ZooEntry, NAMES};

    fn build(name: &str, args: &[(&str, &str)], opts: &MspOptions) -> (ZooEntry, NumericHmm, Msp) {
        let e = get_model(name, args).unwrap();
        let num = e.hmm.instantiate(&e.canonical).unwrap();
        let msp = Msp::build(&num, opts);
        (e, num, msp)
    }

    fn word(s: &str) -> Vec<usize> {
        s.bytes().map(|b| (b - b'0') as usize).collect()
    }

    #[test]
    fn even_step_examples() {
        let (_, num, _) = build("even", &[], &MspOptions::default());
        let pi = num.initial.transpose();
        let tangent = DMatrix::zeros(1, 2);
        let (b0, _, p0) = mixed_state_step(&num, &pi, &tangent, 0, 1e-12).unwrap();
        assert!((p0 - 1.0 / 3.0).abs() < 1e-15);
        assert!((b0[0] - 1.0).abs() < 1e-15 && b0[1].abs() < 1e-15);
        let (b1, _, p1) = mixed_state_step(&num, &pi, &tangent, 1, 1e-12).unwrap();
        assert!((p1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((b1[0] - 0.5).abs() < 1e-15 && (b1[1] - 0.5).abs() < 1e-15);
        let b = RowDVector::from_row_slice(&[0.0, 1.0]);
        assert!(matches!(
            mixed_state_step(&num, &b, &tangent, 0, 1e-12),
            Err(MspError::ZeroProbabilitySymbol { symbol: 0, .. })
        ));
    }

    #[test]
    fn even_metadynamic_matches_closed_form() {
        let (_, _, msp) = build("even", &[], &MspOptions::default());
        assert_eq!(msp.len(), 4);
        assert!(msp.is_closed());
        let order: Vec<usize> = ["", "1", "0", "01"]
            .iter()
            .map(|w| msp.state_after(&word(w)).unwrap())
            .collect();
        let w = msp.net_matrix();
        let expected = [
            [0.0, 2.0 / 3.0, 1.0 / 3.0, 0.0],
            [0.75, 0.0, 0.25, 0.0],
            [0.0, 0.0, 0.5, 0.5],
            [0.0, 0.0, 1.0, 0.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((w[(order[i], order[j])] - expected[i][j]).abs() < 1e-14);
            }
        }
        let rec: Vec<bool> = order.iter().map(|&s| msp.recurrent_mask()[s]).collect();
        assert_eq!(rec, vec![false, false, true, true]);
    }

    #[test]
    fn biased_coin_has_one_state() {
        let (_, _, msp) = build("biased_coin", &[], &MspOptions::default());
        assert_eq!(msp.len(), 1);
        assert_eq!(msp.net_matrix(), DMatrix::from_element(1, 1, 1.0));
        assert_eq!(msp.markov_structure().unwrap().markov_order, MarkovOrder::Finite(0));
    }

    #[test]
    fn two_coins_pyramid() {
        let opts = MspOptions {
            max_depth: 6,
            ..MspOptions::default()
        };
        let (_, _, msp) = build("two_coins", &[], &opts);
        assert_eq!(msp.closure(), Closure::Truncated(6));
        assert_eq!(msp.layer_sizes(), (1..=7).collect::<Vec<_>>());
        assert!(msp.recurrent_classes().is_empty());
        assert_eq!(msp.markov_structure(), Err(MspError::TruncatedMsp(6)));
        let p1 = msp.emissions(msp.start())[1].prob;
        assert!((p1 - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn markov_orders() {
        let opts = MspOptions::default();
        let order = |name: &str| build(name, &[], &opts).2.markov_structure().unwrap().markov_order;
        assert_eq!(order("golden_mean"), MarkovOrder::Finite(1));
        assert_eq!(order("mk_golden_mean"), MarkovOrder::Finite(5));
        assert_eq!(order("even"), MarkovOrder::Infinite);
        assert_eq!(order("teddy_bear"), MarkovOrder::Infinite);
    }

    #[test]
    fn sns_emissions_and_reset() {
        let (_, _, msp) = build("sns", &[], &MspOptions::default());
        assert!(!msp.is_closed());
        let start = msp.emissions(msp.start());
        assert!((start[0].prob - 0.8).abs() < 1e-12);
        let s10 = msp.state_after(&word("10")).unwrap();
        assert!((msp.emissions(s10)[0].prob - 5.0 / 6.0).abs() < 1e-12);
        let reset = msp.state_after(&word("1")).unwrap();
        assert!((msp.states()[reset].belief[0] - 1.0).abs() < 1e-15);
        for w in ["001", "0101", "10001", "000001"] {
            assert_eq!(msp.state_after(&word(w)), Some(reset), "{w}");
        }
    }

    fn all_words(n_sym: usize, len: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|w| {
                    (0..n_sym).map(move |x| {
                        let mut v = w.clone();
                        v.push(x);
                        v
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn word_probabilities_match_hmm() {
        for name in NAMES {
            let (_, num, msp) = build(name, &[], &MspOptions::default());
            let max_len = if num.n_symbols() == 3 { 6 } else { 8 };
            for len in 0..=max_len {
                for w in all_words(num.n_symbols(), len) {
                    let a = msp.word_probability(&w);
                    let b = num.word_probability(&w);
                    assert!((a - b).abs() < 1e-10, "{name} {w:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn rows_stochastic_and_tangent_rows_sum_to_zero() {
        for name in NAMES {
            let (_, _, msp) = build(name, &[], &MspOptions::default());
            let w = msp.net_matrix();
            for (s, st) in msp.states().iter().enumerate() {
                assert!((st.belief.sum() - 1.0).abs() < 1e-12);
                for m in 0..st.tangent.nrows() {
                    assert!(st.tangent.row(m).sum().abs() < 1e-10, "{name} state {s}");
                }
                if st.expanded {
                    assert!((w.row(s).sum() - 1.0).abs() < 1e-12, "{name} state {s}");
                }
            }
        }
    }

    #[test]
    fn tangents_match_finite_differences() {
        let h = 1e-6;
        for name in NAMES {
            let e = get_model(name, &[]).unwrap();
            let num = e.hmm.instantiate(&e.canonical).unwrap();
            let msp = Msp::build(&num, &MspOptions { max_depth: 10, ..MspOptions::default() });
            for (m, pname) in e.hmm.parameters().iter().enumerate() {
                let x = e.canonical.get(pname).unwrap();
                let plus = e.hmm.instantiate(&e.canonical.with(pname, x + h)).unwrap();
                let minus = e.hmm.instantiate(&e.canonical.with(pname, x - h)).unwrap();
                let belief_after = |hmm: &NumericHmm, w: &[usize]| {
                    let mut b = hmm.initial.transpose();
                    for &x in w {
                        b = &b * &hmm.labeled[x];
                        b /= b.sum();
                    }
                    b
                };
                for st in msp.states() {
                    let fd = (belief_after(&plus, &st.witness) - belief_after(&minus, &st.witness)) / (2.0 * h);
                    let err = (st.tangent.row(m) - fd).amax();
                    assert!(err < 1e-5, "{name} {pname} {:?}: {err}", st.witness);
                }
            }
        }
    }

    #[test]
    fn json_export_is_deterministic() {
        let e = get_model("even", &[]).unwrap();
        let num = e.hmm.instantiate(&e.canonical).unwrap();
        let a = Msp::build(&num, &MspOptions::default()).to_json(e.hmm.alphabet(), e.hmm.parameters());
        let b = Msp::build(&num, &MspOptions::default()).to_json(e.hmm.alphabet(), e.hmm.parameters());
        assert_eq!(a.to_string(), b.to_string());
        assert_eq!(a["states"].as_array().unwrap().len(), 4);
        assert_eq!(a["edges"].as_array().unwrap().len(), 7);
    }
}

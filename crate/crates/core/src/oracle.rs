//! Brute-force validators that work from word probabilities alone.
//!
//! Nothing here touches the mixed-state presentation or exact derivatives:
//! every length-L word is enumerated, parameter derivatives come from
//! central finite differences, and the MLE is found by direct search.

use nalgebra::{DMatrix, DVector, RowDVector};
use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::expr::ParamPoint;
use crate::inforate::{cramer_rao, BoundMode};
use crate::model::{ModelError, NumericHmm, ParamHmm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("enumeration needs {required} outcomes, above the cap of {cap}")]
    EnumerationCap { required: f64, cap: u64 },
    #[error("finite-difference point {point} is not admissible: {source}")]
    Perturbation { point: String, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model has no parameters")]
    NoParameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub fd_step: f64,
    /// Maximum number of enumerated outcomes, `|X|^L` (or `|X|^(LN)`).
    pub cap: u64,
    /// Words below this probability are skipped with their extensions.
    pub prune: f64,
    pub log_base: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            fd_step: 1e-5,
            cap: 1 << 24,
            prune: 1e-14,
            log_base: 2.0,
        }
    }
}

fn check_cap(symbols: usize, length: usize, cap: u64) -> Result<(), OracleError> {
    let required = (symbols as f64).powi(length as i32);
    if required > cap as f64 {
        return Err(OracleError::EnumerationCap { required, cap });
    }
    Ok(())
}

/// Depth-first enumeration of all words up to length `l`, carrying forward
/// vectors for several models at once. `models[0]` drives pruning. `visit`
/// sees every kept word with its probabilities under each model.
fn enumerate<A, I, V, M>(models: &[NumericHmm], l: usize, prune: f64, init: I, visit: V, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    V: Fn(&mut A, usize, &[f64]) + Sync,
    M: Fn(&mut A, A),
{
    let n_sym = models[0].n_symbols();
    let roots: Vec<RowDVector<f64>> = models.iter().map(|m| m.initial.transpose()).collect();

    fn step(models: &[NumericHmm], rows: &[RowDVector<f64>], x: usize) -> (Vec<RowDVector<f64>>, Vec<f64>) {
        let next: Vec<RowDVector<f64>> = rows.iter().zip(models).map(|(r, m)| r * &m.labeled[x]).collect();
        let probs = next.iter().map(|r| r.sum()).collect();
        (next, probs)
    }

    fn dfs<A, V: Fn(&mut A, usize, &[f64])>(
        models: &[NumericHmm],
        rows: &[RowDVector<f64>],
        depth: usize,
        l: usize,
        prune: f64,
        acc: &mut A,
        visit: &V,
    ) {
        for x in 0..models[0].n_symbols() {
            let (next, probs) = step(models, rows, x);
            if probs[0] < prune {
                continue;
            }
            visit(acc, depth + 1, &probs);
            if depth + 1 < l {
                dfs(models, &next, depth + 1, l, prune, acc, visit);
            }
        }
    }

    // Split at the shallowest depth with enough prefixes to keep threads busy.
    let mut split = 1;
    while split < l && n_sym.pow(split as u32) < 64 {
        split += 1;
    }
    let split = split.min(l);

    // Words shorter than the split, plus the frontier of prefixes.
    let mut acc = init();
    let mut frontier = vec![roots];
    for depth in 1..=split {
        let mut next_frontier = Vec::new();
        for rows in &frontier {
            for x in 0..n_sym {
                let (next, probs) = step(models, rows, x);
                if probs[0] < prune {
                    continue;
                }
                visit(&mut acc, depth, &probs);
                next_frontier.push(next);
            }
        }
        frontier = next_frontier;
    }
    if split < l {
        let parts: Vec<A> = frontier
            .par_iter()
            .map(|rows| {
                let mut a = init();
                dfs(models, rows, split, l, prune, &mut a, &visit);
                a
            })
            .collect();
        for part in parts {
            merge(&mut acc, part);
        }
    }
    acc
}

fn perturbed(hmm: &ParamHmm, theta: &ParamPoint, shifts: &[(usize, f64)]) -> Result<NumericHmm, OracleError> {
    let mut point = theta.clone();
    for &(m, h) in shifts {
        let name = &hmm.parameters()[m];
        let v = point.get(name).ok_or_else(|| ModelError::UndeclaredParameter(name.clone()))?;
        point = point.with(name, v + h);
    }
    hmm.instantiate(&point).map_err(|source| OracleError::Perturbation {
        point: point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(","),
        source,
    })
}

/// Brute-force Fisher information and block entropies for lengths `1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub l: usize,
    pub fd_step: f64,
    /// `F(l)` for `l = 1..=L`.
    pub fisher: Vec<DMatrix<f64>>,
    /// `f_l = F(l) - F(l-1)`.
    pub myopic: Vec<DMatrix<f64>>,
    /// Block entropy `H(l)`.
    pub block_entropy: Vec<f64>,
    /// `h_l = H(l) - H(l-1)`.
    pub entropy_rate: Vec<f64>,
    /// Kept words of length exactly `L` and their total probability.
    pub words: usize,
    pub total_probability: f64,
}

impl OracleReport {
    pub fn to_json(&self, parameters: &[String]) -> serde_json::Value {
        let mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
        json!({
            "L": self.l,
            "parameters": parameters,
            "fd_step": self.fd_step,
            "F": mat(&self.fisher[self.l - 1]),
            "f_L": mat(&self.myopic[self.l - 1]),
            "F_by_length": self.fisher.iter().map(mat).collect::<Vec<_>>(),
            "H": self.block_entropy[self.l - 1],
            "H_by_length": self.block_entropy,
            "h": self.entropy_rate,
            "words": self.words,
            "total_probability": self.total_probability,
        })
    }
}

struct Acc {
    fisher: Vec<DMatrix<f64>>,
    entropy: Vec<f64>,
    words: usize,
    mass: f64,
}

/// Score-outer-product Fisher information `sum_w Pr(w) (d ln Pr)(d ln Pr)^T`
/// with central differences, plus block entropies, for every length up to `l`.
pub fn brute_fisher(hmm: &ParamHmm, theta: &ParamPoint, l: usize, opts: &OracleOptions) -> Result<OracleReport, OracleError> {
    check_cap(hmm.alphabet().len(), l, opts.cap)?;
    let k = hmm.parameters().len();
    let h = opts.fd_step;
    let mut models = vec![hmm.instantiate(theta)?];
    for m in 0..k {
        models.push(perturbed(hmm, theta, &[(m, h)])?);
        models.push(perturbed(hmm, theta, &[(m, -h)])?);
    }
    let ln_base = opts.log_base.ln();
    let init = || Acc {
        fisher: vec![DMatrix::zeros(k, k); l],
        entropy: vec![0.0; l],
        words: 0,
        mass: 0.0,
    };
    let visit = |a: &mut Acc, depth: usize, probs: &[f64]| {
        let p = probs[0];
        // d ln P = dP / P with dP by central difference.
        let score = DVector::from_iterator(k, (0..k).map(|m| (probs[1 + 2 * m] - probs[2 + 2 * m]) / (2.0 * h * p)));
        a.fisher[depth - 1] += &score * score.transpose() * p;
        a.entropy[depth - 1] -= p * p.ln() / ln_base;
        if depth == l {
            a.words += 1;
            a.mass += p;
        }
    };
    let merge = |a: &mut Acc, b: Acc| {
        for (x, y) in a.fisher.iter_mut().zip(b.fisher) {
            *x += y;
        }
        for (x, y) in a.entropy.iter_mut().zip(b.entropy) {
            *x += y;
        }
        a.words += b.words;
        a.mass += b.mass;
    };
    let acc = enumerate(&models, l, opts.prune, init, visit, merge);
    let mut myopic = Vec::with_capacity(l);
    let mut entropy_rate = Vec::with_capacity(l);
    for i in 0..l {
        let (fp, hp) = if i == 0 {
            (DMatrix::zeros(k, k), 0.0)
        } else {
            (acc.fisher[i - 1].clone(), acc.entropy[i - 1])
        };
        myopic.push(&acc.fisher[i] - fp);
        entropy_rate.push(acc.entropy[i] - hp);
    }
    Ok(OracleReport {
        l,
        fd_step: h,
        fisher: acc.fisher,
        myopic,
        block_entropy: acc.entropy,
        entropy_rate,
        words: acc.words,
        total_probability: acc.mass,
    })
}

/// Negative-Hessian form `-sum_w Pr(w) d_m d_n ln Pr(w)` at length `l`, with
/// second differences of `ln Pr`.
pub fn brute_fisher_hessian(hmm: &ParamHmm, theta: &ParamPoint, l: usize, opts: &OracleOptions) -> Result<DMatrix<f64>, OracleError> {
    check_cap(hmm.alphabet().len(), l, opts.cap)?;
    let k = hmm.parameters().len();
    let h = opts.fd_step;
    // Stencil: center, then for each m: +m, -m; for each m < n: ++, +-, -+, --.
    let mut models = vec![hmm.instantiate(theta)?];
    for m in 0..k {
        models.push(perturbed(hmm, theta, &[(m, h)])?);
        models.push(perturbed(hmm, theta, &[(m, -h)])?);
    }
    let mut pair_index = DMatrix::<usize>::zeros(k, k);
    for m in 0..k {
        for n in m + 1..k {
            pair_index[(m, n)] = models.len();
            for (a, b) in [(h, h), (h, -h), (-h, h), (-h, -h)] {
                models.push(perturbed(hmm, theta, &[(m, a), (n, b)])?);
            }
        }
    }
    let visit = |f: &mut DMatrix<f64>, depth: usize, probs: &[f64]| {
        if depth != l {
            return;
        }
        let p = probs[0];
        let ln = |i: usize| probs[i].max(f64::MIN_POSITIVE).ln();
        for m in 0..k {
            let d2 = (ln(1 + 2 * m) - 2.0 * p.ln() + ln(2 + 2 * m)) / (h * h);
            f[(m, m)] -= p * d2;
            for n in m + 1..k {
                let i = pair_index[(m, n)];
                let d2 = (ln(i) - ln(i + 1) - ln(i + 2) + ln(i + 3)) / (4.0 * h * h);
                f[(m, n)] -= p * d2;
                f[(n, m)] -= p * d2;
            }
        }
    };
    Ok(enumerate(&models, l, opts.prune, || DMatrix::zeros(k, k), visit, |a, b| *a += b))
}

/// Exact block entropies `H(l)` and `h_l` for `l = 1..=L`.
pub fn brute_block_entropy(hmm: &ParamHmm, theta: &ParamPoint, l: usize, opts: &OracleOptions) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    check_cap(hmm.alphabet().len(), l, opts.cap)?;
    let models = [hmm.instantiate(theta)?];
    let ln_base = opts.log_base.ln();
    let visit = |e: &mut Vec<f64>, depth: usize, probs: &[f64]| {
        e[depth - 1] -= probs[0] * probs[0].ln() / ln_base;
    };
    let merge = |a: &mut Vec<f64>, b: Vec<f64>| {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    };
    let big_h = enumerate(&models, l, opts.prune, || vec![0.0; l], visit, merge);
    let h = (0..l)
        .map(|i| big_h[i] - if i == 0 { 0.0 } else { big_h[i - 1] })
        .collect();
    Ok((big_h, h))
}

/// All kept words of length `l` with their probabilities, in lexicographic order.
pub fn enumerate_words(hmm: &ParamHmm, theta: &ParamPoint, l: usize, opts: &OracleOptions) -> Result<Vec<(Vec<usize>, f64)>, OracleError> {
    check_cap(hmm.alphabet().len(), l, opts.cap)?;
    let model = hmm.instantiate(theta)?;
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), model.initial.transpose())];
    while let Some((word, row)) = stack.pop() {
        if word.len() == l {
            out.push((word, row.sum()));
            continue;
        }
        for x in (0..model.n_symbols()).rev() {
            let next = &row * &model.labeled[x];
            if next.sum() < opts.prune {
                continue;
            }
            let mut w = word.clone();
            w.push(x);
            stack.push((w, next));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOptions {
    /// Search box per parameter.
    pub lower: f64,
    pub upper: f64,
    pub grid_points: usize,
    pub rounds: usize,
    /// Final bracket width of the golden-section polish.
    pub tol: f64,
    /// Coordinate sweeps for multi-parameter models.
    pub max_sweeps: usize,
    pub oracle: OracleOptions,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            lower: 1e-6,
            upper: 1.0 - 1e-6,
            grid_points: 100,
            rounds: 3,
            tol: 1e-8,
            max_sweeps: 50,
            oracle: OracleOptions::default(),
        }
    }
}

/// One observed N-tuple (as a multiset of word indices) and its estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct MleOutcome {
    /// `(word index, count)` pairs.
    pub counts: Vec<(usize, usize)>,
    pub probability: f64,
    pub estimate: Vec<f64>,
    /// Estimate lies on the search box boundary.
    pub boundary: bool,
    /// Likelihood did not vary over the first search grid.
    pub flat: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleReport {
    pub l: usize,
    pub n: usize,
    pub parameters: Vec<String>,
    pub theta_true: Vec<f64>,
    pub words: Vec<Vec<usize>>,
    pub outcomes: Vec<MleOutcome>,
    pub total_probability: f64,
    pub mean: DVector<f64>,
    pub bias: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// `N cov`, comparable to `F(L)^-1`.
    pub scaled_covariance: DMatrix<f64>,
    /// Brute-force `F(L)`.
    pub fisher: DMatrix<f64>,
    /// `F(L)^-1 / N` (pseudo-inverse when singular).
    pub cr_bound: DMatrix<f64>,
    pub cr_pseudo: bool,
    pub boundary_probability: f64,
    pub flat_probability: f64,
}

impl MleReport {
    pub fn to_json(&self) -> serde_json::Value {
        let mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { m.row_iter().map(|r| r.iter().copied().collect()).collect() };
        json!({
            "L": self.l,
            "N": self.n,
            "parameters": self.parameters,
            "theta_true": self.theta_true,
            "outcomes": self.outcomes.len(),
            "total_probability": self.total_probability,
            "mean": self.mean.as_slice(),
            "bias": self.bias.as_slice(),
            "covariance": mat(&self.covariance),
            "var": self.covariance.diagonal().as_slice(),
            "n_covariance": mat(&self.scaled_covariance),
            "F": mat(&self.fisher),
            "cr_bound": mat(&self.cr_bound),
            "cr_pseudo_inverse": self.cr_pseudo,
            "boundary_probability": self.boundary_probability,
            "flat_probability": self.flat_probability,
        })
    }

    /// Per-outcome detail as CSV: `probability,estimate...,boundary,flat,words`.
    pub fn outcomes_csv(&self, alphabet: &[String]) -> String {
        let mut out = String::from("probability");
        for p in &self.parameters {
            out.push_str(&format!(",{p}_hat"));
        }
        out.push_str(",boundary,flat,words\n");
        for o in &self.outcomes {
            out.push_str(&format!("{:.16e}", o.probability));
            for v in &o.estimate {
                out.push_str(&format!(",{v:.16e}"));
            }
            let words: Vec<String> = o
                .counts
                .iter()
                .flat_map(|&(w, c)| {
                    let text: String = self.words[w].iter().map(|&x| alphabet[x].as_str()).collect();
                    std::iter::repeat_n(text, c)
                })
                .collect();
            out.push_str(&format!(",{},{},{}\n", o.boundary, o.flat, words.join(" ")));
        }
        out
    }
}

/// Multisets of size `n` over `k` items as sorted count vectors.
fn multisets(k: usize, n: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(start: usize, k: usize, left: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..k {
            for c in (1..=left).rev() {
                cur.push((i, c));
                rec(i + 1, k, left - c, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(0, k, n, &mut Vec::new(), &mut out);
    out
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|i| (i as f64).ln()).sum()
}

struct Search<'a> {
    hmm: &'a ParamHmm,
    words: &'a [Vec<usize>],
    opts: &'a MleOptions,
}

impl Search<'_> {
    fn loglik(&self, theta: &[f64], counts: &[(usize, usize)]) -> f64 {
        let point = ParamPoint::from_pairs(self.hmm.parameters().iter().map(String::as_str).zip(theta.iter().copied()));
        let Ok(point) = point else { return f64::NEG_INFINITY };
        let Ok((labeled, initial)) = self.hmm.evaluate(&point) else {
            return f64::NEG_INFINITY;
        };
        let mut ll = 0.0;
        for &(w, c) in counts {
            let mut row = initial.transpose();
            for &x in &self.words[w] {
                row *= &labeled[x];
            }
            let p = row.sum();
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ll += c as f64 * p.ln();
        }
        ll
    }

    /// Grid refinement then golden-section polish along coordinate `m`.
    /// Returns the best value and whether the first grid was flat.
    fn line(&self, theta: &mut [f64], m: usize, counts: &[(usize, usize)]) -> bool {
        let eval = |x: f64, theta: &mut [f64]| {
            theta[m] = x;
            self.loglik(theta, counts)
        };
        let (mut lo, mut hi) = (self.opts.lower, self.opts.upper);
        let g = self.opts.grid_points.max(3);
        let mut flat = false;
        let mut best = (theta[m], f64::NEG_INFINITY);
        for round in 0..self.opts.rounds {
            let xs: Vec<f64> = (0..g).map(|i| lo + (hi - lo) * i as f64 / (g - 1) as f64).collect();
            let vals: Vec<f64> = xs.iter().map(|&x| eval(x, theta)).collect();
            let mut b = 0;
            for i in 1..g {
                if vals[i] > vals[b] {
                    b = i;
                }
            }
            if round == 0 {
                let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
                let spread = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    - finite.iter().copied().fold(f64::INFINITY, f64::min);
                flat = finite.is_empty() || spread < 1e-12;
            }
            if vals[b] > best.1 {
                best = (xs[b], vals[b]);
            }
            lo = xs[b.saturating_sub(1)];
            hi = xs[(b + 1).min(g - 1)];
        }
        // Golden-section polish inside the final bracket.
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let mut fc = eval(c, theta);
        let mut fd = eval(d, theta);
        while b - a > self.opts.tol {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = eval(c, theta);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = eval(d, theta);
            }
        }
        let x = 0.5 * (a + b);
        let fx = eval(x, theta);
        theta[m] = if fx >= best.1 { x } else { best.0 };
        flat
    }

    fn maximize(&self, start: &[f64], counts: &[(usize, usize)]) -> (Vec<f64>, bool) {
        let mut theta = start.to_vec();
        let mut flat = false;
        for sweep in 0..self.opts.max_sweeps {
            let before = theta.clone();
            for m in 0..theta.len() {
                let f = self.line(&mut theta, m, counts);
                if sweep == 0 {
                    flat |= f;
                }
            }
            let moved = before.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if theta.len() == 1 || moved < self.opts.tol {
                break;
            }
        }
        (theta, flat)
    }
}

/// Exact bias and covariance of the MLE from `N` independent length-`L`
/// sequences, by enumerating every outcome.
pub fn mle_exact(hmm: &ParamHmm, theta: &ParamPoint, l: usize, n: usize, opts: &MleOptions) -> Result<MleReport, OracleError> {
    let names = hmm.parameters().to_vec();
    let k = names.len();
    if k == 0 {
        return Err(OracleError::NoParameters);
    }
    check_cap(hmm.alphabet().len(), l * n, opts.oracle.cap)?;
    let theta_true: Vec<f64> = names
        .iter()
        .map(|p| theta.get(p).ok_or_else(|| ModelError::UndeclaredParameter(p.clone())))
        .collect::<Result<_, _>>()?;
    let listed = enumerate_words(hmm, theta, l, &opts.oracle)?;
    let (words, probs): (Vec<Vec<usize>>, Vec<f64>) = listed.into_iter().unzip();
    let tuples = multisets(words.len(), n);
    let search = Search {
        hmm,
        words: &words,
        opts,
    };
    let ln_n = ln_factorial(n);
    let outcomes: Vec<MleOutcome> = tuples
        .into_par_iter()
        .map(|counts| {
            let mut ln_w = ln_n;
            for &(w, c) in &counts {
                ln_w += c as f64 * probs[w].ln() - ln_factorial(c);
            }
            let (estimate, flat) = search.maximize(&theta_true, &counts);
            let edge = 10.0 * opts.tol;
            let boundary = estimate.iter().any(|&v| v - opts.lower < edge || opts.upper - v < edge);
            MleOutcome {
                counts,
                probability: ln_w.exp(),
                estimate,
                boundary,
                flat,
            }
        })
        .collect();
    let total: f64 = outcomes.iter().map(|o| o.probability).sum();
    let mut mean = DVector::zeros(k);
    for o in &outcomes {
        mean += DVector::from_column_slice(&o.estimate) * o.probability;
    }
    let mut covariance = DMatrix::zeros(k, k);
    for o in &outcomes {
        let d = DVector::from_column_slice(&o.estimate) - &mean;
        covariance += &d * d.transpose() * o.probability;
    }
    let bias = &mean - DVector::from_column_slice(&theta_true);
    let fisher = brute_fisher(hmm, theta, l, &opts.oracle)?.fisher.pop().unwrap_or_else(|| DMatrix::zeros(k, k));
    let (inv, cr_pseudo) = match cramer_rao(&fisher, BoundMode::Inverse) {
        Ok(inv) => (inv, false),
        Err(_) => (cramer_rao(&fisher, BoundMode::Pseudo).unwrap_or_else(|_| DMatrix::zeros(k, k)), true),
    };
    let boundary_probability = outcomes.iter().filter(|o| o.boundary).map(|o| o.probability).sum();
    let flat_probability = outcomes.iter().filter(|o| o.flat).map(|o| o.probability).sum();
    Ok(MleReport {
        l,
        n,
        parameters: names,
        theta_true,
        words,
        total_probability: total,
        scaled_covariance: &covariance * n as f64,
        mean,
        bias,
        covariance,
        fisher,
        cr_bound: inv / n as f64,
        cr_pseudo,
        boundary_probability,
        flat_probability,
        outcomes,
    })
}

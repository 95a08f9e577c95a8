//! Information vector, Fisher-information rates and the entropy analogues.
//!
//! Every quantity here is an overlap `<start| W^(L-1) |g>` or a stationary
//! average `<pi|g>` of some per-state observable `g`: the Fisher information
//! matrix of one symbol from that state, or its Shannon entropy. Curves are
//! built by repeated row-vector products, never by the spectral sum.

use nalgebra::{DMatrix, DVector, RowDVector, SymmetricEigen};
use thiserror::Error;

use crate::graph;
use crate::msp::Msp;
use crate::spectral::{power_apply, SpectralData};

/// Emissions below this probability are structural zeros.
pub const EMISSION_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InfoError {
    #[error("state {state} emits symbol {symbol} with probability {prob:e} but nonzero gradient; information diverges")]
    SingularEmission { state: usize, symbol: usize, prob: f64 },
    #[error("requested L = {requested} exceeds the exact horizon {horizon} of the truncated presentation")]
    HorizonExceeded { requested: usize, horizon: usize },
    #[error("process has {0} attractors")]
    MultipleAttractors(usize),
    #[error("no recurrent class was resolved")]
    NoRecurrentClass,
    #[error("recurrent class has period {0}; asymptotic limits oscillate")]
    Periodicity(usize),
    #[error("mixed-state presentation is truncated at depth {0}")]
    Truncated(usize),
    #[error("excess diverges or is undefined: {0}")]
    DivergentOrUndefined(String),
    #[error("matrix is singular")]
    SingularMatrix,
}

/// Per-state symmetric matrices `f(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoVector {
    pub per_state: Vec<DMatrix<f64>>,
}

impl InfoVector {
    pub fn n_params(&self) -> usize {
        self.per_state.first().map_or(0, |m| m.nrows())
    }

    /// The ket `|f_mn>` as a column over states.
    pub fn component(&self, m: usize, n: usize) -> DVector<f64> {
        DVector::from_iterator(self.per_state.len(), self.per_state.iter().map(|f| f[(m, n)]))
    }
}

/// `f_mn(s) = sum_x dP_m dP_n / P` over the emissions of every state.
pub fn information_vector(msp: &Msp) -> Result<InfoVector, InfoError> {
    let k = msp.n_params();
    let mut per_state = Vec::with_capacity(msp.len());
    for s in 0..msp.len() {
        let mut f = DMatrix::zeros(k, k);
        for (x, e) in msp.emissions(s).iter().enumerate() {
            if e.prob < EMISSION_FLOOR {
                if e.grad.amax() >= EMISSION_FLOOR {
                    return Err(InfoError::SingularEmission {
                        state: s,
                        symbol: x,
                        prob: e.prob,
                    });
                }
                continue;
            }
            f += &e.grad * e.grad.transpose() / e.prob;
        }
        per_state.push(f);
    }
    Ok(InfoVector { per_state })
}

/// Shannon entropy of the next symbol from each state, in `log_base` units.
pub fn entropy_vector(msp: &Msp, log_base: f64) -> Vec<DMatrix<f64>> {
    let ln_base = log_base.ln();
    (0..msp.len())
        .map(|s| {
            let h: f64 = msp
                .emissions(s)
                .iter()
                .filter(|e| e.prob > 0.0)
                .map(|e| -e.prob * e.prob.ln() / ln_base)
                .sum();
            DMatrix::from_element(1, 1, h)
        })
        .collect()
}

fn overlap(v: &RowDVector<f64>, g: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (r, c) = g.first().map_or((0, 0), |m| m.shape());
    let mut out = DMatrix::zeros(r, c);
    for (s, &w) in v.iter().enumerate() {
        if w != 0.0 {
            out += &g[s] * w;
        }
    }
    out
}

fn start_row(msp: &Msp) -> RowDVector<f64> {
    let mut v = RowDVector::zeros(msp.len());
    v[msp.start()] = 1.0;
    v
}

fn check_horizon(msp: &Msp, l_max: usize) -> Result<(), InfoError> {
    match msp.horizon() {
        Some(h) if l_max > h => Err(InfoError::HorizonExceeded {
            requested: l_max,
            horizon: h,
        }),
        _ => Ok(()),
    }
}

/// `<start| W^(L-1) |g>` for `L = 1..=l_max`.
pub fn myopic_series(msp: &Msp, g: &[DMatrix<f64>], l_max: usize) -> Result<Vec<DMatrix<f64>>, InfoError> {
    check_horizon(msp, l_max)?;
    let mut v = start_row(msp);
    let mut out = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        if l > 1 {
            v = msp.apply_row(&v);
        }
        out.push(overlap(&v, g));
    }
    Ok(out)
}

/// Stationary distribution of one recurrent class, embedded over all states.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStationary {
    pub class: Vec<usize>,
    pub pi: RowDVector<f64>,
    /// `1 - rho`, where `rho` is the Perron root of the class restricted to
    /// expanded states. Zero for a fully resolved class; positive when the
    /// class runs into the truncation frontier, in which case `pi` is the
    /// quasi-stationary distribution.
    pub leak: f64,
}

fn class_edges(msp: &Msp, class: &[usize]) -> Vec<(usize, usize)> {
    class
        .iter()
        .flat_map(|&s| msp.edges(s).map(move |(_, t, _)| (s, t)))
        .filter(|(_, t)| class.contains(t))
        .collect()
}

/// Stationary (or quasi-stationary) distribution on `class`.
pub fn class_stationary(msp: &Msp, class: &[usize]) -> Result<ClassStationary, InfoError> {
    let period = graph::period(class, &class_edges(msp, class));
    if period > 1 {
        return Err(InfoError::Periodicity(period));
    }
    let k = class.len();
    let local = |s: usize| class.iter().position(|&c| c == s);
    let mut r = DMatrix::<f64>::zeros(k, k);
    for (i, &s) in class.iter().enumerate() {
        for (_, t, p) in msp.edges(s) {
            if let Some(j) = local(t) {
                r[(i, j)] += p;
            }
        }
    }
    let deficit = (0..k).map(|i| 1.0 - r.row(i).sum()).fold(0.0, f64::max);
    let local_pi: RowDVector<f64>;
    let mut leak = 0.0;
    if deficit <= 1e-12 {
        let mut a = (DMatrix::identity(k, k) - &r).transpose();
        a.row_mut(k - 1).fill(1.0);
        let mut b = DVector::zeros(k);
        b[k - 1] = 1.0;
        let x = a.lu().solve(&b).ok_or(InfoError::SingularMatrix)?;
        local_pi = x.transpose();
    } else {
        // Lazy power iteration shares the Perron vector of R and converges
        // without oscillation.
        let lazy = (DMatrix::identity(k, k) + &r) * 0.5;
        let mut v = RowDVector::from_element(k, 1.0 / k as f64);
        for _ in 0..200_000 {
            let mut next = &v * &lazy;
            let norm = next.sum();
            next /= norm;
            let done = (&next - &v).amax() < 1e-16;
            v = next;
            if done {
                break;
            }
        }
        leak = 1.0 - (&v * &r).sum();
        local_pi = v;
    }
    let mut pi = RowDVector::zeros(msp.len());
    for (i, &s) in class.iter().enumerate() {
        pi[s] = local_pi[i];
    }
    Ok(ClassStationary {
        class: class.to_vec(),
        pi,
        leak,
    })
}

/// The single recurrent class's stationary distribution.
pub fn stationary(msp: &Msp) -> Result<ClassStationary, InfoError> {
    match msp.recurrent_classes() {
        [] => Err(InfoError::NoRecurrentClass),
        [c] => class_stationary(msp, c),
        many => Err(InfoError::MultipleAttractors(many.len())),
    }
}

/// Asymptotic rate `<pi|g>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rate {
    pub value: DMatrix<f64>,
    /// See [`ClassStationary::leak`]; nonzero means provisional.
    pub leak: f64,
}

pub fn asymptotic_rate(msp: &Msp, g: &[DMatrix<f64>]) -> Result<Rate, InfoError> {
    let st = stationary(msp)?;
    Ok(Rate {
        value: overlap(&st.pi, g),
        leak: st.leak,
    })
}

/// Rate within one attractor, with its absorption probability from the start.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorRate {
    pub class: Vec<usize>,
    pub weight: f64,
    pub rate: DMatrix<f64>,
}

/// Per-attractor rates of a nonergodic process and their absorption-weighted
/// combination. Requires a closed presentation.
pub fn attractor_rates(msp: &Msp, g: &[DMatrix<f64>]) -> Result<(Vec<AttractorRate>, DMatrix<f64>), InfoError> {
    if let Some(h) = msp.horizon() {
        return Err(InfoError::Truncated(h));
    }
    let classes = msp.recurrent_classes();
    if classes.is_empty() {
        return Err(InfoError::NoRecurrentClass);
    }
    // Absorption probabilities: long-run mass of the start state's chain.
    // Transient mass drains geometrically, so x (I - W_TT) = e_start on the
    // transient block followed by one step into each class gives the weights.
    let n = msp.len();
    let rec = msp.recurrent_mask();
    let transient: Vec<usize> = (0..n).filter(|&s| !rec[s]).collect();
    let mut weights = vec![0.0; classes.len()];
    let class_of = |s: usize| classes.iter().position(|c| c.contains(&s));
    if rec[msp.start()] {
        weights[class_of(msp.start()).unwrap()] = 1.0;
    } else {
        let k = transient.len();
        let local = |s: usize| transient.iter().position(|&t| t == s);
        let mut a = DMatrix::<f64>::identity(k, k);
        for (i, &s) in transient.iter().enumerate() {
            for (_, t, p) in msp.edges(s) {
                if let Some(j) = local(t) {
                    a[(i, j)] -= p;
                }
            }
        }
        let mut e = DVector::zeros(k);
        e[local(msp.start()).unwrap()] = 1.0;
        let visits = a.transpose().lu().solve(&e).ok_or(InfoError::SingularMatrix)?;
        for (i, &s) in transient.iter().enumerate() {
            for (_, t, p) in msp.edges(s) {
                if let Some(c) = class_of(t) {
                    weights[c] += visits[i] * p;
                }
            }
        }
    }
    let mut out = Vec::new();
    let (r, c) = g.first().map_or((0, 0), |m| m.shape());
    let mut weighted = DMatrix::zeros(r, c);
    for (class, w) in classes.iter().zip(weights) {
        let st = class_stationary(msp, class)?;
        let rate = overlap(&st.pi, g);
        weighted += &rate * w;
        out.push(AttractorRate {
            class: class.clone(),
            weight: w,
            rate,
        });
    }
    Ok((out, weighted))
}

/// Excess `<start| (I - Q)^-1 |g> - <pi|g>` with `Q = W - 1 pi`.
#[derive(Debug, Clone, PartialEq)]
pub enum Excess {
    Exact(DMatrix<f64>),
    /// Truncated presentation: `E_{l_max}` and the magnitude of the last
    /// myopic deviation `|g_{l_max} - g|`.
    PartialSum {
        value: DMatrix<f64>,
        last_term: f64,
        l_max: usize,
    },
}

impl Excess {
    pub fn value(&self) -> &DMatrix<f64> {
        match self {
            Excess::Exact(v) | Excess::PartialSum { value: v, .. } => v,
        }
    }
}

pub fn excess(msp: &Msp, g: &[DMatrix<f64>]) -> Result<Excess, InfoError> {
    let rate = asymptotic_rate(msp, g)?;
    if let Some(h) = msp.horizon() {
        let series = myopic_series(msp, g, h)?;
        let mut value = DMatrix::zeros(rate.value.nrows(), rate.value.ncols());
        for fl in &series {
            value += fl - &rate.value;
        }
        let last_term = series.last().map_or(0.0, |fl| (fl - &rate.value).amax());
        return Ok(Excess::PartialSum {
            value,
            last_term,
            l_max: h,
        });
    }
    let st = stationary(msp)?;
    let n = msp.len();
    let w = msp.net_matrix();
    let q = &w - DMatrix::from_element(n, 1, 1.0) * &st.pi;
    let a = (DMatrix::identity(n, n) - q).transpose();
    let sv = a.clone().singular_values();
    let smallest = sv.min();
    if smallest < 1e-8 {
        return Err(InfoError::DivergentOrUndefined(format!(
            "I - Q is numerically singular (smallest singular value {smallest:e})"
        )));
    }
    let mut e = DVector::zeros(n);
    e[msp.start()] = 1.0;
    let x = a.lu().solve(&e).ok_or(InfoError::SingularMatrix)?;
    Ok(Excess::Exact(overlap(&x.transpose(), g) - rate.value))
}

/// Fisher-information curves.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherCurve {
    /// `f_L`, index `L - 1`.
    pub myopic: Vec<DMatrix<f64>>,
    /// `F(L) = sum_{l <= L} f_l`.
    pub cumulative: Vec<DMatrix<f64>>,
    /// `E_L = F(L) - L f`, present when `f` is.
    pub excess_l: Option<Vec<DMatrix<f64>>>,
    pub rate: Option<Rate>,
    pub excess: Option<Excess>,
}

pub fn myopic_rate_curve(msp: &Msp, iv: &InfoVector, l_max: usize) -> Result<FisherCurve, InfoError> {
    let myopic = myopic_series(msp, &iv.per_state, l_max)?;
    let mut cumulative = Vec::with_capacity(l_max);
    for fl in &myopic {
        let next = match cumulative.last() {
            Some(prev) => prev + fl,
            None => fl.clone(),
        };
        cumulative.push(next);
    }
    let rate = asymptotic_rate(msp, &iv.per_state).ok();
    let excess_l = rate.as_ref().map(|r| {
        cumulative
            .iter()
            .enumerate()
            .map(|(i, big)| big - &r.value * (i + 1) as f64)
            .collect()
    });
    let excess = rate.as_ref().and_then(|_| excess(msp, &iv.per_state).ok());
    Ok(FisherCurve {
        myopic,
        cumulative,
        excess_l,
        rate,
        excess,
    })
}

/// `ε` for the Fisher information.
pub fn excess_information(msp: &Msp, iv: &InfoVector) -> Result<Excess, InfoError> {
    excess(msp, &iv.per_state)
}

/// Zero-eigenmode and relaxation parts of `f_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroModeSplit {
    pub zero: Vec<DMatrix<f64>>,
    pub relax: Vec<DMatrix<f64>>,
}

pub fn zero_mode_split(
    msp: &Msp,
    iv: &InfoVector,
    spec: &SpectralData,
    l_max: usize,
) -> Result<ZeroModeSplit, InfoError> {
    let total = myopic_series(msp, &iv.per_state, l_max)?;
    let u = spec.zero_part(&start_row(msp));
    let mut zero = Vec::with_capacity(l_max);
    let mut relax = Vec::with_capacity(l_max);
    for (i, fl) in total.iter().enumerate() {
        let z = overlap(&power_apply(msp, &u, i + 1), &iv.per_state);
        relax.push(fl - &z);
        zero.push(z);
    }
    Ok(ZeroModeSplit { zero, relax })
}

/// Largest `L` with `|f_L^zero| > 1e-9`, or 0.
pub fn zero_mode_cutoff(split: &ZeroModeSplit) -> usize {
    split
        .zero
        .iter()
        .rposition(|z| z.amax() > 1e-9)
        .map_or(0, |i| i + 1)
}

/// Entropy curves: `h_l`, `h` and excess entropy `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyCurve {
    pub myopic: Vec<f64>,
    pub rate: Option<f64>,
    pub excess: Option<f64>,
    pub rate_leak: f64,
}

pub fn entropy_curve(msp: &Msp, l_max: usize, log_base: f64) -> Result<EntropyCurve, InfoError> {
    let h = entropy_vector(msp, log_base);
    let myopic = myopic_series(msp, &h, l_max)?.iter().map(|m| m[(0, 0)]).collect();
    let rate = asymptotic_rate(msp, &h).ok();
    let excess = rate
        .as_ref()
        .and_then(|_| excess(msp, &h).ok())
        .map(|e| e.value()[(0, 0)]);
    Ok(EntropyCurve {
        myopic,
        rate_leak: rate.as_ref().map_or(0.0, |r| r.leak),
        rate: rate.map(|r| r.value[(0, 0)]),
        excess,
    })
}

/// Terms `pi(s) f(s)` of a recurrent class grouped by state depth, with
/// running partial sums: `(depth, partial sum, max-norm of the term)`.
pub fn recurrent_partial_sums(
    msp: &Msp,
    g: &[DMatrix<f64>],
) -> Result<Vec<(usize, DMatrix<f64>, f64)>, InfoError> {
    let st = stationary(msp)?;
    let mut by_depth: Vec<(usize, DMatrix<f64>)> = Vec::new();
    let mut members = st.class.clone();
    members.sort_by_key(|&s| msp.states()[s].depth);
    for s in members {
        let d = msp.states()[s].depth;
        let term = &g[s] * st.pi[s];
        match by_depth.last_mut() {
            Some((depth, acc)) if *depth == d => *acc += term,
            _ => by_depth.push((d, term)),
        }
    }
    let mut out = Vec::with_capacity(by_depth.len());
    let mut running: Option<DMatrix<f64>> = None;
    for (d, term) in by_depth {
        let mag = term.amax();
        let sum = match running {
            Some(r) => r + term,
            None => term,
        };
        out.push((d, sum.clone(), mag));
        running = Some(sum);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    Inverse,
    Pseudo,
}

/// Cramér–Rao bound `F^-1`, or the Moore–Penrose pseudo-inverse.
pub fn cramer_rao(f: &DMatrix<f64>, mode: BoundMode) -> Result<DMatrix<f64>, InfoError> {
    let sym = (f + f.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.amax();
    let tol = 1e-10 * max.max(f64::MIN_POSITIVE);
    let n = f.nrows();
    let mut inv_diag = DVector::zeros(n);
    for i in 0..n {
        let l = eig.eigenvalues[i];
        if l.abs() > tol {
            inv_diag[i] = 1.0 / l;
        } else if mode == BoundMode::Inverse {
            return Err(InfoError::SingularMatrix);
        }
    }
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&inv_diag) * v.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ParamPoint;
    use crate::hyperdual::HyperDual;
    use crate::msp::MspOptions;
    use crate::spectral::{eigendecompose_msp, SpectralOptions};
    use crate::zoo::{get_model, ZooEntry};

    fn setup(name: &str) -> (ZooEntry, Msp, InfoVector) {
        let e = get_model(name, &[]).unwrap();
        let msp = Msp::build(&e.hmm.instantiate(&e.canonical).unwrap(), &MspOptions::default());
        let iv = information_vector(&msp).unwrap();
        (e, msp, iv)
    }

    #[test]
    fn even_information_vector() {
        let (_, msp, iv) = setup("even");
        let expected = [("", 32.0 / 9.0), ("1", 4.0 / 3.0), ("0", 4.0), ("01", 0.0)];
        for (w, v) in expected {
            let word: Vec<usize> = w.bytes().map(|b| (b - b'0') as usize).collect();
            let s = msp.state_after(&word).unwrap();
            assert!((iv.per_state[s][(0, 0)] - v).abs() < 1e-12, "{w}");
        }
    }

    #[test]
    fn biased_coin_rates() {
        let (_, msp, iv) = setup("biased_coin");
        assert!((iv.per_state[0][(0, 0)] - 4.0).abs() < 1e-12);
        let curve = myopic_rate_curve(&msp, &iv, 10).unwrap();
        for (i, fl) in curve.myopic.iter().enumerate() {
            assert!((fl[(0, 0)] - 4.0).abs() < 1e-12);
            assert!(curve.excess_l.as_ref().unwrap()[i][(0, 0)].abs() < 1e-12);
        }
        assert!(excess_information(&msp, &iv).unwrap().value()[(0, 0)].abs() < 1e-12);
        let spec = eigendecompose_msp(&msp, &SpectralOptions::default()).unwrap();
        let split = zero_mode_split(&msp, &iv, &spec, 10).unwrap();
        assert_eq!(zero_mode_cutoff(&split), 0);
        let h = entropy_curve(&msp, 5, 2.0).unwrap();
        assert!(h.myopic.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(h.excess.unwrap().abs() < 1e-12);
    }

    #[test]
    fn even_curve_and_excess() {
        let (_, msp, iv) = setup("even");
        let curve = myopic_rate_curve(&msp, &iv, 4).unwrap();
        assert!((curve.myopic[0][(0, 0)] - 32.0 / 9.0).abs() < 1e-12);
        assert!((curve.myopic[1][(0, 0)] - 20.0 / 9.0).abs() < 1e-12);
        assert!((curve.cumulative[2][(0, 0)] - 80.0 / 9.0).abs() < 1e-12);
        assert!((curve.rate.as_ref().unwrap().value[(0, 0)] - 8.0 / 3.0).abs() < 1e-12);
        let Excess::Exact(eps) = curve.excess.unwrap() else { panic!() };
        assert!((eps[(0, 0)] - 8.0 / 9.0).abs() < 1e-12);
        let h = entropy_curve(&msp, 4, 2.0).unwrap();
        assert!((h.rate.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn golden_mean_converges_at_two() {
        let (_, msp, iv) = setup("golden_mean");
        let curve = myopic_rate_curve(&msp, &iv, 10).unwrap();
        let f = curve.rate.unwrap().value[(0, 0)];
        assert!((f - 1.0 / (0.5 * 0.5 * 1.5)).abs() < 1e-12);
        for fl in &curve.myopic[1..] {
            assert!((fl[(0, 0)] - f).abs() < 1e-12);
        }
    }

    #[test]
    fn teddy_bear_rate_and_cutoff() {
        let (_, msp, iv) = setup("teddy_bear");
        let f = asymptotic_rate(&msp, &iv.per_state).unwrap().value;
        let expected = DMatrix::from_row_slice(2, 2, &[2.4, 1.8, 1.8, 2.7]);
        assert!((f - expected).amax() < 1e-10);
        let spec = eigendecompose_msp(&msp, &SpectralOptions::default()).unwrap();
        let split = zero_mode_split(&msp, &iv, &spec, 20).unwrap();
        assert_eq!(zero_mode_cutoff(&split), 2);
        let total = myopic_series(&msp, &iv.per_state, 20).unwrap();
        for ((z, r), t) in split.zero.iter().zip(&split.relax).zip(&total) {
            assert!((z + r - t).amax() < 1e-9);
        }
    }

    #[test]
    fn mk_golden_mean_saturates() {
        let (_, msp, iv) = setup("mk_golden_mean");
        let curve = myopic_rate_curve(&msp, &iv, 12).unwrap();
        let f = curve.rate.as_ref().unwrap().value[(0, 0)];
        assert!((f - 8.0 / 9.0).abs() < 1e-10);
        for fl in &curve.myopic[3..] {
            assert!((fl[(0, 0)] - f).abs() < 1e-10);
        }
        let eps = curve.excess.as_ref().unwrap().value()[(0, 0)];
        assert!((eps - curve.excess_l.as_ref().unwrap()[2][(0, 0)]).abs() < 1e-10);
        let spec = eigendecompose_msp(&msp, &SpectralOptions::default()).unwrap();
        assert_eq!(zero_mode_cutoff(&zero_mode_split(&msp, &iv, &spec, 12).unwrap()), 3);
    }

    #[test]
    fn horizon_is_enforced() {
        let e = get_model("two_coins", &[]).unwrap();
        let opts = MspOptions {
            max_depth: 5,
            ..MspOptions::default()
        };
        let msp = Msp::build(&e.hmm.instantiate(&e.canonical).unwrap(), &opts);
        let iv = information_vector(&msp).unwrap();
        assert!(myopic_rate_curve(&msp, &iv, 5).is_ok());
        assert_eq!(
            myopic_rate_curve(&msp, &iv, 6).unwrap_err(),
            InfoError::HorizonExceeded {
                requested: 6,
                horizon: 5
            }
        );
        assert_eq!(asymptotic_rate(&msp, &iv.per_state).unwrap_err(), InfoError::NoRecurrentClass);
    }

    #[test]
    fn cramer_rao_modes() {
        let f = DMatrix::from_element(1, 1, 80.0 / 9.0);
        let b = cramer_rao(&f, BoundMode::Inverse).unwrap();
        assert!((b[(0, 0)] - 0.1125).abs() < 1e-15);
        assert_eq!(cramer_rao(&DMatrix::identity(2, 2), BoundMode::Inverse).unwrap(), DMatrix::identity(2, 2));
        let g = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let rank1 = &g * g.transpose() * (8.0 / 3.0);
        assert_eq!(cramer_rao(&rank1, BoundMode::Inverse), Err(InfoError::SingularMatrix));
        let pinv = cramer_rao(&rank1, BoundMode::Pseudo).unwrap();
        assert!((&pinv * &g).amax() > 0.0);
        assert!((&rank1 * &pinv * &rank1 - &rank1).amax() < 1e-12);
        let e = SymmetricEigen::new(pinv.clone()).eigenvalues;
        assert_eq!(e.iter().filter(|v| v.abs() > 1e-10).count(), 1);
    }

    #[test]
    fn singular_emission_is_reported() {
        let e = get_model("biased_coin", &[]).unwrap();
        let theta = ParamPoint::from_pairs([("p", 1e-13)]).unwrap();
        let msp = Msp::build(&e.hmm.instantiate(&theta).unwrap(), &MspOptions::default());
        assert!(matches!(
            information_vector(&msp),
            Err(InfoError::SingularEmission { symbol: 1, .. })
        ));
    }

    /// Second partials of `P(x|s) = Pr(wx) / Pr(w)` by hyper-dual evaluation
    /// of word probabilities, independent of the MSP tangents.
    fn hessian_form(e: &ZooEntry, witness: &[usize], n_sym: usize) -> DMatrix<f64> {
        let names = e.hmm.parameters();
        let k = names.len();
        let mut out = DMatrix::zeros(k, k);
        for m in 0..k {
            for n in 0..k {
                let lookup = |name: &str| {
                    let i = names.iter().position(|p| p == name)?;
                    let v = e.canonical.get(name)?;
                    Some(HyperDual::variable(v, i == m, i == n))
                };
                let denom = e.hmm.word_probability_over(&lookup, witness).unwrap();
                let mut acc = 0.0;
                for x in 0..n_sym {
                    let mut wx = witness.to_vec();
                    wx.push(x);
                    let num = e.hmm.word_probability_over(&lookup, &wx).unwrap();
                    let p = num / denom;
                    if p.re < EMISSION_FLOOR {
                        continue;
                    }
                    // -P d2 ln P = -(d2P - dP dP / P)
                    acc -= p.e12 - p.e1 * p.e2 / p.re;
                }
                out[(m, n)] = acc;
            }
        }
        out
    }

    #[test]
    fn three_information_forms_agree() {
        for name in ["even", "teddy_bear", "sns", "two_coins", "overparam_even", "mk_golden_mean"] {
            let e = get_model(name, &[]).unwrap();
            let opts = MspOptions {
                max_depth: 6,
                ..MspOptions::default()
            };
            let msp = Msp::build(&e.hmm.instantiate(&e.canonical).unwrap(), &opts);
            let iv = information_vector(&msp).unwrap();
            for (s, st) in msp.states().iter().enumerate() {
                let hess = hessian_form(&e, &st.witness, msp.n_symbols());
                // score form: sum_x P (d ln P)(d ln P)
                let mut score = DMatrix::zeros(iv.n_params(), iv.n_params());
                for em in msp.emissions(s) {
                    if em.prob >= EMISSION_FLOOR {
                        let dl = &em.grad / em.prob;
                        score += &dl * dl.transpose() * em.prob;
                    }
                }
                let scale = iv.per_state[s].amax().max(1.0);
                assert!((&hess - &iv.per_state[s]).amax() < 1e-10 * scale, "{name} {:?}", st.witness);
                assert!((&score - &iv.per_state[s]).amax() < 1e-10 * scale);
            }
        }
    }

    #[test]
    fn binary_and_quotient_forms_agree() {
        for name in ["even", "sns", "two_coins", "golden_mean", "mk_golden_mean"] {
            let e = get_model(name, &[]).unwrap();
            let opts = MspOptions {
                max_depth: 6,
                ..MspOptions::default()
            };
            let msp = Msp::build(&e.hmm.instantiate(&e.canonical).unwrap(), &opts);
            let iv = information_vector(&msp).unwrap();
            let names = e.hmm.parameters();
            let k = names.len();
            for (s, st) in msp.states().iter().enumerate() {
                let em = msp.emissions(s);
                let (p0, p1) = (em[0].prob, em[1].prob);
                if p0 < EMISSION_FLOOR || p1 < EMISSION_FLOOR {
                    continue;
                }
                let binary0 = &em[0].grad * em[0].grad.transpose() / (p0 * p1);
                let binary1 = &em[1].grad * em[1].grad.transpose() / (p0 * p1);
                // P(1|s) = u / g with u = Pr(w1), g = Pr(w); dual-number gradients
                let mut du = DVector::zeros(k);
                let mut dg = DVector::zeros(k);
                let (mut u, mut g) = (0.0, 0.0);
                for m in 0..k {
                    let lookup = |name: &str| {
                        let i = names.iter().position(|p| p == name)?;
                        Some(HyperDual::variable(e.canonical.get(name)?, i == m, false))
                    };
                    let mut w1 = st.witness.clone();
                    w1.push(1);
                    let uu = e.hmm.word_probability_over(&lookup, &w1).unwrap();
                    let gg = e.hmm.word_probability_over(&lookup, &st.witness).unwrap();
                    u = uu.re;
                    g = gg.re;
                    du[m] = uu.e1;
                    dg[m] = gg.e1;
                }
                let a = &du * g - &dg * u;
                let quotient = &a * a.transpose() / (g * g * u * (g - u));
                let scale = iv.per_state[s].amax().max(1.0);
                for form in [&binary0, &binary1, &quotient] {
                    assert!((form - &iv.per_state[s]).amax() < 1e-10 * scale, "{name} {:?}", st.witness);
                }
            }
        }
    }

    mod invariants {
        use super::*;
        use proptest::prelude::*;

        fn even_at(p: f64) -> Msp {
            let e = get_model("even", &[]).unwrap();
            let theta = ParamPoint::from_pairs([("p", p)]).unwrap();
            Msp::build(&e.hmm.instantiate(&theta).unwrap(), &MspOptions::default())
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn myopic_rates_are_symmetric_psd_and_telescope(p in 0.05f64..0.95) {
                let msp = even_at(p);
                let iv = information_vector(&msp).unwrap();
                let curve = myopic_rate_curve(&msp, &iv, 600).unwrap();
                let f = &curve.rate.as_ref().unwrap().value;
                let el = curve.excess_l.as_ref().unwrap();
                for (l, fl) in curve.myopic.iter().enumerate() {
                    let scale = fl.amax().max(1.0);
                    prop_assert!((fl - fl.transpose()).amax() < 1e-12 * scale);
                    let min = SymmetricEigen::new(fl.clone()).eigenvalues.min();
                    prop_assert!(min > -1e-10 * scale);
                    if l > 0 {
                        let step = &el[l] - &el[l - 1];
                        prop_assert!((step - (fl - f)).amax() < 1e-10 * scale);
                    }
                }
                let last = curve.myopic.last().unwrap();
                prop_assert!((last - f).amax() < 1e-6 * f.amax().max(1.0));
            }

            #[test]
            fn myopic_entropy_bounds_rate(p in 0.05f64..0.95) {
                let msp = even_at(p);
                let h = entropy_curve(&msp, 30, 2.0).unwrap();
                let rate = h.rate.unwrap();
                for w in h.myopic.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-12);
                }
                prop_assert!(h.myopic.iter().all(|v| *v >= rate - 1e-10));
            }
        }
    }
}

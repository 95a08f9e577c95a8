//! Spectral analysis of the non-normal, possibly defective operator `W`.
//!
//! Eigenvalues are taken block by block along the strongly connected
//! components of `W`'s support (the matrix is block triangular in that
//! order), so transient singletons contribute exact zeros. Each nonzero
//! eigenvalue cluster gets the projector `R (L R)^-1 L` built from bases of
//! the right and left null spaces of `(W - lambda I)^a`; the zero-eigenvalue
//! projector is whatever remains, `W_0 = I - sum W_lambda`.

use nalgebra::linalg::{Schur, SymmetricEigen};
use nalgebra::{Complex, DMatrix, DVector, RowDVector};
use serde_json::json;
use thiserror::Error;

use crate::graph;
use crate::msp::Msp;

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("eigenvalue clusters {a} and {b} are within {gap:e} of each other; adjust the clustering tolerance")]
    ClusteringAmbiguity { a: String, b: String, gap: f64 },
    #[error("Schur decomposition did not converge")]
    SchurFailed,
    #[error("generalized eigenspace of {0} is numerically singular")]
    SingularEigenspace(String),
    #[error("the start state is not the stationary distribution")]
    NotStationaryStart,
    #[error("mixed-state presentation is truncated at depth {0}")]
    TruncatedMsp(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    /// Eigenvalues closer than this are one cluster.
    pub cluster_tol: f64,
    /// Relative singular-value tolerance for rank decisions.
    pub rank_tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            cluster_tol: 1e-8,
            rank_tol: 1e-9,
        }
    }
}

/// One nonzero eigenvalue cluster.
#[derive(Debug, Clone)]
pub struct Mode {
    pub eigenvalue: C64,
    pub multiplicity: usize,
    /// Size of the largest Jordan block.
    pub index: usize,
    pub projector: DMatrix<C64>,
    /// Eigenvalue occurs in a non-closed strongly connected block.
    pub in_transient: bool,
    /// Eigenvalue occurs in a closed class.
    pub in_recurrent: bool,
}

#[derive(Debug, Clone)]
pub struct ZeroMode {
    pub multiplicity: usize,
    /// Symmetry-collapse index: smallest `k` with `W_0 W^k = 0`.
    pub index: usize,
    pub projector: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    w: DMatrix<f64>,
    pub modes: Vec<Mode>,
    pub zero: Option<ZeroMode>,
    pub has_unit_circle_periodicity: bool,
    pub unit_eigenvalue_multiplicity: usize,
}

/// Anything that can map a row vector `v` to `v W`.
pub trait RowOperator {
    fn dim(&self) -> usize;
    fn apply_row(&self, v: &RowDVector<f64>) -> RowDVector<f64>;
}

impl RowOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply_row(&self, v: &RowDVector<f64>) -> RowDVector<f64> {
        v * self
    }
}

impl RowOperator for Msp {
    fn dim(&self) -> usize {
        self.len()
    }
    fn apply_row(&self, v: &RowDVector<f64>) -> RowDVector<f64> {
        Msp::apply_row(self, v)
    }
}

/// `v W^(L-1)` by repeated row-vector products.
pub fn power_apply<W: RowOperator + ?Sized>(w: &W, v: &RowDVector<f64>, l: usize) -> RowDVector<f64> {
    assert!(l >= 1, "power_apply needs L >= 1");
    let mut out = v.clone();
    for _ in 1..l {
        out = w.apply_row(&out);
    }
    out
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

/// Singular values in ascending order with matching right singular vectors
/// (as columns).
fn sorted_svd(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^H");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let n = m.ncols();
    let mut vecs = DMatrix::zeros(n, order.len());
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vecs[(r, c)] = v_t[(i, r)].conj();
        }
    }
    (values, vecs)
}

fn nullity(m: &DMatrix<C64>, rel_tol: f64) -> usize {
    let (sv, _) = sorted_svd(m);
    let scale = sv.last().copied().unwrap_or(0.0).max(1.0);
    sv.iter().filter(|&&s| s <= rel_tol * scale).count()
}

fn real_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let scale = sv.max().max(1.0);
    sv.iter().filter(|&&s| s > rel_tol * scale).count()
}

/// Multiplicity of the zero eigenvalue of `b` from the point where the rank
/// of `b^k` stops dropping.
fn zero_multiplicity(b: &DMatrix<f64>, rel_tol: f64) -> usize {
    let n = b.nrows();
    let mut power = b.clone();
    let mut prev = real_rank(&power, rel_tol);
    for _ in 0..n {
        if prev == 0 {
            break;
        }
        power = &power * b;
        let r = real_rank(&power, rel_tol);
        if r == prev {
            break;
        }
        prev = r;
    }
    n - prev
}

struct Tagged {
    value: C64,
    recurrent: bool,
}

fn block_eigenvalues(w: &DMatrix<f64>, opts: &SpectralOptions) -> Result<(Vec<Tagged>, usize), SpectralError> {
    let n = w.nrows();
    let edges = crate::model::support_edges(w);
    let comps = graph::strongly_connected(n, &edges);
    let closed = graph::closed_classes(n, &edges);
    let mut nonzero = Vec::new();
    let mut zeros = 0;
    for comp in &comps {
        let recurrent = closed.contains(comp);
        if comp.len() == 1 {
            let v = w[(comp[0], comp[0])];
            if v == 0.0 {
                zeros += 1;
            } else {
                nonzero.push(Tagged {
                    value: C64::new(v, 0.0),
                    recurrent,
                });
            }
            continue;
        }
        let b = w.select_rows(comp).select_columns(comp);
        let z = zero_multiplicity(&b, opts.rank_tol);
        let schur = Schur::try_new(b, f64::EPSILON, 0).ok_or(SpectralError::SchurFailed)?;
        let mut eig: Vec<C64> = schur.complex_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        zeros += z;
        nonzero.extend(eig.into_iter().skip(z).map(|value| Tagged { value, recurrent }));
    }
    Ok((nonzero, zeros))
}

fn fmt_c(z: C64) -> String {
    format!("{:.6}{:+.6}i", z.re, z.im)
}

/// Single-linkage clusters of eigenvalues; returns (center, members).
fn cluster(values: &[Tagged], tol: f64) -> Result<Vec<(C64, Vec<usize>)>, SpectralError> {
    let n = values.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while label[r] != r {
            r = label[r];
        }
        label[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i].value - values[j].value).norm() <= tol {
                let (a, b) = (root(&mut label, i), root(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let r = root(&mut label, i);
        match groups.iter_mut().find(|(g, _)| *g == r) {
            Some((_, members)) => members.push(i),
            None => groups.push((r, vec![i])),
        }
    }
    let out: Vec<(C64, Vec<usize>)> = groups
        .into_iter()
        .map(|(_, members)| {
            let sum: C64 = members.iter().map(|&i| values[i].value).sum();
            (sum / members.len() as f64, members)
        })
        .collect();
    for i in 0..out.len() {
        for j in i + 1..out.len() {
            let gap = out[i]
                .1
                .iter()
                .flat_map(|&a| out[j].1.iter().map(move |&b| (a, b)))
                .map(|(a, b)| (values[a].value - values[b].value).norm())
                .fold(f64::INFINITY, f64::min);
            if gap < 10.0 * tol {
                return Err(SpectralError::ClusteringAmbiguity {
                    a: fmt_c(out[i].0),
                    b: fmt_c(out[j].0),
                    gap,
                });
            }
        }
    }
    Ok(out)
}

fn matrix_power(m: &DMatrix<C64>, k: usize) -> DMatrix<C64> {
    let n = m.nrows();
    let mut out = DMatrix::identity(n, n);
    for _ in 0..k {
        out = &out * m;
    }
    out
}

fn nonzero_mode(
    w: &DMatrix<C64>,
    lambda: C64,
    a: usize,
    opts: &SpectralOptions,
) -> Result<(DMatrix<C64>, usize), SpectralError> {
    let n = w.nrows();
    let shifted = w - DMatrix::<C64>::identity(n, n) * lambda;
    let ma = matrix_power(&shifted, a);
    let (_, right) = sorted_svd(&ma);
    let (_, left) = sorted_svd(&ma.transpose());
    let r = right.columns(0, a).into_owned();
    let l = left.columns(0, a).transpose();
    let gram = &l * &r;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| SpectralError::SingularEigenspace(fmt_c(lambda)))?;
    let projector = &r * inv * &l;
    let index = if a == 1 {
        1
    } else {
        (1..=a)
            .find(|&k| nullity(&matrix_power(&shifted, k), opts.rank_tol) >= a)
            .unwrap_or(a)
    };
    Ok((projector, index))
}

/// Row-sparse copy of a matrix for cheap `A W` products.
fn sparse_rows(w: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    (0..w.nrows())
        .map(|i| {
            (0..w.ncols())
                .filter(|&j| w[(i, j)] != 0.0)
                .map(|j| (j, w[(i, j)]))
                .collect()
        })
        .collect()
}

fn mul_sparse(a: &DMatrix<f64>, w: &[Vec<(usize, f64)>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for (k, row) in w.iter().enumerate() {
        for &(j, v) in row {
            for i in 0..a.nrows() {
                out[(i, j)] += a[(i, k)] * v;
            }
        }
    }
    out
}

/// Full spectral data of `w`.
pub fn eigendecompose(w: &DMatrix<f64>, opts: &SpectralOptions) -> Result<SpectralData, SpectralError> {
    let n = w.nrows();
    let (nonzero, zeros) = block_eigenvalues(w, opts)?;
    let clusters = cluster(&nonzero, opts.cluster_tol)?;
    let wc = to_complex(w);
    let mut modes = Vec::with_capacity(clusters.len());
    for (center, members) in clusters {
        let a = members.len();
        let (projector, index) = nonzero_mode(&wc, center, a, opts)?;
        modes.push(Mode {
            eigenvalue: center,
            multiplicity: a,
            index,
            projector,
            in_transient: members.iter().any(|&i| !nonzero[i].recurrent),
            in_recurrent: members.iter().any(|&i| nonzero[i].recurrent),
        });
    }
    modes.sort_by(|x, y| {
        y.eigenvalue
            .norm()
            .total_cmp(&x.eigenvalue.norm())
            .then(y.eigenvalue.re.total_cmp(&x.eigenvalue.re))
            .then(y.eigenvalue.im.total_cmp(&x.eigenvalue.im))
    });

    let zero = if zeros > 0 {
        let mut w0 = DMatrix::<f64>::identity(n, n);
        for m in &modes {
            w0 -= m.projector.map(|z| z.re);
        }
        let sparse = sparse_rows(w);
        let scale = w.norm().max(1.0);
        let mut power = w0.clone();
        let mut index = 0;
        while index < zeros && power.norm() > opts.rank_tol * scale {
            power = mul_sparse(&power, &sparse);
            index += 1;
        }
        Some(ZeroMode {
            multiplicity: zeros,
            index,
            projector: w0,
        })
    } else {
        None
    };

    let unit = |z: C64| (z - C64::new(1.0, 0.0)).norm() <= opts.cluster_tol;
    let has_unit_circle_periodicity = modes
        .iter()
        .any(|m| (m.eigenvalue.norm() - 1.0).abs() <= opts.cluster_tol && !unit(m.eigenvalue));
    let unit_eigenvalue_multiplicity = modes
        .iter()
        .filter(|m| unit(m.eigenvalue))
        .map(|m| m.multiplicity)
        .sum();
    Ok(SpectralData {
        w: w.clone(),
        modes,
        zero,
        has_unit_circle_periodicity,
        unit_eigenvalue_multiplicity,
    })
}

/// Spectral data of an MSP's net matrix.
pub fn eigendecompose_msp(msp: &Msp, opts: &SpectralOptions) -> Result<SpectralData, SpectralError> {
    eigendecompose(&msp.net_matrix(), opts)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl SpectralData {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn zero_index(&self) -> usize {
        self.zero.as_ref().map_or(0, |z| z.index)
    }

    /// All eigenvalues with multiplicity, zero included.
    pub fn eigenvalues(&self) -> Vec<C64> {
        let mut out: Vec<C64> = self
            .modes
            .iter()
            .flat_map(|m| std::iter::repeat_n(m.eigenvalue, m.multiplicity))
            .collect();
        if let Some(z) = &self.zero {
            out.extend(std::iter::repeat_n(C64::new(0.0, 0.0), z.multiplicity));
        }
        out
    }

    /// `v W_0`, or zero if there is no zero eigenvalue.
    pub fn zero_part(&self, v: &RowDVector<f64>) -> RowDVector<f64> {
        match &self.zero {
            Some(z) => v * &z.projector,
            None => RowDVector::zeros(v.len()),
        }
    }

    /// `v W^(L-1)` assembled from the spectral sum over modes with the
    /// binomial expansion of each Jordan part, plus the finitely many
    /// zero-mode terms.
    pub fn reconstruct(&self, v: &RowDVector<f64>, l: usize) -> RowDVector<f64> {
        assert!(l >= 1);
        let t = l - 1;
        let n = self.w.nrows();
        let wc = to_complex(&self.w);
        let vc = v.map(|x| C64::new(x, 0.0));
        let mut acc = RowDVector::<C64>::zeros(n);
        for m in &self.modes {
            let shifted = &wc - DMatrix::<C64>::identity(n, n) * m.eigenvalue;
            let mut term = &vc * &m.projector;
            for k in 0..m.index.min(t + 1) {
                let coeff = m.eigenvalue.powu((t - k) as u32) * binomial(t, k);
                acc += &term * coeff;
                term = &term * &shifted;
            }
        }
        let mut out = acc.map(|z| z.re);
        if let Some(z) = &self.zero {
            if t < z.index {
                out += power_apply(&self.w, &(v * &z.projector), l);
            }
        }
        out
    }

    /// JSON report; overlaps are `|| e_start W_lambda ||`.
    pub fn to_json(&self, start: Option<usize>) -> serde_json::Value {
        let overlap = |p: &DMatrix<C64>| start.map(|s| p.row(s).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt());
        let modes: Vec<_> = self
            .modes
            .iter()
            .map(|m| {
                json!({
                    "re": m.eigenvalue.re,
                    "im": m.eigenvalue.im,
                    "multiplicity": m.multiplicity,
                    "index": m.index,
                    "transient": m.in_transient,
                    "recurrent": m.in_recurrent,
                    "start_overlap": overlap(&m.projector),
                })
            })
            .collect();
        let zero = self.zero.as_ref().map(|z| {
            json!({
                "multiplicity": z.multiplicity,
                "index": z.index,
                "start_overlap": start.map(|s| z.projector.row(s).norm()),
            })
        });
        json!({
            "dimension": self.w.nrows(),
            "modes": modes,
            "zero": zero,
            "nu_0": self.zero_index(),
            "has_unit_circle_periodicity": self.has_unit_circle_periodicity,
            "unit_eigenvalue_multiplicity": self.unit_eigenvalue_multiplicity,
        })
    }
}

/// Overlap of the start state with one recurrent-only eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    pub eigenvalue: C64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnihilationReport {
    pub overlaps: Vec<Overlap>,
    pub tolerance: f64,
}

impl AnnihilationReport {
    pub fn passed(&self) -> bool {
        self.overlaps.iter().all(|o| o.norm <= self.tolerance)
    }
}

/// For a stationary start, the start state must have no overlap with modes
/// that occur only in the recurrent block (eigenvalue 1 excluded).
pub fn transient_annihilation_check(
    msp: &Msp,
    spec: &SpectralData,
    stationary_start: bool,
) -> Result<AnnihilationReport, SpectralError> {
    if !stationary_start {
        return Err(SpectralError::NotStationaryStart);
    }
    if let Some(d) = msp.horizon() {
        return Err(SpectralError::TruncatedMsp(d));
    }
    let start = msp.start();
    let overlaps = spec
        .modes
        .iter()
        .filter(|m| m.in_recurrent && !m.in_transient)
        .filter(|m| (m.eigenvalue - C64::new(1.0, 0.0)).norm() > 1e-8)
        .map(|m| Overlap {
            eigenvalue: m.eigenvalue,
            norm: m.projector.row(start).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
        })
        .collect();
    Ok(AnnihilationReport {
        overlaps,
        tolerance: 1e-8,
    })
}

/// Rank and orthonormal null basis (as columns) of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct RankReport {
    pub rank: usize,
    pub eigenvalues: DVector<f64>,
    pub null_basis: DMatrix<f64>,
}

pub fn rank_and_nullspace(f: &DMatrix<f64>, tol: f64) -> RankReport {
    let sym = (f + f.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.amax();
    let null: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i].abs() <= tol * max)
        .collect();
    let n = f.nrows();
    let mut basis = DMatrix::zeros(n, null.len());
    for (c, &i) in null.iter().enumerate() {
        basis.set_column(c, &eig.eigenvectors.column(i));
    }
    RankReport {
        rank: n - null.len(),
        eigenvalues: eig.eigenvalues,
        null_basis: basis,
    }
}

//! Built-in parametrized example processes with closed-form references.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{parse_expr, Expr, ExprError, ParamPoint};
use crate::model::{Initial, Metadata, ModelError, Order, ParamHmm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZooError {
    #[error("unknown zoo model `{0}`")]
    UnknownModel(String),
    #[error("cryptic order K={k} exceeds Markov order M={m}")]
    InvalidOrder { m: usize, k: usize },
    #[error("bad constructor argument: {0}")]
    BadArgument(String),
    #[error("no closed form for `{0}`")]
    NotAvailable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

pub const NAMES: [&str; 8] = [
    "biased_coin",
    "golden_mean",
    "mk_golden_mean",
    "even",
    "teddy_bear",
    "sns",
    "two_coins",
    "overparam_even",
];

/// A zoo model together with its constructor choice.
#[derive(Debug, Clone, PartialEq)]
pub enum ZooModel {
    BiasedCoin,
    GoldenMean,
    MkGoldenMean { m: usize, k: usize },
    Even,
    TeddyBear,
    Sns,
    TwoCoins,
    OverparamEven { g: Expr },
}

#[derive(Debug, Clone)]
pub struct ZooEntry {
    pub name: String,
    pub model: ZooModel,
    pub hmm: ParamHmm,
    /// Canonical parameter point (p=1/2, q=1/3, p1=1/3, p2=1/2; 1/6 each for
    /// the overparametrized Even process).
    pub canonical: ParamPoint,
}

/// A closed-form reference value.
#[derive(Debug, Clone, PartialEq)]
pub enum RefValue {
    Scalar(f64),
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
}

impl ZooModel {
    /// Looks up a model by name with `key=value` constructor arguments.
    pub fn from_name(name: &str, args: &[(&str, &str)]) -> Result<Self, ZooError> {
        let arg = |key: &str| args.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        for (k, _) in args {
            let known = match name {
                "mk_golden_mean" => matches!(*k, "M" | "K"),
                "overparam_even" => *k == "g",
                _ => false,
            };
            if !known {
                return Err(ZooError::BadArgument(format!("`{name}` takes no argument `{k}`")));
            }
        }
        let int = |key: &str, default: usize| -> Result<usize, ZooError> {
            arg(key).map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| ZooError::BadArgument(format!("{key}={v} is not a nonnegative integer")))
            })
        };
        Ok(match name {
            "biased_coin" => ZooModel::BiasedCoin,
            "golden_mean" => ZooModel::GoldenMean,
            "mk_golden_mean" => ZooModel::MkGoldenMean {
                m: int("M", 5)?,
                k: int("K", 3)?,
            },
            "even" => ZooModel::Even,
            "teddy_bear" => ZooModel::TeddyBear,
            "sns" => ZooModel::Sns,
            "two_coins" => ZooModel::TwoCoins,
            "overparam_even" => ZooModel::OverparamEven {
                g: parse_expr(arg("g").unwrap_or("p+q+r"))?,
            },
            other => return Err(ZooError::UnknownModel(other.to_string())),
        })
    }

    /// Parses `name` or `name?key=value&key=value`.
    pub fn from_selector(selector: &str) -> Result<Self, ZooError> {
        let (name, query) = selector.split_once('?').unwrap_or((selector, ""));
        let args = query
            .split('&')
            .filter(|s| !s.is_empty())
            .map(|kv| {
                kv.split_once('=')
                    .ok_or_else(|| ZooError::BadArgument(format!("`{kv}` is not key=value")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_name(name, &args)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ZooModel::BiasedCoin => "biased_coin",
            ZooModel::GoldenMean => "golden_mean",
            ZooModel::MkGoldenMean { .. } => "mk_golden_mean",
            ZooModel::Even => "even",
            ZooModel::TeddyBear => "teddy_bear",
            ZooModel::Sns => "sns",
            ZooModel::TwoCoins => "two_coins",
            ZooModel::OverparamEven { .. } => "overparam_even",
        }
    }

    pub fn build(&self) -> Result<ZooEntry, ZooError> {
        let hmm = match self {
            ZooModel::BiasedCoin => biased_coin()?,
            ZooModel::GoldenMean => golden_mean()?,
            ZooModel::MkGoldenMean { m, k } => mk_golden_mean(*m, *k)?,
            ZooModel::Even => even_with(Expr::param("p"), &["p".to_string()])?,
            ZooModel::TeddyBear => teddy_bear()?,
            ZooModel::Sns => sns()?,
            ZooModel::TwoCoins => two_coins()?,
            ZooModel::OverparamEven { g } => even_with(g.clone(), &g.parameters())?,
        };
        let sixth = matches!(self, ZooModel::OverparamEven { .. });
        let canonical = ParamPoint::from_pairs(hmm.parameters().iter().map(|name| {
            let v = if sixth {
                1.0 / 6.0
            } else {
                match name.as_str() {
                    "q" | "p1" => 1.0 / 3.0,
                    _ => 0.5,
                }
            };
            (name.clone(), v)
        }))?;
        Ok(ZooEntry {
            name: self.name().to_string(),
            model: self.clone(),
            hmm,
            canonical,
        })
    }
}

/// Convenience: `get_model("mk_golden_mean", &[("M", "5"), ("K", "3")])`.
pub fn get_model(name: &str, args: &[(&str, &str)]) -> Result<ZooEntry, ZooError> {
    ZooModel::from_name(name, args)?.build()
}

type Edge = (String, String, String, Expr);

fn edge(from: &str, symbol: &str, to: &str, prob: &str) -> Result<Edge, ZooError> {
    Ok((from.into(), symbol.into(), to.into(), parse_expr(prob)?))
}

fn meta(order: Option<Order>, cryptic: Option<usize>, unifilar: bool, attractors: usize) -> Metadata {
    Metadata {
        markov_order: order,
        cryptic_order: cryptic,
        unifilar: Some(unifilar),
        attractors: Some(attractors),
    }
}

fn biased_coin() -> Result<ParamHmm, ZooError> {
    Ok(ParamHmm::new(
        &["0", "1"],
        &["A"],
        &["p"],
        vec![edge("A", "0", "A", "1-p")?, edge("A", "1", "A", "p")?],
        Initial::Stationary,
        meta(Some(Order::Finite(0)), Some(0), true, 1),
    )?)
}

fn golden_mean() -> Result<ParamHmm, ZooError> {
    Ok(ParamHmm::new(
        &["0", "1"],
        &["A", "B"],
        &["p"],
        vec![
            edge("A", "1", "A", "p")?,
            edge("A", "0", "B", "1-p")?,
            edge("B", "1", "A", "1")?,
        ],
        Initial::Stationary,
        meta(Some(Order::Finite(1)), None, true, 1),
    )?)
}

/// Runs of exactly `m` ones separated by runs of at least `k` zeros: state
/// `A` loops on 0 or starts the chain `c1..c{m+k-1}`, whose first `m-1`
/// links emit 1 and remaining `k` links emit 0 back to `A`.
fn mk_golden_mean(m: usize, k: usize) -> Result<ParamHmm, ZooError> {
    if m == 0 || k == 0 {
        return Err(ZooError::BadArgument("M and K must be at least 1".into()));
    }
    if k > m {
        return Err(ZooError::InvalidOrder { m, k });
    }
    let chain = m + k - 1;
    let mut states = vec!["A".to_string()];
    states.extend((1..=chain).map(|i| format!("c{i}")));
    let mut edges = vec![edge("A", "0", "A", "1-p")?, edge("A", "1", "c1", "p")?];
    for i in 1..=chain {
        let symbol = if i < m { "1" } else { "0" };
        let to = if i == chain { "A".to_string() } else { format!("c{}", i + 1) };
        edges.push(edge(&format!("c{i}"), symbol, &to, "1")?);
    }
    Ok(ParamHmm::new(
        &["0", "1"],
        &states,
        &["p".to_string()],
        edges,
        Initial::Stationary,
        meta(Some(Order::Finite(m)), Some(k), true, 1),
    )?)
}

fn even_with(g: Expr, params: &[String]) -> Result<ParamHmm, ZooError> {
    let one_minus = Expr::Const(1.0) - g.clone();
    Ok(ParamHmm::new(
        &["0", "1"],
        &["A", "B"],
        params,
        vec![
            ("A".into(), "0".into(), "A".into(), one_minus),
            ("A".into(), "1".into(), "B".into(), g),
            edge("B", "1", "A", "1")?,
        ],
        Initial::Stationary,
        meta(Some(Order::Infinite), None, true, 1),
    )?)
}

/// Three-symbol process: `A` emits 0 and stays, emits `111` through `B1, B2`,
/// or emits `22200` through `C1..C4`.
fn teddy_bear() -> Result<ParamHmm, ZooError> {
    Ok(ParamHmm::new(
        &["0", "1", "2"],
        &["A", "B1", "B2", "C1", "C2", "C3", "C4"],
        &["p", "q"],
        vec![
            edge("A", "0", "A", "1-p-q")?,
            edge("A", "1", "B1", "p")?,
            edge("B1", "1", "B2", "1")?,
            edge("B2", "1", "A", "1")?,
            edge("A", "2", "C1", "q")?,
            edge("C1", "2", "C2", "1")?,
            edge("C2", "2", "C3", "1")?,
            edge("C3", "0", "C4", "1")?,
            edge("C4", "0", "A", "1")?,
        ],
        Initial::Stationary,
        meta(Some(Order::Infinite), Some(2), true, 1),
    )?)
}

fn sns() -> Result<ParamHmm, ZooError> {
    Ok(ParamHmm::new(
        &["0", "1"],
        &["A", "B"],
        &["p", "q"],
        vec![
            edge("A", "0", "A", "1-p")?,
            edge("A", "0", "B", "p")?,
            edge("B", "0", "B", "1-q")?,
            edge("B", "1", "A", "q")?,
        ],
        Initial::Stationary,
        meta(Some(Order::Infinite), None, false, 1),
    )?)
}

fn two_coins() -> Result<ParamHmm, ZooError> {
    Ok(ParamHmm::new(
        &["0", "1"],
        &["A", "B"],
        &["q", "p1", "p2"],
        vec![
            edge("A", "0", "A", "1-p1")?,
            edge("A", "1", "A", "p1")?,
            edge("B", "0", "B", "1-p2")?,
            edge("B", "1", "B", "p2")?,
        ],
        Initial::Explicit(vec![parse_expr("q")?, parse_expr("1-q")?]),
        meta(Some(Order::Infinite), None, true, 2),
    )?)
}

fn get(theta: &ParamPoint, name: &str) -> Result<f64, ZooError> {
    theta
        .get(name)
        .ok_or_else(|| ZooError::Expr(ExprError::UnboundParameter(name.to_string())))
}

fn vector(v: Vec<f64>) -> RefValue {
    RefValue::Vector(DVector::from_vec(v))
}

/// Number of terms in the L-indexed reference curves.
pub const REFERENCE_CURVE_LEN: usize = 30;
/// Number of terms in the n-indexed SNS emission references (n = 0..=20).
pub const SNS_REFERENCE_N: usize = 20;

/// Closed-form values available for `entry` at `theta`.
pub fn reference_values(entry: &ZooEntry, theta: &ParamPoint) -> Result<BTreeMap<String, RefValue>, ZooError> {
    let mut out = BTreeMap::new();
    match &entry.model {
        ZooModel::BiasedCoin => {
            let p = get(theta, "p")?;
            out.insert("f".into(), RefValue::Scalar(1.0 / (p * (1.0 - p))));
            out.insert("epsilon".into(), RefValue::Scalar(0.0));
            out.insert("pi".into(), vector(vec![1.0]));
        }
        ZooModel::GoldenMean => {
            let p = get(theta, "p")?;
            out.insert("f".into(), RefValue::Scalar(1.0 / (p * (1.0 - p) * (2.0 - p))));
            out.insert("pi".into(), vector(vec![1.0 / (2.0 - p), (1.0 - p) / (2.0 - p)]));
        }
        ZooModel::MkGoldenMean { m, k } => {
            let p = get(theta, "p")?;
            let (mf, kf) = (*m as f64, *k as f64);
            let z = 1.0 + (mf + kf - 1.0) * p;
            out.insert("f".into(), RefValue::Scalar(1.0 / (p * (1.0 - p) * z)));
            let mut pi = vec![p / z; m + k - 1];
            pi.insert(0, 1.0 / z);
            out.insert("pi".into(), vector(pi));
            out.insert("pr1".into(), RefValue::Scalar(mf * p / z));
            out.insert(
                "pr0_given_1n".into(),
                vector((1..=*m).map(|n| 1.0 / (mf - n as f64 + 1.0)).collect()),
            );
            out.insert(
                "pr1_given_0n".into(),
                vector((1..=*k).map(|n| p / (1.0 + (kf - n as f64) * p)).collect()),
            );
        }
        ZooModel::Even => {
            let p = get(theta, "p")?;
            let a = 1.0 / (p * (1.0 + p) * (1.0 + p));
            let f = 1.0 / (p * (1.0 + p) * (1.0 - p));
            out.insert("f".into(), RefValue::Scalar(f));
            out.insert("epsilon".into(), RefValue::Scalar(a));
            out.insert("pi".into(), vector(vec![1.0 / (1.0 + p), p / (1.0 + p)]));
            let ls = 1..=REFERENCE_CURVE_LEN;
            out.insert(
                "f_L".into(),
                vector(
                    ls.clone()
                        .map(|l| {
                            if l % 2 == 0 {
                                f - p.powi(l as i32 / 2) * a
                            } else {
                                f + p.powi((l as i32 - 1) / 2) * a
                            }
                        })
                        .collect(),
                ),
            );
            out.insert(
                "E_L".into(),
                vector(
                    ls.map(|l| {
                        let delta = if l % 2 == 0 { p.powi(l as i32 / 2) } else { 0.0 };
                        a * (1.0 - delta)
                    })
                    .collect(),
                ),
            );
            out.insert(
                "info_vector".into(),
                vector(vec![
                    2.0 / (p * (1.0 - p) * (1.0 + p) * (1.0 + p)),
                    1.0 / ((1.0 + p) * (1.0 - p)),
                    1.0 / (p * (1.0 - p)),
                    0.0,
                ]),
            );
            out.insert(
                "eigenvalues".into(),
                vector(vec![1.0, -p, p.sqrt(), -p.sqrt()]),
            );
        }
        ZooModel::TeddyBear => {
            let p = get(theta, "p")?;
            let q = get(theta, "q")?;
            let gamma = 1.0 / ((1.0 - p - q) * (1.0 + 2.0 * p + 4.0 * q));
            out.insert(
                "f".into(),
                RefValue::Matrix(DMatrix::from_row_slice(
                    2,
                    2,
                    &[gamma * (1.0 - q) / p, gamma, gamma, gamma * (1.0 - p) / q],
                )),
            );
            let z = 1.0 + 2.0 * p + 4.0 * q;
            out.insert(
                "pi".into(),
                vector([1.0, p, p, q, q, q, q].iter().map(|v| v / z).collect()),
            );
        }
        ZooModel::Sns => {
            let p = get(theta, "p")?;
            let q = get(theta, "q")?;
            out.insert("pi".into(), vector(vec![q / (p + q), p / (p + q)]));
            out.insert("pr0_start".into(), RefValue::Scalar((p + q - p * q) / (p + q)));
            out.insert(
                "f_pp_start".into(),
                RefValue::Scalar(q.powi(3) / (p * (p + q).powi(2) * (p + q - p * q))),
            );
            let ns = 0..=SNS_REFERENCE_N;
            let (a, b) = (1.0 - q, 1.0 - p);
            let den0 = |n: i32| p * p * a.powi(n) - q * q * b.powi(n);
            let den1 = |n: i32| p * a.powi(n) - q * b.powi(n);
            out.insert(
                "pr0_given_0n".into(),
                vector(
                    ns.clone()
                        .map(|n| {
                            let n = n as i32;
                            (p * p * a.powi(n + 1) - q * q * b.powi(n + 1)) / den0(n)
                        })
                        .collect(),
                ),
            );
            out.insert(
                "pr1_given_0n".into(),
                vector(
                    ns.clone()
                        .map(|n| {
                            let n = n as i32;
                            (p * p * q * a.powi(n) - p * q * q * b.powi(n)) / den0(n)
                        })
                        .collect(),
                ),
            );
            out.insert(
                "pr0_given_10n".into(),
                vector(
                    ns.clone()
                        .map(|n| {
                            let n = n as i32;
                            (p * a.powi(n + 1) - q * b.powi(n + 1)) / den1(n)
                        })
                        .collect(),
                ),
            );
            out.insert(
                "pr1_given_10n".into(),
                vector(
                    ns.clone()
                        .map(|n| {
                            let n = n as i32;
                            (p * q * a.powi(n) - p * q * b.powi(n)) / den1(n)
                        })
                        .collect(),
                ),
            );
            out.insert(
                "pi_10n".into(),
                vector(
                    ns.map(|n| {
                        let n = n as i32;
                        p * q * (p * a.powi(n) - q * b.powi(n)) / ((p + q) * (p - q))
                    })
                    .collect(),
                ),
            );
        }
        ZooModel::TwoCoins => {
            let q = get(theta, "q")?;
            let p1 = get(theta, "p1")?;
            let p2 = get(theta, "p2")?;
            out.insert("pr1_start".into(), RefValue::Scalar(q * p1 + (1.0 - q) * p2));
        }
        ZooModel::OverparamEven { g } => {
            let gv = g.eval(theta)?;
            let gamma = 1.0 / (gv * (1.0 + gv) * (1.0 - gv));
            let names = entry.hmm.parameters();
            let grad = DVector::from_vec(
                names
                    .iter()
                    .map(|n| g.diff(n).eval(theta))
                    .collect::<Result<Vec<_>, _>>()?,
            );
            out.insert("f".into(), RefValue::Matrix(&grad * grad.transpose() * gamma));
            out.insert("gamma".into(), RefValue::Scalar(gamma));
            out.insert("nonzero_eigenvalue".into(), RefValue::Scalar(gamma * grad.norm_squared()));
        }
    }
    Ok(out)
}

/// Single reference value, or `NotAvailable`.
pub fn reference_value(entry: &ZooEntry, theta: &ParamPoint, key: &str) -> Result<RefValue, ZooError> {
    reference_values(entry, theta)?
        .remove(key)
        .ok_or_else(|| ZooError::NotAvailable(key.to_string()))
}

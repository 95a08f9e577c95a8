//! JSON model files.

use serde::{Deserialize, Serialize};

use seqfisher::expr::parse_expr;
use seqfisher::model::{Initial, Metadata, ModelError, Order, ParamHmm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub alphabet: Vec<String>,
    pub states: Vec<String>,
    #[serde(default)]
    pub parameters: Vec<String>,
    pub initial: InitialSpec,
    pub transitions: Vec<TransitionSpec>,
    #[serde(default, skip_serializing_if = "MetadataSpec::is_empty")]
    pub metadata: MetadataSpec,
}

/// `"stationary"` or one expression per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Keyword(String),
    Explicit(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionSpec {
    pub from: String,
    pub symbol: String,
    pub to: String,
    pub prob: String,
}

/// Markov order: a count or `"infinite"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrderSpec {
    Finite(usize),
    Named(InfiniteTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfiniteTag {
    Infinite,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadataSpec {
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub markov_order: Option<OrderSpec>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub cryptic_order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attractors: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unifilar: Option<bool>,
}

impl MetadataSpec {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("model file: {e}"))
    }

    pub fn to_hmm(&self) -> Result<ParamHmm, ModelError> {
        let initial = match &self.initial {
            InitialSpec::Keyword(k) if k == "stationary" => Initial::Stationary,
            InitialSpec::Keyword(k) => {
                return Err(ModelError::Invalid(format!("initial must be \"stationary\" or a list, got \"{k}\"")))
            }
            InitialSpec::Explicit(v) => {
                Initial::Explicit(v.iter().map(|e| parse_expr(e)).collect::<Result<_, _>>()?)
            }
        };
        let transitions = self
            .transitions
            .iter()
            .map(|t| Ok((t.from.clone(), t.symbol.clone(), t.to.clone(), parse_expr(&t.prob)?)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let m = &self.metadata;
        let metadata = Metadata {
            markov_order: m.markov_order.map(|o| match o {
                OrderSpec::Finite(n) => Order::Finite(n),
                OrderSpec::Named(InfiniteTag::Infinite) => Order::Infinite,
            }),
            cryptic_order: m.cryptic_order,
            unifilar: m.unifilar,
            attractors: m.attractors,
        };
        ParamHmm::new(&self.alphabet, &self.states, &self.parameters, transitions, initial, metadata)
    }

    pub fn from_hmm(hmm: &ParamHmm) -> Self {
        let initial = match hmm.initial() {
            Initial::Stationary => InitialSpec::Keyword("stationary".into()),
            Initial::Explicit(v) => InitialSpec::Explicit(v.iter().map(|e| e.to_string()).collect()),
        };
        let transitions = hmm
            .transitions()
            .iter()
            .map(|t| TransitionSpec {
                from: hmm.states()[t.from].clone(),
                symbol: hmm.alphabet()[t.symbol].clone(),
                to: hmm.states()[t.to].clone(),
                prob: t.prob.to_string(),
            })
            .collect();
        let m = hmm.metadata();
        ModelFile {
            alphabet: hmm.alphabet().to_vec(),
            states: hmm.states().to_vec(),
            parameters: hmm.parameters().to_vec(),
            initial,
            transitions,
            metadata: MetadataSpec {
                markov_order: m.markov_order.map(|o| match o {
                    Order::Finite(n) => OrderSpec::Finite(n),
                    Order::Infinite => OrderSpec::Named(InfiniteTag::Infinite),
                }),
                cryptic_order: m.cryptic_order,
                attractors: m.attractors,
                unifilar: m.unifilar,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqfisher::expr::ParamPoint;
    use seqfisher::zoo::{get_model, NAMES};

    const EVEN: &str = r#"{
        "alphabet": ["0", "1"],
        "states": ["A", "B"],
        "parameters": ["p"],
        "initial": "stationary",
        "transitions": [
            {"from": "A", "symbol": "0", "to": "A", "prob": "1-p"},
            {"from": "A", "symbol": "1", "to": "B", "prob": "p"},
            {"from": "B", "symbol": "1", "to": "A", "prob": "1"}
        ],
        "metadata": {"M": "infinite", "K": 1}
    }"#;

    #[test]
    fn parses_and_builds() {
        let file = ModelFile::from_json(EVEN).unwrap();
        let hmm = file.to_hmm().unwrap();
        let theta = ParamPoint::from_pairs([("p", 0.5)]).unwrap();
        let pr = hmm.word_probability(&theta, &["1", "1"]).unwrap();
        assert!((pr - 0.5).abs() < 1e-15);
        assert_eq!(hmm.metadata().markov_order, Some(Order::Infinite));
        assert_eq!(hmm.metadata().cryptic_order, Some(1));
    }

    #[test]
    fn zoo_models_round_trip() {
        for name in NAMES {
            let e = get_model(name, &[]).unwrap();
            let file = ModelFile::from_hmm(&e.hmm);
            let text = serde_json::to_string(&file).unwrap();
            let back = ModelFile::from_json(&text).unwrap().to_hmm().unwrap();
            let a = e.hmm.instantiate(&e.canonical).unwrap();
            let b = back.instantiate(&e.canonical).unwrap();
            for x in 0..a.n_symbols() {
                assert!((&a.labeled[x] - &b.labeled[x]).amax() < 1e-15, "{name}");
            }
            assert!((&a.initial - &b.initial).amax() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(ModelFile::from_json(r#"{"alphabet": []}"#).is_err());
        let dup = EVEN.replace(r#""prob": "1"}"#, r#""prob": "1"}, {"from": "B", "symbol": "1", "to": "A", "prob": "0"}"#);
        assert!(matches!(
            ModelFile::from_json(&dup).unwrap().to_hmm(),
            Err(ModelError::DuplicateTransition { .. })
        ));
        let bad_expr = EVEN.replace("1-p", "1-*p");
        assert!(matches!(ModelFile::from_json(&bad_expr).unwrap().to_hmm(), Err(ModelError::Expr(_))));
        let bad_init = EVEN.replace(r#""stationary""#, r#""uniform""#);
        assert!(ModelFile::from_json(&bad_init).unwrap().to_hmm().is_err());
    }
}

//! CSV export of Fisher-information curves, and the matching reader.

use nalgebra::DMatrix;

use crate::expr::ParamPoint;
use crate::inforate::{EntropyCurve, FisherCurve, ZeroModeSplit};

/// Upper-triangle index pairs `(m, n)` with `m <= n`.
fn pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|m| (m..k).map(move |n| (m, n))).collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header line, one row per `L`. Columns are `f[m;n]`, `F[m;n]`, `E[m;n]`
/// (when the asymptotic rate exists), then `fzero`/`frelax` with a split and
/// `h` with an entropy curve. Floats carry 17 significant digits.
pub fn curve_csv(
    parameters: &[String],
    theta: &ParamPoint,
    curve: &FisherCurve,
    split: Option<&ZeroModeSplit>,
    entropy: Option<&EntropyCurve>,
) -> String {
    let k = parameters.len();
    let idx = pairs(k);
    let label = |prefix: &str| -> Vec<String> {
        idx.iter()
            .map(|&(m, n)| format!("{prefix}[{};{}]", parameters[m], parameters[n]))
            .collect()
    };
    let theta_text: Vec<String> = parameters
        .iter()
        .map(|p| format!("{p}={}", theta.get(p).map_or("?".into(), fmt)))
        .collect();
    let mut out = format!("# parameters: {}; theta: {}\n", parameters.join(" "), theta_text.join(" "));
    let mut header = vec!["L".to_string()];
    header.extend(label("f"));
    header.extend(label("F"));
    if curve.excess_l.is_some() {
        header.extend(label("E"));
    }
    if split.is_some() {
        header.extend(label("fzero"));
        header.extend(label("frelax"));
    }
    if entropy.is_some() {
        header.push("h".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    let cells = |m: &DMatrix<f64>| idx.iter().map(|&(a, b)| fmt(m[(a, b)])).collect::<Vec<_>>();
    for l in 0..curve.myopic.len() {
        let mut row = vec![(l + 1).to_string()];
        row.extend(cells(&curve.myopic[l]));
        row.extend(cells(&curve.cumulative[l]));
        if let Some(e) = &curve.excess_l {
            row.extend(cells(&e[l]));
        }
        if let Some(s) = split {
            row.extend(cells(&s.zero[l]));
            row.extend(cells(&s.relax[l]));
        }
        if let Some(h) = entropy {
            row.push(fmt(h.myopic[l]));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Curve read back from [`curve_csv`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCurve {
    pub parameters: Vec<String>,
    pub myopic: Vec<DMatrix<f64>>,
    pub cumulative: Vec<DMatrix<f64>>,
    pub excess_l: Option<Vec<DMatrix<f64>>>,
    pub zero: Option<Vec<DMatrix<f64>>>,
    pub relax: Option<Vec<DMatrix<f64>>>,
    pub entropy: Option<Vec<f64>>,
}

pub fn parse_curve_csv(text: &str) -> Result<ParsedCurve, String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let header: Vec<&str> = lines.next().ok_or("missing header")?.split(',').collect();
    if header.first() != Some(&"L") {
        return Err("header must start with L".into());
    }
    // Recover parameter names from the f[..] columns.
    let mut parameters = Vec::new();
    for h in &header {
        if let Some(inner) = h.strip_prefix("f[").and_then(|s| s.strip_suffix(']')) {
            let (m, n) = inner.split_once(';').ok_or("bad column label")?;
            if m == n {
                parameters.push(m.to_string());
            }
        }
    }
    let k = parameters.len();
    let pos = |name: &str| parameters.iter().position(|p| p == name);
    let mut groups: std::collections::BTreeMap<String, Vec<DMatrix<f64>>> = Default::default();
    let mut entropy = Vec::new();
    let has_h = header.contains(&"h");
    for (row_no, line) in lines.enumerate() {
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != header.len() {
            return Err(format!("row {} has {} cells", row_no + 1, vals.len()));
        }
        let mut mats: std::collections::BTreeMap<String, DMatrix<f64>> = Default::default();
        for (h, v) in header.iter().zip(&vals).skip(1) {
            let x: f64 = v.parse().map_err(|e| format!("{h}: {e}"))?;
            if *h == "h" {
                entropy.push(x);
                continue;
            }
            let (prefix, rest) = h.split_once('[').ok_or("bad column label")?;
            let (m, n) = rest.trim_end_matches(']').split_once(';').ok_or("bad column label")?;
            let (m, n) = (pos(m).ok_or("unknown parameter")?, pos(n).ok_or("unknown parameter")?);
            let mat = mats.entry(prefix.to_string()).or_insert_with(|| DMatrix::zeros(k, k));
            mat[(m, n)] = x;
            mat[(n, m)] = x;
        }
        for (prefix, mat) in mats {
            groups.entry(prefix).or_default().push(mat);
        }
    }
    Ok(ParsedCurve {
        parameters,
        myopic: groups.remove("f").unwrap_or_default(),
        cumulative: groups.remove("F").unwrap_or_default(),
        excess_l: groups.remove("E"),
        zero: groups.remove("fzero"),
        relax: groups.remove("frelax"),
        entropy: has_h.then_some(entropy),
    })
}

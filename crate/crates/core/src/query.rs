//! Verification queries.
//!
//! A [`Query`] asks whether some input in a box drives the outputs into a
//! region described by a conjunction of `c·y ≤ d` constraints. A satisfying
//! input is a counterexample (SAT); UNSAT certifies the property over the box.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Network;

/// Box tolerance used when validating witnesses.
pub const TAU_BOX: f64 = 1e-6;
/// Output-constraint tolerance used when validating witnesses.
pub const TAU_OUT: f64 = 1e-6;

/// `coeffs · y ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConstraint {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl OutputConstraint {
    pub fn new(coeffs: Vec<f64>, rhs: f64) -> Self {
        OutputConstraint { coeffs, rhs }
    }

    pub fn slack(&self, y: &[f64]) -> f64 {
        self.rhs - crate::model::dot(&self.coeffs, y)
    }

    pub fn holds(&self, y: &[f64], tol: f64) -> bool {
        self.slack(y) >= -tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub label: String,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub constraints: Vec<OutputConstraint>,
}

impl Query {
    pub fn new(
        label: impl Into<String>,
        input_lower: Vec<f64>,
        input_upper: Vec<f64>,
        constraints: Vec<OutputConstraint>,
    ) -> Result<Self> {
        if input_lower.len() != input_upper.len() {
            return Err(Error::Dimension("input box bounds differ in length".into()));
        }
        if let Some(i) = (0..input_lower.len()).find(|&i| !(input_lower[i] <= input_upper[i])) {
            return Err(Error::EmptyBox(format!(
                "input {i}: [{}, {}]",
                input_lower[i], input_upper[i]
            )));
        }
        if constraints.is_empty() {
            return Err(Error::InvalidArgument(
                "query has no output constraint".into(),
            ));
        }
        Ok(Query {
            label: label.into(),
            input_lower,
            input_upper,
            constraints,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_lower.len()
    }

    /// The property text that [`parse_property`] reads back into this query.
    pub fn to_property_text(&self) -> String {
        let mut out = format!("label {}\n", self.label);
        for i in 0..self.input_dim() {
            out += &format!(
                "in {i} >= {}\nin {i} <= {}\n",
                self.input_lower[i], self.input_upper[i]
            );
        }
        for c in &self.constraints {
            let coeffs: Vec<String> = c.coeffs.iter().map(|v| v.to_string()).collect();
            out += &format!("out {} <= {}\n", coeffs.join(" "), c.rhs);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Sat(Vec<f64>),
    Unsat,
    Timeout,
}

impl Outcome {
    pub fn kind(&self) -> &'static str {
        match self {
            Outcome::Sat(_) => "SAT",
            Outcome::Unsat => "UNSAT",
            Outcome::Timeout => "TIMEOUT",
        }
    }

    pub fn is_solved(&self) -> bool {
        !matches!(self, Outcome::Timeout)
    }

    pub fn witness(&self) -> Option<&[f64]> {
        match self {
            Outcome::Sat(x) => Some(x),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    /// Nodes processed.
    pub iterations: u64,
    /// Decision splits taken.
    pub splits: u64,
    pub wall_time: Duration,
}

/// Parses the line-based property format:
///
/// ```text
/// # comment
/// label my-query
/// in 0 >= -0.5
/// in 1 <= 0.25
/// out 1 -1 <= 0
/// normalize
/// ```
///
/// Unstated input bounds default to the network's. `normalize` declares that
/// the bounds and thresholds are in raw units and converts them with the
/// network's NNet normalization constants.
pub fn parse_property(text: &str, net: &Network) -> Result<Query> {
    let n = net.input_dim();
    let mut lower: Vec<Option<f64>> = vec![None; n];
    let mut upper: Vec<Option<f64>> = vec![None; n];
    let mut constraints = Vec::new();
    let mut label = String::from("query");
    let mut normalize = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::parse(line_no, format!("expected a number, found {s:?}")))
        };
        match tokens[0] {
            "label" => label = tokens[1..].join(" "),
            "normalize" => normalize = true,
            "in" => {
                if tokens.len() != 4 {
                    return Err(Error::parse(line_no, "expected `in <index> >=|<= <value>`"));
                }
                let i: usize = tokens[1].parse().map_err(|_| {
                    Error::parse(line_no, format!("bad input index {:?}", tokens[1]))
                })?;
                if i >= n {
                    return Err(Error::parse(
                        line_no,
                        format!("input index {i} out of range for {n} inputs"),
                    ));
                }
                let v = num(tokens[3])?;
                match tokens[2] {
                    ">=" => lower[i] = Some(v),
                    "<=" => upper[i] = Some(v),
                    op => return Err(Error::parse(line_no, format!("unknown relation {op:?}"))),
                }
            }
            "out" => {
                let m = net.output_dim();
                if tokens.len() != m + 3 {
                    return Err(Error::parse(
                        line_no,
                        format!(
                            "expected {m} output coefficients, found {}",
                            tokens.len().saturating_sub(3)
                        ),
                    ));
                }
                if tokens[m + 1] != "<=" {
                    return Err(Error::parse(
                        line_no,
                        format!("unknown relation {:?}, only <= is supported", tokens[m + 1]),
                    ));
                }
                let coeffs = tokens[1..=m]
                    .iter()
                    .map(|t| num(t))
                    .collect::<Result<Vec<_>>>()?;
                constraints.push(OutputConstraint::new(coeffs, num(tokens[m + 2])?));
            }
            kw => return Err(Error::parse(line_no, format!("unknown keyword {kw:?}"))),
        }
    }

    if normalize {
        let Some(norm) = net.normalization() else {
            return Err(Error::InvalidArgument(
                "`normalize` requested but the network has no normalization constants".into(),
            ));
        };
        for i in 0..n {
            let map = |v: f64| (v - norm.input_mean[i]) / norm.input_range[i];
            lower[i] = lower[i].map(map);
            upper[i] = upper[i].map(map);
        }
        // c·(R·y + M) <= d  <=>  (R·c)·y <= d − M·Σc
        for c in &mut constraints {
            let sum: f64 = c.coeffs.iter().sum();
            c.rhs -= norm.output_mean * sum;
            c.coeffs.iter_mut().for_each(|v| *v *= norm.output_range);
        }
    }

    let lower: Vec<f64> = (0..n)
        .map(|i| lower[i].unwrap_or(net.input_lower()[i]))
        .collect();
    let upper: Vec<f64> = (0..n)
        .map(|i| upper[i].unwrap_or(net.input_upper()[i]))
        .collect();
    if constraints.is_empty() {
        return Err(Error::InvalidArgument(
            "property has no `out` constraint".into(),
        ));
    }
    Query::new(label, lower, upper, constraints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    #[default]
    Argmax,
    Argmin,
}

impl std::str::FromStr for Comparator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Comparator::Argmax),
            "argmin" => Ok(Comparator::Argmin),
            other => Err(Error::InvalidArgument(format!(
                "unknown comparator {other:?}"
            ))),
        }
    }
}

impl Comparator {
    /// Index of the predicted label, or the first tying pair.
    pub fn label(self, y: &[f64]) -> Result<usize> {
        let mut best = 0;
        for j in 1..y.len() {
            let better = match self {
                Comparator::Argmax => y[j] > y[best],
                Comparator::Argmin => y[j] < y[best],
            };
            if better {
                best = j;
            }
        }
        let scale = 1.0 + y[best].abs();
        if let Some(j) =
            (0..y.len()).find(|&j| j != best && (y[j] - y[best]).abs() <= 1e-12 * scale)
        {
            return Err(Error::Tie(best.min(j), best.max(j)));
        }
        Ok(best)
    }
}

/// One query per adversarial label `j ≠ t`, each over the ℓ∞ ball of radius
/// `delta` around `x0` clipped to the network's input box. SAT on any member
/// means the prediction at `x0` is not robust.
pub fn make_robustness_queries(
    net: &Network,
    x0: &[f64],
    delta: f64,
    comparator: Comparator,
    label: &str,
) -> Result<Vec<Query>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let y = net.evaluate(x0)?;
    let t = comparator.label(&y)?;
    let lower: Vec<f64> = x0
        .iter()
        .zip(net.input_lower())
        .map(|(x, l)| (x - delta).max(*l))
        .collect();
    let upper: Vec<f64> = x0
        .iter()
        .zip(net.input_upper())
        .map(|(x, u)| (x + delta).min(*u))
        .collect();
    (0..y.len())
        .filter(|&j| j != t)
        .map(|j| {
            let mut coeffs = vec![0.0; y.len()];
            match comparator {
                Comparator::Argmax => {
                    coeffs[t] = 1.0;
                    coeffs[j] = -1.0;
                }
                Comparator::Argmin => {
                    coeffs[j] = 1.0;
                    coeffs[t] = -1.0;
                }
            }
            Query::new(
                format!("{label}-d{delta}-j{j}"),
                lower.clone(),
                upper.clone(),
                vec![OutputConstraint::new(coeffs, 0.0)],
            )
        })
        .collect()
}

/// One row of a robustness manifest: `x0... ; delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessInstance {
    pub x0: Vec<f64>,
    pub delta: f64,
}

pub fn parse_robustness_manifest(text: &str) -> Result<Vec<RobustnessInstance>> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((point, delta)) = line.split_once(';') else {
            return Err(Error::parse(line_no, "expected `x0... ; delta`"));
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::parse(line_no, format!("expected a number, found {s:?}")))
        };
        let x0 = point
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(num)
            .collect::<Result<Vec<_>>>()?;
        if x0.is_empty() {
            return Err(Error::parse(line_no, "empty reference point"));
        }
        rows.push(RobustnessInstance {
            x0,
            delta: num(delta.trim())?,
        });
    }
    Ok(rows)
}

/// True iff `x` lies in the query box and satisfies every output constraint
/// on the exact forward pass, both within tolerance.
pub fn check_witness(net: &Network, q: &Query, x: &[f64]) -> bool {
    if x.len() != q.input_dim() || x.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let in_box = x
        .iter()
        .zip(q.input_lower.iter().zip(&q.input_upper))
        .all(|(v, (l, u))| *v >= l - TAU_BOX && *v <= u + TAU_BOX);
    if !in_box {
        return false;
    }
    match net.evaluate(x) {
        Ok(y) => q.constraints.iter().all(|c| c.holds(&y, TAU_OUT)),
        Err(_) => false,
    }
}

//! Brute-force ground truth: every activation pattern as an exact LP over
//! the inputs.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::Network;
use crate::numeric::{solve_lp, LinearConstraint, LpProblem, LpResult, Relation};
use crate::query::{Outcome, Query, Verdict};

/// Largest ReLU count [`brute_force_verify`] accepts.
pub const ORACLE_MAX_RELUS: usize = 20;

/// An affine function of the inputs.
#[derive(Debug, Clone)]
struct Affine {
    coeffs: Vec<f64>,
    constant: f64,
}

impl Affine {
    fn zero(n: usize) -> Self {
        Affine {
            coeffs: vec![0.0; n],
            constant: 0.0,
        }
    }

    fn input(n: usize, i: usize) -> Self {
        let mut a = Affine::zero(n);
        a.coeffs[i] = 1.0;
        a
    }

    fn combine(weights: &[f64], bias: f64, terms: &[Affine], n: usize) -> Self {
        let mut out = Affine::zero(n);
        out.constant = bias;
        for (w, t) in weights.iter().zip(terms) {
            for (o, c) in out.coeffs.iter_mut().zip(&t.coeffs) {
                *o += w * c;
            }
            out.constant += w * t.constant;
        }
        out
    }

    /// `self ≤ 0` or `self ≥ 0` as a row over the input variables.
    fn sign_row(&self, relation: Relation) -> LinearConstraint {
        LinearConstraint::new(
            self.coeffs
                .iter()
                .copied()
                .enumerate()
                .filter(|(_, c)| *c != 0.0)
                .collect(),
            relation,
            -self.constant,
        )
    }
}

struct Enumeration<'a> {
    net: &'a Network,
    q: &'a Query,
    lps: u64,
}

impl Enumeration<'_> {
    fn feasible(&mut self, rows: &[LinearConstraint]) -> Result<Option<Vec<f64>>> {
        self.lps += 1;
        let mut p = LpProblem::new(self.q.input_lower.clone(), self.q.input_upper.clone());
        for r in rows {
            p.add(r.clone());
        }
        Ok(match solve_lp(&p)? {
            LpResult::Feasible { assignment, .. } => Some(assignment),
            LpResult::Infeasible => None,
        })
    }

    /// Depth-first over neurons; a prefix whose sign constraints are already
    /// infeasible cuts every completion.
    fn search(
        &mut self,
        layer: usize,
        index: usize,
        prev: &[Affine],
        cur: &mut Vec<Affine>,
        rows: &mut Vec<LinearConstraint>,
    ) -> Result<Option<Vec<f64>>> {
        let layers = self.net.layers();
        let n = self.net.input_dim();
        let l = &layers[layer];
        if !l.has_relu() {
            let outputs: Vec<Affine> = (0..l.outputs())
                .map(|r| Affine::combine(l.row(r), l.bias()[r], prev, n))
                .collect();
            let mark = rows.len();
            for c in &self.q.constraints {
                let y = Affine::combine(&c.coeffs, -c.rhs, &outputs, n);
                rows.push(y.sign_row(Relation::Le));
            }
            let found = self.feasible(rows)?;
            rows.truncate(mark);
            return Ok(found);
        }
        if index == l.outputs() {
            let mut next = Vec::with_capacity(layers[layer + 1].outputs());
            let done = std::mem::take(cur);
            let found = self.search(layer + 1, 0, &done, &mut next, rows)?;
            *cur = done;
            return Ok(found);
        }
        let pre = Affine::combine(l.row(index), l.bias()[index], prev, n);
        for active in [true, false] {
            let relation = if active { Relation::Ge } else { Relation::Le };
            rows.push(pre.sign_row(relation));
            if self.feasible(rows)?.is_some() {
                cur.push(if active { pre.clone() } else { Affine::zero(n) });
                let found = self.search(layer, index + 1, prev, cur, rows)?;
                cur.pop();
                if found.is_some() {
                    rows.pop();
                    return Ok(found);
                }
            }
            rows.pop();
        }
        Ok(None)
    }
}

/// SAT iff some activation pattern's exact LP admits an input in the box
/// meeting every output constraint. `iterations` counts LPs solved.
pub fn brute_force_verify(net: &Network, q: &Query) -> Result<Verdict> {
    if net.relu_count() > ORACLE_MAX_RELUS {
        return Err(Error::OracleGuard(net.relu_count(), ORACLE_MAX_RELUS));
    }
    if q.input_dim() != net.input_dim()
        || q.constraints
            .iter()
            .any(|c| c.coeffs.len() != net.output_dim())
    {
        return Err(Error::Dimension("query does not match the network".into()));
    }
    let start = Instant::now();
    let n = net.input_dim();
    let inputs: Vec<Affine> = (0..n).map(|i| Affine::input(n, i)).collect();
    let mut e = Enumeration { net, q, lps: 0 };
    let found = e.search(0, 0, &inputs, &mut Vec::new(), &mut Vec::new())?;
    let outcome = match found {
        Some(x) => Outcome::Sat(
            x.iter()
                .zip(q.input_lower.iter().zip(&q.input_upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
        ),
        None => Outcome::Unsat,
    };
    Ok(Verdict {
        outcome,
        iterations: e.lps,
        splits: 0,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_network, Layer};
    use crate::query::{check_witness, OutputConstraint};

    fn toy_query(rhs: f64) -> Query {
        Query::new(
            "toy",
            vec![-1.0, 0.0],
            vec![1.0, 1.0],
            vec![OutputConstraint::new(vec![1.0], rhs)],
        )
        .unwrap()
    }

    #[test]
    fn example_one_is_sat() {
        let net = toy_network();
        let q = toy_query(-0.5);
        let v = brute_force_verify(&net, &q).unwrap();
        assert!(check_witness(&net, &q, v.outcome.witness().unwrap()));
    }

    #[test]
    fn below_minus_two_is_unsat() {
        let v = brute_force_verify(&toy_network(), &toy_query(-2.5)).unwrap();
        assert_eq!(v.outcome, Outcome::Unsat);
    }

    #[test]
    fn linear_network_needs_one_lp() {
        let net = Network::new(
            vec![Layer::new(vec![vec![1.0, 1.0]], vec![0.0], false).unwrap()],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            None,
        )
        .unwrap();
        let q = Query::new(
            "lin",
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![OutputConstraint::new(vec![-1.0], -1.5)],
        )
        .unwrap();
        let v = brute_force_verify(&net, &q).unwrap();
        assert_eq!(v.iterations, 1);
        assert!(check_witness(&net, &q, v.outcome.witness().unwrap()));
    }

    #[test]
    fn guard_rejects_large_networks() {
        let layer = Layer::new(vec![vec![1.0]; 21], vec![0.0; 21], true).unwrap();
        let out = Layer::new(vec![vec![1.0; 21]], vec![0.0], false).unwrap();
        let net = Network::new(vec![layer, out], vec![0.0], vec![1.0], None).unwrap();
        let q = Query::new(
            "big",
            vec![0.0],
            vec![1.0],
            vec![OutputConstraint::new(vec![1.0], 0.0)],
        )
        .unwrap();
        assert!(matches!(
            brute_force_verify(&net, &q),
            Err(Error::OracleGuard(21, 20))
        ));
    }
}

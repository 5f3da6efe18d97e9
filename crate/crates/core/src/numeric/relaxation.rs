//! LP relaxation of a search node and LP-based bound tightening.
//!
//! Variables: every input, every pre-activation, and every ReLU
//! post-activation. Affine layers are equality rows. A ReLU contributes
//! `post = pre` when active, `post = 0` when inactive, and the triangle
//! relaxation otherwise. The query's output constraints are part of the LP.

use crate::error::{Error, Result};
use crate::model::{Network, NeuronId};
use crate::query::OutputConstraint;

use super::simplex::{LinearConstraint, LpError, LpProblem, Objective, Relation, Simplex};
use super::{propagate_with, BoundsMap, ConflictReason, NodeBounds, Phase, PhaseStatus, Phases};

/// `post ≥ 0`, `post ≥ pre`, `post ≤ slope·(pre − lower)` with
/// `slope = upper / (upper − lower)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleRelaxation {
    pub lower: f64,
    pub upper: f64,
    pub slope: f64,
}

pub fn triangle_relaxation(lower: f64, upper: f64) -> Result<TriangleRelaxation> {
    if !(lower < 0.0 && upper > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "triangle relaxation needs lower < 0 < upper, got [{lower}, {upper}]; the neuron should be fixed"
        )));
    }
    Ok(TriangleRelaxation {
        lower,
        upper,
        slope: upper / (upper - lower),
    })
}

impl TriangleRelaxation {
    /// Right-hand side of the upper face at `pre`.
    pub fn upper_face(&self, pre: f64) -> f64 {
        self.slope * (pre - self.lower)
    }

    pub fn contains(&self, pre: f64, post: f64, tol: f64) -> bool {
        post >= -tol && post >= pre - tol && post <= self.upper_face(pre) + tol
    }

    /// The three constraints over LP variables `pre` and `post`.
    pub fn constraints(&self, pre: usize, post: usize) -> [LinearConstraint; 3] {
        [
            LinearConstraint::new(vec![(post, 1.0)], Relation::Ge, 0.0),
            LinearConstraint::new(vec![(post, 1.0), (pre, -1.0)], Relation::Ge, 0.0),
            LinearConstraint::new(
                vec![(post, 1.0), (pre, -self.slope)],
                Relation::Le,
                -self.slope * self.lower,
            ),
        ]
    }
}

/// LP variable index of every network quantity.
#[derive(Debug, Clone)]
pub struct VarMap {
    pub inputs: Vec<usize>,
    pub pre: Vec<Vec<usize>>,
    /// For the linear output layer this repeats `pre`.
    pub post: Vec<Vec<usize>>,
}

impl VarMap {
    pub fn pre_of(&self, id: NeuronId) -> usize {
        self.pre[id.layer][id.index]
    }

    pub fn post_of(&self, id: NeuronId) -> usize {
        self.post[id.layer][id.index]
    }

    pub fn outputs(&self) -> &[usize] {
        &self.pre[self.pre.len() - 1]
    }
}

#[derive(Debug, Clone)]
pub struct Relaxation {
    pub problem: LpProblem,
    pub vars: VarMap,
}

impl Relaxation {
    pub fn inputs_of(&self, assignment: &[f64]) -> Vec<f64> {
        self.vars.inputs.iter().map(|&v| assignment[v]).collect()
    }
}

/// Builds the node LP from `bounds`. Variable boxes come from the bounds, so
/// they must already reflect `phases`.
pub fn build_relaxation(
    net: &Network,
    bounds: &BoundsMap,
    phases: &Phases,
    outputs: &[OutputConstraint],
) -> Relaxation {
    let mut p = LpProblem::new(Vec::new(), Vec::new());
    let inputs: Vec<usize> = (0..net.input_dim())
        .map(|i| p.add_variable(bounds.input_lower[i], bounds.input_upper[i]))
        .collect();
    let mut pre_vars: Vec<Vec<usize>> = Vec::new();
    let mut post_vars: Vec<Vec<usize>> = Vec::new();
    let mut flat = 0;
    for (l, layer) in net.layers().iter().enumerate() {
        let prev = if l == 0 { &inputs } else { &post_vars[l - 1] };
        let mut pre = Vec::with_capacity(layer.outputs());
        for r in 0..layer.outputs() {
            let z = p.add_variable(bounds.pre_lower[l][r], bounds.pre_upper[l][r]);
            let mut coeffs: Vec<(usize, f64)> = layer
                .row(r)
                .iter()
                .zip(prev)
                .filter(|(w, _)| **w != 0.0)
                .map(|(&w, &v)| (v, w))
                .collect();
            coeffs.push((z, -1.0));
            p.add(LinearConstraint::new(
                coeffs,
                Relation::Eq,
                -layer.bias()[r],
            ));
            pre.push(z);
        }
        let post = if layer.has_relu() {
            let mut post = Vec::with_capacity(layer.outputs());
            for r in 0..layer.outputs() {
                let (lo, hi) = (bounds.pre_lower[l][r], bounds.pre_upper[l][r]);
                let status = phases.get(flat + r);
                let a = match status {
                    PhaseStatus::Fixed(Phase::Inactive) => p.add_variable(0.0, 0.0),
                    _ if hi <= 0.0 => p.add_variable(0.0, 0.0),
                    PhaseStatus::Fixed(Phase::Active) => {
                        let a = p.add_variable(lo.max(0.0), hi.max(0.0));
                        p.add(LinearConstraint::new(
                            vec![(a, 1.0), (pre[r], -1.0)],
                            Relation::Eq,
                            0.0,
                        ));
                        a
                    }
                    PhaseStatus::Unfixed if lo >= 0.0 => {
                        let a = p.add_variable(lo, hi);
                        p.add(LinearConstraint::new(
                            vec![(a, 1.0), (pre[r], -1.0)],
                            Relation::Eq,
                            0.0,
                        ));
                        a
                    }
                    PhaseStatus::Unfixed => {
                        let a = p.add_variable(0.0, hi);
                        let tri = triangle_relaxation(lo, hi).expect("lo < 0 < hi");
                        for c in tri.constraints(pre[r], a) {
                            p.add(c);
                        }
                        a
                    }
                };
                post.push(a);
            }
            flat += layer.outputs();
            post
        } else {
            pre.clone()
        };
        pre_vars.push(pre);
        post_vars.push(post);
    }
    let out_vars = &pre_vars[pre_vars.len() - 1];
    for c in outputs {
        let coeffs = c
            .coeffs
            .iter()
            .zip(out_vars)
            .filter(|(a, _)| **a != 0.0)
            .map(|(&a, &v)| (v, a))
            .collect();
        p.add(LinearConstraint::new(coeffs, Relation::Le, c.rhs));
    }
    Relaxation {
        problem: p,
        vars: VarMap {
            inputs,
            pre: pre_vars,
            post: post_vars,
        },
    }
}

/// Slack added to every LP-derived bound so float error never cuts off a
/// feasible point.
fn lp_slack(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

/// Minimizes and maximizes every input and every unfixed pre-activation over
/// the node relaxation and intersects the results with `bounds`. The returned
/// map is re-propagated forward so post-activation and downstream bounds
/// reflect the tightened values.
pub fn tighten_bounds_lp(
    net: &Network,
    bounds: &BoundsMap,
    phases: &Phases,
    outputs: &[OutputConstraint],
) -> std::result::Result<NodeBounds, LpError> {
    let relax = build_relaxation(net, bounds, phases, outputs);
    let Some(base) = Simplex::feasible(&relax.problem)? else {
        return Ok(NodeBounds::Conflict(ConflictReason::Relaxation));
    };

    let mut tightened = bounds.clone();
    let range = |var: usize| -> std::result::Result<(f64, f64), LpError> {
        let lo = base
            .clone()
            .optimize(&Objective::minimize(vec![(var, 1.0)]))?;
        let hi = base
            .clone()
            .optimize(&Objective::maximize(vec![(var, 1.0)]))?;
        Ok((lo - lp_slack(lo), hi + lp_slack(hi)))
    };

    for (i, &v) in relax.vars.inputs.iter().enumerate() {
        let (lo, hi) = range(v)?;
        tightened.input_lower[i] = tightened.input_lower[i].max(lo);
        tightened.input_upper[i] = tightened.input_upper[i].min(hi);
    }
    for (flat, id) in net.relus().iter().enumerate() {
        if phases.get(flat) != PhaseStatus::Unfixed {
            continue;
        }
        let (lo, hi) = range(relax.vars.pre_of(*id))?;
        let l = &mut tightened.pre_lower[id.layer][id.index];
        *l = l.max(lo);
        let u = &mut tightened.pre_upper[id.layer][id.index];
        *u = u.min(hi);
    }

    let lower = tightened.input_lower.clone();
    let upper = tightened.input_upper.clone();
    Ok(propagate_with(
        net,
        &lower,
        &upper,
        phases,
        Some(&tightened),
    ))
}

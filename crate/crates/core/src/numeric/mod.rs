//! Bound computation and the LP core.
//!
//! - [`propagate_intervals`]: forward interval arithmetic, clipped by fixed phases
//! - [`tighten_bounds_lp`]: min/max of inputs and unfixed pre-activations over
//!   the node's LP relaxation
//! - [`triangle_relaxation`]: the convex hull of ReLU on `[a, b]`
//! - [`solve_lp`]: dense bounded simplex with Bland's rule
//!
//! An empty node is reported as [`NodeBounds::Conflict`], never as an error.

mod interval;
mod relaxation;
mod simplex;

pub use interval::{output_conflict, propagate_intervals, propagate_with};
pub use relaxation::{
    build_relaxation, tighten_bounds_lp, triangle_relaxation, Relaxation, TriangleRelaxation,
    VarMap,
};
pub use simplex::{
    solve_lp, LinearConstraint, LpError, LpProblem, LpResult, Objective, Relation, Sense, Simplex,
};

use serde::{Deserialize, Serialize};

use crate::model::{Network, NeuronId};

/// Feasibility tolerance of the LP core.
pub const TAU_LP: f64 = 1e-7;

/// A pre-activation bound within this distance of zero decides the phase.
pub const TAU_PHASE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Inactive,
    Active,
}

impl Phase {
    pub fn complement(self) -> Phase {
        match self {
            Phase::Active => Phase::Inactive,
            Phase::Inactive => Phase::Active,
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Active => "A",
            Phase::Inactive => "I",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PhaseStatus {
    #[default]
    Unfixed,
    Fixed(Phase),
}

/// Phase status of every ReLU, indexed by flat ReLU index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Phases(Vec<PhaseStatus>);

impl Phases {
    pub fn unfixed(net: &Network) -> Self {
        Phases(vec![PhaseStatus::Unfixed; net.relu_count()])
    }

    pub fn from_statuses(statuses: Vec<PhaseStatus>) -> Self {
        Phases(statuses)
    }

    pub fn get(&self, flat: usize) -> PhaseStatus {
        self.0[flat]
    }

    pub fn set(&mut self, flat: usize, phase: Phase) {
        self.0[flat] = PhaseStatus::Fixed(phase);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn unfixed_count(&self) -> usize {
        self.0
            .iter()
            .filter(|s| **s == PhaseStatus::Unfixed)
            .count()
    }

    pub fn iter(&self) -> impl Iterator<Item = PhaseStatus> + '_ {
        self.0.iter().copied()
    }

    /// Phase of `id`, treating non-ReLU positions as unfixed.
    pub fn of(&self, net: &Network, id: NeuronId) -> PhaseStatus {
        net.relu_index(id)
            .map_or(PhaseStatus::Unfixed, |k| self.0[k])
    }
}

/// Interval bounds for the inputs and every neuron of every layer.
///
/// `post_*` of a ReLU layer bound the activations; for the linear output layer
/// they equal the pre-activation bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsMap {
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub pre_lower: Vec<Vec<f64>>,
    pub pre_upper: Vec<Vec<f64>>,
    pub post_lower: Vec<Vec<f64>>,
    pub post_upper: Vec<Vec<f64>>,
}

impl BoundsMap {
    pub fn pre(&self, id: NeuronId) -> (f64, f64) {
        (
            self.pre_lower[id.layer][id.index],
            self.pre_upper[id.layer][id.index],
        )
    }

    pub fn post(&self, id: NeuronId) -> (f64, f64) {
        (
            self.post_lower[id.layer][id.index],
            self.post_upper[id.layer][id.index],
        )
    }

    pub fn output(&self) -> (&[f64], &[f64]) {
        let last = self.pre_lower.len() - 1;
        (&self.pre_lower[last], &self.pre_upper[last])
    }

    /// True if every bound of `self` lies within the matching bound of `other`
    /// (up to `tol`).
    pub fn within(&self, other: &BoundsMap, tol: f64) -> bool {
        let inside = |lo: &[f64], hi: &[f64], olo: &[f64], ohi: &[f64]| {
            lo.iter().zip(olo).all(|(a, b)| *a >= *b - tol)
                && hi.iter().zip(ohi).all(|(a, b)| *a <= *b + tol)
        };
        inside(
            &self.input_lower,
            &self.input_upper,
            &other.input_lower,
            &other.input_upper,
        ) && (0..self.pre_lower.len()).all(|l| {
            inside(
                &self.pre_lower[l],
                &self.pre_upper[l],
                &other.pre_lower[l],
                &other.pre_upper[l],
            ) && inside(
                &self.post_lower[l],
                &self.post_upper[l],
                &other.post_lower[l],
                &other.post_upper[l],
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConflictReason {
    /// A fixed phase contradicts the neuron's bounds.
    Phase(NeuronId),
    /// Some interval became empty.
    EmptyInterval(String),
    /// The output constraints cannot hold on the node's output bounds.
    Output,
    /// The LP relaxation has no feasible point.
    Relaxation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeBounds {
    Feasible(BoundsMap),
    Conflict(ConflictReason),
}

impl NodeBounds {
    pub fn is_conflict(&self) -> bool {
        matches!(self, NodeBounds::Conflict(_))
    }

    pub fn bounds(&self) -> Option<&BoundsMap> {
        match self {
            NodeBounds::Feasible(b) => Some(b),
            NodeBounds::Conflict(_) => None,
        }
    }
}

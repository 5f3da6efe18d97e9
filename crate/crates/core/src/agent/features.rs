//! Per-candidate state features.
//!
//! Every (unfixed neuron, phase) pair is one candidate row:
//! ten local features, three global features and the phase bit. Bounds are
//! min-max scaled by the span of the root node's pre-activation bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics::{babsr_scores, polarity_scores, soi_scores};
use crate::numeric::Phase;
use crate::search::{SplitAction, SplitContext};

pub const LOCAL_FEATURES: [&str; 10] = [
    "pre_lower",
    "pre_upper",
    "post_lower",
    "post_upper",
    "status_active",
    "status_inactive",
    "status_unfixed",
    "soi_error",
    "polarity",
    "babsr",
];

pub const GLOBAL_FEATURES: [&str; 3] = ["unfixed_fraction", "depth_fraction", "splits_fraction"];

pub const FEATURE_WIDTH: usize = LOCAL_FEATURES.len() + GLOBAL_FEATURES.len() + 1;

/// Names of the columns of a candidate row, in order.
pub fn feature_layout() -> Vec<String> {
    LOCAL_FEATURES
        .iter()
        .chain(GLOBAL_FEATURES.iter())
        .chain(["phase_bit"].iter())
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    /// Candidates sorted by (neuron, phase).
    pub actions: Vec<SplitAction>,
    pub rows: Vec<Vec<f64>>,
}

impl StateFeatures {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn index_of(&self, action: SplitAction) -> Option<usize> {
        self.actions.iter().position(|a| *a == action)
    }
}

/// Featurizer state that persists across runs: the running maximum used to
/// scale the split count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub split_scale: f64,
    /// Grow `split_scale` with observed split counts.
    pub learn_scale: bool,
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer {
            split_scale: 1.0,
            learn_scale: true,
        }
    }
}

impl Featurizer {
    pub fn frozen(split_scale: f64) -> Self {
        Featurizer {
            split_scale,
            learn_scale: false,
        }
    }

    pub fn featurize(&mut self, ctx: &SplitContext<'_>) -> Result<StateFeatures> {
        if self.learn_scale {
            self.split_scale = self.split_scale.max(ctx.node.splits_so_far as f64);
        }
        featurize(ctx, self.split_scale)
    }
}

/// Features of every candidate at the node.
pub fn featurize(ctx: &SplitContext<'_>, split_scale: f64) -> Result<StateFeatures> {
    let (net, node) = (ctx.net, ctx.node);
    let unfixed = node.unfixed(net);
    if unfixed.is_empty() {
        return Err(Error::InvalidArgument(
            "no unfixed neurons to featurize".into(),
        ));
    }
    let total = net.relu_count() as f64;
    let mut lo_min = f64::INFINITY;
    let mut hi_max = f64::NEG_INFINITY;
    for &id in net.relus() {
        let (lo, hi) = ctx.root.pre(id);
        lo_min = lo_min.min(lo);
        hi_max = hi_max.max(hi);
    }
    let span = if hi_max > lo_min {
        hi_max - lo_min
    } else {
        1.0
    };
    let scale = |v: f64| (v - lo_min) / span;

    let soi = soi_scores(net, node)?;
    let pol = polarity_scores(net, node)?;
    let soi_max = soi.values().fold(0.0f64, |m, s| m.max(s.abs()));
    let soi_max = if soi_max > 0.0 { soi_max } else { 1.0 };
    let babsr = babsr_scores(net, ctx.query, node)?;
    let babsr_max = babsr.values().fold(0.0f64, |m, s| m.max(s.abs()));
    let babsr_max = if babsr_max > 0.0 { babsr_max } else { 1.0 };

    let global = [
        unfixed.len() as f64 / total,
        node.depth as f64 / total,
        (node.splits_so_far as f64 / split_scale.max(1.0)).min(1.0),
    ];

    let mut actions = Vec::with_capacity(2 * unfixed.len());
    let mut rows = Vec::with_capacity(2 * unfixed.len());
    for id in unfixed {
        let (pl, pu) = node.bounds.pre(id);
        let (ql, qu) = node.bounds.post(id);
        for phase in [Phase::Inactive, Phase::Active] {
            let mut row = Vec::with_capacity(FEATURE_WIDTH);
            row.extend([scale(pl), scale(pu), scale(ql), scale(qu)]);
            row.extend([0.0, 0.0, 1.0]);
            row.push(soi[&id] / soi_max);
            row.push(pol[&id]);
            row.push(babsr[&id] / babsr_max);
            row.extend(global);
            row.push(if phase == Phase::Active { 1.0 } else { 0.0 });
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("feature value {v} at {id}")));
            }
            actions.push(SplitAction::new(id, phase));
            rows.push(row);
        }
    }
    Ok(StateFeatures { actions, rows })
}

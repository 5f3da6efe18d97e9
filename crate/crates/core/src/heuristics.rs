//! Static splitting heuristics.
//!
//! Each heuristic ranks the unfixed ReLUs of a node; the static strategies
//! always explore the Inactive phase first. Ties go to the smallest
//! [`NeuronId`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Network, NeuronId};
use crate::numeric::{BoundsMap, Phase, PhaseStatus, Phases};
use crate::query::Query;
use crate::search::{Brancher, NodeState, SplitAction, SplitContext};

/// EMA coefficient of the Pseudo-Impact table.
pub const PI_BETA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Soi,
    Polarity,
    PseudoImpact,
    Babsr,
    Agent,
}

impl Strategy {
    pub const STATIC: [Strategy; 4] = [
        Strategy::Soi,
        Strategy::Polarity,
        Strategy::PseudoImpact,
        Strategy::Babsr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Soi => "soi",
            Strategy::Polarity => "polarity",
            Strategy::PseudoImpact => "pseudo-impact",
            Strategy::Babsr => "babsr",
            Strategy::Agent => "agent",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "soi" => Ok(Strategy::Soi),
            "polarity" => Ok(Strategy::Polarity),
            "pseudo-impact" | "pi" => Ok(Strategy::PseudoImpact),
            "babsr" => Ok(Strategy::Babsr),
            "agent" => Ok(Strategy::Agent),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy `{other}`"
            ))),
        }
    }
}

/// Distance of a relaxation point `(pre, post)` from the ReLU graph.
pub fn soi_error(pre: f64, post: f64) -> f64 {
    (post - pre).min(post)
}

/// Sum of [`soi_error`] over every ReLU of the node's relaxation solution.
pub fn soi_total(node: &NodeState) -> Result<f64> {
    let point = node
        .relaxation
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("node has no relaxation solution".into()))?;
    Ok(point
        .pre
        .iter()
        .zip(&point.post)
        .map(|(&a, &b)| soi_error(a, b))
        .sum())
}

pub fn polarity(lower: f64, upper: f64) -> Result<f64> {
    if !(lower < 0.0 && upper > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "polarity needs lower < 0 < upper, got [{lower}, {upper}]"
        )));
    }
    Ok((lower + upper) / (upper - lower))
}

pub fn pseudo_impact_update(old: f64, delta: f64, beta: f64) -> f64 {
    beta * old + (1.0 - beta) * delta
}

/// Initial Pseudo-Impact table: each ReLU's pre-activation width divided by
/// the widest one.
pub fn initial_pseudo_impact(net: &Network, root: &BoundsMap) -> Vec<f64> {
    let widths: Vec<f64> = net
        .relus()
        .iter()
        .map(|&id| {
            let (lo, hi) = root.pre(id);
            (hi - lo).abs()
        })
        .collect();
    let max = widths.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        widths.iter().map(|w| w / max).collect()
    } else {
        vec![0.0; widths.len()]
    }
}

/// Backward coefficients for one output objective `c · y`.
///
/// Starting from `nu = -c` at the output layer, each ReLU layer `l` gets
/// `nu_hat[l] = W[l+1]^T nu[l+1]` and `v[l] = slope ⊙ nu_hat[l]`, where the
/// slope is 1 for active, 0 for inactive, and `u / (u - l)` for unfixed
/// neurons. `bias[l]` is the bias feeding layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct BabsrBackward {
    pub v: Vec<Vec<f64>>,
    pub nu_hat: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

pub fn babsr_backward(
    net: &Network,
    bounds: &BoundsMap,
    phases: &Phases,
    objective: &[f64],
) -> BabsrBackward {
    let layers = net.layers();
    let hidden = layers.len() - 1;
    let mut v = vec![Vec::new(); hidden];
    let mut nu_hat = vec![Vec::new(); hidden];
    let mut next: Vec<f64> = objective.iter().map(|c| -c).collect();
    for l in (0..hidden).rev() {
        let above = &layers[l + 1];
        let width = layers[l].outputs();
        let mut hat = vec![0.0; width];
        for (r, &coef) in next.iter().enumerate() {
            if coef == 0.0 {
                continue;
            }
            for (h, w) in hat.iter_mut().zip(above.row(r)) {
                *h += w * coef;
            }
        }
        let cur: Vec<f64> = (0..width)
            .map(|i| {
                let id = NeuronId::new(l, i);
                hat[i] * relaxed_slope(phases.of(net, id), bounds.pre(id))
            })
            .collect();
        nu_hat[l] = hat;
        v[l] = cur.clone();
        next = cur;
    }
    BabsrBackward {
        v,
        nu_hat,
        bias: layers[..hidden].iter().map(|l| l.bias().to_vec()).collect(),
    }
}

fn relaxed_slope(status: PhaseStatus, (lo, hi): (f64, f64)) -> f64 {
    match status {
        PhaseStatus::Fixed(Phase::Active) => 1.0,
        PhaseStatus::Fixed(Phase::Inactive) => 0.0,
        PhaseStatus::Unfixed if lo >= 0.0 => 1.0,
        PhaseStatus::Unfixed if hi <= 0.0 => 0.0,
        PhaseStatus::Unfixed => hi / (hi - lo),
    }
}

/// `max(v b, (v - 1) b) - u / (u - l) * max(nu_hat, 0)`.
pub fn babsr_score(v: f64, nu_hat: f64, bias: f64, lower: f64, upper: f64) -> Result<f64> {
    if upper == lower {
        return Err(Error::InvalidArgument(format!(
            "degenerate interval [{lower}, {upper}]"
        )));
    }
    Ok((v * bias).max((v - 1.0) * bias) - upper / (upper - lower) * nu_hat.max(0.0))
}

/// Index of the output constraint whose interval lower margin `c · y - d` is
/// largest, i.e. the one closest to being refuted.
pub fn babsr_objective(bounds: &BoundsMap, q: &Query) -> usize {
    let (lo, hi) = bounds.output();
    let margin = |k: usize| {
        let c = &q.constraints[k];
        c.coeffs
            .iter()
            .enumerate()
            .map(|(j, &a)| if a >= 0.0 { a * lo[j] } else { a * hi[j] })
            .sum::<f64>()
            - c.rhs
    };
    let mut best = 0;
    for k in 1..q.constraints.len() {
        if margin(k) > margin(best) {
            best = k;
        }
    }
    best
}

/// BaBSR score of every unfixed ReLU of the node.
pub fn babsr_scores(net: &Network, q: &Query, node: &NodeState) -> Result<BTreeMap<NeuronId, f64>> {
    let unfixed = node.unfixed(net);
    let mut out = BTreeMap::new();
    if unfixed.is_empty() {
        return Ok(out);
    }
    let k = babsr_objective(&node.bounds, q);
    let back = babsr_backward(net, &node.bounds, &node.phases, &q.constraints[k].coeffs);
    for id in unfixed {
        let (lo, hi) = node.bounds.pre(id);
        let (l, i) = (id.layer, id.index);
        out.insert(
            id,
            babsr_score(back.v[l][i], back.nu_hat[l][i], back.bias[l][i], lo, hi)?,
        );
    }
    Ok(out)
}

/// Per-neuron SoI error at the node's relaxation solution, for unfixed ReLUs.
pub fn soi_scores(net: &Network, node: &NodeState) -> Result<BTreeMap<NeuronId, f64>> {
    let point = node
        .relaxation
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("node has no relaxation solution".into()))?;
    Ok(node
        .unfixed(net)
        .into_iter()
        .map(|id| {
            let k = net.relu_index(id).expect("relu");
            (id, soi_error(point.pre[k], point.post[k]))
        })
        .collect())
}

pub fn polarity_scores(net: &Network, node: &NodeState) -> Result<BTreeMap<NeuronId, f64>> {
    node.unfixed(net)
        .into_iter()
        .map(|id| {
            let (lo, hi) = node.bounds.pre(id);
            Ok((id, polarity(lo, hi)?))
        })
        .collect()
}

/// First key with the greatest value under `key`.
fn argmax_by(scores: &BTreeMap<NeuronId, f64>, key: impl Fn(f64) -> f64) -> Option<NeuronId> {
    let mut best: Option<(NeuronId, f64)> = None;
    for (&id, &s) in scores {
        let k = key(s);
        if best.is_none_or(|(_, b)| k > b) {
            best = Some((id, k));
        }
    }
    best.map(|(id, _)| id)
}

/// Unfixed ReLU with the largest Pseudo-Impact.
pub fn pseudo_impact_choice(ctx: &SplitContext<'_>) -> Result<NeuronId> {
    let scores: BTreeMap<NeuronId, f64> = ctx
        .node
        .unfixed(ctx.net)
        .into_iter()
        .map(|id| (id, ctx.pseudo_impact[ctx.net.relu_index(id).expect("relu")]))
        .collect();
    argmax_by(&scores, |s| s).ok_or_else(no_unfixed)
}

fn no_unfixed() -> Error {
    Error::InvalidArgument("no unfixed neuron to split on".into())
}

/// Neuron chosen by a static strategy at this node.
pub fn select_neuron(ctx: &SplitContext<'_>, strategy: Strategy) -> Result<NeuronId> {
    let chosen = match strategy {
        Strategy::Soi => argmax_by(&soi_scores(ctx.net, ctx.node)?, |s| s),
        Strategy::Polarity => argmax_by(&polarity_scores(ctx.net, ctx.node)?, |p| -p.abs()),
        Strategy::PseudoImpact => return pseudo_impact_choice(ctx),
        Strategy::Babsr => argmax_by(&babsr_scores(ctx.net, ctx.query, ctx.node)?, |s| s),
        Strategy::Agent => {
            return Err(Error::InvalidArgument(
                "the agent strategy needs a trained policy".into(),
            ))
        }
    };
    chosen.ok_or_else(no_unfixed)
}

/// A static heuristic as a [`Brancher`]; explores Inactive first.
#[derive(Debug, Clone, Copy)]
pub struct StaticBrancher(pub Strategy);

impl Brancher for StaticBrancher {
    fn select(&mut self, ctx: &SplitContext<'_>, _rng: &mut ChaCha8Rng) -> Result<SplitAction> {
        Ok(SplitAction::new(
            select_neuron(ctx, self.0)?,
            Phase::Inactive,
        ))
    }
}

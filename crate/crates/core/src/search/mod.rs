//! Depth-first branch and bound over ReLU phases.
//!
//! Each processed node runs deduction to a fixpoint (interval propagation,
//! optional LP tightening, phase deduction). A conflict closes the node. An
//! open node is SAT when its relaxation point is an exact ReLU point whose
//! input passes [`check_witness`]; otherwise a [`Brancher`] picks a split and
//! the chosen phase is explored before its complement.
//!
//! The explicit stack holds a shared copy of the parent state per pending
//! child, so backtracking is a pop.

mod events;

pub use events::{EndKind, Event, EventLog, NodeResult};

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heuristics::{
    initial_pseudo_impact, pseudo_impact_choice, pseudo_impact_update, soi_error, PI_BETA,
};
use crate::model::{Network, NeuronId};
use crate::numeric::{
    build_relaxation, output_conflict, propagate_intervals, propagate_with, solve_lp,
    tighten_bounds_lp, BoundsMap, ConflictReason, LpResult, NodeBounds, Objective, Phase,
    PhaseStatus, Phases, TAU_PHASE,
};
use crate::query::{check_witness, Outcome, Query, Verdict, TAU_OUT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SplitAction {
    pub neuron: NeuronId,
    pub phase: Phase,
}

impl SplitAction {
    pub fn new(neuron: NeuronId, phase: Phase) -> Self {
        SplitAction { neuron, phase }
    }

    pub fn complement(self) -> Self {
        SplitAction::new(self.neuron, self.phase.complement())
    }
}

impl fmt::Display for SplitAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.neuron, self.phase)
    }
}

impl FromStr for SplitAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (n, p) = s
            .split_once('/')
            .ok_or_else(|| Error::InvalidArgument(format!("bad split action `{s}`")))?;
        let phase = match p {
            "A" => Phase::Active,
            "I" => Phase::Inactive,
            _ => return Err(Error::InvalidArgument(format!("bad phase `{p}`"))),
        };
        Ok(SplitAction::new(n.parse()?, phase))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub timeout: Duration,
    pub max_iterations: u64,
    pub seed: u64,
}

impl Budget {
    pub fn new(timeout: Duration, max_iterations: u64, seed: u64) -> Result<Self> {
        if timeout.is_zero() || max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "budget timeout and iteration cap must be positive".into(),
            ));
        }
        Ok(Budget {
            timeout,
            max_iterations,
            seed,
        })
    }

    pub fn with_timeout(timeout: Duration) -> Self {
        Budget {
            timeout,
            ..Budget::default()
        }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            timeout: Duration::from_secs(60),
            max_iterations: u64::MAX,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tightening {
    /// LP min/max of inputs and unfixed pre-activations at every node.
    Lp,
    /// Interval propagation only.
    Interval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub tightening: Tightening,
    /// Decisions at depth below this are made by Pseudo-Impact.
    pub initial_splits: usize,
    pub pi_beta: f64,
    /// Accept an exact relaxation point as SAT before all phases are fixed.
    pub relaxation_sat: bool,
    /// Keep searching after the first SAT leaf.
    pub exhaustive: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            tightening: Tightening::Lp,
            initial_splits: 3,
            pi_beta: PI_BETA,
            relaxation_sat: true,
            exhaustive: false,
        }
    }
}

/// Relaxation solution of a node, ReLU values indexed by flat ReLU index.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationPoint {
    pub inputs: Vec<f64>,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub outputs: Vec<f64>,
    pub soi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub phases: Phases,
    pub bounds: BoundsMap,
    /// Decision splits on the path from the root.
    pub depth: usize,
    /// Decision splits taken in the run before this node was processed.
    pub splits_so_far: u64,
    pub relaxation: Option<RelaxationPoint>,
}

impl NodeState {
    /// Unfixed ReLUs in [`NeuronId`] order.
    pub fn unfixed(&self, net: &Network) -> Vec<NeuronId> {
        net.relus()
            .iter()
            .zip(self.phases.iter())
            .filter(|(_, s)| *s == PhaseStatus::Unfixed)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn unfixed_count(&self) -> usize {
        self.phases.unfixed_count()
    }

    pub fn soi(&self) -> Option<f64> {
        self.relaxation.as_ref().map(|r| r.soi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Deduced {
    Open(NodeState),
    Closed(ConflictReason),
}

/// Everything a brancher may look at when choosing a split.
pub struct SplitContext<'a> {
    pub net: &'a Network,
    pub query: &'a Query,
    pub node: &'a NodeState,
    pub node_id: u64,
    pub pseudo_impact: &'a [f64],
    pub root: &'a BoundsMap,
}

/// A splitting policy.
pub trait Brancher {
    fn select(&mut self, ctx: &SplitContext<'_>, rng: &mut ChaCha8Rng) -> Result<SplitAction>;

    /// Whether the shared Pseudo-Impact policy makes the shallow decisions.
    fn defers_initial_splits(&self) -> bool {
        true
    }
}

/// Replays `script[d]` at depth `d`, then defers to `then`.
pub struct Scripted<B> {
    pub script: Vec<SplitAction>,
    pub then: B,
}

impl<B: Brancher> Brancher for Scripted<B> {
    fn select(&mut self, ctx: &SplitContext<'_>, rng: &mut ChaCha8Rng) -> Result<SplitAction> {
        match self.script.get(ctx.node.depth) {
            Some(a) if ctx.node.phases.of(ctx.net, a.neuron) == PhaseStatus::Unfixed => Ok(*a),
            _ => self.then.select(ctx, rng),
        }
    }

    fn defers_initial_splits(&self) -> bool {
        false
    }
}

/// Unfixed ReLUs whose bounds decide their phase.
pub fn deduce_phases(net: &Network, bounds: &BoundsMap, phases: &Phases) -> Vec<(NeuronId, Phase)> {
    net.relus()
        .iter()
        .zip(phases.iter())
        .filter(|(_, s)| *s == PhaseStatus::Unfixed)
        .filter_map(|(&id, _)| {
            let (lo, hi) = bounds.pre(id);
            if hi <= TAU_PHASE {
                Some((id, Phase::Inactive))
            } else if lo >= -TAU_PHASE {
                Some((id, Phase::Active))
            } else {
                None
            }
        })
        .collect()
}

/// The deduced root node of `q`.
pub fn root_node(net: &Network, q: &Query, config: &SearchConfig) -> Result<Deduced> {
    let phases = Phases::unfixed(net);
    match propagate_intervals(net, &q.input_lower, &q.input_upper, &phases) {
        NodeBounds::Conflict(r) => Ok(Deduced::Closed(r)),
        NodeBounds::Feasible(bounds) => settle(
            net,
            q,
            NodeState {
                phases,
                bounds,
                depth: 0,
                splits_so_far: 0,
                relaxation: None,
            },
            config,
        ),
    }
}

/// The child of `node` with `action` applied and deduction rerun.
pub fn apply_split(
    net: &Network,
    q: &Query,
    node: &NodeState,
    action: SplitAction,
    config: &SearchConfig,
) -> Result<Deduced> {
    let k = net
        .relu_index(action.neuron)
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a ReLU", action.neuron)))?;
    if node.phases.get(k) != PhaseStatus::Unfixed {
        return Err(Error::InvalidArgument(format!(
            "{} is already fixed",
            action.neuron
        )));
    }
    let mut phases = node.phases.clone();
    phases.set(k, action.phase);
    settle(
        net,
        q,
        NodeState {
            phases,
            bounds: node.bounds.clone(),
            depth: node.depth + 1,
            splits_so_far: node.splits_so_far + 1,
            relaxation: None,
        },
        config,
    )
}

/// Deduction to a fixpoint, then the relaxation point.
fn settle(net: &Network, q: &Query, mut node: NodeState, config: &SearchConfig) -> Result<Deduced> {
    loop {
        let lower = node.bounds.input_lower.clone();
        let upper = node.bounds.input_upper.clone();
        let mut b = match propagate_with(net, &lower, &upper, &node.phases, Some(&node.bounds)) {
            NodeBounds::Conflict(r) => return Ok(Deduced::Closed(r)),
            NodeBounds::Feasible(b) => b,
        };
        if output_conflict(&b, &q.constraints) {
            return Ok(Deduced::Closed(ConflictReason::Output));
        }
        if config.tightening == Tightening::Lp {
            b = match tighten_bounds_lp(net, &b, &node.phases, &q.constraints)? {
                NodeBounds::Conflict(r) => return Ok(Deduced::Closed(r)),
                NodeBounds::Feasible(t) => t,
            };
            if output_conflict(&b, &q.constraints) {
                return Ok(Deduced::Closed(ConflictReason::Output));
            }
        }
        let fixes = deduce_phases(net, &b, &node.phases);
        node.bounds = b;
        if fixes.is_empty() {
            break;
        }
        for (id, phase) in fixes {
            node.phases.set(net.relu_index(id).expect("relu"), phase);
        }
    }
    match relaxation_point(net, q, &node)? {
        Some(p) => {
            node.relaxation = Some(p);
            Ok(Deduced::Open(node))
        }
        None => Ok(Deduced::Closed(ConflictReason::Relaxation)),
    }
}

/// Solves the node LP minimizing the sum of unfixed activations.
fn relaxation_point(net: &Network, q: &Query, node: &NodeState) -> Result<Option<RelaxationPoint>> {
    let mut relax = build_relaxation(net, &node.bounds, &node.phases, &q.constraints);
    let coeffs: Vec<(usize, f64)> = node
        .unfixed(net)
        .into_iter()
        .map(|id| (relax.vars.post_of(id), 1.0))
        .collect();
    if !coeffs.is_empty() {
        relax.problem.objective = Some(Objective::minimize(coeffs));
    }
    let LpResult::Feasible { assignment, .. } = solve_lp(&relax.problem)? else {
        return Ok(None);
    };
    let pre: Vec<f64> = net
        .relus()
        .iter()
        .map(|&id| assignment[relax.vars.pre_of(id)])
        .collect();
    let post: Vec<f64> = net
        .relus()
        .iter()
        .map(|&id| assignment[relax.vars.post_of(id)])
        .collect();
    let soi = pre.iter().zip(&post).map(|(&a, &b)| soi_error(a, b)).sum();
    Ok(Some(RelaxationPoint {
        inputs: relax.inputs_of(&assignment),
        outputs: relax
            .vars
            .outputs()
            .iter()
            .map(|&v| assignment[v])
            .collect(),
        pre,
        post,
        soi,
    }))
}

/// The node's relaxation input, clamped to the query box, if it is a genuine
/// counterexample.
fn sat_witness(
    net: &Network,
    q: &Query,
    node: &NodeState,
    config: &SearchConfig,
) -> Option<Vec<f64>> {
    let point = node.relaxation.as_ref()?;
    let exact = node.unfixed_count() == 0 || (config.relaxation_sat && point.soi <= TAU_OUT);
    if !exact {
        return None;
    }
    let x: Vec<f64> = point
        .inputs
        .iter()
        .zip(q.input_lower.iter().zip(&q.input_upper))
        .map(|(v, (l, u))| v.clamp(*l, *u))
        .collect();
    check_witness(net, q, &x).then_some(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub verdict: Verdict,
    pub log: EventLog,
}

enum Frame {
    Root,
    Child {
        parent: u64,
        state: Rc<NodeState>,
        action: SplitAction,
    },
    Close(u64),
}

/// Runs the search with the default configuration.
pub fn verify(
    net: &Network,
    q: &Query,
    brancher: &mut dyn Brancher,
    budget: &Budget,
) -> Result<Verdict> {
    Ok(verify_with(net, q, brancher, budget, &SearchConfig::default())?.verdict)
}

pub fn verify_with(
    net: &Network,
    q: &Query,
    brancher: &mut dyn Brancher,
    budget: &Budget,
    config: &SearchConfig,
) -> Result<SearchReport> {
    if q.input_dim() != net.input_dim()
        || q.constraints
            .iter()
            .any(|c| c.coeffs.len() != net.output_dim())
    {
        return Err(Error::Dimension("query does not match the network".into()));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut log = EventLog::default();
    let mut iterations = 0u64;
    let mut splits = 0u64;
    let mut next_id = 0u64;
    let mut outcome: Option<Outcome> = None;
    let mut timed_out = false;
    let mut root_bounds: Option<BoundsMap> = None;
    let mut pi: Vec<f64> = Vec::new();
    let mut stack = vec![Frame::Root];

    while let Some(frame) = stack.pop() {
        let (parent, state, action) = match frame {
            Frame::Close(id) => {
                log.push(Event::Close { id });
                continue;
            }
            Frame::Root => (None, None, None),
            Frame::Child {
                parent,
                state,
                action,
            } => (Some(parent), Some(state), Some(action)),
        };
        if iterations >= budget.max_iterations || start.elapsed() >= budget.timeout {
            timed_out = true;
            break;
        }
        iterations += 1;
        let id = next_id;
        next_id += 1;

        let deduced = match (&state, action) {
            (Some(s), Some(a)) => apply_split(net, q, s, a, config)?,
            _ => root_node(net, q, config)?,
        };
        if let (Some(s), Some(a)) = (&state, action) {
            let before = s.soi().unwrap_or(0.0);
            let after = match &deduced {
                Deduced::Open(n) => n.soi().unwrap_or(0.0),
                Deduced::Closed(_) => 0.0,
            };
            let k = net.relu_index(a.neuron).expect("relu");
            pi[k] = pseudo_impact_update(pi[k], (before - after).abs(), config.pi_beta);
        }
        let depth = state.as_ref().map_or(0, |s| s.depth + 1);

        let mut node = match deduced {
            Deduced::Closed(_) => {
                log.push(Event::Node {
                    id,
                    parent,
                    action,
                    depth,
                    unfixed: None,
                    result: NodeResult::Unsat,
                });
                continue;
            }
            Deduced::Open(n) => n,
        };
        node.splits_so_far = splits;
        if root_bounds.is_none() {
            pi = initial_pseudo_impact(net, &node.bounds);
            root_bounds = Some(node.bounds.clone());
        }
        let unfixed = node.unfixed_count();
        let node_event = |result| Event::Node {
            id,
            parent,
            action,
            depth,
            unfixed: Some(unfixed),
            result,
        };

        if let Some(w) = sat_witness(net, q, &node, config) {
            log.push(node_event(NodeResult::Sat));
            if outcome.is_none() {
                outcome = Some(Outcome::Sat(w));
            }
            if config.exhaustive {
                continue;
            }
            break;
        }
        if unfixed == 0 {
            tracing::warn!(
                node = id,
                "fully fixed node failed the witness check; closing it"
            );
            log.push(node_event(NodeResult::Unsat));
            continue;
        }

        let ctx = SplitContext {
            net,
            query: q,
            node: &node,
            node_id: id,
            pseudo_impact: &pi,
            root: root_bounds.as_ref().expect("root processed"),
        };
        let chosen = if node.depth < config.initial_splits && brancher.defers_initial_splits() {
            SplitAction::new(pseudo_impact_choice(&ctx)?, Phase::Inactive)
        } else {
            brancher.select(&ctx, &mut rng)?
        };
        if node.phases.of(net, chosen.neuron) != PhaseStatus::Unfixed
            || net.relu_index(chosen.neuron).is_none()
        {
            return Err(Error::InvalidArgument(format!(
                "brancher chose {}, which is not an unfixed ReLU",
                chosen.neuron
            )));
        }
        splits += 1;
        log.push(node_event(NodeResult::Split(chosen)));
        let state = Rc::new(node);
        stack.push(Frame::Close(id));
        stack.push(Frame::Child {
            parent: id,
            state: Rc::clone(&state),
            action: chosen.complement(),
        });
        stack.push(Frame::Child {
            parent: id,
            state,
            action: chosen,
        });
    }

    // Close subtrees left open by an early stop, innermost first.
    while let Some(frame) = stack.pop() {
        if let Frame::Close(id) = frame {
            log.push(Event::Close { id });
        }
    }
    let outcome = match outcome {
        Some(o) => o,
        None if timed_out => Outcome::Timeout,
        None => Outcome::Unsat,
    };
    log.push(Event::End {
        outcome: EndKind::from(&outcome),
    });
    Ok(SearchReport {
        verdict: Verdict {
            outcome,
            iterations,
            splits,
            wall_time: start.elapsed(),
        },
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heuristics::{StaticBrancher, Strategy};
    use crate::model::toy_network;
    use crate::query::OutputConstraint;

    fn example_one(net: &Network) -> Query {
        Query::new(
            "example-1",
            net.input_lower().to_vec(),
            net.input_upper().to_vec(),
            vec![OutputConstraint::new(vec![1.0], -0.5)],
        )
        .unwrap()
    }

    fn n(i: usize) -> NeuronId {
        NeuronId::new(0, i)
    }

    #[test]
    fn deduction_examples() {
        let net = toy_network();
        let phases = Phases::unfixed(&net);
        let mut b = propagate_intervals(&net, net.input_lower(), net.input_upper(), &phases)
            .bounds()
            .cloned()
            .unwrap();
        assert!(deduce_phases(&net, &b, &phases).is_empty());
        b.pre_lower[0][1] = -2.0;
        b.pre_upper[0][1] = 0.0;
        assert_eq!(
            deduce_phases(&net, &b, &phases),
            vec![(n(1), Phase::Inactive)]
        );
        b.pre_lower[0][0] = 0.1;
        b.pre_upper[0][0] = 2.0;
        assert_eq!(
            deduce_phases(&net, &b, &phases),
            vec![(n(0), Phase::Active), (n(1), Phase::Inactive)]
        );
    }

    #[test]
    fn active_n1_tightens_x1() {
        let net = toy_network();
        let q = Query::new(
            "free",
            vec![-1.0, 0.0],
            vec![1.0, 1.0],
            vec![OutputConstraint::new(vec![1.0], 10.0)],
        )
        .unwrap();
        let cfg = SearchConfig::default();
        let Deduced::Open(root) = root_node(&net, &q, &cfg).unwrap() else {
            panic!()
        };
        let Deduced::Open(child) =
            apply_split(&net, &q, &root, SplitAction::new(n(0), Phase::Active), &cfg).unwrap()
        else {
            panic!()
        };
        assert!(child.bounds.input_lower[0] >= -1e-8);
        assert!(child.bounds.input_upper[0] <= 1.0);
        assert_eq!(child.depth, 1);
    }

    #[test]
    fn inactive_n1_deduces_n2_inactive() {
        let net = toy_network();
        let q = Query::new(
            "free",
            vec![-1.0, 0.0],
            vec![1.0, 1.0],
            vec![OutputConstraint::new(vec![1.0], 10.0)],
        )
        .unwrap();
        let cfg = SearchConfig::default();
        let Deduced::Open(root) = root_node(&net, &q, &cfg).unwrap() else {
            panic!()
        };
        let Deduced::Open(child) = apply_split(
            &net,
            &q,
            &root,
            SplitAction::new(n(0), Phase::Inactive),
            &cfg,
        )
        .unwrap() else {
            panic!()
        };
        assert_eq!(child.phases.get(1), PhaseStatus::Fixed(Phase::Inactive));
        assert!(apply_split(
            &net,
            &q,
            &child,
            SplitAction::new(n(0), Phase::Active),
            &cfg
        )
        .is_err());
    }

    #[test]
    fn example_one_is_sat_under_static_strategies() {
        let net = toy_network();
        let q = example_one(&net);
        for s in Strategy::STATIC {
            let v = verify(&net, &q, &mut StaticBrancher(s), &Budget::default()).unwrap();
            let w = v.outcome.witness().expect("sat");
            assert!(check_witness(&net, &q, w));
            assert!(v.splits <= v.iterations);
        }
    }

    #[test]
    fn unreachable_output_is_unsat() {
        let net = toy_network();
        let mut q = example_one(&net);
        q.constraints[0].rhs = -2.5;
        let v = verify(
            &net,
            &q,
            &mut StaticBrancher(Strategy::Soi),
            &Budget::default(),
        )
        .unwrap();
        assert_eq!(v.outcome, Outcome::Unsat);
    }

    #[test]
    fn iteration_cap_times_out() {
        let net = toy_network();
        let q = example_one(&net);
        let cfg = SearchConfig {
            tightening: Tightening::Interval,
            relaxation_sat: false,
            ..SearchConfig::default()
        };
        let budget = Budget::new(Duration::from_secs(10), 1, 0).unwrap();
        let r = verify_with(&net, &q, &mut StaticBrancher(Strategy::Soi), &budget, &cfg).unwrap();
        assert_eq!(r.verdict.outcome, Outcome::Timeout);
        assert_eq!(r.verdict.iterations, 1);
        assert!(r.log.to_text().ends_with("close 0\nend timeout\n"));
    }

    #[test]
    fn split_action_text() {
        let a: SplitAction = "1:3/A".parse().unwrap();
        assert_eq!(a, SplitAction::new(NeuronId::new(1, 3), Phase::Active));
        assert_eq!(a.to_string(), "1:3/A");
        assert!("1:3/X".parse::<SplitAction>().is_err());
    }
}

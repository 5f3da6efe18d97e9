//! Action selection, value targets and the splitting policy wrappers.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::search::{Brancher, SplitAction, SplitContext};

use super::features::{Featurizer, StateFeatures};
use super::qnet::{q_forward, QNet};

/// `max(0.05, 0.95^iter)`.
pub fn epsilon_schedule(iter: u64) -> f64 {
    0.95f64.powf(iter as f64).max(0.05)
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy choice with probability `1 - epsilon`, otherwise a uniform one.
pub fn act(qnet: &QNet, s: &StateFeatures, epsilon: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("no candidates to act on".into()));
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..s.len()));
    }
    Ok(argmax(&q_forward(qnet, s)?))
}

/// `r` if terminal, else `r + gamma * q_target[argmax q_online]`.
pub fn double_dqn_value(
    r: f64,
    q_online: &[f64],
    q_target: &[f64],
    terminal: bool,
    gamma: f64,
) -> f64 {
    if terminal || q_online.is_empty() {
        return r;
    }
    r + gamma * q_target[argmax(q_online)]
}

pub fn double_dqn_target(
    r: f64,
    next: Option<&StateFeatures>,
    qnet: &QNet,
    target: &QNet,
    gamma: f64,
) -> Result<f64> {
    match next {
        None => Ok(r),
        Some(s) => Ok(double_dqn_value(
            r,
            &q_forward(qnet, s)?,
            &q_forward(target, s)?,
            false,
            gamma,
        )),
    }
}

/// Index maximizing `q[a] + m * [a != expert]`, first on ties.
pub fn margin_argmax(q: &[f64], expert: usize, m: f64) -> usize {
    let aug: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(a, v)| if a == expert { *v } else { v + m })
        .collect();
    argmax(&aug)
}

/// `max_a (q[a] + m * [a != expert]) - q[expert]`.
pub fn margin_loss(q: &[f64], expert: usize, m: f64) -> Result<f64> {
    if expert >= q.len() {
        return Err(Error::InvalidArgument(format!(
            "expert index {expert} out of {} candidates",
            q.len()
        )));
    }
    let a = margin_argmax(q, expert, m);
    let bonus = if a == expert { 0.0 } else { m };
    Ok(q[a] + bonus - q[expert])
}

/// A decision captured during a run, for building transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Recorded {
    pub node_id: u64,
    pub state: Arc<StateFeatures>,
    pub action: usize,
}

/// Splits with an ε-greedy Q-network policy.
pub struct AgentBrancher<'a> {
    pub qnet: &'a QNet,
    pub featurizer: &'a mut Featurizer,
    pub epsilon: f64,
    pub record: bool,
    pub recorded: Vec<Recorded>,
}

impl<'a> AgentBrancher<'a> {
    pub fn greedy(qnet: &'a QNet, featurizer: &'a mut Featurizer) -> Self {
        AgentBrancher {
            qnet,
            featurizer,
            epsilon: 0.0,
            record: false,
            recorded: Vec::new(),
        }
    }
}

impl Brancher for AgentBrancher<'_> {
    fn select(&mut self, ctx: &SplitContext<'_>, rng: &mut ChaCha8Rng) -> Result<SplitAction> {
        let s = self.featurizer.featurize(ctx)?;
        let a = act(self.qnet, &s, self.epsilon, rng)?;
        let action = s.actions[a];
        if self.record {
            self.recorded.push(Recorded {
                node_id: ctx.node_id,
                state: Arc::new(s),
                action: a,
            });
        }
        Ok(action)
    }
}

/// Wraps another brancher and records the features and choice of every
/// decision it makes.
pub struct Recorder<'a, B> {
    pub inner: B,
    pub featurizer: &'a mut Featurizer,
    pub recorded: Vec<Recorded>,
}

impl<'a, B> Recorder<'a, B> {
    pub fn new(inner: B, featurizer: &'a mut Featurizer) -> Self {
        Recorder {
            inner,
            featurizer,
            recorded: Vec::new(),
        }
    }
}

impl<B: Brancher> Brancher for Recorder<'_, B> {
    fn select(&mut self, ctx: &SplitContext<'_>, rng: &mut ChaCha8Rng) -> Result<SplitAction> {
        let s = self.featurizer.featurize(ctx)?;
        let action = self.inner.select(ctx, rng)?;
        let a = s
            .index_of(action)
            .ok_or_else(|| Error::InvalidArgument(format!("{action} is not a candidate")))?;
        self.recorded.push(Recorded {
            node_id: ctx.node_id,
            state: Arc::new(s),
            action: a,
        });
        Ok(action)
    }

    fn defers_initial_splits(&self) -> bool {
        self.inner.defers_initial_splits()
    }
}

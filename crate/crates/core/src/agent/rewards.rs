//! Delayed subtree penalties from a run's event log.

use crate::error::{Error, Result};
use crate::search::{Event, EventLog, NodeResult, SplitAction};

/// Penalty of one split decision, known once its subtree closes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayedReward {
    pub node_id: u64,
    pub action: SplitAction,
    /// Unfixed ReLUs at the node before the split.
    pub unfixed: usize,
    /// Splits inside the subtree, the decision itself included.
    pub actual: u64,
    pub reward: f64,
}

/// `-actual / (2^unfixed - 1)`.
pub fn subtree_penalty(actual: u64, unfixed: usize) -> f64 {
    let full = 2f64.powi(unfixed as i32) - 1.0;
    -(actual as f64) / full
}

/// One reward per split decision, in the order the decisions were taken.
///
/// Open decisions form a stack: in a depth-first log every node's parent is
/// the innermost open decision, and each split increments the split count of
/// every open decision.
pub fn record_delayed_rewards(log: &EventLog) -> Result<Vec<DelayedReward>> {
    let malformed = |m: String| Error::EventLog(m);
    let mut out: Vec<DelayedReward> = Vec::new();
    let mut open: Vec<(u64, usize)> = Vec::new();
    for e in &log.events {
        match *e {
            Event::Node {
                id,
                parent,
                unfixed,
                result,
                ..
            } => {
                let top = open.last().map(|o| o.0);
                if parent != top {
                    return Err(malformed(format!(
                        "node {id} has parent {parent:?} but the open decision is {top:?}"
                    )));
                }
                if let NodeResult::Split(action) = result {
                    let k = unfixed.ok_or_else(|| {
                        malformed(format!("split node {id} has no unfixed count"))
                    })?;
                    if k == 0 {
                        return Err(malformed(format!("split node {id} has no unfixed neuron")));
                    }
                    for &(_, slot) in &open {
                        out[slot].actual += 1;
                    }
                    open.push((id, out.len()));
                    out.push(DelayedReward {
                        node_id: id,
                        action,
                        unfixed: k,
                        actual: 1,
                        reward: f64::NAN,
                    });
                }
            }
            Event::Close { id } => match open.pop() {
                Some((top, slot)) if top == id => {
                    let r = &mut out[slot];
                    r.reward = subtree_penalty(r.actual, r.unfixed);
                }
                other => {
                    return Err(malformed(format!(
                        "close {id} does not match the open decision {:?}",
                        other.map(|o| o.0)
                    )))
                }
            },
            Event::End { .. } => {
                if !open.is_empty() {
                    return Err(malformed("end reached with open decisions".into()));
                }
            }
        }
    }
    if !open.is_empty() {
        return Err(malformed("unbalanced open/close events".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_examples() {
        assert_eq!(subtree_penalty(1, 2), -1.0 / 3.0);
        assert_eq!(subtree_penalty(7, 3), -1.0);
        assert_eq!(subtree_penalty(1, 1), -1.0);
    }

    #[test]
    fn counts_nested_splits() {
        let text = "\
node 0 parent - action - depth 0 unfixed 2 result split 0:0/I
node 1 parent 0 action 0:0/I depth 1 unfixed 1 result split 0:1/I
node 2 parent 1 action 0:1/I depth 2 unfixed 0 result unsat
node 3 parent 1 action 0:1/A depth 2 unfixed 0 result unsat
close 1
node 4 parent 0 action 0:0/A depth 1 unfixed - result unsat
close 0
end unsat
";
        let r = record_delayed_rewards(&EventLog::parse(text).unwrap()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].node_id, r[0].actual, r[0].reward), (0, 2, -2.0 / 3.0));
        assert_eq!((r[1].node_id, r[1].actual, r[1].reward), (1, 1, -1.0));
    }

    #[test]
    fn rejects_unbalanced_logs() {
        let text = "node 0 parent - action - depth 0 unfixed 2 result split 0:0/I\nend unsat\n";
        assert!(record_delayed_rewards(&EventLog::parse(text).unwrap()).is_err());
        let text = "close 3\n";
        assert!(record_delayed_rewards(&EventLog::parse(text).unwrap()).is_err());
    }
}

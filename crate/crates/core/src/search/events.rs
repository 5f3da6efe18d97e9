//! Per-run event log.
//!
//! Text format, one event per line:
//!
//! ```text
//! node <id> parent <id|-> action <layer:index/A|I|-> depth <d> unfixed <k|-> result <split <action>|unsat|sat>
//! close <id>
//! end <sat|unsat|timeout>
//! ```
//!
//! `unfixed` is the number of unfixed ReLUs after the node's deduction, i.e.
//! before its own split; it is `-` for nodes closed by a conflict. A `close`
//! line follows the last node of a split node's subtree. Subtrees still open
//! when the run stops (SAT or timeout) are closed innermost first before
//! `end`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::query::Outcome;

use super::SplitAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeResult {
    Split(SplitAction),
    Unsat,
    Sat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Node {
        id: u64,
        parent: Option<u64>,
        action: Option<SplitAction>,
        depth: usize,
        unfixed: Option<usize>,
        result: NodeResult,
    },
    Close {
        id: u64,
    },
    End {
        outcome: EndKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndKind {
    Sat,
    Unsat,
    Timeout,
}

impl From<&Outcome> for EndKind {
    fn from(o: &Outcome) -> Self {
        match o {
            Outcome::Sat(_) => EndKind::Sat,
            Outcome::Unsat => EndKind::Unsat,
            Outcome::Timeout => EndKind::Timeout,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Node {
                id,
                parent,
                action,
                depth,
                unfixed,
                result,
            } => {
                write!(f, "node {id} parent ")?;
                match parent {
                    Some(p) => write!(f, "{p}")?,
                    None => f.write_str("-")?,
                }
                f.write_str(" action ")?;
                match action {
                    Some(a) => write!(f, "{a}")?,
                    None => f.write_str("-")?,
                }
                write!(f, " depth {depth} unfixed ")?;
                match unfixed {
                    Some(k) => write!(f, "{k}")?,
                    None => f.write_str("-")?,
                }
                f.write_str(" result ")?;
                match result {
                    NodeResult::Split(a) => write!(f, "split {a}"),
                    NodeResult::Unsat => f.write_str("unsat"),
                    NodeResult::Sat => f.write_str("sat"),
                }
            }
            Event::Close { id } => write!(f, "close {id}"),
            Event::End { outcome } => f.write_str(match outcome {
                EndKind::Sat => "end sat",
                EndKind::Unsat => "end unsat",
                EndKind::Timeout => "end timeout",
            }),
        }
    }
}

fn bad(line: usize, msg: impl fmt::Display) -> Error {
    Error::EventLog(format!("line {line}: {msg}"))
}

fn parse_opt<T: FromStr>(tok: &str, line: usize) -> Result<Option<T>> {
    if tok == "-" {
        return Ok(None);
    }
    tok.parse()
        .map(Some)
        .map_err(|_| bad(line, format!("bad value `{tok}`")))
}

impl Event {
    fn parse(text: &str, line: usize) -> Result<Event> {
        let t: Vec<&str> = text.split_whitespace().collect();
        match t.as_slice() {
            ["node", id, "parent", p, "action", a, "depth", d, "unfixed", k, "result", rest @ ..] =>
            {
                let result = match rest {
                    ["split", a] => NodeResult::Split(
                        a.parse()
                            .map_err(|_| bad(line, format!("bad action `{a}`")))?,
                    ),
                    ["unsat"] => NodeResult::Unsat,
                    ["sat"] => NodeResult::Sat,
                    _ => return Err(bad(line, "bad result")),
                };
                Ok(Event::Node {
                    id: id.parse().map_err(|_| bad(line, "bad id"))?,
                    parent: parse_opt(p, line)?,
                    action: parse_opt(a, line)?,
                    depth: d.parse().map_err(|_| bad(line, "bad depth"))?,
                    unfixed: parse_opt(k, line)?,
                    result,
                })
            }
            ["close", id] => Ok(Event::Close {
                id: id.parse().map_err(|_| bad(line, "bad id"))?,
            }),
            ["end", "sat"] => Ok(Event::End {
                outcome: EndKind::Sat,
            }),
            ["end", "unsat"] => Ok(Event::End {
                outcome: EndKind::Unsat,
            }),
            ["end", "timeout"] => Ok(Event::End {
                outcome: EndKind::Timeout,
            }),
            _ => Err(bad(line, format!("unrecognized event `{text}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&e.to_string());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<EventLog> {
        let events = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| Event::parse(l, i + 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(EventLog { events })
    }

    /// Split actions in the order they were taken.
    pub fn split_sequence(&self) -> Vec<SplitAction> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Node {
                    result: NodeResult::Split(a),
                    ..
                } => Some(*a),
                _ => None,
            })
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Node { .. }))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NeuronId;
    use crate::numeric::Phase;

    #[test]
    fn text_round_trip() {
        let a = SplitAction::new(NeuronId::new(0, 1), Phase::Inactive);
        let log = EventLog {
            events: vec![
                Event::Node {
                    id: 0,
                    parent: None,
                    action: None,
                    depth: 0,
                    unfixed: Some(2),
                    result: NodeResult::Split(a),
                },
                Event::Node {
                    id: 1,
                    parent: Some(0),
                    action: Some(a),
                    depth: 1,
                    unfixed: None,
                    result: NodeResult::Unsat,
                },
                Event::Close { id: 0 },
                Event::End {
                    outcome: EndKind::Unsat,
                },
            ],
        };
        let text = log.to_text();
        assert!(text.starts_with("node 0 parent - action - depth 0 unfixed 2 result split 0:1/I\n"));
        assert_eq!(EventLog::parse(&text).unwrap(), log);
        assert!(EventLog::parse("node x").is_err());
    }
}

//! Branch-and-bound verification of feed-forward ReLU networks.
//!
//! The engine ([`search::verify`]) runs a depth-first case split over ReLU
//! phases with interval and LP-based bound tightening at every node. Which
//! ReLU to split next is decided by a [`heuristics::Strategy`]: one of four
//! static heuristics or a learned Q-network policy ([`agent`]) trained from
//! heuristic demonstrations followed by Double-DQN self-play.

// `!(a <= b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod agent;
pub mod error;
pub mod harness;
pub mod heuristics;
pub mod model;
pub mod numeric;
pub mod query;
pub mod search;

pub use error::{Error, Result};
pub use heuristics::{StaticBrancher, Strategy};
pub use model::{emit_nnet, load_nnet, toy_network, Layer, Network, NeuronId};
pub use numeric::{BoundsMap, Phase, PhaseStatus, Phases};
pub use query::{check_witness, parse_property, Outcome, OutputConstraint, Query, Verdict};
pub use search::{
    verify, verify_with, Brancher, Budget, EventLog, SearchConfig, SearchReport, SplitAction,
    Tightening,
};

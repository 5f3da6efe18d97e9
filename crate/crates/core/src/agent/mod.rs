//! Learned splitting policy.
//!
//! A per-candidate Q-network scores each (unfixed ReLU, phase) pair from
//! local and global node features. Training first imitates the best static
//! heuristic per query (large-margin loss plus TD loss over prioritized
//! replay), then fine-tunes with ε-greedy self-play and Double-DQN targets.
//! Rewards are delayed subtree penalties read off the run's event log.

mod checkpoint;
mod features;
mod policy;
mod qnet;
mod replay;
mod rewards;
mod trainer;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use features::{
    feature_layout, featurize, Featurizer, StateFeatures, FEATURE_WIDTH, GLOBAL_FEATURES,
    LOCAL_FEATURES,
};
pub use policy::{
    act, argmax, double_dqn_target, double_dqn_value, epsilon_schedule, margin_argmax, margin_loss,
    AgentBrancher, Recorded, Recorder,
};
pub use qnet::{q_forward, Cache, Gradients, Optimizer, OptimizerKind, QNet};
pub use replay::{sample_prioritized, ReplayBuffer, Sample, SumTree, Transition};
pub use rewards::{record_delayed_rewards, subtree_penalty, DelayedReward};
pub use trainer::{
    build_transitions, collect_demonstrations, loss_and_grad, train, train_step, DemoSet,
    Demonstration, LossItem, StepLoss, TrainReport, Trainer, TrainerConfig,
};

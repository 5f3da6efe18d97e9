//! Demonstration collection, the DQfD loss, and the two-phase training loop.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics::{StaticBrancher, Strategy};
use crate::model::Network;
use crate::query::Query;
use crate::search::{verify_with, Budget, EventLog, SearchConfig};

use super::checkpoint::Checkpoint;
use super::features::{Featurizer, FEATURE_WIDTH};
use super::policy::{
    double_dqn_target, epsilon_schedule, margin_argmax, AgentBrancher, Recorded, Recorder,
};
use super::qnet::{Gradients, Optimizer, OptimizerKind, QNet};
use super::replay::{ReplayBuffer, Sample, Transition};
use super::rewards::record_delayed_rewards;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub gamma: f64,
    pub margin: f64,
    /// Imitation weight at the start; it decays linearly to 0 over fine-tuning.
    pub lambda_start: f64,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    pub per_eps: f64,
    pub target_sync: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub demo_epochs: usize,
    pub demo_steps: usize,
    pub finetune_epochs: usize,
    pub finetune_steps: usize,
    /// Iteration cap of one self-play run.
    pub episode_max_iterations: u64,
    pub episode_timeout_ms: u64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            hidden: vec![64, 64],
            optimizer: OptimizerKind::Sgd,
            learning_rate: 1e-3,
            gamma: 0.9,
            margin: 0.8,
            lambda_start: 1.0,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            per_eps: 1e-6,
            target_sync: 500,
            batch_size: 32,
            buffer_capacity: 100_000,
            demo_epochs: 5,
            demo_steps: 1000,
            finetune_epochs: 40,
            finetune_steps: 1000,
            episode_max_iterations: 2000,
            episode_timeout_ms: 30_000,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.margin <= 0.0 || self.learning_rate <= 0.0 {
            return bad("margin and learning rate must be positive");
        }
        if self.batch_size == 0 || self.target_sync == 0 || self.buffer_capacity == 0 {
            return bad("batch size, target sync and buffer capacity must be positive");
        }
        if self.per_beta_end < self.per_beta_start || self.lambda_start < 0.0 {
            return bad("schedules must be monotone and nonnegative");
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![FEATURE_WIDTH];
        d.extend(&self.hidden);
        d.push(1);
        d
    }

    pub fn demo_total(&self) -> u64 {
        (self.demo_epochs * self.demo_steps) as u64
    }

    pub fn finetune_total(&self) -> u64 {
        (self.finetune_epochs * self.finetune_steps) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.demo_total() + self.finetune_total()
    }

    /// Importance exponent at global step `t`, linear over the whole run.
    pub fn beta_at(&self, t: u64) -> f64 {
        let total = self.total_steps().max(1) as f64;
        let f = (t as f64 / total).min(1.0);
        self.per_beta_start + (self.per_beta_end - self.per_beta_start) * f
    }

    /// Imitation weight at fine-tuning step `t`.
    pub fn lambda_at(&self, t: u64) -> f64 {
        let total = self.finetune_total().max(1) as f64;
        self.lambda_start * (1.0 - (t as f64 / total).min(1.0))
    }
}

/// Loss terms of one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub td: f64,
    pub margin: f64,
    pub total: f64,
}

/// One transition of a batch with its importance weight and fixed target.
pub struct LossItem<'a> {
    pub transition: &'a Transition,
    pub weight: f64,
    pub target: f64,
}

/// `Σ w (Q(s,a) - y)² + λ Σ_demo margin_loss` and its parameter gradient.
/// Also returns `|Q(s,a) - y|` per item.
pub fn loss_and_grad(
    qnet: &QNet,
    items: &[LossItem<'_>],
    lambda: f64,
    margin: f64,
) -> Result<(StepLoss, Gradients, Vec<f64>)> {
    let mut grad = Gradients::zeros_like(qnet);
    let mut td_loss = 0.0;
    let mut margin_loss = 0.0;
    let mut td_abs = Vec::with_capacity(items.len());
    for it in items {
        let t = it.transition;
        if t.action >= t.state.len() {
            return Err(Error::InvalidArgument(
                "transition action out of range".into(),
            ));
        }
        let caches: Vec<_> = t.state.rows.iter().map(|r| qnet.forward_cache(r)).collect();
        let td = caches[t.action].output - it.target;
        td_loss += it.weight * td * td;
        qnet.backward(&caches[t.action], 2.0 * it.weight * td, &mut grad);
        td_abs.push(td.abs());
        if t.is_demo && lambda > 0.0 {
            let q: Vec<f64> = caches.iter().map(|c| c.output).collect();
            let a = margin_argmax(&q, t.action, margin);
            if a != t.action {
                margin_loss += q[a] + margin - q[t.action];
                qnet.backward(&caches[a], lambda, &mut grad);
                qnet.backward(&caches[t.action], -lambda, &mut grad);
            }
        }
    }
    let total = td_loss + lambda * margin_loss;
    Ok((
        StepLoss {
            td: td_loss,
            margin: margin_loss,
            total,
        },
        grad,
        td_abs,
    ))
}

/// One optimizer update on a sampled batch. Priorities of the batch are set
/// to the new absolute TD errors.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    qnet: &mut QNet,
    target: &QNet,
    optimizer: &mut Optimizer,
    buffer: &mut ReplayBuffer,
    batch: &Sample,
    config: &TrainerConfig,
    lambda: f64,
) -> Result<StepLoss> {
    let mut items = Vec::with_capacity(batch.indices.len());
    for (&i, &w) in batch.indices.iter().zip(&batch.weights) {
        let t = buffer.get(i);
        let y = double_dqn_target(t.reward, t.next.as_deref(), qnet, target, config.gamma)?;
        items.push(LossItem {
            transition: t,
            weight: w,
            target: y,
        });
    }
    let (loss, grad, td_abs) = loss_and_grad(qnet, &items, lambda, config.margin)?;
    if !loss.total.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite(format!(
            "td {} margin {} lambda {lambda} batch {:?}",
            loss.td, loss.margin, batch.indices
        )));
    }
    drop(items);
    optimizer.step(qnet, &grad);
    buffer.update_priorities(&batch.indices, &td_abs, config.per_eps);
    Ok(loss)
}

/// Pairs recorded decisions with their delayed rewards. Each transition's
/// next state is the following recorded decision; the last one is terminal.
pub fn build_transitions(
    log: &EventLog,
    recorded: &[Recorded],
    is_demo: bool,
) -> Result<Vec<Transition>> {
    let rewards: BTreeMap<u64, f64> = record_delayed_rewards(log)?
        .into_iter()
        .map(|r| (r.node_id, r.reward))
        .collect();
    recorded
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let reward = *rewards.get(&r.node_id).ok_or_else(|| {
                Error::EventLog(format!("no split event for recorded node {}", r.node_id))
            })?;
            Ok(Transition {
                state: Arc::clone(&r.state),
                action: r.action,
                reward,
                next: recorded.get(i + 1).map(|n| Arc::clone(&n.state)),
                is_demo,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Demonstration {
    /// Index into the instance list.
    pub instance: usize,
    pub expert: Strategy,
    pub iterations: u64,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone)]
pub struct DemoSet {
    pub demos: Vec<Demonstration>,
    pub featurizer: Featurizer,
}

impl DemoSet {
    pub fn transition_count(&self) -> usize {
        self.demos.iter().map(|d| d.transitions.len()).sum()
    }
}

/// Runs every static heuristic on every instance and keeps, per instance,
/// the recorded decisions of the solving heuristic with the fewest
/// iterations.
pub fn collect_demonstrations(
    instances: &[(&Network, &Query)],
    budget: &Budget,
    search: &SearchConfig,
) -> Result<DemoSet> {
    let mut featurizer = Featurizer::default();
    let mut demos = Vec::new();
    for (k, (net, q)) in instances.iter().enumerate() {
        let mut best: Option<Demonstration> = None;
        let mut scale = featurizer.split_scale;
        for s in Strategy::STATIC {
            let mut f = featurizer.clone();
            let mut rec = Recorder::new(StaticBrancher(s), &mut f);
            let report = verify_with(net, q, &mut rec, budget, search)?;
            let recorded = std::mem::take(&mut rec.recorded);
            scale = scale.max(f.split_scale);
            if !report.verdict.outcome.is_solved() {
                continue;
            }
            let iterations = report.verdict.iterations;
            if best.as_ref().is_none_or(|b| iterations < b.iterations) {
                best = Some(Demonstration {
                    instance: k,
                    expert: s,
                    iterations,
                    transitions: build_transitions(&report.log, &recorded, true)?,
                });
            }
        }
        featurizer.split_scale = scale;
        if let Some(d) = best {
            demos.push(d);
        }
    }
    Ok(DemoSet { demos, featurizer })
}

/// Training state shared by both phases.
pub struct Trainer {
    pub config: TrainerConfig,
    pub qnet: QNet,
    pub target: QNet,
    pub optimizer: Optimizer,
    pub buffer: ReplayBuffer,
    pub featurizer: Featurizer,
    pub rng: ChaCha8Rng,
    pub steps: u64,
    pub losses: Vec<StepLoss>,
}

impl Trainer {
    pub fn new(config: TrainerConfig, demos: &DemoSet) -> Result<Self> {
        config.validate()?;
        if demos.transition_count() == 0 {
            return Err(Error::InvalidArgument(
                "the demonstration set is empty".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let qnet = QNet::new(&config.dims(), &mut rng)?;
        let mut buffer = ReplayBuffer::new(config.buffer_capacity, config.per_alpha);
        for d in &demos.demos {
            for t in &d.transitions {
                buffer.push_demo(t.clone())?;
            }
        }
        Ok(Trainer {
            optimizer: Optimizer::new(config.optimizer, &qnet, config.learning_rate),
            target: qnet.clone(),
            qnet,
            buffer,
            featurizer: demos.featurizer.clone(),
            rng,
            steps: 0,
            losses: Vec::new(),
            config,
        })
    }

    /// Samples a batch, updates the online network, and syncs the target
    /// network every `target_sync` steps.
    pub fn step(&mut self, lambda: f64) -> Result<StepLoss> {
        let beta = self.config.beta_at(self.steps);
        let batch = self
            .buffer
            .sample(self.config.batch_size, beta, &mut self.rng)?;
        let loss = train_step(
            &mut self.qnet,
            &self.target,
            &mut self.optimizer,
            &mut self.buffer,
            &batch,
            &self.config,
            lambda,
        )?;
        self.steps += 1;
        if self.steps.is_multiple_of(self.config.target_sync) {
            self.target = self.qnet.clone();
        }
        self.losses.push(loss);
        Ok(loss)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.qnet, &self.featurizer, &self.config, self.steps)
    }

    /// Imitation phase: updates drawn from demonstrations only.
    pub fn pretrain(
        &mut self,
        on_epoch: &mut dyn FnMut(usize, &Checkpoint) -> Result<()>,
    ) -> Result<()> {
        for epoch in 0..self.config.demo_epochs {
            for _ in 0..self.config.demo_steps {
                self.step(self.config.lambda_start)?;
            }
            tracing::info!(epoch, steps = self.steps, "demonstration epoch done");
            on_epoch(epoch, &self.checkpoint())?;
        }
        Ok(())
    }

    /// Self-play phase: ε-greedy runs over `instances`, one update per agent
    /// decision (at least one per run).
    pub fn finetune(
        &mut self,
        instances: &[(&Network, &Query)],
        search: &SearchConfig,
        on_epoch: &mut dyn FnMut(usize, &Checkpoint) -> Result<()>,
    ) -> Result<u64> {
        if self.config.finetune_epochs == 0 {
            return Ok(0);
        }
        if instances.is_empty() {
            return Err(Error::InvalidArgument("no self-play instances".into()));
        }
        let mut order: Vec<usize> = (0..instances.len()).collect();
        let mut episode = 0u64;
        let mut finetune_step = 0u64;
        for epoch in 0..self.config.finetune_epochs {
            let mut done = 0;
            while done < self.config.finetune_steps {
                let slot = (episode % instances.len() as u64) as usize;
                if slot == 0 {
                    order.shuffle(&mut self.rng);
                }
                let (net, q) = instances[order[slot]];
                let budget = Budget {
                    timeout: Duration::from_millis(self.config.episode_timeout_ms),
                    max_iterations: self.config.episode_max_iterations,
                    seed: self.config.seed.wrapping_add(episode),
                };
                let snapshot = self.qnet.clone();
                let mut brancher = AgentBrancher {
                    qnet: &snapshot,
                    featurizer: &mut self.featurizer,
                    epsilon: epsilon_schedule(episode),
                    record: true,
                    recorded: Vec::new(),
                };
                let report = verify_with(net, q, &mut brancher, &budget, search)?;
                let recorded = std::mem::take(&mut brancher.recorded);
                let transitions = build_transitions(&report.log, &recorded, false)?;
                let updates = transitions
                    .len()
                    .max(1)
                    .min(self.config.finetune_steps - done);
                for t in transitions {
                    self.buffer.push_self(t);
                }
                for _ in 0..updates {
                    let lambda = self.config.lambda_at(finetune_step);
                    self.step(lambda)?;
                    finetune_step += 1;
                }
                done += updates;
                episode += 1;
            }
            tracing::info!(epoch, steps = self.steps, episode, "self-play epoch done");
            on_epoch(self.config.demo_epochs + epoch, &self.checkpoint())?;
        }
        Ok(episode)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub losses: Vec<StepLoss>,
    pub episodes: u64,
}

/// Imitation followed by self-play fine-tuning. `on_epoch` receives a
/// checkpoint after every epoch.
pub fn train(
    config: &TrainerConfig,
    demos: &DemoSet,
    instances: &[(&Network, &Query)],
    search: &SearchConfig,
    mut on_epoch: impl FnMut(usize, &Checkpoint) -> Result<()>,
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(config.clone(), demos)?;
    trainer.pretrain(&mut on_epoch)?;
    let episodes = trainer.finetune(instances, search, &mut on_epoch)?;
    Ok(TrainReport {
        checkpoint: trainer.checkpoint(),
        losses: trainer.losses,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::features::StateFeatures;

    fn state(rows: Vec<Vec<f64>>) -> Arc<StateFeatures> {
        Arc::new(StateFeatures {
            actions: Vec::new(),
            rows,
        })
    }

    fn row(seed: f64) -> Vec<f64> {
        (0..FEATURE_WIDTH)
            .map(|i| ((i as f64 + 1.0) * seed).sin())
            .collect()
    }

    #[test]
    fn schedules() {
        let c = TrainerConfig::default();
        assert_eq!(c.total_steps(), 45_000);
        assert_eq!(c.beta_at(0), 0.4);
        assert_eq!(c.beta_at(45_000), 1.0);
        assert_eq!(c.lambda_at(0), 1.0);
        assert_eq!(c.lambda_at(40_000), 0.0);
        assert_eq!(c.dims(), vec![14, 64, 64, 1]);
    }

    #[test]
    fn zero_td_and_dominant_expert_give_zero_gradient() {
        // Linear Q = -5 * phase_bit: candidate 0 beats candidate 1 by 5 > m.
        let mut net = QNet::zeros(&[FEATURE_WIDTH, 1]).unwrap();
        net.set_param(FEATURE_WIDTH - 1, -5.0);
        let mut active = row(0.3);
        active[FEATURE_WIDTH - 1] = 1.0;
        let mut inactive = row(0.3);
        inactive[FEATURE_WIDTH - 1] = 0.0;
        let t = Transition {
            state: state(vec![inactive, active]),
            action: 0,
            reward: -0.5,
            next: None,
            is_demo: true,
        };
        let items = [LossItem {
            transition: &t,
            weight: 1.0,
            target: 0.0,
        }];
        let (loss, grad, td) = loss_and_grad(&net, &items, 1.0, 0.8).unwrap();
        assert_eq!(loss.total, 0.0);
        assert_eq!(td, vec![0.0]);
        assert!(grad
            .weights
            .iter()
            .chain(&grad.biases)
            .all(|g| g.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn empty_demo_set_is_rejected() {
        let demos = DemoSet {
            demos: Vec::new(),
            featurizer: Featurizer::default(),
        };
        assert!(Trainer::new(TrainerConfig::default(), &demos).is_err());
    }
}

//! The agent training loop over any environment that maps actions to rewards.

use super::agent::{ActionMode, AgentNets};
use super::buffer::{ReplayBuffer, Transition};
use super::policy::{ActionVec, StateVec};
use crate::error::{Error, Result};
use rand::Rng;

/// Something the agent can schedule: it exposes the current state and turns
/// an action into a reward, advancing to the next state.
pub trait SchedulingEnv {
    fn sensors(&self) -> usize;
    fn observe(&mut self) -> Result<StateVec>;
    fn step(&mut self, action: &ActionVec) -> Result<f64>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub rewards: Vec<f64>,
    pub critic_losses: Vec<f64>,
    /// Largest `|ρ − 1|` seen in any first update epoch.
    pub first_epoch_ratio_gap: f64,
    pub transitions: usize,
}

impl TrainReport {
    /// Mean reward over `[from, to)` of the training rounds.
    pub fn mean_reward(&self, from: usize, to: usize) -> f64 {
        let s = &self.rewards[from.min(self.rewards.len())..to.min(self.rewards.len())];
        if s.is_empty() {
            f64::NAN
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    }
}

/// `M` epochs over the whole buffer. Reference log-probabilities are taken
/// under the policy as it stands before the first epoch, so every ratio in
/// that epoch is exactly one.
pub fn update_agent(agent: &mut AgentNets, buffer: &ReplayBuffer) -> Result<(f64, f64)> {
    let mut batch = buffer.to_vec();
    for t in &mut batch {
        t.log_prob = agent.log_prob(&t.state, &t.action)?;
    }
    let mut gap: f64 = 0.0;
    let mut critic = 0.0;
    for epoch in 0..agent.config().update_epochs {
        let stats = agent.ppo_actor_update(&batch)?;
        if epoch == 0 {
            gap = stats.ratios.iter().map(|r| (r - 1.0).abs()).fold(gap, f64::max);
        }
        critic = agent.critic_update(&batch)?;
    }
    Ok((critic, gap))
}

pub fn train_agent<E: SchedulingEnv, R: Rng + ?Sized>(
    agent: &mut AgentNets,
    env: &mut E,
    rounds: usize,
    rng: &mut R,
) -> Result<TrainReport> {
    if env.sensors() != agent.sensors() {
        return Err(Error::Config(format!(
            "agent built for {} sensors, environment has {}",
            agent.sensors(),
            env.sensors()
        )));
    }
    let mut buffer = ReplayBuffer::new(agent.config().buffer_cap);
    let mut report = TrainReport::default();
    let mut state = env.observe()?;
    for _ in 0..rounds {
        let (action, log_prob) = agent.select_action(&state, ActionMode::Sample, rng)?;
        let reward = env.step(&action)?;
        let next_state = env.observe()?;
        buffer.store(Transition {
            state,
            action,
            reward,
            next_state: next_state.clone(),
            log_prob,
        });
        report.transitions += 1;
        let (critic, gap) = update_agent(agent, &buffer)?;
        report.rewards.push(reward);
        report.critic_losses.push(critic);
        report.first_epoch_ratio_gap = report.first_epoch_ratio_gap.max(gap);
        state = next_state;
    }
    Ok(report)
}

/// Stationary toy environment: fixed state, reward depends only on how far
/// each sensor's action lies from a target count.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    pub target: Vec<usize>,
    pub e_max: usize,
}

impl SchedulingEnv for BanditEnv {
    fn sensors(&self) -> usize {
        self.target.len()
    }

    fn observe(&mut self) -> Result<StateVec> {
        StateVec::new(vec![0.5; 3 * self.target.len() + 1])
    }

    fn step(&mut self, action: &ActionVec) -> Result<f64> {
        let miss: usize = action
            .as_slice()
            .iter()
            .zip(&self.target)
            .map(|(&a, &t)| a.abs_diff(t))
            .sum();
        Ok(1.0 - miss as f64 / (self.target.len() * self.e_max.max(1)) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};
    use crate::scheduler::AgentConfig;

    #[test]
    fn stores_one_transition_per_round() {
        let cfg = AgentConfig {
            buffer_cap: 8,
            ..AgentConfig::default()
        };
        let mut agent = AgentNets::new(2, &cfg, &mut rng::stream(1, Purpose::Agent)).unwrap();
        let mut env = BanditEnv {
            target: vec![4, 1],
            e_max: 4,
        };
        let rep = train_agent(&mut agent, &mut env, 5, &mut rng::stream(2, Purpose::Agent)).unwrap();
        assert_eq!(rep.transitions, 5);
        assert_eq!(rep.rewards.len(), 5);
        assert!(rep.first_epoch_ratio_gap < 1e-12);
    }
}

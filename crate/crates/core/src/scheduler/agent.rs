//! Actor-critic networks and the PPO / TD-critic updates.

use super::buffer::Transition;
use super::policy::{ActionVec, StateVec};
use crate::codec;
use crate::error::{Error, Result};
use crate::numkit::{adam_step, Activation, AdamState, DenseNet, Mat};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub e_max: usize,
    pub gamma: f64,
    pub clip_eps: f64,
    /// Update epochs per collected transition.
    pub update_epochs: usize,
    pub buffer_cap: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            e_max: 4,
            gamma: 0.99,
            clip_eps: 0.2,
            update_epochs: 4,
            buffer_cap: 256,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            hidden: vec![64, 64],
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.e_max == 0 {
            return Err(Error::Config("e_max must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config(format!("clip_eps {} outside (0, 1)", self.clip_eps)));
        }
        if self.update_epochs == 0 || self.buffer_cap == 0 {
            return Err(Error::Config("update_epochs and buffer_cap must be positive".into()));
        }
        for lr in [self.actor_lr, self.critic_lr] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("learning rate {lr} must be positive")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("zero-width hidden layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// Diagnostics from one actor update.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoStats {
    pub ratios: Vec<f64>,
    pub advantages: Vec<f64>,
    pub clipped: usize,
    pub surrogate: f64,
}

#[derive(Debug, Clone)]
pub struct AgentNets {
    pub actor: DenseNet,
    pub critic: DenseNet,
    actor_opt: AdamState,
    critic_opt: AdamState,
    cfg: AgentConfig,
    sensors: usize,
}

fn mlp<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Result<DenseNet> {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(output);
    let mut acts = vec![Activation::Tanh; hidden.len()];
    acts.push(Activation::Linear);
    DenseNet::init(&widths, &acts, rng)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Centers and scales advantages to unit variance when the batch allows it.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.len() < 2 {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std > 1e-8 {
        adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
}

impl AgentNets {
    pub fn new<R: Rng + ?Sized>(sensors: usize, cfg: &AgentConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if sensors == 0 {
            return Err(Error::Config("agent needs at least one sensor".into()));
        }
        let state = 3 * sensors + 1;
        let actor = mlp(state, &cfg.hidden, sensors * cfg.e_max, rng)?;
        let critic = mlp(state, &cfg.hidden, 1, rng)?;
        Ok(AgentNets {
            actor,
            critic,
            actor_opt: AdamState::default(),
            critic_opt: AdamState::default(),
            cfg: cfg.clone(),
            sensors,
        })
    }

    /// Wraps a pre-trained actor for deployment; the critic is left untrained.
    pub fn from_actor<R: Rng + ?Sized>(
        actor: DenseNet,
        sensors: usize,
        cfg: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut agent = AgentNets::new(sensors, cfg, rng)?;
        if actor.input_width() != 3 * sensors + 1 || actor.output_width() != sensors * cfg.e_max {
            return Err(Error::dim(format!(
                "actor maps {} -> {}, expected {} -> {}",
                actor.input_width(),
                actor.output_width(),
                3 * sensors + 1,
                sensors * cfg.e_max
            )));
        }
        agent.actor = actor;
        Ok(agent)
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    fn states_mat<'a>(&self, states: impl Iterator<Item = &'a StateVec>) -> Result<Mat> {
        let rows: Vec<Vec<f64>> = states.map(|s| s.as_slice().to_vec()).collect();
        let m = Mat::from_rows(&rows)?;
        if m.cols() != 3 * self.sensors + 1 {
            return Err(Error::dim(format!(
                "state width {} for an agent over {} sensors",
                m.cols(),
                self.sensors
            )));
        }
        Ok(m)
    }

    /// Per-sensor log-probabilities, `K` rows of `E_max` entries.
    pub fn head_log_probs(&self, state: &StateVec) -> Result<Vec<Vec<f64>>> {
        state.check_normalized()?;
        let logits = self.actor.predict(&self.states_mat(std::iter::once(state))?)?;
        Ok(logits.row(0).chunks(self.cfg.e_max).map(log_softmax).collect())
    }

    pub fn log_prob(&self, state: &StateVec, action: &ActionVec) -> Result<f64> {
        let heads = self.head_log_probs(state)?;
        if action.as_slice().len() != self.sensors {
            return Err(Error::dim("action length differs from sensor count"));
        }
        Ok(heads.iter().zip(action.as_slice()).map(|(lp, &e)| lp[e - 1]).sum())
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &StateVec,
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<(ActionVec, f64)> {
        let heads = self.head_log_probs(state)?;
        let mut picks = Vec::with_capacity(self.sensors);
        let mut log_prob = 0.0;
        for lp in &heads {
            let idx = match mode {
                ActionMode::Greedy => lp
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &v)| if v > lp[best] { i } else { best }),
                ActionMode::Sample => {
                    let w = WeightedIndex::new(lp.iter().map(|v| v.exp()))
                        .map_err(|e| Error::Numeric(format!("degenerate policy head: {e}")))?;
                    w.sample(rng)
                }
            };
            log_prob += lp[idx];
            picks.push(idx + 1);
        }
        Ok((ActionVec::new(picks, self.cfg.e_max)?, log_prob))
    }

    pub fn value(&self, state: &StateVec) -> Result<f64> {
        Ok(self.critic.predict(&self.states_mat(std::iter::once(state))?)?.row(0)[0])
    }

    /// One-step TD errors `R + γ V(S') − V(S)` under the current critic.
    pub fn td_errors(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        let v = self.critic.predict(&self.states_mat(batch.iter().map(|t| &t.state))?)?;
        let v2 = self
            .critic
            .predict(&self.states_mat(batch.iter().map(|t| &t.next_state))?)?;
        let td: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| t.reward + self.cfg.gamma * v2.row(i)[0] - v.row(i)[0])
            .collect();
        if td.iter().any(|d| !d.is_finite()) {
            return Err(Error::Numeric("non-finite TD error".into()));
        }
        Ok(td)
    }

    /// One Adam step on the mean squared TD error with targets held fixed.
    /// Returns the pre-step mean squared TD error.
    pub fn critic_update(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Contract("critic update needs a non-empty batch".into()));
        }
        let states = self.states_mat(batch.iter().map(|t| &t.state))?;
        let next = self
            .critic
            .predict(&self.states_mat(batch.iter().map(|t| &t.next_state))?)?;
        let acts = self.critic.forward(&states)?;
        let n = batch.len() as f64;
        let mut upstream = Mat::zeros(batch.len(), 1);
        let mut mse = 0.0;
        for (i, t) in batch.iter().enumerate() {
            if !t.reward.is_finite() {
                return Err(Error::Numeric("non-finite reward in batch".into()));
            }
            let td = t.reward + self.cfg.gamma * next.row(i)[0] - acts.output().row(i)[0];
            mse += td * td / n;
            upstream.row_mut(i)[0] = -2.0 * td / n;
        }
        if !mse.is_finite() {
            return Err(Error::Numeric("non-finite critic loss".into()));
        }
        let (grads, _) = self.critic.backward(&acts, &upstream)?;
        adam_step(&mut self.critic, &grads, &mut self.critic_opt, self.cfg.critic_lr)?;
        Ok(mse)
    }

    /// One Adam step ascending the clipped surrogate. Each transition's
    /// `log_prob` is the reference policy for its probability ratio.
    pub fn ppo_actor_update(&mut self, batch: &[Transition]) -> Result<PpoStats> {
        if batch.is_empty() {
            return Err(Error::Contract("actor update needs a non-empty batch".into()));
        }
        let mut adv = self.td_errors(batch)?;
        normalize_advantages(&mut adv);
        let states = self.states_mat(batch.iter().map(|t| &t.state))?;
        let acts = self.actor.forward(&states)?;
        let e_max = self.cfg.e_max;
        let eps = self.cfg.clip_eps;
        let n = batch.len() as f64;
        let mut upstream = Mat::zeros(batch.len(), self.sensors * e_max);
        let mut ratios = Vec::with_capacity(batch.len());
        let mut clipped = 0;
        let mut surrogate = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let logits = acts.output().row(i);
            let heads: Vec<Vec<f64>> = logits.chunks(e_max).map(log_softmax).collect();
            let lp: f64 = heads.iter().zip(t.action.as_slice()).map(|(h, &e)| h[e - 1]).sum();
            let ratio = (lp - t.log_prob).exp();
            if !ratio.is_finite() {
                return Err(Error::Numeric("non-finite probability ratio".into()));
            }
            let a = adv[i];
            surrogate += (ratio * a).min(ratio.clamp(1.0 - eps, 1.0 + eps) * a) / n;
            ratios.push(ratio);
            // the unclipped branch carries gradient unless the ratio is past the bound in the advantage's direction
            let saturated = (a > 0.0 && ratio > 1.0 + eps) || (a < 0.0 && ratio < 1.0 - eps);
            if saturated {
                clipped += 1;
                continue;
            }
            let coeff = ratio * a / n;
            let row = upstream.row_mut(i);
            for (k, (h, &e)) in heads.iter().zip(t.action.as_slice()).enumerate() {
                for (j, lpj) in h.iter().enumerate() {
                    let onehot = if j + 1 == e { 1.0 } else { 0.0 };
                    // minimizing −surrogate
                    row[k * e_max + j] = -coeff * (onehot - lpj.exp());
                }
            }
        }
        let (grads, _) = self.actor.backward(&acts, &upstream)?;
        if !grads.is_zero() {
            adam_step(&mut self.actor, &grads, &mut self.actor_opt, self.cfg.actor_lr)?;
        }
        Ok(PpoStats {
            ratios,
            advantages: adv,
            clipped,
            surrogate,
        })
    }

    pub fn save_actor(&self, path: &Path) -> Result<()> {
        codec::save(path, &[&self.actor])
    }

    pub fn load_actor(path: &Path) -> Result<DenseNet> {
        let mut nets = codec::load(path)?;
        if nets.len() != 1 {
            return Err(Error::Input(format!(
                "{} holds {} networks, expected 1",
                path.display(),
                nets.len()
            )));
        }
        Ok(nets.pop().expect("one network"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};

    fn agent(k: usize) -> AgentNets {
        AgentNets::new(k, &AgentConfig::default(), &mut rng::stream(3, Purpose::Agent)).unwrap()
    }

    fn tr(state: f64, next: f64, reward: f64, action: Vec<usize>) -> Transition {
        Transition {
            state: StateVec::new(vec![state; 4]).unwrap(),
            action: ActionVec::new(action, 4).unwrap(),
            reward,
            next_state: StateVec::new(vec![next; 4]).unwrap(),
            log_prob: 0.0,
        }
    }

    #[test]
    fn td_hand_arithmetic() {
        let (r, gamma, v_next, v) = (1.0, 0.9, 2.0, 2.5);
        let td: f64 = r + gamma * v_next - v;
        assert!((td - 0.3).abs() < 1e-12);
        assert!((td * td - 0.09).abs() < 1e-12);
    }

    #[test]
    fn greedy_is_deterministic_and_legal() {
        let a = agent(3);
        let s = StateVec::new(vec![0.3; 10]).unwrap();
        let mut r = rng::stream(0, Purpose::Probe);
        let (x, lx) = a.select_action(&s, ActionMode::Greedy, &mut r).unwrap();
        let (y, ly) = a.select_action(&s, ActionMode::Greedy, &mut r).unwrap();
        assert_eq!(x, y);
        assert_eq!(lx, ly);
        for _ in 0..200 {
            let (act, lp) = a.select_action(&s, ActionMode::Sample, &mut r).unwrap();
            assert!(act.as_slice().iter().all(|&e| (1..=4).contains(&e)));
            assert!((a.log_prob(&s, &act).unwrap() - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn unnormalized_state_rejected() {
        let a = agent(1);
        let s = StateVec::new(vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            a.select_action(&s, ActionMode::Greedy, &mut rng::stream(0, Purpose::Probe)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_td_error_leaves_critic_unchanged() {
        let mut a = agent(1);
        a.cfg.gamma = 0.0;
        let s = StateVec::new(vec![0.5; 4]).unwrap();
        let v = a.value(&s).unwrap();
        let t = Transition {
            state: s.clone(),
            action: ActionVec::new(vec![1], 4).unwrap(),
            reward: v,
            next_state: s,
            log_prob: 0.0,
        };
        let before = a.critic.params();
        let mse = a.critic_update(&[t]).unwrap();
        assert!(mse < 1e-24);
        assert_eq!(a.critic.params(), before);
    }

    #[test]
    fn clip_saturation_kills_gradient() {
        let mut a = agent(1);
        let mut t = tr(0.2, 0.4, 5.0, vec![2]);
        t.log_prob = a.log_prob(&t.state, &t.action).unwrap() - 1.5f64.ln();
        // single sample: advantage stays raw and positive
        assert!(a.td_errors(std::slice::from_ref(&t)).unwrap()[0] > 0.0);
        let before = a.actor.params();
        let stats = a.ppo_actor_update(&[t]).unwrap();
        assert!((stats.ratios[0] - 1.5).abs() < 1e-9);
        assert_eq!(stats.clipped, 1);
        assert_eq!(a.actor.params(), before);
    }

    #[test]
    fn positive_advantage_raises_log_prob() {
        let mut a = agent(2);
        let mut t = Transition {
            state: StateVec::new(vec![0.4; 7]).unwrap(),
            action: ActionVec::new(vec![3, 1], 4).unwrap(),
            reward: 10.0,
            next_state: StateVec::new(vec![0.4; 7]).unwrap(),
            log_prob: 0.0,
        };
        t.log_prob = a.log_prob(&t.state, &t.action).unwrap();
        let before = t.log_prob;
        let stats = a.ppo_actor_update(std::slice::from_ref(&t)).unwrap();
        assert!((stats.ratios[0] - 1.0).abs() < 1e-12);
        assert!(a.log_prob(&t.state, &t.action).unwrap() > before);
    }

    #[test]
    fn normalization_moments() {
        let mut adv = vec![1.0, 2.0, 4.0, 8.0];
        normalize_advantages(&mut adv);
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((std - 1.0).abs() < 1e-9);
        let mut single = vec![3.0];
        normalize_advantages(&mut single);
        assert_eq!(single, vec![3.0]);
    }
}

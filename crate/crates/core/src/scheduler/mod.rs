//! Per-sensor local iteration scheduling: fixed baselines and a PPO agent.

pub mod agent;
pub mod buffer;
pub mod policy;
pub mod train;

pub use agent::{normalize_advantages, ActionMode, AgentConfig, AgentNets, PpoStats};
pub use buffer::{ReplayBuffer, Transition};
pub use policy::{baseline_policy, ActionVec, ScheduleKind, StateVec};
pub use train::{train_agent, update_agent, BanditEnv, SchedulingEnv, TrainReport};

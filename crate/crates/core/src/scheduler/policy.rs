//! State and action vectors plus the fixed baseline schedules.

use crate::envsim::{RoundConditions, StateScales};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Normalized observation `[collection; communication; frequency; t]`, length `3K + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVec(Vec<f64>);

impl StateVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 4 || !(values.len() - 1).is_multiple_of(3) {
            return Err(Error::dim(format!("state length {} is not 3K + 1", values.len())));
        }
        Ok(StateVec(values))
    }

    /// Divides each component by its fixed scale; `round / horizon` is the time feature.
    pub fn from_conditions(cond: &RoundConditions, scales: &StateScales, round: usize, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("state normalization needs a positive horizon".into()));
        }
        let mut v = Vec::with_capacity(3 * cond.sensors() + 1);
        v.extend(cond.collection.iter().map(|c| c / scales.collection));
        v.extend(cond.communication.iter().map(|c| c / scales.communication));
        v.extend(cond.freqs.iter().map(|f| f / scales.frequency));
        v.push(round.min(horizon) as f64 / horizon as f64);
        let s = StateVec::new(v)?;
        s.check_normalized()?;
        Ok(s)
    }

    pub fn sensors(&self) -> usize {
        (self.0.len() - 1) / 3
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn check_normalized(&self) -> Result<()> {
        match self.0.iter().position(|v| !(0.0..=1.0).contains(v)) {
            None => Ok(()),
            Some(i) => Err(Error::Contract(format!(
                "state component {i} = {} lies outside [0, 1]",
                self.0[i]
            ))),
        }
    }
}

/// Per-sensor local iteration counts `E_{t,k}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionVec(Vec<usize>);

impl ActionVec {
    pub fn new(values: Vec<usize>, e_max: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::dim("empty action"));
        }
        if let Some(&bad) = values.iter().find(|&&e| e == 0 || e > e_max) {
            return Err(Error::Contract(format!("iteration count {bad} outside [1, {e_max}]")));
        }
        Ok(ActionVec(values))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// Every sensor runs `E_max` iterations.
    #[serde(rename = "HO")]
    Homogeneous,
    /// Sensor 1 runs `E_max`, the rest run one.
    #[serde(rename = "HE")]
    Heterogeneous,
    /// Learned PPO policy.
    #[serde(rename = "DAO-PPO")]
    Adaptive,
}

impl ScheduleKind {
    pub fn label(self) -> &'static str {
        match self {
            ScheduleKind::Homogeneous => "HO",
            ScheduleKind::Heterogeneous => "HE",
            ScheduleKind::Adaptive => "DAO-PPO",
        }
    }
}

pub fn baseline_policy(kind: ScheduleKind, sensors: usize, e_max: usize) -> Result<ActionVec> {
    if sensors == 0 || e_max == 0 {
        return Err(Error::Config("baseline needs K >= 1 and E_max >= 1".into()));
    }
    let v = match kind {
        ScheduleKind::Homogeneous => vec![e_max; sensors],
        ScheduleKind::Heterogeneous => {
            let mut v = vec![1; sensors];
            v[0] = e_max;
            v
        }
        ScheduleKind::Adaptive => {
            return Err(Error::Config("DAO-PPO has no fixed baseline schedule".into()));
        }
    };
    ActionVec::new(v, e_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baselines() {
        let ho = baseline_policy(ScheduleKind::Homogeneous, 4, 4).unwrap();
        assert_eq!(ho.as_slice(), &[4, 4, 4, 4]);
        assert_eq!(ho.total(), 16);
        let he = baseline_policy(ScheduleKind::Heterogeneous, 4, 4).unwrap();
        assert_eq!(he.as_slice(), &[4, 1, 1, 1]);
        assert!(baseline_policy(ScheduleKind::Adaptive, 4, 4).is_err());
    }

    #[test]
    fn action_bounds() {
        assert!(ActionVec::new(vec![0, 1], 4).is_err());
        assert!(ActionVec::new(vec![5, 1], 4).is_err());
        assert!(ActionVec::new(vec![4, 1], 4).is_ok());
    }

    #[test]
    fn state_shape_and_range() {
        assert!(StateVec::new(vec![0.0; 5]).is_err());
        let s = StateVec::new(vec![0.5; 7]).unwrap();
        assert_eq!(s.sensors(), 2);
        assert!(s.check_normalized().is_ok());
        assert!(StateVec::new(vec![1.5, 0.0, 0.0, 0.0])
            .unwrap()
            .check_normalized()
            .is_err());
    }
}

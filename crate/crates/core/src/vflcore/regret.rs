//! Online regret against the best fixed model in hindsight.

use super::model::{weighted_task_loss, GlobalModel};
use crate::error::{Error, Result};
use crate::numkit::Mat;
use crate::streams::{Labels, RoundBatch};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Per-round online and comparator losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    online: Vec<f64>,
    comparator: Vec<f64>,
}

impl RegretLedger {
    pub fn regret_update(&mut self, online: f64, comparator: f64) -> Result<()> {
        if !online.is_finite() || !comparator.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite regret input (online {online}, comparator {comparator})"
            )));
        }
        self.online.push(online);
        self.comparator.push(comparator);
        Ok(())
    }

    pub fn rounds(&self) -> usize {
        self.online.len()
    }

    pub fn online(&self) -> &[f64] {
        &self.online
    }

    pub fn comparator(&self) -> &[f64] {
        &self.comparator
    }

    /// `Reg_T = Σ online − Σ comparator`.
    pub fn regret(&self) -> f64 {
        self.online.iter().sum::<f64>() - self.comparator.iter().sum::<f64>()
    }

    /// `Reg_t` for every prefix `t = 1..=T`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.online
            .iter()
            .zip(&self.comparator)
            .map(|(o, c)| {
                acc += o - c;
                acc
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HindsightConfig {
    pub epochs: usize,
    pub eta: f64,
    /// Training stops once the step size falls below this value.
    pub min_eta: f64,
}

impl Default for HindsightConfig {
    fn default() -> Self {
        HindsightConfig {
            epochs: 200,
            eta: 0.01,
            min_eta: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hindsight {
    pub comparator: GlobalModel,
    /// `F_t(Θ*)` for every round of the history.
    pub losses: Vec<f64>,
    pub cumulative: f64,
    /// Index into the probe set: 0 = trained comparator, 1 = zero model,
    /// `2 + i` = caller candidate `i`.
    pub chosen: usize,
}

/// Unique samples of the history with weights `w_i = (1/T) Σ_t [i ∈ W_t] / N_t`,
/// so that `Σ_i w_i ℓ_i = (1/T) Σ_t F_t`.
struct WeightedUnion {
    blocks: Vec<Mat>,
    labels: Labels,
    weights: Vec<f64>,
}

fn weighted_union(history: &[RoundBatch]) -> Result<WeightedUnion> {
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let t = history.len() as f64;
    for (b, batch) in history.iter().enumerate() {
        let n = batch.window_size();
        if n == 0 {
            return Err(Error::Input(format!("round {b} has an empty window")));
        }
        for (row, id) in batch.ids.iter().enumerate() {
            let slot = *index.entry(*id).or_insert_with(|| {
                picks.push((b, row));
                weights.push(0.0);
                weights.len() - 1
            });
            weights[slot] += 1.0 / (t * n as f64);
        }
    }
    let sensors = history[0].sensors();
    let blocks = (0..sensors)
        .map(|k| {
            let rows: Vec<&[f64]> = picks.iter().map(|&(b, r)| history[b].blocks[k].row(r)).collect();
            let cols = history[0].blocks[k].cols();
            Mat::from_vec(rows.len(), cols, rows.concat())
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = match &history[0].labels {
        Labels::Class(_) => Labels::Class(
            picks
                .iter()
                .map(|&(b, r)| match &history[b].labels {
                    Labels::Class(v) => Ok(v[r]),
                    Labels::Real(_) => Err(Error::Input("mixed label kinds in history".into())),
                })
                .collect::<Result<_>>()?,
        ),
        Labels::Real(_) => Labels::Real(
            picks
                .iter()
                .map(|&(b, r)| match &history[b].labels {
                    Labels::Real(v) => Ok(v[r]),
                    Labels::Class(_) => Err(Error::Input("mixed label kinds in history".into())),
                })
                .collect::<Result<_>>()?,
        ),
    };
    Ok(WeightedUnion {
        blocks,
        labels,
        weights,
    })
}

fn union_loss_and_step(model: &GlobalModel, u: &WeightedUnion, eta: Option<f64>) -> Result<(f64, Option<GlobalModel>)> {
    let mut feature_acts = Vec::with_capacity(model.sensors());
    for (net, x) in model.features.iter().zip(&u.blocks) {
        feature_acts.push(net.forward(x)?);
    }
    let outs: Vec<&Mat> = feature_acts.iter().map(|a| a.output()).collect();
    let head_acts = model.head.forward(&Mat::hcat(&outs)?)?;
    let (loss, grad) = weighted_task_loss(head_acts.output(), &u.labels, &u.weights)?;
    let Some(eta) = eta else {
        return Ok((loss, None));
    };
    let (head_grads, input_grad) = model.head.backward(&head_acts, &grad)?;
    let mut next = model.clone();
    next.head.ogd_step(&head_grads, eta)?;
    let mut offset = 0;
    for (k, acts) in feature_acts.iter().enumerate() {
        let w = acts.output().cols();
        let g = input_grad.col_block(offset, w)?;
        offset += w;
        let (grads, _) = model.features[k].backward(acts, &g)?;
        next.features[k].ogd_step(&grads, eta)?;
    }
    Ok((loss, Some(next)))
}

/// `F_t(Θ)` for every round of `history`.
pub fn per_round_losses(model: &GlobalModel, history: &[RoundBatch]) -> Result<Vec<f64>> {
    history.iter().map(|b| model.loss(&b.blocks, &b.labels)).collect()
}

/// Approximates `Θ* = argmin Σ_t F_t(Θ)` and returns its per-round losses.
///
/// Full-gradient descent on the weighted union of all windows starting from
/// `warm_start`; a step that does not lower the objective is rejected and the
/// step size halved. The result is the best of {trained model, zero model,
/// `candidates`} by cumulative loss.
pub fn hindsight_loss(
    history: &[RoundBatch],
    warm_start: &GlobalModel,
    candidates: &[GlobalModel],
    cfg: &HindsightConfig,
) -> Result<Hindsight> {
    if history.is_empty() {
        return Err(Error::Input("hindsight comparator needs at least one round".into()));
    }
    let union = weighted_union(history)?;
    let mut model = warm_start.clone();
    let mut eta = cfg.eta;
    let (mut current, _) = union_loss_and_step(&model, &union, None)?;
    for _ in 0..cfg.epochs {
        if eta < cfg.min_eta {
            break;
        }
        let (_, next) = union_loss_and_step(&model, &union, Some(eta))?;
        let next = next.expect("step requested");
        if !next.is_finite() {
            return Err(Error::Numeric("hindsight training diverged".into()));
        }
        let (loss, _) = union_loss_and_step(&next, &union, None)?;
        if loss.is_finite() && loss < current {
            model = next;
            current = loss;
        } else {
            eta *= 0.5;
        }
    }

    let mut probe_set = vec![model, warm_start.zeroed()];
    probe_set.extend(candidates.iter().cloned());
    let mut best: Option<(usize, Vec<f64>, f64)> = None;
    for (i, cand) in probe_set.iter().enumerate() {
        let losses = per_round_losses(cand, history)?;
        let total: f64 = losses.iter().sum();
        if !total.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, _, b)| total < *b) {
            best = Some((i, losses, total));
        }
    }
    let (chosen, losses, cumulative) =
        best.ok_or_else(|| Error::Numeric("every hindsight candidate has non-finite loss".into()))?;
    Ok(Hindsight {
        comparator: probe_set.swap_remove(chosen),
        losses,
        cumulative,
        chosen,
    })
}

/// Least-squares slope of `ln Reg_t` against `ln t` over `t ∈ [from, to]`
/// (1-based rounds). Rounds with non-positive regret are skipped.
pub fn log_log_slope(cumulative: &[f64], from: usize, to: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = (from.max(1)..=to.min(cumulative.len()))
        .filter(|&t| cumulative[t - 1] > 0.0)
        .map(|t| ((t as f64).ln(), cumulative[t - 1].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_identity_and_additivity() {
        let mut l = RegretLedger::default();
        for v in [1.0, 2.0, 0.5] {
            l.regret_update(v, v).unwrap();
        }
        assert_eq!(l.regret(), 0.0);

        let mut a = RegretLedger::default();
        a.regret_update(3.0, 1.0).unwrap();
        a.regret_update(2.5, 1.5).unwrap();
        assert_eq!(a.regret(), (3.0 - 1.0) + (2.5 - 1.5));
        assert_eq!(a.cumulative(), vec![2.0, 3.0]);
        assert!(a.regret_update(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let c: Vec<f64> = (1..=1000).map(|t| (t as f64).sqrt() * 3.0).collect();
        let s = log_log_slope(&c, 10, 1000).unwrap();
        assert!((s - 0.5).abs() < 1e-9);
    }
}

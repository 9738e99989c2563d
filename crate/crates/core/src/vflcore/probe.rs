//! Empirical estimates of the quantities that appear in the regret bound.

use super::model::{assemble_representation, head_gradient, sensor_gradient, GlobalModel};
use crate::error::Result;
use crate::numkit::Mat;
use crate::streams::Labels;
use serde::{Deserialize, Serialize};

/// Running maxima of per-coordinate gradient gaps plus iteration extremes.
///
/// `beta_noisy` compares gradients computed from the raw uplink against the
/// clean ones; `beta_denoised` does the same for autoencoder outputs and is
/// only updated once a denoiser is in service. `beta_noisy_served` tracks the
/// noisy gap over exactly the rounds where `beta_denoised` is measured, so the
/// two are comparable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryProbe {
    pub beta_noisy: f64,
    pub beta_noisy_served: f64,
    pub beta_denoised: Option<f64>,
    pub e_max: Option<usize>,
    pub e_min: Option<usize>,
    pub rounds_probed: usize,
    /// Gradient-change constant; documented, not estimated.
    pub lambda: Option<f64>,
    /// Partial-derivative bound; documented, not estimated.
    pub lipschitz: Option<f64>,
    /// Parameter magnitude bound; documented, not estimated.
    pub rho: Option<f64>,
}

impl TheoryProbe {
    pub fn record_schedule(&mut self, row: &[usize]) {
        if let (Some(&hi), Some(&lo)) = (row.iter().max(), row.iter().min()) {
            self.e_max = Some(self.e_max.map_or(hi, |m| m.max(hi)));
            self.e_min = Some(self.e_min.map_or(lo, |m| m.min(lo)));
        }
    }
}

/// Stacked gradient `[∇_0 F; ∇_1 F; …; ∇_K F]` at the round start when the
/// representation carries `embeddings`. Each sensor's own block is recomputed
/// from its (clean) extractor.
pub fn stacked_gradient(model: &GlobalModel, embeddings: &[Mat], blocks: &[Mat], labels: &Labels) -> Result<Vec<f64>> {
    let rep = assemble_representation(&model.head, embeddings.to_vec(), model.sensors())?;
    let (_, g0) = head_gradient(&model.head, embeddings, labels)?;
    let mut out = g0.to_vec();
    for k in 1..=model.sensors() {
        let view = rep.without(k)?;
        let (_, gk) = sensor_gradient(&view, &model.features[k - 1], &blocks[k - 1], labels)?;
        out.extend(gk.to_vec());
    }
    Ok(out)
}

pub fn max_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Updates the probe with one round's clean/noisy/(denoised) views.
pub fn gradient_gap_probe(
    probe: &mut TheoryProbe,
    model: &GlobalModel,
    blocks: &[Mat],
    labels: &Labels,
    clean: &[Mat],
    noisy: &[Mat],
    denoised: Option<&[Mat]>,
) -> Result<()> {
    let g = stacked_gradient(model, clean, blocks, labels)?;
    let gn = stacked_gradient(model, noisy, blocks, labels)?;
    let noisy_gap = max_abs_gap(&g, &gn);
    probe.beta_noisy = probe.beta_noisy.max(noisy_gap);
    if let Some(d) = denoised {
        let gd = stacked_gradient(model, d, blocks, labels)?;
        let gap = max_abs_gap(&g, &gd);
        probe.beta_denoised = Some(probe.beta_denoised.map_or(gap, |b| b.max(gap)));
        probe.beta_noisy_served = probe.beta_noisy_served.max(noisy_gap);
    }
    probe.rounds_probed += 1;
    Ok(())
}

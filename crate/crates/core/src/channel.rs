//! Sensor-to-server uplink.

use crate::error::{Error, Result};
use crate::numkit::Mat;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ChannelSpec {
    /// Noise-free pass-through.
    Identity,
    /// Uniform scalar quantizer on `[-clip, clip]` with `levels` reconstruction
    /// points, both endpoints included.
    Quantizer { levels: u32, clip: f64 },
}

impl ChannelSpec {
    pub fn quantizer(levels: u32, clip: f64) -> Result<Self> {
        let spec = ChannelSpec::Quantizer { levels, clip };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ChannelSpec::Identity => Ok(()),
            ChannelSpec::Quantizer { levels, clip } => {
                if levels < 2 {
                    return Err(Error::Config(format!("quantizer needs >= 2 levels, got {levels}")));
                }
                if !(clip > 0.0) || !clip.is_finite() {
                    return Err(Error::Config(format!("quantizer clip {clip} must be positive")));
                }
                Ok(())
            }
        }
    }

    /// Quantization step `2a / (L - 1)`; zero for the identity channel.
    pub fn step(&self) -> f64 {
        match *self {
            ChannelSpec::Identity => 0.0,
            ChannelSpec::Quantizer { levels, clip } => 2.0 * clip / (levels - 1) as f64,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, ChannelSpec::Identity)
    }

    /// Quantizes one value: clip, then snap to the nearest level (ties go up).
    #[inline]
    pub fn quantize(&self, x: f64) -> f64 {
        match *self {
            ChannelSpec::Identity => x,
            ChannelSpec::Quantizer { levels, clip } => {
                let step = self.step();
                let top = (levels - 1) as f64;
                let clipped = x.clamp(-clip, clip);
                let idx = ((clipped + clip) / step + 0.5).floor().clamp(0.0, top);
                -clip + idx * step
            }
        }
    }

    /// Sends an embedding over the uplink.
    pub fn transmit(&self, embedding: &Mat) -> Result<Mat> {
        self.validate()?;
        if !embedding.is_finite() {
            return Err(Error::Numeric("non-finite embedding on uplink".into()));
        }
        Ok(match self {
            ChannelSpec::Identity => embedding.clone(),
            _ => embedding.map(|v| self.quantize(v)),
        })
    }
}

/// Clip range covering the `quantile` of absolute embedding values.
///
/// Uses the nearest-rank definition over all entries of all blocks.
pub fn calibrate_clip(embeddings: &[&Mat], quantile: f64) -> Result<f64> {
    let mut abs: Vec<f64> = embeddings
        .iter()
        .flat_map(|m| m.as_slice().iter().map(|v| v.abs()))
        .collect();
    if abs.is_empty() {
        return Err(Error::Config("cannot calibrate clip from empty embeddings".into()));
    }
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::Config(format!("quantile {quantile} outside [0, 1]")));
    }
    abs.sort_by(f64::total_cmp);
    let rank = ((quantile * abs.len() as f64).ceil() as usize).clamp(1, abs.len());
    let a = abs[rank - 1];
    if a > 0.0 && a.is_finite() {
        Ok(a)
    } else {
        Err(Error::Numeric(format!("degenerate clip range {a}")))
    }
}

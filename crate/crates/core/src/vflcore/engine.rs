//! One global round of the protocol: extract → transmit → denoise → assemble
//! → distribute → parallel local updates → inherit.

use super::model::{
    accuracy, assemble_representation, head_local_update, sensor_local_update, task_loss, GlobalModel, ModelConfig,
};
use super::probe::{gradient_gap_probe, TheoryProbe};
use crate::channel::{calibrate_clip, ChannelSpec};
use crate::denoiser::{DaeConfig, DaeModel, DaePair};
use crate::envsim::{self, EnvConfig, RewardWeights, RoundConditions};
use crate::error::{Error, Result};
use crate::numkit::{DenseNet, Mat};
use crate::par::{self, Exec};
use crate::rng::{self, Purpose};
use crate::streams::{RoundBatch, StreamConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseMode {
    /// Noise-free uplink.
    #[serde(rename = "NE")]
    NoiseExcluded,
    /// Quantized uplink used as received.
    #[serde(rename = "NI")]
    NoiseIncluded,
    /// Quantized uplink cleaned by per-sensor autoencoders.
    #[serde(rename = "DAO-NR")]
    Denoised,
}

impl NoiseMode {
    pub fn label(self) -> &'static str {
        match self {
            NoiseMode::NoiseExcluded => "NE",
            NoiseMode::NoiseIncluded => "NI",
            NoiseMode::Denoised => "DAO-NR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub levels: u32,
    /// Fixed clip range; when absent it is calibrated on the first round.
    pub clip: Option<f64>,
    pub clip_quantile: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            levels: 8,
            clip: None,
            clip_quantile: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub model: ModelConfig,
    pub noise_mode: NoiseMode,
    pub channel: ChannelConfig,
    /// Denoising learning period `T_dl` in rounds.
    pub learning_period: usize,
    pub dae: DaeConfig,
    /// OGD learning rate for extractors and head.
    pub eta: f64,
    /// Record gradient gaps every round (costs extra backward passes).
    pub probe: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            model: ModelConfig::default(),
            noise_mode: NoiseMode::NoiseExcluded,
            channel: ChannelConfig::default(),
            learning_period: 40,
            dae: DaeConfig::default(),
            eta: 0.01,
            probe: false,
            exec: Exec::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.dae.validate()?;
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!(
                "eta {} must be finite and non-negative",
                self.eta
            )));
        }
        if self.channel.levels < 2 {
            return Err(Error::Config(format!(
                "quantizer needs >= 2 levels, got {}",
                self.channel.levels
            )));
        }
        if !(self.channel.clip_quantile > 0.0 && self.channel.clip_quantile <= 1.0) {
            return Err(Error::Config("clip_quantile must lie in (0, 1]".into()));
        }
        if let Some(c) = self.channel.clip {
            ChannelSpec::quantizer(self.channel.levels, c)?;
        }
        Ok(())
    }
}

/// Everything a round needs besides the engine itself.
#[derive(Debug, Clone, Copy)]
pub struct RoundInputs<'a> {
    pub batch: &'a RoundBatch,
    pub test: &'a RoundBatch,
    pub conditions: &'a RoundConditions,
    pub env: &'a EnvConfig,
    pub weights: &'a RewardWeights,
    /// `E_{t,k}` for sensors `1..=K`.
    pub schedule: &'a [usize],
}

/// Per-round outcome. The regret column is filled later, once the hindsight
/// comparator is known; `online_loss` is this round's `F_t(Θ^{t,0})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub online_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub latency: f64,
    pub disparity: f64,
    pub reward: f64,
    pub iterations: Vec<usize>,
    pub server_iterations: usize,
    pub dae_loss: Option<f64>,
    pub snapshot_checksum: u64,
}

impl RoundMetrics {
    pub fn is_finite(&self) -> bool {
        [
            self.online_loss,
            self.test_loss,
            self.test_acc,
            self.latency,
            self.disparity,
            self.reward,
        ]
        .iter()
        .all(|v| v.is_finite())
            && self.dae_loss.is_none_or(f64::is_finite)
    }
}

#[derive(Debug, Clone)]
pub struct Engine {
    cfg: EngineConfig,
    model: GlobalModel,
    channel: Option<ChannelSpec>,
    daes: Vec<DaeModel>,
    round: usize,
    probe: Option<TheoryProbe>,
}

enum PartyUpdate {
    Head(DenseNet),
    Sensor(DenseNet),
}

impl Engine {
    pub fn new(cfg: &EngineConfig, stream: &StreamConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        stream.validate()?;
        let mut init_rng = rng::stream(seed, Purpose::ModelInit);
        let model = GlobalModel::init(&cfg.model, &stream.sensor_widths, stream.task, &mut init_rng)?;
        Engine::with_model(cfg, model, seed)
    }

    /// Starts from an explicit model (tests, checkpoints).
    pub fn with_model(cfg: &EngineConfig, model: GlobalModel, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let daes = if cfg.noise_mode == NoiseMode::Denoised {
            model
                .embedding_widths()
                .iter()
                .enumerate()
                .map(|(k, &w)| {
                    DaeModel::new(
                        w,
                        cfg.learning_period,
                        &cfg.dae,
                        rng::indexed_stream(seed, Purpose::DaeInit, k as u64),
                    )
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let channel = match cfg.noise_mode {
            // probing still needs the real uplink to measure its gradient gap
            NoiseMode::NoiseExcluded if !cfg.probe => Some(ChannelSpec::Identity),
            _ => cfg
                .channel
                .clip
                .map(|c| ChannelSpec::quantizer(cfg.channel.levels, c))
                .transpose()?,
        };
        Ok(Engine {
            cfg: cfg.clone(),
            model,
            channel,
            daes,
            round: 0,
            probe: cfg.probe.then(TheoryProbe::default),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn model(&self) -> &GlobalModel {
        &self.model
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn channel(&self) -> Option<&ChannelSpec> {
        self.channel.as_ref()
    }

    pub fn daes(&self) -> &[DaeModel] {
        &self.daes
    }

    pub fn probe(&self) -> Result<&TheoryProbe> {
        self.probe
            .as_ref()
            .ok_or_else(|| Error::State("probe mode is disabled for this engine".into()))
    }

    pub(crate) fn restore(
        &mut self,
        model: GlobalModel,
        channel: Option<ChannelSpec>,
        daes: Vec<DaeModel>,
        round: usize,
    ) {
        self.model = model;
        if channel.is_some() {
            self.channel = channel;
        }
        if !daes.is_empty() {
            self.daes = daes;
        }
        self.round = round;
    }

    fn denoiser_ready(&self) -> bool {
        !self.daes.is_empty() && self.daes.iter().all(DaeModel::is_frozen)
    }

    fn ensure_channel(&mut self, clean: &[Mat]) -> Result<ChannelSpec> {
        if let Some(c) = self.channel {
            return Ok(c);
        }
        let refs: Vec<&Mat> = clean.iter().collect();
        let clip = calibrate_clip(&refs, self.cfg.channel.clip_quantile)?;
        let spec = ChannelSpec::quantizer(self.cfg.channel.levels, clip)?;
        self.channel = Some(spec);
        Ok(spec)
    }

    /// Embeddings as the server would see them at inference time.
    pub fn server_view(&self, blocks: &[Mat]) -> Result<Vec<Mat>> {
        let clean = self.model.embeddings(blocks)?;
        match self.cfg.noise_mode {
            NoiseMode::NoiseExcluded => Ok(clean),
            _ => {
                let Some(ch) = self.channel else {
                    // no upload has happened yet; nothing to calibrate against
                    return Ok(clean);
                };
                if self.cfg.noise_mode == NoiseMode::Denoised && !self.denoiser_ready() {
                    return Ok(clean);
                }
                let noisy = clean.iter().map(|h| ch.transmit(h)).collect::<Result<Vec<_>>>()?;
                if self.cfg.noise_mode == NoiseMode::Denoised {
                    noisy.iter().zip(&self.daes).map(|(h, d)| d.denoise(h)).collect()
                } else {
                    Ok(noisy)
                }
            }
        }
    }

    /// Test loss and accuracy through the mode's inference path.
    pub fn evaluate(&self, batch: &RoundBatch) -> Result<(f64, f64)> {
        let emb = self.server_view(&batch.blocks)?;
        let refs: Vec<&Mat> = emb.iter().collect();
        let pred = self.model.head.predict(&Mat::hcat(&refs)?)?;
        let (loss, _) = task_loss(&pred, &batch.labels)?;
        Ok((loss, accuracy(&pred, &batch.labels)?))
    }

    fn check_schedule(&self, row: &[usize]) -> Result<()> {
        if row.len() != self.model.sensors() {
            return Err(Error::Contract(format!(
                "schedule row has {} entries for {} sensors",
                row.len(),
                self.model.sensors()
            )));
        }
        if row.contains(&0) {
            return Err(Error::Contract(
                "every sensor performs at least one local iteration".into(),
            ));
        }
        Ok(())
    }

    pub fn run_global_round(&mut self, inputs: RoundInputs<'_>) -> Result<RoundMetrics> {
        let RoundInputs {
            batch,
            test,
            conditions,
            env,
            weights,
            schedule,
        } = inputs;
        self.check_schedule(schedule)?;
        if batch.sensors() != self.model.sensors() {
            return Err(Error::dim(format!(
                "batch has {} blocks for {} sensors",
                batch.sensors(),
                self.model.sensors()
            )));
        }
        let round = self.round;
        let exec = self.cfg.exec;
        let diverged = |what: &str| Error::Divergence {
            round,
            what: what.to_string(),
        };

        // 1. extract (in parallel across sensors)
        let clean = par::map_range(exec, self.model.sensors(), |k| {
            super::model::extract_embedding(&self.model.features[k], &batch.blocks[k])
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        if clean.iter().any(|h| !h.is_finite()) {
            return Err(diverged("non-finite embedding"));
        }
        let online_loss = super::model::head_loss(&self.model.head, &clean, &batch.labels)?;

        // 2. transmit
        let channel = self.ensure_channel(&clean)?;
        let noisy = clean.iter().map(|h| channel.transmit(h)).collect::<Result<Vec<_>>>()?;

        // 3. denoise
        let ready_at_start = self.denoiser_ready();
        let mut dae_loss = None;
        let served: Vec<Mat> = match self.cfg.noise_mode {
            NoiseMode::NoiseExcluded => clean.clone(),
            NoiseMode::NoiseIncluded => noisy.clone(),
            NoiseMode::Denoised if ready_at_start => noisy
                .iter()
                .zip(&self.daes)
                .map(|(h, d)| d.denoise(h))
                .collect::<Result<Vec<_>>>()?,
            NoiseMode::Denoised => {
                let pairs: Vec<(DaeModel, DaePair)> = self
                    .daes
                    .drain(..)
                    .zip(noisy.iter().zip(&clean))
                    .map(|(d, (n, c))| {
                        (
                            d,
                            DaePair {
                                noisy: n.clone(),
                                clean: c.clone(),
                            },
                        )
                    })
                    .collect();
                let trained = par::map(exec, &pairs, |(d, p)| {
                    let mut d = d.clone();
                    if d.is_frozen() {
                        return Ok((d, None));
                    }
                    let l = d.train_round(p)?;
                    Ok((d, Some(l)))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                let mut total = 0.0;
                let mut count = 0;
                for (d, l) in trained {
                    if let Some(l) = l {
                        total += l;
                        count += 1;
                    }
                    self.daes.push(d);
                }
                if count > 0 {
                    dae_loss = Some(total / count as f64);
                }
                // clean embeddings are available during the learning period
                clean.clone()
            }
        };

        if let Some(probe) = self.probe.as_mut() {
            probe.record_schedule(schedule);
            let denoised = (self.cfg.noise_mode == NoiseMode::Denoised && ready_at_start).then_some(served.as_slice());
            gradient_gap_probe(
                probe,
                &self.model,
                &batch.blocks,
                &batch.labels,
                &clean,
                &noisy,
                denoised,
            )?;
        }

        // 4. assemble + distribute
        let rep = assemble_representation(&self.model.head, served, self.model.sensors())?;
        let snapshot_checksum = rep.checksum();
        let server_iterations = *schedule.iter().max().expect("non-empty schedule");
        let eta = self.cfg.eta;

        // 5. local updates: party 0 is the head, k >= 1 are sensors
        let updates = par::map_range(exec, self.model.sensors() + 1, |party| -> Result<PartyUpdate> {
            if party == 0 {
                let mut head = rep.head().clone();
                head_local_update(&mut head, rep.embeddings(), &batch.labels, server_iterations, eta)?;
                Ok(PartyUpdate::Head(head))
            } else {
                let view = rep.without(party)?;
                let mut net = self.model.features[party - 1].clone();
                sensor_local_update(
                    &view,
                    &mut net,
                    &batch.blocks[party - 1],
                    &batch.labels,
                    schedule[party - 1],
                    eta,
                )?;
                Ok(PartyUpdate::Sensor(net))
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::Numeric(m) => diverged(&m),
            other => other,
        })?;

        // 6. inherit, in party order
        for (party, up) in updates.into_iter().enumerate() {
            match up {
                PartyUpdate::Head(h) => self.model.head = h,
                PartyUpdate::Sensor(n) => self.model.features[party - 1] = n,
            }
        }
        if !self.model.is_finite() {
            return Err(diverged("non-finite model parameters"));
        }

        let (test_loss, test_acc) = self.evaluate(test)?;
        let latency = conditions.total_latency(env, schedule)?;
        let disparity = envsim::disparity(schedule);
        let reward = envsim::reward(weights, test_acc, latency, disparity);
        self.round += 1;

        let metrics = RoundMetrics {
            round,
            online_loss,
            test_loss,
            test_acc,
            latency,
            disparity,
            reward,
            iterations: schedule.to_vec(),
            server_iterations,
            dae_loss,
            snapshot_checksum,
        };
        if !metrics.is_finite() {
            return Err(diverged("non-finite round metrics"));
        }
        Ok(metrics)
    }
}

//! Vertically partitioned online data streams.
//!
//! A hidden latent vector `z ~ N(0, I)` drives every sample. Sensor `k`
//! observes `tanh(A_k z) + ε`, and the label is `argmax(W z)` (classification,
//! `W` with orthonormal rows so classes are exactly balanced in expectation) or
//! `w · z` (regression). By default `A_k` only touches sensor `k`'s own slice
//! of `z`, so no sensor can predict the label alone.

use crate::error::{Error, Result};
use crate::numkit::Mat;
use crate::rng::{self, Purpose};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Fixed-size window: each round adds `new_per_round` samples and drops as
    /// many of the oldest.
    Sliding,
    /// Growing window: samples are only ever added.
    Incremental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub sensor_widths: Vec<usize>,
    pub task: Task,
    pub initial_samples: usize,
    pub new_per_round: usize,
    pub regime: Regime,
    pub noise_std: f64,
    pub latent_dim: usize,
    /// Each sensor observes its own slice of the latent coordinates instead
    /// of a dense mix of all of them.
    pub disjoint_latent: bool,
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            sensor_widths: vec![8; 4],
            task: Task::Classification { classes: 4 },
            initial_samples: 256,
            new_per_round: 32,
            regime: Regime::Sliding,
            noise_std: 0.1,
            latent_dim: 8,
            disjoint_latent: true,
            test_samples: 512,
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn sensors(&self) -> usize {
        self.sensor_widths.len()
    }

    pub fn total_width(&self) -> usize {
        self.sensor_widths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensor_widths.is_empty() || self.sensor_widths.contains(&0) {
            return Err(Error::Config("every sensor needs a positive feature width".into()));
        }
        if self.new_per_round == 0 {
            return Err(Error::Config("new_per_round must be at least 1".into()));
        }
        if self.initial_samples < self.new_per_round {
            return Err(Error::Config(format!(
                "initial_samples {} smaller than new_per_round {}",
                self.initial_samples, self.new_per_round
            )));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return Err(Error::Config("classification needs at least 2 classes".into()));
            }
            if classes > self.latent_dim {
                return Err(Error::Config(format!("{classes} classes need latent_dim >= {classes}")));
            }
        }
        if self.latent_dim == 0 || self.test_samples == 0 {
            return Err(Error::Config("latent_dim and test_samples must be positive".into()));
        }
        if self.disjoint_latent && self.latent_dim < self.sensor_widths.len() {
            return Err(Error::Config(format!(
                "disjoint latent slices need latent_dim >= {} sensors",
                self.sensor_widths.len()
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// Targets shared by every sensor and the server.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Class(Vec<usize>),
    Real(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Class(v) => v.len(),
            Labels::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Class(v) => Labels::Class(idx.iter().map(|&i| v[i]).collect()),
            Labels::Real(v) => Labels::Real(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    fn value(&self, i: usize) -> f64 {
        match self {
            Labels::Class(v) => v[i] as f64,
            Labels::Real(v) => v[i],
        }
    }
}

/// One round's training window, split by sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundBatch {
    pub round: usize,
    /// Stream-wide sample ids, row-aligned with every block.
    pub ids: Vec<u64>,
    pub blocks: Vec<Mat>,
    pub labels: Labels,
}

impl RoundBatch {
    pub fn window_size(&self) -> usize {
        self.ids.len()
    }

    pub fn sensors(&self) -> usize {
        self.blocks.len()
    }

    /// Restricts the batch to the listed rows.
    pub fn select_rows(&self, idx: &[usize]) -> RoundBatch {
        RoundBatch {
            round: self.round,
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            blocks: self.blocks.iter().map(|b| b.select_rows(idx)).collect(),
            labels: self.labels.select(idx),
        }
    }

    /// Debug export: `id, s1_f1.., s2_f1.., label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("id");
        for (k, b) in self.blocks.iter().enumerate() {
            for j in 0..b.cols() {
                out.push_str(&format!(",s{}_f{}", k + 1, j + 1));
            }
        }
        out.push_str(",label\n");
        for n in 0..self.window_size() {
            out.push_str(&self.ids[n].to_string());
            for b in &self.blocks {
                for v in b.row(n) {
                    out.push_str(&format!(",{v:.9e}"));
                }
            }
            match &self.labels {
                Labels::Class(c) => out.push_str(&format!(",{}\n", c[n])),
                Labels::Real(r) => out.push_str(&format!(",{:.9e}\n", r[n])),
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// The hidden generative map, fixed for a stream's lifetime.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMap {
    /// One `P_k × latent_dim` matrix per sensor.
    pub sensor_maps: Vec<Mat>,
    /// `classes × latent_dim` (orthonormal rows) or `1 × latent_dim` (unit row).
    pub label_map: Mat,
    pub task: Task,
    pub noise_std: f64,
}

impl LatentMap {
    fn generate(cfg: &StreamConfig, rng: &mut ChaCha8Rng) -> LatentMap {
        let d = cfg.latent_dim;
        let k_total = cfg.sensor_widths.len();
        let sensor_maps = cfg
            .sensor_widths
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let (lo, hi) = if cfg.disjoint_latent {
                    (k * d / k_total, (k + 1) * d / k_total)
                } else {
                    (0, d)
                };
                let scale = 1.0 / ((hi - lo) as f64).sqrt();
                let mut a = Mat::zeros(p, d);
                for i in 0..p {
                    for j in lo..hi {
                        a.row_mut(i)[j] = scale * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                a
            })
            .collect();
        let rows = match cfg.task {
            Task::Classification { classes } => classes,
            Task::Regression => 1,
        };
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
        while basis.len() < rows {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(b).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|a| *a /= norm);
                basis.push(v);
            }
        }
        LatentMap {
            sensor_maps,
            label_map: Mat::from_rows(&basis).expect("equal rows"),
            task: cfg.task,
            noise_std: cfg.noise_std,
        }
    }

    /// Noise-free sensor view of a latent vector.
    pub fn clean_view(&self, sensor: usize, z: &[f64]) -> Vec<f64> {
        let a = &self.sensor_maps[sensor];
        (0..a.rows())
            .map(|i| a.row(i).iter().zip(z).map(|(w, v)| w * v).sum::<f64>().tanh())
            .collect()
    }

    /// Label value of a latent vector (class index as `f64` for classification).
    pub fn label_of(&self, z: &[f64]) -> f64 {
        let scores: Vec<f64> = (0..self.label_map.rows())
            .map(|i| self.label_map.row(i).iter().zip(z).map(|(w, v)| w * v).sum())
            .collect();
        match self.task {
            Task::Classification { .. } => {
                let mut best = 0;
                for (i, s) in scores.iter().enumerate() {
                    if *s > scores[best] {
                        best = i;
                    }
                }
                best as f64
            }
            Task::Regression => scores[0],
        }
    }
}

#[derive(Debug, Clone)]
struct Sample {
    latent: Vec<f64>,
    features: Vec<Vec<f64>>,
    label: f64,
}

/// Live stream: latent map, sample archive, and the current window.
#[derive(Debug, Clone)]
pub struct StreamState {
    cfg: StreamConfig,
    map: LatentMap,
    rng: ChaCha8Rng,
    archive: Vec<Sample>,
    window: VecDeque<u64>,
    round: usize,
}

pub fn make_stream(cfg: &StreamConfig) -> Result<StreamState> {
    cfg.validate()?;
    let mut map_rng = rng::stream(cfg.seed, Purpose::LatentMap);
    let map = LatentMap::generate(cfg, &mut map_rng);
    let mut state = StreamState {
        cfg: cfg.clone(),
        map,
        rng: rng::stream(cfg.seed, Purpose::TrainSamples),
        archive: Vec::new(),
        window: VecDeque::new(),
        round: 0,
    };
    for _ in 0..cfg.initial_samples {
        let id = state.push_sample();
        state.window.push_back(id);
    }
    Ok(state)
}

fn draw_sample(map: &LatentMap, latent_dim: usize, rng: &mut ChaCha8Rng) -> Sample {
    let latent: Vec<f64> = (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect();
    let features = (0..map.sensor_maps.len())
        .map(|k| {
            let mut x = map.clean_view(k, &latent);
            if map.noise_std > 0.0 {
                for v in &mut x {
                    *v += map.noise_std * rng.sample::<f64, _>(StandardNormal);
                }
            }
            x
        })
        .collect();
    let label = map.label_of(&latent);
    Sample {
        latent,
        features,
        label,
    }
}

impl StreamState {
    fn push_sample(&mut self) -> u64 {
        let s = draw_sample(&self.map, self.cfg.latent_dim, &mut self.rng);
        self.archive.push(s);
        (self.archive.len() - 1) as u64
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    pub fn latent_map(&self) -> &LatentMap {
        &self.map
    }

    /// Rounds advanced so far.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Adds this round's samples, applies the regime rule, returns the window.
    pub fn next_round(&mut self) -> RoundBatch {
        for _ in 0..self.cfg.new_per_round {
            let id = self.push_sample();
            self.window.push_back(id);
        }
        if self.cfg.regime == Regime::Sliding {
            for _ in 0..self.cfg.new_per_round {
                self.window.pop_front();
            }
        }
        let batch = self.current();
        self.round += 1;
        batch
    }

    /// The current window without advancing.
    pub fn current(&self) -> RoundBatch {
        let ids: Vec<u64> = self.window.iter().copied().collect();
        self.batch_from_ids(self.round, &ids)
    }

    /// Materializes archived samples by id.
    pub fn batch_from_ids(&self, round: usize, ids: &[u64]) -> RoundBatch {
        let blocks = self
            .cfg
            .sensor_widths
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let mut data = Vec::with_capacity(ids.len() * p);
                for &id in ids {
                    data.extend_from_slice(&self.archive[id as usize].features[k]);
                }
                Mat::from_vec(ids.len(), p, data).expect("sized")
            })
            .collect();
        let labels = self.labels_for(ids.iter().map(|&id| self.archive[id as usize].label));
        RoundBatch {
            round,
            ids: ids.to_vec(),
            blocks,
            labels,
        }
    }

    fn labels_for(&self, values: impl Iterator<Item = f64>) -> Labels {
        match self.cfg.task {
            Task::Classification { .. } => Labels::Class(values.map(|v| v as usize).collect()),
            Task::Regression => Labels::Real(values.collect()),
        }
    }

    /// Latent vector of an archived sample.
    pub fn latent_of(&self, id: u64) -> Option<&[f64]> {
        self.archive.get(id as usize).map(|s| s.latent.as_slice())
    }

    /// Recomputes a stored sample's label from its latent and the map.
    pub fn replay_label(&self, id: u64) -> Option<f64> {
        self.latent_of(id).map(|z| self.map.label_of(z))
    }

    pub fn archived(&self) -> usize {
        self.archive.len()
    }

    /// Fresh held-out batch for `round`, drawn from the same latent map but
    /// an independent random stream. Ids are not meaningful for test batches.
    pub fn test_batch(&self, round: usize) -> RoundBatch {
        let mut rng = rng::indexed_stream(self.cfg.seed, Purpose::TestSamples, round as u64);
        let samples: Vec<Sample> = (0..self.cfg.test_samples)
            .map(|_| draw_sample(&self.map, self.cfg.latent_dim, &mut rng))
            .collect();
        let blocks = self
            .cfg
            .sensor_widths
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let data = samples.iter().flat_map(|s| s.features[k].iter().copied()).collect();
                Mat::from_vec(samples.len(), p, data).expect("sized")
            })
            .collect();
        RoundBatch {
            round,
            ids: (0..samples.len() as u64).collect(),
            blocks,
            labels: self.labels_for(samples.iter().map(|s| s.label)),
        }
    }
}

/// Label value at row `i` as `f64`.
pub fn label_value(labels: &Labels, i: usize) -> f64 {
    labels.value(i)
}

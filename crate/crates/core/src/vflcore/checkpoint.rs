//! Engine snapshots: binary weights plus a JSON manifest.

use super::engine::{Engine, EngineConfig};
use super::model::GlobalModel;
use super::regret::RegretLedger;
use crate::channel::ChannelSpec;
use crate::codec;
use crate::denoiser::DaeModel;
use crate::error::{Error, Result};
use crate::streams::Task;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const MODEL_FILE: &str = "model.dvfw";
const DAE_FILE: &str = "dae.dvfw";
const MANIFEST_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: u32,
    pub round: usize,
    pub sensors: usize,
    pub task: Task,
    pub channel: Option<ChannelSpec>,
    pub has_denoisers: bool,
    pub ledger: RegretLedger,
}

/// Writes `model.dvfw` (head then extractors), `dae.dvfw` (encoder/decoder per
/// sensor, DAO-NR only) and `checkpoint.json` into `dir`.
pub fn save_checkpoint(engine: &Engine, ledger: &RegretLedger, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model = engine.model();
    let mut nets = vec![&model.head];
    nets.extend(model.features.iter());
    codec::save(&dir.join(MODEL_FILE), &nets)?;
    let daes = engine.daes();
    if !daes.is_empty() {
        let nets: Vec<_> = daes.iter().flat_map(|d| [&d.encoder, &d.decoder]).collect();
        codec::save(&dir.join(DAE_FILE), &nets)?;
    }
    let manifest = CheckpointManifest {
        format: 1,
        round: engine.round(),
        sensors: model.sensors(),
        task: model.task,
        channel: engine.channel().copied(),
        has_denoisers: !daes.is_empty(),
        ledger: ledger.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Rebuilds an engine from `dir`. Loaded denoisers are frozen; optimizer
/// state is not persisted.
pub fn load_checkpoint(dir: &Path, cfg: &EngineConfig, seed: u64) -> Result<(Engine, RegretLedger)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    let mut nets = codec::load(&dir.join(MODEL_FILE))?;
    if nets.len() != manifest.sensors + 1 {
        return Err(Error::Input(format!(
            "checkpoint holds {} networks for {} sensors",
            nets.len(),
            manifest.sensors
        )));
    }
    let features = nets.split_off(1);
    let head = nets.pop().expect("head present");
    let model = GlobalModel::from_parts(head, features, manifest.task)?;
    let mut engine = Engine::with_model(cfg, model.clone(), seed)?;
    let daes = if manifest.has_denoisers {
        let nets = codec::load(&dir.join(DAE_FILE))?;
        if nets.len() != 2 * manifest.sensors {
            return Err(Error::Input("denoiser file does not match sensor count".into()));
        }
        nets.chunks(2)
            .map(|p| DaeModel::from_nets(p[0].clone(), p[1].clone(), &cfg.dae))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    engine.restore(model, manifest.channel, daes, manifest.round);
    Ok((engine, manifest.ledger))
}

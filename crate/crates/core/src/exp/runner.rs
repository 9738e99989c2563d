//! End-to-end runs: optional agent training, the measured run, regret
//! filling and artifact emission.

use super::config::ExperimentConfig;
use super::metrics::{write_metrics, MetricsRow};
use crate::envsim::{EnvConfig, Environment, RewardWeights, RoundConditions, StateScales};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::rng::{self, Purpose};
use crate::scheduler::{
    baseline_policy, train_agent, ActionMode, ActionVec, AgentNets, ScheduleKind, SchedulingEnv, StateVec, TrainReport,
};
use crate::streams::{make_stream, RoundBatch, StreamState};
use crate::vflcore::{
    hindsight_loss, save_checkpoint, Engine, GlobalModel, RegretLedger, RoundInputs, RoundMetrics, TheoryProbe,
};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FAILURE_FILE: &str = "FAILED";
pub const ACTOR_FILE: &str = "actor.dvfw";

/// Seed of the agent-training phase; kept apart from the measured run so
/// every arm of a comparison sees the same stream and conditions.
pub fn agent_phase_seed(seed: u64) -> u64 {
    seed ^ 0xA5A5_5A5A_C3C3_3C3C
}

/// The VFL system seen as a scheduling environment: each step runs one
/// global round under the drawn conditions and returns its reward.
pub struct VflEnv {
    engine: Engine,
    stream: StreamState,
    env: Environment,
    env_cfg: EnvConfig,
    weights: RewardWeights,
    scales: StateScales,
    horizon: usize,
    round: usize,
    pending: Option<RoundConditions>,
    last: Option<RoundMetrics>,
}

impl VflEnv {
    pub fn new(cfg: &ExperimentConfig, seed: u64, horizon: usize) -> Result<Self> {
        let mut stream_cfg = cfg.stream.clone();
        stream_cfg.seed = seed;
        let engine = Engine::new(&cfg.engine, &stream_cfg, seed)?;
        let stream = make_stream(&stream_cfg)?;
        let env = Environment::new(&cfg.env, cfg.sensors(), rng::stream(seed, Purpose::Environment))?;
        Ok(VflEnv {
            engine,
            stream,
            env,
            env_cfg: cfg.env.clone(),
            weights: cfg.weights,
            scales: cfg.env.state_scales(cfg.sensors()),
            horizon,
            round: 0,
            pending: None,
            last: None,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn last_metrics(&self) -> Option<&RoundMetrics> {
        self.last.as_ref()
    }

    /// Conditions of the upcoming round, drawn on first use.
    pub fn conditions(&mut self) -> Result<&RoundConditions> {
        if self.pending.is_none() {
            self.pending = Some(self.env.draw_round()?);
        }
        Ok(self.pending.as_ref().expect("drawn above"))
    }

    /// Runs the upcoming round; returns its metrics and the batch it used.
    pub fn run_round(&mut self, schedule: &[usize]) -> Result<(RoundMetrics, RoundBatch)> {
        self.conditions()?;
        let cond = self.pending.take().expect("drawn above");
        let batch = self.stream.next_round();
        let test = self.stream.test_batch(self.round);
        let m = self.engine.run_global_round(RoundInputs {
            batch: &batch,
            test: &test,
            conditions: &cond,
            env: &self.env_cfg,
            weights: &self.weights,
            schedule,
        })?;
        self.round += 1;
        self.last = Some(m.clone());
        Ok((m, batch))
    }
}

impl SchedulingEnv for VflEnv {
    fn sensors(&self) -> usize {
        self.engine.model().sensors()
    }

    fn observe(&mut self) -> Result<StateVec> {
        let (round, horizon, scales) = (self.round, self.horizon, self.scales);
        StateVec::from_conditions(self.conditions()?, &scales, round, horizon)
    }

    fn step(&mut self, action: &ActionVec) -> Result<f64> {
        Ok(self.run_round(action.as_slice())?.0.reward)
    }
}

/// Agent-training phase: trains a fresh agent against its own VFL instance.
pub fn train_scheduler(cfg: &ExperimentConfig, seed: u64) -> Result<(AgentNets, TrainReport)> {
    let phase = agent_phase_seed(seed);
    let mut agent_rng = rng::stream(seed, Purpose::Agent);
    let mut agent = AgentNets::new(cfg.sensors(), &cfg.agent, &mut agent_rng)?;
    let mut env = VflEnv::new(cfg, phase, cfg.agent_rounds)?;
    let report = train_agent(&mut agent, &mut env, cfg.agent_rounds, &mut agent_rng)?;
    Ok((agent, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub rounds: usize,
    pub first_quartile_reward: f64,
    pub last_quartile_reward: f64,
    pub first_epoch_ratio_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub noise_mode: String,
    pub schedule: String,
    pub rounds: usize,
    pub final_test_acc: f64,
    pub final_test_loss: f64,
    pub mean_latency: f64,
    pub mean_reward: f64,
    pub regret: Option<f64>,
    pub clip: Option<f64>,
    pub probe: Option<TheoryProbe>,
    pub agent: Option<AgentSummary>,
}

/// Everything a finished run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
    pub engine: Engine,
    pub ledger: RegretLedger,
    pub agent: Option<AgentNets>,
}

fn load_or_train_agent(cfg: &ExperimentConfig, seed: u64) -> Result<(Option<AgentNets>, Option<AgentSummary>)> {
    if cfg.schedule != ScheduleKind::Adaptive {
        return Ok((None, None));
    }
    if let Some(path) = &cfg.agent_path {
        let actor = AgentNets::load_actor(path)?;
        let agent = AgentNets::from_actor(actor, cfg.sensors(), &cfg.agent, &mut rng::stream(seed, Purpose::Agent))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        return Ok((Some(agent), None));
    }
    let (agent, report) = train_scheduler(cfg, seed)?;
    let q = (cfg.agent_rounds / 4).max(1);
    let summary = AgentSummary {
        rounds: report.transitions,
        first_quartile_reward: report.mean_reward(0, q),
        last_quartile_reward: report.mean_reward(cfg.agent_rounds - q, cfg.agent_rounds),
        first_epoch_ratio_gap: report.first_epoch_ratio_gap,
    };
    Ok((Some(agent), Some(summary)))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Runs one (config, seed) pair in memory. Rows completed before an error
/// are left in `rows` so callers can flush them.
pub fn simulate_into(cfg: &ExperimentConfig, seed: u64, rows: &mut Vec<MetricsRow>) -> Result<Simulation> {
    cfg.validate()?;
    let (agent, agent_summary) = load_or_train_agent(cfg, seed)?;
    let fixed = match (&cfg.iterations, cfg.schedule) {
        (Some(it), _) => Some(it.clone()),
        (None, ScheduleKind::Adaptive) => None,
        (None, kind) => Some(
            baseline_policy(kind, cfg.sensors(), cfg.agent.e_max)?
                .as_slice()
                .to_vec(),
        ),
    };
    let t_total = cfg.horizon;
    let mut env = VflEnv::new(cfg, seed, t_total)?;
    let snapshot_every = t_total.div_ceil(10).max(1);
    let mut history = Vec::with_capacity(t_total);
    let mut snapshots: Vec<GlobalModel> = Vec::new();
    let mut online = Vec::with_capacity(t_total);
    let mut probe_rng = rng::stream(seed, Purpose::Agent);
    for t in 0..t_total {
        if t % snapshot_every == 0 && t > 0 {
            snapshots.push(env.engine().model().clone());
        }
        let schedule = match (&fixed, &agent) {
            (Some(f), _) => f.clone(),
            (None, Some(a)) => {
                let s = env.observe()?;
                a.select_action(&s, ActionMode::Greedy, &mut probe_rng)?
                    .0
                    .as_slice()
                    .to_vec()
            }
            (None, None) => unreachable!("adaptive schedule always has an agent"),
        };
        let (m, batch) = env.run_round(&schedule)?;
        online.push(m.online_loss);
        rows.push(MetricsRow {
            round: t + 1,
            train_loss: m.online_loss,
            test_loss: m.test_loss,
            test_acc: m.test_acc,
            latency: m.latency,
            disparity: m.disparity,
            reward: m.reward,
            cum_regret: f64::NAN,
            iterations: m.iterations.clone(),
        });
        if cfg.regret {
            history.push(batch);
        }
    }

    let mut ledger = RegretLedger::default();
    if cfg.regret {
        let hs = hindsight_loss(&history, env.engine().model(), &snapshots, &cfg.hindsight)?;
        for (o, c) in online.iter().zip(&hs.losses) {
            ledger.regret_update(*o, *c)?;
        }
        for (row, reg) in rows.iter_mut().zip(ledger.cumulative()) {
            row.cum_regret = reg;
        }
    }

    let engine = env.engine.clone();
    let last = rows.last().expect("horizon >= 1");
    let summary = RunSummary {
        seed,
        noise_mode: cfg.engine.noise_mode.label().to_string(),
        schedule: cfg.schedule.label().to_string(),
        rounds: rows.len(),
        final_test_acc: last.test_acc,
        final_test_loss: last.test_loss,
        mean_latency: mean(rows.iter().map(|r| r.latency)),
        mean_reward: mean(rows.iter().map(|r| r.reward)),
        regret: cfg.regret.then(|| ledger.regret()),
        clip: match engine.channel() {
            Some(crate::channel::ChannelSpec::Quantizer { clip, .. }) => Some(*clip),
            _ => None,
        },
        probe: engine.probe().ok().cloned(),
        agent: agent_summary,
    };
    Ok(Simulation {
        rows: std::mem::take(rows),
        summary,
        engine,
        ledger,
        agent,
    })
}

pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Simulation> {
    simulate_into(cfg, seed, &mut Vec::new())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub version: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub summary: RunSummary,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Runs one seed and writes `metrics.csv`, `manifest.json`, `summary.json`,
/// a checkpoint and (for DAO-PPO) the actor into `out`. On failure the rows
/// completed so far are flushed and a `FAILED` marker holds the error.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut resolved = cfg.clone();
    resolved.stream.seed = seed;
    resolved.seeds = vec![seed];
    resolved.output = Some(out.to_path_buf());
    write_json(
        &out.join(MANIFEST_FILE),
        &Manifest {
            format: 1,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: resolved,
        },
    )?;
    let marker = out.join(FAILURE_FILE);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let metrics = out.join(METRICS_FILE);
    let mut rows = Vec::new();
    let sim = match simulate_into(cfg, seed, &mut rows) {
        Ok(sim) => sim,
        Err(e) => {
            write_metrics(&metrics, &rows, cfg.sensors())?;
            fs::write(&marker, format!("{e}\n")).map_err(|io| Error::io(&marker, io))?;
            return Err(e);
        }
    };
    write_metrics(&metrics, &sim.rows, cfg.sensors())?;
    write_json(&out.join(SUMMARY_FILE), &sim.summary)?;
    save_checkpoint(&sim.engine, &sim.ledger, &out.join("checkpoint"))?;
    if let Some(agent) = &sim.agent {
        agent.save_actor(&out.join(ACTOR_FILE))?;
    }
    Ok(RunArtifacts {
        dir: out.to_path_buf(),
        metrics,
        summary: sim.summary,
    })
}

/// Runs every seed into `out/seed-<n>`, in parallel when available.
pub fn sweep(cfg: &ExperimentConfig, seeds: &[u64], out: &Path, exec: Exec) -> Result<Vec<Result<RunArtifacts>>> {
    cfg.validate()?;
    Ok(par::map(exec, seeds, |&s| {
        run_experiment(cfg, s, &out.join(format!("seed-{s}")))
    }))
}

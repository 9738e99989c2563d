//! Assembly-line latency model and the per-round scheduling reward.
//!
//! Sensor indices in the formulas are 1-based (`k = 1..=K`), matching the
//! order in which sensors on the line collect their data.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Collection latency `μ·k + μ0` of the `k`-th sensor on the line.
pub fn collection_latency(k: usize, mu: f64, mu0: f64) -> f64 {
    mu * k as f64 + mu0
}

/// Uplink rate with an equal bandwidth share: `(B/K)·log2(1 + g·p/σ²)`.
pub fn transmission_rate(bandwidth: f64, sensors: usize, gain: f64, power: f64, noise_power: f64) -> f64 {
    bandwidth / sensors as f64 * (1.0 + gain * power / noise_power).log2()
}

/// Time to upload `payload` weights at `rate`.
pub fn comm_latency(payload: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::Unreachable { sensor: 0 });
    }
    Ok(payload / rate)
}

/// Time for `iterations` local updates: `E·C·W_lc / f`.
pub fn comp_latency(iterations: usize, cycles_per_weight: f64, local_weights: f64, freq: f64) -> Result<f64> {
    if !(freq > 0.0) {
        return Err(Error::Config(format!("CPU frequency {freq} must be positive")));
    }
    Ok(iterations as f64 * cycles_per_weight * local_weights / freq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorLatency {
    pub collection: f64,
    pub communication: f64,
    pub computation: f64,
}

impl SensorLatency {
    pub fn sum(&self) -> f64 {
        self.collection + self.communication + self.computation
    }
}

/// Round latency: the slowest sensor's collection + upload + compute time.
pub fn total_latency(sensors: &[SensorLatency]) -> f64 {
    sensors.iter().map(SensorLatency::sum).fold(0.0, f64::max)
}

/// Iteration disparity `Σ_k |E_k − mean(E)|`.
pub fn disparity(iterations: &[usize]) -> f64 {
    if iterations.is_empty() {
        return 0.0;
    }
    let k = iterations.len() as f64;
    let total: usize = iterations.iter().sum();
    // (1/K) Σ |K·E_k − ΣE| keeps the arithmetic exact in integers.
    let scaled: f64 = iterations
        .iter()
        .map(|&e| (iterations.len() * e).abs_diff(total) as f64)
        .sum();
    scaled / k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub accuracy: f64,
    pub latency: f64,
    pub disparity: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            accuracy: 1.0,
            latency: 0.01,
            disparity: 0.05,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.accuracy, self.latency, self.disparity];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("reward weights must be finite and non-negative".into()));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("reward weights cannot all be zero".into()));
        }
        Ok(())
    }
}

/// `α1·Acc − α2·Υ − α3·H`
pub fn reward(w: &RewardWeights, accuracy: f64, latency: f64, disparity: f64) -> f64 {
    w.accuracy * accuracy - w.latency * latency - w.disparity * disparity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// `μ` is drawn once per run from this range.
    pub mu_range: (f64, f64),
    pub mu0: f64,
    pub bandwidth: f64,
    pub tx_power: f64,
    pub noise_power: f64,
    pub gain_range: (f64, f64),
    pub payload_weights: f64,
    pub cycles_per_weight: f64,
    pub local_weights: f64,
    pub high_freq: (f64, f64),
    pub low_freq: (f64, f64),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            mu_range: (2.0, 4.0),
            mu0: 2.0,
            bandwidth: 1e7,
            tx_power: 1.0,
            noise_power: 5e-2,
            gain_range: (1e-5, 1e-4),
            payload_weights: 1e5,
            cycles_per_weight: 1000.0,
            local_weights: 5e5,
            high_freq: (2e7, 4e7),
            low_freq: (1e7, 3e7),
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), allow_zero: bool) -> Result<()> {
    let lo_ok = if allow_zero { lo >= 0.0 } else { lo > 0.0 };
    if !lo_ok || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::Config(format!("{name} range ({lo}, {hi}) invalid")));
    }
    Ok(())
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        check_range("mu", self.mu_range, true)?;
        check_range("gain", self.gain_range, true)?;
        check_range("high_freq", self.high_freq, false)?;
        check_range("low_freq", self.low_freq, false)?;
        for (name, v) in [
            ("mu0", self.mu0),
            ("bandwidth", self.bandwidth),
            ("tx_power", self.tx_power),
            ("noise_power", self.noise_power),
            ("payload_weights", self.payload_weights),
            ("cycles_per_weight", self.cycles_per_weight),
            ("local_weights", self.local_weights),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        if !(self.bandwidth > 0.0 && self.noise_power > 0.0) {
            return Err(Error::Config("bandwidth and noise power must be positive".into()));
        }
        Ok(())
    }

    /// Sensors alternate high/low performance class by index, starting high.
    pub fn freq_range(&self, sensor: usize) -> (f64, f64) {
        if sensor.is_multiple_of(2) {
            self.high_freq
        } else {
            self.low_freq
        }
    }

    /// Fixed divisors that map every state component into `[0, 1]`.
    pub fn state_scales(&self, sensors: usize) -> StateScales {
        let worst_rate = transmission_rate(
            self.bandwidth,
            sensors,
            self.gain_range.0,
            self.tx_power,
            self.noise_power,
        );
        StateScales {
            collection: collection_latency(sensors, self.mu_range.1, self.mu0),
            communication: if worst_rate > 0.0 {
                self.payload_weights / worst_rate
            } else {
                f64::INFINITY
            },
            frequency: self.high_freq.1.max(self.low_freq.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateScales {
    pub collection: f64,
    pub communication: f64,
    pub frequency: f64,
}

/// Per-round random conditions shared by every scheduling arm.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundConditions {
    pub gains: Vec<f64>,
    pub freqs: Vec<f64>,
    pub collection: Vec<f64>,
    pub communication: Vec<f64>,
}

impl RoundConditions {
    pub fn sensors(&self) -> usize {
        self.freqs.len()
    }

    pub fn latencies(&self, cfg: &EnvConfig, iterations: &[usize]) -> Result<Vec<SensorLatency>> {
        if iterations.len() != self.sensors() {
            return Err(Error::dim(format!(
                "{} iteration counts for {} sensors",
                iterations.len(),
                self.sensors()
            )));
        }
        iterations
            .iter()
            .enumerate()
            .map(|(k, &e)| {
                Ok(SensorLatency {
                    collection: self.collection[k],
                    communication: self.communication[k],
                    computation: comp_latency(e, cfg.cycles_per_weight, cfg.local_weights, self.freqs[k])?,
                })
            })
            .collect()
    }

    pub fn total_latency(&self, cfg: &EnvConfig, iterations: &[usize]) -> Result<f64> {
        Ok(total_latency(&self.latencies(cfg, iterations)?))
    }
}

/// Draws channel gains and CPU frequencies round by round.
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: EnvConfig,
    sensors: usize,
    mu: f64,
    rng: ChaCha8Rng,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl Environment {
    pub fn new(cfg: &EnvConfig, sensors: usize, mut rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        if sensors == 0 {
            return Err(Error::Config("environment needs at least one sensor".into()));
        }
        let mu = uniform(&mut rng, cfg.mu_range);
        Ok(Environment {
            cfg: cfg.clone(),
            sensors,
            mu,
            rng,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn draw_round(&mut self) -> Result<RoundConditions> {
        let c = &self.cfg;
        let mut gains = Vec::with_capacity(self.sensors);
        let mut freqs = Vec::with_capacity(self.sensors);
        for k in 0..self.sensors {
            gains.push(uniform(&mut self.rng, c.gain_range));
            freqs.push(uniform(&mut self.rng, c.freq_range(k)));
        }
        let collection = (1..=self.sensors)
            .map(|k| collection_latency(k, self.mu, c.mu0))
            .collect();
        let communication = gains
            .iter()
            .enumerate()
            .map(|(k, &g)| {
                let r = transmission_rate(c.bandwidth, self.sensors, g, c.tx_power, c.noise_power);
                comm_latency(c.payload_weights, r).map_err(|_| Error::Unreachable { sensor: k + 1 })
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(RoundConditions {
            gains,
            freqs,
            collection,
            communication,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn collection_cases() {
        assert_eq!(collection_latency(2, 3.0, 2.0), 8.0);
        assert_eq!(collection_latency(7, 0.0, 2.0), 2.0);
        assert!(collection_latency(1, 2.5, 2.0) < collection_latency(2, 2.5, 2.0));
    }

    #[test]
    fn rate_cases() {
        // g·p/σ² = 1 → log2(2) = 1
        assert_eq!(transmission_rate(8.0, 4, 0.05, 1.0, 0.05), 2.0);
        let r = transmission_rate(1e7, 4, 1e-4, 1.0, 5e-2);
        assert!((r - 7.2045e3).abs() / 7.2045e3 < 1e-3, "{r}");
        assert!(transmission_rate(1e7, 4, 2e-4, 1.0, 5e-2) > r);
        assert_eq!(transmission_rate(1e7, 4, 0.0, 1.0, 5e-2), 0.0);
    }

    #[test]
    fn comm_cases() {
        let r = transmission_rate(1e7, 4, 1e-4, 1.0, 5e-2);
        let t = comm_latency(1e5, r).unwrap();
        assert!((t - 13.88).abs() < 0.01, "{t}");
        assert!((comm_latency(1e5, 2.0 * r).unwrap() - t / 2.0).abs() < 1e-12);
        assert_eq!(comm_latency(0.0, r).unwrap(), 0.0);
        assert!(matches!(comm_latency(1e5, 0.0), Err(Error::Unreachable { .. })));
    }

    #[test]
    fn comp_cases() {
        assert_eq!(comp_latency(2, 1e3, 5e5, 2.5e7).unwrap(), 40.0);
        assert_eq!(comp_latency(1, 1e3, 5e5, 4e7).unwrap(), 12.5);
        assert_eq!(comp_latency(4, 1e3, 5e5, 2.5e7).unwrap(), 80.0);
        assert!(comp_latency(1, 1e3, 5e5, 0.0).is_err());
    }

    #[test]
    fn total_and_disparity() {
        let s = |v: f64| SensorLatency {
            collection: v,
            communication: 0.0,
            computation: 0.0,
        };
        assert_eq!(
            total_latency(&[SensorLatency {
                collection: 1.0,
                communication: 2.0,
                computation: 3.0
            }]),
            6.0
        );
        assert_eq!(total_latency(&[s(50.0), s(62.0), s(40.0)]), 62.0);
        assert_eq!(total_latency(&[s(40.0), s(50.0), s(62.0)]), 62.0);
        assert_eq!(disparity(&[2, 2, 2, 2]), 0.0);
        assert_eq!(disparity(&[1, 3]), 2.0);
        assert_eq!(disparity(&[3, 1]), 2.0);
        // direct mean-deviation form agrees
        let e = [1usize, 4, 2, 2];
        let mean = 9.0 / 4.0;
        let direct: f64 = e.iter().map(|&v| (v as f64 - mean).abs()).sum();
        assert!((disparity(&e) - direct).abs() < 1e-12);
    }

    #[test]
    fn reward_cases() {
        let w = RewardWeights::default();
        assert!((reward(&w, 0.8, 50.0, 2.0) - 0.2).abs() < 1e-12);
        let acc_only = RewardWeights {
            accuracy: 2.0,
            latency: 0.0,
            disparity: 0.0,
        };
        assert_eq!(reward(&acc_only, 0.6, 100.0, 3.0), 1.2);
        let zero = RewardWeights {
            accuracy: 0.0,
            latency: 0.0,
            disparity: 0.0,
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn round_draws_stay_in_range() {
        let cfg = EnvConfig::default();
        let mut env = Environment::new(&cfg, 4, stream(1, Purpose::Environment)).unwrap();
        assert!((2.0..4.0).contains(&env.mu()));
        let scales = cfg.state_scales(4);
        for _ in 0..100 {
            let rc = env.draw_round().unwrap();
            for k in 0..4 {
                let (lo, hi) = cfg.freq_range(k);
                assert!(rc.freqs[k] >= lo && rc.freqs[k] < hi);
                assert!(rc.gains[k] >= 1e-5 && rc.gains[k] < 1e-4);
                assert!(rc.collection[k] <= scales.collection);
                assert!(rc.communication[k] <= scales.communication);
            }
        }
    }
}

//! Multi-seed aggregation of metrics files.

use super::metrics::{format_value, read_metrics, MetricsRow};
use super::runner::MANIFEST_FILE;
use crate::error::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const METRICS: [&str; 7] = [
    "train_loss",
    "test_loss",
    "test_acc",
    "latency",
    "disparity",
    "reward",
    "cum_regret",
];

fn values(r: &MetricsRow) -> [f64; 7] {
    [
        r.train_loss,
        r.test_loss,
        r.test_acc,
        r.latency,
        r.disparity,
        r.reward,
        r.cum_regret,
    ]
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundStats {
    pub round: usize,
    pub mean: [f64; 7],
    pub std: [f64; 7],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub runs: usize,
    pub final_test_acc: (f64, f64),
    pub avg_latency: (f64, f64),
    pub avg_reward: (f64, f64),
    pub final_regret: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub label: String,
    pub rounds: Vec<RoundStats>,
    pub summary: GroupSummary,
}

fn average(rows: &[MetricsRow], f: impl Fn(&MetricsRow) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

/// Aggregates each group of runs; all runs must share one horizon.
pub fn compare_runs(groups: &BTreeMap<String, Vec<Vec<MetricsRow>>>) -> Result<Vec<GroupStats>> {
    let mut horizon = None;
    let mut out = Vec::new();
    for (label, runs) in groups {
        if runs.is_empty() {
            return Err(Error::Input(format!("group {label} has no runs")));
        }
        for r in runs {
            if r.is_empty() {
                return Err(Error::Input(format!("group {label} contains an empty run")));
            }
            match horizon {
                None => horizon = Some(r.len()),
                Some(h) if h != r.len() => {
                    return Err(Error::Input(format!(
                        "misaligned horizons: {h} rounds vs {} in group {label}",
                        r.len()
                    )))
                }
                _ => {}
            }
        }
        let h = runs[0].len();
        let rounds = (0..h)
            .map(|t| {
                let mut mean = [0.0; 7];
                let mut std = [0.0; 7];
                for m in 0..7 {
                    let xs: Vec<f64> = runs.iter().map(|r| values(&r[t])[m]).collect();
                    (mean[m], std[m]) = mean_std(&xs);
                }
                RoundStats {
                    round: runs[0][t].round,
                    mean,
                    std,
                }
            })
            .collect();
        let per_run = |f: &dyn Fn(&[MetricsRow]) -> f64| mean_std(&runs.iter().map(|r| f(r)).collect::<Vec<_>>());
        let summary = GroupSummary {
            runs: runs.len(),
            final_test_acc: per_run(&|r| r[r.len() - 1].test_acc),
            avg_latency: per_run(&|r| average(r, |x| x.latency)),
            avg_reward: per_run(&|r| average(r, |x| x.reward)),
            final_regret: per_run(&|r| r[r.len() - 1].cum_regret),
        };
        out.push(GroupStats {
            label: label.clone(),
            rounds,
            summary,
        });
    }
    Ok(out)
}

/// Looks up a dotted key in a run manifest, first at the top level and then
/// under `config`.
pub fn manifest_value(manifest: &serde_json::Value, key: &str) -> Option<String> {
    let walk = |root: &serde_json::Value| {
        key.split('.').try_fold(root, |v, part| v.get(part)).map(|v| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        })
    };
    walk(manifest).or_else(|| manifest.get("config").and_then(walk))
}

/// Reads every metrics file and labels it by `group_by` in its sibling manifest.
pub fn load_groups(files: &[PathBuf], group_by: &str) -> Result<BTreeMap<String, Vec<Vec<MetricsRow>>>> {
    let mut groups: BTreeMap<String, Vec<Vec<MetricsRow>>> = BTreeMap::new();
    for f in files {
        let mpath = f.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: mpath.clone(),
            source: e,
        })?;
        let label = manifest_value(&manifest, group_by)
            .ok_or_else(|| Error::Input(format!("{} has no key {group_by:?}", mpath.display())))?;
        groups.entry(label).or_default().push(read_metrics(f)?);
    }
    if groups.is_empty() {
        return Err(Error::Input("no metrics files to compare".into()));
    }
    Ok(groups)
}

/// Per-round table: `group,round,metric,mean,std`.
pub fn rounds_csv(stats: &[GroupStats]) -> String {
    let mut s = String::from("group,round,metric,mean,std\n");
    for g in stats {
        for r in &g.rounds {
            for (m, name) in METRICS.iter().enumerate() {
                s += &format!(
                    "{},{},{name},{},{}\n",
                    g.label,
                    r.round,
                    format_value(r.mean[m]),
                    format_value(r.std[m])
                );
            }
        }
    }
    s
}

/// Scalar summaries per group (mean and population std over runs).
pub fn summary_csv(stats: &[GroupStats]) -> String {
    let mut s = String::from(
        "group,runs,final_test_acc_mean,final_test_acc_std,avg_latency_mean,avg_latency_std,avg_reward_mean,avg_reward_std,final_regret_mean,final_regret_std\n",
    );
    for g in stats {
        let x = &g.summary;
        let cols: Vec<String> = [x.final_test_acc, x.avg_latency, x.avg_reward, x.final_regret]
            .iter()
            .flat_map(|&(m, sd)| [format_value(m), format_value(sd)])
            .collect();
        s += &format!("{},{},{}\n", g.label, x.runs, cols.join(","));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(rewards: &[f64]) -> Vec<MetricsRow> {
        rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| MetricsRow {
                round: i + 1,
                train_loss: 1.0,
                test_loss: 1.0,
                test_acc: 0.5,
                latency: 10.0 * (i + 1) as f64,
                disparity: 0.0,
                reward: r,
                cum_regret: 0.0,
                iterations: vec![1, 1],
            })
            .collect()
    }

    #[test]
    fn degenerate_group() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), vec![run(&[1.0, 2.0])]);
        let s = compare_runs(&g).unwrap();
        assert_eq!(s[0].rounds[1].mean[5], 2.0);
        assert!(s[0].rounds.iter().all(|r| r.std.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn population_std() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), vec![run(&[1.0]), run(&[3.0])]);
        let s = compare_runs(&g).unwrap();
        assert_eq!(s[0].rounds[0].mean[5], 2.0);
        assert_eq!(s[0].rounds[0].std[5], 1.0);
    }

    #[test]
    fn misaligned_horizons_rejected() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), vec![run(&[1.0])]);
        g.insert("b".to_string(), vec![run(&[1.0, 2.0])]);
        assert!(matches!(compare_runs(&g), Err(Error::Input(_))));
    }

    #[test]
    fn manifest_lookup() {
        let v: serde_json::Value =
            serde_json::from_str(r#"{"seed": 3, "config": {"engine": {"noise_mode": "NI"}}}"#).unwrap();
        assert_eq!(manifest_value(&v, "seed").as_deref(), Some("3"));
        assert_eq!(manifest_value(&v, "engine.noise_mode").as_deref(), Some("NI"));
        assert_eq!(manifest_value(&v, "nope"), None);
    }
}

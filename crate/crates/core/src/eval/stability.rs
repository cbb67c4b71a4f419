use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rl::{greedy_profile, DqnAgent, TrainingHistory};
use crate::simulator::SessionTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardWindow {
    /// First and last episode numbers (inclusive).
    pub first: usize,
    pub last: usize,
    pub mean_reward: f64,
    pub mean_q: f64,
    pub mean_epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub windows: Vec<RewardWindow>,
    pub mean_q: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl StabilityReport {
    /// Late-window mean reward minus early-window mean reward.
    pub fn reward_gain(&self) -> f64 {
        match (self.windows.first(), self.windows.last()) {
            (Some(a), Some(b)) => b.mean_reward - a.mean_reward,
            _ => 0.0,
        }
    }

    pub fn windows_csv(&self) -> String {
        let mut out = String::from("first_episode,last_episode,mean_reward,mean_q,mean_epsilon\n");
        for w in &self.windows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                w.first, w.last, w.mean_reward, w.mean_q, w.mean_epsilon
            ));
        }
        out
    }
}

/// Per-window means of reward, Q and epsilon over `window` consecutive
/// episodes (the last window may be shorter).
pub fn training_stability_report(history: &TrainingHistory, window: usize) -> Result<StabilityReport> {
    if history.episodes.is_empty() {
        return Err(Error::Empty("training history has no episodes".into()));
    }
    if window == 0 {
        return Err(Error::Domain("window must be > 0".into()));
    }
    let windows = history
        .episodes
        .chunks(window)
        .map(|c| {
            let n = c.len() as f64;
            RewardWindow {
                first: c[0].episode,
                last: c[c.len() - 1].episode,
                mean_reward: c.iter().map(|r| r.reward).sum::<f64>() / n,
                mean_q: c.iter().map(|r| r.mean_q).sum::<f64>() / n,
                mean_epsilon: c.iter().map(|r| r.epsilon).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(StabilityReport {
        windows,
        mean_q: history.episodes.iter().map(|r| r.mean_q).collect(),
        epsilon: history.episodes.iter().map(|r| r.epsilon).collect(),
    })
}

/// Mean absolute greedy-policy power error (kW) on an SoC x SoH grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatGrid {
    pub soc_edges: Vec<f64>,
    pub soh_edges: Vec<f64>,
    /// `mae[soc_bin][soh_bin]`, `None` where no point fell.
    pub mae: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
}

impl HeatGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("soc_lo,soc_hi,soh_lo,soh_hi,count,mae_kw\n");
        for i in 0..self.mae.len() {
            for j in 0..self.mae[i].len() {
                let v = self.mae[i][j].map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    self.soc_edges[i],
                    self.soc_edges[i + 1],
                    self.soh_edges[j],
                    self.soh_edges[j + 1],
                    self.counts[i][j],
                    v
                ));
            }
        }
        out
    }
}

fn bucket(edges: &[f64], v: f64) -> Option<usize> {
    let n = edges.len().checked_sub(1)?;
    if v < edges[0] || v > edges[n] {
        return None;
    }
    Some(edges[1..].iter().position(|&e| v < e).unwrap_or(n - 1))
}

fn check_edges(edges: &[f64], what: &str) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Precondition(format!("{what} edges must be increasing, at least two")));
    }
    Ok(())
}

/// Replays the greedy policy over each session's own grid and bins
/// `|p_agent - p_actual|` by SoC and SoH.
pub fn power_error_grid(
    agent: &DqnAgent,
    sessions: &[SessionTrace],
    soc_edges: &[f64],
    soh_edges: &[f64],
) -> Result<HeatGrid> {
    check_edges(soc_edges, "SoC")?;
    check_edges(soh_edges, "SoH")?;
    let (ns, nh) = (soc_edges.len() - 1, soh_edges.len() - 1);
    let mut sum = vec![vec![0.0; nh]; ns];
    let mut counts = vec![vec![0usize; nh]; ns];
    for t in sessions {
        let Some(j) = bucket(soh_edges, t.scenario.soh) else {
            continue;
        };
        let grid = &t.soc_grid[..t.len() - 1];
        let (profile, _) = greedy_profile(agent, &t.scenario, grid, &mut |_, _| Ok(None))?;
        for ((&s, &p), &actual) in grid.iter().zip(&profile).zip(&t.power_kw) {
            if let Some(i) = bucket(soc_edges, s) {
                sum[i][j] += (p - actual).abs();
                counts[i][j] += 1;
            }
        }
    }
    let mae = sum
        .iter()
        .zip(&counts)
        .map(|(row, c)| {
            row.iter()
                .zip(c)
                .map(|(s, &n)| (n > 0).then(|| s / n as f64))
                .collect()
        })
        .collect();
    Ok(HeatGrid {
        soc_edges: soc_edges.to_vec(),
        soh_edges: soh_edges.to_vec(),
        mae,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::epsilon_for;
    use crate::rl::{schedule_samples, EpisodeRecord};

    fn history(n: usize, reward: impl Fn(usize) -> f64) -> TrainingHistory {
        TrainingHistory {
            episodes: (0..n)
                .map(|e| EpisodeRecord {
                    episode: e + 1,
                    reward: reward(e),
                    mean_q: -1.0,
                    epsilon: epsilon_for(schedule_samples(e, n)).unwrap(),
                    loss: None,
                })
                .collect(),
            ..TrainingHistory::default()
        }
    }

    #[test]
    fn constant_history_is_flat() {
        let r = training_stability_report(&history(100, |_| -3.0), 30).unwrap();
        assert_eq!(r.windows.len(), 4);
        assert!(r.windows.iter().all(|w| w.mean_reward == -3.0 && w.mean_q == -1.0));
        assert_eq!(r.windows[3].first, 91);
        assert_eq!(r.reward_gain(), 0.0);
    }

    #[test]
    fn epsilon_trace_follows_schedule() {
        let n = 300;
        let r = training_stability_report(&history(n, |_| 0.0), 50).unwrap();
        for (e, eps) in r.epsilon.iter().enumerate() {
            assert_eq!(Some(*eps), epsilon_for(schedule_samples(e, n)));
        }
    }

    #[test]
    fn improving_history_has_positive_gain() {
        let r = training_stability_report(&history(200, |e| -10.0 + e as f64 * 0.04), 50).unwrap();
        assert!(r.reward_gain() > 0.0);
        assert!(training_stability_report(&TrainingHistory::default(), 10).is_err());
    }

    #[test]
    fn buckets() {
        let e = [0.0, 0.5, 1.0];
        assert_eq!(bucket(&e, 0.0), Some(0));
        assert_eq!(bucket(&e, 0.5), Some(1));
        assert_eq!(bucket(&e, 1.0), Some(1));
        assert_eq!(bucket(&e, 1.1), None);
    }
}

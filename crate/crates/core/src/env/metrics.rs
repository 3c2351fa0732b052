use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Episode, SceneGraph};
use crate::error::{invalid, Result};

/// Stopping within this many meters of the goal counts as success.
pub const SUCCESS_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "TL")]
    pub tl: f64,
    #[serde(rename = "NE")]
    pub ne: f64,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "SPL")]
    pub spl: f64,
    #[serde(rename = "nDTW")]
    pub ndtw: f64,
}

impl MetricsReport {
    /// Field-wise mean; `None` for an empty slice.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let sum = reports.iter().fold(MetricsReport::default(), |a, r| MetricsReport {
            tl: a.tl + r.tl,
            ne: a.ne + r.ne,
            sr: a.sr + r.sr,
            spl: a.spl + r.spl,
            ndtw: a.ndtw + r.ndtw,
        });
        Some(MetricsReport {
            tl: sum.tl / n,
            ne: sum.ne / n,
            sr: sum.sr / n,
            spl: sum.spl / n,
            ndtw: sum.ndtw / n,
        })
    }
}

/// TL, NE, SR, SPL and nDTW for a node trajectory. Consecutive trajectory
/// nodes must be adjacent.
pub fn evaluate(episode: &Episode, trajectory: &[String], scene: &SceneGraph, success_radius: f64) -> Result<MetricsReport> {
    if trajectory.first() != Some(&episode.start) {
        return Err(invalid("trajectory must start at the episode start"));
    }
    let mut tl = 0.0;
    for w in trajectory.windows(2) {
        tl += scene
            .edge_length(&w[0], &w[1])
            .ok_or_else(|| invalid(format!("trajectory hop {}->{} is not an edge", w[0], w[1])))?;
    }
    let last = trajectory.last().unwrap();
    let ne = scene.geodesic(last, &episode.goal)?;
    let sr = if ne < success_radius { 1.0 } else { 0.0 };
    let optimal = scene.geodesic(&episode.start, &episode.goal)?;
    let spl = if sr > 0.0 { optimal / tl.max(optimal) } else { 0.0 };
    let dtw = dtw(trajectory, &episode.reference_path, |a, b| scene.geodesic(a, b))?;
    let ndtw = (-dtw / (episode.reference_path.len() as f64 * success_radius)).exp();
    Ok(MetricsReport { tl, ne, sr, spl, ndtw })
}

/// Classic O(nm) dynamic time warping.
pub(crate) fn dtw<T>(a: &[T], b: &[T], mut dist: impl FnMut(&T, &T) -> Result<f64>) -> Result<f64> {
    let (n, m) = (a.len(), b.len());
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let c = dist(&a[i - 1], &b[j - 1])?;
            cur[j] = c + prev[j].min(cur[j - 1]).min(prev[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// `episode_id,TL,NE,SR,SPL,nDTW` rows.
pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[(String, MetricsReport)]) -> Result<()> {
    writeln!(w, "episode_id,TL,NE,SR,SPL,nDTW")?;
    for (id, m) in rows {
        writeln!(w, "{id},{:.6},{:.6},{},{:.6},{:.6}", m.tl, m.ne, m.sr, m.spl, m.ndtw)?;
    }
    Ok(())
}

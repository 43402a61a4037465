//! Binary search for the quality whose metric is closest to a target.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub quality: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FindCloseResult {
    pub metric: MetricKind,
    pub target: f64,
    pub quality: f64,
    pub value: f64,
    /// The target lies beyond what the grid reaches; `quality` is the nearest endpoint.
    pub out_of_range: bool,
    /// Probes in the order they were made.
    pub probes: Vec<Probe>,
    pub warnings: Vec<String>,
}

/// Largest number of evaluations `find_close` makes on a grid of `n` points.
pub fn probe_budget(n: usize) -> usize {
    if n <= 1 {
        1
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize + 1
    }
}

/// Searches `grid` (ordered so that the metric grows along it) for the point
/// whose metric value is closest to `target`. `measure` is called at most
/// [`probe_budget`] times. Monotonicity is only checked between probed
/// points; violations are reported as warnings and the closest probed point
/// is still returned.
pub fn find_close(
    grid: &[f64],
    target: f64,
    metric: MetricKind,
    mut measure: impl FnMut(f64) -> Result<f64>,
) -> Result<FindCloseResult> {
    if grid.is_empty() {
        return Err(Error::input("find_close needs a non-empty quality grid"));
    }
    if !target.is_finite() {
        return Err(Error::input(format!("target must be finite, got {target}")));
    }
    let mut probes: Vec<(usize, f64)> = vec![];
    let (mut lo, mut hi) = (0isize, grid.len() as isize - 1);
    while lo <= hi {
        let mid = lo + (hi - lo) / 2;
        let v = measure(grid[mid as usize])?;
        if v.is_nan() {
            return Err(Error::Numeric(format!("metric is NaN at quality {}", grid[mid as usize])));
        }
        probes.push((mid as usize, v));
        if v < target {
            lo = mid + 1;
        } else if v > target {
            hi = mid - 1;
        } else {
            break;
        }
    }

    let mut warnings = vec![];
    let mut sorted = probes.clone();
    sorted.sort_by_key(|p| p.0);
    for w in sorted.windows(2) {
        if w[1].1 < w[0].1 {
            let msg = format!(
                "{metric:?} is not monotone in quality: {} at q={} but {} at q={}",
                w[0].1, grid[w[0].0], w[1].1, grid[w[1].0]
            );
            warn!("{msg}");
            warnings.push(msg);
        }
    }

    // ties go to the earlier grid point
    let &(best, value) = sorted
        .iter()
        .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
        .expect("at least one probe");
    let out_of_range = lo as usize >= grid.len() || (hi < 0 && probes.iter().all(|p| p.1 > target));
    if out_of_range {
        warn!(
            "target {target} is outside the reachable range; returning endpoint q={}",
            grid[best]
        );
    }
    Ok(FindCloseResult {
        metric,
        target,
        quality: grid[best],
        value,
        out_of_range,
        probes: probes
            .into_iter()
            .map(|(i, value)| Probe {
                quality: grid[i],
                value,
            })
            .collect(),
        warnings,
    })
}

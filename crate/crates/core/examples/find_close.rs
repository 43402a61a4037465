//! Quality search with mock codecs whose metric is a known function of the
//! quality, counting how many times the codec is invoked.

use nzc::benchmark::{find_close, probe_budget};
use nzc::metrics::MetricKind;

fn main() -> nzc::Result<()> {
    let grid: Vec<f64> = (1..=100).map(f64::from).collect();
    for (target, metric, f) in [
        (0.4, MetricKind::Bpp, (|q| q / 100.0) as fn(f64) -> f64),
        (0.403, MetricKind::Bpp, |q| q / 100.0),
        (33.0, MetricKind::Psnr, |q| 20.0 + q / 10.0),
    ] {
        let mut calls = 0;
        let r = find_close(&grid, target, metric, |q| {
            calls += 1;
            Ok(f(q))
        })?;
        println!(
            "{metric:?} target {target}: quality {} -> {} ({} calls, budget {}){}",
            r.quality,
            r.value,
            calls,
            probe_budget(grid.len()),
            if r.out_of_range { ", out of range" } else { "" }
        );
    }
    Ok(())
}

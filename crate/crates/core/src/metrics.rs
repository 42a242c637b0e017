//! Time spent, distance travelled, trips served and comparison tables.

use std::fmt::Write as _;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkSpec, RegionId};
use crate::plant::Trajectory;

/// Below this many stored vehicles the network counts as empty.
const EMPTY_TOLERANCE: f64 = 1.0;

/// Time spent in region `i` [veh h].
pub fn time_spent(traj: &Trajectory, i: RegionId) -> f64 {
    traj.step_seconds() * time_spent_raw(traj, i) / 3600.0
}

/// Plain step sum of `N_I(k)` [veh].
pub fn time_spent_raw(traj: &Trajectory, i: RegionId) -> f64 {
    traj.steps.iter().map(|s| s.state.region_total(i)).sum()
}

/// Total travelled distance [veh km]; transfers count with the sending region's trip length.
pub fn total_traveled_distance(spec: &NetworkSpec, traj: &Trajectory) -> f64 {
    let dt = traj.step_seconds();
    let mut metres = 0.0;
    for s in &traj.steps {
        let mut moved = s.flows.m_ii.clone();
        for (t, m) in spec.triples().iter().zip(&s.flows.m_ihj) {
            moved[t.origin.index()] += m;
        }
        metres += spec
            .region_ids()
            .map(|i| spec.region(i).avg_trip_length * moved[i.index()])
            .sum::<f64>();
    }
    dt * metres / 1000.0
}

/// Completed trips over the run [veh].
pub fn vehicles_served(traj: &Trajectory) -> f64 {
    let stored = traj.final_state.stored();
    if stored > EMPTY_TOLERANCE {
        warn!("network still holds {stored:.1} vehicles at the end of the run");
    }
    traj.trips_ended()
}

pub fn mean_absolute_error(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::Numerical("mean absolute error of an empty sample".into()));
    }
    let sum: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(sum / actual.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ts_per_region: Vec<f64>,
    pub ts_raw: Vec<f64>,
    pub tts: f64,
    pub ttd: f64,
    pub vehicles_served: f64,
    /// Vehicles still inside the network after the last step.
    pub stored_at_end: f64,
}

impl MetricsReport {
    pub fn from_trajectory(spec: &NetworkSpec, traj: &Trajectory) -> Self {
        let ts_per_region: Vec<f64> = spec.region_ids().map(|i| time_spent(traj, i)).collect();
        Self {
            ts_raw: spec.region_ids().map(|i| time_spent_raw(traj, i)).collect(),
            tts: ts_per_region.iter().sum(),
            ts_per_region,
            ttd: total_traveled_distance(spec, traj),
            vehicles_served: vehicles_served(traj),
            stored_at_end: traj.final_state.stored(),
        }
    }

    fn rows(&self) -> Vec<(String, f64)> {
        let mut rows: Vec<(String, f64)> = self
            .ts_per_region
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("TS{}", RegionId(i)), *v))
            .collect();
        rows.push(("TTS".into(), self.tts));
        rows.push(("TTD".into(), self.ttd));
        rows.push(("N".into(), self.vehicles_served));
        rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub unit: String,
    pub baseline: f64,
    pub variant: f64,
    /// `(baseline - variant) / baseline * 100`.
    pub improvement_pct: f64,
    pub difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline_label: String,
    pub variant_label: String,
    pub rows: Vec<ComparisonRow>,
}

pub fn improvement(baseline: f64, variant: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::Numerical("improvement relative to a zero baseline".into()));
    }
    Ok((baseline - variant) / baseline * 100.0)
}

pub fn compare(
    baseline: &MetricsReport,
    variant: &MetricsReport,
    baseline_label: &str,
    variant_label: &str,
) -> Result<Comparison> {
    if baseline.ts_per_region.len() != variant.ts_per_region.len() {
        return Err(Error::Dimension {
            expected: baseline.ts_per_region.len(),
            got: variant.ts_per_region.len(),
        });
    }
    let rows = baseline
        .rows()
        .into_iter()
        .zip(variant.rows())
        .map(|((metric, b), (_, v))| {
            let unit = match metric.as_str() {
                "TTD" => "veh km",
                "N" => "veh",
                _ => "veh h",
            };
            Ok(ComparisonRow {
                improvement_pct: improvement(b, v)?,
                difference: b - v,
                metric,
                unit: unit.to_string(),
                baseline: b,
                variant: v,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Comparison {
        baseline_label: baseline_label.into(),
        variant_label: variant_label.into(),
        rows,
    })
}

impl Comparison {
    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Aligned table; the `N` row shows the absolute difference instead of a percentage.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:<8} {:>14} {:>14} {:>16}",
            "Metric", "Unit", self.baseline_label, self.variant_label, "Improvement [%]"
        );
        for r in &self.rows {
            let last = if r.metric == "N" {
                format!("{:.3}", r.difference)
            } else {
                format!("{:.2}", r.improvement_pct)
            };
            let _ = writeln!(
                s,
                "{:<8} {:<8} {:>14.3} {:>14.3} {:>16}",
                r.metric, r.unit, r.baseline, r.variant, last
            );
        }
        s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "unit", &self.baseline_label, &self.variant_label, "improvement_pct", "difference"])?;
        for r in &self.rows {
            w.write_record([
                r.metric.clone(),
                r.unit.clone(),
                r.baseline.to_string(),
                r.variant.to_string(),
                r.improvement_pct.to_string(),
                r.difference.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

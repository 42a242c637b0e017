//! CSV persistence of runs.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a run read
//! back from disk is bit-identical to the one that was written. Region labels in
//! column names are one-based.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::plant::{FlowRecord, NetworkState, SplitRates, Trajectory, TrajectoryStep};
use crate::qdue::{CostMatrix, CostRecord, PriceMatrix, RegionMatrix};

/// Header plus numeric rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Dimension {
                expected: self.header.len(),
                got: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = BufWriter::new(File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let mut r = csv::Reader::from_reader(BufReader::new(file));
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut table = Table::new(header);
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|v| {
                    v.parse::<f64>().map_err(|e| Error::Artifact {
                        path: path.to_path_buf(),
                        msg: format!("row {}: {v:?}: {e}", line + 1),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            table.push(row).map_err(|e| Error::Artifact {
                path: path.to_path_buf(),
                msg: format!("row {}: {e}", line + 1),
            })?;
        }
        Ok(table)
    }

    /// Fails unless the header equals `expected`.
    pub fn expect_header(&self, path: &Path, expected: &[String]) -> Result<()> {
        if self.header != expected {
            return Err(Error::Artifact {
                path: path.to_path_buf(),
                msg: format!("unexpected columns {:?}", self.header),
            });
        }
        Ok(())
    }
}

pub fn state_columns(spec: &NetworkSpec) -> Vec<String> {
    let mut cols = vec!["step".to_string(), "time".to_string()];
    for i in spec.region_ids() {
        for j in spec.region_ids() {
            cols.push(format!("n_{i}_{j}"));
        }
    }
    cols.extend(spec.region_ids().map(|i| format!("n_{i}")));
    cols
}

pub fn split_columns(spec: &NetworkSpec) -> Vec<String> {
    let mut cols = vec!["step".to_string()];
    cols.extend(spec.triples().iter().map(|t| format!("theta_{}", t.label())));
    cols
}

pub fn flow_columns(spec: &NetworkSpec) -> Vec<String> {
    let mut cols = vec!["step".to_string()];
    cols.extend(spec.region_ids().map(|i| format!("m_{i}_{i}")));
    cols.extend(spec.triples().iter().map(|t| format!("m_{}", t.label())));
    cols.extend(spec.triples().iter().map(|t| format!("clamped_{}", t.label())));
    cols.extend(spec.region_ids().map(|i| format!("jam_{i}")));
    cols
}

pub fn cost_columns(spec: &NetworkSpec) -> Vec<String> {
    let mut cols = vec!["step".to_string()];
    for i in spec.region_ids() {
        for j in spec.region_ids() {
            cols.push(format!("c_{i}_{j}"));
        }
    }
    cols.extend(spec.border_pairs().iter().map(|(i, h)| format!("p_{i}_{h}")));
    cols
}

fn state_row(state: &NetworkState) -> Vec<f64> {
    let mut row = vec![state.step as f64, state.time()];
    row.extend_from_slice(state.cells());
    row.extend(state.totals());
    row
}

/// Scalars of a trajectory that do not fit the per-step tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub step_seconds: f64,
    pub injected: f64,
}

/// Writes `trajectory.csv` (one row per step plus the final state), `splits.csv`,
/// `flows.csv` and `run.json` into `dir`.
pub fn save_trajectory(spec: &NetworkSpec, traj: &Trajectory, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut states = Table::new(state_columns(spec));
    let mut splits = Table::new(split_columns(spec));
    let mut flows = Table::new(flow_columns(spec));
    for s in &traj.steps {
        states.push(state_row(&s.state))?;
        let step = s.state.step as f64;
        let mut row = vec![step];
        row.extend_from_slice(&s.split.theta);
        splits.push(row)?;
        let mut row = vec![step];
        row.extend_from_slice(&s.flows.m_ii);
        row.extend_from_slice(&s.flows.m_ihj);
        row.extend(s.flows.clamped.iter().map(|&c| f64::from(u8::from(c))));
        row.extend(
            spec.region_ids()
                .map(|i| f64::from(u8::from(s.flows.jam_violations.contains(&i)))),
        );
        flows.push(row)?;
    }
    states.push(state_row(&traj.final_state))?;
    states.save(&dir.join("trajectory.csv"))?;
    splits.save(&dir.join("splits.csv"))?;
    flows.save(&dir.join("flows.csv"))?;
    let summary = RunSummary {
        steps: traj.steps.len(),
        step_seconds: traj.step_seconds(),
        injected: traj.injected,
    };
    write_json(&dir.join("run.json"), &summary)
}

pub fn load_trajectory(spec: &NetworkSpec, dir: &Path) -> Result<Trajectory> {
    let k = spec.k();
    let nt = spec.triples().len();
    let summary: RunSummary = read_json(&dir.join("run.json"))?;
    let load = |name: &str, cols: Vec<String>, rows: usize| -> Result<Table> {
        let path = dir.join(name);
        let t = Table::load(&path)?;
        t.expect_header(&path, &cols)?;
        if t.rows.len() != rows {
            return Err(Error::Artifact {
                path,
                msg: format!("expected {rows} rows, found {}", t.rows.len()),
            });
        }
        Ok(t)
    };
    let states = load("trajectory.csv", state_columns(spec), summary.steps + 1)?;
    let splits = load("splits.csv", split_columns(spec), summary.steps)?;
    let flows = load("flows.csv", flow_columns(spec), summary.steps)?;

    let state = |row: &[f64]| NetworkState::from_cells(k, row[2..2 + k * k].to_vec(), row[0] as usize, summary.step_seconds);
    let mut steps = Vec::with_capacity(summary.steps);
    for s in 0..summary.steps {
        let f = &flows.rows[s];
        steps.push(TrajectoryStep {
            state: state(&states.rows[s])?,
            split: SplitRates {
                theta: splits.rows[s][1..].to_vec(),
            },
            flows: FlowRecord {
                m_ii: f[1..1 + k].to_vec(),
                m_ihj: f[1 + k..1 + k + nt].to_vec(),
                clamped: f[1 + k + nt..1 + k + 2 * nt].iter().map(|&v| v != 0.0).collect(),
                jam_violations: spec
                    .region_ids()
                    .filter(|i| f[1 + k + 2 * nt + i.index()] != 0.0)
                    .collect(),
            },
        });
    }
    Ok(Trajectory {
        steps,
        final_state: state(&states.rows[summary.steps])?,
        injected: summary.injected,
    })
}

pub fn save_costs(spec: &NetworkSpec, costs: &[CostRecord], path: &Path) -> Result<()> {
    let mut t = Table::new(cost_columns(spec));
    for (step, c) in costs.iter().enumerate() {
        let mut row = vec![step as f64];
        row.extend_from_slice(c.base.0.as_slice());
        row.extend(spec.border_pairs().iter().map(|&(i, h)| c.prices.get(i, h)));
        t.push(row)?;
    }
    t.save(path)
}

/// Prices off the border pairs are restored as zero.
pub fn load_costs(spec: &NetworkSpec, path: &Path) -> Result<Vec<CostRecord>> {
    let t = Table::load(path)?;
    t.expect_header(path, &cost_columns(spec))?;
    let k = spec.k();
    let pairs = spec.border_pairs();
    t.rows
        .iter()
        .map(|row| {
            let rows: Vec<Vec<f64>> = row[1..1 + k * k].chunks(k).map(<[f64]>::to_vec).collect();
            let base = RegionMatrix::from_rows(&rows)?;
            let mut prices = PriceMatrix::zeros(k);
            for (p, &(i, h)) in pairs.iter().enumerate() {
                prices.0.set(i, h, row[1 + k * k + p]);
            }
            Ok(CostRecord {
                base: CostMatrix(base),
                prices,
            })
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

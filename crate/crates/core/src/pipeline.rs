//! Staged batch pipeline: user equilibrium, system optimum, cost models,
//! priced run, comparison tables and plot data.
//!
//! Every stage writes into its own subdirectory of the output directory and
//! reads its inputs back from disk, so rerunning a single stage reproduces its
//! artifacts exactly from the persisted outputs of earlier stages.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Scenario;
use crate::dso;
use crate::error::{Error, Result};
use crate::io::{self, Table};
use crate::metrics::{self, MetricsReport};
use crate::network::NetworkSpec;
use crate::plant::Trajectory;
use crate::pricing::{self, Dataset, ModelSet, PairModel, MODEL_FORMAT_VERSION};
use crate::qdue::{self, PriceMatrix, QdueRun};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Qdue,
    Dso,
    Train,
    Priced,
    Compare,
    Plots,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Qdue,
        Stage::Dso,
        Stage::Train,
        Stage::Priced,
        Stage::Compare,
        Stage::Plots,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Qdue => "qdue",
            Stage::Dso => "dso",
            Stage::Train => "train",
            Stage::Priced => "priced",
            Stage::Compare => "compare",
            Stage::Plots => "plots",
        }
    }

    /// Stages whose artifacts must exist before this one runs.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Qdue | Stage::Dso => &[],
            Stage::Train => &[Stage::Qdue],
            Stage::Priced => &[Stage::Train, Stage::Dso],
            Stage::Compare => &[Stage::Qdue, Stage::Dso],
            Stage::Plots => &[Stage::Qdue],
        }
    }

    /// Comma separated names, or `all`.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        if s.trim() == "all" {
            return Ok(Stage::ALL.to_vec());
        }
        let mut stages = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Stage>>>()?;
        if stages.is_empty() {
            return Err(Error::config("stages", "no stage given"));
        }
        stages.sort();
        stages.dedup();
        Ok(stages)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                Error::config("stages", format!("unknown stage {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Written into every stage directory; ties the artifacts to a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageStamp {
    pub stage: Stage,
    pub config_sha256: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Header of CSV artifacts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub package: String,
    pub version: String,
    pub scenario: String,
    pub seed: u64,
    pub config_sha256: String,
    pub stages: Vec<Stage>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Headline numbers of the comparison stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub qdue: MetricsReport,
    pub dso: MetricsReport,
    pub priced: Option<MetricsReport>,
    pub dso_tts_improvement_pct: f64,
    pub priced_tts_improvement_pct: Option<f64>,
    pub demand_volume: f64,
    /// Mean active toll per border pair `[origin, via, mean, active share]`, labels one-based.
    pub pair_prices: Vec<(usize, usize, f64, f64)>,
    /// Mean active toll leaving each region, labels one-based.
    pub regional_prices: Vec<(usize, Option<f64>)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Pipeline {
    scenario: Scenario,
    out: PathBuf,
    config_text: String,
    config_sha256: String,
}

impl Pipeline {
    pub fn new(scenario: Scenario, out: impl Into<PathBuf>) -> Result<Self> {
        let config_text = toml::to_string(&scenario.config)
            .map_err(|e| Error::config("config", format!("cannot serialise: {e}")))?;
        let config_sha256 = sha256_hex(config_text.as_bytes());
        Ok(Self {
            scenario,
            out: out.into(),
            config_text,
            config_sha256,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn config_sha256(&self) -> &str {
        &self.config_sha256
    }

    fn spec(&self) -> &NetworkSpec {
        &self.scenario.spec
    }

    fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    /// Runs `stages` in dependency order and refreshes the manifest.
    pub fn run(&self, stages: &[Stage]) -> Result<Manifest> {
        std::fs::create_dir_all(&self.out)?;
        std::fs::write(self.out.join("config.toml"), &self.config_text)?;
        let mut ordered = stages.to_vec();
        ordered.sort();
        ordered.dedup();
        for stage in ordered {
            self.run_stage(stage)?;
        }
        self.write_manifest()
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        for &req in stage.requires() {
            self.check_stamp(req)?;
        }
        info!("stage {stage}");
        let dir = self.dir(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir)?;
        }
        std::fs::create_dir_all(&dir)?;
        match stage {
            Stage::Qdue => self.stage_qdue(&dir)?,
            Stage::Dso => self.stage_dso(&dir)?,
            Stage::Train => self.stage_train(&dir)?,
            Stage::Priced => self.stage_priced(&dir)?,
            Stage::Compare => self.stage_compare(&dir)?,
            Stage::Plots => self.stage_plots(&dir)?,
        }
        io::write_json(
            &dir.join("stage.json"),
            &StageStamp {
                stage,
                config_sha256: self.config_sha256.clone(),
                seed: self.scenario.seed(),
            },
        )
    }

    fn check_stamp(&self, stage: Stage) -> Result<()> {
        let path = self.dir(stage).join("stage.json");
        let stamp: StageStamp = io::read_json(&path)?;
        if stamp.config_sha256 != self.config_sha256 {
            return Err(Error::Artifact {
                path,
                msg: format!("produced by a different configuration; rerun the {stage} stage"),
            });
        }
        Ok(())
    }

    fn has_stage(&self, stage: Stage) -> bool {
        self.check_stamp(stage).is_ok()
    }

    fn stage_qdue(&self, dir: &Path) -> Result<()> {
        let s = &self.scenario;
        let run = qdue::run_qdue(&s.spec, &s.demand, &s.config.choice, s.horizon_steps(), s.step_seconds(), None)?;
        io::save_trajectory(&s.spec, &run.trajectory, dir)?;
        io::save_costs(&s.spec, &run.costs, &dir.join("costs.csv"))?;
        io::write_json(&dir.join("metrics.json"), &MetricsReport::from_trajectory(&s.spec, &run.trajectory))
    }

    fn stage_dso(&self, dir: &Path) -> Result<()> {
        let s = &self.scenario;
        let run = dso::run_lrho(&s.spec, &s.demand, &s.pwa, &s.config.lrho, s.horizon_steps(), s.step_seconds())?;
        io::save_trajectory(&s.spec, &run.trajectory, dir)?;
        let mut cycles = Table::new(vec!["cycle".into(), "step".into(), "objective".into()]);
        for c in &run.cycles {
            cycles.push(vec![c.cycle as f64, c.step as f64, c.objective])?;
        }
        cycles.save(&dir.join("cycles.csv"))?;
        io::write_json(&dir.join("metrics.json"), &MetricsReport::from_trajectory(&s.spec, &run.trajectory))
    }

    pub fn load_qdue(&self) -> Result<QdueRun> {
        let dir = self.dir(Stage::Qdue);
        Ok(QdueRun {
            trajectory: io::load_trajectory(self.spec(), &dir)?,
            costs: io::load_costs(self.spec(), &dir.join("costs.csv"))?,
        })
    }

    pub fn load_dso(&self) -> Result<Trajectory> {
        io::load_trajectory(self.spec(), &self.dir(Stage::Dso))
    }

    pub fn load_priced(&self) -> Result<QdueRun> {
        let dir = self.dir(Stage::Priced);
        Ok(QdueRun {
            trajectory: io::load_trajectory(self.spec(), &dir)?,
            costs: io::load_costs(self.spec(), &dir.join("costs.csv"))?,
        })
    }

    fn model_path(&self, i: usize, h: usize) -> PathBuf {
        self.dir(Stage::Train).join(format!("model_{}_{}.json", i + 1, h + 1))
    }

    pub fn load_models(&self) -> Result<ModelSet> {
        let models = self
            .spec()
            .border_pairs()
            .iter()
            .map(|&(i, h)| {
                let path = self.model_path(i.index(), h.index());
                let m: PairModel = io::read_json(&path)?;
                if m.format_version != MODEL_FORMAT_VERSION || m.pair() != (i, h) {
                    return Err(Error::Artifact {
                        path,
                        msg: format!("expected model version {MODEL_FORMAT_VERSION} for pair ({i}, {h})"),
                    });
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelSet { models })
    }

    pub fn dataset(&self) -> Result<Dataset> {
        let run = self.load_qdue()?;
        pricing::build_dataset(
            self.spec(),
            &run,
            self.scenario.seed(),
            self.scenario.config.training.test_fraction,
        )
    }

    fn stage_train(&self, dir: &Path) -> Result<()> {
        let dataset = self.dataset()?;
        let models = ModelSet::train(&dataset, &self.scenario.config.training, self.scenario.seed())?;
        let mut summary = Table::new(
            ["origin", "via", "train_first", "train_last", "validation_first", "validation_last", "test_mae"]
                .map(String::from)
                .to_vec(),
        );
        for m in &models.models {
            io::write_json(&self.model_path(m.origin, m.via), m)?;
            let (i, h) = (m.origin + 1, m.via + 1);
            let mut loss = Table::new(vec!["epoch".into(), "train".into(), "validation".into()]);
            for (e, (t, v)) in m.history.train.iter().zip(&m.history.validation).enumerate() {
                loss.push(vec![(e + 1) as f64, *t, *v])?;
            }
            loss.save(&dir.join(format!("loss_{i}_{h}.csv")))?;
            let first_last = |v: &[f64]| (v.first().copied().unwrap_or(f64::NAN), v.last().copied().unwrap_or(f64::NAN));
            let (tf, tl) = first_last(&m.history.train);
            let (vf, vl) = first_last(&m.history.validation);
            summary.push(vec![i as f64, h as f64, tf, tl, vf, vl, m.test_mae])?;
        }
        summary.save(&dir.join("summary.csv"))?;
        let mut split = Table::new(vec!["sample".into(), "test".into()]);
        for &r in &dataset.train {
            split.push(vec![r as f64, 0.0])?;
        }
        for &r in &dataset.test {
            split.push(vec![r as f64, 1.0])?;
        }
        split.save(&dir.join("split.csv"))
    }

    fn stage_priced(&self, dir: &Path) -> Result<()> {
        let s = &self.scenario;
        let models = self.load_models()?;
        let reference = self.load_dso()?;
        let priced = pricing::run_priced(
            &s.spec,
            &s.demand,
            &s.config.choice,
            &models,
            &reference,
            s.config.lrho.n_c,
            s.horizon_steps(),
            s.step_seconds(),
        )?;
        io::save_trajectory(&s.spec, &priced.run.trajectory, dir)?;
        io::save_costs(&s.spec, &priced.run.costs, &dir.join("costs.csv"))?;
        let mut prices = Table::new(
            std::iter::once("step".to_string())
                .chain(s.spec.border_pairs().iter().map(|(i, h)| format!("p_{i}_{h}")))
                .collect(),
        );
        for (step, c) in priced.run.costs.iter().enumerate() {
            let mut row = vec![step as f64];
            row.extend(s.spec.border_pairs().iter().map(|&(i, h)| c.prices.get(i, h)));
            prices.push(row)?;
        }
        prices.save(&dir.join("prices.csv"))?;
        let inputs: Vec<Vec<f64>> = priced.cycles.iter().map(|c| c.features.clone()).collect();
        if let Some(scaler) = models.scaler() {
            let shift = pricing::distribution_shift(scaler, &inputs);
            let mut t = Table::new(vec!["feature".into(), "coverage".into()]);
            for (j, c) in shift.per_feature.iter().enumerate() {
                t.push(vec![j as f64, *c])?;
            }
            t.save(&dir.join("shift.csv"))?;
            io::write_json(&dir.join("shift.json"), &shift)?;
        }
        io::write_json(
            &dir.join("metrics.json"),
            &MetricsReport::from_trajectory(&s.spec, &priced.run.trajectory),
        )
    }

    /// Reads the persisted runs and builds the comparison summary.
    pub fn summary(&self) -> Result<CompareSummary> {
        let spec = self.spec();
        let q = MetricsReport::from_trajectory(spec, &self.load_qdue()?.trajectory);
        let d = MetricsReport::from_trajectory(spec, &self.load_dso()?);
        let priced = if self.has_stage(Stage::Priced) {
            Some(self.load_priced()?)
        } else {
            None
        };
        let p = priced.as_ref().map(|r| MetricsReport::from_trajectory(spec, &r.trajectory));
        let per_step: Vec<PriceMatrix> = priced
            .as_ref()
            .map(|r| r.costs.iter().map(|c| c.prices.clone()).collect())
            .unwrap_or_default();
        Ok(CompareSummary {
            dso_tts_improvement_pct: metrics::improvement(q.tts, d.tts)?,
            priced_tts_improvement_pct: p.as_ref().map(|p| metrics::improvement(q.tts, p.tts)).transpose()?,
            demand_volume: self.scenario.demand.total_volume(),
            pair_prices: pricing::average_active_prices(spec, &per_step)
                .into_iter()
                .map(|(i, h, m, a)| (i.label(), h.label(), m, a))
                .collect(),
            regional_prices: pricing::regional_average_prices(spec, &per_step)
                .into_iter()
                .map(|(i, m)| (i.label(), m))
                .collect(),
            qdue: q,
            dso: d,
            priced: p,
        })
    }

    fn stage_compare(&self, dir: &Path) -> Result<()> {
        let summary = self.summary()?;
        let mut tables = vec![("dso_vs_qdue", metrics::compare(&summary.qdue, &summary.dso, "QDUE", "DSO")?)];
        if let Some(p) = &summary.priced {
            tables.push(("priced_vs_qdue", metrics::compare(&summary.qdue, p, "QDUE", "Priced")?));
        }
        for (name, table) in &tables {
            let mut f = std::fs::File::create(dir.join(format!("{name}.csv")))?;
            table.write_csv(&mut f)?;
            std::fs::write(dir.join(format!("{name}.txt")), table.to_text())?;
        }
        io::write_json(&dir.join("summary.json"), &summary)
    }

    fn stage_plots(&self, dir: &Path) -> Result<()> {
        let spec = self.spec();
        let mut runs: Vec<(&str, Trajectory)> = vec![("qdue", self.load_qdue()?.trajectory)];
        if self.has_stage(Stage::Dso) {
            runs.push(("dso", self.load_dso()?));
        }
        let priced = if self.has_stage(Stage::Priced) {
            Some(self.load_priced()?)
        } else {
            None
        };
        if let Some(p) = &priced {
            runs.push(("priced", p.trajectory.clone()));
        }

        for (name, traj) in &runs {
            let mut cols = vec!["time".to_string()];
            cols.extend(spec.region_ids().map(|i| format!("n_{i}")));
            cols.extend(spec.region_ids().map(|i| format!("n_crit_{i}")));
            let mut t = Table::new(cols);
            let crit: Vec<f64> = spec.region_ids().map(|i| spec.critical(i).accumulation).collect();
            for state in traj.steps.iter().map(|s| &s.state).chain(std::iter::once(&traj.final_state)) {
                let mut row = vec![state.time()];
                row.extend(state.totals());
                row.extend(&crit);
                t.push(row)?;
            }
            t.save(&dir.join(format!("accumulation_{name}.csv")))?;
        }

        let mut cols = vec!["time".to_string()];
        cols.extend(runs.iter().map(|(n, _)| n.to_string()));
        let mut endings = Table::new(cols);
        let mut cum = vec![0.0; runs.len()];
        let steps = runs[0].1.steps.len();
        let dt = runs[0].1.step_seconds();
        endings.push(std::iter::once(0.0).chain(cum.iter().copied()).collect())?;
        for k in 0..steps {
            for (c, (_, traj)) in cum.iter_mut().zip(&runs) {
                *c += dt * traj.steps[k].flows.m_ii.iter().sum::<f64>();
            }
            endings.push(std::iter::once((k + 1) as f64 * dt).chain(cum.iter().copied()).collect())?;
        }
        endings.save(&dir.join("trip_endings.csv"))?;

        let mut cols = vec!["time".to_string()];
        for (name, _) in &runs {
            cols.extend(spec.triples().iter().map(|t| format!("{name}_theta_{}", t.label())));
        }
        let mut splits = Table::new(cols);
        for k in 0..steps {
            let mut row = vec![k as f64 * dt];
            for (_, traj) in &runs {
                row.extend(&traj.steps[k].split.theta);
            }
            splits.push(row)?;
        }
        splits.save(&dir.join("splits.csv"))?;

        if self.has_stage(Stage::Train) {
            let models = self.load_models()?;
            let mut cols = vec!["epoch".to_string()];
            for m in &models.models {
                cols.push(format!("train_{}_{}", m.origin + 1, m.via + 1));
                cols.push(format!("validation_{}_{}", m.origin + 1, m.via + 1));
            }
            let mut loss = Table::new(cols);
            let epochs = models.models.first().map_or(0, |m| m.history.train.len());
            for e in 0..epochs {
                let mut row = vec![(e + 1) as f64];
                for m in &models.models {
                    row.push(m.history.train[e]);
                    row.push(m.history.validation[e]);
                }
                loss.push(row)?;
            }
            loss.save(&dir.join("loss.csv"))?;
        }

        if let Some(p) = &priced {
            let mut cols = vec!["time".to_string()];
            cols.extend(spec.border_pairs().iter().map(|(i, h)| format!("p_{i}_{h}")));
            let mut t = Table::new(cols);
            for (k, c) in p.costs.iter().enumerate() {
                let mut row = vec![k as f64 * dt];
                row.extend(spec.border_pairs().iter().map(|&(i, h)| c.prices.get(i, h)));
                t.push(row)?;
            }
            t.save(&dir.join("prices.csv"))?;
        }
        Ok(())
    }

    /// Rebuilds `manifest.json` from every file under the output directory.
    pub fn write_manifest(&self) -> Result<Manifest> {
        let mut files = Vec::new();
        collect_files(&self.out, &mut files)?;
        files.sort();
        let mut artifacts = Vec::new();
        for path in files {
            let rel = path
                .strip_prefix(&self.out)
                .expect("collected under the output directory")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            if rel == "manifest.json" {
                continue;
            }
            let bytes = std::fs::read(&path)?;
            let columns = if rel.ends_with(".csv") {
                let mut r = csv::Reader::from_reader(bytes.as_slice());
                r.headers()?.iter().map(str::to_string).collect()
            } else {
                Vec::new()
            };
            artifacts.push(ArtifactEntry {
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
                path: rel,
                columns,
            });
        }
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scenario: self.scenario.config.name.clone(),
            seed: self.scenario.seed(),
            config_sha256: self.config_sha256.clone(),
            stages: Stage::ALL.into_iter().filter(|&s| self.has_stage(s)).collect(),
            artifacts,
        };
        io::write_json(&self.out.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

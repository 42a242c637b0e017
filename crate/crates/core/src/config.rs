//! Scenario files.
//!
//! Regions are referenced by one-based labels in the file and converted to
//! zero-based [`RegionId`]s here. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demand::{DemandProfile, Trapezoid};
use crate::dso::LrhoConfig;
use crate::error::{Error, Result};
use crate::mfd::{pwa_approximate, MfdPolynomial, PwaMfd};
use crate::network::{NetworkSpec, RegionId, RegionParams, Topology};
use crate::pricing::TrainConfig;
use crate::qdue::ChoiceSpec;

/// The shipped Zurich case study.
pub const ZURICH_PRESET: &str = include_str!("../scenarios/zurich.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfdConfig {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub area_km2: f64,
    pub n_detectors: u32,
    pub n_jam: f64,
    pub avg_trip_length: f64,
    pub network_length: f64,
    pub capacity_max: f64,
    pub mfd: MfdConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// Every pair of regions shares a border.
    #[serde(default)]
    pub complete: bool,
    /// Undirected borders as one-based label pairs.
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    pub origin: usize,
    pub destination: usize,
    pub t_start: f64,
    pub t_rise: f64,
    pub t_const: f64,
    pub t_fall: f64,
    /// Plateau demand [veh/s].
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "defaults::name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::horizon_seconds")]
    pub horizon_seconds: f64,
    #[serde(default = "defaults::step_seconds")]
    pub step_seconds: f64,
    #[serde(default = "defaults::pwa_lines")]
    pub pwa_lines: usize,
    #[serde(default)]
    pub choice: ChoiceSpec,
    #[serde(default)]
    pub lrho: LrhoConfig,
    #[serde(default)]
    pub training: TrainConfig,
    pub regions: Vec<RegionConfig>,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub demand: Vec<DemandConfig>,
}

mod defaults {
    pub fn name() -> String {
        "scenario".into()
    }

    pub fn horizon_seconds() -> f64 {
        3000.0
    }

    pub fn step_seconds() -> f64 {
        20.0
    }

    pub fn pwa_lines() -> usize {
        20
    }
}

/// Everything needed to run the pipeline, validated and derived.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub spec: NetworkSpec,
    pub demand: DemandProfile,
    pub pwa: Vec<PwaMfd>,
}

impl Scenario {
    pub fn horizon_steps(&self) -> usize {
        (self.config.horizon_seconds / self.config.step_seconds).round() as usize
    }

    pub fn step_seconds(&self) -> f64 {
        self.config.step_seconds
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let path = e.span().map_or_else(String::new, |s| {
                format!("line {}", text[..s.start].matches('\n').count() + 1)
            });
            Error::config(path, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn zurich() -> Self {
        Self::from_toml(ZURICH_PRESET).expect("shipped preset parses")
    }

    fn region_id(&self, label: usize, path: &str) -> Result<RegionId> {
        if label == 0 || label > self.regions.len() {
            return Err(Error::config(
                path,
                format!("region {label} does not exist (regions are 1..={})", self.regions.len()),
            ));
        }
        Ok(RegionId(label - 1))
    }

    pub fn build(&self) -> Result<Scenario> {
        if !(self.step_seconds > 0.0 && self.step_seconds.is_finite()) {
            return Err(Error::config("step_seconds", "must be positive"));
        }
        if !(self.horizon_seconds > 0.0 && self.horizon_seconds.is_finite()) {
            return Err(Error::config("horizon_seconds", "must be positive"));
        }
        let steps = self.horizon_seconds / self.step_seconds;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::config("horizon_seconds", "must be a multiple of step_seconds"));
        }
        if self.pwa_lines < 2 {
            return Err(Error::config("pwa_lines", "must be >= 2"));
        }
        self.choice.validate("choice")?;
        self.lrho.validate("lrho")?;
        self.training.validate("training")?;

        let regions = self
            .regions
            .iter()
            .enumerate()
            .map(|(idx, r)| {
                let path = format!("regions[{idx}]");
                let mfd = MfdPolynomial::new(r.mfd.a, r.mfd.b, r.mfd.c, r.n_jam).map_err(|e| match e {
                    Error::Config { path: p, msg } => Error::config(format!("{path}.mfd.{p}"), msg),
                    other => other,
                })?;
                let params = RegionParams {
                    area_km2: r.area_km2,
                    n_detectors: r.n_detectors,
                    n_jam: r.n_jam,
                    avg_trip_length: r.avg_trip_length,
                    network_length: r.network_length,
                    mfd,
                    capacity_max: r.capacity_max,
                };
                params.validate(&path)?;
                Ok(params)
            })
            .collect::<Result<Vec<_>>>()?;
        let k = regions.len();
        if k < 2 {
            return Err(Error::config("regions", "need at least two regions"));
        }

        let topology = match (self.topology.complete, self.topology.edges.is_empty()) {
            (true, true) => Topology::complete(k)?,
            (false, false) => {
                let edges = self
                    .topology
                    .edges
                    .iter()
                    .enumerate()
                    .map(|(e, [u, v])| {
                        let path = format!("topology.edges[{e}]");
                        Ok((self.region_id(*u, &path)?, self.region_id(*v, &path)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Topology::from_edges(k, &edges)?
            }
            _ => return Err(Error::config("topology", "set exactly one of `complete = true` or `edges`")),
        };
        let spec = NetworkSpec::new(regions, topology)?;

        let mut demand = DemandProfile::new(k);
        for (idx, d) in self.demand.iter().enumerate() {
            let path = format!("demand[{idx}]");
            let i = self.region_id(d.origin, &format!("{path}.origin"))?;
            let j = self.region_id(d.destination, &format!("{path}.destination"))?;
            let tz = Trapezoid {
                t_start: d.t_start,
                t_rise: d.t_rise,
                t_const: d.t_const,
                t_fall: d.t_fall,
                magnitude: d.magnitude,
            };
            tz.validate(&path)?;
            demand.add(i, j, tz)?;
        }

        let pwa = spec
            .regions
            .iter()
            .map(|r| pwa_approximate(&r.mfd, self.pwa_lines))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            config: self.clone(),
            spec,
            demand,
            pwa,
        })
    }
}

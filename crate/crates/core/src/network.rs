//! Static description of the multi-region network.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfd::{Critical, MfdPolynomial};

/// Zero-based region index. Displayed one-based, the way regions are labelled
/// in configuration files and CSV headers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionId(pub usize);

impl RegionId {
    pub fn from_label(label: usize) -> Result<Self> {
        if label == 0 {
            return Err(Error::config("region", "region labels start at 1"));
        }
        Ok(RegionId(label - 1))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }

    #[inline]
    pub fn label(self) -> usize {
        self.0 + 1
    }
}

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub area_km2: f64,
    pub n_detectors: u32,
    /// Jam accumulation [veh].
    pub n_jam: f64,
    /// Average trip length [m].
    pub avg_trip_length: f64,
    /// Network length [lane-m].
    pub network_length: f64,
    pub mfd: MfdPolynomial,
    /// Receiving capacity of the region boundary while uncongested [veh/s].
    pub capacity_max: f64,
}

impl RegionParams {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.n_jam > 0.0) {
            return Err(Error::config(format!("{path}.n_jam"), "must be positive"));
        }
        if !(self.avg_trip_length > 0.0) {
            return Err(Error::config(format!("{path}.avg_trip_length"), "must be positive"));
        }
        if !(self.capacity_max > 0.0) {
            return Err(Error::config(format!("{path}.capacity_max"), "must be positive"));
        }
        if self.mfd.n_jam != self.n_jam {
            return Err(Error::config(format!("{path}.mfd"), "domain must match n_jam"));
        }
        self.mfd.validate().map_err(|e| match e {
            Error::Config { path: p, msg } => Error::config(format!("{path}.{p}"), msg),
            other => other,
        })
    }
}

/// Symmetric adjacency between regions.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    adjacency: Vec<Vec<bool>>,
    neighbors: Vec<Vec<RegionId>>,
}

impl Topology {
    /// Builds the relation from undirected edges.
    pub fn from_edges(k: usize, edges: &[(RegionId, RegionId)]) -> Result<Self> {
        if k < 2 {
            return Err(Error::config("regions", "at least two regions are required"));
        }
        let mut adjacency = vec![vec![false; k]; k];
        for (idx, &(u, v)) in edges.iter().enumerate() {
            if u.index() >= k || v.index() >= k {
                return Err(Error::config(
                    format!("topology.edges[{idx}]"),
                    format!("unknown region in edge ({u}, {v})"),
                ));
            }
            if u == v {
                return Err(Error::config(
                    format!("topology.edges[{idx}]"),
                    format!("self-adjacency of region {u}"),
                ));
            }
            adjacency[u.index()][v.index()] = true;
            adjacency[v.index()][u.index()] = true;
        }
        let neighbors: Vec<Vec<RegionId>> = adjacency
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &a)| a)
                    .map(|(j, _)| RegionId(j))
                    .collect()
            })
            .collect();
        if let Some(i) = neighbors.iter().position(|n| n.is_empty()) {
            return Err(Error::config(
                "topology",
                format!("region {} has no neighbours", RegionId(i)),
            ));
        }
        Ok(Self { adjacency, neighbors })
    }

    pub fn complete(k: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for u in 0..k {
            for v in (u + 1)..k {
                edges.push((RegionId(u), RegionId(v)));
            }
        }
        Self::from_edges(k, &edges)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    #[inline]
    pub fn adjacent(&self, u: RegionId, v: RegionId) -> bool {
        self.adjacency[u.index()][v.index()]
    }

    pub fn neighbors(&self, i: RegionId) -> &[RegionId] {
        &self.neighbors[i.index()]
    }
}

/// Which (origin, stop-over, destination) triples a vehicle may use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PathRule;

impl PathRule {
    pub fn allows(&self, topology: &Topology, i: RegionId, h: RegionId, j: RegionId) -> bool {
        if i == j {
            h == i
        } else {
            h != i && topology.adjacent(i, h)
        }
    }
}

/// Stop-over regions usable from `i` towards `j`. Empty means `j` is unreachable.
pub fn allowed_stopovers(topology: &Topology, rule: PathRule, i: RegionId, j: RegionId) -> Vec<RegionId> {
    debug_assert!(i != j, "internal trips have no stop-over choice");
    topology
        .neighbors(i)
        .iter()
        .copied()
        .filter(|&h| rule.allows(topology, i, h, j))
        .collect()
}

/// A transfer movement from `origin` into `via` for vehicles bound to `dest`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub origin: RegionId,
    pub via: RegionId,
    pub dest: RegionId,
}

impl Triple {
    /// Column label such as `3_1_4` (origin, via, destination).
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.origin, self.via, self.dest)
    }
}

/// The static world: regions, topology and the derived movement catalogue.
#[derive(Clone, Debug)]
pub struct NetworkSpec {
    pub regions: Vec<RegionParams>,
    topology: Topology,
    rule: PathRule,
    critical: Vec<Critical>,
    triples: Vec<Triple>,
    /// Ordered adjacent pairs (I, H), I-major.
    border_pairs: Vec<(RegionId, RegionId)>,
}

impl NetworkSpec {
    pub fn new(regions: Vec<RegionParams>, topology: Topology) -> Result<Self> {
        if regions.len() != topology.len() {
            return Err(Error::Dimension {
                expected: topology.len(),
                got: regions.len(),
            });
        }
        for (i, r) in regions.iter().enumerate() {
            r.validate(&format!("regions[{i}]"))?;
        }
        let rule = PathRule;
        let k = regions.len();
        let mut triples = Vec::new();
        for i in (0..k).map(RegionId) {
            for j in (0..k).map(RegionId).filter(|&j| j != i) {
                let hs = allowed_stopovers(&topology, rule, i, j);
                if hs.is_empty() {
                    return Err(Error::config(
                        "topology",
                        format!("destination {j} unreachable from {i}"),
                    ));
                }
                triples.extend(hs.into_iter().map(|h| Triple { origin: i, via: h, dest: j }));
            }
        }
        let border_pairs = (0..k)
            .map(RegionId)
            .flat_map(|i| topology.neighbors(i).iter().map(move |&h| (i, h)))
            .collect();
        let critical = regions.iter().map(|r| r.mfd.critical()).collect();
        Ok(Self {
            regions,
            topology,
            rule,
            critical,
            triples,
            border_pairs,
        })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.regions.len()
    }

    pub fn region_ids(&self) -> impl Iterator<Item = RegionId> {
        (0..self.k()).map(RegionId)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn rule(&self) -> PathRule {
        self.rule
    }

    pub fn region(&self, i: RegionId) -> &RegionParams {
        &self.regions[i.index()]
    }

    pub fn critical(&self, i: RegionId) -> Critical {
        self.critical[i.index()]
    }

    /// Transfer triples ordered by origin, then destination, then stop-over.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple_index(&self, t: Triple) -> Option<usize> {
        self.triples.binary_search_by(|x| {
            (x.origin, x.dest, x.via).cmp(&(t.origin, t.dest, t.via))
        }).ok()
    }

    /// Index range in [`Self::triples`] holding the alternatives of one OD pair.
    pub fn od_range(&self, i: RegionId, j: RegionId) -> std::ops::Range<usize> {
        let start = self.triples.partition_point(|t| (t.origin, t.dest) < (i, j));
        let end = self.triples.partition_point(|t| (t.origin, t.dest) <= (i, j));
        start..end
    }

    pub fn border_pairs(&self) -> &[(RegionId, RegionId)] {
        &self.border_pairs
    }

    pub fn allowed_stopovers(&self, i: RegionId, j: RegionId) -> Vec<RegionId> {
        allowed_stopovers(&self.topology, self.rule, i, j)
    }

    /// Receiving capacity of region `h` at accumulation `n_h` [veh/s].
    pub fn boundary_capacity(&self, h: RegionId, n_h: f64) -> Result<f64> {
        boundary_capacity(self.region(h), self.critical(h).accumulation, n_h)
    }
}

/// Constant capacity up to the critical accumulation, then linear down to zero at jam.
pub fn boundary_capacity(params: &RegionParams, n_crit: f64, n_h: f64) -> Result<f64> {
    if !(0.0..=params.n_jam).contains(&n_h) {
        return Err(Error::Domain {
            what: "receiving accumulation",
            value: n_h,
            lo: 0.0,
            hi: params.n_jam,
        });
    }
    Ok(capacity_shape(params.capacity_max, n_crit, params.n_jam, n_h))
}

#[inline]
pub(crate) fn capacity_shape(cap: f64, n_crit: f64, n_jam: f64, n_h: f64) -> f64 {
    if n_h <= n_crit {
        cap
    } else {
        (cap * (n_jam - n_h) / (n_jam - n_crit)).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(a: f64, b: f64, c: f64, n_jam: f64, cap: f64) -> RegionParams {
        RegionParams {
            area_km2: 1.0,
            n_detectors: 1,
            n_jam,
            avg_trip_length: 1000.0,
            network_length: 1000.0,
            mfd: MfdPolynomial::new(a, b, c, n_jam).unwrap(),
            capacity_max: cap,
        }
    }

    fn ids(labels: &[usize]) -> Vec<RegionId> {
        labels.iter().map(|&l| RegionId::from_label(l).unwrap()).collect()
    }

    #[test]
    fn zurich_stopovers() {
        let topo = Topology::complete(4).unwrap();
        let got = allowed_stopovers(&topo, PathRule, RegionId(2), RegionId(3));
        assert_eq!(got, ids(&[1, 2, 4]));
    }

    #[test]
    fn path_graph_stopovers() {
        let topo = Topology::from_edges(3, &[(RegionId(0), RegionId(1)), (RegionId(1), RegionId(2))]).unwrap();
        assert_eq!(allowed_stopovers(&topo, PathRule, RegionId(0), RegionId(2)), ids(&[2]));
    }

    #[test]
    fn path_rule_internal_trips() {
        let topo = Topology::complete(4).unwrap();
        let r = PathRule;
        assert!(r.allows(&topo, RegionId(0), RegionId(0), RegionId(0)));
        assert!(!r.allows(&topo, RegionId(0), RegionId(2), RegionId(0)));
        assert!(!r.allows(&topo, RegionId(0), RegionId(0), RegionId(1)));
    }

    #[test]
    fn topology_rejects_self_loops_and_isolated() {
        assert!(Topology::from_edges(2, &[(RegionId(0), RegionId(0))]).is_err());
        assert!(Topology::from_edges(3, &[(RegionId(0), RegionId(1))]).is_err());
        assert!(Topology::from_edges(1, &[]).is_err());
    }

    #[test]
    fn capacity_shape_examples() {
        let r = region(0.0, -1e-6, 4e-3, 4000.0, 6.0);
        let crit = r.mfd.critical().accumulation;
        assert_eq!(boundary_capacity(&r, crit, 0.0).unwrap(), 6.0);
        assert_eq!(boundary_capacity(&r, crit, 4000.0).unwrap(), 0.0);
        let mid = 0.5 * (crit + 4000.0);
        assert!((boundary_capacity(&r, crit, mid).unwrap() - 3.0).abs() < 1e-12);
        assert!(boundary_capacity(&r, crit, 4000.5).is_err());
    }

    #[test]
    fn triple_catalogue_on_k4() {
        let regions = (0..4).map(|_| region(0.0, -1e-6, 4e-3, 4000.0, 6.0)).collect();
        let spec = NetworkSpec::new(regions, Topology::complete(4).unwrap()).unwrap();
        assert_eq!(spec.triples().len(), 36);
        assert_eq!(spec.border_pairs().len(), 12);
        for (idx, t) in spec.triples().iter().enumerate() {
            assert_eq!(spec.triple_index(*t), Some(idx));
            assert!(spec.od_range(t.origin, t.dest).contains(&idx));
        }
        assert_eq!(spec.od_range(RegionId(2), RegionId(3)).len(), 3);
    }
}

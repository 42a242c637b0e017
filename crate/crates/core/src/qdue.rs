//! Quasi-dynamic user equilibrium.
//!
//! At every step the travel times of the current state are priced at the value
//! of time, each route alternative `I -> H -> ... -> J` is costed with a
//! shortest path from `H`, and a multinomial logit turns costs into splits.

use serde::{Deserialize, Serialize};

use crate::demand::DemandProfile;
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, RegionId, RegionParams, Topology};
use crate::plant::{self, NetworkState, SplitProvider, SplitRates, Trajectory};

/// Dense `k x k` matrix indexed by region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMatrix {
    k: usize,
    data: Vec<f64>,
}

impl RegionMatrix {
    pub fn filled(k: usize, v: f64) -> Self {
        Self { k, data: vec![v; k * k] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::Dimension { expected: k, got: bad.len() });
        }
        Ok(Self {
            k,
            data: rows.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: RegionId, j: RegionId) -> f64 {
        self.data[i.index() * self.k + j.index()]
    }

    #[inline]
    pub fn set(&mut self, i: RegionId, j: RegionId, v: f64) {
        self.data[i.index() * self.k + j.index()] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

macro_rules! region_matrix_newtype {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        pub struct $name(pub RegionMatrix);

        impl $name {
            #[inline]
            pub fn get(&self, i: RegionId, j: RegionId) -> f64 {
                self.0.get(i, j)
            }

            pub fn k(&self) -> usize {
                self.0.k()
            }
        }
    };
}

region_matrix_newtype!(
    /// Seconds to traverse `I` and then `H`; the diagonal holds internal trips.
    TravelTimeMatrix
);
region_matrix_newtype!(
    /// Generalised cost in CHF.
    CostMatrix
);
region_matrix_newtype!(
    /// Border tolls in CHF; zero means inactive.
    PriceMatrix
);

impl PriceMatrix {
    pub fn zeros(k: usize) -> Self {
        Self(RegionMatrix::filled(k, 0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceSpec {
    /// Logit scale [1/CHF].
    #[serde(default = "ChoiceSpec::default_mu")]
    pub mu: f64,
    /// Value of time [CHF/h].
    #[serde(default = "ChoiceSpec::default_vot")]
    pub vot: f64,
}

impl ChoiceSpec {
    fn default_mu() -> f64 {
        1.0
    }

    fn default_vot() -> f64 {
        27.0
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::config(format!("{path}.mu"), "must be positive"));
        }
        if !(self.vot > 0.0 && self.vot.is_finite()) {
            return Err(Error::config(format!("{path}.vot"), "must be positive"));
        }
        Ok(())
    }
}

impl Default for ChoiceSpec {
    fn default() -> Self {
        Self {
            mu: Self::default_mu(),
            vot: Self::default_vot(),
        }
    }
}

const STALL_OUTFLOW: f64 = 1e-9;

/// Mean time to cross a region holding `n` vehicles, `n / G(n)` [s].
pub fn region_travel_time(params: &RegionParams, n: f64) -> Result<f64> {
    let g = params.mfd.outflow(n)?;
    if n == 0.0 {
        return Ok(params.mfd.free_flow_travel_time());
    }
    if g < STALL_OUTFLOW {
        let near_jam = 0.99 * params.n_jam;
        let estimate = near_jam / params.mfd.outflow_saturating(near_jam).max(1e-3);
        return Ok(10.0 * estimate);
    }
    Ok(n / g)
}

/// `τ_I + τ_H` for adjacent pairs, `τ_I` on the diagonal and infinity elsewhere.
pub fn travel_time_matrix(spec: &NetworkSpec, state: &NetworkState) -> Result<TravelTimeMatrix> {
    let k = spec.k();
    let tau: Vec<f64> = spec
        .region_ids()
        .map(|i| {
            let n = state.region_total(i).clamp(0.0, spec.region(i).n_jam);
            region_travel_time(spec.region(i), n)
        })
        .collect::<Result<_>>()?;
    let mut m = RegionMatrix::filled(k, f64::INFINITY);
    for i in spec.region_ids() {
        m.set(i, i, tau[i.index()]);
        for &h in spec.topology().neighbors(i) {
            m.set(i, h, tau[i.index()] + tau[h.index()]);
        }
    }
    Ok(TravelTimeMatrix(m))
}

pub fn generalized_costs(tt: &TravelTimeMatrix, choice: &ChoiceSpec, prices: Option<&PriceMatrix>) -> CostMatrix {
    let mut m = tt.0.clone();
    for v in &mut m.data {
        *v *= choice.vot / 3600.0;
    }
    if let Some(p) = prices {
        for (v, toll) in m.data.iter_mut().zip(&p.0.data) {
            if v.is_finite() {
                *v += toll;
            }
        }
    }
    CostMatrix(m)
}

/// Single-source label-setting shortest paths with edge weights `c[u, v]` over adjacent pairs.
pub fn dijkstra(costs: &CostMatrix, topology: &Topology, source: RegionId) -> Vec<f64> {
    let k = costs.k();
    let mut dist = vec![f64::INFINITY; k];
    let mut done = vec![false; k];
    dist[source.index()] = 0.0;
    for _ in 0..k {
        let Some(u) = (0..k)
            .filter(|&u| !done[u] && dist[u].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
        else {
            break;
        };
        done[u] = true;
        for &v in topology.neighbors(RegionId(u)) {
            let cand = dist[u] + costs.get(RegionId(u), v);
            if cand < dist[v.index()] {
                dist[v.index()] = cand;
            }
        }
    }
    dist
}

/// Distances between every ordered pair of regions, row-major.
pub fn all_pairs_shortest(costs: &CostMatrix, topology: &Topology) -> RegionMatrix {
    let k = costs.k();
    RegionMatrix {
        k,
        data: (0..k).flat_map(|s| dijkstra(costs, topology, RegionId(s))).collect(),
    }
}

/// Cost of the cheapest path from `i` to `j` whose first stop-over is `h`.
pub fn shortest_path_cost(costs: &CostMatrix, topology: &Topology, i: RegionId, h: RegionId, j: RegionId) -> f64 {
    if !topology.adjacent(i, h) {
        return f64::INFINITY;
    }
    costs.get(i, h) + dijkstra(costs, topology, h)[j.index()]
}

/// Logit choice probabilities with utility `-cost`. Infinite costs get probability zero.
pub fn mnl_split(costs: &[f64], mu: f64) -> Result<Vec<f64>> {
    let best = costs.iter().copied().filter(|c| c.is_finite()).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::Numerical("every route alternative has infinite cost".into()));
    }
    let w: Vec<f64> = costs
        .iter()
        .map(|&c| if c.is_finite() { (-mu * (c - best)).exp() } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Logit splits for every OD pair given a cost matrix.
pub fn splits_from_costs(spec: &NetworkSpec, costs: &CostMatrix, mu: f64) -> Result<SplitRates> {
    let dist = all_pairs_shortest(costs, spec.topology());
    let mut theta = vec![0.0; spec.triples().len()];
    for i in spec.region_ids() {
        for j in spec.region_ids().filter(|&j| j != i) {
            let range = spec.od_range(i, j);
            let alt: Vec<f64> = spec.triples()[range.clone()]
                .iter()
                .map(|t| costs.get(i, t.via) + dist.get(t.via, j))
                .collect();
            theta[range].copy_from_slice(&mnl_split(&alt, mu)?);
        }
    }
    Ok(SplitRates { theta })
}

/// Supplies tolls for the current step. `None` leaves the network untolled.
pub trait PriceProvider {
    fn prices(&mut self, spec: &NetworkSpec, state: &NetworkState, base_costs: &CostMatrix) -> Result<Option<PriceMatrix>>;
}

/// Per-step record of what users saw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    /// Untolled generalised cost.
    pub base: CostMatrix,
    pub prices: PriceMatrix,
}

/// User-equilibrium split provider, optionally with tolls.
pub struct QdueController<'a> {
    choice: ChoiceSpec,
    pricing: Option<&'a mut dyn PriceProvider>,
    pub costs: Vec<CostRecord>,
}

impl<'a> QdueController<'a> {
    pub fn new(choice: ChoiceSpec, pricing: Option<&'a mut dyn PriceProvider>) -> Self {
        Self {
            choice,
            pricing,
            costs: Vec::new(),
        }
    }
}

impl SplitProvider for QdueController<'_> {
    fn splits(&mut self, spec: &NetworkSpec, state: &NetworkState) -> Result<SplitRates> {
        let tt = travel_time_matrix(spec, state)?;
        let base = generalized_costs(&tt, &self.choice, None);
        let prices = match self.pricing.as_deref_mut() {
            Some(p) => p.prices(spec, state, &base)?,
            None => None,
        }
        .unwrap_or_else(|| PriceMatrix::zeros(spec.k()));
        let split = if state.step == 0 {
            SplitRates::uniform(spec)
        } else {
            let perceived = generalized_costs(&tt, &self.choice, Some(&prices));
            splits_from_costs(spec, &perceived, self.choice.mu)?
        };
        self.costs.push(CostRecord { base, prices });
        Ok(split)
    }
}

#[derive(Clone, Debug)]
pub struct QdueRun {
    pub trajectory: Trajectory,
    pub costs: Vec<CostRecord>,
}

pub fn run_qdue(
    spec: &NetworkSpec,
    demand: &DemandProfile,
    choice: &ChoiceSpec,
    horizon: usize,
    step_seconds: f64,
    pricing: Option<&mut dyn PriceProvider>,
) -> Result<QdueRun> {
    choice.validate("choice")?;
    let mut controller = QdueController::new(*choice, pricing);
    let trajectory = plant::simulate(spec, demand, &mut controller, horizon, step_seconds)?;
    Ok(QdueRun {
        trajectory,
        costs: controller.costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfd::MfdPolynomial;

    fn r1() -> RegionParams {
        RegionParams {
            area_km2: 1.5,
            n_detectors: 113,
            n_jam: 5000.0,
            avg_trip_length: 500.0,
            network_length: 30000.0,
            mfd: MfdPolynomial::new(2.10e-10, -2.25e-6, 6.06e-3, 5000.0).unwrap(),
            capacity_max: 4.5,
        }
    }

    fn border() -> RegionParams {
        RegionParams {
            area_km2: 5.0,
            n_detectors: 182,
            n_jam: 8000.0,
            avg_trip_length: 2000.0,
            network_length: 48000.0,
            mfd: MfdPolynomial::new(7.72e-11, -1.25e-6, 5.13e-3, 8000.0).unwrap(),
            capacity_max: 6.0,
        }
    }

    fn zurich() -> NetworkSpec {
        NetworkSpec::new(vec![r1(), border(), border(), border()], Topology::complete(4).unwrap()).unwrap()
    }

    #[test]
    fn travel_time_examples() {
        assert!((region_travel_time(&r1(), 1000.0).unwrap() - 248.76).abs() < 0.01);
        assert!((region_travel_time(&r1(), 0.0).unwrap() - 165.0165).abs() < 1e-3);
        assert!(region_travel_time(&r1(), -1.0).is_err());
        for p in [r1(), border()] {
            let mut prev = 0.0;
            let mut n = 0.0;
            while n < p.n_jam - 10.0 {
                let t = region_travel_time(&p, n).unwrap();
                assert!(t >= prev);
                prev = t;
                n += 10.0;
            }
        }
    }

    #[test]
    fn travel_time_matrix_example() {
        let spec = zurich();
        let mut st = NetworkState::empty(4, 20.0);
        st.set_n_ij(RegionId(0), RegionId(0), 1000.0);
        let tt = travel_time_matrix(&spec, &st).unwrap();
        assert!((tt.get(RegionId(0), RegionId(1)) - (248.76 + 194.93)).abs() < 0.02);
        assert_eq!(tt.get(RegionId(1), RegionId(2)), tt.get(RegionId(2), RegionId(1)));
        let empty = travel_time_matrix(&spec, &NetworkState::empty(4, 20.0)).unwrap();
        assert!((empty.get(RegionId(0), RegionId(1)) - (1.0 / 6.06e-3 + 1.0 / 5.13e-3)).abs() < 1e-9);
    }

    #[test]
    fn cost_examples() {
        let mut tt = RegionMatrix::filled(2, 3600.0);
        let c = generalized_costs(&TravelTimeMatrix(tt.clone()), &ChoiceSpec::default(), None);
        assert!((c.get(RegionId(0), RegionId(1)) - 27.0).abs() < 1e-12);
        let zero = generalized_costs(&TravelTimeMatrix(tt.clone()), &ChoiceSpec::default(), Some(&PriceMatrix::zeros(2)));
        assert_eq!(c, zero);
        tt.set(RegionId(0), RegionId(1), 443.8);
        let mut p = PriceMatrix::zeros(2);
        p.0.set(RegionId(0), RegionId(1), 1.5);
        let c = generalized_costs(&TravelTimeMatrix(tt), &ChoiceSpec::default(), Some(&p));
        assert!((c.get(RegionId(0), RegionId(1)) - 4.8285).abs() < 1e-4);
    }

    #[test]
    fn complete_graph_alternatives() {
        let rows: Vec<Vec<f64>> = vec![
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1.0, 0.0, 1.5, 0.5],
            vec![2.0, 1.5, 0.0, 4.0],
            vec![3.0, 0.5, 4.0, 0.0],
        ];
        let c = CostMatrix(RegionMatrix::from_rows(&rows).unwrap());
        let t = Topology::complete(4).unwrap();
        let (a, b, d) = (RegionId(0), RegionId(1), RegionId(3));
        assert_eq!(shortest_path_cost(&c, &t, a, d, d), 3.0);
        assert_eq!(shortest_path_cost(&c, &t, a, b, d), 1.5);
    }

    #[test]
    fn mnl_examples() {
        let s = mnl_split(&[10.0, 10.0, 10.0], 1.0).unwrap();
        assert!(s.iter().all(|&v| v == 1.0 / 3.0));
        let s = mnl_split(&[1.0, 2.0, 3.0], 1.0).unwrap();
        for (a, b) in s.iter().zip([0.6652, 0.2447, 0.0900]) {
            assert!((a - b).abs() < 1e-4);
        }
        let s = mnl_split(&[1.0, 50.0, 300.0], 1e-12).unwrap();
        assert!(s.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-9));
        assert!(mnl_split(&[f64::INFINITY; 2], 1.0).is_err());
        assert_eq!(mnl_split(&[1.0, f64::INFINITY], 1.0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn prohibitive_price_kills_alternative() {
        struct Wall;
        impl PriceProvider for Wall {
            fn prices(&mut self, spec: &NetworkSpec, _: &NetworkState, _: &CostMatrix) -> Result<Option<PriceMatrix>> {
                let mut p = PriceMatrix::zeros(spec.k());
                p.0.set(RegionId(0), RegionId(1), 1e6);
                Ok(Some(p))
            }
        }
        let spec = zurich();
        let mut wall = Wall;
        let run = run_qdue(&spec, &DemandProfile::new(4), &ChoiceSpec::default(), 3, 20.0, Some(&mut wall)).unwrap();
        let split = &run.trajectory.steps[2].split;
        for (idx, t) in spec.triples().iter().enumerate() {
            if t.origin == RegionId(0) && t.via == RegionId(1) {
                assert!(split.get(idx) < 1e-12);
            }
        }
    }

    #[test]
    fn zero_demand_is_stationary_and_symmetric() {
        let spec = zurich();
        let run = run_qdue(&spec, &DemandProfile::new(4), &ChoiceSpec::default(), 5, 20.0, None).unwrap();
        assert_eq!(run.trajectory.steps[0].split, SplitRates::uniform(&spec));
        let later = &run.trajectory.steps[1].split;
        for s in &run.trajectory.steps[2..] {
            assert_eq!(&s.split, later);
        }
        // Border regions are interchangeable.
        let theta = |o: usize, v: usize, d: usize| {
            later.get(spec.triple_index(crate::network::Triple {
                origin: RegionId(o),
                via: RegionId(v),
                dest: RegionId(d),
            }).unwrap())
        };
        assert_eq!(theta(1, 2, 3), theta(2, 1, 3));
        assert_eq!(theta(1, 0, 3), theta(2, 0, 3));
    }
}

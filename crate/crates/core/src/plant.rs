//! Discrete-time reservoir dynamics of the multi-region network.
//!
//! The state holds `n[I][J]`, the vehicles currently in region `I` that are
//! bound for region `J`. Each step applies forward Euler to the accumulation
//! balance: demand enters, internal trips end at the MFD rate and transfer
//! flows move vehicles to the chosen neighbour, capped by the neighbour's
//! receiving capacity at the start of the step.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::demand::DemandProfile;
use crate::error::{Error, Result};
use crate::network::{NetworkSpec, RegionId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    k: usize,
    n: Vec<f64>,
    pub step: usize,
    pub step_seconds: f64,
}

impl NetworkState {
    pub fn empty(k: usize, step_seconds: f64) -> Self {
        Self {
            k,
            n: vec![0.0; k * k],
            step: 0,
            step_seconds,
        }
    }

    pub fn from_cells(k: usize, n: Vec<f64>, step: usize, step_seconds: f64) -> Result<Self> {
        if n.len() != k * k {
            return Err(Error::Dimension { expected: k * k, got: n.len() });
        }
        if n.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Numerical("accumulations must be finite and >= 0".into()));
        }
        Ok(Self { k, n, step, step_seconds })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.step_seconds
    }

    #[inline]
    pub fn n_ij(&self, i: RegionId, j: RegionId) -> f64 {
        self.n[i.index() * self.k + j.index()]
    }

    pub fn set_n_ij(&mut self, i: RegionId, j: RegionId, v: f64) {
        self.n[i.index() * self.k + j.index()] = v;
    }

    pub fn cells(&self) -> &[f64] {
        &self.n
    }

    /// Aggregate accumulation `N_I`.
    pub fn region_total(&self, i: RegionId) -> f64 {
        self.n[i.index() * self.k..(i.index() + 1) * self.k].iter().sum()
    }

    pub fn totals(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.region_total(RegionId(i))).collect()
    }

    pub fn stored(&self) -> f64 {
        self.n.iter().sum()
    }
}

/// Route-choice fractions over [`NetworkSpec::triples`]; internal trips are implicit (`θ_III = 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRates {
    pub theta: Vec<f64>,
}

impl SplitRates {
    /// Equal probability over the allowed stop-overs of every OD pair.
    pub fn uniform(spec: &NetworkSpec) -> Self {
        let mut theta = vec![0.0; spec.triples().len()];
        for i in spec.region_ids() {
            for j in spec.region_ids().filter(|&j| j != i) {
                let r = spec.od_range(i, j);
                let share = 1.0 / r.len() as f64;
                theta[r].iter_mut().for_each(|v| *v = share);
            }
        }
        Self { theta }
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.theta[idx]
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.theta.len() != spec.triples().len() {
            return Err(Error::Dimension {
                expected: spec.triples().len(),
                got: self.theta.len(),
            });
        }
        for i in spec.region_ids() {
            for j in spec.region_ids().filter(|&j| j != i) {
                let r = spec.od_range(i, j);
                let slice = &self.theta[r];
                if slice.iter().any(|v| !(-1e-12..=1.0 + 1e-12).contains(v)) {
                    return Err(Error::Numerical(format!("split for ({i}, {j}) outside [0, 1]")));
                }
                let sum: f64 = slice.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Numerical(format!("splits for ({i}, {j}) sum to {sum}")));
                }
            }
        }
        Ok(())
    }
}

/// Realised flows of one step [veh/s].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub m_ii: Vec<f64>,
    /// Transfer flows aligned with [`NetworkSpec::triples`].
    pub m_ihj: Vec<f64>,
    /// Whether the receiving capacity limited the transfer.
    pub clamped: Vec<bool>,
    /// Regions whose accumulation exceeded jam after the step.
    pub jam_violations: Vec<RegionId>,
}

impl FlowRecord {
    /// Transfer flow `M_IH` summed over destinations, in [`NetworkSpec::border_pairs`] order.
    pub fn border_flows(&self, spec: &NetworkSpec) -> Vec<f64> {
        let k = spec.k();
        let mut m = vec![0.0; k * k];
        for (t, v) in spec.triples().iter().zip(&self.m_ihj) {
            m[t.origin.index() * k + t.via.index()] += v;
        }
        spec.border_pairs()
            .iter()
            .map(|(i, h)| m[i.index() * k + h.index()])
            .collect()
    }
}

fn region_outflow(spec: &NetworkSpec, i: RegionId, n_i: f64) -> f64 {
    spec.region(i).mfd.outflow_saturating(n_i)
}

/// Internal trip completion rate `M_II = N_II / N_I * G(N_I)`.
pub fn internal_flow(spec: &NetworkSpec, state: &NetworkState, i: RegionId) -> f64 {
    let n_i = state.region_total(i);
    if n_i <= 0.0 {
        return 0.0;
    }
    state.n_ij(i, i) / n_i * region_outflow(spec, i, n_i)
}

/// Capacity-limited transfer flow for triple `idx`; the flag reports whether the cap bound.
pub fn transfer_flow(spec: &NetworkSpec, state: &NetworkState, split: &SplitRates, idx: usize) -> (f64, bool) {
    let t = spec.triples()[idx];
    let n_i = state.region_total(t.origin);
    if n_i <= 0.0 {
        return (0.0, false);
    }
    let sending = split.get(idx) * state.n_ij(t.origin, t.dest) / n_i * region_outflow(spec, t.origin, n_i);
    let n_h = state.region_total(t.via).clamp(0.0, spec.region(t.via).n_jam);
    let cap = spec
        .boundary_capacity(t.via, n_h)
        .expect("accumulation clamped into domain");
    if cap < sending {
        (cap, true)
    } else {
        (sending, false)
    }
}

/// Advances the state by one step of `state.step_seconds`.
pub fn step(
    spec: &NetworkSpec,
    state: &NetworkState,
    demand: &DemandProfile,
    split: &SplitRates,
) -> Result<(NetworkState, FlowRecord)> {
    let dt = state.step_seconds;
    if !(dt > 0.0) {
        return Err(Error::config("step_seconds", "must be positive"));
    }
    split.validate(spec)?;
    let k = spec.k();

    let mut m_ii: Vec<f64> = spec.region_ids().map(|i| internal_flow(spec, state, i)).collect();
    let mut m_ihj = Vec::with_capacity(spec.triples().len());
    let mut clamped = Vec::with_capacity(spec.triples().len());
    for idx in 0..spec.triples().len() {
        let (m, c) = transfer_flow(spec, state, split, idx);
        m_ihj.push(m);
        clamped.push(c);
    }

    // Rescale any cell whose outflow over the step would overdraw it.
    for i in spec.region_ids() {
        let n = state.n_ij(i, i);
        if m_ii[i.index()] * dt > n {
            m_ii[i.index()] = n / dt;
        }
        for j in spec.region_ids().filter(|&j| j != i) {
            let r = spec.od_range(i, j);
            let out: f64 = m_ihj[r.clone()].iter().sum();
            let n = state.n_ij(i, j);
            if out * dt > n && out > 0.0 {
                let s = n / (out * dt);
                m_ihj[r].iter_mut().for_each(|m| *m *= s);
            }
        }
    }

    let t0 = state.time();
    let t1 = t0 + dt;
    let mut next = state.clone();
    next.step += 1;
    for i in spec.region_ids() {
        for j in spec.region_ids() {
            let v = demand.od_volume(i, j, t0, t1);
            next.n[i.index() * k + j.index()] += v;
        }
        next.n[i.index() * k + i.index()] -= dt * m_ii[i.index()];
    }
    for (t, m) in spec.triples().iter().zip(&m_ihj) {
        next.n[t.origin.index() * k + t.dest.index()] -= dt * m;
        next.n[t.via.index() * k + t.dest.index()] += dt * m;
    }
    for v in next.n.iter_mut() {
        // Only round-off can push a rescaled cell below zero.
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    let jam_violations: Vec<RegionId> = spec
        .region_ids()
        .filter(|&i| next.region_total(i) > spec.region(i).n_jam)
        .collect();
    for i in &jam_violations {
        warn!(
            "step {}: region {i} above jam accumulation ({:.1} > {})",
            next.step,
            next.region_total(*i),
            spec.region(*i).n_jam
        );
    }

    Ok((
        next,
        FlowRecord {
            m_ii,
            m_ihj,
            clamped,
            jam_violations,
        },
    ))
}

/// Supplies the splitting rates applied at each step.
pub trait SplitProvider {
    fn splits(&mut self, spec: &NetworkSpec, state: &NetworkState) -> Result<SplitRates>;
}

/// Fixed splits for every step.
pub struct ConstantSplits(pub SplitRates);

impl SplitProvider for ConstantSplits {
    fn splits(&mut self, _: &NetworkSpec, _: &NetworkState) -> Result<SplitRates> {
        Ok(self.0.clone())
    }
}

/// Pre-computed per-step splits; the last entry is held if the schedule is short.
pub struct ScheduledSplits(pub Vec<SplitRates>);

impl SplitProvider for ScheduledSplits {
    fn splits(&mut self, _: &NetworkSpec, state: &NetworkState) -> Result<SplitRates> {
        self.0
            .get(state.step)
            .or_else(|| self.0.last())
            .cloned()
            .ok_or_else(|| Error::Numerical("empty split schedule".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// State at the start of the step.
    pub state: NetworkState,
    pub split: SplitRates,
    pub flows: FlowRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_state: NetworkState,
    /// Demand volume injected over the horizon.
    pub injected: f64,
}

impl Trajectory {
    pub fn step_seconds(&self) -> f64 {
        self.final_state.step_seconds
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Vehicles that completed their trip.
    pub fn trips_ended(&self) -> f64 {
        let dt = self.step_seconds();
        self.steps.iter().map(|s| s.flows.m_ii.iter().sum::<f64>() * dt).sum()
    }

    /// `(injected - ended - stored) / injected`; zero for an exact balance.
    pub fn conservation_error(&self) -> f64 {
        let residual = self.injected - self.trips_ended() - self.final_state.stored();
        if self.injected > 0.0 {
            residual.abs() / self.injected
        } else {
            residual.abs()
        }
    }
}

/// Runs the plant for `horizon` steps from an empty network.
pub fn simulate(
    spec: &NetworkSpec,
    demand: &DemandProfile,
    provider: &mut dyn SplitProvider,
    horizon: usize,
    step_seconds: f64,
) -> Result<Trajectory> {
    simulate_from(spec, demand, provider, NetworkState::empty(spec.k(), step_seconds), horizon)
}

pub fn simulate_from(
    spec: &NetworkSpec,
    demand: &DemandProfile,
    provider: &mut dyn SplitProvider,
    initial: NetworkState,
    horizon: usize,
) -> Result<Trajectory> {
    let mut state = initial;
    let mut steps = Vec::with_capacity(horizon);
    let mut injected = 0.0;
    for _ in 0..horizon {
        let split = provider.splits(spec, &state)?;
        let t0 = state.time();
        injected += spec
            .region_ids()
            .map(|i| demand.origin_volume(i, t0, t0 + state.step_seconds))
            .sum::<f64>();
        let (next, flows) = step(spec, &state, demand, &split)?;
        steps.push(TrajectoryStep { state, split, flows });
        state = next;
    }
    Ok(Trajectory {
        steps,
        final_state: state,
        injected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::Trapezoid;
    use crate::mfd::MfdPolynomial;
    use crate::network::{RegionParams, Topology};

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

    fn two_region() -> NetworkSpec {
        NetworkSpec::new(vec![r1(), r1()], Topology::complete(2).unwrap()).unwrap()
    }

    fn constant(q: f64, until: f64) -> Trapezoid {
        Trapezoid { t_start: 0.0, t_rise: 0.0, t_const: until, t_fall: 0.0, magnitude: q }
    }

    #[test]
    fn internal_flow_examples() {
        let spec = two_region();
        let mut s = NetworkState::empty(2, 20.0);
        assert_eq!(internal_flow(&spec, &s, RegionId(0)), 0.0);
        s.set_n_ij(RegionId(0), RegionId(0), 1000.0);
        assert!((internal_flow(&spec, &s, RegionId(0)) - 4.02).abs() < 1e-9);
        s.set_n_ij(RegionId(0), RegionId(0), 500.0);
        s.set_n_ij(RegionId(0), RegionId(1), 500.0);
        assert!((internal_flow(&spec, &s, RegionId(0)) - 2.01).abs() < 1e-9);
    }

    #[test]
    fn transfer_flow_examples() {
        let spec = two_region();
        let mut s = NetworkState::empty(2, 20.0);
        s.set_n_ij(RegionId(0), RegionId(1), 1000.0);
        let split = SplitRates::uniform(&spec);
        let (m, c) = transfer_flow(&spec, &s, &split, 0);
        assert!((m - 4.02).abs() < 1e-9 && !c);
        let zero = SplitRates { theta: vec![0.0; split.theta.len()] };
        assert_eq!(transfer_flow(&spec, &s, &zero, 0).0, 0.0);
        s.set_n_ij(RegionId(1), RegionId(1), 5000.0);
        let (m, c) = transfer_flow(&spec, &s, &split, 0);
        assert_eq!(m, 0.0);
        assert!(c);
    }

    #[test]
    fn empty_state_is_fixed_point() {
        let spec = two_region();
        let s = NetworkState::empty(2, 20.0);
        let (next, flows) = step(&spec, &s, &DemandProfile::new(2), &SplitRates::uniform(&spec)).unwrap();
        assert_eq!(next.cells(), s.cells());
        assert!(flows.m_ii.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn single_step_balance() {
        let spec = two_region();
        let mut d = DemandProfile::new(2);
        d.add(RegionId(0), RegionId(0), constant(1.0, 1000.0)).unwrap();
        let s = NetworkState::empty(2, 20.0);
        let (next, flows) = step(&spec, &s, &d, &SplitRates::uniform(&spec)).unwrap();
        let dn = next.n_ij(RegionId(0), RegionId(0));
        assert!(dn <= 20.0);
        assert!((20.0 - flows.m_ii[0] * 20.0 - dn).abs() < 1e-12);
    }

    #[test]
    fn transfer_arrives_in_neighbour_within_one_step() {
        let spec = two_region();
        let mut s = NetworkState::empty(2, 20.0);
        s.set_n_ij(RegionId(0), RegionId(1), 1000.0);
        let (next, flows) = step(&spec, &s, &DemandProfile::new(2), &SplitRates::uniform(&spec)).unwrap();
        // Triple (1, 2, 2) moves 4.02 veh/s for 20 s into cell (2, 2).
        let moved = 4.02 * 20.0;
        assert!((flows.m_ihj[0] - 4.02).abs() < 1e-9);
        assert!((next.n_ij(RegionId(0), RegionId(1)) - (1000.0 - moved)).abs() < 1e-9);
        assert!((next.n_ij(RegionId(1), RegionId(1)) - moved).abs() < 1e-9);
    }

    #[test]
    fn overdraw_is_rescaled() {
        let spec = two_region();
        let mut s = NetworkState::empty(2, 1000.0);
        s.set_n_ij(RegionId(0), RegionId(0), 100.0);
        let (next, flows) = step(&spec, &s, &DemandProfile::new(2), &SplitRates::uniform(&spec)).unwrap();
        assert_eq!(next.n_ij(RegionId(0), RegionId(0)), 0.0);
        assert!((flows.m_ii[0] * 1000.0 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_demand_stays_empty() {
        let spec = two_region();
        let traj = simulate(
            &spec,
            &DemandProfile::new(2),
            &mut ConstantSplits(SplitRates::uniform(&spec)),
            50,
            20.0,
        )
        .unwrap();
        assert_eq!(traj.len(), 50);
        assert!(traj.steps.iter().all(|s| s.state.stored() == 0.0));
        assert_eq!(traj.final_state.stored(), 0.0);
    }

    #[test]
    fn jam_violation_is_reported() {
        let spec = two_region();
        let mut d = DemandProfile::new(2);
        d.add(RegionId(0), RegionId(0), constant(400.0, 1000.0)).unwrap();
        let s = NetworkState::empty(2, 20.0);
        let (_, flows) = step(&spec, &s, &d, &SplitRates::uniform(&spec)).unwrap();
        assert_eq!(flows.jam_violations, vec![RegionId(0)]);
    }

    #[test]
    fn rejects_invalid_split() {
        let spec = two_region();
        let bad = SplitRates { theta: vec![0.5, 0.5] };
        let s = NetworkState::empty(2, 20.0);
        assert!(step(&spec, &s, &DemandProfile::new(2), &bad).is_err());
    }
}

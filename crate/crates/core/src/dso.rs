//! Dynamic system optimum by linear rolling-horizon optimisation.
//!
//! Every control cycle the destination shares `α` are frozen from the plant
//! state, an LP maximising network throughput over `n_p` steps is solved
//! against the piecewise-affine MFDs, and the first-step transfer flows are
//! turned back into splitting rates that the plant applies for `n_c` steps.

use serde::{Deserialize, Serialize};

use crate::demand::DemandProfile;
use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpSolution, LpStatus, Relation};
use crate::mfd::PwaMfd;
use crate::network::{NetworkSpec, RegionId};
use crate::plant::{self, NetworkState, SplitProvider, SplitRates, Trajectory};

/// Destination shares of the accumulation, held constant over one horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams {
    k: usize,
    pub alpha_ii: Vec<f64>,
    /// Row-major `k x k`; the diagonal is unused.
    pub alpha_ij: Vec<f64>,
}

impl AlphaParams {
    pub fn ii(&self, i: RegionId) -> f64 {
        self.alpha_ii[i.index()]
    }

    pub fn ij(&self, i: RegionId, j: RegionId) -> f64 {
        self.alpha_ij[i.index() * self.k + j.index()]
    }
}

pub fn compute_alphas(state: &NetworkState) -> AlphaParams {
    let k = state.k();
    let mut alpha_ii = vec![0.0; k];
    let mut alpha_ij = vec![0.0; k * k];
    for i in (0..k).map(RegionId) {
        let n_i = state.region_total(i);
        if n_i <= 0.0 {
            continue;
        }
        for j in (0..k).map(RegionId) {
            let a = state.n_ij(i, j) / n_i;
            if i == j {
                alpha_ii[i.index()] = a;
            } else {
                alpha_ij[i.index() * k + j.index()] = a;
            }
        }
    }
    AlphaParams { k, alpha_ii, alpha_ij }
}

/// What the LP counts as throughput.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Internal completions plus every border crossing.
    AllTransfers,
    /// Internal completions plus transfers that enter the destination region.
    #[default]
    Deliveries,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrhoConfig {
    /// Prediction horizon in LP steps.
    pub n_p: usize,
    /// Plant steps between re-solves.
    pub n_c: usize,
    /// Seconds per LP step.
    pub t_c: f64,
    /// Largest change of a splitting rate between cycles.
    pub sigma: f64,
    pub objective: Objective,
}

impl Default for LrhoConfig {
    fn default() -> Self {
        Self {
            n_p: 3,
            n_c: 4,
            t_c: 20.0,
            sigma: 0.2,
            objective: Objective::default(),
        }
    }
}

impl LrhoConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        if self.n_p < 1 {
            return Err(Error::config(format!("{path}.n_p"), "must be >= 1"));
        }
        if self.n_c < 1 {
            return Err(Error::config(format!("{path}.n_c"), "must be >= 1"));
        }
        if !(self.t_c > 0.0 && self.t_c.is_finite()) {
            return Err(Error::config(format!("{path}.t_c"), "must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::config(format!("{path}.sigma"), "must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BuildOptions {
    /// Drop MFD line rows that cannot bind on the reachable accumulation range.
    pub prune_redundant_lines: bool,
}

/// Column positions of the decision variables.
#[derive(Clone, Debug, PartialEq)]
pub struct VarIndex {
    n_p: usize,
    k: usize,
    triples: usize,
    /// `N_I(s + 1)`, indexed `s * k + i`.
    pub n: Vec<usize>,
    /// `f_II(s)`, indexed `s * k + i`.
    pub f_ii: Vec<usize>,
    /// `f_IH(s)` for adjacent pairs, indexed `s * k * k + i * k + h`.
    pub f_ih: Vec<Option<usize>>,
    /// `f_IHJ(s)`, indexed `s * triples + t`.
    pub f_ihj: Vec<usize>,
}

impl VarIndex {
    pub fn n(&self, s: usize, i: RegionId) -> usize {
        self.n[s * self.k + i.index()]
    }

    pub fn f_ii(&self, s: usize, i: RegionId) -> usize {
        self.f_ii[s * self.k + i.index()]
    }

    pub fn f_ih(&self, s: usize, i: RegionId, h: RegionId) -> Option<usize> {
        self.f_ih[s * self.k * self.k + i.index() * self.k + h.index()]
    }

    pub fn f_ihj(&self, s: usize, t: usize) -> usize {
        self.f_ihj[s * self.triples + t]
    }

    pub fn horizon(&self) -> usize {
        self.n_p
    }
}

#[derive(Clone, Debug)]
pub struct DsoProblem {
    pub lp: LinearProgram,
    pub index: VarIndex,
}

/// Average demand rate of each origin over the LP steps.
fn forecast(spec: &NetworkSpec, demand: &DemandProfile, t0: f64, config: &LrhoConfig) -> Vec<Vec<f64>> {
    (0..config.n_p)
        .map(|s| {
            let a = t0 + s as f64 * config.t_c;
            spec.region_ids()
                .map(|i| demand.origin_volume(i, a, a + config.t_c) / config.t_c)
                .collect()
        })
        .collect()
}

/// Bounds on `N_I(s)` implied by the dynamics alone, used for presolve.
fn reachable_ranges(
    spec: &NetworkSpec,
    state: &NetworkState,
    pwa: &[PwaMfd],
    q: &[Vec<f64>],
    config: &LrhoConfig,
) -> Vec<Vec<(f64, f64)>> {
    let k = spec.k();
    let mut ranges = vec![state.totals().into_iter().map(|n| (n, n)).collect::<Vec<_>>()];
    for s in 0..config.n_p {
        let cur = &ranges[s];
        let peak: Vec<f64> = (0..k).map(|i| pwa[i].max_on(cur[i].0, cur[i].1).max(0.0)).collect();
        let next = (0..k)
            .map(|i| {
                let id = RegionId(i);
                let inflow: f64 = spec.topology().neighbors(id).iter().map(|h| peak[h.index()]).sum();
                let lo = (cur[i].0 - config.t_c * peak[i]).max(0.0);
                let hi = (cur[i].1 + config.t_c * (q[s][i] + inflow)).min(spec.region(id).n_jam);
                (lo, hi.max(lo))
            })
            .collect();
        ranges.push(next);
    }
    ranges
}

/// Assembles the throughput-maximising LP for one control cycle.
pub fn build_lp(
    spec: &NetworkSpec,
    state: &NetworkState,
    alphas: &AlphaParams,
    pwa: &[PwaMfd],
    demand: &DemandProfile,
    config: &LrhoConfig,
    options: BuildOptions,
) -> Result<DsoProblem> {
    let k = spec.k();
    if pwa.len() != k {
        return Err(Error::config("pwa", format!("expected {k} approximations, got {}", pwa.len())));
    }
    let n_p = config.n_p;
    let triples = spec.triples();
    let tc = config.t_c;
    let (pair_weight, delivery_weight) = match config.objective {
        Objective::AllTransfers => (tc, 0.0),
        Objective::Deliveries => (0.0, tc),
    };
    let q = forecast(spec, demand, state.time(), config);
    let n0 = state.totals();
    let ranges = options
        .prune_redundant_lines
        .then(|| reachable_ranges(spec, state, pwa, &q, config));

    let mut lp = LinearProgram::default();
    let mut n = Vec::with_capacity(n_p * k);
    let mut f_ii = Vec::with_capacity(n_p * k);
    let mut f_ih = vec![None; n_p * k * k];
    let mut f_ihj = Vec::with_capacity(n_p * triples.len());
    for s in 0..n_p {
        for i in spec.region_ids() {
            n.push(lp.add_var(format!("N_{i}_{}", s + 1), 0.0));
        }
        for i in spec.region_ids() {
            f_ii.push(lp.add_var(format!("f_{i}{i}_{s}"), tc));
        }
        for &(i, h) in spec.border_pairs() {
            f_ih[s * k * k + i.index() * k + h.index()] = Some(lp.add_var(format!("f_{i}{h}_{s}"), pair_weight));
        }
        for t in triples {
            let w = if t.via == t.dest { delivery_weight } else { 0.0 };
            f_ihj.push(lp.add_var(format!("f_{}{}{}_{s}", t.origin, t.via, t.dest), w));
        }
    }
    let index = VarIndex {
        n_p,
        k,
        triples: triples.len(),
        n,
        f_ii,
        f_ih,
        f_ihj,
    };

    for s in 0..n_p {
        for i in spec.region_ids() {
            // N(s+1) - N(s) + T_c (f_II + sum f_IH - sum f_HI) = T_c Q
            let mut row = vec![(index.n(s, i), 1.0), (index.f_ii(s, i), tc)];
            let mut rhs = tc * q[s][i.index()];
            if s == 0 {
                rhs += n0[i.index()];
            } else {
                row.push((index.n(s - 1, i), -1.0));
            }
            for &h in spec.topology().neighbors(i) {
                row.push((index.f_ih(s, i, h).expect("adjacent pair"), tc));
                row.push((index.f_ih(s, h, i).expect("adjacent pair"), -tc));
            }
            lp.add_constraint(format!("balance_{i}_{s}"), row, Relation::Eq, rhs);
            lp.add_constraint(
                format!("jam_{i}_{s}"),
                vec![(index.n(s, i), 1.0)],
                Relation::Le,
                spec.region(i).n_jam,
            );
        }
        for &(i, h) in spec.border_pairs() {
            let mut row = vec![(index.f_ih(s, i, h).expect("adjacent pair"), -1.0)];
            for (t_idx, t) in triples.iter().enumerate() {
                if t.origin == i && t.via == h {
                    row.push((index.f_ihj(s, t_idx), 1.0));
                }
            }
            lp.add_constraint(format!("couple_{i}{h}_{s}"), row, Relation::Eq, 0.0);
        }
        for i in spec.region_ids() {
            let lines = &pwa[i.index()];
            let active: Vec<usize> = match &ranges {
                Some(r) => lines.active_lines(r[s][i.index()].0, r[s][i.index()].1),
                None => (0..lines.lines().len()).collect(),
            };
            let mut caps: Vec<(String, f64, Vec<(usize, f64)>)> = vec![(
                format!("cap_{i}{i}"),
                alphas.ii(i),
                vec![(index.f_ii(s, i), 1.0)],
            )];
            for j in spec.region_ids().filter(|&j| j != i) {
                let cols = spec.od_range(i, j).map(|t| (index.f_ihj(s, t), 1.0)).collect();
                caps.push((format!("cap_{i}{j}"), alphas.ij(i, j), cols));
            }
            for (name, alpha, cols) in caps {
                if s == 0 {
                    // N(0) is data, so every line collapses into one bound.
                    let bound = alpha * lines.eval(n0[i.index()]).max(0.0);
                    lp.add_constraint(format!("{name}_{s}"), cols, Relation::Le, bound);
                    continue;
                }
                if options.prune_redundant_lines && alpha == 0.0 {
                    lp.add_constraint(format!("{name}_{s}"), cols, Relation::Le, 0.0);
                    continue;
                }
                for &l in &active {
                    let line = lines.lines()[l];
                    // sum f - alpha * slope * N(s) <= alpha * intercept
                    let mut row = cols.clone();
                    row.push((index.n(s - 1, i), -alpha * line.slope));
                    lp.add_constraint(format!("{name}_{s}_l{l}"), row, Relation::Le, alpha * line.intercept);
                }
            }
        }
    }
    Ok(DsoProblem { lp, index })
}

/// Euclidean projection of `raw` onto `{x : sum x = 1, lo <= x <= hi}`.
fn project_band(raw: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let total = |lambda: f64| -> f64 {
        raw.iter()
            .zip(lo.iter().zip(hi))
            .map(|(r, (l, h))| (r + lambda).clamp(*l, *h))
            .sum()
    };
    let (mut a, mut b) = (-2.0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if total(mid) < 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let lambda = 0.5 * (a + b);
    let mut x: Vec<f64> = raw
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(r, (l, h))| (r + lambda).clamp(*l, *h))
        .collect();
    // Absorb the bisection residue in the entry with the most room.
    let residue = 1.0 - x.iter().sum::<f64>();
    if residue != 0.0 {
        let idx = (0..x.len())
            .max_by(|&p, &q| {
                let room = |i: usize| if residue > 0.0 { hi[i] - x[i] } else { x[i] - lo[i] };
                room(p).total_cmp(&room(q))
            })
            .expect("non-empty");
        x[idx] += residue;
    }
    x
}

/// Turns first-step transfer flows into splitting rates, limited to `±σ` around `prev`.
pub fn recover_split_rates(
    spec: &NetworkSpec,
    problem: &DsoProblem,
    solution: &LpSolution,
    alphas: &AlphaParams,
    pwa: &[PwaMfd],
    state: &NetworkState,
    prev: &SplitRates,
    config: &LrhoConfig,
) -> SplitRates {
    let mut theta = prev.theta.clone();
    for i in spec.region_ids() {
        let g = pwa[i.index()].eval(state.region_total(i)).max(0.0);
        for j in spec.region_ids().filter(|&j| j != i) {
            let range = spec.od_range(i, j);
            let denom = alphas.ij(i, j) * g;
            let flows: Vec<f64> = range
                .clone()
                .map(|t| solution.x[problem.index.f_ihj(0, t)].max(0.0))
                .collect();
            let sum: f64 = flows.iter().sum();
            if denom < 1e-9 || sum <= 1e-12 * denom {
                continue;
            }
            // theta = f / (alpha G), renormalised over the stop-overs.
            let raw: Vec<f64> = flows.iter().map(|f| f / sum).collect();
            let p = &prev.theta[range.clone()];
            let lo: Vec<f64> = p.iter().map(|v| (v - config.sigma).max(0.0)).collect();
            let hi: Vec<f64> = p.iter().map(|v| (v + config.sigma).min(1.0)).collect();
            theta[range].copy_from_slice(&project_band(&raw, &lo, &hi));
        }
    }
    SplitRates { theta }
}

/// One re-solve of the rolling horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub step: usize,
    pub objective: f64,
    pub theta: SplitRates,
}

#[derive(Clone, Debug)]
pub struct DsoRun {
    pub trajectory: Trajectory,
    pub cycles: Vec<CycleRecord>,
}

/// Split provider that re-optimises every `n_c` plant steps.
pub struct LrhoController<'a> {
    demand: &'a DemandProfile,
    pwa: &'a [PwaMfd],
    config: LrhoConfig,
    current: SplitRates,
    pub cycles: Vec<CycleRecord>,
    pub last_problem: Option<DsoProblem>,
}

impl<'a> LrhoController<'a> {
    pub fn new(spec: &NetworkSpec, demand: &'a DemandProfile, pwa: &'a [PwaMfd], config: LrhoConfig) -> Self {
        Self {
            demand,
            pwa,
            config,
            current: SplitRates::uniform(spec),
            cycles: Vec::new(),
            last_problem: None,
        }
    }
}

impl SplitProvider for LrhoController<'_> {
    fn splits(&mut self, spec: &NetworkSpec, state: &NetworkState) -> Result<SplitRates> {
        if state.step % self.config.n_c == 0 {
            let cycle = self.cycles.len();
            let alphas = compute_alphas(state);
            let options = BuildOptions { prune_redundant_lines: true };
            let problem = build_lp(spec, state, &alphas, self.pwa, self.demand, &self.config, options)?;
            let solution = lp::solve(&problem.lp)?;
            if solution.status != LpStatus::Optimal {
                return Err(Error::LpFailed {
                    cycle,
                    status: solution.status.to_string(),
                });
            }
            self.current =
                recover_split_rates(spec, &problem, &solution, &alphas, self.pwa, state, &self.current, &self.config);
            self.cycles.push(CycleRecord {
                cycle,
                step: state.step,
                objective: solution.objective,
                theta: self.current.clone(),
            });
            self.last_problem = Some(problem);
        }
        Ok(self.current.clone())
    }
}

/// Runs the plant under rolling-horizon optimal splits from an empty network.
pub fn run_lrho(
    spec: &NetworkSpec,
    demand: &DemandProfile,
    pwa: &[PwaMfd],
    config: &LrhoConfig,
    horizon: usize,
    step_seconds: f64,
) -> Result<DsoRun> {
    config.validate("lrho")?;
    let mut controller = LrhoController::new(spec, demand, pwa, *config);
    let trajectory = plant::simulate(spec, demand, &mut controller, horizon, step_seconds)?;
    Ok(DsoRun {
        trajectory,
        cycles: controller.cycles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::Trapezoid;
    use crate::mfd::{pwa_approximate, MfdPolynomial};
    use crate::network::{RegionParams, Topology};

    fn region(n_jam: f64) -> RegionParams {
        RegionParams {
            area_km2: 1.0,
            n_detectors: 1,
            n_jam,
            avg_trip_length: 1000.0,
            network_length: 1000.0,
            mfd: MfdPolynomial::new(0.0, -1e-6, 4e-3, n_jam).unwrap(),
            capacity_max: 3.0,
        }
    }

    fn two_regions() -> (NetworkSpec, Vec<PwaMfd>) {
        let spec = NetworkSpec::new(vec![region(4000.0), region(4000.0)], Topology::complete(2).unwrap()).unwrap();
        let pwa = spec.regions.iter().map(|r| pwa_approximate(&r.mfd, 8).unwrap()).collect();
        (spec, pwa)
    }

    fn one_step() -> LrhoConfig {
        LrhoConfig { n_p: 1, ..LrhoConfig::default() }
    }

    #[test]
    fn alphas_examples() {
        let mut st = NetworkState::empty(2, 20.0);
        st.set_n_ij(RegionId(0), RegionId(0), 50.0);
        st.set_n_ij(RegionId(0), RegionId(1), 50.0);
        st.set_n_ij(RegionId(1), RegionId(0), 70.0);
        let a = compute_alphas(&st);
        assert_eq!(a.ii(RegionId(0)), 0.5);
        assert_eq!(a.ij(RegionId(1), RegionId(0)), 1.0);
        assert_eq!(a.ii(RegionId(1)), 0.0);
        let empty = compute_alphas(&NetworkState::empty(2, 20.0));
        assert!(empty.alpha_ii.iter().chain(&empty.alpha_ij).all(|&v| v == 0.0));
    }

    #[test]
    fn structural_count_two_regions() {
        let (spec, pwa) = two_regions();
        let st = NetworkState::empty(2, 20.0);
        let p = build_lp(&spec, &st, &compute_alphas(&st), &pwa, &DemandProfile::new(2), &one_step(), BuildOptions::default())
            .unwrap();
        // Per region: N, f_II, one f_IH and one f_IHJ.
        assert_eq!(p.lp.num_vars(), 8);
        // Per region: balance, jam, coupling, internal cap, one destination cap.
        assert_eq!(p.lp.constraints.len(), 10);
    }

    #[test]
    fn empty_network_has_zero_objective() {
        let (spec, pwa) = two_regions();
        let st = NetworkState::empty(2, 20.0);
        let cfg = LrhoConfig::default();
        let p = build_lp(&spec, &st, &compute_alphas(&st), &pwa, &DemandProfile::new(2), &cfg, BuildOptions::default())
            .unwrap();
        let s = lp::solve(&p.lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(s.objective.abs() < 1e-12);
        assert!(s.x.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn internal_flow_hits_pwa_cap() {
        let (spec, pwa) = two_regions();
        let mut st = NetworkState::empty(2, 20.0);
        st.set_n_ij(RegionId(0), RegionId(0), 1000.0);
        let p = build_lp(&spec, &st, &compute_alphas(&st), &pwa, &DemandProfile::new(2), &one_step(), BuildOptions::default())
            .unwrap();
        let s = lp::solve(&p.lp).unwrap();
        let f = s.x[p.index.f_ii(0, RegionId(0))];
        // Grid oracle over feasible f_II.
        let cap = pwa[0].eval(1000.0);
        let best = (0..=100_000)
            .map(|i| i as f64 * 1e-4)
            .filter(|&f| f <= cap && 1000.0 - 20.0 * f >= 0.0)
            .fold(0.0, f64::max);
        assert!((f - best).abs() < 1e-4);
        assert!((f - cap).abs() < 1e-9);
    }

    #[test]
    fn pruning_preserves_objective() {
        let (spec, pwa) = two_regions();
        let mut st = NetworkState::empty(2, 20.0);
        st.set_n_ij(RegionId(0), RegionId(0), 1500.0);
        st.set_n_ij(RegionId(0), RegionId(1), 900.0);
        st.set_n_ij(RegionId(1), RegionId(0), 300.0);
        let mut d = DemandProfile::new(2);
        let tz = Trapezoid { t_start: 0.0, t_rise: 0.0, t_const: 500.0, t_fall: 0.0, magnitude: 2.0 };
        d.add(RegionId(0), RegionId(1), tz).unwrap();
        let cfg = LrhoConfig::default();
        let alphas = compute_alphas(&st);
        let full = build_lp(&spec, &st, &alphas, &pwa, &d, &cfg, BuildOptions::default()).unwrap();
        let pruned = build_lp(&spec, &st, &alphas, &pwa, &d, &cfg, BuildOptions { prune_redundant_lines: true }).unwrap();
        assert!(pruned.lp.constraints.len() < full.lp.constraints.len());
        let a = lp::solve(&full.lp).unwrap().objective;
        let b = lp::solve(&pruned.lp).unwrap().objective;
        assert!((a - b).abs() < 1e-7 * (1.0 + a.abs()));
    }

    #[test]
    fn projection_example() {
        let x = project_band(&[0.0, 1.0, 0.0], &[0.8, 0.0, 0.0], &[1.0, 0.2, 0.2]);
        for (a, b) in x.iter().zip([0.8, 0.2, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_stays_on_simplex() {
        let prev = [0.5, 0.3, 0.2];
        let lo: Vec<f64> = prev.iter().map(|v: &f64| (v - 0.2).max(0.0)).collect();
        let hi: Vec<f64> = prev.iter().map(|v: &f64| (v + 0.2).min(1.0)).collect();
        let x = project_band(&[0.0, 0.0, 1.0], &lo, &hi);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for ((v, l), h) in x.iter().zip(&lo).zip(&hi) {
            assert!(*v >= l - 1e-12 && *v <= h + 1e-12);
        }
    }

    #[test]
    fn zero_demand_holds_uniform_splits() {
        let (spec, pwa) = two_regions();
        let run = run_lrho(&spec, &DemandProfile::new(2), &pwa, &LrhoConfig::default(), 12, 20.0).unwrap();
        assert_eq!(run.cycles.len(), 3);
        let uniform = SplitRates::uniform(&spec);
        for c in &run.cycles {
            assert_eq!(c.theta, uniform);
            assert_eq!(c.objective, 0.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(LrhoConfig { sigma: 0.0, ..LrhoConfig::default() }.validate("lrho").is_err());
        assert!(LrhoConfig { n_c: 0, ..LrhoConfig::default() }.validate("lrho").is_err());
        assert!(LrhoConfig::default().validate("lrho").is_ok());
    }
}

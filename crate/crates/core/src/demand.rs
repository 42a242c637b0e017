//! Exogenous trapezoidal travel demand.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::RegionId;

/// Rise, plateau and fall of one demand pulse [veh/s].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trapezoid {
    pub t_start: f64,
    pub t_rise: f64,
    pub t_const: f64,
    pub t_fall: f64,
    pub magnitude: f64,
}

impl Trapezoid {
    pub fn validate(&self, path: &str) -> Result<()> {
        let fields = [
            ("t_start", self.t_start),
            ("t_rise", self.t_rise),
            ("t_const", self.t_const),
            ("t_fall", self.t_fall),
            ("magnitude", self.magnitude),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{path}.{name}"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.t_rise + self.t_const + self.t_fall
    }

    pub fn demand_at(&self, t: f64) -> f64 {
        let s = t - self.t_start;
        let q = self.magnitude;
        if s < 0.0 || t > self.t_end() {
            0.0
        } else if s < self.t_rise {
            q * s / self.t_rise
        } else if s <= self.t_rise + self.t_const {
            q
        } else {
            let into_fall = s - self.t_rise - self.t_const;
            q * (1.0 - into_fall / self.t_fall)
        }
    }

    /// Vehicles released up to time `t`.
    fn cumulative(&self, t: f64) -> f64 {
        let q = self.magnitude;
        let s = (t - self.t_start).max(0.0);
        let rise = s.min(self.t_rise);
        let mut v = if self.t_rise > 0.0 {
            q * rise * rise / (2.0 * self.t_rise)
        } else {
            0.0
        };
        if s <= self.t_rise {
            return v;
        }
        v += q * (s - self.t_rise).min(self.t_const);
        if s <= self.t_rise + self.t_const {
            return v;
        }
        let fall = (s - self.t_rise - self.t_const).min(self.t_fall);
        if self.t_fall > 0.0 {
            v += q * (fall - fall * fall / (2.0 * self.t_fall));
        }
        v
    }

    /// Exact volume released over `[t0, t1]`.
    pub fn volume_between(&self, t0: f64, t1: f64) -> f64 {
        self.cumulative(t1) - self.cumulative(t0)
    }

    pub fn total_volume(&self) -> f64 {
        self.magnitude * (self.t_const + 0.5 * (self.t_rise + self.t_fall))
    }
}

/// Per-OD trapezoid lists. Pairs without an entry carry no demand.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DemandProfile {
    k: usize,
    od: BTreeMap<(RegionId, RegionId), Vec<Trapezoid>>,
}

impl DemandProfile {
    pub fn new(k: usize) -> Self {
        Self { k, od: BTreeMap::new() }
    }

    pub fn regions(&self) -> usize {
        self.k
    }

    pub fn add(&mut self, i: RegionId, j: RegionId, tz: Trapezoid) -> Result<()> {
        if i.index() >= self.k || j.index() >= self.k {
            return Err(Error::config(
                "demand",
                format!("pair ({i}, {j}) references an unknown region"),
            ));
        }
        self.od.entry((i, j)).or_default().push(tz);
        Ok(())
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(RegionId, RegionId), &Vec<Trapezoid>)> {
        self.od.iter()
    }

    pub fn od_demand(&self, i: RegionId, j: RegionId, t: f64) -> f64 {
        self.od
            .get(&(i, j))
            .map_or(0.0, |v| v.iter().map(|tz| tz.demand_at(t)).sum())
    }

    pub fn od_volume(&self, i: RegionId, j: RegionId, t0: f64, t1: f64) -> f64 {
        self.od
            .get(&(i, j))
            .map_or(0.0, |v| v.iter().map(|tz| tz.volume_between(t0, t1)).sum())
    }

    /// Aggregate demand `Q_I(t)` over all destinations, including internal trips.
    pub fn origin_demand(&self, i: RegionId, t: f64) -> f64 {
        (0..self.k).map(|j| self.od_demand(i, RegionId(j), t)).sum()
    }

    pub fn origin_volume(&self, i: RegionId, t0: f64, t1: f64) -> f64 {
        (0..self.k).map(|j| self.od_volume(i, RegionId(j), t0, t1)).sum()
    }

    pub fn total_volume(&self) -> f64 {
        self.od.values().flatten().map(Trapezoid::total_volume).sum()
    }

    /// Latest time at which any pulse is still active.
    pub fn last_demand_time(&self) -> f64 {
        self.od.values().flatten().map(Trapezoid::t_end).fold(0.0, f64::max)
    }

    /// One row per step with the demand of every ordered pair at the step start.
    pub fn write_csv<W: Write>(&self, out: W, steps: usize, dt: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string(), "t".to_string()];
        for i in 0..self.k {
            for j in 0..self.k {
                header.push(format!("q_{}_{}", RegionId(i), RegionId(j)));
            }
        }
        w.write_record(&header)?;
        for k in 0..steps {
            let t = k as f64 * dt;
            let mut row = vec![k.to_string(), t.to_string()];
            for i in 0..self.k {
                for j in 0..self.k {
                    row.push(self.od_demand(RegionId(i), RegionId(j), t).to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tz() -> Trapezoid {
        Trapezoid {
            t_start: 0.0,
            t_rise: 100.0,
            t_const: 200.0,
            t_fall: 100.0,
            magnitude: 2.0,
        }
    }

    fn riemann(tz: &Trapezoid, step: f64) -> f64 {
        let n = ((tz.t_end() + 10.0) / step).ceil() as usize;
        (0..n).map(|i| tz.demand_at((i as f64 + 0.5) * step) * step).sum()
    }

    #[test]
    fn demand_at_examples() {
        assert_eq!(tz().demand_at(50.0), 1.0);
        assert_eq!(tz().demand_at(150.0), 2.0);
        assert_eq!(tz().demand_at(450.0), 0.0);
    }

    #[test]
    fn total_volume_examples() {
        assert!((riemann(&tz(), 0.1) - 600.0).abs() / 600.0 < 1e-3);
        assert_eq!(tz().total_volume(), 600.0);
        assert_eq!(Trapezoid { magnitude: 0.0, ..tz() }.total_volume(), 0.0);
        let empty = Trapezoid { t_rise: 0.0, t_const: 0.0, t_fall: 0.0, ..tz() };
        assert_eq!(empty.total_volume(), 0.0);
    }

    #[test]
    fn od_demand_sums_overlaps() {
        let mut p = DemandProfile::new(2);
        assert_eq!(p.od_demand(RegionId(0), RegionId(1), 10.0), 0.0);
        let flat = Trapezoid { t_start: 0.0, t_rise: 0.0, t_const: 100.0, t_fall: 0.0, magnitude: 1.0 };
        p.add(RegionId(0), RegionId(1), flat).unwrap();
        p.add(RegionId(0), RegionId(1), Trapezoid { t_start: 50.0, ..flat }).unwrap();
        assert_eq!(p.od_demand(RegionId(0), RegionId(1), 75.0), 2.0);
        assert_eq!(p.od_demand(RegionId(0), RegionId(1), 25.0), 1.0);
        assert!(p.add(RegionId(0), RegionId(5), flat).is_err());
    }

    proptest! {
        #[test]
        fn volume_matches_integral(
            t_start in 0.0..500.0f64, t_rise in 0.0..400.0f64, t_const in 0.0..400.0f64,
            t_fall in 0.0..400.0f64, magnitude in 0.0..5.0f64,
        ) {
            let tz = Trapezoid { t_start, t_rise, t_const, t_fall, magnitude };
            let exact = tz.total_volume();
            prop_assert!((tz.volume_between(0.0, 5000.0) - exact).abs() <= 1e-9 * (1.0 + exact));
            let approx = riemann(&tz, 0.1);
            prop_assert!((approx - exact).abs() <= 1e-3 * exact + 1e-6 * magnitude + 0.05 * magnitude);
        }

        #[test]
        fn split_volumes_add_up(
            t_rise in 0.0..400.0f64, t_const in 0.0..400.0f64, t_fall in 0.0..400.0f64,
            cut in 0.0..1500.0f64,
        ) {
            let tz = Trapezoid { t_start: 10.0, t_rise, t_const, t_fall, magnitude: 1.5 };
            let whole = tz.volume_between(0.0, 2000.0);
            let parts = tz.volume_between(0.0, cut) + tz.volume_between(cut, 2000.0);
            prop_assert!((whole - parts).abs() < 1e-9);
            prop_assert!(tz.volume_between(cut, cut + 20.0) >= -1e-12);
        }

        #[test]
        fn demand_nonnegative_and_continuous(t in 0.0..1000.0f64) {
            let tz = tz();
            prop_assert!(tz.demand_at(t) >= 0.0);
            prop_assert!((tz.demand_at(t) - tz.demand_at(t + 1e-6)).abs() < 1e-6);
        }
    }
}

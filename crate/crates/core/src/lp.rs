//! Dense two-phase simplex for small linear programs.
//!
//! All variables are non-negative. Pivoting follows Bland's rule, so the
//! solver terminates on degenerate problems and returns the same vertex for
//! the same input.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective . x` subject to the constraints and `x >= 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub var_names: Vec<String>,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    pub fn add_var(&mut self, name: impl Into<String>, cost: f64) -> usize {
        self.var_names.push(name.into());
        self.objective.push(cost);
        self.var_names.len() - 1
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            name: name.into(),
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Largest violation of any constraint or sign bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Plain-text dump in an LP-file style layout.
    pub fn to_standard_form_text(&self) -> String {
        let mut s = String::from("maximize\n  obj:");
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = write!(s, " {:+} {}", c, self.var_names[j]);
            }
        }
        s.push_str("\nsubject to\n");
        for c in &self.constraints {
            let _ = write!(s, "  {}:", c.name);
            for &(j, a) in &c.coeffs {
                let _ = write!(s, " {:+} {}", a, self.var_names[j]);
            }
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
                Relation::Eq => "=",
            };
            let _ = writeln!(s, " {rel} {}", c.rhs);
        }
        s.push_str("bounds\n  all variables >= 0\nend\n");
        s
    }
}

const PIVOT_EPS: f64 = 1e-9;
const COST_EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

struct Tableau {
    rows: usize,
    cols: usize,
    // rows x (cols + 1); the last column is the right-hand side.
    a: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * (self.cols + 1) + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.a[r * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize, obj: &mut [f64]) {
        let w = self.cols + 1;
        let p = self.a[pr * w + pc];
        for v in &mut self.a[pr * w..(pr + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.a[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.a[r * w + pc];
            if f != 0.0 {
                let row = &mut self.a[r * w..(r + 1) * w];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[pc] = 0.0;
            }
        }
        let f = obj[pc];
        if f != 0.0 {
            for (v, pv) in obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Maximises with reduced-cost row `obj` (entries `z_j - c_j`, last entry the value).
    /// Columns flagged in `barred` never enter.
    fn run(&mut self, obj: &mut [f64], barred: &[bool]) -> Result<Option<()>> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::Numerical("simplex pivot limit exceeded".into()));
            }
            let Some(pc) = (0..self.cols).find(|&c| !barred[c] && obj[c] < -COST_EPS) else {
                return Ok(Some(()));
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(r) / a;
                    best = match best {
                        None => Some((r, ratio)),
                        Some((br, bratio)) => {
                            if ratio < bratio - 1e-12 * (1.0 + bratio.abs())
                                || ((ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs())
                                    && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bratio))
                            }
                        }
                    };
                }
            }
            match best {
                None => return Ok(None),
                Some((pr, _)) => self.pivot(pr, pc, obj),
            }
        }
    }
}

/// Solves the program to an optimal basic solution or reports why none exists.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.num_vars();
    let m = lp.constraints.len();

    // Normalise to non-negative right-hand sides.
    let rows: Vec<(Vec<(usize, f64)>, Relation, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            if c.rhs < 0.0 {
                let flipped = match c.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (c.coeffs.iter().map(|&(j, a)| (j, -a)).collect(), flipped, -c.rhs)
            } else {
                (c.coeffs.clone(), c.relation, c.rhs)
            }
        })
        .collect();

    let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
    let cols = n + n_slack + n_art;
    let w = cols + 1;
    let mut tab = Tableau {
        rows: m,
        cols,
        a: vec![0.0; m * w],
        basis: vec![0; m],
        pivots: 0,
    };
    let mut is_art = vec![false; cols];
    let (mut next_slack, mut next_art) = (n, n + n_slack);
    for (r, (coeffs, rel, rhs)) in rows.iter().enumerate() {
        for &(j, a) in coeffs {
            tab.a[r * w + j] += a;
        }
        tab.a[r * w + cols] = *rhs;
        match rel {
            Relation::Le => {
                tab.a[r * w + next_slack] = 1.0;
                tab.basis[r] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                tab.a[r * w + next_slack] = -1.0;
                next_slack += 1;
                tab.a[r * w + next_art] = 1.0;
                tab.basis[r] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
            Relation::Eq => {
                tab.a[r * w + next_art] = 1.0;
                tab.basis[r] = next_art;
                is_art[next_art] = true;
                next_art += 1;
            }
        }
    }

    // Phase 1: maximise -sum(artificials).
    if n_art > 0 {
        let mut obj = vec![0.0; w];
        for (c, &art) in is_art.iter().enumerate() {
            if art {
                obj[c] = 1.0;
            }
        }
        for r in 0..m {
            if is_art[tab.basis[r]] {
                for c in 0..w {
                    obj[c] -= tab.a[r * w + c];
                }
            }
        }
        let none = vec![false; cols];
        tab.run(&mut obj, &none)?
            .ok_or_else(|| Error::Numerical("phase one cannot be unbounded".into()))?;
        let infeas: f64 = (0..m).filter(|&r| is_art[tab.basis[r]]).map(|r| tab.rhs(r)).sum();
        let scale = 1.0 + rows.iter().map(|r| r.2).fold(0.0, f64::max);
        if infeas > 1e-7 * scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                objective: f64::NAN,
                pivots: tab.pivots,
            });
        }
        // Drive remaining zero-level artificials out of the basis where possible.
        for r in 0..m {
            if is_art[tab.basis[r]] {
                if let Some(c) = (0..cols).find(|&c| !is_art[c] && tab.at(r, c).abs() > PIVOT_EPS) {
                    let mut scratch = vec![0.0; w];
                    tab.pivot(r, c, &mut scratch);
                }
            }
        }
    }

    // Phase 2.
    let mut obj = vec![0.0; w];
    for j in 0..n {
        obj[j] = -lp.objective[j];
    }
    for r in 0..m {
        let b = tab.basis[r];
        let cb = if b < n { lp.objective[b] } else { 0.0 };
        if cb != 0.0 {
            for c in 0..w {
                obj[c] += cb * tab.a[r * w + c];
            }
        }
    }
    for r in 0..m {
        obj[tab.basis[r]] = 0.0;
    }
    let status = match tab.run(&mut obj, &is_art)? {
        Some(()) => LpStatus::Optimal,
        None => LpStatus::Unbounded,
    };
    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.rhs(r).max(0.0);
        }
    }
    let objective = if status == LpStatus::Optimal {
        x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum()
    } else {
        f64::INFINITY
    };
    Ok(LpSolution {
        status,
        x,
        objective,
        pivots: tab.pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bound() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 1.0);
        lp.add_constraint("c", vec![(x, 1.0)], Relation::Le, 3.0);
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-12 && (s.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_objective_is_unique() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 1.0);
        let y = lp.add_var("y", 1.0);
        lp.add_constraint("c", vec![(x, 1.0), (y, 1.0)], Relation::Le, 1.0);
        let s = solve(&lp).unwrap();
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 1.0);
        lp.add_constraint("lo", vec![(x, 1.0)], Relation::Ge, 2.0);
        lp.add_constraint("hi", vec![(x, 1.0)], Relation::Le, 1.0);
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 1.0);
        lp.add_constraint("lo", vec![(x, 1.0)], Relation::Ge, 2.0);
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_negative_rhs() {
        // max 2x + y, x + y = 4, x - y >= -2, x <= 3
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 2.0);
        let y = lp.add_var("y", 1.0);
        lp.add_constraint("e", vec![(x, 1.0), (y, 1.0)], Relation::Eq, 4.0);
        lp.add_constraint("g", vec![(x, 1.0), (y, -1.0)], Relation::Ge, -2.0);
        lp.add_constraint("u", vec![(x, 1.0)], Relation::Le, 3.0);
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 7.0).abs() < 1e-12);
        assert!(lp.max_violation(&s.x) < 1e-9);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 1.0);
        let y = lp.add_var("y", 1.0);
        lp.add_constraint("a", vec![(x, 1.0), (y, 1.0)], Relation::Eq, 2.0);
        lp.add_constraint("b", vec![(x, 2.0), (y, 2.0)], Relation::Eq, 4.0);
        lp.add_constraint("c", vec![(x, 1.0)], Relation::Le, 1.5);
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dump_lists_every_row() {
        let mut lp = LinearProgram::default();
        let x = lp.add_var("x", 1.0);
        lp.add_constraint("cap", vec![(x, 1.0)], Relation::Le, 3.0);
        let text = lp.to_standard_form_text();
        assert!(text.contains("cap: +1 x <= 3"));
        assert!(text.starts_with("maximize"));
    }
}

//! Dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Problems are `maximize cᵀx subject to a_k·x (≤|≥|=) b_k, x ≥ 0`. Sizes in
//! this crate are tens of rows, so the tableau is a plain `Vec<Vec<f64>>`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Pivots smaller than this abort with [`Error::NumericalInstability`].
pub const PIVOT_TOL: f64 = 1e-9;
/// Column entries at or below this are treated as zero in the ratio test.
const ZERO_TOL: f64 = 1e-12;
/// Reduced costs above this make a column eligible to enter.
const COST_TOL: f64 = 1e-11;
/// Phase-one objective above this means no feasible point.
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    /// Maximised.
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub var_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Basic column per remaining row; structural columns first, then slack
    /// and surplus columns.
    pub basis: Vec<usize>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Structural,
    Slack,
    Artificial,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    kinds: Vec<Column>,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        *self.rows[r].last().expect("tableau row has rhs")
    }

    fn ncols(&self) -> usize {
        self.kinds.len()
    }

    fn pivot(&mut self, r: usize, c: usize) -> Result<()> {
        let p = self.rows[r][c];
        if p.abs() < PIVOT_TOL {
            return Err(Error::NumericalInstability { pivot: p });
        }
        for x in self.rows[r].iter_mut() {
            *x /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (k, row) in self.rows.iter_mut().enumerate() {
            if k == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
        self.pivots += 1;
        Ok(())
    }

    /// Reduced costs `c_j − c_Bᵀ B⁻¹ a_j`, with the objective value in the
    /// last slot.
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let n = self.ncols();
        let mut d = vec![0.0; n + 1];
        d[..n].copy_from_slice(&cost[..n]);
        for (r, row) in self.rows.iter().enumerate() {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for (dj, a) in d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    /// Runs primal simplex on `cost`; columns with `allowed[j] == false`
    /// never enter.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<()> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::MaxIterExceeded {
                    iterations: self.pivots,
                    last_step: f64::NAN,
                    last_iterate: Vec::new(),
                });
            }
            let d = self.reduced_costs(cost);
            // Bland: lowest-index improving column
            let Some(enter) = (0..self.ncols()).find(|&j| allowed[j] && d[j] > COST_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][enter];
                if a > ZERO_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((best, br)) => {
                            if ratio < br || (ratio == br && self.basis[r] < self.basis[best]) {
                                Some((r, ratio))
                            } else {
                                Some((best, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Unbounded);
            };
            self.pivot(r, enter)?;
        }
    }
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            objective: vec![0.0; n_vars],
            constraints: Vec::new(),
            var_names: (0..n_vars).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.n_vars());
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn solve(&self) -> Result<LpSolution> {
        let n = self.n_vars();
        let m = self.constraints.len();
        for c in &self.constraints {
            if c.coeffs.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "constraint has {} coefficients, problem has {n} variables",
                    c.coeffs.len()
                )));
            }
        }

        // normalise to b ≥ 0
        let normalized: Vec<(Vec<f64>, Relation, f64)> = self
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let flipped = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|x| -x).collect(), flipped, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();

        let mut kinds = vec![Column::Structural; n];
        let n_slack = normalized.iter().filter(|c| c.1 != Relation::Eq).count();
        let n_art = normalized.iter().filter(|c| c.1 != Relation::Le).count();
        kinds.extend(std::iter::repeat(Column::Slack).take(n_slack));
        kinds.extend(std::iter::repeat(Column::Artificial).take(n_art));
        let width = kinds.len() + 1;

        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut slack_col = n;
        let mut art_col = n + n_slack;
        for (coeffs, rel, rhs) in &normalized {
            let mut row = vec![0.0; width];
            row[..n].copy_from_slice(coeffs);
            row[width - 1] = *rhs;
            match rel {
                Relation::Le => {
                    row[slack_col] = 1.0;
                    basis.push(slack_col);
                    slack_col += 1;
                }
                Relation::Ge => {
                    row[slack_col] = -1.0;
                    slack_col += 1;
                    row[art_col] = 1.0;
                    basis.push(art_col);
                    art_col += 1;
                }
                Relation::Eq => {
                    row[art_col] = 1.0;
                    basis.push(art_col);
                    art_col += 1;
                }
            }
            rows.push(row);
        }
        let mut t = Tableau {
            rows,
            basis,
            kinds,
            pivots: 0,
        };

        if n_art > 0 {
            let cost: Vec<f64> = t
                .kinds
                .iter()
                .map(|k| if *k == Column::Artificial { -1.0 } else { 0.0 })
                .collect();
            let allowed = vec![true; t.ncols()];
            t.optimize(&cost, &allowed)?;
            let infeasibility: f64 = (0..t.rows.len())
                .filter(|&r| t.kinds[t.basis[r]] == Column::Artificial)
                .map(|r| t.rhs(r))
                .sum();
            if infeasibility > FEAS_TOL {
                return Err(Error::Infeasible(format!(
                    "phase one ended with artificial mass {infeasibility:e}"
                )));
            }
            // drive remaining zero-level artificials out of the basis
            let mut r = 0;
            while r < t.rows.len() {
                if t.kinds[t.basis[r]] == Column::Artificial {
                    let col = (0..t.ncols()).find(|&j| {
                        t.kinds[j] != Column::Artificial && t.rows[r][j].abs() > PIVOT_TOL
                    });
                    match col {
                        Some(j) => t.pivot(r, j)?,
                        None => {
                            // redundant constraint
                            t.rows.remove(r);
                            t.basis.remove(r);
                            continue;
                        }
                    }
                }
                r += 1;
            }
        }

        let mut cost = vec![0.0; t.ncols()];
        cost[..n].copy_from_slice(&self.objective);
        let allowed: Vec<bool> = t.kinds.iter().map(|k| *k != Column::Artificial).collect();
        t.optimize(&cost, &allowed)?;

        let mut x = vec![0.0; n];
        for (r, &b) in t.basis.iter().enumerate() {
            if b < n {
                x[b] = t.rhs(r);
            }
        }
        let objective = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            x,
            objective,
            basis: t.basis.clone(),
            pivots: t.pivots,
        })
    }

    /// Plain-text dump: objective row, one line per constraint, and the
    /// final basis when a solution is given.
    pub fn dump(&self, solution: Option<&LpSolution>) -> String {
        let mut out = String::new();
        let term = |c: f64, name: &str| format!("{c:+.12} {name}");
        let _ = writeln!(out, "maximize");
        let obj: Vec<String> = self
            .objective
            .iter()
            .zip(&self.var_names)
            .filter(|(c, _)| **c != 0.0)
            .map(|(c, v)| term(*c, v))
            .collect();
        let _ = writeln!(out, "  {}", obj.join(" "));
        let _ = writeln!(out, "subject to");
        for (k, c) in self.constraints.iter().enumerate() {
            let lhs: Vec<String> = c
                .coeffs
                .iter()
                .zip(&self.var_names)
                .filter(|(a, _)| **a != 0.0)
                .map(|(a, v)| term(*a, v))
                .collect();
            let _ = writeln!(
                out,
                "  r{k}: {} {} {:.12}",
                lhs.join(" "),
                c.relation.symbol(),
                c.rhs
            );
        }
        let _ = writeln!(out, "  {} >= 0", self.var_names.join(", "));
        if let Some(sol) = solution {
            let _ = writeln!(out, "basis");
            for (r, &b) in sol.basis.iter().enumerate() {
                let name = self
                    .var_names
                    .get(b)
                    .cloned()
                    .unwrap_or_else(|| format!("s{}", b - self.n_vars()));
                let _ = writeln!(out, "  row {r}: {name}");
            }
            let _ = writeln!(out, "objective {:.12}", sol.objective);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_max() {
        // max 3x + 5y st x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![3.0, 5.0];
        lp.add(vec![1.0, 0.0], Relation::Le, 4.0);
        lp.add(vec![0.0, 2.0], Relation::Le, 12.0);
        lp.add(vec![3.0, 2.0], Relation::Le, 18.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 36.0).abs() < 1e-12);
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn needs_phase_one() {
        // min x + y (max −x − y) st x + y ≥ 2, x − y = 0 → x = y = 1
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-1.0, -1.0];
        lp.add(vec![1.0, 1.0], Relation::Ge, 2.0);
        lp.add(vec![1.0, -1.0], Relation::Eq, 0.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective + 2.0).abs() < 1e-12);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_flips() {
        // −x ≤ −3 ⇔ x ≥ 3; min x
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![-1.0];
        lp.add(vec![-1.0], Relation::Le, -3.0);
        let sol = lp.solve().unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 0.0];
        lp.add(vec![-1.0, 1.0], Relation::Le, 1.0);
        assert!(matches!(lp.solve(), Err(Error::Unbounded)));
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![1.0];
        lp.add(vec![1.0], Relation::Le, 1.0);
        lp.add(vec![1.0], Relation::Ge, 2.0);
        assert!(matches!(lp.solve(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under the largest-coefficient rule
        let mut lp = LinearProgram::new(4);
        lp.objective = vec![0.75, -150.0, 0.02, -6.0];
        lp.add(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0);
        lp.add(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0);
        lp.add(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 0.05).abs() < 1e-10);
    }

    #[test]
    fn redundant_equality_rows() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.add(vec![1.0, 1.0], Relation::Eq, 1.0);
        lp.add(vec![2.0, 2.0], Relation::Eq, 2.0);
        let sol = lp.solve().unwrap();
        assert!((sol.objective - 1.0).abs() < 1e-12);
        assert_eq!(sol.basis.len(), 1);
    }

    #[test]
    fn dump_lists_rows_and_basis() {
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![1.0];
        lp.add(vec![1.0], Relation::Le, 2.0);
        let sol = lp.solve().unwrap();
        let text = lp.dump(Some(&sol));
        assert!(text.contains("r0: +1.000000000000 x0 <= 2.000000000000"));
        assert!(text.contains("row 0: x0"));
    }
}

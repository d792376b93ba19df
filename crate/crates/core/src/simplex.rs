//! Dense two-phase simplex with Bland's rule, for the small LPs of the oracle.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// `maximize c'x  s.t.  rows, x >= 0`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    objective: Vec<f64>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

const PIVOT_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        Self {
            objective,
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constraint(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.objective.len(), "row width");
        self.rows.push((coeffs, rel, rhs));
        self
    }

    pub fn solve(&self) -> LpOutcome {
        let n = self.num_vars();
        let rows: Vec<(Vec<f64>, Relation, f64)> = self
            .rows
            .iter()
            .map(|(a, rel, b)| {
                if *b < 0.0 {
                    let flipped = match rel {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (a.iter().map(|v| -v).collect(), flipped, -b)
                } else {
                    (a.clone(), *rel, *b)
                }
            })
            .collect();

        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let cols = n + n_slack + n_art;
        let art_start = n + n_slack;

        let mut tab: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
        let mut basis = Vec::with_capacity(rows.len());
        let (mut s, mut a) = (n, art_start);
        for (coeffs, rel, rhs) in &rows {
            let mut row = vec![0.0; cols + 1];
            row[..n].copy_from_slice(coeffs);
            row[cols] = *rhs;
            match rel {
                Relation::Le => {
                    row[s] = 1.0;
                    basis.push(s);
                    s += 1;
                }
                Relation::Ge => {
                    row[s] = -1.0;
                    s += 1;
                    row[a] = 1.0;
                    basis.push(a);
                    a += 1;
                }
                Relation::Eq => {
                    row[a] = 1.0;
                    basis.push(a);
                    a += 1;
                }
            }
            tab.push(row);
        }

        let mut tableau = Tableau { tab, basis, cols };

        if n_art > 0 {
            let mut cost = vec![0.0; cols];
            for c in cost.iter_mut().skip(art_start) {
                *c = -1.0;
            }
            let allowed = vec![true; cols];
            if !tableau.optimize(&cost, &allowed) {
                // Phase one is bounded by construction.
                unreachable!("phase one unbounded");
            }
            if tableau.value(&cost) < -FEAS_EPS {
                return LpOutcome::Infeasible;
            }
            tableau.evict_artificials(art_start);
        }

        let mut cost = vec![0.0; cols];
        cost[..n].copy_from_slice(&self.objective);
        let allowed: Vec<bool> = (0..cols).map(|j| j < art_start).collect();
        if !tableau.optimize(&cost, &allowed) {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![0.0; n];
        for (i, &b) in tableau.basis.iter().enumerate() {
            if b < n {
                x[b] = tableau.tab[i][cols];
            }
        }
        let value = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        LpOutcome::Optimal { x, value }
    }
}

struct Tableau {
    tab: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn value(&self, cost: &[f64]) -> f64 {
        self.basis
            .iter()
            .enumerate()
            .map(|(i, &b)| cost[b] * self.tab[i][self.cols])
            .sum()
    }

    fn reduced_cost(&self, cost: &[f64], j: usize) -> f64 {
        cost[j]
            - self
                .basis
                .iter()
                .enumerate()
                .map(|(i, &b)| cost[b] * self.tab[i][j])
                .sum::<f64>()
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.tab[r][c];
        for v in self.tab[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.tab[r].clone();
        for (i, row) in self.tab.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[c];
            if factor != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Bland's rule: lowest-index improving column enters, lowest-index basic
    /// variable leaves among ratio ties. Returns false when unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: &[bool]) -> bool {
        loop {
            let entering = (0..self.cols).find(|&j| {
                allowed[j] && !self.basis.contains(&j) && self.reduced_cost(cost, j) > PIVOT_EPS
            });
            let Some(c) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.tab.len() {
                let a = self.tab[i][c];
                if a > PIVOT_EPS {
                    let ratio = self.tab[i][self.cols] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            if ratio < best - 1e-12
                                || (ratio <= best + 1e-12 && self.basis[i] < self.basis[r])
                            {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return false,
                Some((r, _)) => self.pivot(r, c),
            }
        }
    }

    /// Pivots zero-valued artificials out of the basis; rows with no other
    /// nonzero entry are redundant and dropped.
    fn evict_artificials(&mut self, art_start: usize) {
        let mut i = 0;
        while i < self.tab.len() {
            if self.basis[i] >= art_start {
                match (0..art_start).find(|&j| self.tab[i][j].abs() > FEAS_EPS) {
                    Some(j) => self.pivot(i, j),
                    None => {
                        self.tab.remove(i);
                        self.basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(outcome: LpOutcome) -> (Vec<f64>, f64) {
        match outcome {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]);
        lp.constraint(vec![1.0, 0.0], Relation::Le, 4.0)
            .constraint(vec![0.0, 2.0], Relation::Le, 12.0)
            .constraint(vec![3.0, 2.0], Relation::Le, 18.0);
        let (x, v) = optimal(lp.solve());
        assert!((v - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max x - y, x + y = 1, y >= 0.25
        let mut lp = LinearProgram::maximize(vec![1.0, -1.0]);
        lp.constraint(vec![1.0, 1.0], Relation::Eq, 1.0)
            .constraint(vec![0.0, 1.0], Relation::Ge, 0.25);
        let (x, v) = optimal(lp.solve());
        assert!((v - 0.5).abs() < 1e-9);
        assert!((x[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_and_infeasible() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.constraint(vec![1.0], Relation::Le, -1.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::maximize(vec![-1.0]);
        lp.constraint(vec![-1.0], Relation::Le, -2.0);
        let (x, _) = optimal(lp.solve());
        assert!((x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.constraint(vec![0.0, 1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::maximize(vec![1.0, 2.0]);
        lp.constraint(vec![1.0, 1.0], Relation::Eq, 1.0)
            .constraint(vec![2.0, 2.0], Relation::Eq, 2.0);
        let (_, v) = optimal(lp.solve());
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Beale's cycling example; Bland's rule must terminate.
        let mut lp = LinearProgram::maximize(vec![0.75, -150.0, 0.02, -6.0]);
        lp.constraint(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0)
            .constraint(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0)
            .constraint(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let (_, v) = optimal(lp.solve());
        assert!((v - 0.05).abs() < 1e-9);
    }
}

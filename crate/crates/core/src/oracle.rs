//! Exact baselines on finite instances: the constrained optimum over strategy
//! mixtures, the feasibility margin, a saddle-point check of restricted
//! strong duality, and a brute-force cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{LinearProgram, LpOutcome, Relation};

/// Feasibility tolerance for returned mixtures.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStatus {
    Optimal,
    Infeasible,
    /// Margin LP solved but the best margin is not positive (no strictly
    /// feasible mixture).
    NonPositiveMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    /// `-inf` when infeasible.
    pub value: f64,
    /// Empty when infeasible.
    pub mixture: Vec<f64>,
    pub status: OracleStatus,
}

impl OracleSolution {
    fn infeasible() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            mixture: Vec::new(),
            status: OracleStatus::Infeasible,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status != OracleStatus::Infeasible
    }
}

fn check_tables(f_bar: Option<&[f64]>, g_bar: &[Vec<f64>]) -> Result<usize> {
    if g_bar.is_empty() {
        return Err(Error::Shape("no strategies".into()));
    }
    if let Some(f) = f_bar {
        if f.len() != g_bar.len() {
            return Err(Error::Shape(format!(
                "{} rewards for {} constraint rows",
                f.len(),
                g_bar.len()
            )));
        }
    }
    let m = g_bar[0].len();
    if m == 0 || g_bar.iter().any(|row| row.len() != m) {
        return Err(Error::Shape("constraint rows must share a positive width".into()));
    }
    Ok(m)
}

fn clean_mixture(x: &[f64]) -> Vec<f64> {
    let mut xi: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = xi.iter().sum();
    for v in xi.iter_mut() {
        *v /= total;
    }
    xi
}

fn mix(xi: &[f64], values: impl Fn(usize) -> f64) -> f64 {
    xi.iter().enumerate().map(|(x, w)| w * values(x)).sum()
}

/// `max_xi  sum xi f_bar  s.t.  sum xi g_bar_i <= 0 for all i`, `xi` in the
/// simplex.
pub fn solve_opt(f_bar: &[f64], g_bar: &[Vec<f64>]) -> Result<OracleSolution> {
    let m = check_tables(Some(f_bar), g_bar)?;
    let k = f_bar.len();
    let mut lp = LinearProgram::maximize(f_bar.to_vec());
    for i in 0..m {
        lp.constraint(g_bar.iter().map(|row| row[i]).collect(), Relation::Le, 0.0);
    }
    lp.constraint(vec![1.0; k], Relation::Eq, 1.0);
    match lp.solve() {
        LpOutcome::Optimal { x, .. } => {
            let mixture = clean_mixture(&x);
            Ok(OracleSolution {
                value: mix(&mixture, |x| f_bar[x]),
                mixture,
                status: OracleStatus::Optimal,
            })
        }
        LpOutcome::Infeasible => Ok(OracleSolution::infeasible()),
        LpOutcome::Unbounded => unreachable!("objective bounded on the simplex"),
    }
}

/// Largest `d` such that some mixture satisfies every row of every table by
/// margin `d`. Tables are `[x][i]`.
fn solve_margin(tables: &[&[Vec<f64>]]) -> Result<OracleSolution> {
    let k = tables[0].len();
    // Variables: xi, then d' = d + shift, which is nonnegative because the
    // margin of any mixture is at least -max|g|.
    let shift = 1.0
        + tables
            .iter()
            .flat_map(|t| t.iter().flatten())
            .fold(0.0f64, |a, v| a.max(v.abs()));
    let mut objective = vec![0.0; k + 1];
    objective[k] = 1.0;
    let mut lp = LinearProgram::maximize(objective);
    for table in tables {
        let m = table[0].len();
        for i in 0..m {
            let mut row: Vec<f64> = table.iter().map(|r| r[i]).collect();
            row.push(1.0);
            lp.constraint(row, Relation::Le, shift);
        }
    }
    let mut simplex_row = vec![1.0; k];
    simplex_row.push(0.0);
    lp.constraint(simplex_row, Relation::Eq, 1.0);
    match lp.solve() {
        LpOutcome::Optimal { x, .. } => {
            let mixture = clean_mixture(&x[..k]);
            let value = tables
                .iter()
                .flat_map(|t| {
                    let m = t[0].len();
                    (0..m).map(|i| -mix(&mixture, |x| t[x][i])).collect::<Vec<_>>()
                })
                .fold(f64::INFINITY, f64::min);
            Ok(OracleSolution {
                value,
                mixture,
                status: if value > 0.0 {
                    OracleStatus::Optimal
                } else {
                    OracleStatus::NonPositiveMargin
                },
            })
        }
        _ => unreachable!("margin LP is always feasible and bounded"),
    }
}

/// Feasibility parameter of the averaged constraints:
/// `max_xi min_i -g_bar_i(xi)`.
pub fn solve_rho_stochastic(g_bar: &[Vec<f64>]) -> Result<OracleSolution> {
    check_tables(None, g_bar)?;
    solve_margin(&[g_bar])
}

/// Feasibility parameter against every round's constraints:
/// `max_xi min_t min_i -g_t,i(xi)`.
pub fn solve_rho_adversarial(tables: &[Vec<Vec<f64>>]) -> Result<OracleSolution> {
    if tables.is_empty() {
        return Err(Error::Shape("no rounds".into()));
    }
    let k = tables[0].len();
    let m = check_tables(None, &tables[0])?;
    for t in tables {
        if check_tables(None, t)? != m || t.len() != k {
            return Err(Error::Shape("round tables differ in shape".into()));
        }
    }
    let refs: Vec<&[Vec<f64>]> = tables.iter().map(|t| t.as_slice()).collect();
    solve_margin(&refs)
}

/// `max_x f_bar(x) - <lambda, g_bar(x)>`, the inner supremum of the
/// Lagrangian (attained at a pure strategy).
pub fn dual_function(f_bar: &[f64], g_bar: &[Vec<f64>], lambda: &[f64]) -> f64 {
    f_bar
        .iter()
        .zip(g_bar)
        .map(|(f, g)| f - g.iter().zip(lambda).map(|(a, b)| a * b).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

const FULL_GRID_LIMIT: f64 = 2.0e6;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Calls `visit` on every lattice point `k * step` with `sum k * step <= radius`.
fn for_each_grid_point(m: usize, step: f64, radius: f64, visit: &mut dyn FnMut(&[f64])) {
    let n = (radius / step + 1e-9).floor() as usize;
    let mut counts = vec![0usize; m];
    let mut lambda = vec![0.0; m];
    loop {
        for (l, c) in lambda.iter_mut().zip(&counts) {
            *l = *c as f64 * step;
        }
        visit(&lambda);
        // Odometer over compositions with total <= n.
        let mut pos = 0;
        loop {
            if pos == m {
                return;
            }
            counts[pos] += 1;
            if counts.iter().sum::<usize>() <= n {
                break;
            }
            counts[pos] = 0;
            pos += 1;
        }
    }
}

/// Difference between the grid minimum of the dual function over the
/// restricted domain `{lambda >= 0 : |lambda|_1 <= 1/d}` and the LP optimum.
///
/// Small grids are enumerated in full. Larger ones are searched coarse to
/// fine: a 32-step grid, then repeated box searches around the incumbent
/// with the step shrinking fourfold down to `grid_step`.
pub fn saddle_check(f_bar: &[f64], g_bar: &[Vec<f64>], grid_step: f64) -> Result<f64> {
    let m = check_tables(Some(f_bar), g_bar)?;
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParameter(format!("grid step {grid_step}")));
    }
    let rho = solve_rho_stochastic(g_bar)?;
    if rho.value <= 0.0 {
        return Err(Error::Precondition(format!(
            "restricted duality needs a positive margin, got {}",
            rho.value
        )));
    }
    let opt = solve_opt(f_bar, g_bar)?;
    let radius = 1.0 / rho.value;
    let phi = |l: &[f64]| dual_function(f_bar, g_bar, l);

    let n = (radius / grid_step + 1e-9).floor() as usize;
    if binomial(n + m, m) <= FULL_GRID_LIMIT {
        let mut best = f64::INFINITY;
        for_each_grid_point(m, grid_step, radius, &mut |l| best = best.min(phi(l)));
        return Ok(best - opt.value);
    }

    let mut step = radius / 32.0;
    let mut best = f64::INFINITY;
    let mut center = vec![0.0; m];
    for_each_grid_point(m, step, radius, &mut |l| {
        let v = phi(l);
        if v < best {
            best = v;
            center.copy_from_slice(l);
        }
    });
    let reach: i64 = if m <= 3 { 8 } else { 2 };
    let offsets = box_offsets(m, reach);
    loop {
        step = (step / 4.0).max(grid_step);
        for _ in 0..200 {
            let mut improved = false;
            let base = center.clone();
            for off in &offsets {
                let l: Vec<f64> = base
                    .iter()
                    .zip(off)
                    .map(|(c, o)| c + *o as f64 * step)
                    .collect();
                if l.iter().any(|v| *v < -1e-12) || l.iter().sum::<f64>() > radius + 1e-12 {
                    continue;
                }
                let v = phi(&l);
                if v < best - 1e-15 {
                    best = v;
                    center = l;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        if step <= grid_step {
            break;
        }
    }
    Ok(best - opt.value)
}

fn box_offsets(m: usize, reach: i64) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (-reach..=reach).map(move |o| {
                    let mut p = prefix.clone();
                    p.push(o);
                    p
                })
            })
            .collect();
    }
    out
}

/// Largest strategy set the brute-force oracle accepts.
pub const BRUTE_FORCE_MAX_STRATEGIES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    /// `None` when no lattice point is feasible.
    pub value: Option<f64>,
    pub mixture: Option<Vec<f64>>,
}

/// Lattice search over mixtures, independent of the simplex solver.
///
/// All but the last two coordinates run over multiples of `1/resolution`;
/// the remaining mass is split between the last two strategies exactly,
/// since objective and constraints are linear along that edge.
pub fn brute_force_opt(f_bar: &[f64], g_bar: &[Vec<f64>], resolution: usize) -> Result<BruteForceResult> {
    let m = check_tables(Some(f_bar), g_bar)?;
    let k = f_bar.len();
    if k > BRUTE_FORCE_MAX_STRATEGIES {
        return Err(Error::InvalidParameter(format!(
            "brute force limited to {BRUTE_FORCE_MAX_STRATEGIES} strategies, got {k}"
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidParameter("resolution must be positive".into()));
    }
    const TOL: f64 = 1e-12;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |xi: Vec<f64>, value: f64| {
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, xi));
        }
    };

    if k == 1 {
        if g_bar[0].iter().all(|g| *g <= TOL) {
            consider(vec![1.0], f_bar[0]);
        }
    } else {
        let free = k - 2;
        let (a, b) = (k - 2, k - 1);
        let mut counts = vec![0usize; free];
        'outer: loop {
            let used: usize = counts.iter().sum();
            let mut xi = vec![0.0; k];
            for (x, c) in counts.iter().enumerate() {
                xi[x] = *c as f64 / resolution as f64;
            }
            let rest = 1.0 - used as f64 / resolution as f64;
            let base_f: f64 = (0..free).map(|x| xi[x] * f_bar[x]).sum::<f64>() + rest * f_bar[b];
            let slope_f = f_bar[a] - f_bar[b];
            let (mut lo, mut hi) = (0.0f64, rest);
            for i in 0..m {
                let base: f64 = (0..free).map(|x| xi[x] * g_bar[x][i]).sum::<f64>() + rest * g_bar[b][i];
                let slope = g_bar[a][i] - g_bar[b][i];
                if slope.abs() < 1e-15 {
                    if base > TOL {
                        lo = 1.0;
                        hi = 0.0;
                    }
                } else if slope > 0.0 {
                    hi = hi.min((TOL - base) / slope);
                } else {
                    lo = lo.max((TOL - base) / slope);
                }
            }
            if lo <= hi {
                for s in [lo, hi] {
                    let mut p = xi.clone();
                    p[a] = s;
                    p[b] = rest - s;
                    consider(p, base_f + slope_f * s);
                }
            }
            // Next composition of at most `resolution` over the free coords.
            let mut pos = 0;
            loop {
                if pos == free {
                    break 'outer;
                }
                counts[pos] += 1;
                if counts.iter().sum::<usize>() <= resolution {
                    break;
                }
                counts[pos] = 0;
                pos += 1;
            }
        }
    }
    Ok(match best {
        Some((value, xi)) => BruteForceResult {
            value: Some(value),
            mixture: Some(xi),
        },
        None => BruteForceResult {
            value: None,
            mixture: None,
        },
    })
}

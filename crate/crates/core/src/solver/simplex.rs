//! Bounded-variable revised primal simplex with an explicit dense basis inverse.

use super::kkt::residuals_from_parts;
use super::{Program, Sense, Solution, Status};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub pivot_tol: f64,
    pub feas_tol: f64,
    pub opt_tol: f64,
    /// Pivots between fresh inversions of the basis.
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    /// Multi-segment variables whose column has more nonzeros than this get a
    /// link row instead of copying the column into every segment.
    pub link_threshold: usize,
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-10,
            feas_tol: 1e-9,
            opt_tol: 1e-9,
            refactor_every: 100,
            bland_after: 50,
            link_threshold: 2,
            max_iterations: None,
        }
    }
}

pub fn solve(prog: &Program) -> Result<Solution> {
    solve_with(prog, &SolverOptions::default())
}

pub fn solve_with(prog: &Program, opts: &SolverOptions) -> Result<Solution> {
    prog.validate().map_err(Error::Solver)?;
    let mut lp = StandardForm::build(prog, opts);
    let outcome = lp.run(opts)?;
    let values = lp.structural_values(prog);
    let iterations = lp.iterations;
    match outcome {
        Outcome::Optimal => {
            let duals: Vec<f64> = lp.row_duals[..prog.constraints.len()].to_vec();
            let residuals = residuals_from_parts(prog, &values, &duals);
            Ok(Solution {
                status: Status::Optimal,
                objective: prog.objective_value(&values),
                values,
                duals,
                residuals,
                violated_row: None,
                iterations,
            })
        }
        Outcome::Infeasible(row) => {
            let duals = vec![0.0; prog.constraints.len()];
            let residuals = residuals_from_parts(prog, &values, &duals);
            Ok(Solution {
                status: Status::Infeasible,
                objective: f64::NAN,
                values,
                duals,
                residuals,
                violated_row: Some(row),
                iterations,
            })
        }
    }
}

enum Outcome {
    Optimal,
    Infeasible(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Origin {
    Segment { var: usize },
    Linked { var: usize },
    Logical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Place {
    Basic(usize),
    Lower,
    Upper,
}

struct StandardForm {
    m: usize,
    user_rows: usize,
    cols: Vec<Vec<(usize, f64)>>,
    origin: Vec<Origin>,
    lo: Vec<f64>,
    up: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    place: Vec<Place>,
    basis: Vec<usize>,
    /// Row-major inverse of the basis matrix.
    binv: Vec<f64>,
    row_duals: Vec<f64>,
    iterations: usize,
}

impl StandardForm {
    fn build(prog: &Program, opts: &SolverOptions) -> Self {
        let n = prog.variables.len();
        let user_rows = prog.constraints.len();
        let mut var_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut shift = vec![0.0; user_rows];
        for (i, row) in prog.constraints.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                match var_cols[j].last_mut() {
                    Some(last) if last.0 == i => last.1 += a,
                    _ => var_cols[j].push((i, a)),
                }
                shift[i] += a * prog.variables[j].lower;
            }
        }

        let mut cols = Vec::new();
        let mut origin = Vec::new();
        let mut lo = Vec::new();
        let mut up = Vec::new();
        let mut cost = Vec::new();
        let mut link_rows = 0usize;

        for (j, var) in prog.variables.iter().enumerate() {
            let segs = merge_equal_slopes(&var.segments);
            if segs.is_empty() {
                continue;
            }
            if segs.len() > 1 && var_cols[j].len() > opts.link_threshold {
                let link = user_rows + link_rows;
                link_rows += 1;
                let mut col = var_cols[j].clone();
                col.push((link, 1.0));
                cols.push(col);
                origin.push(Origin::Linked { var: j });
                lo.push(0.0);
                up.push(var.upper - var.lower);
                cost.push(0.0);
                for &(width, slope) in &segs {
                    cols.push(vec![(link, -1.0)]);
                    origin.push(Origin::Segment { var: j });
                    lo.push(0.0);
                    up.push(width);
                    cost.push(-slope);
                }
            } else {
                for &(width, slope) in &segs {
                    cols.push(var_cols[j].clone());
                    origin.push(Origin::Segment { var: j });
                    lo.push(0.0);
                    up.push(width);
                    cost.push(-slope);
                }
            }
        }

        let m = user_rows + link_rows;
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            let (l, u) = if i < user_rows {
                let row = &prog.constraints[i];
                let rhs = row.rhs - shift[i];
                match row.sense {
                    Sense::Eq => (rhs, rhs),
                    Sense::Le => (f64::NEG_INFINITY, rhs),
                    Sense::Ge => (rhs, f64::INFINITY),
                }
            } else {
                (0.0, 0.0)
            };
            basis.push(cols.len());
            cols.push(vec![(i, -1.0)]);
            origin.push(Origin::Logical);
            lo.push(l);
            up.push(u);
            cost.push(0.0);
        }

        let total = cols.len();
        let mut place = vec![Place::Lower; total];
        for (k, &c) in basis.iter().enumerate() {
            place[c] = Place::Basic(k);
        }
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = -1.0;
        }
        let mut lp = Self {
            m,
            user_rows,
            x: lo.iter().map(|&l| if l.is_finite() { l } else { 0.0 }).collect(),
            cols,
            origin,
            lo,
            up,
            cost,
            place,
            basis,
            binv,
            row_duals: vec![0.0; m],
            iterations: 0,
        };
        lp.recompute_basic_values();
        lp
    }

    fn run(&mut self, opts: &SolverOptions) -> Result<Outcome> {
        let m = self.m;
        let total = self.cols.len();
        let max_iter = opts
            .max_iterations
            .unwrap_or(200_000 + 50 * (m + total));
        let mut fresh = true;
        let mut since_refactor = 0usize;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        let mut c_basic = vec![0.0; m];
        let mut y = vec![0.0; m];
        let mut alpha = vec![0.0; m];

        loop {
            if self.iterations >= max_iter {
                return Err(Error::Solver(format!(
                    "iteration guard exceeded after {} pivots",
                    self.iterations
                )));
            }

            let phase_one = self.basic_infeasibility(opts.feas_tol) > 0.0;
            for k in 0..m {
                let c = self.basis[k];
                c_basic[k] = if phase_one {
                    let v = self.x[c];
                    if v < self.lo[c] - opts.feas_tol {
                        -1.0
                    } else if v > self.up[c] + opts.feas_tol {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    self.cost[c]
                };
            }
            self.btran(&c_basic, &mut y);

            // pricing
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..total {
                let at_upper = match self.place[j] {
                    Place::Basic(_) => continue,
                    Place::Lower => false,
                    Place::Upper => true,
                };
                if self.up[j] - self.lo[j] <= 0.0 {
                    continue;
                }
                let cj = if phase_one { 0.0 } else { self.cost[j] };
                let d = cj - self.cols[j].iter().map(|&(i, a)| y[i] * a).sum::<f64>();
                let eligible = if at_upper { d > opts.opt_tol } else { d < -opts.opt_tol };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.map_or(true, |(_, best)| d.abs() > best.abs()) {
                    entering = Some((j, d));
                }
            }

            let Some((q, _dq)) = entering else {
                if !fresh {
                    self.refactor()?;
                    fresh = true;
                    since_refactor = 0;
                    continue;
                }
                if phase_one {
                    return Ok(Outcome::Infeasible(self.violated_row(opts.feas_tol)));
                }
                for (i, yi) in y.iter().enumerate() {
                    self.row_duals[i] = -yi;
                }
                return Ok(Outcome::Optimal);
            };

            self.ftran(q, &mut alpha);
            let sigma = if self.place[q] == Place::Upper { -1.0 } else { 1.0 };
            let (theta, leave) = self.ratio_test(&alpha, sigma, q, phase_one, bland, opts);
            if !theta.is_finite() {
                return Err(Error::Solver("unbounded direction in bounded program".into()));
            }

            self.x[q] += sigma * theta;
            if theta != 0.0 {
                for k in 0..m {
                    if alpha[k] != 0.0 {
                        self.x[self.basis[k]] -= sigma * theta * alpha[k];
                    }
                }
            }
            self.iterations += 1;
            if theta <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run >= opts.bland_after {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }

            match leave {
                None => {
                    // bound flip
                    if sigma > 0.0 {
                        self.x[q] = self.up[q];
                        self.place[q] = Place::Upper;
                    } else {
                        self.x[q] = self.lo[q];
                        self.place[q] = Place::Lower;
                    }
                }
                Some((r, to_upper)) => {
                    let out = self.basis[r];
                    if to_upper {
                        self.x[out] = self.up[out];
                        self.place[out] = Place::Upper;
                    } else {
                        self.x[out] = self.lo[out];
                        self.place[out] = Place::Lower;
                    }
                    self.basis[r] = q;
                    self.place[q] = Place::Basic(r);
                    self.pivot_inverse(r, &alpha);
                    since_refactor += 1;
                    if since_refactor >= opts.refactor_every {
                        self.refactor()?;
                        since_refactor = 0;
                    }
                }
            }
            fresh = false;
        }
    }

    /// Returns the step length and the leaving (position, goes-to-upper), or
    /// `None` for a bound flip of the entering column.
    fn ratio_test(
        &self,
        alpha: &[f64],
        sigma: f64,
        q: usize,
        phase_one: bool,
        bland: bool,
        opts: &SolverOptions,
    ) -> (f64, Option<(usize, bool)>) {
        let range = self.up[q] - self.lo[q];
        // (position, exact step, relaxed step, to_upper)
        let mut candidates: Vec<(usize, f64, f64, bool)> = Vec::new();
        for k in 0..self.m {
            let a = alpha[k];
            if a.abs() <= opts.pivot_tol {
                continue;
            }
            let c = self.basis[k];
            let rate = -sigma * a;
            let v = self.x[c];
            let (l, u) = (self.lo[c], self.up[c]);
            let below = v < l - opts.feas_tol;
            let above = v > u + opts.feas_tol;
            let (dist, to_upper) = if rate > 0.0 {
                if phase_one && below {
                    (l - v, false)
                } else if phase_one && above {
                    continue;
                } else if u.is_finite() {
                    ((u - v).max(0.0), true)
                } else {
                    continue;
                }
            } else if phase_one && above {
                (v - u, true)
            } else if phase_one && below {
                continue;
            } else if l.is_finite() {
                ((v - l).max(0.0), false)
            } else {
                continue;
            };
            let r = rate.abs();
            candidates.push((k, dist / r, (dist + opts.feas_tol) / r, to_upper));
        }

        if candidates.is_empty() {
            return (range, None);
        }

        let choice = if bland {
            let min_t = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            let tie = 1e-12 * (1.0 + min_t);
            candidates
                .iter()
                .filter(|c| c.1 <= min_t + tie)
                .min_by_key(|c| self.basis[c.0])
                .copied()
                .unwrap()
        } else {
            // Harris two-pass: bound the step with relaxed distances, then
            // take the largest pivot among the rows that fit.
            let bound = candidates.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
            candidates
                .iter()
                .filter(|c| c.1 <= bound)
                .max_by(|a, b| {
                    alpha[a.0]
                        .abs()
                        .partial_cmp(&alpha[b.0].abs())
                        .unwrap()
                        .then(b.0.cmp(&a.0))
                })
                .copied()
                .unwrap()
        };

        if range < choice.1 {
            (range, None)
        } else {
            (choice.1.max(0.0), Some((choice.0, choice.3)))
        }
    }

    fn basic_infeasibility(&self, tol: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for &c in &self.basis {
            let v = self.x[c];
            let viol = (self.lo[c] - v).max(v - self.up[c]);
            if viol > tol {
                worst = worst.max(viol);
            }
        }
        worst
    }

    fn violated_row(&self, tol: f64) -> usize {
        let mut best = (0usize, 0.0);
        for &c in &self.basis {
            let v = self.x[c];
            let viol = (self.lo[c] - v).max(v - self.up[c]);
            if viol > tol && viol > best.1 {
                let row = match self.origin[c] {
                    Origin::Logical => self.cols[c][0].0,
                    _ => self.cols[c].first().map_or(0, |e| e.0),
                };
                best = (row, viol);
            }
        }
        best.0.min(self.user_rows.saturating_sub(1))
    }

    /// y^T = c_B^T B^{-1}
    fn btran(&self, c_basic: &[f64], y: &mut [f64]) {
        let m = self.m;
        y.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..m {
            let c = c_basic[k];
            if c == 0.0 {
                continue;
            }
            let row = &self.binv[k * m..(k + 1) * m];
            for (yi, &b) in y.iter_mut().zip(row) {
                *yi += c * b;
            }
        }
    }

    /// alpha = B^{-1} a_q
    fn ftran(&self, q: usize, alpha: &mut [f64]) {
        let m = self.m;
        alpha.iter_mut().for_each(|v| *v = 0.0);
        for &(i, a) in &self.cols[q] {
            for k in 0..m {
                alpha[k] += self.binv[k * m + i] * a;
            }
        }
    }

    fn pivot_inverse(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[r];
        let mut pivot_row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
        for v in pivot_row.iter_mut() {
            *v /= piv;
        }
        for k in 0..m {
            if k == r || alpha[k] == 0.0 {
                continue;
            }
            let f = alpha[k];
            let row = &mut self.binv[k * m..(k + 1) * m];
            for (b, &p) in row.iter_mut().zip(&pivot_row) {
                if p != 0.0 {
                    *b -= f * p;
                }
            }
        }
        self.binv[r * m..(r + 1) * m].copy_from_slice(&pivot_row);
    }

    /// Fresh Gauss-Jordan inversion of the current basis.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for (k, &c) in self.basis.iter().enumerate() {
            for &(i, a) in &self.cols[c] {
                b[i * m + k] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for k in 0..m {
            let mut p = k;
            let mut best = b[k * m + k].abs();
            for i in (k + 1)..m {
                let v = b[i * m + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-14 {
                return Err(Error::Solver("singular basis".into()));
            }
            if p != k {
                for j in 0..m {
                    b.swap(k * m + j, p * m + j);
                    inv.swap(k * m + j, p * m + j);
                }
            }
            let d = b[k * m + k];
            for j in 0..m {
                b[k * m + j] /= d;
                inv[k * m + j] /= d;
            }
            let (prow_b, prow_i): (Vec<(usize, f64)>, Vec<(usize, f64)>) = (
                (k..m)
                    .filter_map(|j| {
                        let v = b[k * m + j];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect(),
                (0..m)
                    .filter_map(|j| {
                        let v = inv[k * m + j];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect(),
            );
            for i in 0..m {
                if i == k {
                    continue;
                }
                let f = b[i * m + k];
                if f == 0.0 {
                    continue;
                }
                for &(j, v) in &prow_b {
                    b[i * m + j] -= f * v;
                }
                for &(j, v) in &prow_i {
                    inv[i * m + j] -= f * v;
                }
            }
        }
        self.binv = inv;
        self.recompute_basic_values();
        Ok(())
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut rhs = vec![0.0; m];
        for (j, col) in self.cols.iter().enumerate() {
            if matches!(self.place[j], Place::Basic(_)) {
                continue;
            }
            let v = self.x[j];
            if v == 0.0 {
                continue;
            }
            for &(i, a) in col {
                rhs[i] -= a * v;
            }
        }
        for k in 0..m {
            let row = &self.binv[k * m..(k + 1) * m];
            let v: f64 = row.iter().zip(&rhs).map(|(b, r)| b * r).sum();
            self.x[self.basis[k]] = v;
        }
    }

    fn structural_values(&self, prog: &Program) -> Vec<f64> {
        let mut values: Vec<f64> = prog.variables.iter().map(|v| v.lower).collect();
        let mut linked = vec![false; values.len()];
        for (c, o) in self.origin.iter().enumerate() {
            if let Origin::Linked { var } = *o {
                linked[var] = true;
                values[var] += self.x[c];
            }
        }
        for (c, o) in self.origin.iter().enumerate() {
            if let Origin::Segment { var } = *o {
                if !linked[var] {
                    values[var] += self.x[c];
                }
            }
        }
        for (v, var) in values.iter_mut().zip(&prog.variables) {
            *v = v.clamp(var.lower, var.upper);
        }
        values
    }
}

fn merge_equal_slopes(segments: &[super::Segment]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(segments.len());
    for s in segments {
        if s.width <= 0.0 {
            continue;
        }
        match out.last_mut() {
            Some(last) if (last.1 - s.slope).abs() <= 1e-14 * (1.0 + s.slope.abs()) => {
                last.0 += s.width;
            }
            _ => out.push((s.width, s.slope)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Variable;

    #[test]
    fn one_dimensional_lp() {
        let mut p = Program::new();
        let x = p.add_variable(Variable::linear("x", 0.0, 10.0, 1.0));
        p.add_constraint("cap", vec![(x, 1.0)], Sense::Le, 3.0);
        let s = solve(&p).unwrap();
        assert!(s.is_optimal());
        assert!((s.values[0] - 3.0).abs() < 1e-12);
        assert!((s.duals[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn segment_crossing() {
        let mut p = Program::new();
        let x = p.add_variable(Variable::piecewise("x", &[0.0, 1.0, 2.0], &[0.0, 5.0, 6.0]).unwrap());
        p.add_constraint("cap", vec![(x, 1.0)], Sense::Le, 1.5);
        let s = solve(&p).unwrap();
        assert!((s.values[0] - 1.5).abs() < 1e-12);
        assert!((s.objective - 5.5).abs() < 1e-12);
        assert!((s.duals[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linked_variable_matches_substituted() {
        let build = |threshold| {
            let mut p = Program::new();
            let x = p.add_variable(
                Variable::piecewise("x", &[-1.0, 0.0, 1.0, 2.0], &[-4.0, 0.0, 1.0, 1.5]).unwrap(),
            );
            let y = p.add_variable(Variable::linear("y", 0.0, 2.0, 0.3));
            p.add_constraint("a", vec![(x, 1.0), (y, 1.0)], Sense::Le, 2.2);
            p.add_constraint("b", vec![(x, 2.0), (y, -1.0)], Sense::Ge, -3.0);
            p.add_constraint("c", vec![(x, 1.0), (y, 0.5)], Sense::Le, 1.9);
            let opts = SolverOptions {
                link_threshold: threshold,
                ..Default::default()
            };
            solve_with(&p, &opts).unwrap()
        };
        let a = build(0);
        let b = build(usize::MAX);
        assert!((a.objective - b.objective).abs() < 1e-12);
        for (u, v) in a.duals.iter().zip(&b.duals) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_infeasible_row() {
        let mut p = Program::new();
        let x = p.add_variable(Variable::linear("x", 0.0, 1.0, 1.0));
        p.add_constraint("floor", vec![(x, 1.0)], Sense::Ge, 2.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, Status::Infeasible);
        assert_eq!(s.violated_row, Some(0));
    }

    #[test]
    fn empty_program_is_optimal() {
        let s = solve(&Program::new()).unwrap();
        assert!(s.is_optimal());
        assert_eq!(s.objective, 0.0);
    }
}

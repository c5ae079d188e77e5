//! Robust access auction: assembly, clearing, prices and certification.
//!
//! The DSO sells each aggregator an injection range `[0, C̄]` and a
//! withdrawal range `[C̲, 0]` per bus. Network safety for every dispatch in
//! the resulting box is enforced through the sign split `A = A₊ − A₋`.
//!
//! Sign conventions for duals (all in $/MW):
//! `λ̄ = −∂S*/∂ε̄` and `λ̲ = ∂S*/∂ε̲`, where `ε̄`, `ε̲` perturb the right-hand
//! sides of the two balance rows. Both are nonnegative when the DSO cost is
//! increasing in access magnitude. `μ̄, μ̲ ≥ 0` price the upper and lower
//! network rows.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dera::{AccessInterval, BidCurve, DeraBids, Direction};
use crate::error::{Error, Result};
use crate::net_model::SensitivityBundle;
use crate::solver::{solve, KktResiduals, Program, Segment, Sense, Solution, Variable};

/// `j(x) = (b/2)x² − a·x`, applied to injection aggregates and to withdrawal magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsoCost {
    pub a_coeff: f64,
    pub b_coeff: f64,
}

impl DsoCost {
    pub fn new(a_coeff: f64, b_coeff: f64) -> Result<Self> {
        if !(b_coeff >= 0.0) {
            return Err(Error::InvalidParameter(format!("DSO cost curvature {b_coeff} is negative")));
        }
        Ok(Self { a_coeff, b_coeff })
    }

    pub fn j(&self, x: f64) -> f64 {
        0.5 * self.b_coeff * x * x - self.a_coeff * x
    }

    pub fn j_prime(&self, x: f64) -> f64 {
        self.b_coeff * x - self.a_coeff
    }

    /// `J(P̄, P̲) = Σ j(P̄ᵢ) + Σ j(−P̲ᵢ)`.
    pub fn total(&self, p_hi: &[f64], p_lo: &[f64]) -> f64 {
        p_hi.iter().map(|&x| self.j(x)).sum::<f64>() + p_lo.iter().map(|&x| self.j(-x)).sum::<f64>()
    }
}

impl Default for DsoCost {
    fn default() -> Self {
        Self {
            a_coeff: -0.096,
            b_coeff: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuctionOptions {
    /// Uniform segments per bus and direction in the linearized DSO cost.
    pub j_segments: usize,
}

impl Default for AuctionOptions {
    fn default() -> Self {
        Self { j_segments: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionInstance {
    pub bundle: SensitivityBundle,
    pub bids: Vec<DeraBids>,
    /// Utility-customer range per non-reference bus (index `j` is bus `j + 2`), MW.
    pub utility_lo: Vec<f64>,
    pub utility_hi: Vec<f64>,
    pub cost: DsoCost,
    pub options: AuctionOptions,
}

impl AuctionInstance {
    pub fn new(
        bundle: SensitivityBundle,
        bids: Vec<DeraBids>,
        utility_lo: Vec<f64>,
        utility_hi: Vec<f64>,
        cost: DsoCost,
    ) -> Result<Self> {
        let inst = Self {
            bundle,
            bids,
            utility_lo,
            utility_hi,
            cost,
            options: AuctionOptions::default(),
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn dim(&self) -> usize {
        self.bundle.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        for got in [self.utility_lo.len(), self.utility_hi.len()] {
            if got != n {
                return Err(Error::Dimension { expected: n, got });
            }
        }
        for (i, (&lo, &hi)) in self.utility_lo.iter().zip(&self.utility_hi).enumerate() {
            if lo > hi {
                return Err(Error::InvertedInterval { index: i, lo, hi });
            }
        }
        for d in &self.bids {
            for c in &d.curves {
                if c.bus < 2 || c.bus > n + 1 {
                    return Err(Error::BidBusMismatch(c.bus));
                }
                let wrong_sign = c.breakpoints.iter().any(|&(cap, _)| match c.direction {
                    Direction::Injection => cap < 0.0,
                    Direction::Withdrawal => cap > 0.0,
                });
                if wrong_sign {
                    return Err(Error::InvalidParameter(format!(
                        "{}: bid at bus {} has capacities of the wrong sign",
                        d.id, c.bus
                    )));
                }
            }
        }
        if self.options.j_segments == 0 {
            return Err(Error::InvalidParameter("DSO cost needs at least one segment".into()));
        }
        Ok(())
    }
}

/// Where each decision lives in the assembled program.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// `c_hi[k][j]`: injection variable of aggregator `k` at bus `j + 2`.
    pub c_hi: Vec<Vec<Option<usize>>>,
    pub c_lo: Vec<Vec<Option<usize>>>,
    pub p_hi: Vec<usize>,
    pub p_lo: Vec<usize>,
    pub balance_hi: Vec<usize>,
    pub balance_lo: Vec<usize>,
    /// Row index of the upper / lower network constraint for each row of `A`, if finite.
    pub net_hi: Vec<Option<usize>>,
    pub net_lo: Vec<Option<usize>>,
    /// Width of one linearization segment of the DSO cost, per bus (hi, lo).
    pub j_width: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub program: Program,
    pub layout: Layout,
}

fn bid_variable(name: String, curve: &BidCurve) -> Variable {
    let segs = curve.segments_mw();
    let cap: f64 = segs.iter().map(|s| s.0).sum();
    match curve.direction {
        Direction::Injection => Variable {
            name,
            lower: 0.0,
            upper: cap,
            offset: 0.0,
            segments: segs
                .iter()
                .map(|&(width, slope)| Segment { width, slope })
                .collect(),
        },
        Direction::Withdrawal => Variable {
            name,
            lower: -cap,
            upper: 0.0,
            offset: segs.iter().map(|&(w, s)| w * s).sum(),
            segments: segs
                .iter()
                .rev()
                .map(|&(width, slope)| Segment { width, slope: -slope })
                .collect(),
        },
    }
}

/// Concave term `−J` over `[lo, hi]` sampled at `n + 1` uniform breakpoints.
fn cost_variable(name: String, lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<(Variable, f64)> {
    let width = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|k| if k == n { hi } else { lo + width * k as f64 }).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| -f(x)).collect();
    let var = Variable::piecewise(name, &xs, &vals).map_err(Error::Solver)?;
    Ok((var, width))
}

/// Builds the deterministic robust program.
pub fn assemble(inst: &AuctionInstance) -> Result<Assembled> {
    inst.validate()?;
    let n = inst.dim();
    let nseg = inst.options.j_segments;
    let mut prog = Program::new();
    let mut layout = Layout {
        c_hi: Vec::with_capacity(inst.bids.len()),
        c_lo: Vec::with_capacity(inst.bids.len()),
        p_hi: Vec::with_capacity(n),
        p_lo: Vec::with_capacity(n),
        balance_hi: Vec::with_capacity(n),
        balance_lo: Vec::with_capacity(n),
        net_hi: Vec::with_capacity(2 * n),
        net_lo: Vec::with_capacity(2 * n),
        j_width: Vec::with_capacity(n),
    };

    let mut cap_hi = vec![0.0; n];
    let mut cap_lo = vec![0.0; n];
    for d in &inst.bids {
        let mut hi = vec![None; n];
        let mut lo = vec![None; n];
        for c in &d.curves {
            let j = c.bus - 2;
            let slot = match c.direction {
                Direction::Injection => &mut hi[j],
                Direction::Withdrawal => &mut lo[j],
            };
            if slot.is_some() {
                return Err(Error::InvalidParameter(format!(
                    "{}: two {:?} bids at bus {}",
                    d.id, c.direction, c.bus
                )));
            }
            let tag = match c.direction {
                Direction::Injection => "c_hi",
                Direction::Withdrawal => "c_lo",
            };
            let var = bid_variable(format!("{tag}[{}][{}]", d.id, c.bus), c);
            match c.direction {
                Direction::Injection => cap_hi[j] += var.upper,
                Direction::Withdrawal => cap_lo[j] += var.lower,
            }
            *slot = Some(prog.add_variable(var));
        }
        layout.c_hi.push(hi);
        layout.c_lo.push(lo);
    }

    for j in 0..n {
        let bus = j + 2;
        // Aggregates are pinned by the balance rows; the cost domain is padded
        // so its bounds never bind and all price information sits in λ.
        let (lo, hi) = (inst.utility_hi[j], inst.utility_hi[j] + cap_hi[j]);
        let pad = ((hi - lo) / (2 * nseg) as f64).max(1e-3);
        let (var, w_hi) = cost_variable(format!("p_hi[{bus}]"), lo - pad, hi + pad, nseg, |x| inst.cost.j(x))?;
        layout.p_hi.push(prog.add_variable(var));
        let (lo, hi) = (inst.utility_lo[j] + cap_lo[j], inst.utility_lo[j]);
        let pad = ((hi - lo) / (2 * nseg) as f64).max(1e-3);
        let (var, w_lo) = cost_variable(format!("p_lo[{bus}]"), lo - pad, hi + pad, nseg, |x| inst.cost.j(-x))?;
        layout.p_lo.push(prog.add_variable(var));
        layout.j_width.push((w_hi, w_lo));
    }

    for j in 0..n {
        let mut row = vec![(layout.p_hi[j], 1.0)];
        row.extend(layout.c_hi.iter().filter_map(|v| v[j]).map(|c| (c, -1.0)));
        let r = prog.add_constraint(format!("lambda_hi[{}]", j + 2), row, Sense::Eq, inst.utility_hi[j]);
        layout.balance_hi.push(r);
    }
    for j in 0..n {
        let mut row = vec![(layout.p_lo[j], 1.0)];
        row.extend(layout.c_lo.iter().filter_map(|v| v[j]).map(|c| (c, -1.0)));
        let r = prog.add_constraint(format!("lambda_lo[{}]", j + 2), row, Sense::Eq, inst.utility_lo[j]);
        layout.balance_lo.push(r);
    }

    let ap = inst.bundle.a_plus();
    let am = inst.bundle.a_minus();
    for r in 0..2 * n {
        let b_hi = inst.bundle.limit_hi[r];
        layout.net_hi.push(if b_hi.is_finite() {
            let mut row = Vec::new();
            for j in 0..n {
                if ap[(r, j)] != 0.0 {
                    row.push((layout.p_hi[j], ap[(r, j)]));
                }
                if am[(r, j)] != 0.0 {
                    row.push((layout.p_lo[j], -am[(r, j)]));
                }
            }
            Some(prog.add_constraint(format!("mu_hi[{r}]"), row, Sense::Le, b_hi))
        } else {
            None
        });
    }
    for r in 0..2 * n {
        let b_lo = inst.bundle.limit_lo[r];
        layout.net_lo.push(if b_lo.is_finite() {
            let mut row = Vec::new();
            for j in 0..n {
                if ap[(r, j)] != 0.0 {
                    row.push((layout.p_lo[j], ap[(r, j)]));
                }
                if am[(r, j)] != 0.0 {
                    row.push((layout.p_hi[j], -am[(r, j)]));
                }
            }
            Some(prog.add_constraint(format!("mu_lo[{r}]"), row, Sense::Ge, b_lo))
        } else {
            None
        });
    }
    Ok(Assembled { program: prog, layout })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeraAllocation {
    pub id: String,
    /// `(bus, interval)` for every bus the aggregator bid on.
    pub per_bus: Vec<(usize, AccessInterval)>,
}

/// Multipliers of the clearing program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda_hi: Vec<f64>,
    pub lambda_lo: Vec<f64>,
    /// One entry per row of `A`; zero for rows without a finite limit.
    pub mu_hi: Vec<f64>,
    pub mu_lo: Vec<f64>,
    /// Per aggregator per bid bus: multipliers of `C̄ ≥ 0` and `C̄ ≤ C̄max`.
    pub eta_lo: Vec<Vec<f64>>,
    pub eta_hi: Vec<Vec<f64>>,
    /// Per aggregator per bid bus: multipliers of `C̲ ≥ C̲max` and `C̲ ≤ 0`.
    pub xi_lo: Vec<Vec<f64>>,
    pub xi_hi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingResult {
    pub allocations: Vec<DeraAllocation>,
    pub p_agg_hi: Vec<f64>,
    pub p_agg_lo: Vec<f64>,
    /// Bid benefits (including each aggregator's constants) minus the quadratic DSO cost.
    pub social_surplus: f64,
    /// Optimal value of the linearized program.
    pub pwl_objective: f64,
    /// Linearized minus quadratic DSO cost at the optimum (≥ 0).
    pub gap_pwl: f64,
    pub duals: DualSolution,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub assembled: Assembled,
    pub solution: Solution,
}

fn block_of(layout: &Layout, row: usize) -> (String, usize) {
    let find = |rows: &[usize]| rows.iter().position(|&r| r == row);
    let find_opt = |rows: &[Option<usize>]| rows.iter().position(|&r| r == Some(row));
    if let Some(j) = find(&layout.balance_hi) {
        return ("injection balance".into(), j);
    }
    if let Some(j) = find(&layout.balance_lo) {
        return ("withdrawal balance".into(), j);
    }
    if let Some(r) = find_opt(&layout.net_hi) {
        return ("upper network limit".into(), r);
    }
    if let Some(r) = find_opt(&layout.net_lo) {
        return ("lower network limit".into(), r);
    }
    ("unknown".into(), row)
}

/// Solves the auction and extracts allocations, prices and surplus.
pub fn clear(inst: &AuctionInstance) -> Result<ClearingResult> {
    let assembled = assemble(inst)?;
    let sol = solve(&assembled.program)?;
    if !sol.is_optimal() {
        let (block, row) = block_of(&assembled.layout, sol.violated_row.unwrap_or(usize::MAX));
        return Err(Error::Infeasible { block, row });
    }
    finish(inst, assembled, sol)
}

fn finish(inst: &AuctionInstance, assembled: Assembled, sol: Solution) -> Result<ClearingResult> {
    let n = inst.dim();
    let lay = &assembled.layout;
    let prog = &assembled.program;
    let x = &sol.values;

    let p_agg_hi: Vec<f64> = lay.p_hi.iter().map(|&v| x[v]).collect();
    let p_agg_lo: Vec<f64> = lay.p_lo.iter().map(|&v| x[v]).collect();
    let lambda_hi: Vec<f64> = lay.balance_hi.iter().map(|&r| -sol.duals[r]).collect();
    let lambda_lo: Vec<f64> = lay.balance_lo.iter().map(|&r| sol.duals[r]).collect();
    let mu_hi: Vec<f64> = lay.net_hi.iter().map(|r| r.map_or(0.0, |r| sol.duals[r].max(0.0))).collect();
    let mu_lo: Vec<f64> = lay.net_lo.iter().map(|r| r.map_or(0.0, |r| (-sol.duals[r]).max(0.0))).collect();

    let tol = 1e-9;
    let mut allocations = Vec::with_capacity(inst.bids.len());
    let (mut eta_lo, mut eta_hi, mut xi_lo, mut xi_hi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut bid_benefit = 0.0;
    for (k, d) in inst.bids.iter().enumerate() {
        let mut per_bus: Vec<(usize, AccessInterval)> = Vec::new();
        let (mut el, mut eh, mut xl, mut xh) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for j in 0..n {
            let (vh, vl) = (lay.c_hi[k][j], lay.c_lo[k][j]);
            if vh.is_none() && vl.is_none() {
                continue;
            }
            let c_hi = vh.map_or(0.0, |v| x[v]);
            let c_lo = vl.map_or(0.0, |v| x[v]);
            per_bus.push((j + 2, AccessInterval { c_lo, c_hi }));
            let (mut a, mut b, mut c, mut e) = (0.0, 0.0, 0.0, 0.0);
            if let Some(v) = vh {
                let var = &prog.variables[v];
                let (right, left) = var.slope_interval(x[v], tol);
                if x[v] <= var.lower + tol && right.is_finite() {
                    a = (lambda_hi[j] - right).max(0.0);
                }
                if x[v] >= var.upper - tol && left.is_finite() {
                    b = (left - lambda_hi[j]).max(0.0);
                }
            }
            if let Some(v) = vl {
                let var = &prog.variables[v];
                let (right, left) = var.slope_interval(x[v], tol);
                if x[v] <= var.lower + tol && right.is_finite() {
                    c = (-(right + lambda_lo[j])).max(0.0);
                }
                if x[v] >= var.upper - tol && left.is_finite() {
                    e = (left + lambda_lo[j]).max(0.0);
                }
            }
            el.push(a);
            eh.push(b);
            xl.push(c);
            xh.push(e);
        }
        bid_benefit += d.surplus_at(&per_bus)?;
        allocations.push(DeraAllocation {
            id: d.id.clone(),
            per_bus,
        });
        eta_lo.push(el);
        eta_hi.push(eh);
        xi_lo.push(xl);
        xi_hi.push(xh);
    }

    let j_true = inst.cost.total(&p_agg_hi, &p_agg_lo);
    let j_pwl: f64 = -lay
        .p_hi
        .iter()
        .chain(&lay.p_lo)
        .map(|&v| prog.variables[v].value(x[v]))
        .sum::<f64>();
    Ok(ClearingResult {
        allocations,
        p_agg_hi,
        p_agg_lo,
        social_surplus: bid_benefit - j_true,
        pwl_objective: sol.objective,
        gap_pwl: j_pwl - j_true,
        duals: DualSolution {
            lambda_hi,
            lambda_lo,
            mu_hi,
            mu_lo,
            eta_lo,
            eta_hi,
            xi_lo,
            xi_hi,
        },
        kkt: sol.residuals,
        iterations: sol.iterations,
        assembled,
        solution: sol,
    })
}

/// `(λ̄ᵢ, λ̲ᵢ)` for every non-reference bus.
pub fn locational_prices(result: &ClearingResult) -> Vec<(f64, f64)> {
    result
        .duals
        .lambda_hi
        .iter()
        .copied()
        .zip(result.duals.lambda_lo.iter().copied())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriceIdentityReport {
    /// `‖λ̄ − (j′(P̄) + A₊ᵀμ̄ + A₋ᵀμ̲)‖∞` with the quadratic cost gradient.
    pub hi_residual: f64,
    /// `‖λ̲ − (j′(−P̲) + A₊ᵀμ̲ + A₋ᵀμ̄)‖∞`.
    pub lo_residual: f64,
    /// Same identities with the gradient replaced by the closest supergradient of the linearized cost.
    pub hi_residual_pwl: f64,
    pub lo_residual_pwl: f64,
    /// Largest deviation the linearization allows: `b` times the widest cost segment.
    pub pwl_allowance: f64,
}

impl PriceIdentityReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.hi_residual_pwl <= tol
            && self.lo_residual_pwl <= tol
            && self.hi_residual <= tol + self.pwl_allowance
            && self.lo_residual <= tol + self.pwl_allowance
    }
}

fn distance_to_interval(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

/// Checks that prices equal marginal DSO cost plus congestion terms.
pub fn check_price_identity(result: &ClearingResult, bundle: &SensitivityBundle, cost: &DsoCost) -> PriceIdentityReport {
    let mu_hi = DVector::from_column_slice(&result.duals.mu_hi);
    let mu_lo = DVector::from_column_slice(&result.duals.mu_lo);
    let cong_hi = bundle.a_plus().transpose() * &mu_hi + bundle.a_minus().transpose() * &mu_lo;
    let cong_lo = bundle.a_plus().transpose() * &mu_lo + bundle.a_minus().transpose() * &mu_hi;
    let lay = &result.assembled.layout;
    let prog = &result.assembled.program;
    let mut rep = PriceIdentityReport {
        hi_residual: 0.0,
        lo_residual: 0.0,
        hi_residual_pwl: 0.0,
        lo_residual_pwl: 0.0,
        pwl_allowance: 0.0,
    };
    for j in 0..result.p_agg_hi.len() {
        let (ph, pl) = (result.p_agg_hi[j], result.p_agg_lo[j]);
        let lh = result.duals.lambda_hi[j] - cong_hi[j];
        let ll = result.duals.lambda_lo[j] - cong_lo[j];
        rep.hi_residual = rep.hi_residual.max((lh - cost.j_prime(ph)).abs());
        rep.lo_residual = rep.lo_residual.max((ll - cost.j_prime(-pl)).abs());
        // the objective term is −j_pwl: its slopes are minus the cost supergradients
        let tol = 1e-9 * (1.0 + ph.abs());
        let (right, left) = prog.variables[lay.p_hi[j]].slope_interval(ph, tol);
        rep.hi_residual_pwl = rep.hi_residual_pwl.max(distance_to_interval(lh, -left, -right));
        let tol = 1e-9 * (1.0 + pl.abs());
        let (right, left) = prog.variables[lay.p_lo[j]].slope_interval(pl, tol);
        // in terms of the magnitude −P̲ the slope interval flips
        rep.lo_residual_pwl = rep.lo_residual_pwl.max(distance_to_interval(ll, right, left));
        let (wh, wl) = lay.j_width[j];
        rep.pwl_allowance = rep.pwl_allowance.max(cost.b_coeff * wh.max(wl));
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopePoint {
    pub bus: usize,
    pub lambda_hi: f64,
    pub lambda_lo: f64,
    /// One-sided finite differences of `−S*` in `ε̄` (right, left).
    pub fd_hi: (f64, f64),
    /// One-sided finite differences of `S*` in `ε̲` (right, left).
    pub fd_lo: (f64, f64),
    /// Distance of each price from the interval spanned by its two differences.
    pub err_hi: f64,
    pub err_lo: f64,
}

fn perturbed_objective(base: &Program, row: usize, delta: f64) -> Result<f64> {
    let mut prog = base.clone();
    prog.constraints[row].rhs += delta;
    let sol = solve(&prog)?;
    if !sol.is_optimal() {
        return Err(Error::Solver(format!("perturbation of row {row} is infeasible")));
    }
    Ok(sol.objective)
}

/// Compares prices with finite differences of the optimal (linearized) surplus.
///
/// The optimal value is piecewise linear in the perturbation, so a price
/// is accepted when it lies between the left and right differences.
pub fn envelope_check(result: &ClearingResult, buses: &[usize], h: f64) -> Result<Vec<EnvelopePoint>> {
    let lay = &result.assembled.layout;
    let prog = &result.assembled.program;
    let s0 = result.pwl_objective;
    let mut out = Vec::with_capacity(buses.len());
    for &bus in buses {
        let j = bus
            .checked_sub(2)
            .filter(|&j| j < lay.p_hi.len())
            .ok_or(Error::BidBusMismatch(bus))?;
        let up = perturbed_objective(prog, lay.balance_hi[j], h)?;
        let dn = perturbed_objective(prog, lay.balance_hi[j], -h)?;
        let fd_hi = (-(up - s0) / h, -(s0 - dn) / h);
        let up = perturbed_objective(prog, lay.balance_lo[j], h)?;
        let dn = perturbed_objective(prog, lay.balance_lo[j], -h)?;
        let fd_lo = ((up - s0) / h, (s0 - dn) / h);
        let lh = result.duals.lambda_hi[j];
        let ll = result.duals.lambda_lo[j];
        out.push(EnvelopePoint {
            bus,
            lambda_hi: lh,
            lambda_lo: ll,
            fd_hi,
            fd_lo,
            err_hi: distance_to_interval(lh, fd_hi.0.min(fd_hi.1), fd_hi.0.max(fd_hi.1)),
            err_lo: distance_to_interval(ll, fd_lo.0.min(fd_lo.1), fd_lo.0.max(fd_lo.1)),
        });
    }
    Ok(out)
}

/// What each aggregator owes: `Σᵢ (C̄ᵢ λ̄ᵢ − C̲ᵢ λ̲ᵢ)`, in $.
pub fn payments(result: &ClearingResult) -> Vec<(String, f64)> {
    result
        .allocations
        .iter()
        .map(|a| {
            let pay = a
                .per_bus
                .iter()
                .map(|(bus, c)| c.c_hi * result.duals.lambda_hi[bus - 2] - c.c_lo * result.duals.lambda_lo[bus - 2])
                .sum();
            (a.id.clone(), pay)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustCertificate {
    pub exact_pass: bool,
    /// Smallest slack between the worst case and a limit; negative on failure.
    pub worst_margin: f64,
    /// Row of `A` (flows first, then voltages) attaining `worst_margin`.
    pub worst_row: usize,
    /// Box vertex attaining the worst case of `worst_row`, per non-reference bus.
    pub witness: Option<Vec<f64>>,
    pub samples: usize,
    pub violations: usize,
    pub violating_profile: Option<Vec<f64>>,
}

impl RobustCertificate {
    pub fn passed(&self) -> bool {
        self.exact_pass && self.violations == 0
    }
}

pub const ROBUST_TOL: f64 = 1e-7;

/// Certifies every dispatch inside the cleared box against the network limits.
pub fn verify_robust(
    allocations: &[DeraAllocation],
    bundle: &SensitivityBundle,
    utility_lo: &[f64],
    utility_hi: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<RobustCertificate> {
    let n = bundle.dim();
    for got in [utility_lo.len(), utility_hi.len()] {
        if got != n {
            return Err(Error::Dimension { expected: n, got });
        }
    }
    let mut lo = utility_lo.to_vec();
    let mut hi = utility_hi.to_vec();
    for a in allocations {
        for &(bus, c) in &a.per_bus {
            let j = bus.checked_sub(2).filter(|&j| j < n).ok_or(Error::BidBusMismatch(bus))?;
            lo[j] += c.c_lo;
            hi[j] += c.c_hi;
        }
    }
    let (wmin, wmax) = bundle.split.worst_case(&lo, &hi)?;
    let mut worst_margin = f64::INFINITY;
    let mut worst_row = 0;
    let mut worst_upper = true;
    for r in 0..2 * n {
        let up = bundle.limit_hi[r] - wmax[r];
        let dn = wmin[r] - bundle.limit_lo[r];
        if up < worst_margin {
            worst_margin = up;
            worst_row = r;
            worst_upper = true;
        }
        if dn < worst_margin {
            worst_margin = dn;
            worst_row = r;
            worst_upper = false;
        }
    }
    let exact_pass = worst_margin >= -ROBUST_TOL;
    let witness = (!exact_pass).then(|| {
        (0..n)
            .map(|j| {
                let a = bundle.a_matrix()[(worst_row, j)];
                if (a >= 0.0) == worst_upper {
                    hi[j]
                } else {
                    lo[j]
                }
            })
            .collect()
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut violating_profile = None;
    let a = bundle.a_matrix();
    let mut p = DVector::zeros(n);
    for _ in 0..n_samples {
        for j in 0..n {
            p[j] = draw(&mut rng, utility_lo[j], utility_hi[j]);
        }
        for al in allocations {
            for &(bus, c) in &al.per_bus {
                p[bus - 2] += draw(&mut rng, c.c_lo, c.c_hi);
            }
        }
        let w = a * &p;
        let bad = (0..2 * n).any(|r| w[r] > bundle.limit_hi[r] + ROBUST_TOL || w[r] < bundle.limit_lo[r] - ROBUST_TOL);
        if bad {
            violations += 1;
            if violating_profile.is_none() {
                violating_profile = Some(p.iter().copied().collect());
            }
        }
    }
    Ok(RobustCertificate {
        exact_pass,
        worst_margin,
        worst_row,
        witness,
        samples: n_samples,
        violations,
        violating_profile,
    })
}

fn draw(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusPriceEntry {
    pub bus: usize,
    pub lambda_hi: f64,
    pub lambda_lo: f64,
    pub p_agg_hi: f64,
    pub p_agg_lo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeraBusEntry {
    pub bus: usize,
    pub c_hi: f64,
    pub c_lo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeraEntry {
    pub id: String,
    pub payment: f64,
    pub per_bus: Vec<DeraBusEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktEntry {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

/// Result file written by the clearing command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub surplus: f64,
    pub gap_pwl: f64,
    pub per_bus: Vec<BusPriceEntry>,
    pub per_dera: Vec<DeraEntry>,
    pub kkt_residuals: KktEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust_certificate: Option<RobustCertificate>,
    /// Utility range used for clearing, needed to re-verify the result.
    pub utility_lo: Vec<f64>,
    pub utility_hi: Vec<f64>,
}

impl ResultFile {
    pub fn new(result: &ClearingResult, inst: &AuctionInstance, certificate: Option<RobustCertificate>) -> Self {
        let pays = payments(result);
        Self {
            surplus: result.social_surplus,
            gap_pwl: result.gap_pwl,
            per_bus: (0..result.p_agg_hi.len())
                .map(|j| BusPriceEntry {
                    bus: j + 2,
                    lambda_hi: result.duals.lambda_hi[j],
                    lambda_lo: result.duals.lambda_lo[j],
                    p_agg_hi: result.p_agg_hi[j],
                    p_agg_lo: result.p_agg_lo[j],
                })
                .collect(),
            per_dera: result
                .allocations
                .iter()
                .zip(pays)
                .map(|(a, (_, payment))| DeraEntry {
                    id: a.id.clone(),
                    payment,
                    per_bus: a
                        .per_bus
                        .iter()
                        .map(|&(bus, c)| DeraBusEntry {
                            bus,
                            c_hi: c.c_hi,
                            c_lo: c.c_lo,
                        })
                        .collect(),
                })
                .collect(),
            kkt_residuals: KktEntry {
                stationarity: result.kkt.stationarity,
                feasibility: result.kkt.feasibility,
                complementarity: result.kkt.complementarity,
            },
            robust_certificate: certificate,
            utility_lo: inst.utility_lo.clone(),
            utility_hi: inst.utility_hi.clone(),
        }
    }

    pub fn allocations(&self) -> Vec<DeraAllocation> {
        self.per_dera
            .iter()
            .map(|d| DeraAllocation {
                id: d.id.clone(),
                per_bus: d
                    .per_bus
                    .iter()
                    .map(|e| (e.bus, AccessInterval { c_lo: e.c_lo, c_hi: e.c_hi }))
                    .collect(),
            })
            .collect()
    }

    /// Per-bus prices and capacities, one row per bus.
    pub fn prices_csv(&self) -> String {
        let mut out = String::from("bus,lambda_hi,lambda_lo,p_agg_hi,p_agg_lo\n");
        for b in &self.per_bus {
            out.push_str(&format!("{},{},{},{},{}\n", b.bus, b.lambda_hi, b.lambda_lo, b.p_agg_hi, b.p_agg_lo));
        }
        out
    }

    /// Cleared capacities, one row per aggregator and bus.
    pub fn allocations_csv(&self) -> String {
        let mut out = String::from("dera,bus,c_hi,c_lo\n");
        for d in &self.per_dera {
            for e in &d.per_bus {
                out.push_str(&format!("{},{},{},{}\n", d.id, e.bus, e.c_hi, e.c_lo));
            }
        }
        out
    }

    pub fn kkt_csv(&self) -> String {
        format!(
            "stationarity,feasibility,complementarity\n{},{},{}\n",
            self.kkt_residuals.stationarity, self.kkt_residuals.feasibility, self.kkt_residuals.complementarity
        )
    }
}

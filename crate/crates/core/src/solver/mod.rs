//! Separable concave maximization over linear constraints.
//!
//! A [`Program`] holds bounded variables, each carrying a concave
//! piecewise-linear objective term, and linear rows tagged for dual
//! reporting. [`solve`] expands every term into slope-ordered segment
//! columns and runs a bounded-variable primal simplex, returning vertex
//! duals for every row.

mod kkt;
mod simplex;

use std::fmt;
use std::io::Write;

pub use kkt::{kkt_residuals, KktResiduals};
pub use simplex::{solve, solve_with, SolverOptions};

/// Relative slack allowed when checking that slopes are nonincreasing.
const CONCAVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Eq => "=",
            Sense::Le => "<=",
            Sense::Ge => ">=",
        })
    }
}

/// One linear piece of a concave objective term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub width: f64,
    pub slope: f64,
}

/// A bounded decision variable and its concave piecewise-linear objective term.
///
/// The term is `offset + sum of slope * filled width`, filled from `lower`
/// upward; segment widths sum to `upper - lower`.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub offset: f64,
    pub segments: Vec<Segment>,
}

impl Variable {
    /// Linear objective coefficient over `[lower, upper]`.
    pub fn linear(name: impl Into<String>, lower: f64, upper: f64, slope: f64) -> Self {
        let width = upper - lower;
        Self {
            name: name.into(),
            lower,
            upper,
            offset: slope * lower,
            segments: if width > 0.0 {
                vec![Segment { width, slope }]
            } else {
                Vec::new()
            },
        }
    }

    /// Concave interpolant through `(xs[i], values[i])`; bounds are the end breakpoints.
    pub fn piecewise(name: impl Into<String>, xs: &[f64], values: &[f64]) -> Result<Self, String> {
        let name = name.into();
        if xs.len() != values.len() || xs.is_empty() {
            return Err(format!("{name}: breakpoints and values differ in length"));
        }
        let mut segments = Vec::with_capacity(xs.len().saturating_sub(1));
        for i in 1..xs.len() {
            let width = xs[i] - xs[i - 1];
            if !(width > 0.0) {
                return Err(format!("{name}: breakpoints must be strictly increasing"));
            }
            segments.push(Segment {
                width,
                slope: (values[i] - values[i - 1]) / width,
            });
        }
        let var = Self {
            name,
            lower: xs[0],
            upper: xs[xs.len() - 1],
            offset: values[0],
            segments,
        };
        var.validate()?;
        Ok(var)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.lower.is_finite() || !self.upper.is_finite() || self.lower > self.upper {
            return Err(format!("{}: bounds must be finite and ordered", self.name));
        }
        let total: f64 = self.segments.iter().map(|s| s.width).sum();
        let span = self.upper - self.lower;
        if (total - span).abs() > 1e-9 * (1.0 + span.abs()) {
            return Err(format!("{}: segment widths do not cover the bounds", self.name));
        }
        for pair in self.segments.windows(2) {
            let scale = 1.0 + pair[0].slope.abs().max(pair[1].slope.abs());
            if pair[1].slope > pair[0].slope + CONCAVITY_TOL * scale {
                return Err(format!("{}: slopes must be nonincreasing", self.name));
            }
        }
        Ok(())
    }

    /// Objective term evaluated at `x`, clamped to the bounds.
    pub fn value(&self, x: f64) -> f64 {
        let mut rest = (x - self.lower).max(0.0);
        let mut acc = self.offset;
        for seg in &self.segments {
            let take = rest.min(seg.width);
            acc += seg.slope * take;
            rest -= take;
            if rest <= 0.0 {
                break;
            }
        }
        acc
    }

    /// Superdifferential `[right slope, left slope]` of the term at `x`.
    /// Missing sides (at the bounds) are reported as `-inf` / `+inf`.
    pub fn slope_interval(&self, x: f64, tol: f64) -> (f64, f64) {
        let mut left = f64::INFINITY;
        let mut right = f64::NEG_INFINITY;
        let mut start = self.lower;
        for seg in &self.segments {
            let end = start + seg.width;
            if x > start + tol && x < end - tol {
                return (seg.slope, seg.slope);
            }
            if (x - end).abs() <= tol {
                left = seg.slope;
            }
            if (x - start).abs() <= tol && right == f64::NEG_INFINITY {
                right = seg.slope;
            }
            start = end;
        }
        (right, left)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub tag: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// Maximize the sum of concave separable terms subject to linear rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Program {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
}

impl Program {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, var: Variable) -> usize {
        self.variables.push(var);
        self.variables.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        tag: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> usize {
        self.constraints.push(Constraint {
            tag: tag.into(),
            coeffs,
            sense,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn validate(&self) -> Result<(), String> {
        for var in &self.variables {
            var.validate()?;
        }
        let n = self.variables.len();
        for row in &self.constraints {
            if !row.rhs.is_finite() {
                return Err(format!("row {}: rhs must be finite", row.tag));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(format!("row {}: variable {j} out of range", row.tag));
                }
                if !a.is_finite() {
                    return Err(format!("row {}: non-finite coefficient", row.tag));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.variables
            .iter()
            .zip(x)
            .map(|(v, &xi)| v.value(xi))
            .sum()
    }

    /// Plain-text dump of the segment-expanded standard form, one column per segment.
    pub fn dump_standard_form(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# columns: var seg lower upper cost")?;
        for (j, var) in self.variables.iter().enumerate() {
            for (s, seg) in var.segments.iter().enumerate() {
                writeln!(out, "col\t{j}\t{s}\t0\t{}\t{}", seg.width, seg.slope)?;
            }
        }
        writeln!(out, "# rows: tag sense rhs (var:coef)...")?;
        for row in &self.constraints {
            let shifted: f64 = row.rhs
                - row
                    .coeffs
                    .iter()
                    .map(|&(j, a)| a * self.variables[j].lower)
                    .sum::<f64>();
            write!(out, "row\t{}\t{}\t{}", row.tag, row.sense, shifted)?;
            for &(j, a) in &row.coeffs {
                write!(out, "\t{j}:{a}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
}

/// Primal/dual result of [`solve`].
///
/// `duals[i]` is the sensitivity of the optimal objective to the rhs of
/// constraint `i`: nonnegative on `<=` rows, nonpositive on `>=` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub values: Vec<f64>,
    pub duals: Vec<f64>,
    pub objective: f64,
    pub residuals: KktResiduals,
    /// Some row violated at the phase-1 optimum when infeasible.
    pub violated_row: Option<usize>,
    pub iterations: usize,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn dual_by_tag(&self, prog: &Program, tag: &str) -> Option<f64> {
        prog.constraints
            .iter()
            .position(|c| c.tag == tag)
            .map(|i| self.duals[i])
    }
}

//! Optimality residuals recomputed from the program and a primal/dual pair.

use super::{Program, Sense, Solution};

/// Infinity-norm residuals of the KKT system.
///
/// `feasibility` covers row and bound violations together with wrong-signed
/// inequality duals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.feasibility)
            .max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

pub fn kkt_residuals(prog: &Program, sol: &Solution) -> KktResiduals {
    residuals_from_parts(prog, &sol.values, &sol.duals)
}

pub(crate) fn residuals_from_parts(prog: &Program, x: &[f64], duals: &[f64]) -> KktResiduals {
    let mut grad = vec![0.0; prog.variables.len()];
    let mut feasibility: f64 = 0.0;
    let mut complementarity: f64 = 0.0;

    for (row, &pi) in prog.constraints.iter().zip(duals) {
        for &(j, a) in &row.coeffs {
            grad[j] += pi * a;
        }
        let act = row.activity(x);
        let (viol, slack, sign_viol) = match row.sense {
            Sense::Eq => ((act - row.rhs).abs(), 0.0, 0.0),
            Sense::Le => ((act - row.rhs).max(0.0), row.rhs - act, (-pi).max(0.0)),
            Sense::Ge => ((row.rhs - act).max(0.0), act - row.rhs, pi.max(0.0)),
        };
        feasibility = feasibility.max(viol).max(sign_viol);
        complementarity = complementarity.max((pi * slack).abs());
    }

    let mut stationarity: f64 = 0.0;
    for ((var, &xj), &g) in prog.variables.iter().zip(x).zip(&grad) {
        feasibility = feasibility
            .max(var.lower - xj)
            .max(xj - var.upper);
        if var.segments.is_empty() {
            continue;
        }
        let tol = 1e-9 * (1.0 + xj.abs());
        let (right, left) = var.slope_interval(xj, tol);
        let r = (right - g).max(0.0) + (g - left).max(0.0);
        stationarity = stationarity.max(r);
    }

    KktResiduals {
        stationarity,
        feasibility,
        complementarity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve, Variable};

    #[test]
    fn zero_program_has_zero_residuals() {
        let r = residuals_from_parts(&Program::new(), &[], &[]);
        assert_eq!(r, KktResiduals::default());
    }

    #[test]
    fn perturbed_dual_shows_in_stationarity() {
        let mut p = Program::new();
        let x = p.add_variable(Variable::linear("x", 0.0, 4.0, 2.0));
        let y = p.add_variable(Variable::linear("y", 0.0, 4.0, 1.0));
        p.add_constraint("sum", vec![(x, 1.0), (y, 1.0)], Sense::Le, 5.0);
        let mut sol = solve(&p).unwrap();
        assert!(kkt_residuals(&p, &sol).within(1e-12));
        sol.duals[0] += 1e-3;
        assert!(kkt_residuals(&p, &sol).stationarity >= 9e-4);
    }
}

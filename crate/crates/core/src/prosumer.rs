//! Household economics under a net-energy-metering tariff.
//!
//! Energy is in kWh and money in $. Utility is a capped quadratic,
//! `U(x) = âx − (b̂/2)x²` up to the knee `â/b̂` and flat beyond it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityFn {
    pub a_hat: f64,
    pub b_hat: f64,
}

impl UtilityFn {
    pub fn new(a_hat: f64, b_hat: f64) -> Result<Self> {
        if !(a_hat > 0.0 && b_hat > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "utility needs a_hat > 0 and b_hat > 0, got {a_hat}, {b_hat}"
            )));
        }
        Ok(Self { a_hat, b_hat })
    }

    pub fn knee(&self) -> f64 {
        self.a_hat / self.b_hat
    }

    /// `U(x)`. Negative arguments follow the quadratic branch, which keeps
    /// the function concave if a caller probes below zero.
    pub fn value(&self, x: f64) -> f64 {
        let x = x.min(self.knee());
        self.a_hat * x - 0.5 * self.b_hat * x * x
    }

    /// `V(x) = max(â − b̂x, 0)`.
    pub fn marginal(&self, x: f64) -> f64 {
        (self.a_hat - self.b_hat * x).max(0.0)
    }

    /// `V⁻¹(y)`, clamped to `[0, â/b̂]`; `y = 0` returns the knee.
    pub fn inverse_marginal(&self, y: f64) -> f64 {
        ((self.a_hat - y) / self.b_hat).clamp(0.0, self.knee())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NemTariff {
    pub pi_plus: f64,
    pub pi_minus: f64,
    pub pi_zero: f64,
}

impl NemTariff {
    pub fn new(pi_plus: f64, pi_minus: f64, pi_zero: f64) -> Result<Self> {
        let t = Self {
            pi_plus,
            pi_minus,
            pi_zero,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pi_plus < 0.0 || self.pi_minus < 0.0 {
            return Err(Error::NegativePrice(format!(
                "tariff rates {} / {}",
                self.pi_plus, self.pi_minus
            )));
        }
        if self.pi_plus < self.pi_minus {
            return Err(Error::InvalidParameter(
                "retail rate below sell rate".into(),
            ));
        }
        Ok(())
    }
}

impl Default for NemTariff {
    fn default() -> Self {
        Self {
            pi_plus: 0.06,
            pi_minus: 0.03,
            pi_zero: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsumerParams {
    pub d_min: f64,
    pub d_max: f64,
    pub r: f64,
}

impl ProsumerParams {
    pub fn new(d_min: f64, d_max: f64, r: f64) -> Result<Self> {
        let p = Self { d_min, d_max, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_min < 0.0 || self.r < 0.0 {
            return Err(Error::NegativeQuantity(format!(
                "d_min {} / r {}",
                self.d_min, self.r
            )));
        }
        if self.d_min > self.d_max {
            return Err(Error::InvalidParameter(format!(
                "d_min {} exceeds d_max {}",
                self.d_min, self.d_max
            )));
        }
        Ok(())
    }
}

pub fn marginal_utility(u: &UtilityFn, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Err(Error::NegativeQuantity(format!("consumption {x}")));
    }
    Ok(u.marginal(x))
}

pub fn inverse_marginal(u: &UtilityFn, y: f64) -> Result<f64> {
    if y < 0.0 {
        return Err(Error::NegativePrice(format!("marginal price {y}")));
    }
    Ok(u.inverse_marginal(y))
}

/// Consumption maximizing `U(d) − π⁺d` over the bounds.
pub fn nem_consumption(u: &UtilityFn, t: &NemTariff, p: &ProsumerParams) -> Result<f64> {
    t.validate()?;
    p.validate()?;
    Ok(u.inverse_marginal(t.pi_plus).max(p.d_min).min(p.d_max))
}

/// Surplus at the tariff-optimal consumption, importing at `π⁺` and exporting at `π⁻`.
pub fn nem_surplus(u: &UtilityFn, t: &NemTariff, p: &ProsumerParams) -> Result<f64> {
    let d = nem_consumption(u, t, p)?;
    let rate = if p.r >= d { t.pi_minus } else { t.pi_plus };
    Ok(u.value(d) - rate * (d - p.r) - t.pi_zero)
}

//! Aggregator decisions, surplus decomposition and bid curves.
//!
//! Access capacities are in MW over an interval of `interval_hours`;
//! prosumer quantities are in kWh. `kwh_per_mw = 1000 · interval_hours`
//! converts between them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prosumer::{nem_surplus, NemTariff, ProsumerParams, UtilityFn};

/// Signed access range of one bus: withdrawal `c_lo ≤ 0`, injection `c_hi ≥ 0`, in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessInterval {
    pub c_lo: f64,
    pub c_hi: f64,
}

impl AccessInterval {
    pub fn new(c_lo: f64, c_hi: f64) -> Result<Self> {
        let a = Self { c_lo, c_hi };
        a.validate()?;
        Ok(a)
    }

    pub fn zero() -> Self {
        Self { c_lo: 0.0, c_hi: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_lo <= 0.0 && self.c_hi >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "access interval [{}, {}] must contain 0",
                self.c_lo, self.c_hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prosumer {
    pub bus: usize,
    pub utility: UtilityFn,
    pub params: ProsumerParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeraPortfolio {
    pub id: String,
    pub zeta: f64,
    pub lmp: f64,
    pub tariff: NemTariff,
    /// Sorted by bus, at most one per bus.
    pub prosumers: Vec<Prosumer>,
    /// Per-bus cap applied to every served bus.
    pub c_max: AccessInterval,
    pub kwh_per_mw: f64,
}

impl DeraPortfolio {
    pub fn new(
        id: impl Into<String>,
        zeta: f64,
        lmp: f64,
        tariff: NemTariff,
        mut prosumers: Vec<Prosumer>,
        c_max: AccessInterval,
        interval_hours: f64,
    ) -> Result<Self> {
        let id = id.into();
        if !(zeta > 1.0) {
            return Err(Error::InvalidParameter(format!("{id}: zeta must exceed 1, got {zeta}")));
        }
        if lmp < 0.0 {
            return Err(Error::NegativePrice(format!("{id}: lmp {lmp}")));
        }
        if !(interval_hours > 0.0) {
            return Err(Error::InvalidParameter("interval length must be positive".into()));
        }
        tariff.validate()?;
        c_max.validate()?;
        prosumers.sort_by_key(|p| p.bus);
        for pair in prosumers.windows(2) {
            if pair[0].bus == pair[1].bus {
                return Err(Error::InvalidParameter(format!(
                    "{id}: more than one prosumer at bus {}",
                    pair[0].bus
                )));
            }
        }
        for p in &prosumers {
            p.params.validate()?;
        }
        Ok(Self {
            id,
            zeta,
            lmp,
            tariff,
            prosumers,
            c_max,
            kwh_per_mw: 1000.0 * interval_hours,
        })
    }

    pub fn buses(&self) -> Vec<usize> {
        self.prosumers.iter().map(|p| p.bus).collect()
    }

    fn check_access(&self, access: &[AccessInterval]) -> Result<()> {
        if access.len() != self.prosumers.len() {
            return Err(Error::Dimension {
                expected: self.prosumers.len(),
                got: access.len(),
            });
        }
        access.iter().try_for_each(AccessInterval::validate)
    }

    pub fn from_config(cfg: &DeraConfig) -> Result<Self> {
        let served: Option<BTreeSet<usize>> = cfg.buses_served.as_ref().map(|b| b.iter().copied().collect());
        let mut prosumers = Vec::with_capacity(cfg.prosumers.len());
        for p in &cfg.prosumers {
            if let Some(s) = &served {
                if !s.contains(&p.bus) {
                    return Err(Error::InvalidParameter(format!(
                        "{}: prosumer at bus {} is outside buses_served",
                        cfg.id, p.bus
                    )));
                }
            }
            prosumers.push(Prosumer {
                bus: p.bus,
                utility: UtilityFn::new(p.a_hat, p.b_hat)?,
                params: ProsumerParams::new(p.d_min, p.d_max, p.r_kwh)?,
            });
        }
        let c_max = AccessInterval::new(-cfg.c_max.withdrawal_mw.abs(), cfg.c_max.injection_mw)?;
        Self::new(
            cfg.id.clone(),
            cfg.zeta,
            cfg.lmp,
            cfg.tariff,
            prosumers,
            c_max,
            cfg.interval_hours,
        )
    }

    pub fn to_config(&self) -> DeraConfig {
        DeraConfig {
            id: self.id.clone(),
            zeta: self.zeta,
            lmp: self.lmp,
            tariff: self.tariff,
            prosumers: self
                .prosumers
                .iter()
                .map(|p| ProsumerEntry {
                    bus: p.bus,
                    a_hat: p.utility.a_hat,
                    b_hat: p.utility.b_hat,
                    d_min: p.params.d_min,
                    d_max: p.params.d_max,
                    r_kwh: p.params.r,
                })
                .collect(),
            c_max: CapEntry {
                injection_mw: self.c_max.c_hi,
                withdrawal_mw: -self.c_max.c_lo,
            },
            buses_served: Some(self.buses()),
            interval_hours: self.kwh_per_mw / 1000.0,
        }
    }
}

/// DERA configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeraConfig {
    pub id: String,
    pub zeta: f64,
    pub lmp: f64,
    pub tariff: NemTariff,
    pub prosumers: Vec<ProsumerEntry>,
    pub c_max: CapEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buses_served: Option<Vec<usize>>,
    #[serde(default = "one_hour")]
    pub interval_hours: f64,
}

fn one_hour() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsumerEntry {
    pub bus: usize,
    pub a_hat: f64,
    pub b_hat: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub r_kwh: f64,
}

/// Both caps are magnitudes in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapEntry {
    pub injection_mw: f64,
    pub withdrawal_mw: f64,
}

/// Surplus pieces of one prosumer, in $.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurplusParts {
    pub phi_lo: f64,
    pub phi_hi: f64,
    pub h: f64,
    /// `ζ · S_NEM(r)`, the surplus promised to the prosumer.
    pub promised: f64,
}

impl SurplusParts {
    pub fn total(&self) -> f64 {
        self.phi_lo + self.phi_hi + self.h - self.promised
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeraDecision {
    pub d_star: Vec<f64>,
    pub omega_star: Vec<f64>,
    pub phi_total: f64,
    pub parts: Vec<SurplusParts>,
}

/// Per-prosumer quantities that do not depend on the access interval.
struct BusEconomics {
    d_hat: f64,
    h: f64,
    promised: f64,
}

fn economics(port: &DeraPortfolio, p: &Prosumer) -> Result<BusEconomics> {
    let vinv = p.utility.inverse_marginal(port.lmp);
    let d_hat = vinv.max(p.params.d_min).min(p.params.d_max);
    let h = p.utility.value(d_hat) - port.lmp * (d_hat - p.params.r);
    let promised = port.zeta * nem_surplus(&p.utility, &port.tariff, &p.params)?;
    Ok(BusEconomics {
        d_hat,
        h,
        promised,
    })
}

/// Benefit of injection capacity `c_hi` (kWh) relative to unconstrained trading.
///
/// Where `r − c_hi` exceeds `d_max` no consumption is feasible; the value
/// there assumes surplus generation is curtailed, which keeps the curve
/// concave and continuous.
fn phi_hi(p: &Prosumer, e: &BusEconomics, lmp: f64, c_hi: f64) -> f64 {
    if p.params.r - c_hi >= e.d_hat {
        p.utility.value((p.params.r - c_hi).min(p.params.d_max)) + lmp * c_hi - e.h
    } else {
        0.0
    }
}

/// Benefit of withdrawal capacity `c_lo ≤ 0` (kWh) relative to unconstrained trading.
fn phi_lo(p: &Prosumer, e: &BusEconomics, lmp: f64, c_lo: f64) -> f64 {
    if p.params.r - c_lo <= e.d_hat {
        p.utility.value(p.params.r - c_lo) + lmp * c_lo - e.h
    } else {
        0.0
    }
}

fn feasible_range(p: &Prosumer, c_lo: f64, c_hi: f64) -> Result<(f64, f64)> {
    let lo = p.params.d_min.max(p.params.r - c_hi);
    let hi = p.params.d_max.min(p.params.r - c_lo);
    if lo > hi {
        return Err(Error::InfeasibleAccess { bus: p.bus });
    }
    Ok((lo, hi))
}

/// Closed-form optimum of the aggregator's problem for given access.
pub fn optimal_decision(port: &DeraPortfolio, access: &[AccessInterval]) -> Result<DeraDecision> {
    port.check_access(access)?;
    let k = port.kwh_per_mw;
    let mut out = DeraDecision {
        d_star: Vec::with_capacity(access.len()),
        omega_star: Vec::with_capacity(access.len()),
        phi_total: 0.0,
        parts: Vec::with_capacity(access.len()),
    };
    for (p, a) in port.prosumers.iter().zip(access) {
        let (c_lo, c_hi) = (a.c_lo * k, a.c_hi * k);
        feasible_range(p, c_lo, c_hi)?;
        let e = economics(port, p)?;
        let r = p.params.r;
        let d = (r - c_lo).min(e.d_hat.max(r - c_hi));
        let parts = SurplusParts {
            phi_lo: phi_lo(p, &e, port.lmp, c_lo),
            phi_hi: phi_hi(p, &e, port.lmp, c_hi),
            h: e.h,
            promised: e.promised,
        };
        out.d_star.push(d);
        out.omega_star.push(p.utility.value(d) - e.promised);
        out.phi_total += parts.total();
        out.parts.push(parts);
    }
    Ok(out)
}

/// Surplus from a numerical search that does not use the closed form.
pub fn oracle_surplus(port: &DeraPortfolio, access: &[AccessInterval]) -> Result<f64> {
    Ok(oracle_decision(port, access)?.iter().map(|(_, v)| v).sum())
}

/// Per-prosumer `(argmax d, surplus)` from ternary search on the concave
/// objective left after making the participation constraint bind.
pub fn oracle_decision(port: &DeraPortfolio, access: &[AccessInterval]) -> Result<Vec<(f64, f64)>> {
    port.check_access(access)?;
    let k = port.kwh_per_mw;
    let mut out = Vec::with_capacity(access.len());
    for (p, a) in port.prosumers.iter().zip(access) {
        let (lo, hi) = feasible_range(p, a.c_lo * k, a.c_hi * k)?;
        let promised = port.zeta * nem_surplus(&p.utility, &port.tariff, &p.params)?;
        let f = |d: f64| p.utility.value(d) - promised - port.lmp * (d - p.params.r);
        let (mut a_, mut b_) = (lo, hi);
        for _ in 0..200 {
            let m1 = a_ + (b_ - a_) / 3.0;
            let m2 = b_ - (b_ - a_) / 3.0;
            if f(m1) < f(m2) {
                a_ = m1;
            } else {
                b_ = m2;
            }
        }
        let mid = 0.5 * (a_ + b_);
        let best = [(lo, f(lo)), (mid, f(mid)), (hi, f(hi))]
            .into_iter()
            .fold((mid, f(mid)), |acc, c| if c.1 > acc.1 { c } else { acc });
        out.push(best);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Injection,
    Withdrawal,
}

/// Concave piecewise-linear bid for one bus and direction.
///
/// `breakpoints[k] = (capacity, marginal)` gives the right end of segment
/// `k` in MW (negative for withdrawal) and the marginal benefit over it in
/// $/kWh. Segments start at capacity 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidCurve {
    pub bus: usize,
    pub direction: Direction,
    pub breakpoints: Vec<(f64, f64)>,
    pub kwh_per_mw: f64,
}

impl BidCurve {
    pub fn max_magnitude(&self) -> f64 {
        self.breakpoints.last().map_or(0.0, |b| b.0.abs())
    }

    /// Segment widths (MW magnitude) and slopes ($/MW) for the clearing program.
    pub fn segments_mw(&self) -> Vec<(f64, f64)> {
        let mut prev = 0.0;
        self.breakpoints
            .iter()
            .map(|&(c, m)| {
                let w = c.abs() - prev;
                prev = c.abs();
                (w, m * self.kwh_per_mw)
            })
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.breakpoints.iter().all(|b| b.1 == 0.0)
    }
}

/// Benefit in $ of holding `capacity` MW on the curve.
pub fn pwl_benefit_value(curve: &BidCurve, capacity: f64) -> Result<f64> {
    let max = curve.max_magnitude();
    let wrong_side = match curve.direction {
        Direction::Injection => capacity < 0.0,
        Direction::Withdrawal => capacity > 0.0,
    };
    let (lo, hi) = match curve.direction {
        Direction::Injection => (0.0, max),
        Direction::Withdrawal => (-max, 0.0),
    };
    if wrong_side || capacity.abs() > max * (1.0 + 1e-12) {
        return Err(Error::OutsideCurve { capacity, lo, hi });
    }
    let mut rest = capacity.abs();
    let mut acc = 0.0;
    for (w, slope) in curve.segments_mw() {
        let take = rest.min(w);
        acc += slope * take;
        rest -= take;
        if rest <= 0.0 {
            break;
        }
    }
    Ok(acc)
}

/// Bids of one aggregator plus the parts of its surplus that no capacity changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeraBids {
    pub id: String,
    pub curves: Vec<BidCurve>,
    /// `Σ (hⁱ − ζ S_NEM(rⁱ))`.
    pub surplus_constant: f64,
    /// `Σ (φ̲ⁱ(0) + φ̄ⁱ(0))`: surplus at zero access is `surplus_constant + zero_access_offset`.
    pub zero_access_offset: f64,
}

impl DeraBids {
    /// Surplus implied by the piecewise-linear bids at a per-bus allocation.
    pub fn surplus_at(&self, access: &[(usize, AccessInterval)]) -> Result<f64> {
        let mut total = self.surplus_constant + self.zero_access_offset;
        for curve in &self.curves {
            if let Some((_, a)) = access.iter().find(|(b, _)| *b == curve.bus) {
                let c = match curve.direction {
                    Direction::Injection => a.c_hi,
                    Direction::Withdrawal => a.c_lo,
                };
                total += pwl_benefit_value(curve, c)?;
            }
        }
        Ok(total)
    }
}

fn sampled_curve(
    bus: usize,
    direction: Direction,
    cap_mw: f64,
    n_segments: usize,
    kwh_per_mw: f64,
    phi: impl Fn(f64) -> f64,
) -> (BidCurve, f64) {
    let sign = match direction {
        Direction::Injection => 1.0,
        Direction::Withdrawal => -1.0,
    };
    let cap = cap_mw.abs();
    let base = phi(0.0);
    let mut breakpoints = Vec::with_capacity(n_segments);
    if cap > 0.0 {
        let mut prev_val = base;
        let mut prev_slope = f64::INFINITY;
        for k in 1..=n_segments {
            let c = cap * k as f64 / n_segments as f64;
            let val = phi(sign * c * kwh_per_mw);
            let width_kwh = cap / n_segments as f64 * kwh_per_mw;
            // rounding can leave a concave sample a hair non-concave
            let slope = ((val - prev_val) / width_kwh).min(prev_slope);
            breakpoints.push((sign * c, slope));
            prev_val = val;
            prev_slope = slope;
        }
    }
    (
        BidCurve {
            bus,
            direction,
            breakpoints,
            kwh_per_mw,
        },
        base,
    )
}

/// Bid curves for every served bus, sampled at `n_segments + 1` uniform capacities.
///
/// `c_max` holds one cap per prosumer, in portfolio order; `None` uses the portfolio cap.
pub fn bid_curves(port: &DeraPortfolio, c_max: Option<&[AccessInterval]>, n_segments: usize) -> Result<DeraBids> {
    if n_segments == 0 {
        return Err(Error::InvalidParameter("bid curves need at least one segment".into()));
    }
    if let Some(c) = c_max {
        port.check_access(c)?;
    }
    let mut out = DeraBids {
        id: port.id.clone(),
        curves: Vec::with_capacity(2 * port.prosumers.len()),
        surplus_constant: 0.0,
        zero_access_offset: 0.0,
    };
    for (i, p) in port.prosumers.iter().enumerate() {
        let cap = c_max.map_or(port.c_max, |c| c[i]);
        let e = economics(port, p)?;
        let (inj, inj0) = sampled_curve(p.bus, Direction::Injection, cap.c_hi, n_segments, port.kwh_per_mw, |c| {
            phi_hi(p, &e, port.lmp, c)
        });
        let (wd, wd0) = sampled_curve(p.bus, Direction::Withdrawal, cap.c_lo, n_segments, port.kwh_per_mw, |c| {
            phi_lo(p, &e, port.lmp, c)
        });
        out.curves.push(inj);
        out.curves.push(wd);
        out.surplus_constant += e.h - e.promised;
        out.zero_access_offset += inj0 + wd0;
    }
    Ok(out)
}

/// Exact marginal benefit in $/kWh of injection capacity `c_mw`.
pub fn injection_marginal(port: &DeraPortfolio, p: &Prosumer, c_mw: f64) -> f64 {
    let net = p.params.r - c_mw * port.kwh_per_mw;
    let d_hat = p.utility.inverse_marginal(port.lmp).max(p.params.d_min).min(p.params.d_max);
    if net < d_hat {
        0.0
    } else if net > p.params.d_max {
        port.lmp
    } else {
        port.lmp - p.utility.marginal(net)
    }
}

/// Exact marginal benefit in $/kWh of withdrawal capacity magnitude `m_mw`.
pub fn withdrawal_marginal(port: &DeraPortfolio, p: &Prosumer, m_mw: f64) -> f64 {
    let gross = p.params.r + m_mw * port.kwh_per_mw;
    let d_hat = p.utility.inverse_marginal(port.lmp).max(p.params.d_min).min(p.params.d_max);
    if gross <= d_hat {
        p.utility.marginal(gross) - port.lmp
    } else {
        0.0
    }
}

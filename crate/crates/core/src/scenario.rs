//! End-to-end scenario: network limits, aggregator portfolios, clearing, sweeps.
//!
//! Every aggregator has one slot per bus it covers, holding
//! `households_per_bus` identical households. A seeded draw per slot decides
//! whether its households own DG. A `dera_ratio` share of them is served by
//! the aggregator as one prosumer: `m` identical households aggregate exactly
//! to utility `m·U(D/m)`, i.e. slope `b̂/m`, with bounds and DG scaled by `m`.
//! The rest stay utility customers and widen the utility injection range by
//! their NEM consumption and DG.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{clear, AuctionInstance, AuctionOptions, ClearingResult, DsoCost};
use crate::dera::{bid_curves, AccessInterval, DeraBids, DeraPortfolio, Prosumer};
use crate::error::{Error, Result};
use crate::net_model::{build_sensitivity, BoundsOn, RadialNetwork, SensitivityOptions};
use crate::prosumer::{nem_consumption, NemTariff, ProsumerParams, UtilityFn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeraSpec {
    pub id: String,
    /// DG output of adopting households, kWh per interval.
    pub dg_kwh: f64,
    /// Inclusive bus range covered; `None` covers every non-reference bus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buses: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowLimitPolicy {
    /// Lines (in branch order) that get `first_mw`.
    pub first_count: usize,
    pub first_mw: f64,
    pub rest_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub voltage_dev: f64,
    #[serde(default)]
    pub bounds_on: BoundsOn,
    /// Overrides line limits from the network file when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_limits: Option<FlowLimitPolicy>,
    pub deras: Vec<DeraSpec>,
    pub a_hat: f64,
    pub b_hat: f64,
    pub d_min: f64,
    pub d_max: f64,
    #[serde(default = "one")]
    pub households_per_bus: f64,
    pub adopter_fraction: f64,
    pub dera_ratio: f64,
    pub c_max_mw: f64,
    pub zeta: f64,
    pub lmp: f64,
    pub tariff: NemTariff,
    pub dso: DsoCost,
    pub bid_segments: usize,
    pub j_segments: usize,
    pub interval_hours: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl ScenarioConfig {
    /// The 141-bus experiment: four aggregators with DG 0.2, 5.2, 10.2 and
    /// 15.2 kWh, the last covering buses 118–134 only.
    pub fn preset() -> Self {
        let dera = |id: &str, dg: f64, buses| DeraSpec {
            id: id.into(),
            dg_kwh: dg,
            buses,
        };
        Self {
            voltage_dev: 0.05,
            bounds_on: BoundsOn::U,
            flow_limits: Some(FlowLimitPolicy {
                first_count: 6,
                first_mw: 15.0,
                rest_mw: 2.0,
            }),
            deras: vec![
                dera("dera1", 0.2, None),
                dera("dera2", 5.2, None),
                dera("dera3", 10.2, None),
                dera("dera4", 15.2, Some((118, 134))),
            ],
            a_hat: 0.65,
            b_hat: 0.2,
            d_min: 0.0,
            d_max: 20.0,
            households_per_bus: 3.0,
            adopter_fraction: 0.8,
            dera_ratio: 1.0,
            c_max_mw: 0.1,
            zeta: 1.003,
            lmp: 0.03,
            tariff: NemTariff::default(),
            dso: DsoCost::default(),
            bid_segments: 10,
            j_segments: 20,
            interval_hours: 1.0,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("adopter_fraction", self.adopter_fraction), ("dera_ratio", self.dera_ratio)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(self.households_per_bus > 0.0) {
            return Err(Error::InvalidParameter("households_per_bus must be positive".into()));
        }
        if !(self.c_max_mw >= 0.0) {
            return Err(Error::InvalidParameter("c_max_mw must be nonnegative".into()));
        }
        if self.bid_segments == 0 || self.j_segments == 0 {
            return Err(Error::InvalidParameter("segment counts must be positive".into()));
        }
        for d in &self.deras {
            if d.dg_kwh < 0.0 {
                return Err(Error::NegativeQuantity(format!("{}: dg_kwh {}", d.id, d.dg_kwh)));
            }
        }
        Ok(())
    }
}

/// Portfolios and utility-customer range implied by a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub portfolios: Vec<DeraPortfolio>,
    pub utility_lo: Vec<f64>,
    pub utility_hi: Vec<f64>,
}

/// Draws the adopter mask and builds portfolios for an `n_buses` network.
pub fn build_population(cfg: &ScenarioConfig, n_buses: usize) -> Result<Population> {
    cfg.validate()?;
    let utility = UtilityFn::new(cfg.a_hat, cfg.b_hat)?;
    let kwh_per_mw = 1000.0 * cfg.interval_hours;
    let n = n_buses - 1;
    let mut utility_lo = vec![0.0; n];
    let mut utility_hi = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut portfolios = Vec::with_capacity(cfg.deras.len());
    for spec in &cfg.deras {
        let (first, last) = spec.buses.unwrap_or((2, n_buses));
        if first < 2 || last > n_buses || first > last {
            return Err(Error::InvalidParameter(format!(
                "{}: bus range {first}..={last} outside 2..={n_buses}",
                spec.id
            )));
        }
        let served = cfg.dera_ratio * cfg.households_per_bus;
        let unserved = cfg.households_per_bus - served;
        let mut prosumers = Vec::new();
        for bus in first..=last {
            let adopt: f64 = rng.gen();
            let r = if adopt < cfg.adopter_fraction { spec.dg_kwh } else { 0.0 };
            if served > 0.0 {
                prosumers.push(Prosumer {
                    bus,
                    utility: UtilityFn::new(cfg.a_hat, cfg.b_hat / served)?,
                    params: ProsumerParams::new(cfg.d_min * served, cfg.d_max * served, r * served)?,
                });
            }
            if unserved > 0.0 {
                let params = ProsumerParams::new(cfg.d_min, cfg.d_max, r)?;
                let d_nem = nem_consumption(&utility, &cfg.tariff, &params)?;
                utility_lo[bus - 2] -= unserved * d_nem / kwh_per_mw;
                utility_hi[bus - 2] += unserved * (r - cfg.d_min) / kwh_per_mw;
            }
        }
        portfolios.push(DeraPortfolio::new(
            spec.id.clone(),
            cfg.zeta,
            cfg.lmp,
            cfg.tariff,
            prosumers,
            AccessInterval::new(-cfg.c_max_mw, cfg.c_max_mw)?,
            cfg.interval_hours,
        )?);
    }
    Ok(Population {
        portfolios,
        utility_lo,
        utility_hi,
    })
}

/// Applies the scenario's flow-limit policy to a copy of the network.
pub fn apply_flow_limits(net: &RadialNetwork, cfg: &ScenarioConfig) -> Result<RadialNetwork> {
    let mut net = net.clone();
    if let Some(p) = &cfg.flow_limits {
        let limits: Vec<Option<f64>> = (0..net.lines().len())
            .map(|l| Some(if l < p.first_count { p.first_mw } else { p.rest_mw }))
            .collect();
        net.set_flow_limits(&limits)?;
    }
    Ok(net)
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub population: Population,
    pub bids: Vec<DeraBids>,
    pub instance: AuctionInstance,
    pub result: ClearingResult,
    /// Surplus of each aggregator at its cleared access, from its bids.
    pub dera_surplus: Vec<f64>,
}

impl ScenarioOutcome {
    pub fn total_dera_surplus(&self) -> f64 {
        self.dera_surplus.iter().sum()
    }
}

pub fn build_instance(net: &RadialNetwork, cfg: &ScenarioConfig) -> Result<(Population, Vec<DeraBids>, AuctionInstance)> {
    let net = apply_flow_limits(net, cfg)?;
    let bundle = build_sensitivity(
        &net,
        &SensitivityOptions {
            voltage_dev: cfg.voltage_dev,
            bounds_on: cfg.bounds_on,
            require_flow_limits: false,
        },
    )?;
    let population = build_population(cfg, net.bus_count())?;
    let bids = population
        .portfolios
        .iter()
        .map(|p| bid_curves(p, None, cfg.bid_segments))
        .collect::<Result<Vec<_>>>()?;
    let mut instance = AuctionInstance::new(
        bundle,
        bids.clone(),
        population.utility_lo.clone(),
        population.utility_hi.clone(),
        cfg.dso,
    )?;
    instance.options = AuctionOptions {
        j_segments: cfg.j_segments,
    };
    Ok((population, bids, instance))
}

pub fn run_scenario(net: &RadialNetwork, cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    let (population, bids, instance) = build_instance(net, cfg)?;
    let result = clear(&instance)?;
    let dera_surplus = bids
        .iter()
        .zip(&result.allocations)
        .map(|(b, a)| b.surplus_at(&a.per_bus))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioOutcome {
        population,
        bids,
        instance,
        result,
        dera_surplus,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    DgLevel,
    DeraRatio,
}

impl SweepParam {
    /// Grid used when none is given. Below a ratio of 0.4 the preset's utility
    /// customers alone overrun the 2 MW lines.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            Self::DgLevel => vec![0.2, 5.2, 10.2, 15.2],
            Self::DeraRatio => (4..=10).map(|k| k as f64 / 10.0).collect(),
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dg_level" => Ok(Self::DgLevel),
            "dera_ratio" => Ok(Self::DeraRatio),
            other => Err(Error::InvalidParameter(format!("unknown sweep parameter {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub social_surplus: f64,
    pub dera_surplus: f64,
}

/// One clearing per value. `DgLevel` sets every aggregator's DG output to the value.
pub fn sweep(net: &RadialNetwork, cfg: &ScenarioConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&v| {
            let mut c = cfg.clone();
            match param {
                SweepParam::DgLevel => c.deras.iter_mut().for_each(|d| d.dg_kwh = v),
                SweepParam::DeraRatio => c.dera_ratio = v,
            }
            let out = run_scenario(net, &c).map_err(|e| match e {
                Error::Infeasible { .. } => e,
                other => Error::Solver(format!("sweep value {v}: {other}")),
            })?;
            Ok(SweepRow {
                value: v,
                social_surplus: out.result.social_surplus,
                dera_surplus: out.total_dera_surplus(),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,social_surplus,dera_surplus\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.value, r.social_surplus, r.dera_surplus));
    }
    out
}

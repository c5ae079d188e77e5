//! Random clearing instances on small feeders.

use access_auction::auction::{AuctionInstance, DsoCost};
use access_auction::dera::{bid_curves, AccessInterval, DeraPortfolio, Prosumer};
use access_auction::net_model::{build_sensitivity, RadialNetwork, SensitivityOptions};
use access_auction::prosumer::{NemTariff, ProsumerParams, UtilityFn};
use rand::seq::SliceRandom;
use rand::Rng;

use super::networks::random_radial;

pub struct RandomInstance {
    pub net: RadialNetwork,
    pub portfolios: Vec<DeraPortfolio>,
    pub instance: AuctionInstance,
}

/// Feeder with `n ≤ 10` buses, tight flow limits and one to three aggregators
/// built from random households. Utility ranges are small enough that zero
/// access is always feasible.
pub fn random_instance(rng: &mut impl Rng) -> RandomInstance {
    let n = rng.gen_range(3..=10);
    let pf = rng.gen_range(0.9..1.0);
    let mut net = random_radial(rng, n, 1.0, pf);
    let limits: Vec<Option<f64>> = (0..n - 1).map(|_| Some(rng.gen_range(0.01..0.15))).collect();
    net.set_flow_limits(&limits).unwrap();
    let bundle = build_sensitivity(&net, &SensitivityOptions::default()).unwrap();

    let n_deras = rng.gen_range(1..=3);
    let portfolios: Vec<DeraPortfolio> = (0..n_deras)
        .map(|k| {
            let mut buses: Vec<usize> = (2..=n).collect();
            buses.shuffle(rng);
            buses.truncate(rng.gen_range(1..=n - 1));
            let prosumers = buses
                .into_iter()
                .map(|bus| Prosumer {
                    bus,
                    utility: UtilityFn::new(rng.gen_range(0.3..0.8), rng.gen_range(0.1..0.4)).unwrap(),
                    params: ProsumerParams::new(0.0, 20.0, rng.gen_range(0.0..16.0)).unwrap(),
                })
                .collect();
            let cap = rng.gen_range(0.02..0.2);
            DeraPortfolio::new(
                format!("d{k}"),
                rng.gen_range(1.0..1.01),
                rng.gen_range(0.02..0.05),
                NemTariff::default(),
                prosumers,
                AccessInterval::new(-cap, cap).unwrap(),
                1.0,
            )
            .unwrap()
        })
        .collect();
    let bids = portfolios.iter().map(|p| bid_curves(p, None, 8).unwrap()).collect();
    let utility_lo: Vec<f64> = (0..n - 1).map(|_| -rng.gen_range(0.0..0.001)).collect();
    let utility_hi: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(0.0..0.001)).collect();
    let cost = DsoCost::new(rng.gen_range(-0.1..0.1), 10f64.powf(rng.gen_range(-1.0..3.5))).unwrap();
    let instance = AuctionInstance::new(bundle, bids, utility_lo, utility_hi, cost).unwrap();
    RandomInstance {
        net,
        portfolios,
        instance,
    }
}

/// Portfolio of `buses` random households with an access box that keeps consumption feasible.
pub fn random_portfolio(rng: &mut impl Rng, buses: usize) -> (DeraPortfolio, Vec<AccessInterval>) {
    let lmp = rng.gen_range(0.01..0.2);
    let tariff = NemTariff::new(lmp + rng.gen_range(0.0..0.05), lmp, rng.gen_range(0.0..0.1)).unwrap();
    let mut prosumers = Vec::new();
    let mut access = Vec::new();
    for bus in 2..2 + buses {
        let d_min = rng.gen_range(0.0..2.0);
        let d_max = d_min + rng.gen_range(0.1..10.0);
        let r = rng.gen_range(0.0..15.0);
        prosumers.push(Prosumer {
            bus,
            utility: UtilityFn::new(rng.gen_range(0.2..1.0), rng.gen_range(0.05..0.5)).unwrap(),
            params: ProsumerParams::new(d_min, d_max, r).unwrap(),
        });
        // kWh → MW with a one-hour interval; keep the box feasible
        let mut c_hi: f64 = rng.gen_range(0.0..0.012);
        let mut c_lo: f64 = -rng.gen_range(0.0..0.012);
        if rng.gen_bool(0.1) {
            c_hi = 0.0;
            c_lo = 0.0;
        }
        c_hi = c_hi.max((r - d_max) / 1000.0 + 1e-9);
        c_lo = c_lo.min((r - d_min) / 1000.0 - 1e-9);
        access.push(AccessInterval::new(c_lo, c_hi).unwrap());
    }
    let port = DeraPortfolio::new(
        "rand",
        1.0 + rng.gen_range(1e-6..0.1),
        lmp,
        tariff,
        prosumers,
        AccessInterval::new(-0.012, 0.012).unwrap(),
        1.0,
    )
    .unwrap();
    (port, access)
}

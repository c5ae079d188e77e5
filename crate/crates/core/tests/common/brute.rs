//! Exhaustive search over on-grid capacities of a three-bus feeder.

use access_auction::auction::DsoCost;
use access_auction::dera::{pwl_benefit_value, BidCurve, Direction};
use access_auction::net_model::{Bus, Line, RadialNetwork};
use rand::Rng;

use super::networks::distflow;

pub struct ThreeBusCase {
    pub net: RadialNetwork,
    /// Injection at buses 2 and 3, then withdrawal at buses 2 and 3.
    pub curves: [BidCurve; 4],
    pub cost: DsoCost,
}

/// Path 1–2–3 with equal flow limits and two-segment bids whose breakpoints sit on the grid.
pub fn three_bus_case(rng: &mut impl Rng, step: f64) -> ThreeBusCase {
    let (r, x) = (rng.gen_range(0.01..0.05), rng.gen_range(0.01..0.05));
    let lim = rng.gen_range(20..40) as f64 * step;
    let lines = (2..=3)
        .map(|b| Line {
            from_bus: b,
            to_bus: b - 1,
            resistance_pu: r,
            reactance_pu: x,
            flow_limit_mw: Some(lim),
        })
        .collect();
    let buses = (1..=3).map(|id| Bus { id, base_voltage_sq: 1.0 }).collect();
    let net = RadialNetwork::new(buses, lines, 1.0, 0.95).unwrap();
    let mut curve = |bus, direction: Direction| {
        let sign = if direction == Direction::Injection { 1.0 } else { -1.0 };
        let k1 = rng.gen_range(3..15);
        let k2 = k1 + rng.gen_range(3..15);
        let s1 = rng.gen_range(1e-3..3e-3);
        let s2 = s1 * rng.gen_range(0.05..0.9);
        BidCurve {
            bus,
            direction,
            breakpoints: vec![(sign * k1 as f64 * step, s1), (sign * k2 as f64 * step, s2)],
            kwh_per_mw: 1000.0,
        }
    };
    let curves = [
        curve(2, Direction::Injection),
        curve(3, Direction::Injection),
        curve(2, Direction::Withdrawal),
        curve(3, Direction::Withdrawal),
    ];
    let cost = DsoCost::new(-0.096, rng.gen_range(1.0..60.0)).unwrap();
    ThreeBusCase { net, curves, cost }
}

/// Oracle for the three-bus feeder: every grid point of the four capacities,
/// kept when all box vertices pass the branch-flow limits.
pub fn brute_force_three_bus(net: &RadialNetwork, curves: &[BidCurve; 4], cost: &DsoCost, step: f64) -> f64 {
    let steps = |c: &BidCurve| (c.max_magnitude() / step).round() as i64;
    let (m2, m3, w2, w3) = (steps(&curves[0]), steps(&curves[1]), steps(&curves[2]), steps(&curves[3]));
    let span = m2.max(m3).max(w2).max(w3);
    // vertex feasibility on the integer lattice
    let side = (2 * span + 1) as usize;
    let ok: Vec<bool> = (0..side * side)
        .map(|k| {
            let x2 = (k / side) as i64 - span;
            let x3 = (k % side) as i64 - span;
            let (f, u) = distflow(net, &[x2 as f64 * step, x3 as f64 * step]);
            f.iter()
                .zip(net.lines())
                .all(|(f, l)| f.abs() <= l.flow_limit_mw.unwrap() + 1e-12)
                && u.iter().all(|v| v.abs() <= 0.05 + 1e-12)
        })
        .collect();
    let vertex = |x2: i64, x3: i64| ok[((x2 + span) as usize) * side + (x3 + span) as usize];
    let mut best = f64::NEG_INFINITY;
    for i2 in 0..=m2 {
        for i3 in 0..=m3 {
            for k2 in 0..=w2 {
                for k3 in 0..=w3 {
                    if !(vertex(i2, i3) && vertex(-k2, i3) && vertex(i2, -k3) && vertex(-k2, -k3)) {
                        continue;
                    }
                    let (a, b, c, d) = (i2 as f64 * step, i3 as f64 * step, k2 as f64 * step, k3 as f64 * step);
                    let value = pwl_benefit_value(&curves[0], a).unwrap()
                        + pwl_benefit_value(&curves[1], b).unwrap()
                        + pwl_benefit_value(&curves[2], -c).unwrap()
                        + pwl_benefit_value(&curves[3], -d).unwrap()
                        - cost.j(a)
                        - cost.j(b)
                        - cost.j(c)
                        - cost.j(d);
                    best = best.max(value);
                }
            }
        }
    }
    best
}


//! Random radial feeders and brute-force evaluators independent of the library's matrix code.

use access_auction::net_model::{Bus, Line, RadialNetwork};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random tree on `n` buses. Line order is shuffled and endpoints are
/// randomly swapped so the library has to orient them itself.
pub fn random_radial(rng: &mut impl Rng, n: usize, base_mva: f64, pf: f64) -> RadialNetwork {
    let mut lines: Vec<Line> = (2..=n)
        .map(|child| {
            let parent = rng.gen_range(1..child);
            let (from_bus, to_bus) = if rng.gen_bool(0.5) { (child, parent) } else { (parent, child) };
            Line {
                from_bus,
                to_bus,
                resistance_pu: rng.gen_range(0.001..0.1),
                reactance_pu: rng.gen_range(0.001..0.1),
                flow_limit_mw: Some(rng.gen_range(0.5..5.0)),
            }
        })
        .collect();
    lines.shuffle(rng);
    let buses = (1..=n).map(|id| Bus { id, base_voltage_sq: 1.0 }).collect();
    RadialNetwork::new(buses, lines, base_mva, pf).unwrap()
}

/// Parent of every bus, found by flooding from bus 1 over undirected lines.
pub fn parents(net: &RadialNetwork) -> Vec<Option<(usize, usize)>> {
    let n = net.bus_count();
    let mut parent = vec![None; n + 1];
    let mut frontier = vec![1usize];
    let mut seen = vec![false; n + 1];
    seen[1] = true;
    while let Some(b) = frontier.pop() {
        for (l, line) in net.lines().iter().enumerate() {
            for (a, c) in [(line.from_bus, line.to_bus), (line.to_bus, line.from_bus)] {
                if a == b && !seen[c] {
                    seen[c] = true;
                    parent[c] = Some((b, l));
                    frontier.push(c);
                }
            }
        }
    }
    parent
}

/// Whether line `l` carries bus `j`'s injection to the root: removing it disconnects `j` from bus 1.
pub fn line_separates(net: &RadialNetwork, l: usize, j: usize) -> bool {
    let n = net.bus_count();
    let mut seen = vec![false; n + 1];
    let mut stack = vec![1usize];
    seen[1] = true;
    while let Some(b) = stack.pop() {
        for (k, line) in net.lines().iter().enumerate() {
            if k == l {
                continue;
            }
            for (a, c) in [(line.from_bus, line.to_bus), (line.to_bus, line.from_bus)] {
                if a == b && !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
    }
    !seen[j]
}

/// Branch-flow recursion: line flow equals the sum of injections downstream of it, and
/// squared voltage drops by 2(r P + x Q)/base along each line walking from the root.
/// `p[k]` is the injection at bus `k + 2`. Returns (flows per line, u deviation per bus 2..N).
pub fn distflow(net: &RadialNetwork, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = net.bus_count();
    let par = parents(net);
    let mut flow = vec![0.0; net.lines().len()];
    for bus in 2..=n {
        let mut b = bus;
        while let Some((up, l)) = par[b] {
            flow[l] += p[bus - 2];
            b = up;
        }
    }
    let mut u = vec![0.0; n + 1];
    let mut order: Vec<usize> = (2..=n).collect();
    let depth = |mut b: usize| {
        let mut d = 0;
        while let Some((up, _)) = par[b] {
            d += 1;
            b = up;
        }
        d
    };
    order.sort_by_key(|&b| depth(b));
    for b in order {
        let (up, l) = par[b].unwrap();
        let line = &net.lines()[l];
        let q = net.alpha() * flow[l];
        u[b] = u[up] + 2.0 * (line.resistance_pu * flow[l] + line.reactance_pu * q) / net.base_mva();
    }
    (flow, u[2..].to_vec())
}

/// Componentwise extremes of `a · p` over all vertices of the box.
pub fn vertex_extremes(rows: &[Vec<f64>], lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = lo.len();
    let mut wmin = vec![f64::INFINITY; rows.len()];
    let mut wmax = vec![f64::NEG_INFINITY; rows.len()];
    for mask in 0u32..(1 << n) {
        let v: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).collect();
        for (r, row) in rows.iter().enumerate() {
            let s: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            wmin[r] = wmin[r].min(s);
            wmax[r] = wmax[r].max(s);
        }
    }
    (wmin, wmax)
}

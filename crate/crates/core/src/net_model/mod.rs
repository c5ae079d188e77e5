//! LinDistFlow model of a radial distribution feeder.
//!
//! Buses are numbered `1..=N` with bus 1 the substation. Lines are stored
//! child→parent, one per non-reference bus. [`build_sensitivity`] produces
//! the stacked flow/voltage map `A` acting on non-reference injections in MW,
//! together with its sign split and the engineering limits.

mod matpower;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use matpower::parse_matpower_case;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    /// Squared voltage magnitude at the reference, p.u.².
    pub base_voltage_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    /// Child end.
    pub from_bus: usize,
    /// Parent end (toward bus 1).
    pub to_bus: usize,
    pub resistance_pu: f64,
    pub reactance_pu: f64,
    pub flow_limit_mw: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadialNetwork {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    base_mva: f64,
    power_factor: f64,
    alpha: f64,
    /// `line_of[b]` is the index of the line whose child end is bus `b + 1`.
    line_of: Vec<Option<usize>>,
}

/// Ratio of reactive to real injection at a fixed lagging power factor.
pub fn alpha_from_power_factor(pf: f64) -> f64 {
    (1.0 - pf * pf).sqrt() / pf
}

impl RadialNetwork {
    /// Validates radiality and orients every line toward bus 1. Line order is kept.
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>, base_mva: f64, power_factor: f64) -> Result<Self> {
        if !(power_factor > 0.0 && power_factor <= 1.0) {
            return Err(Error::InvalidNetwork(format!("power factor {power_factor} outside (0, 1]")));
        }
        Self::with_alpha(buses, lines, base_mva, power_factor, alpha_from_power_factor(power_factor))
    }

    pub fn with_alpha(
        mut buses: Vec<Bus>,
        mut lines: Vec<Line>,
        base_mva: f64,
        power_factor: f64,
        alpha: f64,
    ) -> Result<Self> {
        if !(base_mva > 0.0) {
            return Err(Error::InvalidNetwork("base MVA must be positive".into()));
        }
        if !(alpha >= 0.0) {
            return Err(Error::InvalidNetwork("alpha must be nonnegative".into()));
        }
        let n = buses.len();
        if n < 2 {
            return Err(Error::InvalidNetwork("need at least two buses".into()));
        }
        buses.sort_by_key(|b| b.id);
        for (k, b) in buses.iter().enumerate() {
            if b.id != k + 1 {
                return Err(Error::InvalidNetwork(format!("bus ids must be 1..={n}")));
            }
        }
        for (l, line) in lines.iter().enumerate() {
            if line.resistance_pu < 0.0 || line.reactance_pu < 0.0 {
                return Err(Error::InvalidNetwork(format!("line {l} has negative impedance")));
            }
            for end in [line.from_bus, line.to_bus] {
                if end == 0 || end > n {
                    return Err(Error::InvalidNetwork(format!("line {l} references bus {end}")));
                }
            }
            if line.from_bus == line.to_bus {
                return Err(Error::NotRadial(format!("line {l} is a self loop")));
            }
            if let Some(f) = line.flow_limit_mw {
                if !(f > 0.0) {
                    return Err(Error::InvalidNetwork(format!("line {l} flow limit must be positive")));
                }
            }
        }
        for a in 0..lines.len() {
            for b in (a + 1)..lines.len() {
                let (p, q) = (&lines[a], &lines[b]);
                if (p.from_bus == q.from_bus && p.to_bus == q.to_bus)
                    || (p.from_bus == q.to_bus && p.to_bus == q.from_bus)
                {
                    return Err(Error::DuplicateBranch(p.from_bus, p.to_bus));
                }
            }
        }
        if lines.len() != n - 1 {
            return Err(Error::NotRadial(format!(
                "{} lines for {n} buses",
                lines.len()
            )));
        }

        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (l, line) in lines.iter().enumerate() {
            adj[line.from_bus - 1].push(l);
            adj[line.to_bus - 1].push(l);
        }
        let mut line_of = vec![None; n];
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(b) = stack.pop() {
            for &l in &adj[b] {
                let line = &mut lines[l];
                let other = if line.from_bus - 1 == b { line.to_bus - 1 } else { line.from_bus - 1 };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                if line.from_bus - 1 != other {
                    std::mem::swap(&mut line.from_bus, &mut line.to_bus);
                }
                line_of[other] = Some(l);
                stack.push(other);
            }
        }
        if let Some(b) = seen.iter().position(|s| !s) {
            return Err(Error::NotRadial(format!("bus {} unreachable from bus 1", b + 1)));
        }

        Ok(Self {
            buses,
            lines,
            base_mva,
            power_factor,
            alpha,
            line_of,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn power_factor(&self) -> f64 {
        self.power_factor
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn u_base(&self) -> f64 {
        self.buses[0].base_voltage_sq
    }

    /// Line indices from `bus` up to the substation.
    pub fn root_path(&self, bus: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut b = bus;
        while let Some(l) = self.line_of[b - 1] {
            path.push(l);
            b = self.lines[l].to_bus;
        }
        path
    }

    /// Replace every line's flow limit.
    pub fn set_flow_limits(&mut self, limits: &[Option<f64>]) -> Result<()> {
        if limits.len() != self.lines.len() {
            return Err(Error::Dimension {
                expected: self.lines.len(),
                got: limits.len(),
            });
        }
        for (line, lim) in self.lines.iter_mut().zip(limits) {
            line.flow_limit_mw = *lim;
        }
        Ok(())
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            base_mva: self.base_mva,
            power_factor: self.power_factor,
            u_base: self.u_base(),
            buses: self.buses.iter().map(|b| BusEntry { id: b.id }).collect(),
            lines: self
                .lines
                .iter()
                .map(|l| LineEntry {
                    from: l.from_bus,
                    to: l.to_bus,
                    r: l.resistance_pu,
                    x: l.reactance_pu,
                    flow_limit_mw: l.flow_limit_mw,
                })
                .collect(),
        }
    }

    pub fn from_file(file: &NetworkFile) -> Result<Self> {
        let buses = file
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                base_voltage_sq: file.u_base,
            })
            .collect();
        let lines = file
            .lines
            .iter()
            .map(|l| Line {
                from_bus: l.from,
                to_bus: l.to,
                resistance_pu: l.r,
                reactance_pu: l.x,
                flow_limit_mw: l.flow_limit_mw,
            })
            .collect();
        Self::new(buses, lines, file.base_mva, file.power_factor)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| Error::Io(format!("network json: {e}")))?;
        Self::from_file(&file)
    }
}

/// Native network JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub base_mva: f64,
    pub power_factor: f64,
    #[serde(default = "default_u_base")]
    pub u_base: f64,
    pub buses: Vec<BusEntry>,
    pub lines: Vec<LineEntry>,
}

fn default_u_base() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusEntry {
    pub id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineEntry {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_limit_mw: Option<f64>,
}

/// Whether the deviation multiplies squared voltage directly (`U`) or is
/// applied to the magnitude and squared (`V`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundsOn {
    #[default]
    U,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityOptions {
    pub voltage_dev: f64,
    pub bounds_on: BoundsOn,
    /// Fail instead of leaving a line unconstrained when it has no limit.
    pub require_flow_limits: bool,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            voltage_dev: 0.05,
            bounds_on: BoundsOn::U,
            require_flow_limits: false,
        }
    }
}

/// A matrix with its elementwise positive and negative parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SignSplit {
    pub a: DMatrix<f64>,
    pub plus: DMatrix<f64>,
    pub minus: DMatrix<f64>,
}

impl SignSplit {
    pub fn new(a: DMatrix<f64>) -> Self {
        let plus = a.map(|v| v.max(0.0));
        let minus = a.map(|v| (-v).max(0.0));
        Self { a, plus, minus }
    }

    /// Exact extremes of `A p` over the box `lo <= p <= hi`.
    pub fn worst_case(&self, lo: &[f64], hi: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.a.ncols();
        for got in [lo.len(), hi.len()] {
            if got != n {
                return Err(Error::Dimension { expected: n, got });
            }
        }
        for (i, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            if l > h {
                return Err(Error::InvertedInterval { index: i, lo: l, hi: h });
            }
        }
        let lo = DVector::from_column_slice(lo);
        let hi = DVector::from_column_slice(hi);
        let wmax = &self.plus * &hi - &self.minus * &lo;
        let wmin = &self.plus * &lo - &self.minus * &hi;
        Ok((wmin, wmax))
    }
}

/// Linear physics of the feeder: flows stacked over squared-voltage deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityBundle {
    /// Reduced shift factors: `[l][j] = 1` iff line `l` is on the root path of bus `j + 2`.
    pub shift_reduced: DMatrix<f64>,
    pub r_matrix: DMatrix<f64>,
    pub x_matrix: DMatrix<f64>,
    /// `[S̃; 2 S̃ᵀ(R + αX) / base_mva]`, acting on MW injections.
    pub split: SignSplit,
    pub limit_lo: DVector<f64>,
    pub limit_hi: DVector<f64>,
    pub alpha: f64,
    pub u_base: f64,
    pub base_mva: f64,
}

impl SensitivityBundle {
    /// Number of non-reference buses.
    pub fn dim(&self) -> usize {
        self.shift_reduced.ncols()
    }

    pub fn a_matrix(&self) -> &DMatrix<f64> {
        &self.split.a
    }

    pub fn a_plus(&self) -> &DMatrix<f64> {
        &self.split.plus
    }

    pub fn a_minus(&self) -> &DMatrix<f64> {
        &self.split.minus
    }

    /// Squared voltage at every non-reference bus for zero injection.
    pub fn voltage_offset(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), self.u_base)
    }
}

pub fn build_sensitivity(net: &RadialNetwork, opts: &SensitivityOptions) -> Result<SensitivityBundle> {
    let dev = opts.voltage_dev;
    if !(dev > 0.0 && dev < 1.0) {
        return Err(Error::VoltageDeviation(dev));
    }
    let n = net.bus_count() - 1;
    let alpha = net.alpha();
    let u_base = net.u_base();

    let mut s = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in net.root_path(j + 2) {
            s[(l, j)] = 1.0;
        }
    }
    let r_diag = DVector::from_iterator(n, net.lines().iter().map(|l| l.resistance_pu));
    let x_diag = DVector::from_iterator(n, net.lines().iter().map(|l| l.reactance_pu));
    let r_matrix = DMatrix::from_diagonal(&r_diag) * &s;
    let x_matrix = DMatrix::from_diagonal(&x_diag) * &s;
    let volt = (s.transpose() * (&r_matrix + &x_matrix * alpha)) * (2.0 / net.base_mva());

    let mut a = DMatrix::zeros(2 * n, n);
    a.view_mut((0, 0), (n, n)).copy_from(&s);
    a.view_mut((n, 0), (n, n)).copy_from(&volt);

    let (v_hi, v_lo) = match opts.bounds_on {
        BoundsOn::U => (dev * u_base, -dev * u_base),
        BoundsOn::V => (((1.0 + dev).powi(2) - 1.0) * u_base, ((1.0 - dev).powi(2) - 1.0) * u_base),
    };
    let mut limit_lo = DVector::zeros(2 * n);
    let mut limit_hi = DVector::zeros(2 * n);
    for (l, line) in net.lines().iter().enumerate() {
        let f = match line.flow_limit_mw {
            Some(f) => f,
            None if opts.require_flow_limits => return Err(Error::MissingFlowLimit(l)),
            None => f64::INFINITY,
        };
        limit_hi[l] = f;
        limit_lo[l] = -f;
    }
    for j in 0..n {
        limit_hi[n + j] = v_hi;
        limit_lo[n + j] = v_lo;
    }

    Ok(SensitivityBundle {
        shift_reduced: s,
        r_matrix,
        x_matrix,
        split: SignSplit::new(a),
        limit_lo,
        limit_hi,
        alpha,
        u_base,
        base_mva: net.base_mva(),
    })
}

/// Line flows (MW) and squared-voltage deviations (p.u.²) for injections at
/// the non-reference buses.
pub fn evaluate_flow(bundle: &SensitivityBundle, p: &[f64], p0: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = bundle.dim();
    for got in [p.len(), p0.len()] {
        if got != n {
            return Err(Error::Dimension { expected: n, got });
        }
    }
    let total = DVector::from_iterator(n, p.iter().zip(p0).map(|(a, b)| a + b));
    let w = bundle.a_matrix() * total;
    Ok((w.rows(0, n).into_owned(), w.rows(n, n).into_owned()))
}

pub fn worst_case_bounds(
    bundle: &SensitivityBundle,
    lo: &[f64],
    hi: &[f64],
) -> Result<(DVector<f64>, DVector<f64>)> {
    bundle.split.worst_case(lo, hi)
}


#[cfg(test)]
mod tests {
    use super::test_networks::five_bus;
    use super::*;

    #[test]
    fn five_bus_shift_factors_and_impedance_patterns() {
        let net = five_bus([0.1, 0.2, 0.3, 0.4], [0.5, 0.6, 0.7, 0.8], 1.0, 0.98);
        let b = build_sensitivity(&net, &SensitivityOptions::default()).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[1., 1., 1., 1., 0., 1., 1., 1., 0., 1., 0., 0., 0., 0., 1., 0.],
        );
        assert_eq!(b.shift_reduced, expected);
        assert_eq!(b.r_matrix.row(0).iter().copied().collect::<Vec<_>>(), vec![0.1; 4]);
        assert_eq!(b.x_matrix.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.7, 0.0, 0.0]);
        assert!(b.a_minus().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_bus_chain() {
        let lines = vec![Line {
            from_bus: 1,
            to_bus: 2,
            resistance_pu: 0.01,
            reactance_pu: 0.02,
            flow_limit_mw: Some(15.0),
        }];
        let buses = vec![Bus { id: 1, base_voltage_sq: 1.0 }, Bus { id: 2, base_voltage_sq: 1.0 }];
        let net = RadialNetwork::with_alpha(buses, lines, 1.0, 0.98, 0.25).unwrap();
        // orientation is child -> parent after validation
        assert_eq!((net.lines()[0].from_bus, net.lines()[0].to_bus), (2, 1));
        let b = build_sensitivity(&net, &SensitivityOptions::default()).unwrap();
        assert_eq!(b.a_matrix()[(1, 0)], 2.0 * (0.01 + 0.25 * 0.02));
        let (f, u) = evaluate_flow(&b, &[0.7], &[0.3]).unwrap();
        assert_eq!(f[0], 1.0);
        assert!((u[0] - 2.0 * (0.01 + 0.25 * 0.02)).abs() < 1e-15);
    }

    #[test]
    fn zero_injection_is_neutral() {
        let net = five_bus([0.1; 4], [0.2; 4], 10.0, 0.98);
        let b = build_sensitivity(&net, &SensitivityOptions::default()).unwrap();
        let (f, u) = evaluate_flow(&b, &[0.0; 4], &[0.0; 4]).unwrap();
        assert!(f.iter().chain(u.iter()).all(|&v| v == 0.0));
        assert!(b.voltage_offset().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn voltage_bound_conventions() {
        let net = five_bus([0.1; 4], [0.2; 4], 1.0, 0.98);
        let u = build_sensitivity(&net, &SensitivityOptions::default()).unwrap();
        assert!((u.limit_hi[4] - 0.05).abs() < 1e-15);
        assert!((u.limit_lo[4] + 0.05).abs() < 1e-15);
        let v = build_sensitivity(
            &net,
            &SensitivityOptions {
                bounds_on: BoundsOn::V,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((v.limit_hi[4] - 0.1025).abs() < 1e-12);
        assert!((v.limit_lo[4] + 0.0975).abs() < 1e-12);
        assert_eq!(v.limit_hi[0], 10.0);
        assert_eq!(v.limit_lo[0], -10.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = five_bus([0.1; 4], [0.2; 4], 1.0, 0.98);
        assert_eq!(
            build_sensitivity(&net, &SensitivityOptions { voltage_dev: 1.0, ..Default::default() }),
            Err(Error::VoltageDeviation(1.0))
        );
        let b = build_sensitivity(&net, &SensitivityOptions::default()).unwrap();
        assert!(matches!(evaluate_flow(&b, &[0.0; 3], &[0.0; 4]), Err(Error::Dimension { .. })));
        assert!(matches!(
            worst_case_bounds(&b, &[1.0, 0.0, 0.0, 0.0], &[0.0; 4]),
            Err(Error::InvertedInterval { index: 0, .. })
        ));
        let mut unlimited = net.clone();
        unlimited.set_flow_limits(&[None, Some(1.0), Some(1.0), Some(1.0)]).unwrap();
        let strict = SensitivityOptions { require_flow_limits: true, ..Default::default() };
        assert_eq!(build_sensitivity(&unlimited, &strict), Err(Error::MissingFlowLimit(0)));
        let loose = build_sensitivity(&unlimited, &SensitivityOptions::default()).unwrap();
        assert!(loose.limit_hi[0].is_infinite());
    }

    #[test]
    fn hand_checkable_sign_split() {
        let split = SignSplit::new(DMatrix::from_row_slice(1, 2, &[1.0, -2.0]));
        let (wmin, wmax) = split.worst_case(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(wmax[0], 1.0);
        assert_eq!(wmin[0], -2.0);
        let (wmin, wmax) = split.worst_case(&[0.3, -0.2], &[0.3, -0.2]).unwrap();
        assert_eq!(wmin, wmax);
        assert!((wmax[0] - (0.3 + 0.4)).abs() < 1e-15);
    }

    #[test]
    fn detects_loops_and_disconnection() {
        let mk = |ends: &[(usize, usize)], n: usize| {
            let lines = ends
                .iter()
                .map(|&(f, t)| Line {
                    from_bus: f,
                    to_bus: t,
                    resistance_pu: 0.1,
                    reactance_pu: 0.1,
                    flow_limit_mw: None,
                })
                .collect();
            let buses = (1..=n).map(|id| Bus { id, base_voltage_sq: 1.0 }).collect();
            RadialNetwork::new(buses, lines, 1.0, 1.0)
        };
        assert!(matches!(mk(&[(1, 2), (2, 3), (3, 1)], 3), Err(Error::NotRadial(_))));
        assert!(matches!(mk(&[(1, 2), (3, 4), (4, 3)], 4), Err(Error::DuplicateBranch(..))));
        assert!(matches!(mk(&[(1, 2), (3, 4), (4, 5)], 5), Err(Error::NotRadial(_))));
        assert!(mk(&[(1, 2), (2, 3)], 3).is_ok());
    }

    #[test]
    fn json_round_trip_preserves_network() {
        let net = five_bus([0.1, 0.2, 0.3, 0.4], [0.5, 0.6, 0.7, 0.8], 10.0, 0.98);
        let back = RadialNetwork::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
    }
}

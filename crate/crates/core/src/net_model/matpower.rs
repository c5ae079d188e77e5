//! Reader for MATPOWER `.m` case files.
//!
//! Only `mpc.baseMVA`, `mpc.bus` and `mpc.branch` are read. When the file
//! contains the standard post-processing line that converts branch
//! impedances from ohms to p.u., the same conversion is applied here.

use std::collections::HashMap;

use regex::Regex;

use super::{Bus, Line, RadialNetwork};
use crate::error::{Error, Result};

const BUS_I: usize = 0;
const BUS_TYPE: usize = 1;
const VM: usize = 7;
const BASE_KV: usize = 9;
const F_BUS: usize = 0;
const T_BUS: usize = 1;
const BR_R: usize = 2;
const BR_X: usize = 3;
const RATE_A: usize = 5;
const BR_STATUS: usize = 10;

struct Matrix {
    rows: Vec<Vec<f64>>,
    /// Source line of each row, 1-based.
    lines: Vec<usize>,
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn scalar(text: &str, name: &str) -> Result<f64> {
    let re = Regex::new(&format!(r"mpc\.{name}\s*=\s*([-+0-9.eE]+)\s*;")).expect("static regex");
    for (i, raw) in text.lines().enumerate() {
        if let Some(c) = re.captures(strip_comment(raw)) {
            return c[1].parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad value for mpc.{name}"),
            });
        }
    }
    Err(Error::Parse {
        line: 0,
        msg: format!("mpc.{name} not found"),
    })
}

fn matrix(text: &str, name: &str, min_cols: usize) -> Result<Matrix> {
    let open = Regex::new(&format!(r"^\s*mpc\.{name}\s*=\s*\[")).expect("static regex");
    let mut it = text.lines().enumerate();
    let mut found = false;
    for (_, raw) in it.by_ref() {
        if open.is_match(raw) {
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::Parse {
            line: 0,
            msg: format!("mpc.{name} not found"),
        });
    }
    let mut out = Matrix {
        rows: Vec::new(),
        lines: Vec::new(),
    };
    for (i, raw) in it {
        let body = strip_comment(raw);
        let (body, done) = match body.find(']') {
            Some(k) => (&body[..k], true),
            None => (body, false),
        };
        for chunk in body.split(';') {
            let fields: Vec<&str> = chunk.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let row = fields
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("non-numeric entry in mpc.{name}"),
                })?;
            if row.len() < min_cols {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("mpc.{name} row has {} columns, need {min_cols}", row.len()),
                });
            }
            out.rows.push(row);
            out.lines.push(i + 1);
        }
        if done {
            return Ok(out);
        }
    }
    Err(Error::Parse {
        line: text.lines().count(),
        msg: format!("mpc.{name} is not closed"),
    })
}

fn converts_ohms(text: &str) -> bool {
    let re = Regex::new(
        r"mpc\.branch\(\s*:\s*,\s*\[\s*BR_R\s+BR_X\s*\]\s*\)\s*=\s*mpc\.branch\(\s*:\s*,\s*\[\s*BR_R\s+BR_X\s*\]\s*\)\s*/\s*\(\s*Vbase\s*\^\s*2\s*/\s*Sbase\s*\)",
    )
    .expect("static regex");
    text.lines().any(|l| re.is_match(strip_comment(l)))
}

/// Parses a radial MATPOWER case into a network with compact bus ids.
///
/// The reference (type 3) bus becomes bus 1; the remaining buses keep their
/// file order. Out-of-service branches are dropped, and a zero `RATE_A`
/// leaves the line without a flow limit.
pub fn parse_matpower_case(text: &str, power_factor: f64) -> Result<RadialNetwork> {
    let base_mva = scalar(text, "baseMVA")?;
    let bus = matrix(text, "bus", 10)?;
    let branch = matrix(text, "branch", 11)?;

    let refs: Vec<usize> = (0..bus.rows.len())
        .filter(|&k| bus.rows[k][BUS_TYPE] == 3.0)
        .collect();
    let ref_row = match refs.as_slice() {
        [k] => *k,
        [] => return Err(Error::NoReferenceBus),
        [_, k, ..] => {
            return Err(Error::Parse {
                line: bus.lines[*k],
                msg: "more than one reference bus".into(),
            })
        }
    };

    let mut order = vec![ref_row];
    order.extend((0..bus.rows.len()).filter(|&k| k != ref_row));
    let mut compact = HashMap::new();
    for (new, &k) in order.iter().enumerate() {
        let ext = bus.rows[k][BUS_I];
        if compact.insert(ext.to_bits(), new + 1).is_some() {
            return Err(Error::Parse {
                line: bus.lines[k],
                msg: format!("duplicate bus number {ext}"),
            });
        }
    }

    let ohm_scale = if converts_ohms(text) {
        let kv = bus.rows[ref_row][BASE_KV];
        if !(kv > 0.0) {
            return Err(Error::Parse {
                line: bus.lines[ref_row],
                msg: "ohm conversion needs a positive BASE_KV".into(),
            });
        }
        (kv * 1e3).powi(2) / (base_mva * 1e6)
    } else {
        1.0
    };

    let vm = bus.rows[ref_row][VM];
    let u_base = if vm > 0.0 { vm * vm } else { 1.0 };
    let buses = (1..=order.len())
        .map(|id| Bus {
            id,
            base_voltage_sq: u_base,
        })
        .collect();

    let mut lines = Vec::new();
    for (row, &src) in branch.rows.iter().zip(&branch.lines) {
        if row[BR_STATUS] == 0.0 {
            continue;
        }
        let end = |v: f64| {
            compact.get(&v.to_bits()).copied().ok_or(Error::Parse {
                line: src,
                msg: format!("branch references unknown bus {v}"),
            })
        };
        let rate = row[RATE_A];
        lines.push(Line {
            from_bus: end(row[F_BUS])?,
            to_bus: end(row[T_BUS])?,
            resistance_pu: row[BR_R] / ohm_scale,
            reactance_pu: row[BR_X] / ohm_scale,
            flow_limit_mw: (rate > 0.0).then_some(rate),
        });
    }
    RadialNetwork::new(buses, lines, base_mva, power_factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "function mpc = tiny
mpc.baseMVA = 10;
mpc.bus = [ %% comment
\t7\t1\t0\t0\t0\t0\t1\t1\t0\t12.47\t1\t1.1\t0.9;
\t3\t3\t0\t0\t0\t0\t1\t1\t0\t12.47\t1\t1\t1;
\t9\t1\t0\t0\t0\t0\t1\t1\t0\t12.47\t1\t1.1\t0.9;
];
mpc.branch = [
\t3\t7\t1.5\t3.0\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
\t7\t9\t1.5\t3.0\t0\t5\t0\t0\t0\t0\t1\t-360\t360;
];
";

    #[test]
    fn compacts_ids_with_reference_first() {
        let net = parse_matpower_case(TINY, 0.98).unwrap();
        assert_eq!(net.bus_count(), 3);
        // file bus 7 -> 2, file bus 9 -> 3
        assert_eq!((net.lines()[0].from_bus, net.lines()[0].to_bus), (2, 1));
        assert_eq!((net.lines()[1].from_bus, net.lines()[1].to_bus), (3, 2));
        assert_eq!(net.lines()[0].flow_limit_mw, None);
        assert_eq!(net.lines()[1].flow_limit_mw, Some(5.0));
        assert_eq!(net.lines()[0].resistance_pu, 1.5);
    }

    #[test]
    fn applies_ohm_conversion_when_declared() {
        let text = format!(
            "{TINY}\nmpc.branch(:, [BR_R BR_X]) = mpc.branch(:, [BR_R BR_X]) / (Vbase^2 / Sbase);\n"
        );
        let net = parse_matpower_case(&text, 0.98).unwrap();
        let zbase = 12.47f64.powi(2) / 10.0;
        assert!((net.lines()[0].resistance_pu - 1.5 / zbase).abs() < 1e-15);
    }

    #[test]
    fn missing_reference_is_reported() {
        let text = TINY.replace("\t3\t3\t", "\t3\t1\t");
        assert_eq!(parse_matpower_case(&text, 0.98).unwrap_err(), Error::NoReferenceBus);
    }

    #[test]
    fn bad_entry_reports_its_line() {
        let text = TINY.replace("\t9\t1\t0", "\t9\tx\t0");
        match parse_matpower_case(&text, 0.98) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
    }
}

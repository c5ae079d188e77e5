use access_auction::solver::{Program, Sense, Variable};
use rand::Rng;

use super::reference_simplex::ReferenceLp;

/// Random bounded LP with a known interior feasible point, expressed both
/// for the library solver and for the reference tableau.
pub fn random_lp(rng: &mut impl Rng) -> (Program, ReferenceLp) {
    let n = rng.gen_range(2..=20);
    let me = rng.gen_range(0..=(n - 1).min(5));
    let ml = rng.gen_range(1..=8);
    let upper: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
    let x0: Vec<f64> = upper.iter().map(|u| u * rng.gen_range(0.2..0.8)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut row = |slack: f64| {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = a.iter().zip(&x0).map(|(a, x)| a * x).sum::<f64>() + slack;
        (a, b)
    };
    let eq: Vec<(Vec<f64>, f64)> = (0..me).map(|_| row(0.0)).collect();
    let le: Vec<(Vec<f64>, f64)> = (0..ml).map(|_| row(0.3)).collect();

    let mut prog = Program::new();
    for j in 0..n {
        prog.add_variable(Variable::linear(format!("x{j}"), 0.0, upper[j], c[j]));
    }
    for (i, (a, b)) in eq.iter().enumerate() {
        prog.add_constraint(format!("eq{i}"), a.iter().copied().enumerate().collect(), Sense::Eq, *b);
    }
    for (i, (a, b)) in le.iter().enumerate() {
        prog.add_constraint(format!("le{i}"), a.iter().copied().enumerate().collect(), Sense::Le, *b);
    }
    (prog, ReferenceLp { c, upper, eq, le })
}

//! Textbook dense-tableau simplex (two phases, Bland's rule) used only to
//! cross-check the library solver. Deliberately naive.

pub struct ReferenceLp {
    pub c: Vec<f64>,
    pub upper: Vec<f64>,
    pub eq: Vec<(Vec<f64>, f64)>,
    pub le: Vec<(Vec<f64>, f64)>,
}

pub struct ReferenceSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub eq_duals: Vec<f64>,
    pub le_duals: Vec<f64>,
}

const EPS: f64 = 1e-11;

pub fn solve_reference(lp: &ReferenceLp) -> Option<ReferenceSolution> {
    let n = lp.c.len();
    let me = lp.eq.len();
    let ml = lp.le.len();
    let m = me + ml + n;
    let n_struct = n + ml + n;
    let n_cols = n_struct + m;
    let rhs_col = n_cols;

    let mut t = vec![vec![0.0; n_cols + 1]; m];
    let mut flipped = vec![false; m];
    for (i, (a, b)) in lp.eq.iter().enumerate() {
        t[i][..n].copy_from_slice(a);
        t[i][rhs_col] = *b;
    }
    for (k, (a, b)) in lp.le.iter().enumerate() {
        let i = me + k;
        t[i][..n].copy_from_slice(a);
        t[i][n + k] = 1.0;
        t[i][rhs_col] = *b;
    }
    for j in 0..n {
        let i = me + ml + j;
        t[i][j] = 1.0;
        t[i][n + ml + j] = 1.0;
        t[i][rhs_col] = lp.upper[j];
    }
    for i in 0..m {
        if t[i][rhs_col] < 0.0 {
            flipped[i] = true;
            for v in t[i].iter_mut() {
                *v = -*v;
            }
        }
        t[i][n_struct + i] = 1.0;
    }
    let mut basis: Vec<usize> = (n_struct..n_cols).collect();

    // phase 1: maximize -sum(artificials)
    let mut cost1 = vec![0.0; n_cols];
    for c in cost1.iter_mut().skip(n_struct) {
        *c = -1.0;
    }
    run(&mut t, &mut basis, &cost1, n_cols, n_cols)?;
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &b)| b >= n_struct)
        .map(|(i, _)| t[i][rhs_col])
        .sum();
    if infeas > 1e-8 {
        return None;
    }
    // drive zero-level artificials out of the basis
    for i in 0..m {
        if basis[i] >= n_struct {
            if let Some(j) = (0..n_struct).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, i, j);
                basis[i] = j;
            }
        }
    }

    // phase 2: artificials may not enter
    let mut cost2 = vec![0.0; n_cols];
    cost2[..n].copy_from_slice(&lp.c);
    run(&mut t, &mut basis, &cost2, n_struct, n_cols)?;

    let mut x = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            x[b] = t[i][rhs_col];
        }
    }
    let objective = x.iter().zip(&lp.c).map(|(a, b)| a * b).sum();
    // y_i = c_B^T B^{-1} e_i; B^{-1} sits under the artificial columns
    let mut y = vec![0.0; m];
    for (i, yi) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for (k, &b) in basis.iter().enumerate() {
            s += cost2[b] * t[k][n_struct + i];
        }
        *yi = if flipped[i] { -s } else { s };
    }
    Some(ReferenceSolution {
        x,
        objective,
        eq_duals: y[..me].to_vec(),
        le_duals: y[me..me + ml].to_vec(),
    })
}

fn run(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], enter_limit: usize, n_cols: usize) -> Option<()> {
    let m = t.len();
    for _ in 0..100_000 {
        // Bland: first column with positive reduced profit
        let mut entering = None;
        for j in 0..enter_limit {
            if basis.contains(&j) {
                continue;
            }
            let mut d = cost[j];
            for i in 0..m {
                d -= cost[basis[i]] * t[i][j];
            }
            if d > EPS {
                entering = Some(j);
                break;
            }
        }
        let Some(q) = entering else { return Some(()) };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[i][q];
            if a > EPS {
                let ratio = t[i][n_cols] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        if ratio < best - 1e-13 || (ratio <= best + 1e-13 && basis[i] < basis[r]) {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
        }
        let (r, _) = leave?;
        pivot(t, r, q);
        basis[r] = q;
    }
    None
}

fn pivot(t: &mut [Vec<f64>], r: usize, q: usize) {
    let p = t[r][q];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let prow = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i == r {
            continue;
        }
        let f = row[q];
        if f != 0.0 {
            for (v, pv) in row.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
        }
    }
}

//! Slow, independent reference implementations used only by tests.
#![allow(dead_code)]

use rand::Rng;

const EPS: f64 = 1e-12;

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = tab[row][col];
    for v in tab[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = tab[row].clone();
    for (i, r) in tab.iter_mut().enumerate() {
        if i == row {
            continue;
        }
        let f = r[col];
        if f != 0.0 {
            for (v, pv) in r.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
    }
    basis[row] = col;
}

/// Bland's-rule primal simplex over the first `allowed` columns.
fn optimize(tab: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: usize) {
    let rhs = tab[0].len() - 1;
    loop {
        let entering = (0..allowed).find(|&j| {
            let reduced: f64 = cost[j]
                - tab
                    .iter()
                    .zip(basis.iter())
                    .map(|(r, &b)| cost[b] * r[j])
                    .sum::<f64>();
            reduced < -1e-11
        });
        let Some(col) = entering else { return };
        let leaving = (0..tab.len())
            .filter(|&i| tab[i][col] > EPS)
            .min_by(|&a, &b| {
                let ra = tab[a][rhs] / tab[a][col];
                let rb = tab[b][rhs] / tab[b][col];
                ra.total_cmp(&rb).then(basis[a].cmp(&basis[b]))
            })
            .expect("transport problems are bounded");
        pivot(tab, basis, leaving, col);
    }
}

/// Minimises `c.x` subject to `a x = b`, `x >= 0`, with `b >= 0`, by
/// two-phase tableau simplex.
pub fn simplex_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    let (m, n) = (a.len(), c.len());
    let mut tab: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = a[i].clone();
            row.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
            row.push(b[i]);
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut phase1 = vec![0.0; n];
    phase1.extend(std::iter::repeat_n(1.0, m));
    optimize(&mut tab, &mut basis, &phase1, n + m);
    let rhs = n + m;
    let infeasibility: f64 = (0..m).filter(|&i| basis[i] >= n).map(|i| tab[i][rhs]).sum();
    assert!(infeasibility < 1e-9, "infeasible LP");
    let mut i = 0;
    while i < tab.len() {
        if basis[i] >= n {
            match (0..n).find(|&j| tab[i][j].abs() > 1e-9) {
                Some(j) => pivot(&mut tab, &mut basis, i, j),
                None => {
                    tab.remove(i);
                    basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }
    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, m));
    optimize(&mut tab, &mut basis, &phase2, n);
    tab.iter()
        .zip(&basis)
        .map(|(r, &b)| phase2[b] * r[rhs])
        .sum()
}

/// Earth mover's distance as the optimal transport linear program with
/// ground cost `|x_i - x_j|`.
pub fn transport_lp(p: &[f64], q: &[f64], positions: &[f64]) -> f64 {
    let k = p.len();
    let n = k * k;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..k {
        let mut row = vec![0.0; n];
        for j in 0..k {
            row[i * k + j] = 1.0;
        }
        a.push(row);
        b.push(p[i]);
    }
    // The last column constraint is implied by the others.
    for j in 0..k - 1 {
        let mut row = vec![0.0; n];
        for i in 0..k {
            row[i * k + j] = 1.0;
        }
        a.push(row);
        b.push(q[j]);
    }
    let c: Vec<f64> = (0..n)
        .map(|v| (positions[v / k] - positions[v % k]).abs())
        .collect();
    simplex_min(&a, &b, &c)
}

fn inverse_cdf(w: &[f64], positions: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for (x, p) in positions.iter().zip(w) {
        acc += p;
        if u < acc {
            return *x;
        }
    }
    *positions.last().unwrap()
}

/// Wasserstein-1 as the integral of `|F^-1(u) - G^-1(u)|` over `u`, evaluated
/// exactly between the merged CDF breakpoints.
pub fn quantile_wasserstein(p: &[f64], q: &[f64], positions: &[f64]) -> f64 {
    let mut cuts: Vec<f64> = vec![0.0, 1.0];
    for w in [p, q] {
        let mut acc = 0.0;
        for v in w {
            acc += v;
            cuts.push(acc.min(1.0));
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|c| {
            let mid = 0.5 * (c[0] + c[1]);
            (c[1] - c[0]) * (inverse_cdf(p, positions, mid) - inverse_cdf(q, positions, mid)).abs()
        })
        .sum()
}

/// Position-wise mean, summed naively.
pub fn brute_average(labels: &[Vec<f64>]) -> Vec<f64> {
    let k = labels[0].len();
    (0..k)
        .map(|i| {
            let mut s = 0.0;
            for l in labels {
                s += l[i];
            }
            s / labels.len() as f64
        })
        .collect()
}

/// Mean over all ordered pairs `i != j`.
pub fn brute_diversity(labels: &[Vec<f64>], positions: &[f64]) -> f64 {
    let n = labels.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += quantile_wasserstein(&labels[i], &labels[j], positions);
            }
        }
    }
    s / (n * (n - 1)) as f64
}

/// Random probability vector; some draws include exact zeros.
pub fn random_weights(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    if sum == 0.0 {
        let mut w = vec![0.0; k];
        w[rng.random_range(0..k)] = 1.0;
        return w;
    }
    raw.iter().map(|w| w / sum).collect()
}

/// Strictly increasing, irregularly spaced positions.
pub fn random_positions(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let mut x = rng.random_range(-5.0..5.0);
    (0..k)
        .map(|_| {
            let v = x;
            x += rng.random_range(0.1..2.0);
            v
        })
        .collect()
}

//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

/// `exp(-|a - b|^2 / (2 l^2))`, written out directly.
pub fn kernel(a: &[f64], b: &[f64], l: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * l * l)).exp()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// GP posterior mean at `x` by a direct solve of `(K + jitter I) w = y` per output.
pub fn gp_mean(inputs: &[Vec<f64>], targets: &[Vec<f64>], l: f64, jitter: f64, x: &[f64]) -> Vec<f64> {
    let n = inputs.len();
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| kernel(&inputs[i], &inputs[j], l) + if i == j { jitter } else { 0.0 })
                .collect()
        })
        .collect();
    let kx: Vec<f64> = inputs.iter().map(|xi| kernel(x, xi, l)).collect();
    (0..targets[0].len())
        .map(|o| {
            let y: Vec<f64> = targets.iter().map(|t| t[o]).collect();
            let w = solve(gram.clone(), y);
            kx.iter().zip(&w).map(|(k, w)| k * w).sum()
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Distance from every point to its nearest other point.
pub fn nn_distances(points: &[Vec<f64>]) -> Vec<f64> {
    (0..points.len())
        .map(|i| {
            (0..points.len())
                .filter(|&j| j != i)
                .map(|j| dist(&points[i], &points[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `1 / min_j |z_i - z_j|` over all pairs.
pub fn density(motions: &[Vec<f64>]) -> Vec<f64> {
    nn_distances(motions).into_iter().map(|d| 1.0 / d).collect()
}

/// The sparsest motion with a finite density (first on ties), its first
/// nearest neighbour, and the midpoint of their controls.
pub fn select(controls: &[Vec<f64>], motions: &[Vec<f64>]) -> Option<(usize, usize, Vec<f64>)> {
    let rho = density(motions);
    let mut p: Option<usize> = None;
    for i in 0..rho.len() {
        if rho[i].is_finite() && p.is_none_or(|b| rho[i] < rho[b]) {
            p = Some(i);
        }
    }
    let p = p?;
    let mut q = usize::MAX;
    let mut best = f64::INFINITY;
    for j in 0..motions.len() {
        if j != p && (q == usize::MAX || dist(&motions[p], &motions[j]) < best) {
            q = j;
            best = dist(&motions[p], &motions[j]);
        }
    }
    let mid = controls[p].iter().zip(&controls[q]).map(|(a, b)| (a + b) * 0.5).collect();
    Some((p, q, mid))
}

/// Population standard deviation over mean.
pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    var.sqrt() / mean
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

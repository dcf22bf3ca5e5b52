//! Oracles shared by the integration tests. Nothing here calls into the
//! library's own reference implementations.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use vaml_core::mdp::FiniteMdp;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn variance(p: &[f64], v: &[f64]) -> f64 {
    let mu = dot(p, v);
    p.iter().zip(v).map(|(pi, vi)| pi * (vi - mu) * (vi - mu)).sum()
}

/// Row `row` of `matrix^power` by repeated vector-matrix products.
pub fn power_row(matrix: &DMatrix<f64>, row: usize, power: usize) -> Vec<f64> {
    let n = matrix.ncols();
    let mut dist: Vec<f64> = (0..n).map(|j| matrix[(row, j)]).collect();
    for _ in 1..power {
        dist = (0..n).map(|j| (0..n).map(|i| dist[i] * matrix[(i, j)]).sum()).collect();
    }
    dist
}

/// A random distribution over `n` points with at least one nonzero entry
/// and, with `sparse`, some exact zeros.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize, sparse: bool) -> Vec<f64> {
    let mut raw: Vec<f64> = (0..n)
        .map(|_| if sparse && rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.05..1.0) })
        .collect();
    if raw.iter().all(|&x| x == 0.0) {
        raw[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

pub fn random_mdp<R: Rng>(rng: &mut R, n: usize, discount: f64) -> FiniteMdp {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_distribution(rng, n, true)).collect();
    let reward = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    FiniteMdp::from_rows(&rows, reward, discount).expect("valid random mdp")
}

/// `Σ_{tuples} Π q[i] · f(tuple)` over all `k`-tuples of `0..q.len()`.
pub fn expect_over_tuples(q: &[f64], k: usize, mut f: impl FnMut(&[usize]) -> f64) -> f64 {
    let n = q.len();
    let mut tuple = vec![0usize; k];
    let mut total = 0.0;
    'outer: loop {
        let weight: f64 = tuple.iter().map(|&i| q[i]).product();
        if weight != 0.0 {
            total += weight * f(&tuple);
        }
        for pos in 0..k {
            tuple[pos] += 1;
            if tuple[pos] < n {
                continue 'outer;
            }
            tuple[pos] = 0;
        }
        return total;
    }
}

/// All distributions on `support` points with entries in multiples of
/// `1 / resolution`.
pub fn simplex_grid(support: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn fill(rest: usize, slots: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            prefix.push(rest);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=rest {
            prefix.push(c);
            fill(rest - c, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut counts = Vec::new();
    fill(resolution, support, &mut Vec::new(), &mut counts);
    counts
        .into_iter()
        .map(|c| c.into_iter().map(|x| x as f64 / resolution as f64).collect())
        .collect()
}

pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut point = x.to_vec();
    (0..x.len())
        .map(|i| {
            point[i] = x[i] + h;
            let up = f(&point);
            point[i] = x[i] - h;
            let down = f(&point);
            point[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Value iteration until successive iterates agree to `1e-14`.
pub fn value_iteration(mdp: &FiniteMdp) -> Vec<f64> {
    let n = mdp.n_states();
    let mut v = vec![0.0; n];
    loop {
        let next: Vec<f64> = (0..n)
            .map(|x| mdp.reward()[x] + mdp.discount() * (0..n).map(|y| mdp.transition()[(x, y)] * v[y]).sum::<f64>())
            .collect();
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-14 {
            return v;
        }
    }
}

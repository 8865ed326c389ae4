//! Independent oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use syndecomp::MomentSystem;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `A A' / r` with `A` a K x r standard normal matrix; singular when r < K.
pub fn random_psd(rng: &mut impl Rng, k: usize, rank: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, rank, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    (&a * a.transpose()) / rank as f64
}

pub fn random_system(rng: &mut impl Rng, k: usize) -> MomentSystem {
    let rank = rng.random_range(1..=k);
    let h = random_psd(rng, k, rank);
    let hv = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
    MomentSystem::new(h, hv, 0.0, 1000).unwrap()
}

fn qp_value(h: &DMatrix<f64>, hv: &DVector<f64>, w: &DVector<f64>) -> f64 {
    w.dot(&(h * w)) - 2.0 * hv.dot(w)
}

fn compositions(k: usize, m: usize, prefix: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if prefix.len() == k - 1 {
        let used: usize = prefix.iter().sum();
        prefix.push(m - used);
        out(prefix);
        prefix.pop();
        return;
    }
    let used: usize = prefix.iter().sum();
    for v in 0..=(m - used) {
        prefix.push(v);
        compositions(k, m, prefix, out);
        prefix.pop();
    }
}

/// Grid resolution for the oracle's starting search: 1e-3 where the grid
/// is enumerable, otherwise the finest grid with at most ~2e5 points.
pub fn grid_steps(k: usize) -> usize {
    match k {
        1 | 2 | 3 => 1000,
        4 => 100,
        5 => 40,
        _ => 22,
    }
}

/// Minimum of `w'Hw - 2h'w` over the simplex: best grid point, then exact
/// pairwise mass exchanges until no exchange improves the value.
pub fn qp_oracle(h: &DMatrix<f64>, hv: &DVector<f64>) -> (DVector<f64>, f64) {
    let k = hv.len();
    let m = grid_steps(k);
    let mut best = (DVector::zeros(k), f64::INFINITY);
    compositions(k, m, &mut Vec::new(), &mut |c| {
        let w = DVector::from_fn(k, |i, _| c[i] as f64 / m as f64);
        let v = qp_value(h, hv, &w);
        if v < best.1 {
            best = (w, v);
        }
    });
    let mut w = best.0;
    for _ in 0..200_000 {
        let before = qp_value(h, hv, &w);
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                // move t from j to i, t in [-w_i, w_j]
                let g = &(h * &w) - hv;
                let slope = g[i] - g[j];
                let curv = h[(i, i)] + h[(j, j)] - 2.0 * h[(i, j)];
                let (lo, hi) = (-w[i], w[j]);
                let t = if curv > 1e-300 {
                    (-slope / curv).clamp(lo, hi)
                } else if slope < 0.0 {
                    hi
                } else {
                    lo
                };
                w[i] += t;
                w[j] -= t;
            }
        }
        let after = qp_value(h, hv, &w);
        if before - after <= 1e-16 * (1.0 + before.abs()) {
            break;
        }
    }
    let v = qp_value(h, hv, &w);
    (w, v)
}

/// Cone projection by enumerating every sign pattern of the multiplier and
/// keeping the one that satisfies the KKT conditions.
///
/// Minimizes `n0 (y - l)' M (y - l)` over `l_j <= 0` where `w_j = 0` and
/// `l_j = 0` elsewhere. Returns `(t, df)` with `df` the number of zero
/// entries of the minimizer.
pub fn cone_oracle(y: &DVector<f64>, omega: &DMatrix<f64>, w: &DVector<f64>, n0: usize) -> (f64, usize) {
    let k = y.len();
    let m = omega.clone().try_inverse().unwrap();
    let m = (&m + m.transpose()) * 0.5;
    let scale = 1.0 + y.norm();
    let mut found: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << k) {
        let neg: Vec<usize> = (0..k).filter(|&j| mask & (1 << j) != 0).collect();
        if neg.iter().any(|&j| w[j] > 1e-12) {
            continue;
        }
        let zero: Vec<usize> = (0..k).filter(|&j| mask & (1 << j) == 0).collect();
        let mut lam = DVector::zeros(k);
        if !neg.is_empty() {
            // stationarity on the negative block: [M (y - l)]_neg = 0
            let m_nn = DMatrix::from_fn(neg.len(), neg.len(), |a, b| m[(neg[a], neg[b])]);
            let rhs = DVector::from_fn(neg.len(), |a, _| {
                (0..k).map(|c| m[(neg[a], c)] * y[c]).sum::<f64>()
            });
            let Some(sol) = m_nn.lu().solve(&rhs) else { continue };
            for (a, &j) in neg.iter().enumerate() {
                lam[j] = sol[a];
            }
        }
        let resid = &m * (y - &lam);
        let primal = neg.iter().all(|&j| lam[j] <= 1e-12 * scale);
        let dual = zero.iter().all(|&j| w[j] > 1e-12 || resid[j] >= -1e-10 * scale);
        if primal && dual {
            let d = y - &lam;
            let t = n0 as f64 * d.dot(&(&m * &d));
            if found.as_ref().is_none_or(|(bt, _)| t < *bt) {
                found = Some((t, lam));
            }
        }
    }
    let (t, lam) = found.expect("a KKT point exists for a strictly convex projection");
    let df = lam.iter().filter(|v| v.abs() <= 1e-8 * scale).count();
    (t.max(0.0), df)
}

/// Random point on the simplex with a random set of exact zeros, keeping at
/// least one positive entry.
pub fn random_sparse_simplex(rng: &mut impl Rng, k: usize) -> DVector<f64> {
    loop {
        let mut w = DVector::from_fn(k, |_, _| {
            if rng.random_bool(0.4) {
                0.0
            } else {
                rng.random::<f64>()
            }
        });
        let s = w.sum();
        if s > 0.0 {
            w /= s;
            return w;
        }
    }
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

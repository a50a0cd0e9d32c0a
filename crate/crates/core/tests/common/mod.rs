//! Slow reference implementations shared by the integration tests and the
//! acceptance binary. Each one is written from the definition, not from the
//! library code.

#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random frames, `len` x `dim`, entries in [-1, 1].
pub fn random_frames(rng: &mut ChaCha8Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..len)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn frames_to_sequence(frames: &[Vec<f64>]) -> ifm::dtw::Sequence {
    let dim = frames[0].len();
    ifm::dtw::Sequence::new(dim, frames.iter().flatten().copied().collect()).unwrap()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum over every monotone warping path, enumerated recursively.
pub fn dtw_exhaustive(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    fn walk(x: &[Vec<f64>], y: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + euclid(&x[i], &y[j]);
        if i + 1 == x.len() && j + 1 == y.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < x.len() {
            walk(x, y, i + 1, j, acc, best);
        }
        if j + 1 < y.len() {
            walk(x, y, i, j + 1, acc, best);
        }
        if i + 1 < x.len() && j + 1 < y.len() {
            walk(x, y, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(x, y, 0, 0, 0.0, &mut best);
    best
}

/// `½ αᵀQα − Σα` with `Q = (yyᵀ) ∘ K`.
pub fn dual_value(k: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[(i, j)];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

/// Euclidean projection onto `{0 ≤ a ≤ c, yᵀa = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - mu * yi).clamp(0.0, c)).collect() };
    let g = |mu: f64| -> f64 { at(mu).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    // g is non-increasing in mu
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Accelerated projected gradient on the soft-margin dual, run until the
/// iterate moves less than `tol`.
pub fn svm_dual_oracle(k: &DMatrix<f64>, y: &[f64], c: f64, tol: f64) -> Vec<f64> {
    let n = y.len();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * k[(i, j)]);
    let lipschitz = (0..n)
        .map(|i| (0..n).map(|j| q[(i, j)].abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let step = 1.0 / lipschitz;
    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut f_x = 0.0;
    for _ in 0..200_000 {
        let grad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q[(i, j)] * z[j]).sum::<f64>() - 1.0).collect();
        let cand: Vec<f64> = z.iter().zip(&grad).map(|(zi, gi)| zi - step * gi).collect();
        let next = project(&cand, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // restart momentum when the objective goes up
        let f_next = dual_value(k, y, &next);
        let restart = f_next > f_x;
        z = if restart {
            next.clone()
        } else {
            next.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect()
        };
        t = if restart { 1.0 } else { t_next };
        x = next;
        f_x = f_next;
        if moved < tol {
            break;
        }
    }
    x
}

/// Plug-in entropy in nats from raw probabilities.
fn entropy(counts: &HashMap<Vec<u8>, usize>, n: usize) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

fn joint(columns: &[&[u8]]) -> f64 {
    let n = columns[0].len();
    let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
    for r in 0..n {
        *counts.entry(columns.iter().map(|c| c[r]).collect()).or_default() += 1;
    }
    entropy(&counts, n)
}

pub fn mi(x: &[u8], y: &[u8]) -> f64 {
    joint(&[x]) + joint(&[y]) - joint(&[x, y])
}

pub fn cmi(x: &[u8], y: &[u8], z: &[u8]) -> f64 {
    joint(&[x, z]) + joint(&[y, z]) - joint(&[x, y, z]) - joint(&[z])
}

/// Equal-frequency codes: the number of edges `s[b·n/B]`, b = 1..B−1,
/// that are ≤ v.
pub fn equal_frequency_codes(column: &[f64], bins: usize) -> Vec<u8> {
    let mut s = column.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let edges: Vec<f64> = (1..bins).map(|b| s[b * n / bins]).collect();
    column
        .iter()
        .map(|&v| edges.iter().filter(|&&e| e <= v).count() as u8)
        .collect()
}

/// Non-lazy greedy CMIM: every candidate's full score
/// `min(I(Xj;Y), min_s I(Xj;Y|Xs))` recomputed at every step. Scores within 1e-12 count as ties and go to the lowest index.
pub fn cmim_oracle(codes: &[Vec<u8>], y: &[u8], k: usize) -> Vec<usize> {
    let d = codes.len();
    let mut selected: Vec<usize> = Vec::new();
    while selected.len() < k {
        let mut best = f64::NEG_INFINITY;
        let mut pick = None;
        for j in (0..d).filter(|j| !selected.contains(j)) {
            // Fleuret's score: I(Xj; Y) is part of the minimum
            let score = selected
                .iter()
                .map(|&s| cmi(&codes[j], y, &codes[s]))
                .fold(mi(&codes[j], y), f64::min);
            if score > best + 1e-12 {
                best = score;
                pick = Some(j);
            }
        }
        selected.push(pick.expect("candidate left"));
    }
    selected
}

/// `pinv(I − D^{-1/2} W D^{-1/2})` with `W = exp(−Δ²/2σ²)`, built by
/// explicit spectral inversion in the test.
pub fn laplacian_pinv_oracle(delta: &DMatrix<f64>, sigma: f64) -> DMatrix<f64> {
    let n = delta.nrows();
    let w = delta.map(|d| (-d * d / (2.0 * sigma * sigma)).exp());
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let l = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - w[(i, j)] / (deg[i] * deg[j]).sqrt()
    });
    let eig = nalgebra::SymmetricEigen::new(l);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > 1e-10 * max {
            let v = eig.eigenvectors.column(k);
            out += (&v * v.transpose()) / lambda;
        }
    }
    out
}

/// Labels for `n` points over `classes` classes, every class present.
pub fn balanced_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        y.swap(i, j);
    }
    y
}

/// Small synthetic dataset for protocol-level checks.
pub fn small_config(seed: u64, subjects: usize, trials: usize) -> ifm::SynthConfig {
    ifm::SynthConfig {
        n_subjects: subjects,
        trials_per_cell: trials,
        seed,
        ..ifm::SynthConfig::default()
    }
}

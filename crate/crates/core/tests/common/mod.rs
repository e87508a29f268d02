#![allow(dead_code)]

pub mod oracles;

use eigfree_core::geometry::DataMatrix;
use eigfree_core::loss::TargetVector;
use eigfree_core::linalg::SymMatrix;
use eigfree_core::SplitMix64;

/// Central difference `(f(x + h) − f(x − h)) / 2h` along each coordinate.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Elementwise `|a − b| ≤ rtol·max(|a|, |b|) + atol`.
pub fn close(a: f64, b: f64, rtol: f64, atol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()) + atol
}

pub fn all_close(a: &[f64], b: &[f64], rtol: f64, atol: f64) -> Result<(), String> {
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if !close(*x, *y, rtol, atol) {
            return Err(format!("entry {i}: analytic {x:e} vs reference {y:e}"));
        }
    }
    Ok(())
}

pub fn random_sym(n: usize, rng: &mut SplitMix64) -> SymMatrix {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = rng.normal(0.0, 1.0);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    SymMatrix::new(n, a).unwrap()
}

/// Random data matrix with `d` columns, entries of order one.
pub fn random_rows(d: usize, rpc: usize, count: usize, rng: &mut SplitMix64) -> DataMatrix {
    let data = (0..d * rpc * count).map(|_| rng.normal(0.0, 1.0)).collect();
    DataMatrix::new(d, rpc, data).unwrap()
}

pub fn random_target(d: usize, rng: &mut SplitMix64) -> TargetVector {
    TargetVector::normalized((0..d).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
}

pub fn random_logits(count: usize, rng: &mut SplitMix64) -> Vec<f64> {
    (0..count).map(|_| rng.uniform(-2.0, 2.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

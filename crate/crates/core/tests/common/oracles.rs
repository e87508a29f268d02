//! Finite-difference oracles shared by the gradient tests and the
//! acceptance run. Each returns the number of instances checked.

use super::*;
use eigfree_core::linalg::{eig_backward, sym_eig, SymMatrix};
use eigfree_core::loss::{
    eig_baseline_grad_weights, eigfree_grad_logits, eigfree_grad_weights, eigfree_loss,
    plane_grad_logits, plane_loss, LossConfig, WeightState,
};
use eigfree_core::net::WeightNet;
use eigfree_core::{Error, SplitMix64};

pub type Outcome = Result<usize, String>;

fn random_config(rng: &mut SplitMix64) -> LossConfig {
    let alpha = 10f64.powf(rng.uniform(-1.0, 2.0));
    let beta = 10f64.powf(rng.uniform(-3.0, -1.0));
    LossConfig::new(alpha, beta).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, g| m.max(g.abs()))
}

/// Logit gradient of the eigfree loss on random `d`-column data.
pub fn eigfree_logits(d: usize, rpc: usize, seeds: u64) -> Outcome {
    for seed in 0..seeds {
        let mut rng = SplitMix64::new(seed * 31 + d as u64);
        let count = rng.range_inclusive(8, 40);
        let x = random_rows(d, rpc, count, &mut rng);
        let e = random_target(d, &mut rng);
        let cfg = random_config(&mut rng);
        let logits = random_logits(count, &mut rng);
        let w = WeightState::new(logits.clone()).unwrap();
        let analytic = eigfree_grad_logits(&x, &w, &e, &cfg).unwrap();
        let numeric = central_diff(&logits, 1e-5, |l| {
            let w = WeightState::new(l.to_vec()).unwrap();
            eigfree_loss(&x, &w, &e, &cfg).unwrap().total
        });
        all_close(&analytic, &numeric, 1e-5, 1e-8 * (1.0 + max_abs(&analytic)))
            .map_err(|m| format!("d={d} seed={seed}: {m}"))?;
    }
    Ok(seeds as usize)
}

/// Plane logit gradient, which must include the weighted mean's dependence
/// on the weights.
pub fn plane_logits(seeds: u64) -> Outcome {
    for seed in 0..seeds {
        let mut rng = SplitMix64::new(1000 + seed);
        let count = rng.range_inclusive(5, 30);
        let points: Vec<[f64; 3]> = (0..count)
            .map(|_| [rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.normal(0.3, 0.2)])
            .collect();
        let e = random_target(3, &mut rng);
        let cfg = if seed % 2 == 0 {
            LossConfig::PLANE
        } else {
            random_config(&mut rng)
        };
        let logits = random_logits(count, &mut rng);
        let w = WeightState::new(logits.clone()).unwrap();
        let analytic = plane_grad_logits(&points, &w, &e, &cfg).unwrap();
        let h = 1e-4;
        let numeric = central_diff(&logits, h, |l| {
            let w = WeightState::new(l.to_vec()).unwrap();
            plane_loss(&points, &w, &e, &cfg).unwrap().total
        });
        // With α = 1e5 the loss is large and cancellation in the difference
        // sets the floor at a few ε·|L|/h.
        let value = plane_loss(&points, &w, &e, &cfg).unwrap().total;
        let floor = 4.0 * f64::EPSILON * value.abs() / h;
        let atol = floor.max(1e-8 * (1.0 + max_abs(&analytic)));
        all_close(&analytic, &numeric, 1e-5, atol).map_err(|m| format!("seed={seed}: {m}"))?;
    }
    Ok(seeds as usize)
}

/// Column-wise sign alignment of `u` to `reference`, both row-major.
fn aligned(u: &[f64], reference: &[f64], n: usize) -> Vec<f64> {
    let mut out = u.to_vec();
    for c in 0..n {
        let d: f64 = (0..n).map(|r| u[r * n + c] * reference[r * n + c]).sum();
        if d < 0.0 {
            (0..n).for_each(|r| out[r * n + c] = -out[r * n + c]);
        }
    }
    out
}

/// Eigenvector backward pass against the directional derivative along a
/// random symmetric direction. Instances with a gap below 1e-2 are skipped.
pub fn eig_backward_directional(seeds: u64) -> Outcome {
    let mut checked = 0;
    for seed in 0..seeds {
        let mut rng = SplitMix64::new(2000 + seed);
        let n = [3, 9, 12][seed as usize % 3];
        let m = random_sym(n, &mut rng);
        let dir = random_sym(n, &mut rng);
        let g: Vec<f64> = (0..n * n).map(|_| rng.normal(0.0, 1.0)).collect();
        let es = sym_eig(&m).unwrap();
        let grad = match eig_backward(&es, &g) {
            Ok(v) => v,
            Err(Error::DegenerateSpectrum { .. }) => continue,
            Err(e) => return Err(e.to_string()),
        };
        let min_gap = es.values.windows(2).map(|w| w[0] - w[1]).fold(f64::MAX, f64::min);
        if min_gap < 1e-2 {
            continue;
        }
        let analytic = dot(grad.as_slice(), dir.as_slice());
        let numeric = central_diff(&[0.0], 1e-6, |t| {
            let p: Vec<f64> = m
                .as_slice()
                .iter()
                .zip(dir.as_slice())
                .map(|(a, b)| a + t[0] * b)
                .collect();
            let u = sym_eig(&SymMatrix::new(n, p).unwrap()).unwrap().vectors;
            dot(&aligned(&u, &es.vectors, n), &g)
        })[0];
        if !close(analytic, numeric, 1e-4, 1e-7) {
            return Err(format!("n={n} seed={seed}: analytic {analytic:e} vs numeric {numeric:e}"));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Weight gradient of the eigendecomposition-based baseline. Instances
/// with a relative gap below 1e-3, or a target nearly orthogonal to the
/// smallest eigenvector (where the sign choice flips), are skipped.
pub fn baseline_weights(seeds: u64) -> Outcome {
    let mut checked = 0;
    for seed in 0..seeds {
        let mut rng = SplitMix64::new(3000 + seed);
        let (d, rpc) = [(3, 1), (9, 1), (12, 2)][seed as usize % 3];
        let count = rng.range_inclusive(d + 4, 40);
        let x = random_rows(d, rpc, count, &mut rng);
        let e = random_target(d, &mut rng);
        let weights: Vec<f64> = (0..count).map(|_| rng.uniform(0.2, 1.0)).collect();
        let eval = match eig_baseline_grad_weights(&x, &weights, &e) {
            Ok(v) => v,
            Err(Error::DegenerateSpectrum { .. }) => continue,
            Err(err) => return Err(err.to_string()),
        };
        let es = sym_eig(&x.weighted_gram(&weights).unwrap()).unwrap();
        let rel_gap = es.values.windows(2).map(|w| w[0] - w[1]).fold(f64::MAX, f64::min)
            / es.values[0];
        let cos: f64 = dot(&eval.smallest, e.as_slice()).abs();
        if rel_gap < 1e-3 || cos < 1e-2 {
            continue;
        }
        let numeric = central_diff(&weights, 1e-6, |w| {
            eig_baseline_grad_weights(&x, w, &e).unwrap().loss
        });
        let atol = 1e-7 * (1.0 + max_abs(&eval.grad_weights));
        all_close(&eval.grad_weights, &numeric, 1e-4, atol)
            .map_err(|m| format!("d={d} seed={seed}: {m}"))?;
        checked += 1;
    }
    Ok(checked)
}

/// Finite difference of a single parameter, or `None` when a ReLU kink
/// lies inside the stencil (two step sizes disagree).
fn net_param_fd(
    net: &WeightNet,
    idx: usize,
    mut objective: impl FnMut(&WeightNet) -> f64,
) -> Option<f64> {
    let mut probe = net.clone();
    let mut fd = |h: f64| {
        let p0 = net.params()[idx];
        probe.params_mut()[idx] = p0 + h;
        let up = objective(&probe);
        probe.params_mut()[idx] = p0 - h;
        let down = objective(&probe);
        probe.params_mut()[idx] = p0;
        (up - down) / (2.0 * h)
    };
    let coarse = fd(1e-5);
    let fine = fd(5e-6);
    close(coarse, fine, 1e-5, 1e-9).then_some(fine)
}

/// Checks a random 20-parameter subset; returns how many probes were
/// dropped for straddling a kink.
fn check_net(
    hidden: &[usize],
    seed: u64,
    objective: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    features: &[f64],
    input_dim: usize,
) -> Result<usize, String> {
    let net = WeightNet::with_hidden(input_dim, hidden, seed).unwrap();
    let (w, cache) = net.forward(features).unwrap();
    let (_, gw) = objective(&w);
    let analytic = net.backward(&cache, &gw).unwrap();
    let mut rng = SplitMix64::new(seed ^ 0xfeed);
    let subset = rng.sample_indices(net.params().len(), 20.min(net.params().len()));
    let scale = max_abs(&analytic);
    let mut kinks = 0;
    for &i in &subset {
        let Some(numeric) = net_param_fd(&net, i, |n| objective(&n.forward(features).unwrap().0).0)
        else {
            kinks += 1;
            continue;
        };
        if !close(analytic[i], numeric, 1e-4, 1e-7 * (1.0 + scale)) {
            return Err(format!(
                "seed={seed} param={i}: analytic {:e} vs numeric {numeric:e}",
                analytic[i]
            ));
        }
    }
    Ok(kinks)
}

fn kink_budget(kinks: usize, seeds: u64) -> Outcome {
    // At most one dropped probe in ten.
    if kinks * 10 > seeds as usize * 20 {
        return Err(format!("{kinks} of {} probes straddled a kink", seeds * 20));
    }
    Ok(seeds as usize)
}

/// Full-size network backward through a random linear functional of its
/// output weights.
pub fn net_backward(seeds: u64) -> Outcome {
    let mut kinks = 0;
    for seed in 0..seeds {
        let mut rng = SplitMix64::new(4000 + seed);
        let count = rng.range_inclusive(10, 40);
        let features: Vec<f64> = (0..count * 4).map(|_| rng.normal(0.0, 1.0)).collect();
        let probe: Vec<f64> = (0..count).map(|_| rng.normal(0.0, 1.0)).collect();
        let objective = |w: &[f64]| (dot(w, &probe), probe.clone());
        kinks += check_net(&[32, 32, 32], seed, &objective, &features, 4)?;
    }
    kink_budget(kinks, seeds)
}

/// Two-hidden-unit network trained through the eigfree loss end to end.
pub fn tiny_net_end_to_end(seeds: u64) -> Outcome {
    let mut kinks = 0;
    for seed in 0..seeds {
        let mut rng = SplitMix64::new(5000 + seed);
        let count = rng.range_inclusive(10, 30);
        let x = random_rows(9, 1, count, &mut rng);
        let e = random_target(9, &mut rng);
        let cfg = random_config(&mut rng);
        let features: Vec<f64> = (0..count * 4).map(|_| rng.normal(0.0, 1.0)).collect();
        let objective = |w: &[f64]| {
            let (lb, g) = eigfree_grad_weights(&x, w, &e, &cfg).unwrap();
            (lb.total, g)
        };
        kinks += check_net(&[2], seed, &objective, &features, 4)?;
    }
    kink_budget(kinks, seeds)
}

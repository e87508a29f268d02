//! Per-correspondence weight network: dense layers with context
//! normalization and ReLU, a `relu(tanh(·))` head, hand-written backward,
//! checkpointing and a minibatch Adam training loop.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::DataMatrix;
use crate::loss::{eig_baseline_grad_weights, eigfree_grad_weights, LossConfig, TargetVector};
use crate::optim::{adam_step, AdamState};
use crate::rng::SplitMix64;

/// Variance floor of the context normalization.
pub const CONTEXT_EPS: f64 = 1e-3;
pub const HIDDEN: [usize; 3] = [32, 32, 32];
const CHECKPOINT_MAGIC: &str = "eigfree-weightnet v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightNet {
    /// Layer widths, input first, ending in 1.
    sizes: Vec<usize>,
    seed: u64,
    params: Vec<f64>,
}

/// Activations kept by [`WeightNet::forward`] for [`WeightNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    count: usize,
    /// Input to each layer (the first is the raw features).
    inputs: Vec<Vec<f64>>,
    /// Context-normalized pre-activations per hidden layer.
    normalized: Vec<Vec<f64>>,
    /// Per-channel `sqrt(var + eps)` per hidden layer.
    scales: Vec<Vec<f64>>,
    /// `tanh` of the head's pre-activation.
    head: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl WeightNet {
    /// The standard `d → 32 → 32 → 32 → 1` network.
    pub fn new(input_dim: usize, seed: u64) -> Result<Self> {
        Self::with_hidden(input_dim, &HIDDEN, seed)
    }

    /// Uniform `±1/√fan_in` initialization of every weight and bias.
    pub fn with_hidden(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let mut params = Vec::with_capacity(param_count(&sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.uniform(-bound, bound));
            }
        }
        Ok(Self {
            sizes,
            seed,
            params,
        })
    }

    pub fn from_params(sizes: Vec<usize>, seed: u64, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().expect("len >= 2") != 1 {
            return Err(Error::InvalidArgument(format!("bad layer spec {sizes:?}")));
        }
        if params.len() != param_count(&sizes) {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for layer spec {sizes:?} (expected {})",
                params.len(),
                param_count(&sizes)
            )));
        }
        ensure_finite(&params, "network parameters")?;
        Ok(Self {
            sizes,
            seed,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of layer `l`'s weight block; its bias follows at
    /// `offset + out·in`.
    fn offset(&self, l: usize) -> usize {
        param_count(&self.sizes[..=l])
    }

    fn dense(&self, l: usize, input: &[f64], count: usize) -> Vec<f64> {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let off = self.offset(l);
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        let mut out = vec![0.0; count * n_out];
        for c in 0..count {
            let x = &input[c * n_in..(c + 1) * n_in];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                out[c * n_out + o] = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    /// Weights in `[0, 1)` for `features`, laid out `count × input_dim`
    /// row-major.
    pub fn forward(&self, features: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let d = self.input_dim();
        if features.is_empty() || features.len() % d != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values for input dimension {d}",
                features.len()
            )));
        }
        ensure_finite(features, "features")?;
        let count = features.len() / d;
        let layers = self.sizes.len() - 1;
        let mut cache = ForwardCache {
            count,
            ..ForwardCache::default()
        };
        let mut h = features.to_vec();
        for l in 0..layers - 1 {
            let z = self.dense(l, &h, count);
            let (n, s) = context_norm(&z, count, self.sizes[l + 1]);
            cache.inputs.push(h);
            h = n.iter().map(|v| v.max(0.0)).collect();
            cache.normalized.push(n);
            cache.scales.push(s);
        }
        let o = self.dense(layers - 1, &h, count);
        cache.inputs.push(h);
        cache.head = o.iter().map(|v| v.tanh()).collect();
        let out = cache.head.iter().map(|t| t.max(0.0)).collect();
        Ok((out, cache))
    }

    /// Parameter gradient given `∂L/∂weights` and the cache of the forward
    /// pass that produced those weights.
    pub fn backward(&self, cache: &ForwardCache, grad_weights: &[f64]) -> Result<Vec<f64>> {
        let layers = self.sizes.len() - 1;
        if cache.inputs.len() != layers || cache.count == 0 {
            return Err(Error::MissingCache);
        }
        let count = cache.count;
        if grad_weights.len() != count {
            return Err(Error::DimensionMismatch(format!(
                "{} weight gradients for {count} correspondences",
                grad_weights.len()
            )));
        }
        ensure_finite(grad_weights, "weight gradient")?;
        let mut grad = vec![0.0; self.params.len()];
        // Through relu(tanh(o)).
        let mut delta: Vec<f64> = cache
            .head
            .iter()
            .zip(grad_weights)
            .map(|(t, g)| if *t > 0.0 { g * (1.0 - t * t) } else { 0.0 })
            .collect();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let input = &cache.inputs[l];
            let w = &self.params[off..off + n_in * n_out];
            let mut d_input = vec![0.0; count * n_in];
            for c in 0..count {
                let x = &input[c * n_in..(c + 1) * n_in];
                for o in 0..n_out {
                    let g = delta[c * n_out + o];
                    if g == 0.0 {
                        continue;
                    }
                    grad[off + n_in * n_out + o] += g;
                    let gw = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for (gi, xi) in gw.iter_mut().zip(x) {
                        *gi += g * xi;
                    }
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let di = &mut d_input[c * n_in..(c + 1) * n_in];
                    for (dv, wv) in di.iter_mut().zip(row) {
                        *dv += g * wv;
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Through ReLU and context normalization of layer l-1.
            let n = &cache.normalized[l - 1];
            for (dv, nv) in d_input.iter_mut().zip(n) {
                if *nv <= 0.0 {
                    *dv = 0.0;
                }
            }
            delta = context_norm_backward(&d_input, n, &cache.scales[l - 1], count, n_in);
        }
        Ok(grad)
    }

    /// Writes a text checkpoint: a versioned header with the layer spec,
    /// seed and parameter count, then one parameter per line in layer
    /// order. Floats use shortest round-trip formatting.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let sizes: Vec<String> = self.sizes.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "layers {}", sizes.join(" "));
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(s, "{p:?}");
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing or unsupported version header"));
        }
        let mut field = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::Checkpoint(format!("expected `{key}` line")));
            }
            Ok(it.map(str::to_string).collect())
        };
        let sizes = field("layers")?
            .iter()
            .map(|v| v.parse::<usize>().map_err(|e| Error::Checkpoint(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let seed = field("seed")?
            .first()
            .ok_or_else(|| bad("empty seed"))?
            .parse::<u64>()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = field("params")?
            .first()
            .ok_or_else(|| bad("empty parameter count"))?
            .parse::<usize>()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let params = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|e| Error::Checkpoint(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if params.len() != count {
            return Err(Error::Checkpoint(format!(
                "header promises {count} parameters, found {}",
                params.len()
            )));
        }
        Self::from_params(sizes, seed, params).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

/// Standardizes each of `width` channels across `count` rows. Returns the
/// normalized values and the per-channel `sqrt(var + eps)`.
pub fn context_norm(z: &[f64], count: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; z.len()];
    let mut scales = vec![0.0; width];
    let n = count as f64;
    for j in 0..width {
        let mean = (0..count).map(|c| z[c * width + j]).sum::<f64>() / n;
        let var = (0..count)
            .map(|c| (z[c * width + j] - mean).powi(2))
            .sum::<f64>()
            / n;
        let s = (var + CONTEXT_EPS).sqrt();
        scales[j] = s;
        for c in 0..count {
            out[c * width + j] = (z[c * width + j] - mean) / s;
        }
    }
    (out, scales)
}

fn context_norm_backward(
    d_out: &[f64],
    normalized: &[f64],
    scales: &[f64],
    count: usize,
    width: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; d_out.len()];
    let n = count as f64;
    for j in 0..width {
        let mean_d = (0..count).map(|c| d_out[c * width + j]).sum::<f64>() / n;
        let mean_dn = (0..count)
            .map(|c| d_out[c * width + j] * normalized[c * width + j])
            .sum::<f64>()
            / n;
        for c in 0..count {
            let i = c * width + j;
            out[i] = (d_out[i] - mean_d - normalized[i] * mean_dn) / scales[j];
        }
    }
    out
}

/// One training or evaluation problem: network features, the data matrix
/// whose Gram matrix the predicted weights enter, and its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// `count × dim` row-major.
    pub features: Vec<f64>,
    pub x: DataMatrix,
    pub target: TargetVector,
    pub inlier_mask: Vec<bool>,
}

impl Instance {
    pub fn count(&self) -> usize {
        self.inlier_mask.len()
    }
}

/// Which loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainLoss {
    Eigfree(LossConfig),
    EigBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 1e-4,
            epochs: 1,
            seed: 0,
        }
    }
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_inlier_weight: f64,
    pub mean_outlier_weight: f64,
    /// Instances whose gradient could not be formed (degenerate spectrum).
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    /// Set when the loss or a parameter became non-finite; training stops.
    pub diverged: bool,
}

pub const EPOCH_FIELDS: [&str; 5] = [
    "epoch",
    "mean_loss",
    "mean_inlier_weight",
    "mean_outlier_weight",
    "skipped",
];

impl TrainTrace {
    /// CSV with one row per epoch; floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        use crate::harness::report::fmt_f64;
        let mut s = EPOCH_FIELDS.join(",");
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.epoch,
                fmt_f64(r.mean_loss),
                fmt_f64(r.mean_inlier_weight),
                fmt_f64(r.mean_outlier_weight),
                r.skipped
            );
        }
        s
    }
}

struct InstanceGrad {
    loss: f64,
    inlier: (f64, usize),
    outlier: (f64, usize),
    grad: Option<Vec<f64>>,
}

fn instance_grad(net: &WeightNet, inst: &Instance, loss: &TrainLoss) -> Result<InstanceGrad> {
    let (w, cache) = net.forward(&inst.features)?;
    let mut inlier = (0.0, 0);
    let mut outlier = (0.0, 0);
    for (wi, &m) in w.iter().zip(&inst.inlier_mask) {
        let acc = if m { &mut inlier } else { &mut outlier };
        acc.0 += wi;
        acc.1 += 1;
    }
    let (value, gw) = match loss {
        TrainLoss::Eigfree(cfg) => {
            let (lb, g) = eigfree_grad_weights(&inst.x, &w, &inst.target, cfg)?;
            (lb.total, Some(g))
        }
        TrainLoss::EigBaseline => match eig_baseline_grad_weights(&inst.x, &w, &inst.target) {
            Ok(b) => (b.loss, Some(b.grad_weights)),
            Err(Error::DegenerateSpectrum { .. }) => {
                // Still report the loss; the update is skipped.
                let g = inst.x.weighted_gram(&w)?;
                let es = crate::linalg::sym_eig(&g)?;
                (inst.target.sign_agnostic_distance(&es.smallest()), None)
            }
            Err(e) => return Err(e),
        },
    };
    let grad = match gw {
        Some(g) if g.iter().all(|v| v.is_finite()) => Some(net.backward(&cache, &g)?),
        _ => None,
    };
    Ok(InstanceGrad {
        loss: value,
        inlier,
        outlier,
        grad,
    })
}

/// Minibatch Adam on the mean per-instance loss. Batches are drawn from a
/// seeded shuffle each epoch; per-instance gradients are computed in
/// parallel and summed in instance order.
pub fn train(
    mut net: WeightNet,
    dataset: &[Instance],
    cfg: &TrainConfig,
    loss: &TrainLoss,
) -> Result<(WeightNet, TrainTrace)> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if let Some(bad) = dataset.iter().find(|i| i.features.len() != i.count() * net.input_dim()) {
        return Err(Error::DimensionMismatch(format!(
            "instance with {} features for {} correspondences of dimension {}",
            bad.features.len(),
            bad.count(),
            net.input_dim()
        )));
    }
    let mut adam = AdamState::new(net.params().len(), cfg.lr)?;
    let mut rng = SplitMix64::new(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = TrainTrace {
        records: Vec::with_capacity(cfg.epochs),
        diverged: false,
    };
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let (mut inl, mut out) = ((0.0, 0usize), (0.0, 0usize));
        let mut skipped = 0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| instance_grad(&net, &dataset[i], loss))
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; net.params().len()];
            let mut used = 0usize;
            for r in &results {
                loss_sum += r.loss;
                inl.0 += r.inlier.0;
                inl.1 += r.inlier.1;
                out.0 += r.outlier.0;
                out.1 += r.outlier.1;
                match &r.grad {
                    Some(g) => {
                        used += 1;
                        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    }
                    None => skipped += 1,
                }
            }
            if !results.iter().all(|r| r.loss.is_finite()) {
                trace.diverged = true;
            }
            if used > 0 && !trace.diverged {
                let scale = 1.0 / batch.len() as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                adam_step(&mut adam, net.params_mut(), &grad)?;
                if !net.params().iter().all(|p| p.is_finite()) {
                    trace.diverged = true;
                }
            }
            if trace.diverged {
                break;
            }
        }
        let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
        trace.records.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / dataset.len() as f64,
            mean_inlier_weight: mean(inl),
            mean_outlier_weight: mean(out),
            skipped,
        });
        if trace.diverged {
            break;
        }
    }
    Ok((net, trace))
}
